#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "loraserve/adapter_store.hpp"
#include "loraserve/toy_model.hpp"
#include "loraserve/workload.hpp"

using namespace loraserve;
using test_helpers::LruReference;
using test_helpers::TempDir;

namespace fs = std::filesystem;

namespace {

std::vector<char> slurp(const std::string & path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(bool(in));
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("adapter file round trip is byte identical") {
    TempDir dir("roundtrip");
    Rng     rng(41);

    FullAdapter adapter;
    adapter.id   = 4;
    adapter.rank = 3;
    for (int l = 0; l < 2; ++l) {
        adapter.pairs.push_back(test_helpers::random_pair(3, 10, rng));
    }

    const std::string p1 = dir.file("a.bin");
    const std::string p2 = dir.file("b.bin");
    write_adapter_file(p1, adapter);
    FullAdapter loaded = read_adapter_file(p1);
    write_adapter_file(p2, loaded);

    CHECK(slurp(p1) == slurp(p2));
    REQUIRE(loaded.pairs.size() == adapter.pairs.size());
    for (size_t l = 0; l < loaded.pairs.size(); ++l) {
        CHECK(loaded.pairs[l].a == adapter.pairs[l].a);
        CHECK(loaded.pairs[l].b == adapter.pairs[l].b);
        CHECK(loaded.pairs[l].scale == adapter.pairs[l].scale);
    }
    CHECK(fs::file_size(p1) == adapter_file_bytes(10, 3, 2));
}

TEST_CASE("truncated and corrupted files are format errors") {
    TempDir dir("corrupt");
    Rng     rng(42);

    FullAdapter adapter;
    adapter.id   = 0;
    adapter.rank = 2;
    adapter.pairs.push_back(test_helpers::random_pair(2, 8, rng));
    const std::string path = dir.file("a.bin");
    write_adapter_file(path, adapter);

    SUBCASE("truncation") {
        fs::resize_file(path, fs::file_size(path) / 2);
        CHECK_THROWS_AS(read_adapter_file(path), FormatError);
    }
    SUBCASE("bad magic") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.write("XXXXXXXX", 8);
        f.close();
        CHECK_THROWS_AS(read_adapter_file(path), FormatError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(read_adapter_file(dir.file("nope.bin")), IoError);
    }
}

TEST_CASE("generate_adapters is deterministic") {
    TempDir dir("gen1");
    TempDir dir2("gen2");

    RegistryConfig cfg;
    cfg.root  = dir.file("reg");
    cfg.count = 5;
    cfg.seed  = 9;
    generate_adapters(cfg);
    cfg.root = dir2.file("reg");
    generate_adapters(cfg);

    for (int id = 0; id < cfg.count; ++id) {
        char name[32];
        std::snprintf(name, sizeof(name), "adapter_%05d.bin", id);
        CHECK(slurp((fs::path(dir.file("reg")) / name).string()) ==
              slurp((fs::path(dir2.file("reg")) / name).string()));
    }
}

TEST_CASE("generate rejects bad configs") {
    TempDir        dir("badcfg");
    RegistryConfig cfg;
    cfg.root  = dir.file("reg");
    cfg.count = 0;
    CHECK_THROWS_AS(generate_adapters(cfg), ConfigError);
    cfg.count = 1;
    cfg.rank  = cfg.hidden_dim;
    CHECK_THROWS_AS(generate_adapters(cfg), ConfigError);
}

TEST_CASE("distinct adapters behave distinctly on a probe prompt") {
    TempDir               dir("distinct");
    const AdapterRegistry registry = test_helpers::small_registry(dir, 4, 16, 4, 2);

    ToyModelConfig mc;
    mc.vocab_size = 32;
    mc.hidden_dim = 16;
    mc.num_layers = 2;
    mc.eos_token  = 31;
    const ToyBaseModel model = build_model(mc);

    const FullAdapter a0 = registry.load(0);
    const FullAdapter a1 = registry.load(1);

    bool any_diff = false;
    for (int probe = 0; probe < 6 && !any_diff; ++probe) {
        const std::vector<int> prompt = {probe * 3 % 31, (probe * 5 + 1) % 31, (probe * 7 + 2) % 31};
        any_diff = greedy_decode(model, &a0, prompt, 8) != greedy_decode(model, &a1, prompt, 8);
    }
    CHECK(any_diff);
}

TEST_CASE("registry open validates content") {
    TempDir               dir("open");
    const AdapterRegistry made   = test_helpers::small_registry(dir, 3);
    const AdapterRegistry opened = AdapterRegistry::open(made.root());
    CHECK(opened.count() == 3);
    CHECK(opened.hidden_dim() == 8);
    CHECK_THROWS_AS(opened.adapter_path(3), LookupError);
    CHECK_THROWS_AS(opened.adapter_path(-1), LookupError);

    fs::resize_file(opened.adapter_path(1), 4);
    CHECK_THROWS_AS(AdapterRegistry::open(made.root()), FormatError);
    fs::remove(opened.adapter_path(1));
    CHECK_THROWS_AS(AdapterRegistry::open(made.root()), IoError);
}

TEST_CASE("pool acquire/release keeps conservation and never reallocates") {
    MemoryPool pool(4, 8, 2, 1);
    CHECK(pool.capacity() == 4);
    CHECK(pool.free_count() == 4);
    CHECK(pool.allocations() == 4);

    const int b0 = pool.acquire();
    const int b1 = pool.acquire();
    CHECK(pool.free_count() == 2);
    pool.release(b0);
    CHECK(pool.free_count() == 3);
    CHECK_THROWS_AS(pool.release(b0), LookupError);
    pool.release(b1);
    CHECK(pool.free_count() == 4);
    CHECK(pool.allocations() == 4);

    for (int i = 0; i < 4; ++i) {
        pool.acquire();
    }
    CHECK_THROWS_AS(pool.acquire(), CapacityError);
}

TEST_CASE("lru hand trace l=2: [1,2,1,3] evicts 2") {
    TempDir               dir("hand1");
    const AdapterRegistry registry = test_helpers::small_registry(dir, 8);
    MemoryPool            pool(2, 8, 2, 1);
    AdapterCache          cache(2, pool, registry);

    for (int id : {1, 2, 1, 3}) {
        cache.get(id);
    }
    CHECK(cache.total_accesses() == 4);
    CHECK(cache.cache_hits() == 1);
    CHECK(cache.hit_rate() == doctest::Approx(0.25));
    CHECK(cache.evictions() == std::vector<int>{2});
    CHECK(cache.resident(1));
    CHECK(cache.resident(3));
    CHECK_FALSE(cache.resident(2));
}

TEST_CASE("resident access does not touch the disk") {
    TempDir               dir("hits");
    const AdapterRegistry registry = test_helpers::small_registry(dir, 4);
    MemoryPool            pool(2, 8, 2, 1);
    AdapterCache          cache(2, pool, registry);

    cache.get(0);
    const long loads = cache.disk_loads();
    const long hits  = cache.cache_hits();
    cache.get(0);
    CHECK(cache.disk_loads() == loads);
    CHECK(cache.cache_hits() == hits + 1);
}

TEST_CASE("three hits out of four accesses is 0.75") {
    TempDir               dir("hit75");
    const AdapterRegistry registry = test_helpers::small_registry(dir, 4);
    MemoryPool            pool(2, 8, 2, 1);
    AdapterCache          cache(2, pool, registry);

    CHECK(cache.hit_rate() == 0.0);  // fresh cache
    for (int i = 0; i < 4; ++i) {
        cache.get(0);
    }
    CHECK(cache.hit_rate() == doctest::Approx(0.75));
}

TEST_CASE("lru hand trace l=1: [1,2,1,2] never hits") {
    TempDir               dir("hand2");
    const AdapterRegistry registry = test_helpers::small_registry(dir, 4);
    MemoryPool            pool(1, 8, 2, 1);
    AdapterCache          cache(1, pool, registry);

    for (int id : {1, 2, 1, 2}) {
        cache.get(id);
    }
    CHECK(cache.hit_rate() == 0.0);
    CHECK(cache.total_accesses() == 4);
    CHECK(cache.evictions() == std::vector<int>{1, 2, 1});
}

TEST_CASE("unknown ids are lookup errors; corrupt loads roll back") {
    TempDir               dir("rollback");
    const AdapterRegistry registry = test_helpers::small_registry(dir, 4);
    MemoryPool            pool(2, 8, 2, 1);
    AdapterCache          cache(2, pool, registry);

    CHECK_THROWS_AS(cache.get(99), LookupError);

    fs::resize_file(registry.adapter_path(2), 8);
    CHECK_THROWS_AS(cache.get(2), FormatError);
    CHECK_FALSE(cache.resident(2));
    CHECK(pool.free_count() + cache.resident_count() == 2);

    // the cache keeps serving other ids afterwards
    CHECK(cache.get(0).valid());
    CHECK(pool.free_count() + cache.resident_count() == 2);
}

TEST_CASE("prefill loads min(l, n) distinct adapters without counting") {
    TempDir               dir("prefill");
    const AdapterRegistry registry = test_helpers::small_registry(dir, 3);

    SUBCASE("fewer adapters than capacity") {
        MemoryPool   pool(5, 8, 2, 1);
        AdapterCache cache(5, pool, registry);
        cache.prefill(7);
        CHECK(cache.resident_count() == 3);
        CHECK(pool.free_count() == 2);
        CHECK(cache.total_accesses() == 0);
        CHECK(cache.hit_rate() == 0.0);
    }
    SUBCASE("more adapters than capacity and determinism") {
        TempDir               big("prefill_big");
        const AdapterRegistry reg100 = test_helpers::small_registry(big, 100);
        MemoryPool            pool(5, 8, 2, 1);
        AdapterCache          cache(5, pool, reg100);
        cache.prefill(7);
        CHECK(cache.resident_count() == 5);

        MemoryPool   pool2(5, 8, 2, 1);
        AdapterCache cache2(5, pool2, reg100);
        cache2.prefill(7);
        CHECK(cache.resident_ids_mru_first() == cache2.resident_ids_mru_first());
    }
    SUBCASE("prefill requires an empty cache") {
        MemoryPool   pool(2, 8, 2, 1);
        AdapterCache cache(2, pool, registry);
        cache.get(0);
        CHECK_THROWS_AS(cache.prefill(1), InputError);
    }
}

TEST_CASE("pinned residents are skipped by eviction") {
    TempDir               dir("pins");
    const AdapterRegistry registry = test_helpers::small_registry(dir, 6);
    MemoryPool            pool(2, 8, 2, 1);
    AdapterCache          cache(2, pool, registry);

    AdapterHandle h0 = cache.get(0);
    AdapterHandle h1 = cache.get(1);
    REQUIRE(h0.valid());
    REQUIRE(h1.valid());

    // everything pinned: a miss cannot make progress and is not counted
    const long    total = cache.total_accesses();
    AdapterHandle stuck = cache.get(2);
    CHECK_FALSE(stuck.valid());
    CHECK(cache.total_accesses() == total);

    // releasing the LRU (id 0) lets the miss land on its block
    h0.release();
    AdapterHandle h2 = cache.get(2);
    REQUIRE(h2.valid());
    CHECK(cache.evictions().back() == 0);
    CHECK(cache.resident(1));
    CHECK(cache.resident(2));
}

TEST_CASE("hit rate and evictions match the brute-force reference") {
    TempDir               dir("oracle");
    const AdapterRegistry registry = test_helpers::small_registry(dir, 32);

    Rng rng(4242);
    for (int trial = 0; trial < 60; ++trial) {
        const int    l = rng.uniform_int(1, 8);
        MemoryPool   pool(l, 8, 2, 1);
        AdapterCache cache(l, pool, registry);
        LruReference ref(l);

        const int steps = rng.uniform_int(5, 120);
        for (int s = 0; s < steps; ++s) {
            const int id = rng.uniform_int(0, 31);
            cache.get(id);
            ref.access(id);
            REQUIRE(pool.free_count() + cache.resident_count() == l);
            REQUIRE(cache.resident_count() <= l);
        }
        CHECK(cache.cache_hits() == ref.hits);
        CHECK(cache.total_accesses() == ref.total);
        CHECK(cache.evictions() == ref.evictions);
        CHECK(cache.resident_ids_mru_first() == ref.order);
        CHECK(pool.allocations() == l);
    }
}

TEST_CASE("skewed popularity raises the hit rate") {
    TempDir               dir("locality");
    const int             l        = 6;
    const int             n        = 24;  // n >= 4l
    const AdapterRegistry registry = test_helpers::small_registry(dir, n);

    int wins = 0;
    for (uint64_t seed = 0; seed < 20; ++seed) {
        double h[2];
        int    which = 0;
        for (double alpha : {1.5, 0.0}) {
            const std::vector<double> pmf = power_law_pmf(n, alpha);
            std::vector<double>       cdf(pmf.size());
            double                    acc = 0.0;
            for (size_t i = 0; i < pmf.size(); ++i) {
                acc += pmf[i];
                cdf[i] = acc;
            }

            MemoryPool   pool(l, 8, 2, 1);
            AdapterCache cache(l, pool, registry);
            Rng          rng(derive_seed(seed, 5));
            for (int s = 0; s < 10000; ++s) {
                const double u  = rng.uniform();
                const auto   it = std::lower_bound(cdf.begin(), cdf.end(), u);
                cache.get(int(it - cdf.begin()));
            }
            h[which++] = cache.hit_rate();
        }
        if (h[0] > h[1]) {
            ++wins;
        }
    }
    // sign test: 15+ of 20 at p < 0.05
    CHECK(wins >= 15);
}
