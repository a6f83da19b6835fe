#include "loraserve/adapter_store.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "loraserve/rng.hpp"

namespace fs = std::filesystem;

namespace loraserve {

size_t adapter_file_bytes(int hidden_dim, int rank, int num_layers) {
    const size_t header = sizeof(kAdapterMagic) + 4 * sizeof(uint32_t) + sizeof(double);
    const size_t values = size_t(num_layers) * 2 * size_t(rank) * size_t(hidden_dim);
    return header + values * sizeof(double);
}

namespace {

void write_u32(std::ofstream & out, uint32_t v) {
    out.write(reinterpret_cast<const char *>(&v), sizeof(v));
}

uint32_t read_u32(std::ifstream & in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char *>(&v), sizeof(v));
    if (!in) {
        throw FormatError("adapter file truncated in header");
    }
    return v;
}

void read_doubles(std::ifstream & in, double * dst, size_t n, const std::string & path) {
    in.read(reinterpret_cast<char *>(dst), std::streamsize(n * sizeof(double)));
    if (size_t(in.gcount()) != n * sizeof(double)) {
        throw FormatError("adapter file truncated: " + path);
    }
}

struct AdapterHeader {
    uint32_t hidden_dim = 0;
    uint32_t rank       = 0;
    uint32_t num_layers = 0;
    double   scale      = 1.0;
};

AdapterHeader read_header(std::ifstream & in, const std::string & path) {
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kAdapterMagic, sizeof(magic)) != 0) {
        throw FormatError("bad adapter magic: " + path);
    }
    const uint32_t version = read_u32(in);
    if (version != kAdapterFileVersion) {
        throw FormatError("unsupported adapter file version " + std::to_string(version));
    }
    AdapterHeader h;
    h.hidden_dim = read_u32(in);
    h.rank       = read_u32(in);
    h.num_layers = read_u32(in);
    in.read(reinterpret_cast<char *>(&h.scale), sizeof(h.scale));
    if (!in) {
        throw FormatError("adapter file truncated in header");
    }
    return h;
}

// Shapes an adapter's storage without filling it.
FullAdapter make_empty_adapter(int id, int hidden_dim, int rank, int num_layers) {
    FullAdapter adapter;
    adapter.id   = id;
    adapter.rank = rank;
    adapter.pairs.reserve(size_t(num_layers));
    for (int l = 0; l < num_layers; ++l) {
        LoraPair p;
        p.rank = rank;
        p.a    = Matrix(rank, hidden_dim);
        p.b    = Matrix(hidden_dim, rank);
        adapter.pairs.push_back(std::move(p));
    }
    return adapter;
}

}  // namespace

void write_adapter_file(const std::string & path, const FullAdapter & adapter) {
    if (adapter.pairs.empty()) {
        throw ShapeError("adapter has no layer pairs");
    }
    const int d = adapter.pairs[0].dim();
    const int L = int(adapter.pairs.size());
    validate_full_adapter(adapter, d, L);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write adapter file: " + path);
    }
    out.write(kAdapterMagic, sizeof(kAdapterMagic));
    write_u32(out, kAdapterFileVersion);
    write_u32(out, uint32_t(d));
    write_u32(out, uint32_t(adapter.rank));
    write_u32(out, uint32_t(L));
    const double scale = adapter.pairs[0].scale;
    out.write(reinterpret_cast<const char *>(&scale), sizeof(scale));
    for (const LoraPair & p : adapter.pairs) {
        out.write(reinterpret_cast<const char *>(p.a.data.data()),
                  std::streamsize(p.a.data.size() * sizeof(double)));
        out.write(reinterpret_cast<const char *>(p.b.data.data()),
                  std::streamsize(p.b.data.size() * sizeof(double)));
    }
    if (!out) {
        throw IoError("short write: " + path);
    }
}

FullAdapter read_adapter_file(const std::string & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open adapter file: " + path);
    }
    const AdapterHeader h       = read_header(in, path);
    FullAdapter         adapter = make_empty_adapter(-1, int(h.hidden_dim), int(h.rank), int(h.num_layers));
    for (LoraPair & p : adapter.pairs) {
        p.scale = h.scale;
        read_doubles(in, p.a.data.data(), p.a.data.size(), path);
        read_doubles(in, p.b.data.data(), p.b.data.size(), path);
    }
    return adapter;
}

void read_adapter_file_into(const std::string & path, FullAdapter & dst) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open adapter file: " + path);
    }
    const AdapterHeader h = read_header(in, path);
    if (dst.pairs.empty() || int(h.num_layers) != int(dst.pairs.size()) ||
        int(h.rank) != dst.pairs[0].rank || int(h.hidden_dim) != dst.pairs[0].dim()) {
        throw FormatError("adapter file shape does not match destination block: " + path);
    }
    for (LoraPair & p : dst.pairs) {
        p.scale = h.scale;
        read_doubles(in, p.a.data.data(), p.a.data.size(), path);
        read_doubles(in, p.b.data.data(), p.b.data.size(), path);
    }
}

static std::string manifest_path(const std::string & root) {
    return (fs::path(root) / "manifest.json").string();
}

std::string AdapterRegistry::adapter_path(int id) const {
    if (!valid_id(id)) {
        throw LookupError("adapter id " + std::to_string(id) + " not in registry");
    }
    char name[32];
    std::snprintf(name, sizeof(name), "adapter_%05d.bin", id);
    return (fs::path(config_.root) / name).string();
}

size_t AdapterRegistry::file_bytes() const {
    return adapter_file_bytes(config_.hidden_dim, config_.rank, config_.num_layers);
}

FullAdapter AdapterRegistry::load(int id) const {
    FullAdapter adapter = read_adapter_file(adapter_path(id));
    adapter.id          = id;
    return adapter;
}

AdapterRegistry AdapterRegistry::open(const std::string & root) {
    std::ifstream in(manifest_path(root));
    if (!in) {
        throw IoError("cannot open registry manifest in " + root);
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception & e) {
        throw FormatError(std::string("bad registry manifest: ") + e.what());
    }

    RegistryConfig config;
    config.root       = root;
    config.count      = j.at("count").get<int>();
    config.hidden_dim = j.at("hidden_dim").get<int>();
    config.rank       = j.at("rank").get<int>();
    config.num_layers = j.at("num_layers").get<int>();
    config.seed       = j.at("seed").get<uint64_t>();

    AdapterRegistry registry(config);
    const size_t    expected = registry.file_bytes();
    for (int id = 0; id < config.count; ++id) {
        const std::string path = registry.adapter_path(id);
        std::error_code   ec;
        const auto        size = fs::file_size(path, ec);
        if (ec) {
            throw IoError("missing adapter file: " + path);
        }
        if (size != expected) {
            throw FormatError("adapter file has wrong size: " + path);
        }
    }
    return registry;
}

AdapterRegistry generate_adapters(const RegistryConfig & config) {
    if (config.count < 1) {
        throw ConfigError("adapter count must be >= 1");
    }
    if (config.rank < 1 || config.rank >= config.hidden_dim || config.num_layers < 1) {
        throw ConfigError("adapter shape needs 1 <= rank < hidden_dim and layers >= 1");
    }

    std::error_code ec;
    fs::create_directories(config.root, ec);
    if (ec) {
        throw IoError("cannot create registry dir " + config.root + ": " + ec.message());
    }

    const double a_bound = 1.0 / std::sqrt(double(config.hidden_dim));
    const double b_bound = 0.5 / std::sqrt(double(config.rank));

    AdapterRegistry registry(config);
    for (int id = 0; id < config.count; ++id) {
        Rng         rng(derive_seed(config.seed, uint64_t(id)));
        FullAdapter adapter = make_empty_adapter(id, config.hidden_dim, config.rank, config.num_layers);
        for (LoraPair & p : adapter.pairs) {
            for (double & v : p.a.data) {
                v = rng.uniform(-a_bound, a_bound);
            }
            for (double & v : p.b.data) {
                v = rng.uniform(-b_bound, b_bound);
            }
        }
        write_adapter_file(registry.adapter_path(id), adapter);
    }

    nlohmann::json manifest = {
        {"version", 1},
        {"count", config.count},
        {"hidden_dim", config.hidden_dim},
        {"rank", config.rank},
        {"num_layers", config.num_layers},
        {"seed", config.seed},
    };
    std::ofstream out(manifest_path(config.root), std::ios::trunc);
    if (!out) {
        throw IoError("cannot write registry manifest in " + config.root);
    }
    out << manifest.dump(2) << "\n";
    return registry;
}

MemoryPool::MemoryPool(int capacity, int hidden_dim, int rank, int num_layers) {
    if (capacity < 1) {
        throw ConfigError("pool capacity must be >= 1");
    }
    blocks_.reserve(size_t(capacity));
    for (int i = 0; i < capacity; ++i) {
        blocks_.push_back(make_empty_adapter(-1, hidden_dim, rank, num_layers));
        ++allocations_;
    }
    free_stack_.resize(size_t(capacity));
    std::iota(free_stack_.begin(), free_stack_.end(), 0);
    in_use_.assign(size_t(capacity), 0);
}

int MemoryPool::acquire() {
    if (free_stack_.empty()) {
        throw CapacityError("memory pool exhausted");
    }
    const int block = free_stack_.back();
    free_stack_.pop_back();
    in_use_[size_t(block)] = 1;
    return block;
}

void MemoryPool::release(int block) {
    if (block < 0 || block >= capacity() || !in_use_[size_t(block)]) {
        throw LookupError("releasing a block that is not in use");
    }
    in_use_[size_t(block)] = 0;
    free_stack_.push_back(block);
}

AdapterHandle::AdapterHandle(AdapterHandle && other) noexcept
    : cache_(other.cache_), id_(other.id_), adapter_(other.adapter_) {
    other.cache_   = nullptr;
    other.adapter_ = nullptr;
    other.id_      = -1;
}

AdapterHandle & AdapterHandle::operator=(AdapterHandle && other) noexcept {
    if (this != &other) {
        release();
        cache_         = other.cache_;
        id_            = other.id_;
        adapter_       = other.adapter_;
        other.cache_   = nullptr;
        other.adapter_ = nullptr;
        other.id_      = -1;
    }
    return *this;
}

AdapterHandle::~AdapterHandle() {
    release();
}

void AdapterHandle::release() {
    if (cache_ != nullptr && adapter_ != nullptr) {
        cache_->unpin(id_);
    }
    cache_   = nullptr;
    adapter_ = nullptr;
    id_      = -1;
}

AdapterCache::AdapterCache(int capacity, MemoryPool & pool, const AdapterRegistry & registry)
    : capacity_(capacity), pool_(pool), registry_(registry) {
    if (capacity < 1 || capacity > pool.capacity()) {
        throw ConfigError("cache capacity must be in [1, pool capacity]");
    }
}

void AdapterCache::unpin(int id) {
    auto it = index_.find(id);
    if (it != index_.end() && it->second.pins > 0) {
        --it->second.pins;
    }
}

int AdapterCache::take_block() {
    if (pool_.free_count() > 0 && resident_count() < capacity_) {
        return pool_.acquire();
    }
    // evict the least recently used resident that nobody has pinned
    for (auto it = recency_.rbegin(); it != recency_.rend(); ++it) {
        const int victim = *it;
        Entry &   entry  = index_.at(victim);
        if (entry.pins > 0) {
            continue;
        }
        const int block = entry.block;
        evictions_.push_back(victim);
        recency_.erase(std::next(it).base());
        index_.erase(victim);
        pool_.release(block);
        return pool_.acquire();
    }
    return -1;
}

const FullAdapter * AdapterCache::load_into_cache(int id) {
    const int block = take_block();
    if (block < 0) {
        return nullptr;
    }
    try {
        read_adapter_file_into(registry_.adapter_path(id), pool_.block(block));
        ++disk_loads_;
    } catch (...) {
        pool_.release(block);
        throw;
    }
    pool_.block(block).id = id;
    recency_.push_front(id);
    index_[id] = Entry{recency_.begin(), block, 0};
    return &pool_.block(block);
}

AdapterHandle AdapterCache::get(int id) {
    if (!registry_.valid_id(id)) {
        throw LookupError("adapter id " + std::to_string(id) + " not in registry");
    }

    auto it = index_.find(id);
    if (it != index_.end()) {
        ++total_;
        ++hits_;
        recency_.splice(recency_.begin(), recency_, it->second.lru_it);
        it->second.lru_it = recency_.begin();
        ++it->second.pins;
        return AdapterHandle(this, id, &pool_.block(it->second.block));
    }

    // miss: a stuck cache (all residents pinned, nothing free) is not counted;
    // the caller retries once a pin drops
    const FullAdapter * adapter = load_into_cache(id);
    if (adapter == nullptr) {
        return {};
    }
    ++total_;
    ++index_.at(id).pins;
    return AdapterHandle(this, id, adapter);
}

void AdapterCache::prefill(uint64_t seed) {
    if (total_ != 0 || !index_.empty()) {
        throw InputError("prefill requires an empty cache");
    }
    const int        n = registry_.count();
    std::vector<int> ids(static_cast<size_t>(n));
    std::iota(ids.begin(), ids.end(), 0);

    Rng       rng(seed);
    const int take = std::min(capacity_, n);
    for (int i = 0; i < take; ++i) {
        const int j = rng.uniform_int(i, n - 1);
        std::swap(ids[size_t(i)], ids[size_t(j)]);
        load_into_cache(ids[size_t(i)]);
    }
}

std::vector<int> AdapterCache::resident_ids_mru_first() const {
    return {recency_.begin(), recency_.end()};
}

}  // namespace loraserve
