#pragma once

#include <cstdint>
#include <list>
#include <string>
#include <unordered_map>
#include <vector>

#include "loraserve/toy_model.hpp"

namespace loraserve {

inline constexpr char kAdapterMagic[8] = {'E', 'L', 'O', 'R', 'A', 'D', 'P', 'T'};
inline constexpr uint32_t kAdapterFileVersion = 1;

// Serialized size of one adapter with the given shape (all adapters of a
// registry share it, which is what makes pool blocks uniform).
size_t adapter_file_bytes(int hidden_dim, int rank, int num_layers);

void        write_adapter_file(const std::string & path, const FullAdapter & adapter);
FullAdapter read_adapter_file(const std::string & path);

// Deserializes into an already-shaped adapter without allocating; the file
// header must match dst's shape.
void read_adapter_file_into(const std::string & path, FullAdapter & dst);

struct RegistryConfig {
    std::string root;
    int         count      = 0;
    int         hidden_dim = 64;
    int         rank       = 8;
    int         num_layers = 4;
    uint64_t    seed       = 0;
};

// Disk-backed adapter set: ids 0..n-1, one file each, plus a manifest with the
// shared shape metadata.
class AdapterRegistry {
  public:
    AdapterRegistry() = default;

    static AdapterRegistry open(const std::string & root);

    int         count() const { return config_.count; }
    int         hidden_dim() const { return config_.hidden_dim; }
    int         rank() const { return config_.rank; }
    int         num_layers() const { return config_.num_layers; }
    uint64_t    seed() const { return config_.seed; }
    const std::string & root() const { return config_.root; }
    size_t      file_bytes() const;

    bool        valid_id(int id) const { return id >= 0 && id < config_.count; }
    std::string adapter_path(int id) const;
    FullAdapter load(int id) const;

  private:
    friend AdapterRegistry generate_adapters(const RegistryConfig & config);

    explicit AdapterRegistry(RegistryConfig config) : config_(std::move(config)) {}

    RegistryConfig config_;
};

// Writes count adapter files (A uniform like the base weights, B a smaller
// non-zero perturbation so each adapter shifts outputs its own way), all
// derived from (seed, id), plus the manifest.
AdapterRegistry generate_adapters(const RegistryConfig & config);

// Fixed set of adapter-sized blocks reserved up front; acquire/release only
// moves block handles through a free stack, never touching the allocator.
class MemoryPool {
  public:
    MemoryPool(int capacity, int hidden_dim, int rank, int num_layers);

    int  acquire();
    void release(int block);

    FullAdapter &       block(int idx) { return blocks_[size_t(idx)]; }
    const FullAdapter & block(int idx) const { return blocks_[size_t(idx)]; }

    int capacity() const { return int(blocks_.size()); }
    int free_count() const { return int(free_stack_.size()); }

    // Number of block buffers ever created; stays at capacity for the pool's
    // whole lifetime.
    long allocations() const { return allocations_; }

  private:
    std::vector<FullAdapter> blocks_;
    std::vector<int>         free_stack_;
    std::vector<char>        in_use_;
    long                     allocations_ = 0;
};

class AdapterCache;

// RAII pin on a resident adapter. While any handle for an id is alive the
// entry cannot be evicted.
class AdapterHandle {
  public:
    AdapterHandle() = default;
    AdapterHandle(AdapterHandle && other) noexcept;
    AdapterHandle & operator=(AdapterHandle && other) noexcept;
    AdapterHandle(const AdapterHandle &)             = delete;
    AdapterHandle & operator=(const AdapterHandle &) = delete;
    ~AdapterHandle();

    bool                valid() const { return adapter_ != nullptr; }
    int                 id() const { return id_; }
    const FullAdapter * get() const { return adapter_; }
    void                release();

  private:
    friend class AdapterCache;
    AdapterHandle(AdapterCache * cache, int id, const FullAdapter * adapter)
        : cache_(cache), id_(id), adapter_(adapter) {}

    AdapterCache *      cache_   = nullptr;
    int                 id_      = -1;
    const FullAdapter * adapter_ = nullptr;
};

// LRU cache of at most `capacity` resident adapters, backed one-to-one by
// pool blocks: a recency list plus an id index, with hit counters for H.
class AdapterCache {
  public:
    AdapterCache(int capacity, MemoryPool & pool, const AdapterRegistry & registry);

    // Counts the access, loads from disk on a miss (evicting the least
    // recently used unpinned resident when no block is free) and returns a
    // pinned handle. When every resident is pinned and no block is free the
    // access is not counted and an invalid handle is returned; callers retry.
    AdapterHandle get(int id);

    // Residency snapshot without touching counters or recency.
    bool resident(int id) const { return index_.count(id) != 0; }

    bool valid_id(int id) const { return registry_.valid_id(id); }
    int  adapter_count() const { return registry_.count(); }

    // Loads min(capacity, n) distinct seeded-random adapters into an empty
    // cache; these loads do not count toward the hit rate.
    void prefill(uint64_t seed);

    double hit_rate() const { return total_ == 0 ? 0.0 : double(hits_) / double(total_); }
    long   cache_hits() const { return hits_; }
    long   total_accesses() const { return total_; }
    long   disk_loads() const { return disk_loads_; }
    int    resident_count() const { return int(index_.size()); }
    int    capacity() const { return capacity_; }

    // Evicted ids in order, for exactness checks against a reference.
    const std::vector<int> & evictions() const { return evictions_; }

    std::vector<int> resident_ids_mru_first() const;

  private:
    friend class AdapterHandle;

    struct Entry {
        std::list<int>::iterator lru_it;
        int                      block = -1;
        int                      pins  = 0;
    };

    void unpin(int id);
    int  take_block();  // free block, else evict LRU unpinned; -1 when stuck
    const FullAdapter * load_into_cache(int id);

    int                            capacity_ = 0;
    MemoryPool &                   pool_;
    const AdapterRegistry &        registry_;
    std::list<int>                 recency_;  // most recent first
    std::unordered_map<int, Entry> index_;
    long                           hits_       = 0;
    long                           total_      = 0;
    long                           disk_loads_ = 0;
    std::vector<int>               evictions_;
};

}  // namespace loraserve
