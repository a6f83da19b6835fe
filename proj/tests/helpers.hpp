#pragma once

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "loraserve/adapter_store.hpp"
#include "loraserve/matrix.hpp"
#include "loraserve/rng.hpp"

namespace test_helpers {

// Straight-line LRU simulator used as the reference for cache exactness
// checks. Keeps the resident set in a plain vector, most recent first.
struct LruReference {
    int              capacity;
    std::vector<int> order;
    long             hits  = 0;
    long             total = 0;
    std::vector<int> evictions;

    explicit LruReference(int cap) : capacity(cap) {}

    void access(int id) {
        ++total;
        auto it = std::find(order.begin(), order.end(), id);
        if (it != order.end()) {
            ++hits;
            order.erase(it);
            order.insert(order.begin(), id);
            return;
        }
        if (int(order.size()) == capacity) {
            evictions.push_back(order.back());
            order.pop_back();
        }
        order.insert(order.begin(), id);
    }

    double hit_rate() const { return total == 0 ? 0.0 : double(hits) / double(total); }
};

inline loraserve::Matrix random_matrix(int rows, int cols, loraserve::Rng & rng, double bound = 1.0) {
    loraserve::Matrix m(rows, cols);
    for (double & v : m.data) {
        v = rng.uniform(-bound, bound);
    }
    return m;
}

inline std::vector<double> random_vector(int n, loraserve::Rng & rng, double bound = 1.0) {
    std::vector<double> v(static_cast<size_t>(n));
    for (double & x : v) {
        x = rng.uniform(-bound, bound);
    }
    return v;
}

inline loraserve::LoraPair random_pair(int rank, int dim, loraserve::Rng & rng, double bound = 0.3) {
    return loraserve::make_lora_pair(rank, random_matrix(rank, dim, rng, bound),
                                     random_matrix(dim, rank, rng, bound));
}

// Regularized upper incomplete gamma Q(a, x), series + continued fraction.
inline double gamma_q(double a, double x) {
    if (x < 0.0 || a <= 0.0) {
        return 1.0;
    }
    if (x == 0.0) {
        return 1.0;
    }
    const double lg = std::lgamma(a);
    if (x < a + 1.0) {
        // P(a,x) by series, then Q = 1 - P
        double ap  = a;
        double sum = 1.0 / a;
        double del = sum;
        for (int i = 0; i < 500; ++i) {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if (std::fabs(del) < std::fabs(sum) * 1e-15) {
                break;
            }
        }
        return 1.0 - sum * std::exp(-x + a * std::log(x) - lg);
    }
    // Q(a,x) by Lentz continued fraction
    double b = x + 1.0 - a;
    double c = 1e300;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= 500; ++i) {
        const double an = -double(i) * (double(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < 1e-300) {
            d = 1e-300;
        }
        c = b + an / c;
        if (std::fabs(c) < 1e-300) {
            c = 1e-300;
        }
        d              = 1.0 / d;
        const double t = d * c;
        h *= t;
        if (std::fabs(t - 1.0) < 1e-15) {
            break;
        }
    }
    return std::exp(-x + a * std::log(x) - lg) * h;
}

inline double chi_square_p_value(double chi2, int dof) {
    return gamma_q(double(dof) / 2.0, chi2 / 2.0);
}

// Fresh scratch directory under the build tree.
class TempDir {
  public:
    explicit TempDir(const std::string & tag) {
        static int counter = 0;
        path_ = (std::filesystem::temp_directory_path() /
                 ("loraserve_test_" + tag + "_" + std::to_string(++counter) + "_" +
                  std::to_string(uint64_t(::getpid()))))
                    .string();
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }

    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }

    const std::string & path() const { return path_; }

    std::string file(const std::string & name) const {
        return (std::filesystem::path(path_) / name).string();
    }

  private:
    std::string path_;
};

inline loraserve::AdapterRegistry small_registry(const TempDir & dir, int n, int d = 8, int r = 2, int L = 1,
                                                 uint64_t seed = 3) {
    loraserve::RegistryConfig cfg;
    cfg.root       = dir.file("registry");
    cfg.count      = n;
    cfg.hidden_dim = d;
    cfg.rank       = r;
    cfg.num_layers = L;
    cfg.seed       = seed;
    return loraserve::generate_adapters(cfg);
}

inline double max_abs_diff(const std::vector<double> & a, const std::vector<double> & b) {
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::fabs(a[i] - b[i]));
    }
    return m;
}

}  // namespace test_helpers
