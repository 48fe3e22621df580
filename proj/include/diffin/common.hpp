#pragma once

// Shared numeric plumbing: error categories, deterministic RNG, compensated
// summation, flat-vector arithmetic, and FNV-1a content hashing.

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace diffin {

// Flat 64-bit parameter vector. Layout is owned by the model module:
// per layer, weights row-major (out x in), then biases, layers in order.
using ParamVector = std::vector<double>;

// ---------------------------------------------------------------------------
// Error categories. The CLI maps these onto process exit codes.
// ---------------------------------------------------------------------------

struct InputError : std::runtime_error {
    explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

struct UnsupportedError : std::runtime_error {
    explicit UnsupportedError(const std::string& msg) : std::runtime_error(msg) {}
};

struct MissingArtifactError : std::runtime_error {
    explicit MissingArtifactError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericalError : std::runtime_error {
    double residual = 0.0;
    explicit NumericalError(const std::string& msg, double res = 0.0)
        : std::runtime_error(msg), residual(res) {}
};

// ---------------------------------------------------------------------------
// Deterministic RNG. All distributions are implemented by hand so streams are
// identical across standard libraries and platforms.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t s = a ^ (0x9e3779b97f4a7c15ULL + (b << 6) + (b >> 2));
    return splitmix64(s);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t s = seed;
        state_ = splitmix64(s);
        if (state_ == 0) state_ = 0x2545f4914f6cdd1dULL;
    }

    std::uint64_t next_u64() {
        // xorshift64*
        std::uint64_t x = state_;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        state_ = x;
        return x * 0x2545f4914f6cdd1dULL;
    }

    // Uniform in [0, 1).
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n). n must be positive.
    std::size_t uniform_index(std::size_t n) {
        // rejection-free multiply-shift; bias is negligible for n << 2^64
        return static_cast<std::size_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform01();
        double u2 = uniform01();
        while (u1 <= 1e-300) u1 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = uniform_index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    // k distinct values from [lo, hi), ascending.
    std::vector<std::size_t> sample_without_replacement(std::size_t lo, std::size_t hi,
                                                        std::size_t k);

private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Compensated (Kahan) accumulation. Batch reductions use these so results are
// reproducible and insensitive to summation order at the 1e-15 level.
// ---------------------------------------------------------------------------

struct KahanSum {
    double sum = 0.0;
    double comp = 0.0;

    void add(double x) {
        double y = x - comp;
        double t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    double value() const { return sum; }
};

// One compensated accumulator per coordinate.
class KahanVector {
public:
    explicit KahanVector(std::size_t n) : sum_(n, 0.0), comp_(n, 0.0) {}

    void add(std::span<const double> x) {
        for (std::size_t i = 0; i < sum_.size(); ++i) {
            double y = x[i] - comp_[i];
            double t = sum_[i] + y;
            comp_[i] = (t - sum_[i]) - y;
            sum_[i] = t;
        }
    }
    void add_scaled(std::span<const double> x, double a) {
        for (std::size_t i = 0; i < sum_.size(); ++i) {
            double y = a * x[i] - comp_[i];
            double t = sum_[i] + y;
            comp_[i] = (t - sum_[i]) - y;
            sum_[i] = t;
        }
    }
    ParamVector take_mean(std::size_t count) const {
        ParamVector out(sum_.size());
        for (std::size_t i = 0; i < sum_.size(); ++i) out[i] = sum_[i] / static_cast<double>(count);
        return out;
    }
    const ParamVector& raw_sum() const { return sum_; }

private:
    ParamVector sum_;
    ParamVector comp_;
};

// ---------------------------------------------------------------------------
// Vector arithmetic on ParamVector.
// ---------------------------------------------------------------------------

namespace vec {

inline void check_same_size(const ParamVector& a, const ParamVector& b) {
    if (a.size() != b.size()) throw InputError("vector length mismatch");
}

inline double dot(const ParamVector& a, const ParamVector& b) {
    check_same_size(a, b);
    KahanSum s;
    for (std::size_t i = 0; i < a.size(); ++i) s.add(a[i] * b[i]);
    return s.value();
}

inline double norm(const ParamVector& a) {
    KahanSum s;
    for (double x : a) s.add(x * x);
    return std::sqrt(s.value());
}

inline void axpy(ParamVector& y, double a, const ParamVector& x) {
    check_same_size(y, x);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

inline void scale(ParamVector& y, double a) {
    for (double& x : y) x *= a;
}

inline ParamVector sub(const ParamVector& a, const ParamVector& b) {
    check_same_size(a, b);
    ParamVector out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

inline ParamVector add(const ParamVector& a, const ParamVector& b) {
    check_same_size(a, b);
    ParamVector out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

inline bool all_finite(const ParamVector& a) {
    for (double x : a)
        if (!std::isfinite(x)) return false;
    return true;
}

inline double cosine(const ParamVector& a, const ParamVector& b) {
    double na = norm(a), nb = norm(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot(a, b) / (na * nb);
}

}  // namespace vec

// ---------------------------------------------------------------------------
// Content hashing (FNV-1a 64).
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a_doubles(std::span<const double> xs, std::uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a(xs.data(), xs.size() * sizeof(double), h);
}

std::string hash_hex(std::uint64_t h);

}  // namespace diffin
