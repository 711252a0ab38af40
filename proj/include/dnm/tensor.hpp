#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dnm {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Shortest decimal form that round-trips the exact double.
inline std::string format_double(double v) {
    std::array<char, 64> buf;
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), res.ptr);
}

/// Dense row-major tensor of 64-bit floats with an optional gradient buffer.
/// `grad` stays empty until a backward pass (or caller) fills it; when present
/// it has the same length as `values`.
struct Tensor {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), values(shape_numel(shape), 0.0) {}
    Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
        if (values.size() != shape_numel(shape)) {
            throw ShapeError("tensor: data length " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
        }
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor full(Shape s, double v) {
        Tensor t(std::move(s));
        std::fill(t.values.begin(), t.values.end(), v);
        return t;
    }

    std::size_t numel() const { return values.size(); }
    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }
};

inline bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline bool all_finite(const Tensor& t) { return all_finite(std::span<const double>(t.values)); }

inline double dot(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

/// One SGD step, in place: p <- p - lr * g.
inline void sgd_step(Tensor& param, std::span<const double> grad, double lr) {
    if (lr <= 0.0) throw std::invalid_argument("sgd_step: lr must be positive");
    if (grad.size() != param.numel()) {
        throw ShapeError("sgd_step: gradient length " + std::to_string(grad.size()) +
                         " does not match parameter shape " + shape_str(param.shape));
    }
    for (std::size_t i = 0; i < grad.size(); ++i) param.values[i] -= lr * grad[i];
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Derives a phase-local seed from the run's root seed. Each pipeline phase
/// gets its own stream so stages stay reproducible independently.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t phase) {
    return splitmix64(root ^ splitmix64(phase + 1));
}

/// Deterministic RNG. The raw engine is std::mt19937_64 but all real-valued
/// and bounded draws are mapped explicitly so streams do not depend on
/// standard-library distribution internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed ? seed : 0x6a09e667f3bcc909ull) {}

    std::uint64_t next_u64() { return gen_(); }

    // uniform in [0,1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via polar Box-Muller
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        has_spare_ = true;
        return u * f;
    }

    // uniform integer in [0, n), rejection sampled (no modulo bias)
    std::size_t index(std::size_t n) {
        if (n == 0) throw std::invalid_argument("Rng::index: n must be positive");
        const std::uint64_t span = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        std::uint64_t u;
        do {
            u = next_u64();
        } while (u >= limit);
        return static_cast<std::size_t>(u % span);
    }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::swap(v[i - 1], v[rng.index(i)]);
    }
}

}  // namespace dnm
