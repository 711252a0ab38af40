#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "parallel.hpp"
#include "tensor.hpp"

namespace dnm {

/// Neurons on a fixed 2-D integer lattice. Positions are immutable for the
/// lattice's lifetime; only the weight vectors move.
struct SomLattice {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t dim = 0;                // embedding dimension m
    std::vector<double> weights;        // (rows*cols) x dim, row-major

    SomLattice() = default;
    SomLattice(std::size_t r, std::size_t c, std::size_t m)
        : rows(r), cols(c), dim(m), weights(r * c * m, 0.0) {
        if (r == 0 || c == 0 || m == 0) {
            throw std::invalid_argument("SomLattice: rows, cols and dim must be positive");
        }
    }

    std::size_t size() const { return rows * cols; }

    std::span<const double> unit(std::size_t j) const {
        return std::span(weights).subspan(j * dim, dim);
    }
    std::span<double> unit(std::size_t j) {
        return std::span(weights).subspan(j * dim, dim);
    }

    // integer lattice position p_j of neuron j
    std::pair<std::size_t, std::size_t> position(std::size_t j) const {
        return {j / cols, j % cols};
    }
};

/// Decay constants for the learning-rate and neighborhood schedules plus the
/// presentation counter n. Both schedules decay as exp(-n/alpha).
struct Schedules {
    double sigma0 = 10.0;
    double alpha = 2000.0;
    double eta0 = 0.3;
    std::uint64_t n = 0;
};

struct ScheduleValues {
    double eta = 0.0;
    double sigma = 0.0;
};

inline ScheduleValues schedules_at(const Schedules& s, std::uint64_t n) {
    const double decay = std::exp(-static_cast<double>(n) / s.alpha);
    return {s.eta0 * decay, s.sigma0 * decay};
}

/// u = argmin_j ||z - w_j||; ties break to the smallest index.
inline std::size_t best_matching_unit(std::span<const double> z, const SomLattice& lat) {
    if (z.size() != lat.dim) {
        throw ShapeError("best_matching_unit: embedding dim " + std::to_string(z.size()) +
                         " != lattice dim " + std::to_string(lat.dim));
    }
    std::size_t best = 0;
    double best_d2 = squared_distance(z, lat.unit(0));
    for (std::size_t j = 1; j < lat.size(); ++j) {
        const double d2 = squared_distance(z, lat.unit(j));
        if (d2 < best_d2) {
            best_d2 = d2;
            best = j;
        }
    }
    return best;
}

/// Gaussian kernel over lattice distance: exp(-||p_j - p_u||^2 / (2 sigma^2)).
inline double neighborhood(std::size_t j, std::size_t u, const SomLattice& lat, double sigma) {
    if (sigma <= 0.0) throw std::invalid_argument("neighborhood: sigma must be positive");
    const auto [jr, jc] = lat.position(j);
    const auto [ur, uc] = lat.position(u);
    const double dr = static_cast<double>(jr) - static_cast<double>(ur);
    const double dc = static_cast<double>(jc) - static_cast<double>(uc);
    return std::exp(-(dr * dr + dc * dc) / (2.0 * sigma * sigma));
}

/// One presentation: every neuron moves toward z by eta(n)*H(u,j)(n), with u
/// the BMU of the pre-update weights. Advances n by 1 after the whole-lattice
/// update.
inline void som_update(SomLattice& lat, std::span<const double> z, Schedules& sch) {
    const std::size_t u = best_matching_unit(z, lat);
    const auto [eta, sigma] = schedules_at(sch, sch.n);
    for (std::size_t j = 0; j < lat.size(); ++j) {
        const double gain = eta * neighborhood(j, u, lat, sigma);
        auto wj = lat.unit(j);
        for (std::size_t i = 0; i < lat.dim; ++i) wj[i] += gain * (z[i] - wj[i]);
    }
    ++sch.n;
}

/// Initializes every weight vector with a randomly drawn (with replacement)
/// encoded sample, keeping Eq.-1 pretraining in-distribution.
template <class EncodeFn>
SomLattice init_som(std::size_t rows, std::size_t cols, std::size_t dim, EncodeFn&& encode_fn,
                    const std::vector<Tensor>& sample, std::uint64_t seed) {
    if (sample.empty()) throw std::invalid_argument("init_som: empty sample");
    SomLattice lat(rows, cols, dim);
    Rng rng(seed);
    for (std::size_t j = 0; j < lat.size(); ++j) {
        const Tensor z = encode_fn(sample[rng.index(sample.size())]);
        if (z.numel() != dim) {
            throw ShapeError("init_som: encoder produced dim " + std::to_string(z.numel()) +
                             ", expected " + std::to_string(dim));
        }
        std::copy(z.values.begin(), z.values.end(), lat.unit(j).begin());
    }
    return lat;
}

/// Competitive pretraining: `steps` single point presentations in seeded
/// shuffled order (cycling), encoder frozen.
template <class EncodeFn>
void pretrain_som(SomLattice& lat, EncodeFn&& encode_fn, const std::vector<Tensor>& images,
                  std::size_t steps, Schedules& sch, std::uint64_t seed) {
    if (images.empty()) throw std::invalid_argument("pretrain_som: empty dataset");
    std::vector<std::size_t> order(images.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    shuffle(order, rng);
    std::size_t pos = 0;
    for (std::size_t s = 0; s < steps; ++s) {
        if (pos == order.size()) {
            shuffle(order, rng);
            pos = 0;
        }
        const Tensor z = encode_fn(images[order[pos++]]);
        som_update(lat, z.values, sch);
    }
}

/// Mean distance from each embedding to its BMU; the standard SOM fit
/// diagnostic.
template <class EncodeFn>
double quantization_error(const SomLattice& lat, EncodeFn&& encode_fn,
                          const std::vector<Tensor>& images) {
    if (images.empty()) throw std::invalid_argument("quantization_error: empty dataset");
    const auto chunks = fixed_chunks(images.size());
    std::vector<double> partial(chunks.size(), 0.0);
    parallel_for(chunks.size(), [&](std::size_t ci) {
        double acc = 0.0;
        for (std::size_t i = chunks[ci].begin; i < chunks[ci].end; ++i) {
            const Tensor z = encode_fn(images[i]);
            const std::size_t u = best_matching_unit(z.values, lat);
            acc += std::sqrt(squared_distance(z.values, lat.unit(u)));
        }
        partial[ci] = acc;
    });
    double total = 0.0;
    for (double p : partial) total += p;
    return total / static_cast<double>(images.size());
}

}  // namespace dnm
