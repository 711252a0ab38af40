#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dnm.hpp"

namespace dnm {

/// Central finite-difference check of reverse-mode gradients. `build` must
/// deterministically construct a scalar loss from the given leaves; the
/// returned value is the worst relative error over every coordinate of every
/// input.
inline double grad_check(const std::function<NodeId(Graph&, const std::vector<NodeId>&)>& build,
                         std::vector<Tensor> inputs, double eps = 1e-5) {
    if (eps <= 0.0) throw std::invalid_argument("grad_check: eps must be positive");
    Graph g;
    std::vector<NodeId> ids;
    ids.reserve(inputs.size());
    for (const Tensor& t : inputs) ids.push_back(g.leaf(t, true));
    g.backward(build(g, ids));
    std::vector<std::vector<double>> analytic;
    analytic.reserve(ids.size());
    for (NodeId id : ids) analytic.push_back(g.grad(id));

    auto eval = [&](const std::vector<Tensor>& point) {
        Graph gg;
        std::vector<NodeId> lids;
        lids.reserve(point.size());
        for (const Tensor& t : point) lids.push_back(gg.leaf(t));
        return gg.value(build(gg, lids)).values[0];
    };

    double worst = 0.0;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        for (std::size_t i = 0; i < inputs[t].numel(); ++i) {
            const double saved = inputs[t].values[i];
            inputs[t].values[i] = saved + eps;
            const double f_plus = eval(inputs);
            inputs[t].values[i] = saved - eps;
            const double f_minus = eval(inputs);
            inputs[t].values[i] = saved;
            const double fd = (f_plus - f_minus) / (2.0 * eps);
            const double ad = analytic[t][i];
            const double rel =
                std::abs(ad - fd) / std::max({1.0, std::abs(ad), std::abs(fd)});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

struct GradCheckCase {
    std::string name;
    std::function<double()> run;  // returns max relative error
};

inline constexpr double kGradCheckTolerance = 1e-4;

namespace detail {

inline Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(s));
    for (double& v : t.values) v = rng.uniform(lo, hi);
    return t;
}

// keeps every coordinate away from the relu kink so central differences
// stay two-sided
inline Tensor random_tensor_away_from_zero(Shape s, Rng& rng, double margin = 0.15) {
    Tensor t = random_tensor(std::move(s), rng);
    for (double& v : t.values) {
        if (std::abs(v) < margin) v = v < 0.0 ? v - margin : v + margin;
    }
    return t;
}

inline Matrix fixed_target(const Matrix& q) { return target_distribution(q); }

}  // namespace detail

/// The registered differentiable-op suite: every op the training path uses,
/// plus the two end-to-end composites, at seeded random small shapes.
inline std::vector<GradCheckCase> standard_gradcheck_suite(std::uint64_t seed = 42) {
    std::vector<GradCheckCase> cases;

    cases.push_back({"conv2d", [seed] {
        Rng rng(derive_seed(seed, 11));
        const std::size_t C = 1 + rng.index(3), F = 1 + rng.index(3), K = 2 + rng.index(2);
        const std::size_t H = K + rng.index(4), W = K + rng.index(4);
        std::vector<Tensor> in{detail::random_tensor({C, H, W}, rng),
                               detail::random_tensor({F, C, K, K}, rng),
                               detail::random_tensor({F}, rng)};
        return grad_check(
            [](Graph& g, const std::vector<NodeId>& ids) {
                return g.sum_squares(g.conv2d(ids[0], ids[1], ids[2]));
            },
            std::move(in));
    }});

    cases.push_back({"conv2d_transposed", [seed] {
        Rng rng(derive_seed(seed, 12));
        const std::size_t F = 1 + rng.index(3), C = 1 + rng.index(3), K = 2 + rng.index(2);
        const std::size_t H = 1 + rng.index(4), W = 1 + rng.index(4);
        std::vector<Tensor> in{detail::random_tensor({F, H, W}, rng),
                               detail::random_tensor({F, C, K, K}, rng),
                               detail::random_tensor({C}, rng)};
        return grad_check(
            [](Graph& g, const std::vector<NodeId>& ids) {
                return g.sum_squares(g.conv2d_transposed(ids[0], ids[1], ids[2]));
            },
            std::move(in));
    }});

    cases.push_back({"dense", [seed] {
        Rng rng(derive_seed(seed, 13));
        const std::size_t d = 2 + rng.index(6), o = 1 + rng.index(5);
        std::vector<Tensor> in{detail::random_tensor({d}, rng),
                               detail::random_tensor({o, d}, rng),
                               detail::random_tensor({o}, rng)};
        return grad_check(
            [](Graph& g, const std::vector<NodeId>& ids) {
                return g.sum_squares(g.dense(ids[0], ids[1], ids[2]));
            },
            std::move(in));
    }});

    cases.push_back({"relu", [seed] {
        Rng rng(derive_seed(seed, 14));
        std::vector<Tensor> in{detail::random_tensor_away_from_zero({3 + rng.index(8)}, rng)};
        return grad_check(
            [](Graph& g, const std::vector<NodeId>& ids) { return g.sum_squares(g.relu(ids[0])); },
            std::move(in));
    }});

    cases.push_back({"sigmoid", [seed] {
        Rng rng(derive_seed(seed, 15));
        std::vector<Tensor> in{detail::random_tensor({3 + rng.index(8)}, rng, -3.0, 3.0)};
        return grad_check(
            [](Graph& g, const std::vector<NodeId>& ids) {
                return g.sum_squares(g.sigmoid(ids[0]));
            },
            std::move(in));
    }});

    cases.push_back({"reshape_add_scale_sum", [seed] {
        Rng rng(derive_seed(seed, 16));
        const std::size_t r = 2 + rng.index(3), c = 2 + rng.index(3);
        std::vector<Tensor> in{detail::random_tensor({r, c}, rng),
                               detail::random_tensor({r * c}, rng)};
        return grad_check(
            [](Graph& g, const std::vector<NodeId>& ids) {
                const std::size_t n = g.value(ids[1]).numel();
                return g.sum(g.add(g.scale(g.reshape(ids[0], {n}), 0.7), ids[1]));
            },
            std::move(in));
    }});

    cases.push_back({"mse", [seed] {
        Rng rng(derive_seed(seed, 17));
        const std::size_t n = 2 + rng.index(8);
        std::vector<Tensor> in{detail::random_tensor({n}, rng), detail::random_tensor({n}, rng)};
        return grad_check(
            [](Graph& g, const std::vector<NodeId>& ids) { return g.mse(ids[0], ids[1]); },
            std::move(in));
    }});

    cases.push_back({"sum_squares", [seed] {
        Rng rng(derive_seed(seed, 18));
        std::vector<Tensor> in{detail::random_tensor({2 + rng.index(8)}, rng)};
        return grad_check(
            [](Graph& g, const std::vector<NodeId>& ids) { return g.sum_squares(ids[0]); },
            std::move(in));
    }});

    cases.push_back({"sqrt", [seed] {
        Rng rng(derive_seed(seed, 19));
        std::vector<Tensor> in{detail::random_tensor({2 + rng.index(6)}, rng, 0.5, 2.0)};
        return grad_check(
            [](Graph& g, const std::vector<NodeId>& ids) {
                return g.sqrt_scalar(g.sum_squares(ids[0]));
            },
            std::move(in));
    }});

    cases.push_back({"soft_assignment", [seed] {
        Rng rng(derive_seed(seed, 20));
        const std::size_t m = 2 + rng.index(4), l = 2 + rng.index(5);
        std::vector<Tensor> in{detail::random_tensor({m}, rng),
                               detail::random_tensor({l, m}, rng)};
        return grad_check(
            [](Graph& g, const std::vector<NodeId>& ids) {
                return g.sum_squares(g.soft_assignment(ids[0], ids[1]));
            },
            std::move(in));
    }});

    cases.push_back({"kl_divergence", [seed] {
        Rng rng(derive_seed(seed, 21));
        const std::size_t l = 2 + rng.index(5);
        Tensor p({l});
        double s = 0.0;
        for (double& v : p.values) {
            v = rng.uniform(0.05, 1.0);
            s += v;
        }
        for (double& v : p.values) v /= s;
        std::vector<Tensor> in{detail::random_tensor({l}, rng, 0.1, 1.0)};
        return grad_check(
            [p](Graph& g, const std::vector<NodeId>& ids) {
                return g.kl_row(g.leaf(p), ids[0]);
            },
            std::move(in));
    }});

    cases.push_back({"cae_reconstruction", [seed] {
        Rng rng(derive_seed(seed, 22));
        CaeArch arch;
        arch.in_c = 1;
        arch.in_h = 8;
        arch.in_w = 8;
        arch.conv = {{2, 3}, {2, 2}};
        arch.embed_dim = 5;
        const CaeModel model = CaeModel::init(arch, rng);
        const Tensor x = detail::random_tensor({1, 8, 8}, rng, 0.0, 1.0);
        std::vector<Tensor> inputs;
        for (const Tensor* t : model.params()) inputs.push_back(*t);
        return grad_check(
            [model, x](Graph& g, const std::vector<NodeId>& ids) {
                const CaeLeaves lv = leaves_from_param_order(ids, model.arch.conv.size());
                const NodeId xn = g.leaf(x);
                return g.mse(decoder_forward(g, model, lv, encoder_forward(g, model, lv, xn)), xn);
            },
            std::move(inputs));
    }});

    cases.push_back({"dnm_loss", [seed] {
        Rng rng(derive_seed(seed, 23));
        CaeArch arch;
        arch.in_c = 1;
        arch.in_h = 7;
        arch.in_w = 7;
        arch.conv = {{2, 3}, {2, 2}};
        arch.embed_dim = 4;
        CaeModel model = CaeModel::init(arch, rng);
        SomLattice lat(2, 3, arch.embed_dim);
        for (double& v : lat.weights) v = rng.uniform(-0.5, 0.5);
        std::vector<Tensor> images;
        for (int i = 0; i < 3; ++i) images.push_back(detail::random_tensor({1, 7, 7}, rng, 0.0, 1.0));
        std::vector<const Tensor*> batch;
        for (const Tensor& t : images) batch.push_back(&t);
        LossConfig cfg;
        cfg.gamma = 0.5;
        cfg.beta = 1e-3;

        const std::vector<Tensor> zs = encode_batch(model, batch);
        const Matrix p = detail::fixed_target(soft_assignment(embeddings_matrix(zs), lat));

        std::vector<double> analytic;
        dnm_loss_gradients(batch, model, lat, cfg, p, analytic);

        const double eps = 1e-5;
        const ParamPack pack(model.params());
        double worst = 0.0;
        std::size_t flat = 0;
        for (Tensor* t : pack.tensors) {
            for (std::size_t i = 0; i < t->numel(); ++i, ++flat) {
                const double saved = t->values[i];
                t->values[i] = saved + eps;
                const double f_plus = dnm_loss_terms(batch, model, lat, cfg, p).total;
                t->values[i] = saved - eps;
                const double f_minus = dnm_loss_terms(batch, model, lat, cfg, p).total;
                t->values[i] = saved;
                const double fd = (f_plus - f_minus) / (2.0 * eps);
                const double ad = analytic[flat];
                worst = std::max(worst,
                                 std::abs(ad - fd) / std::max({1.0, std::abs(ad), std::abs(fd)}));
            }
        }
        return worst;
    }});

    return cases;
}

}  // namespace dnm
