#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "cae.hpp"
#include "som.hpp"

namespace dnm {

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
    std::span<const double> row(std::size_t i) const {
        return std::span(data).subspan(i * cols, cols);
    }
    std::span<double> row(std::size_t i) { return std::span(data).subspan(i * cols, cols); }
};

/// Per-batch soft assignments Q and their sharpened target P.
struct AssignmentMatrix {
    Matrix q;
    Matrix p;
};

inline Matrix embeddings_matrix(std::span<const Tensor> zs) {
    if (zs.empty()) throw std::invalid_argument("embeddings_matrix: empty batch");
    Matrix z(zs.size(), zs[0].numel());
    for (std::size_t i = 0; i < zs.size(); ++i) {
        std::copy(zs[i].values.begin(), zs[i].values.end(), z.row(i).begin());
    }
    return z;
}

/// Student-t similarity of every embedding to every lattice unit:
/// q_ij = (1+||Z_i-w_j||^2)^-1 / sum_j' (1+||Z_i-w_j'||^2)^-1.
inline Matrix soft_assignment(const Matrix& z, const SomLattice& lat) {
    if (z.cols != lat.dim) {
        throw ShapeError("soft_assignment: embedding dim " + std::to_string(z.cols) +
                         " != lattice dim " + std::to_string(lat.dim));
    }
    Matrix q(z.rows, lat.size());
    for (std::size_t i = 0; i < z.rows; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < lat.size(); ++j) {
            const double a = 1.0 / (1.0 + squared_distance(z.row(i), lat.unit(j)));
            q.at(i, j) = a;
            s += a;
        }
        for (std::size_t j = 0; j < lat.size(); ++j) q.at(i, j) /= s;
    }
    return q;
}

inline void check_row_stochastic(const Matrix& m, const char* what, double tol = 1e-6) {
    for (std::size_t i = 0; i < m.rows; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < m.cols; ++j) s += m.at(i, j);
        if (std::abs(s - 1.0) > tol) {
            throw std::invalid_argument(std::string(what) + ": row " + std::to_string(i) +
                                        " sums to " + std::to_string(s) + ", expected 1");
        }
    }
}

/// p_ij = (q_ij^2 / f_j) / sum_j' (q_ij'^2 / f_j') with f_j = sum_i q_ij.
/// P sharpens Q and renormalizes by soft cluster frequency; it is treated as
/// a constant during gradient steps.
inline Matrix target_distribution(const Matrix& q) {
    check_row_stochastic(q, "target_distribution: q");
    std::vector<double> freq(q.cols, 0.0);
    for (std::size_t i = 0; i < q.rows; ++i) {
        for (std::size_t j = 0; j < q.cols; ++j) freq[j] += q.at(i, j);
    }
    Matrix p(q.rows, q.cols);
    for (std::size_t i = 0; i < q.rows; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < q.cols; ++j) {
            const double v = q.at(i, j) * q.at(i, j) / freq[j];
            p.at(i, j) = v;
            s += v;
        }
        for (std::size_t j = 0; j < q.cols; ++j) p.at(i, j) /= s;
    }
    return p;
}

/// (1/batch) sum_ij p_ij log(p_ij/q_ij), with 0 log 0 := 0.
inline double kl_divergence(const Matrix& p, const Matrix& q) {
    if (p.rows != q.rows || p.cols != q.cols) {
        throw ShapeError("kl_divergence: shape mismatch " + std::to_string(p.rows) + "x" +
                         std::to_string(p.cols) + " vs " + std::to_string(q.rows) + "x" +
                         std::to_string(q.cols));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < p.rows; ++i) {
        for (std::size_t j = 0; j < p.cols; ++j) {
            const double pij = p.at(i, j);
            if (pij <= 0.0) continue;
            const double qij = q.at(i, j);
            if (qij <= 0.0) {
                throw std::domain_error("kl_divergence: q is zero at (" + std::to_string(i) + "," +
                                        std::to_string(j) + ") where p > 0");
            }
            acc += pij * std::log(pij / qij);
        }
    }
    return acc / static_cast<double>(p.rows);
}

struct LossConfig {
    double gamma = 0.5;
    double beta = 1e-6;
    double lr = 0.001;
    std::size_t iterations = 500;
    bool reg_squared = true;  // beta * ||theta||_2^2 when true, beta * ||theta||_2 otherwise
};

struct DnmLossTerms {
    double kl = 0.0;     // KLD(P||Q)
    double recon = 0.0;  // gamma * mean ||X - X^||^2
    double reg = 0.0;    // beta * ||theta||_2(^2)
    double total = 0.0;
};

namespace detail {

inline double encoder_reg(const CaeModel& model, bool squared) {
    double acc = 0.0;
    for (const Tensor* t : const_cast<CaeModel&>(model).encoder_params()) {
        for (double v : t->values) acc += v * v;
    }
    return squared ? acc : std::sqrt(acc);
}

}  // namespace detail

/// Eq.-2 loss with an explicit (constant) target distribution.
inline DnmLossTerms dnm_loss_terms(std::span<const Tensor* const> batch, const CaeModel& model,
                                   const SomLattice& lat, const LossConfig& cfg, const Matrix& p) {
    if (batch.empty()) throw std::invalid_argument("dnm_loss: empty batch");
    const std::vector<Tensor> zs = encode_batch(model, batch);
    const Matrix q = soft_assignment(embeddings_matrix(zs), lat);
    double recon = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        recon += reconstruction_loss(*batch[i], decode(model, zs[i]));
    }
    DnmLossTerms t;
    t.kl = kl_divergence(p, q);
    t.recon = cfg.gamma * recon / static_cast<double>(batch.size());
    t.reg = cfg.beta * detail::encoder_reg(model, cfg.reg_squared);
    t.total = t.kl + t.recon + t.reg;
    return t;
}

/// Eq.-2 loss with P derived from the batch's own fresh Q.
inline DnmLossTerms dnm_loss_terms(std::span<const Tensor* const> batch, const CaeModel& model,
                                   const SomLattice& lat, const LossConfig& cfg) {
    const std::vector<Tensor> zs = encode_batch(model, batch);
    const Matrix q = soft_assignment(embeddings_matrix(zs), lat);
    return dnm_loss_terms(batch, model, lat, cfg, target_distribution(q));
}

inline double dnm_loss(std::span<const Tensor* const> batch, const CaeModel& model,
                       const SomLattice& lat, const LossConfig& cfg) {
    return dnm_loss_terms(batch, model, lat, cfg).total;
}

/// Gradient of the Eq.-2 loss (P and lattice fixed) w.r.t. all encoder and
/// decoder parameters, packed in canonical order. Returns the loss terms of
/// the evaluated batch.
inline DnmLossTerms dnm_loss_gradients(std::span<const Tensor* const> batch, CaeModel& model,
                                       const SomLattice& lat, const LossConfig& cfg,
                                       const Matrix& p, std::vector<double>& grads_out) {
    if (batch.empty()) throw std::invalid_argument("dnm_loss_gradients: empty batch");
    const ParamPack pack(model.params());
    const Tensor lattice_tensor({lat.size(), lat.dim}, lat.weights);

    const auto chunks = fixed_chunks(batch.size());
    std::vector<std::vector<double>> partials(chunks.size());
    std::vector<double> kl_part(chunks.size(), 0.0), recon_part(chunks.size(), 0.0);

    parallel_for(chunks.size(), [&](std::size_t ci) {
        const ChunkRange r = chunks[ci];
        Graph g;
        const CaeLeaves lv = attach_cae(g, model, true, true);
        const NodeId w_leaf = g.leaf(lattice_tensor);
        NodeId loss = 0;
        bool first = true;
        for (std::size_t i = r.begin; i < r.end; ++i) {
            const NodeId x = g.leaf(*batch[i]);
            const NodeId z = encoder_forward(g, model, lv, x);
            const NodeId q_row = g.soft_assignment(z, w_leaf);
            const NodeId p_row = g.leaf(Tensor({p.cols}, {p.row(i).begin(), p.row(i).end()}));
            const NodeId kl = g.kl_row(p_row, q_row);
            const NodeId xhat = decoder_forward(g, model, lv, z);
            const NodeId rec = g.mse(xhat, x);
            kl_part[ci] += g.value(kl).values[0];
            recon_part[ci] += g.value(rec).values[0];
            const NodeId item = g.add(kl, g.scale(rec, cfg.gamma));
            loss = first ? item : g.add(loss, item);
            first = false;
        }
        if (cfg.beta != 0.0) {
            NodeId reg = 0;
            bool reg_first = true;
            for (NodeId t : lv.encoder_order()) {
                const NodeId ss = g.sum_squares(t);
                reg = reg_first ? ss : g.add(reg, ss);
                reg_first = false;
            }
            if (!cfg.reg_squared) reg = g.sqrt_scalar(reg);
            const double count = static_cast<double>(r.end - r.begin);
            loss = g.add(loss, g.scale(reg, cfg.beta * count));
        }
        g.backward(loss);
        detail::collect_grads(g, lv.param_order(), partials[ci]);
    });

    grads_out.assign(pack.total, 0.0);
    DnmLossTerms terms;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (std::size_t ci = 0; ci < chunks.size(); ++ci) {
        terms.kl += kl_part[ci];
        terms.recon += recon_part[ci];
        for (std::size_t i = 0; i < pack.total; ++i) grads_out[i] += partials[ci][i];
    }
    for (double& v : grads_out) v *= inv_b;
    terms.kl *= inv_b;
    terms.recon *= cfg.gamma * inv_b;
    terms.reg = cfg.beta * detail::encoder_reg(model, cfg.reg_squared);
    terms.total = terms.kl + terms.recon + terms.reg;
    return terms;
}

struct DnmStepMetrics {
    double kl = 0.0;
    double recon = 0.0;
    double reg = 0.0;
    double total = 0.0;
    double qe = 0.0;
};

/// One batch of the two-step joint algorithm. Step 1: present each embedding
/// to the SOM via Eq. 1 (encoder frozen, schedules advancing per point).
/// Step 2: freeze the lattice, derive P from the fresh Q, and take one SGD
/// step on theta and phi against the Eq.-2 loss.
inline DnmStepMetrics joint_train_step(std::span<const Tensor* const> batch, CaeModel& model,
                                       SomLattice& lat, Schedules& sch, const LossConfig& cfg) {
    if (batch.empty()) throw std::invalid_argument("joint_train_step: empty batch");

    // Step 1. The encoder does not change inside this step, so embeddings
    // can be computed up front; lattice updates stay strictly sequential.
    const std::vector<Tensor> zs = encode_batch(model, batch);
    for (const Tensor& z : zs) som_update(lat, z.values, sch);

    // Step 2. Fresh Q against the post-update lattice; P held constant.
    const Matrix z_mat = embeddings_matrix(zs);
    const Matrix q = soft_assignment(z_mat, lat);
    const Matrix p = target_distribution(q);

    std::vector<double> grads;
    DnmStepMetrics metrics;
    const DnmLossTerms terms = dnm_loss_gradients(batch, model, lat, cfg, p, grads);
    const ParamPack pack(model.params());
    pack.apply_sgd(grads, cfg.lr);

    metrics.kl = terms.kl;
    metrics.recon = terms.recon;
    metrics.reg = terms.reg;
    metrics.total = terms.total;
    double qe = 0.0;
    for (std::size_t i = 0; i < z_mat.rows; ++i) {
        const std::size_t u = best_matching_unit(z_mat.row(i), lat);
        qe += std::sqrt(squared_distance(z_mat.row(i), lat.unit(u)));
    }
    metrics.qe = qe / static_cast<double>(z_mat.rows);
    return metrics;
}

/// Joint phase: cfg.iterations batches in seeded shuffled order. Returns one
/// metrics row per step.
inline std::vector<DnmStepMetrics> train_dnm(const std::vector<Tensor>& images, CaeModel& model,
                                             SomLattice& lat, Schedules& sch,
                                             const LossConfig& cfg, std::size_t batch_size,
                                             std::uint64_t seed) {
    if (images.empty()) throw std::invalid_argument("train_dnm: empty dataset");
    const std::size_t batch = std::min(batch_size, images.size());
    BatchSampler sampler(images.size(), derive_seed(seed, 0x300));
    std::vector<DnmStepMetrics> log;
    log.reserve(cfg.iterations);
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        const auto idx = sampler.next_batch(batch);
        std::vector<const Tensor*> views(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) views[i] = &images[idx[i]];
        log.push_back(joint_train_step(views, model, lat, sch, cfg));
    }
    return log;
}

/// Metrics log: `step,kl,recon,reg,total,qe`, one row per joint step, 17
/// significant digits.
inline void write_metrics_csv(const std::string& path, std::span<const DnmStepMetrics> rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open metrics file for writing: " + path);
    out << "step,kl,recon,reg,total,qe\n";
    char buf[512];
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", i + 1, rows[i].kl,
                      rows[i].recon, rows[i].reg, rows[i].total, rows[i].qe);
        out << buf;
    }
    if (!out.flush()) throw std::runtime_error("failed writing metrics file: " + path);
}

}  // namespace dnm
