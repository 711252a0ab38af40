#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "parallel.hpp"
#include "tensor.hpp"

namespace dnm {

struct ConvSpec {
    std::size_t filters = 0;
    std::size_t ksize = 0;
};

/// Encoder topology: a stack of valid stride-1 convolutions followed by one
/// dense layer down to the embedding. The decoder mirrors it.
struct CaeArch {
    std::size_t in_c = 1;
    std::size_t in_h = 28;
    std::size_t in_w = 28;
    std::vector<ConvSpec> conv = {{10, 5}, {8, 5}, {5, 5}};
    std::size_t embed_dim = 100;

    std::size_t layer_channels(std::size_t i) const {  // channels entering conv layer i
        return i == 0 ? in_c : conv[i - 1].filters;
    }

    // spatial size after i conv layers
    std::pair<std::size_t, std::size_t> spatial(std::size_t i) const {
        std::size_t h = in_h, w = in_w;
        for (std::size_t l = 0; l < i; ++l) {
            h -= conv[l].ksize - 1;
            w -= conv[l].ksize - 1;
        }
        return {h, w};
    }

    std::size_t flat_dim() const {
        const auto [h, w] = spatial(conv.size());
        return conv.back().filters * h * w;
    }

    void validate() const {
        if (conv.empty()) throw std::invalid_argument("arch: at least one conv layer required");
        if (in_c == 0 || in_h == 0 || in_w == 0 || embed_dim == 0) {
            throw std::invalid_argument("arch: dimensions must be positive");
        }
        std::size_t h = in_h, w = in_w;
        for (std::size_t l = 0; l < conv.size(); ++l) {
            if (conv[l].filters == 0 || conv[l].ksize == 0) {
                throw std::invalid_argument("arch: conv layer " + std::to_string(l) +
                                            " has zero filters or kernel size");
            }
            if (h < conv[l].ksize || w < conv[l].ksize) {
                throw ShapeError("arch: spatial size " + std::to_string(h) + "x" + std::to_string(w) +
                                 " too small for kernel " + std::to_string(conv[l].ksize) +
                                 " at conv layer " + std::to_string(l));
            }
            h -= conv[l].ksize - 1;
            w -= conv[l].ksize - 1;
        }
    }
};

/// Encoder parameters theta and decoder parameters phi. Decoder conv kernels
/// share the encoder kernel shapes (F,C,K,K) because conv2d_transposed is the
/// adjoint of conv2d; the parameters themselves are untied.
struct CaeModel {
    CaeArch arch;
    std::vector<Tensor> enc_kernel, enc_bias;
    Tensor enc_dense_w, enc_dense_b;  // (m, flat), (m)
    Tensor dec_dense_w, dec_dense_b;  // (flat, m), (flat)
    std::vector<Tensor> dec_kernel, dec_bias;

    static CaeModel zeros(const CaeArch& arch) {
        arch.validate();
        CaeModel m;
        m.arch = arch;
        const std::size_t flat = arch.flat_dim();
        for (std::size_t l = 0; l < arch.conv.size(); ++l) {
            const std::size_t f = arch.conv[l].filters;
            const std::size_t c = arch.layer_channels(l);
            const std::size_t k = arch.conv[l].ksize;
            m.enc_kernel.emplace_back(Shape{f, c, k, k});
            m.enc_bias.emplace_back(Shape{f});
            m.dec_kernel.emplace_back(Shape{f, c, k, k});
            m.dec_bias.emplace_back(Shape{c});
        }
        m.enc_dense_w = Tensor({arch.embed_dim, flat});
        m.enc_dense_b = Tensor({arch.embed_dim});
        m.dec_dense_w = Tensor({flat, arch.embed_dim});
        m.dec_dense_b = Tensor({flat});
        return m;
    }

    /// Glorot-style uniform init scaled by fan-in/fan-out; biases zero.
    static CaeModel init(const CaeArch& arch, Rng& rng) {
        CaeModel m = zeros(arch);
        for (std::size_t l = 0; l < arch.conv.size(); ++l) {
            const std::size_t k2 = arch.conv[l].ksize * arch.conv[l].ksize;
            const double fan_in = static_cast<double>(arch.layer_channels(l) * k2);
            const double fan_out = static_cast<double>(arch.conv[l].filters * k2);
            glorot_fill(m.enc_kernel[l], fan_in, fan_out, rng);
            glorot_fill(m.dec_kernel[l], fan_out, fan_in, rng);
        }
        const double flat = static_cast<double>(arch.flat_dim());
        const double m_dim = static_cast<double>(arch.embed_dim);
        glorot_fill(m.enc_dense_w, flat, m_dim, rng);
        glorot_fill(m.dec_dense_w, m_dim, flat, rng);
        return m;
    }

    std::vector<Tensor*> encoder_params() {
        std::vector<Tensor*> p;
        for (std::size_t l = 0; l < enc_kernel.size(); ++l) {
            p.push_back(&enc_kernel[l]);
            p.push_back(&enc_bias[l]);
        }
        p.push_back(&enc_dense_w);
        p.push_back(&enc_dense_b);
        return p;
    }

    std::vector<Tensor*> decoder_params() {
        std::vector<Tensor*> p;
        p.push_back(&dec_dense_w);
        p.push_back(&dec_dense_b);
        for (std::size_t l = dec_kernel.size(); l-- > 0;) {
            p.push_back(&dec_kernel[l]);
            p.push_back(&dec_bias[l]);
        }
        return p;
    }

    /// Canonical parameter order (serialization, SGD, gradient packing).
    std::vector<Tensor*> params() {
        auto p = encoder_params();
        auto d = decoder_params();
        p.insert(p.end(), d.begin(), d.end());
        return p;
    }

    std::vector<const Tensor*> params() const {
        auto p = const_cast<CaeModel*>(this)->params();
        return {p.begin(), p.end()};
    }

private:
    static void glorot_fill(Tensor& t, double fan_in, double fan_out, Rng& rng) {
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        for (double& v : t.values) v = rng.uniform(-limit, limit);
    }
};

/// Graph leaf ids for one attached model instance.
struct CaeLeaves {
    std::vector<NodeId> enc_kernel, enc_bias;
    NodeId enc_dense_w = 0, enc_dense_b = 0;
    NodeId dec_dense_w = 0, dec_dense_b = 0;
    std::vector<NodeId> dec_kernel, dec_bias;

    std::vector<NodeId> encoder_order() const {
        std::vector<NodeId> v;
        for (std::size_t l = 0; l < enc_kernel.size(); ++l) {
            v.push_back(enc_kernel[l]);
            v.push_back(enc_bias[l]);
        }
        v.push_back(enc_dense_w);
        v.push_back(enc_dense_b);
        return v;
    }

    std::vector<NodeId> param_order() const {
        std::vector<NodeId> v = encoder_order();
        v.push_back(dec_dense_w);
        v.push_back(dec_dense_b);
        for (std::size_t l = dec_kernel.size(); l-- > 0;) {
            v.push_back(dec_kernel[l]);
            v.push_back(dec_bias[l]);
        }
        return v;
    }
};

/// Rebuilds the leaf-id structure from ids laid out in canonical parameter
/// order (the inverse of CaeLeaves::param_order).
inline CaeLeaves leaves_from_param_order(std::span<const NodeId> ids, std::size_t n_conv) {
    CaeLeaves lv;
    std::size_t at = 0;
    for (std::size_t l = 0; l < n_conv; ++l) {
        lv.enc_kernel.push_back(ids[at++]);
        lv.enc_bias.push_back(ids[at++]);
    }
    lv.enc_dense_w = ids[at++];
    lv.enc_dense_b = ids[at++];
    lv.dec_dense_w = ids[at++];
    lv.dec_dense_b = ids[at++];
    lv.dec_kernel.resize(n_conv);
    lv.dec_bias.resize(n_conv);
    for (std::size_t l = n_conv; l-- > 0;) {
        lv.dec_kernel[l] = ids[at++];
        lv.dec_bias[l] = ids[at++];
    }
    return lv;
}

inline CaeLeaves attach_cae(Graph& g, const CaeModel& m, bool train_encoder, bool train_decoder) {
    CaeLeaves lv;
    for (std::size_t l = 0; l < m.enc_kernel.size(); ++l) {
        lv.enc_kernel.push_back(g.leaf(m.enc_kernel[l], train_encoder));
        lv.enc_bias.push_back(g.leaf(m.enc_bias[l], train_encoder));
    }
    lv.enc_dense_w = g.leaf(m.enc_dense_w, train_encoder);
    lv.enc_dense_b = g.leaf(m.enc_dense_b, train_encoder);
    lv.dec_dense_w = g.leaf(m.dec_dense_w, train_decoder);
    lv.dec_dense_b = g.leaf(m.dec_dense_b, train_decoder);
    for (std::size_t l = 0; l < m.dec_kernel.size(); ++l) {
        lv.dec_kernel.push_back(g.leaf(m.dec_kernel[l], train_decoder));
        lv.dec_bias.push_back(g.leaf(m.dec_bias[l], train_decoder));
    }
    return lv;
}

/// x (C,H,W) -> relu conv stack -> flatten -> dense -> Z (m). The embedding
/// itself carries no activation so it can range over all of R^m.
inline NodeId encoder_forward(Graph& g, const CaeModel& m, const CaeLeaves& lv, NodeId x) {
    NodeId h = x;
    for (std::size_t l = 0; l < m.enc_kernel.size(); ++l) {
        h = g.relu(g.conv2d(h, lv.enc_kernel[l], lv.enc_bias[l]));
    }
    h = g.reshape(h, {m.arch.flat_dim()});
    return g.dense(h, lv.enc_dense_w, lv.enc_dense_b);
}

/// Z (m) -> dense -> relu -> unflatten -> transposed conv stack -> X^ (C,H,W)
/// with sigmoid on the final reconstruction.
inline NodeId decoder_forward(Graph& g, const CaeModel& m, const CaeLeaves& lv, NodeId z) {
    NodeId h = g.relu(g.dense(z, lv.dec_dense_w, lv.dec_dense_b));
    const auto [sh, sw] = m.arch.spatial(m.arch.conv.size());
    h = g.reshape(h, {m.arch.conv.back().filters, sh, sw});
    for (std::size_t l = m.arch.conv.size(); l-- > 0;) {
        h = g.conv2d_transposed(h, lv.dec_kernel[l], lv.dec_bias[l]);
        h = l == 0 ? g.sigmoid(h) : g.relu(h);
    }
    return h;
}

inline void check_input_dims(const CaeModel& m, const Tensor& x) {
    const Shape want{m.arch.in_c, m.arch.in_h, m.arch.in_w};
    if (x.shape != want) {
        throw ShapeError("encode: input shape " + shape_str(x.shape) +
                         " does not match architecture input " + shape_str(want));
    }
}

inline Tensor encode(const CaeModel& m, const Tensor& x) {
    check_input_dims(m, x);
    Graph g;
    const CaeLeaves lv = attach_cae(g, m, false, false);
    return g.value(encoder_forward(g, m, lv, g.leaf(x)));
}

inline Tensor decode(const CaeModel& m, const Tensor& z) {
    if (z.shape != Shape{m.arch.embed_dim}) {
        throw ShapeError("decode: embedding shape " + shape_str(z.shape) + " does not match m=" +
                         std::to_string(m.arch.embed_dim));
    }
    Graph g;
    const CaeLeaves lv = attach_cae(g, m, false, false);
    return g.value(decoder_forward(g, m, lv, g.leaf(z)));
}

inline std::vector<Tensor> encode_batch(const CaeModel& m, std::span<const Tensor* const> xs) {
    std::vector<Tensor> zs(xs.size());
    parallel_for(xs.size(), [&](std::size_t i) { zs[i] = encode(m, *xs[i]); });
    return zs;
}

/// Mean over batch items and pixels of the squared difference.
inline double reconstruction_loss(const Tensor& x, const Tensor& xhat) {
    if (x.shape != xhat.shape) {
        throw ShapeError("reconstruction_loss: shape mismatch " + shape_str(x.shape) + " vs " +
                         shape_str(xhat.shape));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double d = x.values[i] - xhat.values[i];
        acc += d * d;
    }
    return acc / static_cast<double>(x.numel());
}

inline double reconstruction_loss(std::span<const Tensor* const> xs,
                                  std::span<const Tensor> xhats) {
    if (xs.size() != xhats.size() || xs.empty()) {
        throw ShapeError("reconstruction_loss: batch size mismatch");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) acc += reconstruction_loss(*xs[i], xhats[i]);
    return acc / static_cast<double>(xs.size());
}

struct TrainConfig {
    std::size_t iterations = 500;
    std::size_t batch_size = 256;
    double lr = 0.01;
    std::uint64_t seed = 42;
};

/// Seeded shuffled presentation order, cycling over the dataset; the order is
/// reshuffled at every wrap so long runs do not repeat one permutation.
class BatchSampler {
public:
    BatchSampler(std::size_t n, std::uint64_t seed) : rng_(seed), order_(n) {
        if (n == 0) throw std::invalid_argument("BatchSampler: empty dataset");
        for (std::size_t i = 0; i < n; ++i) order_[i] = i;
        shuffle(order_, rng_);
    }

    std::size_t next() {
        if (pos_ == order_.size()) {
            shuffle(order_, rng_);
            pos_ = 0;
        }
        return order_[pos_++];
    }

    std::vector<std::size_t> next_batch(std::size_t count) {
        std::vector<std::size_t> idx(count);
        for (std::size_t i = 0; i < count; ++i) idx[i] = next();
        return idx;
    }

private:
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

/// Flat view over an ordered set of parameter tensors; gradients are packed
/// into one contiguous buffer in the same order.
struct ParamPack {
    std::vector<Tensor*> tensors;
    std::size_t total = 0;

    explicit ParamPack(std::vector<Tensor*> t) : tensors(std::move(t)) {
        for (const Tensor* p : tensors) total += p->numel();
    }

    void apply_sgd(std::span<const double> flat_grad, double lr) const {
        std::size_t off = 0;
        for (Tensor* p : tensors) {
            sgd_step(*p, flat_grad.subspan(off, p->numel()), lr);
            off += p->numel();
        }
    }
};

namespace detail {

inline void collect_grads(const Graph& g, std::span<const NodeId> leaves, std::vector<double>& out) {
    out.clear();
    for (NodeId id : leaves) {
        const auto& gr = g.grad(id);
        out.insert(out.end(), gr.begin(), gr.end());
    }
}

/// Runs `build_chunk` over fixed-size index chunks (possibly in parallel),
/// then reduces the per-chunk gradient partials in chunk order. Returns the
/// summed per-item loss. The division by the batch size is the caller's.
template <class BuildChunk>
double chunked_batch_gradients(std::size_t batch, std::size_t grad_len, BuildChunk&& build_chunk,
                               std::vector<double>& grads_out) {
    const auto chunks = fixed_chunks(batch);
    std::vector<std::vector<double>> partials(chunks.size());
    std::vector<double> losses(chunks.size(), 0.0);
    parallel_for(chunks.size(), [&](std::size_t ci) {
        losses[ci] = build_chunk(chunks[ci], partials[ci]);
    });
    grads_out.assign(grad_len, 0.0);
    double loss_sum = 0.0;
    for (std::size_t ci = 0; ci < chunks.size(); ++ci) {
        loss_sum += losses[ci];
        for (std::size_t i = 0; i < grad_len; ++i) grads_out[i] += partials[ci][i];
    }
    return loss_sum;
}

}  // namespace detail

/// Activations of conv layer `layers` (post-relu), encoder prefix frozen.
inline Tensor encode_prefix(const CaeModel& m, const Tensor& x, std::size_t layers) {
    check_input_dims(m, x);
    Graph g;
    NodeId h = g.leaf(x);
    for (std::size_t l = 0; l < layers; ++l) {
        h = g.relu(g.conv2d(h, g.leaf(m.enc_kernel[l]), g.leaf(m.enc_bias[l])));
    }
    return g.value(h);
}

namespace detail {

// One SGD step of the shallow autoencoder for `stage` (conv layers first,
// then the dense pair), fed with prefix activations of the current batch.
inline double layerwise_step(CaeModel& m, std::span<const Tensor> inputs, std::size_t stage,
                             double lr) {
    const bool dense_stage = stage == m.arch.conv.size();
    std::vector<Tensor*> params = dense_stage
        ? std::vector<Tensor*>{&m.enc_dense_w, &m.enc_dense_b, &m.dec_dense_w, &m.dec_dense_b}
        : std::vector<Tensor*>{&m.enc_kernel[stage], &m.enc_bias[stage],
                               &m.dec_kernel[stage], &m.dec_bias[stage]};
    const ParamPack pack(params);

    auto build_chunk = [&](ChunkRange r, std::vector<double>& partial) {
        Graph g;
        std::vector<NodeId> leaves;
        for (const Tensor* p : pack.tensors) leaves.push_back(g.leaf(*p, true));
        NodeId loss = 0;
        bool first = true;
        double value = 0.0;
        for (std::size_t i = r.begin; i < r.end; ++i) {
            NodeId target = g.leaf(inputs[i]);
            NodeId rec;
            if (dense_stage) {
                target = g.reshape(target, {m.arch.flat_dim()});
                const NodeId z = g.dense(target, leaves[0], leaves[1]);
                rec = g.relu(g.dense(z, leaves[2], leaves[3]));
            } else {
                const NodeId e = g.relu(g.conv2d(target, leaves[0], leaves[1]));
                const NodeId d = g.conv2d_transposed(e, leaves[2], leaves[3]);
                rec = stage == 0 ? g.sigmoid(d) : g.relu(d);
            }
            const NodeId item = g.mse(rec, target);
            value += g.value(item).values[0];
            loss = first ? item : g.add(loss, item);
            first = false;
        }
        g.backward(loss);
        collect_grads(g, leaves, partial);
        return value;
    };

    std::vector<double> grads;
    const double loss_sum =
        chunked_batch_gradients(inputs.size(), pack.total, build_chunk, grads);
    const double inv_b = 1.0 / static_cast<double>(inputs.size());
    for (double& v : grads) v *= inv_b;
    pack.apply_sgd(grads, lr);
    return loss_sum * inv_b;
}

}  // namespace detail

/// Greedy layer-wise pretraining: every encoder layer is trained as a shallow
/// autoencoder against the frozen previous layer's activations, jointly with
/// its mirror decoder layer; cfg.iterations mini-batch steps per stage.
inline CaeModel pretrain_layerwise(CaeModel model, const std::vector<Tensor>& images,
                                   const TrainConfig& cfg) {
    if (images.empty()) throw std::invalid_argument("pretrain_layerwise: empty dataset");
    const std::size_t stages = model.arch.conv.size() + 1;
    const std::size_t batch = std::min(cfg.batch_size, images.size());
    for (std::size_t stage = 0; stage < stages; ++stage) {
        BatchSampler sampler(images.size(), derive_seed(cfg.seed, 0x100 + stage));
        for (std::size_t it = 0; it < cfg.iterations; ++it) {
            const auto idx = sampler.next_batch(batch);
            std::vector<Tensor> inputs(idx.size());
            const std::size_t prefix = std::min(stage, model.arch.conv.size());
            parallel_for(idx.size(), [&](std::size_t i) {
                inputs[i] = encode_prefix(model, images[idx[i]], prefix);
            });
            detail::layerwise_step(model, inputs, stage, cfg.lr);
        }
    }
    return model;
}

/// End-to-end reconstruction fine-tuning of all encoder and decoder
/// parameters. Returns the trained model; per-step mean losses go to
/// `loss_log` when provided.
inline CaeModel finetune(CaeModel model, const std::vector<Tensor>& images, const TrainConfig& cfg,
                         std::vector<double>* loss_log = nullptr) {
    if (images.empty()) throw std::invalid_argument("finetune: empty dataset");
    const std::size_t batch = std::min(cfg.batch_size, images.size());
    const ParamPack pack(model.params());
    BatchSampler sampler(images.size(), derive_seed(cfg.seed, 0x200));
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        const auto idx = sampler.next_batch(batch);
        auto build_chunk = [&](ChunkRange r, std::vector<double>& partial) {
            Graph g;
            const CaeLeaves lv = attach_cae(g, model, true, true);
            const auto leaves = lv.param_order();
            NodeId loss = 0;
            bool first = true;
            double value = 0.0;
            for (std::size_t i = r.begin; i < r.end; ++i) {
                const NodeId x = g.leaf(images[idx[i]]);
                const NodeId xhat = decoder_forward(g, model, lv, encoder_forward(g, model, lv, x));
                const NodeId item = g.mse(xhat, x);
                value += g.value(item).values[0];
                loss = first ? item : g.add(loss, item);
                first = false;
            }
            g.backward(loss);
            detail::collect_grads(g, leaves, partial);
            return value;
        };
        std::vector<double> grads;
        const double loss_sum =
            detail::chunked_batch_gradients(idx.size(), pack.total, build_chunk, grads);
        const double inv_b = 1.0 / static_cast<double>(idx.size());
        for (double& v : grads) v *= inv_b;
        pack.apply_sgd(grads, cfg.lr);
        if (loss_log) loss_log->push_back(loss_sum * inv_b);
    }
    return model;
}

}  // namespace dnm
