#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace dnm {

enum class OpKind : std::uint8_t {
    Leaf,
    Conv2d,
    Conv2dTransposed,
    Dense,
    Relu,
    Sigmoid,
    Reshape,
    Add,
    Scale,
    Sum,
    SumSquares,
    Sqrt,
    MseLoss,
    SoftAssign,
    KlRow,
};

enum class Activation { relu, sigmoid, identity };

using NodeId = std::uint32_t;

namespace kernels {

// y[f,oh,ow] = b[f] + sum_{c,kh,kw} x[c,oh+kh,ow+kw] * k[f,c,kh,kw]
inline void conv2d_forward(const double* x, const double* k, const double* b, double* y,
                           std::size_t C, std::size_t H, std::size_t W,
                           std::size_t F, std::size_t K) {
    const std::size_t OH = H - K + 1, OW = W - K + 1;
    for (std::size_t f = 0; f < F; ++f) {
        std::fill(y + f * OH * OW, y + (f + 1) * OH * OW, b[f]);
    }
    for (std::size_t f = 0; f < F; ++f) {
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t kh = 0; kh < K; ++kh) {
                for (std::size_t kw = 0; kw < K; ++kw) {
                    const double kv = k[((f * C + c) * K + kh) * K + kw];
                    for (std::size_t oh = 0; oh < OH; ++oh) {
                        const double* xr = x + (c * H + oh + kh) * W + kw;
                        double* yr = y + (f * OH + oh) * OW;
                        for (std::size_t ow = 0; ow < OW; ++ow) yr[ow] += kv * xr[ow];
                    }
                }
            }
        }
    }
}

inline void conv2d_backward(const double* x, const double* k, const double* gy,
                            double* gx, double* gk, double* gb,
                            std::size_t C, std::size_t H, std::size_t W,
                            std::size_t F, std::size_t K) {
    const std::size_t OH = H - K + 1, OW = W - K + 1;
    if (gb) {
        for (std::size_t f = 0; f < F; ++f) {
            double acc = 0.0;
            const double* gyr = gy + f * OH * OW;
            for (std::size_t i = 0; i < OH * OW; ++i) acc += gyr[i];
            gb[f] += acc;
        }
    }
    for (std::size_t f = 0; f < F; ++f) {
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t kh = 0; kh < K; ++kh) {
                for (std::size_t kw = 0; kw < K; ++kw) {
                    const std::size_t ki = ((f * C + c) * K + kh) * K + kw;
                    const double kv = k[ki];
                    double kacc = 0.0;
                    for (std::size_t oh = 0; oh < OH; ++oh) {
                        const double* gyr = gy + (f * OH + oh) * OW;
                        const double* xr = x + (c * H + oh + kh) * W + kw;
                        if (gx) {
                            double* gxr = gx + (c * H + oh + kh) * W + kw;
                            for (std::size_t ow = 0; ow < OW; ++ow) gxr[ow] += kv * gyr[ow];
                        }
                        if (gk) {
                            for (std::size_t ow = 0; ow < OW; ++ow) kacc += gyr[ow] * xr[ow];
                        }
                    }
                    if (gk) gk[ki] += kacc;
                }
            }
        }
    }
}

// Adjoint of conv2d w.r.t. its input, run as a forward op:
// y[c,h+kh,w+kw] += x[f,h,w] * k[f,c,kh,kw], y initialized to b[c].
inline void conv2d_transposed_forward(const double* x, const double* k, const double* b, double* y,
                                      std::size_t F, std::size_t H, std::size_t W,
                                      std::size_t C, std::size_t K) {
    const std::size_t OH = H + K - 1, OW = W + K - 1;
    for (std::size_t c = 0; c < C; ++c) {
        std::fill(y + c * OH * OW, y + (c + 1) * OH * OW, b[c]);
    }
    for (std::size_t f = 0; f < F; ++f) {
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t kh = 0; kh < K; ++kh) {
                for (std::size_t kw = 0; kw < K; ++kw) {
                    const double kv = k[((f * C + c) * K + kh) * K + kw];
                    for (std::size_t h = 0; h < H; ++h) {
                        const double* xr = x + (f * H + h) * W;
                        double* yr = y + (c * OH + h + kh) * OW + kw;
                        for (std::size_t w = 0; w < W; ++w) yr[w] += kv * xr[w];
                    }
                }
            }
        }
    }
}

inline void conv2d_transposed_backward(const double* x, const double* k, const double* gy,
                                       double* gx, double* gk, double* gb,
                                       std::size_t F, std::size_t H, std::size_t W,
                                       std::size_t C, std::size_t K) {
    const std::size_t OH = H + K - 1, OW = W + K - 1;
    if (gb) {
        for (std::size_t c = 0; c < C; ++c) {
            double acc = 0.0;
            const double* gyr = gy + c * OH * OW;
            for (std::size_t i = 0; i < OH * OW; ++i) acc += gyr[i];
            gb[c] += acc;
        }
    }
    for (std::size_t f = 0; f < F; ++f) {
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t kh = 0; kh < K; ++kh) {
                for (std::size_t kw = 0; kw < K; ++kw) {
                    const std::size_t ki = ((f * C + c) * K + kh) * K + kw;
                    const double kv = k[ki];
                    double kacc = 0.0;
                    for (std::size_t h = 0; h < H; ++h) {
                        const double* gyr = gy + (c * OH + h + kh) * OW + kw;
                        const double* xr = x + (f * H + h) * W;
                        if (gx) {
                            double* gxr = gx + (f * H + h) * W;
                            for (std::size_t w = 0; w < W; ++w) gxr[w] += kv * gyr[w];
                        }
                        if (gk) {
                            for (std::size_t w = 0; w < W; ++w) kacc += xr[w] * gyr[w];
                        }
                    }
                    if (gk) gk[ki] += kacc;
                }
            }
        }
    }
}

}  // namespace kernels

struct Node {
    OpKind kind = OpKind::Leaf;
    std::vector<NodeId> inputs;
    Tensor out;
    bool needs_grad = false;
    double aux = 0.0;  // Scale factor / SoftAssign normalizer
};

/// Define-by-run compute graph. Nodes are appended in evaluation order, so
/// creation order is a topological order; backward() walks it once in
/// reverse. Rebuilt per forward pass.
class Graph {
public:
    NodeId leaf(Tensor t, bool needs_grad = false) {
        Node n;
        n.kind = OpKind::Leaf;
        n.out = std::move(t);
        n.needs_grad = needs_grad;
        return push(std::move(n));
    }

    NodeId conv2d(NodeId xi, NodeId ki, NodeId bi) {
        const Tensor& x = out(xi);
        const Tensor& k = out(ki);
        const Tensor& b = out(bi);
        if (x.shape.size() != 3 || k.shape.size() != 4 || b.shape.size() != 1) {
            throw ShapeError("conv2d: expected input (C,H,W), kernels (F,C,K,K), bias (F); got " +
                             shape_str(x.shape) + ", " + shape_str(k.shape) + ", " + shape_str(b.shape));
        }
        const std::size_t C = x.shape[0], H = x.shape[1], W = x.shape[2];
        const std::size_t F = k.shape[0], K = k.shape[2];
        if (k.shape[1] != C) {
            throw ShapeError("conv2d: input channels " + std::to_string(C) +
                             " != kernel channels " + std::to_string(k.shape[1]));
        }
        if (k.shape[3] != K) {
            throw ShapeError("conv2d: kernels must be square, got " + shape_str(k.shape));
        }
        if (b.shape[0] != F) {
            throw ShapeError("conv2d: bias length " + std::to_string(b.shape[0]) +
                             " != filter count " + std::to_string(F));
        }
        if (H < K || W < K) {
            throw ShapeError("conv2d: spatial dims " + std::to_string(H) + "x" + std::to_string(W) +
                             " smaller than kernel " + std::to_string(K));
        }
        Node n;
        n.kind = OpKind::Conv2d;
        n.inputs = {xi, ki, bi};
        n.out = Tensor({F, H - K + 1, W - K + 1});
        kernels::conv2d_forward(x.values.data(), k.values.data(), b.values.data(),
                                n.out.values.data(), C, H, W, F, K);
        return push(std::move(n));
    }

    NodeId conv2d_transposed(NodeId xi, NodeId ki, NodeId bi) {
        const Tensor& x = out(xi);
        const Tensor& k = out(ki);
        const Tensor& b = out(bi);
        if (x.shape.size() != 3 || k.shape.size() != 4 || b.shape.size() != 1) {
            throw ShapeError("conv2d_transposed: expected input (F,H,W), kernels (F,C,K,K), bias (C); got " +
                             shape_str(x.shape) + ", " + shape_str(k.shape) + ", " + shape_str(b.shape));
        }
        const std::size_t F = x.shape[0], H = x.shape[1], W = x.shape[2];
        const std::size_t C = k.shape[1], K = k.shape[2];
        if (k.shape[0] != F) {
            throw ShapeError("conv2d_transposed: input channels " + std::to_string(F) +
                             " != kernel filters " + std::to_string(k.shape[0]));
        }
        if (k.shape[3] != K) {
            throw ShapeError("conv2d_transposed: kernels must be square, got " + shape_str(k.shape));
        }
        if (b.shape[0] != C) {
            throw ShapeError("conv2d_transposed: bias length " + std::to_string(b.shape[0]) +
                             " != output channels " + std::to_string(C));
        }
        Node n;
        n.kind = OpKind::Conv2dTransposed;
        n.inputs = {xi, ki, bi};
        n.out = Tensor({C, H + K - 1, W + K - 1});
        kernels::conv2d_transposed_forward(x.values.data(), k.values.data(), b.values.data(),
                                           n.out.values.data(), F, H, W, C, K);
        return push(std::move(n));
    }

    NodeId dense(NodeId xi, NodeId wi, NodeId bi) {
        const Tensor& x = out(xi);
        const Tensor& w = out(wi);
        const Tensor& b = out(bi);
        if (x.shape.size() != 1 || w.shape.size() != 2 || b.shape.size() != 1) {
            throw ShapeError("dense: expected input (d), weights (out,d), bias (out); got " +
                             shape_str(x.shape) + ", " + shape_str(w.shape) + ", " + shape_str(b.shape));
        }
        const std::size_t d = x.shape[0], o = w.shape[0];
        if (w.shape[1] != d) {
            throw ShapeError("dense: input dim " + std::to_string(d) + " != weight columns " +
                             std::to_string(w.shape[1]));
        }
        if (b.shape[0] != o) {
            throw ShapeError("dense: bias length " + std::to_string(b.shape[0]) +
                             " != output dim " + std::to_string(o));
        }
        Node n;
        n.kind = OpKind::Dense;
        n.inputs = {xi, wi, bi};
        n.out = Tensor({o});
        for (std::size_t i = 0; i < o; ++i) {
            n.out.values[i] = b.values[i] + dot(std::span(w.values).subspan(i * d, d), x.values);
        }
        return push(std::move(n));
    }

    NodeId relu(NodeId xi) {
        Node n;
        n.kind = OpKind::Relu;
        n.inputs = {xi};
        n.out = Tensor(out(xi).shape);
        const auto& xv = out(xi).values;
        for (std::size_t i = 0; i < xv.size(); ++i) n.out.values[i] = xv[i] > 0.0 ? xv[i] : 0.0;
        return push(std::move(n));
    }

    NodeId sigmoid(NodeId xi) {
        Node n;
        n.kind = OpKind::Sigmoid;
        n.inputs = {xi};
        n.out = Tensor(out(xi).shape);
        const auto& xv = out(xi).values;
        for (std::size_t i = 0; i < xv.size(); ++i) n.out.values[i] = 1.0 / (1.0 + std::exp(-xv[i]));
        return push(std::move(n));
    }

    NodeId activation(NodeId xi, Activation kind) {
        switch (kind) {
            case Activation::relu: return relu(xi);
            case Activation::sigmoid: return sigmoid(xi);
            case Activation::identity: return xi;
        }
        throw std::invalid_argument("activation: unknown kind");
    }

    NodeId reshape(NodeId xi, Shape s) {
        if (shape_numel(s) != out(xi).numel()) {
            throw ShapeError("reshape: cannot view " + shape_str(out(xi).shape) + " as " + shape_str(s));
        }
        Node n;
        n.kind = OpKind::Reshape;
        n.inputs = {xi};
        n.out = Tensor(std::move(s), out(xi).values);
        return push(std::move(n));
    }

    NodeId add(NodeId ai, NodeId bi) {
        const Tensor& a = out(ai);
        const Tensor& b = out(bi);
        if (a.shape != b.shape) {
            throw ShapeError("add: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
        }
        Node n;
        n.kind = OpKind::Add;
        n.inputs = {ai, bi};
        n.out = Tensor(a.shape);
        for (std::size_t i = 0; i < a.numel(); ++i) n.out.values[i] = a.values[i] + b.values[i];
        return push(std::move(n));
    }

    NodeId scale(NodeId xi, double c) {
        Node n;
        n.kind = OpKind::Scale;
        n.inputs = {xi};
        n.aux = c;
        n.out = Tensor(out(xi).shape);
        const auto& xv = out(xi).values;
        for (std::size_t i = 0; i < xv.size(); ++i) n.out.values[i] = c * xv[i];
        return push(std::move(n));
    }

    NodeId sum(NodeId xi) {
        Node n;
        n.kind = OpKind::Sum;
        n.inputs = {xi};
        double acc = 0.0;
        for (double v : out(xi).values) acc += v;
        n.out = Tensor::scalar(acc);
        return push(std::move(n));
    }

    NodeId sum_squares(NodeId xi) {
        Node n;
        n.kind = OpKind::SumSquares;
        n.inputs = {xi};
        double acc = 0.0;
        for (double v : out(xi).values) acc += v * v;
        n.out = Tensor::scalar(acc);
        return push(std::move(n));
    }

    NodeId sqrt_scalar(NodeId xi) {
        if (out(xi).numel() != 1) {
            throw ShapeError("sqrt: expected scalar, got " + shape_str(out(xi).shape));
        }
        Node n;
        n.kind = OpKind::Sqrt;
        n.inputs = {xi};
        n.out = Tensor::scalar(std::sqrt(out(xi).values[0]));
        return push(std::move(n));
    }

    // mean over all elements of (a-b)^2
    NodeId mse(NodeId ai, NodeId bi) {
        const Tensor& a = out(ai);
        const Tensor& b = out(bi);
        if (a.shape != b.shape) {
            throw ShapeError("mse: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
        }
        Node n;
        n.kind = OpKind::MseLoss;
        n.inputs = {ai, bi};
        double acc = 0.0;
        for (std::size_t i = 0; i < a.numel(); ++i) {
            const double d = a.values[i] - b.values[i];
            acc += d * d;
        }
        n.out = Tensor::scalar(acc / static_cast<double>(a.numel()));
        return push(std::move(n));
    }

    // Student-t soft assignment of one embedding against all lattice units:
    // q_j = (1+||z-w_j||^2)^-1 / sum_j' (1+||z-w_j'||^2)^-1
    NodeId soft_assignment(NodeId zi, NodeId wi) {
        const Tensor& z = out(zi);
        const Tensor& w = out(wi);
        if (z.shape.size() != 1 || w.shape.size() != 2 || w.shape[1] != z.shape[0]) {
            throw ShapeError("soft_assignment: expected z (m), weights (l,m); got " +
                             shape_str(z.shape) + ", " + shape_str(w.shape));
        }
        const std::size_t l = w.shape[0], m = z.shape[0];
        Node n;
        n.kind = OpKind::SoftAssign;
        n.inputs = {zi, wi};
        n.out = Tensor({l});
        double S = 0.0;
        for (std::size_t j = 0; j < l; ++j) {
            const double d2 = squared_distance(z.values, std::span(w.values).subspan(j * m, m));
            const double a = 1.0 / (1.0 + d2);
            n.out.values[j] = a;
            S += a;
        }
        for (std::size_t j = 0; j < l; ++j) n.out.values[j] /= S;
        n.aux = S;
        return push(std::move(n));
    }

    // sum_j p_j * log(p_j / q_j) with the 0*log0 := 0 convention; p is a
    // constant target, so no gradient flows into it.
    NodeId kl_row(NodeId pi, NodeId qi) {
        const Tensor& p = out(pi);
        const Tensor& q = out(qi);
        if (p.shape != q.shape || p.shape.size() != 1) {
            throw ShapeError("kl_row: expected matching vectors, got " + shape_str(p.shape) +
                             " vs " + shape_str(q.shape));
        }
        if (node(pi).needs_grad) {
            throw std::invalid_argument("kl_row: p is a constant target and cannot require gradients");
        }
        Node n;
        n.kind = OpKind::KlRow;
        n.inputs = {pi, qi};
        double acc = 0.0;
        for (std::size_t j = 0; j < p.numel(); ++j) {
            if (p.values[j] <= 0.0) continue;
            if (q.values[j] <= 0.0) {
                throw std::domain_error("kl_row: q is zero at index " + std::to_string(j) +
                                        " where p > 0");
            }
            acc += p.values[j] * std::log(p.values[j] / q.values[j]);
        }
        n.out = Tensor::scalar(acc);
        return push(std::move(n));
    }

    const Tensor& value(NodeId id) const { return nodes_[id].out; }
    const std::vector<double>& grad(NodeId id) const { return nodes_[id].out.grad; }
    std::size_t size() const { return nodes_.size(); }

    /// Reverse-mode sweep from a scalar loss node. Populates the grad buffer
    /// of every gradient-requiring node at or before `loss`; gradients
    /// accumulate by summation where a tensor feeds multiple consumers.
    void backward(NodeId loss) {
        if (out(loss).numel() != 1) {
            throw std::invalid_argument("backward: loss node must be scalar, got shape " +
                                        shape_str(out(loss).shape));
        }
        for (Node& n : nodes_) {
            if (n.needs_grad) n.out.grad.assign(n.out.numel(), 0.0);
        }
        if (!nodes_[loss].needs_grad) return;  // nothing upstream requires gradients
        nodes_[loss].out.grad[0] = 1.0;
        for (std::size_t i = loss + 1; i-- > 0;) {
            if (nodes_[i].needs_grad && nodes_[i].kind != OpKind::Leaf) backward_node(nodes_[i]);
        }
    }

private:
    std::vector<Node> nodes_;

    const Tensor& out(NodeId id) const { return nodes_[id].out; }
    const Node& node(NodeId id) const { return nodes_[id]; }

    NodeId push(Node n) {
        if (n.kind != OpKind::Leaf) {
            for (NodeId in : n.inputs) n.needs_grad = n.needs_grad || nodes_[in].needs_grad;
        }
        nodes_.push_back(std::move(n));
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    double* grad_or_null(NodeId id) {
        return nodes_[id].needs_grad ? nodes_[id].out.grad.data() : nullptr;
    }

    void backward_node(Node& n) {
        const std::vector<double>& gy = n.out.grad;
        switch (n.kind) {
            case OpKind::Leaf:
                break;
            case OpKind::Conv2d: {
                const Tensor& x = out(n.inputs[0]);
                const Tensor& k = out(n.inputs[1]);
                kernels::conv2d_backward(x.values.data(), k.values.data(), gy.data(),
                                         grad_or_null(n.inputs[0]), grad_or_null(n.inputs[1]),
                                         grad_or_null(n.inputs[2]),
                                         x.shape[0], x.shape[1], x.shape[2],
                                         k.shape[0], k.shape[2]);
                break;
            }
            case OpKind::Conv2dTransposed: {
                const Tensor& x = out(n.inputs[0]);
                const Tensor& k = out(n.inputs[1]);
                kernels::conv2d_transposed_backward(x.values.data(), k.values.data(), gy.data(),
                                                    grad_or_null(n.inputs[0]), grad_or_null(n.inputs[1]),
                                                    grad_or_null(n.inputs[2]),
                                                    x.shape[0], x.shape[1], x.shape[2],
                                                    k.shape[1], k.shape[2]);
                break;
            }
            case OpKind::Dense: {
                const Tensor& x = out(n.inputs[0]);
                const Tensor& w = out(n.inputs[1]);
                const std::size_t d = x.shape[0], o = w.shape[0];
                double* gx = grad_or_null(n.inputs[0]);
                double* gw = grad_or_null(n.inputs[1]);
                double* gb = grad_or_null(n.inputs[2]);
                for (std::size_t i = 0; i < o; ++i) {
                    const double g = gy[i];
                    if (g == 0.0) continue;
                    const double* wr = w.values.data() + i * d;
                    if (gx) {
                        for (std::size_t j = 0; j < d; ++j) gx[j] += g * wr[j];
                    }
                    if (gw) {
                        double* gwr = gw + i * d;
                        for (std::size_t j = 0; j < d; ++j) gwr[j] += g * x.values[j];
                    }
                    if (gb) gb[i] += g;
                }
                break;
            }
            case OpKind::Relu: {
                double* gx = grad_or_null(n.inputs[0]);
                if (!gx) break;
                const auto& xv = out(n.inputs[0]).values;
                for (std::size_t i = 0; i < xv.size(); ++i) {
                    if (xv[i] > 0.0) gx[i] += gy[i];
                }
                break;
            }
            case OpKind::Sigmoid: {
                double* gx = grad_or_null(n.inputs[0]);
                if (!gx) break;
                for (std::size_t i = 0; i < n.out.numel(); ++i) {
                    const double y = n.out.values[i];
                    gx[i] += gy[i] * y * (1.0 - y);
                }
                break;
            }
            case OpKind::Reshape: {
                double* gx = grad_or_null(n.inputs[0]);
                if (!gx) break;
                for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
                break;
            }
            case OpKind::Add: {
                for (int s = 0; s < 2; ++s) {
                    double* g = grad_or_null(n.inputs[s]);
                    if (!g) continue;
                    for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
                }
                break;
            }
            case OpKind::Scale: {
                double* gx = grad_or_null(n.inputs[0]);
                if (!gx) break;
                for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += n.aux * gy[i];
                break;
            }
            case OpKind::Sum: {
                double* gx = grad_or_null(n.inputs[0]);
                if (!gx) break;
                const double g = gy[0];
                for (std::size_t i = 0; i < out(n.inputs[0]).numel(); ++i) gx[i] += g;
                break;
            }
            case OpKind::SumSquares: {
                double* gx = grad_or_null(n.inputs[0]);
                if (!gx) break;
                const double g = gy[0];
                const auto& xv = out(n.inputs[0]).values;
                for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += g * 2.0 * xv[i];
                break;
            }
            case OpKind::Sqrt: {
                double* gx = grad_or_null(n.inputs[0]);
                if (!gx) break;
                gx[0] += gy[0] * 0.5 / n.out.values[0];
                break;
            }
            case OpKind::MseLoss: {
                const Tensor& a = out(n.inputs[0]);
                const Tensor& b = out(n.inputs[1]);
                double* ga = grad_or_null(n.inputs[0]);
                double* gb = grad_or_null(n.inputs[1]);
                const double g = gy[0] * 2.0 / static_cast<double>(a.numel());
                for (std::size_t i = 0; i < a.numel(); ++i) {
                    const double d = g * (a.values[i] - b.values[i]);
                    if (ga) ga[i] += d;
                    if (gb) gb[i] -= d;
                }
                break;
            }
            case OpKind::SoftAssign: {
                const Tensor& z = out(n.inputs[0]);
                const Tensor& w = out(n.inputs[1]);
                double* gz = grad_or_null(n.inputs[0]);
                double* gw = grad_or_null(n.inputs[1]);
                if (!gz && !gw) break;
                const std::size_t l = w.shape[0], m = z.shape[0];
                const double S = n.aux;
                double t = 0.0;
                for (std::size_t j = 0; j < l; ++j) t += gy[j] * n.out.values[j];
                for (std::size_t j = 0; j < l; ++j) {
                    const double a = n.out.values[j] * S;  // (1+||z-w_j||^2)^-1
                    const double da = (gy[j] - t) / S;     // dL/da_j
                    const double coef = da * 2.0 * a * a;
                    const double* wr = w.values.data() + j * m;
                    for (std::size_t i = 0; i < m; ++i) {
                        const double diff = z.values[i] - wr[i];
                        if (gz) gz[i] -= coef * diff;
                        if (gw) gw[j * m + i] += coef * diff;
                    }
                }
                break;
            }
            case OpKind::KlRow: {
                const Tensor& p = out(n.inputs[0]);
                const Tensor& q = out(n.inputs[1]);
                double* gq = grad_or_null(n.inputs[1]);
                if (!gq) break;
                const double g = gy[0];
                for (std::size_t j = 0; j < p.numel(); ++j) {
                    if (p.values[j] > 0.0) gq[j] -= g * p.values[j] / q.values[j];
                }
                break;
            }
        }
    }
};

/// Convenience single-op evaluation (graph-free call sites and tests).
namespace ops {

inline Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& b) {
    Graph g;
    return g.value(g.conv2d(g.leaf(x), g.leaf(k), g.leaf(b)));
}

inline Tensor conv2d_transposed(const Tensor& x, const Tensor& k, const Tensor& b) {
    Graph g;
    return g.value(g.conv2d_transposed(g.leaf(x), g.leaf(k), g.leaf(b)));
}

inline Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
    Graph g;
    return g.value(g.dense(g.leaf(x), g.leaf(w), g.leaf(b)));
}

inline Tensor activation(const Tensor& x, Activation kind) {
    Graph g;
    return g.value(g.activation(g.leaf(x), kind));
}

}  // namespace ops

}  // namespace dnm
