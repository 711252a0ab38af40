#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "cae.hpp"
#include "som.hpp"

namespace dnm {

/// Lattice plus the presentation counter; the decay schedules keep running
/// across the pretrain-som -> train stage boundary.
struct SomState {
    SomLattice lattice;
    std::uint32_t step_n = 0;
};

struct ModelFile {
    CaeModel model;
    std::optional<SomState> som;
};

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
    const char b[4] = {char(v), char(v >> 8), char(v >> 16), char(v >> 24)};
    out.write(b, 4);
}

inline void put_f64(std::ostream& out, double v) {
    const std::uint64_t u = std::bit_cast<std::uint64_t>(v);
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = char(u >> (8 * i));
    out.write(b, 8);
}

class Reader {
public:
    Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw std::runtime_error("cannot open model file: " + path);
    }

    std::uint32_t u32() {
        unsigned char b[4];
        read(b, 4);
        return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
               (std::uint32_t(b[3]) << 24);
    }

    double f64() {
        unsigned char b[8];
        read(b, 8);
        std::uint64_t u = 0;
        for (int i = 0; i < 8; ++i) u |= std::uint64_t(b[i]) << (8 * i);
        return std::bit_cast<double>(u);
    }

    void magic(const char* want) {
        char b[4];
        read(b, 4);
        if (std::string(b, 4) != want) {
            throw std::runtime_error("bad model file magic in " + path_ + " (want " + want + ")");
        }
    }

    void values(std::vector<double>& v) {
        for (double& x : v) x = f64();
    }

private:
    std::ifstream in_;
    std::string path_;

    void read(void* dst, std::size_t n) {
        if (!in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n))) {
            throw std::runtime_error("truncated model file: " + path_);
        }
    }
};

}  // namespace detail

/// DNM1 layout: magic, architecture (u32 counts), tensor shapes in canonical
/// parameter order, lattice header when present, then all little-endian f64
/// data. Round-trips bit-exactly.
inline void save_model(const std::string& path, const CaeModel& model,
                       const SomState* som = nullptr) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open model file for writing: " + path);
    out.write("DNM1", 4);
    detail::put_u32(out, static_cast<std::uint32_t>(model.arch.in_c));
    detail::put_u32(out, static_cast<std::uint32_t>(model.arch.in_h));
    detail::put_u32(out, static_cast<std::uint32_t>(model.arch.in_w));
    detail::put_u32(out, static_cast<std::uint32_t>(model.arch.conv.size()));
    for (const ConvSpec& c : model.arch.conv) {
        detail::put_u32(out, static_cast<std::uint32_t>(c.filters));
        detail::put_u32(out, static_cast<std::uint32_t>(c.ksize));
    }
    detail::put_u32(out, static_cast<std::uint32_t>(model.arch.embed_dim));

    const auto params = model.params();
    detail::put_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const Tensor* t : params) {
        detail::put_u32(out, static_cast<std::uint32_t>(t->shape.size()));
        for (std::size_t d : t->shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
    }

    detail::put_u32(out, som ? 1u : 0u);
    if (som) {
        detail::put_u32(out, static_cast<std::uint32_t>(som->lattice.rows));
        detail::put_u32(out, static_cast<std::uint32_t>(som->lattice.cols));
        detail::put_u32(out, static_cast<std::uint32_t>(som->lattice.dim));
        detail::put_u32(out, som->step_n);
    }

    for (const Tensor* t : params) {
        for (double v : t->values) detail::put_f64(out, v);
    }
    if (som) {
        for (double v : som->lattice.weights) detail::put_f64(out, v);
    }
    if (!out.flush()) throw std::runtime_error("failed writing model file: " + path);
}

inline ModelFile load_model(const std::string& path) {
    detail::Reader r(path);
    r.magic("DNM1");

    CaeArch arch;
    arch.in_c = r.u32();
    arch.in_h = r.u32();
    arch.in_w = r.u32();
    const std::uint32_t n_conv = r.u32();
    arch.conv.clear();
    for (std::uint32_t i = 0; i < n_conv; ++i) {
        ConvSpec c;
        c.filters = r.u32();
        c.ksize = r.u32();
        arch.conv.push_back(c);
    }
    arch.embed_dim = r.u32();

    ModelFile mf;
    mf.model = CaeModel::zeros(arch);
    const auto params = mf.model.params();
    const std::uint32_t n_tensors = r.u32();
    if (n_tensors != params.size()) {
        throw std::runtime_error("model file " + path + " declares " + std::to_string(n_tensors) +
                                 " tensors, architecture implies " + std::to_string(params.size()));
    }
    for (Tensor* t : params) {
        const std::uint32_t ndim = r.u32();
        Shape s(ndim);
        for (std::uint32_t d = 0; d < ndim; ++d) s[d] = r.u32();
        if (s != t->shape) {
            throw std::runtime_error("model file " + path + " tensor shape " + shape_str(s) +
                                     " does not match architecture shape " + shape_str(t->shape));
        }
    }

    const std::uint32_t has_lattice = r.u32();
    if (has_lattice) {
        SomState som;
        const std::uint32_t rows = r.u32();
        const std::uint32_t cols = r.u32();
        const std::uint32_t dim = r.u32();
        som.step_n = r.u32();
        som.lattice = SomLattice(rows, cols, dim);
        mf.som = std::move(som);
    }

    for (Tensor* t : params) r.values(t->values);
    if (mf.som) r.values(mf.som->lattice.weights);
    return mf;
}

}  // namespace dnm
