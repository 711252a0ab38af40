#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace dnm {

struct DataError : std::runtime_error {
    enum class Kind {
        io,
        bad_magic,
        truncated,
        count_mismatch,
        malformed_header,
        unexpected_filename,
        bad_maxval,
        inconsistent_dims,
        empty_dataset,
    };
    Kind kind;
    DataError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

/// Labeled image collection. All images share (C,H,W) and values sit in
/// [0,1].
struct Dataset {
    std::string name;
    std::size_t channels = 0, height = 0, width = 0;
    std::vector<Tensor> images;
    std::vector<int> labels;

    std::size_t size() const { return images.size(); }
};

namespace detail {

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(DataError::Kind::io, "cannot open file: " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be_u32(const std::vector<std::uint8_t>& b, std::size_t off,
                                 const std::string& path) {
    if (off + 4 > b.size()) {
        throw DataError(DataError::Kind::truncated, "truncated IDX file: " + path);
    }
    return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
           (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// IDX image/label pair (the MNIST distribution format). Pixel bytes are
/// scaled by 1/255.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    const auto ib = detail::read_file_bytes(images_path);
    const auto lb = detail::read_file_bytes(labels_path);

    const std::uint32_t im = detail::read_be_u32(ib, 0, images_path);
    if (im != kIdxImagesMagic) {
        throw DataError(DataError::Kind::bad_magic,
                        "bad IDX image magic in " + images_path + ": got " + std::to_string(im));
    }
    const std::uint32_t lm = detail::read_be_u32(lb, 0, labels_path);
    if (lm != kIdxLabelsMagic) {
        throw DataError(DataError::Kind::bad_magic,
                        "bad IDX label magic in " + labels_path + ": got " + std::to_string(lm));
    }
    const std::uint32_t count = detail::read_be_u32(ib, 4, images_path);
    const std::uint32_t h = detail::read_be_u32(ib, 8, images_path);
    const std::uint32_t w = detail::read_be_u32(ib, 12, images_path);
    const std::uint32_t lcount = detail::read_be_u32(lb, 4, labels_path);
    if (count != lcount) {
        throw DataError(DataError::Kind::count_mismatch,
                        "IDX count mismatch: " + std::to_string(count) + " images vs " +
                            std::to_string(lcount) + " labels");
    }
    const std::size_t pixels = std::size_t(h) * w;
    if (ib.size() < 16 + std::size_t(count) * pixels) {
        throw DataError(DataError::Kind::truncated, "truncated IDX image data: " + images_path);
    }
    if (lb.size() < 8 + count) {
        throw DataError(DataError::Kind::truncated, "truncated IDX label data: " + labels_path);
    }

    Dataset ds;
    ds.name = std::filesystem::path(images_path).stem().string();
    ds.channels = 1;
    ds.height = h;
    ds.width = w;
    ds.images.reserve(count);
    ds.labels.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        Tensor img({1, h, w});
        const std::uint8_t* src = ib.data() + 16 + std::size_t(i) * pixels;
        for (std::size_t p = 0; p < pixels; ++p) img.values[p] = src[p] / 255.0;
        ds.images.push_back(std::move(img));
        ds.labels.push_back(lb[8 + i]);
    }
    return ds;
}

/// Writes the quantized (round(v*255)) image tensor stream as an IDX file.
inline void write_idx_images(const std::string& path, const Dataset& ds) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(DataError::Kind::io, "cannot open file for writing: " + path);
    auto be32 = [&](std::uint32_t v) {
        const char b[4] = {char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
        out.write(b, 4);
    };
    be32(kIdxImagesMagic);
    be32(static_cast<std::uint32_t>(ds.size()));
    be32(static_cast<std::uint32_t>(ds.height));
    be32(static_cast<std::uint32_t>(ds.width));
    for (const Tensor& img : ds.images) {
        for (double v : img.values) {
            const double c = std::min(1.0, std::max(0.0, v));
            out.put(static_cast<char>(static_cast<int>(std::lround(c * 255.0))));
        }
    }
    if (!out.flush()) throw DataError(DataError::Kind::io, "failed writing " + path);
}

inline void write_idx_labels(const std::string& path, const Dataset& ds) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(DataError::Kind::io, "cannot open file for writing: " + path);
    auto be32 = [&](std::uint32_t v) {
        const char b[4] = {char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
        out.write(b, 4);
    };
    be32(kIdxLabelsMagic);
    be32(static_cast<std::uint32_t>(ds.size()));
    for (int l : ds.labels) out.put(static_cast<char>(l));
    if (!out.flush()) throw DataError(DataError::Kind::io, "failed writing " + path);
}

/// Single P5/P2 graymap, maxval 255, as a (1,H,W) tensor scaled to [0,1].
inline Tensor read_pgm(const std::string& path) {
    const auto bytes = detail::read_file_bytes(path);
    std::size_t pos = 0;
    auto skip_ws = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto next_token = [&]() -> std::string {
        skip_ws();
        std::string tok;
        while (pos < bytes.size() && !std::isspace(bytes[pos]) && bytes[pos] != '#') {
            tok += static_cast<char>(bytes[pos++]);
        }
        if (tok.empty()) {
            throw DataError(DataError::Kind::malformed_header, "malformed PGM header: " + path);
        }
        return tok;
    };
    auto next_uint = [&]() -> std::size_t {
        const std::string tok = next_token();
        for (char c : tok) {
            if (!std::isdigit(static_cast<unsigned char>(c))) {
                throw DataError(DataError::Kind::malformed_header,
                                "malformed PGM header token '" + tok + "' in " + path);
            }
        }
        return std::stoull(tok);
    };

    const std::string magic = next_token();
    if (magic != "P5" && magic != "P2") {
        throw DataError(DataError::Kind::malformed_header,
                        "unsupported PNM magic '" + magic + "' in " + path + " (want P5 or P2)");
    }
    const std::size_t w = next_uint();
    const std::size_t h = next_uint();
    const std::size_t maxval = next_uint();
    if (maxval != 255) {
        throw DataError(DataError::Kind::bad_maxval,
                        "PGM maxval " + std::to_string(maxval) + " != 255 in " + path);
    }
    if (w == 0 || h == 0) {
        throw DataError(DataError::Kind::malformed_header, "zero PGM dimensions in " + path);
    }

    Tensor img({1, h, w});
    if (magic == "P5") {
        ++pos;  // single whitespace after maxval
        if (pos + h * w > bytes.size()) {
            throw DataError(DataError::Kind::truncated, "truncated PGM data: " + path);
        }
        for (std::size_t i = 0; i < h * w; ++i) img.values[i] = bytes[pos + i] / 255.0;
    } else {
        for (std::size_t i = 0; i < h * w; ++i) {
            const std::size_t v = next_uint();
            if (v > 255) {
                throw DataError(DataError::Kind::malformed_header,
                                "P2 sample " + std::to_string(v) + " out of range in " + path);
            }
            img.values[i] = v / 255.0;
        }
    }
    return img;
}

namespace detail {

// obj{K}__{I}.pgm -> (K, I); anything else is an error
inline std::pair<long, long> parse_coil_name(const std::string& stem, const std::string& path) {
    const auto fail = [&] {
        throw DataError(DataError::Kind::unexpected_filename,
                        "unexpected PGM filename (want obj{K}__{I}.pgm): " + path);
    };
    if (stem.rfind("obj", 0) != 0) fail();
    const std::size_t sep = stem.find("__", 3);
    if (sep == std::string::npos || sep == 3 || sep + 2 >= stem.size()) fail();
    const std::string ks = stem.substr(3, sep - 3);
    const std::string is = stem.substr(sep + 2);
    for (char c : ks) {
        if (!std::isdigit(static_cast<unsigned char>(c))) fail();
    }
    for (char c : is) {
        if (!std::isdigit(static_cast<unsigned char>(c))) fail();
    }
    const long k = std::stol(ks);
    if (k < 1) fail();
    return {k, std::stol(is)};
}

}  // namespace detail

/// Directory of obj{K}__{I}.pgm files (the COIL-20 layout). Label = K-1;
/// deterministic (K,I) ordering. Non-.pgm entries are ignored.
inline Dataset load_pgm_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) {
        throw DataError(DataError::Kind::io, "not a directory: " + dir);
    }
    std::vector<std::tuple<long, long, std::string>> entries;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file() || e.path().extension() != ".pgm") continue;
        const auto [k, i] = detail::parse_coil_name(e.path().stem().string(), e.path().string());
        entries.emplace_back(k, i, e.path().string());
    }
    if (entries.empty()) {
        throw DataError(DataError::Kind::empty_dataset, "no .pgm files in " + dir);
    }
    std::sort(entries.begin(), entries.end());

    Dataset ds;
    ds.name = fs::path(dir).filename().string();
    for (const auto& [k, i, path] : entries) {
        Tensor img = read_pgm(path);
        if (ds.images.empty()) {
            ds.channels = 1;
            ds.height = img.shape[1];
            ds.width = img.shape[2];
        } else if (img.shape[1] != ds.height || img.shape[2] != ds.width) {
            throw DataError(DataError::Kind::inconsistent_dims,
                            "PGM dims " + shape_str(img.shape) + " differ from first image in " +
                                path);
        }
        ds.images.push_back(std::move(img));
        ds.labels.push_back(static_cast<int>(k - 1));
    }
    return ds;
}

/// Corner-aligned bilinear interpolation of one (C,H,W) image.
inline Tensor resize_image_bilinear(const Tensor& img, std::size_t oh, std::size_t ow) {
    const std::size_t C = img.shape[0], H = img.shape[1], W = img.shape[2];
    Tensor out({C, oh, ow});
    const double sy = oh > 1 ? static_cast<double>(H - 1) / static_cast<double>(oh - 1) : 0.0;
    const double sx = ow > 1 ? static_cast<double>(W - 1) / static_cast<double>(ow - 1) : 0.0;
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t y = 0; y < oh; ++y) {
            const double fy = y * sy;
            const std::size_t y0 = static_cast<std::size_t>(fy);
            const std::size_t y1 = std::min(y0 + 1, H - 1);
            const double ty = fy - static_cast<double>(y0);
            for (std::size_t x = 0; x < ow; ++x) {
                const double fx = x * sx;
                const std::size_t x0 = static_cast<std::size_t>(fx);
                const std::size_t x1 = std::min(x0 + 1, W - 1);
                const double tx = fx - static_cast<double>(x0);
                const double v00 = img.values[(c * H + y0) * W + x0];
                const double v01 = img.values[(c * H + y0) * W + x1];
                const double v10 = img.values[(c * H + y1) * W + x0];
                const double v11 = img.values[(c * H + y1) * W + x1];
                out.values[(c * oh + y) * ow + x] =
                    (1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11);
            }
        }
    }
    return out;
}

inline Dataset resize_bilinear(const Dataset& ds, std::size_t oh, std::size_t ow) {
    if (oh == 0 || ow == 0) {
        throw std::invalid_argument("resize_bilinear: target dims must be positive");
    }
    Dataset out;
    out.name = ds.name;
    out.channels = ds.channels;
    out.height = oh;
    out.width = ow;
    out.labels = ds.labels;
    out.images.reserve(ds.size());
    for (const Tensor& img : ds.images) out.images.push_back(resize_image_bilinear(img, oh, ow));
    return out;
}

/// Seeded uniform shuffle followed by a disjoint, exhaustive train/test cut.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, std::size_t train_count,
                                         std::uint64_t seed) {
    if (train_count > ds.size()) {
        throw std::invalid_argument("split: train_count " + std::to_string(train_count) +
                                    " exceeds dataset size " + std::to_string(ds.size()));
    }
    std::vector<std::size_t> order(ds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    shuffle(order, rng);

    Dataset train, test;
    train.name = ds.name + "/train";
    test.name = ds.name + "/test";
    for (Dataset* d : {&train, &test}) {
        d->channels = ds.channels;
        d->height = ds.height;
        d->width = ds.width;
    }
    for (std::size_t i = 0; i < order.size(); ++i) {
        Dataset& dst = i < train_count ? train : test;
        dst.images.push_back(ds.images[order[i]]);
        dst.labels.push_back(ds.labels[order[i]]);
    }
    return {std::move(train), std::move(test)};
}

/// Seeded Gaussian clusters as (1,1,dim) tensors, clamped to [0,1]; test
/// fixture for SOM and DNM properties.
inline Dataset synthetic_blobs(std::size_t k, std::size_t per_cluster, std::size_t dim,
                               double spread, std::uint64_t seed) {
    if (k == 0 || per_cluster == 0 || dim == 0) {
        throw std::invalid_argument("synthetic_blobs: k, per_cluster and dim must be positive");
    }
    if (spread < 0.0) throw std::invalid_argument("synthetic_blobs: spread must be >= 0");
    Rng rng(seed);
    std::vector<std::vector<double>> centers(k, std::vector<double>(dim));
    for (auto& c : centers) {
        for (double& v : c) v = rng.uniform(0.25, 0.75);
    }
    Dataset ds;
    ds.name = "blobs";
    ds.channels = 1;
    ds.height = 1;
    ds.width = dim;
    for (std::size_t ci = 0; ci < k; ++ci) {
        for (std::size_t s = 0; s < per_cluster; ++s) {
            Tensor img({1, 1, dim});
            for (std::size_t d = 0; d < dim; ++d) {
                const double v = centers[ci][d] + spread * rng.normal();
                img.values[d] = std::min(1.0, std::max(0.0, v));
            }
            ds.images.push_back(std::move(img));
            ds.labels.push_back(static_cast<int>(ci));
        }
    }
    return ds;
}

}  // namespace dnm
