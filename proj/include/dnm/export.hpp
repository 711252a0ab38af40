#pragma once

#include <array>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "cae.hpp"
#include "data.hpp"
#include "som.hpp"

namespace dnm {

/// One projected sample: its BMU cell plus a deterministic display offset so
/// co-located samples stay distinguishable in the scatter.
struct ProjectionRecord {
    std::size_t sample_index = 0;
    int label = 0;
    std::size_t bmu_row = 0;
    std::size_t bmu_col = 0;
    double dx = 0.0;  // in [-0.4, 0.4]
    double dy = 0.0;
};

namespace detail {

// hash-based per-sample jitter; stable across runs by construction
inline std::pair<double, double> jitter_for(std::size_t sample_index) {
    const std::uint64_t h1 = splitmix64(static_cast<std::uint64_t>(sample_index) + 0x517cc1b727220a95ull);
    const std::uint64_t h2 = splitmix64(h1);
    const double dx = static_cast<double>(h1 >> 11) * 0x1.0p-53 * 0.8 - 0.4;
    const double dy = static_cast<double>(h2 >> 11) * 0x1.0p-53 * 0.8 - 0.4;
    return {dx, dy};
}

inline std::string fmt_double(double v) { return format_double(v); }

}  // namespace detail

/// BMU cell of every sample's embedding.
inline std::vector<ProjectionRecord> project(const Dataset& ds, const CaeModel& model,
                                             const SomLattice& lat) {
    std::vector<ProjectionRecord> records(ds.size());
    parallel_for(ds.size(), [&](std::size_t i) {
        const Tensor z = encode(model, ds.images[i]);
        const std::size_t u = best_matching_unit(z.values, lat);
        const auto [row, col] = lat.position(u);
        ProjectionRecord& r = records[i];
        r.sample_index = i;
        r.label = ds.labels[i];
        r.bmu_row = row;
        r.bmu_col = col;
        std::tie(r.dx, r.dy) = detail::jitter_for(i);
    });
    return records;
}

/// decode(w_j) for every neuron, tiled in lattice order with a 1-pixel black
/// separator grid. Output is rows*(tileH+1)+1 by cols*(tileW+1)+1.
inline Tensor backproject(const CaeModel& model, const SomLattice& lat) {
    if (model.arch.in_c != 1) {
        throw ShapeError("backproject: montage supports single-channel decoders, got C=" +
                         std::to_string(model.arch.in_c));
    }
    const std::size_t th = model.arch.in_h, tw = model.arch.in_w;
    const std::size_t mh = lat.rows * (th + 1) + 1;
    const std::size_t mw = lat.cols * (tw + 1) + 1;
    Tensor montage({mh, mw});  // zero-filled: separator grid stays black
    parallel_for(lat.size(), [&](std::size_t j) {
        const Tensor tile = decode(model, Tensor({lat.dim}, {lat.unit(j).begin(), lat.unit(j).end()}));
        const auto [r, c] = lat.position(j);
        const std::size_t oy = 1 + r * (th + 1);
        const std::size_t ox = 1 + c * (tw + 1);
        for (std::size_t y = 0; y < th; ++y) {
            for (std::size_t x = 0; x < tw; ++x) {
                montage.values[(oy + y) * mw + ox + x] = tile.values[y * tw + x];
            }
        }
    });
    return montage;
}

/// CSV header `index,label,row,col,dx,dy`, one row per record.
inline void write_projection_csv(const std::vector<ProjectionRecord>& records,
                                 const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open projection CSV for writing: " + path);
    out << "index,label,row,col,dx,dy\n";
    for (const ProjectionRecord& r : records) {
        out << r.sample_index << ',' << r.label << ',' << r.bmu_row << ',' << r.bmu_col << ','
            << detail::fmt_double(r.dx) << ',' << detail::fmt_double(r.dy) << '\n';
    }
    if (!out.flush()) throw std::runtime_error("failed writing projection CSV: " + path);
}

/// Fixed categorical palette; color assignment is stable per label so
/// different runs (and methods) stay comparable.
inline const std::array<const char*, 20>& label_palette() {
    static const std::array<const char*, 20> colors = {
        "#1f77b4", "#aec7e8", "#ff7f0e", "#ffbb78", "#2ca02c", "#98df8a", "#d62728",
        "#ff9896", "#9467bd", "#c5b0d5", "#8c564b", "#c49c94", "#e377c2", "#f7b6d2",
        "#7f7f7f", "#c7c7c7", "#bcbd22", "#dbdb8d", "#17becf", "#9edae5"};
    return colors;
}

/// SVG 1.1 scatter of the lattice projection: one circle per record at
/// (col+dx, row+dy), scaled.
inline void write_scatter_svg(const std::vector<ProjectionRecord>& records, const SomLattice& lat,
                              const std::string& path) {
    constexpr double kCell = 20.0;
    constexpr double kMargin = 20.0;
    constexpr double kRadius = 3.0;
    const double width = 2 * kMargin + kCell * static_cast<double>(lat.cols - 1);
    const double height = 2 * kMargin + kCell * static_cast<double>(lat.rows - 1);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open SVG for writing: " + path);
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\""
        << detail::fmt_double(width) << "\" height=\"" << detail::fmt_double(height)
        << "\" viewBox=\"0 0 " << detail::fmt_double(width) << ' ' << detail::fmt_double(height)
        << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    const auto& palette = label_palette();
    for (const ProjectionRecord& r : records) {
        const double cx = kMargin + (static_cast<double>(r.bmu_col) + r.dx) * kCell;
        const double cy = kMargin + (static_cast<double>(r.bmu_row) + r.dy) * kCell;
        const char* color = palette[static_cast<std::size_t>(r.label) % palette.size()];
        out << "<circle cx=\"" << detail::fmt_double(cx) << "\" cy=\"" << detail::fmt_double(cy)
            << "\" r=\"" << detail::fmt_double(kRadius) << "\" fill=\"" << color
            << "\" fill-opacity=\"0.7\"/>\n";
    }
    out << "</svg>\n";
    if (!out.flush()) throw std::runtime_error("failed writing SVG: " + path);
}

/// Binary P5 graymap, maxval 255, sample = round(v*255). Accepts (H,W) or
/// (1,H,W) tensors with values in [0,1].
inline void write_pgm(const Tensor& image, const std::string& path) {
    std::size_t h = 0, w = 0;
    if (image.shape.size() == 2) {
        h = image.shape[0];
        w = image.shape[1];
    } else if (image.shape.size() == 3 && image.shape[0] == 1) {
        h = image.shape[1];
        w = image.shape[2];
    } else {
        throw ShapeError("write_pgm: expected (H,W) or (1,H,W), got " + shape_str(image.shape));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open PGM for writing: " + path);
    out << "P5\n" << w << ' ' << h << "\n255\n";
    for (double v : image.values) {
        const double c = std::min(1.0, std::max(0.0, v));
        out.put(static_cast<char>(static_cast<int>(std::lround(c * 255.0))));
    }
    if (!out.flush()) throw std::runtime_error("failed writing PGM: " + path);
}

}  // namespace dnm
