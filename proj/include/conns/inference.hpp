#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "conns/alignment.hpp"
#include "conns/encoders.hpp"
#include "conns/error.hpp"
#include "conns/numerics.hpp"
#include "conns/synthgen.hpp"

namespace conns {

struct ImageNotFound : Error {
    explicit ImageNotFound(const std::string& ref) : Error("image not found: " + ref) {}
};

struct GroundingQuery {
    std::string image_ref;
    std::string prompt;  // word, phrase or sentence level
};

struct Heatmap {
    Grid2D grid;         // interpolated to image resolution
    int argmax_row = 0;  // first row-major maximum of grid
    int argmax_col = 0;
    Grid2D source;       // H x W similarity map before interpolation
};

struct ScoreRow {
    std::string image_ref;
    std::string concept_name;
    double score = 0.0;
};

using ScoreTable = std::vector<ScoreRow>;

namespace detail {

inline void find_argmax(const Grid2D& g, int& row, int& col) {
    row = col = 0;
    double best = g.at(0, 0);
    for (int r = 0; r < g.h; ++r)
        for (int c = 0; c < g.w; ++c)
            if (g.at(r, c) > best) {
                best = g.at(r, c);
                row = r;
                col = c;
            }
}

}  // namespace detail

// Zero-shot grounding against an already-loaded image: encode both sides,
// compute the patch similarity map, reshape it to the patch grid and
// interpolate to image resolution. The heatmap is the raw similarity map
// (no softmax): the pointing game depends only on the argmax.
inline Heatmap ground(const std::string& prompt, const SynthImage& img, const Model& model) {
    Vec t = l2_normalize(encode_text(prompt, model.text));
    Mat v = encode_image(img, model.image, model.config.grid);
    Mat v_norm(v.rows, v.cols);
    for (int l = 0; l < v.rows; ++l) {
        const double* raw = v.row(l);
        double n = norm2(raw, v.cols);
        if (n < kNormEps) throw DegenerateNorm();
        for (int c = 0; c < v.cols; ++c) v_norm.at(l, c) = raw[c] / n;
    }
    Vec s = similarity_map(t, v_norm, model.align.tau_attn);

    Heatmap h;
    h.source = Grid2D(model.config.grid, model.config.grid);
    h.source.v = s;
    h.grid = bilinear_resize(h.source, img.height, img.width);
    detail::find_argmax(h.grid, h.argmax_row, h.argmax_col);
    return h;
}

// Loads the image from its dataset reference, resolved against root.
inline SynthImage load_image(const std::string& image_ref, const std::string& root) {
    std::string path = root.empty() ? image_ref : root + "/" + image_ref;
    Grid2D g;
    try {
        g = read_pgm(path);
    } catch (const IoFailure&) {
        throw ImageNotFound(path);
    }
    SynthImage img;
    img.width = g.w;
    img.height = g.h;
    img.pixels = g.v;
    return img;
}

inline Heatmap ground(const GroundingQuery& q, const Model& model, const std::string& image_root) {
    return ground(q.prompt, load_image(q.image_ref, image_root), model);
}

// Alignment score of one prompt against one image: the exact Eq.-style
// attention aggregation used in training (same code path as the loss
// forward).
inline double alignment_score(const std::string& prompt, const SynthImage& img, const Model& model) {
    Vec t = l2_normalize(encode_text(prompt, model.text));
    Mat v = encode_image(img, model.image, model.config.grid);
    Mat v_norm(v.rows, v.cols);
    for (int l = 0; l < v.rows; ++l) {
        const double* raw = v.row(l);
        double n = norm2(raw, v.cols);
        if (n < kNormEps) throw DegenerateNorm();
        for (int c = 0; c < v.cols; ++c) v_norm.at(l, c) = raw[c] / n;
    }
    Vec s = similarity_map(t, v_norm, model.align.tau_attn);
    AggregateResult agg = aggregate(s, v_norm);
    return dot(t, agg.v_hat);
}

// Zero-shot classification: per concept the prompt is its positive presence
// statement, matching the training-time template.
inline ScoreTable classify(const std::string& image_ref, const SynthImage& img,
                           const std::vector<std::string>& concepts, const Model& model) {
    ScoreTable table;
    table.reserve(concepts.size());
    for (const auto& c : concepts)
        table.push_back({image_ref, c, alignment_score("There is " + c + ".", img, model)});
    return table;
}

inline ScoreTable classify(const std::string& image_ref, const std::vector<std::string>& concepts,
                           const Model& model, const std::string& image_root) {
    return classify(image_ref, load_image(image_ref, image_root), concepts, model);
}

// ---- artifacts ----

// Min-max normalized 8-bit view of the heatmap.
inline void write_heatmap_pgm(const Heatmap& h, const std::string& path) {
    Grid2D view = h.grid;
    double lo = view.v[0], hi = view.v[0];
    for (double v : view.v) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    double span = hi - lo;
    for (double& v : view.v) v = span > 0 ? (v - lo) / span : 0.0;
    write_pgm(path, view);
}

// Exact values: one "row col hexbits" line per pixel.
inline void write_heatmap_sidecar(const Heatmap& h, std::ostream& os) {
    for (int r = 0; r < h.grid.h; ++r)
        for (int c = 0; c < h.grid.w; ++c)
            os << r << '\t' << c << '\t' << double_to_hex(h.grid.at(r, c)) << '\n';
}

inline void write_heatmap_sidecar(const Heatmap& h, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoFailure("cannot open " + path + " for writing");
    write_heatmap_sidecar(h, out);
    if (!out) throw IoFailure("write failed for " + path);
}

inline void write_score_table(const ScoreTable& table, std::ostream& os) {
    os << "image_ref\tconcept\tscore\n";
    char buf[64];
    for (const auto& row : table) {
        std::snprintf(buf, sizeof(buf), "%.17g", row.score);
        os << row.image_ref << '\t' << row.concept_name << '\t' << buf << '\n';
    }
}

inline void write_score_table(const ScoreTable& table, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoFailure("cannot open " + path + " for writing");
    write_score_table(table, out);
    if (!out) throw IoFailure("write failed for " + path);
}

}  // namespace conns
