#pragma once

#include <bit>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "conns/error.hpp"
#include "conns/numerics.hpp"
#include "conns/rng.hpp"
#include "conns/synthgen.hpp"

namespace conns {

struct EmptyText : Error {
    EmptyText() : Error("text is empty after tokenization") {}
};

// Patch descriptor: mean, four quadrant means, variance.
inline constexpr int kDescriptorDim = 6;

struct ModelConfig {
    int dim = 32;           // embedding dimension D
    int grid = 7;           // patches per side, L = grid^2
    int hash_buckets = 2048;
};

// Temperatures and optimizer settings of the alignment stage; recorded in
// checkpoints next to the parameters they were trained with. Weight decay
// counters the norm ratchet of normalized-embedding towers under SGD
// (tangential updates only ever grow raw norms, and the normalization
// Jacobian damps gradients by 1/norm).
struct AlignConfig {
    double tau_attn = 0.1;
    double tau_loss = 0.2;
    double epsilon = 1e-8;
    double learning_rate = 0.05;
    double weight_decay = 0.05;
};

struct ImageEncoderParams {
    Mat projection;  // kDescriptorDim x D
    Vec bias;        // D
};

struct TextEncoderParams {
    Mat table;  // hash_buckets x D
};

struct TrainInfo {
    int steps = 0;
    int batch_size = 0;
    int texts_per_image = 0;
    double p_counterfactual = 0.25;
    std::uint64_t seed = 0;
    std::string policy = "concept_aware";
};

struct Model {
    ModelConfig config;
    AlignConfig align;
    ImageEncoderParams image;
    TextEncoderParams text;
    TrainInfo train;
};

inline Model init_model(const ModelConfig& mc, const AlignConfig& ac, std::uint64_t seed) {
    Model m;
    m.config = mc;
    m.align = ac;
    Rng rng = substream(seed, "init");
    m.image.projection = Mat(kDescriptorDim, mc.dim);
    for (double& v : m.image.projection.a) v = rng.next_range(-0.05, 0.05);
    m.image.bias.assign(mc.dim, 0.0);
    for (double& v : m.image.bias) v = rng.next_range(-0.05, 0.05);
    m.text.table = Mat(mc.hash_buckets, mc.dim);
    for (double& v : m.text.table.a) v = rng.next_range(-0.05, 0.05);
    m.train.seed = seed;
    return m;
}

// ---- image side ----

// L x 6 matrix of per-patch statistics in row-major patch order.
inline Mat patch_descriptors(const SynthImage& img, int grid) {
    if (img.width != img.height || grid <= 0 || img.width % grid != 0)
        throw ShapeMismatch("grid " + std::to_string(grid) + " does not divide image side " +
                            std::to_string(img.width));
    const int patch = img.width / grid;
    const int half = patch / 2;
    Mat d(grid * grid, kDescriptorDim);
    for (int gy = 0; gy < grid; ++gy) {
        for (int gx = 0; gx < grid; ++gx) {
            double sum = 0.0, sum2 = 0.0;
            double qsum[4] = {0, 0, 0, 0};
            int qcnt[4] = {0, 0, 0, 0};
            for (int y = 0; y < patch; ++y) {
                for (int x = 0; x < patch; ++x) {
                    double v = img.at(gy * patch + y, gx * patch + x);
                    sum += v;
                    sum2 += v * v;
                    int q = (y >= half ? 2 : 0) + (x >= half ? 1 : 0);
                    qsum[q] += v;
                    ++qcnt[q];
                }
            }
            const double n = static_cast<double>(patch) * patch;
            double* row = d.row(gy * grid + gx);
            row[0] = sum / n;
            for (int q = 0; q < 4; ++q) row[1 + q] = qcnt[q] ? qsum[q] / qcnt[q] : 0.0;
            row[5] = sum2 / n - (sum / n) * (sum / n);
        }
    }
    return d;
}

// Raw (not normalized) patch embeddings: descriptor * projection + bias.
inline Mat project_descriptors(const Mat& desc, const ImageEncoderParams& p) {
    if (desc.cols != p.projection.rows)
        throw ShapeMismatch("descriptor dim != projection rows");
    Mat out(desc.rows, p.projection.cols);
    for (int l = 0; l < desc.rows; ++l) {
        const double* d = desc.row(l);
        double* v = out.row(l);
        for (int c = 0; c < p.projection.cols; ++c) v[c] = p.bias[c];
        for (int r = 0; r < desc.cols; ++r) {
            const double dr = d[r];
            const double* prow = p.projection.row(r);
            for (int c = 0; c < p.projection.cols; ++c) v[c] += dr * prow[c];
        }
    }
    return out;
}

inline Mat encode_image(const SynthImage& img, const ImageEncoderParams& p, int grid) {
    return project_descriptors(patch_descriptors(img, grid), p);
}

// ---- text side ----

// Lowercase, split on whitespace, strip punctuation characters from each
// word; empty words are dropped.
inline std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) words.push_back(cur);
        cur.clear();
    };
    for (char ch : text) {
        unsigned char u = static_cast<unsigned char>(ch);
        if (std::isspace(u)) {
            flush();
        } else if (!std::ispunct(u)) {
            cur.push_back(static_cast<char>(std::tolower(u)));
        }
    }
    flush();
    return words;
}

// Mean of the hashed word rows (FNV-1a 64 mod hash_buckets).
inline Vec encode_text(const std::string& text, const TextEncoderParams& p) {
    auto words = tokenize(text);
    if (words.empty()) throw EmptyText();
    Vec out(p.table.cols, 0.0);
    for (const auto& w : words) {
        const double* row = p.table.row(static_cast<int>(fnv1a64(w) % p.table.rows));
        for (int c = 0; c < p.table.cols; ++c) out[c] += row[c];
    }
    for (double& v : out) v /= static_cast<double>(words.size());
    return out;
}

// ---- checkpoint: one structured text file, floats as hexadecimal bit
// patterns so write/read round-trips bit-exactly ----

inline std::string double_to_hex(double v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(std::bit_cast<std::uint64_t>(v)));
    return buf;
}

inline double hex_to_double(const std::string& s) {
    if (s.size() != 16) throw IoFailure("bad hex float '" + s + "'");
    std::uint64_t bits = std::strtoull(s.c_str(), nullptr, 16);
    return std::bit_cast<double>(bits);
}

namespace detail {

inline void write_mat(std::ostream& os, const std::string& name, const Mat& m) {
    os << "[" << name << "]\n";
    os << "rows = " << m.rows << "\n";
    os << "cols = " << m.cols << "\n";
    for (int r = 0; r < m.rows; ++r) {
        for (int c = 0; c < m.cols; ++c) os << (c ? " " : "") << double_to_hex(m.at(r, c));
        os << "\n";
    }
}

inline Mat read_mat(std::istream& is) {
    std::string line;
    int rows = -1, cols = -1;
    if (!std::getline(is, line) || std::sscanf(line.c_str(), "rows = %d", &rows) != 1)
        throw IoFailure("checkpoint: expected rows");
    if (!std::getline(is, line) || std::sscanf(line.c_str(), "cols = %d", &cols) != 1)
        throw IoFailure("checkpoint: expected cols");
    Mat m(rows, cols);
    for (int r = 0; r < rows; ++r) {
        if (!std::getline(is, line)) throw IoFailure("checkpoint: truncated matrix");
        std::istringstream ss(line);
        std::string word;
        for (int c = 0; c < cols; ++c) {
            if (!(ss >> word)) throw IoFailure("checkpoint: short matrix row");
            m.at(r, c) = hex_to_double(word);
        }
    }
    return m;
}

}  // namespace detail

inline void save_checkpoint(const Model& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoFailure("cannot open " + path + " for writing");
    out << "conns-checkpoint v1\n";
    out << "[model]\n";
    out << "dim = " << m.config.dim << "\n";
    out << "grid = " << m.config.grid << "\n";
    out << "hash_buckets = " << m.config.hash_buckets << "\n";
    out << "[align]\n";
    out << "tau_attn = " << double_to_hex(m.align.tau_attn) << "\n";
    out << "tau_loss = " << double_to_hex(m.align.tau_loss) << "\n";
    out << "epsilon = " << double_to_hex(m.align.epsilon) << "\n";
    out << "learning_rate = " << double_to_hex(m.align.learning_rate) << "\n";
    out << "weight_decay = " << double_to_hex(m.align.weight_decay) << "\n";
    out << "[train]\n";
    out << "steps = " << m.train.steps << "\n";
    out << "batch_size = " << m.train.batch_size << "\n";
    out << "texts_per_image = " << m.train.texts_per_image << "\n";
    out << "p_counterfactual = " << double_to_hex(m.train.p_counterfactual) << "\n";
    out << "seed = " << m.train.seed << "\n";
    out << "policy = " << m.train.policy << "\n";
    detail::write_mat(out, "image_projection", m.image.projection);
    out << "[image_bias]\n";
    out << "dim = " << m.image.bias.size() << "\n";
    for (std::size_t i = 0; i < m.image.bias.size(); ++i)
        out << (i ? " " : "") << double_to_hex(m.image.bias[i]);
    out << "\n";
    detail::write_mat(out, "text_table", m.text.table);
    if (!out) throw IoFailure("write failed for " + path);
}

inline Model load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != "conns-checkpoint v1")
        throw IoFailure("not a conns checkpoint: " + path);
    Model m;
    auto expect = [&](const char* what) {
        if (!std::getline(in, line)) throw IoFailure(std::string("checkpoint: missing ") + what);
        return line;
    };
    auto value_of = [](const std::string& l) {
        auto pos = l.find('=');
        if (pos == std::string::npos) throw IoFailure("checkpoint: bad line '" + l + "'");
        auto v = l.substr(pos + 1);
        if (!v.empty() && v[0] == ' ') v.erase(0, 1);
        return v;
    };
    if (expect("[model]") != "[model]") throw IoFailure("checkpoint: expected [model]");
    m.config.dim = std::stoi(value_of(expect("dim")));
    m.config.grid = std::stoi(value_of(expect("grid")));
    m.config.hash_buckets = std::stoi(value_of(expect("hash_buckets")));
    if (expect("[align]") != "[align]") throw IoFailure("checkpoint: expected [align]");
    m.align.tau_attn = hex_to_double(value_of(expect("tau_attn")));
    m.align.tau_loss = hex_to_double(value_of(expect("tau_loss")));
    m.align.epsilon = hex_to_double(value_of(expect("epsilon")));
    m.align.learning_rate = hex_to_double(value_of(expect("learning_rate")));
    m.align.weight_decay = hex_to_double(value_of(expect("weight_decay")));
    if (expect("[train]") != "[train]") throw IoFailure("checkpoint: expected [train]");
    m.train.steps = std::stoi(value_of(expect("steps")));
    m.train.batch_size = std::stoi(value_of(expect("batch_size")));
    m.train.texts_per_image = std::stoi(value_of(expect("texts_per_image")));
    m.train.p_counterfactual = hex_to_double(value_of(expect("p_counterfactual")));
    m.train.seed = std::stoull(value_of(expect("seed")));
    m.train.policy = value_of(expect("policy"));
    if (expect("[image_projection]") != "[image_projection]")
        throw IoFailure("checkpoint: expected [image_projection]");
    m.image.projection = detail::read_mat(in);
    if (expect("[image_bias]") != "[image_bias]") throw IoFailure("checkpoint: expected [image_bias]");
    int bias_dim = std::stoi(value_of(expect("dim")));
    m.image.bias.resize(bias_dim);
    {
        std::istringstream ss(expect("bias row"));
        std::string word;
        for (int i = 0; i < bias_dim; ++i) {
            if (!(ss >> word)) throw IoFailure("checkpoint: short bias row");
            m.image.bias[i] = hex_to_double(word);
        }
    }
    if (expect("[text_table]") != "[text_table]") throw IoFailure("checkpoint: expected [text_table]");
    m.text.table = detail::read_mat(in);
    return m;
}

}  // namespace conns
