#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "conns/error.hpp"
#include "conns/numerics.hpp"
#include "conns/ontology.hpp"
#include "conns/rng.hpp"

namespace conns {

struct ConfigInvalid : Error {
    explicit ConfigInvalid(const std::string& detail) : Error("invalid config: " + detail) {}
};

struct UnknownPresence : Error {
    UnknownPresence() : Error("cannot render texts for unknown presence") {}
};

// Inclusive pixel bounds of a ground-truth region.
struct BBox {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    bool operator==(const BBox&) const = default;
    bool contains(int row, int col) const { return col >= x0 && col <= x1 && row >= y0 && row <= y1; }
    long long area() const { return static_cast<long long>(x1 - x0 + 1) * (y1 - y0 + 1); }
};

struct PlantedBox {
    std::string concept_name;
    BBox box;
};

// Grayscale image with the ground truth of which concept was planted where.
struct SynthImage {
    int width = 0;
    int height = 0;
    Vec pixels;  // row-major, values in [0, 1], quantized to 1/255 steps
    std::vector<PlantedBox> planted;

    double at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * width + col]; }
    double& at(int row, int col) { return pixels[static_cast<std::size_t>(row) * width + col]; }
};

struct GenConfig {
    int n_studies = 0;
    ConceptVocabulary vocab = ConceptVocabulary::synthetic_default();
    // 63 = 7 * 9 keeps the default grid an exact divisor of the image side.
    int image_size = 63;
    int grid = 7;  // patches per side
    double noise_sigma = 0.05;
    double p_present = 0.12;
    double p_unknown = 0.05;
    std::uint64_t seed = 0;
};

inline void validate_config(const GenConfig& c) {
    if (c.n_studies < 0) throw ConfigInvalid("n_studies < 0");
    if (c.image_size <= 0 || c.grid <= 0) throw ConfigInvalid("non-positive image_size or grid");
    if (c.image_size % c.grid != 0) throw ConfigInvalid("grid must divide image_size");
    if (c.noise_sigma < 0) throw ConfigInvalid("negative noise_sigma");
    if (c.p_present < 0 || c.p_unknown < 0 || c.p_present + c.p_unknown > 1.0)
        throw ConfigInvalid("presence probabilities must be nonnegative with p_present + p_unknown <= 1");
    if (c.vocab.size() > 256) throw ConfigInvalid("at most 256 concepts are supported");
}

// Per-concept texture signature: one brightness level per patch quadrant.
// Signatures are a pure function of the concept's vocabulary position, so the
// same vocabulary always produces the same textures regardless of the dataset
// seed. The attributes modulate the rendering: location shifts all levels
// (left brighter, right darker) and the size class sets the checkerboard
// amplitude, so attribute contradictions are visually real and hard negatives
// are learnable rather than label noise.
struct ConceptSignature {
    double level[4];
};

inline constexpr double kLocationShift = 0.06;   // left: +shift, right: -shift
inline constexpr double kSmallChecker = 0.05;
inline constexpr double kLargeChecker = 0.15;

// Quadrant patterns are zero-sum around the 0.5 background so concept
// identity lives in the quadrant-contrast subspace, leaving the overall mean
// to the location shift. Three pattern families give 42 distinct patterns;
// larger vocabularies reuse scaled copies.
inline ConceptSignature signature_for(int concept_index, int vocab_size) {
    // family A: permutations of (-1.5, -0.5, 0.5, 1.5) * 0.28 (24 patterns)
    static constexpr int kPermA[24][4] = {
        {0, 1, 2, 3}, {0, 1, 3, 2}, {0, 2, 1, 3}, {0, 2, 3, 1}, {0, 3, 1, 2}, {0, 3, 2, 1},
        {1, 0, 2, 3}, {1, 0, 3, 2}, {1, 2, 0, 3}, {1, 2, 3, 0}, {1, 3, 0, 2}, {1, 3, 2, 0},
        {2, 0, 1, 3}, {2, 0, 3, 1}, {2, 1, 0, 3}, {2, 1, 3, 0}, {2, 3, 0, 1}, {2, 3, 1, 0},
        {3, 0, 1, 2}, {3, 0, 2, 1}, {3, 1, 0, 2}, {3, 1, 2, 0}, {3, 2, 0, 1}, {3, 2, 1, 0},
    };
    static constexpr double kValuesA[4] = {-1.5, -0.5, 0.5, 1.5};
    // family B: -2 at position i, +2 at position j, zeros elsewhere (12)
    static constexpr int kPairB[12][2] = {{0, 1}, {0, 2}, {0, 3}, {1, 0}, {1, 2}, {1, 3},
                                          {2, 0}, {2, 1}, {2, 3}, {3, 0}, {3, 1}, {3, 2}};
    // family C: +1 at the two marked positions, -1 elsewhere (6)
    static constexpr int kPairC[6][2] = {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}};

    // contiguous assignment on purpose: neighbouring permutations share level
    // placements, giving every signature a common saliency component that
    // bootstraps attention early in training
    int k = concept_index;
    double shrink = 1.0;
    while (k >= 42) {
        k -= 42;
        shrink *= 0.6;
    }
    ConceptSignature s{};
    if (k < 24) {
        for (int q = 0; q < 4; ++q) s.level[q] = 0.5 + kValuesA[kPermA[k][q]] * 0.28 * shrink;
    } else if (k < 36) {
        const int* pair = kPairB[k - 24];
        for (int q = 0; q < 4; ++q) s.level[q] = 0.5;
        s.level[pair[0]] -= 2.0 * 0.21 * shrink;
        s.level[pair[1]] += 2.0 * 0.21 * shrink;
    } else {
        const int* pair = kPairC[k - 36];
        for (int q = 0; q < 4; ++q) s.level[q] = 0.5 - 0.42 * shrink;
        s.level[pair[0]] = 0.5 + 0.42 * shrink;
        s.level[pair[1]] = 0.5 + 0.42 * shrink;
    }
    return s;
}

namespace detail {

// Texture value at an absolute pixel, tiled with the patch grid so that any
// fully-covered patch sees the full quadrant pattern.
inline double signature_pixel(const ConceptSignature& s, double level_shift, double checker_amp,
                              int row, int col, int patch_px) {
    int py = row % patch_px;
    int px = col % patch_px;
    int q = (py >= patch_px / 2 ? 2 : 0) + (px >= patch_px / 2 ? 1 : 0);
    double v = s.level[q] + level_shift;
    v += ((row + col) % 2 == 0) ? checker_amp : -checker_amp;
    return v;
}

inline double quantize_gray(double v) {
    v = std::clamp(v, 0.0, 1.0);
    return std::round(v * 255.0) / 255.0;
}

}  // namespace detail

// Evidential-segment templates. The statement templates are fixed by the
// presence polarity; the evidential base is a seeded choice among >= 4
// variants, with attribute clauses appended when attributes are present.
inline std::pair<std::string, std::string> render_texts(const std::string& concept_name,
                                                        Presence presence,
                                                        const std::optional<std::string>& location,
                                                        const std::optional<std::string>& characteristics,
                                                        Rng& rng) {
    if (presence == Presence::Unknown) throw UnknownPresence();
    // terse report-style fragments: short texts keep the concept word's share
    // of the mean-pooled embedding high, which the toy text encoder needs
    static const char* kYesTails[] = {" seen", " present", " noted", " observed", " evident"};
    static const char* kNoHeads[] = {"no ", "absent ", "without ", "negative for ", "cleared of "};
    bool yes = presence == Presence::Yes;
    std::string seg;
    if (yes) {
        seg = concept_name + std::string(kYesTails[rng.next_below(5)]);
        if (location) seg += ", " + *location;
        if (characteristics) seg += ", " + *characteristics;
    } else {
        seg = std::string(kNoHeads[rng.next_below(5)]) + concept_name;
        if (location) seg += ", " + *location;
        if (characteristics) seg += ", " + *characteristics;
    }
    seg += ".";
    std::string stmt = yes ? "There is " + concept_name + "." : "There is no " + concept_name + ".";
    return {seg, stmt};
}

// Boxes are at least this many patch-squares to be called "large": the median
// area over the uniform {1..3}x{1..3} patch-size distribution is 3.
inline constexpr long long kLargeAreaPatches = 3;

// Deterministic dataset generator. Every study derives its own sub-stream
// from (seed, study index); identical configs produce byte-identical
// datasets, images and sidecars.
inline std::pair<std::vector<StudyRecord>, std::map<std::string, SynthImage>> generate(
    const GenConfig& cfg) {
    validate_config(cfg);
    const int patch_px = cfg.image_size / cfg.grid;
    std::vector<StudyRecord> records;
    std::map<std::string, SynthImage> images;
    records.reserve(cfg.n_studies);

    for (int s = 0; s < cfg.n_studies; ++s) {
        Rng rng = substream(cfg.seed, "study", static_cast<std::uint64_t>(s));
        StudyRecord rec;
        char buf[64];
        std::snprintf(buf, sizeof(buf), "study_%05d", s);
        rec.study_id = buf;
        std::snprintf(buf, sizeof(buf), "patient_%05d", s);
        rec.patient_id = buf;
        std::snprintf(buf, sizeof(buf), "images/s%05d.pgm", s);
        rec.image_ref = buf;

        // presence draw per concept, then greedy non-overlapping placement of
        // the Yes concepts on the patch grid; concepts that do not fit are
        // demoted to No so presence Yes <=> planted box.
        const int n = cfg.vocab.size();
        std::vector<Presence> presence(n);
        for (int c = 0; c < n; ++c) {
            double u = rng.next_double();
            presence[c] = u < cfg.p_present              ? Presence::Yes
                          : u < cfg.p_present + cfg.p_unknown ? Presence::Unknown
                                                              : Presence::No;
        }

        std::vector<char> occupied(static_cast<std::size_t>(cfg.grid) * cfg.grid, 0);
        std::vector<std::optional<BBox>> boxes(n);
        const int max_side = std::min(3, cfg.grid);
        for (int c = 0; c < n; ++c) {
            if (presence[c] != Presence::Yes) continue;
            int pw = 1 + static_cast<int>(rng.next_below(max_side));
            int ph = 1 + static_cast<int>(rng.next_below(max_side));
            bool placed = false;
            for (int attempt = 0; attempt < 40 && !placed; ++attempt) {
                int gx = static_cast<int>(rng.next_below(cfg.grid - pw + 1));
                int gy = static_cast<int>(rng.next_below(cfg.grid - ph + 1));
                bool free = true;
                for (int yy = gy; yy < gy + ph && free; ++yy)
                    for (int xx = gx; xx < gx + pw && free; ++xx)
                        if (occupied[static_cast<std::size_t>(yy) * cfg.grid + xx]) free = false;
                if (!free) continue;
                for (int yy = gy; yy < gy + ph; ++yy)
                    for (int xx = gx; xx < gx + pw; ++xx)
                        occupied[static_cast<std::size_t>(yy) * cfg.grid + xx] = 1;
                boxes[c] = BBox{gx * patch_px, gy * patch_px, (gx + pw) * patch_px - 1,
                                (gy + ph) * patch_px - 1};
                placed = true;
            }
            if (!placed) presence[c] = Presence::No;
        }

        // attributes first: the rendering depends on them
        std::vector<std::optional<std::string>> loc(n), chr(n);
        for (int c = 0; c < n; ++c) {
            if (!boxes[c]) continue;
            const BBox& b = *boxes[c];
            double cx = (b.x0 + b.x1) / 2.0;
            loc[c] = cx < cfg.image_size / 2.0 ? "left" : "right";
            long long patches = b.area() / (static_cast<long long>(patch_px) * patch_px);
            chr[c] = patches > kLargeAreaPatches ? "large" : "small";
        }

        SynthImage img;
        img.width = img.height = cfg.image_size;
        img.pixels.assign(static_cast<std::size_t>(cfg.image_size) * cfg.image_size, 0.5);
        for (int c = 0; c < n; ++c) {
            if (!boxes[c]) continue;
            const BBox& b = *boxes[c];
            ConceptSignature sig = signature_for(c, n);
            double shift = *loc[c] == "left" ? kLocationShift : -kLocationShift;
            double amp = *chr[c] == "large" ? kLargeChecker : kSmallChecker;
            for (int y = b.y0; y <= b.y1; ++y)
                for (int x = b.x0; x <= b.x1; ++x)
                    img.at(y, x) = detail::signature_pixel(sig, shift, amp, y, x, patch_px);
            img.planted.push_back({cfg.vocab.name(c), b});
        }
        for (double& p : img.pixels)
            p = detail::quantize_gray(p + cfg.noise_sigma * rng.next_gauss());

        for (int c = 0; c < n; ++c) {
            ConceptEntry e;
            e.concept_name = cfg.vocab.name(c);
            e.presence = presence[c];
            e.location = loc[c];
            e.characteristics = chr[c];
            if (e.presence != Presence::Unknown) {
                auto [seg, stmt] = render_texts(e.concept_name, e.presence, e.location,
                                                e.characteristics, rng);
                e.evidential_segment = seg;
                e.presence_statement = stmt;
            }
            rec.concepts.push_back(std::move(e));
        }
        images[rec.image_ref] = std::move(img);
        records.push_back(std::move(rec));
    }
    return {std::move(records), std::move(images)};
}

// ---- binary PGM (P5, maxval 255) ----

inline void write_pgm(const std::string& path, const Grid2D& g) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoFailure("cannot open " + path + " for writing");
    out << "P5\n" << g.w << " " << g.h << "\n255\n";
    std::vector<unsigned char> bytes(g.v.size());
    for (std::size_t i = 0; i < g.v.size(); ++i)
        bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(g.v[i], 0.0, 1.0) * 255.0));
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoFailure("write failed for " + path);
}

inline void write_pgm(const std::string& path, const SynthImage& img) {
    Grid2D g(img.height, img.width);
    g.v = img.pixels;
    write_pgm(path, g);
}

inline Grid2D read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot open " + path);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P5" || w <= 0 || h <= 0 || maxval != 255)
        throw IoFailure("not an 8-bit P5 PGM: " + path);
    in.get();  // single whitespace after header
    std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!in) throw IoFailure("truncated PGM: " + path);
    Grid2D g(h, w);
    for (std::size_t i = 0; i < bytes.size(); ++i) g.v[i] = bytes[i] / 255.0;
    return g;
}

// ---- planted-box sidecar: image_ref, concept, x0, y0, x1, y1 per line ----

inline void write_boxes(const std::string& path, const std::map<std::string, SynthImage>& images) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoFailure("cannot open " + path + " for writing");
    for (const auto& [ref, img] : images)
        for (const auto& pb : img.planted)
            out << ref << '\t' << pb.concept_name << '\t' << pb.box.x0 << '\t' << pb.box.y0 << '\t'
                << pb.box.x1 << '\t' << pb.box.y1 << '\n';
    if (!out) throw IoFailure("write failed for " + path);
}

inline std::map<std::string, std::vector<PlantedBox>> read_boxes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot open " + path);
    std::map<std::string, std::vector<PlantedBox>> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string ref, concept_name;
        BBox b;
        if (!(std::getline(ss, ref, '\t') && std::getline(ss, concept_name, '\t') &&
              ss >> b.x0 && ss.get() && ss >> b.y0 && ss.get() && ss >> b.x1 && ss.get() && ss >> b.y1))
            throw IoFailure("bad box line " + std::to_string(line_no) + " in " + path);
        out[ref].push_back({concept_name, b});
    }
    return out;
}

}  // namespace conns
