#pragma once

#include <cmath>
#include <cstdint>
#include <ostream>
#include <vector>

#include "conns/alignment.hpp"
#include "conns/batching.hpp"
#include "conns/relabel.hpp"
#include "conns/rng.hpp"
#include "conns/synthgen.hpp"

namespace conns {

// Central-difference verification of the analytic gradients. Central
// differences at h = 1e-5 on losses of magnitude ~30 carry an absolute noise
// of ~3e-10, so the relative-error denominator is floored: entries below the
// floor are effectively held to that absolute noise bound instead of a
// meaningless relative one.
namespace gradcheck {

inline double rel_err(double analytic, double numeric, double floor_scale) {
    double m = std::max({std::fabs(analytic), std::fabs(numeric), floor_scale});
    return std::fabs(analytic - numeric) / m;
}

struct RandomInstance {
    Mat u;
    MaskPair masks;
};

// Random score grid with mixed masks; guaranteed to carry at least one
// positive cell so the loss is defined.
inline RandomInstance random_instance(int rows, int cols, std::uint64_t seed, double p_valid = 0.85,
                                      double p_pos = 0.3) {
    Rng rng(seed);
    RandomInstance inst{Mat(rows, cols), MaskPair(rows, cols)};
    bool any_pos = false;
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
            inst.u.at(i, j) = rng.next_range(-1.0, 1.0);
            std::size_t k = static_cast<std::size_t>(i) * cols + j;
            if (rng.next_bool(p_valid)) {
                inst.masks.valid[k] = 1;
                if (rng.next_bool(p_pos)) {
                    inst.masks.pos[k] = 1;
                    any_pos = true;
                }
            }
        }
    }
    if (!any_pos) {
        inst.masks.valid[0] = 1;
        inst.masks.pos[0] = 1;
    }
    return inst;
}

// Max relative error of ca_nce_grad_u against central differences on one
// random instance.
inline double check_grad_u(int rows, int cols, std::uint64_t seed, const AlignConfig& cfg,
                           double h = 1e-5, double floor_scale = 1e-4) {
    RandomInstance inst = random_instance(rows, cols, seed);
    Mat analytic = ca_nce_grad_u(inst.u, inst.masks, cfg);
    double worst = 0.0;
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
            double saved = inst.u.at(i, j);
            inst.u.at(i, j) = saved + h;
            double lp = ca_nce_loss(inst.u, inst.masks, cfg).total;
            inst.u.at(i, j) = saved - h;
            double lm = ca_nce_loss(inst.u, inst.masks, cfg).total;
            inst.u.at(i, j) = saved;
            double numeric = (lp - lm) / (2 * h);
            std::size_t k = static_cast<std::size_t>(i) * cols + j;
            if (!inst.masks.valid[k] && analytic.at(i, j) != 0.0)
                return 1.0;  // ignored cells must be exactly zero
            worst = std::max(worst, rel_err(analytic.at(i, j), numeric, floor_scale));
        }
    }
    return worst;
}

struct MicroBatch {
    std::vector<StudyRecord> studies;
    std::vector<SynthImage> images;
    std::vector<TextSample> samples;
    RelationMatrix relations;
};

// Tiny end-to-end batch: a handful of studies from the synthetic generator,
// a couple of texts per image, concept-aware relations.
inline MicroBatch micro_batch(std::uint64_t seed, int batch = 2, int texts_per_image = 2) {
    GenConfig gc;
    gc.n_studies = batch;
    gc.vocab = ConceptVocabulary::synthetic_default(4);
    gc.image_size = 12;
    gc.grid = 2;
    gc.noise_sigma = 0.05;
    gc.p_present = 0.6;
    gc.p_unknown = 0.1;
    gc.seed = seed;
    auto [records, image_map] = generate(gc);

    MicroBatch mb;
    mb.studies = std::move(records);
    for (const auto& rec : mb.studies) mb.images.push_back(image_map.at(rec.image_ref));

    BatchPlan plan;
    plan.batch_size = batch;
    plan.texts_per_image = texts_per_image;
    plan.p_counterfactual = 0.5;
    plan.seed = seed;
    plan.studies = mb.studies;
    mb.samples = sample_texts(plan);

    RuleOracle oracle;
    mb.relations = build_relation_matrix(mb.samples, mb.studies, oracle);
    return mb;
}

inline double batch_loss(const MicroBatch& mb, const Model& model) {
    std::vector<const SynthImage*> imgs;
    for (const auto& im : mb.images) imgs.push_back(&im);
    EncodedBatch enc = encode_batch(mb.samples, imgs, model);
    ForwardResult fwd = forward_scores(enc, model.align);
    MaskPair masks = masks_from_relations(mb.relations);
    return ca_nce_loss(fwd.u, masks, model.align).total;
}

// Max relative error of the full parameter gradient (projection, bias, text
// table rows that are actually touched) against central differences.
inline double check_grad_params(std::uint64_t seed, const AlignConfig& cfg, double h = 1e-5,
                                double floor_scale = 1e-4) {
    MicroBatch mb = micro_batch(seed);
    ModelConfig mc;
    mc.dim = 6;
    mc.grid = 2;
    mc.hash_buckets = 128;
    Model model = init_model(mc, cfg, seed);

    std::vector<const SynthImage*> imgs;
    for (const auto& im : mb.images) imgs.push_back(&im);
    EncodedBatch enc = encode_batch(mb.samples, imgs, model);
    ForwardResult fwd = forward_scores(enc, model.align);
    MaskPair masks = masks_from_relations(mb.relations);
    Mat grad_u = ca_nce_grad_u(fwd.u, masks, model.align);
    ParamGrads g = backward_to_params(enc, fwd, grad_u, model, model.align);

    double worst = 0.0;
    auto fd_against = [&](double* p, double analytic) {
        double saved = *p;
        *p = saved + h;
        double lp = batch_loss(mb, model);
        *p = saved - h;
        double lm = batch_loss(mb, model);
        *p = saved;
        worst = std::max(worst, rel_err(analytic, (lp - lm) / (2 * h), floor_scale));
    };
    for (std::size_t k = 0; k < model.image.projection.a.size(); ++k)
        fd_against(&model.image.projection.a[k], g.projection.a[k]);
    for (std::size_t k = 0; k < model.image.bias.size(); ++k)
        fd_against(&model.image.bias[k], g.bias[k]);
    // only rows touched by the batch are worth probing; untouched rows have
    // gradient identically zero
    std::vector<char> touched(model.text.table.rows, 0);
    for (const auto& buckets : enc.text_buckets)
        for (const auto& [row, wgt] : buckets) touched[row] = 1;
    for (int r = 0; r < model.text.table.rows; ++r) {
        if (!touched[r]) continue;
        for (int c = 0; c < model.text.table.cols; ++c)
            fd_against(&model.text.table.a[static_cast<std::size_t>(r) * model.text.table.cols + c],
                       g.table.at(r, c));
    }
    return worst;
}

struct SuiteReport {
    double max_rel_err_u = 0.0;
    double max_rel_err_params = 0.0;
    bool ignored_cells_exact = true;
    bool ok = false;
};

// The full finite-difference suite the check-grad command runs: >= 20 seeds
// of grad_u instances up to 32x8, end-to-end parameter gradients on 2x2
// micro-batches, and exact zeros on ignored cells.
inline SuiteReport run_suite(std::uint64_t seed, std::ostream& diag) {
    AlignConfig cfg;
    SuiteReport rep;
    const int sizes[][2] = {{1, 1}, {4, 3}, {6, 3}, {8, 8}, {16, 8}, {32, 8}};
    int run = 0;
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto& sz = sizes[s % 6];
        rep.max_rel_err_u =
            std::max(rep.max_rel_err_u, check_grad_u(sz[0], sz[1], seed + s, cfg));
        ++run;
    }
    diag << "grad_u: " << run << " instances, max rel err " << rep.max_rel_err_u << "\n";

    for (std::uint64_t s = 0; s < 3; ++s)
        rep.max_rel_err_params = std::max(rep.max_rel_err_params, check_grad_params(seed + 100 + s, cfg));
    diag << "params: max rel err " << rep.max_rel_err_params << "\n";

    // ignored cells keep exactly-zero gradients
    RandomInstance inst = random_instance(8, 4, seed + 999);
    Mat g = ca_nce_grad_u(inst.u, inst.masks, cfg);
    for (int i = 0; i < 8 && rep.ignored_cells_exact; ++i)
        for (int j = 0; j < 4; ++j)
            if (!inst.masks.valid_at(i, j) && g.at(i, j) != 0.0) rep.ignored_cells_exact = false;
    diag << "ignored cells exact zero: " << (rep.ignored_cells_exact ? "yes" : "no") << "\n";

    rep.ok = rep.max_rel_err_u <= 1e-5 && rep.max_rel_err_params <= 1e-4 && rep.ignored_cells_exact;
    return rep;
}

}  // namespace gradcheck
}  // namespace conns
