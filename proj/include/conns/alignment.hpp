#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "conns/batching.hpp"
#include "conns/encoders.hpp"
#include "conns/error.hpp"
#include "conns/numerics.hpp"
#include "conns/parallel.hpp"
#include "conns/relabel.hpp"

namespace conns {

struct NotNormalized : Error {
    NotNormalized() : Error("embedding is not unit-norm") {}
};

struct DegenerateAggregate : Error {
    DegenerateAggregate() : Error("attention-weighted patch sum has near-zero norm") {}
};

struct AllRowsEmpty : Error {
    AllRowsEmpty() : Error("no row or column carries a positive pair; loss undefined") {}
};

// Patch-wise scaled dot products s_l = (t . v_l) / tau_attn for one
// (text, image) cell. Inputs must already be unit-norm.
inline Vec similarity_map(const Vec& t_norm, const Mat& v_norm, double tau_attn) {
    const int D = static_cast<int>(t_norm.size());
    if (v_norm.cols != D) throw ShapeMismatch("text dim != patch dim");
    if (std::fabs(norm2(t_norm) - 1.0) > 1e-9) throw NotNormalized();
    Vec s(v_norm.rows);
    for (int l = 0; l < v_norm.rows; ++l) {
        const double* v = v_norm.row(l);
        if (std::fabs(norm2(v, D) - 1.0) > 1e-9) throw NotNormalized();
        s[l] = dot(t_norm.data(), v, D) / tau_attn;
    }
    return s;
}

struct AggregateResult {
    Vec w;       // attention weights, sums to 1
    Vec z;       // weighted patch sum before normalization
    double z_norm = 0.0;
    Vec v_hat;   // unit-norm concept-specific representation
};

// softmax over the similarity map, attention-weighted patch sum, and its
// normalization. A near-zero weighted sum (opposing patches cancelling) is an
// error rather than a clamp: renormalizing it would corrupt gradients.
inline AggregateResult aggregate(const Vec& s, const Mat& v_norm) {
    if (s.empty() || static_cast<int>(s.size()) != v_norm.rows)
        throw ShapeMismatch("similarity length != patch count");
    AggregateResult r;
    r.w = softmax(s);
    r.z.assign(v_norm.cols, 0.0);
    for (int l = 0; l < v_norm.rows; ++l) {
        const double* v = v_norm.row(l);
        for (int c = 0; c < v_norm.cols; ++c) r.z[c] += r.w[l] * v[c];
    }
    r.z_norm = norm2(r.z);
    if (r.z_norm < 1e-12) throw DegenerateAggregate();
    r.v_hat.resize(r.z.size());
    for (std::size_t c = 0; c < r.z.size(); ++c) r.v_hat[c] = r.z[c] / r.z_norm;
    return r;
}

struct MaskPair {
    int rows = 0;
    int cols = 0;
    std::vector<std::uint8_t> pos;
    std::vector<std::uint8_t> valid;

    MaskPair() = default;
    MaskPair(int r, int c)
        : rows(r), cols(c), pos(static_cast<std::size_t>(r) * c, 0), valid(static_cast<std::size_t>(r) * c, 0) {}

    std::uint8_t pos_at(int i, int j) const { return pos[static_cast<std::size_t>(i) * cols + j]; }
    std::uint8_t valid_at(int i, int j) const { return valid[static_cast<std::size_t>(i) * cols + j]; }
};

inline MaskPair masks_from_relations(const RelationMatrix& m) {
    MaskPair out(m.rows, m.cols);
    for (std::size_t k = 0; k < m.cells.size(); ++k) {
        out.pos[k] = m.cells[k] == Relation::Positive ? 1 : 0;
        out.valid[k] = m.cells[k] != Relation::Ignored ? 1 : 0;
    }
    return out;
}

struct LossResult {
    double total = 0.0;
    Vec per_row;  // 0 for rows without a positive
    Vec per_col;  // 0 for columns without a positive
};

// Concept-aware NCE. Per text row i:
//   L_T2I(i) = -log( sum_j pos(i,j) e^{u_ij/tau} / (sum_k valid(i,k) e^{u_ik/tau} + eps) )
// and symmetrically per image column. The total is the mean over rows with a
// positive plus the mean over columns with a positive; everything else is
// excluded. epsilon sits in the denominator only, exactly as stated.
inline LossResult ca_nce_loss(const Mat& u, const MaskPair& masks, const AlignConfig& cfg) {
    if (u.rows != masks.rows || u.cols != masks.cols) throw ShapeMismatch("u vs masks");
    const double tau = cfg.tau_loss;
    LossResult r;
    r.per_row.assign(u.rows, 0.0);
    r.per_col.assign(u.cols, 0.0);
    int rows_with_pos = 0, cols_with_pos = 0;
    double row_sum = 0.0, col_sum = 0.0;

    for (int i = 0; i < u.rows; ++i) {
        double num = 0.0, den = 0.0;
        bool any_pos = false;
        for (int j = 0; j < u.cols; ++j) {
            if (!masks.valid_at(i, j)) continue;
            double e = std::exp(u.at(i, j) / tau);
            den += e;
            if (masks.pos_at(i, j)) {
                num += e;
                any_pos = true;
            }
        }
        if (!any_pos) continue;
        r.per_row[i] = -std::log(num / (den + cfg.epsilon));
        row_sum += r.per_row[i];
        ++rows_with_pos;
    }
    for (int j = 0; j < u.cols; ++j) {
        double num = 0.0, den = 0.0;
        bool any_pos = false;
        for (int i = 0; i < u.rows; ++i) {
            if (!masks.valid_at(i, j)) continue;
            double e = std::exp(u.at(i, j) / tau);
            den += e;
            if (masks.pos_at(i, j)) {
                num += e;
                any_pos = true;
            }
        }
        if (!any_pos) continue;
        r.per_col[j] = -std::log(num / (den + cfg.epsilon));
        col_sum += r.per_col[j];
        ++cols_with_pos;
    }
    if (rows_with_pos == 0 && cols_with_pos == 0) throw AllRowsEmpty();
    if (rows_with_pos > 0) r.total += row_sum / rows_with_pos;
    if (cols_with_pos > 0) r.total += col_sum / cols_with_pos;
    return r;
}

// Exact partials of the total above with respect to each u(i,j). Cells with
// valid = 0 never appear in the expression, so their gradient is exactly 0.
inline Mat ca_nce_grad_u(const Mat& u, const MaskPair& masks, const AlignConfig& cfg) {
    if (u.rows != masks.rows || u.cols != masks.cols) throw ShapeMismatch("u vs masks");
    const double tau = cfg.tau_loss;
    Mat g(u.rows, u.cols, 0.0);

    int rows_with_pos = 0, cols_with_pos = 0;
    for (int i = 0; i < u.rows; ++i)
        for (int j = 0; j < u.cols; ++j)
            if (masks.valid_at(i, j) && masks.pos_at(i, j)) {
                ++rows_with_pos;
                break;
            }
    for (int j = 0; j < u.cols; ++j)
        for (int i = 0; i < u.rows; ++i)
            if (masks.valid_at(i, j) && masks.pos_at(i, j)) {
                ++cols_with_pos;
                break;
            }
    if (rows_with_pos == 0 && cols_with_pos == 0) throw AllRowsEmpty();

    for (int i = 0; i < u.rows; ++i) {
        double num = 0.0, den = 0.0;
        bool any_pos = false;
        for (int j = 0; j < u.cols; ++j) {
            if (!masks.valid_at(i, j)) continue;
            double e = std::exp(u.at(i, j) / tau);
            den += e;
            if (masks.pos_at(i, j)) {
                num += e;
                any_pos = true;
            }
        }
        if (!any_pos) continue;
        for (int j = 0; j < u.cols; ++j) {
            if (!masks.valid_at(i, j)) continue;
            double e = std::exp(u.at(i, j) / tau);
            double d = (e / tau) * (1.0 / (den + cfg.epsilon) -
                                    (masks.pos_at(i, j) ? 1.0 / num : 0.0));
            g.at(i, j) += d / rows_with_pos;
        }
    }
    for (int j = 0; j < u.cols; ++j) {
        double num = 0.0, den = 0.0;
        bool any_pos = false;
        for (int i = 0; i < u.rows; ++i) {
            if (!masks.valid_at(i, j)) continue;
            double e = std::exp(u.at(i, j) / tau);
            den += e;
            if (masks.pos_at(i, j)) {
                num += e;
                any_pos = true;
            }
        }
        if (!any_pos) continue;
        for (int i = 0; i < u.rows; ++i) {
            if (!masks.valid_at(i, j)) continue;
            double e = std::exp(u.at(i, j) / tau);
            double d = (e / tau) * (1.0 / (den + cfg.epsilon) -
                                    (masks.pos_at(i, j) ? 1.0 / num : 0.0));
            g.at(i, j) += d / cols_with_pos;
        }
    }
    return g;
}

// ---- batched forward / backward over encoder outputs ----

// Everything the backward pass needs to chain gradients from u back to the
// encoder parameters.
struct EncodedBatch {
    int B = 0, N = 0, L = 0, D = 0;
    // text side
    Mat t_raw;
    Mat t_norm;
    Vec t_raw_norm;
    std::vector<std::vector<std::pair<int, double>>> text_buckets;  // (table row, weight)
    // image side
    std::vector<Mat> desc;
    std::vector<Mat> v_raw;
    std::vector<Mat> v_norm;
    std::vector<Vec> v_raw_norm;
};

struct ForwardResult {
    Mat u;   // (N*B) x B alignment scores
    Vec s;   // (N*B) x B x L similarity maps, row-major

    double s_at(int i, int j, int l, int B, int L) const {
        return s[(static_cast<std::size_t>(i) * B + j) * L + l];
    }
};

inline EncodedBatch encode_batch(const std::vector<TextSample>& samples,
                                 const std::vector<const SynthImage*>& images, const Model& model,
                                 int threads = 1) {
    EncodedBatch b;
    b.B = static_cast<int>(images.size());
    const int rows = static_cast<int>(samples.size());
    if (b.B == 0 || rows % b.B != 0) throw ShapeMismatch("samples not a multiple of images");
    b.N = rows / b.B;
    b.D = model.config.dim;
    b.L = model.config.grid * model.config.grid;

    b.t_raw = Mat(rows, b.D);
    b.t_norm = Mat(rows, b.D);
    b.t_raw_norm.assign(rows, 0.0);
    b.text_buckets.resize(rows);
    parallel_for(rows, threads, [&](int i) {
        auto words = tokenize(samples[i].text);
        if (words.empty()) throw EmptyText();
        std::vector<std::pair<int, double>> buckets;
        for (const auto& w : words) {
            int row = static_cast<int>(fnv1a64(w) % model.text.table.rows);
            bool found = false;
            for (auto& [r, cnt] : buckets)
                if (r == row) {
                    cnt += 1.0;
                    found = true;
                    break;
                }
            if (!found) buckets.emplace_back(row, 1.0);
        }
        double inv = 1.0 / static_cast<double>(words.size());
        for (auto& [r, cnt] : buckets) cnt *= inv;
        Vec t(b.D, 0.0);
        for (auto& [r, wgt] : buckets) {
            const double* row = model.text.table.row(r);
            for (int c = 0; c < b.D; ++c) t[c] += wgt * row[c];
        }
        b.text_buckets[i] = std::move(buckets);
        double n = norm2(t);
        b.t_raw_norm[i] = n;
        Vec tn = l2_normalize(t);
        for (int c = 0; c < b.D; ++c) {
            b.t_raw.at(i, c) = t[c];
            b.t_norm.at(i, c) = tn[c];
        }
    });

    b.desc.resize(b.B);
    b.v_raw.resize(b.B);
    b.v_norm.resize(b.B);
    b.v_raw_norm.resize(b.B);
    parallel_for(b.B, threads, [&](int j) {
        b.desc[j] = patch_descriptors(*images[j], model.config.grid);
        b.v_raw[j] = project_descriptors(b.desc[j], model.image);
        b.v_norm[j] = Mat(b.L, b.D);
        b.v_raw_norm[j].assign(b.L, 0.0);
        for (int l = 0; l < b.L; ++l) {
            const double* v = b.v_raw[j].row(l);
            double n = norm2(v, b.D);
            if (n < kNormEps) throw DegenerateNorm();
            b.v_raw_norm[j][l] = n;
            double* vn = b.v_norm[j].row(l);
            for (int c = 0; c < b.D; ++c) vn[c] = v[c] / n;
        }
    });
    return b;
}

// Similarity maps, attention aggregation and alignment scores for every
// (text, image) cell.
inline ForwardResult forward_scores(const EncodedBatch& b, const AlignConfig& cfg, int threads = 1) {
    const int rows = b.t_norm.rows;
    ForwardResult f;
    f.u = Mat(rows, b.B);
    f.s.assign(static_cast<std::size_t>(rows) * b.B * b.L, 0.0);
    parallel_for(rows, threads, [&](int i) {
        Vec t(b.t_norm.row(i), b.t_norm.row(i) + b.D);
        for (int j = 0; j < b.B; ++j) {
            Vec s = similarity_map(t, b.v_norm[j], cfg.tau_attn);
            AggregateResult agg = aggregate(s, b.v_norm[j]);
            f.u.at(i, j) = dot(t, agg.v_hat);
            double* dst = f.s.data() + (static_cast<std::size_t>(i) * b.B + j) * b.L;
            for (int l = 0; l < b.L; ++l) dst[l] = s[l];
        }
    });
    return f;
}

struct ParamGrads {
    Mat projection;  // kDescriptorDim x D
    Vec bias;        // D
    Mat table;       // hash_buckets x D
};

// Chain rule from dL/du back to the encoder parameters, through the
// normalization Jacobians (I - x x^T)/|raw| on both towers and the softmax
// Jacobian of the attention weights.
inline ParamGrads backward_to_params(const EncodedBatch& b, const ForwardResult& f, const Mat& grad_u,
                                     const Model& model, const AlignConfig& cfg, int threads = 1) {
    const int rows = b.t_norm.rows;
    const int D = b.D, L = b.L, B = b.B;
    if (grad_u.rows != rows || grad_u.cols != B) throw ShapeMismatch("grad_u shape");

    int workers = threads <= 1 ? 1 : threads;
    // per-worker accumulators for the patch-level gradients; texts are
    // partitioned by row so g_that needs no duplication
    std::vector<Vec> g_vbar(workers, Vec(static_cast<std::size_t>(B) * L * D, 0.0));
    Mat g_that(rows, D);

    parallel_for_workers(rows, threads, [&](int i, int worker) {
        const double* t = b.t_norm.row(i);
        Vec gt(D, 0.0);
        Vec w(L), gw(L), gs(L), gz(D);
        for (int j = 0; j < B; ++j) {
            double a = grad_u.at(i, j);
            if (a == 0.0) continue;
            const double* s = f.s.data() + (static_cast<std::size_t>(i) * B + j) * L;
            // softmax of the stored similarity row
            double m = s[0];
            for (int l = 1; l < L; ++l) m = std::max(m, s[l]);
            double sum = 0.0;
            for (int l = 0; l < L; ++l) {
                w[l] = std::exp(s[l] - m);
                sum += w[l];
            }
            for (int l = 0; l < L; ++l) w[l] /= sum;
            // z, v_hat
            Vec z(D, 0.0);
            const Mat& vn = b.v_norm[j];
            for (int l = 0; l < L; ++l) {
                const double* v = vn.row(l);
                for (int c = 0; c < D; ++c) z[c] += w[l] * v[c];
            }
            double zn = norm2(z);
            if (zn < 1e-12) throw DegenerateAggregate();
            double uij = f.u.at(i, j);
            // dL/dz = (a*t - a*u*v_hat)/|z|, with v_hat = z/|z|
            for (int c = 0; c < D; ++c) gz[c] = (a * t[c] - a * uij * z[c] / zn) / zn;
            // dL/dw_l = v_l . gz ; softmax jacobian -> dL/ds
            double gw_dot_w = 0.0;
            for (int l = 0; l < L; ++l) {
                gw[l] = dot(vn.row(l), gz.data(), D);
                gw_dot_w += gw[l] * w[l];
            }
            for (int l = 0; l < L; ++l) gs[l] = w[l] * (gw[l] - gw_dot_w);
            // accumulate text gradient: a*v_hat + sum_l gs_l * v_l / tau
            for (int c = 0; c < D; ++c) gt[c] += a * z[c] / zn;
            double* gvb = g_vbar[worker].data() + (static_cast<std::size_t>(j) * L) * D;
            for (int l = 0; l < L; ++l) {
                const double* v = vn.row(l);
                double gsl = gs[l] / cfg.tau_attn;
                for (int c = 0; c < D; ++c) {
                    gt[c] += gsl * v[c];
                    gvb[l * D + c] += w[l] * gz[c] + gsl * t[c];
                }
            }
        }
        for (int c = 0; c < D; ++c) g_that.at(i, c) = gt[c];
    });

    // reduce patch gradients in worker order
    Vec g_vbar_all = std::move(g_vbar[0]);
    for (int wkr = 1; wkr < workers; ++wkr)
        for (std::size_t k = 0; k < g_vbar_all.size(); ++k) g_vbar_all[k] += g_vbar[wkr][k];

    ParamGrads g;
    g.projection = Mat(kDescriptorDim, D);
    g.bias.assign(D, 0.0);
    g.table = Mat(model.text.table.rows, D);

    // text tower: normalization jacobian then scatter into the bucket rows
    for (int i = 0; i < rows; ++i) {
        const double* tn = b.t_norm.row(i);
        const double* gth = g_that.row(i);
        double proj = dot(tn, gth, D);
        for (const auto& [row, wgt] : b.text_buckets[i]) {
            double* dst = g.table.row(row);
            for (int c = 0; c < D; ++c) dst[c] += wgt * (gth[c] - proj * tn[c]) / b.t_raw_norm[i];
        }
    }

    // image tower: normalization jacobian, then dL/dP = d ^ dL/dv and
    // dL/dbias = sum of dL/dv
    for (int j = 0; j < B; ++j) {
        const Mat& vn = b.v_norm[j];
        for (int l = 0; l < L; ++l) {
            const double* gvb = g_vbar_all.data() + (static_cast<std::size_t>(j) * L + l) * D;
            const double* v = vn.row(l);
            double proj = dot(v, gvb, D);
            const double* d = b.desc[j].row(l);
            for (int c = 0; c < D; ++c) {
                double gv = (gvb[c] - proj * v[c]) / b.v_raw_norm[j][l];
                g.bias[c] += gv;
                for (int r = 0; r < kDescriptorDim; ++r) g.projection.at(r, c) += d[r] * gv;
            }
        }
    }
    return g;
}

// One plain gradient-descent step on the loss plus the L2 penalty
// (weight_decay / 2) |params|^2; returns the pre-update loss.
inline double train_step(const std::vector<TextSample>& samples,
                         const std::vector<const SynthImage*>& images, const RelationMatrix& relations,
                         Model& model, int threads = 1) {
    EncodedBatch batch = encode_batch(samples, images, model, threads);
    ForwardResult fwd = forward_scores(batch, model.align, threads);
    MaskPair masks = masks_from_relations(relations);
    LossResult loss = ca_nce_loss(fwd.u, masks, model.align);
    Mat grad_u = ca_nce_grad_u(fwd.u, masks, model.align);
    ParamGrads g = backward_to_params(batch, fwd, grad_u, model, model.align, threads);
    const double lr = model.align.learning_rate;
    const double wd = model.align.weight_decay;
    auto update = [lr, wd](double& p, double grad) { p -= lr * (grad + wd * p); };
    for (std::size_t k = 0; k < model.image.projection.a.size(); ++k)
        update(model.image.projection.a[k], g.projection.a[k]);
    for (std::size_t k = 0; k < model.image.bias.size(); ++k)
        update(model.image.bias[k], g.bias[k]);
    for (std::size_t k = 0; k < model.text.table.a.size(); ++k)
        update(model.text.table.a[k], g.table.a[k]);
    return loss.total;
}

}  // namespace conns
