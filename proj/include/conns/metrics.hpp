#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "conns/error.hpp"
#include "conns/inference.hpp"
#include "conns/ontology.hpp"
#include "conns/synthgen.hpp"

namespace conns {

struct NoBoxes : Error {
    NoBoxes() : Error("no ground-truth boxes for query") {}
};

struct DegenerateLabels : Error {
    DegenerateLabels() : Error("auroc needs at least one positive and one negative label") {}
};

// Hit iff the heatmap maximum falls inside any ground-truth box. Bounds are
// inclusive: an argmax exactly on the box edge counts.
inline bool pointing_game(const Heatmap& h, const std::vector<BBox>& boxes) {
    if (boxes.empty()) throw NoBoxes();
    for (const auto& b : boxes)
        if (b.contains(h.argmax_row, h.argmax_col)) return true;
    return false;
}

// Rank-based (Mann-Whitney) AUROC with average ranks for ties:
//   (sum of positive ranks - n_pos (n_pos + 1) / 2) / (n_pos * n_neg)
inline double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw ShapeMismatch("scores vs labels");
    const int n = static_cast<int>(scores.size());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return scores[a] < scores[b]; });
    std::vector<double> rank(n);
    int i = 0;
    while (i < n) {
        int j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        double avg = (i + 1 + j) / 2.0;  // mean of ranks i+1 .. j
        for (int k = i; k < j; ++k) rank[order[k]] = avg;
        i = j;
    }
    long long n_pos = 0;
    double pos_rank_sum = 0.0;
    for (int k = 0; k < n; ++k)
        if (labels[k]) {
            ++n_pos;
            pos_rank_sum += rank[k];
        }
    long long n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw DegenerateLabels();
    return (pos_rank_sum - static_cast<double>(n_pos) * (n_pos + 1) / 2.0) /
           (static_cast<double>(n_pos) * n_neg);
}

struct GroundingEval {
    int hits = 0;
    int total = 0;
    std::vector<std::pair<GroundingQuery, bool>> per_query;

    double hit_rate() const { return total ? static_cast<double>(hits) / total : 0.0; }
};

struct ClassificationEval {
    std::map<std::string, double> per_concept;  // concepts with both classes present
    double macro = 0.0;
};

struct EvalOutcome {
    GroundingEval grounding;
    ClassificationEval classification;
};

using Grounder = std::function<Heatmap(const GroundingQuery&)>;

// Pointing game over every (image, present concept) query. The grounder is
// injectable so a hand-built heatmap source can stand in for a model.
inline GroundingEval evaluate_grounding(const std::vector<StudyRecord>& records,
                                        const std::map<std::string, std::vector<PlantedBox>>& boxes,
                                        const Grounder& grounder) {
    GroundingEval ev;
    for (const auto& rec : records) {
        for (const auto& e : rec.concepts) {
            if (e.presence != Presence::Yes) continue;
            GroundingQuery q{rec.image_ref, e.presence_statement};
            std::vector<BBox> gt;
            auto it = boxes.find(rec.image_ref);
            if (it != boxes.end())
                for (const auto& pb : it->second)
                    if (pb.concept_name == e.concept_name) gt.push_back(pb.box);
            Heatmap h = grounder(q);
            bool hit = pointing_game(h, gt);
            ev.per_query.emplace_back(std::move(q), hit);
            ev.hits += hit ? 1 : 0;
            ++ev.total;
        }
    }
    if (ev.total == 0) throw NoBoxes();
    return ev;
}

inline GroundingEval evaluate_grounding(const std::vector<StudyRecord>& records,
                                        const std::map<std::string, std::vector<PlantedBox>>& boxes,
                                        const Model& model, const std::string& image_root) {
    return evaluate_grounding(records, boxes, [&](const GroundingQuery& q) {
        return ground(q, model, image_root);
    });
}

using Scorer = std::function<double(const StudyRecord&, const std::string& concept_name)>;

// Macro-average AUROC over concepts whose presence labels contain both
// classes; Unknown studies are excluded per concept.
inline ClassificationEval evaluate_classification(const std::vector<StudyRecord>& records,
                                                  const std::vector<std::string>& concepts,
                                                  const Scorer& scorer) {
    ClassificationEval ev;
    double sum = 0.0;
    for (const auto& c : concepts) {
        std::vector<double> scores;
        std::vector<int> labels;
        for (const auto& rec : records) {
            const ConceptEntry* e = rec.find(c);
            if (!e || e->presence == Presence::Unknown) continue;
            scores.push_back(scorer(rec, c));
            labels.push_back(e->presence == Presence::Yes ? 1 : 0);
        }
        bool has_pos = std::find(labels.begin(), labels.end(), 1) != labels.end();
        bool has_neg = std::find(labels.begin(), labels.end(), 0) != labels.end();
        if (!has_pos || !has_neg) continue;
        double a = auroc(scores, labels);
        ev.per_concept[c] = a;
        sum += a;
    }
    if (!ev.per_concept.empty()) ev.macro = sum / static_cast<double>(ev.per_concept.size());
    return ev;
}

inline ClassificationEval evaluate_classification(const std::vector<StudyRecord>& records,
                                                  const std::vector<std::string>& concepts,
                                                  const Model& model, const std::string& image_root) {
    std::map<std::string, SynthImage> cache;
    return evaluate_classification(records, concepts,
                                   [&](const StudyRecord& rec, const std::string& c) {
                                       auto it = cache.find(rec.image_ref);
                                       if (it == cache.end())
                                           it = cache.emplace(rec.image_ref,
                                                              load_image(rec.image_ref, image_root))
                                                    .first;
                                       return alignment_score("There is " + c + ".", it->second, model);
                                   });
}

}  // namespace conns
