#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "conns/error.hpp"
#include "conns/ontology.hpp"
#include "conns/rng.hpp"

namespace conns {

struct NoKnownConcept : Error {
    std::string study_id;
    explicit NoKnownConcept(std::string study)
        : Error("study " + study + " has no concept with known presence"), study_id(std::move(study)) {}
};

// One sampled training text plus the bookkeeping the relabeler needs.
struct TextSample {
    std::string text;
    std::string concept_name;
    std::string source_patient;
    Presence source_presence = Presence::No;  // never Unknown when produced by sample_texts
    std::optional<std::string> location;
    std::optional<std::string> characteristics;
    bool is_counterfactual = false;
    int target_image_index = 0;
};

struct BatchPlan {
    int batch_size = 192;       // B
    int texts_per_image = 8;    // N
    double p_counterfactual = 0.25;
    std::uint64_t seed = 0;
    std::vector<StudyRecord> studies;  // exactly B studies with distinct patient ids
};

namespace detail {

inline std::vector<int> known_presence_indices(const StudyRecord& s) {
    std::vector<int> idx;
    for (int i = 0; i < static_cast<int>(s.concepts.size()); ++i)
        if (s.concepts[i].presence != Presence::Unknown) idx.push_back(i);
    return idx;
}

}  // namespace detail

// Samples N texts per image, row i = j*N + k. Per slot the draw order is
// fixed: counterfactual coin, concept choice (uniform over the study's
// known-presence concepts), donor choice for counterfactual slots, then the
// 50% evidential-segment / presence-statement coin. A counterfactual slot
// falls back to a normal sample when no donor with the opposite presence
// exists in the batch.
inline std::vector<TextSample> sample_texts(const BatchPlan& plan) {
    const int B = plan.batch_size;
    const int N = plan.texts_per_image;
    std::vector<std::vector<int>> known(B);
    for (int j = 0; j < B; ++j) {
        known[j] = detail::known_presence_indices(plan.studies[j]);
        if (known[j].empty()) throw NoKnownConcept(plan.studies[j].study_id);
    }

    Rng rng = substream(plan.seed, "sampling");
    std::vector<TextSample> out;
    out.reserve(static_cast<std::size_t>(B) * N);
    for (int j = 0; j < B; ++j) {
        const StudyRecord& study = plan.studies[j];
        for (int k = 0; k < N; ++k) {
            bool want_cf = rng.next_bool(plan.p_counterfactual);
            const ConceptEntry& own = study.concepts[known[j][rng.next_below(known[j].size())]];

            const StudyRecord* source = &study;
            const ConceptEntry* entry = &own;
            bool is_cf = false;
            if (want_cf) {
                Presence opposite = own.presence == Presence::Yes ? Presence::No : Presence::Yes;
                std::vector<int> donors;
                for (int d = 0; d < B; ++d) {
                    if (d == j) continue;
                    const ConceptEntry* de = plan.studies[d].find(own.concept_name);
                    if (de && de->presence == opposite) donors.push_back(d);
                }
                if (!donors.empty()) {
                    int d = donors[rng.next_below(donors.size())];
                    source = &plan.studies[d];
                    entry = source->find(own.concept_name);
                    is_cf = true;
                }
            }

            TextSample ts;
            ts.concept_name = own.concept_name;
            ts.source_patient = source->patient_id;
            ts.source_presence = entry->presence;
            ts.is_counterfactual = is_cf;
            ts.target_image_index = j;
            if (!is_cf) {
                ts.location = entry->location;
                ts.characteristics = entry->characteristics;
            }
            ts.text = rng.next_bool(0.5) ? entry->evidential_segment : entry->presence_statement;
            out.push_back(std::move(ts));
        }
    }
    return out;
}

// Debug dump: row, text, concept, source_patient, presence, is_counterfactual,
// target_image_index, tab-separated.
inline void dump_samples(const std::vector<TextSample>& samples, std::ostream& os) {
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const TextSample& s = samples[i];
        os << i << '\t' << s.text << '\t' << s.concept_name << '\t' << s.source_patient << '\t'
           << to_string(s.source_presence) << '\t' << (s.is_counterfactual ? 1 : 0) << '\t'
           << s.target_image_index << '\n';
    }
}

}  // namespace conns
