#include <gtest/gtest.h>

#include <sstream>

#include "conns/batching.hpp"
#include "conns/synthgen.hpp"

using namespace conns;

namespace {

std::vector<StudyRecord> gen_studies(int n, int vocab_size, std::uint64_t seed,
                                     double p_present = 0.4, double p_unknown = 0.15) {
    GenConfig gc;
    gc.n_studies = n;
    gc.vocab = ConceptVocabulary::synthetic_default(vocab_size);
    gc.p_present = p_present;
    gc.p_unknown = p_unknown;
    gc.seed = seed;
    return generate(gc).first;
}

BatchPlan make_plan(std::vector<StudyRecord> studies, int n_texts, double p_cf,
                    std::uint64_t seed) {
    BatchPlan plan;
    plan.batch_size = static_cast<int>(studies.size());
    plan.texts_per_image = n_texts;
    plan.p_counterfactual = p_cf;
    plan.seed = seed;
    plan.studies = std::move(studies);
    return plan;
}

}  // namespace

TEST(SampleTexts, SingleStudySingleText) {
    auto plan = make_plan(gen_studies(1, 4, 5), 1, 0.0, 77);
    auto samples = sample_texts(plan);
    ASSERT_EQ(samples.size(), 1u);
    EXPECT_EQ(samples[0].source_patient, plan.studies[0].patient_id);
    EXPECT_FALSE(samples[0].is_counterfactual);
    EXPECT_EQ(samples[0].target_image_index, 0);
    const ConceptEntry* e = plan.studies[0].find(samples[0].concept_name);
    ASSERT_NE(e, nullptr);
    EXPECT_TRUE(samples[0].text == e->evidential_segment ||
                samples[0].text == e->presence_statement);
}

TEST(SampleTexts, DefaultShapeIs1536Rows) {
    auto plan = make_plan(gen_studies(192, 8, 3), 8, 0.25, 11);
    auto samples = sample_texts(plan);
    EXPECT_EQ(samples.size(), 1536u);
    for (int i = 0; i < static_cast<int>(samples.size()); ++i)
        EXPECT_EQ(samples[i].target_image_index, i / 8);
}

// The evidential-vs-statement coin is fair: over 1e5 draws the evidential
// fraction stays within 0.5 +/- 0.01.
TEST(SampleTexts, TextVariantCoinIsFair) {
    auto studies = gen_studies(4, 4, 21, 0.5, 0.0);
    long evidential = 0, total = 0;
    for (int rep = 0; rep < 100; ++rep) {
        auto plan = make_plan(studies, 250, 0.0, 1000 + rep);
        for (const auto& s : sample_texts(plan)) {
            const ConceptEntry* e = nullptr;
            for (const auto& st : studies)
                if (st.patient_id == s.source_patient) e = st.find(s.concept_name);
            ASSERT_NE(e, nullptr);
            if (s.text == e->evidential_segment && s.text != e->presence_statement) ++evidential;
            ++total;
        }
    }
    ASSERT_EQ(total, 100000);
    double frac = static_cast<double>(evidential) / total;
    EXPECT_NEAR(frac, 0.5, 0.01);
}

// Counterfactual invariant: absent attrs and presence opposite to the target
// image's presence for the same concept. Own-text invariant: source patient
// is the target's patient. Unknown presences never sampled.
TEST(SampleTexts, InvariantsHoldOnRandomPlans) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto studies = gen_studies(16, 6, 100 + seed, 0.45, 0.2);
        auto plan = make_plan(studies, 4, 0.5, seed);
        auto samples = sample_texts(plan);
        ASSERT_EQ(samples.size(), 64u);
        for (const auto& s : samples) {
            EXPECT_NE(s.source_presence, Presence::Unknown);
            const StudyRecord& target = plan.studies[s.target_image_index];
            const ConceptEntry* te = target.find(s.concept_name);
            ASSERT_NE(te, nullptr);
            if (s.is_counterfactual) {
                EXPECT_FALSE(s.location.has_value());
                EXPECT_FALSE(s.characteristics.has_value());
                EXPECT_NE(s.source_patient, target.patient_id);
                ASSERT_NE(te->presence, Presence::Unknown);
                EXPECT_EQ(s.source_presence,
                          te->presence == Presence::Yes ? Presence::No : Presence::Yes);
            } else {
                EXPECT_EQ(s.source_patient, target.patient_id);
                EXPECT_EQ(s.source_presence, te->presence);
            }
        }
    }
}

TEST(SampleTexts, DeterministicGivenPlan) {
    auto studies = gen_studies(8, 5, 42);
    auto plan = make_plan(studies, 3, 0.25, 9);
    auto a = sample_texts(plan);
    auto b = sample_texts(plan);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].text, b[i].text);
        EXPECT_EQ(a[i].concept_name, b[i].concept_name);
        EXPECT_EQ(a[i].source_patient, b[i].source_patient);
        EXPECT_EQ(a[i].is_counterfactual, b[i].is_counterfactual);
    }
}

TEST(SampleTexts, AllUnknownStudyRejected) {
    StudyRecord r;
    r.study_id = "s";
    r.patient_id = "p";
    r.image_ref = "i";
    ConceptEntry e;
    e.concept_name = "finding_01";
    e.presence = Presence::Unknown;
    r.concepts.push_back(e);
    auto plan = make_plan({r}, 1, 0.0, 1);
    EXPECT_THROW(sample_texts(plan), NoKnownConcept);
}

TEST(SampleTexts, CounterfactualFallsBackWithoutDonor) {
    // two studies that agree on every known presence: no opposite donor exists
    StudyRecord a, b;
    a.study_id = "s0";
    a.patient_id = "p0";
    a.image_ref = "i0";
    b.study_id = "s1";
    b.patient_id = "p1";
    b.image_ref = "i1";
    ConceptEntry e;
    e.concept_name = "finding_01";
    e.presence = Presence::Yes;
    e.location = "left";
    e.characteristics = "small";
    e.evidential_segment = "seg";
    e.presence_statement = "There is finding_01.";
    a.concepts.push_back(e);
    b.concepts.push_back(e);
    auto plan = make_plan({a, b}, 4, 1.0, 3);
    for (const auto& s : sample_texts(plan)) {
        EXPECT_FALSE(s.is_counterfactual);
        EXPECT_EQ(s.source_patient, plan.studies[s.target_image_index].patient_id);
    }
}

TEST(SampleTexts, DumpWritesOneLinePerRow) {
    auto plan = make_plan(gen_studies(4, 4, 8), 2, 0.25, 2);
    auto samples = sample_texts(plan);
    std::ostringstream ss;
    dump_samples(samples, ss);
    int lines = 0;
    for (char c : ss.str())
        if (c == '\n') ++lines;
    EXPECT_EQ(lines, 8);
}
