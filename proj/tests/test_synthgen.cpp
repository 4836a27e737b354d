#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <set>
#include <sstream>

#include "conns/synthgen.hpp"

using namespace conns;

namespace {

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

GenConfig small_config(std::uint64_t seed) {
    GenConfig gc;
    gc.n_studies = 20;
    gc.vocab = ConceptVocabulary::synthetic_default(6);
    gc.seed = seed;
    return gc;
}

std::string serialize_all(const std::vector<StudyRecord>& records,
                          const std::map<std::string, SynthImage>& images) {
    std::ostringstream ss;
    for (const auto& r : records) ss << record_to_line(r) << '\n';
    for (const auto& [ref, img] : images) {
        ss << ref << ' ' << img.width << 'x' << img.height << '\n';
        for (double p : img.pixels) ss << p << ',';
        for (const auto& pb : img.planted)
            ss << pb.concept_name << ' ' << pb.box.x0 << ' ' << pb.box.y0 << ' ' << pb.box.x1 << ' '
               << pb.box.y1 << '\n';
    }
    return ss.str();
}

}  // namespace

TEST(GenConfig, GridMustDivideImage) {
    GenConfig gc;
    gc.image_size = 64;
    gc.grid = 7;
    EXPECT_THROW(validate_config(gc), ConfigInvalid);
}

TEST(GenConfig, ProbabilitiesMustFit) {
    GenConfig gc;
    gc.p_present = 0.7;
    gc.p_unknown = 0.4;
    EXPECT_THROW(validate_config(gc), ConfigInvalid);
}

TEST(Generate, ZeroStudiesGivesEmptyDataset) {
    GenConfig gc = small_config(1);
    gc.n_studies = 0;
    auto [records, images] = generate(gc);
    EXPECT_TRUE(records.empty());
    EXPECT_TRUE(images.empty());
}

TEST(Generate, SameSeedIsByteIdentical) {
    GenConfig gc = small_config(12345);
    auto [r1, i1] = generate(gc);
    auto [r2, i2] = generate(gc);
    EXPECT_EQ(serialize_all(r1, i1), serialize_all(r2, i2));
}

TEST(Generate, DifferentSeedDiffers) {
    auto [r1, i1] = generate(small_config(1));
    auto [r2, i2] = generate(small_config(2));
    EXPECT_NE(serialize_all(r1, i1), serialize_all(r2, i2));
}

// p_present = 1, p_unknown = 0: exhaustive scan finds a Yes entry and a
// planted box for every concept of every study.
TEST(Generate, AllPresentPlantsEverything) {
    GenConfig gc;
    gc.n_studies = 10;
    gc.vocab = ConceptVocabulary::synthetic_default(4);
    gc.p_present = 1.0;
    gc.p_unknown = 0.0;
    gc.seed = 7;
    auto [records, images] = generate(gc);
    for (const auto& rec : records) {
        const SynthImage& img = images.at(rec.image_ref);
        ASSERT_EQ(rec.concepts.size(), 4u);
        for (const auto& e : rec.concepts) {
            EXPECT_EQ(e.presence, Presence::Yes);
            bool planted = false;
            for (const auto& pb : img.planted)
                if (pb.concept_name == e.concept_name) planted = true;
            EXPECT_TRUE(planted) << e.concept_name << " in " << rec.study_id;
        }
    }
}

// Ground-truth consistency both ways, box bounds, and the location attribute
// rule, scanned over a mixed dataset.
TEST(Generate, GroundTruthConsistency) {
    GenConfig gc = small_config(99);
    gc.n_studies = 50;
    gc.p_present = 0.4;
    gc.p_unknown = 0.2;
    auto [records, images] = generate(gc);
    for (const auto& rec : records) {
        const SynthImage& img = images.at(rec.image_ref);
        std::set<std::string> planted;
        for (const auto& pb : img.planted) {
            planted.insert(pb.concept_name);
            EXPECT_GE(pb.box.x0, 0);
            EXPECT_GE(pb.box.y0, 0);
            EXPECT_LT(pb.box.x1, img.width);
            EXPECT_LT(pb.box.y1, img.height);
            EXPECT_LE(pb.box.x0, pb.box.x1);
            EXPECT_LE(pb.box.y0, pb.box.y1);
        }
        for (const auto& e : rec.concepts) {
            EXPECT_EQ(e.presence == Presence::Yes, planted.count(e.concept_name) > 0);
            if (e.presence == Presence::Yes) {
                const PlantedBox* pb = nullptr;
                for (const auto& p : img.planted)
                    if (p.concept_name == e.concept_name) pb = &p;
                ASSERT_NE(pb, nullptr);
                double cx = (pb->box.x0 + pb->box.x1) / 2.0;
                EXPECT_EQ(*e.location, cx < img.width / 2.0 ? "left" : "right");
                ASSERT_TRUE(e.characteristics.has_value());
                EXPECT_TRUE(*e.characteristics == "small" || *e.characteristics == "large");
            } else {
                EXPECT_FALSE(e.location.has_value());
                EXPECT_FALSE(e.characteristics.has_value());
            }
            if (e.presence == Presence::Unknown) {
                EXPECT_TRUE(e.evidential_segment.empty());
                EXPECT_TRUE(e.presence_statement.empty());
            } else {
                EXPECT_FALSE(e.evidential_segment.empty());
                EXPECT_FALSE(e.presence_statement.empty());
            }
        }
    }
}

TEST(RenderTexts, PresenceStatementTemplates) {
    Rng rng(1);
    auto [seg, stmt] = render_texts("atelectasis", Presence::Yes, "left", "small", rng);
    EXPECT_EQ(stmt, "There is atelectasis.");
    EXPECT_NE(seg.find("atelectasis"), std::string::npos);
    EXPECT_NE(seg.find("left"), std::string::npos);
    EXPECT_NE(seg.find("small"), std::string::npos);

    auto [seg2, stmt2] = render_texts("atelectasis", Presence::No, std::nullopt, std::nullopt, rng);
    EXPECT_EQ(stmt2, "There is no atelectasis.");
    EXPECT_NE(seg2.find("atelectasis"), std::string::npos);
}

TEST(RenderTexts, UnknownPresenceRejected) {
    Rng rng(1);
    EXPECT_THROW(render_texts("x", Presence::Unknown, std::nullopt, std::nullopt, rng),
                 UnknownPresence);
}

// 1000 seeded renders of the same inputs must produce at least 4 distinct
// evidential segments.
TEST(RenderTexts, AtLeastFourVariants) {
    std::set<std::string> yes_variants, no_variants;
    for (int i = 0; i < 1000; ++i) {
        Rng rng(1000 + i);
        yes_variants.insert(render_texts("nodule", Presence::Yes, "left", "small", rng).first);
        Rng rng2(2000 + i);
        no_variants.insert(render_texts("nodule", Presence::No, std::nullopt, std::nullopt, rng2).first);
    }
    EXPECT_GE(yes_variants.size(), 4u);
    EXPECT_GE(no_variants.size(), 4u);
}

TEST(Pgm, RoundTripQuantizedPixels) {
    GenConfig gc = small_config(3);
    gc.n_studies = 1;
    auto [records, images] = generate(gc);
    const SynthImage& img = images.begin()->second;
    std::string path = temp_path("conns_synth_roundtrip.pgm");
    write_pgm(path, img);
    Grid2D g = read_pgm(path);
    ASSERT_EQ(g.w, img.width);
    ASSERT_EQ(g.h, img.height);
    // generation quantizes to 1/255 steps, so the file is lossless
    for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_NEAR(g.v[i], img.pixels[i], 1e-12);
    std::remove(path.c_str());
}

TEST(Boxes, SidecarRoundTrip) {
    GenConfig gc = small_config(11);
    gc.p_present = 0.5;
    auto [records, images] = generate(gc);
    std::string path = temp_path("conns_synth_boxes.tsv");
    write_boxes(path, images);
    auto loaded = read_boxes(path);
    std::size_t total = 0;
    for (const auto& [ref, img] : images) {
        if (img.planted.empty()) continue;
        ASSERT_TRUE(loaded.count(ref));
        ASSERT_EQ(loaded[ref].size(), img.planted.size());
        for (std::size_t k = 0; k < img.planted.size(); ++k) {
            EXPECT_EQ(loaded[ref][k].concept_name, img.planted[k].concept_name);
            EXPECT_EQ(loaded[ref][k].box, img.planted[k].box);
        }
        total += img.planted.size();
    }
    EXPECT_GT(total, 0u);
    std::remove(path.c_str());
}

TEST(Signatures, DistinctPerConcept) {
    std::set<std::array<int, 4>> seen;
    for (int k = 0; k < 41; ++k) {
        ConceptSignature s = signature_for(k, 41);
        std::array<int, 4> key;
        for (int q = 0; q < 4; ++q) key[q] = static_cast<int>(s.level[q] * 100);
        EXPECT_TRUE(seen.insert(key).second) << "signature collision at concept " << k;
    }
}
