#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "conns/ontology.hpp"
#include "conns/synthgen.hpp"

using namespace conns;

namespace {

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
}

StudyRecord sample_record() {
    StudyRecord r;
    r.study_id = "study_00000";
    r.patient_id = "patient_00000";
    r.image_ref = "images/s00000.pgm";
    ConceptEntry e;
    e.concept_name = "atelectasis";
    e.presence = Presence::Yes;
    e.location = "left";
    e.characteristics = "small";
    e.evidential_segment = "There is evidence of atelectasis in the left lung field.";
    e.presence_statement = "There is atelectasis.";
    r.concepts.push_back(e);
    return r;
}

}  // namespace

TEST(Vocabulary, SingleName) {
    auto v = ConceptVocabulary::validate({"atelectasis"});
    EXPECT_EQ(v.size(), 1);
    EXPECT_TRUE(v.contains("atelectasis"));
}

TEST(Vocabulary, DuplicateRejected) {
    EXPECT_THROW(ConceptVocabulary::validate({"a", "a"}), DuplicateName);
}

TEST(Vocabulary, EmptyNameRejected) {
    EXPECT_THROW(ConceptVocabulary::validate({"a", ""}), EmptyName);
}

TEST(Vocabulary, EmptyListRejected) {
    EXPECT_THROW(ConceptVocabulary::validate({}), EmptyVocabulary);
}

TEST(Vocabulary, DefaultHas41OrderedNames) {
    auto v = ConceptVocabulary::synthetic_default();
    EXPECT_EQ(v.size(), 41);
    EXPECT_EQ(v.name(0), "finding_01");
    EXPECT_EQ(v.name(40), "finding_41");
}

TEST(Dataset, SingleRecordRoundTrip) {
    auto vocab = ConceptVocabulary::validate({"atelectasis"});
    std::string path = temp_path("conns_ontology_single.jsonl");
    save_dataset({sample_record()}, path);
    auto loaded = load_dataset(path, vocab);
    ASSERT_EQ(loaded.size(), 1u);
    EXPECT_EQ(loaded[0], sample_record());
    std::remove(path.c_str());
}

TEST(Dataset, BadPresenceIsMalformedLine) {
    auto vocab = ConceptVocabulary::validate({"atelectasis"});
    std::string path = temp_path("conns_ontology_badpresence.jsonl");
    std::string line = record_to_line(sample_record());
    auto pos = line.find("\"yes\"");
    ASSERT_NE(pos, std::string::npos);
    line.replace(pos, 5, "\"maybe\"");
    write_file(path, line + "\n");
    EXPECT_THROW(load_dataset(path, vocab), MalformedLine);
    std::remove(path.c_str());
}

TEST(Dataset, NotJsonIsMalformedLine) {
    auto vocab = ConceptVocabulary::validate({"atelectasis"});
    std::string path = temp_path("conns_ontology_notjson.jsonl");
    write_file(path, "not a record\n");
    EXPECT_THROW(load_dataset(path, vocab), MalformedLine);
    std::remove(path.c_str());
}

TEST(Dataset, UnknownPresenceWithLocationIsInvariantViolation) {
    auto vocab = ConceptVocabulary::validate({"atelectasis"});
    StudyRecord r = sample_record();
    r.concepts[0].presence = Presence::Unknown;
    // location stays "left": semantically ambiguous entries cannot carry attributes
    std::string path = temp_path("conns_ontology_unkattr.jsonl");
    write_file(path, record_to_line(r) + "\n");
    EXPECT_THROW(load_dataset(path, vocab), InvariantViolation);
    std::remove(path.c_str());
}

TEST(Dataset, EmptyTextsWithKnownPresenceIsInvariantViolation) {
    auto vocab = ConceptVocabulary::validate({"atelectasis"});
    StudyRecord r = sample_record();
    r.concepts[0].evidential_segment.clear();
    std::string path = temp_path("conns_ontology_emptytext.jsonl");
    write_file(path, record_to_line(r) + "\n");
    EXPECT_THROW(load_dataset(path, vocab), InvariantViolation);
    std::remove(path.c_str());
}

TEST(Dataset, UnknownConceptRejected) {
    auto vocab = ConceptVocabulary::validate({"nodule"});
    std::string path = temp_path("conns_ontology_unkconcept.jsonl");
    write_file(path, record_to_line(sample_record()) + "\n");
    EXPECT_THROW(load_dataset(path, vocab), UnknownConcept);
    std::remove(path.c_str());
}

TEST(Dataset, DuplicateConceptRejected) {
    auto vocab = ConceptVocabulary::validate({"atelectasis"});
    StudyRecord r = sample_record();
    r.concepts.push_back(r.concepts[0]);
    std::string path = temp_path("conns_ontology_dup.jsonl");
    write_file(path, record_to_line(r) + "\n");
    EXPECT_THROW(load_dataset(path, vocab), DuplicateConcept);
    std::remove(path.c_str());
}

TEST(Dataset, EmptyListWritesEmptyFile) {
    std::string path = temp_path("conns_ontology_empty.jsonl");
    save_dataset({}, path);
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    EXPECT_EQ(in.tellg(), 0);
    std::remove(path.c_str());
}

TEST(Dataset, ThreeRecordsThreeLines) {
    StudyRecord a = sample_record(), b = sample_record(), c = sample_record();
    b.study_id = "study_00001";
    c.study_id = "study_00002";
    std::string path = temp_path("conns_ontology_three.jsonl");
    save_dataset({a, b, c}, path);
    std::ifstream in(path, std::ios::binary);
    int lines = 0;
    std::string line;
    while (std::getline(in, line)) ++lines;
    EXPECT_EQ(lines, 3);
    std::remove(path.c_str());
}

// Round-trip of a generator output: structural equality of the parsed trees,
// and byte-stable re-serialization.
TEST(Dataset, GeneratedHundredStudiesRoundTrip) {
    GenConfig gc;
    gc.n_studies = 100;
    gc.vocab = ConceptVocabulary::synthetic_default(8);
    gc.seed = 4242;
    auto [records, images] = generate(gc);
    ASSERT_EQ(records.size(), 100u);

    std::string path = temp_path("conns_ontology_gen100.jsonl");
    save_dataset(records, path);
    auto loaded = load_dataset(path, gc.vocab);
    ASSERT_EQ(loaded.size(), records.size());
    for (std::size_t i = 0; i < records.size(); ++i) EXPECT_EQ(loaded[i], records[i]);

    std::string path2 = temp_path("conns_ontology_gen100b.jsonl");
    save_dataset(loaded, path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    EXPECT_EQ(s1, s2);
    std::remove(path.c_str());
    std::remove(path2.c_str());
}

// Closure: parsing only ever yields the three enum values.
TEST(Presence, ParseClosure) {
    EXPECT_EQ(parse_presence("yes"), Presence::Yes);
    EXPECT_EQ(parse_presence("no"), Presence::No);
    EXPECT_EQ(parse_presence("unknown"), Presence::Unknown);
    EXPECT_FALSE(parse_presence("maybe").has_value());
    EXPECT_FALSE(parse_presence("Yes").has_value());
    EXPECT_FALSE(parse_presence("").has_value());
}
