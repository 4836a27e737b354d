#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "conns/error.hpp"

namespace conns {

// Presence status of a finding for one patient.
enum class Presence { Yes, No, Unknown };

struct MalformedLine : Error {
    int line_no;
    MalformedLine(int line, const std::string& detail)
        : Error("malformed line " + std::to_string(line) + ": " + detail), line_no(line) {}
};

struct UnknownConcept : Error {
    std::string name;
    int line_no;
    UnknownConcept(std::string n, int line)
        : Error("unknown concept '" + n + "' at line " + std::to_string(line)),
          name(std::move(n)),
          line_no(line) {}
};

struct DuplicateConcept : Error {
    std::string name;
    std::string study_id;
    DuplicateConcept(std::string n, std::string study)
        : Error("duplicate concept '" + n + "' in study " + study),
          name(std::move(n)),
          study_id(std::move(study)) {}
};

struct InvariantViolation : Error {
    explicit InvariantViolation(const std::string& detail) : Error("invariant violation: " + detail) {}
};

struct DuplicateName : Error {
    explicit DuplicateName(const std::string& n) : Error("duplicate vocabulary name '" + n + "'") {}
};

struct EmptyName : Error {
    EmptyName() : Error("empty vocabulary name") {}
};

struct EmptyVocabulary : Error {
    EmptyVocabulary() : Error("vocabulary has no names") {}
};

inline std::string to_string(Presence p) {
    switch (p) {
        case Presence::Yes: return "yes";
        case Presence::No: return "no";
        default: return "unknown";
    }
}

// Parses one of "yes" / "no" / "unknown". Anything else is rejected.
inline std::optional<Presence> parse_presence(const std::string& s) {
    if (s == "yes") return Presence::Yes;
    if (s == "no") return Presence::No;
    if (s == "unknown") return Presence::Unknown;
    return std::nullopt;
}

// One concept's slice of a study: presence status, optional attributes and
// the two text variants (an evidential report excerpt and a fixed-template
// presence statement).
struct ConceptEntry {
    std::string concept_name;
    Presence presence = Presence::Unknown;
    std::optional<std::string> location;
    std::optional<std::string> characteristics;
    std::string evidential_segment;
    std::string presence_statement;

    bool operator==(const ConceptEntry&) const = default;
};

// One patient study: identifiers, the image reference and the per-concept
// ontology entries.
struct StudyRecord {
    std::string study_id;
    std::string patient_id;
    std::string image_ref;
    std::vector<ConceptEntry> concepts;

    bool operator==(const StudyRecord&) const = default;

    const ConceptEntry* find(const std::string& concept_name) const {
        for (const auto& e : concepts)
            if (e.concept_name == concept_name) return &e;
        return nullptr;
    }
};

// Ordered list of unique concept names. The shipped default is 41 synthetic
// names; real names are supplied by configuration.
class ConceptVocabulary {
public:
    static ConceptVocabulary validate(const std::vector<std::string>& names) {
        if (names.empty()) throw EmptyVocabulary();
        ConceptVocabulary v;
        for (const auto& n : names) {
            if (n.empty()) throw EmptyName();
            if (v.index_.count(n)) throw DuplicateName(n);
            v.index_[n] = static_cast<int>(v.names_.size());
            v.names_.push_back(n);
        }
        return v;
    }

    static ConceptVocabulary synthetic_default(int size = 41) {
        std::vector<std::string> names;
        names.reserve(size);
        for (int i = 1; i <= size; ++i) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "finding_%02d", i);
            names.emplace_back(buf);
        }
        return validate(names);
    }

    int size() const { return static_cast<int>(names_.size()); }
    bool contains(const std::string& n) const { return index_.count(n) > 0; }
    const std::vector<std::string>& names() const { return names_; }
    const std::string& name(int i) const { return names_[i]; }

private:
    std::vector<std::string> names_;
    std::map<std::string, int> index_;
};

namespace detail {

inline void check_entry_invariants(const ConceptEntry& e, const std::string& study_id) {
    if (e.presence == Presence::Unknown) {
        if (e.location || e.characteristics)
            throw InvariantViolation("concept '" + e.concept_name + "' in study " + study_id +
                                     " has attributes despite unknown presence");
    } else {
        if (e.evidential_segment.empty() || e.presence_statement.empty())
            throw InvariantViolation("concept '" + e.concept_name + "' in study " + study_id +
                                     " has empty texts despite known presence");
    }
}

}  // namespace detail

inline void validate_record(const StudyRecord& r, const ConceptVocabulary& vocab, int line_no = 0) {
    std::set<std::string> seen;
    for (const auto& e : r.concepts) {
        if (!vocab.contains(e.concept_name)) throw UnknownConcept(e.concept_name, line_no);
        if (!seen.insert(e.concept_name).second) throw DuplicateConcept(e.concept_name, r.study_id);
        detail::check_entry_invariants(e, r.study_id);
    }
}

namespace detail {

inline nlohmann::ordered_json entry_to_json(const ConceptEntry& e) {
    nlohmann::ordered_json j;
    j["concept"] = e.concept_name;
    j["presence"] = to_string(e.presence);
    j["location"] = e.location ? nlohmann::ordered_json(*e.location) : nlohmann::ordered_json(nullptr);
    j["characteristics"] =
        e.characteristics ? nlohmann::ordered_json(*e.characteristics) : nlohmann::ordered_json(nullptr);
    j["evidential_segment"] = e.evidential_segment;
    j["presence_statement"] = e.presence_statement;
    return j;
}

}  // namespace detail

inline std::string record_to_line(const StudyRecord& r) {
    nlohmann::ordered_json j;
    j["study_id"] = r.study_id;
    j["patient_id"] = r.patient_id;
    j["image_ref"] = r.image_ref;
    auto arr = nlohmann::ordered_json::array();
    for (const auto& e : r.concepts) arr.push_back(detail::entry_to_json(e));
    j["concepts"] = arr;
    return j.dump();
}

inline StudyRecord record_from_line(const std::string& line, int line_no) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw MalformedLine(line_no, e.what());
    }
    StudyRecord r;
    try {
        r.study_id = j.at("study_id").get<std::string>();
        r.patient_id = j.at("patient_id").get<std::string>();
        r.image_ref = j.at("image_ref").get<std::string>();
        for (const auto& je : j.at("concepts")) {
            ConceptEntry e;
            e.concept_name = je.at("concept").get<std::string>();
            auto p = parse_presence(je.at("presence").get<std::string>());
            if (!p) throw MalformedLine(line_no, "bad presence value '" +
                                                     je.at("presence").get<std::string>() + "'");
            e.presence = *p;
            if (!je.at("location").is_null()) e.location = je.at("location").get<std::string>();
            if (!je.at("characteristics").is_null())
                e.characteristics = je.at("characteristics").get<std::string>();
            e.evidential_segment = je.at("evidential_segment").get<std::string>();
            e.presence_statement = je.at("presence_statement").get<std::string>();
            r.concepts.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw MalformedLine(line_no, e.what());
    }
    return r;
}

// Reads a line-delimited dataset. Every record is validated against the
// vocabulary and the type invariants before it is returned.
inline std::vector<StudyRecord> load_dataset(const std::string& path, const ConceptVocabulary& vocab) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot open " + path);
    std::vector<StudyRecord> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        StudyRecord r = record_from_line(line, line_no);
        validate_record(r, vocab, line_no);
        out.push_back(std::move(r));
    }
    return out;
}

inline void save_dataset(const std::vector<StudyRecord>& records, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoFailure("cannot open " + path + " for writing");
    for (const auto& r : records) out << record_to_line(r) << '\n';
    if (!out) throw IoFailure("write failed for " + path);
}

}  // namespace conns
