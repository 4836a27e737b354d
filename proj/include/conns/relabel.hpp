#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "conns/batching.hpp"
#include "conns/error.hpp"
#include "conns/ontology.hpp"

namespace conns {

struct MissingConcept : Error {
    MissingConcept(const std::string& concept_name, const std::string& study_id)
        : Error("study " + study_id + " has no entry for concept '" + concept_name + "'") {}
};

struct OracleFailure : Error {
    explicit OracleFailure(const std::string& detail) : Error("oracle failure: " + detail) {}
};

enum class Relation { Positive, Negative, Ignored };

enum class PairCategory { Positive, Negative, Ignored, Pending };

enum class Provenance { SamePatient, NoNo, YesNo, Unknown, AttrContradiction, AttrAmbiguous };

inline const char* to_token(Relation r) {
    switch (r) {
        case Relation::Positive: return "1";
        case Relation::Negative: return "0";
        default: return "-";
    }
}

inline const char* to_token(Provenance p) {
    switch (p) {
        case Provenance::SamePatient: return "same_patient";
        case Provenance::NoNo: return "no_no";
        case Provenance::YesNo: return "yes_no";
        case Provenance::Unknown: return "unknown";
        case Provenance::AttrContradiction: return "attr_contradiction";
        default: return "attr_ambiguous";
    }
}

// Location/characteristics attribute pair of one side of a Yes-Yes pair.
struct Attrs {
    std::optional<std::string> location;
    std::optional<std::string> characteristics;

    bool operator==(const Attrs&) const = default;
    bool empty() const { return !location && !characteristics; }
};

// Normalized single-line rendering, also used as the wire format of the
// external oracle protocol.
inline std::string render_attrs(const Attrs& a) {
    return "location=" + (a.location ? *a.location : "null") +
           ";characteristics=" + (a.characteristics ? *a.characteristics : "null");
}

enum class Verdict { Contradiction, NotContradiction };

// Judge whether two attribute tuples explicitly contradict. Implementations
// may assume canonically ordered inputs (build_relation_matrix orders the two
// sides by their rendered form before calling), which makes any judge
// effectively symmetric.
class ContradictionOracle {
public:
    virtual ~ContradictionOracle() = default;
    virtual Verdict judge(const Attrs& a, const Attrs& b) = 0;
};

// (N*B) x B grid over {Positive, Negative, Ignored} with the rule that
// decided each cell.
struct RelationMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<Relation> cells;
    std::vector<Provenance> provenance;

    RelationMatrix() = default;
    RelationMatrix(int r, int c)
        : rows(r),
          cols(c),
          cells(static_cast<std::size_t>(r) * c, Relation::Ignored),
          provenance(static_cast<std::size_t>(r) * c, Provenance::Unknown) {}

    Relation& rel(int i, int j) { return cells[static_cast<std::size_t>(i) * cols + j]; }
    Relation rel(int i, int j) const { return cells[static_cast<std::size_t>(i) * cols + j]; }
    Provenance& prov(int i, int j) { return provenance[static_cast<std::size_t>(i) * cols + j]; }
    Provenance prov(int i, int j) const { return provenance[static_cast<std::size_t>(i) * cols + j]; }
};

// Step 1-2: presence-based breakdown of a (text, image) pair. Total function
// over the 3x3 presence grid; Yes-Yes is deferred to hard negative mining.
inline PairCategory breakdown(Presence text, Presence image) {
    if (text == Presence::Unknown || image == Presence::Unknown) return PairCategory::Ignored;
    if (text == Presence::No && image == Presence::No) return PairCategory::Positive;
    if (text != image) return PairCategory::Negative;
    return PairCategory::Pending;
}

// Step 3: resolve a Yes-Yes pair. Explicit attribute contradiction makes a
// hard negative; anything similar or insufficient to distinguish is masked
// out as a potential noisy negative.
inline Relation mine_hard_negative(const Attrs& text_attrs, const Attrs& image_attrs,
                                   ContradictionOracle& oracle) {
    if (text_attrs.empty() && image_attrs.empty()) return Relation::Ignored;
    const Attrs* a = &text_attrs;
    const Attrs* b = &image_attrs;
    if (render_attrs(*b) < render_attrs(*a)) std::swap(a, b);
    return oracle.judge(*a, *b) == Verdict::Contradiction ? Relation::Negative : Relation::Ignored;
}

// Antonym-table oracle: a contradiction fires when any configured antonym
// pair matches across the same field after lowercasing and whitespace
// tokenization. The desk-scale stand-in for an NLI judge.
class RuleOracle : public ContradictionOracle {
public:
    struct AntonymPair {
        std::string field;  // "location" or "characteristics"
        std::string a;
        std::string b;
    };

    RuleOracle() : RuleOracle(default_table()) {}
    explicit RuleOracle(std::vector<AntonymPair> table) : table_(std::move(table)) {}

    static std::vector<AntonymPair> default_table() {
        return {
            {"location", "left", "right"},
            {"location", "upper", "lower"},
            {"characteristics", "small", "large"},
            {"characteristics", "mild", "severe"},
        };
    }

    // Line format: field:token_a<>token_b. '#' starts a comment line.
    static RuleOracle from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoFailure("cannot open antonym table " + path);
        std::vector<AntonymPair> table;
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty() || line[0] == '#') continue;
            auto colon = line.find(':');
            auto sep = line.find("<>");
            if (colon == std::string::npos || sep == std::string::npos || sep < colon)
                throw IoFailure("bad antonym line " + std::to_string(line_no) + " in " + path);
            table.push_back({line.substr(0, colon), line.substr(colon + 1, sep - colon - 1),
                             line.substr(sep + 2)});
        }
        return RuleOracle(std::move(table));
    }

    Verdict judge(const Attrs& a, const Attrs& b) override {
        if (field_contradicts("location", a.location, b.location)) return Verdict::Contradiction;
        if (field_contradicts("characteristics", a.characteristics, b.characteristics))
            return Verdict::Contradiction;
        return Verdict::NotContradiction;
    }

private:
    static std::set<std::string> tokens_of(const std::string& s) {
        std::set<std::string> toks;
        std::string cur;
        for (char ch : s) {
            if (std::isspace(static_cast<unsigned char>(ch))) {
                if (!cur.empty()) toks.insert(cur);
                cur.clear();
            } else {
                cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
            }
        }
        if (!cur.empty()) toks.insert(cur);
        return toks;
    }

    bool field_contradicts(const std::string& field, const std::optional<std::string>& x,
                           const std::optional<std::string>& y) const {
        if (!x || !y) return false;
        auto tx = tokens_of(*x);
        auto ty = tokens_of(*y);
        for (const auto& p : table_) {
            if (p.field != field) continue;
            if ((tx.count(p.a) && ty.count(p.b)) || (tx.count(p.b) && ty.count(p.a))) return true;
        }
        return false;
    }

    std::vector<AntonymPair> table_;
};

inline Attrs attrs_of(const ConceptEntry& e) { return Attrs{e.location, e.characteristics}; }

inline Attrs attrs_of(const TextSample& s) { return Attrs{s.location, s.characteristics}; }

// ConceptAware is the full relabeling pipeline; AllCrossNegative is the
// CLIP-style ablation arm that keeps only own-text positives and forces every
// other cell Negative (provenance still records what the concept-aware rules
// would have said, so the injected noise stays countable).
enum class RelabelPolicy { ConceptAware, AllCrossNegative };

// Builds the relation matrix. Own texts (non-counterfactual, target image)
// are Positive regardless of anything else; every other cell is decided by
// presence breakdown, with Yes-Yes pairs resolved by the oracle. Oracle
// failures fall back to Ignored when fail_open is set (the default), so a
// crashed judge cannot inject false negatives.
inline RelationMatrix build_relation_matrix(const std::vector<TextSample>& samples,
                                            const std::vector<StudyRecord>& studies,
                                            ContradictionOracle& oracle,
                                            RelabelPolicy policy = RelabelPolicy::ConceptAware,
                                            bool fail_open = true) {
    const int B = static_cast<int>(studies.size());
    const int rows = static_cast<int>(samples.size());
    if (B == 0 || rows == 0 || rows % B != 0)
        throw ShapeMismatch("|samples| = " + std::to_string(rows) + " is not a positive multiple of B = " +
                            std::to_string(B));
    RelationMatrix m(rows, B);
    for (int i = 0; i < rows; ++i) {
        const TextSample& s = samples[i];
        for (int j = 0; j < B; ++j) {
            if (!s.is_counterfactual && s.target_image_index == j) {
                m.rel(i, j) = Relation::Positive;
                m.prov(i, j) = Provenance::SamePatient;
                continue;
            }
            const ConceptEntry* e = studies[j].find(s.concept_name);
            if (!e) throw MissingConcept(s.concept_name, studies[j].study_id);
            Relation rel;
            Provenance prov;
            switch (breakdown(s.source_presence, e->presence)) {
                case PairCategory::Positive:
                    rel = Relation::Positive;
                    prov = Provenance::NoNo;
                    break;
                case PairCategory::Negative:
                    rel = Relation::Negative;
                    prov = Provenance::YesNo;
                    break;
                case PairCategory::Ignored:
                    rel = Relation::Ignored;
                    prov = Provenance::Unknown;
                    break;
                default: {
                    try {
                        rel = mine_hard_negative(attrs_of(s), attrs_of(*e), oracle);
                    } catch (const OracleFailure&) {
                        if (!fail_open) throw;
                        rel = Relation::Ignored;
                    }
                    prov = rel == Relation::Negative ? Provenance::AttrContradiction
                                                     : Provenance::AttrAmbiguous;
                    break;
                }
            }
            if (policy == RelabelPolicy::AllCrossNegative) rel = Relation::Negative;
            m.rel(i, j) = rel;
            m.prov(i, j) = prov;
        }
    }
    return m;
}

// ---- relation matrix export: header "N=<n> B=<b>", then row, col, relation
// in {1,0,-} and provenance, tab-separated ----

inline void write_relation_matrix(const RelationMatrix& m, int texts_per_image, std::ostream& os) {
    os << "N=" << texts_per_image << " B=" << m.cols << '\n';
    for (int i = 0; i < m.rows; ++i)
        for (int j = 0; j < m.cols; ++j)
            os << i << '\t' << j << '\t' << to_token(m.rel(i, j)) << '\t' << to_token(m.prov(i, j))
               << '\n';
}

inline void write_relation_matrix(const RelationMatrix& m, int texts_per_image,
                                  const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoFailure("cannot open " + path + " for writing");
    write_relation_matrix(m, texts_per_image, out);
    if (!out) throw IoFailure("write failed for " + path);
}

inline std::pair<RelationMatrix, int> read_relation_matrix(std::istream& is) {
    std::string header;
    if (!std::getline(is, header)) throw IoFailure("empty relation matrix stream");
    int n = 0, b = 0;
    if (std::sscanf(header.c_str(), "N=%d B=%d", &n, &b) != 2 || n <= 0 || b <= 0)
        throw IoFailure("bad relation matrix header: " + header);
    RelationMatrix m(n * b, b);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string f_row, f_col, rel, prov;
        if (!(std::getline(ss, f_row, '\t') && std::getline(ss, f_col, '\t') &&
              std::getline(ss, rel, '\t') && std::getline(ss, prov)))
            throw IoFailure("bad relation matrix line: " + line);
        int i = std::stoi(f_row);
        int j = std::stoi(f_col);
        Relation r = rel == "1"   ? Relation::Positive
                     : rel == "0" ? Relation::Negative
                     : rel == "-" ? Relation::Ignored
                                  : throw IoFailure("bad relation token: " + rel);
        m.rel(i, j) = r;
        static const std::map<std::string, Provenance> kProv = {
            {"same_patient", Provenance::SamePatient},
            {"no_no", Provenance::NoNo},
            {"yes_no", Provenance::YesNo},
            {"unknown", Provenance::Unknown},
            {"attr_contradiction", Provenance::AttrContradiction},
            {"attr_ambiguous", Provenance::AttrAmbiguous},
        };
        auto it = kProv.find(prov);
        if (it == kProv.end()) throw IoFailure("bad provenance token: " + prov);
        m.prov(i, j) = it->second;
    }
    return {std::move(m), n};
}

inline std::pair<RelationMatrix, int> read_relation_matrix(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot open " + path);
    return read_relation_matrix(in);
}

}  // namespace conns
