#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>

#include "conns/encoders.hpp"
#include "conns/error.hpp"
#include "conns/relabel.hpp"
#include "conns/synthgen.hpp"

namespace conns {

// Flat "key = value" file with [section] headers and '#' comments. Keys are
// reported as "section.key".
inline std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoFailure("cannot open config " + path);
    std::map<std::string, std::string> kv;
    std::string line, section;
    auto trim = [](std::string s) {
        auto b = s.find_first_not_of(" \t\r");
        auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        if (line.front() == '[' && line.back() == ']') {
            section = line.substr(1, line.size() - 2);
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigInvalid("config line " + std::to_string(line_no) + " has no '='");
        kv[section + "." + trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

// Union of all module settings, loaded from one config file with CLI
// overrides applied on top. Every field keeps its owning module's default.
struct RunConfig {
    // gen
    int studies = 0;
    int image_size = 63;
    int grid = 7;
    double noise_sigma = 0.05;
    double p_present = 0.12;
    double p_unknown = 0.05;
    int vocab_size = 41;
    // batch
    int batch_size = 192;
    int texts_per_image = 8;
    double p_counterfactual = 0.25;
    // model
    int dim = 32;
    int hash_buckets = 2048;
    // align
    AlignConfig align;
    // train
    int steps = 300;
    RelabelPolicy policy = RelabelPolicy::ConceptAware;
    // shared
    std::uint64_t seed = 0;
    int threads = 1;

    static RunConfig from_file(const std::string& path) {
        RunConfig c;
        auto kv = parse_config_file(path);
        auto geti = [&](const char* k, int& dst) {
            if (auto it = kv.find(k); it != kv.end()) dst = std::stoi(it->second);
        };
        auto getd = [&](const char* k, double& dst) {
            if (auto it = kv.find(k); it != kv.end()) dst = std::stod(it->second);
        };
        geti("gen.studies", c.studies);
        geti("gen.image_size", c.image_size);
        geti("gen.grid", c.grid);
        getd("gen.noise_sigma", c.noise_sigma);
        getd("gen.p_present", c.p_present);
        getd("gen.p_unknown", c.p_unknown);
        geti("gen.vocab_size", c.vocab_size);
        geti("batch.batch_size", c.batch_size);
        geti("batch.texts_per_image", c.texts_per_image);
        getd("batch.p_counterfactual", c.p_counterfactual);
        geti("model.dim", c.dim);
        geti("model.hash_buckets", c.hash_buckets);
        getd("align.tau_attn", c.align.tau_attn);
        getd("align.tau_loss", c.align.tau_loss);
        getd("align.epsilon", c.align.epsilon);
        getd("align.learning_rate", c.align.learning_rate);
        getd("align.weight_decay", c.align.weight_decay);
        geti("train.steps", c.steps);
        if (auto it = kv.find("train.policy"); it != kv.end()) {
            if (it->second == "concept_aware")
                c.policy = RelabelPolicy::ConceptAware;
            else if (it->second == "all_cross_negative")
                c.policy = RelabelPolicy::AllCrossNegative;
            else
                throw ConfigInvalid("unknown train.policy '" + it->second + "'");
        }
        return c;
    }

    GenConfig gen_config() const {
        GenConfig g;
        g.n_studies = studies;
        g.vocab = ConceptVocabulary::synthetic_default(vocab_size);
        g.image_size = image_size;
        g.grid = grid;
        g.noise_sigma = noise_sigma;
        g.p_present = p_present;
        g.p_unknown = p_unknown;
        g.seed = seed;
        return g;
    }

    ModelConfig model_config() const { return ModelConfig{dim, grid, hash_buckets}; }
};

}  // namespace conns
