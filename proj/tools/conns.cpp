// Command-line surface of the pipeline: synthesize data, build relation
// matrices, train the toy dual encoders, run zero-shot grounding and
// classification, and evaluate. Diagnostics go to stderr; machine-readable
// outputs go to files only.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "conns/alignment.hpp"
#include "conns/batching.hpp"
#include "conns/config.hpp"
#include "conns/encoders.hpp"
#include "conns/gradcheck.hpp"
#include "conns/inference.hpp"
#include "conns/metrics.hpp"
#include "conns/ontology.hpp"
#include "conns/relabel.hpp"
#include "conns/synthgen.hpp"

namespace fs = std::filesystem;
using namespace conns;

namespace {

struct CommonArgs {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 1;
    std::string out;
};

void add_common(CLI::App* cmd, CommonArgs& c) {
    cmd->add_option("--config", c.config_path, "config file (key = value with sections)");
    cmd->add_option("--seed", c.seed, "64-bit run seed")->each([&c](const std::string&) {
        c.seed_set = true;
    });
    cmd->add_option("--threads", c.threads, "worker threads; 1 is the reproducible reference mode");
    cmd->add_option("--out", c.out, "output file or directory");
}

RunConfig load_run_config(const CommonArgs& c) {
    RunConfig rc = c.config_path.empty() ? RunConfig{} : RunConfig::from_file(c.config_path);
    if (c.seed_set) rc.seed = c.seed;
    rc.threads = c.threads;
    return rc;
}

std::string default_image_root(const std::string& dataset_path) {
    auto p = fs::path(dataset_path).parent_path();
    return p.empty() ? std::string(".") : p.string();
}

std::vector<StudyRecord> load_records(const std::string& path, const RunConfig& rc, int skip,
                                      int take) {
    auto vocab = ConceptVocabulary::synthetic_default(rc.vocab_size);
    auto records = load_dataset(path, vocab);
    if (skip > 0) records.erase(records.begin(), records.begin() + std::min<std::size_t>(skip, records.size()));
    if (take >= 0 && static_cast<std::size_t>(take) < records.size()) records.resize(take);
    return records;
}

// Deterministic batch-index choice: partial Fisher-Yates over the study list.
std::vector<int> pick_batch(int n, int batch, Rng& rng) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (int k = 0; k < batch; ++k) {
        int j = k + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n - k)));
        std::swap(idx[k], idx[j]);
    }
    idx.resize(batch);
    return idx;
}

int cmd_gen_synth(const CommonArgs& common, int studies_override) {
    RunConfig rc = load_run_config(common);
    if (studies_override >= 0) rc.studies = studies_override;
    if (common.out.empty()) throw ConfigInvalid("gen-synth needs --out <dir>");

    GenConfig gc = rc.gen_config();
    auto [records, images] = generate(gc);

    fs::create_directories(fs::path(common.out) / "images");
    save_dataset(records, (fs::path(common.out) / "dataset.jsonl").string());
    for (const auto& [ref, img] : images) write_pgm((fs::path(common.out) / ref).string(), img);
    write_boxes((fs::path(common.out) / "boxes.tsv").string(), images);

    std::size_t boxes = 0;
    for (const auto& [ref, img] : images) boxes += img.planted.size();
    std::cerr << "wrote " << records.size() << " studies, " << images.size() << " images, " << boxes
              << " planted boxes to " << common.out << "\n";
    return 0;
}

int cmd_relabel(const CommonArgs& common, const std::string& data, int batch_override,
                int texts_override, bool baseline) {
    RunConfig rc = load_run_config(common);
    if (batch_override > 0) rc.batch_size = batch_override;
    if (texts_override > 0) rc.texts_per_image = texts_override;
    if (baseline) rc.policy = RelabelPolicy::AllCrossNegative;
    if (common.out.empty()) throw ConfigInvalid("relabel needs --out <file>");

    auto records = load_records(data, rc, 0, -1);
    if (static_cast<int>(records.size()) < rc.batch_size)
        throw ConfigInvalid("dataset has " + std::to_string(records.size()) +
                            " records but batch_size is " + std::to_string(rc.batch_size));

    BatchPlan plan;
    plan.batch_size = rc.batch_size;
    plan.texts_per_image = rc.texts_per_image;
    plan.p_counterfactual = rc.p_counterfactual;
    plan.seed = rc.seed;
    plan.studies.assign(records.begin(), records.begin() + rc.batch_size);

    auto samples = sample_texts(plan);
    RuleOracle oracle;
    RelationMatrix m = build_relation_matrix(samples, plan.studies, oracle, rc.policy);
    write_relation_matrix(m, plan.texts_per_image, common.out);

    std::size_t counts[6] = {0, 0, 0, 0, 0, 0};
    std::size_t rels[3] = {0, 0, 0};
    for (std::size_t k = 0; k < m.cells.size(); ++k) {
        ++counts[static_cast<int>(m.provenance[k])];
        ++rels[static_cast<int>(m.cells[k])];
    }
    std::cerr << "relation matrix " << m.rows << "x" << m.cols << ": positive " << rels[0]
              << ", negative " << rels[1] << ", ignored " << rels[2] << "\n";
    std::cerr << "provenance: same_patient " << counts[0] << ", no_no " << counts[1] << ", yes_no "
              << counts[2] << ", unknown " << counts[3] << ", attr_contradiction " << counts[4]
              << ", attr_ambiguous " << counts[5] << "\n";
    return 0;
}

int cmd_train(const CommonArgs& common, const std::string& data, int steps_override, int skip,
              int take, bool baseline) {
    RunConfig rc = load_run_config(common);
    if (steps_override >= 0) rc.steps = steps_override;
    if (baseline) rc.policy = RelabelPolicy::AllCrossNegative;
    if (common.out.empty()) throw ConfigInvalid("train needs --out <dir>");

    auto records = load_records(data, rc, skip, take);
    if (static_cast<int>(records.size()) < rc.batch_size)
        throw ConfigInvalid("dataset too small for batch_size " + std::to_string(rc.batch_size));
    std::string image_root = default_image_root(data);
    std::map<std::string, SynthImage> images;
    for (const auto& rec : records)
        if (!images.count(rec.image_ref)) images[rec.image_ref] = load_image(rec.image_ref, image_root);

    Model model = init_model(rc.model_config(), rc.align, rc.seed);
    model.train.steps = rc.steps;
    model.train.batch_size = rc.batch_size;
    model.train.texts_per_image = rc.texts_per_image;
    model.train.p_counterfactual = rc.p_counterfactual;
    model.train.policy = rc.policy == RelabelPolicy::ConceptAware ? "concept_aware" : "all_cross_negative";

    fs::create_directories(common.out);
    std::ofstream log((fs::path(common.out) / "train.log").string(), std::ios::binary);
    if (!log) throw IoFailure("cannot open train.log");

    RuleOracle oracle;
    Rng batch_rng = substream(rc.seed, "batch-choice");
    for (int step = 0; step < rc.steps; ++step) {
        auto idx = pick_batch(static_cast<int>(records.size()), rc.batch_size, batch_rng);
        BatchPlan plan;
        plan.batch_size = rc.batch_size;
        plan.texts_per_image = rc.texts_per_image;
        plan.p_counterfactual = rc.p_counterfactual;
        plan.seed = substream(rc.seed, "plan", static_cast<std::uint64_t>(step)).next_u64();
        std::vector<const SynthImage*> batch_images;
        for (int i : idx) {
            plan.studies.push_back(records[i]);
            batch_images.push_back(&images.at(records[i].image_ref));
        }
        auto samples = sample_texts(plan);
        RelationMatrix rel = build_relation_matrix(samples, plan.studies, oracle, rc.policy);

        auto t0 = std::chrono::steady_clock::now();
        double loss = train_step(samples, batch_images, rel, model, rc.threads);
        auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
        log << step << '\t' << loss << '\t' << ms << '\n';
    }
    save_checkpoint(model, (fs::path(common.out) / "checkpoint.txt").string());
    std::cerr << "trained " << rc.steps << " steps on " << records.size() << " studies; checkpoint in "
              << common.out << "\n";
    return 0;
}

int cmd_ground(const CommonArgs& common, const std::string& model_path, const std::string& image_ref,
               const std::string& prompt, const std::string& image_root) {
    if (common.out.empty()) throw ConfigInvalid("ground needs --out <dir>");
    Model model = load_checkpoint(model_path);
    Heatmap h = ground(GroundingQuery{image_ref, prompt}, model, image_root);
    fs::create_directories(common.out);
    write_heatmap_pgm(h, (fs::path(common.out) / "heatmap.pgm").string());
    write_heatmap_sidecar(h, (fs::path(common.out) / "heatmap.tsv").string());
    std::cerr << "argmax at row " << h.argmax_row << ", col " << h.argmax_col << "\n";
    return 0;
}

int cmd_classify(const CommonArgs& common, const std::string& model_path, const std::string& image_ref,
                 const std::string& image_root, std::vector<std::string> concepts) {
    RunConfig rc = load_run_config(common);
    if (common.out.empty()) throw ConfigInvalid("classify needs --out <file>");
    Model model = load_checkpoint(model_path);
    if (concepts.empty()) concepts = ConceptVocabulary::synthetic_default(rc.vocab_size).names();
    ScoreTable table = classify(image_ref, concepts, model, image_root);
    write_score_table(table, common.out);
    std::cerr << "scored " << table.size() << " concepts for " << image_ref << "\n";
    return 0;
}

int cmd_eval(const CommonArgs& common, const std::string& model_path, const std::string& data,
             int skip, int take) {
    RunConfig rc = load_run_config(common);
    if (common.out.empty()) throw ConfigInvalid("eval needs --out <file>");
    Model model = load_checkpoint(model_path);
    auto records = load_records(data, rc, skip, take);
    auto vocab = ConceptVocabulary::synthetic_default(rc.vocab_size);
    auto ev = evaluate_classification(records, vocab.names(), model, default_image_root(data));

    std::ofstream out(common.out, std::ios::binary);
    if (!out) throw IoFailure("cannot open " + common.out);
    out << "concept\tauroc\n";
    for (const auto& [c, a] : ev.per_concept) out << c << '\t' << a << '\n';
    out << "macro\t" << ev.macro << '\n';
    std::cerr << "macro auroc " << ev.macro << " over " << ev.per_concept.size() << " concepts\n";
    return 0;
}

int cmd_eval_ground(const CommonArgs& common, const std::string& model_path, const std::string& data,
                    const std::string& boxes_path, int skip, int take) {
    RunConfig rc = load_run_config(common);
    if (common.out.empty()) throw ConfigInvalid("eval-ground needs --out <file>");
    Model model = load_checkpoint(model_path);
    auto records = load_records(data, rc, skip, take);
    auto boxes = read_boxes(boxes_path);
    auto ev = evaluate_grounding(records, boxes, model, default_image_root(data));

    std::ofstream out(common.out, std::ios::binary);
    if (!out) throw IoFailure("cannot open " + common.out);
    out << "image_ref\tprompt\thit\n";
    for (const auto& [q, hit] : ev.per_query) out << q.image_ref << '\t' << q.prompt << '\t' << hit << '\n';
    out << "pointing_game\t" << ev.hit_rate() << '\t' << ev.hits << "/" << ev.total << '\n';
    std::cerr << "pointing game " << ev.hit_rate() << " (" << ev.hits << "/" << ev.total << ")\n";
    return 0;
}

int cmd_check_grad(const CommonArgs& common) {
    gradcheck::SuiteReport rep = gradcheck::run_suite(common.seed, std::cerr);
    std::cerr << "max rel err: grad_u " << rep.max_rel_err_u << " (tol 1e-5), params "
              << rep.max_rel_err_params << " (tol 1e-4)\n";
    return rep.ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"concept-guided noisy-negative suppression for image-text alignment"};
    app.require_subcommand(1);

    CommonArgs common;
    int studies_override = -1, steps_override = -1, batch_override = -1, texts_override = -1;
    int skip = 0, take = -1;
    bool baseline = false;
    std::string data, model_path, image_ref, prompt, image_root, boxes_path;
    std::vector<std::string> concepts;

    auto* gen = app.add_subcommand("gen-synth", "generate a synthetic dataset");
    add_common(gen, common);
    gen->add_option("--studies", studies_override, "number of studies");

    auto* rel = app.add_subcommand("relabel", "build and export a relation matrix");
    add_common(rel, common);
    rel->add_option("--data", data, "dataset file")->required();
    rel->add_option("--batch", batch_override, "batch size B");
    rel->add_option("--texts", texts_override, "texts per image N");
    rel->add_flag("--baseline", baseline, "CLIP-style all-cross-negative ablation mode");

    auto* train = app.add_subcommand("train", "train the dual encoders");
    add_common(train, common);
    train->add_option("--data", data, "dataset file")->required();
    train->add_option("--steps", steps_override, "training steps");
    train->add_option("--skip", skip, "skip the first N records");
    train->add_option("--take", take, "use at most N records");
    train->add_flag("--baseline", baseline, "CLIP-style all-cross-negative ablation mode");

    auto* grd = app.add_subcommand("ground", "zero-shot grounding heatmap for one prompt");
    add_common(grd, common);
    grd->add_option("--model", model_path, "checkpoint file")->required();
    grd->add_option("--image", image_ref, "image reference")->required();
    grd->add_option("--prompt", prompt, "query text")->required();
    grd->add_option("--image-root", image_root, "directory image refs are relative to");

    auto* cls = app.add_subcommand("classify", "alignment scores for one image");
    add_common(cls, common);
    cls->add_option("--model", model_path, "checkpoint file")->required();
    cls->add_option("--image", image_ref, "image reference")->required();
    cls->add_option("--image-root", image_root, "directory image refs are relative to");
    cls->add_option("--concepts", concepts, "concept names (default: configured vocabulary)");

    auto* ev = app.add_subcommand("eval", "zero-shot classification AUROC report");
    add_common(ev, common);
    ev->add_option("--model", model_path, "checkpoint file")->required();
    ev->add_option("--data", data, "dataset file")->required();
    ev->add_option("--skip", skip, "skip the first N records");
    ev->add_option("--take", take, "use at most N records");

    auto* evg = app.add_subcommand("eval-ground", "pointing-game report");
    add_common(evg, common);
    evg->add_option("--model", model_path, "checkpoint file")->required();
    evg->add_option("--data", data, "dataset file")->required();
    evg->add_option("--boxes", boxes_path, "planted-box sidecar")->required();
    evg->add_option("--skip", skip, "skip the first N records");
    evg->add_option("--take", take, "use at most N records");

    auto* chk = app.add_subcommand("check-grad", "finite-difference gradient suite");
    add_common(chk, common);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_synth(common, studies_override);
        if (rel->parsed()) return cmd_relabel(common, data, batch_override, texts_override, baseline);
        if (train->parsed()) return cmd_train(common, data, steps_override, skip, take, baseline);
        if (grd->parsed()) return cmd_ground(common, model_path, image_ref, prompt, image_root);
        if (cls->parsed()) return cmd_classify(common, model_path, image_ref, image_root, concepts);
        if (ev->parsed()) return cmd_eval(common, model_path, data, skip, take);
        if (evg->parsed()) return cmd_eval_ground(common, model_path, data, boxes_path, skip, take);
        if (chk->parsed()) return cmd_check_grad(common);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
