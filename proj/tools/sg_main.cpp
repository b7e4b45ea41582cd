#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "smartguard/evalgen.hpp"
#include "smartguard/pipeline.hpp"

namespace {

using namespace smartguard;

PipelineConfig load_or_default(const std::string& config_path) {
    if (config_path.empty()) return PipelineConfig{};
    return load_config(config_path);
}

void print_metrics(const Metrics& m, std::ostream& out) {
    out << metrics_to_json(m) << "\n";
}

int run_upto(const std::string& config_path, Stage stage) {
    PipelineConfig config = load_or_default(config_path);
    PipelineResult result = run_stages(config, stage, &std::cerr);
    if (stage == Stage::Eval) print_metrics(result.metrics, std::cout);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Audit-log behavior abstraction and attack inference pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("--config", config_path, "TOML-style key = value config file");

    struct {
        std::string scenarios = "all";
        int n = 200;
        std::uint64_t seed = 7;
        std::string out = "data";
        double jitter = 0.15;
        double train_fraction = 0.9;
    } gen_opts;
    auto* gen = app.add_subcommand("gen", "Generate a labeled synthetic dataset");
    gen->add_option("--scenarios", gen_opts.scenarios, "'all' or comma-separated labels");
    gen->add_option("--n", gen_opts.n, "Sessions per class");
    gen->add_option("--seed", gen_opts.seed, "Generation seed");
    gen->add_option("--out", gen_opts.out, "Output dataset directory");
    gen->add_option("--jitter", gen_opts.jitter, "Node/edge count jitter fraction");
    gen->add_option("--train-fraction", gen_opts.train_fraction, "Train split fraction");

    struct {
        std::string verdicts;
        std::string dataset;
        std::string report;
    } eval_opts;
    auto* eval_cmd = app.add_subcommand("eval", "Score verdicts against a dataset");
    eval_cmd->add_option("--verdicts", eval_opts.verdicts, "verdicts.json from infer");
    eval_cmd->add_option("--dataset", eval_opts.dataset, "Dataset directory");
    eval_cmd->add_option("--report", eval_opts.report, "Report output path");

    auto* ingest = app.add_subcommand("ingest", "Parse and normalize sessions");
    auto* build_kg = app.add_subcommand("build-kg", "Build knowledge graphs");
    auto* extract = app.add_subcommand("extract", "Extract denoised behavior instances");
    auto* train_embed = app.add_subcommand("train-embed", "Train token + graph encoders");
    auto* embed = app.add_subcommand("embed", "Embed behavior instances");
    auto* infer = app.add_subcommand("infer", "Classify test sessions");
    auto* run = app.add_subcommand("run", "Full pipeline end to end");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            auto all = builtin_scenarios(gen_opts.jitter);
            std::vector<ScenarioSpec> specs;
            if (gen_opts.scenarios == "all") {
                specs = all;
            } else {
                std::istringstream in(gen_opts.scenarios);
                std::string label;
                while (std::getline(in, label, ','))
                    if (!label.empty()) specs.push_back(scenario_by_label(all, label));
            }
            LabeledDataset ds = build_dataset(specs, gen_opts.n, gen_opts.train_fraction,
                                              gen_opts.seed);
            save_dataset(ds, gen_opts.out);
            std::cerr << "wrote " << ds.sessions.size() << " sessions to " << gen_opts.out
                      << "\n";
            return 0;
        }
        if (eval_cmd->parsed() && !eval_opts.verdicts.empty()) {
            // Standalone scoring of an existing verdicts file.
            LabeledDataset ds = load_dataset(eval_opts.dataset);
            std::ifstream in(eval_opts.verdicts, std::ios::binary);
            if (!in) throw Error("cannot read verdicts: " + eval_opts.verdicts);
            nlohmann::json obj = nlohmann::json::parse(in);
            const nlohmann::json& payload =
                obj.is_object() && obj.contains("payload") ? obj["payload"] : obj;
            std::vector<SessionPrediction> preds;
            std::vector<const LabeledSession*> metas;
            for (const auto& v : payload) {
                size_t idx = v.at("session").get<size_t>();
                if (idx >= ds.sessions.size()) throw MissingVerdict(idx);
                SessionPrediction pred;
                pred.malicious = v.at("malicious").get<bool>();
                if (v.contains("category"))
                    pred.category = v["category"].get<std::string>();
                pred.confidence = v.at("confidence").get<double>();
                preds.push_back(std::move(pred));
                metas.push_back(&ds.sessions[idx]);
            }
            Metrics metrics = evaluate(preds, metas);
            std::string text = metrics_to_json(metrics);
            if (!eval_opts.report.empty()) {
                std::ofstream out(eval_opts.report, std::ios::binary);
                out << text << "\n";
                if (!out) throw Error("cannot write report: " + eval_opts.report);
            }
            std::cout << text << "\n";
            return 0;
        }
        if (eval_cmd->parsed()) return run_upto(config_path, Stage::Eval);
        if (ingest->parsed()) return run_upto(config_path, Stage::Ingest);
        if (build_kg->parsed()) return run_upto(config_path, Stage::BuildKg);
        if (extract->parsed()) return run_upto(config_path, Stage::Extract);
        if (train_embed->parsed()) return run_upto(config_path, Stage::TrainEmbed);
        if (embed->parsed()) return run_upto(config_path, Stage::Embed);
        if (infer->parsed()) return run_upto(config_path, Stage::Infer);
        if (run->parsed()) return run_upto(config_path, Stage::Eval);
    } catch (const smartguard::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
