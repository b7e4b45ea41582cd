#pragma once

#include <string>
#include <vector>

#include "smartguard/evalgen.hpp"

namespace smartguard {

struct ConfigError : Error {
    using Error::Error;
};
struct ArtifactMismatch : Error {
    explicit ArtifactMismatch(const std::string& path)
        : Error("artifact was produced under a different config: " + path) {}
};
struct StageFailure : Error {
    StageFailure(const std::string& stage_name, const std::string& what)
        : Error("stage " + stage_name + ": " + what), stage(stage_name) {}
    std::string stage;
};

struct PipelineConfig {
    // Paths
    std::string input;              // dataset directory; generated when empty
    std::string workdir = "work";

    // Generation
    std::string scenarios = "all";
    int n_per_class = 200;
    double train_fraction = 0.9;
    double jitter = 0.15;

    // Abstraction
    int k = 2;
    double theta_support = 0.9;
    double theta_pos = 1.0;

    // Training
    int epochs = 20;
    int batch = 64;
    double lr = 0.01;
    double decay = 0.98;
    std::uint64_t seed = 7;

    // Inference
    double tau = 0.7;
    std::string mode = "mock";         // mock | remote
    std::string prompt_mode = "multi";  // multi | single
    std::string backend_host;
    int backend_port = 0;
    std::string backend_path = "/v1/complete";
};

/// TOML-style key = value parser ('#' comments, optional double quotes).
PipelineConfig parse_config(const std::string& text);
PipelineConfig load_config(const std::string& path);

/// Canonical rendering; the artifact hash is derived from it.
std::string config_to_string(const PipelineConfig& config);
std::uint64_t config_hash(const PipelineConfig& config);

/// Pipeline stages in execution order.
enum class Stage { Gen, Ingest, BuildKg, Extract, TrainEmbed, Embed, Infer, Eval };

const std::vector<Stage>& all_stages();
const char* stage_name(Stage stage);

struct StageReport {
    Stage stage;
    bool skipped = false;
    std::vector<std::string> outputs;
};

struct PipelineResult {
    std::vector<StageReport> stages;
    Metrics metrics;          // populated when Eval ran or was loaded
    std::string report_path;  // empty unless Eval is included
};

/// Runs stages up to and including `upto`, skipping stages whose recorded
/// input content hash is unchanged and whose outputs exist. Artifacts are
/// written atomically (temp + rename) and embed the config hash; loading
/// an artifact with a different hash raises ArtifactMismatch.
PipelineResult run_stages(const PipelineConfig& config, Stage upto,
                          std::ostream* log = nullptr);
PipelineResult run_pipeline(const PipelineConfig& config, std::ostream* log = nullptr);

/// Retrain tokens and encoder on the training split minus the excluded
/// labels, then embed every session's instances with that model. Requires a
/// workdir already populated through the Extract stage. Suits the
/// unknown-attack protocol, where the scored classes were never trained on.
std::vector<std::vector<Eigen::VectorXd>> embed_excluding(
    const PipelineConfig& config, const std::set<std::string>& excluded_labels);

}  // namespace smartguard
