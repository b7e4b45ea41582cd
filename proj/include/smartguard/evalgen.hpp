#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "smartguard/inference.hpp"

namespace smartguard {

struct InfeasibleSpec : Error {
    explicit InfeasibleSpec(const std::string& label)
        : Error("targets below motif size for scenario: " + label) {}
};
struct MissingVerdict : Error {
    explicit MissingVerdict(size_t session)
        : Error("no verdict for session " + std::to_string(session)) {}
};
struct HoldoutTooLarge : Error {
    HoldoutTooLarge() : Error("holdout leaves no attack classes to train on") {}
};

constexpr const char* kBenignLabel = "Benign";

struct MotifEdge {
    EntityRef head;
    RelationKind relation;
    EntityRef tail;
};

struct ScenarioSpec {
    std::string label;
    std::vector<MotifEdge> motif;  // empty only for the benign spec
    int target_nodes = 0;          // mean entity-node count
    int target_edges = 0;          // mean record count
    double jitter = 0.15;
};

/// The nine attack scenarios plus benign traffic. Node/edge targets follow
/// the per-scenario graph statistics.
std::vector<ScenarioSpec> builtin_scenarios(double jitter = 0.15);
const ScenarioSpec& scenario_by_label(const std::vector<ScenarioSpec>& specs,
                                      const std::string& label);

/// The routine file-operation patterns seeded into benign filler so noise
/// profiling has something to find.
struct TrivialEvent {
    std::string process;
    RelationKind relation;
    std::string object;
};
const std::vector<TrivialEvent>& builtin_trivial_events();

struct GeneratedSession {
    std::string events_jsonl;
    std::set<std::string> gt_entities;  // names of malicious motif entities
    std::string label;
};

GeneratedSession generate_session(const ScenarioSpec& spec, std::uint64_t seed);

struct LabeledSession {
    std::string label;
    std::string events_jsonl;
    std::set<std::string> gt_entities;
    bool train = false;
};

struct LabeledDataset {
    std::vector<LabeledSession> sessions;
    std::vector<std::string> labels;  // class order
    double train_fraction = 0.9;
};

LabeledDataset build_dataset(const std::vector<ScenarioSpec>& specs, int n_per_class,
                             double train_fraction = 0.9, std::uint64_t seed = 7);

struct SessionPrediction {
    bool malicious = false;
    std::optional<std::string> category;
    double confidence = 0.0;
};

struct Metrics {
    struct PRF {
        int tp = 0, fp = 0, fn = 0;
        double precision = 0.0, recall = 0.0, f1 = 0.0;
    };
    std::map<std::string, PRF> per_label;
    double macro_precision = 0.0, macro_recall = 0.0, macro_f1 = 0.0;  // attack labels
    std::map<std::string, std::map<std::string, int>> confusion;       // true -> pred
    PRF binary;  // attack vs benign
};

Metrics evaluate(const std::vector<SessionPrediction>& predictions,
                 const std::vector<const LabeledSession*>& sessions);

/// Per-session view consumed by the evaluation harness: one summary and
/// one embedding per behavior instance, with the instance that carries the
/// class signal marked (ground-truth overlap for training sessions,
/// largest instance otherwise).
struct AbstractedSession {
    const LabeledSession* meta = nullptr;
    std::vector<std::string> summaries;
    std::vector<Eigen::VectorXd> embeddings;
    int primary = -1;
};

/// Hashed bag-of-token vector of a summary (the text-only ablation arm).
Eigen::VectorXd bow_vector(const std::string& summary, int dim = 512);

/// Fits per-class centroids on the train split (primary instances) and
/// classifies test sessions: a session is malicious when any of its
/// instances lands on an attack centroid above tau.
enum class AblationMode { Full, TextOnly };

Centroids fit_dataset_centroids(const std::vector<AbstractedSession>& sessions,
                                AblationMode mode, double tau,
                                const std::set<std::string>& skip_labels = {});
std::vector<SessionPrediction> classify_sessions(
    const std::vector<AbstractedSession>& sessions, const Centroids& centroids,
    AblationMode mode);

Metrics ablation_run(const std::vector<AbstractedSession>& sessions, AblationMode mode,
                     double tau = 0.7);

struct UnknownAttackResult {
    Metrics binary_holdout;       // attack-vs-benign on holdout + benign test sessions
    Metrics after_incremental;    // per-category after the expert examples are added
};

/// Per-session replacement embeddings from an encoder trained without the
/// excluded labels; outer index matches the session list, inner the
/// session's instances.
using ReembedFn = std::function<std::vector<std::vector<Eigen::VectorXd>>(
    const std::set<std::string>& excluded_labels)>;

/// Holdout classes are dropped from training; an "Attack" super-centroid
/// (mean of attack centroids) covers them for the binary phase. The second
/// phase adds n_expert train examples per holdout class incrementally.
/// When reembed is given, scoring uses embeddings from an encoder that never
/// saw the holdout classes, matching how an unseen attack would present.
UnknownAttackResult unknown_attack_protocol(const std::vector<AbstractedSession>& sessions,
                                            const std::set<std::string>& holdout_labels,
                                            int n_expert = 20, double tau = 0.7,
                                            const ReembedFn& reembed = nullptr);

std::string metrics_to_json(const Metrics& metrics);
Metrics metrics_from_json(const std::string& text);

/// Directory layout: manifest.json plus one events file per session.
void save_dataset(const LabeledDataset& ds, const std::string& dir);
LabeledDataset load_dataset(const std::string& dir);

}  // namespace smartguard
