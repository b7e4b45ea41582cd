#pragma once

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "smartguard/abstraction.hpp"
#include "smartguard/encoder.hpp"

namespace smartguard {

struct BackendUnavailable : Error {
    using Error::Error;
};
struct MalformedResponse : Error {
    using Error::Error;
};
struct TurnLimitExceeded : Error {
    TurnLimitExceeded() : Error("backend exceeded the turn budget") {}
};
struct OversizeBundle : Error {
    explicit OversizeBundle(size_t size)
        : Error("prompt bundle exceeds the backend limit: " + std::to_string(size)) {}
};
struct EmptyCentroids : Error {
    EmptyCentroids() : Error("no centroids configured") {}
};
struct EmptyClass : Error {
    explicit EmptyClass(const std::string& label) : Error("no examples for label: " + label) {}
};

enum class PromptMode { SingleTurn, MultiTurn };

struct PromptBundle {
    std::string instruction;
    std::string input;
    PromptMode mode = PromptMode::SingleTurn;

    // Structured view of the same content, consumed by the mock backend.
    std::string summary;
    std::vector<std::string> key_node_names;
    Eigen::VectorXd embedding;
    std::string first_entity;  // earliest entity in the instance, for the path turn
};

/// Rounds half-to-even to 3 decimals and renders "[x1, x2, ...]".
std::string render_embedding(const Eigen::VectorXd& v);

PromptBundle assemble_prompt(const KnowledgeGraph& g, const BehaviorInstance& inst,
                             const Eigen::VectorXd& embedding, PromptMode mode,
                             size_t max_bytes = 65536);

struct Turn {
    std::string instruction;
    std::string model_output;
};

struct CotTranscript {
    std::vector<Turn> turns;  // 5 in MultiTurn mode, 1 in SingleTurn
};

struct Verdict {
    bool malicious = false;
    std::optional<std::string> category;
    double confidence = 0.0;
    CotTranscript transcript;
};

/// Case-insensitive "No." / "Yes, the category is X" grammar.
std::pair<bool, std::optional<std::string>> parse_verdict(const std::string& text);

struct BackendReply {
    std::string text;
    std::optional<double> confidence;  // mock backends report their score
};

class Backend {
  public:
    virtual ~Backend() = default;
    /// One turn: the bundle plus all prior turns as context. The turn
    /// index is the size of the history.
    virtual BackendReply respond(const PromptBundle& bundle, const std::string& instruction,
                                 const std::vector<Turn>& history) = 0;
};

struct Centroids {
    std::map<std::string, Eigen::VectorXd> by_label;  // unit-normalized
    double tau = 0.7;
    std::string benign_label = "Benign";
};

/// Nearest-centroid scan under sigma_cos; ties broken lexicographically.
/// Benign argmax or a best score below tau yields a benign verdict.
std::tuple<bool, std::optional<std::string>, double> mock_classify(
    const Eigen::VectorXd& embedding, const Centroids& centroids);

/// Incremental per-label mean of unit-normalized embeddings.
class CentroidFitter {
  public:
    void add(const std::string& label, const Eigen::VectorXd& embedding);
    void add_all(const std::map<std::string, std::vector<Eigen::VectorXd>>& labeled);
    Centroids centroids(double tau = 0.7, const std::string& benign_label = "Benign") const;
    bool has_label(const std::string& label) const { return sums_.count(label) > 0; }
    std::vector<std::string> labels() const;

  private:
    std::map<std::string, Eigen::VectorXd> sums_;
    std::map<std::string, int> counts_;
};

Centroids fit_centroids(const std::map<std::string, std::vector<Eigen::VectorXd>>& labeled,
                        double tau = 0.7, const std::string& benign_label = "Benign");

/// Deterministic offline backend: classification via centroids, reasoning
/// turns via templates over the bundle's structured view.
class MockBackend : public Backend {
  public:
    explicit MockBackend(Centroids centroids) : centroids_(std::move(centroids)) {}
    BackendReply respond(const PromptBundle& bundle, const std::string& instruction,
                         const std::vector<Turn>& history) override;

  private:
    Centroids centroids_;
};

/// Minimal chat endpoint client: POST {system, messages[]} -> {text}.
class RemoteBackend : public Backend {
  public:
    RemoteBackend(std::string host, int port, std::string path,
                  std::string auth_token = "");
    BackendReply respond(const PromptBundle& bundle, const std::string& instruction,
                         const std::vector<Turn>& history) override;

  private:
    std::string host_;
    int port_;
    std::string path_;
    std::string auth_token_;
};

/// The five reasoning-turn instructions, in protocol order.
const std::vector<std::string>& cot_instructions();

struct CotPolicy {
    double tau = 0.7;
    double hallucination_band = 0.05;  // near-threshold gate width
    std::set<std::string> label_set;   // enforced when non-empty
};

/// Drives the protocol: five turns in MultiTurn mode, one in SingleTurn.
/// A near-threshold "Yes" is downgraded when the sensitive-node turn
/// reported none.
Verdict run_cot(const PromptBundle& bundle, Backend& backend, const CotPolicy& policy = {});

std::string centroids_to_json(const Centroids& centroids);
Centroids centroids_from_json(const std::string& text);
std::string verdicts_to_json(const std::vector<Verdict>& verdicts);
std::vector<Verdict> verdicts_from_json(const std::string& text);

}  // namespace smartguard
