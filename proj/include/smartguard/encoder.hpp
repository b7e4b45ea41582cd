#pragma once

#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "smartguard/abstraction.hpp"
#include "smartguard/kg.hpp"
#include "smartguard/token_embedding.hpp"

namespace smartguard {

struct MissingFeature : Error {
    explicit MissingFeature(int node)
        : Error("no feature for node " + std::to_string(node)) {}
};
struct ZeroVector : Error {
    ZeroVector() : Error("zero-norm embedding vector") {}
};
struct EmptyInstance : Error {
    EmptyInstance() : Error("instance has no nodes") {}
};
struct CorpusTooSmall : Error {
    explicit CorpusTooSmall(int n)
        : Error("encoder training needs >= 2 graphs, got " + std::to_string(n)) {}
};

constexpr int kFeatureDim = 2 * kTokenDim;  // type ++ name
constexpr int kHiddenDim = 128;
constexpr int kLayer1Heads = 4;
constexpr int kLayer1HeadDim = kHiddenDim / kLayer1Heads;
constexpr int kEdgeTypeDim = 16;
constexpr int kSelfEdgeType = kNumRelations;  // last row of the edge-type table

struct GatLayerParams {
    // One entry per head: W is out_dim x in_dim, the attention vector is
    // split into its source, destination, and edge-type parts.
    std::vector<Eigen::MatrixXd> W;
    std::vector<Eigen::VectorXd> a_src;
    std::vector<Eigen::VectorXd> a_dst;
    std::vector<Eigen::VectorXd> a_edge;
};

struct EncoderParams {
    GatLayerParams layer1;                // 4 heads, 100 -> 4x32
    GatLayerParams layer2;                // 1 head, 128 -> 128
    Eigen::MatrixXd edge_type_table;      // (kNumRelations+1) x 16, last = self-loop
    Eigen::VectorXd pool_w;               // 128, attention scorer
    double pool_b = 0.0;
    std::uint64_t rng_seed = 0;

    /// Visits every parameter tensor in a fixed order (Adam state,
    /// serialization, and gradient checks all rely on this order).
    void for_each_tensor(
        const std::function<void(const std::string&, Eigen::MatrixXd&)>& fn);
};

EncoderParams init_encoder(std::uint64_t seed);
EncoderParams zero_like(const EncoderParams& params);

/// Node features per graph node id: exact concat(type vector, name vector).
Eigen::MatrixXd init_features(const KnowledgeGraph& g, const TokenEmbeddings& tok);

/// Dense local view of a (sub)graph prepared for the encoder.
struct EncGraph {
    struct Entry {
        int j;      // local neighbor index
        int etype;  // relation index, or kSelfEdgeType
    };
    Eigen::MatrixXd features;                 // n x 100
    std::vector<std::vector<Entry>> entries;  // per node, self entry included
    std::vector<NodeKind> kinds;
    std::vector<std::vector<int>> adj;        // simple undirected adjacency
    std::set<std::string> key_entities;       // names anchoring pooled positives
};

/// Whole-graph view; node order follows graph node ids.
EncGraph make_enc_graph(const KnowledgeGraph& g, const TokenEmbeddings& tok);
/// Instance view restricted to the instance's node and edge sets.
EncGraph make_enc_graph(const KnowledgeGraph& g, const TokenEmbeddings& tok,
                        const BehaviorInstance& inst);

struct ForwardCache {
    struct Layer {
        std::vector<Eigen::MatrixXd> Z;                    // per head, n x d'
        std::vector<std::vector<Eigen::VectorXd>> scores;  // [head][node] pre-LeakyReLU
        std::vector<std::vector<Eigen::VectorXd>> alpha;   // [head][node] softmax
        Eigen::MatrixXd pre_act;                           // n x out (pre-ELU)
        Eigen::MatrixXd out;                               // n x out
    };
    Eigen::MatrixXd input;
    Layer l1, l2;
};

/// Two-layer edge-aware GAT forward pass; returns n x 128 node embeddings.
Eigen::MatrixXd gat_forward(const EncoderParams& params, const EncGraph& g,
                            ForwardCache* cache = nullptr);

struct PoolResult {
    Eigen::VectorXd v;        // 128
    Eigen::VectorXd weights;  // n, softmax of pool scores
};

PoolResult attention_pool(const EncoderParams& params, const Eigen::MatrixXd& h);

/// (cos + 1) / 2, the similarity used by the loss and the mock classifier.
double sigma_cos(const Eigen::VectorXd& x, const Eigen::VectorXd& y);

using Pair = std::pair<int, int>;

/// Eq.-style contrastive loss over node embeddings. Accumulates dL/dh
/// into d_h when given. Sigma is clamped to [1e-6, 1-1e-6] inside the logs.
double contrastive_loss(const Eigen::MatrixXd& h, const std::vector<Pair>& positives,
                        const std::vector<Pair>& negatives,
                        Eigen::MatrixXd* d_h = nullptr);

/// Backward passes. Gradients accumulate into `grads` (same tensor layout).
void pool_backward(const EncoderParams& params, const Eigen::MatrixXd& h,
                   const PoolResult& pool, const Eigen::VectorXd& d_v,
                   Eigen::MatrixXd& d_h, EncoderParams& grads);
void gat_backward(const EncoderParams& params, const EncGraph& g,
                  const ForwardCache& cache, const Eigen::MatrixXd& d_h,
                  EncoderParams& grads);

struct EncoderTrainConfig {
    int epochs = 20;
    int batch = 64;
    double lr = 0.01;
    double decay = 0.98;
    std::uint64_t seed = 17;
};

struct EncoderTrainResult {
    EncoderParams params;
    std::vector<double> epoch_loss;  // mean per-pair loss per epoch
};

/// Contrastive pair selection: per node, the graph-hop-nearest same-kind
/// node (tie: smallest index) is the positive; one non-adjacent,
/// different-kind node per positive is the negative.
std::vector<Pair> nearest_same_kind_pairs(const EncGraph& g);

EncoderTrainResult train_encoder(const std::vector<EncGraph>& corpus,
                                 const EncoderTrainConfig& config = {});

Eigen::VectorXd embed_behavior(const EncoderParams& params, const TokenEmbeddings& tok,
                               const KnowledgeGraph& g, const BehaviorInstance& inst);

std::string encoder_to_json(const EncoderParams& params, std::uint64_t config_hash = 0);
EncoderParams encoder_from_json(const std::string& text);

}  // namespace smartguard
