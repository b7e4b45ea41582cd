#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "smartguard/kg.hpp"

namespace smartguard {

struct EmptyGraph : Error {
    EmptyGraph() : Error("subgraph has no nodes") {}
};
struct OnlyStructuralNodes : Error {
    OnlyStructuralNodes() : Error("subgraph has no entity nodes") {}
};
struct InsufficientCorpus : Error {
    explicit InsufficientCorpus(int n)
        : Error("noise profiling needs >= 10 sessions, got " + std::to_string(n)) {}
};

struct CentralityScores {
    std::map<int, double> scores;  // node id -> centrality, L2-normalized
    double lambda = 0.0;           // Rayleigh-quotient dominant eigenvalue
};

/// Power iteration on the symmetrized 0/1 adjacency of the subgraph
/// (record edges only), uniform start, L2 normalization per step,
/// until the infinity-norm step delta drops below 1e-8 or 100 iterations.
CentralityScores compute_centrality(const KnowledgeGraph& g, const ThreadSubgraph& sub);

/// Argmax-centrality entity node; structural nodes excluded, ties broken
/// by smallest node id.
int select_key_node(const CentralityScores& scores, const KnowledgeGraph& g,
                    const ThreadSubgraph& sub);

struct BehaviorInstance {
    int id = -1;
    std::set<std::string> tids;
    std::vector<int> key_nodes;  // one per member thread, in thread order
    std::set<int> node_ids;
    std::vector<int> edge_ids;   // record edges, indices into graph.edges
    std::vector<std::pair<std::string, std::string>> readlist_labels;   // (relation, name)
    std::vector<std::pair<std::string, std::string>> writelist_labels;
    std::string summary;
};

/// Thread grouping by key-node reachability: threads whose key nodes are
/// within k undirected hops of each other (transitively) become one
/// instance; the instance subgraph is the union of member thread subgraphs.
std::vector<BehaviorInstance> form_instances(const KnowledgeGraph& g, int k = 2);

/// Absorbs any instance whose node set is a subset of another's,
/// unioning tids and key nodes, until no subset pairs remain.
std::vector<BehaviorInstance> merge_subsets(std::vector<BehaviorInstance> instances);

struct NoiseProfile {
    struct Pattern {
        std::string process;  // head entity name
        RelationKind relation = RelationKind::READ;
        std::string object;   // tail entity name
        double support = 0.0;
        double position_variance = 0.0;

        auto tie() const { return std::make_tuple(process, static_cast<int>(relation), object); }
    };
    std::vector<Pattern> trivial_patterns;
    double theta_support = 0.9;
    double theta_pos = 1.0;

    bool matches(const std::string& head, RelationKind rel, const std::string& tail) const;
};

/// Mines trivial patterns over a corpus: a (process, relation, object)
/// triple is trivial when it occurs in at least theta_support of the
/// sessions containing that process and its ordinal position within the
/// process's event sequence has variance at most theta_pos.
NoiseProfile profile_noise(const std::vector<KnowledgeGraph>& sessions,
                           double theta_support = 0.9, double theta_pos = 1.0);

/// Moves trivial edges out of the instance subgraph into the read/write
/// list labels. Key nodes are never dropped; idempotent.
BehaviorInstance filter_noise(const KnowledgeGraph& g, BehaviorInstance inst,
                              const NoiseProfile& profile);

/// Deterministic template rendering of the instance's edges in time order.
std::string summarize(const KnowledgeGraph& g, const BehaviorInstance& inst);

std::string instances_to_json(const std::vector<BehaviorInstance>& instances);
std::vector<BehaviorInstance> instances_from_json(const std::string& text);
std::string profile_to_json(const NoiseProfile& profile);
NoiseProfile profile_from_json(const std::string& text);

}  // namespace smartguard
