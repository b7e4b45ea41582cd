#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "smartguard/ingest.hpp"
#include "smartguard/types.hpp"

namespace smartguard {

struct UnknownThread : Error {
    explicit UnknownThread(const std::string& tid)
        : Error("unknown thread: " + tid) {}
};

struct Node {
    int id = -1;
    NodeKind kind = NodeKind::FileOrAddress;
    std::string name;

    bool operator==(const Node&) const = default;
};

struct Edge {
    int src = -1;
    int dst = -1;
    RelationKind relation = RelationKind::READ;
    long long ts = 0;
    std::string tid;
    bool synthetic = false;  // process->thread / thread->list wiring, not a record

    bool operator==(const Edge&) const = default;
};

/// Typed multigraph of a session. `edges` holds one edge per deduplicated
/// record plus the synthetic wiring edges (flagged). Nodes are unique per
/// (kind, name) with dense ids.
struct KnowledgeGraph {
    std::vector<Node> nodes;
    std::vector<Edge> edges;
    std::map<std::string, int> thread_roots;   // tid -> ThreadStart node id
    std::map<std::string, int> process_roots;  // pid -> Process node id
    std::map<std::string, int> read_lists;     // tid -> ReadList node id
    std::map<std::string, int> write_lists;    // tid -> WriteList node id
    std::vector<std::string> thread_order;     // first-event order

    int find_node(NodeKind kind, const std::string& name) const;
    int record_edge_count() const;

    bool is_structural_node(int id) const;
};

KnowledgeGraph build_graph(const Session& session);

/// Induced per-thread view: nodes touched by this thread's edges plus the
/// thread's root and list nodes; edge ids are indices into g.edges.
struct ThreadSubgraph {
    std::string tid;
    std::vector<int> node_ids;
    std::vector<int> edge_ids;
    int root = -1;
};

std::vector<ThreadSubgraph> partition_threads(const KnowledgeGraph& g);

/// Entity nodes present in both threads' subgraphs (roots and list nodes
/// excluded). Throws UnknownThread.
std::set<int> shared_entities(const KnowledgeGraph& g, const std::string& tid_a,
                              const std::string& tid_b);

std::string graph_to_json(const KnowledgeGraph& g);
KnowledgeGraph graph_from_json(const std::string& text);

}  // namespace smartguard
