#include "smartguard/kg.hpp"

#include <algorithm>

#include "json.hpp"

namespace smartguard {

using nlohmann::json;

int KnowledgeGraph::find_node(NodeKind kind, const std::string& name) const {
    for (const auto& n : nodes)
        if (n.kind == kind && n.name == name) return n.id;
    return -1;
}

int KnowledgeGraph::record_edge_count() const {
    int count = 0;
    for (const auto& e : edges)
        if (!e.synthetic) ++count;
    return count;
}

bool KnowledgeGraph::is_structural_node(int id) const {
    NodeKind k = nodes[id].kind;
    return k == NodeKind::ThreadStart || k == NodeKind::ReadList ||
           k == NodeKind::WriteList || k == NodeKind::Process;
}

namespace {

struct GraphBuilder {
    KnowledgeGraph g;
    std::map<std::pair<int, std::string>, int> index;  // (kind, name) -> id

    int intern(NodeKind kind, const std::string& name) {
        auto key = std::make_pair(static_cast<int>(kind), name);
        auto it = index.find(key);
        if (it != index.end()) return it->second;
        int id = static_cast<int>(g.nodes.size());
        g.nodes.push_back(Node{id, kind, name});
        index.emplace(key, id);
        return id;
    }
};

}  // namespace

KnowledgeGraph build_graph(const Session& session) {
    GraphBuilder b;

    // Roots and per-thread list nodes first, in thread order.
    for (const std::string& tid : session.thread_order) {
        const auto& idxs = session.by_tid.at(tid);
        const AuditRecord& first = session.records[idxs.front()];
        int proc = b.intern(NodeKind::Process, first.pid);
        int root = b.intern(NodeKind::ThreadStart, tid);
        int rl = b.intern(NodeKind::ReadList, "readlist#" + tid);
        int wl = b.intern(NodeKind::WriteList, "writelist#" + tid);
        b.g.process_roots.emplace(first.pid, proc);
        b.g.thread_roots.emplace(tid, root);
        b.g.read_lists.emplace(tid, rl);
        b.g.write_lists.emplace(tid, wl);
        b.g.edges.push_back(Edge{proc, root, RelationKind::CREATE, first.ts, tid, true});
        b.g.edges.push_back(Edge{root, rl, RelationKind::LINK, first.ts, tid, true});
        b.g.edges.push_back(Edge{root, wl, RelationKind::LINK, first.ts, tid, true});
        // Anchor the thread's first entity under its root.
        int head = b.intern(first.head.kind, first.head.name);
        b.g.edges.push_back(Edge{root, head, RelationKind::LINK, first.ts, tid, true});
    }

    for (const AuditRecord& rec : session.records) {
        int src = b.intern(rec.head.kind, rec.head.name);
        int dst = b.intern(rec.tail.kind, rec.tail.name);
        b.g.edges.push_back(Edge{src, dst, rec.relation, rec.ts, rec.tid, false});
    }
    b.g.thread_order = session.thread_order;
    return b.g;
}

std::vector<ThreadSubgraph> partition_threads(const KnowledgeGraph& g) {
    std::vector<ThreadSubgraph> subs;
    for (const std::string& tid : g.thread_order) {
        ThreadSubgraph sub;
        sub.tid = tid;
        sub.root = g.thread_roots.at(tid);
        std::set<int> nodes{sub.root, g.read_lists.at(tid), g.write_lists.at(tid)};
        for (int i = 0; i < static_cast<int>(g.edges.size()); ++i) {
            const Edge& e = g.edges[i];
            if (e.tid != tid || e.synthetic) continue;
            sub.edge_ids.push_back(i);
            nodes.insert(e.src);
            nodes.insert(e.dst);
        }
        sub.node_ids.assign(nodes.begin(), nodes.end());
        subs.push_back(std::move(sub));
    }
    return subs;
}

std::set<int> shared_entities(const KnowledgeGraph& g, const std::string& tid_a,
                              const std::string& tid_b) {
    if (!g.thread_roots.count(tid_a)) throw UnknownThread(tid_a);
    if (!g.thread_roots.count(tid_b)) throw UnknownThread(tid_b);
    auto entity_set = [&](const std::string& tid) {
        std::set<int> out;
        for (const Edge& e : g.edges) {
            if (e.tid != tid || e.synthetic) continue;
            if (!g.is_structural_node(e.src)) out.insert(e.src);
            if (!g.is_structural_node(e.dst)) out.insert(e.dst);
        }
        return out;
    };
    std::set<int> a = entity_set(tid_a), b = entity_set(tid_b), out;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(),
                          std::inserter(out, out.begin()));
    return out;
}

std::string graph_to_json(const KnowledgeGraph& g) {
    json obj;
    obj["nodes"] = json::array();
    for (const auto& n : g.nodes)
        obj["nodes"].push_back({{"id", n.id}, {"kind", to_string(n.kind)}, {"name", n.name}});
    obj["edges"] = json::array();
    for (const auto& e : g.edges)
        obj["edges"].push_back({{"src", e.src},
                                {"dst", e.dst},
                                {"relation", to_string(e.relation)},
                                {"ts", e.ts},
                                {"tid", e.tid},
                                {"synthetic", e.synthetic}});
    obj["thread_roots"] = g.thread_roots;
    obj["process_roots"] = g.process_roots;
    obj["read_lists"] = g.read_lists;
    obj["write_lists"] = g.write_lists;
    obj["thread_order"] = g.thread_order;
    return obj.dump();
}

KnowledgeGraph graph_from_json(const std::string& text) {
    json obj = json::parse(text);
    KnowledgeGraph g;
    for (const auto& n : obj.at("nodes")) {
        auto kind = node_kind_from_string(n.at("kind").get<std::string>());
        if (!kind) throw UnknownKind(n.at("kind").get<std::string>());
        g.nodes.push_back(Node{n.at("id").get<int>(), *kind, n.at("name").get<std::string>()});
    }
    for (const auto& e : obj.at("edges")) {
        auto rel = relation_from_string(e.at("relation").get<std::string>());
        if (!rel) throw UnknownRelation(e.at("relation").get<std::string>());
        g.edges.push_back(Edge{e.at("src").get<int>(), e.at("dst").get<int>(), *rel,
                               e.at("ts").get<long long>(), e.at("tid").get<std::string>(),
                               e.at("synthetic").get<bool>()});
    }
    g.thread_roots = obj.at("thread_roots").get<std::map<std::string, int>>();
    g.process_roots = obj.at("process_roots").get<std::map<std::string, int>>();
    g.read_lists = obj.at("read_lists").get<std::map<std::string, int>>();
    g.write_lists = obj.at("write_lists").get<std::map<std::string, int>>();
    g.thread_order = obj.at("thread_order").get<std::vector<std::string>>();
    return g;
}

}  // namespace smartguard
