#include "smartguard/abstraction.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>

#include <Eigen/Dense>

#include "json.hpp"

namespace smartguard {

using nlohmann::json;

CentralityScores compute_centrality(const KnowledgeGraph& g, const ThreadSubgraph& sub) {
    const int n = static_cast<int>(sub.node_ids.size());
    if (n == 0) throw EmptyGraph();

    std::map<int, int> local;  // graph node id -> local index
    for (int i = 0; i < n; ++i) local[sub.node_ids[i]] = i;

    Eigen::MatrixXd adj = Eigen::MatrixXd::Zero(n, n);
    for (int eid : sub.edge_ids) {
        const Edge& e = g.edges[eid];
        if (e.synthetic) continue;
        int u = local.at(e.src), v = local.at(e.dst);
        adj(u, v) = 1.0;
        adj(v, u) = 1.0;
    }

    // Shifted iteration (A + I) keeps the eigenvectors of A while making
    // the dominant eigenvalue strictly largest in magnitude, so bipartite
    // subgraphs (paths, stars) converge too.
    Eigen::VectorXd x = Eigen::VectorXd::Constant(n, 1.0 / std::sqrt(double(n)));
    for (int iter = 0; iter < 100; ++iter) {
        Eigen::VectorXd y = adj * x + x;
        double norm = y.norm();
        if (norm == 0.0) break;
        y /= norm;
        double delta = (y - x).lpNorm<Eigen::Infinity>();
        x = y;
        if (delta < 1e-8) break;
    }

    CentralityScores out;
    out.lambda = x.dot(adj * x);
    for (int i = 0; i < n; ++i) out.scores[sub.node_ids[i]] = x(i);
    return out;
}

int select_key_node(const CentralityScores& scores, const KnowledgeGraph& g,
                    const ThreadSubgraph& sub) {
    int best = -1;
    double best_score = -1.0;
    for (int id : sub.node_ids) {
        if (g.is_structural_node(id)) continue;
        double s = scores.scores.at(id);
        if (s > best_score || (s == best_score && best >= 0 && id < best)) {
            best = id;
            best_score = s;
        }
    }
    if (best < 0) throw OnlyStructuralNodes();
    return best;
}

namespace {

/// Undirected adjacency over record edges, skipping structural nodes.
std::vector<std::vector<int>> entity_adjacency(const KnowledgeGraph& g) {
    std::vector<std::vector<int>> adj(g.nodes.size());
    for (const Edge& e : g.edges) {
        if (e.synthetic) continue;
        if (g.is_structural_node(e.src) || g.is_structural_node(e.dst)) continue;
        adj[e.src].push_back(e.dst);
        adj[e.dst].push_back(e.src);
    }
    return adj;
}

std::map<int, int> bfs_distances(const std::vector<std::vector<int>>& adj, int start,
                                 int max_depth) {
    std::map<int, int> dist{{start, 0}};
    std::queue<int> q;
    q.push(start);
    while (!q.empty()) {
        int u = q.front();
        q.pop();
        if (dist[u] >= max_depth) continue;
        for (int v : adj[u]) {
            if (!dist.count(v)) {
                dist[v] = dist[u] + 1;
                q.push(v);
            }
        }
    }
    return dist;
}

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    int find(int x) { return parent[x] == x ? x : parent[x] = find(parent[x]); }
    void unite(int a, int b) { parent[find(a)] = find(b); }
};

}  // namespace

std::vector<BehaviorInstance> form_instances(const KnowledgeGraph& g, int k) {
    auto subs = partition_threads(g);
    const int t = static_cast<int>(subs.size());
    std::vector<int> key(t, -1);
    for (int i = 0; i < t; ++i) {
        auto scores = compute_centrality(g, subs[i]);
        key[i] = select_key_node(scores, g, subs[i]);
    }

    auto adj = entity_adjacency(g);
    UnionFind uf(t);
    for (int i = 0; i < t; ++i) {
        auto dist = bfs_distances(adj, key[i], k);
        for (int j = 0; j < t; ++j) {
            if (j != i && dist.count(key[j])) uf.unite(i, j);
        }
    }

    std::vector<BehaviorInstance> out;
    std::map<int, int> instance_of_root;  // union-find root -> instance index
    for (int i = 0; i < t; ++i) {
        int root = uf.find(i);
        auto it = instance_of_root.find(root);
        if (it == instance_of_root.end()) {
            BehaviorInstance inst;
            inst.id = static_cast<int>(out.size());
            out.push_back(std::move(inst));
            it = instance_of_root.emplace(root, static_cast<int>(out.size()) - 1).first;
        }
        BehaviorInstance& inst = out[it->second];
        inst.tids.insert(subs[i].tid);
        inst.key_nodes.push_back(key[i]);
        inst.node_ids.insert(subs[i].node_ids.begin(), subs[i].node_ids.end());
        inst.edge_ids.insert(inst.edge_ids.end(), subs[i].edge_ids.begin(),
                             subs[i].edge_ids.end());
    }
    for (auto& inst : out) std::sort(inst.edge_ids.begin(), inst.edge_ids.end());
    return out;
}

std::vector<BehaviorInstance> merge_subsets(std::vector<BehaviorInstance> instances) {
    auto absorb = [](BehaviorInstance& into, const BehaviorInstance& from) {
        into.tids.insert(from.tids.begin(), from.tids.end());
        for (int kn : from.key_nodes) {
            if (std::find(into.key_nodes.begin(), into.key_nodes.end(), kn) ==
                into.key_nodes.end())
                into.key_nodes.push_back(kn);
        }
        into.node_ids.insert(from.node_ids.begin(), from.node_ids.end());
        for (int eid : from.edge_ids) {
            if (std::find(into.edge_ids.begin(), into.edge_ids.end(), eid) ==
                into.edge_ids.end())
                into.edge_ids.push_back(eid);
        }
        std::sort(into.edge_ids.begin(), into.edge_ids.end());
    };

    bool changed = true;
    while (changed) {
        changed = false;
        for (size_t i = 0; i < instances.size() && !changed; ++i) {
            for (size_t j = 0; j < instances.size() && !changed; ++j) {
                if (i == j) continue;
                const auto& a = instances[i].node_ids;
                const auto& b = instances[j].node_ids;
                bool a_in_b = std::includes(b.begin(), b.end(), a.begin(), a.end());
                if (!a_in_b) continue;
                // Equal sets collapse into the lower instance id.
                if (a.size() == b.size() && instances[i].id < instances[j].id) {
                    absorb(instances[i], instances[j]);
                    instances.erase(instances.begin() + j);
                } else {
                    absorb(instances[j], instances[i]);
                    instances.erase(instances.begin() + i);
                }
                changed = true;
            }
        }
    }
    std::sort(instances.begin(), instances.end(),
              [](const BehaviorInstance& a, const BehaviorInstance& b) { return a.id < b.id; });
    return instances;
}

bool NoiseProfile::matches(const std::string& head, RelationKind rel,
                           const std::string& tail) const {
    for (const auto& p : trivial_patterns) {
        if (p.process == head && p.relation == rel && p.object == tail) return true;
    }
    return false;
}

NoiseProfile profile_noise(const std::vector<KnowledgeGraph>& sessions,
                           double theta_support, double theta_pos) {
    if (sessions.size() < 10) throw InsufficientCorpus(static_cast<int>(sessions.size()));

    using Key = std::tuple<std::string, int, std::string>;
    std::map<Key, std::vector<double>> positions;   // first position per session
    std::map<std::string, int> sessions_with_proc;  // head name -> session count

    for (const KnowledgeGraph& g : sessions) {
        // Record edges per head name, in time order.
        std::map<std::string, std::vector<const Edge*>> per_proc;
        for (const Edge& e : g.edges) {
            if (e.synthetic) continue;
            per_proc[g.nodes[e.src].name].push_back(&e);
        }
        for (auto& [proc, edges] : per_proc) {
            ++sessions_with_proc[proc];
            std::stable_sort(edges.begin(), edges.end(),
                             [](const Edge* a, const Edge* b) { return a->ts < b->ts; });
            std::set<Key> seen;
            for (size_t pos = 0; pos < edges.size(); ++pos) {
                Key key{proc, static_cast<int>(edges[pos]->relation),
                        g.nodes[edges[pos]->dst].name};
                if (seen.insert(key).second) positions[key].push_back(double(pos));
            }
        }
    }

    NoiseProfile profile;
    profile.theta_support = theta_support;
    profile.theta_pos = theta_pos;
    for (const auto& [key, pos] : positions) {
        const auto& [proc, rel, obj] = key;
        double support = double(pos.size()) / double(sessions_with_proc.at(proc));
        if (support < theta_support) continue;
        double mean = std::accumulate(pos.begin(), pos.end(), 0.0) / pos.size();
        double var = 0.0;
        for (double p : pos) var += (p - mean) * (p - mean);
        var /= pos.size();
        if (var > theta_pos) continue;
        profile.trivial_patterns.push_back(NoiseProfile::Pattern{
            proc, static_cast<RelationKind>(rel), obj, support, var});
    }
    return profile;
}

namespace {

bool is_write_family(RelationKind rel) {
    switch (rel) {
        case RelationKind::WRITE:
        case RelationKind::MODIFY_FILE_ATTRIBUTES:
        case RelationKind::CREATE:
        case RelationKind::DELETE:
            return true;
        default:
            return false;
    }
}

void dedup_sort_labels(std::vector<std::pair<std::string, std::string>>& labels) {
    std::sort(labels.begin(), labels.end(),
              [](const auto& a, const auto& b) {
                  return a.second != b.second ? a.second < b.second : a.first < b.first;
              });
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
}

}  // namespace

BehaviorInstance filter_noise(const KnowledgeGraph& g, BehaviorInstance inst,
                              const NoiseProfile& profile) {
    std::vector<int> kept;
    for (int eid : inst.edge_ids) {
        const Edge& e = g.edges[eid];
        if (profile.matches(g.nodes[e.src].name, e.relation, g.nodes[e.dst].name)) {
            auto label = std::make_pair(std::string(to_string(e.relation)),
                                        g.nodes[e.dst].name);
            if (is_write_family(e.relation))
                inst.writelist_labels.push_back(std::move(label));
            else
                inst.readlist_labels.push_back(std::move(label));
        } else {
            kept.push_back(eid);
        }
    }
    inst.edge_ids = std::move(kept);
    dedup_sort_labels(inst.readlist_labels);
    dedup_sort_labels(inst.writelist_labels);

    // Drop entity nodes that lost all their edges, except key nodes.
    std::set<int> used;
    for (int eid : inst.edge_ids) {
        used.insert(g.edges[eid].src);
        used.insert(g.edges[eid].dst);
    }
    for (int kn : inst.key_nodes) used.insert(kn);
    std::set<int> nodes;
    for (int id : inst.node_ids) {
        if (g.is_structural_node(id) || used.count(id)) nodes.insert(id);
    }
    inst.node_ids = std::move(nodes);
    return inst;
}

std::string summarize(const KnowledgeGraph& g, const BehaviorInstance& inst) {
    std::vector<int> order = inst.edge_ids;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return g.edges[a].ts != g.edges[b].ts ? g.edges[a].ts < g.edges[b].ts : a < b;
    });

    std::vector<std::string> clauses;
    for (size_t i = 0; i < order.size();) {
        const Edge& e1 = g.edges[order[i]];
        if (i + 1 < order.size()) {
            const Edge& e2 = g.edges[order[i + 1]];
            if (g.nodes[e1.dst].kind == NodeKind::Function && e2.src == e1.dst) {
                clauses.push_back(g.nodes[e1.src].name + " uses " + g.nodes[e1.dst].name +
                                  " to achieve " + to_string(e1.relation) + ", " +
                                  to_string(e2.relation) + "-ing to " + g.nodes[e2.dst].name);
                i += 2;
                continue;
            }
        }
        clauses.push_back(g.nodes[e1.src].name + " " + to_string(e1.relation) + "-s " +
                          g.nodes[e1.dst].name);
        ++i;
    }

    std::string text = "Thread(s) ";
    bool first = true;
    for (const auto& tid : inst.tids) {
        if (!first) text += ",";
        text += tid;
        first = false;
    }
    text += ": ";
    for (size_t i = 0; i < clauses.size(); ++i) {
        if (i) text += "; ";
        text += clauses[i];
    }
    auto render_labels = [](const std::vector<std::pair<std::string, std::string>>& labels) {
        std::string out = "[";
        for (size_t i = 0; i < labels.size(); ++i) {
            if (i) out += ", ";
            out += labels[i].first + " " + labels[i].second;
        }
        return out + "]";
    };
    if (!inst.readlist_labels.empty())
        text += "; Read-List: " + render_labels(inst.readlist_labels);
    if (!inst.writelist_labels.empty())
        text += "; Write-List: " + render_labels(inst.writelist_labels);

    if (text.size() > 2000) text = text.substr(0, 1997) + "…";
    return text;
}

namespace {

json labels_to_json(const std::vector<std::pair<std::string, std::string>>& labels) {
    json arr = json::array();
    for (const auto& [rel, name] : labels) arr.push_back({{"relation", rel}, {"name", name}});
    return arr;
}

std::vector<std::pair<std::string, std::string>> labels_from_json(const json& arr) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& item : arr)
        out.emplace_back(item.at("relation").get<std::string>(),
                         item.at("name").get<std::string>());
    return out;
}

}  // namespace

std::string instances_to_json(const std::vector<BehaviorInstance>& instances) {
    json arr = json::array();
    for (const auto& inst : instances) {
        json obj;
        obj["id"] = inst.id;
        obj["tids"] = inst.tids;
        obj["key_nodes"] = inst.key_nodes;
        obj["node_ids"] = inst.node_ids;
        obj["edge_ids"] = inst.edge_ids;
        obj["readlist_labels"] = labels_to_json(inst.readlist_labels);
        obj["writelist_labels"] = labels_to_json(inst.writelist_labels);
        obj["summary"] = inst.summary;
        arr.push_back(std::move(obj));
    }
    return arr.dump();
}

std::vector<BehaviorInstance> instances_from_json(const std::string& text) {
    json arr = json::parse(text);
    std::vector<BehaviorInstance> out;
    for (const auto& obj : arr) {
        BehaviorInstance inst;
        inst.id = obj.at("id").get<int>();
        inst.tids = obj.at("tids").get<std::set<std::string>>();
        inst.key_nodes = obj.at("key_nodes").get<std::vector<int>>();
        inst.node_ids = obj.at("node_ids").get<std::set<int>>();
        inst.edge_ids = obj.at("edge_ids").get<std::vector<int>>();
        inst.readlist_labels = labels_from_json(obj.at("readlist_labels"));
        inst.writelist_labels = labels_from_json(obj.at("writelist_labels"));
        inst.summary = obj.at("summary").get<std::string>();
        out.push_back(std::move(inst));
    }
    return out;
}

std::string profile_to_json(const NoiseProfile& profile) {
    json obj;
    obj["theta_support"] = profile.theta_support;
    obj["theta_pos"] = profile.theta_pos;
    obj["trivial_patterns"] = json::array();
    for (const auto& p : profile.trivial_patterns)
        obj["trivial_patterns"].push_back({{"process", p.process},
                                           {"relation", to_string(p.relation)},
                                           {"object", p.object},
                                           {"support", p.support},
                                           {"position_variance", p.position_variance}});
    return obj.dump();
}

NoiseProfile profile_from_json(const std::string& text) {
    json obj = json::parse(text);
    NoiseProfile profile;
    profile.theta_support = obj.at("theta_support").get<double>();
    profile.theta_pos = obj.at("theta_pos").get<double>();
    for (const auto& p : obj.at("trivial_patterns")) {
        auto rel = relation_from_string(p.at("relation").get<std::string>());
        if (!rel) throw UnknownRelation(p.at("relation").get<std::string>());
        profile.trivial_patterns.push_back(NoiseProfile::Pattern{
            p.at("process").get<std::string>(), *rel, p.at("object").get<std::string>(),
            p.at("support").get<double>(), p.at("position_variance").get<double>()});
    }
    return profile;
}

}  // namespace smartguard
