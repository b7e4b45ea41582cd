#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "smartguard/abstraction.hpp"
#include "test_util.hpp"

using namespace smartguard;

namespace {

const ThreadSubgraph& sub_of(const std::vector<ThreadSubgraph>& subs,
                             const std::string& tid) {
    for (const auto& s : subs)
        if (s.tid == tid) return s;
    REQUIRE(false);
    static ThreadSubgraph dummy;
    return dummy;
}

// Dense eigensolver oracle: principal eigenvector of the symmetrized 0/1
// adjacency restricted to the subgraph's nodes.
Eigen::VectorXd dense_principal(const KnowledgeGraph& g, const ThreadSubgraph& sub) {
    const int n = static_cast<int>(sub.node_ids.size());
    std::map<int, int> local;
    for (int i = 0; i < n; ++i) local[sub.node_ids[i]] = i;
    Eigen::MatrixXd adj = Eigen::MatrixXd::Zero(n, n);
    for (int eid : sub.edge_ids) {
        const Edge& e = g.edges[eid];
        if (e.synthetic) continue;
        adj(local.at(e.src), local.at(e.dst)) = 1.0;
        adj(local.at(e.dst), local.at(e.src)) = 1.0;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(adj);
    return solver.eigenvectors().col(n - 1);
}

double abs_cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return std::abs(a.dot(b)) / (a.norm() * b.norm());
}

Eigen::VectorXd scores_vector(const CentralityScores& s, const ThreadSubgraph& sub) {
    Eigen::VectorXd v(sub.node_ids.size());
    for (size_t i = 0; i < sub.node_ids.size(); ++i) v(i) = s.scores.at(sub.node_ids[i]);
    return v;
}

}  // namespace

TEST_CASE("triangle centrality is uniform with lambda 2") {
    KnowledgeGraph g = tu::graph({
        tu::rec(1, "t1", "a", RelationKind::READ, "b"),
        tu::rec(2, "t1", "b", RelationKind::READ, "c"),
        tu::rec(3, "t1", "c", RelationKind::READ, "a"),
    });
    auto sub = partition_threads(g)[0];
    auto scores = compute_centrality(g, sub);
    for (const char* name : {"a", "b", "c"}) {
        int id = g.find_node(NodeKind::FileOrAddress, name);
        CHECK(scores.scores.at(id) == doctest::Approx(0.5774).epsilon(1e-4));
    }
    CHECK(scores.lambda == doctest::Approx(2.0).epsilon(1e-6));

    double norm = 0.0;
    for (const auto& [id, s] : scores.scores) {
        norm += s * s;
        CHECK(s >= 0.0);
    }
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("path centrality hits the golden ratio and the dense oracle") {
    KnowledgeGraph g = tu::graph({
        tu::rec(1, "t1", "A", RelationKind::READ, "B"),
        tu::rec(2, "t1", "B", RelationKind::READ, "C"),
        tu::rec(3, "t1", "C", RelationKind::READ, "D"),
    });
    auto sub = partition_threads(g)[0];
    auto scores = compute_centrality(g, sub);
    int a = g.find_node(NodeKind::FileOrAddress, "A");
    int b = g.find_node(NodeKind::FileOrAddress, "B");
    CHECK(scores.scores.at(b) / scores.scores.at(a) ==
          doctest::Approx(1.618).epsilon(1e-3));
    CHECK(abs_cosine(scores_vector(scores, sub), dense_principal(g, sub)) >= 0.999);

    // B and C tie by symmetry; the smaller node id (B, first seen) wins.
    CHECK(select_key_node(scores, g, sub) == b);
}

TEST_CASE("star centrality matches the dense eigensolver") {
    KnowledgeGraph g = tu::graph({
        tu::rec(1, "t1", "hub", RelationKind::READ, "l1"),
        tu::rec(2, "t1", "hub", RelationKind::READ, "l2"),
        tu::rec(3, "t1", "hub", RelationKind::READ, "l3"),
    });
    auto sub = partition_threads(g)[0];
    auto scores = compute_centrality(g, sub);
    CHECK(scores.scores.at(g.find_node(NodeKind::FileOrAddress, "hub")) ==
          doctest::Approx(0.7071).epsilon(1e-3));
    for (const char* leaf : {"l1", "l2", "l3"})
        CHECK(scores.scores.at(g.find_node(NodeKind::FileOrAddress, leaf)) ==
              doctest::Approx(0.4082).epsilon(1e-3));
    CHECK(scores.lambda == doctest::Approx(1.7321).epsilon(1e-3));
    CHECK(abs_cosine(scores_vector(scores, sub), dense_principal(g, sub)) >= 0.999);
}

TEST_CASE("isolated single node scores 1 with lambda 0") {
    KnowledgeGraph g = tu::graph({tu::rec(1, "t1", "a", RelationKind::READ, "b")});
    ThreadSubgraph lone;
    lone.tid = "t1";
    lone.node_ids = {g.find_node(NodeKind::FileOrAddress, "a")};
    auto scores = compute_centrality(g, lone);
    CHECK(scores.scores.at(lone.node_ids[0]) == doctest::Approx(1.0));
    CHECK(scores.lambda == doctest::Approx(0.0));
    CHECK(select_key_node(scores, g, lone) == lone.node_ids[0]);
}

TEST_CASE("centrality and key-node error taxonomy") {
    KnowledgeGraph g = tu::graph({tu::rec(1, "t1", "a", RelationKind::READ, "b")});
    ThreadSubgraph empty;
    CHECK_THROWS_AS(compute_centrality(g, empty), EmptyGraph);

    ThreadSubgraph structural;
    structural.tid = "t1";
    structural.node_ids = {g.thread_roots.at("t1"), g.read_lists.at("t1"),
                           g.write_lists.at("t1")};
    auto scores = compute_centrality(g, structural);
    CHECK_THROWS_AS(select_key_node(scores, g, structural), OnlyStructuralNodes);
}

TEST_CASE("key-node selection is invariant to uniform positive scaling") {
    KnowledgeGraph g = tu::graph({
        tu::rec(1, "t1", "hub", RelationKind::READ, "l1"),
        tu::rec(2, "t1", "hub", RelationKind::READ, "l2"),
    });
    auto sub = partition_threads(g)[0];
    auto scores = compute_centrality(g, sub);
    int key = select_key_node(scores, g, sub);
    CentralityScores scaled = scores;
    for (auto& [id, s] : scaled.scores) s *= 3.25;
    CHECK(select_key_node(scaled, g, sub) == key);
}

TEST_CASE("distant key nodes yield separate instances") {
    KnowledgeGraph g = tu::graph({
        // Thread 1 hub K1, thread 2 hub K2, joined through a 3-node bridge;
        // the key nodes sit 5 undirected hops apart.
        tu::rec(1, "t1", "K1", RelationKind::READ, "a1"),
        tu::rec(2, "t1", "K1", RelationKind::READ, "a2"),
        tu::rec(3, "t1", "K1", RelationKind::READ, "m1"),
        tu::rec(4, "t1", "m1", RelationKind::READ, "m2"),
        tu::rec(5, "t2", "m2", RelationKind::READ, "m3"),
        tu::rec(6, "t2", "m3", RelationKind::READ, "m4"),
        tu::rec(7, "t2", "m4", RelationKind::READ, "K2"),
        tu::rec(8, "t2", "K2", RelationKind::READ, "b1"),
        tu::rec(9, "t2", "K2", RelationKind::READ, "b2"),
        tu::rec(10, "t2", "K2", RelationKind::READ, "b3"),
    });
    auto instances = form_instances(g, 2);
    CHECK(instances.size() == 2);
}

TEST_CASE("threads sharing their key node form one instance") {
    KnowledgeGraph g = tu::graph({
        tu::rec(1, "t1", "x1", RelationKind::READ, "getReadableDatabase()"),
        tu::rec(2, "t1", "x2", RelationKind::READ, "getReadableDatabase()"),
        tu::rec(3, "t2", "y1", RelationKind::WRITE, "getReadableDatabase()"),
        tu::rec(4, "t2", "y2", RelationKind::WRITE, "getReadableDatabase()"),
    });
    auto instances = form_instances(g, 2);
    REQUIRE(instances.size() == 1);
    CHECK(instances[0].tids == std::set<std::string>{"t1", "t2"});
    CHECK(instances[0].key_nodes.size() == 2);
}

TEST_CASE("thread joining is transitive across key-node reachability") {
    KnowledgeGraph g = tu::graph({
        tu::rec(1, "t1", "K1", RelationKind::READ, "a1"),
        tu::rec(2, "t1", "K1", RelationKind::READ, "a2"),
        tu::rec(3, "t1", "K1", RelationKind::READ, "s12"),
        tu::rec(4, "t2", "K2", RelationKind::READ, "s12"),
        tu::rec(5, "t2", "K2", RelationKind::READ, "b1"),
        tu::rec(6, "t2", "K2", RelationKind::READ, "s23"),
        tu::rec(7, "t3", "K3", RelationKind::READ, "s23"),
        tu::rec(8, "t3", "K3", RelationKind::READ, "c1"),
        tu::rec(9, "t3", "K3", RelationKind::READ, "c2"),
    });
    // K1..K3 are each their thread's hub; K1-K2 and K2-K3 are two hops
    // apart, K1-K3 four hops, so transitivity must pull all three in.
    auto instances = form_instances(g, 2);
    REQUIRE(instances.size() == 1);
    CHECK(instances[0].tids == std::set<std::string>{"t1", "t2", "t3"});

    // With k = 0 the key nodes are distinct, so threads stay separate.
    CHECK(form_instances(g, 0).size() == 3);
}

TEST_CASE("merge_subsets absorbs nested instances to a fixpoint") {
    auto inst = [](int id, std::set<int> nodes, std::set<std::string> tids) {
        BehaviorInstance b;
        b.id = id;
        b.node_ids = std::move(nodes);
        b.tids = std::move(tids);
        b.key_nodes = {*b.node_ids.begin()};
        return b;
    };
    SUBCASE("A inside B") {
        auto merged = merge_subsets({inst(0, {1, 2}, {"t1"}), inst(1, {1, 2, 3}, {"t2"})});
        REQUIRE(merged.size() == 1);
        CHECK(merged[0].node_ids == std::set<int>{1, 2, 3});
        CHECK(merged[0].tids == std::set<std::string>{"t1", "t2"});
    }
    SUBCASE("disjoint instances are unchanged") {
        auto merged = merge_subsets({inst(0, {1, 2}, {"t1"}), inst(1, {3, 4}, {"t2"})});
        CHECK(merged.size() == 2);
    }
    SUBCASE("chain A in B in C collapses to C") {
        auto merged = merge_subsets({inst(0, {1}, {"t1"}), inst(1, {1, 2}, {"t2"}),
                                     inst(2, {1, 2, 3}, {"t3"})});
        REQUIRE(merged.size() == 1);
        CHECK(merged[0].tids == std::set<std::string>{"t1", "t2", "t3"});
    }
    SUBCASE("closure: merging twice equals merging once") {
        std::vector<BehaviorInstance> in = {inst(0, {1, 2}, {"t1"}),
                                            inst(1, {1, 2, 3}, {"t2"}),
                                            inst(2, {5, 6}, {"t3"})};
        auto once = merge_subsets(in);
        auto twice = merge_subsets(once);
        REQUIRE(once.size() == twice.size());
        for (size_t i = 0; i < once.size(); ++i) {
            CHECK(once[i].node_ids == twice[i].node_ids);
            CHECK(once[i].tids == twice[i].tids);
        }
        for (const auto& a : once)
            for (const auto& b : once)
                if (a.id != b.id)
                    CHECK_FALSE(std::includes(b.node_ids.begin(), b.node_ids.end(),
                                              a.node_ids.begin(), a.node_ids.end()));
    }
}

namespace {

// Profiling corpus: (vim, WRITE, .viminfo) and (bash, READ, /etc/profile)
// appear at a fixed position in every session; (scan, READ, tmpfile) only in
// half of them; (drift, READ, target) everywhere but at wildly shifting
// positions.
std::vector<KnowledgeGraph> profiling_corpus(int n) {
    std::vector<KnowledgeGraph> corpus;
    for (int i = 0; i < n; ++i) {
        std::vector<AuditRecord> records = {
            tu::rec(1, "t1", "vim", RelationKind::WRITE, ".viminfo"),
            tu::rec(2, "t1", "bash", RelationKind::READ, "/etc/profile"),
        };
        records.push_back(tu::rec(3, "t1", "scan", RelationKind::WRITE, "scanlog"));
        if (i % 2 == 0)
            records.push_back(tu::rec(4, "t1", "scan", RelationKind::READ, "tmpfile"));
        for (int j = 0; j < i * 3; ++j)
            records.push_back(tu::rec(10 + j, "t1", "drift", RelationKind::WRITE,
                                      "pad" + std::to_string(j)));
        records.push_back(tu::rec(200, "t1", "drift", RelationKind::READ, "target"));
        corpus.push_back(tu::graph(records));
    }
    return corpus;
}

}  // namespace

TEST_CASE("profile_noise keeps high-support fixed-position patterns only") {
    auto corpus = profiling_corpus(10);
    NoiseProfile profile = profile_noise(corpus);
    CHECK(profile.matches("vim", RelationKind::WRITE, ".viminfo"));
    CHECK(profile.matches("bash", RelationKind::READ, "/etc/profile"));
    // Support 0.5 is below the threshold.
    CHECK_FALSE(profile.matches("scan", RelationKind::READ, "tmpfile"));
    // Unstable ordinal position breaks criterion (b).
    CHECK_FALSE(profile.matches("drift", RelationKind::READ, "target"));
    for (const auto& p : profile.trivial_patterns) {
        CHECK(p.support >= profile.theta_support);
        CHECK(p.position_variance <= profile.theta_pos);
    }

    CHECK_THROWS_AS(profile_noise(profiling_corpus(9)), InsufficientCorpus);
}

TEST_CASE("filter_noise relocates trivial edges into the list labels") {
    NoiseProfile profile;
    profile.trivial_patterns = {
        {"bash", RelationKind::READ, "/etc/profile", 1.0, 0.0},
        {"vim", RelationKind::WRITE, ".viminfo", 1.0, 0.0},
    };

    KnowledgeGraph g = tu::graph({
        tu::rec(1, "t1", "bash", RelationKind::READ, "/etc/profile"),
        tu::rec(2, "t1", "vim", RelationKind::WRITE, ".viminfo"),
        tu::rec(3, "t1", "bash", RelationKind::EXECUTE, "payload()"),
        tu::rec(4, "t1", "payload()", RelationKind::WRITE, "/tmp/out"),
    });
    auto instances = form_instances(g, 2);
    REQUIRE(instances.size() == 1);
    BehaviorInstance raw = instances[0];
    size_t edges_before = raw.edge_ids.size();

    BehaviorInstance filtered = filter_noise(g, raw, profile);
    CHECK(filtered.readlist_labels ==
          std::vector<std::pair<std::string, std::string>>{{"READ", "/etc/profile"}});
    CHECK(filtered.writelist_labels ==
          std::vector<std::pair<std::string, std::string>>{{"WRITE", ".viminfo"}});
    CHECK(filtered.edge_ids.size() + filtered.readlist_labels.size() +
              filtered.writelist_labels.size() ==
          edges_before);
    for (int eid : filtered.edge_ids) {
        const Edge& e = g.edges[eid];
        CHECK_FALSE(profile.matches(g.nodes[e.src].name, e.relation, g.nodes[e.dst].name));
    }
    // Key nodes survive even when their edges were filtered.
    for (int kn : filtered.key_nodes) CHECK(filtered.node_ids.count(kn) == 1);

    // Idempotence.
    BehaviorInstance again = filter_noise(g, filtered, profile);
    CHECK(again.edge_ids == filtered.edge_ids);
    CHECK(again.node_ids == filtered.node_ids);
    CHECK(again.readlist_labels == filtered.readlist_labels);
    CHECK(again.writelist_labels == filtered.writelist_labels);

    // An instance with no trivial edges passes through unchanged.
    KnowledgeGraph clean = tu::graph({
        tu::rec(1, "t1", "proc", RelationKind::EXECUTE, "f()"),
        tu::rec(2, "t1", "f()", RelationKind::WRITE, "/tmp/x"),
    });
    auto clean_inst = form_instances(clean, 2)[0];
    BehaviorInstance same = filter_noise(clean, clean_inst, profile);
    CHECK(same.edge_ids == clean_inst.edge_ids);
    CHECK(same.readlist_labels.empty());
    CHECK(same.writelist_labels.empty());
}

TEST_CASE("summarize fuses function hops and renders single edges") {
    KnowledgeGraph g = tu::graph({
        tu::rec(1, "t1", "path1", RelationKind::READ, "getReadableDatabase()"),
        tu::rec(2, "t1", "getReadableDatabase()", RelationKind::WRITE, "b.txt"),
    });
    auto inst = form_instances(g, 2)[0];
    CHECK(summarize(g, inst) ==
          "Thread(s) t1: path1 uses getReadableDatabase() to achieve READ, "
          "WRITE-ing to b.txt");

    KnowledgeGraph single = tu::graph({tu::rec(1, "t1", "a", RelationKind::EXECUTE, "f.txt")});
    auto sinst = form_instances(single, 2)[0];
    CHECK(summarize(single, sinst) == "Thread(s) t1: a EXECUTE-s f.txt");
}

TEST_CASE("summarize appends non-empty list labels") {
    KnowledgeGraph g = tu::graph({
        tu::rec(1, "t1", "bash", RelationKind::READ, "/etc/profile"),
        tu::rec(2, "t1", "bash", RelationKind::WRITE, "/tmp/x"),
    });
    NoiseProfile profile;
    profile.trivial_patterns = {{"bash", RelationKind::READ, "/etc/profile", 1.0, 0.0}};
    auto inst = filter_noise(g, form_instances(g, 2)[0], profile);
    CHECK(summarize(g, inst) ==
          "Thread(s) t1: bash WRITE-s /tmp/x; Read-List: [READ /etc/profile]");
}

TEST_CASE("summarize matches the checked-in 12-edge golden") {
    std::vector<AuditRecord> records;
    const char* chain[] = {"barephoneinstr.apk", "libmicroapt.so", "download()",
                           "/sdcard/payload.apk"};
    records.push_back(tu::rec(1, "t1", chain[0], RelationKind::LOAD, chain[1]));
    records.push_back(tu::rec(2, "t1", chain[1], RelationKind::CONNECT, "77.138.117.150:80"));
    records.push_back(tu::rec(3, "t1", chain[0], RelationKind::EXECUTE, chain[2]));
    records.push_back(tu::rec(4, "t1", chain[2], RelationKind::CREATE, chain[3]));
    records.push_back(tu::rec(5, "t1", chain[3], RelationKind::EXECUTE, "elevatePrivilege()"));
    records.push_back(tu::rec(6, "t1", "elevatePrivilege()", RelationKind::MODIFY_FILE_ATTRIBUTES,
                              "/system"));
    records.push_back(tu::rec(7, "t1", chain[0], RelationKind::EXECUTE, "getReadableDatabase()"));
    records.push_back(tu::rec(8, "t1", "getReadableDatabase()", RelationKind::READ, "mmssms.db"));
    records.push_back(tu::rec(9, "t1", chain[0], RelationKind::EXECUTE, "removeDeletedContacts()"));
    records.push_back(tu::rec(10, "t1", "removeDeletedContacts()", RelationKind::DELETE,
                              "mmssms.db"));
    records.push_back(tu::rec(11, "t1", chain[0], RelationKind::CHECK_ATTRIBUTE, "/system"));
    records.push_back(tu::rec(12, "t1", chain[0], RelationKind::WRITE, "77.138.117.150:80"));
    KnowledgeGraph g = tu::graph(records);
    auto inst = form_instances(g, 2)[0];
    std::string golden = tu::read_file(tu::data_path("summary_12edge.txt"));
    REQUIRE_FALSE(golden.empty());
    CHECK(summarize(g, inst) == golden);
}

TEST_CASE("summarize truncates at 2000 bytes") {
    std::vector<AuditRecord> records;
    std::string long_name(120, 'x');
    for (int i = 0; i < 40; ++i)
        records.push_back(tu::rec(i, "t1", long_name + std::to_string(i),
                                  RelationKind::READ, "y" + std::to_string(i)));
    KnowledgeGraph g = tu::graph(records);
    auto inst = form_instances(g, 2)[0];
    std::string text = summarize(g, inst);
    CHECK(text.size() == 2000);
    CHECK(text.substr(1997) == "\xE2\x80\xA6");
}

TEST_CASE("summarize is a pure function of the filtered instance") {
    KnowledgeGraph g = tu::graph({
        tu::rec(1, "t1", "a", RelationKind::READ, "f()"),
        tu::rec(2, "t1", "f()", RelationKind::WRITE, "b"),
    });
    auto inst = form_instances(g, 2)[0];
    CHECK(summarize(g, inst) == summarize(g, inst));
}

TEST_CASE("instances and profile JSON round-trips") {
    KnowledgeGraph g = tu::graph({
        tu::rec(1, "t1", "bash", RelationKind::READ, "/etc/profile"),
        tu::rec(2, "t1", "bash", RelationKind::EXECUTE, "payload()"),
        tu::rec(3, "t2", "vim", RelationKind::WRITE, ".viminfo"),
    });
    NoiseProfile profile;
    profile.trivial_patterns = {{"bash", RelationKind::READ, "/etc/profile", 0.95, 0.25}};
    auto instances = form_instances(g, 2);
    for (auto& inst : instances) {
        inst = filter_noise(g, inst, profile);
        inst.summary = summarize(g, inst);
    }

    auto back = instances_from_json(instances_to_json(instances));
    REQUIRE(back.size() == instances.size());
    for (size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].id == instances[i].id);
        CHECK(back[i].tids == instances[i].tids);
        CHECK(back[i].key_nodes == instances[i].key_nodes);
        CHECK(back[i].node_ids == instances[i].node_ids);
        CHECK(back[i].edge_ids == instances[i].edge_ids);
        CHECK(back[i].readlist_labels == instances[i].readlist_labels);
        CHECK(back[i].writelist_labels == instances[i].writelist_labels);
        CHECK(back[i].summary == instances[i].summary);
    }

    NoiseProfile pback = profile_from_json(profile_to_json(profile));
    REQUIRE(pback.trivial_patterns.size() == 1);
    CHECK(pback.trivial_patterns[0].tie() == profile.trivial_patterns[0].tie());
    CHECK(pback.theta_support == profile.theta_support);
    CHECK(pback.theta_pos == profile.theta_pos);
    CHECK(pback.matches("bash", RelationKind::READ, "/etc/profile"));
}
