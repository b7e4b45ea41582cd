#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <map>
#include <random>

#include "smartguard/kg.hpp"
#include "test_util.hpp"

using namespace smartguard;

TEST_CASE("empty session builds an empty graph") {
    KnowledgeGraph g = tu::graph({});
    CHECK(g.nodes.empty());
    CHECK(g.edges.empty());
    CHECK(g.record_edge_count() == 0);
}

TEST_CASE("four triples in one thread yield four entity nodes plus roots") {
    KnowledgeGraph g = tu::graph({
        tu::rec(1, "t1", "path1", RelationKind::READ, "getReadableDatabase()"),
        tu::rec(2, "t1", "getReadableDatabase()", RelationKind::READ, "calllog.db"),
        tu::rec(3, "t1", "calllog.db", RelationKind::WRITE, "deleteCallLog()"),
        tu::rec(4, "t1", "path1", RelationKind::EXECUTE, "deleteCallLog()"),
    });
    CHECK(tu::entity_count(g) == 4);
    CHECK(g.record_edge_count() == 4);
    // Structural scaffolding: process root, thread start, read/write lists.
    CHECK(g.process_roots.size() == 1);
    CHECK(g.thread_roots.size() == 1);
    CHECK(g.read_lists.size() == 1);
    CHECK(g.write_lists.size() == 1);
    CHECK(g.nodes.size() == 8);
}

TEST_CASE("node identity is (kind, name); shared entities deduplicate") {
    KnowledgeGraph g = tu::graph({
        tu::rec(1, "t1", "a", RelationKind::LOAD, "libc.so"),
        tu::rec(2, "t2", "b", RelationKind::LOAD, "libc.so"),
    });
    int libc = g.find_node(NodeKind::FileOrAddress, "libc.so");
    REQUIRE(libc >= 0);
    int count = 0;
    for (const auto& n : g.nodes)
        if (n.name == "libc.so") ++count;
    CHECK(count == 1);

    auto subs = partition_threads(g);
    REQUIRE(subs.size() == 2);
    for (const auto& sub : subs)
        CHECK(std::count(sub.node_ids.begin(), sub.node_ids.end(), libc) == 1);
}

TEST_CASE("every thread start hangs under its creating process") {
    KnowledgeGraph g = tu::graph({
        tu::rec(1, "t1", "a", RelationKind::READ, "b"),
        tu::rec(2, "t2", "c", RelationKind::READ, "d"),
    });
    for (const auto& [tid, root] : g.thread_roots) {
        int incoming = 0;
        for (const auto& e : g.edges) {
            if (e.dst == root && e.synthetic) {
                ++incoming;
                CHECK(g.nodes[e.src].kind == NodeKind::Process);
                CHECK(e.relation == RelationKind::CREATE);
            }
        }
        CHECK(incoming == 1);
    }
}

TEST_CASE("record edge multiset partitions across thread subgraphs") {
    // 5-thread fixture; oracle is a group-by over the record tids.
    std::vector<AuditRecord> records;
    std::mt19937_64 rng(11);
    for (int i = 0; i < 40; ++i) {
        std::string tid = "t" + std::to_string(rng() % 5);
        records.push_back(tu::rec(i, tid, "h" + std::to_string(rng() % 8),
                                  RelationKind::READ, "x" + std::to_string(rng() % 8)));
    }
    KnowledgeGraph g = tu::graph(records);
    auto subs = partition_threads(g);

    std::map<std::string, int> by_tid;
    for (const auto& e : g.edges)
        if (!e.synthetic) by_tid[e.tid]++;
    CHECK(subs.size() == by_tid.size());

    int total = 0;
    for (const auto& sub : subs) {
        int n_records = 0;
        for (int eid : sub.edge_ids) {
            CHECK(g.edges[eid].tid == sub.tid);
            if (!g.edges[eid].synthetic) ++n_records;
        }
        CHECK(n_records == by_tid[sub.tid]);
        total += n_records;
    }
    CHECK(total == g.record_edge_count());
}

TEST_CASE("single-thread graph keeps everything but the process anchor") {
    KnowledgeGraph g = tu::graph({
        tu::rec(1, "t1", "a", RelationKind::READ, "b"),
        tu::rec(2, "t1", "b", RelationKind::WRITE, "c"),
    });
    auto subs = partition_threads(g);
    REQUIRE(subs.size() == 1);
    // All entities plus the thread root and both list nodes; the process
    // anchor node stays outside the per-thread view.
    CHECK(subs[0].node_ids.size() == g.nodes.size() - 1);
    std::set<int> in(subs[0].node_ids.begin(), subs[0].node_ids.end());
    for (const auto& node : g.nodes)
        if (!in.count(node.id)) CHECK(node.kind == NodeKind::Process);
}

TEST_CASE("shared_entities matches brute-force intersection") {
    KnowledgeGraph g = tu::graph({
        tu::rec(1, "t1", "a", RelationKind::READ, "getReadableDatabase()"),
        tu::rec(2, "t2", "b", RelationKind::WRITE, "getReadableDatabase()"),
        tu::rec(3, "t2", "b", RelationKind::READ, "shared.db"),
        tu::rec(4, "t3", "c", RelationKind::READ, "shared.db"),
        tu::rec(5, "t3", "c", RelationKind::READ, "d"),
    });
    int fn = g.find_node(NodeKind::Function, "getReadableDatabase()");
    int db = g.find_node(NodeKind::Database, "shared.db");

    CHECK(shared_entities(g, "t1", "t2") == std::set<int>{fn});
    CHECK(shared_entities(g, "t2", "t3") == std::set<int>{db});
    CHECK(shared_entities(g, "t1", "t3").empty());

    // Oracle: entity-node set intersection over the induced subgraphs.
    auto subs = partition_threads(g);
    auto entity_set = [&](const std::string& tid) {
        std::set<int> out;
        for (const auto& sub : subs)
            if (sub.tid == tid)
                for (int id : sub.node_ids)
                    if (!g.is_structural_node(id)) out.insert(id);
        return out;
    };
    for (auto [a, b] : {std::pair{"t1", "t2"}, {"t2", "t3"}, {"t1", "t3"}}) {
        std::set<int> ea = entity_set(a), eb = entity_set(b), expect;
        std::set_intersection(ea.begin(), ea.end(), eb.begin(), eb.end(),
                              std::inserter(expect, expect.begin()));
        CHECK(shared_entities(g, a, b) == expect);
    }

    CHECK_THROWS_AS(shared_entities(g, "t1", "nope"), UnknownThread);
}

TEST_CASE("shuffling records within equal timestamps keeps node content") {
    std::vector<AuditRecord> records;
    for (int i = 0; i < 12; ++i)
        records.push_back(tu::rec(i, i % 2 ? "t1" : "t2", "h" + std::to_string(i % 4),
                                  RelationKind::READ, "x" + std::to_string(i % 5)));
    KnowledgeGraph a = tu::graph(records);
    std::shuffle(records.begin(), records.end(), std::mt19937_64(3));
    KnowledgeGraph b = tu::graph(records);

    auto names = [](const KnowledgeGraph& g) {
        std::set<std::pair<int, std::string>> out;
        for (const auto& n : g.nodes) out.insert({static_cast<int>(n.kind), n.name});
        return out;
    };
    CHECK(names(a) == names(b));
    CHECK(a.record_edge_count() == b.record_edge_count());
    CHECK(a.edges.size() == b.edges.size());
}

TEST_CASE("graph JSON round-trip") {
    KnowledgeGraph g = tu::graph({
        tu::rec(1, "t1", "barephoneinstr.apk", RelationKind::LOAD, "libmicroapt.so"),
        tu::rec(2, "t1", "getReadableDatabase()", RelationKind::READ, "mmssms.db"),
        tu::rec(3, "t2", "bash", RelationKind::READ, "/etc/profile"),
    });
    KnowledgeGraph back = graph_from_json(graph_to_json(g));
    CHECK(back.nodes == g.nodes);
    CHECK(back.edges == g.edges);
    CHECK(back.thread_roots == g.thread_roots);
    CHECK(back.process_roots == g.process_roots);
    CHECK(back.read_lists == g.read_lists);
    CHECK(back.write_lists == g.write_lists);
    CHECK(back.thread_order == g.thread_order);
}
