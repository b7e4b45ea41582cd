#include "smartguard/evalgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"

#include "smartguard/ingest.hpp"

namespace smartguard {

using nlohmann::json;

namespace {

EntityRef ent(const std::string& name) { return EntityRef{classify_entity(name), name}; }
EntityRef sock(const std::string& name) { return EntityRef{NodeKind::Socket, name}; }

MotifEdge me(EntityRef head, RelationKind rel, EntityRef tail) {
    return MotifEdge{std::move(head), rel, std::move(tail)};
}

std::vector<ScenarioSpec> make_scenarios(double jitter) {
    using R = RelationKind;
    std::vector<ScenarioSpec> specs;

    specs.push_back({"APK Java",
                     {
                         me(ent("java.apk"), R::LOAD, ent("connectTarget()")),
                         me(ent("connectTarget()"), R::CONNECT, sock("146.153.68.151:443")),
                         me(ent("java.apk"), R::EXECUTE, ent("elevatePrivilege()")),
                         me(ent("elevatePrivilege()"), R::MODIFY_FILE_ATTRIBUTES, ent("/root")),
                         me(ent("java.apk"), R::EXECUTE, ent("stealFiles()")),
                         me(ent("stealFiles()"), R::READ, ent("/root/secret.txt")),
                         me(ent("stealFiles()"), R::WRITE, sock("146.153.68.151:443")),
                     },
                     25, 36, jitter});

    specs.push_back({"Barephone Micro",
                     {
                         me(ent("barephoneinstr.apk"), R::LOAD, ent("libmicroapt.so")),
                         me(ent("libmicroapt.so"), R::CONNECT, sock("77.138.117.150:80")),
                         me(ent("128.55.12.114"), R::EXECUTE, ent("elevatePrivilege()")),
                         me(ent("elevatePrivilege()"), R::MODIFY_FILE_ATTRIBUTES,
                            ent("/dev/elevate")),
                         me(ent("barephoneinstr.apk"), R::EXECUTE,
                            ent("getReadableDatabase()")),
                         me(ent("getReadableDatabase()"), R::READ, ent("mmssms.db")),
                         me(ent("getReadableDatabase()"), R::WRITE, sock("77.138.117.150:80")),
                         me(ent("barephoneinstr.apk"), R::EXECUTE,
                            ent("removeDeletedContacts()")),
                         me(ent("removeDeletedContacts()"), R::DELETE, ent("mmssms.db")),
                         me(ent("removeDeletedContacts()"), R::DELETE, ent("mmssms.db")),
                         me(ent("barephoneinstr.apk"), R::EXECUTE,
                            ent("insertUpdateContacts()")),
                         me(ent("insertUpdateContacts()"), R::WRITE, ent("mmssms.db")),
                         me(ent("libmicroapt.so"), R::READ, ent("128.55.12.114")),
                         me(ent("insertUpdateContacts()"), R::WRITE, ent("mmssms.db")),
                         me(ent("getReadableDatabase()"), R::READ, ent("mmssms.db")),
                         me(ent("removeDeletedContacts()"), R::DELETE, ent("mmssms.db")),
                     },
                     10, 16, jitter});

    specs.push_back({"CADETS Nginx",
                     {
                         me(ent("nginx"), R::READ, sock("81.49.200.166:80")),
                         me(ent("nginx"), R::EXECUTE, ent("download()")),
                         me(ent("download()"), R::CREATE, ent("/tmp/vUgefal")),
                         me(ent("/tmp/vUgefal"), R::EXECUTE, ent("elevatePrivilege()")),
                         me(ent("elevatePrivilege()"), R::MODIFY_FILE_ATTRIBUTES,
                            ent("/tmp/vUgefal")),
                         me(ent("/tmp/vUgefal"), R::EXECUTE, ent("inject()")),
                         me(ent("inject()"), R::WRITE, ent("sshd")),
                         me(ent("nginx"), R::READ, sock("81.49.200.166:80")),
                         me(ent("download()"), R::WRITE, ent("/tmp/vUgefal")),
                         me(ent("/tmp/vUgefal"), R::EXECUTE, ent("elevatePrivilege()")),
                         me(ent("inject()"), R::WRITE, ent("sshd")),
                     },
                     17, 28, jitter});

    specs.push_back({"Firefox Drakon",
                     {
                         me(ent("firefox"), R::READ, sock("198.115.236.119:80")),
                         me(ent("firefox"), R::EXECUTE, ent("download()")),
                         me(ent("download()"), R::CREATE, ent("/lib/libdrakon.so")),
                         me(ent("firefox"), R::LOAD, ent("/lib/libdrakon.so")),
                         me(ent("/lib/libdrakon.so"), R::EXECUTE, ent("inject()")),
                         me(ent("inject()"), R::WRITE, ent("sshd")),
                         me(ent("sshd"), R::EXECUTE, ent("crash()")),
                     },
                     26, 31, jitter});

    specs.push_back({"Metasploit APK",
                     {
                         me(ent("msf.apk"), R::CONNECT, sock("155.162.39.48:443")),
                         me(ent("msf.apk"), R::EXECUTE, ent("dropPayload()")),
                         me(ent("dropPayload()"), R::CREATE, ent("/sdcard/payload.apk")),
                         me(ent("/sdcard/payload.apk"), R::EXECUTE, ent("elevatePrivilege()")),
                         me(ent("elevatePrivilege()"), R::MODIFY_FILE_ATTRIBUTES,
                            ent("/system")),
                         me(ent("/sdcard/payload.apk"), R::EXECUTE, ent("screencap()")),
                         me(ent("screencap()"), R::READ, ent("/dev/graphics/fb0")),
                         me(ent("screencap()"), R::WRITE, sock("155.162.39.48:443")),
                     },
                     35, 56, jitter});

    specs.push_back({"Micro BinFmt-Elevate",
                     {
                         me(ent("ta1-pivot-2"), R::EXECUTE, ent("binfmtRegister()")),
                         me(ent("binfmtRegister()"), R::WRITE,
                            ent("/proc/sys/fs/binfmt_misc/register")),
                         me(ent("ta1-pivot-2"), R::EXECUTE, ent("elevatePrivilege()")),
                         me(ent("elevatePrivilege()"), R::MODIFY_FILE_ATTRIBUTES,
                            ent("/root")),
                         me(ent("ta1-pivot-2"), R::READ, ent("/root")),
                         me(ent("ta1-pivot-2"), R::READ, ent("/root/.ssh/id_rsa")),
                     },
                     14, 34, jitter});

    specs.push_back({"AppStarter APK",
                     {
                         me(ent("appstarter.apk"), R::EXECUTE, ent("installPackage()")),
                         me(ent("installPackage()"), R::CREATE, ent("/data/app/elev.apk")),
                         me(ent("/data/app/elev.apk"), R::EXECUTE, ent("elevatePrivilege()")),
                         me(ent("elevatePrivilege()"), R::MODIFY_FILE_ATTRIBUTES,
                            ent("/data/local")),
                         me(ent("appstarter.apk"), R::EXECUTE, ent("setThreadPriority()")),
                         me(ent("installPackage()"), R::WRITE, ent("/data/app/elev.apk")),
                         me(ent("appstarter.apk"), R::EXECUTE, ent("setThreadPriority()")),
                         me(ent("appstarter.apk"), R::CHECK_ATTRIBUTE, ent("/data/app/elev.apk")),
                     },
                     12, 19, jitter});

    specs.push_back({"Webshell",
                     {
                         me(ent("httpd"), R::READ, sock("143.15.130.66:80")),
                         me(ent("httpd"), R::EXECUTE, ent("download()")),
                         me(ent("download()"), R::CREATE, ent("/var/www/shell.php")),
                         me(ent("httpd"), R::EXECUTE, ent("shellExec()")),
                         me(ent("/var/www/shell.php"), R::EXECUTE, ent("aptImplant()")),
                         me(ent("aptImplant()"), R::CONNECT, sock("143.15.130.66:8080")),
                         me(ent("aptImplant()"), R::READ, ent("/etc/passwd")),
                         me(ent("aptImplant()"), R::WRITE, sock("143.15.130.66:8080")),
                     },
                     31, 49, jitter});

    specs.push_back({"Firefox DNS FileFilter",
                     {
                         me(ent("firefox"), R::EXECUTE, ent("dnsBackdoor()")),
                         me(ent("dnsBackdoor()"), R::CONNECT, sock("192.113.144.28:53")),
                         me(ent("firefox"), R::EXECUTE, ent("scanProcs()")),
                         me(ent("scanProcs()"), R::CHECK_ATTRIBUTE, ent("/proc/self/status")),
                         me(ent("scanProcs()"), R::READ, ent("/tmp/net.flt")),
                         me(ent("firefox"), R::EXECUTE, ent("elevatePrivilege()")),
                         me(ent("elevatePrivilege()"), R::MODIFY_FILE_ATTRIBUTES,
                            ent("/root")),
                     },
                     23, 29, jitter});

    specs.push_back({kBenignLabel, {}, 18, 26, jitter});
    return specs;
}

constexpr RelationKind kFillerRelations[] = {
    RelationKind::READ, RelationKind::WRITE, RelationKind::EXECUTE,
    RelationKind::LOAD, RelationKind::CHECK_ATTRIBUTE,
};

// Background names come from a fixed pool shared by every session, the way
// real hosts keep touching the same caches, overlays, and modules. Pool
// entries are derived from the index alone, so the same index always names
// the same file.
std::string fresh_name(std::mt19937_64& rng, int) {
    const std::uint64_t index = rng() % 4096;
    std::uint64_t z = (index + 1) * 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    z ^= z >> 31;
    char buf[256];
    auto r1 = static_cast<unsigned long long>(z & 0xffffffffULL);
    auto r2 = static_cast<unsigned long long>(z >> 32);
    const int counter = static_cast<int>(index);
    switch (counter % 3) {
        case 0:
            std::snprintf(buf, sizeof(buf),
                          "/home/user/.cache/mesa_shader_cache/%08llx/app-%08llx/"
                          "profiles/default-release/storage/permanent/chrome/idb/"
                          "state/session-store-backups/recovery-%08llx_%d.baklz4",
                          r1, r2, r1 ^ r2, counter);
            break;
        case 1:
            std::snprintf(buf, sizeof(buf),
                          "/var/lib/containers/storage/overlay/%08llx%08llx/diff/usr/"
                          "share/doc/pkg-%08llx/contrib/examples/configuration/"
                          "changelog.Debian.%d.gz",
                          r1, r2, r2, counter);
            break;
        default:
            std::snprintf(buf, sizeof(buf),
                          "/usr/lib/x86_64-linux-gnu/gio/modules/provider-%08llx/"
                          "pipeline/stages/transform/accumulate/telemetry/"
                          "worker-%08llx_%d.so",
                          r1, r2, counter);
            break;
    }
    return buf;
}

}  // namespace

std::vector<ScenarioSpec> builtin_scenarios(double jitter) { return make_scenarios(jitter); }

const ScenarioSpec& scenario_by_label(const std::vector<ScenarioSpec>& specs,
                                      const std::string& label) {
    for (const auto& s : specs)
        if (s.label == label) return s;
    throw Error("unknown scenario label: " + label);
}

const std::vector<TrivialEvent>& builtin_trivial_events() {
    static const std::vector<TrivialEvent> events = {
        {"vim", RelationKind::WRITE, ".viminfo"},
        {"bash", RelationKind::READ, "/etc/profile"},
        {"systemd", RelationKind::READ, "/etc/os-release"},
    };
    return events;
}

GeneratedSession generate_session(const ScenarioSpec& spec, std::uint64_t seed) {
    std::set<std::string> motif_names;
    std::vector<std::string> motif_heads;
    for (const auto& e : spec.motif) {
        motif_names.insert(e.head.name);
        motif_names.insert(e.tail.name);
        if (std::find(motif_heads.begin(), motif_heads.end(), e.head.name) ==
            motif_heads.end())
            motif_heads.push_back(e.head.name);
    }
    const int motif_v = static_cast<int>(motif_names.size());
    const int motif_e = static_cast<int>(spec.motif.size());
    if (spec.target_nodes < motif_v || spec.target_edges < motif_e)
        throw InfeasibleSpec(spec.label);

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    auto jittered = [&](int target, int floor_value) {
        auto v = static_cast<int>(
            std::llround(target * (1.0 + spec.jitter * unit(rng))));
        return std::max(v, floor_value);
    };
    const int target_v = jittered(spec.target_nodes, motif_v);
    const int target_e = jittered(spec.target_edges, motif_e);

    int node_budget = target_v - motif_v;
    int edge_budget = target_e - motif_e;

    std::vector<AuditRecord> records;
    long long ts = 1'000'000;
    auto emit = [&](const std::string& pid, const std::string& tid, const EntityRef& head,
                    RelationKind rel, const EntityRef& tail) {
        records.push_back(AuditRecord{ts, pid, tid, head, rel, tail});
        ts += 1000;
    };

    // Routine-activity prelude in the filler thread; these entities seed
    // the filler pool.
    std::set<std::string> used = motif_names;
    std::vector<std::string> pool;
    for (const auto& te : builtin_trivial_events()) {
        if (node_budget < 2 || edge_budget < 1) break;
        emit("p0", "t0", ent(te.process), te.relation, ent(te.object));
        pool.push_back(te.process);
        pool.push_back(te.object);
        used.insert(te.process);
        used.insert(te.object);
        node_budget -= 2;
        edge_budget -= 1;
    }

    auto pick = [&](const std::vector<std::string>& v) {
        return v[rng() % v.size()];
    };
    auto filler_rel = [&]() { return kFillerRelations[rng() % 5]; };

    int counter = 0;
    auto new_name = [&]() {
        std::string name = fresh_name(rng, counter++);
        while (used.count(name)) name = fresh_name(rng, counter++);
        used.insert(name);
        return name;
    };
    // In-thread noise: short chains of unrelated background activity in the
    // same thread as the motif, emitted ahead of it the way ambient activity
    // precedes an attack. Summaries carry the clutter; in the graph the
    // chains stay disconnected from the motif wiring.
    struct ChainEdge {
        std::string head;
        RelationKind rel;
        std::string tail;
    };
    std::vector<ChainEdge> chain_edges;
    std::string current;
    int chain_len = 0;
    while (node_budget > 0 && edge_budget > 0) {
        // Extending a chain spends one node per edge; starting a fresh one
        // spends two. Only extend while the remaining edge budget can still
        // absorb the remaining nodes via fresh pairs.
        const bool can_extend = !current.empty() && chain_len < 4 &&
                                edge_budget - 1 >= (node_budget + 1) / 2;
        if (can_extend) {
            std::string next = new_name();
            RelationKind rel = filler_rel();
            emit("p1", "t1", ent(current), rel, ent(next));
            chain_edges.push_back({current, rel, next});
            current = next;
            ++chain_len;
            node_budget -= 1;
            edge_budget -= 1;
        } else if (node_budget >= 2) {
            std::string a = new_name();
            std::string b = new_name();
            RelationKind rel = filler_rel();
            emit("p1", "t1", ent(a), rel, ent(b));
            chain_edges.push_back({a, rel, b});
            current = b;
            chain_len = 2;
            node_budget -= 2;
            edge_budget -= 1;
        } else {
            // One node left: hang it off the routine-activity pool.
            std::string b = new_name();
            if (!pool.empty()) {
                emit("p0", "t0", ent(pick(pool)), filler_rel(), ent(b));
            } else {
                std::string a = new_name();  // degenerate; accept +1 node
                emit("p1", "t1", ent(a), filler_rel(), ent(b));
            }
            node_budget -= 1;
            edge_budget -= 1;
        }
    }

    // Leftover edge budget replays earlier activity at later timestamps.
    while (edge_budget > 0) {
        if (!chain_edges.empty()) {
            const ChainEdge& e = chain_edges[rng() % chain_edges.size()];
            emit("p1", "t1", ent(e.head), e.rel, ent(e.tail));
        } else if (!spec.motif.empty()) {
            const MotifEdge& e = spec.motif[rng() % spec.motif.size()];
            emit("p1", "t1", e.head, e.relation, e.tail);
        } else if (pool.size() >= 2) {
            std::string a = pick(pool);
            std::string b = pick(pool);
            int attempts = 0;
            while (b == a && attempts++ < 32) b = pick(pool);
            if (b == a) break;
            emit("p0", "t0", ent(a), filler_rel(), ent(b));
        } else {
            break;
        }
        edge_budget -= 1;
    }

    for (const auto& e : spec.motif) emit("p1", "t1", e.head, e.relation, e.tail);

    GeneratedSession out;
    out.label = spec.label;
    out.gt_entities = motif_names;
    std::ostringstream os;
    for (const auto& rec : records) os << serialize_record(rec) << "\n";
    out.events_jsonl = os.str();
    return out;
}

LabeledDataset build_dataset(const std::vector<ScenarioSpec>& specs, int n_per_class,
                             double train_fraction, std::uint64_t seed) {
    LabeledDataset ds;
    ds.train_fraction = train_fraction;
    const int train_count = std::min(
        n_per_class,
        static_cast<int>(std::ceil(n_per_class * train_fraction)));
    for (size_t li = 0; li < specs.size(); ++li) {
        const auto& spec = specs[li];
        ds.labels.push_back(spec.label);
        std::vector<int> order(n_per_class);
        for (int i = 0; i < n_per_class; ++i) order[i] = i;
        std::mt19937_64 split_rng(seed ^ fnv1a(spec.label));
        std::shuffle(order.begin(), order.end(), split_rng);
        std::vector<bool> is_train(n_per_class, false);
        for (int i = 0; i < train_count; ++i) is_train[order[i]] = true;
        for (int i = 0; i < n_per_class; ++i) {
            std::uint64_t session_seed =
                seed * 0x9e3779b97f4a7c15ull + fnv1a(spec.label) +
                static_cast<std::uint64_t>(i) * 0x100000001b3ull;
            GeneratedSession gen = generate_session(spec, session_seed);
            ds.sessions.push_back(LabeledSession{gen.label, std::move(gen.events_jsonl),
                                                 std::move(gen.gt_entities), is_train[i]});
        }
    }
    return ds;
}

namespace {

void finish_prf(Metrics::PRF& m) {
    m.precision = (m.tp + m.fp) > 0 ? static_cast<double>(m.tp) / (m.tp + m.fp) : 0.0;
    m.recall = (m.tp + m.fn) > 0 ? static_cast<double>(m.tp) / (m.tp + m.fn) : 0.0;
    m.f1 = (m.precision + m.recall) > 0.0
               ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
               : 0.0;
}

}  // namespace

Metrics evaluate(const std::vector<SessionPrediction>& predictions,
                 const std::vector<const LabeledSession*>& sessions) {
    if (predictions.size() != sessions.size())
        throw MissingVerdict(std::min(predictions.size(), sessions.size()));

    Metrics m;
    std::set<std::string> true_labels;
    for (size_t i = 0; i < sessions.size(); ++i) {
        const std::string truth = sessions[i]->label;
        true_labels.insert(truth);
        std::string pred = kBenignLabel;
        if (predictions[i].malicious)
            pred = predictions[i].category.value_or("Attack");
        m.confusion[truth][pred] += 1;

        if (pred == truth)
            m.per_label[truth].tp += 1;
        else {
            m.per_label[truth].fn += 1;
            m.per_label[pred].fp += 1;
        }

        const bool truth_attack = truth != kBenignLabel;
        if (predictions[i].malicious && truth_attack)
            m.binary.tp += 1;
        else if (predictions[i].malicious && !truth_attack)
            m.binary.fp += 1;
        else if (!predictions[i].malicious && truth_attack)
            m.binary.fn += 1;
    }

    int n_attack = 0;
    for (auto& [label, prf] : m.per_label) {
        finish_prf(prf);
        if (label != kBenignLabel && true_labels.count(label)) {
            m.macro_precision += prf.precision;
            m.macro_recall += prf.recall;
            m.macro_f1 += prf.f1;
            ++n_attack;
        }
    }
    if (n_attack > 0) {
        m.macro_precision /= n_attack;
        m.macro_recall /= n_attack;
        m.macro_f1 /= n_attack;
    }
    finish_prf(m.binary);
    return m;
}

Eigen::VectorXd bow_vector(const std::string& summary, int dim) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
    auto is_token_char = [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '/' ||
               c == '_' || c == '-' || c == '(' || c == ')' || c == ':' || c == '#';
    };
    size_t i = 0;
    while (i < summary.size()) {
        while (i < summary.size() && !is_token_char(summary[i])) ++i;
        size_t j = i;
        while (j < summary.size() && is_token_char(summary[j])) ++j;
        if (j > i) {
            std::string tok = summary.substr(i, j - i);
            v[static_cast<int>(fnv1a(tok) % static_cast<std::uint64_t>(dim))] += 1.0;
        }
        i = j;
    }
    double n = v.norm();
    if (n > 0.0) v /= n;
    return v;
}

namespace {

Eigen::VectorXd instance_vector(const AbstractedSession& s, int idx, AblationMode mode) {
    if (mode == AblationMode::Full) return s.embeddings[idx];
    return bow_vector(s.summaries[idx]);
}

}  // namespace

Centroids fit_dataset_centroids(const std::vector<AbstractedSession>& sessions,
                                AblationMode mode, double tau,
                                const std::set<std::string>& skip_labels) {
    CentroidFitter fitter;
    for (const auto& s : sessions) {
        if (!s.meta->train || s.primary < 0) continue;
        if (skip_labels.count(s.meta->label)) continue;
        fitter.add(s.meta->label, instance_vector(s, s.primary, mode));
    }
    return fitter.centroids(tau, kBenignLabel);
}

std::vector<SessionPrediction> classify_sessions(
    const std::vector<AbstractedSession>& sessions, const Centroids& centroids,
    AblationMode mode) {
    std::vector<SessionPrediction> preds;
    preds.reserve(sessions.size());
    for (const auto& s : sessions) {
        SessionPrediction pred;
        const size_t count =
            mode == AblationMode::Full ? s.embeddings.size() : s.summaries.size();
        for (size_t i = 0; i < count; ++i) {
            auto [mal, cat, conf] =
                mock_classify(instance_vector(s, static_cast<int>(i), mode), centroids);
            if (mal && (!pred.malicious || conf > pred.confidence)) {
                pred.malicious = true;
                pred.category = cat;
                pred.confidence = conf;
            } else if (!pred.malicious) {
                pred.confidence = std::max(pred.confidence, conf);
            }
        }
        preds.push_back(std::move(pred));
    }
    return preds;
}

Metrics ablation_run(const std::vector<AbstractedSession>& sessions, AblationMode mode,
                     double tau) {
    Centroids centroids = fit_dataset_centroids(sessions, mode, tau);
    std::vector<const AbstractedSession*> test;
    for (const auto& s : sessions)
        if (!s.meta->train) test.push_back(&s);
    std::vector<AbstractedSession> test_copy;
    test_copy.reserve(test.size());
    std::vector<const LabeledSession*> metas;
    for (const auto* s : test) {
        test_copy.push_back(*s);
        metas.push_back(s->meta);
    }
    auto preds = classify_sessions(test_copy, centroids, mode);
    return evaluate(preds, metas);
}

UnknownAttackResult unknown_attack_protocol(const std::vector<AbstractedSession>& input_sessions,
                                            const std::set<std::string>& holdout_labels,
                                            int n_expert, double tau,
                                            const ReembedFn& reembed) {
    // With a re-embed hook, score against an encoder that never trained on
    // the holdout classes, the way a genuinely unseen attack would arrive.
    std::vector<AbstractedSession> reembedded;
    if (reembed) {
        auto vectors = reembed(holdout_labels);
        if (vectors.size() != input_sessions.size())
            throw Error("reembed returned wrong session count");
        reembedded = input_sessions;
        for (size_t i = 0; i < reembedded.size(); ++i)
            reembedded[i].embeddings = std::move(vectors[i]);
    }
    const std::vector<AbstractedSession>& sessions =
        reembed ? reembedded : input_sessions;

    std::set<std::string> attack_labels;
    for (const auto& s : sessions)
        if (s.meta->label != kBenignLabel) attack_labels.insert(s.meta->label);
    bool any_left = false;
    for (const auto& l : attack_labels)
        if (!holdout_labels.count(l)) any_left = true;
    if (!any_left) throw HoldoutTooLarge();

    CentroidFitter fitter;
    for (const auto& s : sessions) {
        if (!s.meta->train || s.primary < 0) continue;
        if (holdout_labels.count(s.meta->label)) continue;
        fitter.add(s.meta->label, instance_vector(s, s.primary, AblationMode::Full));
    }

    Centroids phase1 = fitter.centroids(tau, kBenignLabel);
    // Super-centroid covering unseen attacks: mean of the attack centroids.
    Eigen::VectorXd super;
    int n_super = 0;
    for (const auto& [label, c] : phase1.by_label) {
        if (label == kBenignLabel) continue;
        if (n_super == 0)
            super = c;
        else
            super += c;
        ++n_super;
    }
    if (n_super > 0) {
        double n = super.norm();
        if (n > 0.0) super /= n;
        phase1.by_label["Attack"] = super;
    }

    std::vector<AbstractedSession> holdout_test;
    std::vector<const LabeledSession*> holdout_meta;
    for (const auto& s : sessions) {
        if (s.meta->train) continue;
        if (holdout_labels.count(s.meta->label) || s.meta->label == kBenignLabel) {
            holdout_test.push_back(s);
            holdout_meta.push_back(s.meta);
        }
    }
    UnknownAttackResult result;
    result.binary_holdout =
        evaluate(classify_sessions(holdout_test, phase1, AblationMode::Full), holdout_meta);

    // Incremental update: experts hand over labeled traces and the model is
    // brought up to date with them, so this phase works on embeddings from
    // the updated encoder (the input ones), not the holdout-free encoder.
    CentroidFitter updated;
    for (const auto& s : input_sessions) {
        if (!s.meta->train || s.primary < 0) continue;
        if (holdout_labels.count(s.meta->label)) continue;
        updated.add(s.meta->label, instance_vector(s, s.primary, AblationMode::Full));
    }
    std::map<std::string, int> added;
    for (const auto& s : input_sessions) {
        if (!s.meta->train || s.primary < 0) continue;
        if (!holdout_labels.count(s.meta->label)) continue;
        if (added[s.meta->label] >= n_expert) continue;
        updated.add(s.meta->label, instance_vector(s, s.primary, AblationMode::Full));
        added[s.meta->label] += 1;
    }
    Centroids phase2 = updated.centroids(tau, kBenignLabel);

    std::vector<AbstractedSession> all_test;
    std::vector<const LabeledSession*> all_meta;
    for (const auto& s : input_sessions) {
        if (s.meta->train) continue;
        all_test.push_back(s);
        all_meta.push_back(s.meta);
    }
    result.after_incremental =
        evaluate(classify_sessions(all_test, phase2, AblationMode::Full), all_meta);
    return result;
}

std::string metrics_to_json(const Metrics& metrics) {
    json obj;
    auto prf_json = [](const Metrics::PRF& p) {
        return json{{"tp", p.tp},
                    {"fp", p.fp},
                    {"fn", p.fn},
                    {"precision", p.precision},
                    {"recall", p.recall},
                    {"f1", p.f1}};
    };
    json per = json::object();
    for (const auto& [label, prf] : metrics.per_label) per[label] = prf_json(prf);
    obj["per_label"] = per;
    obj["macro_precision"] = metrics.macro_precision;
    obj["macro_recall"] = metrics.macro_recall;
    obj["macro_f1"] = metrics.macro_f1;
    obj["binary"] = prf_json(metrics.binary);
    json conf = json::object();
    for (const auto& [truth, row] : metrics.confusion) {
        json r = json::object();
        for (const auto& [pred, n] : row) r[pred] = n;
        conf[truth] = r;
    }
    obj["confusion"] = conf;
    return obj.dump(2);
}

Metrics metrics_from_json(const std::string& text) {
    json obj = json::parse(text);
    Metrics m;
    auto prf_from = [](const json& p) {
        Metrics::PRF prf;
        prf.tp = p.at("tp").get<int>();
        prf.fp = p.at("fp").get<int>();
        prf.fn = p.at("fn").get<int>();
        prf.precision = p.at("precision").get<double>();
        prf.recall = p.at("recall").get<double>();
        prf.f1 = p.at("f1").get<double>();
        return prf;
    };
    for (const auto& [label, p] : obj.at("per_label").items())
        m.per_label[label] = prf_from(p);
    m.macro_precision = obj.at("macro_precision").get<double>();
    m.macro_recall = obj.at("macro_recall").get<double>();
    m.macro_f1 = obj.at("macro_f1").get<double>();
    m.binary = prf_from(obj.at("binary"));
    for (const auto& [truth, row] : obj.at("confusion").items())
        for (const auto& [pred, n] : row.items()) m.confusion[truth][pred] = n.get<int>();
    return m;
}

void save_dataset(const LabeledDataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "sessions");
    json manifest;
    manifest["labels"] = ds.labels;
    manifest["train_fraction"] = ds.train_fraction;
    json sessions = json::array();
    char name[32];
    for (size_t i = 0; i < ds.sessions.size(); ++i) {
        const auto& s = ds.sessions[i];
        std::snprintf(name, sizeof(name), "%05zu.jsonl", i);
        std::ofstream out(fs::path(dir) / "sessions" / name, std::ios::binary);
        out << s.events_jsonl;
        if (!out) throw Error("failed to write session file: " + std::string(name));
        sessions.push_back(json{{"label", s.label},
                                {"train", s.train},
                                {"gt", std::vector<std::string>(s.gt_entities.begin(),
                                                                s.gt_entities.end())},
                                {"file", std::string("sessions/") + name}});
    }
    manifest["sessions"] = sessions;
    std::ofstream out(fs::path(dir) / "manifest.json", std::ios::binary);
    out << manifest.dump(2) << "\n";
    if (!out) throw Error("failed to write dataset manifest");
}

LabeledDataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream in(fs::path(dir) / "manifest.json", std::ios::binary);
    if (!in) throw Error("cannot read dataset manifest in " + dir);
    json manifest = json::parse(in, nullptr, false);
    if (manifest.is_discarded()) throw Error("malformed dataset manifest in " + dir);
    LabeledDataset ds;
    ds.labels = manifest.at("labels").get<std::vector<std::string>>();
    ds.train_fraction = manifest.at("train_fraction").get<double>();
    for (const auto& s : manifest.at("sessions")) {
        LabeledSession ls;
        ls.label = s.at("label").get<std::string>();
        ls.train = s.at("train").get<bool>();
        for (const auto& g : s.at("gt")) ls.gt_entities.insert(g.get<std::string>());
        std::ifstream ev(fs::path(dir) / s.at("file").get<std::string>(),
                         std::ios::binary);
        if (!ev) throw Error("missing session file: " + s.at("file").get<std::string>());
        std::ostringstream buf;
        buf << ev.rdbuf();
        ls.events_jsonl = buf.str();
        ds.sessions.push_back(std::move(ls));
    }
    return ds;
}

}  // namespace smartguard
