#include "smartguard/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>

#include "json.hpp"

#include "smartguard/abstraction.hpp"
#include "smartguard/encoder.hpp"
#include "smartguard/inference.hpp"
#include "smartguard/ingest.hpp"
#include "smartguard/kg.hpp"
#include "smartguard/token_embedding.hpp"

namespace smartguard {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::string unquote(const std::string& s) {
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"')
        return s.substr(1, s.size() - 2);
    return s;
}

long long to_int(const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        long long v = std::stoll(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("invalid integer for " + key + ": " + value);
    }
}

double to_double(const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("invalid number for " + key + ": " + value);
    }
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

PipelineConfig parse_config(const std::string& text) {
    PipelineConfig c;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = unquote(trim(line.substr(eq + 1)));

        if (key == "input") c.input = value;
        else if (key == "workdir") c.workdir = value;
        else if (key == "scenarios") c.scenarios = value;
        else if (key == "n_per_class") c.n_per_class = static_cast<int>(to_int(key, value));
        else if (key == "train_fraction") c.train_fraction = to_double(key, value);
        else if (key == "jitter") c.jitter = to_double(key, value);
        else if (key == "k") c.k = static_cast<int>(to_int(key, value));
        else if (key == "theta_support") c.theta_support = to_double(key, value);
        else if (key == "theta_pos") c.theta_pos = to_double(key, value);
        else if (key == "epochs") c.epochs = static_cast<int>(to_int(key, value));
        else if (key == "batch") c.batch = static_cast<int>(to_int(key, value));
        else if (key == "lr") c.lr = to_double(key, value);
        else if (key == "decay") c.decay = to_double(key, value);
        else if (key == "seed") c.seed = static_cast<std::uint64_t>(to_int(key, value));
        else if (key == "tau") c.tau = to_double(key, value);
        else if (key == "mode") c.mode = value;
        else if (key == "prompt_mode") c.prompt_mode = value;
        else if (key == "backend_host") c.backend_host = value;
        else if (key == "backend_port") c.backend_port = static_cast<int>(to_int(key, value));
        else if (key == "backend_path") c.backend_path = value;
        else throw ConfigError("unknown key: " + key);
    }
    if (c.mode != "mock" && c.mode != "remote")
        throw ConfigError("mode must be mock or remote, got " + c.mode);
    if (c.prompt_mode != "multi" && c.prompt_mode != "single")
        throw ConfigError("prompt_mode must be multi or single, got " + c.prompt_mode);
    if (c.n_per_class < 1) throw ConfigError("n_per_class must be positive");
    if (c.train_fraction <= 0.0 || c.train_fraction > 1.0)
        throw ConfigError("train_fraction must be in (0, 1]");
    if (c.k < 0) throw ConfigError("k must be non-negative");
    if (c.epochs < 0 || c.batch < 1) throw ConfigError("bad training schedule");
    if (c.mode == "remote" && c.backend_host.empty())
        throw ConfigError("remote mode needs backend_host");
    return c;
}

PipelineConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

std::string config_to_string(const PipelineConfig& c) {
    std::ostringstream os;
    os << "input = " << c.input << "\n";
    os << "workdir = " << c.workdir << "\n";
    os << "scenarios = " << c.scenarios << "\n";
    os << "n_per_class = " << c.n_per_class << "\n";
    os << "train_fraction = " << fmt_double(c.train_fraction) << "\n";
    os << "jitter = " << fmt_double(c.jitter) << "\n";
    os << "k = " << c.k << "\n";
    os << "theta_support = " << fmt_double(c.theta_support) << "\n";
    os << "theta_pos = " << fmt_double(c.theta_pos) << "\n";
    os << "epochs = " << c.epochs << "\n";
    os << "batch = " << c.batch << "\n";
    os << "lr = " << fmt_double(c.lr) << "\n";
    os << "decay = " << fmt_double(c.decay) << "\n";
    os << "seed = " << c.seed << "\n";
    os << "tau = " << fmt_double(c.tau) << "\n";
    os << "mode = " << c.mode << "\n";
    os << "prompt_mode = " << c.prompt_mode << "\n";
    os << "backend_host = " << c.backend_host << "\n";
    os << "backend_port = " << c.backend_port << "\n";
    os << "backend_path = " << c.backend_path << "\n";
    return os.str();
}

std::uint64_t config_hash(const PipelineConfig& c) {
    // Where artifacts live has no bearing on what they contain; keeping the
    // workdir out of the hash lets runs in different directories compare equal.
    PipelineConfig canon = c;
    canon.workdir.clear();
    return fnv1a(config_to_string(canon));
}

const std::vector<Stage>& all_stages() {
    static const std::vector<Stage> stages = {Stage::Gen,        Stage::Ingest,
                                              Stage::BuildKg,    Stage::Extract,
                                              Stage::TrainEmbed, Stage::Embed,
                                              Stage::Infer,      Stage::Eval};
    return stages;
}

const char* stage_name(Stage stage) {
    switch (stage) {
        case Stage::Gen: return "gen";
        case Stage::Ingest: return "ingest";
        case Stage::BuildKg: return "build-kg";
        case Stage::Extract: return "extract";
        case Stage::TrainEmbed: return "train-embed";
        case Stage::Embed: return "embed";
        case Stage::Infer: return "infer";
        case Stage::Eval: return "eval";
    }
    return "?";
}

namespace {

struct Paths {
    fs::path data;
    fs::path sessions, graphs, profile, instances, tokens, encoder;
    fs::path embeddings, centroids, verdicts, report, stages;
};

Paths make_paths(const PipelineConfig& c) {
    fs::path wd(c.workdir);
    Paths p;
    p.data = c.input.empty() ? wd / "data" : fs::path(c.input);
    p.sessions = wd / "sessions.json";
    p.graphs = wd / "graphs.json";
    p.profile = wd / "profile.json";
    p.instances = wd / "instances.json";
    p.tokens = wd / "tokens.json";
    p.encoder = wd / "encoder.json";
    p.embeddings = wd / "embeddings.json";
    p.centroids = wd / "centroids.json";
    p.verdicts = wd / "verdicts.json";
    p.report = wd / "report.json";
    p.stages = wd / ".stages.json";
    return p;
}

std::string hash_hex(std::uint64_t h) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read file: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void atomic_write(const fs::path& path, const std::string& bytes) {
    fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        out << bytes;
        if (!out) throw Error("failed to write " + path.string());
    }
    fs::rename(tmp, path);
}

void write_artifact(const fs::path& path, const json& payload, std::uint64_t hash) {
    json obj;
    obj["config_hash"] = hash_hex(hash);
    obj["payload"] = payload;
    atomic_write(path, obj.dump(2) + "\n");
}

json read_artifact(const fs::path& path, std::uint64_t hash) {
    json obj = json::parse(read_file(path), nullptr, false);
    if (obj.is_discarded() || !obj.is_object() || !obj.contains("config_hash") ||
        !obj.contains("payload"))
        throw Error("malformed artifact: " + path.string());
    if (obj["config_hash"].get<std::string>() != hash_hex(hash))
        throw ArtifactMismatch(path.string());
    return obj["payload"];
}

// Normalized per-session view stored in sessions.json.
struct SessionsDoc {
    std::vector<std::string> labels;
    double train_fraction = 0.9;
    struct Entry {
        std::string label;
        bool train = false;
        std::set<std::string> gt;
        std::string events;
    };
    std::vector<Entry> entries;
};

json sessions_to_payload(const SessionsDoc& doc) {
    json payload;
    payload["labels"] = doc.labels;
    payload["train_fraction"] = doc.train_fraction;
    json arr = json::array();
    for (const auto& e : doc.entries)
        arr.push_back(json{{"label", e.label},
                           {"train", e.train},
                           {"gt", std::vector<std::string>(e.gt.begin(), e.gt.end())},
                           {"events", e.events}});
    payload["sessions"] = arr;
    return payload;
}

SessionsDoc sessions_from_payload(const json& payload) {
    SessionsDoc doc;
    doc.labels = payload.at("labels").get<std::vector<std::string>>();
    doc.train_fraction = payload.at("train_fraction").get<double>();
    for (const auto& e : payload.at("sessions")) {
        SessionsDoc::Entry entry;
        entry.label = e.at("label").get<std::string>();
        entry.train = e.at("train").get<bool>();
        for (const auto& g : e.at("gt")) entry.gt.insert(g.get<std::string>());
        entry.events = e.at("events").get<std::string>();
        doc.entries.push_back(std::move(entry));
    }
    return doc;
}

Session parse_session(const std::string& events) {
    std::istringstream in(events);
    return load_session(in);
}

std::vector<BehaviorInstance> extract_instances(const KnowledgeGraph& g,
                                                const NoiseProfile& profile, int k) {
    std::vector<BehaviorInstance> instances = merge_subsets(form_instances(g, k));
    for (auto& inst : instances) {
        inst = filter_noise(g, inst, profile);
        inst.summary = summarize(g, inst);
    }
    return instances;
}

std::set<std::string> instance_entity_names(const KnowledgeGraph& g,
                                            const BehaviorInstance& inst) {
    std::set<std::string> names;
    for (int id : inst.node_ids)
        if (!g.is_structural_node(id)) names.insert(g.nodes[id].name);
    return names;
}

int pick_primary(const KnowledgeGraph& g, const std::vector<BehaviorInstance>& instances,
                 const std::set<std::string>& gt) {
    if (instances.empty()) return -1;
    int best = 0;
    size_t best_overlap = 0, best_size = 0;
    for (size_t i = 0; i < instances.size(); ++i) {
        auto names = instance_entity_names(g, instances[i]);
        size_t overlap = 0;
        for (const auto& n : names)
            if (gt.count(n)) ++overlap;
        size_t size = instances[i].node_ids.size();
        if (i == 0 || overlap > best_overlap ||
            (overlap == best_overlap && size > best_size)) {
            best = static_cast<int>(i);
            best_overlap = overlap;
            best_size = size;
        }
    }
    return best;
}

struct StageContext {
    const PipelineConfig& config;
    Paths paths;
    std::uint64_t hash;
};

std::vector<fs::path> dataset_files(const Paths& p) {
    std::vector<fs::path> files = {p.data / "manifest.json"};
    fs::path dir = p.data / "sessions";
    if (fs::exists(dir)) {
        std::vector<fs::path> sessions;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.is_regular_file()) sessions.push_back(e.path());
        std::sort(sessions.begin(), sessions.end());
        files.insert(files.end(), sessions.begin(), sessions.end());
    }
    return files;
}

std::vector<ScenarioSpec> scenarios_for(const PipelineConfig& c) {
    auto all = builtin_scenarios(c.jitter);
    if (c.scenarios == "all") return all;
    std::vector<ScenarioSpec> picked;
    std::istringstream in(c.scenarios);
    std::string label;
    while (std::getline(in, label, ',')) {
        label = trim(label);
        if (label.empty()) continue;
        picked.push_back(scenario_by_label(all, label));
    }
    if (picked.empty()) throw ConfigError("no scenarios selected: " + c.scenarios);
    return picked;
}

void run_gen(const StageContext& ctx) {
    if (!ctx.config.input.empty()) {
        if (!fs::exists(ctx.paths.data / "manifest.json"))
            throw Error("input dataset has no manifest: " + ctx.paths.data.string());
        return;
    }
    LabeledDataset ds = build_dataset(scenarios_for(ctx.config), ctx.config.n_per_class,
                                      ctx.config.train_fraction, ctx.config.seed);
    save_dataset(ds, ctx.paths.data.string());
}

void run_ingest(const StageContext& ctx) {
    LabeledDataset ds = load_dataset(ctx.paths.data.string());
    if (ds.sessions.empty()) throw Error("dataset has no sessions");
    SessionsDoc doc;
    doc.labels = ds.labels;
    doc.train_fraction = ds.train_fraction;
    for (size_t i = 0; i < ds.sessions.size(); ++i) {
        const auto& s = ds.sessions[i];
        Session parsed = parse_session(s.events_jsonl);
        if (parsed.records.empty())
            throw Error("session " + std::to_string(i) + " has no events");
        doc.entries.push_back(SessionsDoc::Entry{s.label, s.train, s.gt_entities,
                                                 serialize_session(parsed)});
    }
    write_artifact(ctx.paths.sessions, sessions_to_payload(doc), ctx.hash);
}

void run_build_kg(const StageContext& ctx) {
    SessionsDoc doc = sessions_from_payload(read_artifact(ctx.paths.sessions, ctx.hash));
    json payload = json::array();
    for (const auto& e : doc.entries) {
        KnowledgeGraph g = build_graph(parse_session(e.events));
        payload.push_back(json::parse(graph_to_json(g)));
    }
    write_artifact(ctx.paths.graphs, payload, ctx.hash);
}

std::vector<KnowledgeGraph> load_graphs(const StageContext& ctx) {
    json payload = read_artifact(ctx.paths.graphs, ctx.hash);
    std::vector<KnowledgeGraph> graphs;
    graphs.reserve(payload.size());
    for (const auto& g : payload) graphs.push_back(graph_from_json(g.dump()));
    return graphs;
}

void run_extract(const StageContext& ctx) {
    SessionsDoc doc = sessions_from_payload(read_artifact(ctx.paths.sessions, ctx.hash));
    std::vector<KnowledgeGraph> graphs = load_graphs(ctx);
    std::vector<KnowledgeGraph> train_graphs;
    for (size_t i = 0; i < graphs.size(); ++i)
        if (doc.entries[i].train) train_graphs.push_back(graphs[i]);
    NoiseProfile profile =
        profile_noise(train_graphs, ctx.config.theta_support, ctx.config.theta_pos);
    write_artifact(ctx.paths.profile, json::parse(profile_to_json(profile)), ctx.hash);

    json payload = json::array();
    for (const auto& g : graphs) {
        auto instances = extract_instances(g, profile, ctx.config.k);
        payload.push_back(json::parse(instances_to_json(instances)));
    }
    write_artifact(ctx.paths.instances, payload, ctx.hash);
}

void run_train_embed(const StageContext& ctx) {
    SessionsDoc doc = sessions_from_payload(read_artifact(ctx.paths.sessions, ctx.hash));
    std::vector<KnowledgeGraph> graphs = load_graphs(ctx);
    NoiseProfile profile = profile_from_json(read_artifact(ctx.paths.profile, ctx.hash).dump());

    std::vector<KnowledgeGraph> train_graphs;
    for (size_t i = 0; i < graphs.size(); ++i)
        if (doc.entries[i].train) train_graphs.push_back(graphs[i]);

    TokenTrainConfig tok_config;
    tok_config.seed = ctx.config.seed;
    TokenEmbeddings tok = train_token_embeddings(build_corpus(train_graphs), tok_config);
    write_artifact(ctx.paths.tokens, json::parse(token_embeddings_to_json(tok)), ctx.hash);

    // The training corpus is rebuilt from graphs + profile so edits to the
    // extracted instances never trigger a retrain.
    std::vector<EncGraph> corpus;
    for (size_t i = 0; i < graphs.size(); ++i) {
        if (!doc.entries[i].train) continue;
        for (const auto& inst : extract_instances(graphs[i], profile, ctx.config.k))
            corpus.push_back(make_enc_graph(graphs[i], tok, inst));
    }
    EncoderTrainConfig train_config;
    train_config.epochs = ctx.config.epochs;
    train_config.batch = ctx.config.batch;
    train_config.lr = ctx.config.lr;
    train_config.decay = ctx.config.decay;
    train_config.seed = ctx.config.seed;
    EncoderTrainResult result = train_encoder(corpus, train_config);
    write_artifact(ctx.paths.encoder,
                   json::parse(encoder_to_json(result.params, ctx.hash)), ctx.hash);
}

void run_embed(const StageContext& ctx) {
    SessionsDoc doc = sessions_from_payload(read_artifact(ctx.paths.sessions, ctx.hash));
    std::vector<KnowledgeGraph> graphs = load_graphs(ctx);
    json inst_payload = read_artifact(ctx.paths.instances, ctx.hash);
    TokenEmbeddings tok =
        token_embeddings_from_json(read_artifact(ctx.paths.tokens, ctx.hash).dump());
    EncoderParams params =
        encoder_from_json(read_artifact(ctx.paths.encoder, ctx.hash).dump());

    json payload = json::array();
    for (size_t i = 0; i < graphs.size(); ++i) {
        auto instances = instances_from_json(inst_payload[i].dump());
        json vectors = json::array();
        json summaries = json::array();
        for (const auto& inst : instances) {
            Eigen::VectorXd v = embed_behavior(params, tok, graphs[i], inst);
            vectors.push_back(std::vector<double>(v.data(), v.data() + v.size()));
            summaries.push_back(inst.summary);
        }
        payload.push_back(json{{"primary", pick_primary(graphs[i], instances,
                                                        doc.entries[i].gt)},
                               {"vectors", vectors},
                               {"summaries", summaries}});
    }
    write_artifact(ctx.paths.embeddings, payload, ctx.hash);
}

std::vector<std::vector<Eigen::VectorXd>> embed_excluding_impl(
    const StageContext& ctx, const std::set<std::string>& excluded_labels) {
    SessionsDoc doc = sessions_from_payload(read_artifact(ctx.paths.sessions, ctx.hash));
    std::vector<KnowledgeGraph> graphs = load_graphs(ctx);
    NoiseProfile profile = profile_from_json(read_artifact(ctx.paths.profile, ctx.hash).dump());
    json inst_payload = read_artifact(ctx.paths.instances, ctx.hash);

    std::vector<KnowledgeGraph> train_graphs;
    for (size_t i = 0; i < graphs.size(); ++i)
        if (doc.entries[i].train && !excluded_labels.count(doc.entries[i].label))
            train_graphs.push_back(graphs[i]);
    if (train_graphs.empty()) throw Error("no training sessions left after exclusion");

    TokenTrainConfig tok_config;
    tok_config.seed = ctx.config.seed;
    TokenEmbeddings tok = train_token_embeddings(build_corpus(train_graphs), tok_config);

    std::vector<EncGraph> corpus;
    for (size_t i = 0; i < graphs.size(); ++i) {
        if (!doc.entries[i].train || excluded_labels.count(doc.entries[i].label)) continue;
        for (const auto& inst : extract_instances(graphs[i], profile, ctx.config.k))
            corpus.push_back(make_enc_graph(graphs[i], tok, inst));
    }
    EncoderTrainConfig train_config;
    train_config.epochs = ctx.config.epochs;
    train_config.batch = ctx.config.batch;
    train_config.lr = ctx.config.lr;
    train_config.decay = ctx.config.decay;
    train_config.seed = ctx.config.seed;
    EncoderTrainResult result = train_encoder(corpus, train_config);

    std::vector<std::vector<Eigen::VectorXd>> out(graphs.size());
    for (size_t i = 0; i < graphs.size(); ++i) {
        auto instances = instances_from_json(inst_payload[i].dump());
        for (const auto& inst : instances)
            out[i].push_back(embed_behavior(result.params, tok, graphs[i], inst));
    }
    return out;
}

void run_infer(const StageContext& ctx) {
    SessionsDoc doc = sessions_from_payload(read_artifact(ctx.paths.sessions, ctx.hash));
    std::vector<KnowledgeGraph> graphs = load_graphs(ctx);
    json inst_payload = read_artifact(ctx.paths.instances, ctx.hash);
    json emb_payload = read_artifact(ctx.paths.embeddings, ctx.hash);

    CentroidFitter fitter;
    for (size_t i = 0; i < doc.entries.size(); ++i) {
        if (!doc.entries[i].train) continue;
        int primary = emb_payload[i].at("primary").get<int>();
        if (primary < 0) continue;
        auto vec = emb_payload[i].at("vectors")[primary].get<std::vector<double>>();
        fitter.add(doc.entries[i].label,
                   Eigen::Map<const Eigen::VectorXd>(vec.data(),
                                                     static_cast<long>(vec.size())));
    }
    Centroids centroids = fitter.centroids(ctx.config.tau, kBenignLabel);
    write_artifact(ctx.paths.centroids, json::parse(centroids_to_json(centroids)),
                   ctx.hash);

    std::unique_ptr<Backend> backend;
    if (ctx.config.mode == "remote") {
        const char* token = std::getenv("SG_BACKEND_TOKEN");
        backend = std::make_unique<RemoteBackend>(ctx.config.backend_host,
                                                  ctx.config.backend_port,
                                                  ctx.config.backend_path,
                                                  token ? token : "");
    } else {
        backend = std::make_unique<MockBackend>(centroids);
    }

    CotPolicy policy;
    policy.tau = ctx.config.tau;
    for (const auto& l : doc.labels)
        if (l != kBenignLabel) policy.label_set.insert(l);
    const PromptMode mode = ctx.config.prompt_mode == "single" ? PromptMode::SingleTurn
                                                               : PromptMode::MultiTurn;

    json payload = json::array();
    for (size_t i = 0; i < doc.entries.size(); ++i) {
        if (doc.entries[i].train) continue;
        auto instances = instances_from_json(inst_payload[i].dump());
        Verdict session_verdict;
        bool have_verdict = false;
        for (size_t j = 0; j < instances.size(); ++j) {
            auto vec = emb_payload[i].at("vectors")[j].get<std::vector<double>>();
            Eigen::VectorXd emb = Eigen::Map<const Eigen::VectorXd>(
                vec.data(), static_cast<long>(vec.size()));
            PromptBundle bundle = assemble_prompt(graphs[i], instances[j], emb, mode);
            Verdict v = run_cot(bundle, *backend, policy);
            bool better = !have_verdict ||
                          (v.malicious && !session_verdict.malicious) ||
                          (v.malicious == session_verdict.malicious &&
                           v.confidence > session_verdict.confidence);
            if (better) session_verdict = v;
            have_verdict = true;
        }
        json turns = json::array();
        for (const auto& t : session_verdict.transcript.turns)
            turns.push_back(json{{"instruction", t.instruction},
                                 {"output", t.model_output}});
        json entry;
        entry["session"] = i;
        entry["malicious"] = session_verdict.malicious;
        if (session_verdict.category) entry["category"] = *session_verdict.category;
        entry["confidence"] = session_verdict.confidence;
        entry["turns"] = turns;
        payload.push_back(std::move(entry));
    }
    write_artifact(ctx.paths.verdicts, payload, ctx.hash);
}

Metrics run_eval(const StageContext& ctx) {
    SessionsDoc doc = sessions_from_payload(read_artifact(ctx.paths.sessions, ctx.hash));
    json verdicts = read_artifact(ctx.paths.verdicts, ctx.hash);

    std::vector<SessionPrediction> preds;
    std::vector<LabeledSession> metas;
    metas.reserve(verdicts.size());
    for (const auto& v : verdicts) {
        size_t idx = v.at("session").get<size_t>();
        if (idx >= doc.entries.size()) throw MissingVerdict(idx);
        SessionPrediction pred;
        pred.malicious = v.at("malicious").get<bool>();
        if (v.contains("category")) pred.category = v["category"].get<std::string>();
        pred.confidence = v.at("confidence").get<double>();
        preds.push_back(std::move(pred));
        LabeledSession meta;
        meta.label = doc.entries[idx].label;
        meta.train = false;
        metas.push_back(std::move(meta));
    }
    std::vector<const LabeledSession*> meta_ptrs;
    meta_ptrs.reserve(metas.size());
    for (const auto& m : metas) meta_ptrs.push_back(&m);
    Metrics metrics = evaluate(preds, meta_ptrs);

    json payload;
    payload["metrics"] = json::parse(metrics_to_json(metrics));
    payload["n_test"] = preds.size();
    {
        // Echo the semantic configuration only; the workdir is wherever the
        // report already lives and would break byte-comparability of runs.
        PipelineConfig canon = ctx.config;
        canon.workdir.clear();
        payload["config"] = config_to_string(canon);
    }
    write_artifact(ctx.paths.report, payload, ctx.hash);
    return metrics;
}

struct StageSpec {
    Stage stage;
    std::function<std::vector<fs::path>()> inputs;  // lazy: files may not exist yet
    std::vector<fs::path> outputs;
    std::function<void(const StageContext&)> run;
};

std::vector<StageSpec> make_stage_specs(const StageContext& ctx, Metrics* metrics_out) {
    const Paths& p = ctx.paths;
    auto fixed = [](std::vector<fs::path> v) {
        return [v]() { return v; };
    };
    std::vector<StageSpec> specs;
    specs.push_back({Stage::Gen, fixed({}), {p.data / "manifest.json"}, run_gen});
    specs.push_back(
        {Stage::Ingest, [p]() { return dataset_files(p); }, {p.sessions}, run_ingest});
    specs.push_back({Stage::BuildKg, fixed({p.sessions}), {p.graphs}, run_build_kg});
    specs.push_back({Stage::Extract, fixed({p.graphs, p.sessions}),
                     {p.profile, p.instances}, run_extract});
    specs.push_back({Stage::TrainEmbed,
                     fixed({p.graphs, p.profile, p.sessions}),
                     {p.tokens, p.encoder},
                     run_train_embed});
    specs.push_back({Stage::Embed,
                     fixed({p.instances, p.graphs, p.tokens, p.encoder, p.sessions}),
                     {p.embeddings},
                     run_embed});
    specs.push_back({Stage::Infer,
                     fixed({p.embeddings, p.instances, p.graphs, p.sessions}),
                     {p.centroids, p.verdicts},
                     run_infer});
    specs.push_back({Stage::Eval,
                     fixed({p.verdicts, p.sessions}),
                     {p.report},
                     [metrics_out](const StageContext& c) {
                         Metrics m = run_eval(c);
                         if (metrics_out) *metrics_out = m;
                     }});
    return specs;
}

std::uint64_t stage_input_hash(const StageSpec& spec, const StageContext& ctx) {
    std::uint64_t h = fnv1a(stage_name(spec.stage), ctx.hash);
    for (const auto& path : spec.inputs()) {
        h = fnv1a(path.filename().string(), h);
        if (fs::exists(path)) h = fnv1a(read_file(path), h);
    }
    return h;
}

}  // namespace

std::vector<std::vector<Eigen::VectorXd>> embed_excluding(
    const PipelineConfig& config, const std::set<std::string>& excluded_labels) {
    StageContext ctx{config, make_paths(config), config_hash(config)};
    return embed_excluding_impl(ctx, excluded_labels);
}

PipelineResult run_stages(const PipelineConfig& config, Stage upto, std::ostream* log) {
    StageContext ctx{config, make_paths(config), config_hash(config)};
    fs::create_directories(fs::path(config.workdir));

    json recorded = json::object();
    if (fs::exists(ctx.paths.stages)) {
        recorded = json::parse(read_file(ctx.paths.stages), nullptr, false);
        if (recorded.is_discarded() || !recorded.is_object()) recorded = json::object();
    }

    PipelineResult result;
    auto specs = make_stage_specs(ctx, &result.metrics);
    for (const auto& spec : specs) {
        // Gen is a no-op when the dataset is supplied by the caller, but the
        // manifest must exist.
        const bool user_data = spec.stage == Stage::Gen && !config.input.empty();
        std::uint64_t in_hash = stage_input_hash(spec, ctx);
        bool outputs_ok = true;
        for (const auto& out : spec.outputs)
            if (!fs::exists(out)) outputs_ok = false;
        const std::string key = stage_name(spec.stage);
        bool skip = outputs_ok && recorded.contains(key) &&
                    recorded[key].get<std::string>() == hash_hex(in_hash);

        StageReport report;
        report.stage = spec.stage;
        for (const auto& out : spec.outputs) report.outputs.push_back(out.string());
        if (skip || (user_data && fs::exists(ctx.paths.data / "manifest.json"))) {
            report.skipped = true;
            if (log) *log << "[" << key << "] skip\n";
        } else {
            if (log) *log << "[" << key << "] run\n";
            try {
                spec.run(ctx);
            } catch (const StageFailure&) {
                throw;
            } catch (const Error& e) {
                throw StageFailure(key, e.what());
            }
            // Outputs may have changed; record against the fresh input hash.
            in_hash = stage_input_hash(spec, ctx);
        }
        recorded[key] = hash_hex(in_hash);
        atomic_write(ctx.paths.stages, recorded.dump(2) + "\n");
        if (spec.stage == Stage::Eval) {
            result.report_path = ctx.paths.report.string();
            if (report.skipped) {
                json payload = read_artifact(ctx.paths.report, ctx.hash);
                result.metrics = metrics_from_json(payload.at("metrics").dump());
            }
        }
        result.stages.push_back(std::move(report));
        if (spec.stage == upto) break;
    }
    return result;
}

PipelineResult run_pipeline(const PipelineConfig& config, std::ostream* log) {
    return run_stages(config, Stage::Eval, log);
}

}  // namespace smartguard
