#include "smartguard/inference.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>

#include "httplib.h"
#include "json.hpp"

namespace smartguard {

using nlohmann::json;

namespace {

const char* kClassifyInstruction =
    "The following description shows the log information of the event. It contains a "
    "summary of the log text and behavior Embeddings. Please focus on the Embeddings to "
    "determine whether this event is a malicious event. If it is, please provide the "
    "classification of the malicious event.";

const std::vector<std::string> kCotInstructions = {
    "The following description shows the log information of the event. It contains a "
    "summary of the log text and behavior Embeddings. Please determine whether there are "
    "any sensitive nodes in this event. If so, please specify them.",
    "The following description contains a summary of the log text and behavior "
    "Embeddings. Please indicate the sensitive behavior path based on the sensitive "
    "nodes. The answer template is 'From...to...'.",
    "The following description contains a summary of the log text and behavior "
    "Embeddings. Please indicate the overall characteristics of the sensitive behavior.",
    kClassifyInstruction,
    "The following description contains a summary of the log text and behavior "
    "Embeddings. Please provide more explanations about this attack behavior.",
};

std::string lowercase(const std::string& s) {
    std::string out = s;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return out;
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    size_t b = s.find_last_not_of(" \t\r\n");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

}  // namespace

const std::vector<std::string>& cot_instructions() { return kCotInstructions; }

std::string render_embedding(const Eigen::VectorXd& v) {
    std::string out = "[";
    char buf[32];
    for (int i = 0; i < v.size(); ++i) {
        double r = std::nearbyint(v(i) * 1000.0) / 1000.0;  // ties to even
        if (r == 0.0) r = 0.0;                              // normalize -0
        std::snprintf(buf, sizeof(buf), "%.3f", r);
        if (i) out += ", ";
        out += buf;
    }
    return out + "]";
}

PromptBundle assemble_prompt(const KnowledgeGraph& g, const BehaviorInstance& inst,
                             const Eigen::VectorXd& embedding, PromptMode mode,
                             size_t max_bytes) {
    PromptBundle bundle;
    bundle.mode = mode;
    bundle.instruction = kClassifyInstruction;
    bundle.summary = inst.summary;
    bundle.embedding = embedding;

    std::string keys;
    for (size_t i = 0; i < inst.key_nodes.size(); ++i) {
        if (i) keys += ", ";
        keys += g.nodes[inst.key_nodes[i]].name;
        bundle.key_node_names.push_back(g.nodes[inst.key_nodes[i]].name);
    }

    // Earliest entity of the instance's record edges.
    int first_eid = -1;
    for (int eid : inst.edge_ids) {
        if (first_eid < 0 || g.edges[eid].ts < g.edges[first_eid].ts) first_eid = eid;
    }
    if (first_eid >= 0)
        bundle.first_entity = g.nodes[g.edges[first_eid].src].name;
    else if (!bundle.key_node_names.empty())
        bundle.first_entity = bundle.key_node_names.front();

    bundle.input = "The following is a summary of the log: [" + inst.summary +
                   "], where the key nodes are [" + keys +
                   "], followed by the embedding of the behavior graph " +
                   render_embedding(embedding) + ".";

    size_t total = bundle.instruction.size() + bundle.input.size();
    if (total > max_bytes) throw OversizeBundle(total);
    return bundle;
}

std::pair<bool, std::optional<std::string>> parse_verdict(const std::string& text) {
    std::string t = trim(text);
    std::string low = lowercase(t);
    if (low.rfind("no", 0) == 0) return {false, std::nullopt};
    if (low.rfind("yes", 0) == 0) {
        size_t pos = low.find("category is");
        if (pos == std::string::npos)
            throw MalformedResponse("yes without a category: " + text);
        std::string category = trim(t.substr(pos + std::string("category is").size()));
        while (!category.empty() &&
               (category.back() == '.' || category.back() == ',' || category.back() == '!' ||
                category.back() == ';'))
            category.pop_back();
        category = trim(category);
        if (category.empty()) throw MalformedResponse("empty category: " + text);
        return {true, category};
    }
    throw MalformedResponse("unparseable verdict: " + text);
}

std::tuple<bool, std::optional<std::string>, double> mock_classify(
    const Eigen::VectorXd& embedding, const Centroids& centroids) {
    if (centroids.by_label.empty()) throw EmptyCentroids();
    std::string best_label;
    double best = -1.0;
    for (const auto& [label, centroid] : centroids.by_label) {
        double s = sigma_cos(embedding, centroid);
        if (s > best) {  // map order is lexicographic, first max wins ties
            best = s;
            best_label = label;
        }
    }
    if (best_label == centroids.benign_label || best < centroids.tau)
        return {false, std::nullopt, best};
    return {true, best_label, best};
}

void CentroidFitter::add(const std::string& label, const Eigen::VectorXd& embedding) {
    double norm = embedding.norm();
    if (norm == 0.0) throw ZeroVector();
    auto [it, inserted] = sums_.try_emplace(label, Eigen::VectorXd::Zero(embedding.size()));
    it->second += embedding / norm;
    ++counts_[label];
}

void CentroidFitter::add_all(
    const std::map<std::string, std::vector<Eigen::VectorXd>>& labeled) {
    for (const auto& [label, examples] : labeled) {
        if (examples.empty()) throw EmptyClass(label);
        for (const auto& e : examples) add(label, e);
    }
}

Centroids CentroidFitter::centroids(double tau, const std::string& benign_label) const {
    Centroids out;
    out.tau = tau;
    out.benign_label = benign_label;
    for (const auto& [label, sum] : sums_) {
        Eigen::VectorXd mean = sum / double(counts_.at(label));
        double norm = mean.norm();
        if (norm == 0.0) throw ZeroVector();
        out.by_label[label] = mean / norm;
    }
    return out;
}

std::vector<std::string> CentroidFitter::labels() const {
    std::vector<std::string> out;
    for (const auto& [label, sum] : sums_) out.push_back(label);
    return out;
}

Centroids fit_centroids(const std::map<std::string, std::vector<Eigen::VectorXd>>& labeled,
                        double tau, const std::string& benign_label) {
    CentroidFitter fitter;
    fitter.add_all(labeled);
    return fitter.centroids(tau, benign_label);
}

BackendReply MockBackend::respond(const PromptBundle& bundle,
                                  const std::string& instruction,
                                  const std::vector<Turn>& history) {
    (void)instruction;
    auto join = [](const std::vector<std::string>& names) {
        std::string out;
        for (size_t i = 0; i < names.size(); ++i) {
            if (i) out += ", ";
            out += names[i];
        }
        return out;
    };

    auto classify = [&]() -> BackendReply {
        auto [malicious, category, confidence] = mock_classify(bundle.embedding, centroids_);
        if (malicious) return {"Yes, the category is " + *category + ".", confidence};
        return {"No.", confidence};
    };

    if (bundle.mode == PromptMode::SingleTurn) return classify();

    switch (history.size()) {
        case 0:
            return {bundle.key_node_names.empty() ? "None."
                                                  : join(bundle.key_node_names) + ".",
                    std::nullopt};
        case 1: {
            std::string from = bundle.first_entity.empty() ? "the session entry point"
                                                           : bundle.first_entity;
            std::string to = bundle.key_node_names.empty() ? "the key node"
                                                           : bundle.key_node_names.front();
            return {"From " + from + " to " + to + ".", std::nullopt};
        }
        case 2:
            return {bundle.key_node_names.empty()
                        ? "Routine file operations with no sensitive focus."
                        : "Operations concentrated around " + join(bundle.key_node_names) +
                              ".",
                    std::nullopt};
        case 3:
            return classify();
        case 4: {
            auto [malicious, category, confidence] =
                mock_classify(bundle.embedding, centroids_);
            if (malicious)
                return {"The " + *category +
                            " pattern typically operates through the nodes above; the "
                            "embedding places this behavior close to that class.",
                        confidence};
            return {"The behavior stays close to benign activity in the embedding space.",
                    confidence};
        }
        default:
            throw TurnLimitExceeded();
    }
}

RemoteBackend::RemoteBackend(std::string host, int port, std::string path,
                             std::string auth_token)
    : host_(std::move(host)), port_(port), path_(std::move(path)),
      auth_token_(std::move(auth_token)) {}

BackendReply RemoteBackend::respond(const PromptBundle& bundle,
                                    const std::string& instruction,
                                    const std::vector<Turn>& history) {
    json req;
    req["system"] = "You are an audit-log incident analyst.";
    json messages = json::array();
    for (const Turn& turn : history) {
        messages.push_back({{"role", "user"}, {"content", turn.instruction}});
        messages.push_back({{"role", "assistant"}, {"content", turn.model_output}});
    }
    messages.push_back(
        {{"role", "user"}, {"content", instruction + "\n\n" + bundle.input}});
    req["messages"] = std::move(messages);

    httplib::Client client(host_, port_);
    httplib::Headers headers;
    if (!auth_token_.empty()) headers.emplace("Authorization", "Bearer " + auth_token_);
    auto res = client.Post(path_, headers, req.dump(), "application/json");
    if (!res) throw BackendUnavailable("no response from " + host_ + path_);
    if (res->status != 200)
        throw BackendUnavailable("backend status " + std::to_string(res->status));
    json body = json::parse(res->body, nullptr, false);
    if (body.is_discarded() || !body.contains("text") || !body["text"].is_string())
        throw MalformedResponse("backend body is not {text}: " + res->body.substr(0, 120));
    return {body["text"].get<std::string>(), std::nullopt};
}

Verdict run_cot(const PromptBundle& bundle, Backend& backend, const CotPolicy& policy) {
    Verdict verdict;
    const bool multi = bundle.mode == PromptMode::MultiTurn;
    const std::vector<std::string> instructions =
        multi ? kCotInstructions : std::vector<std::string>{kClassifyInstruction};
    const int verdict_turn = multi ? 3 : 0;

    std::optional<double> confidence;
    for (size_t i = 0; i < instructions.size(); ++i) {
        BackendReply reply = backend.respond(bundle, instructions[i],
                                             verdict.transcript.turns);
        if (static_cast<int>(i) == verdict_turn) confidence = reply.confidence;
        if (multi && i == 1) {
            std::string low = lowercase(reply.text);
            if (low.rfind("from ", 0) != 0 || low.find(" to ") == std::string::npos)
                throw MalformedResponse("path answer not in 'From...to...' form: " +
                                        reply.text);
        }
        verdict.transcript.turns.push_back(Turn{instructions[i], reply.text});
    }

    auto [malicious, category] =
        parse_verdict(verdict.transcript.turns[verdict_turn].model_output);
    verdict.malicious = malicious;
    verdict.category = category;
    verdict.confidence = confidence.value_or(malicious ? 1.0 : 0.0);

    if (verdict.malicious && !policy.label_set.empty() &&
        !policy.label_set.count(*verdict.category))
        throw MalformedResponse("category outside the label set: " + *verdict.category);

    // Hallucination gate: a near-threshold "Yes" with no sensitive nodes
    // reported in turn one is downgraded.
    if (multi && verdict.malicious && confidence &&
        std::abs(*confidence - policy.tau) <= policy.hallucination_band) {
        const std::string& sensitive = verdict.transcript.turns[0].model_output;
        if (lowercase(trim(sensitive)).rfind("none", 0) == 0) {
            verdict.malicious = false;
            verdict.category.reset();
        }
    }
    return verdict;
}

std::string centroids_to_json(const Centroids& centroids) {
    json obj;
    obj["tau"] = centroids.tau;
    obj["benign_label"] = centroids.benign_label;
    json by_label = json::object();
    for (const auto& [label, vec] : centroids.by_label) {
        json arr = json::array();
        for (int i = 0; i < vec.size(); ++i) arr.push_back(vec(i));
        by_label[label] = std::move(arr);
    }
    obj["by_label"] = std::move(by_label);
    return obj.dump();
}

Centroids centroids_from_json(const std::string& text) {
    json obj = json::parse(text);
    Centroids out;
    out.tau = obj.at("tau").get<double>();
    out.benign_label = obj.at("benign_label").get<std::string>();
    for (const auto& [label, arr] : obj.at("by_label").items()) {
        Eigen::VectorXd vec(arr.size());
        for (int i = 0; i < static_cast<int>(arr.size()); ++i) vec(i) = arr[i].get<double>();
        out.by_label[label] = std::move(vec);
    }
    return out;
}

std::string verdicts_to_json(const std::vector<Verdict>& verdicts) {
    json arr = json::array();
    for (const auto& v : verdicts) {
        json obj;
        obj["malicious"] = v.malicious;
        if (v.category) obj["category"] = *v.category;
        obj["confidence"] = v.confidence;
        json turns = json::array();
        for (const auto& turn : v.transcript.turns)
            turns.push_back({{"instruction", turn.instruction},
                             {"model_output", turn.model_output}});
        obj["transcript"] = std::move(turns);
        arr.push_back(std::move(obj));
    }
    return arr.dump();
}

std::vector<Verdict> verdicts_from_json(const std::string& text) {
    json arr = json::parse(text);
    std::vector<Verdict> out;
    for (const auto& obj : arr) {
        Verdict v;
        v.malicious = obj.at("malicious").get<bool>();
        if (obj.contains("category")) v.category = obj.at("category").get<std::string>();
        v.confidence = obj.at("confidence").get<double>();
        for (const auto& turn : obj.at("transcript"))
            v.transcript.turns.push_back(Turn{turn.at("instruction").get<std::string>(),
                                              turn.at("model_output").get<std::string>()});
        out.push_back(std::move(v));
    }
    return out;
}

}  // namespace smartguard
