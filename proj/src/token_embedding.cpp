#include "smartguard/token_embedding.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "json.hpp"

namespace smartguard {

using nlohmann::json;

std::vector<Sentence> build_corpus(const std::vector<KnowledgeGraph>& graphs) {
    std::vector<Sentence> corpus;
    for (const KnowledgeGraph& g : graphs) {
        for (const auto& sub : partition_threads(g)) {
            std::vector<int> order = sub.edge_ids;
            std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
                return g.edges[a].ts != g.edges[b].ts ? g.edges[a].ts < g.edges[b].ts : a < b;
            });
            Sentence sent;
            for (int eid : order) {
                const Edge& e = g.edges[eid];
                sent.push_back(to_string(g.nodes[e.src].kind));
                sent.push_back(g.nodes[e.src].name);
                sent.push_back(to_string(g.nodes[e.dst].kind));
                sent.push_back(g.nodes[e.dst].name);
            }
            if (!sent.empty()) corpus.push_back(std::move(sent));
        }
    }
    return corpus;
}

const Eigen::VectorXd& TokenEmbeddings::lookup(const std::string& token) const {
    auto it = vectors.find(token);
    if (it != vectors.end()) return it->second;
    return hash_buckets[fnv1a(token) % kHashBuckets];
}

TokenEmbeddings train_token_embeddings(const std::vector<Sentence>& corpus,
                                       const TokenTrainConfig& config) {
    if (corpus.empty()) throw EmptyCorpus();

    // Vocabulary: tokens at or above min_count, in first-seen order.
    std::map<std::string, int> freq;
    std::vector<std::string> vocab;
    for (const auto& sent : corpus)
        for (const auto& tok : sent)
            if (++freq[tok] == config.min_count) vocab.push_back(tok);
    std::sort(vocab.begin(), vocab.end());
    std::map<std::string, int> vocab_index;
    for (int i = 0; i < static_cast<int>(vocab.size()); ++i) vocab_index[vocab[i]] = i;

    const int v = static_cast<int>(vocab.size());
    const int d = config.dim;
    std::mt19937_64 rng(config.seed);
    std::uniform_real_distribution<double> init(-0.5 / d, 0.5 / d);

    Eigen::MatrixXd in_vecs(v, d), out_vecs = Eigen::MatrixXd::Zero(v, d);
    for (int i = 0; i < v; ++i)
        for (int j = 0; j < d; ++j) in_vecs(i, j) = init(rng);

    // Unigram^0.75 negative-sampling distribution.
    std::vector<double> weights(v);
    for (int i = 0; i < v; ++i) weights[i] = std::pow(double(freq[vocab[i]]), 0.75);
    std::discrete_distribution<int> negative(weights.begin(), weights.end());

    // Sentences as index sequences, out-of-vocab tokens dropped.
    std::vector<std::vector<int>> indexed;
    long long total_pairs = 0;
    for (const auto& sent : corpus) {
        std::vector<int> ids;
        for (const auto& tok : sent) {
            auto it = vocab_index.find(tok);
            if (it != vocab_index.end()) ids.push_back(it->second);
        }
        if (ids.size() >= 2) {
            total_pairs += static_cast<long long>(ids.size());
            indexed.push_back(std::move(ids));
        }
    }

    if (v > 0 && !indexed.empty()) {
        const long long total_steps =
            std::max<long long>(1, config.epochs * total_pairs);
        long long step = 0;
        for (int epoch = 0; epoch < config.epochs; ++epoch) {
            for (const auto& ids : indexed) {
                for (int center = 0; center < static_cast<int>(ids.size()); ++center) {
                    double lr = config.lr *
                                std::max(0.0001, 1.0 - double(step) / double(total_steps));
                    ++step;
                    int lo = std::max(0, center - config.window);
                    int hi = std::min(static_cast<int>(ids.size()) - 1,
                                      center + config.window);
                    for (int ctx = lo; ctx <= hi; ++ctx) {
                        if (ctx == center) continue;
                        int w = ids[center];
                        Eigen::VectorXd grad_in = Eigen::VectorXd::Zero(d);
                        auto update = [&](int target, double label) {
                            double score = in_vecs.row(w).dot(out_vecs.row(target));
                            double pred = 1.0 / (1.0 + std::exp(-score));
                            double g = (label - pred) * lr;
                            grad_in += g * out_vecs.row(target).transpose();
                            out_vecs.row(target) += g * in_vecs.row(w);
                        };
                        update(ids[ctx], 1.0);
                        for (int n = 0; n < config.negatives; ++n) {
                            int neg = negative(rng);
                            if (neg == ids[ctx]) continue;
                            update(neg, 0.0);
                        }
                        in_vecs.row(w) += grad_in.transpose();
                    }
                }
            }
        }
    }

    TokenEmbeddings tok;
    tok.dim = d;
    for (int i = 0; i < v; ++i) tok.vectors[vocab[i]] = in_vecs.row(i).transpose();

    // Hash-bucket fallbacks: fixed pseudo-random vectors on the same scale
    // as freshly initialized vocab rows, so an out-of-vocabulary token looks
    // like a rare token rather than an outlier. Drawn from a dedicated
    // stream so they do not depend on the corpus.
    std::mt19937_64 bucket_rng(0x5eedf00dULL);
    std::uniform_real_distribution<double> bucket_init(-0.5 / d, 0.5 / d);
    tok.hash_buckets.resize(kHashBuckets);
    for (auto& vec : tok.hash_buckets) {
        vec.resize(d);
        for (int j = 0; j < d; ++j) vec(j) = bucket_init(bucket_rng);
    }
    return tok;
}

std::string token_embeddings_to_json(const TokenEmbeddings& tok) {
    json obj;
    obj["dim"] = tok.dim;
    json vecs = json::object();
    for (const auto& [name, vec] : tok.vectors) {
        json arr = json::array();
        for (int i = 0; i < vec.size(); ++i) arr.push_back(vec(i));
        vecs[name] = std::move(arr);
    }
    obj["vectors"] = std::move(vecs);
    json buckets = json::array();
    for (const auto& vec : tok.hash_buckets) {
        json arr = json::array();
        for (int i = 0; i < vec.size(); ++i) arr.push_back(vec(i));
        buckets.push_back(std::move(arr));
    }
    obj["hash_buckets"] = std::move(buckets);
    return obj.dump();
}

TokenEmbeddings token_embeddings_from_json(const std::string& text) {
    json obj = json::parse(text);
    TokenEmbeddings tok;
    tok.dim = obj.at("dim").get<int>();
    for (const auto& [name, arr] : obj.at("vectors").items()) {
        Eigen::VectorXd vec(arr.size());
        for (int i = 0; i < static_cast<int>(arr.size()); ++i) vec(i) = arr[i].get<double>();
        tok.vectors[name] = std::move(vec);
    }
    for (const auto& arr : obj.at("hash_buckets")) {
        Eigen::VectorXd vec(arr.size());
        for (int i = 0; i < static_cast<int>(arr.size()); ++i) vec(i) = arr[i].get<double>();
        tok.hash_buckets.push_back(std::move(vec));
    }
    return tok;
}

}  // namespace smartguard
