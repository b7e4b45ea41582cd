#include "smartguard/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <random>

#include "json.hpp"

namespace smartguard {

using nlohmann::json;

void EncoderParams::for_each_tensor(
    const std::function<void(const std::string&, Eigen::MatrixXd&)>& fn) {
    auto layer = [&](const std::string& prefix, GatLayerParams& l) {
        for (size_t h = 0; h < l.W.size(); ++h) {
            std::string tag = prefix + std::to_string(h);
            fn(tag + ".W", l.W[h]);
            // Vectors visited through 1-column matrix views.
            Eigen::MatrixXd tmp;
            tmp = l.a_src[h];
            fn(tag + ".a_src", tmp);
            l.a_src[h] = tmp.col(0);
            tmp = l.a_dst[h];
            fn(tag + ".a_dst", tmp);
            l.a_dst[h] = tmp.col(0);
            tmp = l.a_edge[h];
            fn(tag + ".a_edge", tmp);
            l.a_edge[h] = tmp.col(0);
        }
    };
    layer("layer1.h", layer1);
    layer("layer2.h", layer2);
    fn("edge_type_table", edge_type_table);
    Eigen::MatrixXd tmp;
    tmp = pool_w;
    fn("pool_w", tmp);
    pool_w = tmp.col(0);
    tmp = Eigen::MatrixXd::Constant(1, 1, pool_b);
    fn("pool_b", tmp);
    pool_b = tmp(0, 0);
}

namespace {

GatLayerParams init_layer(int heads, int in_dim, int out_dim, std::mt19937_64& rng) {
    GatLayerParams l;
    double w_limit = std::sqrt(6.0 / double(in_dim + out_dim));
    double a_limit = std::sqrt(6.0 / double(out_dim + 1));
    std::uniform_real_distribution<double> w_init(-w_limit, w_limit);
    std::uniform_real_distribution<double> a_init(-a_limit, a_limit);
    for (int h = 0; h < heads; ++h) {
        Eigen::MatrixXd W(out_dim, in_dim);
        for (int i = 0; i < out_dim; ++i)
            for (int j = 0; j < in_dim; ++j) W(i, j) = w_init(rng);
        Eigen::VectorXd as(out_dim), ad(out_dim), ae(kEdgeTypeDim);
        for (int i = 0; i < out_dim; ++i) as(i) = a_init(rng);
        for (int i = 0; i < out_dim; ++i) ad(i) = a_init(rng);
        for (int i = 0; i < kEdgeTypeDim; ++i) ae(i) = a_init(rng);
        l.W.push_back(std::move(W));
        l.a_src.push_back(std::move(as));
        l.a_dst.push_back(std::move(ad));
        l.a_edge.push_back(std::move(ae));
    }
    return l;
}

}  // namespace

EncoderParams init_encoder(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    EncoderParams p;
    p.rng_seed = seed;
    p.layer1 = init_layer(kLayer1Heads, kFeatureDim, kLayer1HeadDim, rng);
    p.layer2 = init_layer(1, kHiddenDim, kHiddenDim, rng);
    std::uniform_real_distribution<double> et_init(-0.1, 0.1);
    p.edge_type_table.resize(kNumRelations + 1, kEdgeTypeDim);
    for (int i = 0; i <= kNumRelations; ++i)
        for (int j = 0; j < kEdgeTypeDim; ++j) p.edge_type_table(i, j) = et_init(rng);
    double p_limit = std::sqrt(6.0 / double(kHiddenDim + 1));
    std::uniform_real_distribution<double> p_init(-p_limit, p_limit);
    p.pool_w.resize(kHiddenDim);
    for (int i = 0; i < kHiddenDim; ++i) p.pool_w(i) = p_init(rng);
    p.pool_b = 0.0;
    return p;
}

EncoderParams zero_like(const EncoderParams& params) {
    EncoderParams z = params;
    z.for_each_tensor([](const std::string&, Eigen::MatrixXd& t) { t.setZero(); });
    return z;
}

Eigen::MatrixXd init_features(const KnowledgeGraph& g, const TokenEmbeddings& tok) {
    Eigen::MatrixXd f(g.nodes.size(), kFeatureDim);
    for (const Node& n : g.nodes) {
        f.row(n.id).head(kTokenDim) = tok.lookup(to_string(n.kind)).transpose();
        f.row(n.id).tail(kTokenDim) = tok.lookup(n.name).transpose();
    }
    return f;
}

namespace {

EncGraph build_enc_graph(const KnowledgeGraph& g, const TokenEmbeddings& tok,
                         const std::vector<int>& node_ids,
                         const std::vector<int>& edge_ids,
                         const std::set<std::string>& key_entities) {
    if (node_ids.empty()) throw EmptyInstance();
    EncGraph eg;
    eg.key_entities = key_entities;
    std::map<int, int> local;
    for (size_t i = 0; i < node_ids.size(); ++i) local[node_ids[i]] = static_cast<int>(i);

    const int n = static_cast<int>(node_ids.size());
    eg.features.resize(n, kFeatureDim);
    eg.kinds.resize(n);
    for (int i = 0; i < n; ++i) {
        const Node& node = g.nodes[node_ids[i]];
        eg.features.row(i).head(kTokenDim) = tok.lookup(to_string(node.kind)).transpose();
        eg.features.row(i).tail(kTokenDim) = tok.lookup(node.name).transpose();
        eg.kinds[i] = node.kind;
    }

    // Distinct (neighbor, relation) entries both directions, plus the
    // synthetic wiring edges whose endpoints are both present.
    std::vector<std::set<std::pair<int, int>>> entry_sets(n);
    auto add_edge = [&](const Edge& e) {
        auto si = local.find(e.src), di = local.find(e.dst);
        if (si == local.end() || di == local.end()) return;
        int r = static_cast<int>(e.relation);
        entry_sets[si->second].insert({di->second, r});
        entry_sets[di->second].insert({si->second, r});
    };
    for (int eid : edge_ids) add_edge(g.edges[eid]);
    for (const Edge& e : g.edges)
        if (e.synthetic) add_edge(e);

    eg.entries.resize(n);
    eg.adj.resize(n);
    for (int i = 0; i < n; ++i) {
        eg.entries[i].push_back(EncGraph::Entry{i, kSelfEdgeType});
        std::set<int> nbrs;
        for (const auto& [j, r] : entry_sets[i]) {
            eg.entries[i].push_back(EncGraph::Entry{j, r});
            nbrs.insert(j);
        }
        eg.adj[i].assign(nbrs.begin(), nbrs.end());
    }
    return eg;
}

}  // namespace

EncGraph make_enc_graph(const KnowledgeGraph& g, const TokenEmbeddings& tok) {
    std::vector<int> node_ids, edge_ids;
    for (const Node& n : g.nodes) node_ids.push_back(n.id);
    for (int i = 0; i < static_cast<int>(g.edges.size()); ++i)
        if (!g.edges[i].synthetic) edge_ids.push_back(i);

    std::set<std::string> keys;
    for (const auto& sub : partition_threads(g)) {
        auto scores = compute_centrality(g, sub);
        keys.insert(g.nodes[select_key_node(scores, g, sub)].name);
    }
    return build_enc_graph(g, tok, node_ids, edge_ids, keys);
}

EncGraph make_enc_graph(const KnowledgeGraph& g, const TokenEmbeddings& tok,
                        const BehaviorInstance& inst) {
    std::vector<int> node_ids(inst.node_ids.begin(), inst.node_ids.end());
    std::set<std::string> keys;
    for (int kn : inst.key_nodes) keys.insert(g.nodes[kn].name);
    return build_enc_graph(g, tok, node_ids, inst.edge_ids, keys);
}

namespace {

constexpr double kLeakySlope = 0.2;

double leaky_relu(double x) { return x > 0 ? x : kLeakySlope * x; }
double leaky_relu_grad(double x) { return x > 0 ? 1.0 : kLeakySlope; }
double elu(double x) { return x > 0 ? x : std::expm1(x); }
double elu_grad(double x) { return x > 0 ? 1.0 : std::exp(x); }

/// One GAT layer. Head outputs are concatenated side by side.
Eigen::MatrixXd layer_forward(const GatLayerParams& l, const Eigen::MatrixXd& x,
                              const Eigen::MatrixXd& edge_types, const EncGraph& g,
                              ForwardCache::Layer* cache) {
    const int n = static_cast<int>(x.rows());
    const int heads = static_cast<int>(l.W.size());
    const int d = static_cast<int>(l.W[0].rows());
    Eigen::MatrixXd pre(n, heads * d);

    if (cache) {
        cache->Z.assign(heads, {});
        cache->scores.assign(heads, std::vector<Eigen::VectorXd>(n));
        cache->alpha.assign(heads, std::vector<Eigen::VectorXd>(n));
    }

    for (int h = 0; h < heads; ++h) {
        Eigen::MatrixXd z = x * l.W[h].transpose();  // n x d
        for (int i = 0; i < n; ++i) {
            const auto& entries = g.entries[i];
            Eigen::VectorXd s(entries.size());
            for (size_t t = 0; t < entries.size(); ++t) {
                s(t) = l.a_src[h].dot(z.row(i)) + l.a_dst[h].dot(z.row(entries[t].j)) +
                       l.a_edge[h].dot(edge_types.row(entries[t].etype));
            }
            Eigen::VectorXd e = s.unaryExpr([](double v) { return leaky_relu(v); });
            Eigen::VectorXd alpha = (e.array() - e.maxCoeff()).exp();
            alpha /= alpha.sum();
            Eigen::VectorXd m = Eigen::VectorXd::Zero(d);
            for (size_t t = 0; t < entries.size(); ++t)
                m += alpha(t) * z.row(entries[t].j).transpose();
            pre.row(i).segment(h * d, d) = m.transpose();
            if (cache) {
                cache->scores[h][i] = std::move(s);
                cache->alpha[h][i] = std::move(alpha);
            }
        }
        if (cache) cache->Z[h] = std::move(z);
    }

    Eigen::MatrixXd out = pre.unaryExpr([](double v) { return elu(v); });
    if (cache) {
        cache->pre_act = std::move(pre);
        cache->out = out;
    }
    return out;
}

/// Backward through one layer; returns dL/dx und accumulates parameter grads.
Eigen::MatrixXd layer_backward(const GatLayerParams& l, const Eigen::MatrixXd& x,
                               const Eigen::MatrixXd& edge_types, const EncGraph& g,
                               const ForwardCache::Layer& cache,
                               const Eigen::MatrixXd& d_out, GatLayerParams& grads,
                               Eigen::MatrixXd& d_edge_types) {
    const int n = static_cast<int>(x.rows());
    const int heads = static_cast<int>(l.W.size());
    const int d = static_cast<int>(l.W[0].rows());
    Eigen::MatrixXd d_x = Eigen::MatrixXd::Zero(x.rows(), x.cols());

    for (int h = 0; h < heads; ++h) {
        const Eigen::MatrixXd& z = cache.Z[h];
        Eigen::MatrixXd d_z = Eigen::MatrixXd::Zero(n, d);
        for (int i = 0; i < n; ++i) {
            const auto& entries = g.entries[i];
            // d pre-activation for this head's slice of node i.
            Eigen::VectorXd d_m(d);
            for (int c = 0; c < d; ++c)
                d_m(c) = d_out(i, h * d + c) * elu_grad(cache.pre_act(i, h * d + c));

            const Eigen::VectorXd& alpha = cache.alpha[h][i];
            Eigen::VectorXd d_alpha(entries.size());
            for (size_t t = 0; t < entries.size(); ++t) {
                d_alpha(t) = z.row(entries[t].j).dot(d_m);
                d_z.row(entries[t].j) += alpha(t) * d_m.transpose();
            }
            double dot = alpha.dot(d_alpha);
            for (size_t t = 0; t < entries.size(); ++t) {
                double d_e = alpha(t) * (d_alpha(t) - dot);
                double d_s = d_e * leaky_relu_grad(cache.scores[h][i](t));
                grads.a_src[h] += d_s * z.row(i).transpose();
                grads.a_dst[h] += d_s * z.row(entries[t].j).transpose();
                grads.a_edge[h] += d_s * edge_types.row(entries[t].etype).transpose();
                d_z.row(i) += d_s * l.a_src[h].transpose();
                d_z.row(entries[t].j) += d_s * l.a_dst[h].transpose();
                d_edge_types.row(entries[t].etype) += d_s * l.a_edge[h].transpose();
            }
        }
        grads.W[h] += d_z.transpose() * x;
        d_x += d_z * l.W[h];
    }
    return d_x;
}

}  // namespace

Eigen::MatrixXd gat_forward(const EncoderParams& params, const EncGraph& g,
                            ForwardCache* cache) {
    if (g.features.rows() == 0) throw EmptyInstance();
    if (cache) cache->input = g.features;
    Eigen::MatrixXd h1 = layer_forward(params.layer1, g.features, params.edge_type_table,
                                       g, cache ? &cache->l1 : nullptr);
    return layer_forward(params.layer2, h1, params.edge_type_table, g,
                         cache ? &cache->l2 : nullptr);
}

void gat_backward(const EncoderParams& params, const EncGraph& g,
                  const ForwardCache& cache, const Eigen::MatrixXd& d_h,
                  EncoderParams& grads) {
    Eigen::MatrixXd d_h1 =
        layer_backward(params.layer2, cache.l1.out, params.edge_type_table, g, cache.l2,
                       d_h, grads.layer2, grads.edge_type_table);
    layer_backward(params.layer1, cache.input, params.edge_type_table, g, cache.l1, d_h1,
                   grads.layer1, grads.edge_type_table);
}

PoolResult attention_pool(const EncoderParams& params, const Eigen::MatrixXd& h) {
    if (h.rows() == 0) throw EmptyInstance();
    Eigen::VectorXd scores = h * params.pool_w;
    scores.array() += params.pool_b;
    Eigen::VectorXd w = (scores.array() - scores.maxCoeff()).exp();
    w /= w.sum();
    PoolResult out;
    out.v = h.transpose() * w;
    out.weights = std::move(w);
    return out;
}

void pool_backward(const EncoderParams& params, const Eigen::MatrixXd& h,
                   const PoolResult& pool, const Eigen::VectorXd& d_v,
                   Eigen::MatrixXd& d_h, EncoderParams& grads) {
    const int n = static_cast<int>(h.rows());
    Eigen::VectorXd d_w(n);
    for (int i = 0; i < n; ++i) d_w(i) = h.row(i).dot(d_v);
    double dot = pool.weights.dot(d_w);
    Eigen::VectorXd d_s = pool.weights.array() * (d_w.array() - dot);
    for (int i = 0; i < n; ++i) {
        d_h.row(i) += pool.weights(i) * d_v.transpose() + d_s(i) * params.pool_w.transpose();
    }
    grads.pool_w += h.transpose() * d_s;
    grads.pool_b += d_s.sum();
}

double sigma_cos(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    double nx = x.norm(), ny = y.norm();
    if (nx == 0.0 || ny == 0.0) throw ZeroVector();
    return (x.dot(y) / (nx * ny) + 1.0) / 2.0;
}

namespace {

constexpr double kSigmaClamp = 1e-6;

/// Per-pair loss and d(loss)/d(h_i), d(loss)/d(h_j). The clamp zeroes the
/// gradient at saturation.
double pair_loss(const Eigen::MatrixXd& h, const Pair& p, bool positive,
                 Eigen::MatrixXd* d_h) {
    Eigen::VectorXd hi = h.row(p.first).transpose(), hj = h.row(p.second).transpose();
    double ni = hi.norm(), nj = hj.norm();
    if (ni == 0.0 || nj == 0.0) throw ZeroVector();
    double c = hi.dot(hj) / (ni * nj);
    double sigma = (c + 1.0) / 2.0;
    double clamped = std::clamp(sigma, kSigmaClamp, 1.0 - kSigmaClamp);
    double loss = positive ? -std::log(clamped) : -std::log(1.0 - clamped);
    if (d_h && sigma > kSigmaClamp && sigma < 1.0 - kSigmaClamp) {
        double d_sigma = positive ? -1.0 / clamped : 1.0 / (1.0 - clamped);
        double d_c = d_sigma / 2.0;
        d_h->row(p.first) += d_c * (hj / (ni * nj) - c * hi / (ni * ni)).transpose();
        d_h->row(p.second) += d_c * (hi / (ni * nj) - c * hj / (nj * nj)).transpose();
    }
    return loss;
}

}  // namespace

double contrastive_loss(const Eigen::MatrixXd& h, const std::vector<Pair>& positives,
                        const std::vector<Pair>& negatives, Eigen::MatrixXd* d_h) {
    double loss = 0.0;
    for (const Pair& p : positives) loss += pair_loss(h, p, true, d_h);
    for (const Pair& p : negatives) loss += pair_loss(h, p, false, d_h);
    return loss;
}

std::vector<Pair> nearest_same_kind_pairs(const EncGraph& g) {
    const int n = static_cast<int>(g.adj.size());
    std::vector<Pair> pairs;
    for (int i = 0; i < n; ++i) {
        // BFS ordered by (distance, index); first same-kind hit wins.
        std::vector<int> dist(n, -1);
        dist[i] = 0;
        std::queue<int> q;
        q.push(i);
        int best = -1;
        while (!q.empty()) {
            int u = q.front();
            q.pop();
            for (int v : g.adj[u]) {
                if (dist[v] >= 0) continue;
                dist[v] = dist[u] + 1;
                q.push(v);
            }
        }
        int best_dist = -1;
        for (int j = 0; j < n; ++j) {
            if (j == i || dist[j] < 0 || g.kinds[j] != g.kinds[i]) continue;
            if (best < 0 || dist[j] < best_dist) {
                best = j;
                best_dist = dist[j];
            }
        }
        if (best >= 0) pairs.emplace_back(i, best);
    }
    return pairs;
}

namespace {

std::vector<Pair> sample_negatives(const EncGraph& g, const std::vector<Pair>& positives,
                                   std::mt19937_64& rng) {
    const int n = static_cast<int>(g.adj.size());
    std::vector<Pair> negs;
    std::uniform_int_distribution<int> pick(0, n - 1);
    for (const Pair& p : positives) {
        int i = p.first;
        for (int attempt = 0; attempt < 50; ++attempt) {
            int k = pick(rng);
            if (k == i || g.kinds[k] == g.kinds[i]) continue;
            if (std::find(g.adj[i].begin(), g.adj[i].end(), k) != g.adj[i].end()) continue;
            negs.emplace_back(i, k);
            break;
        }
    }
    return negs;
}

bool share_key_entity(const EncGraph& a, const EncGraph& b) {
    for (const auto& k : a.key_entities)
        if (b.key_entities.count(k)) return true;
    return false;
}

struct Adam {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::map<std::string, Eigen::MatrixXd> m, v;
    long long t = 0;

    void step(EncoderParams& params, EncoderParams& grads, double lr) {
        ++t;
        double bc1 = 1.0 - std::pow(beta1, double(t));
        double bc2 = 1.0 - std::pow(beta2, double(t));
        // Clip the global gradient norm: a saturated pair drives per-pair
        // gradients as large as 1/clamp, which otherwise derails Adam.
        double sq = 0.0;
        grads.for_each_tensor(
            [&](const std::string&, Eigen::MatrixXd& g) { sq += g.squaredNorm(); });
        const double max_norm = 100.0;
        if (sq > max_norm * max_norm) {
            double scale = max_norm / std::sqrt(sq);
            grads.for_each_tensor(
                [&](const std::string&, Eigen::MatrixXd& g) { g *= scale; });
        }
        std::map<std::string, Eigen::MatrixXd> gmap;
        grads.for_each_tensor(
            [&](const std::string& name, Eigen::MatrixXd& g) { gmap[name] = g; });
        params.for_each_tensor([&](const std::string& name, Eigen::MatrixXd& p) {
            const Eigen::MatrixXd& g = gmap.at(name);
            auto [mi, mf] = m.try_emplace(name, Eigen::MatrixXd::Zero(g.rows(), g.cols()));
            auto [vi, vf] = v.try_emplace(name, Eigen::MatrixXd::Zero(g.rows(), g.cols()));
            mi->second = beta1 * mi->second + (1.0 - beta1) * g;
            vi->second = beta2 * vi->second + (1.0 - beta2) * g.cwiseProduct(g);
            Eigen::MatrixXd mhat = mi->second / bc1;
            Eigen::MatrixXd vhat = vi->second / bc2;
            p -= lr * (mhat.array() / (vhat.array().sqrt() + eps)).matrix();
        });
    }
};

}  // namespace

EncoderTrainResult train_encoder(const std::vector<EncGraph>& corpus,
                                 const EncoderTrainConfig& config) {
    if (corpus.size() < 2) throw CorpusTooSmall(static_cast<int>(corpus.size()));

    EncoderTrainResult result;
    result.params = init_encoder(config.seed);
    Adam adam;

    // Node-level positives are a property of each graph; compute once.
    std::vector<std::vector<Pair>> positives;
    positives.reserve(corpus.size());
    for (const auto& g : corpus) positives.push_back(nearest_same_kind_pairs(g));

    const int n_graphs = static_cast<int>(corpus.size());
    std::vector<int> order(n_graphs);
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::mt19937_64 rng(config.seed * 0x9e3779b97f4a7c15ull + epoch);
        std::shuffle(order.begin(), order.end(), rng);
        double lr = config.lr * std::pow(config.decay, double(epoch));

        double epoch_loss = 0.0;
        long long epoch_pairs = 0;

        for (int start = 0; start < n_graphs; start += config.batch) {
            int end = std::min(n_graphs, start + config.batch);
            EncoderParams grads = zero_like(result.params);

            std::vector<ForwardCache> caches(end - start);
            std::vector<Eigen::MatrixXd> hs(end - start);
            std::vector<Eigen::MatrixXd> d_hs(end - start);
            std::vector<PoolResult> pools(end - start);

            for (int b = start; b < end; ++b) {
                const EncGraph& g = corpus[order[b]];
                int slot = b - start;
                hs[slot] = gat_forward(result.params, g, &caches[slot]);
                d_hs[slot] = Eigen::MatrixXd::Zero(hs[slot].rows(), hs[slot].cols());
                pools[slot] = attention_pool(result.params, hs[slot]);

                auto negs = sample_negatives(g, positives[order[b]], rng);
                epoch_loss += contrastive_loss(hs[slot], positives[order[b]], negs,
                                               &d_hs[slot]);
                epoch_pairs += static_cast<long long>(positives[order[b]].size() +
                                                      negs.size());
            }

            // Pooled-level pairs within the batch: positives share a key
            // entity, negatives do not.
            std::vector<Pair> pool_pos, pool_neg;
            for (int a = 0; a < end - start; ++a) {
                for (int b = a + 1; b < end - start; ++b) {
                    bool shared = share_key_entity(corpus[order[start + a]],
                                                   corpus[order[start + b]]);
                    (shared ? pool_pos : pool_neg).emplace_back(a, b);
                }
            }
            size_t budget = static_cast<size_t>(config.batch);
            if (pool_pos.size() > budget) {
                std::shuffle(pool_pos.begin(), pool_pos.end(), rng);
                pool_pos.resize(budget);
            }
            if (pool_neg.size() > pool_pos.size()) {
                std::shuffle(pool_neg.begin(), pool_neg.end(), rng);
                pool_neg.resize(pool_pos.size());
            }

            Eigen::MatrixXd pooled(end - start, kHiddenDim);
            for (int slot = 0; slot < end - start; ++slot)
                pooled.row(slot) = pools[slot].v.transpose();
            Eigen::MatrixXd d_pooled = Eigen::MatrixXd::Zero(end - start, kHiddenDim);
            epoch_loss += contrastive_loss(pooled, pool_pos, pool_neg, &d_pooled);
            epoch_pairs += static_cast<long long>(pool_pos.size() + pool_neg.size());

            for (int slot = 0; slot < end - start; ++slot) {
                const EncGraph& g = corpus[order[start + slot]];
                Eigen::VectorXd d_v = d_pooled.row(slot).transpose();
                if ((d_v.array() != 0.0).any())
                    pool_backward(result.params, hs[slot], pools[slot], d_v, d_hs[slot],
                                  grads);
                if ((d_hs[slot].array() != 0.0).any()) gat_backward(result.params, g, caches[slot],
                                                   d_hs[slot], grads);
            }
            adam.step(result.params, grads, lr);
        }
        result.epoch_loss.push_back(epoch_pairs > 0 ? epoch_loss / double(epoch_pairs)
                                                    : 0.0);
    }
    return result;
}

Eigen::VectorXd embed_behavior(const EncoderParams& params, const TokenEmbeddings& tok,
                               const KnowledgeGraph& g, const BehaviorInstance& inst) {
    EncGraph eg = make_enc_graph(g, tok, inst);
    Eigen::MatrixXd h = gat_forward(params, eg);
    return attention_pool(params, h).v;
}

std::string encoder_to_json(const EncoderParams& params, std::uint64_t config_hash) {
    json obj;
    obj["rng_seed"] = params.rng_seed;
    obj["config_hash"] = config_hash;
    json tensors = json::object();
    EncoderParams copy = params;
    copy.for_each_tensor([&](const std::string& name, Eigen::MatrixXd& t) {
        json mat = json::array();
        for (int i = 0; i < t.rows(); ++i) {
            json row = json::array();
            for (int j = 0; j < t.cols(); ++j) row.push_back(t(i, j));
            mat.push_back(std::move(row));
        }
        tensors[name] = std::move(mat);
    });
    obj["tensors"] = std::move(tensors);
    return obj.dump();
}

EncoderParams encoder_from_json(const std::string& text) {
    json obj = json::parse(text);
    EncoderParams params = init_encoder(obj.at("rng_seed").get<std::uint64_t>());
    const json& tensors = obj.at("tensors");
    params.for_each_tensor([&](const std::string& name, Eigen::MatrixXd& t) {
        const json& mat = tensors.at(name);
        for (int i = 0; i < t.rows(); ++i)
            for (int j = 0; j < t.cols(); ++j) t(i, j) = mat[i][j].get<double>();
    });
    return params;
}

}  // namespace smartguard
