#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "smartguard/kg.hpp"

namespace smartguard {

struct EmptyCorpus : Error {
    EmptyCorpus() : Error("token corpus is empty") {}
};

constexpr int kTokenDim = 50;
constexpr int kHashBuckets = 4096;

using Sentence = std::vector<std::string>;

/// One sentence per thread: the edge-time-ordered [kind, name] token
/// expansion of each edge's head and tail.
std::vector<Sentence> build_corpus(const std::vector<KnowledgeGraph>& graphs);

struct TokenEmbeddings {
    std::map<std::string, Eigen::VectorXd> vectors;  // trained tokens (freq >= 2)
    std::vector<Eigen::VectorXd> hash_buckets;       // fallback for unseen names
    int dim = kTokenDim;

    const Eigen::VectorXd& lookup(const std::string& token) const;
    Eigen::VectorXd type_vector(NodeKind kind) const { return lookup(to_string(kind)); }
};

struct TokenTrainConfig {
    int dim = kTokenDim;
    int window = 5;
    int epochs = 5;
    int negatives = 5;
    double lr = 0.025;
    int min_count = 2;
    std::uint64_t seed = 1;
};

/// Skip-gram with negative sampling, single-threaded and deterministic
/// given the seed. Tokens below min_count fall back to hash buckets.
TokenEmbeddings train_token_embeddings(const std::vector<Sentence>& corpus,
                                       const TokenTrainConfig& config = {});

std::string token_embeddings_to_json(const TokenEmbeddings& tok);
TokenEmbeddings token_embeddings_from_json(const std::string& text);

}  // namespace smartguard
