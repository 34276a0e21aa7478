#ifndef FDG_LOSSES_HPP
#define FDG_LOSSES_HPP

#include <compare>
#include <map>
#include <span>
#include <vector>

#include "fdg/encoder.hpp"
#include "fdg/episodes.hpp"
#include "fdg/numerics.hpp"

namespace fdg {

// Identifies which network a gradient buffer belongs to.
struct NetTag {
    int id = -1;  // -1 = aggregation network, j >= 0 = domain expert j

    static NetTag aggregation() { return {-1}; }
    static NetTag expert(int j) { return {j}; }
    bool is_aggregation() const { return id < 0; }
    auto operator<=>(const NetTag&) const = default;
};

enum class LogitKind {
    neg_sq_euclidean,  // default: logits are negated squared distances
    neg_euclidean,     // plain-distance switch
    angular            // scale * cosine + offset with trainable scalars
};

struct LogitConfig {
    LogitKind kind = LogitKind::neg_sq_euclidean;
    double angular_scale = 10.0;   // kept >= 1e-6 by the trainer
    double angular_offset = -5.0;
};

struct Prototypes {
    Matrix centroids;  // way x embed_dim; row k is the mean of class k's support embeddings
    NetTag producer;
};

struct LossOutput {
    double value = 0.0;
    // Buffers exist only for the networks this loss trains.
    std::map<NetTag, EncoderGrads> grads;
    // Angular head gradients, valid when has_head_grads is set.
    double scale_grad = 0.0;
    double offset_grad = 0.0;
    bool has_head_grads = false;
    // Set by combined_loss: the two components of value = agg + lambda * dg.
    double value_agg = 0.0;
    double value_dg = 0.0;
};

Prototypes compute_prototypes(const EncoderParams& embedder, NetTag producer,
                              const Dataset& dataset, const Episode& episode);

// Episodic cross-entropy over softmax of the logits; the mean over queries.
// Serves as the specific-network loss on specific episodes and the
// aggregation loss on aggregation episodes; gradients flow through both the
// query embeddings and the prototypes of the single embedder.
LossOutput proto_loss(const EncoderParams& embedder, NetTag tag, const Dataset& dataset,
                      const Episode& episode, const LogitConfig& logit = {});

// Domain-mismatch loss: prototypes come from the expert on the episode's
// source domain and are treated as constants; queries are embedded by the
// aggregation network, which is the only network that receives gradients.
LossOutput dg_loss(const EncoderParams& aggregation, const EncoderParams& expert,
                   const Dataset& dataset, const Episode& mismatch_episode,
                   const LogitConfig& logit = {});

// value = L_agg + lambda * L_dg, gradients combined accordingly. The expert
// used for the mismatch episode is experts[mismatch_episode.expert_domain].
LossOutput combined_loss(const EncoderParams& aggregation, std::span<const EncoderParams> experts,
                         const Dataset& dataset, const Episode& aggregation_episode,
                         const Episode& mismatch_episode, double lambda_dg,
                         const LogitConfig& logit = {});

// Prototype loss with scale * cos(embedding, prototype) + offset logits; the
// two scalars are trainable and their gradients land in the LossOutput.
LossOutput angular_proto_loss(const EncoderParams& embedder, NetTag tag, const Dataset& dataset,
                              const Episode& episode, double scale, double offset);

namespace detail {

// Embedding-space form of an episode; lets the loss math be exercised and
// tested without an encoder.
struct EmbeddedEpisode {
    int way = 0;
    Matrix support;                  // n_support x d
    std::vector<int> support_class;  // per support row
    Matrix query;                    // n_query x d
    std::vector<int> query_class;    // per query row
};

struct EmbeddingLossResult {
    double value = 0.0;
    Matrix prototypes;   // way x d
    Matrix d_support;    // zeros unless support_grads
    Matrix d_query;
    double d_scale = 0.0;
    double d_offset = 0.0;
    Matrix query_probs;  // n_query x way, rows sum to 1
};

EmbeddingLossResult embedding_loss(const EmbeddedEpisode& episode, const LogitConfig& logit,
                                   bool support_grads);

}  // namespace detail

}  // namespace fdg

#endif
