#include "fdg/losses.hpp"

#include <cmath>
#include <string>

#include "fdg/errors.hpp"

namespace fdg {

namespace detail {

namespace {

constexpr double kNormFloor = 1e-12;

Matrix class_means(const Matrix& embeddings, const std::vector<int>& classes, int way,
                   std::vector<int>& counts) {
    const std::size_t d = embeddings.cols;
    Matrix means(static_cast<std::size_t>(way), d);
    counts.assign(static_cast<std::size_t>(way), 0);
    for (std::size_t i = 0; i < embeddings.rows; ++i) {
        const int k = classes[i];
        if (k < 0 || k >= way) throw UsageError("loss: class index out of range");
        ++counts[static_cast<std::size_t>(k)];
        const double* src = embeddings.row(i);
        double* dst = means.row(static_cast<std::size_t>(k));
        for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
    }
    for (int k = 0; k < way; ++k) {
        if (counts[static_cast<std::size_t>(k)] == 0) {
            throw UsageError("loss: class " + std::to_string(k) + " has no support members");
        }
        double* dst = means.row(static_cast<std::size_t>(k));
        const double inv = 1.0 / counts[static_cast<std::size_t>(k)];
        for (std::size_t c = 0; c < d; ++c) dst[c] *= inv;
    }
    return means;
}

double norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace

EmbeddingLossResult embedding_loss(const EmbeddedEpisode& episode, const LogitConfig& logit,
                                   bool support_grads) {
    if (episode.way < 1) throw UsageError("loss: way must be >= 1");
    if (episode.query.rows == 0) throw UsageError("loss: no query members");
    if (episode.support.rows != episode.support_class.size() ||
        episode.query.rows != episode.query_class.size()) {
        throw UsageError("loss: class annotations do not match embeddings");
    }
    const std::size_t d = episode.support.cols;
    const std::size_t way = static_cast<std::size_t>(episode.way);
    const std::size_t n_query = episode.query.rows;

    EmbeddingLossResult out;
    std::vector<int> counts;
    out.prototypes = class_means(episode.support, episode.support_class, episode.way, counts);
    out.d_support = Matrix(episode.support.rows, d);
    out.d_query = Matrix(n_query, d);
    out.query_probs = Matrix(n_query, way);

    // Prototype norms are reused per query under the angular head.
    std::vector<double> proto_norm(way, 0.0);
    if (logit.kind == LogitKind::angular) {
        for (std::size_t k = 0; k < way; ++k) {
            proto_norm[k] = norm(out.prototypes.row_span(k));
            if (proto_norm[k] < kNormFloor) {
                throw NumericalError("angular loss: zero-norm prototype");
            }
        }
    }

    Matrix d_proto(way, d);
    std::vector<double> logits(way);
    std::vector<double> cosines(way);
    const double inv_nq = 1.0 / static_cast<double>(n_query);
    double total = 0.0;

    for (std::size_t i = 0; i < n_query; ++i) {
        const double* q = episode.query.row(i);
        const std::span<const double> q_span(q, d);
        double q_norm = 0.0;
        if (logit.kind == LogitKind::angular) {
            q_norm = norm(q_span);
            if (q_norm < kNormFloor) throw NumericalError("angular loss: zero-norm embedding");
        }
        for (std::size_t k = 0; k < way; ++k) {
            const auto c = out.prototypes.row_span(k);
            switch (logit.kind) {
                case LogitKind::neg_sq_euclidean:
                    logits[k] = -sq_euclidean(q_span, c);
                    break;
                case LogitKind::neg_euclidean:
                    logits[k] = -std::sqrt(sq_euclidean(q_span, c));
                    break;
                case LogitKind::angular: {
                    double dot = 0.0;
                    for (std::size_t x = 0; x < d; ++x) dot += q[x] * c[x];
                    cosines[k] = dot / (q_norm * proto_norm[k]);
                    logits[k] = logit.angular_scale * cosines[k] + logit.angular_offset;
                    break;
                }
            }
        }
        const auto logp = log_softmax(logits);
        const int y = episode.query_class[i];
        if (y < 0 || y >= episode.way) throw UsageError("loss: query class out of range");
        total += -logp[static_cast<std::size_t>(y)];

        double* probs = out.query_probs.row(i);
        double* dq = out.d_query.row(i);
        for (std::size_t k = 0; k < way; ++k) {
            probs[k] = std::exp(logp[k]);
            // d loss / d logit_k, already averaged over queries
            const double gz = (probs[k] - (static_cast<int>(k) == y ? 1.0 : 0.0)) * inv_nq;
            const double* c = out.prototypes.row(k);
            double* dc = d_proto.row(k);
            switch (logit.kind) {
                case LogitKind::neg_sq_euclidean:
                    for (std::size_t x = 0; x < d; ++x) {
                        const double diff = q[x] - c[x];
                        dq[x] += gz * -2.0 * diff;
                        dc[x] += gz * 2.0 * diff;
                    }
                    break;
                case LogitKind::neg_euclidean: {
                    const double dist = std::max(-logits[k], kNormFloor);
                    for (std::size_t x = 0; x < d; ++x) {
                        const double diff = q[x] - c[x];
                        dq[x] += gz * -diff / dist;
                        dc[x] += gz * diff / dist;
                    }
                    break;
                }
                case LogitKind::angular: {
                    const double w = logit.angular_scale;
                    const double denom = q_norm * proto_norm[k];
                    for (std::size_t x = 0; x < d; ++x) {
                        dq[x] += gz * w * (c[x] / denom - cosines[k] * q[x] / (q_norm * q_norm));
                        dc[x] += gz * w *
                                 (q[x] / denom - cosines[k] * c[x] / (proto_norm[k] * proto_norm[k]));
                    }
                    out.d_scale += gz * cosines[k];
                    out.d_offset += gz;
                    break;
                }
            }
        }
    }
    out.value = total * inv_nq;

    if (support_grads) {
        for (std::size_t s = 0; s < episode.support.rows; ++s) {
            const int k = episode.support_class[s];
            const double inv_count = 1.0 / counts[static_cast<std::size_t>(k)];
            const double* dc = d_proto.row(static_cast<std::size_t>(k));
            double* ds = out.d_support.row(s);
            for (std::size_t x = 0; x < d; ++x) ds[x] = dc[x] * inv_count;
        }
    }
    return out;
}

}  // namespace detail

namespace {

detail::EmbeddedEpisode embed_episode(const EncoderParams& support_net,
                                      const EncoderParams& query_net, const Dataset& dataset,
                                      const Episode& episode,
                                      std::vector<ForwardTrace>* support_traces,
                                      std::vector<ForwardTrace>& query_traces) {
    detail::EmbeddedEpisode embedded;
    embedded.way = episode.way;
    const std::size_t d = support_net.config.embed_dim;

    embedded.support = Matrix(episode.support.size(), d);
    embedded.support_class.reserve(episode.support.size());
    for (std::size_t s = 0; s < episode.support.size(); ++s) {
        const auto& member = episode.support[s];
        const Matrix& frames = dataset.utterances.at(member.utterance).features;
        std::vector<double> emb;
        if (support_traces != nullptr) {
            support_traces->push_back(forward_traced(support_net, frames));
            emb = support_traces->back().embedding;
        } else {
            emb = forward(support_net, frames);
        }
        std::copy(emb.begin(), emb.end(), embedded.support.row(s));
        embedded.support_class.push_back(member.class_index);
    }

    embedded.query = Matrix(episode.query.size(), query_net.config.embed_dim);
    embedded.query_class.reserve(episode.query.size());
    for (std::size_t q = 0; q < episode.query.size(); ++q) {
        const auto& member = episode.query[q];
        const Matrix& frames = dataset.utterances.at(member.utterance).features;
        query_traces.push_back(forward_traced(query_net, frames));
        std::copy(query_traces.back().embedding.begin(), query_traces.back().embedding.end(),
                  embedded.query.row(q));
        embedded.query_class.push_back(member.class_index);
    }
    return embedded;
}

}  // namespace

Prototypes compute_prototypes(const EncoderParams& embedder, NetTag producer,
                              const Dataset& dataset, const Episode& episode) {
    if (episode.support.empty()) throw UsageError("compute_prototypes: empty support set");
    Matrix embeddings(episode.support.size(), embedder.config.embed_dim);
    std::vector<int> classes;
    classes.reserve(episode.support.size());
    for (std::size_t s = 0; s < episode.support.size(); ++s) {
        const auto emb = forward(embedder, dataset.utterances.at(episode.support[s].utterance).features);
        std::copy(emb.begin(), emb.end(), embeddings.row(s));
        classes.push_back(episode.support[s].class_index);
    }
    std::vector<int> counts;
    Prototypes protos;
    protos.centroids = detail::class_means(embeddings, classes, episode.way, counts);
    protos.producer = producer;
    return protos;
}

LossOutput proto_loss(const EncoderParams& embedder, NetTag tag, const Dataset& dataset,
                      const Episode& episode, const LogitConfig& logit) {
    std::vector<ForwardTrace> support_traces;
    std::vector<ForwardTrace> query_traces;
    support_traces.reserve(episode.support.size());
    query_traces.reserve(episode.query.size());
    const auto embedded =
        embed_episode(embedder, embedder, dataset, episode, &support_traces, query_traces);
    const auto result = detail::embedding_loss(embedded, logit, /*support_grads=*/true);

    LossOutput out;
    out.value = result.value;
    EncoderGrads grads = EncoderGrads::zeros_like(embedder);
    // Fixed accumulation order: support members first, then queries.
    for (std::size_t s = 0; s < support_traces.size(); ++s) {
        backward(embedder, support_traces[s], result.d_support.row_span(s), grads);
    }
    for (std::size_t q = 0; q < query_traces.size(); ++q) {
        backward(embedder, query_traces[q], result.d_query.row_span(q), grads);
    }
    out.grads.emplace(tag, std::move(grads));
    if (logit.kind == LogitKind::angular) {
        out.scale_grad = result.d_scale;
        out.offset_grad = result.d_offset;
        out.has_head_grads = true;
    }
    return out;
}

LossOutput dg_loss(const EncoderParams& aggregation, const EncoderParams& expert,
                   const Dataset& dataset, const Episode& mismatch_episode,
                   const LogitConfig& logit) {
    if (mismatch_episode.kind != EpisodeKind::mismatch) {
        throw UsageError("dg_loss: episode kind must be mismatch");
    }
    std::vector<ForwardTrace> query_traces;
    query_traces.reserve(mismatch_episode.query.size());
    // Prototypes from the expert are constants: no traces, no gradients.
    const auto embedded =
        embed_episode(expert, aggregation, dataset, mismatch_episode, nullptr, query_traces);
    const auto result = detail::embedding_loss(embedded, logit, /*support_grads=*/false);

    LossOutput out;
    out.value = result.value;
    EncoderGrads grads = EncoderGrads::zeros_like(aggregation);
    for (std::size_t q = 0; q < query_traces.size(); ++q) {
        backward(aggregation, query_traces[q], result.d_query.row_span(q), grads);
    }
    out.grads.emplace(NetTag::aggregation(), std::move(grads));
    if (logit.kind == LogitKind::angular) {
        out.scale_grad = result.d_scale;
        out.offset_grad = result.d_offset;
        out.has_head_grads = true;
    }
    return out;
}

LossOutput combined_loss(const EncoderParams& aggregation, std::span<const EncoderParams> experts,
                         const Dataset& dataset, const Episode& aggregation_episode,
                         const Episode& mismatch_episode, double lambda_dg,
                         const LogitConfig& logit) {
    if (lambda_dg < 0.0) throw UsageError("combined_loss: lambda_dg must be >= 0");
    const int j = mismatch_episode.expert_domain;
    if (j < 0 || static_cast<std::size_t>(j) >= experts.size()) {
        throw UsageError("combined_loss: mismatch episode references unknown expert");
    }
    LossOutput agg_part =
        proto_loss(aggregation, NetTag::aggregation(), dataset, aggregation_episode, logit);
    const LossOutput dg_part =
        dg_loss(aggregation, experts[static_cast<std::size_t>(j)], dataset, mismatch_episode, logit);

    LossOutput out;
    out.value = agg_part.value + lambda_dg * dg_part.value;
    out.value_agg = agg_part.value;
    out.value_dg = dg_part.value;
    EncoderGrads grads = std::move(agg_part.grads.at(NetTag::aggregation()));
    grads.add_scaled(dg_part.grads.at(NetTag::aggregation()), lambda_dg);
    out.grads.emplace(NetTag::aggregation(), std::move(grads));
    if (logit.kind == LogitKind::angular) {
        out.scale_grad = agg_part.scale_grad + lambda_dg * dg_part.scale_grad;
        out.offset_grad = agg_part.offset_grad + lambda_dg * dg_part.offset_grad;
        out.has_head_grads = true;
    }
    return out;
}

LossOutput angular_proto_loss(const EncoderParams& embedder, NetTag tag, const Dataset& dataset,
                              const Episode& episode, double scale, double offset) {
    if (scale <= 0.0) throw UsageError("angular_proto_loss: scale must be > 0");
    LogitConfig logit;
    logit.kind = LogitKind::angular;
    logit.angular_scale = scale;
    logit.angular_offset = offset;
    return proto_loss(embedder, tag, dataset, episode, logit);
}

}  // namespace fdg
