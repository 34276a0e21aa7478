#include "fdg/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include "fdg/errors.hpp"

namespace fdg {

void TrainConfig::validate() const {
    if (way < 2 || shot < 1 || queries < 1) {
        throw ConfigError("train: need way >= 2, shot >= 1, queries >= 1");
    }
    if (lambda_dg < 0.0 || !std::isfinite(lambda_dg)) throw ConfigError("train: lambda_dg must be >= 0");
    if (pretrain_iters < 0 || main_iters < 0) throw ConfigError("train: iteration counts must be >= 0");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train: momentum must be in [0, 1)");
    if (learning_rate < 0.0 || !std::isfinite(learning_rate)) {
        throw ConfigError("train: learning rate must be >= 0");
    }
    if (cluster_count < 1) throw ConfigError("train: cluster count must be >= 1");
    encoder.validate();
}

namespace {

void step_values(std::vector<double>& params, const std::vector<double>& grads,
                 std::vector<double>& velocity, double lr, double momentum) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        velocity[i] = momentum * velocity[i] + grads[i];
        params[i] -= lr * velocity[i];
    }
}

LogitConfig logit_for(const TrainConfig& config, const NetworkState& network) {
    LogitConfig logit;
    if (config.variant == LossVariant::angular) {
        logit.kind = LogitKind::angular;
        logit.angular_scale = network.angular_scale;
        logit.angular_offset = network.angular_offset;
    } else {
        logit.kind = config.squared_distance ? LogitKind::neg_sq_euclidean
                                             : LogitKind::neg_euclidean;
    }
    return logit;
}

// Applies one optimizer step to a network, including the angular head when
// the loss produced head gradients.
void apply_step(NetworkState& network, const LossOutput& loss, NetTag tag,
                const TrainConfig& config) {
    if (!std::isfinite(loss.value)) throw NumericalError("non-finite loss value");
    sgd_step(network.params, loss.grads.at(tag), network.velocity, config.learning_rate,
             config.momentum);
    if (loss.has_head_grads) {
        sgd_step_scalar(network.angular_scale, loss.scale_grad, network.scale_velocity,
                        config.learning_rate, config.momentum);
        sgd_step_scalar(network.angular_offset, loss.offset_grad, network.offset_velocity,
                        config.learning_rate, config.momentum);
        if (network.angular_scale < 1e-6) network.angular_scale = 1e-6;
    }
}

[[noreturn]] void abort_with_context(const char* phase, int iteration, const TrainState& state,
                                     const std::string& what) {
    std::string message = std::string("training aborted in ") + phase + " at iteration " +
                          std::to_string(iteration) + ": " + what;
    const std::size_t tail = std::min<std::size_t>(state.loss_log.size(), 3);
    for (std::size_t i = state.loss_log.size() - tail; i < state.loss_log.size(); ++i) {
        const LossRecord& record = state.loss_log[i];
        message += "\n  [" + record.phase + " " + std::to_string(record.iteration) + "]";
        if (record.l_agg) message += " l_agg=" + std::to_string(*record.l_agg);
        if (record.l_dg) message += " l_dg=" + std::to_string(*record.l_dg);
    }
    throw NumericalError(message);
}

}  // namespace

void sgd_step(EncoderParams& params, const EncoderGrads& grads, EncoderGrads& velocity,
              double learning_rate, double momentum) {
    if (!grads.all_finite()) throw NumericalError("sgd_step: non-finite gradient");
    for (std::size_t l = 0; l < params.conv.size(); ++l) {
        step_values(params.conv[l].weight.data, grads.conv[l].weight.data,
                    velocity.conv[l].weight.data, learning_rate, momentum);
        step_values(params.conv[l].bias, grads.conv[l].bias, velocity.conv[l].bias, learning_rate,
                    momentum);
    }
    step_values(params.proj_weight.data, grads.proj_weight.data, velocity.proj_weight.data,
                learning_rate, momentum);
    step_values(params.proj_bias, grads.proj_bias, velocity.proj_bias, learning_rate, momentum);
}

void sgd_step_scalar(double& param, double grad, double& velocity, double learning_rate,
                     double momentum) {
    if (!std::isfinite(grad)) throw NumericalError("sgd_step: non-finite gradient");
    velocity = momentum * velocity + grad;
    param -= learning_rate * velocity;
}

TrainState init_state(const TrainConfig& config) {
    config.validate();
    TrainState state;
    Rng rng = Rng(config.seed).split("init/agg");
    state.aggregation.params = init_params(config.encoder, rng);
    state.aggregation.velocity = EncoderGrads::zeros_like(state.aggregation.params);
    return state;
}

void pretrain_agg(TrainState& state, const Dataset& dataset, const TrainConfig& config) {
    Rng episode_rng = Rng(config.seed).split("pretrain/episodes");
    const EpisodeSampler sampler(dataset, config.way, config.shot, config.queries);
    for (int iter = 0; iter < config.pretrain_iters; ++iter) {
        try {
            const Episode episode = sampler.aggregation(episode_rng);
            const LossOutput loss =
                proto_loss(state.aggregation.params, NetTag::aggregation(), dataset, episode,
                           logit_for(config, state.aggregation));
            if (!std::isfinite(loss.value)) throw NumericalError("non-finite loss value");
            apply_step(state.aggregation, loss, NetTag::aggregation(), config);
            state.loss_log.push_back({"pretrain", iter, loss.value, std::nullopt, {}});
        } catch (const NumericalError& e) {
            abort_with_context("pretrain", iter, state, e.what());
        }
    }
}

std::vector<int> cluster_phase(TrainState& state, Dataset& dataset, const TrainConfig& config,
                               bool skip_clustering) {
    std::vector<int> labels(dataset.utterances.size(), 0);
    if (skip_clustering) {
        for (std::size_t i = 0; i < dataset.utterances.size(); ++i) {
            labels[i] = dataset.utterances[i].domain;
            dataset.utterances[i].pseudo_domain = labels[i];
        }
        state.clusters.reset();
    } else {
        const Matrix features = style_features(state.aggregation.params, dataset,
                                               config.style_layers);
        Rng rng = Rng(config.seed).split("cluster");
        state.clusters = kmeans(features, config.cluster_count, rng);
        labels = assign_labels(*state.clusters, features);
        for (std::size_t i = 0; i < labels.size(); ++i) {
            dataset.utterances[i].pseudo_domain = labels[i];
        }
    }
    int domains = 0;
    for (int label : labels) domains = std::max(domains, label + 1);
    state.label_histogram.assign(static_cast<std::size_t>(domains), 0);
    for (int label : labels) ++state.label_histogram[static_cast<std::size_t>(label)];
    return labels;
}

void spawn_experts(TrainState& state, const TrainConfig& config, int domain_count) {
    state.experts.clear();
    for (int j = 0; j < domain_count; ++j) {
        NetworkState expert;
        if (config.specific_warm_start) {
            expert.params = state.aggregation.params;
            expert.angular_scale = state.aggregation.angular_scale;
            expert.angular_offset = state.aggregation.angular_offset;
        } else {
            Rng rng = Rng(config.seed).split("init/expert/" + std::to_string(j));
            expert.params = init_params(config.encoder, rng);
        }
        expert.velocity = EncoderGrads::zeros_like(expert.params);
        state.experts.push_back(std::move(expert));
    }
}

namespace {

// One specific-episode step for expert j; returns the loss value.
double expert_step(TrainState& state, const Dataset& dataset, const TrainConfig& config,
                   const EpisodeSampler& sampler, int j, Rng& rng) {
    NetworkState& expert = state.experts[static_cast<std::size_t>(j)];
    const Episode episode = sampler.specific(j, rng);
    const LossOutput loss = proto_loss(expert.params, NetTag::expert(j), dataset, episode,
                                       logit_for(config, expert));
    if (!std::isfinite(loss.value)) throw NumericalError("non-finite loss value");
    apply_step(expert, loss, NetTag::expert(j), config);
    return loss.value;
}

}  // namespace

void main_phase(TrainState& state, const Dataset& dataset, const TrainConfig& config,
                const IterationObserver& observer) {
    const int expert_count = static_cast<int>(state.experts.size());
    const Rng root(config.seed);
    Rng agg_rng = root.split("main/agg");
    Rng mismatch_rng = root.split("main/mismatch");
    std::vector<Rng> expert_rngs;
    for (int j = 0; j < expert_count; ++j) {
        expert_rngs.push_back(root.split("main/expert/" + std::to_string(j)));
    }
    const EpisodeSampler sampler(dataset, config.way, config.shot, config.queries);

    const bool use_dg = config.lambda_dg > 0.0 && expert_count >= 2;
    if (config.lambda_dg > 0.0 && expert_count == 1) {
        std::cerr << "warning: single pseudo-domain, treating lambda_dg as 0 "
                     "(mismatch episodes need at least 2 domains)\n";
    }

    // Sequential mode: every expert runs to completion before the
    // aggregation network trains.
    if (config.sequential_specifics) {
        for (int j = 0; j < expert_count; ++j) {
            for (int iter = 0; iter < config.main_iters; ++iter) {
                try {
                    const double value =
                        expert_step(state, dataset, config, sampler, j, expert_rngs[static_cast<std::size_t>(j)]);
                    LossRecord record{"expert", iter, std::nullopt, std::nullopt, {}};
                    record.l_sp.assign(static_cast<std::size_t>(expert_count), 0.0);
                    record.l_sp[static_cast<std::size_t>(j)] = value;
                    state.loss_log.push_back(std::move(record));
                } catch (const NumericalError& e) {
                    abort_with_context("expert", iter, state, e.what());
                }
            }
        }
    }

    for (int iter = 0; iter < config.main_iters; ++iter) {
        LossRecord record{"main", state.iteration, std::nullopt, std::nullopt, {}};
        try {
            if (!config.sequential_specifics) {
                for (int j = 0; j < expert_count; ++j) {
                    record.l_sp.push_back(expert_step(state, dataset, config, sampler, j,
                                                      expert_rngs[static_cast<std::size_t>(j)]));
                }
            }
            if (observer) observer(state, state.iteration, MainStage::after_experts);

            const Episode agg_episode = sampler.aggregation(agg_rng);
            const LogitConfig logit = logit_for(config, state.aggregation);
            LossOutput loss;
            if (use_dg) {
                const Episode mismatch_episode = sampler.mismatch(expert_count, mismatch_rng);
                // snapshot of the expert parameters; they receive no gradients here
                std::vector<EncoderParams> experts;
                experts.reserve(state.experts.size());
                for (const auto& expert : state.experts) experts.push_back(expert.params);
                loss = combined_loss(state.aggregation.params, experts, dataset, agg_episode,
                                     mismatch_episode, config.lambda_dg, logit);
                record.l_agg = loss.value_agg;
                record.l_dg = loss.value_dg;
            } else {
                loss = proto_loss(state.aggregation.params, NetTag::aggregation(), dataset,
                                  agg_episode, logit);
                record.l_agg = loss.value;
            }
            if (!std::isfinite(loss.value)) throw NumericalError("non-finite loss value");
            apply_step(state.aggregation, loss, NetTag::aggregation(), config);
        } catch (const NumericalError& e) {
            abort_with_context("main", state.iteration, state, e.what());
        }
        state.loss_log.push_back(std::move(record));
        if (observer) observer(state, state.iteration, MainStage::after_aggregation);
        ++state.iteration;
    }
}

TrainResult run_training(Dataset& dataset, const TrainConfig& config, RunMode mode,
                         const IterationObserver& observer) {
    config.validate();
    TrainResult result;
    result.state = init_state(config);
    pretrain_agg(result.state, dataset, config);
    result.pretrain_snapshot = result.state.aggregation;

    if (mode == RunMode::protonet_baseline) {
        main_phase(result.state, dataset, config, observer);
        return result;
    }

    cluster_phase(result.state, dataset, config, /*skip_clustering=*/mode == RunMode::original_labels);
    spawn_experts(result.state, config, static_cast<int>(result.state.label_histogram.size()));
    main_phase(result.state, dataset, config, observer);
    return result;
}

Checkpoint checkpoint_from(const NetworkState& network, const TrainConfig& config) {
    Checkpoint ckpt;
    ckpt.params = network.params;
    if (config.variant == LossVariant::angular) {
        ckpt.loss_variant = "angular";
        ckpt.angular_scale = network.angular_scale;
        ckpt.angular_offset = network.angular_offset;
    }
    return ckpt;
}

const char* run_mode_name(RunMode mode) {
    switch (mode) {
        case RunMode::full: return "full";
        case RunMode::protonet_baseline: return "protonet-baseline";
        case RunMode::original_labels: return "original-labels";
    }
    return "full";
}

namespace {

std::string fmt9(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace

void write_run_report(const TrainState& state, const TrainConfig& config, RunMode mode,
                      const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw FormatError("cannot open for writing: " + path);
    f << "# training report\n";
    f << "mode = " << run_mode_name(mode) << '\n';
    f << "way = " << config.way << '\n';
    f << "shot = " << config.shot << '\n';
    f << "queries = " << config.queries << '\n';
    f << "lambda_dg = " << fmt9(config.lambda_dg) << '\n';
    f << "pretrain_iters = " << config.pretrain_iters << '\n';
    f << "main_iters = " << config.main_iters << '\n';
    f << "learning_rate = " << fmt9(config.learning_rate) << '\n';
    f << "momentum = " << fmt9(config.momentum) << '\n';
    f << "seed = " << config.seed << '\n';
    f << "cluster_count = " << config.cluster_count << '\n';
    f << "variant = " << (config.variant == LossVariant::angular ? "angular" : "euclidean-proto")
      << '\n';
    if (!state.label_histogram.empty()) {
        f << "label_histogram =";
        for (std::size_t k = 0; k < state.label_histogram.size(); ++k) {
            f << ' ' << k << ':' << state.label_histogram[k];
        }
        f << '\n';
    }
    for (const auto& record : state.loss_log) {
        f << '[' << record.phase << "] iter " << record.iteration;
        for (std::size_t j = 0; j < record.l_sp.size(); ++j) {
            f << " l_sp" << j << '=' << fmt9(record.l_sp[j]);
        }
        if (record.l_agg) f << " l_agg=" << fmt9(*record.l_agg);
        if (record.l_dg) f << " l_dg=" << fmt9(*record.l_dg);
        f << '\n';
    }
    if (!f) throw FormatError("write failed: " + path);
}

}  // namespace fdg
