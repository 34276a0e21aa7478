#ifndef FDG_TRAINER_HPP
#define FDG_TRAINER_HPP

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fdg/clustering.hpp"
#include "fdg/encoder.hpp"
#include "fdg/episodes.hpp"
#include "fdg/losses.hpp"

namespace fdg {

enum class LossVariant { euclidean_proto, angular };
enum class RunMode { full, protonet_baseline, original_labels };

struct TrainConfig {
    int way = 5;
    int shot = 5;
    int queries = 5;
    double lambda_dg = 0.8;
    int pretrain_iters = 2000;
    int main_iters = 5000;
    bool specific_warm_start = true;   // experts start from the pretrained aggregation net
    bool sequential_specifics = false; // train experts to completion before the aggregation net
    double learning_rate = 0.01;
    double momentum = 0.9;
    std::uint64_t seed = 1;
    int cluster_count = 3;  // M
    LossVariant variant = LossVariant::euclidean_proto;
    bool squared_distance = true;  // false switches the proto logits to plain distance
    EncoderConfig encoder;
    std::vector<int> style_layers;  // conv layers feeding style stats; empty = all

    void validate() const;
};

// One embedding network with its optimizer state; the angular head scalars
// ride along and are ignored under the euclidean variant.
struct NetworkState {
    EncoderParams params;
    EncoderGrads velocity;
    double angular_scale = 10.0;
    double angular_offset = -5.0;
    double scale_velocity = 0.0;
    double offset_velocity = 0.0;
};

struct LossRecord {
    std::string phase;  // "pretrain" | "main" | "expert"
    int iteration = 0;
    std::optional<double> l_agg;
    std::optional<double> l_dg;
    std::vector<double> l_sp;  // per expert, in expert order
};

struct TrainState {
    NetworkState aggregation;
    std::vector<NetworkState> experts;
    std::optional<ClusterModel> clusters;  // set by cluster_phase unless skipped
    std::vector<int> label_histogram;
    int iteration = 0;
    std::vector<LossRecord> loss_log;
};

// v <- momentum * v + g; theta <- theta - lr * v. Throws NumericalError on a
// non-finite gradient.
void sgd_step(EncoderParams& params, const EncoderGrads& grads, EncoderGrads& velocity,
              double learning_rate, double momentum);
void sgd_step_scalar(double& param, double grad, double& velocity, double learning_rate,
                     double momentum);

TrainState init_state(const TrainConfig& config);

// Step 1: aggregation episodes with the prototype loss.
void pretrain_agg(TrainState& state, const Dataset& dataset, const TrainConfig& config);

// Step 2: style features + k-means, then pseudo labels written back into the
// dataset. skip_clustering keeps the true domain ids as pseudo labels (the
// original-labels baseline). Returns the label histogram.
std::vector<int> cluster_phase(TrainState& state, Dataset& dataset, const TrainConfig& config,
                               bool skip_clustering);

// Step 3 prep: one expert per pseudo-domain, warm-started from the pretrained
// aggregation network unless configured otherwise.
void spawn_experts(TrainState& state, const TrainConfig& config, int domain_count);

enum class MainStage { after_experts, after_aggregation };
using IterationObserver = std::function<void(const TrainState&, int iteration, MainStage stage)>;

// Steps 3-4: per iteration, every expert takes one specific-episode step,
// then the aggregation network takes one step on L_agg + lambda_dg * L_dg.
// Experts are never updated by the mismatch loss. With no experts (baseline)
// or lambda_dg = 0 or fewer than two domains, the aggregation step degrades
// to the plain prototype loss on the same episode stream.
void main_phase(TrainState& state, const Dataset& dataset, const TrainConfig& config,
                const IterationObserver& observer = {});

struct TrainResult {
    TrainState state;
    NetworkState pretrain_snapshot;  // aggregation network right after step 1
};

TrainResult run_training(Dataset& dataset, const TrainConfig& config, RunMode mode,
                         const IterationObserver& observer = {});

Checkpoint checkpoint_from(const NetworkState& network, const TrainConfig& config);

// Per-iteration losses plus the label histogram, deterministically formatted.
void write_run_report(const TrainState& state, const TrainConfig& config, RunMode mode,
                      const std::string& path);

const char* run_mode_name(RunMode mode);

}  // namespace fdg

#endif
