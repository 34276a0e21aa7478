#ifndef FDG_ENCODER_HPP
#define FDG_ENCODER_HPP

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fdg/numerics.hpp"

namespace fdg {

// The embedding network: frame-wise 1-D convolutions over time (stride 1,
// odd kernels, same-length zero padding, rectifier), temporal mean/std
// pooling over the last layer, then a linear projection to the embedding.
// The same topology serves the aggregation network and every domain expert.

struct ConvLayerSpec {
    std::size_t out_channels = 16;
    std::size_t kernel_width = 3;
    bool operator==(const ConvLayerSpec&) const = default;
};

struct EncoderConfig {
    std::size_t input_channels = 8;
    std::vector<ConvLayerSpec> conv_layers{{16, 3}, {16, 3}};
    std::size_t embed_dim = 32;

    void validate() const;
    std::size_t last_channels() const { return conv_layers.back().out_channels; }
    std::size_t pooled_dim() const { return 2 * last_channels(); }
    // Length of the per-utterance style vector: 2 * sum of conv channels.
    std::size_t style_dim() const;
    bool operator==(const EncoderConfig&) const = default;
};

struct ConvLayer {
    // weight(o, i * kernel_width + k): tap k of input channel i feeding output o.
    Matrix weight;
    std::vector<double> bias;  // out_channels
    bool operator==(const ConvLayer&) const = default;
};

struct EncoderParams {
    EncoderConfig config;
    std::vector<ConvLayer> conv;
    Matrix proj_weight;             // embed_dim x pooled_dim
    std::vector<double> proj_bias;  // embed_dim

    bool all_finite() const;
    bool operator==(const EncoderParams&) const = default;
};

// Everything backward needs: the channel-major input, each layer's
// post-rectifier map, pooling statistics and the embedding.
struct ForwardTrace {
    Matrix input;                     // input_channels x T
    std::vector<Matrix> activations;  // per layer, C_l x T
    std::vector<double> mean;         // last layer, per channel
    std::vector<double> stddev;       // last layer, per channel (eps-floored)
    std::vector<double> pooled;       // [mean, stddev], 2*C_L
    std::vector<double> embedding;    // embed_dim
};

// Gradient buffers with the same shapes as EncoderParams. Also reused as
// momentum buffers by the optimizer.
struct EncoderGrads {
    std::vector<ConvLayer> conv;
    Matrix proj_weight;
    std::vector<double> proj_bias;

    static EncoderGrads zeros_like(const EncoderParams& params);
    void add_scaled(const EncoderGrads& other, double scale);
    bool all_finite() const;
    double max_abs() const;
};

// Glorot-uniform weights, zero biases: per tensor, w ~ U(-s, s) with
// s = sqrt(6 / (fan_in + fan_out)), drawn in flattening order from rng.
EncoderParams init_params(const EncoderConfig& config, Rng& rng);

// frames is T x input_channels (one row per frame), T >= 1.
std::vector<double> forward(const EncoderParams& params, const Matrix& frames);
ForwardTrace forward_traced(const EncoderParams& params, const Matrix& frames);

// Accumulates d loss / d params for one traced input into `accum`. Callers
// add batch members in a fixed order so runs are bit-reproducible.
void backward(const EncoderParams& params, const ForwardTrace& trace,
              std::span<const double> embedding_grad, EncoderGrads& accum);

// Batch form: upstream row i is the embedding gradient of traces[i].
EncoderGrads backward_batch(const EncoderParams& params, std::span<const ForwardTrace> traces,
                            const Matrix& upstream);

// Flattening order (used by checkpoints and the finite-difference oracle):
// conv layer 0 weight row-major, conv layer 0 bias, ..., projection weight
// row-major, projection bias.
std::size_t param_count(const EncoderConfig& config);
std::vector<double> flatten_params(const EncoderParams& params);
void unflatten_params(EncoderParams& params, std::span<const double> flat);
std::vector<double> flatten_grads(const EncoderGrads& grads);

// Checkpoint: encoder parameters plus the loss head they were trained with.
// Round trips are bit-identical (f64 payload).
struct Checkpoint {
    EncoderParams params;
    std::string loss_variant = "euclidean";  // "euclidean" | "angular"
    double angular_scale = 10.0;
    double angular_offset = -5.0;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace fdg

#endif
