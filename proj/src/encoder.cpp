#include "fdg/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "fdg/errors.hpp"
#include "fdg/serial.hpp"

namespace fdg {

namespace {

// Keeps the pooled std differentiable at constant sequences.
constexpr double kStdEps = 1e-8;

void conv_forward(const ConvLayer& layer, const Matrix& in, Matrix& out) {
    const std::size_t in_channels = in.rows;
    const std::size_t T = in.cols;
    const std::size_t out_channels = layer.bias.size();
    const std::size_t kernel = layer.weight.cols / in_channels;
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(kernel / 2);

    out = Matrix(out_channels, T);
    for (std::size_t o = 0; o < out_channels; ++o) {
        double* dst = out.row(o);
        for (std::size_t t = 0; t < T; ++t) dst[t] = layer.bias[o];
        const double* w = layer.weight.row(o);
        for (std::size_t i = 0; i < in_channels; ++i) {
            const double* src = in.row(i);
            for (std::size_t k = 0; k < kernel; ++k) {
                const double wv = w[i * kernel + k];
                if (wv == 0.0) continue;
                const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(k) - pad;
                const std::size_t t_lo =
                    shift < 0 ? std::min(static_cast<std::size_t>(-shift), T) : 0;
                const std::size_t t_hi =
                    shift > 0 ? (T > static_cast<std::size_t>(shift)
                                     ? T - static_cast<std::size_t>(shift)
                                     : 0)
                              : T;
                for (std::size_t t = t_lo; t < t_hi; ++t) {
                    dst[t] += wv * src[static_cast<std::size_t>(
                                      static_cast<std::ptrdiff_t>(t) + shift)];
                }
            }
        }
        // rectifier
        for (std::size_t t = 0; t < T; ++t) dst[t] = dst[t] > 0.0 ? dst[t] : 0.0;
    }
}

}  // namespace

void EncoderConfig::validate() const {
    if (input_channels < 1) throw ConfigError("encoder: input_channels must be >= 1");
    if (conv_layers.empty()) throw ConfigError("encoder: at least one conv layer required");
    for (const auto& layer : conv_layers) {
        if (layer.out_channels < 1) throw ConfigError("encoder: conv out_channels must be >= 1");
        if (layer.kernel_width % 2 == 0 || layer.kernel_width < 1) {
            throw ConfigError("encoder: kernel_width must be odd");
        }
    }
    if (embed_dim < 2) throw ConfigError("encoder: embed_dim must be >= 2");
}

std::size_t EncoderConfig::style_dim() const {
    std::size_t total = 0;
    for (const auto& layer : conv_layers) total += layer.out_channels;
    return 2 * total;
}

bool EncoderParams::all_finite() const {
    for (const auto& layer : conv) {
        if (!layer.weight.all_finite() || !fdg::all_finite(layer.bias)) return false;
    }
    return proj_weight.all_finite() && fdg::all_finite(proj_bias);
}

EncoderParams init_params(const EncoderConfig& config, Rng& rng) {
    config.validate();
    EncoderParams params;
    params.config = config;
    std::size_t in_channels = config.input_channels;
    for (const auto& spec : config.conv_layers) {
        ConvLayer layer;
        layer.weight = Matrix(spec.out_channels, in_channels * spec.kernel_width);
        layer.bias.assign(spec.out_channels, 0.0);
        const double fan_in = static_cast<double>(in_channels * spec.kernel_width);
        const double fan_out = static_cast<double>(spec.out_channels * spec.kernel_width);
        const double s = std::sqrt(6.0 / (fan_in + fan_out));
        for (double& w : layer.weight.data) w = rng.uniform(-s, s);
        params.conv.push_back(std::move(layer));
        in_channels = spec.out_channels;
    }
    params.proj_weight = Matrix(config.embed_dim, config.pooled_dim());
    const double s = std::sqrt(6.0 / static_cast<double>(config.pooled_dim() + config.embed_dim));
    for (double& w : params.proj_weight.data) w = rng.uniform(-s, s);
    params.proj_bias.assign(config.embed_dim, 0.0);
    return params;
}

ForwardTrace forward_traced(const EncoderParams& params, const Matrix& frames) {
    const EncoderConfig& config = params.config;
    if (frames.rows < 1) throw UsageError("encoder forward: empty sequence");
    if (frames.cols != config.input_channels) {
        throw UsageError("encoder forward: feature width does not match input_channels");
    }
    const std::size_t T = frames.rows;

    ForwardTrace trace;
    // channel-major copy of the input
    trace.input = Matrix(config.input_channels, T);
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t c = 0; c < config.input_channels; ++c) {
            trace.input(c, t) = frames(t, c);
        }
    }

    trace.activations.resize(params.conv.size());
    const Matrix* current = &trace.input;
    for (std::size_t l = 0; l < params.conv.size(); ++l) {
        conv_forward(params.conv[l], *current, trace.activations[l]);
        current = &trace.activations[l];
    }

    const Matrix& last = trace.activations.back();
    const std::size_t channels = last.rows;
    trace.mean.resize(channels);
    trace.stddev.resize(channels);
    for (std::size_t c = 0; c < channels; ++c) {
        const double* a = last.row(c);
        double mu = 0.0;
        for (std::size_t t = 0; t < T; ++t) mu += a[t];
        mu /= static_cast<double>(T);
        double var = 0.0;
        for (std::size_t t = 0; t < T; ++t) {
            const double d = a[t] - mu;
            var += d * d;
        }
        var /= static_cast<double>(T);
        trace.mean[c] = mu;
        trace.stddev[c] = std::sqrt(var + kStdEps);
    }
    trace.pooled.resize(2 * channels);
    for (std::size_t c = 0; c < channels; ++c) {
        trace.pooled[c] = trace.mean[c];
        trace.pooled[channels + c] = trace.stddev[c];
    }

    trace.embedding.resize(config.embed_dim);
    for (std::size_t d = 0; d < config.embed_dim; ++d) {
        const double* w = params.proj_weight.row(d);
        double acc = params.proj_bias[d];
        for (std::size_t c = 0; c < trace.pooled.size(); ++c) acc += w[c] * trace.pooled[c];
        trace.embedding[d] = acc;
    }
    return trace;
}

std::vector<double> forward(const EncoderParams& params, const Matrix& frames) {
    return forward_traced(params, frames).embedding;
}

EncoderGrads EncoderGrads::zeros_like(const EncoderParams& params) {
    EncoderGrads g;
    g.conv.resize(params.conv.size());
    for (std::size_t l = 0; l < params.conv.size(); ++l) {
        g.conv[l].weight = Matrix(params.conv[l].weight.rows, params.conv[l].weight.cols);
        g.conv[l].bias.assign(params.conv[l].bias.size(), 0.0);
    }
    g.proj_weight = Matrix(params.proj_weight.rows, params.proj_weight.cols);
    g.proj_bias.assign(params.proj_bias.size(), 0.0);
    return g;
}

void EncoderGrads::add_scaled(const EncoderGrads& other, double scale) {
    for (std::size_t l = 0; l < conv.size(); ++l) {
        for (std::size_t i = 0; i < conv[l].weight.data.size(); ++i) {
            conv[l].weight.data[i] += scale * other.conv[l].weight.data[i];
        }
        for (std::size_t i = 0; i < conv[l].bias.size(); ++i) {
            conv[l].bias[i] += scale * other.conv[l].bias[i];
        }
    }
    for (std::size_t i = 0; i < proj_weight.data.size(); ++i) {
        proj_weight.data[i] += scale * other.proj_weight.data[i];
    }
    for (std::size_t i = 0; i < proj_bias.size(); ++i) {
        proj_bias[i] += scale * other.proj_bias[i];
    }
}

bool EncoderGrads::all_finite() const {
    for (const auto& layer : conv) {
        if (!layer.weight.all_finite() || !fdg::all_finite(layer.bias)) return false;
    }
    return proj_weight.all_finite() && fdg::all_finite(proj_bias);
}

double EncoderGrads::max_abs() const {
    double m = 0.0;
    auto scan = [&m](std::span<const double> v) {
        for (double x : v) m = std::max(m, std::abs(x));
    };
    for (const auto& layer : conv) {
        scan(layer.weight.data);
        scan(layer.bias);
    }
    scan(proj_weight.data);
    scan(proj_bias);
    return m;
}

void backward(const EncoderParams& params, const ForwardTrace& trace,
              std::span<const double> embedding_grad, EncoderGrads& accum) {
    const EncoderConfig& config = params.config;
    if (trace.activations.size() != params.conv.size() || trace.embedding.empty()) {
        throw UsageError("encoder backward: trace missing or inconsistent");
    }
    if (embedding_grad.size() != config.embed_dim) {
        throw UsageError("encoder backward: embedding gradient has wrong size");
    }
    const std::size_t T = trace.input.cols;
    const std::size_t channels = config.last_channels();

    // projection
    std::vector<double> g_pooled(trace.pooled.size(), 0.0);
    for (std::size_t d = 0; d < config.embed_dim; ++d) {
        const double g = embedding_grad[d];
        accum.proj_bias[d] += g;
        double* gw = accum.proj_weight.row(d);
        const double* w = params.proj_weight.row(d);
        for (std::size_t c = 0; c < g_pooled.size(); ++c) {
            gw[c] += g * trace.pooled[c];
            g_pooled[c] += w[c] * g;
        }
    }

    // pooling: d mean / d a_t = 1/T; d std / d a_t = (a_t - mean) / (T * std)
    const Matrix& last = trace.activations.back();
    Matrix g_act(channels, T);
    for (std::size_t c = 0; c < channels; ++c) {
        const double g_mu = g_pooled[c];
        const double g_sd = g_pooled[channels + c];
        const double inv_t = 1.0 / static_cast<double>(T);
        const double* a = last.row(c);
        double* g = g_act.row(c);
        const double mu = trace.mean[c];
        const double sd = trace.stddev[c];
        for (std::size_t t = 0; t < T; ++t) {
            g[t] = g_mu * inv_t + g_sd * (a[t] - mu) * inv_t / sd;
        }
    }

    // conv stack, last to first
    for (std::size_t l = params.conv.size(); l-- > 0;) {
        const ConvLayer& layer = params.conv[l];
        const Matrix& act = trace.activations[l];
        const Matrix& in = l == 0 ? trace.input : trace.activations[l - 1];
        const std::size_t out_channels = layer.bias.size();
        const std::size_t in_channels = in.rows;
        const std::size_t kernel = layer.weight.cols / in_channels;
        const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(kernel / 2);

        // rectifier mask: post-activation > 0 iff pre-activation > 0
        for (std::size_t o = 0; o < out_channels; ++o) {
            const double* a = act.row(o);
            double* g = g_act.row(o);
            for (std::size_t t = 0; t < T; ++t) {
                if (a[t] <= 0.0) g[t] = 0.0;
            }
        }

        Matrix g_in(in_channels, T);
        for (std::size_t o = 0; o < out_channels; ++o) {
            const double* g = g_act.row(o);
            double bias_grad = 0.0;
            for (std::size_t t = 0; t < T; ++t) bias_grad += g[t];
            accum.conv[l].bias[o] += bias_grad;

            const double* w = layer.weight.row(o);
            double* gw = accum.conv[l].weight.row(o);
            for (std::size_t i = 0; i < in_channels; ++i) {
                const double* src = in.row(i);
                double* g_src = g_in.row(i);
                for (std::size_t k = 0; k < kernel; ++k) {
                    const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(k) - pad;
                    const std::size_t t_lo =
                        shift < 0 ? std::min(static_cast<std::size_t>(-shift), T) : 0;
                    const std::size_t t_hi =
                        shift > 0 ? (T > static_cast<std::size_t>(shift)
                                         ? T - static_cast<std::size_t>(shift)
                                         : 0)
                                  : T;
                    double w_grad = 0.0;
                    const double wv = w[i * kernel + k];
                    for (std::size_t t = t_lo; t < t_hi; ++t) {
                        const std::size_t ts = static_cast<std::size_t>(
                            static_cast<std::ptrdiff_t>(t) + shift);
                        w_grad += g[t] * src[ts];
                        g_src[ts] += wv * g[t];
                    }
                    gw[i * kernel + k] += w_grad;
                }
            }
        }
        if (l > 0) g_act = std::move(g_in);
    }
}

EncoderGrads backward_batch(const EncoderParams& params, std::span<const ForwardTrace> traces,
                            const Matrix& upstream) {
    if (upstream.rows != traces.size() || upstream.cols != params.config.embed_dim) {
        throw UsageError("encoder backward_batch: upstream shape mismatch");
    }
    EncoderGrads grads = EncoderGrads::zeros_like(params);
    for (std::size_t i = 0; i < traces.size(); ++i) {
        backward(params, traces[i], upstream.row_span(i), grads);
    }
    return grads;
}

std::size_t param_count(const EncoderConfig& config) {
    std::size_t n = 0;
    std::size_t in_channels = config.input_channels;
    for (const auto& spec : config.conv_layers) {
        n += spec.out_channels * in_channels * spec.kernel_width + spec.out_channels;
        in_channels = spec.out_channels;
    }
    n += config.embed_dim * config.pooled_dim() + config.embed_dim;
    return n;
}

std::vector<double> flatten_params(const EncoderParams& params) {
    std::vector<double> flat;
    flat.reserve(param_count(params.config));
    for (const auto& layer : params.conv) {
        flat.insert(flat.end(), layer.weight.data.begin(), layer.weight.data.end());
        flat.insert(flat.end(), layer.bias.begin(), layer.bias.end());
    }
    flat.insert(flat.end(), params.proj_weight.data.begin(), params.proj_weight.data.end());
    flat.insert(flat.end(), params.proj_bias.begin(), params.proj_bias.end());
    return flat;
}

void unflatten_params(EncoderParams& params, std::span<const double> flat) {
    if (flat.size() != param_count(params.config)) {
        throw UsageError("unflatten_params: size mismatch");
    }
    std::size_t pos = 0;
    auto take = [&](double* dst, std::size_t n) {
        std::memcpy(dst, flat.data() + pos, n * sizeof(double));
        pos += n;
    };
    for (auto& layer : params.conv) {
        take(layer.weight.data.data(), layer.weight.data.size());
        take(layer.bias.data(), layer.bias.size());
    }
    take(params.proj_weight.data.data(), params.proj_weight.data.size());
    take(params.proj_bias.data(), params.proj_bias.size());
}

std::vector<double> flatten_grads(const EncoderGrads& grads) {
    std::vector<double> flat;
    for (const auto& layer : grads.conv) {
        flat.insert(flat.end(), layer.weight.data.begin(), layer.weight.data.end());
        flat.insert(flat.end(), layer.bias.begin(), layer.bias.end());
    }
    flat.insert(flat.end(), grads.proj_weight.data.begin(), grads.proj_weight.data.end());
    flat.insert(flat.end(), grads.proj_bias.begin(), grads.proj_bias.end());
    return flat;
}

namespace {

nlohmann::json config_to_json(const EncoderConfig& config) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& layer : config.conv_layers) {
        layers.push_back({{"out_channels", layer.out_channels},
                          {"kernel_width", layer.kernel_width}});
    }
    return {{"input_channels", config.input_channels},
            {"conv_layers", layers},
            {"embed_dim", config.embed_dim}};
}

EncoderConfig config_from_json(const nlohmann::json& j) {
    EncoderConfig config;
    try {
        config.input_channels = j.at("input_channels").get<std::size_t>();
        config.embed_dim = j.at("embed_dim").get<std::size_t>();
        config.conv_layers.clear();
        for (const auto& layer : j.at("conv_layers")) {
            config.conv_layers.push_back({layer.at("out_channels").get<std::size_t>(),
                                          layer.at("kernel_width").get<std::size_t>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint descriptor: ") + e.what());
    }
    return config;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    if (!ckpt.params.all_finite()) throw NumericalError("save_checkpoint: non-finite parameters");
    BlobFile blob;
    blob.magic = "FDGW";
    blob.version = 1;

    nlohmann::json tensors = nlohmann::json::array();
    auto add_tensor = [&](const std::string& name, std::vector<std::size_t> shape,
                          std::span<const double> values) {
        tensors.push_back({{"name", name}, {"shape", shape}});
        blob.payload.insert(blob.payload.end(), values.begin(), values.end());
    };
    for (std::size_t l = 0; l < ckpt.params.conv.size(); ++l) {
        const auto& layer = ckpt.params.conv[l];
        add_tensor("conv" + std::to_string(l) + ".weight", {layer.weight.rows, layer.weight.cols},
                   layer.weight.data);
        add_tensor("conv" + std::to_string(l) + ".bias", {layer.bias.size()}, layer.bias);
    }
    add_tensor("proj.weight", {ckpt.params.proj_weight.rows, ckpt.params.proj_weight.cols},
               ckpt.params.proj_weight.data);
    add_tensor("proj.bias", {ckpt.params.proj_bias.size()}, ckpt.params.proj_bias);
    if (ckpt.loss_variant == "angular") {
        const double wb[2] = {ckpt.angular_scale, ckpt.angular_offset};
        add_tensor("head.angular", {2}, wb);
    }

    blob.descriptor = {{"config", config_to_json(ckpt.params.config)},
                       {"loss_variant", ckpt.loss_variant},
                       {"tensors", tensors}};
    write_blob(blob, path);
}

Checkpoint load_checkpoint(const std::string& path) {
    const BlobFile blob = read_blob(path, "FDGW");
    if (blob.version != 1) throw FormatError("unsupported checkpoint version");

    Checkpoint ckpt;
    ckpt.params.config = config_from_json(blob.descriptor.at("config"));
    ckpt.params.config.validate();
    ckpt.loss_variant = blob.descriptor.value("loss_variant", "euclidean");

    // reconstruct tensors in descriptor order
    std::size_t pos = 0;
    auto take = [&](std::size_t n) -> std::span<const double> {
        if (pos + n > blob.payload.size()) throw FormatError("checkpoint payload truncated");
        std::span<const double> s(blob.payload.data() + pos, n);
        pos += n;
        return s;
    };

    const EncoderConfig& config = ckpt.params.config;
    std::size_t expected = param_count(config);
    bool has_head = ckpt.loss_variant == "angular";
    if (blob.payload.size() != expected + (has_head ? 2 : 0)) {
        throw FormatError("checkpoint payload size does not match descriptor config");
    }

    std::size_t in_channels = config.input_channels;
    for (const auto& spec : config.conv_layers) {
        ConvLayer layer;
        layer.weight = Matrix(spec.out_channels, in_channels * spec.kernel_width);
        auto w = take(layer.weight.data.size());
        std::copy(w.begin(), w.end(), layer.weight.data.begin());
        auto b = take(spec.out_channels);
        layer.bias.assign(b.begin(), b.end());
        ckpt.params.conv.push_back(std::move(layer));
        in_channels = spec.out_channels;
    }
    ckpt.params.proj_weight = Matrix(config.embed_dim, config.pooled_dim());
    auto pw = take(ckpt.params.proj_weight.data.size());
    std::copy(pw.begin(), pw.end(), ckpt.params.proj_weight.data.begin());
    auto pb = take(config.embed_dim);
    ckpt.params.proj_bias.assign(pb.begin(), pb.end());
    if (has_head) {
        auto wb = take(2);
        ckpt.angular_scale = wb[0];
        ckpt.angular_offset = wb[1];
    }

    // Cross-check the descriptor's tensor shapes against the config.
    std::size_t declared = 0;
    try {
        for (const auto& tensor : blob.descriptor.at("tensors")) {
            std::size_t n = 1;
            for (const auto& dim : tensor.at("shape")) n *= dim.get<std::size_t>();
            declared += n;
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint descriptor: ") + e.what());
    }
    if (declared != blob.payload.size()) {
        throw FormatError("checkpoint descriptor shapes do not match payload");
    }
    if (!ckpt.params.all_finite()) throw FormatError("checkpoint contains non-finite values");
    return ckpt;
}

}  // namespace fdg
