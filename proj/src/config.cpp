#include "fdg/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "fdg/errors.hpp"

namespace fdg {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

int parse_int(const std::string& v) {
    try {
        std::size_t pos = 0;
        const int x = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (...) {
        throw UsageError("config: expected integer, got '" + v + "'");
    }
}

std::uint64_t parse_u64(const std::string& v) {
    try {
        std::size_t pos = 0;
        const std::uint64_t x = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (...) {
        throw UsageError("config: expected unsigned integer, got '" + v + "'");
    }
}

double parse_double(const std::string& v) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (...) {
        throw UsageError("config: expected number, got '" + v + "'");
    }
}

bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw UsageError("config: expected true/false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> parts;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) parts.push_back(item);
    }
    return parts;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string format_conv_layers(const std::vector<ConvLayerSpec>& layers) {
    std::string out;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (i > 0) out += ',';
        out += std::to_string(layers[i].out_channels) + 'x' + std::to_string(layers[i].kernel_width);
    }
    return out;
}

std::vector<ConvLayerSpec> parse_conv_layers(const std::string& v) {
    std::vector<ConvLayerSpec> layers;
    for (const auto& part : split_list(v)) {
        const auto x = part.find('x');
        if (x == std::string::npos) {
            throw UsageError("config: conv layer must look like '16x3', got '" + part + "'");
        }
        ConvLayerSpec spec;
        spec.out_channels = static_cast<std::size_t>(parse_int(part.substr(0, x)));
        spec.kernel_width = static_cast<std::size_t>(parse_int(part.substr(x + 1)));
        layers.push_back(spec);
    }
    if (layers.empty()) throw UsageError("config: conv layer list is empty");
    return layers;
}

struct KeyHandler {
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

const std::map<std::string, KeyHandler>& key_table() {
    static const std::map<std::string, KeyHandler> table = [] {
        std::map<std::string, KeyHandler> t;
        auto add_i = [&t](const std::string& key, std::function<int&(RunConfig&)> ref) {
            t[key] = {[ref](RunConfig& c, const std::string& v) { ref(c) = parse_int(v); },
                      [ref](const RunConfig& c) {
                          return std::to_string(ref(const_cast<RunConfig&>(c)));
                      }};
        };
        auto add_d = [&t](const std::string& key, std::function<double&(RunConfig&)> ref) {
            t[key] = {[ref](RunConfig& c, const std::string& v) { ref(c) = parse_double(v); },
                      [ref](const RunConfig& c) {
                          return format_double(ref(const_cast<RunConfig&>(c)));
                      }};
        };
        auto add_b = [&t](const std::string& key, std::function<bool&(RunConfig&)> ref) {
            t[key] = {[ref](RunConfig& c, const std::string& v) { ref(c) = parse_bool(v); },
                      [ref](const RunConfig& c) {
                          return ref(const_cast<RunConfig&>(c)) ? "true" : "false";
                      }};
        };
        auto add_u64 = [&t](const std::string& key, std::function<std::uint64_t&(RunConfig&)> ref) {
            t[key] = {[ref](RunConfig& c, const std::string& v) { ref(c) = parse_u64(v); },
                      [ref](const RunConfig& c) {
                          return std::to_string(ref(const_cast<RunConfig&>(c)));
                      }};
        };

        // generator
        add_i("gen.latent_dim", [](RunConfig& c) -> int& { return c.gen.latent_dim; });
        add_i("gen.channels", [](RunConfig& c) -> int& { return c.gen.channels; });
        add_i("gen.frames", [](RunConfig& c) -> int& { return c.gen.frames; });
        add_i("gen.train_speakers", [](RunConfig& c) -> int& { return c.gen.train_speakers; });
        add_i("gen.test_speakers", [](RunConfig& c) -> int& { return c.gen.test_speakers; });
        add_i("gen.utterances_per_speaker",
              [](RunConfig& c) -> int& { return c.gen.utterances_per_speaker; });
        add_d("gen.within_speaker_std",
              [](RunConfig& c) -> double& { return c.gen.within_speaker_std; });
        add_d("gen.frame_noise_std", [](RunConfig& c) -> double& { return c.gen.frame_noise_std; });
        add_i("gen.source_domains", [](RunConfig& c) -> int& { return c.gen.source_domains; });
        add_i("gen.out_domains", [](RunConfig& c) -> int& { return c.gen.out_domains; });
        add_d("gen.scale_lo", [](RunConfig& c) -> double& { return c.gen.scale_lo; });
        add_d("gen.scale_hi", [](RunConfig& c) -> double& { return c.gen.scale_hi; });
        add_d("gen.offset_lo", [](RunConfig& c) -> double& { return c.gen.offset_lo; });
        add_d("gen.offset_hi", [](RunConfig& c) -> double& { return c.gen.offset_hi; });
        add_d("gen.noise_snr", [](RunConfig& c) -> double& { return c.gen.noise_snr; });
        add_d("gen.out_scale_lo", [](RunConfig& c) -> double& { return c.gen.out_scale_lo; });
        add_d("gen.out_scale_hi", [](RunConfig& c) -> double& { return c.gen.out_scale_hi; });
        add_d("gen.out_offset_lo", [](RunConfig& c) -> double& { return c.gen.out_offset_lo; });
        add_d("gen.out_offset_hi", [](RunConfig& c) -> double& { return c.gen.out_offset_hi; });
        add_d("gen.out_noise_snr", [](RunConfig& c) -> double& { return c.gen.out_noise_snr; });
        add_i("gen.noise_rank", [](RunConfig& c) -> int& { return c.gen.noise_rank; });
        add_i("gen.enroll_per_speaker",
              [](RunConfig& c) -> int& { return c.gen.enroll_per_speaker; });
        add_i("gen.test_per_speaker", [](RunConfig& c) -> int& { return c.gen.test_per_speaker; });
        add_u64("gen.seed", [](RunConfig& c) -> std::uint64_t& { return c.gen.seed; });

        // trainer
        add_i("train.way", [](RunConfig& c) -> int& { return c.train.way; });
        add_i("train.shot", [](RunConfig& c) -> int& { return c.train.shot; });
        add_i("train.queries", [](RunConfig& c) -> int& { return c.train.queries; });
        add_d("train.lambda_dg", [](RunConfig& c) -> double& { return c.train.lambda_dg; });
        add_i("train.pretrain_iters", [](RunConfig& c) -> int& { return c.train.pretrain_iters; });
        add_i("train.main_iters", [](RunConfig& c) -> int& { return c.train.main_iters; });
        add_b("train.specific_warm_start",
              [](RunConfig& c) -> bool& { return c.train.specific_warm_start; });
        add_b("train.sequential_specifics",
              [](RunConfig& c) -> bool& { return c.train.sequential_specifics; });
        add_d("train.learning_rate", [](RunConfig& c) -> double& { return c.train.learning_rate; });
        add_d("train.momentum", [](RunConfig& c) -> double& { return c.train.momentum; });
        add_u64("train.seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; });
        add_i("train.cluster_count", [](RunConfig& c) -> int& { return c.train.cluster_count; });

        t["train.variant"] = {
            [](RunConfig& c, const std::string& v) {
                if (v == "euclidean-proto") {
                    c.train.variant = LossVariant::euclidean_proto;
                } else if (v == "angular") {
                    c.train.variant = LossVariant::angular;
                } else {
                    throw UsageError("config: train.variant must be euclidean-proto or angular");
                }
            },
            [](const RunConfig& c) {
                return c.train.variant == LossVariant::angular ? "angular" : "euclidean-proto";
            }};
        t["train.distance"] = {
            [](RunConfig& c, const std::string& v) {
                if (v == "squared") {
                    c.train.squared_distance = true;
                } else if (v == "plain") {
                    c.train.squared_distance = false;
                } else {
                    throw UsageError("config: train.distance must be squared or plain");
                }
            },
            [](const RunConfig& c) { return c.train.squared_distance ? "squared" : "plain"; }};
        t["train.style_layers"] = {
            [](RunConfig& c, const std::string& v) {
                c.train.style_layers.clear();
                if (v == "all" || v.empty()) return;
                for (const auto& part : split_list(v)) {
                    c.train.style_layers.push_back(parse_int(part));
                }
            },
            [](const RunConfig& c) {
                if (c.train.style_layers.empty()) return std::string("all");
                std::string out;
                for (std::size_t i = 0; i < c.train.style_layers.size(); ++i) {
                    if (i > 0) out += ',';
                    out += std::to_string(c.train.style_layers[i]);
                }
                return out;
            }};
        t["train.encoder.input_channels"] = {
            [](RunConfig& c, const std::string& v) {
                c.train.encoder.input_channels = static_cast<std::size_t>(parse_int(v));
            },
            [](const RunConfig& c) { return std::to_string(c.train.encoder.input_channels); }};
        t["train.encoder.conv_layers"] = {
            [](RunConfig& c, const std::string& v) {
                c.train.encoder.conv_layers = parse_conv_layers(v);
            },
            [](const RunConfig& c) { return format_conv_layers(c.train.encoder.conv_layers); }};
        t["train.encoder.embed_dim"] = {
            [](RunConfig& c, const std::string& v) {
                c.train.encoder.embed_dim = static_cast<std::size_t>(parse_int(v));
            },
            [](const RunConfig& c) { return std::to_string(c.train.encoder.embed_dim); }};

        // evaluation
        t["eval.domains"] = {
            [](RunConfig& c, const std::string& v) {
                if (v != "in" && v != "out" && v != "all") {
                    throw UsageError("config: eval.domains must be in, out or all");
                }
                c.eval.domains = v;
            },
            [](const RunConfig& c) { return c.eval.domains; }};
        t["eval.far_points"] = {
            [](RunConfig& c, const std::string& v) {
                c.eval.far_points.clear();
                for (const auto& part : split_list(v)) {
                    c.eval.far_points.push_back(parse_double(part));
                }
                if (c.eval.far_points.empty()) {
                    throw UsageError("config: eval.far_points must not be empty");
                }
            },
            [](const RunConfig& c) {
                std::string out;
                for (std::size_t i = 0; i < c.eval.far_points.size(); ++i) {
                    if (i > 0) out += ',';
                    out += format_double(c.eval.far_points[i]);
                }
                return out;
            }};
        t["eval.metric"] = {
            [](RunConfig& c, const std::string& v) {
                if (v != "auto" && v != "neg_sq_euclidean" && v != "cosine") {
                    throw UsageError("config: eval.metric must be auto, neg_sq_euclidean or cosine");
                }
                c.eval.metric = v;
            },
            [](const RunConfig& c) { return c.eval.metric; }};
        add_d("eval.dcf_cost_fr", [](RunConfig& c) -> double& { return c.eval.dcf_cost_fr; });
        add_d("eval.dcf_cost_fa", [](RunConfig& c) -> double& { return c.eval.dcf_cost_fa; });
        add_d("eval.dcf_p_target", [](RunConfig& c) -> double& { return c.eval.dcf_p_target; });
        return t;
    }();
    return table;
}

void apply_line(RunConfig& config, const std::string& key, const std::string& value) {
    const auto& table = key_table();
    const auto it = table.find(key);
    if (it == table.end()) throw UsageError("config: unknown key '" + key + "'");
    it->second.set(config, value);
}

}  // namespace

RunConfig parse_config_file(const std::string& path) {
    RunConfig config;
    std::ifstream f(path);
    if (!f) throw UsageError("cannot open config file: " + path);
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw UsageError("config: line " + std::to_string(line_no) + " is not 'key = value'");
        }
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        apply_line(config, key, value);
    }
    return config;
}

void apply_override(RunConfig& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw UsageError("override must look like key=value, got '" + assignment + "'");
    }
    apply_line(config, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::string echo_config(const RunConfig& config) {
    std::string out;
    for (const auto& [key, handler] : key_table()) {
        out += key + " = " + handler.get(config) + "\n";
    }
    return out;
}

}  // namespace fdg
