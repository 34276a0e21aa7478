#ifndef FDG_CONFIG_HPP
#define FDG_CONFIG_HPP

#include <string>
#include <vector>

#include "fdg/synthdata.hpp"
#include "fdg/trainer.hpp"

namespace fdg {

struct EvalOptions {
    std::string domains = "all";  // in | out | all
    std::vector<double> far_points = {0.10};
    std::string metric = "auto";  // auto | neg_sq_euclidean | cosine
    double dcf_cost_fr = 1.0;
    double dcf_cost_fa = 1.0;
    double dcf_p_target = 0.05;
};

// Union of generator, trainer and evaluation settings. Parsed from a
// key = value config file plus overrides; every key has a default and unknown
// keys are rejected. docs/FORMATS.md carries the annotated reference file.
struct RunConfig {
    GenConfig gen;
    TrainConfig train;
    EvalOptions eval;
};

// Applies `key = value` lines from a config file on top of defaults.
RunConfig parse_config_file(const std::string& path);

// Single override, same syntax as one config line ("train.lambda_dg=0.5").
void apply_override(RunConfig& config, const std::string& assignment);

// Sorted "key = value" lines reproducing the effective config.
std::string echo_config(const RunConfig& config);

}  // namespace fdg

#endif
