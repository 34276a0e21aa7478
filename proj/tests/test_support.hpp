#ifndef FDG_TEST_SUPPORT_HPP
#define FDG_TEST_SUPPORT_HPP

// Shared test-only helpers: independent oracles and small fixture builders.
// Everything here stays independent of the implementation paths it checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <set>
#include <vector>

#include "fdg/encoder.hpp"
#include "fdg/episodes.hpp"
#include "fdg/evalkit.hpp"
#include "fdg/numerics.hpp"

namespace fdg::test {

// ---------------------------------------------------------------------------
// Brute-force verification-metrics oracle: enumerates every threshold and
// counts errors by scanning all trials, O(n^2) total.
// ---------------------------------------------------------------------------

struct OracleMetrics {
    std::vector<double> taus;  // ascending, with -inf / +inf sentinels
    std::vector<double> fars;
    std::vector<double> frrs;
    double eer = 0.0;
    double min_dcf = 0.0;
    double min_dcf_raw = 0.0;
    std::vector<double> frr_at_far;
};

inline OracleMetrics oracle_metrics(const std::vector<std::pair<double, bool>>& scored,
                                    const std::vector<double>& far_points,
                                    const DcfParams& dcf) {
    OracleMetrics out;
    std::set<double> distinct;
    std::size_t n_targets = 0, n_impostors = 0;
    for (const auto& [s, is_target] : scored) {
        distinct.insert(s);
        (is_target ? n_targets : n_impostors) += 1;
    }
    out.taus.push_back(-std::numeric_limits<double>::infinity());
    out.taus.insert(out.taus.end(), distinct.begin(), distinct.end());
    out.taus.push_back(std::numeric_limits<double>::infinity());

    for (double tau : out.taus) {
        std::size_t false_accepts = 0, false_rejects = 0;
        for (const auto& [s, is_target] : scored) {
            const bool accept = s >= tau;  // -inf accepts everything, +inf nothing
            if (std::isinf(tau)) {
                if (tau > 0) {
                    if (is_target) ++false_rejects;
                    continue;
                }
                if (!is_target) ++false_accepts;
                continue;
            }
            if (accept && !is_target) ++false_accepts;
            if (!accept && is_target) ++false_rejects;
        }
        out.fars.push_back(static_cast<double>(false_accepts) / static_cast<double>(n_impostors));
        out.frrs.push_back(static_cast<double>(false_rejects) / static_cast<double>(n_targets));
    }

    out.eer = 0.0;
    for (std::size_t i = 0; i + 1 < out.taus.size(); ++i) {
        const double d1 = out.fars[i] - out.frrs[i];
        const double d2 = out.fars[i + 1] - out.frrs[i + 1];
        if (d1 == 0.0) {
            out.eer = out.frrs[i];
            break;
        }
        if (d1 > 0.0 && d2 < 0.0) {
            const double t = d1 / (d1 - d2);
            out.eer = out.frrs[i] + t * (out.frrs[i + 1] - out.frrs[i]);
            break;
        }
    }

    double min_cost = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < out.taus.size(); ++i) {
        const double cost = dcf.cost_fr * out.frrs[i] * dcf.p_target +
                            dcf.cost_fa * out.fars[i] * (1.0 - dcf.p_target);
        min_cost = std::min(min_cost, cost);
    }
    out.min_dcf_raw = min_cost;
    out.min_dcf =
        min_cost / std::min(dcf.cost_fr * dcf.p_target, dcf.cost_fa * (1.0 - dcf.p_target));

    for (double requested : far_points) {
        double frr = 1.0;
        for (std::size_t i = 0; i < out.taus.size(); ++i) {
            if (out.fars[i] <= requested) {
                frr = out.frrs[i];
                break;
            }
        }
        out.frr_at_far.push_back(frr);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Adjusted Rand index between two labelings.
// ---------------------------------------------------------------------------

inline double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
    const auto comb2 = [](double n) { return n * (n - 1.0) / 2.0; };
    const int ka = *std::max_element(a.begin(), a.end()) + 1;
    const int kb = *std::max_element(b.begin(), b.end()) + 1;
    std::vector<std::vector<double>> table(static_cast<std::size_t>(ka),
                                           std::vector<double>(static_cast<std::size_t>(kb), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i) {
        table[static_cast<std::size_t>(a[i])][static_cast<std::size_t>(b[i])] += 1.0;
    }
    double sum_cells = 0.0, sum_rows = 0.0, sum_cols = 0.0;
    for (int i = 0; i < ka; ++i) {
        double row = 0.0;
        for (int j = 0; j < kb; ++j) {
            row += table[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            sum_cells += comb2(table[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
        }
        sum_rows += comb2(row);
    }
    for (int j = 0; j < kb; ++j) {
        double col = 0.0;
        for (int i = 0; i < ka; ++i) {
            col += table[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        }
        sum_cols += comb2(col);
    }
    const double total = comb2(static_cast<double>(a.size()));
    const double expected = sum_rows * sum_cols / total;
    const double max_index = 0.5 * (sum_rows + sum_cols);
    if (max_index == expected) return 1.0;
    return (sum_cells - expected) / (max_index - expected);
}

// ---------------------------------------------------------------------------
// Gradient comparison against the central-difference oracle.
// ---------------------------------------------------------------------------

inline double max_rel_error(std::span<const double> analytic, std::span<const double> numeric,
                            double floor = 1e-5) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
    }
    return worst;
}

// Checks analytic parameter gradients of `value_fn` at `params` against
// central differences over the flattened parameter vector.
inline double grad_check(const EncoderParams& params, const EncoderGrads& analytic,
                         const std::function<double(const EncoderParams&)>& value_fn,
                         double h = 1e-5) {
    const std::vector<double> flat = flatten_params(params);
    EncoderParams probe = params;
    const auto f = [&](std::span<const double> theta) {
        unflatten_params(probe, theta);
        return value_fn(probe);
    };
    const std::vector<double> numeric = finite_diff_grad(f, flat, h);
    return max_rel_error(flatten_grads(analytic), numeric);
}

// ---------------------------------------------------------------------------
// Fixtures.
// ---------------------------------------------------------------------------

inline EncoderConfig tiny_encoder(std::size_t input_channels = 3, std::size_t channels = 4,
                                  std::size_t kernel = 3, std::size_t embed_dim = 4) {
    EncoderConfig config;
    config.input_channels = input_channels;
    config.conv_layers = {{channels, kernel}};
    config.embed_dim = embed_dim;
    return config;
}

// Random dataset: `utts_per_speaker` utterances per speaker, domains assigned
// round-robin within each speaker, pseudo labels equal to domains.
inline Dataset toy_dataset(int speakers, int utts_per_speaker, int domains, int frames,
                           int channels, std::uint64_t seed) {
    Dataset dataset;
    Rng rng(seed);
    for (int s = 0; s < speakers; ++s) {
        for (int i = 0; i < utts_per_speaker; ++i) {
            Utterance utt;
            utt.features = Matrix(static_cast<std::size_t>(frames),
                                  static_cast<std::size_t>(channels));
            for (double& v : utt.features.data) v = rng.normal();
            utt.speaker = s;
            utt.domain = i % domains;
            utt.pseudo_domain = utt.domain;
            dataset.utterances.push_back(std::move(utt));
        }
    }
    return dataset;
}

}  // namespace fdg::test

#endif
