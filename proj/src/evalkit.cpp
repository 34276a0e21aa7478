#include "fdg/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>

#include "fdg/errors.hpp"
#include "fdg/threads.hpp"

namespace fdg {

std::vector<double> enroll(const EncoderParams& embedder, const Dataset& dataset,
                           std::span<const std::size_t> enrollment_utterances) {
    if (enrollment_utterances.empty()) throw UsageError("enroll: empty enrollment set");
    std::vector<double> reference(embedder.config.embed_dim, 0.0);
    for (std::size_t idx : enrollment_utterances) {
        const auto emb = forward(embedder, dataset.utterances.at(idx).features);
        for (std::size_t d = 0; d < reference.size(); ++d) reference[d] += emb[d];
    }
    const double inv = 1.0 / static_cast<double>(enrollment_utterances.size());
    for (double& v : reference) v *= inv;
    return reference;
}

double score(std::span<const double> reference, std::span<const double> test,
             ScoreMetric metric) {
    if (reference.size() != test.size()) throw UsageError("score: dimension mismatch");
    switch (metric) {
        case ScoreMetric::neg_sq_euclidean:
            return -sq_euclidean(reference, test);
        case ScoreMetric::cosine: {
            double dot = 0.0, na = 0.0, nb = 0.0;
            for (std::size_t i = 0; i < reference.size(); ++i) {
                dot += reference[i] * test[i];
                na += reference[i] * reference[i];
                nb += test[i] * test[i];
            }
            if (na <= 0.0 || nb <= 0.0) {
                throw NumericalError("score: zero-norm input under cosine");
            }
            return dot / (std::sqrt(na) * std::sqrt(nb));
        }
    }
    throw UsageError("score: unknown metric");
}

MetricsReport compute_metrics(std::span<const std::pair<double, bool>> scored_trials,
                              std::span<const double> far_points, const DcfParams& dcf,
                              EerMode eer_mode) {
    std::vector<double> targets, impostors;
    for (const auto& [s, is_target] : scored_trials) {
        if (!std::isfinite(s)) throw NumericalError("compute_metrics: non-finite score");
        (is_target ? targets : impostors).push_back(s);
    }
    if (targets.empty() || impostors.empty()) {
        throw UsageError("compute_metrics: need at least one target and one impostor trial");
    }
    std::sort(targets.begin(), targets.end());
    std::sort(impostors.begin(), impostors.end());

    // Thresholds: every distinct score, plus -inf and +inf.
    std::vector<double> taus;
    taus.push_back(-std::numeric_limits<double>::infinity());
    {
        std::vector<double> all;
        all.reserve(targets.size() + impostors.size());
        all.insert(all.end(), targets.begin(), targets.end());
        all.insert(all.end(), impostors.begin(), impostors.end());
        std::sort(all.begin(), all.end());
        all.erase(std::unique(all.begin(), all.end()), all.end());
        taus.insert(taus.end(), all.begin(), all.end());
    }
    taus.push_back(std::numeric_limits<double>::infinity());

    MetricsReport report;
    report.dcf = dcf;
    report.target_trials = targets.size();
    report.impostor_trials = impostors.size();

    const double n_tgt = static_cast<double>(targets.size());
    const double n_imp = static_cast<double>(impostors.size());
    report.roc.reserve(taus.size());
    for (double tau : taus) {
        RocPoint point;
        point.tau = tau;
        if (std::isinf(tau)) {
            point.far = tau < 0 ? 1.0 : 0.0;
            point.frr = tau < 0 ? 0.0 : 1.0;
        } else {
            // accept iff score >= tau
            const auto imp_below =
                std::lower_bound(impostors.begin(), impostors.end(), tau) - impostors.begin();
            const auto tgt_below =
                std::lower_bound(targets.begin(), targets.end(), tau) - targets.begin();
            point.far = (n_imp - static_cast<double>(imp_below)) / n_imp;
            point.frr = static_cast<double>(tgt_below) / n_tgt;
        }
        report.roc.push_back(point);
    }

    // EER: walk ascending tau; FAR - FRR is monotone from +1 down to -1, so it
    // either hits zero at an operating point or changes sign between two.
    report.eer = 0.0;
    if (eer_mode == EerMode::interpolated) {
        for (std::size_t i = 0; i + 1 < report.roc.size(); ++i) {
            const double d1 = report.roc[i].far - report.roc[i].frr;
            const double d2 = report.roc[i + 1].far - report.roc[i + 1].frr;
            if (d1 == 0.0) {
                report.eer = report.roc[i].frr;
                break;
            }
            if (d1 > 0.0 && d2 < 0.0) {
                const double t = d1 / (d1 - d2);
                report.eer = report.roc[i].frr + t * (report.roc[i + 1].frr - report.roc[i].frr);
                break;
            }
        }
    } else {
        double best_gap = std::numeric_limits<double>::infinity();
        for (const auto& point : report.roc) {
            const double gap = std::abs(point.far - point.frr);
            if (gap < best_gap) {
                best_gap = gap;
                report.eer = 0.5 * (point.far + point.frr);
            }
        }
    }

    // FRR at requested FAR: smallest tau whose FAR is within the budget.
    for (double requested : far_points) {
        double frr = 1.0;
        for (const auto& point : report.roc) {
            if (point.far <= requested) {
                frr = point.frr;
                break;
            }
        }
        report.frr_at_far.emplace_back(requested, frr);
    }

    // MinDCF over all operating points, raw and normalized.
    double min_cost = std::numeric_limits<double>::infinity();
    for (const auto& point : report.roc) {
        const double cost =
            dcf.cost_fr * point.frr * dcf.p_target + dcf.cost_fa * point.far * (1.0 - dcf.p_target);
        min_cost = std::min(min_cost, cost);
    }
    report.min_dcf_raw = min_cost;
    report.min_dcf = min_cost / std::min(dcf.cost_fr * dcf.p_target,
                                         dcf.cost_fa * (1.0 - dcf.p_target));
    return report;
}

TrialSet build_trials(std::span<const SpeakerSplit> splits, TrialMode mode, Rng& rng) {
    (void)mode;
    (void)rng;
    TrialSet set;
    set.splits.assign(splits.begin(), splits.end());
    for (const auto& split : splits) {
        if (split.enrollment.empty() || split.test.empty()) {
            throw ConfigError("build_trials: speaker " + std::to_string(split.speaker) +
                              " has an empty enrollment or test split");
        }
    }
    for (const auto& reference : splits) {
        for (const auto& other : splits) {
            const bool is_target = reference.speaker == other.speaker;
            for (std::size_t utt : other.test) {
                set.trials.push_back({reference.speaker, utt, is_target});
            }
        }
    }
    return set;
}

std::vector<std::pair<double, bool>> score_trials(const EncoderParams& embedder,
                                                  const Dataset& dataset, const TrialSet& trials,
                                                  ScoreMetric metric) {
    std::map<int, std::vector<double>> references;
    for (const auto& split : trials.splits) {
        references[split.speaker] = enroll(embedder, dataset, split.enrollment);
    }
    // Distinct test utterances get embedded once.
    std::map<std::size_t, std::vector<double>> test_embeddings;
    for (const auto& trial : trials.trials) test_embeddings[trial.test_utterance] = {};
    std::vector<std::size_t> utt_ids;
    utt_ids.reserve(test_embeddings.size());
    for (const auto& [utt, _] : test_embeddings) utt_ids.push_back(utt);
    parallel_for(utt_ids.size(), [&](std::size_t i) {
        test_embeddings[utt_ids[i]] = forward(embedder, dataset.utterances.at(utt_ids[i]).features);
    });

    std::vector<std::pair<double, bool>> scored;
    scored.reserve(trials.trials.size());
    for (const auto& trial : trials.trials) {
        const auto& reference = references.at(trial.reference_speaker);
        const auto& test = test_embeddings.at(trial.test_utterance);
        scored.emplace_back(score(reference, test, metric), trial.is_target);
    }
    return scored;
}

namespace {

std::string format_sig9(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace

void export_roc(const MetricsReport& report, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw FormatError("cannot open for writing: " + path);
    f << "tau,far,frr\n";
    for (const auto& point : report.roc) {
        f << format_sig9(point.tau) << ',' << format_sig9(point.far) << ','
          << format_sig9(point.frr) << '\n';
    }
    if (!f) throw FormatError("write failed: " + path);
}

void export_embeddings(const EncoderParams& embedder, const Dataset& dataset,
                       const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw FormatError("cannot open for writing: " + path);
    f << "utt_id,speaker,domain";
    for (std::size_t d = 0; d < embedder.config.embed_dim; ++d) f << ",e" << d;
    f << '\n';

    Matrix embeddings(dataset.utterances.size(), embedder.config.embed_dim);
    parallel_for(dataset.utterances.size(), [&](std::size_t i) {
        const auto emb = forward(embedder, dataset.utterances[i].features);
        std::copy(emb.begin(), emb.end(), embeddings.row(i));
    });
    char buf[64];
    for (std::size_t i = 0; i < dataset.utterances.size(); ++i) {
        f << i << ',' << dataset.utterances[i].speaker << ',' << dataset.utterances[i].domain;
        for (std::size_t d = 0; d < embeddings.cols; ++d) {
            std::snprintf(buf, sizeof(buf), "%.17g", embeddings(i, d));
            f << ',' << buf;
        }
        f << '\n';
    }
    if (!f) throw FormatError("write failed: " + path);
}

}  // namespace fdg
