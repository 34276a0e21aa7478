#ifndef FDG_EVALKIT_HPP
#define FDG_EVALKIT_HPP

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fdg/encoder.hpp"
#include "fdg/episodes.hpp"

namespace fdg {

// Verification protocol: enroll a reference embedding per speaker, score
// target and impostor trials, sweep the accept threshold (accept iff
// score >= tau) and derive ROC, EER, FRR at requested FAR points and MinDCF.

enum class ScoreMetric { neg_sq_euclidean, cosine };

struct Trial {
    int reference_speaker = 0;
    std::size_t test_utterance = 0;
    bool is_target = false;
};

struct SpeakerSplit {
    int speaker = 0;
    std::vector<std::size_t> enrollment;  // utterance indices
    std::vector<std::size_t> test;
};

struct TrialSet {
    std::vector<SpeakerSplit> splits;
    std::vector<Trial> trials;
};

struct DcfParams {
    double cost_fr = 1.0;
    double cost_fa = 1.0;
    double p_target = 0.05;
};

struct RocPoint {
    double tau = 0.0;
    double far = 0.0;
    double frr = 0.0;
};

enum class EerMode {
    interpolated,  // linear interpolation between the sign-change operating points
    step           // operating point minimizing |FAR - FRR|, reporting their midpoint
};

struct MetricsReport {
    std::vector<RocPoint> roc;  // ascending tau, first entry -inf, last +inf
    double eer = 0.0;
    std::vector<std::pair<double, double>> frr_at_far;  // (requested FAR, achieved FRR)
    double min_dcf = 0.0;      // normalized by min(C_fr * P_t, C_fa * (1 - P_t))
    double min_dcf_raw = 0.0;
    DcfParams dcf;
    std::size_t target_trials = 0;
    std::size_t impostor_trials = 0;
};

// Arithmetic mean of the enrollment embeddings.
std::vector<double> enroll(const EncoderParams& embedder, const Dataset& dataset,
                           std::span<const std::size_t> enrollment_utterances);

// Higher means more similar for both metrics.
double score(std::span<const double> reference, std::span<const double> test, ScoreMetric metric);

MetricsReport compute_metrics(std::span<const std::pair<double, bool>> scored_trials,
                              std::span<const double> far_points, const DcfParams& dcf,
                              EerMode eer_mode = EerMode::interpolated);

enum class TrialMode { exhaustive };

// Exhaustive trials: each speaker against its own test utterances (targets)
// and against every other speaker's test utterances (impostors). rng is
// reserved for future subsampling modes and unused for exhaustive.
TrialSet build_trials(std::span<const SpeakerSplit> splits, TrialMode mode, Rng& rng);

// Scores every trial of the set with per-speaker references enrolled by the
// embedder; returns (score, is_target) pairs in trial order.
std::vector<std::pair<double, bool>> score_trials(const EncoderParams& embedder,
                                                  const Dataset& dataset, const TrialSet& trials,
                                                  ScoreMetric metric);

// CSV "tau,far,frr", one row per operating point, 9 significant digits.
void export_roc(const MetricsReport& report, const std::string& path);

// CSV "utt_id,speaker,domain,e0..e{d-1}", one row per utterance.
void export_embeddings(const EncoderParams& embedder, const Dataset& dataset,
                       const std::string& path);

}  // namespace fdg

#endif
