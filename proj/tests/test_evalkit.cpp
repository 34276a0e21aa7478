#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "fdg/errors.hpp"
#include "fdg/evalkit.hpp"
#include "test_support.hpp"

using namespace fdg;
using namespace fdg::test;

namespace {

std::vector<std::pair<double, bool>> make_trials(const std::vector<double>& targets,
                                                 const std::vector<double>& impostors) {
    std::vector<std::pair<double, bool>> scored;
    for (double s : targets) scored.emplace_back(s, true);
    for (double s : impostors) scored.emplace_back(s, false);
    return scored;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("enroll averages enrollment embeddings") {
    Rng rng(1);
    const EncoderParams params = init_params(tiny_encoder(), rng);
    Dataset dataset = toy_dataset(2, 4, 1, 6, 3, 2);

    const std::vector<std::size_t> one{0};
    const auto single = enroll(params, dataset, one);
    CHECK(single == forward(params, dataset.utterances[0].features));

    // identical utterances -> that embedding
    Dataset same = dataset;
    same.utterances[1].features = same.utterances[0].features;
    const std::vector<std::size_t> pair{0, 1};
    const auto averaged = enroll(params, same, pair);
    for (std::size_t d = 0; d < averaged.size(); ++d) {
        CHECK(averaged[d] == doctest::Approx(single[d]).epsilon(1e-15));
    }
    CHECK_THROWS_AS(enroll(params, dataset, std::vector<std::size_t>{}), UsageError);
}

TEST_CASE("enroll mean fixture on plain vectors") {
    // mean of (0,0) and (2,4) is (1,2); exercised through score symmetry
    std::vector<double> a{0.0, 0.0}, b{2.0, 4.0}, mean{1.0, 2.0};
    CHECK(score(mean, a, ScoreMetric::neg_sq_euclidean) ==
          score(mean, b, ScoreMetric::neg_sq_euclidean));
}

TEST_CASE("score fixtures") {
    std::vector<double> zero{0.0, 0.0}, p34{3.0, 4.0};
    CHECK(score(zero, zero, ScoreMetric::neg_sq_euclidean) == 0.0);
    CHECK(score(zero, p34, ScoreMetric::neg_sq_euclidean) == -25.0);
    std::vector<double> x{2.0, 0.0}, x2{5.0, 0.0};
    CHECK(score(x, x2, ScoreMetric::cosine) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS(score(zero, p34, ScoreMetric::cosine), NumericalError);
    CHECK_THROWS_AS(score(std::vector<double>{1.0}, p34, ScoreMetric::neg_sq_euclidean),
                    UsageError);
}

TEST_CASE("perfect separation gives zero EER and MinDCF") {
    const auto scored = make_trials({2.0, 3.0}, {0.0, 1.0});
    const auto report = compute_metrics(scored, std::vector<double>{0.1}, {});
    CHECK(report.eer == 0.0);
    CHECK(report.min_dcf == 0.0);
    CHECK(report.min_dcf_raw == 0.0);
    CHECK(report.frr_at_far[0].second == 0.0);
}

TEST_CASE("interleaved fixture has EER one third") {
    const auto scored = make_trials({0.9, 0.7, 0.4}, {0.5, 0.3, 0.1});
    const auto report = compute_metrics(scored, std::vector<double>{}, {});
    CHECK(report.eer == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    const auto oracle = oracle_metrics(scored, {}, {});
    CHECK(report.eer == oracle.eer);
}

TEST_CASE("metrics require both trial classes") {
    CHECK_THROWS_AS(compute_metrics(make_trials({1.0}, {}), std::vector<double>{}, {}),
                    UsageError);
    CHECK_THROWS_AS(compute_metrics(make_trials({}, {1.0}), std::vector<double>{}, {}),
                    UsageError);
}

TEST_CASE("metrics match the brute-force oracle exactly on random trial sets") {
    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n_targets = 1 + rng.uniform_int(100);
        const std::size_t n_impostors = 1 + rng.uniform_int(100);
        std::vector<std::pair<double, bool>> scored;
        const bool quantize = trial % 3 == 0;  // force score ties sometimes
        for (std::size_t i = 0; i < n_targets; ++i) {
            double s = rng.normal() + 1.0;
            if (quantize) s = std::round(s * 4.0) / 4.0;
            scored.emplace_back(s, true);
        }
        for (std::size_t i = 0; i < n_impostors; ++i) {
            double s = rng.normal();
            if (quantize) s = std::round(s * 4.0) / 4.0;
            scored.emplace_back(s, false);
        }
        const std::vector<double> far_points{0.1, 0.01};
        const DcfParams dcf{1.0, 1.0, 0.05};
        const auto report = compute_metrics(scored, far_points, dcf);
        const auto oracle = oracle_metrics(scored, far_points, dcf);

        REQUIRE(report.roc.size() == oracle.taus.size());
        for (std::size_t i = 0; i < oracle.taus.size(); ++i) {
            CHECK(report.roc[i].tau == oracle.taus[i]);
            CHECK(report.roc[i].far == oracle.fars[i]);
            CHECK(report.roc[i].frr == oracle.frrs[i]);
        }
        CHECK(report.eer == oracle.eer);
        CHECK(report.min_dcf == oracle.min_dcf);
        CHECK(report.min_dcf_raw == oracle.min_dcf_raw);
        for (std::size_t i = 0; i < far_points.size(); ++i) {
            CHECK(report.frr_at_far[i].second == oracle.frr_at_far[i]);
        }
    }
}

TEST_CASE("same-distribution scores give EER near one half") {
    Rng rng(9);
    std::vector<std::pair<double, bool>> scored;
    for (int i = 0; i < 5000; ++i) scored.emplace_back(rng.normal(), true);
    for (int i = 0; i < 5000; ++i) scored.emplace_back(rng.normal(), false);
    const auto report = compute_metrics(scored, std::vector<double>{}, {});
    CHECK(report.eer == doctest::Approx(0.5).epsilon(0.04));  // +- 0.02 absolute
    CHECK(std::abs(report.eer - 0.5) <= 0.02);
}

TEST_CASE("ROC is monotone in tau") {
    Rng rng(10);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::pair<double, bool>> scored;
        const std::size_t n = 2 + rng.uniform_int(60);
        for (std::size_t i = 0; i < n; ++i) scored.emplace_back(rng.normal(), true);
        for (std::size_t i = 0; i < n; ++i) scored.emplace_back(rng.normal() - 0.5, false);
        const auto report = compute_metrics(scored, std::vector<double>{}, {});
        for (std::size_t i = 1; i < report.roc.size(); ++i) {
            CHECK(report.roc[i].tau >= report.roc[i - 1].tau);
            CHECK(report.roc[i].far <= report.roc[i - 1].far);
            CHECK(report.roc[i].frr >= report.roc[i - 1].frr);
        }
        CHECK(report.min_dcf <= 1.0);
    }
}

TEST_CASE("negating scores mirrors the error rates") {
    Rng rng(11);
    std::vector<std::pair<double, bool>> scored;
    for (int i = 0; i < 40; ++i) scored.emplace_back(rng.normal() + 0.8, true);
    for (int i = 0; i < 60; ++i) scored.emplace_back(rng.normal(), false);
    const auto report = compute_metrics(scored, std::vector<double>{}, {});

    // with accept iff -s <= -tau, every operating point must reproduce
    const double n_tgt = 40.0, n_imp = 60.0;
    for (const auto& point : report.roc) {
        if (std::isinf(point.tau)) continue;
        std::size_t accepted_impostors = 0, rejected_targets = 0;
        for (const auto& [s, is_target] : scored) {
            const bool accept = -s <= -point.tau;
            if (accept && !is_target) ++accepted_impostors;
            if (!accept && is_target) ++rejected_targets;
        }
        CHECK(static_cast<double>(accepted_impostors) / n_imp == point.far);
        CHECK(static_cast<double>(rejected_targets) / n_tgt == point.frr);
    }
}

TEST_CASE("step-mode EER agrees with a direct scan") {
    Rng rng(12);
    std::vector<std::pair<double, bool>> scored;
    for (int i = 0; i < 25; ++i) scored.emplace_back(rng.normal() + 1.0, true);
    for (int i = 0; i < 35; ++i) scored.emplace_back(rng.normal(), false);
    const auto report = compute_metrics(scored, std::vector<double>{}, {}, EerMode::step);
    const auto oracle = oracle_metrics(scored, {}, {});
    double best_gap = std::numeric_limits<double>::infinity();
    double expected = 0.0;
    for (std::size_t i = 0; i < oracle.taus.size(); ++i) {
        const double gap = std::abs(oracle.fars[i] - oracle.frrs[i]);
        if (gap < best_gap) {
            best_gap = gap;
            expected = 0.5 * (oracle.fars[i] + oracle.frrs[i]);
        }
    }
    CHECK(report.eer == expected);
}

TEST_CASE("exhaustive trials count targets and impostors") {
    std::vector<SpeakerSplit> splits(2);
    splits[0].speaker = 0;
    splits[1].speaker = 1;
    for (std::size_t i = 0; i < 5; ++i) splits[0].enrollment.push_back(i);
    for (std::size_t i = 0; i < 5; ++i) splits[1].enrollment.push_back(100 + i);
    for (std::size_t i = 0; i < 35; ++i) splits[0].test.push_back(10 + i);
    for (std::size_t i = 0; i < 35; ++i) splits[1].test.push_back(110 + i);

    Rng rng(13);
    const TrialSet set = build_trials(splits, TrialMode::exhaustive, rng);
    std::size_t targets = 0, impostors = 0;
    for (const auto& trial : set.trials) (trial.is_target ? targets : impostors) += 1;
    CHECK(targets == 70);
    CHECK(impostors == 70);

    // a speaker's own enrollment utterances never appear among its trials
    for (const auto& trial : set.trials) {
        const auto& enrollment = trial.reference_speaker == 0 ? splits[0].enrollment
                                                              : splits[1].enrollment;
        for (std::size_t utt : enrollment) CHECK(trial.test_utterance != utt);
    }

    std::vector<SpeakerSplit> bad(1);
    bad[0].speaker = 0;
    bad[0].enrollment.push_back(0);
    CHECK_THROWS_AS(build_trials(bad, TrialMode::exhaustive, rng), ConfigError);
}

TEST_CASE("exhaustive trial counts scale as speakers x (speakers - 1) x tests") {
    std::vector<SpeakerSplit> splits(4);
    for (int s = 0; s < 4; ++s) {
        splits[static_cast<std::size_t>(s)].speaker = s;
        for (std::size_t i = 0; i < 5; ++i) {
            splits[static_cast<std::size_t>(s)].enrollment.push_back(
                static_cast<std::size_t>(s) * 1000 + i);
        }
        for (std::size_t i = 0; i < 35; ++i) {
            splits[static_cast<std::size_t>(s)].test.push_back(
                static_cast<std::size_t>(s) * 1000 + 10 + i);
        }
    }
    Rng rng(14);
    const TrialSet set = build_trials(splits, TrialMode::exhaustive, rng);
    std::size_t targets = 0, impostors = 0;
    for (const auto& trial : set.trials) (trial.is_target ? targets : impostors) += 1;
    CHECK(targets == 4 * 35);
    CHECK(impostors == 4 * 3 * 35);
}

TEST_CASE("roc export matches the operating-point count and is reproducible") {
    const auto scored = make_trials({0.9, 0.7, 0.4, 0.7}, {0.5, 0.3, 0.1});
    const auto report = compute_metrics(scored, std::vector<double>{}, {});
    // distinct scores: 0.9 0.7 0.4 0.5 0.3 0.1 -> 6 + 2 sentinels
    CHECK(report.roc.size() == 8);

    const auto dir = std::filesystem::temp_directory_path();
    const std::string path1 = (dir / "fdg_roc_a.csv").string();
    const std::string path2 = (dir / "fdg_roc_b.csv").string();
    export_roc(report, path1);
    export_roc(report, path2);
    const std::string text = slurp(path1);
    CHECK(text == slurp(path2));
    CHECK(text.substr(0, 12) == "tau,far,frr\n");
    std::size_t rows = 0;
    for (char c : text) rows += c == '\n' ? 1 : 0;
    CHECK(rows == report.roc.size() + 1);
    std::filesystem::remove(path1);
    std::filesystem::remove(path2);
}

TEST_CASE("embedding export shape") {
    Rng rng(15);
    const EncoderParams params = init_params(tiny_encoder(), rng);
    const Dataset dataset = toy_dataset(3, 2, 1, 5, 3, 16);
    const std::string path =
        (std::filesystem::temp_directory_path() / "fdg_emb_test.csv").string();
    export_embeddings(params, dataset, path);
    const std::string text = slurp(path);
    std::size_t rows = 0;
    for (char c : text) rows += c == '\n' ? 1 : 0;
    CHECK(rows == dataset.utterances.size() + 1);
    const std::string header = text.substr(0, text.find('\n'));
    CHECK(header == "utt_id,speaker,domain,e0,e1,e2,e3");
    std::filesystem::remove(path);
}
