#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fdg/errors.hpp"
#include "fdg/losses.hpp"
#include "test_support.hpp"

using namespace fdg;
using namespace fdg::test;

namespace {

// Hand-built embedded episode: one query at the origin, prototypes given.
detail::EmbeddedEpisode point_episode(const std::vector<std::vector<double>>& prototypes,
                                      int true_class,
                                      const std::vector<double>& query) {
    detail::EmbeddedEpisode ep;
    ep.way = static_cast<int>(prototypes.size());
    const std::size_t d = prototypes[0].size();
    ep.support = Matrix(prototypes.size(), d);
    for (std::size_t k = 0; k < prototypes.size(); ++k) {
        std::copy(prototypes[k].begin(), prototypes[k].end(), ep.support.row(k));
        ep.support_class.push_back(static_cast<int>(k));
    }
    ep.query = Matrix(1, d);
    std::copy(query.begin(), query.end(), ep.query.row(0));
    ep.query_class.push_back(true_class);
    return ep;
}

Episode make_episode(const Dataset& dataset, int way, int shot, int queries, std::uint64_t seed) {
    Rng rng(seed);
    return sample_aggregation(dataset, way, shot, queries, rng);
}

}  // namespace

TEST_CASE("prototypes are class means") {
    const EncoderConfig config = tiny_encoder();
    Rng rng(1);
    const EncoderParams params = init_params(config, rng);
    const Dataset dataset = toy_dataset(4, 6, 1, 5, 3, 2);
    const Episode ep = make_episode(dataset, 3, 2, 2, 3);
    const Prototypes protos = compute_prototypes(params, NetTag::aggregation(), dataset, ep);
    REQUIRE(protos.centroids.rows == 3);

    // recompute independently
    for (int k = 0; k < 3; ++k) {
        std::vector<double> mean(config.embed_dim, 0.0);
        int count = 0;
        for (const auto& member : ep.support) {
            if (member.class_index != k) continue;
            const auto emb = forward(params, dataset.utterances[member.utterance].features);
            for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += emb[i];
            ++count;
        }
        for (double& v : mean) v /= count;
        for (std::size_t i = 0; i < mean.size(); ++i) {
            CHECK(protos.centroids(static_cast<std::size_t>(k), i) ==
                  doctest::Approx(mean[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("single-shot prototype equals the embedding; duplicating support keeps prototypes") {
    detail::EmbeddedEpisode ep;
    ep.way = 2;
    ep.support = Matrix(2, 2);
    ep.support(0, 0) = 0.0;
    ep.support(0, 1) = 0.0;
    ep.support(1, 0) = 2.0;
    ep.support(1, 1) = 4.0;
    ep.support_class = {0, 1};
    ep.query = Matrix(1, 2);
    ep.query(0, 0) = 1.0;
    ep.query_class = {0};
    const auto single = detail::embedding_loss(ep, {}, false);
    CHECK(single.prototypes(0, 0) == 0.0);
    CHECK(single.prototypes(1, 1) == 4.0);

    // duplicate every support element: prototypes unchanged
    detail::EmbeddedEpisode doubled = ep;
    doubled.support = Matrix(4, 2);
    for (int r = 0; r < 2; ++r) {
        for (int c = 0; c < 2; ++c) {
            doubled.support(static_cast<std::size_t>(2 * r), static_cast<std::size_t>(c)) =
                ep.support(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
            doubled.support(static_cast<std::size_t>(2 * r + 1), static_cast<std::size_t>(c)) =
                ep.support(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
        }
    }
    doubled.support_class = {0, 0, 1, 1};
    const auto twice = detail::embedding_loss(doubled, {}, false);
    CHECK(twice.prototypes.data == single.prototypes.data);

    // mean fixture: (0,0) and (2,4) for one class -> (1,2)
    detail::EmbeddedEpisode mean_ep = ep;
    mean_ep.support_class = {0, 0};
    mean_ep.way = 1;
    mean_ep.query_class = {0};
    const auto merged = detail::embedding_loss(mean_ep, {}, false);
    CHECK(merged.prototypes(0, 0) == 1.0);
    CHECK(merged.prototypes(0, 1) == 2.0);
}

TEST_CASE("empty class is a usage error") {
    detail::EmbeddedEpisode ep;
    ep.way = 2;
    ep.support = Matrix(1, 2);
    ep.support_class = {0};  // class 1 missing
    ep.query = Matrix(1, 2);
    ep.query_class = {0};
    CHECK_THROWS_AS(detail::embedding_loss(ep, {}, false), UsageError);
}

TEST_CASE("equidistant two-way query loses ln 2") {
    const auto result = detail::embedding_loss(
        point_episode({{1.0, 0.0}, {-1.0, 0.0}}, 0, {0.0, 0.0}), {}, false);
    CHECK(result.value == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("squared-distance logit fixtures") {
    // d(q, c_true) = 0, d(q, c_other) = 1 -> loss = ln(1 + e^-1)
    const auto near = detail::embedding_loss(
        point_episode({{0.0, 0.0}, {0.0, 1.0}}, 0, {0.0, 0.0}), {}, false);
    CHECK(near.value == doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));
    CHECK(near.value == doctest::Approx(0.31326168751822286).epsilon(1e-10));

    // d = 1 vs 9 -> loss = ln(1 + e^-8)
    const auto far = detail::embedding_loss(
        point_episode({{1.0, 0.0}, {3.0, 0.0}}, 0, {0.0, 0.0}), {}, false);
    CHECK(far.value == doctest::Approx(std::log(1.0 + std::exp(-8.0))).epsilon(1e-12));
    CHECK(far.value == doctest::Approx(3.3540637289566238e-4).epsilon(1e-9));
}

TEST_CASE("probabilities normalize and the loss is non-negative") {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        detail::EmbeddedEpisode ep;
        ep.way = 3;
        ep.support = Matrix(6, 4);
        for (double& v : ep.support.data) v = rng.normal();
        ep.support_class = {0, 0, 1, 1, 2, 2};
        ep.query = Matrix(4, 4);
        for (double& v : ep.query.data) v = rng.normal();
        ep.query_class = {0, 1, 2, 0};
        const auto result = detail::embedding_loss(ep, {}, true);
        CHECK(result.value >= 0.0);
        for (std::size_t q = 0; q < ep.query.rows; ++q) {
            double total = 0.0;
            for (int k = 0; k < 3; ++k) total += result.query_probs(q, static_cast<std::size_t>(k));
            CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("loss vanishes at large margins") {
    // separation >= 30 in squared distance
    const auto result = detail::embedding_loss(
        point_episode({{0.0, 0.0}, {6.0, 0.0}}, 0, {0.0, 0.0}), {}, false);
    CHECK(result.value < 1e-6);
}

TEST_CASE("loss is invariant under class relabeling") {
    Rng rng(6);
    detail::EmbeddedEpisode ep;
    ep.way = 3;
    ep.support = Matrix(6, 3);
    for (double& v : ep.support.data) v = rng.normal();
    ep.support_class = {0, 0, 1, 1, 2, 2};
    ep.query = Matrix(3, 3);
    for (double& v : ep.query.data) v = rng.normal();
    ep.query_class = {0, 1, 2};
    const auto base = detail::embedding_loss(ep, {}, false);

    // permute labels 0->2, 1->0, 2->1
    const int perm[3] = {2, 0, 1};
    detail::EmbeddedEpisode relabeled = ep;
    for (int& c : relabeled.support_class) c = perm[c];
    for (int& c : relabeled.query_class) c = perm[c];
    const auto permuted = detail::embedding_loss(relabeled, {}, false);
    CHECK(std::abs(base.value - permuted.value) < 1e-12);
}

TEST_CASE("shifting all pairwise distances leaves probabilities unchanged") {
    // prototypes along distinct axes: squared distances to the origin query
    // are r_k^2, so r_k = sqrt(d_k) realizes any distance profile.
    const std::vector<double> base_dists{1.0, 2.5, 4.0};
    const double shift = 3.0;
    std::vector<std::vector<double>> protos_a, protos_b;
    for (std::size_t k = 0; k < 3; ++k) {
        std::vector<double> a(3, 0.0), b(3, 0.0);
        a[k] = std::sqrt(base_dists[k]);
        b[k] = std::sqrt(base_dists[k] + shift);
        protos_a.push_back(a);
        protos_b.push_back(b);
    }
    const auto ra = detail::embedding_loss(point_episode(protos_a, 1, {0, 0, 0}), {}, false);
    const auto rb = detail::embedding_loss(point_episode(protos_b, 1, {0, 0, 0}), {}, false);
    for (std::size_t k = 0; k < 3; ++k) {
        CHECK(ra.query_probs(0, k) == doctest::Approx(rb.query_probs(0, k)).epsilon(1e-12));
    }
}

TEST_CASE("angular fixture: parallel vs orthogonal prototype") {
    const auto result = detail::embedding_loss(
        point_episode({{2.0, 0.0}, {0.0, 3.0}}, 0, {5.0, 0.0}),
        LogitConfig{LogitKind::angular, 1.0, 0.0}, false);
    // logits (1, 0) -> loss = ln(1 + e^-1)
    CHECK(result.value == doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));
}

TEST_CASE("angular loss is scale invariant in the embeddings") {
    Rng rng(8);
    detail::EmbeddedEpisode ep;
    ep.way = 2;
    ep.support = Matrix(4, 3);
    for (double& v : ep.support.data) v = rng.normal();
    ep.support_class = {0, 0, 1, 1};
    ep.query = Matrix(2, 3);
    for (double& v : ep.query.data) v = rng.normal();
    ep.query_class = {0, 1};
    const LogitConfig logit{LogitKind::angular, 4.0, -1.0};
    const auto base = detail::embedding_loss(ep, logit, false);

    detail::EmbeddedEpisode scaled = ep;
    for (double& v : scaled.support.data) v *= 10.0;
    for (double& v : scaled.query.data) v *= 10.0;
    const auto big = detail::embedding_loss(scaled, logit, false);
    CHECK(base.value == doctest::Approx(big.value).epsilon(1e-12));
}

TEST_CASE("angular loss rejects zero-norm inputs and scale <= 0") {
    const Dataset dataset = toy_dataset(4, 6, 1, 5, 3, 9);
    Rng rng(10);
    const EncoderParams params = init_params(tiny_encoder(), rng);
    const Episode ep = make_episode(dataset, 2, 2, 2, 11);
    CHECK_THROWS_AS(angular_proto_loss(params, NetTag::aggregation(), dataset, ep, 0.0, 0.0),
                    UsageError);

    detail::EmbeddedEpisode zero;
    zero.way = 2;
    zero.support = Matrix(2, 2);  // zero prototypes
    zero.support_class = {0, 1};
    zero.query = Matrix(1, 2, 1.0);
    zero.query_class = {0};
    CHECK_THROWS_AS(detail::embedding_loss(zero, LogitConfig{LogitKind::angular, 1.0, 0.0}, false),
                    NumericalError);
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checks
// ---------------------------------------------------------------------------

TEST_CASE("proto_loss gradients match finite differences") {
    const Dataset dataset = toy_dataset(5, 8, 1, 6, 3, 20);
    for (int trial = 0; trial < 3; ++trial) {
        Rng init_rng(40 + static_cast<std::uint64_t>(trial));
        const EncoderParams params = init_params(tiny_encoder(), init_rng);
        const Episode ep = make_episode(dataset, 3, 2, 2, 50 + static_cast<std::uint64_t>(trial));

        const LossOutput out = proto_loss(params, NetTag::aggregation(), dataset, ep);
        REQUIRE(out.grads.size() == 1);
        const auto value = [&](const EncoderParams& p) {
            return proto_loss(p, NetTag::aggregation(), dataset, ep).value;
        };
        CHECK(grad_check(params, out.grads.at(NetTag::aggregation()), value) < 1e-4);
    }
}

TEST_CASE("proto_loss gradients match finite differences under plain distance") {
    const Dataset dataset = toy_dataset(4, 8, 1, 6, 3, 21);
    Rng init_rng(44);
    const EncoderParams params = init_params(tiny_encoder(), init_rng);
    const Episode ep = make_episode(dataset, 3, 2, 2, 55);
    LogitConfig logit;
    logit.kind = LogitKind::neg_euclidean;

    const LossOutput out = proto_loss(params, NetTag::aggregation(), dataset, ep, logit);
    const auto value = [&](const EncoderParams& p) {
        return proto_loss(p, NetTag::aggregation(), dataset, ep, logit).value;
    };
    CHECK(grad_check(params, out.grads.at(NetTag::aggregation()), value) < 1e-4);
}

TEST_CASE("dg_loss trains only the aggregation network and matches finite differences") {
    const Dataset dataset = toy_dataset(6, 16, 2, 6, 3, 22);
    Rng agg_rng(71), expert_rng(72), ep_rng(73);
    const EncoderParams agg = init_params(tiny_encoder(), agg_rng);
    const EncoderParams expert = init_params(tiny_encoder(), expert_rng);
    const Episode ep = sample_mismatch(dataset, 2, 3, 2, 2, ep_rng);

    const LossOutput out = dg_loss(agg, expert, dataset, ep);
    CHECK(out.grads.size() == 1);
    CHECK(out.grads.count(NetTag::aggregation()) == 1);
    for (int j = 0; j < 4; ++j) CHECK(out.grads.count(NetTag::expert(j)) == 0);

    const auto value = [&](const EncoderParams& p) { return dg_loss(p, expert, dataset, ep).value; };
    CHECK(grad_check(agg, out.grads.at(NetTag::aggregation()), value) < 1e-4);
}

TEST_CASE("dg_loss rejects non-mismatch episodes") {
    const Dataset dataset = toy_dataset(5, 8, 2, 6, 3, 23);
    Rng rng(81);
    const EncoderParams agg = init_params(tiny_encoder(), rng);
    const Episode ep = make_episode(dataset, 3, 2, 2, 82);
    CHECK_THROWS_AS(dg_loss(agg, agg, dataset, ep), UsageError);
}

TEST_CASE("dg_loss with identical networks equals proto_loss on the same episode") {
    const Dataset dataset = toy_dataset(6, 16, 2, 6, 3, 24);
    Rng rng(83), ep_rng(84);
    const EncoderParams params = init_params(tiny_encoder(), rng);
    const Episode ep = sample_mismatch(dataset, 2, 3, 2, 2, ep_rng);
    const double dg = dg_loss(params, params, dataset, ep).value;
    const double proto = proto_loss(params, NetTag::aggregation(), dataset, ep).value;
    CHECK(dg == doctest::Approx(proto).epsilon(1e-15));
}

TEST_CASE("combined_loss is affine in lambda and degenerates at lambda 0") {
    const Dataset dataset = toy_dataset(6, 16, 2, 6, 3, 25);
    Rng agg_rng(91), e0_rng(92), e1_rng(93), ep_rng(94), mm_rng(95);
    const EncoderParams agg = init_params(tiny_encoder(), agg_rng);
    std::vector<EncoderParams> experts;
    experts.push_back(init_params(tiny_encoder(), e0_rng));
    experts.push_back(init_params(tiny_encoder(), e1_rng));
    const Episode agg_ep = sample_aggregation(dataset, 3, 2, 2, ep_rng);
    const Episode mm_ep = sample_mismatch(dataset, 2, 3, 2, 2, mm_rng);

    const double l_agg = proto_loss(agg, NetTag::aggregation(), dataset, agg_ep).value;
    const LossOutput at0 = combined_loss(agg, experts, dataset, agg_ep, mm_ep, 0.0);
    CHECK(at0.value == l_agg);

    const LossOutput at05 = combined_loss(agg, experts, dataset, agg_ep, mm_ep, 0.5);
    const LossOutput at1 = combined_loss(agg, experts, dataset, agg_ep, mm_ep, 1.0);
    // affine: value(0.5) = value(0) + 0.5 * (value(1) - value(0))
    CHECK(at05.value ==
          doctest::Approx(at0.value + 0.5 * (at1.value - at0.value)).epsilon(1e-12));
    CHECK(at05.value_agg == l_agg);
    CHECK_THROWS_AS(combined_loss(agg, experts, dataset, agg_ep, mm_ep, -0.1), UsageError);
}

TEST_CASE("combined_loss gradients match finite differences") {
    const Dataset dataset = toy_dataset(6, 16, 2, 6, 3, 26);
    Rng agg_rng(96), e0_rng(97), e1_rng(98), ep_rng(99), mm_rng(100);
    const EncoderParams agg = init_params(tiny_encoder(), agg_rng);
    std::vector<EncoderParams> experts;
    experts.push_back(init_params(tiny_encoder(), e0_rng));
    experts.push_back(init_params(tiny_encoder(), e1_rng));
    const Episode agg_ep = sample_aggregation(dataset, 3, 2, 2, ep_rng);
    const Episode mm_ep = sample_mismatch(dataset, 2, 3, 2, 2, mm_rng);
    const double lambda = 0.8;

    const LossOutput out = combined_loss(agg, experts, dataset, agg_ep, mm_ep, lambda);
    const auto value = [&](const EncoderParams& p) {
        return combined_loss(p, experts, dataset, agg_ep, mm_ep, lambda).value;
    };
    CHECK(grad_check(agg, out.grads.at(NetTag::aggregation()), value) < 1e-4);
}

TEST_CASE("angular_proto_loss gradients including the head match finite differences") {
    const Dataset dataset = toy_dataset(5, 8, 1, 6, 3, 27);
    Rng init_rng(101);
    const EncoderParams params = init_params(tiny_encoder(), init_rng);
    const Episode ep = make_episode(dataset, 3, 2, 2, 102);
    const double scale = 3.0, offset = -1.0;

    const LossOutput out =
        angular_proto_loss(params, NetTag::aggregation(), dataset, ep, scale, offset);
    REQUIRE(out.has_head_grads);

    const auto value = [&](const EncoderParams& p) {
        return angular_proto_loss(p, NetTag::aggregation(), dataset, ep, scale, offset).value;
    };
    CHECK(grad_check(params, out.grads.at(NetTag::aggregation()), value) < 1e-4);

    // head scalars via direct central differences
    const double h = 1e-5;
    const double up_w =
        angular_proto_loss(params, NetTag::aggregation(), dataset, ep, scale + h, offset).value;
    const double dn_w =
        angular_proto_loss(params, NetTag::aggregation(), dataset, ep, scale - h, offset).value;
    const double fd_w = (up_w - dn_w) / (2 * h);
    CHECK(max_rel_error(std::vector<double>{out.scale_grad}, std::vector<double>{fd_w}) < 1e-4);

    const double up_b =
        angular_proto_loss(params, NetTag::aggregation(), dataset, ep, scale, offset + h).value;
    const double dn_b =
        angular_proto_loss(params, NetTag::aggregation(), dataset, ep, scale, offset - h).value;
    const double fd_b = (up_b - dn_b) / (2 * h);
    // the offset shifts every logit equally, so its gradient is zero up to
    // the rounding residue of sum(p_k) - 1
    CHECK(std::abs(out.offset_grad) < 1e-12);
    CHECK(std::abs(fd_b) < 1e-7);
}
