#include "fdg/episodes.hpp"

#include <algorithm>
#include <map>
#include <string>

#include "fdg/errors.hpp"

namespace fdg {

namespace {

int max_plus_one(const std::vector<Utterance>& utterances, int Utterance::* field) {
    int m = -1;
    for (const auto& utt : utterances) m = std::max(m, utt.*field);
    return m + 1;
}

}  // namespace

int Dataset::speaker_count() const { return max_plus_one(utterances, &Utterance::speaker); }
int Dataset::domain_count() const { return max_plus_one(utterances, &Utterance::domain); }
int Dataset::pseudo_domain_count() const {
    return max_plus_one(utterances, &Utterance::pseudo_domain);
}

EpisodeSampler::EpisodeSampler(const Dataset& dataset, int way, int shot, int queries)
    : way_(way), shot_(shot), queries_(queries) {
    if (way < 2 || shot < 1 || queries < 1) {
        throw ConfigError("episode sampler: need way >= 2, shot >= 1, queries >= 1");
    }
    const std::size_t need = static_cast<std::size_t>(shot + queries);

    // speaker -> utterances, and (pseudo-domain, speaker) -> utterances
    std::map<int, std::vector<std::size_t>> by_speaker;
    std::map<std::pair<int, int>, std::vector<std::size_t>> by_domain_speaker;
    int domains = 0;
    for (std::size_t i = 0; i < dataset.utterances.size(); ++i) {
        const Utterance& utt = dataset.utterances[i];
        by_speaker[utt.speaker].push_back(i);
        by_domain_speaker[{utt.pseudo_domain, utt.speaker}].push_back(i);
        domains = std::max(domains, utt.pseudo_domain + 1);
    }

    for (const auto& [speaker, utts] : by_speaker) {
        if (utts.size() < need) continue;
        all_domains_.speakers.push_back(speaker);
        all_domains_.utterances.push_back(utts);
    }
    domain_pools_.resize(static_cast<std::size_t>(domains));
    for (const auto& [key, utts] : by_domain_speaker) {
        if (utts.size() < need) continue;
        Pool& pool = domain_pools_[static_cast<std::size_t>(key.first)];
        pool.speakers.push_back(key.second);
        pool.utterances.push_back(utts);
    }
}

Episode EpisodeSampler::sample_from(const Pool& pool, Rng& rng, const char* what) const {
    if (pool.speakers.size() < static_cast<std::size_t>(way_)) {
        throw ConfigError(std::string(what) + ": only " + std::to_string(pool.speakers.size()) +
                          " eligible speakers for " + std::to_string(way_) + "-way episodes");
    }
    Episode ep;
    ep.way = way_;
    ep.shot = shot_;
    ep.queries = queries_;

    const auto picked = rng.sample_indices(pool.speakers.size(), static_cast<std::size_t>(way_));
    for (int c = 0; c < way_; ++c) {
        const std::size_t s = picked[static_cast<std::size_t>(c)];
        ep.class_speakers.push_back(pool.speakers[s]);
        const auto& utts = pool.utterances[s];
        const auto chosen =
            rng.sample_indices(utts.size(), static_cast<std::size_t>(shot_ + queries_));
        for (int k = 0; k < shot_; ++k) {
            ep.support.push_back({utts[chosen[static_cast<std::size_t>(k)]], c});
        }
        for (int q = 0; q < queries_; ++q) {
            ep.query.push_back({utts[chosen[static_cast<std::size_t>(shot_ + q)]], c});
        }
    }
    return ep;
}

Episode EpisodeSampler::aggregation(Rng& rng) const {
    Episode ep = sample_from(all_domains_, rng, "aggregation episode");
    ep.kind = EpisodeKind::aggregation;
    return ep;
}

Episode EpisodeSampler::specific(int pseudo_domain, Rng& rng) const {
    if (pseudo_domain < 0 || pseudo_domain >= pseudo_domain_count()) {
        throw ConfigError("specific episode: pseudo-domain out of range");
    }
    Episode ep = sample_from(domain_pools_[static_cast<std::size_t>(pseudo_domain)], rng,
                             "specific episode");
    ep.kind = EpisodeKind::specific;
    ep.source_domain = pseudo_domain;
    ep.expert_domain = pseudo_domain;
    return ep;
}

Episode EpisodeSampler::mismatch(int domain_count, Rng& rng) const {
    if (domain_count < 2) throw ConfigError("mismatch episode: need at least 2 domains");
    const int u = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(domain_count)));
    int j = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(domain_count - 1)));
    if (j >= u) ++j;
    if (u >= pseudo_domain_count()) {
        throw ConfigError("mismatch episode: pseudo-domain out of range");
    }
    Episode ep = sample_from(domain_pools_[static_cast<std::size_t>(u)], rng, "mismatch episode");
    ep.kind = EpisodeKind::mismatch;
    ep.source_domain = u;
    ep.expert_domain = j;
    return ep;
}

Episode sample_aggregation(const Dataset& dataset, int way, int shot, int queries, Rng& rng) {
    return EpisodeSampler(dataset, way, shot, queries).aggregation(rng);
}

Episode sample_specific(const Dataset& dataset, int pseudo_domain, int way, int shot, int queries,
                        Rng& rng) {
    return EpisodeSampler(dataset, way, shot, queries).specific(pseudo_domain, rng);
}

Episode sample_mismatch(const Dataset& dataset, int domain_count, int way, int shot, int queries,
                        Rng& rng) {
    return EpisodeSampler(dataset, way, shot, queries).mismatch(domain_count, rng);
}

}  // namespace fdg
