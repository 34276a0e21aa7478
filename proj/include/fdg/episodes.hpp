#ifndef FDG_EPISODES_HPP
#define FDG_EPISODES_HPP

#include <cstddef>
#include <vector>

#include "fdg/numerics.hpp"

namespace fdg {

struct Utterance {
    Matrix features;  // T x F, one row per frame
    int speaker = 0;
    int domain = 0;         // true domain id
    int pseudo_domain = 0;  // cluster label; equals domain until reassigned
};

struct Dataset {
    std::vector<Utterance> utterances;

    int speaker_count() const;
    int domain_count() const;
    int pseudo_domain_count() const;
};

enum class EpisodeKind { aggregation, specific, mismatch };

struct EpisodeMember {
    std::size_t utterance = 0;  // index into Dataset::utterances
    int class_index = 0;        // 0..way-1
};

// A C-way K-shot task with Q queries per class. For specific episodes every
// member comes from pseudo-domain source_domain (= expert_domain); for
// mismatch episodes members come from source_domain while prototypes are
// supplied by the expert for expert_domain != source_domain.
struct Episode {
    EpisodeKind kind = EpisodeKind::aggregation;
    int source_domain = -1;
    int expert_domain = -1;
    int way = 0;
    int shot = 0;
    int queries = 0;
    std::vector<int> class_speakers;  // class index -> speaker id
    std::vector<EpisodeMember> support;
    std::vector<EpisodeMember> query;
};

// Caches per-speaker and per-(pseudo-domain, speaker) utterance indexes so the
// training loop does not rescan the dataset every iteration. Build a fresh
// sampler after pseudo labels change.
class EpisodeSampler {
public:
    EpisodeSampler(const Dataset& dataset, int way, int shot, int queries);

    Episode aggregation(Rng& rng) const;
    Episode specific(int pseudo_domain, Rng& rng) const;
    Episode mismatch(int domain_count, Rng& rng) const;

    int pseudo_domain_count() const { return static_cast<int>(domain_pools_.size()); }

private:
    struct Pool {
        // Speakers with at least shot+queries utterances, ascending id, and
        // their utterance lists (ascending index).
        std::vector<int> speakers;
        std::vector<std::vector<std::size_t>> utterances;  // parallel to speakers
    };

    Episode sample_from(const Pool& pool, Rng& rng, const char* what) const;

    int way_, shot_, queries_;
    Pool all_domains_;
    std::vector<Pool> domain_pools_;  // by pseudo-domain
};

// One-shot conveniences matching the sampler methods.
Episode sample_aggregation(const Dataset& dataset, int way, int shot, int queries, Rng& rng);
Episode sample_specific(const Dataset& dataset, int pseudo_domain, int way, int shot, int queries,
                        Rng& rng);
Episode sample_mismatch(const Dataset& dataset, int domain_count, int way, int shot, int queries,
                        Rng& rng);

}  // namespace fdg

#endif
