#ifndef FDG_SYNTHDATA_HPP
#define FDG_SYNTHDATA_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "fdg/episodes.hpp"
#include "fdg/evalkit.hpp"

namespace fdg {

// Seeded generator of multi-speaker, multi-domain sequence data. Speakers are
// latent identity vectors; utterances are frame sequences mixed from a
// per-utterance latent; domains are per-channel affine transforms plus
// colored noise with a fixed per-domain basis. Out-domains draw from their
// own (harsher) ranges and independent bases, so they are unseen styles.

struct GenConfig {
    int latent_dim = 8;
    int channels = 8;   // feature channels F
    int frames = 50;    // frames T per utterance
    int train_speakers = 50;
    int test_speakers = 20;
    int utterances_per_speaker = 45;
    double within_speaker_std = 0.3;
    double frame_noise_std = 0.1;
    int source_domains = 4;
    int out_domains = 3;
    // Source-domain severity: per-channel scale/offset ranges and the linear
    // signal-to-noise ratio of the colored noise (snr <= 0 disables noise).
    double scale_lo = 0.85;
    double scale_hi = 1.15;
    double offset_lo = -0.3;
    double offset_hi = 0.3;
    double noise_snr = 4.0;
    // Out-domain severity, intentionally harsher and disjoint from source.
    double out_scale_lo = 0.7;
    double out_scale_hi = 1.4;
    double out_offset_lo = -0.6;
    double out_offset_hi = 0.6;
    double out_noise_snr = 1.0;
    int noise_rank = 4;  // columns of each domain's noise basis
    int enroll_per_speaker = 5;
    int test_per_speaker = 35;
    std::uint64_t seed = 1;

    void validate() const;
    bool operator==(const GenConfig&) const = default;
};

enum class UttRole { train, enroll, test, spare };

struct SynthDataset {
    GenConfig config;
    Dataset data;
    std::vector<UttRole> roles;      // parallel to data.utterances
    std::vector<int> base_index;     // which base utterance each record renders

    // Speakers 0..train_speakers-1 are training speakers; the rest are test
    // speakers. Domains 0..source_domains-1 are source; the rest are out.
    int train_speaker_count() const { return config.train_speakers; }
    int test_speaker_count() const { return config.test_speakers; }
    int source_domain_count() const { return config.source_domains; }
    int out_domain_count() const { return config.out_domains; }

    bool is_test_speaker(int speaker) const { return speaker >= config.train_speakers; }
    bool is_out_domain(int domain) const { return domain >= config.source_domains; }

    // Training-speaker records only; speaker and domain ids stay dense.
    Dataset train_view() const;

    // Enrollment/test utterance indices of every test speaker within one
    // domain, ordered by speaker id.
    std::vector<SpeakerSplit> test_splits(int domain) const;
};

SynthDataset generate(const GenConfig& config);

// Dataset format v1 (magic "FDGD"): JSON manifest with the config echo,
// speaker/domain tables and per-utterance records, then a blob of
// little-endian f32 frames. docs/FORMATS.md has the exact layout.
void save_dataset(const SynthDataset& dataset, const std::string& path);
SynthDataset load_dataset(const std::string& path);

}  // namespace fdg

#endif
