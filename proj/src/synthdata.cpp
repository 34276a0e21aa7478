#include "fdg/synthdata.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <map>

#include "fdg/errors.hpp"
#include "fdg/serial.hpp"

#include <json.hpp>

namespace fdg {

void GenConfig::validate() const {
    if (latent_dim < 1 || channels < 1 || frames < 1) {
        throw ConfigError("gen: dimensions must be >= 1");
    }
    if (train_speakers < 1 || test_speakers < 1 || utterances_per_speaker < 1) {
        throw ConfigError("gen: speaker and utterance counts must be >= 1");
    }
    if (within_speaker_std <= 0.0 || frame_noise_std <= 0.0) {
        throw ConfigError("gen: stds must be > 0");
    }
    if (source_domains < 1 || out_domains < 0) throw ConfigError("gen: bad domain counts");
    if (scale_lo > scale_hi || offset_lo > offset_hi || out_scale_lo > out_scale_hi ||
        out_offset_lo > out_offset_hi) {
        throw ConfigError("gen: empty range");
    }
    if (noise_rank < 1) throw ConfigError("gen: noise_rank must be >= 1");
    if (enroll_per_speaker < 1 || test_per_speaker < 1 ||
        enroll_per_speaker + test_per_speaker > utterances_per_speaker) {
        throw ConfigError("gen: enrollment/test split exceeds utterances per speaker");
    }
}

namespace {

struct DomainTransform {
    std::vector<double> scale;   // per channel
    std::vector<double> offset;  // per channel
    Matrix basis;                // channels x noise_rank
    double snr = 0.0;            // linear; <= 0 disables noise
};

DomainTransform draw_domain(Rng rng, const GenConfig& config, bool out_domain) {
    DomainTransform tr;
    const int F = config.channels;
    const double lo = out_domain ? config.out_scale_lo : config.scale_lo;
    const double hi = out_domain ? config.out_scale_hi : config.scale_hi;
    const double off_lo = out_domain ? config.out_offset_lo : config.offset_lo;
    const double off_hi = out_domain ? config.out_offset_hi : config.offset_hi;
    tr.snr = out_domain ? config.out_noise_snr : config.noise_snr;
    tr.scale.resize(static_cast<std::size_t>(F));
    tr.offset.resize(static_cast<std::size_t>(F));
    for (int f = 0; f < F; ++f) tr.scale[static_cast<std::size_t>(f)] = rng.uniform(lo, hi);
    for (int f = 0; f < F; ++f) tr.offset[static_cast<std::size_t>(f)] = rng.uniform(off_lo, off_hi);
    tr.basis = Matrix(static_cast<std::size_t>(F), static_cast<std::size_t>(config.noise_rank));
    const double inv_sqrt_rank = 1.0 / std::sqrt(static_cast<double>(config.noise_rank));
    for (double& v : tr.basis.data) v = rng.normal() * inv_sqrt_rank;
    return tr;
}

// Affine transform plus colored noise scaled to the domain's SNR, rounded
// through f32 so in-memory data equals what a save/load round trip yields.
Matrix render(const Matrix& clean, const DomainTransform& tr, Rng rng) {
    const std::size_t T = clean.rows;
    const std::size_t F = clean.cols;
    Matrix out(T, F);
    double signal_power = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t f = 0; f < F; ++f) {
            const double y = tr.scale[f] * clean(t, f) + tr.offset[f];
            out(t, f) = y;
            signal_power += y * y;
        }
    }
    signal_power /= static_cast<double>(T * F);

    if (tr.snr > 0.0) {
        const std::size_t rank = tr.basis.cols;
        Matrix noise(T, F);
        std::vector<double> eps(rank);
        double noise_power = 0.0;
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t r = 0; r < rank; ++r) eps[r] = rng.normal();
            for (std::size_t f = 0; f < F; ++f) {
                double v = 0.0;
                const double* b = tr.basis.row(f);
                for (std::size_t r = 0; r < rank; ++r) v += b[r] * eps[r];
                noise(t, f) = v;
                noise_power += v * v;
            }
        }
        noise_power /= static_cast<double>(T * F);
        if (noise_power > 0.0 && signal_power > 0.0) {
            const double gain = std::sqrt(signal_power / (tr.snr * noise_power));
            for (std::size_t i = 0; i < out.data.size(); ++i) {
                out.data[i] += gain * noise.data[i];
            }
        }
    }
    for (double& v : out.data) v = static_cast<double>(static_cast<float>(v));
    return out;
}

}  // namespace

Dataset SynthDataset::train_view() const {
    Dataset view;
    for (std::size_t i = 0; i < data.utterances.size(); ++i) {
        if (roles[i] == UttRole::train) view.utterances.push_back(data.utterances[i]);
    }
    return view;
}

std::vector<SpeakerSplit> SynthDataset::test_splits(int domain) const {
    std::map<int, SpeakerSplit> by_speaker;
    for (std::size_t i = 0; i < data.utterances.size(); ++i) {
        const Utterance& utt = data.utterances[i];
        if (utt.domain != domain || !is_test_speaker(utt.speaker)) continue;
        auto& split = by_speaker[utt.speaker];
        split.speaker = utt.speaker;
        if (roles[i] == UttRole::enroll) split.enrollment.push_back(i);
        if (roles[i] == UttRole::test) split.test.push_back(i);
    }
    std::vector<SpeakerSplit> splits;
    splits.reserve(by_speaker.size());
    for (auto& [_, split] : by_speaker) splits.push_back(std::move(split));
    return splits;
}

SynthDataset generate(const GenConfig& config) {
    config.validate();
    const Rng root(config.seed);

    // Mixing matrix shared by every utterance.
    Matrix mix(static_cast<std::size_t>(config.channels), static_cast<std::size_t>(config.latent_dim));
    {
        Rng rng = root.split("mixing");
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(config.latent_dim));
        for (double& v : mix.data) v = rng.normal() * inv_sqrt;
    }

    const int total_domains = config.source_domains + config.out_domains;
    std::vector<DomainTransform> domains;
    domains.reserve(static_cast<std::size_t>(total_domains));
    for (int d = 0; d < config.source_domains; ++d) {
        domains.push_back(draw_domain(root.split("domain/src/" + std::to_string(d)), config, false));
    }
    for (int o = 0; o < config.out_domains; ++o) {
        domains.push_back(draw_domain(root.split("domain/out/" + std::to_string(o)), config, true));
    }

    SynthDataset dataset;
    dataset.config = config;

    const int total_speakers = config.train_speakers + config.test_speakers;
    for (int s = 0; s < total_speakers; ++s) {
        const bool test_speaker = s >= config.train_speakers;
        std::vector<double> identity(static_cast<std::size_t>(config.latent_dim));
        {
            Rng rng = root.split("speaker/" + std::to_string(s));
            for (double& v : identity) v = rng.normal();
        }
        for (int i = 0; i < config.utterances_per_speaker; ++i) {
            Matrix clean(static_cast<std::size_t>(config.frames),
                         static_cast<std::size_t>(config.channels));
            {
                Rng rng = root.split("utt/" + std::to_string(s) + "/" + std::to_string(i));
                std::vector<double> latent(identity);
                for (double& v : latent) v += config.within_speaker_std * rng.normal();
                for (int t = 0; t < config.frames; ++t) {
                    for (int f = 0; f < config.channels; ++f) {
                        double v = 0.0;
                        const double* m = mix.row(static_cast<std::size_t>(f));
                        for (int d = 0; d < config.latent_dim; ++d) {
                            v += m[d] * latent[static_cast<std::size_t>(d)];
                        }
                        clean(static_cast<std::size_t>(t), static_cast<std::size_t>(f)) =
                            v + config.frame_noise_std * rng.normal();
                    }
                }
            }

            UttRole role = UttRole::train;
            if (test_speaker) {
                if (i < config.enroll_per_speaker) {
                    role = UttRole::enroll;
                } else if (i < config.enroll_per_speaker + config.test_per_speaker) {
                    role = UttRole::test;
                } else {
                    role = UttRole::spare;
                }
            }
            const int domain_count = test_speaker ? total_domains : config.source_domains;
            for (int g = 0; g < domain_count; ++g) {
                Rng rng = root.split("render/" + std::to_string(s) + "/" + std::to_string(i) +
                                     "/" + std::to_string(g));
                Utterance utt;
                utt.features = render(clean, domains[static_cast<std::size_t>(g)], rng);
                utt.speaker = s;
                utt.domain = g;
                utt.pseudo_domain = g;  // until clustering reassigns
                dataset.data.utterances.push_back(std::move(utt));
                dataset.roles.push_back(role);
                dataset.base_index.push_back(i);
            }
        }
    }
    return dataset;
}

namespace {

const char* role_name(UttRole role) {
    switch (role) {
        case UttRole::train: return "train";
        case UttRole::enroll: return "enroll";
        case UttRole::test: return "test";
        case UttRole::spare: return "spare";
    }
    return "train";
}

UttRole role_from(const std::string& name) {
    if (name == "train") return UttRole::train;
    if (name == "enroll") return UttRole::enroll;
    if (name == "test") return UttRole::test;
    if (name == "spare") return UttRole::spare;
    throw FormatError("dataset manifest: unknown role '" + name + "'");
}

nlohmann::json config_to_json(const GenConfig& c) {
    return {{"latent_dim", c.latent_dim},
            {"channels", c.channels},
            {"frames", c.frames},
            {"train_speakers", c.train_speakers},
            {"test_speakers", c.test_speakers},
            {"utterances_per_speaker", c.utterances_per_speaker},
            {"within_speaker_std", c.within_speaker_std},
            {"frame_noise_std", c.frame_noise_std},
            {"source_domains", c.source_domains},
            {"out_domains", c.out_domains},
            {"scale_lo", c.scale_lo},
            {"scale_hi", c.scale_hi},
            {"offset_lo", c.offset_lo},
            {"offset_hi", c.offset_hi},
            {"noise_snr", c.noise_snr},
            {"out_scale_lo", c.out_scale_lo},
            {"out_scale_hi", c.out_scale_hi},
            {"out_offset_lo", c.out_offset_lo},
            {"out_offset_hi", c.out_offset_hi},
            {"out_noise_snr", c.out_noise_snr},
            {"noise_rank", c.noise_rank},
            {"enroll_per_speaker", c.enroll_per_speaker},
            {"test_per_speaker", c.test_per_speaker},
            {"seed", c.seed}};
}

GenConfig config_from_json(const nlohmann::json& j) {
    GenConfig c;
    try {
        c.latent_dim = j.at("latent_dim").get<int>();
        c.channels = j.at("channels").get<int>();
        c.frames = j.at("frames").get<int>();
        c.train_speakers = j.at("train_speakers").get<int>();
        c.test_speakers = j.at("test_speakers").get<int>();
        c.utterances_per_speaker = j.at("utterances_per_speaker").get<int>();
        c.within_speaker_std = j.at("within_speaker_std").get<double>();
        c.frame_noise_std = j.at("frame_noise_std").get<double>();
        c.source_domains = j.at("source_domains").get<int>();
        c.out_domains = j.at("out_domains").get<int>();
        c.scale_lo = j.at("scale_lo").get<double>();
        c.scale_hi = j.at("scale_hi").get<double>();
        c.offset_lo = j.at("offset_lo").get<double>();
        c.offset_hi = j.at("offset_hi").get<double>();
        c.noise_snr = j.at("noise_snr").get<double>();
        c.out_scale_lo = j.at("out_scale_lo").get<double>();
        c.out_scale_hi = j.at("out_scale_hi").get<double>();
        c.out_offset_lo = j.at("out_offset_lo").get<double>();
        c.out_offset_hi = j.at("out_offset_hi").get<double>();
        c.out_noise_snr = j.at("out_noise_snr").get<double>();
        c.noise_rank = j.at("noise_rank").get<int>();
        c.enroll_per_speaker = j.at("enroll_per_speaker").get<int>();
        c.test_per_speaker = j.at("test_per_speaker").get<int>();
        c.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("dataset manifest config: ") + e.what());
    }
    return c;
}

std::uint32_t read_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

void save_dataset(const SynthDataset& dataset, const std::string& path) {
    nlohmann::json manifest;
    manifest["config"] = config_to_json(dataset.config);

    nlohmann::json speakers = nlohmann::json::array();
    const int total_speakers = dataset.config.train_speakers + dataset.config.test_speakers;
    for (int s = 0; s < total_speakers; ++s) {
        speakers.push_back({{"id", s}, {"split", s < dataset.config.train_speakers ? "train" : "test"}});
    }
    manifest["speakers"] = speakers;

    nlohmann::json domains = nlohmann::json::array();
    const int total_domains = dataset.config.source_domains + dataset.config.out_domains;
    for (int d = 0; d < total_domains; ++d) {
        domains.push_back({{"id", d}, {"group", d < dataset.config.source_domains ? "source" : "out"}});
    }
    manifest["domains"] = domains;

    nlohmann::json records = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (std::size_t i = 0; i < dataset.data.utterances.size(); ++i) {
        const Utterance& utt = dataset.data.utterances[i];
        records.push_back({{"id", i},
                           {"speaker", utt.speaker},
                           {"domain", utt.domain},
                           {"pseudo", utt.pseudo_domain},
                           {"role", role_name(dataset.roles[i])},
                           {"base", dataset.base_index[i]},
                           {"offset", offset},
                           {"frames", utt.features.rows},
                           {"channels", utt.features.cols}});
        offset += static_cast<std::uint64_t>(utt.features.size()) * 4;
    }
    manifest["utterances"] = records;

    const std::string manifest_text = manifest.dump();
    std::string out;
    out.reserve(12 + manifest_text.size() + static_cast<std::size_t>(offset));
    out += "FDGD";
    append_u32_le(out, 1u);
    append_u32_le(out, static_cast<std::uint32_t>(manifest_text.size()));
    out += manifest_text;
    for (const auto& utt : dataset.data.utterances) {
        for (double v : utt.features.data) append_f32_le(out, static_cast<float>(v));
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open for writing: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw FormatError("write failed: " + path);
}

SynthDataset load_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < 12) throw FormatError("truncated dataset file: " + path);
    if (bytes.substr(0, 4) != "FDGD") throw FormatError("bad magic in " + path);

    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::uint32_t version = read_u32_le(p + 4);
    if (version != 1) throw FormatError("unsupported dataset version");
    const std::uint32_t manifest_len = read_u32_le(p + 8);
    if (bytes.size() < 12u + manifest_len) throw FormatError("truncated manifest: " + path);

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.substr(12, manifest_len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("dataset manifest: ") + e.what());
    }

    SynthDataset dataset;
    dataset.config = config_from_json(manifest.at("config"));
    dataset.config.validate();

    const std::size_t payload_start = 12u + manifest_len;
    const std::size_t payload_size = bytes.size() - payload_start;
    const unsigned char* payload = p + payload_start;

    try {
        for (const auto& record : manifest.at("utterances")) {
            Utterance utt;
            utt.speaker = record.at("speaker").get<int>();
            utt.domain = record.at("domain").get<int>();
            utt.pseudo_domain = record.at("pseudo").get<int>();
            const auto frames = record.at("frames").get<std::size_t>();
            const auto channels = record.at("channels").get<std::size_t>();
            const auto offset = record.at("offset").get<std::uint64_t>();
            const std::uint64_t need = offset + static_cast<std::uint64_t>(frames) * channels * 4;
            if (need > payload_size) {
                throw FormatError("dataset record extends past end of payload");
            }
            utt.features = Matrix(frames, channels);
            for (std::size_t i = 0; i < frames * channels; ++i) {
                const std::uint32_t bits = read_u32_le(payload + offset + 4 * i);
                utt.features.data[i] = static_cast<double>(std::bit_cast<float>(bits));
            }
            if (!utt.features.all_finite()) {
                throw FormatError("dataset record contains non-finite values");
            }
            dataset.data.utterances.push_back(std::move(utt));
            dataset.roles.push_back(role_from(record.at("role").get<std::string>()));
            dataset.base_index.push_back(record.at("base").get<int>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("dataset manifest records: ") + e.what());
    }
    return dataset;
}

}  // namespace fdg
