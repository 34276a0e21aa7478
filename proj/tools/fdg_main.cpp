#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fdg/config.hpp"
#include "fdg/errors.hpp"
#include "fdg/evalkit.hpp"
#include "fdg/synthdata.hpp"
#include "fdg/trainer.hpp"

namespace {

using namespace fdg;

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
};

RunConfig load_run_config(const CommonArgs& args) {
    RunConfig config;
    if (!args.config_path.empty()) config = parse_config_file(args.config_path);
    for (const auto& assignment : args.overrides) apply_override(config, assignment);
    return config;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw FormatError("cannot open for writing: " + path);
    f << text;
    if (!f) throw FormatError("write failed: " + path);
}

void echo_to_stdout(const RunConfig& config) {
    std::cout << "# effective config\n" << echo_config(config);
}

std::string fmt9(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

RunMode parse_mode(const std::string& mode) {
    if (mode == "full") return RunMode::full;
    if (mode == "protonet-baseline") return RunMode::protonet_baseline;
    if (mode == "original-labels") return RunMode::original_labels;
    throw UsageError("unknown --mode '" + mode + "' (full | protonet-baseline | original-labels)");
}

ScoreMetric resolve_metric(const std::string& requested, const Checkpoint& ckpt) {
    if (requested == "cosine") return ScoreMetric::cosine;
    if (requested == "neg_sq_euclidean") return ScoreMetric::neg_sq_euclidean;
    return ckpt.loss_variant == "angular" ? ScoreMetric::cosine : ScoreMetric::neg_sq_euclidean;
}

int cmd_gen(const CommonArgs& common, const std::string& out_path) {
    const RunConfig config = load_run_config(common);
    echo_to_stdout(config);
    const SynthDataset dataset = generate(config.gen);
    save_dataset(dataset, out_path);
    std::cout << "wrote " << dataset.data.utterances.size() << " utterances to " << out_path
              << "\n";
    return 0;
}

int cmd_train(const CommonArgs& common, const std::string& data_path, const std::string& out_dir,
              const std::string& mode_name) {
    RunConfig config = load_run_config(common);
    const RunMode mode = parse_mode(mode_name);
    if (mode == RunMode::protonet_baseline && config.train.lambda_dg != 0.0) {
        std::cerr << "warning: --mode protonet-baseline ignores train.lambda_dg="
                  << fmt9(config.train.lambda_dg) << "\n";
    }
    echo_to_stdout(config);

    const SynthDataset synth = load_dataset(data_path);
    if (config.train.encoder.input_channels != static_cast<std::size_t>(synth.config.channels)) {
        throw ConfigError("train.encoder.input_channels = " +
                          std::to_string(config.train.encoder.input_channels) +
                          " but dataset has " + std::to_string(synth.config.channels) +
                          " channels");
    }
    Dataset train_data = synth.train_view();

    std::filesystem::create_directories(out_dir);
    write_text(out_dir + "/config_echo.txt", echo_config(config));

    const TrainResult result = run_training(train_data, config.train, mode);

    save_checkpoint(checkpoint_from(result.pretrain_snapshot, config.train),
                    out_dir + "/agg_pretrain.fdgw");
    if (result.state.clusters) {
        save_cluster_model(*result.state.clusters, out_dir + "/clusters.fdgc");
    }
    for (std::size_t j = 0; j < result.state.experts.size(); ++j) {
        save_checkpoint(checkpoint_from(result.state.experts[j], config.train),
                        out_dir + "/expert_" + std::to_string(j) + ".fdgw");
    }
    save_checkpoint(checkpoint_from(result.state.aggregation, config.train),
                    out_dir + "/agg_final.fdgw");
    write_run_report(result.state, config.train, mode, out_dir + "/report.txt");

    std::cout << "trained (" << run_mode_name(mode) << "), artifacts in " << out_dir << "\n";
    if (!result.state.label_histogram.empty()) {
        std::cout << "label histogram:";
        for (std::size_t k = 0; k < result.state.label_histogram.size(); ++k) {
            std::cout << ' ' << k << ':' << result.state.label_histogram[k];
        }
        std::cout << "\n";
    }
    return 0;
}

int cmd_cluster(const CommonArgs& common, const std::string& checkpoint_path,
                const std::string& data_path, int cluster_count, const std::string& out_path) {
    RunConfig config = load_run_config(common);
    if (cluster_count > 0) config.train.cluster_count = cluster_count;
    echo_to_stdout(config);

    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    const SynthDataset synth = load_dataset(data_path);
    const Dataset train_data = synth.train_view();

    const Matrix features = style_features(ckpt.params, train_data, config.train.style_layers);
    Rng rng = Rng(config.train.seed).split("cluster");
    const ClusterModel model = kmeans(features, config.train.cluster_count, rng);
    const std::vector<int> labels = assign_labels(model, features);

    std::vector<int> histogram(static_cast<std::size_t>(model.cluster_count()), 0);
    for (int label : labels) ++histogram[static_cast<std::size_t>(label)];
    std::cout << "label histogram:";
    for (std::size_t k = 0; k < histogram.size(); ++k) {
        std::cout << ' ' << k << ':' << histogram[k];
    }
    std::cout << "\n";
    save_cluster_model(model, out_path);
    std::cout << "wrote cluster model to " << out_path << "\n";
    return 0;
}

int cmd_eval(const CommonArgs& common, const std::string& checkpoint_path,
             const std::string& data_path, const std::string& domains_flag,
             const std::vector<double>& far_flags, const std::string& out_dir) {
    RunConfig config = load_run_config(common);
    if (!domains_flag.empty()) {
        apply_override(config, "eval.domains=" + domains_flag);
    }
    if (!far_flags.empty()) {
        std::string list;
        for (std::size_t i = 0; i < far_flags.size(); ++i) {
            if (i > 0) list += ',';
            list += fmt9(far_flags[i]);
        }
        apply_override(config, "eval.far_points=" + list);
    }
    echo_to_stdout(config);

    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    const SynthDataset synth = load_dataset(data_path);
    const ScoreMetric metric = resolve_metric(config.eval.metric, ckpt);

    std::vector<int> domains;
    const int source = synth.source_domain_count();
    const int total = source + synth.out_domain_count();
    if (config.eval.domains == "in" || config.eval.domains == "all") {
        for (int d = 0; d < source; ++d) domains.push_back(d);
    }
    if (config.eval.domains == "out" || config.eval.domains == "all") {
        for (int d = source; d < total; ++d) domains.push_back(d);
    }
    if (domains.empty()) throw ConfigError("eval: no domains selected");

    std::filesystem::create_directories(out_dir);
    write_text(out_dir + "/config_echo.txt", echo_config(config));

    DcfParams dcf{config.eval.dcf_cost_fr, config.eval.dcf_cost_fa, config.eval.dcf_p_target};
    std::string metrics_text;
    metrics_text += "# verification metrics\n";
    metrics_text += "metric = ";
    metrics_text += metric == ScoreMetric::cosine ? "cosine" : "neg_sq_euclidean";
    metrics_text += "\ndomains = " + config.eval.domains + "\n";

    double sum_eer = 0.0, sum_dcf = 0.0;
    std::vector<double> sum_frr(config.eval.far_points.size(), 0.0);
    Rng trial_rng(0);
    for (int d : domains) {
        const auto splits = synth.test_splits(d);
        const TrialSet trials = build_trials(splits, TrialMode::exhaustive, trial_rng);
        const auto scored = score_trials(ckpt.params, synth.data, trials, metric);
        const MetricsReport report = compute_metrics(scored, config.eval.far_points, dcf);
        export_roc(report, out_dir + "/roc_domain" + std::to_string(d) + ".csv");

        metrics_text += "[domain " + std::to_string(d) + "]";
        metrics_text += synth.is_out_domain(d) ? " group=out" : " group=in";
        metrics_text += " eer=" + fmt9(report.eer);
        metrics_text += " min_dcf=" + fmt9(report.min_dcf);
        metrics_text += " min_dcf_raw=" + fmt9(report.min_dcf_raw);
        for (const auto& [far, frr] : report.frr_at_far) {
            metrics_text += " frr_at_far_" + fmt9(far) + "=" + fmt9(frr);
        }
        metrics_text += " targets=" + std::to_string(report.target_trials);
        metrics_text += " impostors=" + std::to_string(report.impostor_trials);
        metrics_text += "\n";

        sum_eer += report.eer;
        sum_dcf += report.min_dcf;
        for (std::size_t i = 0; i < report.frr_at_far.size(); ++i) {
            sum_frr[i] += report.frr_at_far[i].second;
        }
    }
    const double n = static_cast<double>(domains.size());
    metrics_text += "[mean] eer=" + fmt9(sum_eer / n) + " min_dcf=" + fmt9(sum_dcf / n);
    for (std::size_t i = 0; i < sum_frr.size(); ++i) {
        metrics_text +=
            " frr_at_far_" + fmt9(config.eval.far_points[i]) + "=" + fmt9(sum_frr[i] / n);
    }
    metrics_text += "\n";

    write_text(out_dir + "/metrics.txt", metrics_text);
    std::cout << metrics_text;
    return 0;
}

int cmd_export_embeddings(const CommonArgs& common, const std::string& checkpoint_path,
                          const std::string& data_path, const std::string& out_path) {
    const RunConfig config = load_run_config(common);
    echo_to_stdout(config);
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    const SynthDataset synth = load_dataset(data_path);
    export_embeddings(ckpt.params, synth.data, out_path);
    std::cout << "wrote embeddings for " << synth.data.utterances.size() << " utterances to "
              << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"few-shot domain generalization for verification"};
    app.require_subcommand(1);

    CommonArgs common;

    auto add_common = [&common](CLI::App* cmd) {
        cmd->add_option("--config", common.config_path, "key = value config file");
        cmd->add_option("--set", common.overrides, "config override, key=value (repeatable)");
    };

    std::string out_path, data_path, out_dir, checkpoint_path;
    std::string mode = "full";
    std::string domains;
    std::vector<double> far_points;
    int cluster_count = 0;

    CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset");
    add_common(gen);
    gen->add_option("--out", out_path, "output dataset path")->required();

    CLI::App* train = app.add_subcommand("train", "run episodic training");
    add_common(train);
    train->add_option("--data", data_path, "dataset path")->required();
    train->add_option("--out-dir", out_dir, "output directory")->required();
    train->add_option("--mode", mode, "full | protonet-baseline | original-labels");

    CLI::App* cluster = app.add_subcommand("cluster", "pseudo-domain clustering only");
    add_common(cluster);
    cluster->add_option("--checkpoint", checkpoint_path, "pretrained aggregation checkpoint")
        ->required();
    cluster->add_option("--data", data_path, "dataset path")->required();
    cluster->add_option("--m", cluster_count, "number of pseudo domains");
    cluster->add_option("--out", out_path, "output cluster model path")->required();

    CLI::App* eval = app.add_subcommand("eval", "verification evaluation");
    add_common(eval);
    eval->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    eval->add_option("--data", data_path, "dataset path")->required();
    eval->add_option("--domains", domains, "in | out | all");
    eval->add_option("--far", far_points, "FAR operating point (repeatable)");
    eval->add_option("--out-dir", out_dir, "output directory")->required();

    CLI::App* export_emb = app.add_subcommand("export-embeddings", "dump embeddings as CSV");
    add_common(export_emb);
    export_emb->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    export_emb->add_option("--data", data_path, "dataset path")->required();
    export_emb->add_option("--out", out_path, "output CSV path")->required();

    try {
        app.parse(argc, argv);
        if (gen->parsed()) return cmd_gen(common, out_path);
        if (train->parsed()) return cmd_train(common, data_path, out_dir, mode);
        if (cluster->parsed()) return cmd_cluster(common, checkpoint_path, data_path,
                                                  cluster_count, out_path);
        if (eval->parsed()) return cmd_eval(common, checkpoint_path, data_path, domains,
                                            far_points, out_dir);
        if (export_emb->parsed()) {
            return cmd_export_embeddings(common, checkpoint_path, data_path, out_path);
        }
        return 1;
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    } catch (const fdg::UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const fdg::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 1;
    } catch (const fdg::FormatError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const fdg::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
