#include "fdg/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fdg/errors.hpp"
#include "fdg/serial.hpp"
#include "fdg/threads.hpp"

namespace fdg {

Matrix style_features(const EncoderParams& aggregation, const Dataset& dataset,
                      std::span<const int> layers) {
    std::vector<int> selected(layers.begin(), layers.end());
    if (selected.empty()) {
        for (int l = 0; l < static_cast<int>(aggregation.config.conv_layers.size()); ++l) {
            selected.push_back(l);
        }
    }
    std::size_t dim = 0;
    for (int l : selected) {
        if (l < 0 || static_cast<std::size_t>(l) >= aggregation.config.conv_layers.size()) {
            throw UsageError("style_features: conv layer index out of range");
        }
        dim += 2 * aggregation.config.conv_layers[static_cast<std::size_t>(l)].out_channels;
    }

    Matrix features(dataset.utterances.size(), dim);
    parallel_for(dataset.utterances.size(), [&](std::size_t i) {
        const ForwardTrace trace = forward_traced(aggregation, dataset.utterances[i].features);
        double* out = features.row(i);
        std::size_t pos = 0;
        for (int l : selected) {
            const Matrix& act = trace.activations[static_cast<std::size_t>(l)];
            const double inv_t = 1.0 / static_cast<double>(act.cols);
            for (std::size_t c = 0; c < act.rows; ++c) {
                const double* a = act.row(c);
                double mu = 0.0;
                for (std::size_t t = 0; t < act.cols; ++t) mu += a[t];
                mu *= inv_t;
                double var = 0.0;
                for (std::size_t t = 0; t < act.cols; ++t) {
                    const double d = a[t] - mu;
                    var += d * d;
                }
                var *= inv_t;
                out[pos] = mu;
                out[pos + act.rows] = std::sqrt(var);
                ++pos;
            }
            pos += act.rows;  // skip past the std block just written
        }
    });
    return features;
}

namespace {

double sq_dist(const double* a, const double* b, std::size_t dim) {
    double s = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

int nearest_centroid(const Matrix& centroids, const double* point) {
    int best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < centroids.rows; ++k) {
        const double dist = sq_dist(centroids.row(k), point, centroids.cols);
        if (dist < best_dist) {  // strict: ties keep the lowest index
            best_dist = dist;
            best = static_cast<int>(k);
        }
    }
    return best;
}

}  // namespace

int ClusterModel::assign(std::span<const double> raw_feature) const {
    if (raw_feature.size() != feature_mean.size()) {
        throw UsageError("cluster assign: feature dimension mismatch");
    }
    std::vector<double> standardized(raw_feature.size());
    for (std::size_t i = 0; i < raw_feature.size(); ++i) {
        standardized[i] = (raw_feature[i] - feature_mean[i]) / feature_scale[i];
    }
    return nearest_centroid(centroids, standardized.data());
}

ClusterModel kmeans(const Matrix& features, int cluster_count, Rng& rng, int max_iter,
                    double tol) {
    const std::size_t n = features.rows;
    const std::size_t dim = features.cols;
    const std::size_t m = static_cast<std::size_t>(cluster_count);
    if (cluster_count < 1) throw ConfigError("kmeans: cluster count must be >= 1");
    if (n < m) throw ConfigError("kmeans: fewer points than clusters");

    ClusterModel model;
    model.feature_mean.assign(dim, 0.0);
    model.feature_scale.assign(dim, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = features.row(i);
        for (std::size_t c = 0; c < dim; ++c) model.feature_mean[c] += row[c];
    }
    for (double& v : model.feature_mean) v /= static_cast<double>(n);
    std::vector<double> var(dim, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = features.row(i);
        for (std::size_t c = 0; c < dim; ++c) {
            const double d = row[c] - model.feature_mean[c];
            var[c] += d * d;
        }
    }
    for (std::size_t c = 0; c < dim; ++c) {
        const double sd = std::sqrt(var[c] / static_cast<double>(n));
        model.feature_scale[c] = sd > 0.0 ? sd : 1.0;
    }

    Matrix points(n, dim);
    for (std::size_t i = 0; i < n; ++i) {
        const double* src = features.row(i);
        double* dst = points.row(i);
        for (std::size_t c = 0; c < dim; ++c) {
            dst[c] = (src[c] - model.feature_mean[c]) / model.feature_scale[c];
        }
    }

    // k-means++ seeding
    model.centroids = Matrix(m, dim);
    std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
    std::size_t first = static_cast<std::size_t>(rng.uniform_int(n));
    std::copy_n(points.row(first), dim, model.centroids.row(0));
    for (std::size_t k = 1; k < m; ++k) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double dist = sq_dist(points.row(i), model.centroids.row(k - 1), dim);
            min_dist[i] = std::min(min_dist[i], dist);
            total += min_dist[i];
        }
        std::size_t chosen = 0;
        if (total > 0.0) {
            const double r = rng.uniform() * total;
            double acc = 0.0;
            chosen = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                acc += min_dist[i];
                if (acc > r) {
                    chosen = i;
                    break;
                }
            }
        } else {
            chosen = static_cast<std::size_t>(rng.uniform_int(n));
        }
        std::copy_n(points.row(chosen), dim, model.centroids.row(k));
    }

    // Lloyd iterations
    std::vector<int> assignment(n, 0);
    for (int iter = 0; iter < max_iter; ++iter) {
        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            assignment[i] = nearest_centroid(model.centroids, points.row(i));
            inertia += sq_dist(points.row(i), model.centroids.row(static_cast<std::size_t>(assignment[i])), dim);
        }
        model.inertia_history.push_back(inertia);

        Matrix next(m, dim);
        std::vector<std::size_t> counts(m, 0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto k = static_cast<std::size_t>(assignment[i]);
            ++counts[k];
            const double* src = points.row(i);
            double* dst = next.row(k);
            for (std::size_t c = 0; c < dim; ++c) dst[c] += src[c];
        }
        for (std::size_t k = 0; k < m; ++k) {
            if (counts[k] == 0) continue;
            double* dst = next.row(k);
            for (std::size_t c = 0; c < dim; ++c) dst[c] /= static_cast<double>(counts[k]);
        }
        // Reseed empty clusters to the point farthest from its own centroid.
        std::vector<bool> taken(n, false);
        for (std::size_t k = 0; k < m; ++k) {
            if (counts[k] != 0) continue;
            double farthest = -1.0;
            std::size_t pick = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (taken[i]) continue;
                const double dist = sq_dist(
                    points.row(i), model.centroids.row(static_cast<std::size_t>(assignment[i])), dim);
                if (dist > farthest) {
                    farthest = dist;
                    pick = i;
                }
            }
            taken[pick] = true;
            std::copy_n(points.row(pick), dim, next.row(k));
        }

        double max_shift_sq = 0.0;
        for (std::size_t k = 0; k < m; ++k) {
            max_shift_sq = std::max(max_shift_sq, sq_dist(model.centroids.row(k), next.row(k), dim));
        }
        model.centroids = std::move(next);
        if (std::sqrt(max_shift_sq) < tol) {
            // Record the final assignment cost against the settled centroids.
            double final_inertia = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const int k = nearest_centroid(model.centroids, points.row(i));
                final_inertia += sq_dist(points.row(i), model.centroids.row(static_cast<std::size_t>(k)), dim);
            }
            model.inertia_history.push_back(final_inertia);
            break;
        }
    }
    return model;
}

std::vector<int> assign_labels(const ClusterModel& model, const Matrix& features) {
    std::vector<int> labels(features.rows, 0);
    parallel_for(features.rows,
                 [&](std::size_t i) { labels[i] = model.assign(features.row_span(i)); });
    return labels;
}

std::vector<int> assign_pseudo_labels(const ClusterModel& model, const EncoderParams& aggregation,
                                      Dataset& dataset, std::span<const int> layers) {
    const Matrix features = style_features(aggregation, dataset, layers);
    const std::vector<int> labels = assign_labels(model, features);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        dataset.utterances[i].pseudo_domain = labels[i];
    }
    return labels;
}

void save_cluster_model(const ClusterModel& model, const std::string& path) {
    BlobFile blob;
    blob.magic = "FDGC";
    blob.version = 1;
    nlohmann::json tensors = nlohmann::json::array();
    auto add_tensor = [&](const std::string& name, std::vector<std::size_t> shape,
                          std::span<const double> values) {
        tensors.push_back({{"name", name}, {"shape", shape}});
        blob.payload.insert(blob.payload.end(), values.begin(), values.end());
    };
    add_tensor("feature_mean", {model.feature_mean.size()}, model.feature_mean);
    add_tensor("feature_scale", {model.feature_scale.size()}, model.feature_scale);
    add_tensor("centroids", {model.centroids.rows, model.centroids.cols}, model.centroids.data);
    add_tensor("inertia_history", {model.inertia_history.size()}, model.inertia_history);
    blob.descriptor = {{"dim", model.feature_mean.size()},
                       {"clusters", model.centroids.rows},
                       {"tensors", tensors}};
    write_blob(blob, path);
}

ClusterModel load_cluster_model(const std::string& path) {
    const BlobFile blob = read_blob(path, "FDGC");
    if (blob.version != 1) throw FormatError("unsupported cluster model version");
    std::size_t dim = 0, clusters = 0;
    try {
        dim = blob.descriptor.at("dim").get<std::size_t>();
        clusters = blob.descriptor.at("clusters").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("cluster model descriptor: ") + e.what());
    }
    const std::size_t fixed = 2 * dim + clusters * dim;
    if (blob.payload.size() < fixed) throw FormatError("cluster model payload truncated");

    ClusterModel model;
    std::size_t pos = 0;
    model.feature_mean.assign(blob.payload.begin(), blob.payload.begin() + static_cast<std::ptrdiff_t>(dim));
    pos += dim;
    model.feature_scale.assign(blob.payload.begin() + static_cast<std::ptrdiff_t>(pos),
                               blob.payload.begin() + static_cast<std::ptrdiff_t>(pos + dim));
    pos += dim;
    model.centroids = Matrix(clusters, dim);
    std::copy_n(blob.payload.begin() + static_cast<std::ptrdiff_t>(pos), clusters * dim,
                model.centroids.data.begin());
    pos += clusters * dim;
    model.inertia_history.assign(blob.payload.begin() + static_cast<std::ptrdiff_t>(pos),
                                 blob.payload.end());
    return model;
}

}  // namespace fdg
