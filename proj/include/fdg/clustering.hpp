#ifndef FDG_CLUSTERING_HPP
#define FDG_CLUSTERING_HPP

#include <span>
#include <string>
#include <vector>

#include "fdg/encoder.hpp"
#include "fdg/episodes.hpp"
#include "fdg/numerics.hpp"

namespace fdg {

// Pseudo-domain discovery: per-utterance style statistics from the
// aggregation network's conv activations, k-means over the standardized
// statistics, and nearest-centroid label assignment.

// One row per utterance. Per conv layer (network order), per channel: the
// temporal mean of the activation map, then the temporal std. `layers`
// selects which conv layers contribute; empty means all of them.
Matrix style_features(const EncoderParams& aggregation, const Dataset& dataset,
                      std::span<const int> layers = {});

struct ClusterModel {
    // Per-dimension standardization applied before distance computations;
    // dimensions with zero variance keep scale 1.
    std::vector<double> feature_mean;
    std::vector<double> feature_scale;
    Matrix centroids;  // M x dim, in standardized space
    std::vector<double> inertia_history;  // one entry per Lloyd assignment

    int cluster_count() const { return static_cast<int>(centroids.rows); }
    // Standardizes a raw feature row and returns the nearest centroid,
    // breaking ties toward the lowest index.
    int assign(std::span<const double> raw_feature) const;
};

// k-means++ seeding followed by Lloyd iterations until the largest centroid
// shift drops below tol or max_iter is reached. Empty clusters are reseeded
// to the point farthest from its assigned centroid.
ClusterModel kmeans(const Matrix& features, int cluster_count, Rng& rng, int max_iter = 100,
                    double tol = 1e-8);

// Nearest-centroid labels for precomputed style features, one per row.
std::vector<int> assign_labels(const ClusterModel& model, const Matrix& features);

// Recomputes style features and overwrites every utterance's pseudo-domain
// label; returns the labels. Idempotent.
std::vector<int> assign_pseudo_labels(const ClusterModel& model, const EncoderParams& aggregation,
                                      Dataset& dataset, std::span<const int> layers = {});

// Same descriptor+payload container as checkpoints, magic "FDGC".
void save_cluster_model(const ClusterModel& model, const std::string& path);
ClusterModel load_cluster_model(const std::string& path);

}  // namespace fdg

#endif
