#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace wavesplit {

struct KMeansConfig {
  std::int64_t n_clusters = 2;
  std::int64_t max_iters = 100;
  double tolerance = 1e-6;  // max centroid movement declaring convergence
  std::int64_t n_restarts = 5;
  std::uint64_t seed = 0;
  bool repair_empty = true;  // reseed empty clusters instead of finishing the restart
};

struct KMeansResult {
  std::vector<float> centroids;        // n_clusters x d
  std::vector<std::int32_t> assignments;  // one per point
  double inertia = 0.0;                // sum of squared point-to-centroid distances
  std::vector<double> inertia_trace;   // winning restart, one entry per Lloyd iteration
  std::int64_t iterations = 0;         // winning restart
  bool degenerate = false;             // fewer distinct points than clusters
};

// Lloyd iterations from k-means++ seeding, best of n_restarts by inertia.
// Deterministic for a fixed (points, cfg). points is row-major P x d.
KMeansResult kmeans(std::span<const float> points, std::int64_t dim, const KMeansConfig& cfg);

// Reseeds every empty cluster at the point farthest from its nearest
// non-empty centroid. Returns true when something was repaired.
bool empty_cluster_repair(std::span<const float> points, std::int64_t dim,
                          std::vector<float>& centroids,
                          const std::vector<std::int64_t>& cluster_sizes);

}  // namespace wavesplit
