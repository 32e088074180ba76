#include "wavesplit/kmeans.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "wavesplit/errors.hpp"
#include "wavesplit/rng.hpp"
#include "wavesplit/threading.hpp"

namespace wavesplit {
namespace {

inline double sqdist_d(const float* a, const float* b, std::int64_t d) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < d; ++i) {
    const double diff = static_cast<double>(a[i]) - b[i];
    acc += diff * diff;
  }
  return acc;
}

// Index of the nearest centroid and its squared distance.
inline std::int32_t nearest(const float* p, const std::vector<float>& centroids, std::int64_t n,
                            std::int64_t d, double* best_out) {
  std::int32_t best = 0;
  double best_d = sqdist_d(p, centroids.data(), d);
  for (std::int64_t c = 1; c < n; ++c) {
    const double dist = sqdist_d(p, centroids.data() + c * d, d);
    if (dist < best_d) {
      best_d = dist;
      best = static_cast<std::int32_t>(c);
    }
  }
  if (best_out) *best_out = best_d;
  return best;
}

std::vector<float> kmeanspp_seed(std::span<const float> points, std::int64_t P, std::int64_t d,
                                 std::int64_t n, RngStream& rng) {
  std::vector<float> centroids(static_cast<std::size_t>(n * d));
  const std::int64_t first = rng.uniform_int(0, P - 1);
  std::memcpy(centroids.data(), points.data() + first * d, sizeof(float) * d);

  std::vector<double> dist2(static_cast<std::size_t>(P));
  for (std::int64_t c = 1; c < n; ++c) {
    double total = 0.0;
    for (std::int64_t p = 0; p < P; ++p) {
      double best = std::numeric_limits<double>::max();
      for (std::int64_t j = 0; j < c; ++j)
        best = std::min(best, sqdist_d(points.data() + p * d, centroids.data() + j * d, d));
      dist2[p] = best;
      total += best;
    }
    std::int64_t pick = 0;
    if (total > 0.0) {
      double r = rng.uniform() * total;
      for (std::int64_t p = 0; p < P; ++p) {
        r -= dist2[p];
        if (r <= 0.0) {
          pick = p;
          break;
        }
        pick = p;  // falls through to the last point on rounding
      }
    } else {
      pick = rng.uniform_int(0, P - 1);  // all points coincide with centroids
    }
    std::memcpy(centroids.data() + c * d, points.data() + pick * d, sizeof(float) * d);
  }
  return centroids;
}

struct RestartOutcome {
  std::vector<float> centroids;
  std::vector<std::int32_t> assignments;
  double inertia = 0.0;
  std::vector<double> trace;
  std::int64_t iterations = 0;
};

RestartOutcome run_restart(std::span<const float> points, std::int64_t P, std::int64_t d,
                           const KMeansConfig& cfg, RngStream rng) {
  const std::int64_t n = cfg.n_clusters;
  RestartOutcome out;
  out.centroids = kmeanspp_seed(points, P, d, n, rng);
  out.assignments.assign(static_cast<std::size_t>(P), 0);

  std::vector<std::int64_t> counts(static_cast<std::size_t>(n));
  std::vector<double> sums(static_cast<std::size_t>(n * d));
  for (std::int64_t iter = 0; iter < cfg.max_iters; ++iter) {
    double inertia = 0.0;
    for (std::int64_t p = 0; p < P; ++p) {
      double best;
      out.assignments[p] = nearest(points.data() + p * d, out.centroids, n, d, &best);
      inertia += best;
    }
    out.trace.push_back(inertia);
    out.inertia = inertia;
    ++out.iterations;

    std::fill(counts.begin(), counts.end(), 0);
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::int64_t p = 0; p < P; ++p) {
      const std::int32_t c = out.assignments[p];
      ++counts[c];
      const float* row = points.data() + p * d;
      double* acc = sums.data() + static_cast<std::int64_t>(c) * d;
      for (std::int64_t i = 0; i < d; ++i) acc[i] += row[i];
    }

    bool has_empty = false;
    for (std::int64_t c = 0; c < n; ++c) has_empty = has_empty || counts[c] == 0;
    if (has_empty && !cfg.repair_empty) break;

    double moved = 0.0;
    std::vector<float> next = out.centroids;
    for (std::int64_t c = 0; c < n; ++c) {
      if (counts[c] == 0) continue;
      for (std::int64_t i = 0; i < d; ++i)
        next[c * d + i] = static_cast<float>(sums[c * d + i] / static_cast<double>(counts[c]));
    }
    if (has_empty)
      empty_cluster_repair(points, d, next, counts);
    for (std::int64_t c = 0; c < n * d; ++c) {
      const double diff = static_cast<double>(next[c]) - out.centroids[c];
      moved = std::max(moved, std::abs(diff));
    }
    out.centroids = std::move(next);
    if (moved < cfg.tolerance) break;
  }

  // Final assignment/inertia against the converged centroids.
  double inertia = 0.0;
  for (std::int64_t p = 0; p < P; ++p) {
    double best;
    out.assignments[p] = nearest(points.data() + p * d, out.centroids, n, d, &best);
    inertia += best;
  }
  out.inertia = inertia;
  if (out.trace.empty() || inertia < out.trace.back()) out.trace.push_back(inertia);
  return out;
}

// Count distinct rows (exact float comparison); capped at `need`.
std::int64_t count_distinct(std::span<const float> points, std::int64_t P, std::int64_t d,
                            std::int64_t need, std::vector<std::int64_t>* reps) {
  std::vector<std::int64_t> found;
  for (std::int64_t p = 0; p < P && static_cast<std::int64_t>(found.size()) < need; ++p) {
    bool fresh = true;
    for (std::int64_t r : found) {
      if (std::memcmp(points.data() + p * d, points.data() + r * d, sizeof(float) * d) == 0) {
        fresh = false;
        break;
      }
    }
    if (fresh) found.push_back(p);
  }
  if (reps) *reps = found;
  return static_cast<std::int64_t>(found.size());
}

}  // namespace

bool empty_cluster_repair(std::span<const float> points, std::int64_t dim,
                          std::vector<float>& centroids,
                          const std::vector<std::int64_t>& cluster_sizes) {
  const std::int64_t n = static_cast<std::int64_t>(cluster_sizes.size());
  const std::int64_t P = static_cast<std::int64_t>(points.size()) / dim;
  bool repaired = false;
  for (std::int64_t c = 0; c < n; ++c) {
    if (cluster_sizes[c] != 0) continue;
    // Farthest point from its current nearest centroid.
    std::int64_t far = 0;
    double far_d = -1.0;
    for (std::int64_t p = 0; p < P; ++p) {
      double best;
      nearest(points.data() + p * dim, centroids, n, dim, &best);
      if (best > far_d) {
        far_d = best;
        far = p;
      }
    }
    std::memcpy(centroids.data() + c * dim, points.data() + far * dim, sizeof(float) * dim);
    repaired = true;
  }
  return repaired;
}

KMeansResult kmeans(std::span<const float> points, std::int64_t dim, const KMeansConfig& cfg) {
  if (dim <= 0) throw ContractViolation("kmeans: dimension must be positive");
  if (cfg.n_clusters < 1) throw ContractViolation("kmeans: n_clusters must be >= 1");
  if (cfg.n_restarts < 1) throw ContractViolation("kmeans: n_restarts must be >= 1");
  if (points.size() % dim != 0) throw ContractViolation("kmeans: point buffer not a multiple of dim");
  const std::int64_t P = static_cast<std::int64_t>(points.size()) / dim;
  if (P < 1) throw ContractViolation("kmeans: at least one point required");

  const std::int64_t n = cfg.n_clusters;
  KMeansResult result;

  std::vector<std::int64_t> reps;
  const std::int64_t distinct = count_distinct(points, P, dim, n, &reps);
  if (distinct < n) {
    // Degenerate clustering: place centroids on the distinct points and fill
    // the remaining slots with duplicates.
    result.degenerate = true;
    result.centroids.resize(static_cast<std::size_t>(n * dim));
    for (std::int64_t c = 0; c < n; ++c) {
      const std::int64_t src = reps[c % distinct];
      std::memcpy(result.centroids.data() + c * dim, points.data() + src * dim,
                  sizeof(float) * dim);
    }
    result.assignments.assign(static_cast<std::size_t>(P), 0);
    double inertia = 0.0;
    for (std::int64_t p = 0; p < P; ++p) {
      double best;
      result.assignments[p] = nearest(points.data() + p * dim, result.centroids, n, dim, &best);
      inertia += best;
    }
    result.inertia = inertia;
    result.inertia_trace.push_back(inertia);
    result.iterations = 0;
    return result;
  }

  RngStream master(cfg.seed);
  bool have = false;
  for (std::int64_t r = 0; r < cfg.n_restarts; ++r) {
    RestartOutcome outcome =
        run_restart(points, P, dim, cfg, master.fork(static_cast<std::uint64_t>(r)));
    if (!have || outcome.inertia < result.inertia) {
      have = true;
      result.centroids = std::move(outcome.centroids);
      result.assignments = std::move(outcome.assignments);
      result.inertia = outcome.inertia;
      result.inertia_trace = std::move(outcome.trace);
      result.iterations = outcome.iterations;
    }
  }
  return result;
}

}  // namespace wavesplit
