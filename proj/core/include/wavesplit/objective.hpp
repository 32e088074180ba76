#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "wavesplit/data.hpp"
#include "wavesplit/model.hpp"
#include "wavesplit/rng.hpp"
#include "wavesplit/tensor.hpp"

namespace wavesplit {

enum class SpeakerLossVariant { distance, local, global };

struct LossWeights {
  double speaker_weight = 2.0;    // lambda_s
  double embed_reg_weight = 0.3;  // lambda_e
  double sdr_clip = 30.0;         // tau; 27 for noisy data
  double noise_std = 0.2;         // centroid Gaussian noise
  double speaker_dropout_rate = 0.4;
  double speaker_mixup_rate = 0.5;
  SpeakerLossVariant loss_variant = SpeakerLossVariant::global;

  void validate() const;
};

// --- scalar reference kernels ---
// The batch path evaluates per-timestep losses through these same float32
// kernels, so exhaustive-permutation oracles built on them agree bit for bit.

// ||h_j - e||^2 + sum_{k != j} max(0, 1 - ||h_j - h_k||^2); h_all is N x d.
float distance_loss_value(std::span<const float> h_j, std::span<const float> e,
                          const float* h_all, std::int64_t n, std::int64_t d, std::int64_t j);

// d(h_j, table[target]) + log sum_k exp(-d(h_j, table[k])) over the given
// rows, with d(h, e) = alpha ||h - e||^2 + beta.
float classifier_loss_value(std::span<const float> h_j, std::int64_t target, const float* table,
                            std::int64_t rows, std::int64_t d, float alpha, float beta);

struct SpeakerLossResult {
  TensorPtr loss;                   // scalar; sum over timesteps of the best assignment
  std::vector<std::int32_t> perms;  // T x N; perms[t*N + i] = vector slot assigned to label i
};

// Permutation-resolved speaker loss. speaker_ids are 1-based embedding rows,
// distinct, and N <= M. The argmin permutation per timestep is returned for
// the training-centroid aggregation.
SpeakerLossResult speaker_loss(const SpeakerVectors& h, const std::vector<int>& speaker_ids,
                               const WavesplitModel& model, SpeakerLossVariant variant);

// c_i = mean_t h_t^{sigma_t(i)}; centroid order matches label order.
SpeakerCentroids training_centroids(const SpeakerVectors& h,
                                    const std::vector<std::int32_t>& perms);

// Mixup donors come from other examples; the provider returns a detached
// centroid row or nothing (in which case the row keeps its value).
using DonorProvider = std::function<std::optional<std::vector<float>>(RngStream&)>;

// Pre-drawn randomness for one regularizer application, in the fixed order
// noise -> dropout -> mixup. Keeping the draws explicit makes the transform
// reproducible for gradient checks.
struct CentroidRegularizerPlan {
  std::int64_t n = 0, d = 0;
  std::vector<float> noise;                   // N x d; empty = no noise
  std::int64_t dropped_row = -1;              // at most one centroid is zeroed
  std::vector<double> mix_lambda;             // per row; 1 = untouched
  std::vector<std::vector<float>> mix_donor;  // per row; empty = untouched

  bool trivial() const;
};

CentroidRegularizerPlan plan_centroid_regularizers(std::int64_t n, std::int64_t d,
                                                   const LossWeights& weights, RngStream& rng,
                                                   const DonorProvider& donor);

// Applies a plan on the graph; gradients flow through the retained fraction
// of each centroid only. A trivial plan returns the input unchanged.
TensorPtr regularize_centroids(const TensorPtr& centroids,
                               const CentroidRegularizerPlan& plan);

// Mean over channels and layers of -min(tau, SDR(estimate, reference)).
// references is T x N; throws on an all-zero reference channel.
TensorPtr reconstruction_loss(const std::vector<TensorPtr>& per_layer_outputs,
                              const TensorPtr& references, double tau);

// -sum_i min_{j != i} log ||E_i - E_j||; distances floored at 1e-12.
TensorPtr embedding_entropy_reg(const TensorPtr& embeddings);

// Bounded pool of detached centroids from recently processed examples,
// serving as mixup donors for the following ones.
class DonorPool {
 public:
  explicit DonorPool(std::size_t capacity = 64) : capacity_(capacity) {}

  void push(const TensorPtr& centroids);  // stores each row
  std::optional<std::vector<float>> draw(RngStream& rng) const;
  DonorProvider provider() const;
  std::size_t size() const { return rows_.size(); }

 private:
  std::size_t capacity_;
  std::vector<std::vector<float>> rows_;
  std::size_t next_ = 0;
};

struct LossBreakdown {
  TensorPtr total;  // on the active tape
  double total_value = 0.0;
  double speaker = 0.0;
  double reconstr = 0.0;
  double reg = 0.0;
  std::vector<std::int32_t> perms;
  TensorPtr centroids_detached;  // pre-regularization training centroids
};

// Full objective for one windowed example:
//   L = L_reconstr + lambda_s * L_speaker + lambda_e * l_reg
// with the reconstruction conditioned on (regularized) training centroids.
LossBreakdown example_loss(const MixtureExample& example, WavesplitModel& model,
                           const LossWeights& weights, RngStream& rng,
                           const DonorProvider& donor, bool train_mode = true);

// Batch mean of example losses; donors for each example come from the ones
// processed before it.
LossBreakdown total_loss(std::span<const MixtureExample> batch, WavesplitModel& model,
                         const LossWeights& weights, RngStream& rng);

// Interleaved T x N reference tensor for an example.
TensorPtr references_tensor(const MixtureExample& example);

}  // namespace wavesplit
