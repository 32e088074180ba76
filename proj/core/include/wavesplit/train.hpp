#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "wavesplit/blocks.hpp"
#include "wavesplit/data.hpp"
#include "wavesplit/kmeans.hpp"
#include "wavesplit/metrics.hpp"
#include "wavesplit/model.hpp"
#include "wavesplit/objective.hpp"

namespace wavesplit {

struct TrainConfig {
  std::int64_t batch_size = 8;
  double window_seconds = 1.0;  // >= 0.75 s
  std::int64_t steps = 1000;
  double lr = 1e-3;
  double grad_clip = 0.0;  // off by default
  LossWeights weights;
  bool dynamic_mixing = false;
  double dynamic_gain_range_db = 2.5;
  std::uint64_t seed = 0;
  std::int64_t valid_interval = 200;    // steps per log line / validation
  std::int64_t valid_max_examples = 0;  // 0 = the whole validation set
  std::filesystem::path out_dir;        // empty: no checkpoints or log file
  KMeansConfig kmeans;

  void validate(int sample_rate) const;
  std::int64_t window_samples(int sample_rate) const;
};

struct TrainStats {
  double loss = 0.0;
  double speaker = 0.0;
  double reconstr = 0.0;
  double reg = 0.0;
  std::int64_t steps = 0;
  double best_valid_dsisdr = 0.0;
  bool has_validation = false;
};

// Owns the optimization loop: shuffled epochs over permutation-replicated
// windows (or a dynamic-mixing stream), Adam updates, periodic validation
// through the k-means inference path, and best-checkpoint selection.
class Trainer {
 public:
  Trainer(WavesplitModel& model, TrainConfig cfg);

  // One shuffled pass over the replicated training set (bounded by the
  // remaining step budget). Returns running means of the loss components.
  TrainStats train_epoch(std::span<const MixtureExample> train);

  // Full step budget with validation and checkpointing.
  TrainStats run(std::span<const MixtureExample> train,
                 std::span<const MixtureExample> valid);

  metrics::EvalReport validate(std::span<const MixtureExample> valid_set);

  std::int64_t steps_done() const { return steps_done_; }
  const std::string& progress_log() const { return log_; }
  WavesplitModel& model() { return model_; }

 private:
  TrainStats run_steps(std::span<const MixtureExample> train,
                       std::span<const MixtureExample> valid, bool single_epoch);
  void maybe_validate_and_log(std::span<const MixtureExample> valid, TrainStats& window_stats);

  WavesplitModel& model_;
  TrainConfig cfg_;
  Adam optimizer_;
  RngStream rng_;
  DonorPool donors_;
  std::int64_t steps_done_ = 0;
  std::string log_;
  double best_valid_ = 0.0;
  bool has_best_ = false;
};

// Full-sequence evaluation through separate(); report rows keep example ids.
metrics::EvalReport evaluate_model(const WavesplitModel& model,
                                   std::span<const MixtureExample> examples,
                                   const KMeansConfig& kmeans_cfg);

// Long-form robustness protocol: concatenates `factor` same-pair test
// sequences with the dominant speaker alternating between segments, then
// evaluates. factor == 1 is plain evaluation. Pairs with too few sequences
// recycle them (flagged in the report).
metrics::EvalReport concat_stress_eval(const WavesplitModel& model,
                                       std::span<const MixtureExample> test_set, int factor,
                                       const KMeansConfig& kmeans_cfg);

}  // namespace wavesplit
