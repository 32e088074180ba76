#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "wavesplit/blocks.hpp"
#include "wavesplit/kmeans.hpp"
#include "wavesplit/tensor.hpp"

namespace wavesplit {

struct SpeakerStackConfig {
  std::int64_t layers = 8;
  std::int64_t channels = 64;
  std::int64_t latent_dim = 64;
  std::int64_t n_sources = 2;
  std::int64_t kernel = 3;

  // Dilation doubles with depth: 2^0 .. 2^(layers-1).
  std::int64_t dilation(std::int64_t layer) const { return std::int64_t(1) << layer; }

  static SpeakerStackConfig paper(std::int64_t n_sources);  // 14 layers, C = d = 512
  static SpeakerStackConfig desk(std::int64_t n_sources);   // 8 layers, C = d = 64
};

struct SeparationStackConfig {
  std::int64_t layers = 20;
  std::int64_t channels = 64;
  std::int64_t n_sources = 2;
  std::int64_t kernel = 3;

  // WaveNet pattern: resets to 1 every 10 layers.
  std::int64_t dilation(std::int64_t layer) const { return std::int64_t(1) << (layer % 10); }

  static SeparationStackConfig paper(std::int64_t n_sources);  // 40 layers, C = 512
  static SeparationStackConfig desk(std::int64_t n_sources);   // 20 layers, C = 64
};

// Per-timestep latent source vectors h_t^i, each Euclidean-normalized.
struct SpeakerVectors {
  TensorPtr values;  // T x N x d
  std::int64_t length() const { return values->dim(0); }
  std::int64_t n_sources() const { return values->dim(1); }
  std::int64_t latent_dim() const { return values->dim(2); }
};

enum class CentroidProvenance { kmeans, training_aggregate };

struct SpeakerCentroids {
  TensorPtr values;  // N x d
  CentroidProvenance provenance = CentroidProvenance::kmeans;
  bool degenerate = false;  // k-means had fewer distinct points than clusters
};

struct SpeakerStack {
  SpeakerStackConfig cfg;
  LinearParams input_head;                  // 1 -> C
  std::vector<ResidualBlockParams> blocks;  // dilations 2^l
  LinearParams vector_head;                 // C -> N*d

  static SpeakerStack init(const SpeakerStackConfig& cfg, RngStream& rng);
  // x: [T] or [T x 1] -> unit-norm [T x N x d].
  SpeakerVectors forward(const TensorPtr& x) const;
};

struct SeparationStack {
  SeparationStackConfig cfg;
  std::int64_t cond_dim = 0;  // N * d
  Conditioning conditioning = Conditioning::film;
  LinearParams input_head;                // 1 -> C
  std::vector<FiLMBlockParams> blocks;    // FiLM-conditioned residual blocks
  std::vector<LinearParams> output_heads;  // per layer: C -> N

  static SeparationStack init(const SeparationStackConfig& cfg, std::int64_t latent_dim,
                              Conditioning conditioning, RngStream& rng);
  // Returns one [T x N] estimate per layer; the last is the model prediction.
  std::vector<TensorPtr> forward(const TensorPtr& x, const SpeakerCentroids& centroids) const;
};

struct ModelConfig {
  SpeakerStackConfig speaker;
  SeparationStackConfig separation;
  std::int64_t n_train_speakers = 10;  // embedding-table rows M
  Conditioning conditioning = Conditioning::film;

  // name: "paper" or "desk".
  static ModelConfig preset(const std::string& name, std::int64_t n_sources,
                            std::int64_t n_train_speakers);
};

// The trainable system: both stacks plus the speaker embedding table and the
// learned distance scaling of the classifier losses.
struct WavesplitModel {
  ModelConfig cfg;
  SpeakerStack speaker;
  SeparationStack separation;
  TensorPtr embeddings;  // M x d, rows near the unit sphere
  TensorPtr alpha_raw;   // alpha = exp(alpha_raw) > 0
  TensorPtr beta;

  static WavesplitModel init(const ModelConfig& cfg, std::uint64_t seed);

  std::vector<TensorPtr> parameters() const;
  std::vector<std::pair<std::string, TensorPtr>> named_parameters() const;
  std::int64_t n_sources() const { return cfg.speaker.n_sources; }
  std::int64_t latent_dim() const { return cfg.speaker.latent_dim; }
};

struct SeparationResult {
  TensorPtr estimate;  // T x N, last separation layer
  SpeakerCentroids centroids;
};

// Inference path: speaker stack, k-means over all T*N speaker vectors,
// separation stack conditioned on the resulting centroids. Runs without
// recording gradients; deterministic for a fixed k-means seed.
SeparationResult separate(const WavesplitModel& model, const TensorPtr& mixture,
                          const KMeansConfig& kmeans_cfg);

// Convenience overload with the module defaults (5 restarts, seed 0).
SeparationResult separate(const WavesplitModel& model, const TensorPtr& mixture);

}  // namespace wavesplit
