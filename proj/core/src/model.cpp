#include "wavesplit/model.hpp"

#include <cmath>

#include "wavesplit/errors.hpp"

namespace wavesplit {

SpeakerStackConfig SpeakerStackConfig::paper(std::int64_t n_sources) {
  return {.layers = 14, .channels = 512, .latent_dim = 512, .n_sources = n_sources, .kernel = 3};
}

SpeakerStackConfig SpeakerStackConfig::desk(std::int64_t n_sources) {
  return {.layers = 8, .channels = 64, .latent_dim = 64, .n_sources = n_sources, .kernel = 3};
}

SeparationStackConfig SeparationStackConfig::paper(std::int64_t n_sources) {
  return {.layers = 40, .channels = 512, .n_sources = n_sources, .kernel = 3};
}

SeparationStackConfig SeparationStackConfig::desk(std::int64_t n_sources) {
  return {.layers = 20, .channels = 64, .n_sources = n_sources, .kernel = 3};
}

ModelConfig ModelConfig::preset(const std::string& name, std::int64_t n_sources,
                                std::int64_t n_train_speakers) {
  ModelConfig cfg;
  if (name == "paper") {
    cfg.speaker = SpeakerStackConfig::paper(n_sources);
    cfg.separation = SeparationStackConfig::paper(n_sources);
  } else if (name == "desk") {
    cfg.speaker = SpeakerStackConfig::desk(n_sources);
    cfg.separation = SeparationStackConfig::desk(n_sources);
  } else {
    throw ContractViolation("unknown model preset '" + name + "'");
  }
  cfg.n_train_speakers = n_train_speakers;
  return cfg;
}

namespace {

// Accepts [T] or [T x 1] and returns the [T x 1] view the heads expect.
TensorPtr as_column(const TensorPtr& x) {
  if (x->ndim() == 1) return ops::reshape(x, {x->dim(0), 1});
  if (x->ndim() == 2 && x->dim(1) == 1) return x;
  throw ContractViolation("expected a mono waveform [T] or [T x 1]");
}

}  // namespace

SpeakerStack SpeakerStack::init(const SpeakerStackConfig& cfg, RngStream& rng) {
  SpeakerStack stack;
  stack.cfg = cfg;
  stack.input_head = LinearParams::init(1, cfg.channels, rng);
  for (std::int64_t l = 0; l < cfg.layers; ++l)
    stack.blocks.push_back(
        ResidualBlockParams::init(cfg.channels, cfg.kernel, cfg.dilation(l), rng));
  stack.vector_head = LinearParams::init(cfg.channels, cfg.n_sources * cfg.latent_dim, rng);
  return stack;
}

SpeakerVectors SpeakerStack::forward(const TensorPtr& x) const {
  if (x->numel() < 1) throw ContractViolation("speaker stack: empty input");
  auto h = input_head.forward(as_column(x));
  for (const auto& block : blocks) h = residual_block(h, block);
  h = vector_head.forward(h);  // T x (N*d)
  h = ops::reshape(h, {h->dim(0), cfg.n_sources, cfg.latent_dim});
  return SpeakerVectors{ops::l2_normalize(h)};
}

SeparationStack SeparationStack::init(const SeparationStackConfig& cfg, std::int64_t latent_dim,
                                      Conditioning conditioning, RngStream& rng) {
  SeparationStack stack;
  stack.cfg = cfg;
  stack.cond_dim = cfg.n_sources * latent_dim;
  stack.conditioning = conditioning;
  stack.input_head = LinearParams::init(1, cfg.channels, rng);
  for (std::int64_t l = 0; l < cfg.layers; ++l) {
    stack.blocks.push_back(FiLMBlockParams::init(cfg.channels, cfg.kernel, cfg.dilation(l),
                                                 stack.cond_dim, rng));
    stack.output_heads.push_back(LinearParams::init(cfg.channels, cfg.n_sources, rng));
  }
  return stack;
}

std::vector<TensorPtr> SeparationStack::forward(const TensorPtr& x,
                                                const SpeakerCentroids& centroids) const {
  if (centroids.values->ndim() != 2 || centroids.values->dim(0) != cfg.n_sources)
    throw ContractViolation("separation stack: centroid count does not match n_sources");
  if (centroids.values->dim(1) * cfg.n_sources != cond_dim)
    throw ContractViolation("separation stack: centroid dimension mismatch");
  if (!centroids.values->all_finite())
    throw ContractViolation("separation stack: non-finite centroids");

  // Concatenated centroids, order-sensitive by design.
  auto cond = ops::reshape(centroids.values, {1, cond_dim});
  auto h = input_head.forward(as_column(x));
  std::vector<TensorPtr> outputs;
  outputs.reserve(blocks.size());
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    h = film_residual_block(h, cond, blocks[l], conditioning);
    outputs.push_back(output_heads[l].forward(h));
  }
  return outputs;
}

WavesplitModel WavesplitModel::init(const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.speaker.n_sources != cfg.separation.n_sources)
    throw ContractViolation("model: stacks disagree on n_sources");
  WavesplitModel model;
  model.cfg = cfg;
  RngStream rng(mix_seed(seed, 0x30de1ull));
  model.speaker = SpeakerStack::init(cfg.speaker, rng);
  model.separation =
      SeparationStack::init(cfg.separation, cfg.speaker.latent_dim, cfg.conditioning, rng);

  // Embedding rows start on the unit sphere, the geometry of the normalized
  // speaker vectors they are matched against.
  const std::int64_t d = cfg.speaker.latent_dim;
  model.embeddings = Tensor::create({cfg.n_train_speakers, d}, /*requires_grad=*/true);
  for (std::int64_t r = 0; r < cfg.n_train_speakers; ++r) {
    double norm2 = 0.0;
    for (std::int64_t k = 0; k < d; ++k) {
      const double v = rng.normal();
      model.embeddings->data[r * d + k] = static_cast<float>(v);
      norm2 += v * v;
    }
    const float inv = static_cast<float>(1.0 / std::sqrt(std::max(norm2, 1e-12)));
    for (std::int64_t k = 0; k < d; ++k) model.embeddings->data[r * d + k] *= inv;
  }
  model.alpha_raw = Tensor::scalar(0.0f, true);  // alpha = exp(0) = 1
  model.beta = Tensor::scalar(0.0f, true);
  return model;
}

std::vector<TensorPtr> WavesplitModel::parameters() const {
  std::vector<TensorPtr> out;
  for (auto& [name, p] : named_parameters()) out.push_back(p);
  return out;
}

std::vector<std::pair<std::string, TensorPtr>> WavesplitModel::named_parameters() const {
  std::vector<std::pair<std::string, TensorPtr>> out;
  auto add_linear = [&](const std::string& prefix, const LinearParams& lin) {
    out.emplace_back(prefix + ".w", lin.weight);
    out.emplace_back(prefix + ".b", lin.bias);
  };
  auto add_block = [&](const std::string& prefix, const ResidualBlockParams& blk) {
    out.emplace_back(prefix + ".conv_w", blk.conv_weight);
    out.emplace_back(prefix + ".conv_b", blk.conv_bias);
    out.emplace_back(prefix + ".prelu", blk.prelu_slope);
    out.emplace_back(prefix + ".ln_g", blk.ln_gain);
    out.emplace_back(prefix + ".ln_s", blk.ln_shift);
  };

  add_linear("speaker.in", speaker.input_head);
  for (std::size_t l = 0; l < speaker.blocks.size(); ++l)
    add_block("speaker.block" + std::to_string(l), speaker.blocks[l]);
  add_linear("speaker.head", speaker.vector_head);

  add_linear("sep.in", separation.input_head);
  for (std::size_t l = 0; l < separation.blocks.size(); ++l) {
    const std::string prefix = "sep.block" + std::to_string(l);
    add_block(prefix, separation.blocks[l].base);
    if (separation.conditioning == Conditioning::film)
      add_linear(prefix + ".film_a", separation.blocks[l].scale_map);
    add_linear(prefix + ".film_b", separation.blocks[l].shift_map);
    add_linear("sep.head" + std::to_string(l), separation.output_heads[l]);
  }

  out.emplace_back("embed.table", embeddings);
  out.emplace_back("dist.alpha_raw", alpha_raw);
  out.emplace_back("dist.beta", beta);
  return out;
}

SeparationResult separate(const WavesplitModel& model, const TensorPtr& mixture,
                          const KMeansConfig& kmeans_cfg) {
  NoGradGuard no_grad;
  SpeakerVectors vectors = model.speaker.forward(mixture);
  const std::int64_t points = vectors.length() * vectors.n_sources();
  const std::int64_t d = vectors.latent_dim();

  KMeansConfig cfg = kmeans_cfg;
  cfg.n_clusters = model.n_sources();
  KMeansResult clusters = kmeans(
      std::span<const float>(vectors.values->data.data(), static_cast<std::size_t>(points * d)),
      d, cfg);

  SpeakerCentroids centroids;
  centroids.values = Tensor::from(clusters.centroids, {model.n_sources(), d});
  centroids.provenance = CentroidProvenance::kmeans;
  centroids.degenerate = clusters.degenerate;

  auto layer_outputs = model.separation.forward(mixture, centroids);
  return SeparationResult{layer_outputs.back(), centroids};
}

SeparationResult separate(const WavesplitModel& model, const TensorPtr& mixture) {
  KMeansConfig cfg;
  cfg.n_clusters = model.n_sources();
  return separate(model, mixture, cfg);
}

}  // namespace wavesplit
