#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "reference.hpp"
#include "wavesplit/blocks.hpp"
#include "wavesplit/model.hpp"
#include "wavesplit/objective.hpp"
#include "wavesplit/tensor.hpp"

namespace wavesplit::gradcheck {
namespace {

TensorPtr random_tensor(std::vector<std::int64_t> shape, RngStream& rng, double scale = 1.0,
                        bool requires_grad = true) {
  auto t = Tensor::create(std::move(shape), requires_grad);
  for (auto& v : t->data) v = static_cast<float>(rng.normal(0.0, scale));
  return t;
}

refk::dvec to_dvec(const TensorPtr& t) { return refk::dvec(t->data.begin(), t->data.end()); }

refk::dvec grad_dvec(const TensorPtr& t) {
  refk::dvec g(t->data.size(), 0.0);
  for (std::size_t i = 0; i < t->grad.size(); ++i) g[i] = t->grad[i];
  return g;
}

// Concatenated parameter view so one fd_compare covers several tensors.
struct PointPack {
  std::vector<double> point;
  std::vector<double> analytic;
  std::vector<std::pair<std::size_t, std::size_t>> spans;  // offset, length

  void add(const TensorPtr& t) {
    spans.emplace_back(point.size(), t->data.size());
    const auto vals = to_dvec(t);
    const auto grads = grad_dvec(t);
    point.insert(point.end(), vals.begin(), vals.end());
    analytic.insert(analytic.end(), grads.begin(), grads.end());
  }
  refk::dvec slice(std::size_t idx) const {
    const auto [off, len] = spans[idx];
    return refk::dvec(point.begin() + off, point.begin() + off + len);
  }
};

// Random positive weights make the scalarized loss sensitive to every output.
TensorPtr weighted_sum(const TensorPtr& out, const TensorPtr& weights) {
  return ops::sum(ops::mul(out, weights));
}

double ref_weighted(const refk::dvec& out, const refk::dvec& w) {
  double acc = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) acc += out[i] * w[i];
  return acc;
}

CheckResult check_conv1d(RngStream rng) {
  const std::int64_t T = 11, cin = 3, cout = 4, K = 3, dil = 2;
  auto x = random_tensor({T, cin}, rng);
  auto w = random_tensor({K, cin, cout}, rng, 0.5);
  auto b = random_tensor({cout}, rng, 0.2);
  auto lw = random_tensor({T, cout}, rng, 1.0, false);

  Tape tape;
  auto loss = weighted_sum(ops::conv1d_dilated(x, w, b, dil), lw);
  backward(tape, loss);

  PointPack pack;
  pack.add(x);
  pack.add(w);
  pack.add(b);
  const auto lwd = to_dvec(lw);
  auto loss_at = [&]() {
    const auto out = refk::conv1d(pack.slice(0), T, cin, pack.slice(1), K, cout, pack.slice(2),
                                  dil);
    return ref_weighted(out, lwd);
  };
  return fd_compare("conv1d_dilated", pack.analytic, pack.point, loss_at, {}, rng);
}

CheckResult check_layer_norm(RngStream rng) {
  const std::int64_t T = 7, C = 5;
  auto x = random_tensor({T, C}, rng);
  auto g = random_tensor({C}, rng, 0.5);
  auto s = random_tensor({C}, rng, 0.5);
  auto lw = random_tensor({T, C}, rng, 1.0, false);

  Tape tape;
  auto loss = weighted_sum(ops::layer_norm(x, g, s), lw);
  backward(tape, loss);

  PointPack pack;
  pack.add(x);
  pack.add(g);
  pack.add(s);
  const auto lwd = to_dvec(lw);
  auto loss_at = [&]() {
    return ref_weighted(refk::layer_norm(pack.slice(0), T, C, pack.slice(1), pack.slice(2)), lwd);
  };
  return fd_compare("layer_norm", pack.analytic, pack.point, loss_at, {}, rng);
}

CheckResult check_prelu(RngStream rng) {
  const std::int64_t T = 9, C = 4;
  auto x = random_tensor({T, C}, rng);
  auto slope = random_tensor({C}, rng, 0.3);
  auto lw = random_tensor({T, C}, rng, 1.0, false);

  Tape tape;
  auto loss = weighted_sum(ops::prelu(x, slope), lw);
  backward(tape, loss);

  PointPack pack;
  pack.add(x);
  pack.add(slope);
  const auto lwd = to_dvec(lw);
  auto loss_at = [&]() {
    return ref_weighted(refk::prelu(pack.slice(0), T, C, pack.slice(1)), lwd);
  };
  return fd_compare("prelu", pack.analytic, pack.point, loss_at, {}, rng);
}

CheckResult check_l2_normalize(RngStream rng) {
  const std::int64_t rows = 6, d = 5;
  auto x = random_tensor({rows, d}, rng);
  auto lw = random_tensor({rows, d}, rng, 1.0, false);

  Tape tape;
  auto loss = weighted_sum(ops::l2_normalize(x), lw);
  backward(tape, loss);

  PointPack pack;
  pack.add(x);
  const auto lwd = to_dvec(lw);
  auto loss_at = [&]() {
    return ref_weighted(refk::l2_normalize(pack.slice(0), rows, d), lwd);
  };
  return fd_compare("l2_normalize", pack.analytic, pack.point, loss_at, {}, rng);
}

CheckResult check_log_sum_exp(RngStream rng) {
  auto v = random_tensor({9}, rng, 2.0);
  Tape tape;
  auto loss = ops::log_sum_exp(v);
  backward(tape, loss);

  PointPack pack;
  pack.add(v);
  auto loss_at = [&]() { return refk::log_sum_exp(pack.slice(0)); };
  return fd_compare("log_sum_exp", pack.analytic, pack.point, loss_at, {}, rng);
}

CheckResult check_linear(RngStream rng) {
  const std::int64_t T = 8, cin = 4, cout = 3;
  auto x = random_tensor({T, cin}, rng);
  auto w = random_tensor({cin, cout}, rng, 0.5);
  auto b = random_tensor({cout}, rng, 0.2);
  auto lw = random_tensor({T, cout}, rng, 1.0, false);

  Tape tape;
  auto loss = weighted_sum(ops::linear(x, w, b), lw);
  backward(tape, loss);

  PointPack pack;
  pack.add(x);
  pack.add(w);
  pack.add(b);
  const auto lwd = to_dvec(lw);
  auto loss_at = [&]() {
    return ref_weighted(refk::linear(pack.slice(0), T, cin, pack.slice(1), cout, pack.slice(2)),
                        lwd);
  };
  return fd_compare("linear", pack.analytic, pack.point, loss_at, {}, rng);
}

CheckResult check_rowwise_affine(RngStream rng) {
  const std::int64_t T = 8, C = 5;
  auto x = random_tensor({T, C}, rng);
  auto a = random_tensor({C}, rng, 0.7);
  auto b = random_tensor({C}, rng, 0.4);
  auto lw = random_tensor({T, C}, rng, 1.0, false);

  Tape tape;
  auto loss = weighted_sum(ops::rowwise_affine(x, a, b), lw);
  backward(tape, loss);

  PointPack pack;
  pack.add(x);
  pack.add(a);
  pack.add(b);
  const auto lwd = to_dvec(lw);
  auto loss_at = [&]() {
    return ref_weighted(refk::rowwise_affine(pack.slice(0), T, C, pack.slice(1), pack.slice(2)),
                        lwd);
  };
  return fd_compare("rowwise_affine", pack.analytic, pack.point, loss_at, {}, rng);
}

struct TinySetup {
  WavesplitModel model;
  MixtureExample example;
  LossWeights weights;
};

TinySetup tiny_setup(RngStream& rng, SpeakerLossVariant variant) {
  ModelConfig cfg;
  cfg.speaker = {.layers = 2, .channels = 6, .latent_dim = 4, .n_sources = 2, .kernel = 3};
  cfg.separation = {.layers = 2, .channels = 6, .n_sources = 2, .kernel = 3};
  cfg.n_train_speakers = 5;
  TinySetup s{WavesplitModel::init(cfg, rng.next_u64()), {}, {}};

  const std::int64_t T = 14;
  s.example.id = "tiny";
  s.example.sample_rate = 100;
  s.example.speaker_ids = {2, 4};
  for (int i = 0; i < 2; ++i) {
    std::vector<float> src(T);
    for (auto& v : src) v = static_cast<float>(rng.normal(0.0, 0.1));
    s.example.sources.push_back(std::move(src));
  }
  s.example.mixture.assign(T, 0.0f);
  for (const auto& src : s.example.sources)
    for (std::int64_t t = 0; t < T; ++t) s.example.mixture[t] += src[t];

  s.weights.loss_variant = variant;
  s.weights.sdr_clip = 30.0;
  return s;
}

CheckResult check_speaker_loss(RngStream rng, SpeakerLossVariant variant, const char* name) {
  auto setup = tiny_setup(rng, variant);
  const std::int64_t T = 10, N = 2, d = setup.model.latent_dim();
  auto h = random_tensor({T, N, d}, rng, 0.6);

  Tape tape;
  auto result = speaker_loss(SpeakerVectors{h}, setup.example.speaker_ids, setup.model, variant);
  backward(tape, result.loss);

  PointPack pack;
  pack.add(h);
  pack.add(setup.model.embeddings);
  pack.add(setup.model.alpha_raw);
  pack.add(setup.model.beta);
  std::vector<std::int64_t> sel = {1, 3};
  const std::int64_t M = setup.model.cfg.n_train_speakers;
  auto loss_at = [&]() {
    const double alpha = std::exp(pack.point[pack.spans[2].first]);
    const double beta = pack.point[pack.spans[3].first];
    return refk::speaker_loss(pack.slice(0), T, N, d, sel, pack.slice(1), M, alpha, beta,
                              variant);
  };
  return fd_compare(name, pack.analytic, pack.point, loss_at, {}, rng);
}

CheckResult check_residual_block(RngStream rng) {
  const std::int64_t T = 10, C = 5;
  auto params = ResidualBlockParams::init(C, 3, 2, rng);
  auto x = random_tensor({T, C}, rng);
  auto lw = random_tensor({T, C}, rng, 1.0, false);

  Tape tape;
  auto loss = weighted_sum(residual_block(x, params), lw);
  backward(tape, loss);

  PointPack pack;
  pack.add(x);
  pack.add(params.conv_weight);
  pack.add(params.conv_bias);
  pack.add(params.prelu_slope);
  pack.add(params.ln_gain);
  pack.add(params.ln_shift);
  const auto lwd = to_dvec(lw);
  auto loss_at = [&]() {
    auto y = refk::conv1d(pack.slice(0), T, C, pack.slice(1), 3, C, pack.slice(2), 2);
    y = refk::prelu(y, T, C, pack.slice(3));
    y = refk::layer_norm(y, T, C, pack.slice(4), pack.slice(5));
    auto x0 = pack.slice(0);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += x0[i];
    return ref_weighted(y, lwd);
  };
  return fd_compare("residual_block", pack.analytic, pack.point, loss_at, {}, rng);
}

CheckResult check_film_block(RngStream rng) {
  const std::int64_t T = 10, C = 5, cond_dim = 6;
  auto params = FiLMBlockParams::init(C, 3, 2, cond_dim, rng);
  auto x = random_tensor({T, C}, rng);
  auto cond = random_tensor({1, cond_dim}, rng, 0.5);
  auto lw = random_tensor({T, C}, rng, 1.0, false);

  Tape tape;
  auto loss = weighted_sum(film_residual_block(x, cond, params, Conditioning::film), lw);
  backward(tape, loss);

  PointPack pack;
  pack.add(x);
  pack.add(cond);
  pack.add(params.base.conv_weight);
  pack.add(params.base.conv_bias);
  pack.add(params.scale_map.weight);
  pack.add(params.scale_map.bias);
  pack.add(params.shift_map.weight);
  pack.add(params.shift_map.bias);
  const auto lwd = to_dvec(lw);
  auto loss_at = [&]() {
    auto y = refk::conv1d(pack.slice(0), T, C, pack.slice(2), 3, C, pack.slice(3), 2);
    auto a = refk::linear(pack.slice(1), 1, cond_dim, pack.slice(4), C, pack.slice(5));
    auto b = refk::linear(pack.slice(1), 1, cond_dim, pack.slice(6), C, pack.slice(7));
    y = refk::rowwise_affine(y, T, C, a, b);
    y = refk::prelu(y, T, C, to_dvec(params.base.prelu_slope));
    y = refk::layer_norm(y, T, C, to_dvec(params.base.ln_gain), to_dvec(params.base.ln_shift));
    auto x0 = pack.slice(0);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += x0[i];
    return ref_weighted(y, lwd);
  };
  return fd_compare("film_residual_block", pack.analytic, pack.point, loss_at, {}, rng);
}

CheckResult check_reconstruction(RngStream rng) {
  const std::int64_t T = 16, N = 2;
  std::vector<TensorPtr> layers;
  for (int l = 0; l < 3; ++l) layers.push_back(random_tensor({T, N}, rng, 0.3));
  auto ref = random_tensor({T, N}, rng, 0.3, false);

  Tape tape;
  auto loss = reconstruction_loss(layers, ref, 30.0);
  backward(tape, loss);

  PointPack pack;
  for (auto& l : layers) pack.add(l);
  const auto refd = to_dvec(ref);
  auto loss_at = [&]() {
    std::vector<refk::dvec> ls;
    for (std::size_t i = 0; i < layers.size(); ++i) ls.push_back(pack.slice(i));
    return refk::reconstruction_loss(ls, refd, T, N, 30.0);
  };
  return fd_compare("reconstruction_loss", pack.analytic, pack.point, loss_at, {}, rng);
}

CheckResult check_embedding_entropy(RngStream rng) {
  const std::int64_t M = 6, d = 4;
  auto e = random_tensor({M, d}, rng, 0.8);
  Tape tape;
  auto loss = embedding_entropy_reg(e);
  backward(tape, loss);

  PointPack pack;
  pack.add(e);
  auto loss_at = [&]() { return refk::embedding_entropy(pack.slice(0), M, d); };
  return fd_compare("embedding_entropy_reg", pack.analytic, pack.point, loss_at, {}, rng);
}

CheckResult check_training_centroids(RngStream rng) {
  const std::int64_t T = 9, N = 2, d = 4;
  auto h = random_tensor({T, N, d}, rng, 0.5);
  std::vector<std::int32_t> perms(static_cast<std::size_t>(T * N));
  for (std::int64_t t = 0; t < T; ++t) {
    const bool swap = rng.bernoulli(0.5);
    perms[t * N + 0] = swap ? 1 : 0;
    perms[t * N + 1] = swap ? 0 : 1;
  }
  auto lw = random_tensor({N, d}, rng, 1.0, false);

  Tape tape;
  auto cents = training_centroids(SpeakerVectors{h}, perms);
  auto loss = weighted_sum(cents.values, lw);
  backward(tape, loss);

  PointPack pack;
  pack.add(h);
  const auto lwd = to_dvec(lw);
  auto loss_at = [&]() {
    return ref_weighted(refk::training_centroids(pack.slice(0), T, N, d, perms), lwd);
  };
  return fd_compare("training_centroids", pack.analytic, pack.point, loss_at, {}, rng);
}

CheckResult check_total_loss(RngStream rng) {
  auto setup = tiny_setup(rng, SpeakerLossVariant::global);
  auto& model = setup.model;
  const auto& ex = setup.example;

  // Fixed regularizer draws shared between the engine and the reference.
  RngStream plan_rng = rng.fork(0xabc);
  DonorPool donors;
  {
    auto fake = Tensor::create({model.n_sources(), model.latent_dim()});
    for (auto& v : fake->data) v = static_cast<float>(plan_rng.normal(0.0, 0.4));
    donors.push(fake);
  }
  auto plan = plan_centroid_regularizers(model.n_sources(), model.latent_dim(), setup.weights,
                                         plan_rng, donors.provider());

  Tape tape;
  auto x = Tensor::from(ex.mixture, {ex.length()});
  auto y = references_tensor(ex);
  SpeakerVectors h = model.speaker.forward(x);
  auto spk = speaker_loss(h, ex.speaker_ids, model, setup.weights.loss_variant);
  auto cents = training_centroids(h, spk.perms);
  auto cond = regularize_centroids(cents.values, plan);
  auto outs = model.separation.forward(
      x, SpeakerCentroids{cond, CentroidProvenance::training_aggregate, false});
  auto rec = reconstruction_loss(outs, y, setup.weights.sdr_clip);
  auto reg = embedding_entropy_reg(model.embeddings);
  auto total = ops::add(
      ops::add(rec, ops::scale(spk.loss, static_cast<float>(setup.weights.speaker_weight))),
      ops::scale(reg, static_cast<float>(setup.weights.embed_reg_weight)));
  backward(tape, total);

  PointPack pack;
  std::vector<std::string> names;
  for (const auto& [name, p] : model.named_parameters()) {
    names.push_back(name);
    pack.add(p);
  }
  refk::RefModel ref = refk::RefModel::from(model);
  auto loss_at = [&]() {
    for (std::size_t i = 0; i < names.size(); ++i) ref.params[names[i]] = pack.slice(i);
    return refk::total_loss(ref, ex, setup.weights, &plan);
  };
  FdConfig cfg;
  cfg.max_coords = 160;  // sampled across every parameter tensor
  return fd_compare("total_loss", pack.analytic, pack.point, loss_at, cfg, rng);
}

}  // namespace

CheckResult fd_compare(const std::string& name, const std::vector<double>& analytic,
                       std::vector<double>& point, const std::function<double()>& loss_at,
                       const FdConfig& cfg, RngStream& rng) {
  CheckResult result;
  result.name = name;

  std::vector<std::size_t> coords(point.size());
  std::iota(coords.begin(), coords.end(), 0);
  if (cfg.max_coords > 0 && coords.size() > static_cast<std::size_t>(cfg.max_coords)) {
    for (std::size_t i = coords.size(); i > 1; --i)
      std::swap(coords[i - 1], coords[rng.uniform_int(0, static_cast<std::int64_t>(i) - 1)]);
    coords.resize(static_cast<std::size_t>(cfg.max_coords));
  }

  for (std::size_t k : coords) {
    const double saved = point[k];
    point[k] = saved + cfg.h;
    const double f_plus = loss_at();
    point[k] = saved - cfg.h;
    const double f_minus = loss_at();
    point[k] = saved;
    const double fd = (f_plus - f_minus) / (2.0 * cfg.h);
    const double a = analytic[k];
    const double err = std::abs(a - fd);
    const double scale = std::max(std::abs(a), std::abs(fd));
    const double rel = err / std::max(scale, 1e-12);
    ++result.checked;
    const bool ok = err <= std::max(cfg.rel_tol * scale, cfg.abs_tol);
    if (!ok) ++result.failed;
    if (scale > cfg.abs_tol) result.max_rel_err = std::max(result.max_rel_err, rel);
  }
  return result;
}

std::vector<CheckResult> run_all(std::uint64_t seed) {
  RngStream rng(mix_seed(seed, 0x6c0de));
  std::vector<CheckResult> results;
  results.push_back(check_conv1d(rng.fork(1)));
  results.push_back(check_layer_norm(rng.fork(2)));
  results.push_back(check_prelu(rng.fork(3)));
  results.push_back(check_l2_normalize(rng.fork(4)));
  results.push_back(check_log_sum_exp(rng.fork(5)));
  results.push_back(check_linear(rng.fork(6)));
  results.push_back(check_rowwise_affine(rng.fork(7)));
  results.push_back(check_residual_block(rng.fork(8)));
  results.push_back(check_film_block(rng.fork(9)));
  results.push_back(check_speaker_loss(rng.fork(10), SpeakerLossVariant::distance,
                                       "speaker_loss[distance]"));
  results.push_back(
      check_speaker_loss(rng.fork(11), SpeakerLossVariant::local, "speaker_loss[local]"));
  results.push_back(
      check_speaker_loss(rng.fork(12), SpeakerLossVariant::global, "speaker_loss[global]"));
  results.push_back(check_training_centroids(rng.fork(13)));
  results.push_back(check_reconstruction(rng.fork(14)));
  results.push_back(check_embedding_entropy(rng.fork(15)));
  results.push_back(check_total_loss(rng.fork(16)));
  return results;
}

bool all_passed(const std::vector<CheckResult>& results) {
  for (const auto& r : results)
    if (!r.passed()) return false;
  return true;
}

std::string format_table(const std::vector<CheckResult>& results) {
  std::ostringstream os;
  for (const auto& r : results) {
    os << (r.passed() ? "PASS" : "FAIL") << '\t' << r.name << '\t' << r.checked << " coords\t"
       << "max_rel_err=" << r.max_rel_err << '\n';
  }
  return os.str();
}

}  // namespace wavesplit::gradcheck
