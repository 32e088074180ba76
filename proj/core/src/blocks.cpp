#include "wavesplit/blocks.hpp"

#include <cmath>
#include <string>

#include "wavesplit/errors.hpp"

namespace wavesplit {
namespace {

TensorPtr uniform_fan_in(std::vector<std::int64_t> shape, std::int64_t fan_in, RngStream& rng) {
  auto t = Tensor::create(std::move(shape), /*requires_grad=*/true);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t->data) v = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace

LinearParams LinearParams::init(std::int64_t c_in, std::int64_t c_out, RngStream& rng) {
  LinearParams p;
  p.weight = uniform_fan_in({c_in, c_out}, c_in, rng);
  p.bias = Tensor::zeros({c_out}, true);
  return p;
}

ResidualBlockParams ResidualBlockParams::init(std::int64_t channels, std::int64_t kernel,
                                              std::int64_t dilation, RngStream& rng) {
  ResidualBlockParams p;
  p.conv_weight = uniform_fan_in({kernel, channels, channels}, kernel * channels, rng);
  p.conv_bias = Tensor::zeros({channels}, true);
  p.prelu_slope = Tensor::full({channels}, 0.25f, true);
  p.ln_gain = Tensor::full({channels}, 1.0f, true);
  p.ln_shift = Tensor::zeros({channels}, true);
  p.dilation = dilation;
  return p;
}

TensorPtr residual_block(const TensorPtr& x, const ResidualBlockParams& params) {
  if (x->ndim() != 2 || x->dim(1) != params.conv_weight->dim(1))
    throw ContractViolation("residual_block: channel mismatch");
  auto h = ops::conv1d_dilated(x, params.conv_weight, params.conv_bias, params.dilation);
  h = ops::prelu(h, params.prelu_slope);
  h = ops::layer_norm(h, params.ln_gain, params.ln_shift);
  return ops::add(x, h);
}

FiLMBlockParams FiLMBlockParams::init(std::int64_t channels, std::int64_t kernel,
                                      std::int64_t dilation, std::int64_t cond_dim,
                                      RngStream& rng) {
  FiLMBlockParams p;
  p.base = ResidualBlockParams::init(channels, kernel, dilation, rng);
  p.scale_map = LinearParams::init(cond_dim, channels, rng);
  p.shift_map = LinearParams::init(cond_dim, channels, rng);
  return p;
}

TensorPtr film_residual_block(const TensorPtr& x, const TensorPtr& cond,
                              const FiLMBlockParams& params, Conditioning mode) {
  if (x->ndim() != 2 || x->dim(1) != params.base.conv_weight->dim(1))
    throw ContractViolation("film_residual_block: channel mismatch");
  if (cond->numel() != params.shift_map.weight->dim(0))
    throw ContractViolation("film_residual_block: centroid vector length mismatch");
  const std::int64_t channels = x->dim(1);

  auto h = ops::conv1d_dilated(x, params.base.conv_weight, params.base.conv_bias,
                               params.base.dilation);
  auto b = ops::reshape(params.shift_map.forward(cond), {channels});
  TensorPtr a;
  if (mode == Conditioning::film) {
    a = ops::reshape(params.scale_map.forward(cond), {channels});
  } else {
    a = Tensor::full({channels}, 1.0f);  // bias-only conditioning
  }
  h = ops::rowwise_affine(h, a, b);
  h = ops::prelu(h, params.base.prelu_slope);
  h = ops::layer_norm(h, params.base.ln_gain, params.base.ln_shift);
  return ops::add(x, h);
}

Adam::Adam(std::vector<TensorPtr> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i]->data.size(), 0.0f);
    v_[i].assign(params_[i]->data.size(), 0.0f);
  }
}

void Adam::step() {
  // Validate every gradient before mutating any state: a rejected step must
  // leave parameters and moments untouched.
  for (const auto& p : params_) {
    for (float g : p->grad)
      if (!std::isfinite(g))
        throw NumericError("adam_step: non-finite gradient; step rejected");
  }

  double clip_scale = 1.0;
  if (cfg_.grad_clip > 0.0f) {
    double sq = 0.0;
    for (const auto& p : params_)
      for (float g : p->grad) sq += static_cast<double>(g) * g;
    const double norm = std::sqrt(sq);
    if (norm > cfg_.grad_clip) clip_scale = cfg_.grad_clip / norm;
  }

  ++t_;
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = *params_[i];
    if (p.grad.empty()) p.ensure_grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < p.data.size(); ++k) {
      const double g = static_cast<double>(p.grad[k]) * clip_scale;
      const double mk = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g;
      const double vk = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g * g;
      m[k] = static_cast<float>(mk);
      v[k] = static_cast<float>(vk);
      const double update = cfg_.lr * (mk / bc1) / (std::sqrt(vk / bc2) + cfg_.eps);
      p.data[k] = static_cast<float>(p.data[k] - update);
    }
  }
}

void Adam::zero_grad() {
  for (const auto& p : params_) p->zero_grad();
}

}  // namespace wavesplit
