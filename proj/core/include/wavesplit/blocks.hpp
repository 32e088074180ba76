#pragma once

#include <cstdint>
#include <vector>

#include "wavesplit/rng.hpp"
#include "wavesplit/tensor.hpp"

namespace wavesplit {

// Learned projection, used for 1x1 input/output heads and FiLM maps.
struct LinearParams {
  TensorPtr weight;  // C_in x C_out
  TensorPtr bias;    // C_out

  static LinearParams init(std::int64_t c_in, std::int64_t c_out, RngStream& rng);
  TensorPtr forward(const TensorPtr& x) const { return ops::linear(x, weight, bias); }
};

// x_{l+1} = x_l + lnorm(prelu(dconv(x_l)))
struct ResidualBlockParams {
  TensorPtr conv_weight;  // K x C x C
  TensorPtr conv_bias;    // C
  TensorPtr prelu_slope;  // C, initialized to 0.25
  TensorPtr ln_gain;      // C
  TensorPtr ln_shift;     // C
  std::int64_t dilation = 1;

  static ResidualBlockParams init(std::int64_t channels, std::int64_t kernel,
                                  std::int64_t dilation, RngStream& rng);
};

TensorPtr residual_block(const TensorPtr& x, const ResidualBlockParams& params);

enum class Conditioning { film, additive };

// Residual block modulated by the concatenated speaker centroids:
// x_{l+1} = x_l + lnorm(prelu(a * dconv(x_l) + b)), a = lin(c), b = lin'(c).
// Additive mode pins a to 1 and keeps only the bias path.
struct FiLMBlockParams {
  ResidualBlockParams base;
  LinearParams scale_map;  // (N*d) x C, unused in additive mode
  LinearParams shift_map;  // (N*d) x C

  static FiLMBlockParams init(std::int64_t channels, std::int64_t kernel, std::int64_t dilation,
                              std::int64_t cond_dim, RngStream& rng);
};

// cond: single row [1 x (N*d)] holding the concatenated centroids.
TensorPtr film_residual_block(const TensorPtr& x, const TensorPtr& cond,
                              const FiLMBlockParams& params, Conditioning mode);

struct AdamConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float grad_clip = 0.0f;  // global-norm clip; 0 disables
};

// Bias-corrected Adam over a fixed parameter list. Rejects non-finite
// gradients before touching any state.
class Adam {
 public:
  Adam(std::vector<TensorPtr> params, AdamConfig cfg);

  void step();
  void zero_grad();
  std::int64_t steps_taken() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<TensorPtr> params_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  AdamConfig cfg_;
  std::int64_t t_ = 0;
};

}  // namespace wavesplit
