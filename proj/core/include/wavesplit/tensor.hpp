#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <unordered_set>
#include <vector>

namespace wavesplit {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense row-major float32 array participating in reverse-mode autodiff.
// Gradients live alongside the data and accumulate additively until zeroed.
class Tensor : public std::enable_shared_from_this<Tensor> {
 public:
  std::vector<std::int64_t> shape;
  std::vector<float> data;
  bool requires_grad = false;
  std::vector<float> grad;  // empty until first accumulation

  // Graph edges; populated only while a tape is recording.
  std::vector<TensorPtr> parents;
  std::function<void()> backward_fn;

  static TensorPtr create(std::vector<std::int64_t> shape, bool requires_grad = false);
  static TensorPtr from(std::vector<float> values, std::vector<std::int64_t> shape,
                        bool requires_grad = false);
  static TensorPtr scalar(float value, bool requires_grad = false);
  static TensorPtr zeros(std::vector<std::int64_t> shape, bool requires_grad = false);
  static TensorPtr full(std::vector<std::int64_t> shape, float value, bool requires_grad = false);

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  std::size_t ndim() const { return shape.size(); }
  std::int64_t dim(std::size_t i) const { return shape[i]; }

  float item() const;

  // Allocates (zero-filled) on first use; shape mirrors data.
  std::vector<float>& ensure_grad();
  void zero_grad();
  void accumulate_grad(std::span<const float> g);

  // Value copy detached from any graph.
  TensorPtr detached() const;

  bool all_finite() const;
};

// Records operations in forward order. The newest constructed Tape is the
// active one ops record onto; destruction restores the previous tape.
// One backward pass per tape; not shareable across threads.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(const TensorPtr& node);
  bool contains(const Tensor* node) const;
  std::size_t size() const { return nodes_.size(); }

  friend void backward(Tape& tape, const TensorPtr& loss);

 private:
  std::vector<TensorPtr> nodes_;
  std::unordered_set<const Tensor*> known_;
  Tape* prev_ = nullptr;
  bool spent_ = false;
};

// Runs the reverse pass from a scalar loss, writing/accumulating gradients
// into every requires_grad tensor the loss depends on.
void backward(Tape& tape, const TensorPtr& loss);

// Suspends gradient recording (and tape attachment) for the current scope.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* saved_;
};

namespace ops {

// Registers `out` as the result of an op with the given parents and backward
// rule. No-op (inference mode) when no tape is active or no parent is on a
// gradient path; returns whether the node was attached.
bool attach(const TensorPtr& out, std::vector<TensorPtr> parents, std::function<void()> fn);

// --- elementwise / scalar ---
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(const TensorPtr& a, float s);
TensorPtr offset(const TensorPtr& a, float s);
TensorPtr exp_elem(const TensorPtr& a);
// Broadcast by a single-element tensor node (keeps the scalar on the graph).
TensorPtr scale_by(const TensorPtr& a, const TensorPtr& s);
TensorPtr shift_by(const TensorPtr& a, const TensorPtr& s);

// --- reductions / shape ---
TensorPtr sum(const TensorPtr& a);
TensorPtr mean(const TensorPtr& a);
TensorPtr reshape(const TensorPtr& a, std::vector<std::int64_t> new_shape);

// --- network primitives ---
// x: [T x C_in], w: [K x C_in x C_out] with K odd, b: [C_out]. Centered
// "same" zero padding; output length equals T for any dilation >= 1.
TensorPtr conv1d_dilated(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b,
                         std::int64_t dilation);

// Per-timestep normalization over channels, then affine by gain/shift [C].
TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gain, const TensorPtr& shift,
                     float eps = 1e-5f);

// One learned slope per channel; x: [T x C], slope: [C].
TensorPtr prelu(const TensorPtr& x, const TensorPtr& slope);

// Normalizes vectors along the last axis; vectors with norm <= eps are
// divided by eps instead (zero stays zero).
TensorPtr l2_normalize(const TensorPtr& x, float eps = 1e-8f);

// 1-D input -> scalar, max-shifted for stability.
TensorPtr log_sum_exp(const TensorPtr& v);

// x: [T x C_in] * w: [C_in x C_out] + b: [C_out].
TensorPtr linear(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b);

// FiLM-style broadcast: out[t,c] = a[c] * x[t,c] + b[c].
TensorPtr rowwise_affine(const TensorPtr& x, const TensorPtr& a, const TensorPtr& b);

// Shared scalar kernels; fused ops and test oracles call the same code so
// their float32 results agree bit for bit.
float sqdist(std::span<const float> a, std::span<const float> b);
float log_sum_exp_neg(std::span<const float> d);  // log sum_k exp(-d[k]), max-shifted

}  // namespace ops
}  // namespace wavesplit
