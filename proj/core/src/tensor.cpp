#include "wavesplit/tensor.hpp"

#include <cmath>
#include <numeric>

#include "wavesplit/errors.hpp"

namespace wavesplit {
namespace {

std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) {
    if (d <= 0) throw ContractViolation("tensor dimensions must be positive");
    n *= d;
  }
  return n;
}

thread_local Tape* g_active_tape = nullptr;

}  // namespace

TensorPtr Tensor::create(std::vector<std::int64_t> shape, bool requires_grad) {
  auto t = std::make_shared<Tensor>();
  const std::int64_t n = shape_numel(shape);
  t->shape = std::move(shape);
  t->data.assign(static_cast<std::size_t>(n), 0.0f);
  t->requires_grad = requires_grad;
  return t;
}

TensorPtr Tensor::from(std::vector<float> values, std::vector<std::int64_t> shape,
                       bool requires_grad) {
  const std::int64_t n = shape_numel(shape);
  if (n != static_cast<std::int64_t>(values.size()))
    throw ContractViolation("tensor data length does not match shape");
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->data = std::move(values);
  t->requires_grad = requires_grad;
  return t;
}

TensorPtr Tensor::scalar(float value, bool requires_grad) {
  return from({value}, {1}, requires_grad);
}

TensorPtr Tensor::zeros(std::vector<std::int64_t> shape, bool requires_grad) {
  return create(std::move(shape), requires_grad);
}

TensorPtr Tensor::full(std::vector<std::int64_t> shape, float value, bool requires_grad) {
  auto t = create(std::move(shape), requires_grad);
  std::fill(t->data.begin(), t->data.end(), value);
  return t;
}

float Tensor::item() const {
  if (numel() != 1) throw ContractViolation("item() requires a single-element tensor");
  return data[0];
}

std::vector<float>& Tensor::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0f);
  return grad;
}

void Tensor::zero_grad() {
  if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0f);
}

void Tensor::accumulate_grad(std::span<const float> g) {
  if (g.size() != data.size()) throw ContractViolation("gradient shape mismatch");
  auto& dst = ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

TensorPtr Tensor::detached() const {
  auto t = std::make_shared<Tensor>();
  t->shape = shape;
  t->data = data;
  t->requires_grad = false;
  return t;
}

bool Tensor::all_finite() const {
  for (float v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

NoGradGuard::NoGradGuard() : saved_(g_active_tape) { g_active_tape = nullptr; }

NoGradGuard::~NoGradGuard() { g_active_tape = saved_; }

Tape::Tape() : prev_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(const TensorPtr& node) {
  nodes_.push_back(node);
  known_.insert(node.get());
}

bool Tape::contains(const Tensor* node) const { return known_.count(node) > 0; }

void backward(Tape& tape, const TensorPtr& loss) {
  if (!loss || loss->numel() != 1)
    throw ContractViolation("backward requires a scalar loss");
  if (tape.spent_)
    throw ContractViolation("tape already consumed by a previous backward pass");
  if (!tape.contains(loss.get()) && loss->requires_grad)
    throw ContractViolation("loss is not reachable from this tape");
  tape.spent_ = true;
  loss->ensure_grad()[0] += 1.0f;
  for (auto it = tape.nodes_.rbegin(); it != tape.nodes_.rend(); ++it) {
    Tensor* node = it->get();
    if (node->grad.empty()) continue;  // not on the path to the loss
    if (node->backward_fn) node->backward_fn();
  }
}

namespace ops {

bool attach(const TensorPtr& out, std::vector<TensorPtr> parents, std::function<void()> fn) {
  Tape* tape = Tape::active();
  if (tape == nullptr) return false;
  bool tracked = false;
  for (const auto& p : parents)
    if (p && p->requires_grad) tracked = true;
  if (!tracked) return false;
  out->parents = std::move(parents);
  out->backward_fn = std::move(fn);
  out->requires_grad = true;
  tape->record(out);
  return true;
}

}  // namespace ops
}  // namespace wavesplit
