#include "wavesplit/objective.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "wavesplit/errors.hpp"
#include "wavesplit/metrics.hpp"
#include "wavesplit/threading.hpp"

namespace wavesplit {

void LossWeights::validate() const {
  if (speaker_dropout_rate < 0.0 || speaker_dropout_rate > 1.0)
    throw ContractViolation("loss weights: dropout rate must be in [0, 1]");
  if (speaker_mixup_rate < 0.0 || speaker_mixup_rate > 1.0)
    throw ContractViolation("loss weights: mixup rate must be in [0, 1]");
  if (sdr_clip <= 0.0) throw ContractViolation("loss weights: sdr clip must be positive");
  if (noise_std < 0.0) throw ContractViolation("loss weights: noise std must be >= 0");
}

float distance_loss_value(std::span<const float> h_j, std::span<const float> e,
                          const float* h_all, std::int64_t n, std::int64_t d, std::int64_t j) {
  const float direct = ops::sqdist(h_j, e);
  float hinge = 0.0f;
  for (std::int64_t k = 0; k < n; ++k) {
    if (k == j) continue;
    const float q = ops::sqdist(h_j, std::span<const float>(h_all + k * d, h_j.size()));
    hinge += std::max(0.0f, 1.0f - q);
  }
  return direct + hinge;
}

float classifier_loss_value(std::span<const float> h_j, std::int64_t target, const float* table,
                            std::int64_t rows, std::int64_t d, float alpha, float beta) {
  std::vector<float> dist(static_cast<std::size_t>(rows));
  for (std::int64_t k = 0; k < rows; ++k)
    dist[k] = alpha * ops::sqdist(h_j, std::span<const float>(table + k * d, h_j.size())) + beta;
  const float partition = ops::log_sum_exp_neg(dist);
  return dist[target] + partition;
}

namespace {

std::vector<std::int64_t> permutation_identity(std::int64_t n) {
  std::vector<std::int64_t> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  return p;
}

}  // namespace

SpeakerLossResult speaker_loss(const SpeakerVectors& h_in, const std::vector<int>& speaker_ids,
                               const WavesplitModel& model, SpeakerLossVariant variant) {
  const TensorPtr& h = h_in.values;
  const TensorPtr& E = model.embeddings;
  if (h->ndim() != 3) throw ContractViolation("speaker_loss: expected h[T x N x d]");
  const std::int64_t T = h->dim(0), N = h->dim(1), d = h->dim(2);
  const std::int64_t M = E->dim(0);
  if (E->dim(1) != d) throw ContractViolation("speaker_loss: latent dim mismatch");
  if (static_cast<std::int64_t>(speaker_ids.size()) != N)
    throw ContractViolation("speaker_loss: one speaker id per source required");
  if (N > M) throw ContractViolation("speaker_loss: more sources than training speakers");
  for (std::size_t i = 0; i < speaker_ids.size(); ++i) {
    if (speaker_ids[i] < 1 || speaker_ids[i] > M)
      throw ContractViolation("speaker_loss: speaker id outside the embedding table");
    for (std::size_t j = i + 1; j < speaker_ids.size(); ++j)
      if (speaker_ids[i] == speaker_ids[j])
        throw ContractViolation("speaker_loss: duplicate speaker ids");
  }

  std::vector<std::int64_t> sel(static_cast<std::size_t>(N));
  for (std::int64_t i = 0; i < N; ++i) sel[i] = speaker_ids[i] - 1;

  const float alpha = std::exp(model.alpha_raw->data[0]);
  const float beta = model.beta->data[0];
  const bool classifier = variant != SpeakerLossVariant::distance;
  const std::int64_t K = variant == SpeakerLossVariant::global ? M : N;

  // Per-timestep distance caches kept for the backward pass.
  auto s_part = std::make_shared<std::vector<float>>();   // T x N x K (classifier)
  auto s_direct = std::make_shared<std::vector<float>>(); // T x N x N (distance)
  auto q_self = std::make_shared<std::vector<float>>();   // T x N x N (distance)
  if (classifier)
    s_part->assign(static_cast<std::size_t>(T * N * K), 0.0f);
  else {
    s_direct->assign(static_cast<std::size_t>(T * N * N), 0.0f);
    q_self->assign(static_cast<std::size_t>(T * N * N), 0.0f);
  }

  auto perms = std::make_shared<std::vector<std::int32_t>>(static_cast<std::size_t>(T * N), 0);
  std::vector<float> best_per_t(static_cast<std::size_t>(T), 0.0f);

  const float* hd = h->data.data();
  const float* ed = E->data.data();

  parallel_for(T, [&](std::int64_t lo, std::int64_t hi) {
    std::vector<float> lmat(static_cast<std::size_t>(N * N));
    std::vector<float> drow(static_cast<std::size_t>(K));
    for (std::int64_t t = lo; t < hi; ++t) {
      for (std::int64_t j = 0; j < N; ++j) {
        const std::span<const float> hj(hd + (t * N + j) * d, static_cast<std::size_t>(d));
        if (classifier) {
          float* srow = s_part->data() + (t * N + j) * K;
          for (std::int64_t k = 0; k < K; ++k) {
            const std::int64_t row = variant == SpeakerLossVariant::global ? k : sel[k];
            srow[k] = ops::sqdist(hj, std::span<const float>(ed + row * d,
                                                             static_cast<std::size_t>(d)));
            drow[k] = alpha * srow[k] + beta;
          }
          const float partition = ops::log_sum_exp_neg(drow);
          for (std::int64_t i = 0; i < N; ++i) {
            const std::int64_t pos = variant == SpeakerLossVariant::global ? sel[i] : i;
            lmat[j * N + i] = drow[pos] + partition;
          }
        } else {
          float* srow = s_direct->data() + (t * N + j) * N;
          float* qrow = q_self->data() + (t * N + j) * N;
          for (std::int64_t i = 0; i < N; ++i)
            srow[i] = ops::sqdist(hj, std::span<const float>(ed + sel[i] * d,
                                                             static_cast<std::size_t>(d)));
          float hinge = 0.0f;
          for (std::int64_t k = 0; k < N; ++k) {
            qrow[k] = ops::sqdist(hj, std::span<const float>(hd + (t * N + k) * d,
                                                             static_cast<std::size_t>(d)));
            if (k != j) hinge += std::max(0.0f, 1.0f - qrow[k]);
          }
          for (std::int64_t i = 0; i < N; ++i) lmat[j * N + i] = srow[i] + hinge;
        }
      }

      // Exhaustive assignment search, lexicographic order, first minimum wins.
      auto perm = permutation_identity(N);
      float best = 0.0f;
      bool first = true;
      std::vector<std::int64_t> best_perm = perm;
      do {
        float acc = 0.0f;
        for (std::int64_t i = 0; i < N; ++i) acc += lmat[perm[i] * N + i];
        if (first || acc < best) {
          first = false;
          best = acc;
          best_perm = perm;
        }
      } while (std::next_permutation(perm.begin(), perm.end()));
      best_per_t[t] = best;
      for (std::int64_t i = 0; i < N; ++i)
        (*perms)[t * N + i] = static_cast<std::int32_t>(best_perm[i]);
    }
  });

  float total = 0.0f;
  for (std::int64_t t = 0; t < T; ++t) total += best_per_t[t];
  auto out = Tensor::scalar(total);

  Tensor* self = out.get();
  Tensor* ph = h.get();
  Tensor* pe = E.get();
  Tensor* pa = model.alpha_raw.get();
  Tensor* pb = model.beta.get();
  std::vector<TensorPtr> parents = {h, E};
  if (classifier) {
    parents.push_back(model.alpha_raw);
    parents.push_back(model.beta);
  }
  ops::attach(out, std::move(parents),
              [self, ph, pe, pa, pb, s_part, s_direct, q_self, perms, sel, alpha, beta, variant,
               T, N, d, K, classifier] {
                const float g = self->grad[0];
                float* dh = ph->requires_grad ? ph->ensure_grad().data() : nullptr;
                float* de = pe->requires_grad ? pe->ensure_grad().data() : nullptr;
                const float* hd = ph->data.data();
                const float* ed = pe->data.data();
                double d_alpha_raw = 0.0, d_beta = 0.0;

                if (classifier) {
                  std::vector<double> w(static_cast<std::size_t>(K));
                  for (std::int64_t t = 0; t < T; ++t) {
                    // Which label each slot serves under the chosen permutation.
                    std::vector<std::int64_t> label_of(static_cast<std::size_t>(N));
                    for (std::int64_t i = 0; i < N; ++i) label_of[(*perms)[t * N + i]] = i;
                    for (std::int64_t j = 0; j < N; ++j) {
                      const float* srow = s_part->data() + (t * N + j) * K;
                      double m = -std::numeric_limits<double>::max();
                      for (std::int64_t k = 0; k < K; ++k)
                        m = std::max(m, -static_cast<double>(alpha * srow[k] + beta));
                      double z = 0.0;
                      for (std::int64_t k = 0; k < K; ++k) {
                        w[k] = std::exp(-static_cast<double>(alpha * srow[k] + beta) - m);
                        z += w[k];
                      }
                      const std::int64_t i = label_of[j];
                      const std::int64_t target =
                          variant == SpeakerLossVariant::global ? sel[i] : i;
                      for (std::int64_t k = 0; k < K; ++k) {
                        const double soft = w[k] / z;
                        const double coef = g * ((k == target ? 1.0 : 0.0) - soft);
                        d_alpha_raw += coef * alpha * srow[k];
                        d_beta += coef;
                        const float cc = static_cast<float>(coef * alpha);
                        if (cc == 0.0f) continue;
                        const std::int64_t row =
                            variant == SpeakerLossVariant::global ? k : sel[k];
                        const float* hj = hd + (t * N + j) * d;
                        const float* ek = ed + row * d;
                        float* dhj = dh ? dh + (t * N + j) * d : nullptr;
                        float* dek = de ? de + row * d : nullptr;
                        for (std::int64_t c = 0; c < d; ++c) {
                          const float diff = 2.0f * cc * (hj[c] - ek[c]);
                          if (dhj) dhj[c] += diff;
                          if (dek) dek[c] -= diff;
                        }
                      }
                    }
                  }
                } else {
                  for (std::int64_t t = 0; t < T; ++t) {
                    for (std::int64_t i = 0; i < N; ++i) {
                      const std::int64_t j = (*perms)[t * N + i];
                      const std::int64_t row = sel[i];
                      const float* hj = hd + (t * N + j) * d;
                      const float* ek = ed + row * d;
                      float* dhj = dh ? dh + (t * N + j) * d : nullptr;
                      float* dek = de ? de + row * d : nullptr;
                      for (std::int64_t c = 0; c < d; ++c) {
                        const float diff = 2.0f * g * (hj[c] - ek[c]);
                        if (dhj) dhj[c] += diff;
                        if (dek) dek[c] -= diff;
                      }
                    }
                    if (!dh) continue;
                    for (std::int64_t j = 0; j < N; ++j) {
                      const float* qrow = q_self->data() + (t * N + j) * N;
                      for (std::int64_t k = 0; k < N; ++k) {
                        if (k == j || qrow[k] >= 1.0f) continue;
                        const float* hj = hd + (t * N + j) * d;
                        const float* hk = hd + (t * N + k) * d;
                        float* dhj = dh + (t * N + j) * d;
                        float* dhk = dh + (t * N + k) * d;
                        for (std::int64_t c = 0; c < d; ++c) {
                          const float diff = 2.0f * g * (hj[c] - hk[c]);
                          dhj[c] -= diff;
                          dhk[c] += diff;
                        }
                      }
                    }
                  }
                }
                if (classifier && pa->requires_grad)
                  pa->ensure_grad()[0] += static_cast<float>(d_alpha_raw);
                if (classifier && pb->requires_grad)
                  pb->ensure_grad()[0] += static_cast<float>(d_beta);
              });

  SpeakerLossResult result;
  result.loss = out;
  result.perms = *perms;
  return result;
}

SpeakerCentroids training_centroids(const SpeakerVectors& h_in,
                                    const std::vector<std::int32_t>& perms) {
  const TensorPtr& h = h_in.values;
  const std::int64_t T = h->dim(0), N = h->dim(1), d = h->dim(2);
  if (static_cast<std::int64_t>(perms.size()) != T * N)
    throw ContractViolation("training_centroids: permutation shape mismatch");

  auto out = Tensor::create({N, d});
  {
    const float* hd = h->data.data();
    std::vector<double> acc(static_cast<std::size_t>(N * d), 0.0);
    for (std::int64_t t = 0; t < T; ++t)
      for (std::int64_t i = 0; i < N; ++i) {
        const std::int64_t j = perms[t * N + i];
        const float* src = hd + (t * N + j) * d;
        double* dst = acc.data() + i * d;
        for (std::int64_t c = 0; c < d; ++c) dst[c] += src[c];
      }
    for (std::int64_t i = 0; i < N * d; ++i)
      out->data[i] = static_cast<float>(acc[i] / static_cast<double>(T));
  }

  Tensor* self = out.get();
  auto perms_copy = std::make_shared<std::vector<std::int32_t>>(perms);
  ops::attach(out, {h}, [self, ph = h.get(), perms_copy, T, N, d] {
    float* dh = ph->ensure_grad().data();
    const float inv = 1.0f / static_cast<float>(T);
    for (std::int64_t t = 0; t < T; ++t)
      for (std::int64_t i = 0; i < N; ++i) {
        const std::int64_t j = (*perms_copy)[t * N + i];
        const float* g = self->grad.data() + i * d;
        float* dst = dh + (t * N + j) * d;
        for (std::int64_t c = 0; c < d; ++c) dst[c] += g[c] * inv;
      }
  });

  SpeakerCentroids centroids;
  centroids.values = out;
  centroids.provenance = CentroidProvenance::training_aggregate;
  return centroids;
}

bool CentroidRegularizerPlan::trivial() const {
  if (!noise.empty()) return false;
  if (dropped_row >= 0) return false;
  for (double l : mix_lambda)
    if (l != 1.0) return false;
  return true;
}

CentroidRegularizerPlan plan_centroid_regularizers(std::int64_t n, std::int64_t d,
                                                   const LossWeights& weights, RngStream& rng,
                                                   const DonorProvider& donor) {
  CentroidRegularizerPlan plan;
  plan.n = n;
  plan.d = d;
  plan.mix_lambda.assign(static_cast<std::size_t>(n), 1.0);
  plan.mix_donor.resize(static_cast<std::size_t>(n));

  if (weights.noise_std > 0.0) {
    plan.noise.resize(static_cast<std::size_t>(n * d));
    for (auto& v : plan.noise) v = static_cast<float>(rng.normal(0.0, weights.noise_std));
  }
  // Speaker dropout removes at most one centroid per example.
  if (weights.speaker_dropout_rate > 0.0 && rng.bernoulli(weights.speaker_dropout_rate))
    plan.dropped_row = rng.uniform_int(0, n - 1);
  if (weights.speaker_mixup_rate > 0.0 && donor) {
    for (std::int64_t i = 0; i < n; ++i) {
      if (!rng.bernoulli(weights.speaker_mixup_rate)) continue;
      auto row = donor(rng);
      if (!row || static_cast<std::int64_t>(row->size()) != d) continue;
      plan.mix_lambda[i] = rng.uniform(0.5, 1.0);
      plan.mix_donor[i] = std::move(*row);
    }
  }
  return plan;
}

TensorPtr regularize_centroids(const TensorPtr& centroids,
                               const CentroidRegularizerPlan& plan) {
  const std::int64_t n = centroids->dim(0), d = centroids->dim(1);
  if (plan.n != n || plan.d != d)
    throw ContractViolation("regularize_centroids: plan shape mismatch");
  if (plan.trivial()) return centroids;

  TensorPtr c = centroids;
  if (!plan.noise.empty())
    c = ops::add(c, Tensor::from(plan.noise, {n, d}));

  // Dropout and mixup fold into one per-row affine map: zeroed rows get
  // scale 0; mixed rows get scale lambda and a constant (1-lambda) * donor.
  bool any = plan.dropped_row >= 0;
  for (double l : plan.mix_lambda) any = any || l != 1.0;
  if (any) {
    auto scale_t = Tensor::full({n, d}, 1.0f);
    auto add_t = Tensor::zeros({n, d});
    for (std::int64_t i = 0; i < n; ++i) {
      float s = plan.dropped_row == i ? 0.0f : 1.0f;
      if (!plan.mix_donor[i].empty()) {
        const float lambda = static_cast<float>(plan.mix_lambda[i]);
        s *= lambda;
        for (std::int64_t k = 0; k < d; ++k)
          add_t->data[i * d + k] = (1.0f - lambda) * plan.mix_donor[i][k];
      }
      for (std::int64_t k = 0; k < d; ++k) scale_t->data[i * d + k] = s;
    }
    c = ops::add(ops::mul(c, scale_t), add_t);
  }
  return c;
}

namespace {

// -min(tau, SDR) averaged over channels for one layer output.
TensorPtr clipped_neg_sdr_mean(const TensorPtr& est, const TensorPtr& ref, double tau) {
  const std::int64_t T = est->dim(0), N = est->dim(1);
  if (ref->shape != est->shape)
    throw ContractViolation("reconstruction_loss: estimate/reference shape mismatch");

  auto err_energy = std::make_shared<std::vector<double>>(static_cast<std::size_t>(N));
  auto active = std::make_shared<std::vector<char>>(static_cast<std::size_t>(N));
  double acc = 0.0;
  for (std::int64_t i = 0; i < N; ++i) {
    double re = 0.0, err = 0.0;
    for (std::int64_t t = 0; t < T; ++t) {
      const double r = ref->data[t * N + i];
      const double e = est->data[t * N + i];
      re += r * r;
      err += (r - e) * (r - e);
    }
    if (re <= 0.0)
      throw ContractViolation("reconstruction_loss: all-zero reference channel");
    const double sdr = -10.0 * std::log10(err + metrics::kEps) + 10.0 * std::log10(re);
    (*err_energy)[i] = err;
    (*active)[i] = sdr < tau ? 1 : 0;
    acc += -std::min(tau, sdr);
  }
  auto out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(N)));

  Tensor* self = out.get();
  ops::attach(out, {est}, [self, pe = est.get(), pr = ref.get(), err_energy, active, T, N] {
    const float g = self->grad[0];
    float* de = pe->ensure_grad().data();
    constexpr double k10ln10 = 10.0 / 2.302585092994046;  // 10 / ln(10)
    for (std::int64_t i = 0; i < N; ++i) {
      if (!(*active)[i]) continue;  // clipped channel: zero gradient
      const double factor =
          g * (2.0 * k10ln10 / ((*err_energy)[i] + metrics::kEps)) / static_cast<double>(N);
      for (std::int64_t t = 0; t < T; ++t) {
        const double diff = static_cast<double>(pe->data[t * N + i]) - pr->data[t * N + i];
        de[t * N + i] += static_cast<float>(factor * diff);
      }
    }
  });
  return out;
}

}  // namespace

TensorPtr reconstruction_loss(const std::vector<TensorPtr>& per_layer_outputs,
                              const TensorPtr& references, double tau) {
  if (per_layer_outputs.empty())
    throw ContractViolation("reconstruction_loss: no layer outputs");
  TensorPtr acc;
  for (const auto& layer : per_layer_outputs) {
    auto term = clipped_neg_sdr_mean(layer, references, tau);
    acc = acc ? ops::add(acc, term) : term;
  }
  return ops::scale(acc, 1.0f / static_cast<float>(per_layer_outputs.size()));
}

TensorPtr embedding_entropy_reg(const TensorPtr& embeddings) {
  const std::int64_t m = embeddings->dim(0), d = embeddings->dim(1);
  if (m < 2) throw ContractViolation("embedding_entropy_reg: need at least two rows");
  constexpr double kFloor = 1e-12;

  auto nearest = std::make_shared<std::vector<std::int32_t>>(static_cast<std::size_t>(m));
  auto dist = std::make_shared<std::vector<double>>(static_cast<std::size_t>(m));
  const float* ed = embeddings->data.data();
  double acc = 0.0;
  for (std::int64_t i = 0; i < m; ++i) {
    double best = std::numeric_limits<double>::max();
    std::int64_t best_j = -1;
    for (std::int64_t j = 0; j < m; ++j) {
      if (j == i) continue;
      double sq = 0.0;
      for (std::int64_t c = 0; c < d; ++c) {
        const double diff = static_cast<double>(ed[i * d + c]) - ed[j * d + c];
        sq += diff * diff;
      }
      if (sq < best) {
        best = sq;
        best_j = j;
      }
    }
    const double dd = std::max(std::sqrt(best), kFloor);
    (*nearest)[i] = static_cast<std::int32_t>(best_j);
    (*dist)[i] = dd;
    acc -= std::log(dd);
  }
  auto out = Tensor::scalar(static_cast<float>(acc));

  Tensor* self = out.get();
  ops::attach(out, {embeddings}, [self, pe = embeddings.get(), nearest, dist, m, d] {
    const float g = self->grad[0];
    float* de = pe->ensure_grad().data();
    const float* ed = pe->data.data();
    for (std::int64_t i = 0; i < m; ++i) {
      const double dd = (*dist)[i];
      if (dd <= 1e-12) continue;  // floored: treated as constant
      const std::int64_t j = (*nearest)[i];
      const double factor = g / (dd * dd);  // d(-log||v||)/dv = -v / ||v||^2
      for (std::int64_t c = 0; c < d; ++c) {
        const double diff = static_cast<double>(ed[i * d + c]) - ed[j * d + c];
        de[i * d + c] -= static_cast<float>(factor * diff);
        de[j * d + c] += static_cast<float>(factor * diff);
      }
    }
  });
  return out;
}

void DonorPool::push(const TensorPtr& centroids) {
  const std::int64_t n = centroids->dim(0), d = centroids->dim(1);
  for (std::int64_t i = 0; i < n; ++i) {
    std::vector<float> row(centroids->data.begin() + i * d,
                           centroids->data.begin() + (i + 1) * d);
    if (rows_.size() < capacity_) {
      rows_.push_back(std::move(row));
    } else {
      rows_[next_] = std::move(row);
      next_ = (next_ + 1) % capacity_;
    }
  }
}

std::optional<std::vector<float>> DonorPool::draw(RngStream& rng) const {
  if (rows_.empty()) return std::nullopt;
  const std::int64_t idx = rng.uniform_int(0, static_cast<std::int64_t>(rows_.size()) - 1);
  return rows_[idx];
}

DonorProvider DonorPool::provider() const {
  return [this](RngStream& rng) { return draw(rng); };
}

TensorPtr references_tensor(const MixtureExample& example) {
  const std::int64_t T = example.length();
  const std::int64_t N = example.n_sources();
  auto y = Tensor::create({T, N});
  for (std::int64_t i = 0; i < N; ++i)
    for (std::int64_t t = 0; t < T; ++t) y->data[t * N + i] = example.sources[i][t];
  return y;
}

LossBreakdown example_loss(const MixtureExample& example, WavesplitModel& model,
                           const LossWeights& weights, RngStream& rng,
                           const DonorProvider& donor, bool train_mode) {
  weights.validate();
  if (example.n_sources() != model.n_sources())
    throw ContractViolation("example_loss: example/model n_sources mismatch");

  auto x = Tensor::from(example.mixture, {example.length()});
  auto y = references_tensor(example);

  SpeakerVectors h = model.speaker.forward(x);
  SpeakerLossResult spk = speaker_loss(h, example.speaker_ids, model, weights.loss_variant);
  SpeakerCentroids centroids = training_centroids(h, spk.perms);

  LossBreakdown parts;
  parts.centroids_detached = centroids.values->detached();

  TensorPtr cond_values = centroids.values;
  if (train_mode) {
    auto plan = plan_centroid_regularizers(model.n_sources(), model.latent_dim(), weights, rng,
                                           donor);
    cond_values = regularize_centroids(cond_values, plan);
  }
  SpeakerCentroids cond{cond_values, CentroidProvenance::training_aggregate, false};

  auto layer_outputs = model.separation.forward(x, cond);
  auto rec = reconstruction_loss(layer_outputs, y, weights.sdr_clip);
  auto reg = embedding_entropy_reg(model.embeddings);

  auto total =
      ops::add(ops::add(rec, ops::scale(spk.loss, static_cast<float>(weights.speaker_weight))),
               ops::scale(reg, static_cast<float>(weights.embed_reg_weight)));

  parts.total = total;
  parts.total_value = total->item();
  parts.speaker = spk.loss->item();
  parts.reconstr = rec->item();
  parts.reg = reg->item();
  parts.perms = std::move(spk.perms);
  return parts;
}

LossBreakdown total_loss(std::span<const MixtureExample> batch, WavesplitModel& model,
                         const LossWeights& weights, RngStream& rng) {
  if (batch.empty()) throw ContractViolation("total_loss: empty batch");
  DonorPool donors;
  TensorPtr acc;
  LossBreakdown out;
  for (const auto& example : batch) {
    LossBreakdown parts = example_loss(example, model, weights, rng, donors.provider());
    donors.push(parts.centroids_detached);
    acc = acc ? ops::add(acc, parts.total) : parts.total;
    out.speaker += parts.speaker;
    out.reconstr += parts.reconstr;
    out.reg += parts.reg;
  }
  const float inv = 1.0f / static_cast<float>(batch.size());
  out.total = ops::scale(acc, inv);
  out.total_value = out.total->item();
  out.speaker *= inv;
  out.reconstr *= inv;
  out.reg *= inv;
  return out;
}

}  // namespace wavesplit
