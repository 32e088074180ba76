#include "reference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace wavesplit::refk {

dvec conv1d(const dvec& x, std::int64_t T, std::int64_t c_in, const dvec& w, std::int64_t K,
            std::int64_t c_out, const dvec& b, std::int64_t dilation) {
  const std::int64_t center = (K - 1) / 2;
  dvec out(static_cast<std::size_t>(T * c_out));
  for (std::int64_t t = 0; t < T; ++t)
    for (std::int64_t o = 0; o < c_out; ++o) {
      double acc = b[o];
      for (std::int64_t k = 0; k < K; ++k) {
        const std::int64_t tt = t + (k - center) * dilation;
        if (tt < 0 || tt >= T) continue;
        for (std::int64_t i = 0; i < c_in; ++i)
          acc += x[tt * c_in + i] * w[(k * c_in + i) * c_out + o];
      }
      out[t * c_out + o] = acc;
    }
  return out;
}

dvec layer_norm(const dvec& x, std::int64_t T, std::int64_t C, const dvec& gain,
                const dvec& shift, double eps) {
  dvec out(static_cast<std::size_t>(T * C));
  for (std::int64_t t = 0; t < T; ++t) {
    double mu = 0.0;
    for (std::int64_t c = 0; c < C; ++c) mu += x[t * C + c];
    mu /= C;
    double var = 0.0;
    for (std::int64_t c = 0; c < C; ++c) {
      const double d = x[t * C + c] - mu;
      var += d * d;
    }
    var /= C;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::int64_t c = 0; c < C; ++c)
      out[t * C + c] = gain[c] * (x[t * C + c] - mu) * inv + shift[c];
  }
  return out;
}

dvec prelu(const dvec& x, std::int64_t T, std::int64_t C, const dvec& slope) {
  dvec out(x.size());
  for (std::int64_t t = 0; t < T; ++t)
    for (std::int64_t c = 0; c < C; ++c) {
      const double v = x[t * C + c];
      out[t * C + c] = v >= 0.0 ? v : slope[c] * v;
    }
  return out;
}

dvec l2_normalize(const dvec& x, std::int64_t rows, std::int64_t d, double eps) {
  dvec out(x.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < d; ++i) acc += x[r * d + i] * x[r * d + i];
    const double n = std::sqrt(acc);
    const double inv = 1.0 / std::max(n, eps);
    for (std::int64_t i = 0; i < d; ++i) out[r * d + i] = x[r * d + i] * inv;
  }
  return out;
}

double log_sum_exp(const dvec& v) {
  double m = v[0];
  for (double x : v) m = std::max(m, x);
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

dvec linear(const dvec& x, std::int64_t T, std::int64_t c_in, const dvec& w, std::int64_t c_out,
            const dvec& b) {
  dvec out(static_cast<std::size_t>(T * c_out));
  for (std::int64_t t = 0; t < T; ++t)
    for (std::int64_t o = 0; o < c_out; ++o) {
      double acc = b[o];
      for (std::int64_t i = 0; i < c_in; ++i) acc += x[t * c_in + i] * w[i * c_out + o];
      out[t * c_out + o] = acc;
    }
  return out;
}

dvec rowwise_affine(const dvec& x, std::int64_t T, std::int64_t C, const dvec& a, const dvec& b) {
  dvec out(x.size());
  for (std::int64_t t = 0; t < T; ++t)
    for (std::int64_t c = 0; c < C; ++c) out[t * C + c] = a[c] * x[t * C + c] + b[c];
  return out;
}

double sqdist(const double* a, const double* b, std::int64_t d) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < d; ++i) {
    const double diff = a[i] - b[i];
    acc += diff * diff;
  }
  return acc;
}

double distance_loss(const double* h_j, const double* e, const double* h_all, std::int64_t n,
                     std::int64_t d, std::int64_t j) {
  double loss = sqdist(h_j, e, d);
  for (std::int64_t k = 0; k < n; ++k) {
    if (k == j) continue;
    loss += std::max(0.0, 1.0 - sqdist(h_j, h_all + k * d, d));
  }
  return loss;
}

double classifier_loss(const double* h_j, std::int64_t target, const double* table,
                       std::int64_t rows, std::int64_t d, double alpha, double beta) {
  dvec neg(static_cast<std::size_t>(rows));
  double direct = 0.0;
  for (std::int64_t k = 0; k < rows; ++k) {
    const double dist = alpha * sqdist(h_j, table + k * d, d) + beta;
    neg[k] = -dist;
    if (k == target) direct = dist;
  }
  return direct + log_sum_exp(neg);
}

double speaker_loss(const dvec& h, std::int64_t T, std::int64_t N, std::int64_t d,
                    const std::vector<std::int64_t>& sel, const dvec& embeddings, std::int64_t M,
                    double alpha, double beta, SpeakerLossVariant variant,
                    std::vector<std::int32_t>* perms_out) {
  if (perms_out) perms_out->assign(static_cast<std::size_t>(T * N), 0);
  dvec table;
  std::int64_t rows = 0;
  std::vector<std::int64_t> target_pos(sel.size());
  if (variant == SpeakerLossVariant::global) {
    table = embeddings;
    rows = M;
    for (std::size_t i = 0; i < sel.size(); ++i) target_pos[i] = sel[i];
  } else {
    rows = N;
    table.resize(static_cast<std::size_t>(N * d));
    for (std::int64_t i = 0; i < N; ++i)
      std::copy(embeddings.begin() + sel[i] * d, embeddings.begin() + (sel[i] + 1) * d,
                table.begin() + i * d);
    for (std::size_t i = 0; i < sel.size(); ++i) target_pos[i] = static_cast<std::int64_t>(i);
  }

  double total = 0.0;
  std::vector<std::int64_t> perm(static_cast<std::size_t>(N));
  for (std::int64_t t = 0; t < T; ++t) {
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::max();
    std::vector<std::int64_t> best_perm = perm;
    do {
      double acc = 0.0;
      for (std::int64_t i = 0; i < N; ++i) {
        const double* hj = h.data() + (t * N + perm[i]) * d;
        if (variant == SpeakerLossVariant::distance)
          acc += distance_loss(hj, embeddings.data() + sel[i] * d, h.data() + t * N * d, N, d,
                               perm[i]);
        else
          acc += classifier_loss(hj, target_pos[i], table.data(), rows, d, alpha, beta);
      }
      if (acc < best) {
        best = acc;
        best_perm = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    total += best;
    if (perms_out)
      for (std::int64_t i = 0; i < N; ++i)
        (*perms_out)[t * N + i] = static_cast<std::int32_t>(best_perm[i]);
  }
  return total;
}

dvec training_centroids(const dvec& h, std::int64_t T, std::int64_t N, std::int64_t d,
                        const std::vector<std::int32_t>& perms) {
  dvec out(static_cast<std::size_t>(N * d), 0.0);
  for (std::int64_t t = 0; t < T; ++t)
    for (std::int64_t i = 0; i < N; ++i) {
      const std::int32_t j = perms[t * N + i];
      for (std::int64_t c = 0; c < d; ++c) out[i * d + c] += h[(t * N + j) * d + c];
    }
  for (auto& v : out) v /= static_cast<double>(T);
  return out;
}

double sdr(const dvec& est, const dvec& ref) {
  double re = 0.0, err = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    re += ref[i] * ref[i];
    const double d = ref[i] - est[i];
    err += d * d;
  }
  return -10.0 * std::log10(err + 1e-12) + 10.0 * std::log10(re);
}

double clipped_neg_sdr_mean(const dvec& est, const dvec& ref, std::int64_t T, std::int64_t N,
                            double tau) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < N; ++i) {
    dvec e(static_cast<std::size_t>(T)), r(static_cast<std::size_t>(T));
    for (std::int64_t t = 0; t < T; ++t) {
      e[t] = est[t * N + i];
      r[t] = ref[t * N + i];
    }
    acc += -std::min(tau, sdr(e, r));
  }
  return acc / static_cast<double>(N);
}

double reconstruction_loss(const std::vector<dvec>& layers, const dvec& ref, std::int64_t T,
                           std::int64_t N, double tau) {
  double acc = 0.0;
  for (const auto& layer : layers) acc += clipped_neg_sdr_mean(layer, ref, T, N, tau);
  return acc / static_cast<double>(layers.size());
}

double embedding_entropy(const dvec& e, std::int64_t m, std::int64_t d) {
  double total = 0.0;
  for (std::int64_t i = 0; i < m; ++i) {
    double best = std::numeric_limits<double>::max();
    for (std::int64_t j = 0; j < m; ++j) {
      if (j == i) continue;
      best = std::min(best, sqdist(e.data() + i * d, e.data() + j * d, d));
    }
    total -= std::log(std::max(std::sqrt(best), 1e-12));
  }
  return total;
}

RefModel RefModel::from(const WavesplitModel& model) {
  RefModel ref;
  ref.cfg = model.cfg;
  for (const auto& [name, tensor] : model.named_parameters()) {
    dvec v(tensor->data.begin(), tensor->data.end());
    ref.params.emplace(name, std::move(v));
  }
  return ref;
}

const dvec& RefModel::at(const std::string& name) const {
  auto it = params.find(name);
  if (it == params.end()) throw std::runtime_error("RefModel: missing parameter " + name);
  return it->second;
}

dvec speaker_stack(const RefModel& m, const dvec& x) {
  const auto& cfg = m.cfg.speaker;
  const std::int64_t T = static_cast<std::int64_t>(x.size());
  dvec h = linear(x, T, 1, m.at("speaker.in.w"), cfg.channels, m.at("speaker.in.b"));
  for (std::int64_t l = 0; l < cfg.layers; ++l) {
    const std::string p = "speaker.block" + std::to_string(l);
    dvec y = conv1d(h, T, cfg.channels, m.at(p + ".conv_w"), cfg.kernel, cfg.channels,
                    m.at(p + ".conv_b"), cfg.dilation(l));
    y = prelu(y, T, cfg.channels, m.at(p + ".prelu"));
    y = layer_norm(y, T, cfg.channels, m.at(p + ".ln_g"), m.at(p + ".ln_s"));
    for (std::size_t i = 0; i < h.size(); ++i) h[i] += y[i];
  }
  dvec v = linear(h, T, cfg.channels, m.at("speaker.head.w"), cfg.n_sources * cfg.latent_dim,
                  m.at("speaker.head.b"));
  return l2_normalize(v, T * cfg.n_sources, cfg.latent_dim);
}

std::vector<dvec> separation_stack(const RefModel& m, const dvec& x, const dvec& centroids) {
  const auto& cfg = m.cfg.separation;
  const std::int64_t T = static_cast<std::int64_t>(x.size());
  const std::int64_t cond_dim = static_cast<std::int64_t>(centroids.size());
  dvec h = linear(x, T, 1, m.at("sep.in.w"), cfg.channels, m.at("sep.in.b"));
  std::vector<dvec> outs;
  for (std::int64_t l = 0; l < cfg.layers; ++l) {
    const std::string p = "sep.block" + std::to_string(l);
    dvec y = conv1d(h, T, cfg.channels, m.at(p + ".conv_w"), cfg.kernel, cfg.channels,
                    m.at(p + ".conv_b"), cfg.dilation(l));
    dvec b = linear(centroids, 1, cond_dim, m.at(p + ".film_b.w"), cfg.channels,
                    m.at(p + ".film_b.b"));
    dvec a(static_cast<std::size_t>(cfg.channels), 1.0);
    if (m.cfg.conditioning == Conditioning::film)
      a = linear(centroids, 1, cond_dim, m.at(p + ".film_a.w"), cfg.channels,
                 m.at(p + ".film_a.b"));
    y = rowwise_affine(y, T, cfg.channels, a, b);
    y = prelu(y, T, cfg.channels, m.at(p + ".prelu"));
    y = layer_norm(y, T, cfg.channels, m.at(p + ".ln_g"), m.at(p + ".ln_s"));
    for (std::size_t i = 0; i < h.size(); ++i) h[i] += y[i];
    outs.push_back(linear(h, T, cfg.channels, m.at("sep.head" + std::to_string(l) + ".w"),
                          cfg.n_sources, m.at("sep.head" + std::to_string(l) + ".b")));
  }
  return outs;
}

double total_loss(const RefModel& m, const MixtureExample& example, const LossWeights& weights,
                  const CentroidRegularizerPlan* plan) {
  const std::int64_t T = example.length();
  const std::int64_t N = example.n_sources();
  const std::int64_t d = m.cfg.speaker.latent_dim;
  const std::int64_t M = m.cfg.n_train_speakers;

  dvec x(example.mixture.begin(), example.mixture.end());
  dvec h = speaker_stack(m, x);

  std::vector<std::int64_t> sel;
  for (int id : example.speaker_ids) sel.push_back(id - 1);
  const double alpha = std::exp(m.at("dist.alpha_raw")[0]);
  const double beta = m.at("dist.beta")[0];

  std::vector<std::int32_t> perms;
  const double l_speaker = speaker_loss(h, T, N, d, sel, m.at("embed.table"), M, alpha, beta,
                                        weights.loss_variant, &perms);

  dvec c = training_centroids(h, T, N, d, perms);
  if (plan != nullptr && !plan->trivial()) {
    if (!plan->noise.empty())
      for (std::int64_t i = 0; i < N * d; ++i) c[i] += plan->noise[i];
    for (std::int64_t i = 0; i < N; ++i) {
      double scale = plan->dropped_row == i ? 0.0 : 1.0;
      dvec add(static_cast<std::size_t>(d), 0.0);
      if (!plan->mix_donor[i].empty()) {
        const double lambda = plan->mix_lambda[i];
        scale *= lambda;
        for (std::int64_t k = 0; k < d; ++k) add[k] = (1.0 - lambda) * plan->mix_donor[i][k];
      }
      for (std::int64_t k = 0; k < d; ++k) c[i * d + k] = c[i * d + k] * scale + add[k];
    }
  }

  auto layers = separation_stack(m, x, c);
  dvec ref(static_cast<std::size_t>(T * N));
  for (std::int64_t i = 0; i < N; ++i)
    for (std::int64_t t = 0; t < T; ++t) ref[t * N + i] = example.sources[i][t];
  const double l_rec = reconstruction_loss(layers, ref, T, N, weights.sdr_clip);
  const double l_reg = embedding_entropy(m.at("embed.table"), M, d);
  return l_rec + weights.speaker_weight * l_speaker + weights.embed_reg_weight * l_reg;
}

}  // namespace wavesplit::refk
