#include "wavesplit/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>

#include "wavesplit/checkpoint.hpp"
#include "wavesplit/errors.hpp"

namespace wavesplit {

void TrainConfig::validate(int sample_rate) const {
  if (window_seconds < 0.75 - 1e-9)
    throw ContractViolation("train config: window must be at least 750 ms");
  if (steps < 1) throw ContractViolation("train config: steps must be >= 1");
  if (batch_size < 1) throw ContractViolation("train config: batch size must be >= 1");
  if (window_samples(sample_rate) < 1)
    throw ContractViolation("train config: empty window");
  weights.validate();
}

std::int64_t TrainConfig::window_samples(int sample_rate) const {
  return static_cast<std::int64_t>(window_seconds * sample_rate + 0.5);
}

Trainer::Trainer(WavesplitModel& model, TrainConfig cfg)
    : model_(model),
      cfg_(cfg),
      optimizer_(model.parameters(),
                 AdamConfig{.lr = static_cast<float>(cfg.lr),
                            .grad_clip = static_cast<float>(cfg.grad_clip)}),
      rng_(mix_seed(cfg.seed, 0x77a1ull)) {}

namespace {

// Window an example and apply a source permutation to it (the lazy form of
// permutation replication: every (example, permutation) pair is one visit).
MixtureExample windowed_permuted(const MixtureExample& base, std::int64_t window,
                                 const std::vector<int>& perm, RngStream& rng) {
  MixtureExample w = sample_window(base, window, rng);
  if (perm.empty()) return w;
  MixtureExample out;
  out.id = w.id;
  out.mixture = std::move(w.mixture);
  out.sample_rate = w.sample_rate;
  out.noise = std::move(w.noise);
  out.padded = w.padded;
  for (int p : perm) {
    out.sources.push_back(std::move(w.sources[p]));
    out.speaker_ids.push_back(w.speaker_ids[p]);
  }
  return out;
}

std::vector<std::vector<int>> all_perms(int n) {
  std::vector<int> p(n);
  for (int i = 0; i < n; ++i) p[i] = i;
  std::vector<std::vector<int>> out;
  do {
    out.push_back(p);
  } while (std::next_permutation(p.begin(), p.end()));
  return out;
}

const char* worst_component(const LossBreakdown& parts) {
  if (!std::isfinite(parts.speaker)) return "L_speaker";
  if (!std::isfinite(parts.reconstr)) return "L_reconstr";
  if (!std::isfinite(parts.reg)) return "l_reg";
  return "total";
}

}  // namespace

TrainStats Trainer::run_steps(std::span<const MixtureExample> train,
                              std::span<const MixtureExample> valid, bool single_epoch) {
  if (train.empty()) throw ContractViolation("train: empty training set");
  const int sample_rate = train[0].sample_rate;
  cfg_.validate(sample_rate);
  const std::int64_t window = cfg_.window_samples(sample_rate);

  std::unique_ptr<DynamicMixer> mixer;
  if (cfg_.dynamic_mixing) {
    mixer = std::make_unique<DynamicMixer>(
        std::vector<MixtureExample>(train.begin(), train.end()), window,
        cfg_.dynamic_gain_range_db, rng_.fork(0xd124));
  }

  const auto perms = all_perms(static_cast<int>(model_.n_sources()));
  TrainStats totals;
  TrainStats window_stats;  // since the last log line
  RngStream data_rng = rng_.fork(0xda7a);

  // (example, permutation) visit order; reshuffled each epoch.
  std::vector<std::pair<std::int32_t, std::int32_t>> order;
  if (!cfg_.dynamic_mixing) {
    for (std::int32_t e = 0; e < static_cast<std::int32_t>(train.size()); ++e)
      for (std::int32_t p = 0; p < static_cast<std::int32_t>(perms.size()); ++p)
        order.emplace_back(e, p);
  }

  std::size_t cursor = order.size();  // forces a shuffle on first use
  while (steps_done_ < cfg_.steps) {
    // Assemble one batch of windows.
    std::vector<MixtureExample> batch;
    for (std::int64_t b = 0; b < cfg_.batch_size; ++b) {
      if (cfg_.dynamic_mixing) {
        batch.push_back(mixer->next());
        continue;
      }
      if (cursor >= order.size()) {
        // Fisher-Yates reshuffle at each epoch boundary.
        for (std::size_t i = order.size(); i > 1; --i)
          std::swap(order[i - 1],
                    order[data_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1)]);
        cursor = 0;
      }
      const auto [e, p] = order[cursor++];
      batch.push_back(windowed_permuted(train[e], window, perms[p], data_rng));
    }

    // Gradient accumulation example by example keeps one tape alive at a time.
    const float inv_batch = 1.0f / static_cast<float>(batch.size());
    double loss = 0, spk = 0, rec = 0, reg = 0;
    for (const auto& example : batch) {
      Tape tape;
      LossBreakdown parts =
          example_loss(example, model_, cfg_.weights, rng_, donors_.provider());
      if (!std::isfinite(parts.total_value))
        throw NumericError(std::string("train: non-finite ") + worst_component(parts) +
                           " at step " + std::to_string(steps_done_ + 1));
      donors_.push(parts.centroids_detached);
      auto scaled = ops::scale(parts.total, inv_batch);
      backward(tape, scaled);
      loss += parts.total_value;
      spk += parts.speaker;
      rec += parts.reconstr;
      reg += parts.reg;
    }
    optimizer_.step();
    optimizer_.zero_grad();

    const double inv = 1.0 / static_cast<double>(batch.size());
    for (TrainStats* s : {&totals, &window_stats}) {
      s->loss += loss * inv;
      s->speaker += spk * inv;
      s->reconstr += rec * inv;
      s->reg += reg * inv;
      s->steps += 1;
    }
    ++steps_done_;

    if (cfg_.valid_interval > 0 && steps_done_ % cfg_.valid_interval == 0)
      maybe_validate_and_log(valid, window_stats);

    if (single_epoch && !cfg_.dynamic_mixing && cursor >= order.size()) break;
  }

  if (totals.steps > 0) {
    totals.loss /= totals.steps;
    totals.speaker /= totals.steps;
    totals.reconstr /= totals.steps;
    totals.reg /= totals.steps;
  }
  totals.best_valid_dsisdr = best_valid_;
  totals.has_validation = has_best_;
  return totals;
}

void Trainer::maybe_validate_and_log(std::span<const MixtureExample> valid,
                                     TrainStats& window_stats) {
  double valid_dsisdr = std::nan("");
  if (!valid.empty()) {
    metrics::EvalReport report = validate(valid);
    valid_dsisdr = report.mean_delta_si_sdr;
    if (!has_best_ || valid_dsisdr > best_valid_) {
      has_best_ = true;
      best_valid_ = valid_dsisdr;
      if (!cfg_.out_dir.empty())
        save_checkpoint(cfg_.out_dir / "best.ckpt", model_);
    }
  }
  const double n = std::max<std::int64_t>(window_stats.steps, 1);
  std::ostringstream line;
  line.precision(6);
  line << steps_done_ << '\t' << window_stats.loss / n << '\t' << window_stats.speaker / n
       << '\t' << window_stats.reconstr / n << '\t' << window_stats.reg / n << '\t';
  if (std::isnan(valid_dsisdr))
    line << "-";
  else
    line << valid_dsisdr;
  line << '\n';
  log_ += line.str();
  if (!cfg_.out_dir.empty()) {
    std::ofstream os(cfg_.out_dir / "train.log", std::ios::app);
    os << line.str();
  }
  window_stats = TrainStats{};
}

TrainStats Trainer::train_epoch(std::span<const MixtureExample> train) {
  return run_steps(train, {}, /*single_epoch=*/true);
}

TrainStats Trainer::run(std::span<const MixtureExample> train,
                        std::span<const MixtureExample> valid) {
  if (!cfg_.out_dir.empty()) std::filesystem::create_directories(cfg_.out_dir);
  TrainStats stats = run_steps(train, valid, /*single_epoch=*/false);
  if (!cfg_.out_dir.empty()) {
    save_checkpoint(cfg_.out_dir / "last.ckpt", model_);
    if (!has_best_) save_checkpoint(cfg_.out_dir / "best.ckpt", model_);
  }
  return stats;
}

metrics::EvalReport Trainer::validate(std::span<const MixtureExample> valid_set) {
  std::span<const MixtureExample> subset = valid_set;
  if (cfg_.valid_max_examples > 0 &&
      static_cast<std::int64_t>(valid_set.size()) > cfg_.valid_max_examples)
    subset = valid_set.subspan(0, cfg_.valid_max_examples);
  return evaluate_model(model_, subset, cfg_.kmeans);
}

metrics::EvalReport evaluate_model(const WavesplitModel& model,
                                   std::span<const MixtureExample> examples,
                                   const KMeansConfig& kmeans_cfg) {
  metrics::EvalReport report;
  for (const auto& ex : examples) {
    auto x = Tensor::from(ex.mixture, {ex.length()});
    SeparationResult result = separate(model, x, kmeans_cfg);
    if (result.centroids.provenance == CentroidProvenance::kmeans) ++report.kmeans_inferences;

    const std::int64_t T = ex.length();
    const std::int64_t N = ex.n_sources();
    std::vector<float> refs(static_cast<std::size_t>(T * N));
    for (std::int64_t i = 0; i < N; ++i)
      for (std::int64_t t = 0; t < T; ++t) refs[t * N + i] = ex.sources[i][t];
    report.rows.push_back(
        metrics::evaluate_example(ex.id, result.estimate->data, refs, ex.mixture, N));
  }
  report.recompute_means();
  return report;
}

metrics::EvalReport concat_stress_eval(const WavesplitModel& model,
                                       std::span<const MixtureExample> test_set, int factor,
                                       const KMeansConfig& kmeans_cfg) {
  if (factor < 1) throw ContractViolation("concat_stress_eval: factor must be >= 1");
  if (factor == 1) return evaluate_model(model, test_set, kmeans_cfg);

  // Group sequences by their speaker set.
  std::map<std::vector<int>, std::vector<const MixtureExample*>> groups;
  for (const auto& ex : test_set) {
    std::vector<int> key = ex.speaker_ids;
    std::sort(key.begin(), key.end());
    groups[key].push_back(&ex);
  }

  bool reused = false;
  std::vector<MixtureExample> concatenated;
  for (auto& [key, members] : groups) {
    if (members.size() < 2) continue;  // nothing to alternate against
    if (static_cast<int>(members.size()) < factor) reused = true;

    const int n = static_cast<int>(members[0]->n_sources());
    const int sample_rate = members[0]->sample_rate;
    // Canonical source order within the group so dominance alternation tracks
    // speakers, not slots.
    std::vector<std::vector<float>> sources(n);
    std::vector<int> ids = members[0]->speaker_ids;
    std::vector<int> sorted_ids = key;

    for (int r = 0; r < factor; ++r) {
      const MixtureExample& seg = *members[r % members.size()];
      for (int i = 0; i < n; ++i) {
        // Position of sorted_ids[i] inside this segment.
        const auto it = std::find(seg.speaker_ids.begin(), seg.speaker_ids.end(), sorted_ids[i]);
        const int slot = static_cast<int>(it - seg.speaker_ids.begin());
        std::vector<float> chunk = seg.sources[slot];
        // Equalize, then let a different speaker dominate each segment.
        double e = 0.0;
        for (float v : chunk) e += static_cast<double>(v) * v;
        const double rms = std::sqrt(e / chunk.size());
        const double target = i == (r % n) ? 0.1 * std::pow(10.0, 3.0 / 20.0)
                                           : 0.1 * std::pow(10.0, -3.0 / 20.0);
        const float s = static_cast<float>(target / std::max(rms, 1e-9));
        for (auto& v : chunk) v *= s;
        sources[i].insert(sources[i].end(), chunk.begin(), chunk.end());
      }
    }

    std::vector<double> gains(n, 0.0);
    MixtureExample ex = make_mixture("concat_" + std::to_string(key[0]) + "_" +
                                         std::to_string(key.back()) + "_x" +
                                         std::to_string(factor),
                                     std::move(sources), sorted_ids, gains, sample_rate);
    concatenated.push_back(std::move(ex));
  }

  metrics::EvalReport report = evaluate_model(model, concatenated, kmeans_cfg);
  report.reused_sequences = reused;
  return report;
}

}  // namespace wavesplit
