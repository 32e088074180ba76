#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace wavesplit::metrics {

inline constexpr double kEps = 1e-12;  // guards the perfect-reconstruction pole

// SDR(est, ref) = -10 log10(||ref - est||^2 + eps) + 10 log10(||ref||^2), in dB.
double sdr(std::span<const float> estimate, std::span<const float> reference);

// Scale-invariant SDR: project est onto ref, compare target vs residual energy.
double si_sdr(std::span<const float> estimate, std::span<const float> reference);

using ChannelMetric = std::function<double(std::span<const float>, std::span<const float>)>;

struct PermutedQuality {
  double value = 0.0;          // channel mean at the best permutation
  std::vector<int> perm;       // estimate channel assigned to each reference channel
};

// Exhaustive max over channel permutations of the mean per-channel metric.
// est/ref are row-major T x N. Refuses N > 8.
PermutedQuality permuted_quality(std::span<const float> est, std::span<const float> ref,
                                 std::int64_t n_channels, const ChannelMetric& metric);

struct ExampleEval {
  std::string id;
  double sdr = 0.0;      // channel mean at the best permutation
  double si_sdr = 0.0;
  double delta_sdr = 0.0;      // vs the mixture replicated on every channel
  double delta_si_sdr = 0.0;
  std::vector<int> perm;       // SI-SDR-best permutation
};

struct EvalReport {
  std::vector<ExampleEval> rows;
  double mean_sdr = 0.0;
  double mean_si_sdr = 0.0;
  double mean_delta_sdr = 0.0;
  double mean_delta_si_sdr = 0.0;
  std::int64_t skipped = 0;       // examples without usable references
  bool reused_sequences = false;  // concat protocol recycled same-pair sequences
  std::int64_t kmeans_inferences = 0;  // examples whose centroids came from k-means

  void recompute_means();
  // One line per example: id<TAB>sdr<TAB>si_sdr<TAB>dsdr<TAB>dsi_sdr<TAB>perm,
  // then a #mean footer.
  std::string to_text() const;
  static EvalReport from_text(const std::string& text);
};

void write_report(std::ostream& os, const EvalReport& report);

// Scores one example: per-channel estimates vs references (both T x N
// row-major) with the mixture-as-prediction baseline subtracted.
ExampleEval evaluate_example(const std::string& id, std::span<const float> estimate,
                             std::span<const float> references, std::span<const float> mixture,
                             std::int64_t n_channels);

}  // namespace wavesplit::metrics
