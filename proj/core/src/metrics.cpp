#include "wavesplit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

#include "wavesplit/errors.hpp"

namespace wavesplit::metrics {
namespace {

double energy(std::span<const float> x) {
  double acc = 0.0;
  for (float v : x) acc += static_cast<double>(v) * v;
  return acc;
}

std::vector<float> channel(std::span<const float> interleaved, std::int64_t n, std::int64_t i) {
  const std::int64_t T = static_cast<std::int64_t>(interleaved.size()) / n;
  std::vector<float> out(static_cast<std::size_t>(T));
  for (std::int64_t t = 0; t < T; ++t) out[t] = interleaved[t * n + i];
  return out;
}

}  // namespace

double sdr(std::span<const float> estimate, std::span<const float> reference) {
  if (estimate.size() != reference.size())
    throw ContractViolation("sdr: length mismatch");
  const double ref_energy = energy(reference);
  if (ref_energy <= 0.0) throw ContractViolation("sdr: zero-energy reference");
  double err = 0.0;
  for (std::size_t i = 0; i < estimate.size(); ++i) {
    const double d = static_cast<double>(reference[i]) - estimate[i];
    err += d * d;
  }
  return -10.0 * std::log10(err + kEps) + 10.0 * std::log10(ref_energy);
}

double si_sdr(std::span<const float> estimate, std::span<const float> reference) {
  if (estimate.size() != reference.size())
    throw ContractViolation("si_sdr: length mismatch");
  const double ref_energy = energy(reference);
  if (ref_energy <= 0.0) throw ContractViolation("si_sdr: zero-energy reference");
  double dot = 0.0;
  for (std::size_t i = 0; i < estimate.size(); ++i)
    dot += static_cast<double>(estimate[i]) * reference[i];
  const double gain = dot / ref_energy;
  double target = 0.0, residual = 0.0;
  for (std::size_t i = 0; i < estimate.size(); ++i) {
    const double s = gain * reference[i];
    const double r = static_cast<double>(estimate[i]) - s;
    target += s * s;
    residual += r * r;
  }
  return 10.0 * std::log10(target / (residual + kEps) + kEps);
}

PermutedQuality permuted_quality(std::span<const float> est, std::span<const float> ref,
                                 std::int64_t n_channels, const ChannelMetric& metric) {
  if (n_channels < 1) throw ContractViolation("permuted_quality: need at least one channel");
  if (n_channels > 8)
    throw ContractViolation("permuted_quality: refusing N > 8 (factorial search)");
  if (est.size() != ref.size())
    throw ContractViolation("permuted_quality: shape mismatch");

  std::vector<std::vector<float>> est_ch, ref_ch;
  for (std::int64_t i = 0; i < n_channels; ++i) {
    est_ch.push_back(channel(est, n_channels, i));
    ref_ch.push_back(channel(ref, n_channels, i));
  }
  // Pairwise metric table: q[e][r].
  std::vector<double> q(static_cast<std::size_t>(n_channels * n_channels));
  for (std::int64_t e = 0; e < n_channels; ++e)
    for (std::int64_t r = 0; r < n_channels; ++r)
      q[e * n_channels + r] = metric(est_ch[e], ref_ch[r]);

  std::vector<int> perm(static_cast<std::size_t>(n_channels));
  std::iota(perm.begin(), perm.end(), 0);
  PermutedQuality best;
  bool first = true;
  do {
    double acc = 0.0;
    for (std::int64_t r = 0; r < n_channels; ++r) acc += q[perm[r] * n_channels + r];
    const double value = acc / static_cast<double>(n_channels);
    if (first || value > best.value) {
      first = false;
      best.value = value;
      best.perm = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

ExampleEval evaluate_example(const std::string& id, std::span<const float> estimate,
                             std::span<const float> references, std::span<const float> mixture,
                             std::int64_t n_channels) {
  const std::int64_t T = static_cast<std::int64_t>(mixture.size());
  // Baseline: the raw mixture replicated on every output channel.
  std::vector<float> baseline(static_cast<std::size_t>(T * n_channels));
  for (std::int64_t t = 0; t < T; ++t)
    for (std::int64_t i = 0; i < n_channels; ++i) baseline[t * n_channels + i] = mixture[t];

  const auto q_sdr = permuted_quality(estimate, references, n_channels,
                                      [](auto e, auto r) { return sdr(e, r); });
  const auto q_sisdr = permuted_quality(estimate, references, n_channels,
                                        [](auto e, auto r) { return si_sdr(e, r); });
  const auto b_sdr = permuted_quality(baseline, references, n_channels,
                                      [](auto e, auto r) { return sdr(e, r); });
  const auto b_sisdr = permuted_quality(baseline, references, n_channels,
                                        [](auto e, auto r) { return si_sdr(e, r); });

  ExampleEval row;
  row.id = id;
  row.sdr = q_sdr.value;
  row.si_sdr = q_sisdr.value;
  row.delta_sdr = q_sdr.value - b_sdr.value;
  row.delta_si_sdr = q_sisdr.value - b_sisdr.value;
  row.perm = q_sisdr.perm;
  return row;
}

void EvalReport::recompute_means() {
  mean_sdr = mean_si_sdr = mean_delta_sdr = mean_delta_si_sdr = 0.0;
  if (rows.empty()) return;
  for (const auto& r : rows) {
    mean_sdr += r.sdr;
    mean_si_sdr += r.si_sdr;
    mean_delta_sdr += r.delta_sdr;
    mean_delta_si_sdr += r.delta_si_sdr;
  }
  const double n = static_cast<double>(rows.size());
  mean_sdr /= n;
  mean_si_sdr /= n;
  mean_delta_sdr /= n;
  mean_delta_si_sdr /= n;
}

namespace {

std::string perm_to_string(const std::vector<int>& perm) {
  std::string s;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(perm[i]);
  }
  return s;
}

}  // namespace

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed;
  for (const auto& r : rows) {
    os << r.id << '\t' << r.sdr << '\t' << r.si_sdr << '\t' << r.delta_sdr << '\t'
       << r.delta_si_sdr << '\t' << perm_to_string(r.perm) << '\n';
  }
  os << "#mean\t" << mean_sdr << '\t' << mean_si_sdr << '\t' << mean_delta_sdr << '\t'
     << mean_delta_si_sdr;
  if (skipped > 0) os << "\t#skipped=" << skipped;
  if (reused_sequences) os << "\t#reused";
  os << '\n';
  return os.str();
}

EvalReport EvalReport::from_text(const std::string& text) {
  EvalReport report;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ls, field, '\t')) fields.push_back(field);
    if (fields.empty()) continue;
    if (fields[0] == "#mean") {
      if (fields.size() < 5) throw FormatError("eval report: malformed #mean footer");
      report.mean_sdr = std::stod(fields[1]);
      report.mean_si_sdr = std::stod(fields[2]);
      report.mean_delta_sdr = std::stod(fields[3]);
      report.mean_delta_si_sdr = std::stod(fields[4]);
      continue;
    }
    if (fields.size() < 6) throw FormatError("eval report: malformed example line");
    ExampleEval row;
    row.id = fields[0];
    row.sdr = std::stod(fields[1]);
    row.si_sdr = std::stod(fields[2]);
    row.delta_sdr = std::stod(fields[3]);
    row.delta_si_sdr = std::stod(fields[4]);
    std::istringstream ps(fields[5]);
    std::string tok;
    while (std::getline(ps, tok, ',')) row.perm.push_back(std::stoi(tok));
    report.rows.push_back(std::move(row));
  }
  return report;
}

void write_report(std::ostream& os, const EvalReport& report) { os << report.to_text(); }

}  // namespace wavesplit::metrics
