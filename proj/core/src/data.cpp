#include "wavesplit/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "wavesplit/errors.hpp"
#include "wavesplit/wav.hpp"

namespace wavesplit {
namespace {

constexpr double kTwoPi = 6.283185307179586;
constexpr double kReferenceRms = 0.1;
constexpr double kMinReferenceRms = 1e-4;

double rms(std::span<const float> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (float v : x) acc += static_cast<double>(v) * v;
  return std::sqrt(acc / static_cast<double>(x.size()));
}

std::uint64_t split_salt(const std::string& split) {
  std::uint64_t h = 1469598103934665603ull;
  for (char c : split) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ull;
  return h;
}

// Distinct draw without replacement via partial Fisher-Yates.
std::vector<int> draw_distinct(std::span<const int> pool, int n, RngStream& rng) {
  std::vector<int> ids(pool.begin(), pool.end());
  for (int i = 0; i < n; ++i) {
    const std::int64_t j = rng.uniform_int(i, static_cast<std::int64_t>(ids.size()) - 1);
    std::swap(ids[i], ids[j]);
  }
  ids.resize(n);
  return ids;
}

std::vector<std::vector<int>> combinations(std::span<const int> pool, int k) {
  std::vector<std::vector<int>> out;
  std::vector<int> idx(k);
  for (int i = 0; i < k; ++i) idx[i] = i;
  const int n = static_cast<int>(pool.size());
  while (true) {
    std::vector<int> combo(k);
    for (int i = 0; i < k; ++i) combo[i] = pool[idx[i]];
    out.push_back(std::move(combo));
    int i = k - 1;
    while (i >= 0 && idx[i] == n - k + i) --i;
    if (i < 0) break;
    ++idx[i];
    for (int j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
  }
  return out;
}

}  // namespace

std::vector<SyntheticSpeaker> make_speaker_bank(int n_train, int n_test, int sample_rate) {
  const int total = n_train + n_test;
  if (total < 1) throw ContractViolation("make_speaker_bank: need at least one speaker");
  const double f_min = 100.0, f_max = 420.0;
  if (f_max * 1.2 >= sample_rate / 2.0)
    throw ContractViolation("make_speaker_bank: fundamental band above Nyquist");

  // Which band slots belong to held-out test speakers (spread through the range).
  std::vector<bool> is_test(total, false);
  for (int i = 0; i < n_test; ++i) {
    int pos = static_cast<int>((i + 0.5) * total / n_test);
    pos = std::min(pos, total - 1);
    while (is_test[pos]) pos = (pos + 1) % total;
    is_test[pos] = true;
  }

  std::vector<SyntheticSpeaker> bank;
  bank.reserve(total);
  int next_train = 1, next_test = n_train + 1;
  const double step = total > 1 ? std::pow(f_max / f_min, 1.0 / (total - 1)) : 1.0;
  for (int slot = 0; slot < total; ++slot) {
    const double fc = f_min * std::pow(step, slot);
    SyntheticSpeaker s;
    s.id = is_test[slot] ? next_test++ : next_train++;
    s.f_lo = fc * 0.94;
    s.f_hi = fc * 1.06;
    RngStream traits(mix_seed(0x5eedba11ull, static_cast<std::uint64_t>(s.id)));
    s.harmonic_decay = traits.uniform(0.35, 0.6);
    s.vibrato_rate = traits.uniform(4.0, 7.0);
    s.vibrato_depth = traits.uniform(0.004, 0.01);
    s.envelope_rate = traits.uniform(1.5, 3.5);
    bank.push_back(s);
  }
  std::sort(bank.begin(), bank.end(),
            [](const SyntheticSpeaker& a, const SyntheticSpeaker& b) { return a.id < b.id; });
  return bank;
}

std::vector<float> synth_source(const SyntheticSpeaker& speaker, std::int64_t length,
                                int sample_rate, std::uint64_t seed) {
  if (length < 1) throw ContractViolation("synth_source: length must be >= 1");
  const double nyquist = sample_rate / 2.0;
  if (speaker.f_hi * (1.0 + speaker.vibrato_depth) >= nyquist)
    throw ContractViolation("synth_source: fundamental band above Nyquist");

  RngStream rng(mix_seed(seed, static_cast<std::uint64_t>(speaker.id)));
  const double f0 = rng.uniform(speaker.f_lo, speaker.f_hi);
  const double vib_phase = rng.uniform(0.0, kTwoPi);
  const double trem_phase = rng.uniform(0.0, kTwoPi);

  int harmonics = static_cast<int>(0.45 * sample_rate /
                                   (speaker.f_hi * (1.0 + speaker.vibrato_depth)));
  harmonics = std::clamp(harmonics, 1, 8);
  std::vector<double> h_amp(harmonics), h_phase(harmonics);
  for (int h = 0; h < harmonics; ++h) {
    h_amp[h] = std::pow(speaker.harmonic_decay, h);
    h_phase[h] = rng.uniform(0.0, kTwoPi);
  }

  // Phrase structure: loud segments separated by quiet (not silent) gaps, with
  // short linear ramps between amplitudes. The quiet floor keeps every window
  // above the reference-energy guard.
  std::vector<float> envelope(static_cast<std::size_t>(length));
  {
    const std::int64_t ramp = std::max<std::int64_t>(1, sample_rate / 200);  // 5 ms
    std::int64_t pos = 0;
    double prev_amp = 0.0;
    bool loud = rng.bernoulli(0.7);
    while (pos < length) {
      const double dur_s = loud ? rng.uniform(0.25, 0.6) : rng.uniform(0.08, 0.25);
      const double amp = loud ? rng.uniform(0.6, 1.0) : rng.uniform(0.1, 0.2);
      std::int64_t seg = static_cast<std::int64_t>(dur_s * sample_rate);
      seg = std::max<std::int64_t>(seg, ramp);
      for (std::int64_t i = 0; i < seg && pos < length; ++i, ++pos) {
        const double a = i < ramp
                             ? prev_amp + (amp - prev_amp) * (static_cast<double>(i + 1) / ramp)
                             : amp;
        envelope[pos] = static_cast<float>(a);
      }
      prev_amp = amp;
      loud = !loud;
    }
  }

  std::vector<float> out(static_cast<std::size_t>(length));
  double phase = rng.uniform(0.0, kTwoPi);
  for (std::int64_t t = 0; t < length; ++t) {
    const double time = static_cast<double>(t) / sample_rate;
    const double f_inst =
        f0 * (1.0 + speaker.vibrato_depth * std::sin(kTwoPi * speaker.vibrato_rate * time +
                                                     vib_phase));
    phase += kTwoPi * f_inst / sample_rate;
    double v = 0.0;
    for (int h = 0; h < harmonics; ++h)
      v += h_amp[h] * std::sin((h + 1) * phase + h_phase[h]);
    const double tremolo =
        1.0 + 0.25 * std::sin(kTwoPi * speaker.envelope_rate * time + trem_phase);
    out[t] = static_cast<float>(envelope[t] * tremolo * v);
  }

  const double r = rms(out);
  const float scale = static_cast<float>(kReferenceRms / r);
  for (auto& v : out) v *= scale;
  return out;
}

std::vector<float> synth_noise(std::int64_t length, int sample_rate, std::uint64_t seed) {
  (void)sample_rate;
  RngStream rng(mix_seed(seed, 0x0153eu));
  std::vector<float> out(static_cast<std::size_t>(length));
  // One-pole lowpass over white noise gives the 1/f-ish slope we want.
  double state = 0.0;
  for (auto& v : out) {
    const double white = rng.normal();
    state = 0.92 * state + 0.08 * white;
    v = static_cast<float>(state + 0.05 * white);
  }
  const double r = rms(out);
  const float scale = static_cast<float>(kReferenceRms / r);
  for (auto& v : out) v *= scale;
  return out;
}

MixtureExample make_mixture(std::string id, std::vector<std::vector<float>> sources,
                            std::vector<int> speaker_ids, std::span<const double> gains_db,
                            int sample_rate, std::optional<std::vector<float>> noise,
                            double noise_gain_db) {
  const std::size_t n = sources.size();
  if (n == 0) throw ContractViolation("make_mixture: no sources");
  if (speaker_ids.size() != n || gains_db.size() != n)
    throw ContractViolation("make_mixture: sources/ids/gains count mismatch");
  const std::size_t T = sources[0].size();
  for (const auto& s : sources)
    if (s.size() != T) throw ContractViolation("make_mixture: source length mismatch");
  if (noise && noise->size() != T)
    throw ContractViolation("make_mixture: noise length mismatch");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (speaker_ids[i] == speaker_ids[j])
        throw ContractViolation("make_mixture: duplicate speaker ids");

  MixtureExample ex;
  ex.id = std::move(id);
  ex.speaker_ids = std::move(speaker_ids);
  ex.sample_rate = sample_rate;
  ex.sources = std::move(sources);
  for (std::size_t i = 0; i < n; ++i) {
    const float g = static_cast<float>(std::pow(10.0, gains_db[i] / 20.0));
    for (auto& v : ex.sources[i]) v *= g;
    if (rms(ex.sources[i]) < kMinReferenceRms)
      throw ContractViolation("make_mixture: reference channel below RMS floor");
  }
  if (noise) {
    const float g = static_cast<float>(std::pow(10.0, noise_gain_db / 20.0));
    for (auto& v : *noise) v *= g;
    ex.noise = std::move(noise);
  }

  // Mixture as the float32 sum of the stored references, in channel order,
  // plus the noise channel last.
  ex.mixture.assign(T, 0.0f);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < T; ++t) ex.mixture[t] += ex.sources[i][t];
  if (ex.noise)
    for (std::size_t t = 0; t < T; ++t) ex.mixture[t] += (*ex.noise)[t];
  return ex;
}

MixtureExample sample_window(const MixtureExample& example, std::int64_t window_len,
                             RngStream& rng) {
  const std::int64_t T = example.length();
  MixtureExample out;
  out.id = example.id;
  out.speaker_ids = example.speaker_ids;
  out.sample_rate = example.sample_rate;

  if (window_len > T) {
    out = example;
    out.padded = true;
    out.mixture.resize(static_cast<std::size_t>(window_len), 0.0f);
    for (auto& s : out.sources) s.resize(static_cast<std::size_t>(window_len), 0.0f);
    if (out.noise) out.noise->resize(static_cast<std::size_t>(window_len), 0.0f);
    return out;
  }

  const std::int64_t start = rng.uniform_int(0, T - window_len);
  auto slice = [&](const std::vector<float>& v) {
    return std::vector<float>(v.begin() + start, v.begin() + start + window_len);
  };
  out.mixture = slice(example.mixture);
  for (const auto& s : example.sources) out.sources.push_back(slice(s));
  if (example.noise) out.noise = slice(*example.noise);
  return out;
}

std::vector<MixtureExample> permutation_replicate(const MixtureExample& example) {
  const int n = static_cast<int>(example.n_sources());
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  std::vector<MixtureExample> copies;
  do {
    MixtureExample copy;
    copy.id = example.id;
    copy.mixture = example.mixture;
    copy.sample_rate = example.sample_rate;
    copy.noise = example.noise;
    copy.padded = example.padded;
    for (int i = 0; i < n; ++i) {
      copy.sources.push_back(example.sources[perm[i]]);
      copy.speaker_ids.push_back(example.speaker_ids[perm[i]]);
    }
    copies.push_back(std::move(copy));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return copies;
}

SyntheticCorpus::SyntheticCorpus(CorpusSpec spec) : spec_(spec) {
  if (spec_.n_sources < 1) throw ContractViolation("corpus: n_sources must be >= 1");
  if (spec_.n_test_speakers < spec_.n_sources)
    throw ContractViolation("corpus: need at least n_sources held-out speakers");
  if (spec_.n_train_speakers < spec_.n_sources)
    throw ContractViolation("corpus: need at least n_sources train speakers");
  speakers_ = make_speaker_bank(spec_.n_train_speakers, spec_.n_test_speakers, spec_.sample_rate);
}

MixtureExample SyntheticCorpus::generate(const std::string& split, int index) const {
  const std::int64_t T = static_cast<std::int64_t>(spec_.duration_s * spec_.sample_rate);
  RngStream rng(mix_seed(spec_.seed, split_salt(split) + 0x9e37ull * index));

  std::vector<int> train_ids, test_ids;
  for (const auto& s : speakers_)
    (s.id > spec_.n_train_speakers ? test_ids : train_ids).push_back(s.id);

  std::vector<int> chosen;
  if (split == "test") {
    // Cycle through the speaker combinations so every pair keeps appearing.
    const auto combos = combinations(test_ids, spec_.n_sources);
    chosen = combos[index % combos.size()];
    // Random source-slot order within the pair.
    for (std::size_t i = 0; i + 1 < chosen.size(); ++i) {
      const std::int64_t j = rng.uniform_int(i, static_cast<std::int64_t>(chosen.size()) - 1);
      std::swap(chosen[i], chosen[j]);
    }
  } else {
    chosen = draw_distinct(train_ids, spec_.n_sources, rng);
  }

  std::vector<std::vector<float>> sources;
  for (std::size_t slot = 0; slot < chosen.size(); ++slot) {
    const auto& spk = speakers_[chosen[slot] - 1];
    sources.push_back(
        synth_source(spk, T, spec_.sample_rate,
                     mix_seed(spec_.seed, split_salt(split) + 131ull * index + 7ull * slot)));
  }
  std::vector<double> gains(chosen.size());
  for (auto& g : gains) g = rng.uniform(-spec_.gain_range_db, spec_.gain_range_db);

  std::optional<std::vector<float>> noise;
  double noise_gain_db = 0.0;
  if (spec_.with_noise) {
    noise = synth_noise(T, spec_.sample_rate,
                        mix_seed(spec_.seed, split_salt(split) + 977ull * index));
    // Choose the noise gain for a mixture-relative SNR in the configured range.
    double mix_energy = 0.0;
    std::vector<double> acc(static_cast<std::size_t>(T), 0.0);
    for (std::size_t i = 0; i < sources.size(); ++i) {
      const double g = std::pow(10.0, gains[i] / 20.0);
      for (std::int64_t t = 0; t < T; ++t) acc[t] += g * sources[i][t];
    }
    for (std::int64_t t = 0; t < T; ++t) mix_energy += acc[t] * acc[t];
    double noise_energy = 0.0;
    for (float v : *noise) noise_energy += static_cast<double>(v) * v;
    const double snr_db = rng.uniform(spec_.noise_snr_lo_db, spec_.noise_snr_hi_db);
    const double scale2 = mix_energy / (noise_energy * std::pow(10.0, snr_db / 10.0));
    noise_gain_db = 10.0 * std::log10(scale2);
  }

  std::ostringstream id;
  id << split << "_";
  id.width(5);
  id.fill('0');
  id << index;
  return make_mixture(id.str(), std::move(sources), chosen, gains, spec_.sample_rate,
                      std::move(noise), noise_gain_db);
}

std::vector<MixtureExample> SyntheticCorpus::split(const std::string& name) const {
  int count = 0;
  if (name == "train")
    count = spec_.n_train;
  else if (name == "valid")
    count = spec_.n_valid;
  else if (name == "test")
    count = spec_.n_test;
  else
    throw ContractViolation("corpus: unknown split " + name);
  std::vector<MixtureExample> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back(generate(name, i));
  return out;
}

DynamicMixer::DynamicMixer(std::vector<MixtureExample> train_examples, std::int64_t window_len,
                           double gain_range_db, RngStream rng)
    : corpus_(std::move(train_examples)),
      window_len_(window_len),
      gain_range_db_(gain_range_db),
      rng_(rng) {
  if (corpus_.empty()) throw ContractViolation("dynamic_mix: empty train corpus");
  sample_rate_ = corpus_[0].sample_rate;
  for (std::size_t e = 0; e < corpus_.size(); ++e) {
    const auto& ex = corpus_[e];
    for (std::size_t i = 0; i < ex.sources.size(); ++i) {
      const int spk = ex.speaker_ids[i];
      auto it = std::find(speaker_ids_.begin(), speaker_ids_.end(), spk);
      std::size_t idx;
      if (it == speaker_ids_.end()) {
        speaker_ids_.push_back(spk);
        by_speaker_.emplace_back();
        idx = speaker_ids_.size() - 1;
      } else {
        idx = static_cast<std::size_t>(it - speaker_ids_.begin());
      }
      tracks_.push_back({spk, &corpus_[e].sources[i]});
      by_speaker_[idx].push_back(tracks_.size() - 1);
    }
  }
  const int n = static_cast<int>(corpus_[0].n_sources());
  if (static_cast<int>(speaker_ids_.size()) < n)
    throw ContractViolation("dynamic_mix: fewer distinct train speakers than sources");
}

MixtureExample DynamicMixer::next() {
  const int n = static_cast<int>(corpus_[0].n_sources());
  // Distinct speakers for this draw.
  std::vector<std::size_t> order(speaker_ids_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int i = 0; i < n; ++i) {
    const std::int64_t j = rng_.uniform_int(i, static_cast<std::int64_t>(order.size()) - 1);
    std::swap(order[i], order[j]);
  }

  bool padded = false;
  std::vector<std::vector<float>> windows;
  std::vector<int> ids;
  for (int i = 0; i < n; ++i) {
    const auto& track_ids = by_speaker_[order[i]];
    const std::size_t pick =
        track_ids[rng_.uniform_int(0, static_cast<std::int64_t>(track_ids.size()) - 1)];
    const std::vector<float>& track = *tracks_[pick].samples;
    const std::int64_t len = static_cast<std::int64_t>(track.size());
    std::vector<float> window(static_cast<std::size_t>(window_len_), 0.0f);
    if (len >= window_len_) {
      const std::int64_t start = rng_.uniform_int(0, len - window_len_);
      std::copy(track.begin() + start, track.begin() + start + window_len_, window.begin());
    } else {
      std::copy(track.begin(), track.end(), window.begin());
      padded = true;
    }
    windows.push_back(std::move(window));
    ids.push_back(tracks_[pick].speaker_id);
  }
  std::vector<double> gains(n);
  for (auto& g : gains) g = rng_.uniform(-gain_range_db_, gain_range_db_);

  auto ex = make_mixture("dyn_" + std::to_string(counter_++), std::move(windows), std::move(ids),
                         gains, sample_rate_);
  ex.padded = padded;
  return ex;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("manifest: cannot open " + path.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::vector<std::string> fields;
    std::string f;
    while (std::getline(ls, f, '\t')) fields.push_back(f);
    if (fields.size() < 4)
      throw FormatError("manifest line " + std::to_string(line_no) +
                        ": expected id, split, speakers and at least one source path");
    ManifestEntry e;
    e.id = fields[0];
    e.split = fields[1];
    if (e.split != "train" && e.split != "valid" && e.split != "test")
      throw FormatError("manifest line " + std::to_string(line_no) + ": unknown split '" +
                        e.split + "'");
    std::istringstream ss(fields[2]);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        e.speaker_ids.push_back(std::stoi(tok));
      } catch (const std::exception&) {
        throw FormatError("manifest line " + std::to_string(line_no) +
                          ": bad speaker id '" + tok + "'");
      }
    }
    for (std::size_t i = 3; i < fields.size(); ++i) e.source_paths.push_back(fields[i]);
    if (e.speaker_ids.size() != e.source_paths.size())
      throw FormatError("manifest line " + std::to_string(line_no) +
                        ": speaker/source count mismatch");
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw FormatError("manifest: cannot write " + path.string());
  for (const auto& e : entries) {
    os << e.id << '\t' << e.split << '\t';
    for (std::size_t i = 0; i < e.speaker_ids.size(); ++i) {
      if (i) os << ',';
      os << e.speaker_ids[i];
    }
    for (const auto& p : e.source_paths) os << '\t' << p;
    os << '\n';
  }
}

MixtureExample load_example(const ManifestEntry& entry, const std::filesystem::path& base_dir) {
  MixtureExample ex;
  ex.id = entry.id;
  ex.speaker_ids = entry.speaker_ids;
  for (const auto& rel : entry.source_paths) {
    WavData wav = wav_read(base_dir / rel);
    if (ex.sources.empty()) {
      ex.sample_rate = wav.sample_rate;
    } else if (wav.sample_rate != ex.sample_rate) {
      throw FormatError("example " + entry.id + ": source sample rates differ");
    } else if (wav.samples.size() != ex.sources[0].size()) {
      throw FormatError("example " + entry.id + ": source lengths differ");
    }
    ex.sources.push_back(std::move(wav.samples));
  }
  const std::size_t T = ex.sources[0].size();
  ex.mixture.assign(T, 0.0f);
  for (const auto& s : ex.sources)
    for (std::size_t t = 0; t < T; ++t) ex.mixture[t] += s[t];
  return ex;
}

std::vector<MixtureExample> load_split(std::span<const ManifestEntry> entries,
                                       const std::filesystem::path& base_dir,
                                       const std::string& split, std::int64_t* skipped) {
  std::vector<MixtureExample> out;
  std::int64_t missing = 0;
  for (const auto& e : entries) {
    if (e.split != split) continue;
    bool ok = true;
    for (const auto& rel : e.source_paths)
      if (!std::filesystem::exists(base_dir / rel)) ok = false;
    if (!ok) {
      ++missing;
      continue;
    }
    out.push_back(load_example(e, base_dir));
  }
  if (skipped) *skipped = missing;
  return out;
}

void write_corpus(const SyntheticCorpus& corpus, const std::filesystem::path& out_dir) {
  const auto wav_dir = out_dir / "wav";
  std::filesystem::create_directories(wav_dir);
  std::vector<ManifestEntry> entries;
  for (const std::string split : {"train", "valid", "test"}) {
    for (auto& ex : corpus.split(split)) {
      ManifestEntry e;
      e.id = ex.id;
      e.split = split;
      e.speaker_ids = ex.speaker_ids;
      for (std::size_t i = 0; i < ex.sources.size(); ++i) {
        const std::string rel = "wav/" + ex.id + ".src" + std::to_string(i + 1) + ".wav";
        wav_write(out_dir / rel, ex.sources[i], ex.sample_rate);
        e.source_paths.push_back(rel);
      }
      entries.push_back(std::move(e));
    }
  }
  write_manifest(out_dir / "manifest.tsv", entries);
}

}  // namespace wavesplit
