#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wavesplit/rng.hpp"

namespace wavesplit {

// Parametric stand-in for a recorded speaker: a harmonic voice with its own
// fundamental band, spectral slope, vibrato and phrasing.
struct SyntheticSpeaker {
  int id = 0;                 // 1-based; doubles as the embedding-table row + 1
  double f_lo = 0.0;          // fundamental band, Hz
  double f_hi = 0.0;
  double harmonic_decay = 0.5;   // geometric amplitude falloff per harmonic
  double vibrato_rate = 5.0;     // Hz
  double vibrato_depth = 0.01;   // relative f0 excursion
  double envelope_rate = 2.0;    // tremolo, Hz
};

struct MixtureExample {
  std::string id;
  std::vector<float> mixture;                // T
  std::vector<std::vector<float>> sources;   // N x T, scaled reference signals
  std::vector<int> speaker_ids;              // N distinct ids
  int sample_rate = 8000;
  std::optional<std::vector<float>> noise;   // scaled noise channel, if any
  bool padded = false;                       // a window request exceeded the recording

  std::int64_t length() const { return static_cast<std::int64_t>(mixture.size()); }
  std::int64_t n_sources() const { return static_cast<std::int64_t>(sources.size()); }
};

struct ManifestEntry {
  std::string id;
  std::string split;  // train | valid | test
  std::vector<int> speaker_ids;
  std::vector<std::string> source_paths;  // relative to the manifest directory
};

// Speaker bank with fundamental bands spread geometrically and interleaved
// between the train and test populations, so unseen test speakers fall inside
// the trained pitch range. Bands of distinct speakers overlap < 50%.
std::vector<SyntheticSpeaker> make_speaker_bank(int n_train, int n_test, int sample_rate);

// Amplitude-modulated harmonic tone with randomized phrase structure,
// RMS-normalized to 0.1. Deterministic per (speaker, length, seed).
std::vector<float> synth_source(const SyntheticSpeaker& speaker, std::int64_t length,
                                int sample_rate, std::uint64_t seed);

// Filtered pink-ish noise stand-in for recorded backgrounds, RMS 0.1.
std::vector<float> synth_noise(std::int64_t length, int sample_rate, std::uint64_t seed);

// Scales each source by 10^(gain_db/20), stores the scaled signals as the
// references and sums them (plus optional scaled noise) into the mixture.
// The mixture equals the float32 accumulation of the stored references.
MixtureExample make_mixture(std::string id, std::vector<std::vector<float>> sources,
                            std::vector<int> speaker_ids, std::span<const double> gains_db,
                            int sample_rate,
                            std::optional<std::vector<float>> noise = std::nullopt,
                            double noise_gain_db = 0.0);

// Uniform window start applied jointly to the mixture and all references.
MixtureExample sample_window(const MixtureExample& example, std::int64_t window_len,
                             RngStream& rng);

// One copy per permutation of the sources (ids permuted with them); the
// mixture is shared. Training-split usage only.
std::vector<MixtureExample> permutation_replicate(const MixtureExample& example);

// Synthetic corpus defaults: 10 train / 4 held-out test speakers, 500/50/50
// examples of 4 s at 8 kHz, two sources, gains uniform in +-2.5 dB.
struct CorpusSpec {
  int n_train_speakers = 10;
  int n_test_speakers = 4;
  int n_train = 500;
  int n_valid = 50;
  int n_test = 50;
  double duration_s = 4.0;
  int sample_rate = 8000;
  int n_sources = 2;
  double gain_range_db = 2.5;
  bool with_noise = false;           // WHAM-style noise stand-in
  double noise_snr_lo_db = 0.0;      // mixture-relative SNR range for the noise
  double noise_snr_hi_db = 10.0;
  std::uint64_t seed = 0;
};

// Deterministic in-memory corpus; the same spec always yields the same
// examples. Test examples cycle through the speaker pairs so the long-form
// concatenation protocol has same-pair sequences to work with.
class SyntheticCorpus {
 public:
  explicit SyntheticCorpus(CorpusSpec spec);

  const CorpusSpec& spec() const { return spec_; }
  const std::vector<SyntheticSpeaker>& speakers() const { return speakers_; }

  std::vector<MixtureExample> split(const std::string& name) const;  // train|valid|test

 private:
  MixtureExample generate(const std::string& split, int index) const;

  CorpusSpec spec_;
  std::vector<SyntheticSpeaker> speakers_;
};

// Infinite augmentation stream: N distinct train speakers, a random window of
// one recording each, random gains, then make_mixture (§ dynamic mixing).
class DynamicMixer {
 public:
  DynamicMixer(std::vector<MixtureExample> train_examples, std::int64_t window_len,
               double gain_range_db, RngStream rng);

  MixtureExample next();

 private:
  struct Track {
    int speaker_id;
    const std::vector<float>* samples;
  };
  std::vector<MixtureExample> corpus_;
  std::vector<int> speaker_ids_;                    // distinct train speakers
  std::vector<std::vector<std::size_t>> by_speaker_;  // track indices per speaker
  std::vector<Track> tracks_;
  std::int64_t window_len_;
  double gain_range_db_;
  int sample_rate_;
  RngStream rng_;
  std::int64_t counter_ = 0;
};

// --- manifest + on-disk corpus ---

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries);

// Reads the source WAVs of an entry and rebuilds the mixture as their sum.
MixtureExample load_example(const ManifestEntry& entry, const std::filesystem::path& base_dir);

// Loads every entry of one split; missing-reference entries are skipped and
// counted into *skipped when provided.
std::vector<MixtureExample> load_split(std::span<const ManifestEntry> entries,
                                       const std::filesystem::path& base_dir,
                                       const std::string& split, std::int64_t* skipped = nullptr);

// Writes WAVs + manifest for the whole corpus under out_dir.
void write_corpus(const SyntheticCorpus& corpus, const std::filesystem::path& out_dir);

}  // namespace wavesplit
