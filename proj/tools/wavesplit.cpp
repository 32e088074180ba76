// Command-line front end: gen / train / separate / eval / gradcheck.
//
// Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
// failure. WAVESPLIT_THREADS caps worker threads (0 = single-threaded).

#include <CLI11.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "gradcheck.hpp"
#include "wavesplit/checkpoint.hpp"
#include "wavesplit/data.hpp"
#include "wavesplit/errors.hpp"
#include "wavesplit/metrics.hpp"
#include "wavesplit/model.hpp"
#include "wavesplit/objective.hpp"
#include "wavesplit/train.hpp"
#include "wavesplit/wav.hpp"

namespace fs = std::filesystem;
using namespace wavesplit;

namespace {

struct GenOptions {
  std::string out;
  CorpusSpec spec;
  bool force = false;
};

int cmd_gen(const GenOptions& opt) {
  const fs::path out_dir(opt.out);
  if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !opt.force) {
    std::cerr << "gen: output directory " << out_dir
              << " is not empty (use --force to overwrite)\n";
    return 2;
  }
  fs::create_directories(out_dir);
  SyntheticCorpus corpus(opt.spec);
  write_corpus(corpus, out_dir);
  std::cout << "wrote " << (out_dir / "manifest.tsv").string() << "\n";
  return 0;
}

struct TrainOptions {
  std::string manifest;
  std::string out;
  std::string preset = "desk";
  std::string loss = "global";
  TrainConfig cfg;
  bool no_film = false;
  bool no_dropout = false;
  bool no_mixup = false;
  bool no_embed_reg = false;
};

// Sidecar metadata written next to the checkpoints; same key=value format the
// subcommands accept through --config.
void write_model_cfg(const fs::path& path, const TrainOptions& opt, int sample_rate,
                     std::int64_t n_sources, std::int64_t n_speakers) {
  std::ofstream os(path);
  os << "# training configuration snapshot\n";
  os << "preset = " << opt.preset << "\n";
  os << "loss = " << opt.loss << "\n";
  os << "sample-rate = " << sample_rate << "\n";
  os << "n-sources = " << n_sources << "\n";
  os << "train-speakers = " << n_speakers << "\n";
  os << "window = " << opt.cfg.window_seconds << "\n";
  os << "seed = " << opt.cfg.seed << "\n";
}

int cmd_train(TrainOptions& opt) {
  const fs::path manifest_path(opt.manifest);
  const auto entries = read_manifest(manifest_path);
  const fs::path base = manifest_path.parent_path();
  std::int64_t skipped = 0;
  auto train = load_split(entries, base, "train", &skipped);
  if (train.empty()) {
    std::cerr << "train: no loadable train examples in " << opt.manifest << "\n";
    return 2;
  }
  auto valid = load_split(entries, base, "valid");

  int n_speakers = 0;
  for (const auto& e : entries)
    if (e.split != "test")
      for (int id : e.speaker_ids) n_speakers = std::max(n_speakers, id);
  const std::int64_t n_sources = train[0].n_sources();

  if (opt.loss == "global")
    opt.cfg.weights.loss_variant = SpeakerLossVariant::global;
  else if (opt.loss == "local")
    opt.cfg.weights.loss_variant = SpeakerLossVariant::local;
  else if (opt.loss == "distance")
    opt.cfg.weights.loss_variant = SpeakerLossVariant::distance;
  else {
    std::cerr << "train: unknown loss variant '" << opt.loss << "'\n";
    return 1;
  }
  if (opt.no_dropout) opt.cfg.weights.speaker_dropout_rate = 0.0;
  if (opt.no_mixup) opt.cfg.weights.speaker_mixup_rate = 0.0;
  if (opt.no_embed_reg) opt.cfg.weights.embed_reg_weight = 0.0;

  ModelConfig mcfg = ModelConfig::preset(opt.preset, n_sources, n_speakers);
  if (opt.no_film) mcfg.conditioning = Conditioning::additive;
  WavesplitModel model = WavesplitModel::init(mcfg, opt.cfg.seed);

  opt.cfg.out_dir = opt.out;
  fs::create_directories(opt.cfg.out_dir);
  write_model_cfg(opt.cfg.out_dir / "model.cfg", opt, train[0].sample_rate, n_sources,
                  n_speakers);

  Trainer trainer(model, opt.cfg);
  TrainStats stats = trainer.run(train, valid);
  std::cout << "steps=" << trainer.steps_done() << " mean_loss=" << stats.loss;
  if (stats.has_validation) std::cout << " best_valid_dsisdr=" << stats.best_valid_dsisdr;
  std::cout << "\ncheckpoints in " << opt.cfg.out_dir.string() << "\n";
  return 0;
}

struct SeparateOptions {
  std::string input;
  std::string ckpt;
  std::string out = ".";
  std::uint64_t seed = 0;
  std::int64_t restarts = 5;
};

int cmd_separate(const SeparateOptions& opt) {
  WavesplitModel model = model_from_checkpoint(opt.ckpt);
  WavData wav = wav_read(opt.input);

  // Training sample rate, when the sidecar config is available.
  const fs::path sidecar = fs::path(opt.ckpt).parent_path() / "model.cfg";
  if (fs::exists(sidecar)) {
    std::ifstream is(sidecar);
    std::string line;
    while (std::getline(is, line)) {
      const auto pos = line.find("sample-rate");
      if (pos == std::string::npos) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const int trained_rate = std::stoi(line.substr(eq + 1));
      if (trained_rate != wav.sample_rate)
        std::cerr << "warning: input sample rate " << wav.sample_rate
                  << " differs from training rate " << trained_rate << "; proceeding\n";
    }
  }

  KMeansConfig kcfg;
  kcfg.n_clusters = model.n_sources();
  kcfg.seed = opt.seed;
  kcfg.n_restarts = opt.restarts;

  auto x = Tensor::from(wav.samples, {static_cast<std::int64_t>(wav.samples.size())});
  SeparationResult result = separate(model, x, kcfg);
  if (result.centroids.degenerate)
    std::cerr << "warning: k-means found fewer distinct speaker vectors than sources\n";

  const std::int64_t T = x->numel();
  const std::int64_t N = model.n_sources();
  fs::create_directories(opt.out);
  const std::string stem = fs::path(opt.input).stem().string();
  for (std::int64_t i = 0; i < N; ++i) {
    std::vector<float> channel(static_cast<std::size_t>(T));
    for (std::int64_t t = 0; t < T; ++t) channel[t] = result.estimate->data[t * N + i];
    const fs::path path = fs::path(opt.out) / (stem + ".src" + std::to_string(i + 1) + ".wav");
    wav_write(path, channel, wav.sample_rate);
    std::cout << path.string() << "\n";
  }

  // Centroid separation diagnostics.
  const auto& c = result.centroids.values;
  const std::int64_t d = c->dim(1);
  for (std::int64_t i = 0; i < N; ++i)
    for (std::int64_t j = i + 1; j < N; ++j) {
      double sq = 0.0;
      for (std::int64_t k = 0; k < d; ++k) {
        const double diff = static_cast<double>(c->data[i * d + k]) - c->data[j * d + k];
        sq += diff * diff;
      }
      std::cout << "centroid_distance[" << i << "," << j << "] = " << std::sqrt(sq) << "\n";
    }
  return 0;
}

struct EvalOptions {
  std::string manifest;
  std::string ckpt;
  std::string split = "test";
  std::string out;
  int concat_factor = 1;
  std::uint64_t seed = 0;
};

int cmd_eval(const EvalOptions& opt) {
  WavesplitModel model = model_from_checkpoint(opt.ckpt);
  const fs::path manifest_path(opt.manifest);
  const auto entries = read_manifest(manifest_path);
  std::int64_t skipped = 0;
  auto examples = load_split(entries, manifest_path.parent_path(), opt.split, &skipped);
  if (examples.empty()) {
    std::cerr << "eval: no loadable examples in split '" << opt.split << "'\n";
    return 2;
  }

  KMeansConfig kcfg;
  kcfg.n_clusters = model.n_sources();
  kcfg.seed = opt.seed;

  metrics::EvalReport report = opt.concat_factor == 1
                                   ? evaluate_model(model, examples, kcfg)
                                   : concat_stress_eval(model, examples, opt.concat_factor, kcfg);
  report.skipped += skipped;

  if (opt.out.empty()) {
    std::cout << report.to_text();
  } else {
    std::ofstream os(opt.out, std::ios::trunc);
    os << report.to_text();
    std::cout << "wrote " << opt.out << "\n";
  }
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, int trials) {
  bool ok = true;
  for (int t = 0; t < trials; ++t) {
    auto results = gradcheck::run_all(seed + static_cast<std::uint64_t>(t));
    std::cout << gradcheck::format_table(results);
    ok = ok && gradcheck::all_passed(results);
  }
  if (!ok) {
    std::cerr << "gradcheck: FAILED\n";
    return 3;
  }
  std::cout << "gradcheck: all checks passed\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Wavesplit-style source separation"};
  app.require_subcommand(1);

  GenOptions gen;
  auto* sc_gen = app.add_subcommand("gen", "Generate the synthetic corpus");
  sc_gen->set_config("--config");
  sc_gen->add_option("--out", gen.out, "Output directory")->required();
  sc_gen->add_option("--seed", gen.spec.seed, "Corpus seed");
  sc_gen->add_option("--n-sources", gen.spec.n_sources, "Sources per mixture");
  sc_gen->add_option("--train-speakers", gen.spec.n_train_speakers, "Training speakers");
  sc_gen->add_option("--test-speakers", gen.spec.n_test_speakers, "Held-out speakers");
  sc_gen->add_option("--train", gen.spec.n_train, "Training examples");
  sc_gen->add_option("--valid", gen.spec.n_valid, "Validation examples");
  sc_gen->add_option("--test", gen.spec.n_test, "Test examples");
  sc_gen->add_option("--duration", gen.spec.duration_s, "Example length, seconds");
  sc_gen->add_option("--sample-rate", gen.spec.sample_rate, "Sample rate, Hz");
  sc_gen->add_option("--gain-range", gen.spec.gain_range_db, "Mixing gain range, +-dB");
  sc_gen->add_flag("--force", gen.force, "Overwrite a non-empty output directory");

  TrainOptions train;
  auto* sc_train = app.add_subcommand("train", "Train on a manifest corpus");
  sc_train->set_config("--config");
  sc_train->add_option("--manifest", train.manifest, "Manifest path")->required();
  sc_train->add_option("--out", train.out, "Checkpoint/log directory")->required();
  sc_train->add_option("--preset", train.preset, "Model preset: desk or paper");
  sc_train->add_option("--loss", train.loss, "Speaker loss: global, local or distance");
  sc_train->add_option("--steps", train.cfg.steps, "Optimizer steps");
  sc_train->add_option("--batch-size", train.cfg.batch_size, "Windows per step");
  sc_train->add_option("--window", train.cfg.window_seconds, "Window length, seconds");
  sc_train->add_option("--lr", train.cfg.lr, "Adam learning rate");
  sc_train->add_option("--seed", train.cfg.seed, "Training seed");
  sc_train->add_flag("--dynamic-mixing", train.cfg.dynamic_mixing, "On-the-fly remixing");
  sc_train->add_option("--gain-range", train.cfg.dynamic_gain_range_db,
                       "Dynamic-mixing gain range, +-dB");
  sc_train->add_flag("--no-film", train.no_film, "Additive (bias-only) conditioning");
  sc_train->add_flag("--no-dropout", train.no_dropout, "Disable speaker dropout");
  sc_train->add_flag("--no-mixup", train.no_mixup, "Disable speaker mixup");
  sc_train->add_flag("--no-embed-reg", train.no_embed_reg, "Disable embedding regularizer");
  sc_train->add_option("--noise-std", train.cfg.weights.noise_std, "Centroid noise std");
  sc_train->add_option("--sdr-clip", train.cfg.weights.sdr_clip, "Negative-SDR clip tau");
  sc_train->add_option("--speaker-weight", train.cfg.weights.speaker_weight,
                       "Speaker loss weight");
  sc_train->add_option("--embed-reg-weight", train.cfg.weights.embed_reg_weight,
                       "Embedding regularizer weight");
  sc_train->add_option("--dropout-rate", train.cfg.weights.speaker_dropout_rate,
                       "Speaker dropout rate");
  sc_train->add_option("--mixup-rate", train.cfg.weights.speaker_mixup_rate,
                       "Speaker mixup rate");
  sc_train->add_option("--valid-interval", train.cfg.valid_interval, "Steps per validation");
  sc_train->add_option("--valid-examples", train.cfg.valid_max_examples,
                       "Validation subset size (0 = all)");
  sc_train->add_option("--grad-clip", train.cfg.grad_clip, "Global gradient-norm clip (0 = off)");

  SeparateOptions sep;
  auto* sc_sep = app.add_subcommand("separate", "Separate a mixture WAV");
  sc_sep->set_config("--config");
  sc_sep->add_option("--in", sep.input, "Input mixture WAV")->required();
  sc_sep->add_option("--ckpt", sep.ckpt, "Checkpoint path")->required();
  sc_sep->add_option("--out", sep.out, "Output directory");
  sc_sep->add_option("--seed", sep.seed, "k-means seed");
  sc_sep->add_option("--restarts", sep.restarts, "k-means restarts");

  EvalOptions eval;
  auto* sc_eval = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
  sc_eval->set_config("--config");
  sc_eval->add_option("--manifest", eval.manifest, "Manifest path")->required();
  sc_eval->add_option("--ckpt", eval.ckpt, "Checkpoint path")->required();
  sc_eval->add_option("--split", eval.split, "Manifest split to evaluate");
  sc_eval->add_option("--out", eval.out, "Report path (default: stdout)");
  sc_eval->add_option("--concat-factor", eval.concat_factor,
                      "Long-form concatenation factor (1 = plain)");
  sc_eval->add_option("--seed", eval.seed, "k-means seed");

  std::uint64_t gc_seed = 0;
  int gc_trials = 1;
  auto* sc_gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  sc_gc->set_config("--config");
  sc_gc->add_option("--seed", gc_seed, "Check seed");
  sc_gc->add_option("--trials", gc_trials, "Independent trials");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (sc_gen->parsed()) return cmd_gen(gen);
    if (sc_train->parsed()) return cmd_train(train);
    if (sc_sep->parsed()) return cmd_separate(sep);
    if (sc_eval->parsed()) return cmd_eval(eval);
    if (sc_gc->parsed()) return cmd_gradcheck(gc_seed, gc_trials);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ContractViolation& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
