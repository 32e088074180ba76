#include "wavesplit/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "wavesplit/errors.hpp"

namespace wavesplit {
namespace {

void put_u32(std::ofstream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::ifstream& is, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw FormatError(std::string("checkpoint: truncated while reading ") + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ofstream& os, const std::vector<float>& values) {
  static_assert(sizeof(float) == 4);
  // Little-endian platforms can write the buffer directly.
  os.write(reinterpret_cast<const char*>(values.data()),
           static_cast<std::streamsize>(values.size() * 4));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const WavesplitModel& model) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("checkpoint: cannot write " + path.string());
  os.write("WSPL", 4);
  put_u32(os, kCheckpointVersion);
  const auto named = model.named_parameters();
  put_u32(os, static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, tensor] : named) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<std::uint32_t>(tensor->shape.size()));
    for (std::int64_t d : tensor->shape) put_u32(os, static_cast<std::uint32_t>(d));
    put_f32(os, tensor->data);
  }
  if (!os) throw FormatError("checkpoint: short write to " + path.string());
}

std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("checkpoint: cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "WSPL", 4) != 0)
    throw FormatError("checkpoint: bad magic bytes (expected WSPL)");
  const std::uint32_t version = get_u32(is, "version");
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported format version " + std::to_string(version));
  const std::uint32_t count = get_u32(is, "entry count");

  std::vector<CheckpointEntry> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const std::uint32_t name_len = get_u32(is, "name length");
    e.name.resize(name_len);
    if (!is.read(e.name.data(), name_len))
      throw FormatError("checkpoint: truncated parameter name");
    const std::uint32_t ndim = get_u32(is, "rank");
    std::int64_t numel = 1;
    for (std::uint32_t k = 0; k < ndim; ++k) {
      const std::uint32_t d = get_u32(is, "dimension");
      e.shape.push_back(static_cast<std::int64_t>(d));
      numel *= d;
    }
    e.values.resize(static_cast<std::size_t>(numel));
    if (!is.read(reinterpret_cast<char*>(e.values.data()),
                 static_cast<std::streamsize>(numel * 4)))
      throw FormatError("checkpoint: truncated payload for " + e.name);
    entries.push_back(std::move(e));
  }
  return entries;
}

void load_checkpoint(const std::filesystem::path& path, WavesplitModel& model) {
  const auto entries = read_checkpoint(path);
  std::map<std::string, TensorPtr> params;
  for (auto& [name, p] : model.named_parameters()) params[name] = p;
  if (entries.size() != params.size())
    throw FormatError("checkpoint: parameter count mismatch (file has " +
                      std::to_string(entries.size()) + ", model has " +
                      std::to_string(params.size()) + ")");
  for (const auto& e : entries) {
    auto it = params.find(e.name);
    if (it == params.end())
      throw FormatError("checkpoint: unknown parameter '" + e.name + "'");
    if (it->second->shape != e.shape)
      throw FormatError("checkpoint: shape mismatch for '" + e.name + "'");
    it->second->data = e.values;
  }
}

WavesplitModel model_from_checkpoint(const std::filesystem::path& path) {
  const auto entries = read_checkpoint(path);
  std::map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;

  auto need = [&](const std::string& name) -> const CheckpointEntry& {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw FormatError("checkpoint: missing required entry '" + name + "'");
    return *it->second;
  };

  const auto& embed = need("embed.table");
  if (embed.shape.size() != 2) throw FormatError("checkpoint: embed.table must be rank 2");
  const std::int64_t m = embed.shape[0];
  const std::int64_t d = embed.shape[1];

  const auto& spk_head = need("speaker.head.w");
  const std::int64_t n_sources = spk_head.shape[1] / d;
  if (n_sources * d != spk_head.shape[1])
    throw FormatError("checkpoint: speaker head width is not a multiple of the latent dim");

  const auto& spk_conv = need("speaker.block0.conv_w");
  ModelConfig cfg;
  cfg.speaker.kernel = spk_conv.shape[0];
  cfg.speaker.channels = spk_conv.shape[1];
  cfg.speaker.latent_dim = d;
  cfg.speaker.n_sources = n_sources;
  cfg.n_train_speakers = m;

  std::int64_t spk_layers = 0, sep_layers = 0;
  while (by_name.count("speaker.block" + std::to_string(spk_layers) + ".conv_w")) ++spk_layers;
  while (by_name.count("sep.block" + std::to_string(sep_layers) + ".conv_w")) ++sep_layers;
  if (spk_layers == 0 || sep_layers == 0)
    throw FormatError("checkpoint: missing stack blocks");
  cfg.speaker.layers = spk_layers;

  const auto& sep_conv = need("sep.block0.conv_w");
  cfg.separation.kernel = sep_conv.shape[0];
  cfg.separation.channels = sep_conv.shape[1];
  cfg.separation.layers = sep_layers;
  cfg.separation.n_sources = n_sources;
  cfg.conditioning =
      by_name.count("sep.block0.film_a.w") ? Conditioning::film : Conditioning::additive;

  WavesplitModel model = WavesplitModel::init(cfg, /*seed=*/0);
  load_checkpoint(path, model);
  return model;
}

}  // namespace wavesplit
