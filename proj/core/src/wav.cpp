#include "wavesplit/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "wavesplit/errors.hpp"

namespace wavesplit {
namespace {

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace

WavData wav_read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("wav_read: cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t size = bytes.size();

  if (size < 12 || std::memcmp(p, "RIFF", 4) != 0)
    throw FormatError("wav_read: missing RIFF chunk id in " + path.string());
  if (std::memcmp(p + 8, "WAVE", 4) != 0)
    throw FormatError("wav_read: RIFF form type is not WAVE in " + path.string());

  WavData wav;
  bool have_fmt = false;
  std::size_t off = 12;
  while (off + 8 <= size) {
    const char* chunk_id = reinterpret_cast<const char*>(p + off);
    const std::uint32_t chunk_size = get_u32(p + off + 4);
    const std::size_t body = off + 8;
    if (body + chunk_size > size)
      throw FormatError("wav_read: truncated chunk '" + std::string(chunk_id, 4) + "' in " +
                        path.string());
    if (std::memcmp(chunk_id, "fmt ", 4) == 0) {
      if (chunk_size < 16) throw FormatError("wav_read: fmt chunk too small");
      const std::uint16_t format_tag = get_u16(p + body);
      if (format_tag != 1)
        throw FormatError("wav_read: fmt.wFormatTag=" + std::to_string(format_tag) +
                          " (only PCM=1 supported)");
      const std::uint16_t channels = get_u16(p + body + 2);
      if (channels != 1)
        throw FormatError("wav_read: fmt.nChannels=" + std::to_string(channels) +
                          " (only mono supported)");
      wav.sample_rate = static_cast<int>(get_u32(p + body + 4));
      const std::uint16_t bits = get_u16(p + body + 14);
      if (bits != 16)
        throw FormatError("wav_read: fmt.wBitsPerSample=" + std::to_string(bits) +
                          " (only 16-bit supported)");
      have_fmt = true;
    } else if (std::memcmp(chunk_id, "data", 4) == 0) {
      if (!have_fmt) throw FormatError("wav_read: data chunk before fmt chunk");
      const std::size_t n = chunk_size / 2;
      wav.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const std::int16_t s =
            static_cast<std::int16_t>(get_u16(p + body + 2 * i));
        wav.samples[i] = static_cast<float>(s) / 32768.0f;
      }
      return wav;
    }
    off = body + chunk_size + (chunk_size & 1);  // chunks are word-aligned
  }
  throw FormatError("wav_read: missing data chunk in " + path.string());
}

void wav_write(const std::filesystem::path& path, std::span<const float> samples,
               int sample_rate) {
  std::string out;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  out.reserve(44 + data_bytes);
  out.append("RIFF");
  put_u32(out, 36 + data_bytes);
  out.append("WAVE");
  out.append("fmt ");
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<std::uint32_t>(sample_rate));
  put_u32(out, static_cast<std::uint32_t>(sample_rate * 2));  // byte rate
  put_u16(out, 2);                                            // block align
  put_u16(out, 16);                                           // bits per sample
  out.append("data");
  put_u32(out, data_bytes);
  for (float v : samples) {
    const float clamped = std::clamp(v, -1.0f, 1.0f - 1.0f / 32768.0f);
    const long q = std::lround(static_cast<double>(clamped) * 32768.0);
    const std::int16_t s = static_cast<std::int16_t>(std::clamp(q, -32768L, 32767L));
    put_u16(out, static_cast<std::uint16_t>(s));
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("wav_write: cannot open " + path.string() + " for writing");
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!os) throw FormatError("wav_write: short write to " + path.string());
}

}  // namespace wavesplit
