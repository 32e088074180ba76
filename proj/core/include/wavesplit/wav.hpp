#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace wavesplit {

struct WavData {
  std::vector<float> samples;  // in [-1, 1)
  int sample_rate = 0;
};

// 16-bit PCM mono RIFF/WAVE. int16 maps to float by /32768; anything else
// (format tag, channel count, bit depth, truncation) raises FormatError
// naming the offending header field.
WavData wav_read(const std::filesystem::path& path);

// Clamps to [-1, 1 - 1/32768] and rounds to nearest; roundtrip error is at
// most 1/32768 per sample.
void wav_write(const std::filesystem::path& path, std::span<const float> samples,
               int sample_rate);

}  // namespace wavesplit
