#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace bcalign::wav {

struct Audio {
  double sample_rate = 16000.0;
  std::vector<double> samples;  // [-1, 1]
};

/// Reads 16-bit PCM WAV. Multi-channel files yield `channel` (0-based).
Audio read_wav(const std::filesystem::path& path, unsigned channel = 0);

/// Writes mono 16-bit PCM; samples are clipped to [-1, 1].
void write_wav(const std::filesystem::path& path, std::span<const double> samples, double sample_rate);

/// Sine whose instantaneous frequency moves linearly from f_start to f_end.
std::vector<double> synthesize_glide(double f_start_hz, double f_end_hz, double seconds,
                                     double sample_rate, double amplitude = 0.5);

}  // namespace bcalign::wav
