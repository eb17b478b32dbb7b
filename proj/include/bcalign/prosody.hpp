#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bcalign/corpus.hpp"

namespace bcalign::prosody {

using corpus::ProsodicFeatures;

inline constexpr double kFrameRateHz = 100.0;
inline constexpr double kWindowSeconds = 0.040;
inline constexpr double kMinF0Hz = 50.0;
inline constexpr double kMaxF0Hz = 500.0;
inline constexpr double kVoicingThreshold = 0.45;      // peak normalized autocorrelation
inline constexpr double kRelativeRmsThreshold = 0.01;  // frame RMS vs signal RMS

struct F0Track {
  double frame_rate_hz = kFrameRateHz;
  std::vector<double> f0_hz;  // 0 in unvoiced frames
  std::vector<bool> voiced;

  std::size_t size() const { return f0_hz.size(); }
};

/// Normalized-autocorrelation pitch tracker: 40 ms windows centred on each
/// 10 ms frame, lag search over [50, 500] Hz with parabolic peak refinement.
F0Track estimate_f0(std::span<const double> waveform, double sample_rate);

double pitch_range_semitones(const F0Track& track);
std::int64_t voiced_duration_frames(const F0Track& track);
ProsodicFeatures compute_features(const F0Track& track);

/// Per-dimension arithmetic mean of equally sized frames.
std::vector<double> mean_pool(std::span<const std::vector<double>> frames);

}  // namespace bcalign::prosody
