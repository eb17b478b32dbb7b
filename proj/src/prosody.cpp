#include "bcalign/prosody.hpp"

#include <algorithm>
#include <cmath>

#include "bcalign/error.hpp"

namespace bcalign::prosody {

namespace {

struct LagPeak {
  double lag = 0.0;
  double value = 0.0;
};

// Normalized cross-correlation between window[0, W-lag) and window[lag, W).
double nccf(std::span<const double> w, std::size_t lag) {
  double xy = 0.0, xx = 0.0, yy = 0.0;
  for (std::size_t n = 0; n + lag < w.size(); ++n) {
    const double a = w[n];
    const double b = w[n + lag];
    xy += a * b;
    xx += a * a;
    yy += b * b;
  }
  const double denom = std::sqrt(xx * yy);
  return denom > 0.0 ? xy / denom : 0.0;
}

LagPeak find_pitch_peak(std::span<const double> window, std::size_t min_lag, std::size_t max_lag) {
  std::vector<double> r(max_lag + 2, 0.0);
  for (std::size_t lag = min_lag - 1; lag <= max_lag + 1; ++lag) r[lag] = nccf(window, lag);

  double global = 0.0;
  for (std::size_t lag = min_lag; lag <= max_lag; ++lag) global = std::max(global, r[lag]);
  if (global <= 0.0) return {};

  // First local maximum close to the global one; avoids sub-harmonic picks.
  std::size_t best = 0;
  for (std::size_t lag = min_lag; lag <= max_lag; ++lag) {
    const bool local_max = r[lag] >= r[lag - 1] && r[lag] >= r[lag + 1];
    if (local_max && r[lag] >= 0.9 * global) {
      best = lag;
      break;
    }
  }
  if (best == 0) return {};

  const double y0 = r[best - 1], y1 = r[best], y2 = r[best + 1];
  const double curvature = y0 - 2.0 * y1 + y2;
  double offset = 0.0;
  if (curvature < 0.0) offset = std::clamp(0.5 * (y0 - y2) / curvature, -0.5, 0.5);
  return {static_cast<double>(best) + offset, y1};
}

}  // namespace

F0Track estimate_f0(std::span<const double> waveform, double sample_rate) {
  if (waveform.empty()) throw Error(ErrorKind::EmptySignal, "waveform has no samples");
  if (!(sample_rate >= 8000.0)) throw Error(ErrorKind::InvalidArgument, "sample rate must be >= 8000 Hz");
  double energy = 0.0;
  for (double x : waveform) {
    if (!std::isfinite(x)) throw Error(ErrorKind::NonFiniteValue, "waveform contains non-finite samples");
    energy += x * x;
  }
  const double signal_rms = std::sqrt(energy / static_cast<double>(waveform.size()));

  const auto hop = static_cast<std::size_t>(std::llround(sample_rate / kFrameRateHz));
  const auto win = static_cast<std::size_t>(std::llround(sample_rate * kWindowSeconds));
  const auto min_lag = static_cast<std::size_t>(std::ceil(sample_rate / kMaxF0Hz));
  const auto max_lag = std::min(static_cast<std::size_t>(std::floor(sample_rate / kMinF0Hz)), win - 2);
  const std::size_t n_frames = waveform.size() / hop;

  F0Track track;
  track.f0_hz.assign(n_frames, 0.0);
  track.voiced.assign(n_frames, false);
  if (signal_rms == 0.0) return track;

  std::vector<double> window(win);
  const auto half = static_cast<std::ptrdiff_t>((win - hop) / 2);
  for (std::size_t f = 0; f < n_frames; ++f) {
    const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(f * hop) - half;
    double frame_energy = 0.0;
    for (std::size_t n = 0; n < win; ++n) {
      const std::ptrdiff_t idx = start + static_cast<std::ptrdiff_t>(n);
      const bool inside = idx >= 0 && idx < static_cast<std::ptrdiff_t>(waveform.size());
      window[n] = inside ? waveform[static_cast<std::size_t>(idx)] : 0.0;
      frame_energy += window[n] * window[n];
    }
    const double frame_rms = std::sqrt(frame_energy / static_cast<double>(win));
    if (frame_rms < kRelativeRmsThreshold * signal_rms) continue;

    const LagPeak peak = find_pitch_peak(window, min_lag, max_lag);
    if (peak.value < kVoicingThreshold || peak.lag <= 0.0) continue;
    const double f0 = std::clamp(sample_rate / peak.lag, kMinF0Hz, kMaxF0Hz);
    track.f0_hz[f] = f0;
    track.voiced[f] = true;
  }
  return track;
}

double pitch_range_semitones(const F0Track& track) {
  double lo = 0.0, hi = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < track.size(); ++i) {
    if (!track.voiced[i]) continue;
    const double f = track.f0_hz[i];
    if (count == 0) {
      lo = hi = f;
    } else {
      lo = std::min(lo, f);
      hi = std::max(hi, f);
    }
    ++count;
  }
  if (count < 2) return 0.0;
  return 12.0 * std::log2(hi / lo);
}

std::int64_t voiced_duration_frames(const F0Track& track) {
  return static_cast<std::int64_t>(std::count(track.voiced.begin(), track.voiced.end(), true));
}

ProsodicFeatures compute_features(const F0Track& track) {
  return {pitch_range_semitones(track), voiced_duration_frames(track)};
}

std::vector<double> mean_pool(std::span<const std::vector<double>> frames) {
  if (frames.empty()) throw Error(ErrorKind::EmptyInput, "mean_pool needs at least one frame");
  const std::size_t dim = frames.front().size();
  std::vector<double> sum(dim, 0.0);
  for (const auto& frame : frames) {
    if (frame.size() != dim) {
      throw Error(ErrorKind::DimensionMismatch, "frame of dim " + std::to_string(frame.size()) +
                                                    ", expected " + std::to_string(dim));
    }
    for (std::size_t d = 0; d < dim; ++d) sum[d] += frame[d];
  }
  const double n = static_cast<double>(frames.size());
  for (auto& v : sum) v /= n;
  return sum;
}

}  // namespace bcalign::prosody
