#include "bcalign/wav.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <string>

#include "bcalign/error.hpp"

namespace bcalign::wav {

namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
         (std::uint32_t{p[3]} << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::ofstream& out, std::uint32_t v) {
  const std::array<char, 4> b = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b.data(), 4);
}

void put_u16(std::ofstream& out, std::uint16_t v) {
  const std::array<char, 2> b = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
  out.write(b.data(), 2);
}

}  // namespace

Audio read_wav(const std::filesystem::path& path, unsigned channel) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = path.string() + ": ";
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw Error(ErrorKind::BadSchema, where + "not a RIFF/WAVE file");
  }

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = std::min<std::size_t>(size, bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0 && avail >= 16) {
      format = read_u16(chunk + 8);
      channels = read_u16(chunk + 10);
      rate = read_u32(chunk + 12);
      bits = read_u16(chunk + 22);
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_size = avail;
    }
    pos = body + size + (size & 1u);
  }
  // 0xFFFE is WAVE_FORMAT_EXTENSIBLE; sample layout is identical for 16-bit PCM.
  if ((format != 1 && format != 0xFFFE) || bits != 16) {
    throw Error(ErrorKind::BadSchema, where + "only 16-bit PCM is supported");
  }
  if (channels == 0 || rate == 0 || data == nullptr) throw Error(ErrorKind::BadSchema, where + "incomplete header");
  if (channel >= channels) {
    throw Error(ErrorKind::InvalidArgument, where + "channel " + std::to_string(channel) + " not present (" +
                                                std::to_string(channels) + " channels)");
  }

  Audio audio;
  audio.sample_rate = rate;
  const std::size_t frame_bytes = 2u * channels;
  const std::size_t n = data_size / frame_bytes;
  audio.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto raw = static_cast<std::int16_t>(read_u16(data + i * frame_bytes + 2u * channel));
    audio.samples[i] = static_cast<double>(raw) / 32768.0;
  }
  return audio;
}

void write_wav(const std::filesystem::path& path, std::span<const double> samples, double sample_rate) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  const auto rate = static_cast<std::uint32_t>(std::lround(sample_rate));
  out.write("RIFF", 4);
  put_u32(out, 36 + data_bytes);
  out.write("WAVEfmt ", 8);
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, rate);
  put_u32(out, rate * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out.write("data", 4);
  put_u32(out, data_bytes);
  for (double x : samples) {
    const double clipped = std::clamp(x, -1.0, 1.0);
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(clipped * 32767.0))));
  }
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

std::vector<double> synthesize_glide(double f_start_hz, double f_end_hz, double seconds, double sample_rate,
                                     double amplitude) {
  const auto n = static_cast<std::size_t>(std::llround(seconds * sample_rate));
  std::vector<double> out(n);
  double phase = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = amplitude * std::sin(phase);
    const double t = n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;
    const double f = f_start_hz + (f_end_hz - f_start_hz) * t;
    phase += 2.0 * std::numbers::pi * f / sample_rate;
  }
  return out;
}

}  // namespace bcalign::wav
