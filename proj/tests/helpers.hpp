#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "finmine/error.hpp"

namespace testutil {

// Hand-assembled RIFF/WAVE image, independent of the library's writer.
inline std::vector<std::uint8_t> wav_bytes(std::uint16_t format, std::uint16_t channels, std::uint16_t bits,
                                           std::uint32_t rate, const std::vector<std::uint8_t>& data) {
  std::vector<std::uint8_t> out;
  auto u16 = [&](std::uint16_t v) {
    out.push_back(v & 0xff);
    out.push_back(v >> 8);
  };
  auto u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xff);
  };
  auto tag = [&](const char* t) { out.insert(out.end(), t, t + 4); };
  tag("RIFF");
  u32(static_cast<std::uint32_t>(36 + data.size()));
  tag("WAVE");
  tag("fmt ");
  u32(16);
  u16(format);
  u16(channels);
  u32(rate);
  u32(rate * channels * bits / 8);
  u16(static_cast<std::uint16_t>(channels * bits / 8));
  u16(bits);
  tag("data");
  u32(static_cast<std::uint32_t>(data.size()));
  out.insert(out.end(), data.begin(), data.end());
  return out;
}

inline std::vector<std::uint8_t> pcm16(const std::vector<std::int16_t>& samples) {
  std::vector<std::uint8_t> out;
  for (auto s : samples) {
    const auto u = static_cast<std::uint16_t>(s);
    out.push_back(u & 0xff);
    out.push_back(u >> 8);
  }
  return out;
}

// Direct O(N²) DFT magnitude of a zero-padded, Hann-windowed segment.
inline std::vector<double> dft_magnitude(const std::vector<double>& segment, std::size_t fft_size) {
  const std::size_t w = segment.size();
  std::vector<double> mags(fft_size / 2 + 1);
  for (std::size_t k = 0; k < mags.size(); ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t n = 0; n < w; ++n) {
      const double hann = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * n / w));
      acc += segment[n] * hann * std::polar(1.0, -2.0 * std::numbers::pi * k * n / fft_size);
    }
    mags[k] = std::abs(acc);
  }
  return mags;
}

inline std::vector<double> sine(double hz, std::size_t n, int rate, double amp = 0.5) {
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = amp * std::sin(2.0 * std::numbers::pi * hz * i / rate);
  return out;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() / ("finmine_test_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

template <typename F>
finmine::ErrorCode error_of(F&& f) {
  try {
    f();
  } catch (const finmine::Error& e) {
    return e.code();
  }
  throw std::runtime_error("expected a finmine::Error");
}

}  // namespace testutil
