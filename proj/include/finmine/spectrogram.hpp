#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "finmine/audio.hpp"
#include "finmine/tensor.hpp"

namespace finmine {

enum class SpectrumScale { Magnitude, Power, Log };

struct SpectrogramParams {
  double window_seconds = 0.01;
  double hop_seconds = 0.005;
  std::size_t fft_size = 512;
  SpectrumScale scale = SpectrumScale::Magnitude;

  std::size_t window_samples(int sample_rate) const;
  std::size_t hop_samples(int sample_rate) const;
  std::size_t bins() const { return fft_size / 2 + 1; }

  /// Throws InvalidConfig unless fft_size is a power of two covering the
  /// window and 1 <= hop <= window.
  void validate(int sample_rate) const;
};

/// T×F non-negative frames. Frame t covers samples
/// [start_sample + t·hop, start_sample + t·hop + window).
struct Spectrogram {
  Tensor<double> frames;
  SpectrogramParams params;
  int sample_rate = 0;
  std::string source_id;
  std::size_t start_sample = 0;

  std::size_t num_frames() const { return frames.rank() ? frames.dim(0) : 0; }
  std::size_t num_bins() const { return frames.rank() ? frames.dim(1) : 0; }
};

/// Fixed-length slice of a spectrogram, standard-scored per frame.
struct Window {
  Tensor<float> values;  // frames × bins
  std::string source_id;
  std::size_t start_frame = 0;

  std::size_t num_frames() const { return values.dim(0); }
  std::size_t num_bins() const { return values.dim(1); }
};

inline constexpr std::size_t kWindowFrames = 128;
inline constexpr std::size_t kTrainingHopFrames = 64;
inline constexpr double kNormalizeEpsilon = 1e-8;

/// Periodic Hann window w[n] = 0.5 (1 - cos(2πn/W)).
std::vector<double> hann_window(std::size_t length);

Spectrogram stft(const AudioClip& clip, const SpectrogramParams& params = {});

/// (frame - mean) / max(population std, 1e-8), in place.
void standardize_frame(std::span<double> frame);

std::vector<Window> extract_windows(const Spectrogram& spec, std::size_t window_frames = kWindowFrames,
                                    std::size_t hop_frames = kTrainingHopFrames);

/// Sample range [first, last) of the audio underlying `frames` spectrogram
/// frames starting at `start_frame`.
struct SampleSpan {
  std::size_t first = 0;
  std::size_t last = 0;
};
SampleSpan frames_to_samples(std::size_t start_frame, std::size_t frames, const SpectrogramParams& params,
                             int sample_rate);

void write_spectrogram_csv(const Spectrogram& spec, const std::filesystem::path& path);
void write_window_csv(const Window& window, const std::filesystem::path& path);

}  // namespace finmine
