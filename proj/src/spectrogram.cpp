#include "finmine/spectrogram.hpp"

#include <fftw3.h>

#include <bit>
#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>
#include <sstream>

#include "finmine/checkpoint.hpp"
#include "finmine/error.hpp"

namespace finmine {
namespace {

// FFTW's planner is not reentrant; execution on distinct plans is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwPlanDeleter {
  void operator()(fftw_plan_s* plan) const {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
};

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(9);
  os << v;
  return os.str();
}

}  // namespace

// Half-way cases round to even, so 0.005 s at 44.1 kHz gives 220 samples.
std::size_t SpectrogramParams::window_samples(int sample_rate) const {
  return static_cast<std::size_t>(std::nearbyint(window_seconds * sample_rate));
}

std::size_t SpectrogramParams::hop_samples(int sample_rate) const {
  return static_cast<std::size_t>(std::nearbyint(hop_seconds * sample_rate));
}

void SpectrogramParams::validate(int sample_rate) const {
  require(sample_rate > 0, ErrorCode::InvalidConfig, "sample rate must be positive");
  require(fft_size >= 2 && std::has_single_bit(fft_size), ErrorCode::InvalidConfig,
          "fft size " + std::to_string(fft_size) + " is not a power of two");
  const std::size_t w = window_samples(sample_rate), h = hop_samples(sample_rate);
  require(w >= 1, ErrorCode::InvalidConfig, "window shorter than one sample");
  require(fft_size >= w, ErrorCode::InvalidConfig,
          "fft size " + std::to_string(fft_size) + " shorter than window of " + std::to_string(w) + " samples");
  require(h >= 1 && h <= w, ErrorCode::InvalidConfig, "hop must be between 1 sample and the window length");
}

std::vector<double> hann_window(std::size_t length) {
  std::vector<double> w(length);
  for (std::size_t n = 0; n < length; ++n)
    w[n] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(length)));
  return w;
}

Spectrogram stft(const AudioClip& clip, const SpectrogramParams& params) {
  params.validate(clip.sample_rate);
  const std::size_t w = params.window_samples(clip.sample_rate);
  const std::size_t h = params.hop_samples(clip.sample_rate);
  const std::size_t n = clip.samples.size();
  require(n >= w, ErrorCode::ClipTooShort,
          clip.source_id + ": " + std::to_string(n) + " samples, window needs " + std::to_string(w));

  const std::size_t frames = (n - w) / h + 1;
  const std::size_t bins = params.bins();
  const std::size_t fft = params.fft_size;
  const auto taper = hann_window(w);

  std::unique_ptr<double, FftwFree> in(static_cast<double*>(fftw_malloc(sizeof(double) * fft)));
  std::unique_ptr<fftw_complex, FftwFree> out(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * bins)));
  std::unique_ptr<fftw_plan_s, FftwPlanDeleter> plan;
  {
    std::lock_guard lock(planner_mutex());
    plan.reset(fftw_plan_dft_r2c_1d(static_cast<int>(fft), in.get(), out.get(), FFTW_ESTIMATE));
  }

  Spectrogram spec;
  spec.params = params;
  spec.sample_rate = clip.sample_rate;
  spec.source_id = clip.source_id;
  spec.frames = Tensor<double>(Shape{frames, bins});
  for (std::size_t t = 0; t < frames; ++t) {
    const double* seg = clip.samples.data() + t * h;
    for (std::size_t i = 0; i < w; ++i) in.get()[i] = seg[i] * taper[i];
    for (std::size_t i = w; i < fft; ++i) in.get()[i] = 0.0;
    fftw_execute(plan.get());
    for (std::size_t k = 0; k < bins; ++k) {
      const double re = out.get()[k][0], im = out.get()[k][1];
      const double power = re * re + im * im;
      double v = std::sqrt(power);
      if (params.scale == SpectrumScale::Power) v = power;
      if (params.scale == SpectrumScale::Log) v = std::log1p(v);
      spec.frames.at(t, k) = v;
    }
  }
  return spec;
}

void standardize_frame(std::span<double> frame) {
  if (frame.empty()) return;
  double mean = 0.0;
  for (double v : frame) mean += v;
  mean /= static_cast<double>(frame.size());
  double var = 0.0;
  for (double v : frame) var += (v - mean) * (v - mean);
  var /= static_cast<double>(frame.size());
  const double sd = std::sqrt(var);
  if (sd < kNormalizeEpsilon) {
    for (double& v : frame) v = 0.0;
    return;
  }
  for (double& v : frame) v = (v - mean) / sd;
}

std::vector<Window> extract_windows(const Spectrogram& spec, std::size_t window_frames, std::size_t hop_frames) {
  require(window_frames >= 1 && hop_frames >= 1, ErrorCode::InvalidConfig, "window and hop must be >= 1 frame");
  const std::size_t frames = spec.num_frames(), bins = spec.num_bins();
  require(frames >= window_frames, ErrorCode::SpectrogramTooShort,
          spec.source_id + ": " + std::to_string(frames) + " frames, window needs " + std::to_string(window_frames));

  std::vector<Window> windows;
  std::vector<double> frame(bins);
  for (std::size_t start = 0; start + window_frames <= frames; start += hop_frames) {
    Window win;
    win.source_id = spec.source_id;
    win.start_frame = start;
    win.values = Tensor<float>(Shape{window_frames, bins});
    for (std::size_t t = 0; t < window_frames; ++t) {
      for (std::size_t k = 0; k < bins; ++k) frame[k] = spec.frames.at(start + t, k);
      standardize_frame(frame);
      for (std::size_t k = 0; k < bins; ++k) win.values.at(t, k) = static_cast<float>(frame[k]);
    }
    windows.push_back(std::move(win));
  }
  return windows;
}

SampleSpan frames_to_samples(std::size_t start_frame, std::size_t frames, const SpectrogramParams& params,
                             int sample_rate) {
  const std::size_t h = params.hop_samples(sample_rate), w = params.window_samples(sample_rate);
  SampleSpan span;
  span.first = start_frame * h;
  span.last = frames == 0 ? span.first : span.first + (frames - 1) * h + w;
  return span;
}

void write_spectrogram_csv(const Spectrogram& spec, const std::filesystem::path& path) {
  std::string out = "frame";
  for (std::size_t k = 0; k < spec.num_bins(); ++k) out += ",bin" + std::to_string(k);
  out += '\n';
  for (std::size_t t = 0; t < spec.num_frames(); ++t) {
    out += std::to_string(t);
    for (std::size_t k = 0; k < spec.num_bins(); ++k) out += "," + format_double(spec.frames.at(t, k));
    out += '\n';
  }
  write_file_atomic(path, out);
}

void write_window_csv(const Window& window, const std::filesystem::path& path) {
  std::string out = "frame";
  for (std::size_t k = 0; k < window.num_bins(); ++k) out += ",bin" + std::to_string(k);
  out += '\n';
  for (std::size_t t = 0; t < window.num_frames(); ++t) {
    out += std::to_string(window.start_frame + t);
    for (std::size_t k = 0; k < window.num_bins(); ++k) out += "," + format_double(window.values.at(t, k));
    out += '\n';
  }
  write_file_atomic(path, out);
}

}  // namespace finmine
