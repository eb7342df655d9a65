#include "finmine/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "finmine/error.hpp"

namespace finmine {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr std::array<std::string_view, kNumSignalClasses> kClassNames = {"noise", "whistle", "click", "burst"};

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// RBJ cookbook biquad, direct form I.
struct Biquad {
  double b0, b1, b2, a1, a2;
  double x1 = 0, x2 = 0, y1 = 0, y2 = 0;

  static Biquad butterworth(double cutoff_hz, int sample_rate, bool highpass) {
    const double w0 = kTwoPi * cutoff_hz / sample_rate;
    const double quality = 1.0 / std::numbers::sqrt2;
    const double alpha = std::sin(w0) / (2.0 * quality);
    const double cw = std::cos(w0);
    const double a0 = 1.0 + alpha;
    Biquad q{};
    if (highpass) {
      q.b0 = (1.0 + cw) / 2.0 / a0;
      q.b1 = -(1.0 + cw) / a0;
    } else {
      q.b0 = (1.0 - cw) / 2.0 / a0;
      q.b1 = (1.0 - cw) / a0;
    }
    q.b2 = q.b0;
    q.a1 = -2.0 * cw / a0;
    q.a2 = (1.0 - alpha) / a0;
    return q;
  }

  double operator()(double x) {
    const double y = b0 * x + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
    x2 = x1;
    x1 = x;
    y2 = y1;
    y1 = y;
    return y;
  }
};

// Gaussian-windowed cosine; sigma in samples sets the bandwidth (~sr / 2πσ).
void add_click(std::vector<double>& out, std::size_t center, double amplitude, double center_hz, int sample_rate,
               double sigma) {
  const int reach = 5;
  for (int k = -reach; k <= reach; ++k) {
    const std::ptrdiff_t idx = static_cast<std::ptrdiff_t>(center) + k;
    if (idx < 0 || idx >= static_cast<std::ptrdiff_t>(out.size())) continue;
    const double env = std::exp(-0.5 * (k / sigma) * (k / sigma));
    out[static_cast<std::size_t>(idx)] += amplitude * env * std::cos(kTwoPi * center_hz * k / sample_rate);
  }
}

std::vector<double> random_signal(SignalClass label, std::size_t samples, int sample_rate, double amplitude,
                                  std::mt19937_64& rng) {
  switch (label) {
    case SignalClass::Noise:
      return std::vector<double>(samples, 0.0);
    case SignalClass::Whistle: {
      WhistleShape shape;
      const double lo = uniform(rng, 4000.0, 9000.0);
      const double hi = lo + uniform(rng, 2000.0, 6000.0);
      const int contour = std::uniform_int_distribution<int>(0, 2)(rng);
      shape.contour = static_cast<Contour>(contour);
      const bool rising = shape.contour == Contour::Up ||
                          (shape.contour == Contour::Turning && std::bernoulli_distribution(0.5)(rng));
      shape.start_hz = rising ? lo : hi;
      shape.end_hz = rising ? hi : lo;
      shape.harmonic_gain = uniform(rng, 0.0, 0.4);
      return make_whistle(shape, samples, sample_rate, amplitude * uniform(rng, 0.6, 1.0));
    }
    case SignalClass::ClickTrain: {
      const double rate = uniform(rng, 15.0, 80.0);
      return make_click_train(rate, samples, sample_rate, amplitude * uniform(rng, 0.6, 1.0),
                              uniform(rng, 0.0, 1.0 / rate));
    }
    case SignalClass::BurstPulse:
      return make_burst_pulse(samples, sample_rate, amplitude * uniform(rng, 0.6, 1.0), rng);
  }
  return {};
}

std::vector<double> background(std::size_t samples, int sample_rate, double rms, std::mt19937_64& rng) {
  const double low = uniform(rng, 100.0, 1500.0);
  const double high = uniform(rng, 6000.0, 18000.0);
  return make_band_noise(samples, sample_rate, low, high, rms * uniform(rng, 0.7, 1.3), rng);
}

void clamp_unit(std::vector<double>& x) {
  for (double& v : x) v = std::clamp(v, -1.0, 1.0);
}

}  // namespace

std::string_view class_name(SignalClass c) { return kClassNames.at(static_cast<std::size_t>(c)); }

SignalClass parse_class(std::string_view name) {
  for (std::size_t i = 0; i < kClassNames.size(); ++i)
    if (kClassNames[i] == name) return static_cast<SignalClass>(i);
  fail(ErrorCode::InvalidConfig, "unknown signal class '" + std::string(name) + "'");
}

std::vector<double> make_whistle(const WhistleShape& shape, std::size_t samples, int sample_rate, double amplitude) {
  std::vector<double> out(samples, 0.0);
  const std::size_t fade = std::min<std::size_t>(static_cast<std::size_t>(0.01 * sample_rate), samples / 2);
  double phase = 0.0;
  const double denom = samples > 1 ? static_cast<double>(samples - 1) : 1.0;
  for (std::size_t n = 0; n < samples; ++n) {
    const double tau = static_cast<double>(n) / denom;
    double f = shape.start_hz + (shape.end_hz - shape.start_hz) * tau;
    if (shape.contour == Contour::Turning)
      f = shape.start_hz + (shape.end_hz - shape.start_hz) * std::sin(std::numbers::pi * tau);
    double env = 1.0;
    if (fade > 0 && n < fade) env = 0.5 * (1.0 - std::cos(std::numbers::pi * n / fade));
    if (fade > 0 && samples - 1 - n < fade) env = 0.5 * (1.0 - std::cos(std::numbers::pi * (samples - 1 - n) / fade));
    out[n] = amplitude * env * (std::sin(phase) + shape.harmonic_gain * std::sin(2.0 * phase));
    phase += kTwoPi * f / sample_rate;
    if (phase > kTwoPi) phase -= kTwoPi;
  }
  return out;
}

std::vector<double> make_click_train(double clicks_per_second, std::size_t samples, int sample_rate,
                                     double amplitude, double offset_seconds) {
  require(clicks_per_second > 0.0, ErrorCode::InvalidConfig, "click rate must be positive");
  std::vector<double> out(samples, 0.0);
  const double period = sample_rate / clicks_per_second;
  for (double pos = offset_seconds * sample_rate; pos < static_cast<double>(samples); pos += period)
    add_click(out, static_cast<std::size_t>(std::llround(pos)), amplitude, 12000.0, sample_rate, 1.2);
  return out;
}

std::vector<double> make_burst_pulse(std::size_t samples, int sample_rate, double amplitude, std::mt19937_64& rng) {
  std::vector<double> out(samples, 0.0);
  double pos = uniform(rng, 0.0, 0.03) * sample_rate;
  while (pos < static_cast<double>(samples)) {
    const double rate = uniform(rng, 300.0, 900.0);
    const double center_hz = uniform(rng, 6000.0, 14000.0);
    const double end = pos + uniform(rng, 0.05, 0.2) * sample_rate;
    const double period = sample_rate / rate;
    for (; pos < end && pos < static_cast<double>(samples); pos += period)
      add_click(out, static_cast<std::size_t>(std::llround(pos)), amplitude, center_hz, sample_rate, 1.2);
    pos = end + uniform(rng, 0.02, 0.08) * sample_rate;
  }
  return out;
}

std::vector<double> make_band_noise(std::size_t samples, int sample_rate, double low_hz, double high_hz, double rms,
                                    std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Biquad hp = Biquad::butterworth(low_hz, sample_rate, true);
  Biquad lp = Biquad::butterworth(high_hz, sample_rate, false);
  std::vector<double> out(samples);
  double energy = 0.0;
  for (auto& v : out) {
    v = lp(hp(gauss(rng)));
    energy += v * v;
  }
  const double actual = samples ? std::sqrt(energy / static_cast<double>(samples)) : 0.0;
  if (actual > 0.0)
    for (auto& v : out) v *= rms / actual;
  return out;
}

std::vector<LabeledClip> synthesize_corpus(std::uint64_t seed, const CorpusRecipe& recipe) {
  std::size_t total = 0;
  for (std::size_t c : recipe.counts) total += c;
  require(total > 0, ErrorCode::EmptyRecipe, "corpus recipe has no clips");
  require(recipe.sample_rate > 0 && recipe.clip_seconds > 0.0, ErrorCode::InvalidConfig,
          "recipe needs positive sample rate and clip length");

  std::mt19937_64 rng(seed);
  const auto samples = static_cast<std::size_t>(std::llround(recipe.clip_seconds * recipe.sample_rate));
  std::vector<LabeledClip> out;
  out.reserve(total);
  for (std::size_t c = 0; c < kNumSignalClasses; ++c) {
    const auto label = static_cast<SignalClass>(c);
    for (std::size_t i = 0; i < recipe.counts[c]; ++i) {
      LabeledClip item;
      item.label = label;
      item.clip.sample_rate = recipe.sample_rate;
      char id[64];
      std::snprintf(id, sizeof id, "synth/%s_%04zu", std::string(class_name(label)).c_str(), i);
      item.clip.source_id = id;
      item.clip.samples = background(samples, recipe.sample_rate, recipe.noise_rms, rng);
      const auto signal = random_signal(label, samples, recipe.sample_rate, recipe.signal_amplitude, rng);
      for (std::size_t n = 0; n < samples; ++n) item.clip.samples[n] += signal[n];
      clamp_unit(item.clip.samples);
      out.push_back(std::move(item));
    }
  }
  return out;
}

Recording compose_recording(std::uint64_t seed, std::span<const Segment> segments, const CorpusRecipe& style,
                            const std::string& source_id) {
  require(!segments.empty(), ErrorCode::EmptyRecipe, "recording has no segments");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> lengths;
  std::size_t total = 0;
  for (const auto& s : segments) {
    lengths.push_back(static_cast<std::size_t>(std::llround(s.seconds * style.sample_rate)));
    total += lengths.back();
  }
  Recording rec;
  rec.clip.sample_rate = style.sample_rate;
  rec.clip.source_id = source_id;
  rec.clip.samples = background(total, style.sample_rate, style.noise_rms, rng);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (segments[i].label != SignalClass::Noise) {
      const auto signal = random_signal(segments[i].label, lengths[i], style.sample_rate, style.signal_amplitude, rng);
      for (std::size_t n = 0; n < lengths[i]; ++n) rec.clip.samples[offset + n] += signal[n];
      rec.events.push_back({segments[i].label, static_cast<double>(offset) / style.sample_rate,
                            static_cast<double>(offset + lengths[i]) / style.sample_rate});
    }
    offset += lengths[i];
  }
  clamp_unit(rec.clip.samples);
  return rec;
}

Recording synthesize_recording(std::uint64_t seed, double seconds, std::size_t events, const CorpusRecipe& style,
                               const std::string& source_id) {
  require(seconds > 0.0, ErrorCode::InvalidConfig, "recording length must be positive");
  std::mt19937_64 rng(seed ^ 0x9E3779B97F4A7C15ull);
  std::vector<Segment> segments;
  const double slot = events ? seconds / static_cast<double>(events) : seconds;
  for (std::size_t e = 0; e < events; ++e) {
    const double length = std::min(uniform(rng, 0.7, 1.5), slot * 0.8);
    const double lead = uniform(rng, 0.0, slot - length);
    const auto label = static_cast<SignalClass>(std::uniform_int_distribution<int>(1, 3)(rng));
    segments.push_back({SignalClass::Noise, lead});
    segments.push_back({label, length});
    segments.push_back({SignalClass::Noise, slot - lead - length});
  }
  if (segments.empty()) segments.push_back({SignalClass::Noise, seconds});
  std::erase_if(segments, [](const Segment& s) { return s.seconds <= 0.0; });
  return compose_recording(seed, segments, style, source_id);
}

}  // namespace finmine
