#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "finmine/audio.hpp"

namespace finmine {

// Synthetic stand-ins for field recordings: tonal whistles, click trains,
// burst pulses and band-limited water noise.

enum class SignalClass { Noise = 0, Whistle = 1, ClickTrain = 2, BurstPulse = 3 };
inline constexpr std::size_t kNumSignalClasses = 4;

std::string_view class_name(SignalClass c);
/// Accepts "noise", "whistle", "click", "burst".
SignalClass parse_class(std::string_view name);

enum class Contour { Up, Down, Turning };

struct WhistleShape {
  double start_hz = 5000.0;
  double end_hz = 10000.0;
  Contour contour = Contour::Up;
  double harmonic_gain = 0.0;  // relative level of the 2nd harmonic
};

/// Frequency-modulated tone. Up/Down sweep linearly from start_hz to end_hz;
/// Turning goes start -> end -> start along a half sine. 10 ms fade at each end.
std::vector<double> make_whistle(const WhistleShape& shape, std::size_t samples, int sample_rate, double amplitude);

/// Periodic broadband impulses, first at `offset_seconds`.
std::vector<double> make_click_train(double clicks_per_second, std::size_t samples, int sample_rate,
                                     double amplitude, double offset_seconds = 0.0);

/// Packets of high-rate clicks separated by short gaps.
std::vector<double> make_burst_pulse(std::size_t samples, int sample_rate, double amplitude, std::mt19937_64& rng);

/// Gaussian noise through 2nd-order Butterworth high-pass and low-pass
/// sections, rescaled to the requested RMS.
std::vector<double> make_band_noise(std::size_t samples, int sample_rate, double low_hz, double high_hz, double rms,
                                    std::mt19937_64& rng);

struct CorpusRecipe {
  std::array<std::size_t, kNumSignalClasses> counts{};  // indexed by SignalClass
  double clip_seconds = 0.75;
  int sample_rate = 44100;
  double noise_rms = 0.01;
  double signal_amplitude = 0.4;
};

struct LabeledClip {
  AudioClip clip;
  SignalClass label = SignalClass::Noise;
};

/// Deterministic in `seed`. Clips are ordered by class, then index; source
/// ids look like "synth/whistle_0003".
std::vector<LabeledClip> synthesize_corpus(std::uint64_t seed, const CorpusRecipe& recipe);

struct Segment {
  SignalClass label = SignalClass::Noise;
  double seconds = 1.0;
};

struct Event {
  SignalClass label = SignalClass::Noise;
  double start_seconds = 0.0;
  double end_seconds = 0.0;
};

struct Recording {
  AudioClip clip;
  std::vector<Event> events;  // non-noise segments only
};

/// Concatenates segments over one continuous background noise bed.
Recording compose_recording(std::uint64_t seed, std::span<const Segment> segments, const CorpusRecipe& style,
                            const std::string& source_id);

/// A long recording of mostly noise with `events` randomly placed signals.
Recording synthesize_recording(std::uint64_t seed, double seconds, std::size_t events, const CorpusRecipe& style,
                               const std::string& source_id);

}  // namespace finmine
