#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace finmine {

/// Mono waveform scaled to [-1, 1].
struct AudioClip {
  std::vector<double> samples;
  int sample_rate = 0;
  std::string source_id;

  double duration_seconds() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

/// Reads a RIFF/WAVE file holding 16-bit PCM or 32-bit IEEE float samples.
/// Multi-channel audio is averaged down to mono. The source id is the path.
AudioClip load_audio(const std::filesystem::path& path);

/// Same as load_audio, from an in-memory file image.
AudioClip decode_wav(std::span<const std::uint8_t> bytes, const std::string& source_id);

enum class WavEncoding { Pcm16, Float32 };

std::vector<std::uint8_t> encode_wav(std::span<const double> samples, int sample_rate,
                                     WavEncoding encoding = WavEncoding::Pcm16, int channels = 1);

/// Writes mono samples (interleaved if channels > 1) as a WAV file.
void save_wav(const std::filesystem::path& path, std::span<const double> samples, int sample_rate,
              WavEncoding encoding = WavEncoding::Pcm16, int channels = 1);

}  // namespace finmine
