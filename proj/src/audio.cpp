#include "finmine/audio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "finmine/checkpoint.hpp"
#include "finmine/error.hpp"

namespace finmine {
namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t le16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }
std::uint32_t le32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}
void put32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_tag(std::vector<std::uint8_t>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

struct Format {
  std::uint16_t tag = 0;
  std::uint16_t channels = 0;
  std::uint32_t rate = 0;
  std::uint16_t block_align = 0;
  std::uint16_t bits = 0;
};

}  // namespace

AudioClip decode_wav(std::span<const std::uint8_t> bytes, const std::string& source_id) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    fail(ErrorCode::MalformedContainer, source_id + ": not a RIFF/WAVE file");

  Format fmt;
  bool have_fmt = false;
  std::span<const std::uint8_t> data;
  bool have_data = false;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* head = bytes.data() + pos;
    const std::uint32_t size = le32(head + 4);
    const std::size_t body = pos + 8;
    // Some writers leave a bogus size on a trailing data chunk; clamp it.
    const std::size_t available = std::min<std::size_t>(size, bytes.size() - body);
    if (std::memcmp(head, "fmt ", 4) == 0) {
      if (available < 16) fail(ErrorCode::MalformedContainer, source_id + ": fmt chunk too short");
      const std::uint8_t* f = bytes.data() + body;
      fmt.tag = le16(f);
      fmt.channels = le16(f + 2);
      fmt.rate = le32(f + 4);
      fmt.block_align = le16(f + 12);
      fmt.bits = le16(f + 14);
      if (fmt.tag == kFormatExtensible) {
        if (available < 40) fail(ErrorCode::MalformedContainer, source_id + ": extensible fmt chunk too short");
        fmt.tag = le16(f + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(head, "data", 4) == 0) {
      data = bytes.subspan(body, available);
      have_data = true;
    }
    pos = body + available + (available & 1u);
  }

  if (!have_fmt) fail(ErrorCode::MalformedContainer, source_id + ": missing fmt chunk");
  if (!have_data) fail(ErrorCode::MalformedContainer, source_id + ": missing data chunk");
  if (fmt.channels == 0 || fmt.rate == 0) fail(ErrorCode::MalformedContainer, source_id + ": zero channels or rate");

  const bool pcm16 = fmt.tag == kFormatPcm && fmt.bits == 16;
  const bool float32 = fmt.tag == kFormatFloat && fmt.bits == 32;
  if (!pcm16 && !float32)
    fail(ErrorCode::UnsupportedEncoding, source_id + ": format tag " + std::to_string(fmt.tag) + " with " +
                                             std::to_string(fmt.bits) + " bits per sample");

  const std::size_t sample_bytes = fmt.bits / 8;
  const std::size_t frame_bytes = sample_bytes * fmt.channels;
  const std::size_t frames = data.size() / frame_bytes;
  if (frames == 0) fail(ErrorCode::EmptyAudio, source_id + ": no samples");

  AudioClip clip;
  clip.sample_rate = static_cast<int>(fmt.rate);
  clip.source_id = source_id;
  clip.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double total = 0.0;
    for (std::size_t c = 0; c < fmt.channels; ++c) {
      const std::uint8_t* p = data.data() + i * frame_bytes + c * sample_bytes;
      double v;
      if (pcm16) {
        v = static_cast<double>(static_cast<std::int16_t>(le16(p))) / 32768.0;
      } else {
        v = static_cast<double>(std::bit_cast<float>(le32(p)));
        if (!std::isfinite(v)) fail(ErrorCode::MalformedContainer, source_id + ": non-finite float sample");
        v = std::clamp(v, -1.0, 1.0);
      }
      total += v;
    }
    clip.samples[i] = total / fmt.channels;
  }
  return clip;
}

AudioClip load_audio(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return decode_wav(bytes, path.string());
}

std::vector<std::uint8_t> encode_wav(std::span<const double> samples, int sample_rate, WavEncoding encoding,
                                     int channels) {
  require(sample_rate > 0 && channels > 0, ErrorCode::InvalidConfig, "wav needs positive rate and channel count");
  const std::uint16_t bits = encoding == WavEncoding::Pcm16 ? 16 : 32;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * (bits / 8));
  const std::uint16_t block_align = static_cast<std::uint16_t>(channels * bits / 8);

  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  put_tag(out, "RIFF");
  put32(out, 36 + data_bytes);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put32(out, 16);
  put16(out, encoding == WavEncoding::Pcm16 ? kFormatPcm : kFormatFloat);
  put16(out, static_cast<std::uint16_t>(channels));
  put32(out, static_cast<std::uint32_t>(sample_rate));
  put32(out, static_cast<std::uint32_t>(sample_rate) * block_align);
  put16(out, block_align);
  put16(out, bits);
  put_tag(out, "data");
  put32(out, data_bytes);
  for (double s : samples) {
    if (encoding == WavEncoding::Pcm16) {
      const double scaled = std::round(std::clamp(s, -1.0, 1.0) * 32768.0);
      put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0))));
    } else {
      put32(out, std::bit_cast<std::uint32_t>(static_cast<float>(s)));
    }
  }
  return out;
}

void save_wav(const std::filesystem::path& path, std::span<const double> samples, int sample_rate,
              WavEncoding encoding, int channels) {
  const auto bytes = encode_wav(samples, sample_rate, encoding, channels);
  write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
}

}  // namespace finmine
