#include "datforge/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "datforge/errors.hpp"

namespace datforge {
namespace {

std::uint32_t read_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_tag(std::vector<std::uint8_t>& out, const char* tag) {
  out.insert(out.end(), tag, tag + 4);
}

}  // namespace

void require_valid(const Waveform& w, const char* who) {
  if (w.samples.empty()) throw ArgumentError(std::string(who) + ": empty waveform");
  if (w.sample_rate <= 0) throw ArgumentError(std::string(who) + ": invalid sample rate");
}

double power(std::span<const double> samples) {
  if (samples.empty()) return 0.0;
  double acc = 0.0;
  for (double s : samples) acc += s * s;
  return acc / static_cast<double>(samples.size());
}

double peak(const Waveform& w) {
  double p = 0.0;
  for (double s : w.samples) p = std::max(p, std::abs(s));
  return p;
}

double peak_normalize(Waveform& w) {
  const double p = peak(w);
  if (p <= 1.0) return 1.0;
  const double gain = 1.0 / p;
  for (double& s : w.samples) s *= gain;
  w.normalization_gain *= gain;
  return gain;
}

Waveform decode_wav(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0)
    throw FormatError("wav: RIFF chunk id missing");
  if (std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw FormatError("wav: RIFF form type is not WAVE");

  bool have_fmt = false;
  Waveform w;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) throw FormatError("wav: chunk size exceeds file length");
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw FormatError("wav: fmt chunk too short");
      const std::uint8_t* f = bytes.data() + body;
      const std::uint16_t audio_format = read_u16(f);
      const std::uint16_t channels = read_u16(f + 2);
      const std::uint32_t rate = read_u32(f + 4);
      const std::uint16_t bits = read_u16(f + 14);
      if (audio_format != 1)
        throw FormatError("wav: audio_format=" + std::to_string(audio_format) + " (need 1, PCM)");
      if (channels != 1)
        throw FormatError("wav: num_channels=" + std::to_string(channels) + " (need 1)");
      if (rate != static_cast<std::uint32_t>(kDefaultSampleRate))
        throw FormatError("wav: sample_rate=" + std::to_string(rate) + " (need 16000)");
      if (bits != 16)
        throw FormatError("wav: bits_per_sample=" + std::to_string(bits) + " (need 16)");
      w.sample_rate = static_cast<int>(rate);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw FormatError("wav: data chunk precedes fmt chunk");
      if (size % 2 != 0) throw FormatError("wav: data chunk size is not a whole sample count");
      const std::size_t n = size / 2;
      if (n == 0) throw FormatError("wav: data chunk holds no samples");
      w.samples.resize(n);
      const std::uint8_t* d = bytes.data() + body;
      for (std::size_t i = 0; i < n; ++i) {
        const auto v = static_cast<std::int16_t>(read_u16(d + 2 * i));
        w.samples[i] = static_cast<double>(v) / 32768.0;
      }
      return w;
    }
    pos = body + size + (size & 1u);
  }
  throw FormatError(have_fmt ? "wav: data chunk missing" : "wav: fmt chunk missing");
}

std::vector<std::uint8_t> encode_wav(const Waveform& w) {
  require_valid(w, "encode_wav");
  if (w.sample_rate != kDefaultSampleRate)
    throw FormatError("wav: sample_rate=" + std::to_string(w.sample_rate) + " (need 16000)");
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  put_tag(out, "RIFF");
  put_u32(out, 36 + data_bytes);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  put_tag(out, "data");
  put_u32(out, data_bytes);
  for (double s : w.samples) {
    const double q = std::clamp(std::nearbyint(s * 32768.0), -32768.0, 32767.0);
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  return out;
}

Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open wav file: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_wav(bytes);
}

void write_wav(const std::string& path, const Waveform& w) {
  const auto bytes = encode_wav(w);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open wav file for writing: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing wav file: " + path);
}

}  // namespace datforge
