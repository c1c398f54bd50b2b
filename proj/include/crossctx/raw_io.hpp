#pragma once

// Raw recording readers: RIFF/WAVE audio and effort/force CSV series.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "crossctx/dataset_io.hpp"
#include "crossctx/errors.hpp"
#include "crossctx/featurize.hpp"

namespace crossctx {

namespace detail {
inline std::uint32_t read_u32le(const std::string& b, std::size_t at) {
  return static_cast<std::uint32_t>(static_cast<unsigned char>(b[at])) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 1])) << 8 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 2])) << 16 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 3])) << 24;
}
inline std::uint16_t read_u16le(const std::string& b, std::size_t at) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(b[at]) |
                                    static_cast<unsigned char>(b[at + 1]) << 8);
}
inline void put_u32le(std::string& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u16le(std::string& b, std::uint16_t v) {
  b.push_back(static_cast<char>(v & 0xFF));
  b.push_back(static_cast<char>(v >> 8));
}
}  // namespace detail

/// Mono RIFF/WAVE, 16-bit PCM (scaled to [-1, 1)) or 32-bit IEEE float.
inline AudioRecording read_wav(const std::filesystem::path& path) {
  const std::string b = io::read_text_file(path);
  const std::string where = "crossctx::read_wav: '" + path.string() + "': ";
  if (b.size() < 12 || b.compare(0, 4, "RIFF") != 0 || b.compare(8, 4, "WAVE") != 0)
    throw DataError(where + "not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= b.size()) {
    const std::string id = b.substr(pos, 4);
    const std::uint32_t size = detail::read_u32le(b, pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > b.size()) throw DataError(where + "truncated chunk '" + id + "'");
    if (id == "fmt ") {
      if (size < 16) throw DataError(where + "short fmt chunk");
      format = detail::read_u16le(b, body);
      channels = detail::read_u16le(b, body + 2);
      rate = detail::read_u32le(b, body + 4);
      bits = detail::read_u16le(b, body + 14);
      if (format == 0xFFFE && size >= 26) format = detail::read_u16le(b, body + 24);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw DataError(where + "data chunk before fmt chunk");
      if (channels != 1) throw DataError(where + "expected mono audio, got " +
                                         std::to_string(channels) + " channels");
      AudioRecording rec;
      rec.sample_rate = static_cast<double>(rate);
      if (format == 1 && bits == 16) {
        rec.samples.resize(size / 2);
        for (std::size_t i = 0; i < rec.samples.size(); ++i)
          rec.samples[i] = static_cast<std::int16_t>(detail::read_u16le(b, body + 2 * i)) / 32768.0;
      } else if (format == 3 && bits == 32) {
        rec.samples.resize(size / 4);
        for (std::size_t i = 0; i < rec.samples.size(); ++i)
          rec.samples[i] = std::bit_cast<float>(detail::read_u32le(b, body + 4 * i));
      } else {
        throw DataError(where + "unsupported encoding (format " + std::to_string(format) +
                        ", " + std::to_string(bits) + " bits)");
      }
      if (rate == 0) throw DataError(where + "sample rate is zero");
      return rec;
    }
    pos = body + size + (size & 1);
  }
  throw DataError(where + "no data chunk");
}

/// Writes mono 32-bit float WAVE.
inline void write_wav(const std::filesystem::path& path, const AudioRecording& rec) {
  std::string b;
  const auto data_bytes = static_cast<std::uint32_t>(rec.samples.size() * 4);
  const auto rate = static_cast<std::uint32_t>(rec.sample_rate);
  b += "RIFF";
  detail::put_u32le(b, 36 + data_bytes);
  b += "WAVEfmt ";
  detail::put_u32le(b, 16);
  detail::put_u16le(b, 3);
  detail::put_u16le(b, 1);
  detail::put_u32le(b, rate);
  detail::put_u32le(b, rate * 4);
  detail::put_u16le(b, 4);
  detail::put_u16le(b, 32);
  b += "data";
  detail::put_u32le(b, data_bytes);
  for (double s : rec.samples) detail::put_u32le(b, std::bit_cast<std::uint32_t>(static_cast<float>(s)));
  io::write_text_file(path, b);
}

/// CSV with header `t,c0,...,c{k-1}`; time in seconds, one row per sample.
/// The rate is estimated from the first and last timestamps.
inline MultiChannelSeries read_series_csv(const std::filesystem::path& path,
                                          std::size_t expected_channels = 0) {
  const auto lines = io::read_lines(path);
  const std::string where = "crossctx::read_series_csv: '" + path.string() + "': ";
  if (lines.size() < 2) throw DataError(where + "no samples");
  const auto header = io::split_csv_line(lines.front());
  if (header.size() < 2 || header[0] != "t") throw DataError(where + "header must start with t");
  const std::size_t k = header.size() - 1;
  for (std::size_t c = 0; c < k; ++c)
    if (header[c + 1] != "c" + std::to_string(c))
      throw DataError(where + "header column " + std::to_string(c + 1) + " must be c" +
                      std::to_string(c));
  if (expected_channels != 0 && k != expected_channels)
    throw DataError(where + "expected " + std::to_string(expected_channels) + " channels, got " +
                    std::to_string(k));

  MultiChannelSeries s;
  s.channels.assign(k, {});
  double t_first = 0.0, t_last = 0.0;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    const std::string at = path.filename().string() + ":" + std::to_string(ln + 1);
    const auto f = io::split_csv_line(lines[ln]);
    if (f.size() != k + 1) throw DataError(where + "wrong column count at line " + std::to_string(ln + 1));
    const double t = io::parse_double(f[0], at);
    if (ln == 1) t_first = t;
    t_last = t;
    for (std::size_t c = 0; c < k; ++c) s.channels[c].push_back(io::parse_double(f[c + 1], at));
  }
  const std::size_t n = s.length();
  s.rate = (n > 1 && t_last > t_first) ? static_cast<double>(n - 1) / (t_last - t_first) : 0.0;
  return s;
}

inline void write_series_csv(const std::filesystem::path& path, const MultiChannelSeries& s) {
  std::string text = "t";
  for (std::size_t c = 0; c < s.channels.size(); ++c) text += ",c" + std::to_string(c);
  text += "\n";
  for (std::size_t k = 0; k < s.length(); ++k) {
    text += io::format_double(s.rate > 0 ? static_cast<double>(k) / s.rate : static_cast<double>(k));
    for (const auto& ch : s.channels) text += "," + io::format_double(ch[k]);
    text += "\n";
  }
  io::write_text_file(path, text);
}

}  // namespace crossctx
