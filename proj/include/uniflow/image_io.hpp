#pragma once

// Binary PPM (P6) reading and writing. Pixels map to [0, 1] on load; on save
// they are clamped, scaled by 255 and rounded half away from zero.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "uniflow/error.hpp"
#include "uniflow/tensor.hpp"

namespace uniflow {

namespace detail_ppm {

struct Cursor {
  const std::vector<unsigned char>& bytes;
  std::size_t pos = 0;
  const std::string& path;

  [[noreturn]] void fail(const std::string& what) const {
    throw IoError(path + ": " + what + " at byte offset " + std::to_string(pos));
  }

  void skip_space_and_comments() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  }

  std::int64_t read_uint() {
    skip_space_and_comments();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) fail("expected an unsigned integer");
    std::int64_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      if (v > (1 << 24)) fail("header value too large");
    }
    return v;
  }
};

}  // namespace detail_ppm

/// Decodes a P6 byte stream into a (1, 3, H, W) tensor.
inline Tensor decode_ppm(const std::vector<unsigned char>& bytes, const std::string& label = "<memory>") {
  detail_ppm::Cursor cur{bytes, 0, label};
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') cur.fail("missing P6 magic");
  cur.pos = 2;
  const std::int64_t w = cur.read_uint();
  const std::int64_t h = cur.read_uint();
  const std::int64_t maxval = cur.read_uint();
  if (w < 1 || h < 1) cur.fail("empty image dimensions");
  if (maxval < 1 || maxval > 255) cur.fail("unsupported maxval " + std::to_string(maxval));
  if (cur.pos >= bytes.size() || !std::isspace(bytes[cur.pos])) cur.fail("expected whitespace after maxval");
  ++cur.pos;
  const std::size_t need = static_cast<std::size_t>(w * h * 3);
  if (bytes.size() - cur.pos < need) {
    cur.pos = bytes.size();
    cur.fail("truncated payload (" + std::to_string(need) + " bytes expected)");
  }
  Tensor t = Tensor::zeros({1, 3, h, w});
  double* d = t.data().data();
  const double inv = 1.0 / static_cast<double>(maxval);
  const unsigned char* px = bytes.data() + cur.pos;
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x)
      for (std::int64_t c = 0; c < 3; ++c) d[(c * h + y) * w + x] = px[(y * w + x) * 3 + c] * inv;
  return t;
}

inline std::uint8_t quantize_u8(double v) {
  const double c = std::clamp(v, 0.0, 1.0) * 255.0;
  return static_cast<std::uint8_t>(std::round(c));
}

/// Encodes sample `n` of a 3-channel tensor as P6 bytes.
inline std::vector<unsigned char> encode_ppm(const Tensor& t, std::int64_t n = 0) {
  const Shape& s = t.shape();
  if (s.c != 3) throw ShapeError("encode_ppm: expected 3 channels, got " + s.str());
  if (n < 0 || n >= s.n) throw ShapeError("encode_ppm: batch index out of range");
  const std::string header = "P6\n" + std::to_string(s.w) + " " + std::to_string(s.h) + "\n255\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  out.reserve(out.size() + static_cast<std::size_t>(3 * s.h * s.w));
  for (std::int64_t y = 0; y < s.h; ++y)
    for (std::int64_t x = 0; x < s.w; ++x)
      for (std::int64_t c = 0; c < 3; ++c) out.push_back(quantize_u8(t.at(n, c, y, x)));
  return out;
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

inline Tensor load_image(const std::filesystem::path& path) {
  if (path.extension() != ".ppm") throw IoError(path.string() + ": only binary PPM (.ppm) is supported");
  return decode_ppm(read_file_bytes(path), path.string());
}

inline void save_image(const Tensor& t, const std::filesystem::path& path, std::int64_t n = 0) {
  write_file_bytes(path, encode_ppm(t, n));
}

}  // namespace uniflow
