#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "masseg/errors.hpp"
#include "masseg/image.hpp"

namespace masseg {

namespace detail {

class NetpbmReader {
 public:
  explicit NetpbmReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const noexcept { return pos_; }

  std::string magic() {
    if (bytes_.size() < 2 || bytes_[0] != 'P') throw DecodeError("missing Netpbm magic", 0);
    pos_ = 2;
    return std::string{static_cast<char>(bytes_[0]), static_cast<char>(bytes_[1])};
  }

  // Header token: skips whitespace and '#' comments (to end of line).
  unsigned long token(std::string_view what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    unsigned long value = 0;
    while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > 0xFFFFFFFFul) throw DecodeError(std::string(what) + " too large", start);
      ++pos_;
    }
    if (pos_ == start) {
      throw DecodeError("expected " + std::string(what), start);
    }
    return value;
  }

  // The single whitespace byte separating the header from a binary raster.
  void raster_separator() {
    if (pos_ >= bytes_.size() || !is_space(bytes_[pos_])) {
      throw DecodeError("expected whitespace before raster", pos_);
    }
    ++pos_;
  }

  unsigned binary_sample(bool wide) {
    const std::size_t need = wide ? 2 : 1;
    if (pos_ + need > bytes_.size()) throw DecodeError("truncated raster", pos_);
    unsigned v = bytes_[pos_];
    if (wide) v = (v << 8) | bytes_[pos_ + 1];
    pos_ += need;
    return v;
  }

 private:
  static bool is_space(std::uint8_t c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
  }

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (is_space(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n' && bytes_[pos_] != '\r') ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

// Decodes PGM (P2/P5) or PPM (P3/P6). Color is reduced to luma 0.299R + 0.587G + 0.114B.
inline Image decode_netpbm(std::span<const std::uint8_t> bytes) {
  detail::NetpbmReader in(bytes);
  const std::string magic = in.magic();
  const bool ascii = magic == "P2" || magic == "P3";
  const bool color = magic == "P3" || magic == "P6";
  if (magic != "P2" && magic != "P3" && magic != "P5" && magic != "P6") {
    throw DecodeError("unsupported Netpbm magic '" + magic + "'", 0);
  }
  const std::size_t width_at = in.offset();
  const unsigned long width = in.token("width");
  const unsigned long height = in.token("height");
  const std::size_t maxval_at = in.offset();
  const unsigned long maxval = in.token("maxval");
  if (maxval == 0 || maxval > 65535) throw DecodeError("maxval outside 1..65535", maxval_at);
  if (width < kMinImageSide || height < kMinImageSide) {
    throw SizeError("image is " + std::to_string(width) + "x" + std::to_string(height) +
                    ", both sides must be at least " + std::to_string(kMinImageSide));
  }
  if (width * height > (1ul << 28)) throw DecodeError("image dimensions too large", width_at);

  const int channels = color ? 3 : 1;
  const bool wide = maxval > 255;
  const double scale = static_cast<double>(maxval);
  if (!ascii) in.raster_separator();

  std::vector<double> data(width * height);
  double rgb[3];
  for (double& px : data) {
    for (int c = 0; c < channels; ++c) {
      const std::size_t at = in.offset();
      const unsigned long v = ascii ? in.token("sample") : in.binary_sample(wide);
      if (v > maxval) throw DecodeError("sample exceeds maxval", at);
      rgb[c] = static_cast<double>(v) / scale;
    }
    px = color ? 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2] : rgb[0];
    px = std::clamp(px, 0.0, 1.0);
  }
  return Image(static_cast<int>(width), static_cast<int>(height), std::move(data));
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline Image load_frame(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_netpbm(bytes);
  } catch (const DecodeError& e) {
    throw DecodeError(path.string() + ": " + e.reason(), e.offset());
  }
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// 8-bit binary PGM.
inline std::string encode_pgm(const Image& img) {
  std::string out = "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) +
                    "\n255\n";
  out.reserve(out.size() + img.data().size());
  for (double v : img.data()) out.push_back(static_cast<char>(to_byte(v)));
  return out;
}

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

// 8-bit binary PPM from interleaved pixels.
inline std::string encode_ppm(int width, int height, std::span<const Rgb> pixels) {
  std::string out = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  out.reserve(out.size() + pixels.size() * 3);
  for (const Rgb& p : pixels) {
    out.push_back(static_cast<char>(p.r));
    out.push_back(static_cast<char>(p.g));
    out.push_back(static_cast<char>(p.b));
  }
  return out;
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("write failed for " + path.string());
}

}  // namespace masseg
