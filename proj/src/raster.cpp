#include "hsrl/raster.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <vector>

namespace hsrl {

namespace {

// Eight anchor colors of a dark-blue-to-yellow map, interpolated linearly.
constexpr unsigned char kMap[8][3] = {
    {68, 1, 84},  {70, 50, 127},  {54, 92, 141},  {39, 127, 142},
    {31, 161, 135}, {74, 194, 109}, {159, 218, 58}, {253, 231, 37},
};

void color_of(double t, unsigned char* rgb) {
  if (t < 0.0) t = 0.0;
  if (t > 1.0) t = 1.0;
  double pos = t * 7.0;
  int lo = static_cast<int>(pos);
  if (lo > 6) lo = 6;
  double w = pos - lo;
  for (int c = 0; c < 3; ++c)
    rgb[c] = static_cast<unsigned char>(std::lround((1.0 - w) * kMap[lo][c] + w * kMap[lo + 1][c]));
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v >> 24));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v));
}

void put_chunk(std::vector<unsigned char>& out, const char type[4],
               const unsigned char* data, std::uint32_t len) {
  put_u32(out, len);
  std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  if (len > 0) out.insert(out.end(), data, data + len);
  std::uint32_t crc = static_cast<std::uint32_t>(
      ::crc32(0L, out.data() + crc_start, static_cast<uInt>(4 + len)));
  put_u32(out, crc);
}

}  // namespace

void write_raster_png(const std::string& path, const Matrix& values, RasterScale scale) {
  if (values.rows() <= 0 || values.cols() <= 0)
    fail(ErrorCode::invalid_argument, "write_raster_png: empty image");
  const int h = values.rows(), w = values.cols();

  // Scaled copy with the valid range; log10 keeps only strictly positive pixels.
  Matrix scaled(h, w, kInvalid);
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < scaled.size(); ++i) {
    double v = values[i];
    if (is_invalid(v)) continue;
    if (scale == RasterScale::log10) {
      if (!(v > 0.0)) continue;
      v = std::log10(v);
    }
    if (!std::isfinite(v)) continue;
    scaled[i] = v;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const bool flat = !(hi > lo);

  // Raw scanlines, filter byte 0, flipped so range grows upward in the image.
  std::vector<unsigned char> raw;
  raw.reserve(static_cast<std::size_t>(h) * (1 + 3 * w));
  for (int r = h - 1; r >= 0; --r) {
    raw.push_back(0);
    for (int c = 0; c < w; ++c) {
      unsigned char rgb[3] = {255, 255, 255};
      double v = scaled(r, c);
      if (!is_invalid(v)) color_of(flat ? 0.5 : (v - lo) / (hi - lo), rgb);
      raw.insert(raw.end(), rgb, rgb + 3);
    }
  }

  uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> comp(comp_len);
  if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    fail(ErrorCode::numeric_failure, "write_raster_png: deflate failed");

  std::vector<unsigned char> png = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  unsigned char ihdr[13];
  std::uint32_t uw = static_cast<std::uint32_t>(w), uh = static_cast<std::uint32_t>(h);
  ihdr[0] = static_cast<unsigned char>(uw >> 24); ihdr[1] = static_cast<unsigned char>(uw >> 16);
  ihdr[2] = static_cast<unsigned char>(uw >> 8);  ihdr[3] = static_cast<unsigned char>(uw);
  ihdr[4] = static_cast<unsigned char>(uh >> 24); ihdr[5] = static_cast<unsigned char>(uh >> 16);
  ihdr[6] = static_cast<unsigned char>(uh >> 8);  ihdr[7] = static_cast<unsigned char>(uh);
  ihdr[8] = 8;   // bit depth
  ihdr[9] = 2;   // color type: truecolor
  ihdr[10] = 0;  // compression
  ihdr[11] = 0;  // filter
  ihdr[12] = 0;  // interlace
  put_chunk(png, "IHDR", ihdr, 13);
  put_chunk(png, "IDAT", comp.data(), static_cast<std::uint32_t>(comp_len));
  put_chunk(png, "IEND", nullptr, 0);

  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) fail(ErrorCode::io_failure, "cannot open " + path + " for writing");
  std::size_t n = std::fwrite(png.data(), 1, png.size(), f);
  if (std::fclose(f) != 0 || n != png.size())
    fail(ErrorCode::io_failure, "cannot finish writing " + path);
}

}  // namespace hsrl
