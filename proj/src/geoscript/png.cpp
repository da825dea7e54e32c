#include <array>
#include <cstring>

#include <zlib.h>

#include "geoforge/geoscript.hpp"

namespace geoforge::geoscript {
namespace {

constexpr std::array<std::uint8_t, 8> k_signature{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

void put_u32(Bytes& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
}

void put_chunk(Bytes& out, const char (&type)[5], std::span<const std::uint8_t> data) {
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t type_at = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const uLong crc = crc32(0L, out.data() + type_at, static_cast<uInt>(4 + data.size()));
  put_u32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace

Bytes encode_gray_png(int width, int height, std::span<const std::uint8_t> pixels) {
  if (width <= 0 || height <= 0) throw GeoScriptError(ErrorKind::RasterFailure, "image dimensions must be positive");
  const auto w = static_cast<std::size_t>(width);
  const auto h = static_cast<std::size_t>(height);
  if (pixels.size() != w * h) throw GeoScriptError(ErrorKind::RasterFailure, "pixel buffer size does not match dimensions");

  // Filter type 0 on every row.
  Bytes raw;
  raw.reserve((w + 1) * h);
  for (std::size_t y = 0; y < h; ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), pixels.begin() + static_cast<std::ptrdiff_t>(y * w),
               pixels.begin() + static_cast<std::ptrdiff_t>((y + 1) * w));
  }
  uLongf packed_size = compressBound(static_cast<uLong>(raw.size()));
  Bytes packed(packed_size);
  if (compress2(packed.data(), &packed_size, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK) {
    throw GeoScriptError(ErrorKind::RasterFailure, "zlib compression failed");
  }
  packed.resize(packed_size);

  Bytes out(k_signature.begin(), k_signature.end());
  Bytes ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(width));
  put_u32(ihdr, static_cast<std::uint32_t>(height));
  ihdr.insert(ihdr.end(), {8, 0, 0, 0, 0});  // depth 8, grayscale, deflate, no filter set, no interlace
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", packed);
  put_chunk(out, "IEND", {});
  return out;
}

ImageSize png_size(std::span<const std::uint8_t> png) {
  if (png.size() < 33 || std::memcmp(png.data(), k_signature.data(), k_signature.size()) != 0) {
    throw GeoScriptError(ErrorKind::RasterFailure, "not a PNG file");
  }
  if (get_u32(png.data() + 8) != 13 || std::memcmp(png.data() + 12, "IHDR", 4) != 0) {
    throw GeoScriptError(ErrorKind::RasterFailure, "PNG does not start with IHDR");
  }
  return {static_cast<int>(get_u32(png.data() + 16)), static_cast<int>(get_u32(png.data() + 20))};
}

}  // namespace geoforge::geoscript
