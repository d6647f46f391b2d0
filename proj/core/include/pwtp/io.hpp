#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pwtp/param_set.hpp"
#include "pwtp/tensor.hpp"

namespace pwtp::io {

using Bytes = std::vector<std::uint8_t>;

// Tensor container: "PWTT", u8 version (1), u8 rank, rank x u32 dims, then
// product(dims) little-endian float32 values in row-major order.
Bytes encode_tensor(const Tensor& t);
Tensor decode_tensor(const Bytes& bytes);

// Checkpoint: "PWTC", u8 version (1), u32 count, then per tensor a u16 name
// length, the UTF-8 name and a complete tensor container record.
Bytes encode_checkpoint(const ParamSet& params);
ParamSet decode_checkpoint(const Bytes& bytes);

/// Binary P6 image, maxval 255. pixels: H x W x 3 bytes in row-major order.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;
};

Bytes encode_ppm(const Image& image);
Image decode_ppm(const Bytes& bytes);

/// Frame in [0,1] (H x W x 3) to 8-bit, rounding to nearest.
Image quantize_frame(const Tensor& frame);

/// Dynamic appearance (H x W x 3, signed) to a P6 image with
/// pixel = clamp(round(255 * (0.5 + da / 2)), 0, 255).
Bytes export_da(const Tensor& da);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const Bytes& bytes);

void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);
void write_checkpoint(const std::filesystem::path& path, const ParamSet& params);
ParamSet read_checkpoint(const std::filesystem::path& path);

/// Writes frames (T x H x W x 3 in [0,1]) as frame_00001.ppm, frame_00002.ppm, ...
void write_frames(const std::filesystem::path& dir, const Tensor& frames);

/// Reads consecutive frame_%05d.ppm files starting at 00001 into T x H x W x 3 in [0,1].
Tensor read_frames(const std::filesystem::path& dir);

}  // namespace pwtp::io
