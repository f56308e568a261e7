// image_io.hpp
//
// PNG/JPEG decoding to single-channel integer rasters and PNG encoding.
#ifndef CXR_IMAGE_IO_HPP
#define CXR_IMAGE_IO_HPP

#include "cxr/raster.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cxr {

class ImageDecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Single-channel image as stored on disk. Colour inputs are collapsed to
/// luminance while decoding.
struct DecodedImage {
  Raster<std::uint16_t> values;
  int bit_depth = 8;  // 8 or 16
};

DecodedImage decode_image(std::span<const unsigned char> bytes);
DecodedImage read_image(const std::filesystem::path& path);

std::vector<unsigned char> encode_png_gray8(const Raster<std::uint8_t>& pixels);
std::vector<unsigned char> encode_png_gray16(const Raster<std::uint16_t>& pixels);
/// `rgb` holds rows*cols*3 interleaved bytes.
std::vector<unsigned char> encode_png_rgb8(Eigen::Index rows, Eigen::Index cols,
                                           std::span<const unsigned char> rgb);

void write_file(const std::filesystem::path& path, std::span<const unsigned char> bytes);
std::vector<unsigned char> read_file(const std::filesystem::path& path);

/// Quantises a [0,1] raster to 8 or 16 bits.
Raster<std::uint8_t> to_gray8(const RasterF& pixels);
Raster<std::uint16_t> to_gray16(const RasterF& pixels);

}  // namespace cxr

#endif  // CXR_IMAGE_IO_HPP
