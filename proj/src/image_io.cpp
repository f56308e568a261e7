#include "cxr/image_io.hpp"

#include <png.h>
#include <jpeglib.h>

#include <csetjmp>
#include <cstring>
#include <fstream>
#include <iterator>

namespace cxr {
namespace {

struct PngReadState {
  std::span<const unsigned char> bytes;
  std::size_t offset = 0;
};

void png_read_from_span(png_structp png, png_bytep out, png_size_t length) {
  auto* state = static_cast<PngReadState*>(png_get_io_ptr(png));
  if (state->offset + length > state->bytes.size()) png_error(png, "truncated PNG data");
  std::memcpy(out, state->bytes.data() + state->offset, length);
  state->offset += length;
}

void png_throw_error(png_structp, png_const_charp msg) { throw ImageDecodeError(msg); }
void png_ignore_warning(png_structp, png_const_charp) {}

DecodedImage decode_png(std::span<const unsigned char> bytes) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_throw_error,
                                           png_ignore_warning);
  if (!png) throw ImageDecodeError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};

  PngReadState state{bytes, 0};
  png_set_read_fn(png, &state, png_read_from_span);
  png_read_info(png, info);

  const int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) {
    png_set_palette_to_rgb(png);
    depth = 8;
  }
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
    depth = 8;
  }
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
      color == PNG_COLOR_TYPE_PALETTE)
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  if (depth == 16) png_set_swap(png);  // host order is little endian
  png_read_update_info(png, info);

  const auto width = static_cast<Eigen::Index>(png_get_image_width(png, info));
  const auto height = static_cast<Eigen::Index>(png_get_image_height(png, info));
  if (width == 0 || height == 0) throw ImageDecodeError("PNG has no pixels");
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  std::vector<unsigned char> buffer(rowbytes * static_cast<std::size_t>(height));
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (Eigen::Index y = 0; y < height; ++y)
    rows[static_cast<std::size_t>(y)] = buffer.data() + static_cast<std::size_t>(y) * rowbytes;
  png_read_image(png, rows.data());

  DecodedImage out;
  out.bit_depth = depth == 16 ? 16 : 8;
  out.values.resize(height, width);
  for (Eigen::Index y = 0; y < height; ++y) {
    const unsigned char* row = rows[static_cast<std::size_t>(y)];
    for (Eigen::Index x = 0; x < width; ++x) {
      if (out.bit_depth == 16) {
        std::uint16_t v;
        std::memcpy(&v, row + 2 * x, 2);
        out.values(y, x) = v;
      } else {
        out.values(y, x) = row[x];
      }
    }
  }
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_on_error(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

DecodedImage decode_jpeg(std::span<const unsigned char> bytes) {
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_on_error;
  DecodedImage out;
  out.bit_depth = 8;
  std::vector<unsigned char> row;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw ImageDecodeError(std::string("JPEG decode failed: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_GRAYSCALE;
  jpeg_start_decompress(&cinfo);
  const auto width = static_cast<Eigen::Index>(cinfo.output_width);
  const auto height = static_cast<Eigen::Index>(cinfo.output_height);
  out.values.resize(height, width);
  row.resize(static_cast<std::size_t>(width));
  while (cinfo.output_scanline < cinfo.output_height) {
    const auto y = static_cast<Eigen::Index>(cinfo.output_scanline);
    JSAMPROW ptr = row.data();
    jpeg_read_scanlines(&cinfo, &ptr, 1);
    for (Eigen::Index x = 0; x < width; ++x) out.values(y, x) = row[static_cast<std::size_t>(x)];
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

void png_write_to_vector(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<unsigned char>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

void png_flush_noop(png_structp) {}

std::vector<unsigned char> encode_png(Eigen::Index rows, Eigen::Index cols, int color_type,
                                      int bit_depth, const unsigned char* data,
                                      std::size_t row_bytes) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_throw_error,
                                            png_ignore_warning);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png, &info};
  std::vector<unsigned char> out;
  png_set_write_fn(png, &out, png_write_to_vector, png_flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(cols), static_cast<png_uint_32>(rows),
               bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);
  for (Eigen::Index y = 0; y < rows; ++y)
    png_write_row(png, const_cast<png_bytep>(data + static_cast<std::size_t>(y) * row_bytes));
  png_write_end(png, nullptr);
  return out;
}

}  // namespace

DecodedImage decode_image(std::span<const unsigned char> bytes) {
  static constexpr unsigned char kPngMagic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngMagic, 8) == 0) return decode_png(bytes);
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF)
    return decode_jpeg(bytes);
  throw ImageDecodeError("unrecognised image format (expected PNG or JPEG)");
}

DecodedImage read_image(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return decode_image(bytes);
}

std::vector<unsigned char> encode_png_gray8(const Raster<std::uint8_t>& pixels) {
  return encode_png(pixels.rows(), pixels.cols(), PNG_COLOR_TYPE_GRAY, 8, pixels.data(),
                    static_cast<std::size_t>(pixels.cols()));
}

std::vector<unsigned char> encode_png_gray16(const Raster<std::uint16_t>& pixels) {
  return encode_png(pixels.rows(), pixels.cols(), PNG_COLOR_TYPE_GRAY, 16,
                    reinterpret_cast<const unsigned char*>(pixels.data()),
                    static_cast<std::size_t>(pixels.cols()) * 2);
}

std::vector<unsigned char> encode_png_rgb8(Eigen::Index rows, Eigen::Index cols,
                                           std::span<const unsigned char> rgb) {
  if (rgb.size() != static_cast<std::size_t>(rows * cols * 3))
    throw std::invalid_argument("encode_png_rgb8: buffer size mismatch");
  return encode_png(rows, cols, PNG_COLOR_TYPE_RGB, 8, rgb.data(),
                    static_cast<std::size_t>(cols) * 3);
}

void write_file(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Raster<std::uint8_t> to_gray8(const RasterF& pixels) {
  return (pixels.cwiseMax(0.0f).cwiseMin(1.0f) * 255.0f).round().cast<std::uint8_t>();
}

Raster<std::uint16_t> to_gray16(const RasterF& pixels) {
  return (pixels.cast<double>().cwiseMax(0.0).cwiseMin(1.0) * 65535.0).round().cast<std::uint16_t>();
}

}  // namespace cxr
