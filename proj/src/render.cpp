#include "cxr/render.hpp"

#include "cxr/image_io.hpp"

#include <openssl/evp.h>

#include <stdexcept>

namespace cxr {

std::vector<unsigned char> heatmap_png(const HeatMap& heatmap) {
  return encode_png_gray8(to_gray8(heatmap.pixels));
}

std::vector<unsigned char> guided_png(const GuidedActivation& guided) {
  return encode_png_gray8(to_gray8((guided.display + 1.0f) * 0.5f));
}

std::array<unsigned char, 3> colormap(const std::string& name, float value) {
  const float v = std::clamp(value, 0.0f, 1.0f);
  auto byte = [](float x) { return static_cast<unsigned char>(std::lround(std::clamp(x, 0.0f, 1.0f) * 255.0f)); };
  if (name == "gray") return {byte(v), byte(v), byte(v)};
  if (name != "jet") throw std::invalid_argument("unknown colormap '" + name + "'");
  // Piecewise-linear jet: blue -> cyan -> yellow -> red.
  const float r = 1.5f - std::abs(4.0f * v - 3.0f);
  const float g = 1.5f - std::abs(4.0f * v - 2.0f);
  const float b = 1.5f - std::abs(4.0f * v - 1.0f);
  return {byte(r), byte(g), byte(b)};
}

std::vector<unsigned char> overlay_png(const RasterF& image, const RasterF& heat,
                                       const std::string& colormap_name, float alpha) {
  require_same_shape(image, heat, "overlay_png");
  if (alpha < 0.0f || alpha > 1.0f) throw std::invalid_argument("overlay alpha must be in [0,1]");
  std::vector<unsigned char> rgb(static_cast<std::size_t>(image.size()) * 3);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < image.rows(); ++r)
    for (Eigen::Index c = 0; c < image.cols(); ++c) {
      const float base = std::clamp(image(r, c), 0.0f, 1.0f) * 255.0f;
      const auto color = colormap(colormap_name, heat(r, c));
      for (int ch = 0; ch < 3; ++ch)
        rgb[k++] = static_cast<unsigned char>(std::lround((1.0f - alpha) * base + alpha * color[ch]));
    }
  return encode_png_rgb8(image.rows(), image.cols(), rgb);
}

std::string base64_encode(std::span<const unsigned char> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<unsigned char> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw std::invalid_argument("base64 length must be a multiple of 4");
  std::vector<unsigned char> out(3 * text.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw std::invalid_argument("invalid base64");
  std::size_t size = static_cast<std::size_t>(n);
  // EVP_DecodeBlock keeps the bytes produced by '=' padding.
  if (!text.empty() && text.back() == '=') --size;
  if (text.size() > 1 && text[text.size() - 2] == '=') --size;
  out.resize(size);
  return out;
}

nlohmann::json heatmap_json(const HeatMap& heatmap) {
  return {{"stage", heatmap.stage},
          {"method", to_string(heatmap.method)},
          {"flat", heatmap.flat},
          {"width", heatmap.pixels.cols()},
          {"height", heatmap.pixels.rows()},
          {"png_base64", base64_encode(heatmap_png(heatmap))}};
}

std::string git_blob_hash(std::span<const unsigned char> bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + '\0';
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw std::runtime_error("EVP_MD_CTX_new failed");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw std::runtime_error("SHA-1 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

}  // namespace cxr
