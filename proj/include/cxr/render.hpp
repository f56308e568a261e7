// render.hpp
//
// Export of heatmaps and guided activations: 8-bit PNG, base64 JSON
// embedding, and a colour-mapped overlay on the source image.
#ifndef CXR_RENDER_HPP
#define CXR_RENDER_HPP

#include "cxr/explain.hpp"

#include "json.hpp"

#include <span>
#include <string>
#include <vector>

namespace cxr {

std::vector<unsigned char> heatmap_png(const HeatMap& heatmap);

/// Maps the display copy from [-1,1] to [0,255] (zero is mid-grey).
std::vector<unsigned char> guided_png(const GuidedActivation& guided);

/// RGB colour of `value` in [0,1] under the named colormap ("jet" or "gray").
std::array<unsigned char, 3> colormap(const std::string& name, float value);

/// (1 - alpha) * gray(image) + alpha * colormap(heat), as an RGB PNG.
std::vector<unsigned char> overlay_png(const RasterF& image, const RasterF& heat,
                                       const std::string& colormap_name, float alpha);

std::string base64_encode(std::span<const unsigned char> bytes);
std::vector<unsigned char> base64_decode(const std::string& text);

/// {"stage", "method", "flat", "width", "height", "png_base64"}
nlohmann::json heatmap_json(const HeatMap& heatmap);

/// SHA-1 of "blob <size>\0" followed by the content, as git computes it.
std::string git_blob_hash(std::span<const unsigned char> bytes);

}  // namespace cxr

#endif  // CXR_RENDER_HPP
