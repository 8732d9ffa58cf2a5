#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>

#include "robodet/data.hpp"
#include "robodet/detect.hpp"

namespace robodet {

/// Overlay color per class: ball orange, crossing cyan, goalpost yellow, robot magenta.
std::array<std::uint8_t, 3> class_color(int class_id);

/// Inclusive pixel rectangle [x0, x1] × [y0, y1].
struct PixelRect {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;
};
/// Pixel rectangle a box outlines, clipped to the image; false when it lies entirely outside.
bool box_to_pixels(const BBox& box, int width, int height, PixelRect& rect);

/// Copy of `image` with a 1-px class-colored outline and a confidence label per detection.
Image render_overlay(const Image& image, std::span<const Detection> detections);
void render_overlay(const Image& image, std::span<const Detection> detections, const std::filesystem::path& out_path);

}  // namespace robodet
