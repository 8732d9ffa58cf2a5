#include "robodet/render.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace robodet {

std::array<std::uint8_t, 3> class_color(int class_id) {
  switch (class_id) {
    case kBall: return {255, 140, 0};
    case kCrossing: return {0, 255, 255};
    case kGoalpost: return {255, 255, 0};
    default: return {255, 0, 255};
  }
}

bool box_to_pixels(const BBox& box, int width, int height, PixelRect& rect) {
  const int x0 = static_cast<int>(std::floor(box.left() * width));
  const int y0 = static_cast<int>(std::floor(box.top() * height));
  const int x1 = static_cast<int>(std::ceil(box.right() * width)) - 1;
  const int y1 = static_cast<int>(std::ceil(box.bottom() * height)) - 1;
  if (x1 < 0 || y1 < 0 || x0 >= width || y0 >= height || x1 < x0 || y1 < y0) return false;
  rect = {std::max(x0, 0), std::max(y0, 0), std::min(x1, width - 1), std::min(y1, height - 1)};
  return true;
}

namespace {

// 3×5 glyphs for "0123456789.", one row per 3-bit group (MSB = left pixel).
constexpr std::array<std::array<std::uint8_t, 5>, 11> kGlyphs{{
    {7, 5, 5, 5, 7}, {2, 6, 2, 2, 7}, {7, 1, 7, 4, 7}, {7, 1, 7, 1, 7}, {5, 5, 7, 1, 1}, {7, 4, 7, 1, 7},
    {7, 4, 7, 5, 7}, {7, 1, 1, 1, 1}, {7, 5, 7, 5, 7}, {7, 5, 7, 1, 7}, {0, 0, 0, 0, 2},
}};

void put(Image& image, int x, int y, const std::array<std::uint8_t, 3>& color) {
  if (x < 0 || y < 0 || x >= image.width || y >= image.height) return;
  for (int c = 0; c < 3; ++c) image.at(x, y, c) = color[c];
}

void draw_text(Image& image, int x, int y, const std::string& text, const std::array<std::uint8_t, 3>& color) {
  for (char ch : text) {
    const int glyph = ch == '.' ? 10 : ch - '0';
    if (glyph < 0 || glyph > 10) continue;
    for (int row = 0; row < 5; ++row) {
      for (int col = 0; col < 3; ++col) {
        if ((kGlyphs[glyph][row] >> (2 - col)) & 1) put(image, x + col, y + row, color);
      }
    }
    x += 4;
  }
}

}  // namespace

Image render_overlay(const Image& image, std::span<const Detection> detections) {
  Image out = image;
  for (const auto& det : detections) {
    PixelRect r;
    if (!box_to_pixels(det.box, out.width, out.height, r)) continue;
    const auto color = class_color(det.class_id);
    for (int x = r.x0; x <= r.x1; ++x) {
      put(out, x, r.y0, color);
      put(out, x, r.y1, color);
    }
    for (int y = r.y0; y <= r.y1; ++y) {
      put(out, r.x0, y, color);
      put(out, r.x1, y, color);
    }
    const int pct = static_cast<int>(std::lround(std::clamp(det.confidence, 0.0, 1.0) * 100.0));
    const std::string label = pct >= 100 ? "1.00" : (pct < 10 ? ".0" : ".") + std::to_string(pct);
    const int ty = r.y0 >= 6 ? r.y0 - 6 : r.y0 + 2;
    draw_text(out, r.x0 + 1, ty, label, color);
  }
  return out;
}

void render_overlay(const Image& image, std::span<const Detection> detections, const std::filesystem::path& out_path) {
  write_ppm(render_overlay(image, detections), out_path);
}

}  // namespace robodet
