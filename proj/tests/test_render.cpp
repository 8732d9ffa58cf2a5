#include <doctest.h>

#include "robodet/render.hpp"

using namespace robodet;

TEST_SUITE("render") {
  TEST_CASE("box outlines land on the expected pixels") {
    PixelRect r;
    REQUIRE(box_to_pixels({0.5, 0.5, 0.5, 0.5}, 16, 8, r));
    CHECK(r.x0 == 4);
    CHECK(r.x1 == 11);
    CHECK(r.y0 == 2);
    CHECK(r.y1 == 5);
    REQUIRE(box_to_pixels({0.0, 0.0, 0.5, 0.5}, 16, 8, r));
    CHECK(r.x0 == 0);
    CHECK(r.y0 == 0);
    CHECK(r.x1 == 3);
    CHECK_FALSE(box_to_pixels({1.5, 0.5, 0.2, 0.2}, 16, 8, r));
  }

  TEST_CASE("overlay draws class-colored outlines and leaves the inside alone") {
    Image im(64, 48);
    const Detection d{{0.5, 0.5, 0.25, 0.5}, kRobot, 0.87};
    const Image out = render_overlay(im, std::span(&d, 1));
    const auto magenta = class_color(kRobot);
    PixelRect r;
    REQUIRE(box_to_pixels(d.box, 64, 48, r));
    for (int x = r.x0; x <= r.x1; ++x) {
      for (int c = 0; c < 3; ++c) {
        CHECK(out.at(x, r.y0, c) == magenta[c]);
        CHECK(out.at(x, r.y1, c) == magenta[c]);
      }
    }
    for (int y = r.y0; y <= r.y1; ++y) CHECK(out.at(r.x0, y, 0) == magenta[0]);
    CHECK(out.at((r.x0 + r.x1) / 2, (r.y0 + r.y1) / 2, 0) == 0);
    // a label sits above the box
    bool labeled = false;
    for (int y = r.y0 - 6; y < r.y0; ++y) {
      for (int x = r.x0; x < r.x0 + 16; ++x) labeled |= out.at(x, y, 2) == magenta[2];
    }
    CHECK(labeled);
    CHECK(class_color(kBall) != class_color(kCrossing));
    CHECK(render_overlay(im, {}) == im);
  }
}
