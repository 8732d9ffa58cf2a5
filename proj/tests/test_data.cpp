#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "robodet/data.hpp"

using namespace robodet;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("robodet_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Image random_image(int w, int h, std::mt19937_64& rng) {
  Image im(w, h);
  for (auto& v : im.rgb) v = static_cast<std::uint8_t>(rng() % 256);
  return im;
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("annotation parsing") {
    const auto boxes = parse_annotations("0 0.5 0.5 0.1 0.2\n\n3 1 0 1 0.5\n  2 0.25 0.75 0.05 0.4  \n");
    REQUIRE(boxes.size() == 3);
    CHECK(boxes[0] == Annotation{kBall, {0.5, 0.5, 0.1, 0.2}});
    CHECK(boxes[1].class_id == kRobot);
    CHECK(boxes[1].box.cx == 1.0);
    CHECK(boxes[2].box.h == 0.4);
    CHECK(parse_annotations("").empty());
  }

  TEST_CASE("annotation errors name the line") {
    CHECK_THROWS_AS(parse_annotations("4 0.5 0.5 0.1 0.1\n"), ValidationError);
    CHECK_THROWS_AS(parse_annotations("-1 0.5 0.5 0.1 0.1\n"), ValidationError);
    CHECK_THROWS_AS(parse_annotations("x 0.5 0.5 0.1 0.1\n"), ValidationError);
    CHECK_THROWS_AS(parse_annotations("1.5 0.5 0.5 0.1 0.1\n"), ValidationError);
    CHECK_THROWS_AS(parse_annotations("0 0.5 0.5 0.1\n"), ValidationError);
    CHECK_THROWS_AS(parse_annotations("0 0.5 0.5 0.1 0.1 7\n"), ValidationError);
    CHECK_THROWS_AS(parse_annotations("0 1.2 0.5 0.1 0.1\n"), ValidationError);
    CHECK_THROWS_AS(parse_annotations("0 0.5 0.5 0 0.1\n"), ValidationError);
    CHECK_THROWS_AS(parse_annotations("0 0.5 0.5 0.1 1.5\n"), ValidationError);
    try {
      parse_annotations("0 0.5 0.5 0.1 0.1\n0 0.5\n", "a.txt");
      FAIL("expected a ValidationError");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("a.txt:2") != std::string::npos);
    }
  }

  TEST_CASE("annotation round trip") {
    std::mt19937_64 rng(1);
    std::vector<Annotation> boxes;
    for (int i = 0; i < 20; ++i) {
      BBox b = oracle::random_box(rng);
      // six decimals is the file precision
      for (double* v : {&b.cx, &b.cy, &b.w, &b.h}) *v = std::round(*v * 1e6) / 1e6;
      boxes.push_back({i % kNumClasses, b});
    }
    const auto back = parse_annotations(format_annotations(boxes));
    REQUIRE(back.size() == boxes.size());
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      CHECK(back[i].class_id == boxes[i].class_id);
      CHECK(back[i].box.cx == doctest::Approx(boxes[i].box.cx).epsilon(1e-12));
      CHECK(back[i].box.h == doctest::Approx(boxes[i].box.h).epsilon(1e-12));
    }
    const auto dir = scratch_dir("ann");
    save_annotations(dir / "a.txt", boxes);
    CHECK(load_annotations(dir / "a.txt").size() == boxes.size());
    CHECK_THROWS_AS(load_annotations(dir / "missing.txt"), std::runtime_error);
  }

  TEST_CASE("size filter matches a plain scan") {
    std::mt19937_64 rng(2);
    std::vector<Annotation> boxes;
    for (int i = 0; i < 200; ++i) boxes.push_back({i % kNumClasses, oracle::random_box(rng, 0.001, 0.05)});
    boxes.push_back({kBall, {0.5, 0.5, 0.0125, 0.0125}});
    const double min_wh = default_min_size(640);
    CHECK(min_wh == doctest::Approx(0.0125));
    CHECK(filter_min_size(boxes, min_wh) == oracle::size_scan(boxes, min_wh));
    CHECK(filter_min_size(boxes, min_wh).back().box.w == 0.0125);
  }

  TEST_CASE("YUV conversion matches BT.601 and inverts") {
    std::mt19937_64 rng(3);
    const Image im = random_image(7, 5, rng);
    const auto yuv = rgb_to_yuv(im);
    CHECK(yuv.shape() == Shape{1, 3, 5, 7});
    for (int y = 0; y < 5; ++y) {
      for (int x = 0; x < 7; ++x) {
        const auto e = oracle::yuv(im.at(x, y, 0), im.at(x, y, 1), im.at(x, y, 2));
        for (int c = 0; c < 3; ++c) CHECK(std::abs(yuv(0, c, y, x) - e[c]) < 1e-6);
      }
    }
    const auto white = oracle::yuv(255, 255, 255);
    CHECK(white[0] == doctest::Approx(1.0));
    CHECK(white[1] == doctest::Approx(128.0 / 255.0));
    const Image back = yuv_to_rgb(yuv);
    for (std::size_t i = 0; i < im.rgb.size(); ++i) CHECK(std::abs(back.rgb[i] - im.rgb[i]) <= 1);

    Tensor<float> batch({2, 3, 5, 7});
    rgb_to_yuv(im, batch, 1);
    CHECK(batch.sample(1) == yuv.sample(0));
    CHECK(batch.sample(0).isZero());
    CHECK_THROWS_AS(rgb_to_yuv(im, batch, 2), ShapeError);
    Tensor<float> wrong({1, 3, 5, 8});
    CHECK_THROWS_AS(rgb_to_yuv(im, wrong, 0), ShapeError);
  }

  TEST_CASE("PPM round trip and errors") {
    std::mt19937_64 rng(4);
    const auto dir = scratch_dir("ppm");
    const Image im = random_image(13, 9, rng);
    write_ppm(im, dir / "a.ppm");
    CHECK(read_ppm(dir / "a.ppm") == im);
    CHECK(ppm_size(dir / "a.ppm") == std::pair{13, 9});
    {
      std::ofstream out(dir / "bad.ppm", std::ios::binary);
      out << "P3\n2 2\n255\n";
    }
    CHECK_THROWS_AS(read_ppm(dir / "bad.ppm"), ValidationError);
    {
      std::ofstream out(dir / "short.ppm", std::ios::binary);
      out << "P6\n# comment\n4 4\n255\n" << std::string(10, 'x');
    }
    CHECK_THROWS_AS(read_ppm(dir / "short.ppm"), ValidationError);
    CHECK_THROWS_AS(read_ppm(dir / "none.ppm"), std::runtime_error);
  }

  TEST_CASE("resize") {
    std::mt19937_64 rng(5);
    const Image im = random_image(8, 6, rng);
    CHECK(resize(im, 8, 6) == im);
    const Image small = resize(im, 4, 3);
    CHECK(small.width == 4);
    // exact 2x box filter
    const int mean = (im.at(0, 0, 0) + im.at(1, 0, 0) + im.at(0, 1, 0) + im.at(1, 1, 0) + 2) / 4;
    CHECK(std::abs(small.at(0, 0, 0) - mean) <= 1);
    Image flat(5, 5);
    std::fill(flat.rgb.begin(), flat.rgb.end(), 77);
    const Image big = resize(flat, 11, 7);
    CHECK(std::all_of(big.rgb.begin(), big.rgb.end(), [](std::uint8_t v) { return v == 77; }));
  }

  TEST_CASE("toy generator is deterministic, balanced and in bounds") {
    const auto a = generate_toy_samples(500, ToyStyle::A, 7);
    const auto b = generate_toy_samples(20, ToyStyle::A, 7);
    for (std::size_t i = 0; i < b.size(); ++i) {
      CHECK(a.samples[i].image == b.samples[i].image);
      CHECK(a.samples[i].annotations == b.samples[i].annotations);
    }
    CHECK(generate_toy_samples(1, ToyStyle::A, 8).samples[0].image != b.samples[0].image);
    std::array<int, kNumClasses> counts{};
    for (const auto& s : a.samples) {
      CHECK(s.image.width == kToyWidth);
      CHECK(s.image.height == kToyHeight);
      for (const auto& ann : s.annotations) {
        ++counts[ann.class_id];
        CHECK(ann.box.left() >= 0.0);
        CHECK(ann.box.right() <= 1.0);
        CHECK(ann.box.top() >= 0.0);
        CHECK(ann.box.bottom() <= 1.0);
        CHECK(ann.box.w > 0.0);
      }
    }
    for (int c = 0; c < kNumClasses; ++c) CHECK(counts[c] >= 100);
    // the two styles render the same layout in different colors
    const auto style_b = generate_toy_samples(20, ToyStyle::B, 7);
    CHECK(style_b.samples[3].annotations == b.samples[3].annotations);
    CHECK(style_b.samples[3].image != b.samples[3].image);
    CHECK(parse_toy_style("B") == ToyStyle::B);
    CHECK_FALSE(parse_toy_style("C").has_value());
    CHECK_THROWS_AS(generate_toy_samples(0, ToyStyle::A, 1), ValidationError);
  }

  TEST_CASE("dataset directory round trip") {
    const auto dir = scratch_dir("dataset");
    const auto index = generate_toy_dataset(6, ToyStyle::A, 3, dir);
    const auto read = read_index(dir);
    CHECK(read.entries.size() == 6);
    CHECK(read.image_width == kToyWidth);
    CHECK(read.image_height == kToyHeight);
    const auto loaded = load_dataset(read);
    const auto expect = generate_toy_samples(6, ToyStyle::A, 3);
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(loaded.samples[i].image == expect.samples[i].image);
      REQUIRE(loaded.samples[i].annotations.size() == expect.samples[i].annotations.size());
      for (std::size_t j = 0; j < expect.samples[i].annotations.size(); ++j) {
        CHECK(loaded.samples[i].annotations[j].box.cx ==
              doctest::Approx(expect.samples[i].annotations[j].box.cx).epsilon(1e-6));
      }
    }
    const double min_wh = 20.0 / kToyWidth;
    const auto filtered = load_dataset(read, min_wh);
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(filtered.samples[i].annotations == filter_min_size(loaded.samples[i].annotations, min_wh));
    }
    {
      std::ofstream out(dir / "broken.txt");
      out << "images/000000.ppm\n";
    }
    CHECK_THROWS_AS(read_index(dir / "broken.txt"), ValidationError);
  }

  TEST_CASE("batch assembly resizes to the network input") {
    std::mt19937_64 rng(6);
    const Image a = random_image(16, 12, rng);
    const Image b = random_image(32, 24, rng);
    const std::vector<const Image*> images{&a, &b};
    const auto batch = make_batch(images, 12, 16);
    CHECK(batch.shape() == Shape{2, 3, 12, 16});
    CHECK(batch.sample(0) == rgb_to_yuv(a).sample(0));
  }
}
