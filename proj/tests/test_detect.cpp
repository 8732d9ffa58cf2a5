#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "robodet/detect.hpp"
#include "robodet/error.hpp"
#include "robodet/network.hpp"

using namespace robodet;

namespace {

double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

TEST_SUITE("detect") {
  TEST_CASE("IoU of hand-computed cases") {
    const BBox a{0.5, 0.5, 0.2, 0.2};
    CHECK(iou(a, a) == doctest::Approx(1.0));
    CHECK(iou(a, BBox{0.9, 0.9, 0.1, 0.1}) == 0.0);
    // touching edges
    CHECK(iou(a, BBox{0.7, 0.5, 0.2, 0.2}) == 0.0);
    // shifted by half a width: overlap 0.1·0.2, union 0.06
    const BBox half{0.6, 0.5, 0.2, 0.2};
    CHECK(iou(a, half) == doctest::Approx(1.0 / 3.0));
    CHECK(oracle::raster_iou(a, half) == doctest::Approx(1.0 / 3.0).epsilon(0.01));
    // nested box
    CHECK(iou(a, BBox{0.5, 0.5, 0.1, 0.1}) == doctest::Approx(0.25));
    CHECK(iou(a, BBox{0.5, 0.5, 0.0, 0.0}) == 0.0);
  }

  TEST_CASE("IoU agrees with the raster estimate and is symmetric") {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 30; ++i) {
      const auto a = oracle::random_box(rng, 0.1, 0.5);
      const auto b = oracle::random_box(rng, 0.1, 0.5);
      const double v = iou(a, b);
      CHECK(v == doctest::Approx(iou(b, a)).epsilon(1e-12));
      CHECK(v == doctest::Approx(oracle::corner_iou(a, b)).epsilon(1e-9));
      CHECK(std::abs(v - oracle::raster_iou(a, b, 400)) < 0.02);
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }

  TEST_CASE("encode and decode round trip") {
    const auto spec = build_robo(1);
    AnchorSet anchors = uniform_anchors(0.1, 0.15);
    anchors[kRobot] = {0.2f, 0.4f};
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 50; ++trial) {
      const int cls = trial % kNumClasses;
      const Annotation gt{cls, oracle::random_box(rng)};
      const ClassSlot cs = slot_of(spec, cls);
      const HeadSpec& head = spec.heads[cs.head];
      const GridSize grid = spec.grid(head);
      const auto t = encode(gt, anchors, grid);
      REQUIRE(t.tx >= 0.0);
      REQUIRE(t.tx < 1.0);
      Tensor<double> raw({1, HeadSpec::channels(), grid.rows, grid.cols}, -20.0);
      const int base = 5 * cs.slot;
      raw(0, base + 0, t.row, t.col) = logit(t.tx);
      raw(0, base + 1, t.row, t.col) = logit(t.ty);
      raw(0, base + 2, t.row, t.col) = t.tw;
      raw(0, base + 3, t.row, t.col) = t.th;
      raw(0, base + 4, t.row, t.col) = 5.0;
      const auto dets = decode(raw, head, anchors, grid);
      CHECK(dets.size() == static_cast<std::size_t>(grid.rows * grid.cols * 2));
      const auto kept = postprocess(dets, {}, 0.5);
      REQUIRE(kept.size() == 1);
      CHECK(kept[0].class_id == cls);
      CHECK(kept[0].box.cx == doctest::Approx(gt.box.cx).epsilon(1e-9));
      CHECK(kept[0].box.cy == doctest::Approx(gt.box.cy).epsilon(1e-9));
      CHECK(kept[0].box.w == doctest::Approx(gt.box.w).epsilon(1e-9));
      CHECK(kept[0].box.h == doctest::Approx(gt.box.h).epsilon(1e-9));
    }
  }

  TEST_CASE("encode edge cases") {
    const AnchorSet anchors = uniform_anchors(0.1, 0.1);
    const GridSize grid{3, 4};
    const auto corner = encode({kBall, {1.0, 1.0, 0.1, 0.1}}, anchors, grid);
    CHECK(corner.row == 2);
    CHECK(corner.col == 3);
    CHECK(corner.tx == doctest::Approx(1.0));
    const auto origin = encode({kBall, {0.0, 0.0, 0.1, 0.1}}, anchors, grid);
    CHECK(origin.row == 0);
    CHECK(origin.col == 0);
    CHECK(origin.tw == doctest::Approx(0.0));
    CHECK_THROWS_AS(encode({kBall, {1.01, 0.5, 0.1, 0.1}}, anchors, grid), ValidationError);
    CHECK_THROWS_AS(encode({kBall, {0.5, -0.01, 0.1, 0.1}}, anchors, grid), ValidationError);
    CHECK_THROWS_AS(encode({kBall, {0.5, 0.5, 0.0, 0.1}}, anchors, grid), ValidationError);
  }

  TEST_CASE("decode rejects mismatched grids") {
    const auto spec = build_robo(1);
    const Tensor<float> raw({1, 10, 3, 4});
    CHECK_THROWS_AS(decode(raw, spec.heads[1], uniform_anchors(0.1, 0.1), spec.grid(spec.heads[1])), ShapeError);
    CHECK_THROWS_AS(decode(raw, spec.heads[0], uniform_anchors(0.1, 0.1), spec.grid(spec.heads[0]), 1), ShapeError);
  }

  TEST_CASE("NMS matches the brute-force reference") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> conf(0.0, 1.0);
    for (int trial = 0; trial < 40; ++trial) {
      std::vector<Detection> dets;
      const int n = 5 + trial;
      for (int i = 0; i < n; ++i) {
        Detection d;
        d.class_id = static_cast<int>(rng() % 2);
        d.box = oracle::random_box(rng, 0.1, 0.3);
        // quantized confidences create ties
        d.confidence = std::round(conf(rng) * 8.0) / 8.0;
        dets.push_back(d);
      }
      const double threshold = trial % 2 ? 0.3 : 0.5;
      const auto got = nms(dets, threshold);
      const auto expect = oracle::brute_nms(dets, threshold);
      REQUIRE(got.size() == expect.size());
      for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i].box == expect[i].box);
        CHECK(got[i].confidence == expect[i].confidence);
      }
    }
  }

  TEST_CASE("NMS suppresses only same-class overlaps above the threshold") {
    const BBox a{0.5, 0.5, 0.2, 0.2};
    const BBox half{0.6, 0.5, 0.2, 0.2};  // IoU 1/3 with a
    std::vector<Detection> dets{{a, kBall, 0.9}, {half, kBall, 0.8}, {half, kRobot, 0.7}};
    CHECK(nms(dets, 0.3).size() == 2);
    CHECK(nms(dets, 0.34).size() == 3);
    CHECK(nms(dets, 1.0 / 3.0 + 1e-9).size() == 3);
  }

  TEST_CASE("postprocess thresholds, merges and sorts") {
    std::vector<Detection> lo{{{0.1, 0.1, 0.1, 0.1}, kRobot, 0.3}, {{0.2, 0.2, 0.1, 0.1}, kGoalpost, 0.6}};
    std::vector<Detection> hi{{{0.3, 0.3, 0.1, 0.1}, kBall, 0.9}, {{0.4, 0.4, 0.1, 0.1}, kCrossing, 0.5}};
    const auto out = postprocess(lo, hi, 0.5);
    REQUIRE(out.size() == 3);
    CHECK(out[0].class_id == kBall);
    CHECK(out[1].class_id == kGoalpost);
    CHECK(out[2].class_id == kCrossing);
    CHECK(postprocess(lo, hi, 0.95).empty());
  }

  TEST_CASE("anchors are per-class means") {
    const std::vector<Annotation> boxes{{kBall, {0.5, 0.5, 0.1, 0.2}},     {kBall, {0.5, 0.5, 0.3, 0.4}},
                                        {kCrossing, {0.5, 0.5, 0.05, 0.05}}, {kGoalpost, {0.5, 0.5, 0.02, 0.3}},
                                        {kRobot, {0.5, 0.5, 0.1, 0.25}},    {kRobot, {0.5, 0.5, 0.2, 0.35}}};
    const auto anchors = compute_anchors(boxes);
    CHECK(anchors[kBall].w == doctest::Approx(0.2));
    CHECK(anchors[kBall].h == doctest::Approx(0.3));
    CHECK(anchors[kCrossing].w == doctest::Approx(0.05));
    CHECK(anchors[kRobot].h == doctest::Approx(0.3));
    for (int c = 0; c < kNumClasses; ++c) {
      CHECK(anchors[c].w > 0.0f);
      CHECK(anchors[c].h > 0.0f);
    }
    const std::vector<Annotation> missing{{kBall, {0.5, 0.5, 0.1, 0.1}}};
    CHECK_THROWS_AS(compute_anchors(missing), ValidationError);
  }

  TEST_CASE("network detections decode both heads") {
    auto net = init_network<float>(build_robo(1), 1);
    Tensor<float> lo({1, 10, 3, 4});
    Tensor<float> hi({1, 10, 6, 8});
    lo.values().setConstant(-10.0f);
    hi.values().setConstant(-10.0f);
    lo(0, 4, 1, 2) = 3.0f;
    hi(0, 9, 5, 0) = 3.0f;
    const auto dets = detections_from(RawOutputs<float>{lo, hi}, net.spec, net.anchors, 0.5);
    REQUIRE(dets.size() == 2);
    CHECK(dets[0].class_id == net.spec.heads[0].classes_owned[0]);
    CHECK(dets[1].class_id == net.spec.heads[1].classes_owned[1]);
    // cell (row 5, col 0) of the 6×8 grid with offsets σ(-10) ≈ 0
    CHECK(dets[1].box.cx == doctest::Approx(sigmoid(-10.0) / 8.0));
    CHECK(dets[1].box.cy == doctest::Approx((5.0 + sigmoid(-10.0)) / 6.0));
  }
}
