#include <doctest.h>

#include "robodet/error.hpp"
#include "robodet/model.hpp"

using namespace robodet;

TEST_SUITE("model") {
  TEST_CASE("ROBO k=2 head grids, channels and stride") {
    const auto spec = build_robo(2);
    CHECK(spec.backbone_size() == 15);
    CHECK(spec.height == 384);
    CHECK(spec.width == 512);
    CHECK(spec.total_stride() == 64);
    CHECK(spec.grid(HeadTap::head_lo) == GridSize{6, 8});
    CHECK(spec.grid(HeadTap::head_hi) == GridSize{12, 16});
    CHECK(HeadSpec::channels() == 10);
    CHECK(2 * HeadSpec::channels() == kNumClasses * 5);
  }

  TEST_CASE("ROBO-HR drops layer 1 and keeps the head grids") {
    const auto hr = build_robo_hr();
    const auto robo = build_robo(2);
    CHECK(hr.backbone_size() == 14);
    CHECK(hr.total_stride() == 32);
    CHECK(hr.height == 192);
    CHECK(hr.width == 256);
    CHECK(hr.grid(HeadTap::head_lo) == robo.grid(HeadTap::head_lo));
    CHECK(hr.grid(HeadTap::head_hi) == robo.grid(HeadTap::head_hi));
    CHECK(hr.layers.front().in_ch == 3);
  }

  TEST_CASE("backbone prefix parameter counts") {
    const auto spec = build_robo(1);
    // 3x3 convs: 9·in·out + out per layer, summed by hand
    CHECK(count_params(spec, 3) == 1576);
    CHECK(count_params(spec, 5) == 8536);
    CHECK(count_params(spec, 7) == 36280);
    CHECK(count_params(spec, 9) == 110136);
    CHECK(count_params(spec) == 561976);
    CHECK(count_params(spec) + count_head_params(spec) == 565196);
    CHECK(count_params(spec, 0) == 0);
    CHECK_THROWS_AS(count_params(spec, 16), ValidationError);
  }

  TEST_CASE("ROBO-BN is wider than ROBO") {
    const auto bn = build_robo_bn(1);
    const auto total = count_params(bn) + count_head_params(bn);
    CHECK(total > 1'500'000);
    CHECK(total < 1'900'000);
    CHECK(bn.total_stride() == 64);
    validate(bn);
  }

  TEST_CASE("strided layers widen their input") {
    CHECK(strided_layers_widen(build_robo(1)));
    CHECK(strided_layers_widen(build_robo_hr()));
  }

  TEST_CASE("every class is owned by exactly one head slot") {
    const auto spec = build_robo(1);
    CHECK(slot_of(spec, kBall).head == 1);
    CHECK(slot_of(spec, kCrossing).head == 1);
    CHECK(slot_of(spec, kGoalpost).head == 0);
    CHECK(slot_of(spec, kRobot).head == 0);
    CHECK(slot_of(spec, kBall).slot != slot_of(spec, kCrossing).slot);
  }

  TEST_CASE("text spec round trip") {
    for (const auto& spec : {build_robo(1), build_robo(2), build_robo_hr(), build_robo_bn(1)}) {
      CHECK(parse_model_spec(format_model_spec(spec)) == spec);
    }
  }

  TEST_CASE("parsing a hand-written spec") {
    const auto spec = parse_model_spec(
        "# tiny\n"
        "input 3 8 8\n"
        "conv 3 2 3 4 bn\n"
        "conv 3 1 4 4 bn tap=head_hi\n"
        "conv 1 2 4 6 tap=head_lo\n");
    CHECK(spec.backbone_size() == 3);
    CHECK(spec.total_stride() == 4);
    CHECK(spec.layer(3).has_bn == false);
    CHECK(spec.grid(HeadTap::head_lo) == GridSize{2, 2});
    CHECK(spec.grid(HeadTap::head_hi) == GridSize{4, 4});
  }

  TEST_CASE("invalid specs are rejected") {
    CHECK_THROWS_AS(parse_model_spec("input 3 8 8\nconv 3 2 3 4 bn tap=head_lo\nconv 3 1 5 4 tap=head_hi\n"),
                    ValidationError);
    CHECK_THROWS_AS(parse_model_spec("input 3 8 8\nconv 3 2 3 4 bn tap=head_lo\n"), ValidationError);
    CHECK_THROWS_AS(parse_model_spec("input 3 6 8\nconv 3 2 3 4 tap=head_lo\nconv 3 2 4 4 tap=head_hi\n"),
                    ValidationError);
    CHECK_THROWS_AS(parse_model_spec("input 3 8 8\nconv 5 1 3 4 tap=head_lo\nconv 3 1 4 4 tap=head_hi\n"),
                    ValidationError);
    CHECK_THROWS_AS(build_model("yolo", 1), ValidationError);
    CHECK_THROWS_AS(build_robo(0), ValidationError);
  }
}
