#include <random>

#include "dan/fan.hpp"
#include "dan/training.hpp"
#include "dan/video_data.hpp"
#include "gradcheck.hpp"
#include "support.hpp"

using namespace dan;
using torch::indexing::Slice;

namespace {

AggregationInput random_input(int64_t h, int64_t w, uint64_t seed) {
  AggregationInput in;
  in.warped_prev_output = test::uniform({1, 3, h, w}, seed);
  in.deblurred_center = test::uniform({1, 3, h, w}, seed + 1);
  in.warped_next_deblurred = test::uniform({1, 3, h, w}, seed + 2);
  in.occ_prev = {test::uniform({1, 1, h, w}, seed + 3).gt(0.3).to(torch::kFloat32)};
  in.occ_next = {test::uniform({1, 1, h, w}, seed + 4).gt(0.3).to(torch::kFloat32)};
  in.flow_prev = {test::uniform({1, 2, h, w}, seed + 5, -3, 3), FlowDirection::kBackward};
  in.flow_next = {test::uniform({1, 2, h, w}, seed + 6, -3, 3), FlowDirection::kForward};
  return in;
}

ReliabilityTriplet random_maps(int64_t h, int64_t w, uint64_t seed) {
  const Tensor logits = test::uniform({1, 3, h, w}, seed, -4, 4);
  const auto m = torch::softmax(logits, 1).split(1, 1);
  return {m[0], m[1], m[2]};
}

Fan seeded_fan(FanConfig config, uint64_t seed) {
  torch::manual_seed(seed);
  return Fan(config);
}

}  // namespace

TEST_SUITE("fan") {
  TEST_CASE("zeroed logit layer gives thirds") {
    Fan fan = seeded_fan({8, 4, 0.25}, 1);
    const ReliabilityTriplet rm = fan->reliability(random_input(16, 16, 1));
    for (const Tensor* m : {&rm.prev, &rm.center, &rm.next}) {
      CHECK((*m - 1.0 / 3.0).abs().max().item<double>() <= 1e-7);
      CHECK(m->sizes() == torch::IntArrayRef({1, 1, 16, 16}));
    }
  }

  TEST_CASE("reliability maps are a partition of unity") {
    Fan fan = seeded_fan({8, 4, 0.25}, 2);
    {
      torch::NoGradGuard no_grad;
      fan->logits->weight.uniform_(-1, 1);
      fan->logits->bias.uniform_(-1, 1);
    }
    for (uint64_t seed = 0; seed < 10; ++seed) {
      const ReliabilityTriplet rm = fan->reliability(random_input(12, 20, seed * 9));
      CHECK(torch::stack({rm.prev, rm.center, rm.next}).min().item<double>() >= 0.0);
      CHECK(((rm.prev + rm.center + rm.next) - 1).abs().max().item<double>() <= 1e-5);
    }
  }

  TEST_CASE("identity bias saturates onto the centre") {
    Fan fan = seeded_fan({8, 4, 0.25}, 3);
    fan->reset_logits(30.0);
    const AggregationInput in = random_input(8, 8, 3);
    CHECK(test::max_abs(fan->forward(in), in.deblurred_center) <= 1e-6);
  }

  TEST_CASE("reliability rejects mismatched inputs") {
    Fan fan = seeded_fan({8, 4, 0.25}, 4);
    AggregationInput in = random_input(8, 8, 4);
    in.occ_next = {torch::ones({1, 1, 8, 6})};
    CHECK_THROWS_AS(fan->reliability(in), DimensionError);
    in = random_input(8, 8, 4);
    in.flow_prev.vectors = torch::zeros({1, 3, 8, 8});
    CHECK_THROWS_AS(fan->reliability(in), DimensionError);
    in = random_input(8, 8, 4);
    in.warped_prev_output = test::uniform({1, 3, 4, 8}, 1);
    CHECK_THROWS_AS(fan->reliability(in), DimensionError);
  }

  TEST_CASE("one-hot maps select their frame") {
    const AggregationInput in = random_input(9, 7, 5);
    const Tensor one = torch::ones({1, 1, 9, 7});
    const Tensor zero = torch::zeros({1, 1, 9, 7});
    CHECK(test::same(fan_aggregate(in, {zero, one, zero}), in.deblurred_center));
    CHECK(test::same(fan_aggregate(in, {one, zero, zero}), in.warped_prev_output));
    CHECK(test::same(fan_aggregate(in, {zero, zero, one}), in.warped_next_deblurred));
  }

  TEST_CASE("uniform maps give the mean") {
    const AggregationInput in = random_input(9, 7, 6);
    const Tensor third = torch::full({1, 1, 9, 7}, 1.0 / 3.0);
    const Tensor mean = (in.warped_prev_output + in.deblurred_center + in.warped_next_deblurred) / 3.0;
    CHECK(test::max_abs(fan_aggregate(in, {third, third, third}), mean) <= 1e-6);
  }

  TEST_CASE("random convex weights stay inside the candidate range") {
    for (uint64_t seed = 0; seed < 100; ++seed) {
      const AggregationInput in = random_input(6, 5, seed * 3);
      const Tensor out = fan_aggregate(in, random_maps(6, 5, seed + 1000));
      const Tensor stack = torch::stack({in.warped_prev_output, in.deblurred_center, in.warped_next_deblurred});
      CHECK((out - std::get<0>(stack.max(0))).max().item<double>() <= 1e-5);
      CHECK((std::get<0>(stack.min(0)) - out).max().item<double>() <= 1e-5);
    }
  }

  TEST_CASE("aggregation is linear in the candidates") {
    const ReliabilityTriplet rm = random_maps(8, 8, 7);
    const AggregationInput a = random_input(8, 8, 10);
    const AggregationInput b = random_input(8, 8, 20);
    AggregationInput mix = a;
    mix.warped_prev_output = 2.0 * a.warped_prev_output - 0.5 * b.warped_prev_output;
    mix.deblurred_center = 2.0 * a.deblurred_center - 0.5 * b.deblurred_center;
    mix.warped_next_deblurred = 2.0 * a.warped_next_deblurred - 0.5 * b.warped_next_deblurred;
    const Tensor expect = 2.0 * fan_aggregate(a, rm) - 0.5 * fan_aggregate(b, rm);
    CHECK(test::max_abs(fan_aggregate(mix, rm), expect) <= 1e-5);
  }

  TEST_CASE("swapping candidates with their maps changes nothing") {
    const AggregationInput in = random_input(8, 8, 11);
    const ReliabilityTriplet rm = random_maps(8, 8, 12);
    AggregationInput swapped = in;
    std::swap(swapped.warped_prev_output, swapped.warped_next_deblurred);
    const Tensor base = fan_aggregate(in, rm);
    CHECK(test::max_abs(fan_aggregate(swapped, {rm.next, rm.center, rm.prev}), base) <= 1e-6);
    swapped = in;
    std::swap(swapped.warped_prev_output, swapped.deblurred_center);
    CHECK(test::max_abs(fan_aggregate(swapped, {rm.center, rm.prev, rm.next}), base) <= 1e-6);
  }

  TEST_CASE("unnormalised maps are rejected") {
    const AggregationInput in = random_input(4, 4, 13);
    const Tensor half = torch::full({1, 1, 4, 4}, 0.5);
    CHECK_THROWS_AS(fan_aggregate(in, {half, half, half}), ArgumentError);
    CHECK_NOTHROW(fan_aggregate(in, {half, half, torch::zeros({1, 1, 4, 4})}));
    CHECK_THROWS_AS(fan_aggregate(in, {half, half, torch::zeros({1, 1, 4, 3})}), DimensionError);
  }

  TEST_CASE("boundary substitutes the centre frame") {
    PyramidFlowBackend backend;
    const Tensor d = test::texture(16, 16, 0.2);
    const AggregationInput start = build_fan_input(std::nullopt, d, test::texture(16, 16, 0.3), backend);
    CHECK(test::same(start.warped_prev_output, d));
    CHECK(start.occ_prev.mask.eq(1).all().item<bool>());
    CHECK(start.flow_prev.vectors.abs().max().item<double>() == 0.0);
    const AggregationInput end = build_fan_input(test::texture(16, 16, 0.1), d, std::nullopt, backend);
    CHECK(test::same(end.warped_next_deblurred, d));
    CHECK(end.flow_next.vectors.abs().max().item<double>() == 0.0);
  }

  TEST_CASE("static candidates are equal") {
    PyramidFlowBackend backend;
    const Tensor d = test::texture(24, 24, 0.5);
    const AggregationInput in = build_fan_input(d, d, d, backend);
    CHECK(test::max_abs(in.warped_prev_output, d) <= 1e-5);
    CHECK(test::max_abs(in.warped_next_deblurred, d) <= 1e-5);
  }

  TEST_CASE("translating candidates align with the centre") {
    PyramidFlowBackend backend;
    const auto seq = make_toy_sequence(12, 3, MotionSpec::parse("translate dx=1 dy=1"), {48, 48});
    const AggregationInput in = build_fan_input(seq.frames[0], seq.frames[1], seq.frames[2], backend);
    auto inner = [](const Tensor& t) { return t.index({Slice(), Slice(), Slice(4, 44), Slice(4, 44)}); };
    CHECK(test::mean_abs(inner(in.warped_prev_output), inner(seq.frames[1])) <= 0.02);
    CHECK(test::mean_abs(inner(in.warped_next_deblurred), inner(seq.frames[1])) <= 0.02);
    CHECK(in.flow_prev.direction == FlowDirection::kBackward);
    CHECK(in.flow_next.direction == FlowDirection::kForward);
  }

  TEST_CASE("disabled occlusion feeds all-ones maps") {
    PyramidFlowBackend backend;
    const AggregationInput in =
        build_fan_input(test::uniform({1, 3, 16, 16}, 1), test::uniform({1, 3, 16, 16}, 2),
                        test::uniform({1, 3, 16, 16}, 3), backend, {}, false);
    CHECK(in.occ_prev.mask.eq(1).all().item<bool>());
    CHECK(in.occ_next.mask.eq(1).all().item<bool>());
  }

  TEST_CASE("training prefers the sharp centre candidate") {
    Fan fan = seeded_fan({8, 4, 0.25}, 14);
    std::vector<std::pair<std::string, Tensor>> named;
    for (const auto& item : fan->named_parameters()) named.emplace_back(item.key(), item.value());
    Adam adam(named, 0.9, 0.999, 1e-8);
    // Centre is the sharp frame, the neighbours are blurred copies of it.
    std::vector<AggregationInput> scenes;
    std::vector<Tensor> targets;
    for (uint64_t s = 0; s < 4; ++s) {
      const BlurSharpPair seq = make_toy_training_sequence(30 + s, 3, MotionSpec::parse("objects"), 7, {16, 16}).pairs[1];
      AggregationInput in = random_input(16, 16, s);
      in.deblurred_center = seq.sharp;
      in.warped_prev_output = seq.blurry;
      in.warped_next_deblurred = (seq.blurry + test::uniform({1, 3, 16, 16}, s, -0.05, 0.05)).clamp(0, 1);
      scenes.push_back(in);
      targets.push_back(seq.sharp);
    }
    for (int it = 0; it < 150; ++it) {
      adam.zero_grad();
      Tensor loss = torch::zeros({});
      for (size_t i = 0; i < scenes.size(); ++i) loss = loss + torch::mse_loss(fan->forward(scenes[i]), targets[i]);
      loss.backward();
      adam.step(1e-2);
    }
    torch::NoGradGuard no_grad;
    const AggregationInput probe = [&] {
      const BlurSharpPair seq = make_toy_training_sequence(99, 3, MotionSpec::parse("objects"), 7, {16, 16}).pairs[1];
      AggregationInput in = random_input(16, 16, 50);
      in.deblurred_center = seq.sharp;
      in.warped_prev_output = seq.blurry;
      in.warped_next_deblurred = seq.blurry;
      return in;
    }();
    const ReliabilityTriplet rm = fan->reliability(probe);
    const double center = rm.center.mean().item<double>();
    CHECK(center > rm.prev.mean().item<double>());
    CHECK(center > rm.next.mean().item<double>());
  }

  TEST_CASE("FAN gradients match finite differences") {
    Fan fan = seeded_fan({4, 4, 0.25}, 15);
    {
      torch::NoGradGuard no_grad;
      fan->logits->weight.uniform_(-0.05, 0.05);
      fan->logits->bias.uniform_(-0.5, 0.5);
    }
    fan->to(torch::kFloat64);
    AggregationInput in = random_input(8, 8, 16);
    for (Tensor* t : {&in.warped_prev_output, &in.deblurred_center, &in.warped_next_deblurred}) *t = t->to(torch::kFloat64);
    const Tensor target = test::uniform({1, 3, 8, 8}, 17, 0, 1, torch::kFloat64);
    auto loss = [&] { return torch::mse_loss(fan->forward(in), target); };
    const auto samples = test::check_gradients({test::params_with_prefix(*fan, "")}, loss, 30, 3);
    for (const auto& s : samples) {
      INFO(s.name << "[" << s.index << "] analytic " << s.analytic << " numeric " << s.numeric);
      CHECK(s.rel_error() <= 1e-2);
    }
  }
}
