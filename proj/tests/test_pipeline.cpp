#include "dan/pipeline.hpp"
#include "dan/video_data.hpp"
#include "support.hpp"

using namespace dan;

namespace {

DanConfig tiny_config() {
  DanConfig c;
  c.ppn = {8, 2, 4096};
  c.abdn = {8, 2};
  c.fan = {8, 4, 0.25};
  return c;
}

std::vector<Tensor> random_video(int n, int64_t size, uint64_t seed) {
  std::vector<Tensor> frames;
  for (int i = 0; i < n; ++i) frames.push_back(test::uniform({1, 3, size, size}, seed + i));
  return frames;
}

// Random residual layers so every stage actually changes the frames.
DanModel live_model(uint64_t seed) { return make_model(tiny_config(), seed, InitMode::kRandom); }

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("windows clamp at the ends") {
    const auto frames = random_video(4, 4, 1);
    auto w = window_at(frames, 0);
    CHECK(test::same(w[0], frames[0]));
    CHECK(test::same(w[2], frames[1]));
    w = window_at(frames, 3);
    CHECK(test::same(w[0], frames[2]));
    CHECK(test::same(w[2], frames[3]));
    CHECK_THROWS_AS(window_at(frames, 4), ArgumentError);
  }

  TEST_CASE("ten frames in, ten aggregates out") {
    PyramidFlowBackend backend;
    std::vector<int64_t> indices;
    RunOptions opts;
    opts.keep_records = true;
    opts.on_frame = [&](int64_t index, const Tensor&) { indices.push_back(index); };
    const auto out = run_video(random_video(10, 16, 2), live_model(1), backend, opts);
    CHECK(out.aggregated.size() == 10);
    CHECK(out.deblurred.size() == 10);
    CHECK(out.records.size() == 11);
    for (int64_t i = 0; i < 10; ++i) CHECK(indices[i] == i);
    CHECK_FALSE(out.records[0].aggregated.has_value());
    CHECK(out.records[1].aggregated_index == 0);
    CHECK(out.records[0].slot_indices == std::array<int64_t, 3>{0, 0, 1});
    CHECK(out.records[5].slot_indices == std::array<int64_t, 3>{4, 5, 6});
  }

  TEST_CASE("three frames in, three aggregates out") {
    PyramidFlowBackend backend;
    const auto out = run_video(random_video(3, 16, 3), live_model(2), backend);
    CHECK(out.aggregated.size() == 3);
    for (const auto& a : out.aggregated) CHECK(a.sizes() == torch::IntArrayRef({1, 3, 16, 16}));
  }

  TEST_CASE("too-short videos are rejected") {
    PyramidFlowBackend backend;
    CHECK_THROWS_AS(run_video(random_video(2, 16, 4), live_model(3), backend), ArgumentError);
  }

  TEST_CASE("state frames must match the window") {
    PyramidFlowBackend backend;
    DanPipeline pipeline(live_model(4), backend);
    const auto frames = random_video(3, 16, 5);
    RecurrentState state;
    state.prev_deblurred = test::uniform({1, 3, 8, 8}, 1);
    CHECK_THROWS_AS(pipeline.step(window_at(frames, 1), state), StateError);
    RecurrentState orphan;
    orphan.prev_aggregated = frames[0];
    CHECK_THROWS_AS(pipeline.step(window_at(frames, 1), orphan), StateError);
    CHECK_THROWS_AS(pipeline.finish(RecurrentState{}), StateError);
  }

  TEST_CASE("companions follow the recurrent state") {
    PyramidFlowBackend backend;
    DanPipeline pipeline(live_model(5), backend);
    const auto frames = random_video(5, 16, 6);
    StepResult r0 = pipeline.step(window_at(frames, 0), RecurrentState{});
    REQUIRE(r0.state.prev_preprocessed.has_value());
    CHECK(test::same(*r0.state.prev_preprocessed, r0.record.preprocessed[2]));
    CHECK(test::same(*r0.state.prev_deblurred, r0.record.deblurred));
    CHECK(r0.state.steps == 1);
    StepResult r1 = pipeline.step(window_at(frames, 1), r0.state);
    REQUIRE(r1.aggregated.has_value());
    CHECK(test::same(*r1.state.prev_aggregated, *r1.aggregated));

    // Replacing the carried frames changes the next step's output.
    RecurrentState altered = r0.state;
    altered.prev_preprocessed = test::uniform({1, 3, 16, 16}, 77);
    StepResult r1b = pipeline.step(window_at(frames, 1), altered);
    CHECK_FALSE(test::same(r1b.record.preprocessed[1], r1.record.preprocessed[1]));
  }

  TEST_CASE("state size does not grow with the video") {
    PyramidFlowBackend backend;
    DanPipeline pipeline(live_model(6), backend);
    const auto frames = random_video(6, 16, 7);
    RecurrentState state;
    for (int64_t k = 0; k < 6; ++k) {
      state = pipeline.step(window_at(frames, k), state).state;
      int64_t held = 0;
      for (const auto* slot : {&state.prev_preprocessed, &state.prev_deblurred, &state.prev_aggregated}) {
        if (*slot) held += (*slot)->numel();
      }
      CHECK(held <= 3 * 3 * 16 * 16);
    }
  }

  TEST_CASE("identity initialisation reproduces a static video") {
    PyramidFlowBackend backend;
    const auto sharp = make_toy_sequence(3, 6, MotionSpec::parse("static"), {32, 32}).frames;
    DanConfig config = tiny_config();
    const auto out = run_video(sharp, make_model(config, 1, InitMode::kDefault), backend);
    for (size_t i = 0; i < sharp.size(); ++i) CHECK(test::max_abs(out.aggregated[i], sharp[i]) <= 1e-4);
  }

  TEST_CASE("identity initialisation reproduces a moving video") {
    PyramidFlowBackend backend;
    const auto seq = make_toy_training_sequence(4, 6, MotionSpec::parse("objects"), 5, {32, 32});
    const auto blurry = seq.blurry_frames();
    const auto out = run_video(blurry, make_model(tiny_config(), 1, InitMode::kIdentity), backend);
    for (size_t i = 0; i < blurry.size(); ++i) CHECK(test::max_abs(out.aggregated[i], blurry[i]) <= 1e-4);
  }

  TEST_CASE("runs are deterministic and stateless") {
    PyramidFlowBackend backend;
    const auto frames = random_video(5, 16, 8);
    DanModel model = live_model(7);
    const auto a = run_video(frames, model, backend);
    const auto b = run_video(frames, model, backend);
    const auto c = run_video(frames, live_model(7), backend);
    for (size_t i = 0; i < frames.size(); ++i) {
      CHECK(test::same(a.aggregated[i], b.aggregated[i]));
      CHECK(test::same(a.aggregated[i], c.aggregated[i]));
    }
  }

  TEST_CASE("an aggregate never sees frames beyond one step ahead") {
    PyramidFlowBackend backend;
    DanModel model = live_model(8);
    const auto frames = random_video(8, 16, 9);
    const auto base = run_video(frames, model, backend);
    for (int64_t t = 0; t + 3 < 8; ++t) {
      auto perturbed = frames;
      perturbed[t + 3] = test::uniform({1, 3, 16, 16}, 1000 + t);
      const auto out = run_video(perturbed, model, backend);
      for (int64_t i = 0; i <= t; ++i) CHECK(test::same(out.aggregated[i], base.aggregated[i]));
      CHECK_FALSE(test::same(out.aggregated[t + 1], base.aggregated[t + 1]));
    }
  }

  TEST_CASE("bypass switches pass frames through") {
    PyramidFlowBackend backend;
    const auto frames = random_video(4, 16, 10);
    RunOptions opts;
    opts.stages.bypass_ppn = true;
    opts.stages.bypass_abdn = true;
    opts.stages.bypass_fan = true;
    const auto out = run_video(frames, live_model(9), backend, opts);
    for (size_t i = 0; i < frames.size(); ++i) CHECK(test::same(out.aggregated[i], frames[i]));

    RunOptions fan_off;
    fan_off.stages.bypass_fan = true;
    const auto d = run_video(frames, live_model(9), backend, fan_off);
    for (size_t i = 0; i < frames.size(); ++i) CHECK(test::same(d.aggregated[i], d.deblurred[i]));
  }
}
