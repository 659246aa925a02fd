#include "dan/ppn.hpp"
#include "dan/training.hpp"
#include "gradcheck.hpp"
#include "nonlocal_oracle.hpp"
#include "support.hpp"

using namespace dan;

namespace {

std::array<FrameGroup, 3> groups_from(const std::array<Tensor, 3>& blurry) {
  return {FrameGroup{blurry[0], blurry[0]}, FrameGroup{blurry[1], blurry[1]}, FrameGroup{blurry[2], blurry[2]}};
}

std::array<Tensor, 3> random_frames(int64_t h, int64_t w, uint64_t seed) {
  return {test::uniform({1, 3, h, w}, seed), test::uniform({1, 3, h, w}, seed + 1), test::uniform({1, 3, h, w}, seed + 2)};
}

Ppn seeded_ppn(PpnConfig config, uint64_t seed) {
  torch::manual_seed(seed);
  return Ppn(config);
}

void zero_output(torch::nn::Conv2d& conv) {
  torch::NoGradGuard no_grad;
  conv->weight.zero_();
  conv->bias.zero_();
}

}  // namespace

TEST_SUITE("ppn") {
  TEST_CASE("encoder shape contract") {
    Ppn ppn = seeded_ppn({32, 3, 4096}, 1);
    const Tensor b = test::uniform({1, 3, 32, 32}, 1);
    CHECK(ppn->encode({b, b}).features.sizes() == torch::IntArrayRef({1, 32, 8, 8}));
  }

  TEST_CASE("zero input with zero biases encodes to zero") {
    Ppn ppn = seeded_ppn({8, 1, 4096}, 2);
    {
      torch::NoGradGuard no_grad;
      for (auto* conv : {&ppn->enc_in, &ppn->enc_down1, &ppn->enc_down2}) (*conv)->bias.zero_();
    }
    const Tensor z = torch::zeros({1, 3, 16, 16});
    CHECK(ppn->encode({z, z}).features.abs().max().item<double>() == 0.0);
  }

  TEST_CASE("encoder rejects indivisible sizes and mismatched groups") {
    Ppn ppn = seeded_ppn({8, 1, 4096}, 3);
    const Tensor odd = test::uniform({1, 3, 18, 16}, 1);
    CHECK_THROWS_AS(ppn->encode({odd, odd}), DimensionError);
    CHECK_THROWS_AS(ppn->encode({test::uniform({1, 3, 16, 16}, 1), odd}), DimensionError);
    CHECK_THROWS_AS(ppn->encode({torch::zeros({1, 1, 16, 16}), torch::zeros({1, 1, 16, 16})}), DimensionError);
  }

  TEST_CASE("seeded encoder is bitwise reproducible") {
    const Tensor b = test::uniform({1, 3, 16, 16}, 4);
    const Tensor first = seeded_ppn({8, 1, 4096}, 7)->encode({b, b}).features;
    const Tensor second = seeded_ppn({8, 1, 4096}, 7)->encode({b, b}).features;
    CHECK(test::same(first, second));
  }

  TEST_CASE("non-local block matches the brute-force oracle") {
    for (uint64_t seed = 0; seed < 5; ++seed) {
      torch::manual_seed(seed);
      NonLocalBlock block(2, 4096);
      test::randomize_nonlocal(*block, seed + 10);
      const Tensor x = test::uniform({1, 2, 4, 4}, seed, -1, 1);
      const Tensor got = block->forward(x).to(torch::kFloat64);
      CHECK(test::max_abs(got, test::brute_force_nonlocal(*block, x)) <= 1e-5);
    }
  }

  TEST_CASE("three chained blocks fuse like the oracle") {
    Ppn ppn = seeded_ppn({2, 3, 4096}, 11);
    for (size_t i = 0; i < ppn->nonlocal->size(); ++i) {
      test::randomize_nonlocal(*ppn->nonlocal[i]->as<NonLocalBlock>(), 20 + i);
    }
    const std::array<FeatureGrid, 3> grids = {FeatureGrid{test::uniform({1, 2, 4, 4}, 1, -1, 1)},
                                              FeatureGrid{test::uniform({1, 2, 4, 4}, 2, -1, 1)},
                                              FeatureGrid{test::uniform({1, 2, 4, 4}, 3, -1, 1)}};
    const auto fused = ppn->fuse(grids);
    Tensor expect = torch::cat({grids[0].features, grids[1].features, grids[2].features}, 1);
    for (size_t i = 0; i < ppn->nonlocal->size(); ++i) {
      expect = test::brute_force_nonlocal(*ppn->nonlocal[i]->as<NonLocalBlock>(), expect);
    }
    const Tensor got = torch::cat({fused[0].features, fused[1].features, fused[2].features}, 1);
    CHECK(test::max_abs(got, expect) <= 1e-5);
  }

  TEST_CASE("attention rows are probability distributions") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
      torch::manual_seed(seed);
      NonLocalBlock block(6, 16);
      test::randomize_nonlocal(*block, seed);
      // 8x8 exceeds the threshold, so its keys are pooled to 4x4.
      const int64_t side = seed % 2 == 0 ? 4 : 8;
      const Tensor a = block->attention(test::uniform({2, 6, side, side}, seed, -2, 2));
      CHECK(a.size(1) == side * side);
      CHECK(a.size(2) == 16);
      CHECK(a.min().item<double>() >= 0.0);
      CHECK((a.sum(-1) - 1).abs().max().item<double>() <= 1e-5);
    }
  }

  TEST_CASE("zeroed output projections make fusion the identity") {
    Ppn ppn = seeded_ppn({4, 3, 4096}, 5);
    const std::array<FeatureGrid, 3> grids = {FeatureGrid{test::uniform({1, 4, 4, 4}, 1)},
                                              FeatureGrid{test::uniform({1, 4, 4, 4}, 2)},
                                              FeatureGrid{test::uniform({1, 4, 4, 4}, 3)}};
    const auto fused = ppn->fuse(grids);
    for (int i = 0; i < 3; ++i) CHECK(test::max_abs(fused[i].features, grids[i].features) == 0.0);
  }

  TEST_CASE("fusion rejects mismatched grids") {
    Ppn ppn = seeded_ppn({4, 1, 4096}, 5);
    CHECK_THROWS_AS(ppn->fuse({FeatureGrid{torch::zeros({1, 4, 4, 4})}, FeatureGrid{torch::zeros({1, 4, 4, 2})},
                               FeatureGrid{torch::zeros({1, 4, 4, 4})}}),
                    DimensionError);
    CHECK_THROWS_AS(ppn->fuse({FeatureGrid{torch::zeros({1, 5, 4, 4})}, FeatureGrid{torch::zeros({1, 5, 4, 4})},
                               FeatureGrid{torch::zeros({1, 5, 4, 4})}}),
                    DimensionError);
  }

  TEST_CASE("zeroed final layer decodes to the blurry input") {
    Ppn ppn = seeded_ppn({8, 2, 4096}, 6);
    zero_output(ppn->dec_out);
    const auto frames = random_frames(16, 24, 30);
    const PpnOutput out = ppn->forward(groups_from(frames));
    CHECK(test::same(out.p_prev, frames[0]));
    CHECK(test::same(out.p_center, frames[1]));
    CHECK(test::same(out.p_next, frames[2]));
  }

  TEST_CASE("decoder output shape and range") {
    Ppn ppn = seeded_ppn({8, 1, 4096}, 8);
    for (auto [h, w] : {std::pair<int64_t, int64_t>{32, 32}, {8, 20}, {12, 4}}) {
      const auto frames = random_frames(h, w, 40);
      const PpnOutput out = ppn->forward(groups_from(frames));
      for (const Tensor* p : {&out.p_prev, &out.p_center, &out.p_next}) {
        CHECK(p->sizes() == frames[0].sizes());
        CHECK(p->min().item<double>() >= 0.0);
        CHECK(p->max().item<double>() <= 1.0);
      }
    }
    CHECK_THROWS_AS(ppn->decode({torch::zeros({1, 8, 3, 3})}, {torch::zeros({1, 3, 16, 16}), torch::zeros({1, 3, 16, 16})}),
                    DimensionError);
  }

  TEST_CASE("identical groups give identical outputs") {
    // Freshly initialised: fusion projections are zero, decoder is live.
    Ppn ppn = seeded_ppn({8, 3, 4096}, 9);
    {
      torch::NoGradGuard no_grad;
      ppn->dec_out->weight.uniform_(-0.1, 0.1);
    }
    const Tensor b = test::uniform({1, 3, 32, 32}, 3);
    const PpnOutput out = ppn->forward(groups_from({b, b, b}));
    CHECK(out.p_prev.sizes() == torch::IntArrayRef({1, 3, 32, 32}));
    CHECK(test::max_abs(out.p_prev, out.p_center) <= 1e-5);
    CHECK(test::max_abs(out.p_next, out.p_center) <= 1e-5);
  }

  TEST_CASE("without fusion the groups are independent") {
    Ppn ppn = seeded_ppn({8, 3, 4096}, 10);
    {
      torch::NoGradGuard no_grad;
      ppn->dec_out->weight.uniform_(-0.1, 0.1);
    }
    auto frames = random_frames(16, 16, 50);
    const PpnOutput before = ppn->forward(groups_from(frames));
    frames[2] = test::uniform({1, 3, 16, 16}, 99);
    const PpnOutput after = ppn->forward(groups_from(frames));
    CHECK(test::same(before.p_prev, after.p_prev));
    CHECK(test::same(before.p_center, after.p_center));
    CHECK_FALSE(test::same(before.p_next, after.p_next));

    // Fusion switched on with live projections does mix the groups.
    for (size_t i = 0; i < ppn->nonlocal->size(); ++i) test::randomize_nonlocal(*ppn->nonlocal[i]->as<NonLocalBlock>(), i);
    const PpnOutput mixed_a = ppn->forward(groups_from(random_frames(16, 16, 50)));
    const PpnOutput mixed_b = ppn->forward(groups_from(frames));
    CHECK_FALSE(test::same(mixed_a.p_prev, mixed_b.p_prev));
    // ... unless it is bypassed.
    const PpnOutput off_a = ppn->forward(groups_from(random_frames(16, 16, 50)), false);
    const PpnOutput off_b = ppn->forward(groups_from(frames), false);
    CHECK(test::same(off_a.p_prev, off_b.p_prev));
  }

  TEST_CASE("overfitting one pair beats the blurry input") {
    Ppn ppn = seeded_ppn({8, 1, 4096}, 12);
    zero_output(ppn->dec_out);
    const auto seq = make_toy_training_sequence(3, 3, MotionSpec::parse("translate dx=2 dy=1"), 5, {16, 16});
    std::array<Tensor, 3> blurry;
    for (int i = 0; i < 3; ++i) blurry[i] = seq.pairs[i].blurry;
    const Tensor& sharp = seq.pairs[1].sharp;
    std::vector<std::pair<std::string, Tensor>> named;
    for (const auto& item : ppn->named_parameters()) named.emplace_back(item.key(), item.value());
    Adam adam(named, 0.9, 0.999, 1e-8);
    for (int it = 0; it < 500; ++it) {
      adam.zero_grad();
      torch::mse_loss(ppn->forward(groups_from(blurry)).p_center, sharp).backward();
      adam.step(1e-3);
    }
    torch::NoGradGuard no_grad;
    const double restored = torch::mse_loss(ppn->forward(groups_from(blurry)).p_center, sharp).item<double>();
    CHECK(restored < torch::mse_loss(blurry[1], sharp).item<double>());
  }

  TEST_CASE("memorised static scene stays above 40 dB") {
    Ppn ppn = seeded_ppn({8, 1, 4096}, 13);
    zero_output(ppn->dec_out);
    const Tensor s = make_toy_sequence(2, 3, MotionSpec::parse("static"), {16, 16}).frames[0];
    std::vector<std::pair<std::string, Tensor>> named;
    for (const auto& item : ppn->named_parameters()) named.emplace_back(item.key(), item.value());
    Adam adam(named, 0.9, 0.999, 1e-8);
    for (int it = 0; it < 50; ++it) {
      adam.zero_grad();
      torch::mse_loss(ppn->forward(groups_from({s, s, s})).p_center, s).backward();
      adam.step(1e-3);
    }
    torch::NoGradGuard no_grad;
    const double mse = torch::mse_loss(ppn->forward(groups_from({s, s, s})).p_center, s).item<double>();
    CHECK((mse == 0.0 || 10.0 * std::log10(1.0 / mse) >= 40.0));
  }

  TEST_CASE("PPN gradients match finite differences") {
    Ppn ppn = seeded_ppn({4, 1, 4096}, 14);
    for (size_t i = 0; i < ppn->nonlocal->size(); ++i) test::randomize_nonlocal(*ppn->nonlocal[i]->as<NonLocalBlock>(), i);
    ppn->to(torch::kFloat64);
    std::array<Tensor, 3> frames;
    for (int i = 0; i < 3; ++i) frames[i] = test::uniform({1, 3, 8, 8}, 60 + i, 0.2, 0.8, torch::kFloat64);
    const Tensor target = test::uniform({1, 3, 8, 8}, 70, 0.2, 0.8, torch::kFloat64);
    auto loss = [&] {
      const PpnOutput p = ppn->forward(groups_from(frames));
      return (torch::mse_loss(p.p_prev, target) + torch::mse_loss(p.p_center, target) +
              torch::mse_loss(p.p_next, target)) / 3.0;
    };
    const auto samples = test::check_gradients({test::params_with_prefix(*ppn, "")}, loss, 30, 1);
    for (const auto& s : samples) {
      INFO(s.name << "[" << s.index << "] analytic " << s.analytic << " numeric " << s.numeric);
      CHECK(s.rel_error() <= 1e-2);
    }
  }
}
