#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numeric>
#include <vector>

#include "stacklab/rng.hpp"
#include "stacklab/stacking.hpp"
#include "support/test_util.hpp"

using namespace stacklab;
using testutil::tiny_config;

namespace {

bool tensors_equal(const Tensor& a, const Tensor& b) {
  return a.same_shape(b) &&
         std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<size_t>(a.numel())) == 0;
}

}  // namespace

TEST_SUITE_BEGIN("stacking");

TEST_CASE("propsch frozen splits") {
  CHECK(propsch_steps(100, 6, 2.0) == std::vector<int64_t>{1, 4, 10, 18, 27, 40});
  CHECK(propsch_steps(100, 4, 1.0) == std::vector<int64_t>{10, 20, 30, 40});
  CHECK(propsch_steps(100, 4, 0.0) == std::vector<int64_t>{25, 25, 25, 25});
  CHECK(propsch_steps(1000, 4, 2.0) == std::vector<int64_t>{33, 133, 300, 534});
  CHECK(propsch_steps(3000, 4, 2.0) == std::vector<int64_t>{100, 400, 900, 1600});
  CHECK(propsch_steps(7, 1, 3.0) == std::vector<int64_t>{7});
}

TEST_CASE("propsch validation") {
  CHECK_THROWS_AS(propsch_steps(100, 0, 1.0), ConfigError);
  CHECK_THROWS_AS(propsch_steps(3, 4, 1.0), ConfigError);   // fewer steps than stages
  CHECK_THROWS_AS(propsch_steps(100, 4, -0.5), ConfigError);
  CHECK_THROWS_AS(propsch_steps(5, 4, 3.0), ConfigError);   // stage 1 rounds to zero
}

TEST_CASE("propsch invariants over random draws") {
  Rng rng(606);
  for (int trial = 0; trial < 300; ++trial) {
    const int k = rng.next_int(1, 12);
    const int64_t total = rng.next_int(10000, 200000);
    const double alpha = rng.next_double() * 3.0;
    const std::vector<int64_t> steps = propsch_steps(total, k, alpha);
    CHECK(std::accumulate(steps.begin(), steps.end(), int64_t{0}) == total);
    for (size_t i = 0; i < steps.size(); ++i) {
      CHECK(steps[i] >= 1);
      if (i > 0) CHECK(steps[i] >= steps[i - 1]);  // i^alpha is nondecreasing
    }
  }
}

TEST_CASE("speedup closed form") {
  // k=6: (24 * sum j^2) / (4 * sum i^3) = 24*91 / (4*441)
  CHECK(compute_speedup(24, 4, 2.0) == doctest::Approx(2184.0 / 1764.0).epsilon(1e-12));
  CHECK(compute_speedup(24, 4, 2.0) == doctest::Approx(1.238095).epsilon(1e-5));
  CHECK(compute_speedup(8, 2, 2.0) == doctest::Approx(1.2).epsilon(1e-12));
  CHECK(compute_speedup(24, 4, 1.0) == doctest::Approx(504.0 / 364.0).epsilon(1e-12));
  // alpha=0 gives L*k / (b * k(k+1)/2) = 2L / (b(k+1))
  CHECK(compute_speedup(24, 4, 0.0) == doctest::Approx(48.0 / 28.0).epsilon(1e-12));
  CHECK_THROWS_AS(compute_speedup(10, 4, 1.0), ConfigError);  // 10 % 4 != 0
  CHECK_THROWS_AS(compute_speedup(8, 2, -1.0), ConfigError);
}

TEST_CASE("layer maps") {
  SUBCASE("midas duplicates block ceil(n/2), counted from the input") {
    CHECK(midas_layer_map(3, 1) == LayerMap{0, 1, 1, 2});
    CHECK(midas_layer_map(4, 1) == LayerMap{0, 1, 1, 2, 3});
    CHECK(midas_layer_map(1, 1) == LayerMap{0, 0});
    CHECK(midas_layer_map(4, 2) == LayerMap{0, 1, 0, 1, 2, 3});  // blocks [01][23], dup first
    CHECK(midas_layer_map(6, 2) == LayerMap{0, 1, 2, 3, 2, 3, 4, 5});
    CHECK_THROWS_AS(midas_layer_map(5, 2), ConfigError);
  }
  SUBCASE("gradual duplicates the last block") {
    CHECK(gradual_layer_map(3, 1) == LayerMap{0, 1, 2, 2});
    CHECK(gradual_layer_map(4, 2) == LayerMap{0, 1, 2, 3, 2, 3});
  }
  SUBCASE("progressive duplicates the whole stack") {
    CHECK(progressive_layer_map(3) == LayerMap{0, 1, 2, 0, 1, 2});
    CHECK(progressive_layer_map(1) == LayerMap{0, 0});
  }
  SUBCASE("baseline never grows") {
    GrowthOp op;
    op.kind = GrowthKind::baseline;
    CHECK_THROWS_AS(layer_map_for(op, 4), ConfigError);
  }
}

TEST_CASE("grow copies layers bitwise and carries the rest") {
  ModelConfig c = tiny_config(/*layers=*/3);
  TransformerParams p = init_params(c, 44);
  GrowthOp op;
  op.kind = GrowthKind::midas;
  op.block_size = 1;
  TransformerParams g = grow(p, op);

  CHECK(g.config.n_layers == 4);
  CHECK(g.store.size() == p.store.size() + 10);

  // [B1,B2,B3] -> [B1,B2,B2,B3]
  const LayerMap map{0, 1, 1, 2};
  const char* tensors[] = {"attn_norm.gain", "attn_norm.bias", "attn.wq", "attn.wk",
                           "attn.wv",        "attn.wo",        "mlp_norm.gain",
                           "mlp_norm.bias",  "mlp.w1",         "mlp.w2"};
  for (int l = 0; l < 4; ++l) {
    for (const char* t : tensors) {
      CHECK(tensors_equal(g.store.at(layer_prefix(g.config, l) + t),
                          p.store.at(layer_prefix(c, map[static_cast<size_t>(l)]) + t)));
    }
  }
  CHECK(tensors_equal(g.store.at("embed.tok"), p.store.at("embed.tok")));
  CHECK(tensors_equal(g.store.at("embed.pos"), p.store.at("embed.pos")));
  CHECK(tensors_equal(g.store.at("final_norm.gain"), p.store.at("final_norm.gain")));
  CHECK(tensors_equal(g.store.at("head.w"), p.store.at("head.w")));
}

TEST_CASE("grow rejects looped models") {
  ModelConfig c = tiny_config(2);
  c.looped = true;
  TransformerParams p = init_params(c, 1);
  GrowthOp op;
  op.kind = GrowthKind::gradual;
  CHECK_THROWS_AS(grow(p, op), ConfigError);
}

TEST_CASE("remap_optimizer follows the layer map and keeps the step") {
  ModelConfig c = tiny_config(2);
  TransformerParams p = init_params(c, 3);
  AdamState st = make_adam_state(p.store);
  st.step = 17;
  // make the moments distinctive
  for (size_t i = 0; i < st.m.size(); ++i) {
    st.m.at(i).fill(static_cast<float>(i) + 0.5f);
    st.v.at(i).fill(static_cast<float>(i) + 100.0f);
  }

  GrowthOp op;
  op.kind = GrowthKind::gradual;
  op.block_size = 1;
  const LayerMap map = layer_map_for(op, c.n_layers);  // {0,1,1}
  TransformerParams g = grow(p, op);
  AdamState remapped = remap_optimizer(st, c, g.config, map);

  CHECK(remapped.step == 17);
  REQUIRE(remapped.m.size() == g.store.size());
  for (size_t i = 0; i < remapped.m.size(); ++i) {
    CHECK(remapped.m.name(i) == g.store.name(i));
    CHECK(remapped.m.at(i).same_shape(g.store.at(i)));
  }
  // layer2 (new) inherits layer1 moments
  CHECK(tensors_equal(remapped.m.at("layer02.attn.wq"), st.m.at("layer01.attn.wq")));
  CHECK(tensors_equal(remapped.v.at("layer02.mlp.w2"), st.v.at("layer01.mlp.w2")));
  CHECK(tensors_equal(remapped.m.at("embed.tok"), st.m.at("embed.tok")));

  const LayerMap bad{0, 1};
  CHECK_THROWS_AS(remap_optimizer(st, c, g.config, bad), Error);
}

TEST_CASE("stage plans") {
  SUBCASE("baseline is one full-depth stage") {
    GrowthOp op;
    const StagePlan plan = make_stage_plan(8, op, 500, 2.0);
    CHECK(plan.depths == std::vector<int>{8});
    CHECK(plan.steps == std::vector<int64_t>{500});
    CHECK(simulate_plan_cost(plan) == 4000);
  }
  SUBCASE("midas grows one block per stage") {
    GrowthOp op;
    op.kind = GrowthKind::midas;
    op.block_size = 2;
    const StagePlan plan = make_stage_plan(8, op, 3000, 2.0);
    CHECK(plan.depths == std::vector<int>{2, 4, 6, 8});
    CHECK(plan.steps == std::vector<int64_t>{100, 400, 900, 1600});
    CHECK(simulate_plan_cost(plan) == 20000);
    // measured cost ratio equals the closed form exactly for this split
    CHECK(8.0 * 3000.0 / 20000.0 == doctest::Approx(compute_speedup(8, 2, 2.0)));
  }
  SUBCASE("progressive doubles the stack") {
    GrowthOp op;
    op.kind = GrowthKind::progressive;
    op.block_size = 2;  // stage-1 depth
    const StagePlan plan = make_stage_plan(8, op, 700, 1.0);
    CHECK(plan.depths == std::vector<int>{2, 4, 8});
    CHECK(plan.total_steps() == 700);
    GrowthOp bad = op;
    bad.block_size = 3;
    CHECK_THROWS_AS(make_stage_plan(8, bad, 700, 1.0), ConfigError);
    bad.block_size = 2;
    CHECK_THROWS_AS(make_stage_plan(6, bad, 700, 1.0), ConfigError);  // 6/2 = 3, not 2^j
  }
  SUBCASE("growth kind names round-trip") {
    for (const char* name : {"baseline", "midas", "gradual", "progressive"}) {
      CHECK(growth_kind_name(growth_kind_from_string(name)) == name);
    }
    CHECK_THROWS_AS(growth_kind_from_string("sideways"), ConfigError);
  }
}

TEST_CASE("plan cost stays within half a percent of the closed form") {
  Rng rng(909);
  for (int trial = 0; trial < 100; ++trial) {
    const int b = rng.next_int(1, 4);
    const int k = rng.next_int(1, 16);
    const int layers = b * k;
    const double alpha = rng.next_double() * 3.0;
    const int64_t total = rng.next_int(10000, 500000);
    GrowthOp op;
    op.kind = GrowthKind::midas;
    op.block_size = b;
    const StagePlan plan = make_stage_plan(layers, op, total, alpha);
    const double simulated = static_cast<double>(layers) * static_cast<double>(total) /
                             static_cast<double>(simulate_plan_cost(plan));
    const double closed = compute_speedup(layers, b, alpha);
    CHECK(std::abs(simulated - closed) / closed < 0.005);
  }
}

TEST_SUITE_END();
