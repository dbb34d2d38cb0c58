#include <gtest/gtest.h>

#include "oracles.hpp"
#include "trajformer/transformer.hpp"

using namespace trajformer;
using namespace trajformer::testing;

namespace {

ModelConfig tiny() {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.d_ff = 16;
  cfg.max_seq = 24;
  return cfg;
}

TEST(Transformer, CausalMaskPattern) {
  const auto m = causal_mask(4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(m[i * 4 + j], j <= i);
  const auto padded = attention_mask(4, 2, AttentionMode::bidirectional);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(padded[i * 4 + j], j < 2) << i << "," << j;
}

TEST(Transformer, RopeRelativePositionAndNorm) {
  const RopeReport r = rope_properties(200, 1);
  EXPECT_LT(r.shift_gap, 1e-9);
  EXPECT_LT(r.norm_gap, 1e-12);
}

TEST(Transformer, RopeAtPositionZeroIsIdentity) {
  std::mt19937_64 rng(2);
  const Tensor x = uniform({1, 8}, -1, 1, rng);
  const std::size_t zero[] = {0};
  EXPECT_EQ(apply_rope(x, zero), x);
}

TEST(Transformer, RopeMatchesDefinitionAndGradient) {
  std::mt19937_64 rng(3);
  const Tensor x = uniform({4, 6}, -2, 2, rng);
  const std::size_t pos[] = {0, 3, 7, 100};
  const Tensor y = apply_rope(x, pos);
  for (std::size_t r = 0; r < 4; ++r) {
    const auto want = naive_rope(x.data().data() + r * 6, 6, pos[r]);
    for (std::size_t c = 0; c < 6; ++c) EXPECT_NEAR(y.at(r, c), want[c], 1e-13);
  }
  EXPECT_LT(gradient_check([&](Tape&, auto& v) { return apply_rope(v[0], pos); }, {x}), 1e-4);
}

TEST(Transformer, AttentionRowsSumToOne) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t s = 1 + rng() % 10, hd = 2 + rng() % 6;
    Tape tape;
    const Var q = tape.constant(uniform({s, hd}, -3, 3, rng));
    const Var k = tape.constant(uniform({s, hd}, -3, 3, rng));
    const auto allowed = causal_mask(s);
    const Tensor w =
        softmax_rows(scale(matmul(q, transpose(k)), 1.0 / std::sqrt(double(hd))), &allowed)
            .value();
    for (std::size_t i = 0; i < s; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < s; ++j) total += w.at(i, j);
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(Transformer, AttentionGradient) {
  std::mt19937_64 rng(5);
  const auto allowed = causal_mask(5);
  EXPECT_LT(gradient_check([&](Tape&, auto& v) { return attention(v[0], v[1], v[2], &allowed); },
                           {uniform({5, 4}, -1, 1, rng), uniform({5, 4}, -1, 1, rng),
                            uniform({5, 3}, -1, 1, rng)}),
            1e-4);
}

TEST(Transformer, MultiHeadMatchesNaiveLoop) { EXPECT_LT(mha_oracle_gap(200, 6), 1e-12); }

TEST(Transformer, CausalityIsBitExact) { EXPECT_EQ(causality_violations(40, 7), 0u); }

TEST(Transformer, BidirectionalSeesTheFuture) {
  std::mt19937_64 rng(8);
  ModelConfig cfg = tiny();
  cfg.attention_mode = AttentionMode::bidirectional;
  const auto params = jittered_parameters(cfg, 1);
  const Tensor x = uniform({6, 7}, -1, 1, rng);
  Tensor y = x;
  y.at(5, 0) += 1.0;
  Tape tape;
  const auto bound = bind_parameters(tape, params);
  const Tensor a = forward_sequence(tape.constant(x), 6, bound, cfg).value();
  const Tensor b = forward_sequence(tape.constant(y), 6, bound, cfg).value();
  EXPECT_NE(a.at(0, 0), b.at(0, 0));
}

TEST(Transformer, PrefixConsistency) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    ModelConfig cfg = tiny();
    cfg.rope_enabled = trial % 2 == 0;
    const auto params = jittered_parameters(cfg, trial);
    const std::size_t s = 4 + rng() % 16, cut = 1 + rng() % s;
    const Tensor x = uniform({s, 7}, -1, 1, rng);
    Tensor head({cut, 7});
    std::copy_n(x.data().begin(), cut * 7, head.data().begin());
    Tape tape;
    const auto bound = bind_parameters(tape, params);
    const Tensor full = forward_sequence(tape.constant(x), s, bound, cfg).value();
    const Tensor part = forward_sequence(tape.constant(head), cut, bound, cfg).value();
    for (std::size_t i = 0; i < cut * 3; ++i) ASSERT_EQ(part[i], full[i]);
  }
}

TEST(Transformer, PaddingDoesNotLeak) {
  std::mt19937_64 rng(10);
  ModelConfig cfg = tiny();
  for (auto mode : {AttentionMode::causal, AttentionMode::bidirectional}) {
    cfg.attention_mode = mode;
    const auto params = jittered_parameters(cfg, 4);
    const Tensor x = uniform({5, 7}, -1, 1, rng);
    Tensor padded({9, 7});
    std::copy(x.data().begin(), x.data().end(), padded.data().begin());
    for (std::size_t i = 35; i < 63; ++i) padded[i] = 3.0;  // garbage in pad rows
    Tape tape;
    const auto bound = bind_parameters(tape, params);
    const Tensor a = forward_sequence(tape.constant(x), 5, bound, cfg).value();
    const Tensor b = forward_sequence(tape.constant(padded), 5, bound, cfg).value();
    for (std::size_t i = 0; i < 15; ++i) ASSERT_EQ(a[i], b[i]);
  }
}

TEST(Transformer, ZeroWeightBlockIsIdentity) {
  std::mt19937_64 rng(11);
  const ModelConfig cfg = tiny();
  auto params = jittered_parameters(cfg, 5);
  for (const char* n : {"block0.attn.Wo", "block0.attn.bo", "block0.ff2.W", "block0.ff2.b"})
    for (auto& v : params.at(n).data()) v = 0.0;
  const Tensor x = uniform({6, cfg.d_model}, -1, 1, rng);
  Tape tape;
  const auto bound = bind_parameters(tape, params);
  const Tensor y =
      transformer_block(tape.constant(x), bound, 0, cfg, causal_mask(6)).value();
  EXPECT_EQ(y, x);
}

TEST(Transformer, ZeroHeadGivesZeroOutput) {
  std::mt19937_64 rng(12);
  const ModelConfig cfg = tiny();
  const auto params = init_parameters(cfg, 1);
  Tape tape;
  const auto bound = bind_parameters(tape, params);
  const Tensor y = forward_sequence(tape.constant(uniform({4, 7}, -1, 1, rng)), 4, bound, cfg).value();
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Transformer, BlockGradient) {
  std::mt19937_64 rng(13);
  const ModelConfig cfg = tiny();
  const auto params = jittered_parameters(cfg, 6);
  const Tensor x = uniform({5, cfg.d_model}, -1, 1, rng);
  std::vector<std::string> names;
  std::vector<Tensor> values{x};
  for (const auto& [name, t] : params)
    if (name.rfind("block0.", 0) == 0 && name != "block0.attn.bk") {
      names.push_back(name);
      values.push_back(t);
    }
  const double gap = gradient_check(
      [&](Tape&, const std::vector<Var>& v) {
        BoundParams b;
        for (std::size_t i = 0; i < names.size(); ++i) b[names[i]] = v[i + 1];
        b["block0.attn.bk"] = v[0].tape->constant(params.at("block0.attn.bk"));
        return transformer_block(v[0], b, 0, cfg, causal_mask(5));
      },
      values);
  EXPECT_LT(gap, 1e-3);
}

TEST(Transformer, KeyBiasHasNoGradient) {
  // q·(k + b) shifts each score row by a constant, which softmax ignores.
  std::mt19937_64 rng(15);
  const ModelConfig cfg = tiny();
  const auto params = jittered_parameters(cfg, 6);
  Tape tape;
  const auto bound = bind_parameters(tape, params);
  const Var y = transformer_block(tape.constant(uniform({5, cfg.d_model}, -1, 1, rng)), bound, 0,
                                  cfg, causal_mask(5));
  tape.backward(sum(y * y));
  const Tensor g = tape.grad(bound.at("block0.attn.bk"));
  for (double v : g.data()) EXPECT_LT(std::abs(v), 1e-12);
}

TEST(Transformer, EndToEndGradient) {
  SyntheticConfig sc;
  sc.n_traj = 3;
  sc.points_per_traj = 7;
  sc.noise_sigma = 1e-4;
  const auto trajs = generate_synthetic(sc);
  const auto norm = compute_center(trajs);
  std::vector<Trajectory> rows{trajs[0], trajs[1], trajs[2]};
  rows[1].points.resize(5);  // exercise padding
  const Batch batch = make_batch(rows, 16, norm);
  ModelConfig cfg = tiny();
  cfg.n_blocks = 2;
  EXPECT_LT(model_gradient_gap(cfg, batch, {}, LossMode::next_step, 25, 1), 1e-3);
  cfg.rope_enabled = true;
  cfg.time2vec_k = 2;
  EXPECT_LT(model_gradient_gap(cfg, batch, {}, LossMode::next_step, 25, 2), 1e-3);
  cfg.time2vec_k = 0;
  cfg.rope_enabled = false;
  cfg.attention_mode = AttentionMode::bidirectional;
  std::mt19937_64 rng(3);
  std::vector<MaskSpec> masks;
  for (std::size_t b = 0; b < batch.size(); ++b)
    masks.push_back(sample_dimension_mask(batch.lengths[b] - 1, 0.5, rng));
  EXPECT_LT(model_gradient_gap(cfg, batch, masks, LossMode::infill, 25, 3), 1e-3);
}

TEST(Transformer, PatchedForwardShape) {
  ModelConfig cfg = tiny();
  cfg.patch_len = 3;
  const auto params = jittered_parameters(cfg, 7);
  std::mt19937_64 rng(14);
  Tape tape;
  const auto bound = bind_parameters(tape, params);
  const Var y = forward_sequence(tape.constant(uniform({10, 7}, -1, 1, rng)), 10, bound, cfg);
  EXPECT_EQ(y.shape(), (Shape{4, 3}));
}

}  // namespace
