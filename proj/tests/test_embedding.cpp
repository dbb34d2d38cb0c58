#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"
#include "trajformer/embedding.hpp"
#include "trajformer/model_config.hpp"

using namespace trajformer;
using trajformer::testing::gradient_check;
using trajformer::testing::uniform;

namespace {

TEST(Embedding, SinusoidalTableClosedForm) {
  const std::size_t d = 16, n = 50;
  const Tensor table = sinusoidal_table(n, d);
  for (std::size_t pos = 0; pos < n; ++pos)
    for (std::size_t i = 0; i < d / 2; ++i) {
      const long double angle = (long double)pos / std::pow(10000.0L, (2.0L * i) / d);
      EXPECT_NEAR(table.at(pos, 2 * i), (double)std::sin(angle), 1e-12);
      EXPECT_NEAR(table.at(pos, 2 * i + 1), (double)std::cos(angle), 1e-12);
    }
  EXPECT_NEAR(positional_encoding(1, 8, 10)[0], 0.841471, 1e-6);
}

TEST(Embedding, PositionalEncodingErrors) {
  EXPECT_THROW(positional_encoding(0, 7, 10), ShapeError);
  EXPECT_THROW(positional_encoding(10, 8, 10), ShapeError);
}

TEST(Embedding, ProjectGradient) {
  std::mt19937_64 rng(1);
  EXPECT_LT(gradient_check([](Tape&, auto& v) { return project(v[0], v[1], v[2]); },
                           {uniform({5, 3}, -2, 2, rng), uniform({3, 4}, -2, 2, rng),
                            uniform({4}, -2, 2, rng)}),
            1e-4);
  Tape tape;
  EXPECT_THROW(project(tape.constant(Tensor({2, 3})), tape.constant(Tensor({4, 2})),
                       tape.constant(Tensor({2}))),
               ShapeError);
}

TEST(Embedding, Time2VecMatchesScalarForm) {
  std::mt19937_64 rng(2);
  const Tensor tau = uniform({6, 1}, -3, 3, rng);
  const Tensor omega = uniform({4}, -2, 2, rng), phi = uniform({4}, -2, 2, rng);
  Tape tape;
  const Tensor out =
      time2vec(tape.constant(tau), tape.constant(omega), tape.constant(phi)).value();
  ASSERT_EQ(out.shape(), (Shape{6, 4}));
  for (std::size_t r = 0; r < 6; ++r) {
    EXPECT_EQ(out.at(r, 0), omega[0] * tau[r] + phi[0]);
    for (std::size_t i = 1; i < 4; ++i)
      EXPECT_NEAR(out.at(r, i), std::sin(omega[i] * tau[r] + phi[i]), 1e-15);
  }
  EXPECT_LT(gradient_check([](Tape&, auto& v) { return time2vec(v[0], v[1], v[2]); },
                           {tau, omega, phi}),
            1e-4);
}

TEST(Embedding, PatchifyRoundTrip) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t s = 1 + rng() % 40, f = 1 + rng() % 8, p = 1 + rng() % 6;
    const Tensor x = uniform({s, f}, -5, 5, rng);
    const Patched pt = patchify(x, p);
    ASSERT_EQ(pt.patches.shape(), (Shape{patch_count(s, p), p * f}));
    ASSERT_EQ(patch_count(s, p), (s + p - 1) / p);
    ASSERT_EQ(unpatchify(pt, f), x);
    // The differentiable form agrees with the value form.
    Tape tape;
    ASSERT_EQ(patchify(tape.constant(x), p).value(), pt.patches);
  }
}

TEST(Embedding, PatchifyGradient) {
  std::mt19937_64 rng(4);
  EXPECT_LT(gradient_check([](Tape&, auto& v) { return patchify(v[0], 3); },
                           {uniform({7, 2}, -2, 2, rng)}),
            1e-4);
}

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.d_ff = 16;
  cfg.max_seq = 16;
  return cfg;
}

TEST(Embedding, EmbedSequenceShapesAndLimits) {
  std::mt19937_64 rng(5);
  for (std::size_t patch : {1u, 2u, 3u}) {
    for (std::size_t k : {0u, 3u}) {
      ModelConfig cfg = small_config();
      cfg.patch_len = patch;
      cfg.time2vec_k = k;
      const auto params = init_parameters(cfg, 1);
      Tape tape;
      const auto bound = bind_parameters(tape, params);
      const Var h = embed_sequence(tape.constant(uniform({11, 7}, -1, 1, rng)), bound, cfg);
      EXPECT_EQ(h.shape(), (Shape{patch_count(11, patch), cfg.d_model}));
      EXPECT_TRUE(h.value().all_finite());
    }
  }
  ModelConfig cfg = small_config();
  const auto params = init_parameters(cfg, 1);
  Tape tape;
  const auto bound = bind_parameters(tape, params);
  EXPECT_THROW(embed_sequence(tape.constant(Tensor({17, 7})), bound, cfg), ShapeError);
  EXPECT_THROW(embed_sequence(tape.constant(Tensor({4, 6})), bound, cfg), ShapeError);
}

TEST(Embedding, EmbedSequenceIsDeterministic) {
  std::mt19937_64 rng(6);
  const ModelConfig cfg = small_config();
  const auto params = init_parameters(cfg, 3);
  const Tensor x = uniform({9, 7}, -1, 1, rng);
  Tape t1, t2;
  const auto b1 = bind_parameters(t1, params), b2 = bind_parameters(t2, params);
  EXPECT_EQ(embed_sequence(t1.constant(x), b1, cfg).value(),
            embed_sequence(t2.constant(x), b2, cfg).value());
}

TEST(Embedding, PositionalEncodingDistinguishesPositions) {
  std::mt19937_64 rng(7);
  ModelConfig cfg = small_config();
  for (int trial = 0; trial < 20; ++trial) {
    const auto params = init_parameters(cfg, trial);
    const Tensor row = uniform({1, 7}, -1, 1, rng);
    Tensor x({cfg.max_seq, 7});
    for (std::size_t r = 0; r < cfg.max_seq; ++r)
      std::copy(row.data().begin(), row.data().end(), x.data().begin() + r * 7);
    Tape tape;
    const auto bound = bind_parameters(tape, params);
    const Tensor h = embed_sequence(tape.constant(x), bound, cfg).value();
    for (std::size_t p = 0; p < cfg.max_seq; ++p)
      for (std::size_t q = p + 1; q < cfg.max_seq; ++q) {
        double diff = 0.0;
        for (std::size_t c = 0; c < cfg.d_model; ++c)
          diff = std::max(diff, std::abs(h.at(p, c) - h.at(q, c)));
        EXPECT_GT(diff, 1e-6) << p << " vs " << q;
      }
  }
  // Without PE identical rows embed identically.
  cfg.positional_encoding = false;
  const auto params = init_parameters(cfg, 0);
  Tape tape;
  const auto bound = bind_parameters(tape, params);
  const Tensor h = embed_sequence(tape.constant(Tensor::full({3, 7}, 0.5)), bound, cfg).value();
  for (std::size_t c = 0; c < cfg.d_model; ++c) EXPECT_EQ(h.at(0, c), h.at(2, c));
}

TEST(Embedding, EmbedSequenceGradient) {
  std::mt19937_64 rng(8);
  ModelConfig cfg = small_config();
  cfg.time2vec_k = 2;
  cfg.patch_len = 2;
  auto params = init_parameters(cfg, 2);
  for (auto& [name, t] : params)
    for (auto& v : t.data()) v += std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
  const Tensor x = uniform({5, 7}, -1, 1, rng);
  EXPECT_LT(gradient_check(
                [&](Tape& tape, const std::vector<Var>& v) {
                  BoundParams b;
                  b["embed.W"] = v[0];
                  b["embed.b"] = v[1];
                  b["time2vec.omega"] = v[2];
                  b["time2vec.phi"] = v[3];
                  return embed_sequence(tape.constant(x), b, cfg);
                },
                {params.at("embed.W"), params.at("embed.b"), params.at("time2vec.omega"),
                 params.at("time2vec.phi")}),
            1e-4);
}

TEST(Embedding, ConfigValidation) {
  ModelConfig cfg = small_config();
  EXPECT_NO_THROW(cfg.validate());
  cfg.n_heads = 3;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.time2vec_k = 1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.d_model = 6;
  cfg.n_heads = 2;
  cfg.rope_enabled = true;  // head_dim 3 is odd
  EXPECT_THROW(cfg.validate(), ConfigError);
}

}  // namespace
