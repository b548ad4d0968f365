#include <cmath>
#include <cstring>

#include "doctest.h"
#include "ncood/error.hpp"
#include "ncood/model.hpp"
#include "support.hpp"

using namespace ncood;
using ncood::testing::random_matrix;
using ncood::testing::read_file;
using ncood::testing::TempDir;
using ncood::testing::write_file;

namespace {

// 2 inputs -> 3 relu units -> 2 classes, weights chosen by hand.
Model hand_model() {
  DenseLayer h{Tensor::matrix({{1, -1}, {2, 0.5}, {-1, -1}}), Tensor::vector({0.5, 0, 0})};
  DenseLayer head{Tensor::matrix({{1, 2, 3}, {-1, 0, 1}}), Tensor::vector({0.1, -0.2})};
  return Model({h}, head);
}

CheckpointMeta sample_meta(const Model& m) {
  CheckpointMeta meta;
  meta.stage = 2;
  meta.epoch = 17;
  meta.config_fingerprint = 0x1234abcd5678ef00ULL;
  meta.rng_state = {1, 2, 3, 4};
  meta.ood_rng_state = {5, 6, 7, 8};
  meta.ood_cursor = 2;
  meta.ood_order = {3, 0, 2, 1};
  Rng rng(3);
  for (const Tensor* p : m.parameters()) {
    Tensor v = *p;
    for (auto& x : v.data()) x = rng.normal();
    meta.momentum.push_back(v);
  }
  return meta;
}

}  // namespace

TEST_CASE("init shapes, determinism and the d_feat > C rule") {
  const auto m = Model::init({8, 32, 16}, 3, 1);
  CHECK(m.feature_dim() == 16);
  CHECK(m.input_dim() == 8);
  CHECK(m.num_classes() == 3);
  CHECK(m.layer_dims() == std::vector<std::size_t>{8, 32, 16});
  CHECK(m.parameter_count() == 8 * 32 + 32 + 32 * 16 + 16 + 16 * 3 + 3);
  CHECK(Model::init({8, 32, 16}, 3, 1) == m);
  CHECK_FALSE(Model::init({8, 32, 16}, 3, 2) == m);
  CHECK_THROWS_AS(Model::init({8, 16}, 16, 1), ConfigError);
  CHECK_THROWS_AS(Model::init({8}, 2, 1), ConfigError);

  // Documented ranges: hidden U(+-sqrt(6/fan_in)), head U(+-1/sqrt(fan_in)), zero biases.
  const double hb = std::sqrt(6.0 / 8.0), head_b = 1.0 / std::sqrt(16.0);
  for (double w : m.hidden()[0].weight.data()) CHECK(std::fabs(w) <= hb);
  for (double w : m.head().weight.data()) CHECK(std::fabs(w) <= head_b);
  for (double b : m.hidden()[1].bias.data()) CHECK(b == 0.0);
  for (double b : m.head().bias.data()) CHECK(b == 0.0);
}

TEST_CASE("forward matches a hand-evaluated network") {
  const auto m = hand_model();
  const auto out = m.forward(Tensor::matrix({{1, 2}}));
  // hidden pre-activations: [-0.5, 3, -3] -> relu [0, 3, 0]
  CHECK(out.features == Tensor::matrix({{0, 3, 0}}));
  CHECK(out.logits(0, 0) == doctest::Approx(6.1).epsilon(1e-15));
  CHECK(out.logits(0, 1) == doctest::Approx(-0.2).epsilon(1e-15));

  Tape tape;
  auto bound = bind(tape, m, false);
  auto fv = forward(tape, bound, Tensor::matrix({{1, 2}}));
  CHECK(fv.logits.value() == out.logits);
  CHECK(fv.preactivations.at(0).value() == Tensor::matrix({{-0.5, 3, -3}}));

  CHECK_THROWS_AS(m.forward(Tensor::matrix({{1, 2, 3}})), DimensionError);
}

TEST_CASE("zero input with zero biases gives zero logits") {
  const auto m = Model::init({5, 12, 6}, 3, 4);
  const auto out = m.forward(Tensor::zeros({3, 5}));
  for (double v : out.logits.data()) CHECK(v == 0.0);
}

TEST_CASE("forward is row-wise: identical rows, permutations, exact decomposition") {
  Rng rng(8);
  const auto m = Model::init({6, 20, 10}, 4, 9);
  const auto x = random_matrix(9, 6, rng);
  const auto out = m.forward(x);

  std::vector<std::size_t> same(5, 3);
  const auto rep = m.forward(x.select_rows(same));
  for (std::size_t i = 1; i < 5; ++i)
    for (std::size_t c = 0; c < 4; ++c) CHECK(rep.logits(i, c) == rep.logits(0, c));

  const auto perm = rng.permutation(9);
  const auto pout = m.forward(x.select_rows(perm));
  CHECK(pout.logits == out.logits.select_rows(perm));
  CHECK(pout.features == out.features.select_rows(perm));

  // logits = features * W^T + b, evaluated with plain loops.
  const auto& w = m.head().weight;
  const auto& b = m.head().bias;
  for (std::size_t i = 0; i < 9; ++i)
    for (std::size_t c = 0; c < 4; ++c) {
      double s = b[c];
      for (std::size_t k = 0; k < 10; ++k) s += out.features(i, k) * w(c, k);
      CHECK(std::fabs(out.logits(i, c) - s) <= 1e-12);
    }
  for (double f : out.features.data()) CHECK(f >= 0.0);
}

TEST_CASE("normalized_class_weights") {
  DenseLayer h{Tensor::zeros({4, 2}), Tensor::zeros({4})};
  DenseLayer head{Tensor::matrix({{3, 4, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 0}}), Tensor::zeros({3})};
  const auto nw = normalized_class_weights(Model({h}, head));
  CHECK(nw.rows(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(nw.rows(0, 1) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(nw.rows(1, 2) == 1.0);
  for (std::size_t k = 0; k < 4; ++k) CHECK(nw.rows(2, k) == 0.0);
  CHECK(nw.degenerate == std::vector<bool>{false, false, true});
  CHECK(nw.any_degenerate());
}

TEST_CASE("checkpoint round trip is exact") {
  TempDir dir("ckpt");
  const auto m = Model::init({7, 15, 9}, 4, 12);
  const auto meta = sample_meta(m);
  save_checkpoint(m, meta, dir / "a.bin");
  const auto ck = load_checkpoint(dir / "a.bin");
  CHECK(ck.model == m);
  CHECK(ck.meta == meta);
  save_checkpoint(ck.model, ck.meta, dir / "b.bin");
  CHECK(read_file(dir / "a.bin") == read_file(dir / "b.bin"));

  Rng rng(1);
  const auto x = random_matrix(11, 7, rng);
  CHECK(ck.model.forward(x).logits == m.forward(x).logits);

  // A checkpoint without optimizer state.
  save_checkpoint(m, CheckpointMeta{}, dir / "plain.bin");
  const auto plain = load_checkpoint(dir / "plain.bin");
  CHECK(plain.meta.momentum.empty());
  CHECK(plain.meta.stage == 0);
}

TEST_CASE("corrupt checkpoints are rejected") {
  TempDir dir("badckpt");
  const auto m = Model::init({4, 8, 6}, 3, 2);
  save_checkpoint(m, sample_meta(m), dir / "good.bin");
  const std::string good = read_file(dir / "good.bin");

  std::string bad = good;
  bad[0] = 'X';
  write_file(dir / "magic.bin", bad);
  CHECK_THROWS_AS(load_checkpoint(dir / "magic.bin"), FormatError);

  bad = good;
  bad[8] = 9;  // version field, little-endian u32
  write_file(dir / "version.bin", bad);
  try {
    load_checkpoint(dir / "version.bin");
    FAIL("expected a FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("version") != std::string::npos);
  }

  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{12}, good.size() / 2, good.size() - 1}) {
    write_file(dir / "trunc.bin", good.substr(0, cut));
    CHECK_THROWS_AS(load_checkpoint(dir / "trunc.bin"), FormatError);
  }

  write_file(dir / "trail.bin", good + "x");
  CHECK_THROWS_AS(load_checkpoint(dir / "trail.bin"), FormatError);

  CHECK_THROWS_AS(load_checkpoint(dir / "missing.bin"), IoError);
  CHECK_THROWS_AS(save_checkpoint(m, {}, dir / "nodir" / "x.bin"), IoError);

  auto meta = sample_meta(m);
  meta.momentum.pop_back();
  CHECK_THROWS_AS(save_checkpoint(m, meta, dir / "x.bin"), DimensionError);
}
