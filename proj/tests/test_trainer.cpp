#include <cmath>

#include "doctest.h"
#include "ncood/benchmark.hpp"
#include "ncood/error.hpp"
#include "ncood/trainer.hpp"
#include "support.hpp"

using namespace ncood;
using ncood::testing::read_file;
using ncood::testing::TempDir;

namespace {

struct SmallData {
  LabeledDataset id;
  OutlierDataset aux;
};

SmallData small_data(std::uint64_t seed = 0) {
  OutlierParams p;
  p.radius_min = 2.0;
  p.radius_max = 8.0;
  return {gen_gaussian_id(3, 8, 40, 4.0, 0.5, seed),
          gen_outliers(8, 90, OutlierMode::uniform_shell, p, seed + 100, OutlierRole::auxiliary)};
}

TrainConfig small_config(LossVariant v = LossVariant::ours) {
  TrainConfig c;
  c.epochs = 6;
  c.switch_epoch = 3;
  c.id_batch = 32;
  c.ood_batch = 40;
  c.seed = 5;
  c.variant = v;
  return c;
}

double max_abs_diff(const Model& a, const Model& b) {
  double m = 0.0;
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::size_t k = 0; k < pa[i]->size(); ++k) m = std::max(m, std::fabs(pa[i]->data()[k] - pb[i]->data()[k]));
  return m;
}

}  // namespace

TEST_CASE("cosine_lr schedule") {
  TrainConfig c;
  CHECK(cosine_lr(0, c) == c.lr0);
  CHECK(std::fabs(cosine_lr(c.epochs, c)) < 1e-17);
  CHECK(cosine_lr(c.epochs / 2, c) == doctest::Approx(c.lr0 / 2).epsilon(1e-14));
  for (std::size_t e = 1; e <= c.epochs; ++e) CHECK(cosine_lr(e, c) < cosine_lr(e - 1, c));
  CHECK_THROWS_AS(cosine_lr(c.epochs + 1, c), ContractError);
}

TEST_CASE("default TrainConfig carries the fine-tuning recipe") {
  TrainConfig c;
  CHECK(c.epochs == 50);
  CHECK(c.switch_epoch == 25);
  CHECK(c.id_batch == 128);
  CHECK(c.ood_batch == 256);
  CHECK(c.lr0 == 0.07);
  CHECK(c.momentum == 0.9);
  CHECK(c.weight_decay == 0.0005);
  CHECK(c.weights.lambda == 0.5);
  CHECK(c.weights.alpha == 1.0);
  CHECK(c.weights.beta == 1.0);
  CHECK(c.variant == LossVariant::ours);
  c.switch_epoch = 51;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("sgd_step update rule") {
  const double lr = 0.1;
  Tensor theta = Tensor::vector({1.0, -2.0});
  Tensor* ps[] = {&theta};
  const std::vector<Tensor> g{Tensor::vector({0.5, 0.25})};

  SUBCASE("no momentum, no decay is plain SGD") {
    SgdState s;
    sgd_step(ps, g, lr, 0.0, 0.0, s);
    CHECK(theta[0] == doctest::Approx(1.0 - 0.05).epsilon(1e-15));
    CHECK(theta[1] == doctest::Approx(-2.0 - 0.025).epsilon(1e-15));
  }
  SUBCASE("zero gradient lets velocity decay geometrically") {
    SgdState s;
    s.velocity = {Tensor::vector({1.0, 2.0})};
    const std::vector<Tensor> zero{Tensor::vector({0.0, 0.0})};
    for (int k = 1; k <= 4; ++k) {
      sgd_step(ps, zero, lr, 0.9, 0.0, s);
      CHECK(s.velocity[0][0] == doctest::Approx(std::pow(0.9, k)).epsilon(1e-14));
      CHECK(s.velocity[0][1] == doctest::Approx(2.0 * std::pow(0.9, k)).epsilon(1e-14));
    }
  }
  SUBCASE("constant gradient with momentum 0.9: displacements lr*g then 1.9*lr*g") {
    SgdState s;
    const Tensor start = theta;
    sgd_step(ps, g, lr, 0.9, 0.0, s);
    const Tensor mid = theta;
    sgd_step(ps, g, lr, 0.9, 0.0, s);
    for (std::size_t k = 0; k < 2; ++k) {
      CHECK(start[k] - mid[k] == doctest::Approx(lr * g[0][k]).epsilon(1e-14));
      CHECK(mid[k] - theta[k] == doctest::Approx(1.9 * lr * g[0][k]).epsilon(1e-14));
    }
  }
  SUBCASE("weight decay is coupled into the gradient") {
    SgdState s;
    sgd_step(ps, g, lr, 0.0, 0.5, s);
    CHECK(theta[0] == doctest::Approx(1.0 - lr * (0.5 + 0.5 * 1.0)).epsilon(1e-15));
  }
  SUBCASE("shape mismatch") {
    SgdState s;
    const std::vector<Tensor> bad{Tensor::vector({1.0})};
    CHECK_THROWS_AS(sgd_step(ps, bad, lr, 0.9, 0.0, s), DimensionError);
  }
}

TEST_CASE("fingerprint separates configurations") {
  TrainConfig a, b;
  CHECK(fingerprint(a) == fingerprint(b));
  b.lr0 = 0.0700001;
  CHECK(fingerprint(a) != fingerprint(b));
  b = a;
  b.variant = LossVariant::v3;
  CHECK(fingerprint(a) != fingerprint(b));
}

TEST_CASE("epochs = 0 returns the model untouched") {
  const auto d = small_data();
  const auto m = Model::init({8, 24, 12}, 3, 1);
  auto c = small_config();
  c.epochs = 0;
  c.switch_epoch = 0;
  const auto r = train(m, d.id, d.aux, c);
  CHECK(r.model == m);
  CHECK(r.log.records.empty());
  CHECK(r.log.to_csv() == "epoch,lr,ce,oe,nc,orth,id_acc,aux_orth_mean,id_nc_cos\n");
}

TEST_CASE("stage masking shows up in the log") {
  const auto d = small_data();
  const auto m = Model::init({8, 24, 12}, 3, 1);

  const auto r = train(m, d.id, d.aux, small_config());
  REQUIRE(r.log.records.size() == 6);
  for (const auto& rec : r.log.records) {
    CHECK(rec.stage == (rec.epoch < 3 ? 1 : 2));
    CHECK(rec.losses.oe.has_value());
    CHECK(rec.losses.nc.has_value() == (rec.epoch >= 3));
    CHECK(rec.losses.orth.has_value() == (rec.epoch >= 3));
    CHECK(rec.lr == cosine_lr(rec.epoch, small_config()));
    CHECK(rec.aux_orth_mean.has_value());
  }

  auto c = small_config();
  c.switch_epoch = 0;
  for (const auto& rec : train(m, d.id, d.aux, c).log.records) {
    CHECK(rec.stage == 2);
    CHECK(rec.losses.nc.has_value());
    CHECK(rec.losses.orth.has_value());
  }

  for (const auto& rec : train(m, d.id, d.aux, small_config(LossVariant::oe_only)).log.records) {
    CHECK_FALSE(rec.losses.nc.has_value());
    CHECK_FALSE(rec.losses.orth.has_value());
  }
  for (const auto& rec : train(m, d.id, d.aux, small_config(LossVariant::v1)).log.records) {
    CHECK_FALSE(rec.losses.oe.has_value());
    CHECK(rec.losses.nc.has_value() == (rec.epoch >= 3));
  }
  // Euclidean terms land in the nc/orth columns.
  const auto eu = train(m, d.id, d.aux, small_config(LossVariant::euclidean)).log;
  CHECK(eu.records.back().losses.euclid_id.has_value());
  CHECK_FALSE(eu.records.back().losses.nc.has_value());
  const auto csv = eu.to_csv();
  const auto last = csv.substr(csv.rfind('\n', csv.size() - 2) + 1);
  CHECK(last.find(",,") == std::string::npos);
}

TEST_CASE("training is deterministic") {
  TempDir dir("det");
  const auto d = small_data();
  const auto m = Model::init({8, 24, 12}, 3, 1);
  Trainer a(m, d.id, &d.aux, small_config());
  Trainer b(m, d.id, &d.aux, small_config());
  a.run();
  b.run();
  CHECK(a.model() == b.model());
  CHECK(a.log().to_csv() == b.log().to_csv());
  a.save_checkpoint(dir / "a.bin");
  b.save_checkpoint(dir / "b.bin");
  CHECK(read_file(dir / "a.bin") == read_file(dir / "b.bin"));

  auto c = small_config();
  c.seed = 6;
  CHECK_FALSE(train(m, d.id, d.aux, c).model == a.model());
}

TEST_CASE("interrupt and resume reproduces the uninterrupted run") {
  TempDir dir("resume");
  const auto d = small_data();
  const auto m = Model::init({8, 24, 12}, 3, 1);
  const auto full = train(m, d.id, d.aux, small_config());

  for (std::size_t k : {1u, 3u, 4u}) {
    Trainer t(m, d.id, &d.aux, small_config());
    t.run_until(k);
    t.save_checkpoint(dir / "mid.bin");
    const auto rest = resume(dir / "mid.bin", d.id, d.aux, small_config());
    CHECK(max_abs_diff(rest.model, full.model) <= 1e-12);
    REQUIRE(rest.log.records.size() == 6 - k);
    for (std::size_t i = 0; i < rest.log.records.size(); ++i)
      CHECK(rest.log.records[i].losses.total == full.log.records[k + i].losses.total);
  }

  auto changed = small_config();
  changed.lr0 = 0.05;
  CHECK_THROWS_AS(resume(dir / "mid.bin", d.id, d.aux, changed), ConfigError);

  Trainer done(m, d.id, &d.aux, small_config());
  done.run();
  done.save_checkpoint(dir / "end.bin");
  const auto again = resume(dir / "end.bin", d.id, d.aux, small_config());
  CHECK(again.log.records.empty());
  CHECK(again.model == done.model());
}

TEST_CASE("trainer rejects misuse") {
  const auto d = small_data();
  const auto m = Model::init({8, 24, 12}, 3, 1);
  OutlierDataset test_role = d.aux;
  test_role.role = OutlierRole::test;
  CHECK_THROWS_AS(Trainer(m, d.id, &test_role, small_config()), ContractError);
  CHECK_THROWS_AS(Trainer(m, d.id, nullptr, small_config()), ContractError);
  CHECK_THROWS_AS(Trainer(Model::init({7, 24, 12}, 3, 1), d.id, &d.aux, small_config()), DimensionError);
  CHECK_THROWS_AS(Trainer(Model::init({8, 24, 12}, 2, 1), d.id, &d.aux, small_config()), DimensionError);
}

TEST_CASE("toy run reaches the reference trajectory") {
  const auto bench = make_benchmark(BenchmarkSpec{}, 0);
  WarmupConfig wc;
  wc.seed = 0;
  const auto warm = warm_start(bench, default_layer_dims(16), wc, 0);
  const auto cfg = toy_train_config(0, LossVariant::ours);
  const auto r = train(warm, bench.id_train, bench.ood_aux, cfg);
  const auto& recs = r.log.records;
  REQUIRE(recs.size() == cfg.epochs);
  // Pilot run, seed 0: final aux orth ~0.007, train accuracy 1.0.
  CHECK(*recs.back().aux_orth_mean < 0.05);
  CHECK(recs.back().id_acc >= 0.98);
  CHECK(*recs.back().aux_orth_mean < *recs[cfg.switch_epoch].aux_orth_mean);
  CHECK(recs.back().id_nc_cos > recs[cfg.switch_epoch - 1].id_nc_cos);
}
