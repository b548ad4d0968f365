#include "ncood/benchmark.hpp"

#include "ncood/error.hpp"

namespace ncood {

void BenchmarkSpec::validate() const {
  if (num_classes < 2) throw ConfigError("benchmark needs at least two classes");
  if (dim <= num_classes) throw ConfigError("benchmark dim must exceed the class count");
  if (n_train_per_class == 0 || n_test_per_class == 0) throw ConfigError("benchmark needs ID samples per class");
  if (aux_count == 0 || test_count == 0) throw ConfigError("benchmark needs auxiliary and test outliers");
  const auto& a = aux_params;
  const auto& t = test_params;
  const bool same_params = a.shift == t.shift && a.sigma == t.sigma && a.radius_min == t.radius_min &&
                           a.radius_max == t.radius_max && a.components == t.components;
  if (aux_mode == test_mode && same_params)
    throw ConfigError("auxiliary and test outliers must differ in mode or parameters");
}

Benchmark make_benchmark(const BenchmarkSpec& spec, std::uint64_t seed) {
  spec.validate();
  auto full = gen_gaussian_id(spec.num_classes, spec.dim, spec.n_train_per_class + spec.n_test_per_class,
                              spec.mean_scale, spec.sigma, derive_seed(seed, 10));
  auto [train, test] = split_per_class(full, spec.n_train_per_class);
  Benchmark b{std::move(train), std::move(test), {}, {}};
  b.ood_aux = gen_outliers(spec.dim, spec.aux_count, spec.aux_mode, spec.aux_params, derive_seed(seed, 11),
                           OutlierRole::auxiliary);
  b.ood_test = gen_outliers(spec.dim, spec.test_count, spec.test_mode, spec.test_params, derive_seed(seed, 12),
                            OutlierRole::test);
  return b;
}

std::vector<std::size_t> default_layer_dims(std::size_t input_dim, std::size_t feature_dim) {
  return {input_dim, 128, feature_dim};
}

Model warm_start(const Benchmark& bench, const std::vector<std::size_t>& layer_dims, const WarmupConfig& warm,
                 std::uint64_t seed) {
  auto m = Model::init(layer_dims, bench.id_train.num_classes, derive_seed(seed, 13));
  return warmup(std::move(m), bench.id_train, warm).model;
}

TrainConfig toy_train_config(std::uint64_t seed, LossVariant variant) {
  TrainConfig c;
  c.epochs = 40;
  c.switch_epoch = 15;
  c.seed = seed;
  c.variant = variant;
  return c;
}

}  // namespace ncood
