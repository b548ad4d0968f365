#pragma once

#include <cstdint>
#include <vector>

#include "ncood/dataset.hpp"
#include "ncood/model.hpp"
#include "ncood/trainer.hpp"

namespace ncood {

// Desk-scale benchmark: Gaussian ID clusters, an auxiliary outlier set drawn
// from one mode and a held-out test outlier set from another.
struct BenchmarkSpec {
  std::size_t num_classes = 4;
  std::size_t dim = 16;
  std::size_t n_train_per_class = 200;
  std::size_t n_test_per_class = 100;
  double mean_scale = 4.0;
  double sigma = 0.5;

  std::size_t aux_count = 800;
  OutlierMode aux_mode = OutlierMode::uniform_shell;
  OutlierParams aux_params{.shift = 8.0, .sigma = 1.0, .radius_min = 2.0, .radius_max = 10.0, .components = 4};

  std::size_t test_count = 400;
  OutlierMode test_mode = OutlierMode::mixture;
  OutlierParams test_params{.shift = 6.0, .sigma = 1.0, .radius_min = 12.0, .radius_max = 16.0, .components = 4};

  void validate() const;
};

struct Benchmark {
  LabeledDataset id_train;
  LabeledDataset id_test;
  OutlierDataset ood_aux;
  OutlierDataset ood_test;
};

// Every part draws from its own stream derived from `seed`.
Benchmark make_benchmark(const BenchmarkSpec& spec, std::uint64_t seed);

// Hidden widths used for the toy runs: input -> 128 -> 16 features.
std::vector<std::size_t> default_layer_dims(std::size_t input_dim, std::size_t feature_dim = 16);

// Fresh weights from derive_seed(seed, 13) followed by the CE warm-up.
Model warm_start(const Benchmark& bench, const std::vector<std::size_t>& layer_dims, const WarmupConfig& warm,
                 std::uint64_t seed);

// 40 epochs, switch at 15; everything else at the defaults.
TrainConfig toy_train_config(std::uint64_t seed, LossVariant variant);

}  // namespace ncood
