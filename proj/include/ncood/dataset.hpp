#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "ncood/rng.hpp"
#include "ncood/tensor.hpp"

namespace ncood {

// In-distribution samples with labels in [0, num_classes).
struct LabeledDataset {
  Tensor features;  // n x d
  std::vector<int> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }

  // Throws FormatError when the invariants do not hold.
  void validate() const;
  LabeledDataset subset(std::span<const std::size_t> indices) const;
};

enum class OutlierRole { auxiliary, test };

struct OutlierDataset {
  Tensor features;  // m x d
  OutlierRole role = OutlierRole::test;

  std::size_t size() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }

  void validate() const;
};

enum class OutlierMode { shifted_gaussian, uniform_shell, mixture };

OutlierMode parse_outlier_mode(std::string_view name);
std::string_view to_string(OutlierMode mode);
std::string_view to_string(OutlierRole role);

struct OutlierParams {
  double shift = 8.0;        // centre distance for shifted-gaussian / mixture
  double sigma = 1.0;        // per-coordinate spread for shifted-gaussian / mixture
  double radius_min = 12.0;  // uniform-shell radius range
  double radius_max = 16.0;
  std::size_t components = 4;  // mixture components
};

// C isotropic Gaussian clusters. The class means are mutually orthogonal
// vectors of norm `mean_scale` (a random orthonormal frame, so any two means
// are mean_scale * sqrt(2) apart). Samples are stored class-major.
LabeledDataset gen_gaussian_id(std::size_t num_classes, std::size_t dim, std::size_t n_per_class, double mean_scale,
                               double sigma, std::uint64_t seed);

// Outlier samples:
//   shifted-gaussian  N(shift * u, sigma^2 I) for one random unit direction u
//   uniform-shell     uniform direction, radius uniform in [radius_min, radius_max]
//   mixture           `components` shifted Gaussians with independent directions
OutlierDataset gen_outliers(std::size_t dim, std::size_t m, OutlierMode mode, const OutlierParams& params,
                            std::uint64_t seed, OutlierRole role);

// Splits a class-major or interleaved dataset so the first `n_first` samples
// of every class land in the first part.
std::pair<LabeledDataset, LabeledDataset> split_per_class(const LabeledDataset& data, std::size_t n_first);

// CSV interchange: header `label,f0,...,f{d-1}`, one sample per line, label -1
// marks outliers. Values are written with 17 significant digits.
using AnyDataset = std::variant<LabeledDataset, OutlierDataset>;

AnyDataset load_csv(const std::filesystem::path& path, OutlierRole outlier_role = OutlierRole::test);
LabeledDataset load_labeled_csv(const std::filesystem::path& path);
OutlierDataset load_outlier_csv(const std::filesystem::path& path, OutlierRole role);

void save_csv(const LabeledDataset& data, const std::filesystem::path& path);
void save_csv(const OutlierDataset& data, const std::filesystem::path& path);

// One epoch of shuffled index batches; the last batch may be short.
std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, Rng& rng);

}  // namespace ncood
