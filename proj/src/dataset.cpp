#include "ncood/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <system_error>

#include "ncood/error.hpp"
#include "ncood/linalg.hpp"

namespace ncood {

void LabeledDataset::validate() const {
  if (labels.empty()) throw FormatError("labeled dataset is empty");
  if (features.rank() != 2 || features.rows() != labels.size())
    throw FormatError("labeled dataset: feature rows do not match label count");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
      throw FormatError("labeled dataset: label " + std::to_string(y) + " outside [0, " +
                        std::to_string(num_classes) + ")");
  if (!features.all_finite()) throw FormatError("labeled dataset contains non-finite features");
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
  LabeledDataset out;
  out.features = features.select_rows(indices);
  out.labels.reserve(indices.size());
  for (auto i : indices) out.labels.push_back(labels[i]);
  out.num_classes = num_classes;
  return out;
}

void OutlierDataset::validate() const {
  if (features.empty() || features.rank() != 2) throw FormatError("outlier dataset is empty");
  if (!features.all_finite()) throw FormatError("outlier dataset contains non-finite features");
}

OutlierMode parse_outlier_mode(std::string_view name) {
  if (name == "shifted-gaussian") return OutlierMode::shifted_gaussian;
  if (name == "uniform-shell") return OutlierMode::uniform_shell;
  if (name == "mixture") return OutlierMode::mixture;
  throw ConfigError("unknown outlier mode '" + std::string(name) +
                    "' (expected shifted-gaussian, uniform-shell or mixture)");
}

std::string_view to_string(OutlierMode mode) {
  switch (mode) {
    case OutlierMode::shifted_gaussian:
      return "shifted-gaussian";
    case OutlierMode::uniform_shell:
      return "uniform-shell";
    case OutlierMode::mixture:
      return "mixture";
  }
  return "?";
}

std::string_view to_string(OutlierRole role) { return role == OutlierRole::auxiliary ? "auxiliary" : "test"; }

namespace {

std::vector<double> random_unit(std::size_t d, Rng& rng) {
  for (;;) {
    std::vector<double> v(d);
    for (auto& x : v) x = rng.normal();
    const double n = linalg::norm(v);
    if (n > 1e-8) {
      for (auto& x : v) x /= n;
      return v;
    }
  }
}

}  // namespace

LabeledDataset gen_gaussian_id(std::size_t num_classes, std::size_t dim, std::size_t n_per_class, double mean_scale,
                               double sigma, std::uint64_t seed) {
  if (num_classes < 2) throw ConfigError("gen_gaussian_id: need at least 2 classes");
  if (dim <= num_classes)
    throw ConfigError("gen_gaussian_id: feature dimension d=" + std::to_string(dim) +
                      " must exceed the class count C=" + std::to_string(num_classes) +
                      " so an orthogonal complement of the class subspace exists");
  if (n_per_class == 0) throw ConfigError("gen_gaussian_id: n_per_class must be positive");
  if (!(sigma >= 0.0) || !std::isfinite(mean_scale)) throw ConfigError("gen_gaussian_id: invalid scale/sigma");

  Rng rng(seed);
  Tensor frame;
  do {
    Tensor raw = Tensor::zeros({num_classes, dim});
    for (auto& v : raw.data()) v = rng.normal();
    frame = linalg::orthonormal_basis(raw, 1e-6);
  } while (frame.empty() || frame.rows() != num_classes);

  LabeledDataset out;
  out.num_classes = num_classes;
  std::vector<double> values;
  values.reserve(num_classes * n_per_class * dim);
  for (std::size_t c = 0; c < num_classes; ++c)
    for (std::size_t k = 0; k < n_per_class; ++k) {
      for (std::size_t j = 0; j < dim; ++j) values.push_back(mean_scale * frame(c, j) + sigma * rng.normal());
      out.labels.push_back(static_cast<int>(c));
    }
  out.features = Tensor({num_classes * n_per_class, dim}, std::move(values));
  return out;
}

OutlierDataset gen_outliers(std::size_t dim, std::size_t m, OutlierMode mode, const OutlierParams& params,
                            std::uint64_t seed, OutlierRole role) {
  if (m == 0) throw ConfigError("gen_outliers: m must be positive");
  if (dim == 0) throw ConfigError("gen_outliers: dimension must be positive");
  if (params.sigma < 0.0 || params.radius_min < 0.0 || params.radius_max < params.radius_min)
    throw ConfigError("gen_outliers: invalid spread or radius range");

  Rng rng(seed);
  std::vector<double> values;
  values.reserve(m * dim);
  switch (mode) {
    case OutlierMode::shifted_gaussian: {
      const auto u = random_unit(dim, rng);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < dim; ++j) values.push_back(params.shift * u[j] + params.sigma * rng.normal());
      break;
    }
    case OutlierMode::uniform_shell: {
      for (std::size_t i = 0; i < m; ++i) {
        const auto u = random_unit(dim, rng);
        const double r = rng.uniform(params.radius_min, params.radius_max);
        for (double x : u) values.push_back(r * x);
      }
      break;
    }
    case OutlierMode::mixture: {
      if (params.components == 0) throw ConfigError("gen_outliers: mixture needs at least one component");
      std::vector<std::vector<double>> centres;
      for (std::size_t k = 0; k < params.components; ++k) centres.push_back(random_unit(dim, rng));
      for (std::size_t i = 0; i < m; ++i) {
        const auto& u = centres[rng.below(params.components)];
        for (std::size_t j = 0; j < dim; ++j) values.push_back(params.shift * u[j] + params.sigma * rng.normal());
      }
      break;
    }
  }
  return OutlierDataset{Tensor({m, dim}, std::move(values)), role};
}

std::pair<LabeledDataset, LabeledDataset> split_per_class(const LabeledDataset& data, std::size_t n_first) {
  std::vector<std::size_t> seen(data.num_classes, 0);
  std::vector<std::size_t> first, rest;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto& s = seen[static_cast<std::size_t>(data.labels[i])];
    (s < n_first ? first : rest).push_back(i);
    ++s;
  }
  if (first.empty() || rest.empty()) throw ConfigError("split_per_class: split leaves an empty part");
  return {data.subset(first), data.subset(rest)};
}

// --- CSV --------------------------------------------------------------------

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

[[noreturn]] void parse_fail(const std::filesystem::path& path, std::size_t line, const std::string& what) {
  throw FormatError(path.string() + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

AnyDataset load_csv(const std::filesystem::path& path, OutlierRole outlier_role) {
  std::ifstream in(path, std::ios::binary);
  if (!in || std::filesystem::is_directory(path)) throw IoError("cannot open dataset file '" + path.string() + "'");

  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) parse_fail(path, line_no, "missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_commas(line);
  if (header.size() < 2 || header[0] != "label") parse_fail(path, line_no, "header must be label,f0,...");
  const std::size_t d = header.size() - 1;
  for (std::size_t j = 0; j < d; ++j)
    if (header[j + 1] != "f" + std::to_string(j))
      parse_fail(path, line_no, "header column " + std::to_string(j + 1) + " must be f" + std::to_string(j));

  std::vector<double> values;
  std::vector<int> labels;
  bool any_outlier = false, any_labeled = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != d + 1)
      parse_fail(path, line_no,
                 "expected " + std::to_string(d + 1) + " columns, found " + std::to_string(cells.size()));
    int label = 0;
    {
      const auto c = cells[0];
      auto [ptr, ec] = std::from_chars(c.data(), c.data() + c.size(), label);
      if (ec != std::errc() || ptr != c.data() + c.size() || c.empty())
        parse_fail(path, line_no, "label '" + std::string(c) + "' is not an integer");
    }
    if (label < -1) parse_fail(path, line_no, "label must be -1 or non-negative");
    (label == -1 ? any_outlier : any_labeled) = true;
    if (any_outlier && any_labeled) parse_fail(path, line_no, "file mixes outlier (-1) and class labels");
    labels.push_back(label);
    for (std::size_t j = 0; j < d; ++j) {
      const auto c = cells[j + 1];
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
      if (ec != std::errc() || ptr != c.data() + c.size() || c.empty() || !std::isfinite(v))
        parse_fail(path, line_no, "malformed value '" + std::string(c) + "'");
      values.push_back(v);
    }
  }
  if (labels.empty()) parse_fail(path, line_no, "no samples");

  Tensor features({labels.size(), d}, std::move(values));
  if (any_outlier) return OutlierDataset{std::move(features), outlier_role};
  LabeledDataset out;
  out.features = std::move(features);
  int max_label = 0;
  for (int y : labels) max_label = std::max(max_label, y);
  out.num_classes = static_cast<std::size_t>(max_label) + 1;
  out.labels = std::move(labels);
  return out;
}

LabeledDataset load_labeled_csv(const std::filesystem::path& path) {
  auto any = load_csv(path);
  if (auto* p = std::get_if<LabeledDataset>(&any)) return std::move(*p);
  throw FormatError(path.string() + ": expected labeled samples, found outliers (label -1)");
}

OutlierDataset load_outlier_csv(const std::filesystem::path& path, OutlierRole role) {
  auto any = load_csv(path, role);
  if (auto* p = std::get_if<OutlierDataset>(&any)) return std::move(*p);
  throw FormatError(path.string() + ": expected outlier samples (label -1), found class labels");
}

namespace {

void write_rows(const Tensor& features, const std::vector<int>* labels, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write dataset file '" + path.string() + "'");
  const std::size_t d = features.cols();
  std::string line = "label";
  for (std::size_t j = 0; j < d; ++j) line += ",f" + std::to_string(j);
  out << line << '\n';
  char buf[64];
  for (std::size_t i = 0; i < features.rows(); ++i) {
    line = std::to_string(labels ? (*labels)[i] : -1);
    for (double v : features.row(i)) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      line += ',';
      line += buf;
    }
    out << line << '\n';
  }
  out.flush();
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace

void save_csv(const LabeledDataset& data, const std::filesystem::path& path) {
  write_rows(data.features, &data.labels, path);
}

void save_csv(const OutlierDataset& data, const std::filesystem::path& path) {
  write_rows(data.features, nullptr, path);
}

std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  const auto order = rng.permutation(n);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

}  // namespace ncood
