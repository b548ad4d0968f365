#include "ncood/detection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "ncood/error.hpp"
#include "ncood/linalg.hpp"
#include "ncood/rng.hpp"

namespace ncood {

ScoreKind parse_score_kind(std::string_view name) {
  if (name == "msp") return ScoreKind::msp;
  if (name == "combined") return ScoreKind::combined;
  throw ConfigError("unknown score kind '" + std::string(name) + "' (expected msp, combined or all)");
}

std::string_view to_string(ScoreKind kind) { return kind == ScoreKind::msp ? "msp" : "combined"; }

double msp_score(std::span<const double> logits) {
  if (logits.empty()) throw DimensionError("msp_score: empty logits");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double v : logits) s += std::exp(v - mx);
  return 1.0 / s;
}

double mean_abs_cosine(std::span<const double> feature, const Tensor& class_weights) {
  if (class_weights.cols() != feature.size())
    throw DimensionError("feature width " + std::to_string(feature.size()) + " does not match class weights");
  const double zn = linalg::norm(feature);
  if (zn <= kNormEpsilon) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < class_weights.rows(); ++i) {
    const auto w = class_weights.row(i);
    const double wn = linalg::norm(w);
    if (wn <= kNormEpsilon) continue;
    s += std::fabs(linalg::dot(feature, w) / (zn * wn));
  }
  return s / static_cast<double>(class_weights.rows());
}

double combined_score(std::span<const double> logits, std::span<const double> feature, const Tensor& class_weights) {
  return msp_score(logits) + mean_abs_cosine(feature, class_weights);
}

std::vector<double> score_samples(const Model& model, const Tensor& x, ScoreKind kind) {
  const auto out = model.forward(x);
  std::vector<double> scores(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i)
    scores[i] = kind == ScoreKind::msp ? msp_score(out.logits.row(i))
                                       : combined_score(out.logits.row(i), out.features.row(i), model.head().weight);
  return scores;
}

void ScoreSeries::validate() const {
  if (id_scores.empty() || ood_scores.empty()) throw ContractError("score series needs both ID and OOD scores");
  for (const auto* v : {&id_scores, &ood_scores})
    for (double s : *v)
      if (!std::isfinite(s)) throw NumericError("score series contains a non-finite score");
}

double threshold_at_tpr(std::span<const double> id_scores, double tpr) {
  if (id_scores.empty()) throw ContractError("threshold_at_tpr: no ID scores");
  if (!(tpr > 0.0 && tpr <= 1.0)) throw ContractError("threshold_at_tpr: tpr must lie in (0, 1]");
  const std::size_t n = id_scores.size();
  // The small offset keeps products like 0.95 * 100 from rounding up a rank.
  auto k = static_cast<std::size_t>(std::ceil(tpr * static_cast<double>(n) - 1e-9));
  k = std::clamp<std::size_t>(k, 1, n);
  std::vector<double> sorted(id_scores.begin(), id_scores.end());
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k - 1), sorted.end(),
                   std::greater<>());
  return sorted[k - 1];
}

double fpr_at_tpr(const ScoreSeries& series, double tpr) {
  series.validate();
  const double lambda = threshold_at_tpr(series.id_scores, tpr);
  const auto fp = std::count_if(series.ood_scores.begin(), series.ood_scores.end(),
                                [lambda](double s) { return s >= lambda; });
  return static_cast<double>(fp) / static_cast<double>(series.ood_scores.size());
}

double auroc(const ScoreSeries& series) {
  series.validate();
  struct Entry {
    double score;
    bool id;
  };
  std::vector<Entry> all;
  all.reserve(series.id_scores.size() + series.ood_scores.size());
  for (double s : series.id_scores) all.push_back({s, true});
  for (double s : series.ood_scores) all.push_back({s, false});
  std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.score < b.score; });

  // Twice the Mann-Whitney U, kept integral: a tie block at 1-based ranks
  // [first, last] contributes (first + last) per ID member.
  std::uint64_t twice_rank_sum = 0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) ++j;
    const std::uint64_t doubled_midrank = (i + 1) + j;
    for (std::size_t k = i; k < j; ++k)
      if (all[k].id) twice_rank_sum += doubled_midrank;
    i = j;
  }
  const std::uint64_t n = series.id_scores.size(), m = series.ood_scores.size();
  const std::uint64_t twice_u = twice_rank_sum - n * (n + 1);
  return static_cast<double>(twice_u) / static_cast<double>(2 * n * m);
}

DetectionReport evaluate_detection(const ScoreSeries& series) {
  DetectionReport r;
  r.kind = series.kind;
  r.threshold = threshold_at_tpr(series.id_scores, 0.95);
  r.fpr95 = fpr_at_tpr(series, 0.95);
  r.auroc = auroc(series);
  return r;
}

// --- separation -------------------------------------------------------------------

std::vector<int> predict_labels(const Tensor& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto r = logits.row(i);
    out[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

namespace {

Tensor unit_rows(const Tensor& m) {
  Tensor out = m;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    const double n = linalg::norm(r);
    if (n <= kNormEpsilon)
      std::fill(r.begin(), r.end(), 0.0);
    else
      for (auto& v : r) v /= n;
  }
  return out;
}

}  // namespace

SeparationStats separation_metrics(const Tensor& features, std::span<const int> predicted_labels,
                                   const Tensor& class_weights) {
  if (features.rows() != predicted_labels.size())
    throw DimensionError("separation_metrics: one predicted label per feature row required");
  if (features.cols() != class_weights.cols())
    throw DimensionError("separation_metrics: feature width does not match class weights");
  const Tensor w = unit_rows(class_weights);
  const Tensor basis = linalg::orthonormal_basis(w, 1e-10);
  if (basis.empty()) throw NumericError("separation_metrics: class weights have rank 0");

  SeparationStats s;
  const std::size_t d = features.cols();
  std::vector<double> z(d);
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const int y = predicted_labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= w.rows())
      throw DimensionError("separation_metrics: predicted label out of range");
    const auto f = features.row(i);
    const double n = linalg::norm(f);
    for (std::size_t k = 0; k < d; ++k) z[k] = n <= kNormEpsilon ? 0.0 : f[k] / n;
    const auto wy = w.row(static_cast<std::size_t>(y));
    double dist2 = 0.0;
    for (std::size_t k = 0; k < d; ++k) dist2 += (z[k] - wy[k]) * (z[k] - wy[k]);
    s.euclidean += std::sqrt(dist2);
    s.cosine += linalg::dot(z, wy);
    s.reconstruction_error += linalg::norm(linalg::residual(z, basis));
  }
  s.count = features.rows();
  if (s.count > 0) {
    const double inv = 1.0 / static_cast<double>(s.count);
    s.euclidean *= inv;
    s.cosine *= inv;
    s.reconstruction_error *= inv;
  }
  return s;
}

SeparationTriplet separation_triplet(const SeparationStats& id, const SeparationStats& ood) {
  SeparationTriplet t{id, ood, {}};
  t.diff.euclidean = std::fabs(id.euclidean - ood.euclidean);
  t.diff.cosine = std::fabs(id.cosine - ood.cosine);
  t.diff.reconstruction_error = std::fabs(id.reconstruction_error - ood.reconstruction_error);
  t.diff.count = id.count + ood.count;
  return t;
}

// --- principal direction -------------------------------------------------------------

namespace {

constexpr double kPowerTol = 1e-10;
constexpr std::size_t kPowerMaxIter = 10'000;

std::vector<double> mat_vec(const std::vector<double>& a, std::size_t d, const std::vector<double>& v) {
  std::vector<double> out(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += a[i * d + j] * v[j];
    out[i] = s;
  }
  return out;
}

struct PowerResult {
  std::vector<double> v;
  double lambda = 0.0;
  std::size_t iterations = 0;
};

// Stops once the Rayleigh quotient changes by less than kPowerTol (relative)
// and the eigen-residual ||A v - lambda v|| is below kPowerTol * lambda.
PowerResult power_iteration(const std::vector<double>& a, std::size_t d) {
  Rng rng(0x5eed);
  std::vector<double> v(d);
  for (auto& x : v) x = rng.normal();
  double n = linalg::norm(v);
  for (auto& x : v) x /= n;

  PowerResult r;
  double prev = 0.0;
  for (std::size_t it = 1; it <= kPowerMaxIter; ++it) {
    auto w = mat_vec(a, d, v);
    const double lambda = linalg::dot(v, w);
    double res2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) res2 += (w[i] - lambda * v[i]) * (w[i] - lambda * v[i]);
    r.iterations = it;
    r.lambda = lambda;
    const double wn = linalg::norm(w);
    if (wn == 0.0) {
      r.v = v;
      return r;
    }
    const bool converged = std::fabs(lambda - prev) <= kPowerTol * std::fabs(lambda) &&
                           std::sqrt(res2) <= kPowerTol * std::fabs(lambda);
    if (converged) {
      r.v = v;
      return r;
    }
    prev = lambda;
    for (std::size_t i = 0; i < d; ++i) v[i] = w[i] / wn;
  }
  r.v = v;
  return r;
}

}  // namespace

PrincipalDirection principal_ood_direction(const Tensor& features) {
  const std::size_t m = features.rows(), d = features.cols();
  if (m < 2) throw ContractError("principal_ood_direction: need at least two feature rows");
  std::vector<double> mu(d, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < d; ++k) mu[k] += features(i, k);
  for (auto& v : mu) v /= static_cast<double>(m);

  std::vector<double> cov(d * d, 0.0);
  double scale2 = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < d; ++k) scale2 += features(i, k) * features(i, k);
    for (std::size_t p = 0; p < d; ++p) {
      const double xp = features(i, p) - mu[p];
      for (std::size_t q = 0; q < d; ++q) cov[p * d + q] += xp * (features(i, q) - mu[q]);
    }
  }
  double trace = 0.0;
  for (std::size_t k = 0; k < d; ++k) trace += cov[k * d + k];
  if (trace <= 1e-24 * scale2 || trace == 0.0)
    throw NumericError("principal_ood_direction: features have zero covariance");
  for (auto& v : cov) v /= static_cast<double>(m - 1);

  auto top = power_iteration(cov, d);
  PrincipalDirection out;
  out.eigenvalue = top.lambda;
  out.iterations = top.iterations;

  std::vector<double> deflated = cov;
  for (std::size_t p = 0; p < d; ++p)
    for (std::size_t q = 0; q < d; ++q) deflated[p * d + q] -= top.lambda * top.v[p] * top.v[q];
  out.second_eigenvalue = d > 1 ? power_iteration(deflated, d).lambda : 0.0;
  out.unique = top.lambda - out.second_eigenvalue > 1e-8 * top.lambda;

  std::size_t argmax = 0;
  for (std::size_t k = 1; k < d; ++k)
    if (std::fabs(top.v[k]) > std::fabs(top.v[argmax])) argmax = k;
  if (top.v[argmax] < 0)
    for (auto& x : top.v) x = -x;
  out.vector = std::move(top.v);
  return out;
}

// --- projection -----------------------------------------------------------------------

Tensor project_features(const Tensor& features, const Tensor& class_weights,
                        const std::optional<std::vector<double>>& ood_direction) {
  if (class_weights.rows() < 2) throw ContractError("project_features: need at least two classes");
  const std::size_t d = class_weights.cols();
  if (features.cols() != d) throw DimensionError("project_features: feature width does not match class weights");
  const std::size_t idx[] = {0, 1};
  const Tensor frame2 = linalg::orthonormal_basis(unit_rows(class_weights.select_rows(idx)), 1e-10);
  if (frame2.empty() || frame2.rows() < 2)
    throw NumericError("project_features: w_1 and w_2 are parallel; cannot build a 2-D frame");

  std::vector<double> frame(frame2.data().begin(), frame2.data().end());
  std::size_t dims = 2;
  if (ood_direction) {
    if (ood_direction->size() != d) throw DimensionError("project_features: OOD direction width mismatch");
    auto e3 = linalg::residual(*ood_direction, frame2);
    e3 = linalg::residual(e3, frame2);
    const double n = linalg::norm(e3);
    if (n < 1e-10) throw NumericError("project_features: OOD direction lies in span(w_1, w_2)");
    for (auto& x : e3) frame.push_back(x / n);
    dims = 3;
  }

  const Tensor z = unit_rows(features);
  Tensor out = Tensor::zeros({features.rows(), dims});
  for (std::size_t i = 0; i < z.rows(); ++i)
    for (std::size_t a = 0; a < dims; ++a)
      out(i, a) = linalg::dot(z.row(i), std::span<const double>(frame.data() + a * d, d));
  return out;
}

std::string projection_csv(std::size_t dims, const std::vector<ProjectionBlock>& rows) {
  if (dims != 2 && dims != 3) throw ConfigError("projection dims must be 2 or 3");
  std::string out = dims == 2 ? "population,c1,c2\n" : "population,c1,c2,c3\n";
  char buf[40];
  for (const auto& r : rows) {
    if (r.coords.size() != dims) throw DimensionError("projection row has the wrong number of coordinates");
    out += r.population;
    for (double c : r.coords) {
      std::snprintf(buf, sizeof buf, "%.17g", c);
      out += ',';
      out += buf;
    }
    out += '\n';
  }
  return out;
}

void write_projection_csv(const std::filesystem::path& path, std::size_t dims,
                          const std::vector<ProjectionBlock>& rows) {
  const std::string text = projection_csv(dims, rows);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write projection file '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for projection file '" + path.string() + "'");
}

}  // namespace ncood
