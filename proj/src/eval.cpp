#include "rqr/eval.hpp"

#include <cmath>
#include <stdexcept>

namespace rqr {

double frobenius_distance(const FittedQuantile& a, const FittedQuantile& b,
                          const Matrix& eval_points) {
  if (eval_points.rows == 0)
    throw std::invalid_argument("frobenius_distance: empty evaluation set");
  double sum = 0.0;
  for (std::size_t i = 0; i < eval_points.rows; ++i) {
    const auto x = eval_points.row(i);
    const double d = a.predict(x) - b.predict(x);
    sum += d * d;
  }
  return std::sqrt(sum);
}

double empirical_coverage(const FittedQuantile& model, const Dataset& data) {
  if (data.size() == 0)
    throw std::invalid_argument("empirical_coverage: empty dataset");
  std::size_t covered = 0;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (data.responses[i] <= model.predict(data.features.row(i))) ++covered;
  return static_cast<double>(covered) / static_cast<double>(data.size());
}

double median_mse(const FittedQuantile& model, const Dataset& data,
                  bool inliers_only) {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (inliers_only && data.inlier_mask && !(*data.inlier_mask)[i]) continue;
    const double d = data.responses[i] - model.predict(data.features.row(i));
    sum += d * d;
    ++count;
  }
  if (count == 0) throw std::invalid_argument("median_mse: no rows selected");
  return sum / static_cast<double>(count);
}

void to_json(nlohmann::json& j, const EvalRecord& r) {
  j = nlohmann::json{{"method", r.method},
                     {"alpha", r.alpha},
                     {"frobenius", r.frobenius},
                     {"frobenius_std", r.frobenius_std},
                     {"coverage", r.coverage}};
  if (r.median_mse) j["median_mse"] = *r.median_mse;
}

void from_json(const nlohmann::json& j, EvalRecord& r) {
  j.at("method").get_to(r.method);
  j.at("alpha").get_to(r.alpha);
  j.at("frobenius").get_to(r.frobenius);
  j.at("frobenius_std").get_to(r.frobenius_std);
  j.at("coverage").get_to(r.coverage);
  if (j.contains("median_mse")) r.median_mse = j["median_mse"].get<double>();
}

nlohmann::json report_to_json(const EvalReport& report) {
  return nlohmann::json{{"dataset", report.dataset},
                        {"seed", report.seed},
                        {"config", report.config_echo},
                        {"records", report.records}};
}

EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport report;
  j.at("dataset").get_to(report.dataset);
  j.at("seed").get_to(report.seed);
  report.config_echo = j.at("config");
  report.records = j.at("records").get<std::vector<EvalRecord>>();
  return report;
}

EvalReport build_report(const std::vector<FitResult>& fits,
                        const FitResult& reference, const Dataset& frob_data,
                        const Dataset* coverage_data) {
  const Dataset& cov = coverage_data ? *coverage_data : frob_data;
  // one canonical response scale for the standardized distances
  const double y_scale = Standardizer::fit(frob_data).y_std;

  EvalReport report;
  report.dataset = frob_data.name;
  for (const FitResult& fit : fits) {
    report.seed = fit.seed;
    for (const FittedQuantile& fq : fit.fits) {
      const FittedQuantile& ref = reference.at(fq.alpha);  // throws if absent
      EvalRecord rec;
      rec.method = fit.label;
      rec.alpha = fq.alpha;
      rec.frobenius = frobenius_distance(fq, ref, frob_data.features);
      rec.frobenius_std = rec.frobenius / y_scale;
      rec.coverage = empirical_coverage(fq, cov);
      if (std::abs(fq.alpha - 0.5) < 1e-12)
        rec.median_mse = median_mse(fq, cov, /*inliers_only=*/true);
      report.records.push_back(std::move(rec));
    }
  }
  return report;
}

}  // namespace rqr
