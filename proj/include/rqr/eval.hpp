#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rqr/data.hpp"
#include "rqr/trainers.hpp"

namespace rqr {

/// Root-sum-square difference between two models' predictions over the rows
/// of eval_points.
double frobenius_distance(const FittedQuantile& a, const FittedQuantile& b,
                          const Matrix& eval_points);

/// Fraction of rows with y <= f(x).
double empirical_coverage(const FittedQuantile& model, const Dataset& data);

/// Mean squared error of predictions against responses, optionally
/// restricted to inlier rows.
double median_mse(const FittedQuantile& model, const Dataset& data,
                  bool inliers_only = false);

struct EvalRecord {
  std::string method;
  double alpha = 0.5;
  double frobenius = 0.0;      // prediction space, original response units
  double frobenius_std = 0.0;  // same, in response-standard-deviation units
  double coverage = 0.0;
  std::optional<double> median_mse;  // alpha = 0.5 records only

  bool operator==(const EvalRecord&) const = default;
};

struct EvalReport {
  std::string dataset;
  std::uint64_t seed = 0;
  nlohmann::json config_echo;
  double wall_time_sec = 0.0;  // diagnostics; excluded from report.json
  std::vector<EvalRecord> records;
};

void to_json(nlohmann::json& j, const EvalRecord& r);
void from_json(const nlohmann::json& j, EvalRecord& r);
/// report.json schema; wall time is serialized separately (timings.json) so
/// artifact files stay bit-reproducible.
nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);

/// Assembles one record per (fit, alpha): Frobenius distance to the
/// reference fit of the same alpha over frob_data's feature rows, coverage
/// on coverage_data (frob_data when null), and MSE for the median fit.
EvalReport build_report(const std::vector<FitResult>& fits,
                        const FitResult& reference, const Dataset& frob_data,
                        const Dataset* coverage_data = nullptr);

}  // namespace rqr
