#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rqr/losses.hpp"

namespace rqr {

/// Row-major dense matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  static Matrix zeros(std::size_t r, std::size_t c) {
    return Matrix{r, c, std::vector<double>(r * c, 0.0)};
  }
  std::span<const double> row(std::size_t i) const {
    return {values.data() + i * cols, cols};
  }
  std::span<double> row(std::size_t i) {
    return {values.data() + i * cols, cols};
  }
};

struct Dataset {
  Matrix features;                                       // N x d
  std::vector<double> responses;                         // N
  std::optional<std::vector<std::uint8_t>> inlier_mask;  // N when present
  std::string name;
  std::string provenance;

  std::size_t size() const { return responses.size(); }
  std::size_t dim() const { return features.cols; }
  /// Throws DataError when shapes disagree or values are non-finite.
  void validate() const;
  /// Rows with mask != 0 (whole dataset when no mask is present).
  Dataset inlier_subset() const;
  Dataset subset(std::span<const std::size_t> indices) const;
};

struct CsvOptions {
  bool has_header = true;
  std::string response_column = "y";
  std::string inlier_column = "inlier";      // parsed into the mask if present
  std::vector<std::string> feature_columns;  // empty: every remaining column
};

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

/// Parses a comma-separated numeric file. Row order is preserved; parse
/// failures name the 1-based data row and the column.
Dataset load_csv(const std::filesystem::path& path, const CsvOptions& options = {});

/// Writes x..., y[, inlier] with round-trip (17 significant digit) precision.
void write_csv(const Dataset& data, const std::filesystem::path& path);

/// The bundled 47-star cluster dataset (log effective temperature vs log
/// light intensity); the 4 giant-star leverage points carry inlier = 0.
/// The bundle checksum is verified on load.
Dataset star_cluster_dataset(
    const std::optional<std::filesystem::path>& path_override = {});

struct SyntheticSpec {
  std::size_t n = 1000;
  double x_low = 0.0;
  double x_high = 10.0;
  double noise_scale = 1.0;
  bool heteroscedastic = true;
  double outlier_fraction = 0.01;
  double outlier_magnitude = 30.0;
  std::uint64_t seed = 1;

  void validate() const;
};

/// x ~ U(x_low, x_high); y = x*sin(x) + s(x)*eps with eps standard normal and
/// s(x) = noise_scale*(1+|x|/x_high) when heteroscedastic. ceil(fraction*n)
/// seeded rows then get y shifted by +-outlier_magnitude and mask = 0.
Dataset gen_synthetic(const SyntheticSpec& spec);

/// Closed-form conditional alpha-quantile of the clean generator law.
double conditional_quantile_oracle(const SyntheticSpec& spec, double x,
                                   QuantileLevel alpha);

/// Seeded shuffle then partition into (train, validation); masks carried.
std::pair<Dataset, Dataset> split(const Dataset& data, double val_fraction,
                                  std::uint64_t seed);

/// Z-score transform fitted on a dataset. Degenerate (constant) columns keep
/// scale 1 so transforms stay invertible.
struct Standardizer {
  bool active = false;
  std::vector<double> x_mean, x_std;
  double y_mean = 0.0;
  double y_std = 1.0;

  static Standardizer fit(const Dataset& data);
  static Standardizer identity(std::size_t dim);
  void transform_features(std::span<const double> x, std::span<double> out) const;
  double transform_response(double y) const {
    return active ? (y - y_mean) / y_std : y;
  }
  double inverse_response(double z) const {
    return active ? y_mean + y_std * z : z;
  }
};

}  // namespace rqr
