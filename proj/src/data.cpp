#include "rqr/data.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "rqr/errors.hpp"
#include "rqr/rng.hpp"

namespace rqr {

namespace {

constexpr std::uint64_t kStarClusterChecksum = 0xadf57df028ed3df1ULL;
constexpr const char* kStarClusterFile = "star_cluster_cyg_ob1.csv";

std::string read_file_stripped(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path.string());
  std::string raw((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  std::string out;
  out.reserve(raw.size());
  for (char c : raw)
    if (c != '\r') out.push_back(c);
  return out;
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_cell(const std::string& cell, std::size_t data_row,
                  const std::string& column) {
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  while (first != last && (*first == ' ' || *first == '\t')) ++first;
  while (last != first && (last[-1] == ' ' || last[-1] == '\t')) --last;
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last)
    throw DataError("non-numeric cell '" + cell + "' at row " +
                    std::to_string(data_row) + ", column '" + column + "'");
  return value;
}

}  // namespace

// Shortest decimal form that parses back to the same double.
std::string format_double(double v) {
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    double back = 0.0;
    auto [ptr, ec] = std::from_chars(buf, buf + std::strlen(buf), back);
    (void)ptr;
    if (ec == std::errc{} && back == v) return buf;
  }
  return buf;
}

void Dataset::validate() const {
  if (responses.empty()) throw DataError(name + ": dataset is empty");
  if (features.rows != responses.size())
    throw DataError(name + ": feature/response lengths disagree");
  if (features.values.size() != features.rows * features.cols)
    throw DataError(name + ": feature matrix shape mismatch");
  if (inlier_mask && inlier_mask->size() != responses.size())
    throw DataError(name + ": inlier mask length mismatch");
  for (double v : features.values)
    if (!std::isfinite(v)) throw DataError(name + ": non-finite feature value");
  for (double v : responses)
    if (!std::isfinite(v)) throw DataError(name + ": non-finite response value");
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.features = Matrix::zeros(indices.size(), features.cols);
  out.responses.reserve(indices.size());
  if (inlier_mask) out.inlier_mask.emplace();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    auto dst = out.features.row(i);
    auto row = features.row(src);
    std::copy(row.begin(), row.end(), dst.begin());
    out.responses.push_back(responses[src]);
    if (inlier_mask) out.inlier_mask->push_back((*inlier_mask)[src]);
  }
  out.name = name;
  out.provenance = provenance;
  return out;
}

Dataset Dataset::inlier_subset() const {
  if (!inlier_mask) return *this;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < size(); ++i)
    if ((*inlier_mask)[i]) keep.push_back(i);
  Dataset out = subset(keep);
  out.inlier_mask.reset();
  return out;
}

Dataset load_csv(const std::filesystem::path& path, const CsvOptions& options) {
  const std::string text = read_file_stripped(path);
  std::vector<std::string> lines;
  {
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line))
      if (!line.empty()) lines.push_back(line);
  }
  if (lines.empty()) throw DataError("empty file: " + path.string());

  std::vector<std::string> columns;
  std::size_t first_data_line = 0;
  if (options.has_header) {
    columns = split_line(lines[0]);
    first_data_line = 1;
  } else {
    // Headerless files: last column is the response, the rest are features.
    const std::size_t m = split_line(lines[0]).size();
    for (std::size_t j = 0; j + 1 < m; ++j) columns.push_back("x" + std::to_string(j));
    columns.push_back(options.response_column);
  }

  auto find_col = [&](const std::string& name) -> std::optional<std::size_t> {
    auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) return std::nullopt;
    return static_cast<std::size_t>(it - columns.begin());
  };

  const auto response_idx = find_col(options.response_column);
  if (!response_idx)
    throw DataError("response column '" + options.response_column +
                    "' not found in " + path.string());
  const auto inlier_idx = find_col(options.inlier_column);

  std::vector<std::size_t> feature_idx;
  if (options.feature_columns.empty()) {
    for (std::size_t j = 0; j < columns.size(); ++j)
      if (j != *response_idx && (!inlier_idx || j != *inlier_idx))
        feature_idx.push_back(j);
  } else {
    for (const auto& name : options.feature_columns) {
      auto idx = find_col(name);
      if (!idx)
        throw DataError("feature column '" + name + "' not found in " +
                        path.string());
      feature_idx.push_back(*idx);
    }
  }
  if (feature_idx.empty())
    throw DataError("no feature columns in " + path.string());

  const std::size_t n = lines.size() - first_data_line;
  if (n == 0) throw DataError("no data rows in " + path.string());

  Dataset data;
  data.features = Matrix::zeros(n, feature_idx.size());
  data.responses.resize(n);
  if (inlier_idx) data.inlier_mask.emplace(n, 1);

  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t data_row = i + 1;  // 1-based, header excluded
    const auto cells = split_line(lines[first_data_line + i]);
    if (cells.size() != columns.size())
      throw DataError("ragged row " + std::to_string(data_row) + " in " +
                      path.string() + ": expected " +
                      std::to_string(columns.size()) + " cells, got " +
                      std::to_string(cells.size()));
    auto row = data.features.row(i);
    for (std::size_t j = 0; j < feature_idx.size(); ++j)
      row[j] = parse_cell(cells[feature_idx[j]], data_row, columns[feature_idx[j]]);
    data.responses[i] =
        parse_cell(cells[*response_idx], data_row, columns[*response_idx]);
    if (inlier_idx) {
      const double flag =
          parse_cell(cells[*inlier_idx], data_row, columns[*inlier_idx]);
      if (flag != 0.0 && flag != 1.0)
        throw DataError("inlier flag must be 0 or 1 at row " +
                        std::to_string(data_row));
      (*data.inlier_mask)[i] = flag != 0.0 ? 1 : 0;
    }
  }
  data.name = path.stem().string();
  data.provenance = "loaded from " + path.string();
  data.validate();
  return data;
}

void write_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path.string());
  const std::size_t d = data.dim();
  if (d == 1) {
    out << "x";
  } else {
    for (std::size_t j = 0; j < d; ++j) out << (j ? ",x" : "x") << j;
  }
  out << ",y";
  if (data.inlier_mask) out << ",inlier";
  out << "\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto row = data.features.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      if (j) out << ",";
      out << format_double(row[j]);
    }
    out << "," << format_double(data.responses[i]);
    if (data.inlier_mask) out << "," << int((*data.inlier_mask)[i]);
    out << "\n";
  }
  if (!out) throw DataError("write failed: " + path.string());
}

Dataset star_cluster_dataset(
    const std::optional<std::filesystem::path>& path_override) {
  std::filesystem::path path;
  if (path_override) {
    path = *path_override;
  } else {
    path = std::filesystem::path(RQR_DATA_DIR) / kStarClusterFile;
  }
  const std::string text = read_file_stripped(path);
  if (fnv1a(text) != kStarClusterChecksum)
    throw DataError("star cluster bundle checksum mismatch: " + path.string());
  Dataset data = load_csv(path);
  data.name = "CYG OB1";
  data.provenance =
      "Classical 47-star cluster CYG OB1 data (log effective surface "
      "temperature vs log light intensity); the 4 giant stars at low "
      "temperature are marked as leverage outliers. Some sources refer to "
      "this cluster as CYB OB1.";
  return data;
}

void SyntheticSpec::validate() const {
  if (n < 1) throw std::invalid_argument("synthetic spec: n must be >= 1");
  if (!(x_low < x_high))
    throw std::invalid_argument("synthetic spec: x_low must be < x_high");
  if (!(noise_scale > 0.0))
    throw std::invalid_argument("synthetic spec: noise_scale must be positive");
  if (!(outlier_fraction >= 0.0 && outlier_fraction < 1.0))
    throw std::invalid_argument("synthetic spec: outlier_fraction in [0,1)");
  if (!(outlier_magnitude > 0.0))
    throw std::invalid_argument("synthetic spec: outlier_magnitude must be positive");
  if (heteroscedastic && !(x_high > 0.0))
    throw std::invalid_argument("synthetic spec: heteroscedastic needs x_high > 0");
}

namespace {

double noise_sd(const SyntheticSpec& spec, double x) {
  return spec.heteroscedastic
             ? spec.noise_scale * (1.0 + std::abs(x) / spec.x_high)
             : spec.noise_scale;
}

}  // namespace

Dataset gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Dataset data;
  data.features = Matrix::zeros(spec.n, 1);
  data.responses.resize(spec.n);
  data.inlier_mask.emplace(spec.n, 1);

  auto rng_x = make_stream(spec.seed, "synthetic-x");
  auto rng_noise = make_stream(spec.seed, "synthetic-noise");
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const double x = uniform_in(rng_x, spec.x_low, spec.x_high);
    data.features.row(i)[0] = x;
    data.responses[i] = x * std::sin(x) + noise_sd(spec, x) * gauss(rng_noise);
  }

  // ceil with a small slack so fraction*n that is an exact integer in real
  // arithmetic is not bumped up by binary rounding.
  const auto k = static_cast<std::size_t>(std::ceil(
      std::max(0.0, spec.outlier_fraction * static_cast<double>(spec.n) - 1e-9)));
  if (k > 0) {
    auto rng_out = make_stream(spec.seed, "synthetic-outliers");
    std::vector<std::size_t> idx(spec.n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + rng_out() % (spec.n - i);
      std::swap(idx[i], idx[j]);
    }
    for (std::size_t i = 0; i < k; ++i) {
      const double sign = (rng_out() & 1) ? 1.0 : -1.0;
      data.responses[idx[i]] += sign * spec.outlier_magnitude;
      (*data.inlier_mask)[idx[i]] = 0;
    }
  }

  data.name = "synthetic";
  data.provenance = "x*sin(x) generator, n=" + std::to_string(spec.n) +
                    ", outlier_fraction=" + format_double(spec.outlier_fraction) +
                    ", seed=" + std::to_string(spec.seed);
  return data;
}

double conditional_quantile_oracle(const SyntheticSpec& spec, double x,
                                   QuantileLevel alpha) {
  static const boost::math::normal_distribution<double> unit_normal(0.0, 1.0);
  const double z = boost::math::quantile(unit_normal, alpha.alpha);
  return x * std::sin(x) + noise_sd(spec, x) * z;
}

std::pair<Dataset, Dataset> split(const Dataset& data, double val_fraction,
                                  std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw std::invalid_argument("val_fraction must lie in (0,1)");
  const std::size_t n = data.size();
  const auto n_val = static_cast<std::size_t>(
      std::llround(val_fraction * static_cast<double>(n)));
  if (n_val == 0 || n_val == n)
    throw std::invalid_argument("split produces an empty partition");

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto rng = make_stream(seed, "split");
  for (std::size_t i = n; i-- > 1;) {
    const std::size_t j = rng() % (i + 1);
    std::swap(idx[i], idx[j]);
  }
  std::vector<std::size_t> val_idx(idx.begin(), idx.begin() + n_val);
  std::vector<std::size_t> train_idx(idx.begin() + n_val, idx.end());
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  return {data.subset(train_idx), data.subset(val_idx)};
}

Standardizer Standardizer::fit(const Dataset& data) {
  Standardizer s;
  s.active = true;
  const std::size_t d = data.dim();
  const auto n = static_cast<double>(data.size());
  s.x_mean.assign(d, 0.0);
  s.x_std.assign(d, 0.0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto row = data.features.row(i);
    for (std::size_t j = 0; j < d; ++j) s.x_mean[j] += row[j];
  }
  for (std::size_t j = 0; j < d; ++j) s.x_mean[j] /= n;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto row = data.features.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      const double c = row[j] - s.x_mean[j];
      s.x_std[j] += c * c;
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    s.x_std[j] = std::sqrt(s.x_std[j] / n);
    if (s.x_std[j] < 1e-12) s.x_std[j] = 1.0;
  }
  double mean = 0.0;
  for (double y : data.responses) mean += y;
  s.y_mean = mean / n;
  double var = 0.0;
  for (double y : data.responses) var += (y - s.y_mean) * (y - s.y_mean);
  s.y_std = std::sqrt(var / n);
  if (s.y_std < 1e-12) s.y_std = 1.0;
  return s;
}

Standardizer Standardizer::identity(std::size_t dim) {
  Standardizer s;
  s.active = false;
  s.x_mean.assign(dim, 0.0);
  s.x_std.assign(dim, 1.0);
  return s;
}

void Standardizer::transform_features(std::span<const double> x,
                                      std::span<double> out) const {
  if (!active) {
    std::copy(x.begin(), x.end(), out.begin());
    return;
  }
  for (std::size_t j = 0; j < x.size(); ++j)
    out[j] = (x[j] - x_mean[j]) / x_std[j];
}

}  // namespace rqr
