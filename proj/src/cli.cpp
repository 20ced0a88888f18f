#include "rqr/cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <thread>

#include "rqr/errors.hpp"
#include "rqr/rng.hpp"

namespace rqr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void atomic_write_text(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << content;
    out.flush();
    if (!out) throw DataError("cannot write file: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec)
    throw DataError("cannot move " + tmp.string() + " into place: " + ec.message());
}

void write_json_file(const fs::path& path, const json& j) {
  atomic_write_text(path, j.dump(2) + "\n");
}

fs::path ensure_out_dir(const RunConfig& cfg) {
  if (cfg.out_dir.empty()) throw std::invalid_argument("--out-dir must not be empty");
  fs::path dir(cfg.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw DataError("cannot create output directory " + dir.string() + ": " +
                    ec.message());
  return dir;
}

SyntheticSpec resolved_synthetic(const RunConfig& cfg) {
  SyntheticSpec spec = cfg.synthetic;
  if (spec.seed == 0) spec.seed = mix_seed(cfg.seed, tag_hash("synthetic-data"));
  return spec;
}

/// Config snapshot written to disk: derived values (synthetic seed) pinned
/// down so a re-run from the file reproduces this run exactly.
RunConfig resolved_for_echo(const RunConfig& cfg) {
  RunConfig echo = cfg;
  echo.synthetic.seed = resolved_synthetic(cfg).seed;
  return echo;
}

Dataset resolve_dataset(const RunConfig& cfg) {
  if (cfg.dataset_source == "bundled") {
    std::optional<fs::path> override_path;
    if (cfg.bundled_path_override) override_path = fs::path(*cfg.bundled_path_override);
    return star_cluster_dataset(override_path);
  }
  if (cfg.dataset_source == "csv") {
    if (cfg.csv_path.empty())
      throw std::invalid_argument("--data is required when fitting a CSV file");
    return load_csv(cfg.csv_path);
  }
  if (cfg.dataset_source == "synthetic") return gen_synthetic(resolved_synthetic(cfg));
  throw std::invalid_argument("unknown dataset_source '" + cfg.dataset_source + "'");
}

std::vector<Method> parse_methods(const std::vector<std::string>& names) {
  if (names.empty()) throw std::invalid_argument("at least one method is required");
  std::vector<Method> methods;
  methods.reserve(names.size());
  for (const auto& name : names) {
    Method m = method_from_name(name);
    if (std::find(methods.begin(), methods.end(), m) != methods.end())
      throw std::invalid_argument("method '" + name + "' listed twice");
    methods.push_back(m);
  }
  return methods;
}

std::size_t trim_count_from_fraction(double fraction, std::size_t n) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw std::invalid_argument("--trim-fraction must lie in (0, 1]");
  auto count = static_cast<std::size_t>(
      std::llround(fraction * static_cast<double>(n)));
  if (count == 0)
    throw std::invalid_argument("--trim-fraction " + format_double(fraction) +
                                " keeps zero of " + std::to_string(n) + " samples");
  return std::min(count, n);
}

}  // namespace

std::vector<LayerSpec> model_specs(std::size_t dim, std::size_t hidden) {
  if (hidden == 0) return {{dim, 1, Activation::identity}};
  return {{dim, hidden, Activation::relu},
          {hidden, hidden, Activation::relu},
          {hidden, 1, Activation::identity}};
}

TrainConfig make_train_config(const RunConfig& rc, Method m, std::size_t n) {
  TrainConfig tc;
  tc.alphas.reserve(rc.alphas.size());
  for (double a : rc.alphas) tc.alphas.emplace_back(a);
  tc.method = m;
  tc.epochs = rc.epochs;
  tc.batch_size = rc.batch_size;
  tc.learning_rate = rc.learning_rate;
  tc.lr_decay = rc.lr_decay;
  tc.seed = rc.seed;
  tc.convergence_tol = rc.convergence_tol;
  tc.standardize = rc.standardize;
  switch (m) {
    case Method::beta_qr:
      tc.beta_cfg = BetaConfig{rc.beta, rc.sigma};
      break;
    case Method::tqr:
      tc.trim_count = trim_count_from_fraction(rc.trim_fraction, n);
      break;
    case Method::rcp:
      tc.lambda = rc.lambda;
      tc.gamma_lr = rc.gamma_lr;
      tc.outer_iters = rc.outer_iters;
      tc.inner_steps = rc.inner_steps;
      tc.batch_size = 0;  // per-observation shifts need the full batch
      break;
    case Method::qr:
      break;
  }
  return tc;
}

namespace {

Matrix sorted_features(const Matrix& xs) {
  std::vector<std::size_t> order(xs.rows);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    auto ra = xs.row(a), rb = xs.row(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  });
  Matrix out = Matrix::zeros(xs.rows, xs.cols);
  for (std::size_t i = 0; i < xs.rows; ++i) {
    auto src = xs.row(order[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Matrix curve_grid(double lo, double hi, std::size_t count) {
  if (count < 2) throw std::invalid_argument("curve_points must be >= 2");
  Matrix m = Matrix::zeros(count, 1);
  for (std::size_t i = 0; i < count; ++i)
    m.values[i] = lo + (hi - lo) * static_cast<double>(i) /
                           static_cast<double>(count - 1);
  return m;
}

std::string feature_header(std::size_t cols) {
  if (cols == 1) return "x";
  std::string h;
  for (std::size_t j = 0; j < cols; ++j) {
    if (j) h += ",";
    h += "x" + std::to_string(j + 1);
  }
  return h;
}

void write_predictions_csv(const fs::path& path, const Matrix& xs,
                           const FitResult& fit) {
  std::ostringstream out;
  out << feature_header(xs.cols);
  for (const auto& fq : fit.fits) out << ",q_" << format_double(fq.alpha);
  out << "\n";
  for (std::size_t i = 0; i < xs.rows; ++i) {
    auto row = xs.row(i);
    for (std::size_t j = 0; j < xs.cols; ++j) {
      if (j) out << ",";
      out << format_double(row[j]);
    }
    for (const auto& fq : fit.fits) out << "," << format_double(fq.predict(row));
    out << "\n";
  }
  atomic_write_text(path, out.str());
}

void write_trajectory_csv(const fs::path& path, const FittedQuantile& fq) {
  std::ostringstream out;
  out << "epoch,loss\n";
  for (std::size_t e = 0; e < fq.trajectory.size(); ++e)
    out << (e + 1) << "," << format_double(fq.trajectory[e]) << "\n";
  atomic_write_text(path, out.str());
}

void write_oracle_csv(const fs::path& path, const SyntheticSpec& spec,
                      const Matrix& xs, const std::vector<double>& alphas) {
  std::ostringstream out;
  out << "x";
  for (double a : alphas) out << ",q_" << format_double(a);
  out << "\n";
  for (std::size_t i = 0; i < xs.rows; ++i) {
    out << format_double(xs.row(i)[0]);
    for (double a : alphas)
      out << ","
          << format_double(conditional_quantile_oracle(spec, xs.row(i)[0],
                                                       QuantileLevel(a)));
    out << "\n";
  }
  atomic_write_text(path, out.str());
}

json fitted_to_json(const FittedQuantile& fq) {
  json layers = json::array();
  for (const auto& l : fq.net.layers)
    layers.push_back({{"input_dim", l.input_dim},
                      {"output_dim", l.output_dim},
                      {"activation",
                       l.activation == Activation::relu ? "relu" : "identity"}});
  json j{{"alpha", fq.alpha},
         {"layers", layers},
         {"weights", fq.net.weights},
         {"biases", fq.net.biases},
         {"scaler",
          {{"active", fq.scaler.active},
           {"x_mean", fq.scaler.x_mean},
           {"x_std", fq.scaler.x_std},
           {"y_mean", fq.scaler.y_mean},
           {"y_std", fq.scaler.y_std}}},
         {"final_loss", fq.final_loss},
         {"stop_reason", fq.stop_reason},
         {"trajectory", fq.trajectory}};
  if (!fq.kept_indices.empty()) j["kept_indices"] = fq.kept_indices;
  if (!fq.gammas.empty()) {
    j["gammas"] = fq.gammas;
    j["descent_violations"] = fq.descent_violations;
  }
  return j;
}

json fit_result_to_json(const FitResult& result, const json& config_echo) {
  json fits = json::array();
  for (const auto& fq : result.fits) fits.push_back(fitted_to_json(fq));
  return json{{"method", std::string(method_name(result.method))},
              {"label", result.label},
              {"seed", result.seed},
              {"config_echo", config_echo},
              {"fits", std::move(fits)}};
}

const EvalRecord* find_record(const EvalReport& report, const std::string& method,
                              double alpha) {
  for (const auto& rec : report.records)
    if (rec.method == method && std::abs(rec.alpha - alpha) < 1e-12) return &rec;
  return nullptr;
}

void print_metric_matrix(const char* title, const EvalReport& report,
                         const std::vector<std::string>& methods,
                         const std::vector<double>& alphas,
                         double (*get)(const EvalRecord&)) {
  std::printf("%s\n", title);
  std::printf("  %-10s", "method");
  for (double a : alphas)
    std::printf(" %10s", ("q_" + format_double(a)).c_str());
  std::printf("\n");
  for (const auto& m : methods) {
    std::printf("  %-10s", m.c_str());
    for (double a : alphas) {
      const EvalRecord* rec = find_record(report, m, a);
      if (rec)
        std::printf(" %10.4f", get(*rec));
      else
        std::printf(" %10s", "-");
    }
    std::printf("\n");
  }
}

void write_common_artifacts(const fs::path& dir, const RunConfig& cfg) {
  write_json_file(dir / "resolved_config.json",
                  run_config_to_json(resolved_for_echo(cfg)));
  if (cfg.provenance.is_object() && !cfg.provenance.empty())
    write_json_file(dir / "provenance.json", cfg.provenance);
}

void write_timings(const fs::path& dir, const RunConfig& cfg,
                   std::chrono::steady_clock::time_point start) {
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  write_json_file(dir / "timings.json",
                  json{{"command", cfg.command}, {"wall_time_sec", secs}});
}

void write_report_artifacts(const fs::path& dir, const EvalReport& report) {
  write_json_file(dir / "report.json", report_to_json(report));
}

void write_fit_plot_data(const fs::path& dir, const RunConfig& cfg,
                         const Matrix& eval_points,
                         const std::vector<FitResult>& fits) {
  if (!cfg.emit_plot_data) return;
  for (const auto& fit : fits) {
    write_predictions_csv(dir / ("predictions_" + fit.label + ".csv"),
                          eval_points, fit);
    for (const auto& fq : fit.fits)
      write_trajectory_csv(dir / ("trajectory_" + fit.label + "_" +
                                  format_double(fq.alpha) + ".csv"),
                           fq);
  }
}

/// Runs body(0..count-1) on up to `jobs` threads; each index owns its state,
/// so results do not depend on scheduling. Exceptions are rethrown for the
/// lowest failing index.
void parallel_for(std::size_t count, std::size_t jobs,
                  const std::function<void(std::size_t)>& body) {
  if (count == 0) return;
  std::size_t workers = jobs ? jobs : std::thread::hardware_concurrency();
  if (workers == 0) workers = 1;
  workers = std::min(workers, count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        try {
          body(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

double mean_pinball(const FittedQuantile& fq, const Dataset& data,
                    QuantileLevel alpha) {
  double acc = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i)
    acc += pinball(data.responses[i] - fq.predict(data.features.row(i)), alpha);
  return acc / static_cast<double>(data.size());
}

/// cmd_fit rejects method selections whose defining hyperparameter was left
/// at its default; a deliberate value must come from a flag or config file.
void require_method_hyperparams(const RunConfig& cfg,
                                const std::vector<Method>& methods) {
  if (!cfg.provenance.is_object() || cfg.provenance.empty()) return;
  auto source = [&](const char* key) {
    auto it = cfg.provenance.find(key);
    return it == cfg.provenance.end() ? std::string("default")
                                      : it->get<std::string>();
  };
  for (Method m : methods) {
    if (m == Method::beta_qr && source("beta") == "default")
      throw std::invalid_argument("--beta is required with --method beta_qr");
    if (m == Method::rcp && source("lambda") == "default")
      throw std::invalid_argument("--lambda is required with --method rcp");
    if (m == Method::tqr && source("trim_fraction") == "default")
      throw std::invalid_argument(
          "--trim-fraction is required with --method tqr");
  }
}

}  // namespace

RunConfig default_star_cluster_config() {
  RunConfig cfg;
  cfg.command = "star-cluster";
  cfg.out_dir = "out/star-cluster";
  cfg.dataset_source = "bundled";
  cfg.synthetic.seed = 0;
  cfg.epochs = 5000;
  cfg.batch_size = 0;
  cfg.learning_rate = 0.0725;
  cfg.convergence_tol = 1e-14;
  cfg.standardize = false;
  cfg.hidden_width = 0;
  cfg.beta = 3.3;
  cfg.sigma = 1.0;
  cfg.trim_fraction = 40.0 / 47.0;
  cfg.lambda = 0.25;
  cfg.gamma_lr = 0.05;
  cfg.outer_iters = 100;
  cfg.inner_steps = 50;
  return cfg;
}

RunConfig default_toy_config() {
  RunConfig cfg;
  cfg.command = "toy";
  cfg.out_dir = "out/toy";
  cfg.dataset_source = "synthetic";
  cfg.synthetic = SyntheticSpec{};
  cfg.synthetic.seed = 0;
  cfg.epochs = 500;
  cfg.batch_size = 128;
  cfg.learning_rate = 5e-3;
  cfg.lr_decay = 1.0;
  cfg.convergence_tol = 1e-12;
  cfg.hidden_width = 64;
  cfg.beta = 0.5;
  cfg.sigma = 1.0;
  cfg.trim_fraction = 0.99;
  cfg.lambda = 0.5;
  cfg.gamma_lr = 0.1;
  cfg.outer_iters = 10;
  cfg.inner_steps = 50;
  return cfg;
}

RunConfig default_fit_config() {
  RunConfig cfg;
  cfg.command = "fit";
  cfg.out_dir = "out/fit";
  cfg.dataset_source = "csv";
  cfg.synthetic.seed = 0;
  cfg.epochs = 1000;
  cfg.batch_size = 0;
  cfg.learning_rate = 5e-3;
  cfg.convergence_tol = 1e-12;
  cfg.hidden_width = 64;
  return cfg;
}

RunConfig default_grid_config() {
  RunConfig cfg = default_star_cluster_config();
  cfg.command = "grid";
  cfg.out_dir = "out/grid";
  cfg.epochs = 2000;
  cfg.val_fraction = 0.2;
  return cfg;
}

RunConfig default_gen_data_config() {
  RunConfig cfg;
  cfg.command = "gen-data";
  cfg.out_dir = "out/gen-data";
  cfg.dataset_source = "synthetic";
  cfg.synthetic.seed = 0;
  return cfg;
}

json run_config_to_json(const RunConfig& cfg) {
  json j{{"command", cfg.command},
         {"dataset_source", cfg.dataset_source},
         {"csv_path", cfg.csv_path},
         {"synthetic",
          {{"n", cfg.synthetic.n},
           {"x_low", cfg.synthetic.x_low},
           {"x_high", cfg.synthetic.x_high},
           {"noise_scale", cfg.synthetic.noise_scale},
           {"heteroscedastic", cfg.synthetic.heteroscedastic},
           {"outlier_fraction", cfg.synthetic.outlier_fraction},
           {"outlier_magnitude", cfg.synthetic.outlier_magnitude},
           {"seed", cfg.synthetic.seed}}},
         {"alphas", cfg.alphas},
         {"methods", cfg.methods},
         {"epochs", cfg.epochs},
         {"batch_size", cfg.batch_size},
         {"learning_rate", cfg.learning_rate},
         {"lr_decay", cfg.lr_decay},
         {"seed", cfg.seed},
         {"convergence_tol", cfg.convergence_tol},
         {"standardize", cfg.standardize},
         {"beta", cfg.beta},
         {"sigma", cfg.sigma},
         {"trim_fraction", cfg.trim_fraction},
         {"lambda", cfg.lambda},
         {"gamma_lr", cfg.gamma_lr},
         {"outer_iters", cfg.outer_iters},
         {"inner_steps", cfg.inner_steps},
         {"hidden_width", cfg.hidden_width},
         {"curve_points", cfg.curve_points},
         {"val_fraction", cfg.val_fraction},
         {"emit_plot_data", cfg.emit_plot_data},
         {"jobs", cfg.jobs}};
  if (cfg.bundled_path_override) j["bundled_path_override"] = *cfg.bundled_path_override;
  return j;
}

namespace {

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument(std::string("config: bad value for key '") +
                                key + "'");
  }
}

constexpr const char* kConfigKeys[] = {
    "command",       "dataset_source", "csv_path",      "bundled_path_override",
    "synthetic",     "alphas",         "methods",       "epochs",
    "batch_size",    "learning_rate",  "lr_decay",      "seed",
    "convergence_tol",
    "standardize",   "beta",           "sigma",         "trim_fraction",
    "lambda",        "gamma_lr",       "outer_iters",   "inner_steps",
    "hidden_width",  "curve_points",   "val_fraction",  "emit_plot_data",
    "jobs"};

constexpr const char* kSyntheticKeys[] = {
    "n",       "x_low",            "x_high",            "noise_scale",
    "heteroscedastic", "outlier_fraction", "outlier_magnitude", "seed"};

bool contains_key(const char* const* keys, std::size_t count,
                  const std::string& key) {
  for (std::size_t i = 0; i < count; ++i)
    if (key == keys[i]) return true;
  return false;
}

}  // namespace

RunConfig run_config_from_json(const json& j, RunConfig base) {
  if (!j.is_object())
    throw std::invalid_argument("config: top level must be a JSON object");
  for (const auto& item : j.items()) {
    if (item.key() == "out_dir")
      throw std::invalid_argument(
          "config: 'out_dir' is not configurable from a file (use --out-dir)");
    if (!contains_key(kConfigKeys, std::size(kConfigKeys), item.key()))
      throw std::invalid_argument("config: unknown key '" + item.key() + "'");
  }
  read_field(j, "command", base.command);
  read_field(j, "dataset_source", base.dataset_source);
  read_field(j, "csv_path", base.csv_path);
  if (auto it = j.find("bundled_path_override"); it != j.end()) {
    if (it->is_null())
      base.bundled_path_override.reset();
    else if (it->is_string())
      base.bundled_path_override = it->get<std::string>();
    else
      throw std::invalid_argument(
          "config: bad value for key 'bundled_path_override'");
  }
  if (auto it = j.find("synthetic"); it != j.end()) {
    if (!it->is_object())
      throw std::invalid_argument("config: 'synthetic' must be an object");
    for (const auto& item : it->items())
      if (!contains_key(kSyntheticKeys, std::size(kSyntheticKeys), item.key()))
        throw std::invalid_argument("config: unknown key 'synthetic." +
                                    item.key() + "'");
    read_field(*it, "n", base.synthetic.n);
    read_field(*it, "x_low", base.synthetic.x_low);
    read_field(*it, "x_high", base.synthetic.x_high);
    read_field(*it, "noise_scale", base.synthetic.noise_scale);
    read_field(*it, "heteroscedastic", base.synthetic.heteroscedastic);
    read_field(*it, "outlier_fraction", base.synthetic.outlier_fraction);
    read_field(*it, "outlier_magnitude", base.synthetic.outlier_magnitude);
    read_field(*it, "seed", base.synthetic.seed);
  }
  read_field(j, "alphas", base.alphas);
  read_field(j, "methods", base.methods);
  read_field(j, "epochs", base.epochs);
  read_field(j, "batch_size", base.batch_size);
  read_field(j, "learning_rate", base.learning_rate);
  read_field(j, "lr_decay", base.lr_decay);
  read_field(j, "seed", base.seed);
  read_field(j, "convergence_tol", base.convergence_tol);
  read_field(j, "standardize", base.standardize);
  read_field(j, "beta", base.beta);
  read_field(j, "sigma", base.sigma);
  read_field(j, "trim_fraction", base.trim_fraction);
  read_field(j, "lambda", base.lambda);
  read_field(j, "gamma_lr", base.gamma_lr);
  read_field(j, "outer_iters", base.outer_iters);
  read_field(j, "inner_steps", base.inner_steps);
  read_field(j, "hidden_width", base.hidden_width);
  read_field(j, "curve_points", base.curve_points);
  read_field(j, "val_fraction", base.val_fraction);
  read_field(j, "emit_plot_data", base.emit_plot_data);
  read_field(j, "jobs", base.jobs);
  return base;
}

RunConfig load_run_config(const fs::path& path, RunConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::invalid_argument("cannot open config file: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config parse error in " + path.string() +
                                ": " + e.what());
  }
  return run_config_from_json(j, std::move(base));
}

void cmd_star_cluster(const RunConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  const fs::path dir = ensure_out_dir(cfg);
  write_common_artifacts(dir, cfg);

  std::optional<fs::path> override_path;
  if (cfg.bundled_path_override) override_path = fs::path(*cfg.bundled_path_override);
  const Dataset data = star_cluster_dataset(override_path);
  const auto methods = parse_methods(cfg.methods);
  const auto specs = model_specs(data.dim(), cfg.hidden_width);

  const FitResult reference =
      fit_reference(data, specs, make_train_config(cfg, Method::qr, data.size()));
  std::vector<FitResult> fits;
  fits.reserve(methods.size());
  for (Method m : methods)
    fits.push_back(train(data, specs, make_train_config(cfg, m, data.size())));

  EvalReport report = build_report(fits, reference, data);
  report.seed = cfg.seed;
  report.config_echo = run_config_to_json(resolved_for_echo(cfg));
  write_report_artifacts(dir, report);

  if (cfg.emit_plot_data) {
    const Matrix xs = sorted_features(data.features);
    write_fit_plot_data(dir, cfg, xs, fits);
    write_fit_plot_data(dir, cfg, xs, {reference});
  }
  write_timings(dir, cfg, start);

  std::size_t flagged = 0;
  if (data.inlier_mask)
    flagged = std::count(data.inlier_mask->begin(), data.inlier_mask->end(), 0);
  std::printf("dataset: %s (n=%zu, %zu flagged outliers), seed %llu\n",
              data.name.c_str(), data.size(), flagged,
              static_cast<unsigned long long>(cfg.seed));
  print_metric_matrix("frobenius distance to inlier-only reference", report,
                      cfg.methods, cfg.alphas,
                      [](const EvalRecord& r) { return r.frobenius; });
  print_metric_matrix("same, in units of the response standard deviation",
                      report, cfg.methods, cfg.alphas,
                      [](const EvalRecord& r) { return r.frobenius_std; });
  std::printf("artifacts: %s\n", dir.string().c_str());
}

void cmd_toy(const RunConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  const fs::path dir = ensure_out_dir(cfg);
  write_common_artifacts(dir, cfg);

  const SyntheticSpec spec = resolved_synthetic(cfg);
  const Dataset train_data = gen_synthetic(spec);
  SyntheticSpec heldout_spec = spec;
  heldout_spec.outlier_fraction = 0.0;
  heldout_spec.seed = mix_seed(spec.seed, tag_hash("heldout"));
  Dataset heldout = gen_synthetic(heldout_spec);
  heldout.name = "synthetic-heldout";

  const auto methods = parse_methods(cfg.methods);
  const auto specs = model_specs(train_data.dim(), cfg.hidden_width);

  const FitResult reference = fit_reference(
      train_data, specs, make_train_config(cfg, Method::qr, train_data.size()));
  std::vector<FitResult> fits;
  fits.reserve(methods.size());
  for (Method m : methods)
    fits.push_back(
        train(train_data, specs, make_train_config(cfg, m, train_data.size())));

  EvalReport report = build_report(fits, reference, train_data, &heldout);
  report.seed = cfg.seed;
  report.config_echo = run_config_to_json(resolved_for_echo(cfg));
  write_report_artifacts(dir, report);

  if (cfg.emit_plot_data) {
    write_csv(train_data, dir / "dataset.csv");
    const Matrix grid = curve_grid(spec.x_low, spec.x_high, cfg.curve_points);
    write_fit_plot_data(dir, cfg, grid, fits);
    write_fit_plot_data(dir, cfg, grid, {reference});
    write_oracle_csv(dir / "oracle_quantiles.csv", spec, grid, cfg.alphas);
  }
  write_timings(dir, cfg, start);

  std::printf("dataset: %s (n=%zu, %zu injected outliers), seed %llu\n",
              train_data.name.c_str(), train_data.size(),
              static_cast<std::size_t>(std::count(
                  train_data.inlier_mask->begin(), train_data.inlier_mask->end(), 0)),
              static_cast<unsigned long long>(cfg.seed));
  print_metric_matrix("frobenius distance to inlier-only reference", report,
                      cfg.methods, cfg.alphas,
                      [](const EvalRecord& r) { return r.frobenius; });
  print_metric_matrix("same, in units of the response standard deviation",
                      report, cfg.methods, cfg.alphas,
                      [](const EvalRecord& r) { return r.frobenius_std; });
  print_metric_matrix("coverage on clean held-out data (target = alpha)",
                      report, cfg.methods, cfg.alphas,
                      [](const EvalRecord& r) { return r.coverage; });
  std::printf("artifacts: %s\n", dir.string().c_str());
}

void cmd_fit(const RunConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  const fs::path dir = ensure_out_dir(cfg);
  write_common_artifacts(dir, cfg);

  const auto methods = parse_methods(cfg.methods);
  require_method_hyperparams(cfg, methods);
  const Dataset data = resolve_dataset(cfg);
  const auto specs = model_specs(data.dim(), cfg.hidden_width);
  const json echo = run_config_to_json(resolved_for_echo(cfg));

  std::vector<FitResult> fits;
  fits.reserve(methods.size());
  for (Method m : methods) {
    fits.push_back(train(data, specs, make_train_config(cfg, m, data.size())));
    write_json_file(dir / ("model_" + fits.back().label + ".json"),
                    fit_result_to_json(fits.back(), echo));
  }
  if (cfg.emit_plot_data)
    write_fit_plot_data(dir, cfg, sorted_features(data.features), fits);

  if (data.inlier_mask) {
    const FitResult reference = fit_reference(
        data, specs, make_train_config(cfg, Method::qr, data.size()));
    EvalReport report = build_report(fits, reference, data);
    report.seed = cfg.seed;
    report.config_echo = echo;
    write_report_artifacts(dir, report);
    print_metric_matrix("frobenius distance to inlier-only reference", report,
                        cfg.methods, cfg.alphas,
                        [](const EvalRecord& r) { return r.frobenius; });
  }
  write_timings(dir, cfg, start);

  std::printf("dataset: %s (n=%zu, d=%zu)\n", data.name.c_str(), data.size(),
              data.dim());
  for (const auto& fit : fits)
    for (const auto& fq : fit.fits)
      std::printf("  %s q_%s: final loss %.6g (%s)\n", fit.label.c_str(),
                  format_double(fq.alpha).c_str(), fq.final_loss,
                  fq.stop_reason.c_str());
  std::printf("artifacts: %s\n", dir.string().c_str());
}

namespace {

struct GridCell {
  Method method;
  std::string param;  // empty for methods without a swept hyperparameter
  double value = 0.0;
  std::uint64_t seed = 0;
};

struct CellScore {
  std::vector<double> per_alpha;
  double mean = 0.0;
};

std::vector<GridCell> make_grid_cells(const std::vector<Method>& methods,
                                      std::uint64_t base_seed) {
  static const double kBetaGrid[] = {0.1, 0.5, 1.0, 2.0, 5.0};
  static const double kLambdaGrid[] = {0.01, 0.1, 1.0, 10.0};
  static const double kTrimGrid[] = {0.70, 0.80, 0.90, 0.95};
  std::vector<GridCell> cells;
  for (Method m : methods) {
    switch (m) {
      case Method::qr:
        cells.push_back({m, "", 0.0, 0});
        break;
      case Method::beta_qr:
        for (double b : kBetaGrid) cells.push_back({m, "beta", b, 0});
        break;
      case Method::rcp:
        for (double l : kLambdaGrid) cells.push_back({m, "lambda", l, 0});
        break;
      case Method::tqr:
        for (double f : kTrimGrid) cells.push_back({m, "trim_fraction", f, 0});
        break;
    }
  }
  for (std::size_t i = 0; i < cells.size(); ++i)
    cells[i].seed = base_seed + i;
  return cells;
}

RunConfig apply_cell(const RunConfig& cfg, const GridCell& cell) {
  RunConfig rc = cfg;
  rc.seed = cell.seed;
  if (cell.param == "beta") rc.beta = cell.value;
  if (cell.param == "lambda") rc.lambda = cell.value;
  if (cell.param == "trim_fraction") rc.trim_fraction = cell.value;
  return rc;
}

}  // namespace

void cmd_grid(const RunConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  const fs::path dir = ensure_out_dir(cfg);
  write_common_artifacts(dir, cfg);

  const Dataset data = resolve_dataset(cfg);
  auto [train_set, val_set] = split(data, cfg.val_fraction, cfg.seed);
  Dataset val_score = val_set.inlier_mask ? val_set.inlier_subset() : val_set;
  if (val_score.size() == 0)
    throw DataError("validation split has no inlier rows to score on");

  const auto methods = parse_methods(cfg.methods);
  const auto cells = make_grid_cells(methods, cfg.seed);
  if (cells.empty()) throw std::invalid_argument("grid is empty");
  const auto specs = model_specs(train_set.dim(), cfg.hidden_width);

  std::vector<CellScore> scores(cells.size());
  parallel_for(cells.size(), cfg.jobs, [&](std::size_t i) {
    const RunConfig cell_cfg = apply_cell(cfg, cells[i]);
    const FitResult fit =
        train(train_set, specs,
              make_train_config(cell_cfg, cells[i].method, train_set.size()));
    CellScore score;
    score.per_alpha.reserve(cfg.alphas.size());
    for (double a : cfg.alphas)
      score.per_alpha.push_back(
          mean_pinball(fit.at(a), val_score, QuantileLevel(a)));
    score.mean =
        std::accumulate(score.per_alpha.begin(), score.per_alpha.end(), 0.0) /
        static_cast<double>(score.per_alpha.size());
    scores[i] = std::move(score);
  });

  // rank within each method by mean validation loss, ties toward smaller value
  std::vector<std::size_t> order(cells.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (cells[a].method != cells[b].method) return a < b;
    if (scores[a].mean != scores[b].mean) return scores[a].mean < scores[b].mean;
    return cells[a].value < cells[b].value;
  });

  std::ostringstream csv;
  csv << "method,param,value,alpha,val_pinball,mean_val_pinball\n";
  for (std::size_t idx : order) {
    const auto& cell = cells[idx];
    const auto& score = scores[idx];
    const std::string method(method_name(cell.method));
    const std::string param = cell.param.empty() ? "none" : cell.param;
    for (std::size_t k = 0; k < cfg.alphas.size(); ++k)
      csv << method << "," << param << "," << format_double(cell.value) << ","
          << format_double(cfg.alphas[k]) << ","
          << format_double(score.per_alpha[k]) << ","
          << format_double(score.mean) << "\n";
  }
  atomic_write_text(dir / "grid_results.csv", csv.str());

  std::printf("grid search on %s: %zu cells, scored on %zu validation rows\n",
              data.name.c_str(), cells.size(), val_score.size());
  std::printf("  %-10s %-14s %10s %14s\n", "method", "param", "value",
              "mean pinball");
  for (std::size_t idx : order) {
    const auto& cell = cells[idx];
    std::printf("  %-10s %-14s %10s %14.6f\n",
                std::string(method_name(cell.method)).c_str(),
                cell.param.empty() ? "none" : cell.param.c_str(),
                format_double(cell.value).c_str(), scores[idx].mean);
  }

  for (Method m : methods) {
    const std::size_t* best = nullptr;
    for (const std::size_t& idx : order)
      if (cells[idx].method == m) {
        best = &idx;
        break;
      }
    if (!best) continue;
    RunConfig best_cfg = apply_cell(cfg, cells[*best]);
    best_cfg.command = "fit";
    best_cfg.methods = {std::string(method_name(m))};
    const std::string name = "best_config_" + std::string(method_name(m)) + ".json";
    write_json_file(dir / name, run_config_to_json(resolved_for_echo(best_cfg)));
    std::printf("best %s written to %s\n", method_name(m).data(),
                (dir / name).string().c_str());
  }
  write_timings(dir, cfg, start);
}

void cmd_gen_data(const RunConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  const fs::path dir = ensure_out_dir(cfg);
  const SyntheticSpec spec = resolved_synthetic(cfg);
  const Dataset data = gen_synthetic(spec);
  write_common_artifacts(dir, cfg);
  write_csv(data, dir / "dataset.csv");
  if (cfg.emit_plot_data)
    write_oracle_csv(dir / "oracle_quantiles.csv", spec,
                     sorted_features(data.features), cfg.alphas);
  write_timings(dir, cfg, start);

  const auto outliers = std::count(data.inlier_mask->begin(),
                                   data.inlier_mask->end(), 0);
  std::printf("wrote %s: n=%zu, %lld outliers, seed %llu\n",
              (dir / "dataset.csv").string().c_str(), data.size(),
              static_cast<long long>(outliers),
              static_cast<unsigned long long>(spec.seed));
}

int run_command(const RunConfig& cfg) {
  try {
    if (cfg.command == "star-cluster")
      cmd_star_cluster(cfg);
    else if (cfg.command == "toy")
      cmd_toy(cfg);
    else if (cfg.command == "fit")
      cmd_fit(cfg);
    else if (cfg.command == "grid")
      cmd_grid(cfg);
    else if (cfg.command == "gen-data")
      cmd_gen_data(cfg);
    else
      throw std::invalid_argument("unknown command '" + cfg.command + "'");
    return exit_code::ok;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return exit_code::config_error;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return exit_code::data_error;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return exit_code::numeric_error;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return exit_code::data_error;
  } catch (const json::exception& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return exit_code::config_error;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace rqr
