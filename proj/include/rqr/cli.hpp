#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rqr/data.hpp"
#include "rqr/eval.hpp"
#include "rqr/trainers.hpp"

namespace rqr {

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int config_error = 2;
inline constexpr int data_error = 3;
inline constexpr int numeric_error = 4;
}  // namespace exit_code

/// Fully resolved inputs of one command invocation. Everything that shapes
/// results is stored here; out_dir is deliberately not serialized, so a run
/// re-launched from its emitted config reproduces artifacts bit-identically
/// in a fresh directory.
struct RunConfig {
  std::string command = "fit";  // star-cluster | toy | fit | grid | gen-data

  std::string dataset_source = "bundled";  // bundled | csv | synthetic
  std::string csv_path;
  SyntheticSpec synthetic{};  // synthetic.seed == 0 derives from `seed`
  std::optional<std::string> bundled_path_override;

  std::vector<double> alphas{0.25, 0.5, 0.75};
  std::vector<std::string> methods{"qr", "tqr", "rcp", "beta_qr"};

  std::size_t epochs = 5000;
  std::size_t batch_size = 0;  // 0 = full batch
  double learning_rate = 5e-3;
  double lr_decay = 0.0;
  std::uint64_t seed = 1;
  double convergence_tol = 1e-10;
  bool standardize = true;

  double beta = 0.5;
  double sigma = 1.0;
  double trim_fraction = 43.0 / 47.0;
  double lambda = 1.0;
  double gamma_lr = 0.05;
  std::size_t outer_iters = 100;
  std::size_t inner_steps = 50;

  std::size_t hidden_width = 64;  // 0 = single linear layer
  std::size_t curve_points = 401;
  double val_fraction = 0.2;  // grid scoring split
  bool emit_plot_data = true;
  std::size_t jobs = 0;  // parallel workers; 0 = hardware concurrency

  std::string out_dir = "out";
  nlohmann::json provenance;  // field -> flag | config | default (diagnostic)
};

/// Per-command presets; the CLI starts from these and layers config file
/// values, then flags, on top.
RunConfig default_star_cluster_config();
RunConfig default_toy_config();
RunConfig default_fit_config();
RunConfig default_grid_config();
RunConfig default_gen_data_config();

/// The model architecture a command builds: hidden == 0 is a single linear
/// layer, otherwise a three-layer ReLU net of the given width.
std::vector<LayerSpec> model_specs(std::size_t dim, std::size_t hidden);
/// The exact TrainConfig a command derives from a RunConfig for one method;
/// n is the dataset size (trim fraction resolves to a kept-sample count).
TrainConfig make_train_config(const RunConfig& rc, Method m, std::size_t n);

nlohmann::json run_config_to_json(const RunConfig& cfg);
/// Applies the keys present in j over base; unknown keys and ill-typed
/// values raise std::invalid_argument naming the key.
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = RunConfig{});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = RunConfig{});

/// Dispatches cfg.command, mapping exceptions to the exit_code constants.
int run_command(const RunConfig& cfg);

// Individual commands; they throw instead of returning codes.
void cmd_star_cluster(const RunConfig& cfg);
void cmd_toy(const RunConfig& cfg);
void cmd_fit(const RunConfig& cfg);
void cmd_grid(const RunConfig& cfg);
void cmd_gen_data(const RunConfig& cfg);

}  // namespace rqr
