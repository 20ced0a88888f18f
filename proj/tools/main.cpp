#include <cstdio>
#include <fstream>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rqr/cli.hpp"

namespace {

using nlohmann::json;
using rqr::RunConfig;

bool config_has(const json& j, const std::string& key) {
  const auto dot = key.find('.');
  if (dot == std::string::npos) return j.is_object() && j.contains(key);
  const std::string head = key.substr(0, dot);
  const std::string tail = key.substr(dot + 1);
  return j.is_object() && j.contains(head) && j[head].is_object() &&
         j[head].contains(tail);
}

// One subcommand's option set. Flags write into `edit` (a scratch copy of the
// preset, so --help shows the real defaults); build() then layers config file
// values and explicitly-passed flags over the preset, recording where every
// field came from.
struct CommandWiring {
  RunConfig preset;
  RunConfig edit;
  CLI::App* cmd = nullptr;
  std::string config_path;
  std::string data_path;
  bool use_synthetic = false;
  bool print_config = false;
  std::vector<std::pair<CLI::Option*, std::string>> tracked;
  std::vector<std::function<void(RunConfig&)>> applies;

  explicit CommandWiring(RunConfig p) : preset(std::move(p)), edit(preset) {}

  void track(CLI::Option* opt, std::string key, std::function<void(RunConfig&)> apply) {
    tracked.emplace_back(opt, std::move(key));
    applies.push_back(std::move(apply));
  }

  RunConfig build() const {
    RunConfig cfg = preset;
    json file_json;
    if (!config_path.empty()) {
      std::ifstream in(config_path, std::ios::binary);
      if (!in)
        throw std::invalid_argument("cannot open config file: " + config_path);
      try {
        file_json = json::parse(in);
      } catch (const json::exception& e) {
        throw std::invalid_argument("config parse error in " + config_path +
                                    ": " + e.what());
      }
      cfg = rqr::run_config_from_json(file_json, cfg);
    }
    cfg.command = preset.command;  // the subcommand always wins
    json prov = json::object();
    for (std::size_t i = 0; i < tracked.size(); ++i) {
      const auto& [opt, key] = tracked[i];
      if (opt->count() > 0) {
        applies[i](cfg);
        prov[key] = "flag";
      } else if (config_has(file_json, key)) {
        prov[key] = "config";
      } else {
        prov[key] = "default";
      }
    }
    cfg.provenance = std::move(prov);
    return cfg;
  }
};

void add_shared_options(CommandWiring& w) {
  auto& e = w.edit;
  auto* cmd = w.cmd;
  w.track(cmd->add_option("--seed", e.seed, "run seed")->capture_default_str(),
          "seed", [&e](RunConfig& c) { c.seed = e.seed; });
  w.track(cmd->add_option("--alphas", e.alphas, "quantile levels in (0,1)")
              ->delimiter(',')
              ->capture_default_str(),
          "alphas", [&e](RunConfig& c) { c.alphas = e.alphas; });
  w.track(cmd->add_option("--method", e.methods,
                          "methods to run: qr, tqr, rcp, beta_qr")
              ->delimiter(',')
              ->capture_default_str(),
          "methods", [&e](RunConfig& c) { c.methods = e.methods; });
  w.track(cmd->add_option("--beta", e.beta, "saturation degree of beta_qr")
              ->capture_default_str(),
          "beta", [&e](RunConfig& c) { c.beta = e.beta; });
  w.track(cmd->add_option("--sigma", e.sigma, "residual scale of beta_qr")
              ->capture_default_str(),
          "sigma", [&e](RunConfig& c) { c.sigma = e.sigma; });
  w.track(cmd->add_option("--lambda", e.lambda, "rcp shift penalty weight")
              ->capture_default_str(),
          "lambda", [&e](RunConfig& c) { c.lambda = e.lambda; });
  w.track(cmd->add_option("--gamma-lr", e.gamma_lr, "rcp shift step size")
              ->capture_default_str(),
          "gamma_lr", [&e](RunConfig& c) { c.gamma_lr = e.gamma_lr; });
  w.track(cmd->add_option("--outer-iters", e.outer_iters, "rcp outer rounds")
              ->capture_default_str(),
          "outer_iters", [&e](RunConfig& c) { c.outer_iters = e.outer_iters; });
  w.track(cmd->add_option("--inner-steps", e.inner_steps,
                          "rcp model steps per outer round")
              ->capture_default_str(),
          "inner_steps", [&e](RunConfig& c) { c.inner_steps = e.inner_steps; });
  w.track(cmd->add_option("--trim-fraction", e.trim_fraction,
                          "tqr kept fraction C/N in (0,1]")
              ->capture_default_str(),
          "trim_fraction",
          [&e](RunConfig& c) { c.trim_fraction = e.trim_fraction; });
  w.track(cmd->add_option("--epochs", e.epochs, "training epochs")
              ->capture_default_str(),
          "epochs", [&e](RunConfig& c) { c.epochs = e.epochs; });
  w.track(cmd->add_option("--batch-size", e.batch_size,
                          "minibatch size; 0 = full batch")
              ->capture_default_str(),
          "batch_size", [&e](RunConfig& c) { c.batch_size = e.batch_size; });
  w.track(cmd->add_option("--lr", e.learning_rate, "ADAM learning rate")
              ->capture_default_str(),
          "learning_rate",
          [&e](RunConfig& c) { c.learning_rate = e.learning_rate; });
  w.track(cmd->add_option("--lr-decay", e.lr_decay,
                          "cosine-annealing fraction in [0,1]; 0 keeps the "
                          "rate constant")
              ->capture_default_str(),
          "lr_decay", [&e](RunConfig& c) { c.lr_decay = e.lr_decay; });
  w.track(cmd->add_option("--tol", e.convergence_tol,
                          "stop when the loss change drops below this")
              ->capture_default_str(),
          "convergence_tol",
          [&e](RunConfig& c) { c.convergence_tol = e.convergence_tol; });
  w.track(cmd->add_flag("--standardize,!--no-standardize", e.standardize,
                        "z-score features and responses before training"),
          "standardize", [&e](RunConfig& c) { c.standardize = e.standardize; });
  w.track(cmd->add_flag("--emit-plot-data,!--no-plot-data", e.emit_plot_data,
                        "write prediction and trajectory CSV files"),
          "emit_plot_data",
          [&e](RunConfig& c) { c.emit_plot_data = e.emit_plot_data; });
  w.track(cmd->add_option("--hidden", e.hidden_width,
                          "hidden layer width; 0 = single linear layer")
              ->capture_default_str(),
          "hidden_width", [&e](RunConfig& c) { c.hidden_width = e.hidden_width; });
  w.track(cmd->add_option("--out-dir", e.out_dir, "artifact directory")
              ->capture_default_str(),
          "out_dir", [&e](RunConfig& c) { c.out_dir = e.out_dir; });
  cmd->add_option("--config", w.config_path,
                  "JSON config file; explicit flags override its values");
  cmd->add_flag("--print-config", w.print_config,
                "print the resolved config as JSON and exit");
}

void add_synthetic_options(CommandWiring& w) {
  auto& e = w.edit;
  auto* cmd = w.cmd;
  w.track(cmd->add_option("--n", e.synthetic.n, "synthetic sample count")
              ->capture_default_str(),
          "synthetic.n", [&e](RunConfig& c) { c.synthetic.n = e.synthetic.n; });
  w.track(cmd->add_option("--x-low", e.synthetic.x_low, "domain lower bound")
              ->capture_default_str(),
          "synthetic.x_low",
          [&e](RunConfig& c) { c.synthetic.x_low = e.synthetic.x_low; });
  w.track(cmd->add_option("--x-high", e.synthetic.x_high, "domain upper bound")
              ->capture_default_str(),
          "synthetic.x_high",
          [&e](RunConfig& c) { c.synthetic.x_high = e.synthetic.x_high; });
  w.track(cmd->add_option("--noise-scale", e.synthetic.noise_scale,
                          "noise standard deviation scale")
              ->capture_default_str(),
          "synthetic.noise_scale",
          [&e](RunConfig& c) { c.synthetic.noise_scale = e.synthetic.noise_scale; });
  w.track(cmd->add_flag("--heteroscedastic,!--homoscedastic",
                        e.synthetic.heteroscedastic,
                        "noise scale grows with |x|"),
          "synthetic.heteroscedastic",
          [&e](RunConfig& c) {
            c.synthetic.heteroscedastic = e.synthetic.heteroscedastic;
          });
  w.track(cmd->add_option("--outlier-fraction", e.synthetic.outlier_fraction,
                          "fraction of responses to corrupt, in [0,1)")
              ->capture_default_str(),
          "synthetic.outlier_fraction",
          [&e](RunConfig& c) {
            c.synthetic.outlier_fraction = e.synthetic.outlier_fraction;
          });
  w.track(cmd->add_option("--outlier-magnitude", e.synthetic.outlier_magnitude,
                          "size of the injected response shift")
              ->capture_default_str(),
          "synthetic.outlier_magnitude",
          [&e](RunConfig& c) {
            c.synthetic.outlier_magnitude = e.synthetic.outlier_magnitude;
          });
  w.track(cmd->add_option("--data-seed", e.synthetic.seed,
                          "synthetic generator seed; 0 derives it from --seed")
              ->capture_default_str(),
          "synthetic.seed",
          [&e](RunConfig& c) { c.synthetic.seed = e.synthetic.seed; });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "rqr: quantile regression with outlier-robust training methods"};
  app.require_subcommand(1);

  std::vector<std::unique_ptr<CommandWiring>> wirings;
  auto make = [&](RunConfig preset, const char* name, const char* desc) {
    auto w = std::make_unique<CommandWiring>(std::move(preset));
    w->cmd = app.add_subcommand(name, desc);
    add_shared_options(*w);
    wirings.push_back(std::move(w));
    return wirings.back().get();
  };

  auto* star = make(rqr::default_star_cluster_config(), "star-cluster",
                    "benchmark the four methods on the bundled 47-star dataset");
  {
    auto* opt = star->cmd->add_option(
        "--data", star->data_path, "override the bundled dataset file path");
    star->track(opt, "bundled_path_override", [star](RunConfig& c) {
      c.bundled_path_override = star->data_path;
    });
  }

  auto* toy = make(rqr::default_toy_config(), "toy",
                   "benchmark on synthetic heteroscedastic data with outliers");
  add_synthetic_options(*toy);
  {
    auto* opt = toy->cmd->add_option("--curve-points", toy->edit.curve_points,
                                     "grid size of the emitted prediction curves")
                    ->capture_default_str();
    toy->track(opt, "curve_points", [toy](RunConfig& c) {
      c.curve_points = toy->edit.curve_points;
    });
  }

  auto* fit = make(rqr::default_fit_config(), "fit",
                   "fit the selected methods on a CSV or synthetic dataset");
  add_synthetic_options(*fit);
  {
    auto* data_opt =
        fit->cmd->add_option("--data", fit->data_path, "CSV dataset to fit");
    fit->track(data_opt, "csv_path", [fit](RunConfig& c) {
      c.csv_path = fit->data_path;
      c.dataset_source = "csv";
    });
    auto* synth_opt = fit->cmd->add_flag(
        "--synthetic", fit->use_synthetic, "fit the synthetic generator's data");
    synth_opt->excludes(data_opt);
    data_opt->excludes(synth_opt);
    fit->track(synth_opt, "dataset_source",
               [](RunConfig& c) { c.dataset_source = "synthetic"; });
  }

  auto* grid = make(rqr::default_grid_config(), "grid",
                    "hyperparameter grid search scored on a validation split");
  add_synthetic_options(*grid);
  {
    auto* data_opt =
        grid->cmd->add_option("--data", grid->data_path, "CSV dataset to search on");
    grid->track(data_opt, "csv_path", [grid](RunConfig& c) {
      c.csv_path = grid->data_path;
      c.dataset_source = "csv";
    });
    auto* synth_opt = grid->cmd->add_flag("--synthetic", grid->use_synthetic,
                                          "search on the synthetic generator's data");
    synth_opt->excludes(data_opt);
    data_opt->excludes(synth_opt);
    grid->track(synth_opt, "dataset_source",
                [](RunConfig& c) { c.dataset_source = "synthetic"; });
    auto* val_opt = grid->cmd
                        ->add_option("--val-fraction", grid->edit.val_fraction,
                                     "held-out fraction used for scoring")
                        ->capture_default_str();
    grid->track(val_opt, "val_fraction", [grid](RunConfig& c) {
      c.val_fraction = grid->edit.val_fraction;
    });
    auto* jobs_opt = grid->cmd
                         ->add_option("--jobs", grid->edit.jobs,
                                      "parallel workers; 0 = hardware threads")
                         ->capture_default_str();
    grid->track(jobs_opt, "jobs",
                [grid](RunConfig& c) { c.jobs = grid->edit.jobs; });
  }

  auto* gen = make(rqr::default_gen_data_config(), "gen-data",
                   "generate and write a synthetic dataset");
  add_synthetic_options(*gen);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return rqr::exit_code::config_error;
  }

  for (const auto& w : wirings) {
    if (!w->cmd->parsed()) continue;
    RunConfig cfg;
    try {
      cfg = w->build();
    } catch (const std::invalid_argument& e) {
      std::fprintf(stderr, "config error: %s\n", e.what());
      return rqr::exit_code::config_error;
    }
    if (w->print_config) {
      std::printf("%s\n", rqr::run_config_to_json(cfg).dump(2).c_str());
      return rqr::exit_code::ok;
    }
    return rqr::run_command(cfg);
  }
  return rqr::exit_code::config_error;
}
