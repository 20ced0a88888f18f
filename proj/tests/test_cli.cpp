#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "rqr/cli.hpp"
#include "rqr/data.hpp"

#include "oracles.hpp"

using namespace rqr;
using nlohmann::json;
using rqr::testing::files_equal;
using rqr::testing::fresh_dir;
using rqr::testing::read_text;
using rqr::testing::run_process;

namespace {

const std::string kBin = RQR_CLI_BIN;

std::size_t count_lines(const std::string& text) {
  std::size_t n = 0;
  for (char c : text) n += (c == '\n');
  return n;
}

json parse_file(const std::filesystem::path& p) {
  return json::parse(read_text(p));
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("--help exits cleanly and lists the subcommands") {
    const auto dir = fresh_dir("cli_help");
    const auto r = run_process(kBin + " --help", dir);
    CHECK(r.exit_code == 0);
    for (const char* name :
         {"star-cluster", "toy", "fit", "grid", "gen-data"})
      CHECK(r.out.find(name) != std::string::npos);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("--print-config layers preset, config file, then flags") {
    const auto dir = fresh_dir("cli_print");
    std::ofstream(dir / "cfg.json") << R"({"beta": 2.0, "seed": 3})";
    const auto r = run_process(
        kBin + " toy --config cfg.json --beta 4.0 --print-config", dir);
    REQUIRE(r.exit_code == 0);
    const json j = json::parse(r.out);
    CHECK(j["command"] == "toy");
    CHECK(j["beta"] == 4.0);     // flag beats config file
    CHECK(j["seed"] == 3);       // config file beats preset
    CHECK(j["epochs"] == 500);   // preset survives untouched
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("fit refuses a method whose key hyperparameter was left default") {
    const auto dir = fresh_dir("cli_hyper");
    const auto rcp = run_process(
        kBin + " fit --synthetic --n 40 --method rcp --epochs 5 --out-dir o1",
        dir);
    CHECK(rcp.exit_code == exit_code::config_error);
    CHECK(rcp.err.find("--lambda") != std::string::npos);

    const auto tqr = run_process(
        kBin + " fit --synthetic --n 40 --method tqr --epochs 5 --out-dir o2",
        dir);
    CHECK(tqr.exit_code == exit_code::config_error);
    CHECK(tqr.err.find("--trim-fraction") != std::string::npos);

    const auto ok = run_process(kBin + " fit --synthetic --n 40 --method rcp "
                                       "--lambda 0.5 --epochs 5 --outer-iters "
                                       "3 --inner-steps 4 --out-dir o3",
                                dir);
    CHECK(ok.exit_code == 0);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("config files with unknown or ill-typed keys are rejected") {
    const auto dir = fresh_dir("cli_badcfg");
    std::ofstream(dir / "unknown.json") << R"({"frobnicate": 1})";
    const auto unknown = run_process(
        kBin + " fit --config unknown.json --synthetic --out-dir o1", dir);
    CHECK(unknown.exit_code == exit_code::config_error);
    CHECK(unknown.err.find("frobnicate") != std::string::npos);

    std::ofstream(dir / "typed.json") << R"({"epochs": "many"})";
    const auto typed = run_process(
        kBin + " fit --config typed.json --synthetic --out-dir o2", dir);
    CHECK(typed.exit_code == exit_code::config_error);

    const auto missing = run_process(
        kBin + " fit --config absent.json --synthetic --out-dir o3", dir);
    CHECK(missing.exit_code == exit_code::config_error);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("a missing data file maps to the data exit code") {
    const auto dir = fresh_dir("cli_nodata");
    const auto r = run_process(
        kBin + " fit --data nope.csv --method qr --epochs 5 --out-dir o", dir);
    CHECK(r.exit_code == exit_code::data_error);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("invalid numeric flags map to the config exit code") {
    const auto dir = fresh_dir("cli_badflag");
    const auto alpha = run_process(
        kBin + " toy --alphas 0.5,1.5 --epochs 5 --out-dir o1", dir);
    CHECK(alpha.exit_code == exit_code::config_error);

    const auto decay = run_process(
        kBin + " toy --lr-decay 1.5 --epochs 5 --out-dir o2", dir);
    CHECK(decay.exit_code == exit_code::config_error);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("gen-data writes the dataset and oracle curves deterministically") {
    const auto dir = fresh_dir("cli_gen");
    const std::string cmd = kBin + " gen-data --n 150 --data-seed 12";
    CHECK(run_process(cmd + " --out-dir a", dir).exit_code == 0);
    CHECK(run_process(cmd + " --out-dir b", dir).exit_code == 0);

    CHECK(files_equal(dir / "a/dataset.csv", dir / "b/dataset.csv"));
    CHECK(files_equal(dir / "a/oracle_quantiles.csv",
                      dir / "b/oracle_quantiles.csv"));

    const std::string data = read_text(dir / "a/dataset.csv");
    CHECK(count_lines(data) == 151);  // header + 150 rows
    CHECK(data.rfind("x,y,inlier\n", 0) == 0);

    const std::string oracle = read_text(dir / "a/oracle_quantiles.csv");
    CHECK(oracle.rfind("x,q_0.25,q_0.5,q_0.75\n", 0) == 0);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("a toy run emits the full artifact set") {
    const auto dir = fresh_dir("cli_toy");
    const auto r = run_process(kBin + " toy --n 120 --epochs 30 --hidden 8 "
                                      "--curve-points 24 --seed 5 --out-dir t",
                               dir);
    REQUIRE(r.exit_code == 0);

    const auto t = dir / "t";
    for (const char* name :
         {"resolved_config.json", "provenance.json", "report.json",
          "timings.json", "dataset.csv", "oracle_quantiles.csv",
          "predictions_qr.csv", "predictions_tqr.csv", "predictions_rcp.csv",
          "predictions_beta_qr.csv", "predictions_reference.csv",
          "trajectory_qr_0.5.csv", "trajectory_beta_qr_0.75.csv"})
      CHECK_MESSAGE(std::filesystem::exists(t / name), name);

    const json report = parse_file(t / "report.json");
    CHECK(report["records"].size() == 12);  // 4 methods x 3 alphas
    CHECK(report["seed"] == 5);

    const json prov = parse_file(t / "provenance.json");
    CHECK(prov["epochs"] == "flag");
    CHECK(prov["seed"] == "flag");
    CHECK(prov["lambda"] == "default");

    const std::string preds = read_text(t / "predictions_qr.csv");
    CHECK(preds.rfind("x,q_0.25,q_0.5,q_0.75\n", 0) == 0);
    CHECK(count_lines(preds) == 25);  // header + one row per curve point

    const std::string traj = read_text(t / "trajectory_qr_0.5.csv");
    CHECK(traj.rfind("epoch,loss\n", 0) == 0);

    SUBCASE("rerunning from the emitted config reproduces artifacts byte for byte") {
      const auto rerun = run_process(
          kBin + " toy --config t/resolved_config.json --out-dir r", dir);
      REQUIRE(rerun.exit_code == 0);

      std::set<std::string> names;
      for (const auto& entry : std::filesystem::directory_iterator(t))
        names.insert(entry.path().filename().string());
      std::set<std::string> rerun_names;
      for (const auto& entry : std::filesystem::directory_iterator(dir / "r"))
        rerun_names.insert(entry.path().filename().string());
      CHECK(names == rerun_names);

      for (const auto& name : names) {
        if (name == "timings.json" || name == "provenance.json") continue;
        CHECK_MESSAGE(files_equal(t / name, dir / "r" / name), name);
      }
    }
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("fit persists one model per alpha and plots with matching headers") {
    const auto dir = fresh_dir("cli_fit");
    REQUIRE(run_process(kBin + " gen-data --n 100 --data-seed 4 --out-dir g",
                        dir)
                .exit_code == 0);

    const auto r = run_process(
        kBin + " fit --data g/dataset.csv --method beta_qr --beta 0.5 "
               "--alphas 0.1,0.5,0.9 --epochs 40 --hidden 0 --out-dir f",
        dir);
    REQUIRE(r.exit_code == 0);

    const auto f = dir / "f";
    const json model = parse_file(f / "model_beta_qr.json");
    CHECK(model["method"] == "beta_qr");
    REQUIRE(model["fits"].size() == 3);
    CHECK(model["fits"][0]["alpha"] == 0.1);
    CHECK(model["fits"][1]["alpha"] == 0.5);
    CHECK(model["fits"][2]["alpha"] == 0.9);
    CHECK(model["config_echo"]["command"] == "fit");

    const std::string preds = read_text(f / "predictions_beta_qr.csv");
    CHECK(preds.rfind("x,q_0.1,q_0.5,q_0.9\n", 0) == 0);

    // the generated csv carries an inlier column, so the report exists
    CHECK(std::filesystem::exists(f / "report.json"));
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("grid scores every cell, ranks deterministically, and its best "
            "config reruns through fit") {
    const auto dir = fresh_dir("cli_grid");
    const std::string cmd =
        kBin + " grid --synthetic --n 80 --method beta_qr --epochs 25 "
               "--hidden 0 --seed 2 --jobs 1";
    REQUIRE(run_process(cmd + " --out-dir g1", dir).exit_code == 0);
    REQUIRE(run_process(cmd + " --out-dir g2", dir).exit_code == 0);

    const std::string results = read_text(dir / "g1/grid_results.csv");
    CHECK(results.rfind("method,param,value,alpha,val_pinball,mean_val_pinball\n",
                        0) == 0);
    CHECK(count_lines(results) == 16);  // header + 5 beta values x 3 alphas
    CHECK(files_equal(dir / "g1/grid_results.csv", dir / "g2/grid_results.csv"));

    const json best = parse_file(dir / "g1/best_config_beta_qr.json");
    CHECK(best["command"] == "fit");
    CHECK(best["methods"] == json::array({"beta_qr"}));

    const auto refit = run_process(
        kBin + " fit --config g1/best_config_beta_qr.json --out-dir bf", dir);
    CHECK(refit.exit_code == 0);
    CHECK(std::filesystem::exists(dir / "bf/model_beta_qr.json"));
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("star-cluster trains all methods and rejects a tampered bundle") {
    const auto dir = fresh_dir("cli_star");
    const auto r = run_process(
        kBin + " star-cluster --epochs 40 --outer-iters 4 --inner-steps 10 "
               "--out-dir s",
        dir);
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.find("frobenius") != std::string::npos);
    const json report = parse_file(dir / "s/report.json");
    CHECK(report["records"].size() == 12);
    CHECK(report["dataset"] == "CYG OB1");

    Dataset tampered = star_cluster_dataset();
    tampered.responses[0] += 0.01;
    write_csv(tampered, dir / "tampered.csv");
    const auto bad = run_process(
        kBin + " star-cluster --data tampered.csv --out-dir s2", dir);
    CHECK(bad.exit_code == exit_code::data_error);
    CHECK(bad.err.find("checksum") != std::string::npos);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("make_train_config maps fractions, forces rcp full batch, and "
            "carries the decay") {
    RunConfig rc = default_star_cluster_config();
    rc.lr_decay = 0.5;
    rc.batch_size = 16;

    const TrainConfig tqr = make_train_config(rc, Method::tqr, 47);
    CHECK(tqr.trim_count == 40);
    CHECK(tqr.lr_decay == 0.5);
    CHECK(tqr.batch_size == 16);

    const TrainConfig rcp = make_train_config(rc, Method::rcp, 47);
    CHECK(rcp.batch_size == 0);

    const TrainConfig beta = make_train_config(rc, Method::beta_qr, 47);
    CHECK(beta.beta_cfg.beta == rc.beta);
    CHECK(beta.beta_cfg.sigma == rc.sigma);

    const std::vector<LayerSpec> linear = model_specs(1, 0);
    REQUIRE(linear.size() == 1);
    CHECK(linear[0].activation == Activation::identity);
    const std::vector<LayerSpec> mlp = model_specs(1, 32);
    REQUIRE(mlp.size() == 3);
    CHECK(mlp[0].output_dim == 32);
    CHECK(mlp[1].activation == Activation::relu);
    CHECK(mlp[2].output_dim == 1);
  }
}
