#include <doctest.h>

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "rqr/data.hpp"
#include "rqr/errors.hpp"
#include "rqr/rng.hpp"

#include "oracles.hpp"

using namespace rqr;
using rqr::testing::fresh_dir;
using rqr::testing::read_text;

namespace {

Dataset tiny_dataset() {
  Dataset d;
  d.features = Matrix::zeros(4, 2);
  for (std::size_t i = 0; i < 4; ++i) {
    d.features.row(i)[0] = 0.25 * static_cast<double>(i);
    d.features.row(i)[1] = -1.5 + static_cast<double>(i);
  }
  d.responses = {1.0, 0.1, -3.25, 7.5};
  d.inlier_mask = std::vector<std::uint8_t>{1, 0, 1, 1};
  d.name = "tiny";
  return d;
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("matrix zeros and row views share storage") {
    Matrix m = Matrix::zeros(2, 3);
    CHECK(m.values.size() == 6);
    for (double v : m.values) CHECK(v == 0.0);
    m.row(1)[2] = 4.5;
    CHECK(m.values[5] == 4.5);
    const Matrix& cm = m;
    CHECK(cm.row(1)[2] == 4.5);
  }

  TEST_CASE("dataset validation catches shape and finiteness violations") {
    Dataset d = tiny_dataset();
    CHECK_NOTHROW(d.validate());

    Dataset short_y = tiny_dataset();
    short_y.responses.pop_back();
    CHECK_THROWS_AS(short_y.validate(), DataError);

    Dataset bad_mask = tiny_dataset();
    bad_mask.inlier_mask->pop_back();
    CHECK_THROWS_AS(bad_mask.validate(), DataError);

    Dataset nan_feature = tiny_dataset();
    nan_feature.features.row(2)[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(nan_feature.validate(), DataError);

    Dataset inf_response = tiny_dataset();
    inf_response.responses[0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(inf_response.validate(), DataError);
  }

  TEST_CASE("inlier_subset drops masked rows and keeps order") {
    const Dataset d = tiny_dataset();
    const Dataset inliers = d.inlier_subset();
    CHECK(inliers.size() == 3);
    CHECK(inliers.responses == std::vector<double>{1.0, -3.25, 7.5});
    CHECK(inliers.features.row(1)[1] == doctest::Approx(0.5));

    Dataset unmasked = tiny_dataset();
    unmasked.inlier_mask.reset();
    CHECK(unmasked.inlier_subset().size() == 4);
  }

  TEST_CASE("subset picks the requested rows with their mask bits") {
    const Dataset d = tiny_dataset();
    const std::vector<std::size_t> idx{3, 1};
    const Dataset s = d.subset(idx);
    CHECK(s.size() == 2);
    CHECK(s.responses == std::vector<double>{7.5, 0.1});
    REQUIRE(s.inlier_mask.has_value());
    CHECK((*s.inlier_mask) == std::vector<std::uint8_t>{1, 0});
  }

  TEST_CASE("format_double round-trips through parsing") {
    for (double v : {0.1, 1.0 / 3.0, -2.5e300, 6.02214076e23, 0.0, -17.125,
                     3.141592653589793}) {
      CHECK(std::stod(format_double(v)) == v);
    }
  }

  TEST_CASE("csv write then load reproduces the dataset exactly") {
    const auto dir = fresh_dir("csv_roundtrip");
    const auto path = dir / "tiny.csv";
    const Dataset d = tiny_dataset();
    write_csv(d, path);
    const std::string text = read_text(path);
    CHECK(text.rfind("x0,x1,y,inlier\n", 0) == 0);

    const Dataset back = load_csv(path);
    CHECK(back.size() == d.size());
    CHECK(back.dim() == d.dim());
    CHECK(back.features.values == d.features.values);
    CHECK(back.responses == d.responses);
    REQUIRE(back.inlier_mask.has_value());
    CHECK(*back.inlier_mask == *d.inlier_mask);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("csv parse failures name the data row and column") {
    const auto dir = fresh_dir("csv_bad");
    const auto path = dir / "bad.csv";
    std::ofstream(path) << "x,y\n1.0,2.0\n3.0,oops\n";
    try {
      load_csv(path);
      FAIL("expected a parse error");
    } catch (const DataError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("row 2") != std::string::npos);
      CHECK(msg.find("'y'") != std::string::npos);
      CHECK(msg.find("oops") != std::string::npos);
    }
    CHECK_THROWS_AS(load_csv(dir / "absent.csv"), DataError);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("star cluster bundle has 47 stars with 4 flagged giants") {
    const Dataset d = star_cluster_dataset();
    CHECK(d.size() == 47);
    CHECK(d.dim() == 1);
    REQUIRE(d.inlier_mask.has_value());
    std::size_t giants = 0;
    for (auto flag : *d.inlier_mask) giants += (flag == 0);
    CHECK(giants == 4);
    CHECK(d.name == "CYG OB1");
    CHECK_NOTHROW(d.validate());
  }

  TEST_CASE("star cluster loader rejects a tampered bundle") {
    const Dataset d = star_cluster_dataset();
    const auto dir = fresh_dir("star_tamper");
    const auto path = dir / "tampered.csv";
    Dataset copy = d;
    copy.responses[0] += 0.01;
    write_csv(copy, path);
    CHECK_THROWS_AS(star_cluster_dataset(path), DataError);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("synthetic spec validation rejects bad parameters") {
    SyntheticSpec s;
    s.n = 0;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s = SyntheticSpec{};
    s.x_low = 2.0;
    s.x_high = 1.0;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s = SyntheticSpec{};
    s.outlier_fraction = 1.0;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s = SyntheticSpec{};
    s.noise_scale = 0.0;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    CHECK_NOTHROW(SyntheticSpec{}.validate());
  }

  TEST_CASE("synthetic generator is deterministic and marks its outliers") {
    SyntheticSpec spec;
    spec.n = 500;
    spec.outlier_fraction = 0.05;
    spec.outlier_magnitude = 40.0;
    spec.seed = 9;

    const Dataset a = gen_synthetic(spec);
    const Dataset b = gen_synthetic(spec);
    CHECK(a.features.values == b.features.values);
    CHECK(a.responses == b.responses);
    CHECK(*a.inlier_mask == *b.inlier_mask);

    SyntheticSpec clean = spec;
    clean.outlier_fraction = 0.0;
    const Dataset base = gen_synthetic(clean);

    std::size_t outliers = 0;
    for (std::size_t i = 0; i < spec.n; ++i) {
      const double shift = a.responses[i] - base.responses[i];
      if ((*a.inlier_mask)[i] == 0) {
        ++outliers;
        CHECK(std::abs(shift) == doctest::Approx(spec.outlier_magnitude));
      } else {
        CHECK(shift == 0.0);
      }
      CHECK(a.features.values[i] == base.features.values[i]);
      CHECK(a.features.values[i] >= spec.x_low);
      CHECK(a.features.values[i] <= spec.x_high);
    }
    CHECK(outliers == 25);
  }

  TEST_CASE("homoscedastic noise differs from the heteroscedastic default") {
    SyntheticSpec spec;
    spec.n = 50;
    spec.outlier_fraction = 0.0;
    SyntheticSpec homo = spec;
    homo.heteroscedastic = false;
    const Dataset a = gen_synthetic(spec);
    const Dataset b = gen_synthetic(homo);
    CHECK(a.features.values == b.features.values);
    CHECK(a.responses != b.responses);
  }

  TEST_CASE("quantile oracle matches the generator law") {
    SyntheticSpec spec;
    spec.outlier_fraction = 0.0;
    const QuantileLevel median{0.5};
    for (double x : {0.5, 2.0, 7.25, 9.9}) {
      CHECK(conditional_quantile_oracle(spec, x, median) ==
            doctest::Approx(x * std::sin(x)).epsilon(1e-12));
      for (double alpha : {0.1, 0.25, 0.4}) {
        const double lo = conditional_quantile_oracle(spec, x, QuantileLevel{alpha});
        const double hi =
            conditional_quantile_oracle(spec, x, QuantileLevel{1.0 - alpha});
        CHECK(lo + hi == doctest::Approx(2.0 * x * std::sin(x)).epsilon(1e-9));
        CHECK(lo < hi);
      }
    }
  }

  TEST_CASE("empirical exceedance of the oracle curve approaches alpha") {
    SyntheticSpec spec;
    spec.n = 40000;
    spec.outlier_fraction = 0.0;
    spec.seed = 5;
    const Dataset d = gen_synthetic(spec);
    for (double alpha : {0.25, 0.5, 0.9}) {
      const QuantileLevel q{alpha};
      std::size_t below = 0;
      for (std::size_t i = 0; i < d.size(); ++i)
        below += d.responses[i] <= conditional_quantile_oracle(
                                       spec, d.features.row(i)[0], q);
      const double frac = static_cast<double>(below) / static_cast<double>(d.size());
      CHECK(std::abs(frac - alpha) < 0.02);
    }
  }

  TEST_CASE("split is seeded, disjoint, and carries the mask") {
    SyntheticSpec spec;
    spec.n = 100;
    spec.outlier_fraction = 0.1;
    const Dataset d = gen_synthetic(spec);

    const auto [train_a, val_a] = split(d, 0.2, 3);
    const auto [train_b, val_b] = split(d, 0.2, 3);
    CHECK(train_a.responses == train_b.responses);
    CHECK(val_a.responses == val_b.responses);
    CHECK(train_a.size() == 80);
    CHECK(val_a.size() == 20);
    REQUIRE(train_a.inlier_mask.has_value());
    REQUIRE(val_a.inlier_mask.has_value());

    std::size_t masked = 0;
    for (auto flag : *train_a.inlier_mask) masked += (flag == 0);
    for (auto flag : *val_a.inlier_mask) masked += (flag == 0);
    CHECK(masked == 10);

    const auto [train_c, val_c] = split(d, 0.2, 4);
    CHECK(train_c.responses != train_a.responses);

    CHECK_THROWS_AS(split(d, 0.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(split(d, 1.0, 1), std::invalid_argument);
  }

  TEST_CASE("standardizer round-trips and guards degenerate columns") {
    Dataset d;
    d.features = Matrix::zeros(4, 2);
    for (std::size_t i = 0; i < 4; ++i) {
      d.features.row(i)[0] = static_cast<double>(i);
      d.features.row(i)[1] = 7.0;  // constant column
    }
    d.responses = {10.0, 20.0, 30.0, 40.0};

    const Standardizer s = Standardizer::fit(d);
    CHECK(s.active);
    CHECK(s.x_mean[0] == doctest::Approx(1.5));
    CHECK(s.x_std[1] == 1.0);
    CHECK(s.y_mean == doctest::Approx(25.0));

    std::vector<double> out(2);
    s.transform_features(d.features.row(3), out);
    CHECK(out[1] == 0.0);

    for (double y : d.responses)
      CHECK(s.inverse_response(s.transform_response(y)) ==
            doctest::Approx(y).epsilon(1e-12));

    const Standardizer id = Standardizer::identity(2);
    CHECK_FALSE(id.active);
    CHECK(id.transform_response(3.25) == 3.25);
    id.transform_features(d.features.row(0), out);
    CHECK(out[0] == d.features.row(0)[0]);
  }
}
