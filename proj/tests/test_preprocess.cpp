#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "nodegam/dataset.hpp"
#include "nodegam/errors.hpp"
#include "nodegam/metrics.hpp"
#include "nodegam/preprocess.hpp"
#include "nodegam/rng.hpp"

using namespace nodegam;

namespace {

std::vector<double> uniform_sample(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform();
  return v;
}

RawTable toy_table() {
  return parse_csv(
      "age,city,label\n"
      "30,york,1\n"
      "40,york,1\n"
      "25,kent,0\n"
      "35,kent,0\n"
      "45,york,1\n"
      ",kent,0\n");
}

Schema toy_schema() {
  return Schema::parse(
      "age = numeric\n"
      "city = categorical\n"
      "label = target\n");
}

}  // namespace

TEST_CASE("csv parsing: quotes, escapes, blank lines, ragged rows") {
  const RawTable t = parse_csv(
      "a,b,c\r\n"
      "1,\"hello, world\",3\n"
      "4,\"she said \"\"hi\"\"\",6\n"
      "\n"
      "7,,9\n");
  CHECK(t.header == std::vector<std::string>{"a", "b", "c"});
  REQUIRE(t.num_rows() == 3);
  CHECK(t.rows[0][1] == "hello, world");
  CHECK(t.rows[1][1] == "she said \"hi\"");
  CHECK(t.rows[2][1] == "");
  CHECK(is_missing_cell(t.rows[2][1]));

  CHECK_THROWS_AS(parse_csv("a,b\n1,2,3\n"), schema_error);
  CHECK_THROWS_AS(parse_csv(""), schema_error);
}

TEST_CASE("schema parsing") {
  const Schema s = toy_schema();
  CHECK(s.target_name() == "label");
  CHECK(s.feature_names() == std::vector<std::string>{"age", "city"});
  CHECK(s.find("city")->kind == ColumnKind::categorical);

  CHECK_THROWS_AS(Schema::parse("a = numeric\na = target\n"), schema_error);
  CHECK_THROWS_AS(Schema::parse("a = widget\n"), schema_error);
  CHECK_THROWS_AS(Schema::parse("a = target\nb = target\n"), schema_error);
  CHECK_THROWS_AS(Schema::parse(""), schema_error);
  // Round trip.
  CHECK(Schema::parse(s.to_text()).to_text() == s.to_text());
}

TEST_CASE("quantile transform maps the training median near zero") {
  Rng rng(1);
  std::vector<double> values(5001);
  for (double& v : values) v = 10.0 + 3.0 * rng.normal();
  Rng fit_rng(2);
  const QuantileTransform qt = fit_quantile(values, 2000, 1e-5, fit_rng);
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted[sorted.size() / 2];
  CHECK(std::abs(qt.transform(median)) < 0.05);
}

TEST_CASE("quantile transform of uniform draws looks standard normal") {
  Rng rng(3);
  const auto values = uniform_sample(100000, rng);
  Rng fit_rng(4);
  const QuantileTransform qt = fit_quantile(values, 2000, 1e-5, fit_rng);
  double mean = 0.0, var = 0.0;
  std::vector<double> transformed(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    transformed[i] = qt.transform(values[i]);
    mean += transformed[i];
  }
  mean /= static_cast<double>(values.size());
  for (double v : transformed) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(std::sqrt(var) - 1.0) < 0.05);
  // Kolmogorov-Smirnov distance to the standard normal.
  CHECK(ks_to_standard_normal(transformed) < 0.02);
}

TEST_CASE("quantile transform is monotone and clamps out-of-range values") {
  Rng rng(5);
  std::vector<double> values(2000);
  for (double& v : values) v = rng.normal(0, 5);
  Rng fit_rng(6);
  const QuantileTransform qt = fit_quantile(values, 256, 1e-5, fit_rng);
  Rng probe(7);
  for (int t = 0; t < 2000; ++t) {
    const double a = probe.uniform(-20, 20);
    const double b = probe.uniform(-20, 20);
    const double ta = qt.transform(a), tb = qt.transform(b);
    if (a <= b)
      CHECK(ta <= tb);
    else
      CHECK(tb <= ta);
    CHECK(std::abs(ta) <= 8.0);
  }
  CHECK(qt.transform(-1e9) == qt.transform(qt.quantiles.front()));
  CHECK(qt.transform(1e9) == qt.transform(qt.quantiles.back()));
}

TEST_CASE("fit noise breaks ties; transformation itself is deterministic") {
  std::vector<double> constant(100, 7.0);
  Rng fit_rng(8);
  const QuantileTransform qt = fit_quantile(constant, 50, 1e-5, fit_rng);
  CHECK(std::isfinite(qt.transform(7.0)));
  // Same value in, same value out: no noise at transform time.
  CHECK(qt.transform(7.0) == qt.transform(7.0));

  // Identical rng seeds fit identical transforms.
  Rng a(9), b(9);
  std::vector<double> vals(500);
  Rng gen(10);
  for (double& v : vals) v = gen.normal();
  const QuantileTransform qa = fit_quantile(vals, 100, 1e-5, a);
  const QuantileTransform qb = fit_quantile(vals, 100, 1e-5, b);
  CHECK(qa.quantiles == qb.quantiles);

  CHECK_THROWS_AS(fit_quantile(std::vector<double>{1.0}, 10, 1e-5, a),
                  std::invalid_argument);
}

TEST_CASE("target encoding formula, fallback and errors") {
  // Single category, no smoothing: the global mean.
  {
    std::vector<std::string> cats(6, "a");
    std::vector<double> y = {1, 0, 1, 0, 1, 0};
    const TargetEncoder enc = fit_target_encoding(cats, y, 0.0);
    CHECK(enc.encode("a") == doctest::Approx(0.5).epsilon(1e-12));
  }
  // Two balanced categories with smoothing m=10: (10 + 5)/20 = 0.75.
  {
    std::vector<std::string> cats;
    std::vector<double> y;
    for (int i = 0; i < 10; ++i) {
      cats.push_back("A");
      y.push_back(1.0);
    }
    for (int i = 0; i < 10; ++i) {
      cats.push_back("B");
      y.push_back(0.0);
    }
    const TargetEncoder enc = fit_target_encoding(cats, y, 10.0);
    CHECK(enc.encode("A") == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(enc.encode("B") == doctest::Approx(0.25).epsilon(1e-12));
    // Unseen category falls back to the global mean.
    CHECK(enc.encode("zzz") == doctest::Approx(0.5).epsilon(1e-12));
  }
  std::vector<std::string> none;
  std::vector<double> y;
  CHECK_THROWS_AS(fit_target_encoding(none, y, 10.0), std::invalid_argument);
}

TEST_CASE("pipeline: fit, transform, imputation, schema enforcement") {
  const RawTable table = toy_table();
  const Schema schema = toy_schema();
  Pipeline pipe;
  Rng rng(11);
  pipe.fit(table, schema, extract_targets(table, schema), rng);
  CHECK(pipe.fitted());
  CHECK(pipe.num_features() == 2);

  // Deterministic across calls.
  const Matrix t1 = pipe.transform(table);
  const Matrix t2 = pipe.transform(table);
  CHECK(t1 == t2);
  CHECK(t1.all_finite());

  // The missing age cell imputes to the raw column mean before transforming.
  const Matrix encoded = pipe.encode(table);
  const double mean_age = (30 + 40 + 25 + 35 + 45) / 5.0;
  CHECK(encoded(5, 0) == doctest::Approx(mean_age).epsilon(1e-12));

  // Unknown columns are rejected.
  const RawTable alien = parse_csv("age,city,label,extra\n1,york,0,9\n");
  CHECK_THROWS_AS(pipe.transform(alien), schema_error);

  // Unfitted pipelines refuse to transform.
  Pipeline fresh;
  CHECK_THROWS_AS(fresh.transform(table), invalid_state_error);
}

TEST_CASE("a row of column means transforms to a near-zero vector") {
  Rng rng(12);
  const std::size_t n = 4000;
  std::ostringstream csv;
  csv << "f1,f2,y\n";
  double s1 = 0.0, s2 = 0.0;
  std::vector<std::pair<double, double>> rows;
  for (std::size_t r = 0; r < n; ++r) {
    const double a = rng.normal(3.0, 2.0);
    const double b = rng.uniform(-1.0, 1.0);
    s1 += a;
    s2 += b;
    rows.push_back({a, b});
    csv.precision(17);
    csv << a << "," << b << "," << (a + b) << "\n";
  }
  const RawTable table = parse_csv(csv.str());
  const Schema schema = Schema::parse("f1 = numeric\nf2 = numeric\ny = target\n");
  Pipeline pipe;
  Rng fit_rng(13);
  pipe.fit(table, schema, extract_targets(table, schema), fit_rng);

  Matrix means(1, 2);
  means(0, 0) = s1 / static_cast<double>(n);
  means(0, 1) = s2 / static_cast<double>(n);
  const Matrix z = pipe.transform_encoded(means);
  CHECK(std::abs(z(0, 0)) < 0.1);
  CHECK(std::abs(z(0, 1)) < 0.1);
}

TEST_CASE("pipeline extracts targets and reports their absence") {
  const RawTable table = toy_table();
  const Schema schema = toy_schema();
  Pipeline pipe;
  Rng rng(14);
  std::vector<double> y0(table.num_rows(), 0.0);
  pipe.fit(table, schema, y0, rng);
  const auto y = pipe.extract_targets(table);
  CHECK(y == std::vector<double>{1, 1, 0, 0, 1, 0});

  const RawTable unlabeled = parse_csv("age,city\n30,york\n");
  CHECK(pipe.has_target_column(table));
  CHECK_FALSE(pipe.has_target_column(unlabeled));
  CHECK_THROWS_AS(pipe.extract_targets(unlabeled), schema_error);

  const RawTable bad = parse_csv("age,city,label\n30,york,\n");
  CHECK_THROWS_AS(pipe.extract_targets(bad), schema_error);
}
