// Copyright 2026 The lorashield Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <random>
#include <regex>

#include <gtest/gtest.h>

#include "lorashield/edit.hpp"
#include "lorashield/synthetic.hpp"
#include "lorashield/verify.hpp"
#include "support/oracles.hpp"

namespace ls = lorashield;
using ls::Mat;

namespace {

// Minimum-norm solution of a X = y for a wide, full-row-rank a.
Mat<double> min_norm_solve(const Mat<double>& a, const Mat<double>& y) {
  const Mat<double> gram = oracle::matmul(a, a.transpose());
  return oracle::matmul(a.transpose(), Mat<double>(gram.ldlt().solve(y)));
}

// Projector onto the right null space of a wide, full-row-rank p.
Mat<double> null_projector(const Mat<double>& p) {
  const Eigen::Index n = p.cols();
  return Mat<double>(Mat<double>::Identity(n, n)) - min_norm_solve(p, p);
}

Mat<double> reverse_rows(const Mat<double>& m) { return m.colwise().reverse(); }

struct Setup {
  Mat<double> w, d, e, c_t, c_a, probe;
  double alpha = 0.8;
};

Setup random_setup(std::mt19937_64& rng, Eigen::Index l = 4, Eigen::Index n = 12, Eigen::Index m = 9) {
  Setup s;
  s.w = oracle::random_matrix(rng, n, m);
  s.d = oracle::random_matrix(rng, n, m, 0.3);
  s.e = s.d + oracle::random_matrix(rng, n, m, 0.2);
  s.c_t = oracle::random_matrix(rng, l, n);
  s.c_a = oracle::random_matrix(rng, l, n);
  s.probe = oracle::random_matrix(rng, l, n);
  return s;
}

void visit_numbers(const nlohmann::json& node, const std::function<void(double)>& fn) {
  if (node.is_number_float()) fn(node.get<double>());
  if (node.is_structured()) {
    for (const auto& child : node) visit_numbers(child, fn);
  }
}

ls::EditConfig f64_config() {
  ls::EditConfig config;
  config.compute_dtype = ls::ComputeDtype::kF64;
  config.workers = 1;
  return config;
}

ls::SyntheticFixture small_fixture(int layers = 4) {
  ls::SyntheticOptions opt;
  opt.layers = layers;
  opt.probes = 6;
  return ls::make_synthetic_fixture(opt);
}

}  // namespace

TEST(ProjectionShift, NoEditIsOne) {
  std::mt19937_64 rng(1);
  auto s = random_setup(rng);
  EXPECT_NEAR(ls::projection_shift(s.w, s.d, s.d, s.c_t, s.c_a, s.alpha), 1.0, 1e-15);
}

TEST(ProjectionShift, LeastSquaresConstructionReachesZero) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto s = random_setup(rng);
    const Mat<double> anchor = oracle::matmul(s.c_a, s.w + s.alpha * s.d);
    const Mat<double> edited = min_norm_solve(s.c_t, anchor - oracle::matmul(s.c_t, s.w)) / s.alpha;
    EXPECT_NEAR(ls::projection_shift(s.w, s.d, edited, s.c_t, s.c_a, s.alpha), 0.0, 1e-8);
  }
}

TEST(ProjectionShift, DenominatorGuard) {
  std::mt19937_64 rng(3);
  auto s = random_setup(rng);
  EXPECT_EQ(ls::projection_shift(s.w, s.d, s.d, s.c_t, s.c_t, s.alpha), 1.0);
  EXPECT_EQ(ls::projection_shift(s.w, s.d, s.e, s.c_t, s.c_t, s.alpha), 1.0);
}

TEST(ProjectionShift, MatchesDirectFormula) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    auto s = random_setup(rng);
    const Mat<double> orig = s.w + s.alpha * s.d;
    const double num = oracle::frobenius(oracle::matmul(s.c_t, s.w + s.alpha * s.e) - oracle::matmul(s.c_a, orig));
    const double den = oracle::frobenius(oracle::matmul(s.c_t, orig) - oracle::matmul(s.c_a, orig));
    EXPECT_NEAR(ls::projection_shift(s.w, s.d, s.e, s.c_t, s.c_a, s.alpha), num / den, 1e-12);
  }
}

TEST(BenignDrift, Examples) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto s = random_setup(rng);
    EXPECT_EQ(ls::benign_drift(s.w, s.d, s.d, s.probe, s.alpha), 0.0);
    const Mat<double> e = oracle::matmul(null_projector(s.probe), oracle::random_matrix(rng, s.w.rows(), s.w.cols()));
    ASSERT_GT(oracle::frobenius(e), 0.1);
    EXPECT_NEAR(ls::benign_drift(s.w, s.d, Mat<double>(s.d + e), s.probe, s.alpha), 0.0, 1e-10);
    const Mat<double> zero_probe = Mat<double>::Zero(s.probe.rows(), s.probe.cols());
    EXPECT_EQ(ls::benign_drift(s.w, s.d, s.e, zero_probe, s.alpha), 0.0);
    const Mat<double> orig = s.w + s.alpha * s.d;
    const double want = oracle::frobenius(oracle::matmul(s.probe, s.w + s.alpha * s.e) - oracle::matmul(s.probe, orig)) /
                        oracle::frobenius(oracle::matmul(s.probe, orig));
    EXPECT_NEAR(ls::benign_drift(s.w, s.d, s.e, s.probe, s.alpha), want, 1e-12);
  }
}

TEST(ParamDrift, Examples) {
  std::mt19937_64 rng(6);
  auto s = random_setup(rng);
  EXPECT_EQ(ls::param_drift(s.d, s.d), 0.0);
  EXPECT_NEAR(ls::param_drift(s.d, Mat<double>(2.0 * s.d)), 1.0, 1e-15);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = oracle::random_matrix(rng, 7, 5);
    const auto b = oracle::random_matrix(rng, 7, 5);
    EXPECT_NEAR(ls::param_drift(a, b), oracle::frobenius(b - a) / oracle::frobenius(a), 1e-12);
  }
  const Mat<double> zero = Mat<double>::Zero(7, 5);
  EXPECT_NEAR(ls::param_drift(zero, Mat<double>(Mat<double>::Constant(7, 5, 1e-13))), std::sqrt(35.0) * 1e-13 / 1e-12,
              1e-12);
}

TEST(Metrics, ShapeErrors) {
  std::mt19937_64 rng(7);
  auto s = random_setup(rng);
  const auto wrong = oracle::random_matrix(rng, 3, 3);
  auto code_of = [](auto&& fn) {
    try {
      fn();
    } catch (const ls::Error& e) {
      return e.code();
    }
    return ls::ErrorCode::kIo;
  };
  EXPECT_EQ(code_of([&] { ls::projection_shift(s.w, s.d, wrong, s.c_t, s.c_a, 1.0); }), ls::ErrorCode::kShapeMismatch);
  EXPECT_EQ(code_of([&] { ls::projection_shift(s.w, s.d, s.e, wrong, wrong, 1.0); }), ls::ErrorCode::kShapeMismatch);
  EXPECT_EQ(code_of([&] { ls::benign_drift(s.w, s.d, s.e, wrong, 1.0); }), ls::ErrorCode::kShapeMismatch);
  EXPECT_EQ(code_of([&] { ls::param_drift(s.d, wrong); }), ls::ErrorCode::kShapeMismatch);
}

TEST(Metrics, InvariantUnderRowPermutation) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    auto s = random_setup(rng);
    EXPECT_NEAR(ls::projection_shift(s.w, s.d, s.e, s.c_t, s.c_a, s.alpha),
                ls::projection_shift(s.w, s.d, s.e, reverse_rows(s.c_t), reverse_rows(s.c_a), s.alpha), 1e-12);
    EXPECT_NEAR(ls::benign_drift(s.w, s.d, s.e, s.probe, s.alpha),
                ls::benign_drift(s.w, s.d, s.e, reverse_rows(s.probe), s.alpha), 1e-12);
  }
}

TEST(Metrics, ScaleInvariance) {
  std::mt19937_64 rng(9);
  auto s = random_setup(rng);
  // Scaling both embeddings leaves the ratio unchanged.
  EXPECT_NEAR(ls::projection_shift(s.w, s.d, s.e, s.c_t, s.c_a, s.alpha),
              ls::projection_shift(s.w, s.d, s.e, Mat<double>(7.0 * s.c_t), Mat<double>(7.0 * s.c_a), s.alpha), 1e-12);
  EXPECT_NEAR(ls::benign_drift(s.w, s.d, s.e, s.probe, s.alpha),
              ls::benign_drift(s.w, s.d, s.e, Mat<double>(0.01 * s.probe), s.alpha), 1e-12);
}

// ---------------------------------------------------------------------------
// Report.

TEST(Report, SchemaAndFiniteness) {
  const auto fx = small_fixture();
  const auto outcome = ls::edit_adapter(fx.adapter, fx.base, fx.spec, f64_config(), &fx.probes);
  const auto doc = ls::report_to_json(outcome.report);
  std::string why;
  EXPECT_TRUE(ls::is_valid_report_json(doc, &why)) << why;
  EXPECT_EQ(doc["schema"], ls::kReportSchema);
  EXPECT_EQ(doc["layers"].size(), 4u);
  EXPECT_EQ(doc["config"]["steps"], 10);
  visit_numbers(doc, [](double v) { EXPECT_TRUE(std::isfinite(v)); });
  EXPECT_EQ(doc["projection_shift"]["per_pair"].size(), fx.spec.k());
  EXPECT_EQ(doc["benign_drift"]["probes"], 6);
  EXPECT_FALSE(doc.contains("timings"));
}

TEST(Report, NineSignificantDigitsAndSortedKeys) {
  const auto fx = small_fixture();
  const auto outcome = ls::edit_adapter(fx.adapter, fx.base, fx.spec, f64_config(), &fx.probes);
  const std::string text = ls::report_json_text(outcome.report);
  const auto doc = nlohmann::json::parse(text);
  std::size_t checked = 0;
  visit_numbers(doc, [&](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    EXPECT_EQ(std::strtod(buf, nullptr), v);
    ++checked;
  });
  EXPECT_GT(checked, 50u);
  // No serialized float carries more than 9 significant digits.
  std::size_t bad = 0;
  const std::regex number(R"(-?[0-9]+\.[0-9]+(e[-+]?[0-9]+)?)");
  for (std::sregex_iterator it(text.begin(), text.end(), number), end; it != end; ++it) {
    std::string digits;
    for (char c : it->str(0)) {
      if (c == 'e') break;
      if (std::isdigit(static_cast<unsigned char>(c))) digits += c;
    }
    const auto first = digits.find_first_not_of('0');
    if (first != std::string::npos && digits.size() - first > 9) ++bad;
  }
  EXPECT_EQ(bad, 0u);
  // Keys at every object level appear in sorted order.
  std::function<void(const nlohmann::json&)> sorted = [&](const nlohmann::json& node) {
    if (node.is_object()) {
      std::string previous;
      for (auto it = node.begin(); it != node.end(); ++it) {
        EXPECT_LE(previous, it.key());
        previous = it.key();
        sorted(it.value());
      }
    } else if (node.is_array()) {
      for (const auto& child : node) sorted(child);
    }
  };
  sorted(nlohmann::json::parse(text));
  const auto schema_pos = text.find("\"schema\"");
  const auto config_pos = text.find("\"config\"");
  EXPECT_LT(config_pos, schema_pos);
}

TEST(Report, DeterministicAcrossRuns) {
  const auto fx = small_fixture();
  const auto a = ls::edit_adapter(fx.adapter, fx.base, fx.spec, f64_config(), &fx.probes);
  const auto b = ls::edit_adapter(fx.adapter, fx.base, fx.spec, f64_config(), &fx.probes);
  EXPECT_EQ(ls::report_json_text(a.report), ls::report_json_text(b.report));
}

TEST(Report, ValidatorRejectsBrokenDocuments) {
  const auto fx = small_fixture(2);
  const auto doc = ls::report_to_json(ls::edit_adapter(fx.adapter, fx.base, fx.spec, f64_config()).report);
  std::string why;
  EXPECT_FALSE(ls::is_valid_report_json(nlohmann::json::array(), &why));
  auto missing = doc;
  missing.erase("layers");
  EXPECT_FALSE(ls::is_valid_report_json(missing, &why));
  EXPECT_NE(why.find("layers"), std::string::npos);
  auto schema = doc;
  schema["schema"] = "other/2";
  EXPECT_FALSE(ls::is_valid_report_json(schema, &why));
  auto unsorted = doc;
  std::swap(unsorted["layers"][0], unsorted["layers"][1]);
  EXPECT_FALSE(ls::is_valid_report_json(unsorted, &why));
  auto non_numeric = doc;
  non_numeric["layers"][0]["param_drift"] = "x";
  EXPECT_FALSE(ls::is_valid_report_json(non_numeric, &why));
}

TEST(Report, TextRendering) {
  const auto fx = small_fixture(2);
  auto outcome = ls::edit_adapter(fx.adapter, fx.base, fx.spec, f64_config(), &fx.probes);
  outcome.report.warnings.push_back("example warning");
  const auto text = ls::report_text(outcome.report);
  for (const auto& layer : outcome.report.layers) EXPECT_NE(text.find(layer.name), std::string::npos);
  EXPECT_NE(text.find("mean projection_shift"), std::string::npos);
  EXPECT_NE(text.find("benign_drift max"), std::string::npos);
  EXPECT_NE(text.find("warning: example warning"), std::string::npos);
}

TEST(Report, SummarizeAggregates) {
  ls::EditReport report;
  ls::LayerReport a;
  a.name = "b";
  a.projection_shift = {0.2, 0.4};
  a.benign_drift_max = 0.05;
  a.benign_drift_mean = 0.01;
  ls::LayerReport b;
  b.name = "a";
  b.projection_shift = {0.6, 0.8};
  b.benign_drift_max = 0.02;
  b.benign_drift_mean = 0.03;
  report.layers = {a, b};
  ls::summarize(report);
  EXPECT_EQ(report.layers[0].name, "a");
  ASSERT_EQ(report.projection_shift.size(), 2u);
  EXPECT_NEAR(report.projection_shift[0], 0.4, 1e-15);
  EXPECT_NEAR(report.projection_shift[1], 0.6, 1e-15);
  EXPECT_NEAR(report.mean_projection_shift, 0.5, 1e-15);
  ASSERT_TRUE(report.benign_drift);
  EXPECT_EQ(report.benign_drift->max, 0.05);
  EXPECT_NEAR(report.benign_drift->mean, 0.02, 1e-15);
}

// ---------------------------------------------------------------------------
// Verification.

TEST(Verify, AgreesWithEditReport) {
  const auto fx = small_fixture();
  const auto config = f64_config();
  const auto outcome = ls::edit_adapter(fx.adapter, fx.base, fx.spec, config, &fx.probes);
  const auto result =
      ls::verify_edit(fx.adapter, outcome.adapter, fx.base, fx.spec, fx.probes, config.merge_scale, config.patterns);
  ASSERT_EQ(result.layers.size(), outcome.report.layers.size());
  for (std::size_t i = 0; i < result.layers.size(); ++i) {
    const auto& want = outcome.report.layers[i];
    EXPECT_EQ(result.layers[i].name, want.name);
    for (std::size_t k = 0; k < want.projection_shift.size(); ++k) {
      EXPECT_NEAR(result.layers[i].projection_shift[k], want.projection_shift[k], 1e-9);
    }
    EXPECT_NEAR(result.layers[i].param_drift, want.param_drift, 1e-9);
  }
  EXPECT_NEAR(result.mean_projection_shift, outcome.report.mean_projection_shift, 1e-9);
  EXPECT_NEAR(result.max_benign_drift, *outcome.report.max_benign_drift(), 1e-9);
  EXPECT_TRUE(result.passes(0.5, 0.1));
  const auto doc = ls::verify_to_json(result, 0.5, 0.1);
  EXPECT_EQ(doc["passed"], true);
  EXPECT_EQ(doc["layers"].size(), result.layers.size());
}

TEST(Verify, UneditedAdapterFails) {
  const auto fx = small_fixture(2);
  const auto config = f64_config();
  const auto result = ls::verify_edit(fx.adapter, fx.adapter, fx.base, fx.spec, fx.probes, 1.0, config.patterns);
  EXPECT_NEAR(result.mean_projection_shift, 1.0, 1e-12);
  EXPECT_EQ(result.max_benign_drift, 0.0);
  EXPECT_FALSE(result.passes(0.5, 0.1));
  EXPECT_TRUE(result.passes(1.5, 0.1));
}

TEST(Verify, MissingLayers) {
  const auto fx = small_fixture(2);
  const auto config = f64_config();
  auto trimmed = fx.adapter;
  trimmed.layers.erase(trimmed.layers.begin());
  auto code_of = [](auto&& fn) {
    try {
      fn();
    } catch (const ls::Error& e) {
      return e.code();
    }
    return ls::ErrorCode::kIo;
  };
  EXPECT_EQ(code_of([&] { ls::verify_edit(fx.adapter, trimmed, fx.base, fx.spec, fx.probes, 1.0, config.patterns); }),
            ls::ErrorCode::kIndexOutOfRange);
  auto base = fx.base;
  base.layers.clear();
  EXPECT_EQ(code_of([&] { ls::verify_edit(fx.adapter, fx.adapter, base, fx.spec, fx.probes, 1.0, config.patterns); }),
            ls::ErrorCode::kMissingBaseWeight);
}
