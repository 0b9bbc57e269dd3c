// Copyright 2026 The lorashield Authors
// SPDX-License-Identifier: Apache-2.0

// Embedding-space verification metrics and the machine-readable edit report.
//
// projection_shift and benign_drift are proxies computed on projected text
// embeddings; they are not image-space scores.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lorashield/error.hpp"
#include "lorashield/matrix.hpp"

namespace lorashield {

inline constexpr double kNormFloor = 1e-12;
inline constexpr const char* kReportSchema = "lorashield.edit_report/1";

namespace detail {

inline void require_same(Eigen::Index r0, Eigen::Index c0, Eigen::Index r1, Eigen::Index c1, const char* what) {
  if (r0 != r1 || c0 != c1) {
    fail(ErrorCode::kShapeMismatch, std::string(what) + ": " + shape_string(r0, c0) + " vs " + shape_string(r1, c1));
  }
}

inline void require_projectable(const Mat<double>& embedding, const Mat<double>& w, const char* what) {
  if (embedding.cols() != w.rows()) {
    fail(ErrorCode::kShapeMismatch, std::string(what) + ": embedding width " + std::to_string(embedding.cols()) +
                                        " vs weight rows " + std::to_string(w.rows()));
  }
}

}  // namespace detail

/// ||c_t (W + a D_edit) - c_anchor (W + a D)|| / ||c_t (W + a D) - c_anchor (W + a D)||.
/// Below 1 means the target projection moved toward the anchor. Returns
/// exactly 1 when the denominator vanishes.
inline double projection_shift(const Mat<double>& w, const Mat<double>& delta_orig, const Mat<double>& delta_edited,
                               const Mat<double>& c_target, const Mat<double>& c_anchor, double alpha) {
  detail::require_same(w.rows(), w.cols(), delta_orig.rows(), delta_orig.cols(), "projection_shift delta_orig");
  detail::require_same(w.rows(), w.cols(), delta_edited.rows(), delta_edited.cols(), "projection_shift delta_edited");
  detail::require_same(c_target.rows(), c_target.cols(), c_anchor.rows(), c_anchor.cols(), "projection_shift anchor");
  detail::require_projectable(c_target, w, "projection_shift");
  const Mat<double> original = w + alpha * delta_orig;
  const Mat<double> anchor = c_anchor * original;
  const double den = (c_target * original - anchor).norm();
  if (den < kNormFloor) return 1.0;
  return (c_target * (w + alpha * delta_edited) - anchor).norm() / den;
}

/// Relative change of a probe's projection caused by the edit.
inline double benign_drift(const Mat<double>& w, const Mat<double>& delta_orig, const Mat<double>& delta_edited,
                           const Mat<double>& probe, double alpha) {
  detail::require_same(w.rows(), w.cols(), delta_orig.rows(), delta_orig.cols(), "benign_drift delta_orig");
  detail::require_same(w.rows(), w.cols(), delta_edited.rows(), delta_edited.cols(), "benign_drift delta_edited");
  detail::require_projectable(probe, w, "benign_drift");
  const double num = (alpha * (probe * (delta_edited - delta_orig))).norm();
  const double den = std::max((probe * (w + alpha * delta_orig)).norm(), kNormFloor);
  return num / den;
}

inline double param_drift(const Mat<double>& delta_orig, const Mat<double>& delta_edited) {
  detail::require_same(delta_orig.rows(), delta_orig.cols(), delta_edited.rows(), delta_edited.cols(), "param_drift");
  return (delta_edited - delta_orig).norm() / std::max(delta_orig.norm(), kNormFloor);
}

/// Rounds to 9 significant digits so serialized reports are stable.
inline double round_sig9(double value) {
  if (value == 0.0 || !std::isfinite(value)) return value;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", value);
  return std::strtod(buf, nullptr);
}

struct StepRecord {
  double align = 0.0;  // alignment loss under the adversarial perturbation
  double pre = 0.0;
  double total = 0.0;
  double perturb_norm = 0.0;
  double grad_norm = 0.0;
};

struct LayerEditTrace {
  std::vector<StepRecord> steps;
  double initial_align = 0.0;  // unperturbed, before the first step
  double final_align = 0.0;    // unperturbed, dense edited delta
};

struct LayerReport {
  std::string name;
  Eigen::Index rank = 0;
  LayerEditTrace trace;
  double final_pre = 0.0;
  double refactored_align = 0.0;  // unperturbed, after rank-r refactorization
  double svd_relative_error = 0.0;
  double param_drift = 0.0;
  std::vector<double> projection_shift;  // one per synonym pair
  std::optional<double> benign_drift_max;
  std::optional<double> benign_drift_mean;

  bool align_decreased() const { return refactored_align <= trace.initial_align; }
};

struct DriftSummary {
  double max = 0.0;
  double mean = 0.0;
  std::size_t probes = 0;
};

struct EditReport {
  nlohmann::json config;  // echo, filled by the editor
  std::vector<LayerReport> layers;  // sorted by name
  std::vector<std::string> passthrough_layers;
  std::vector<double> projection_shift;  // per pair, mean over layers
  double mean_projection_shift = 1.0;
  std::optional<DriftSummary> benign_drift;
  std::vector<std::string> warnings;
  std::optional<std::map<std::string, double>> timings;

  /// Max over layers of benign drift, or nullopt when no probes were given.
  std::optional<double> max_benign_drift() const {
    if (!benign_drift) return std::nullopt;
    return benign_drift->max;
  }
};

/// Fills the global aggregates from the per-layer entries.
inline void summarize(EditReport& report) {
  std::sort(report.layers.begin(), report.layers.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  report.projection_shift.clear();
  report.mean_projection_shift = 1.0;
  report.benign_drift.reset();
  if (report.layers.empty()) return;

  const std::size_t pairs = report.layers.front().projection_shift.size();
  report.projection_shift.assign(pairs, 0.0);
  for (const auto& layer : report.layers) {
    for (std::size_t i = 0; i < pairs && i < layer.projection_shift.size(); ++i) {
      report.projection_shift[i] += layer.projection_shift[i];
    }
  }
  double total = 0.0;
  for (auto& value : report.projection_shift) {
    value /= static_cast<double>(report.layers.size());
    total += value;
  }
  if (pairs > 0) report.mean_projection_shift = total / static_cast<double>(pairs);

  double max_drift = 0.0;
  double sum_drift = 0.0;
  std::size_t counted = 0;
  for (const auto& layer : report.layers) {
    if (!layer.benign_drift_max) continue;
    max_drift = std::max(max_drift, *layer.benign_drift_max);
    sum_drift += *layer.benign_drift_mean;
    ++counted;
  }
  if (counted > 0) report.benign_drift = DriftSummary{max_drift, sum_drift / static_cast<double>(counted), 0};
}

namespace detail {

inline nlohmann::json rounded(const std::vector<double>& values) {
  nlohmann::json out = nlohmann::json::array();
  for (double v : values) out.push_back(round_sig9(v));
  return out;
}

}  // namespace detail

/// Keys are sorted (nlohmann::json uses std::map) and floats carry at most
/// 9 significant digits, so equal reports serialize to equal bytes.
inline nlohmann::json report_to_json(const EditReport& report) {
  nlohmann::json out;
  out["schema"] = kReportSchema;
  out["config"] = report.config;
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : report.layers) {
    nlohmann::json entry;
    entry["name"] = layer.name;
    entry["rank"] = layer.rank;
    entry["initial_align"] = round_sig9(layer.trace.initial_align);
    entry["final_align"] = round_sig9(layer.trace.final_align);
    entry["refactored_align"] = round_sig9(layer.refactored_align);
    entry["final_pre"] = round_sig9(layer.final_pre);
    entry["svd_relative_error"] = round_sig9(layer.svd_relative_error);
    entry["param_drift"] = round_sig9(layer.param_drift);
    entry["align_decreased"] = layer.align_decreased();
    entry["projection_shift"] = detail::rounded(layer.projection_shift);
    if (layer.benign_drift_max) {
      entry["benign_drift"] = {{"max", round_sig9(*layer.benign_drift_max)},
                               {"mean", round_sig9(*layer.benign_drift_mean)}};
    }
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : layer.trace.steps) {
      steps.push_back({{"align", round_sig9(s.align)},
                       {"pre", round_sig9(s.pre)},
                       {"total", round_sig9(s.total)},
                       {"perturb_norm", round_sig9(s.perturb_norm)},
                       {"grad_norm", round_sig9(s.grad_norm)}});
    }
    entry["steps"] = std::move(steps);
    layers.push_back(std::move(entry));
  }
  out["layers"] = std::move(layers);
  out["passthrough_layers"] = report.passthrough_layers;
  out["projection_shift"] = {{"per_pair", detail::rounded(report.projection_shift)},
                             {"mean", round_sig9(report.mean_projection_shift)}};
  if (report.benign_drift) {
    out["benign_drift"] = {{"max", round_sig9(report.benign_drift->max)},
                           {"mean", round_sig9(report.benign_drift->mean)},
                           {"probes", report.benign_drift->probes}};
  } else {
    out["benign_drift"] = nullptr;
  }
  out["warnings"] = report.warnings;
  if (report.timings) {
    nlohmann::json timings;
    for (const auto& [k, v] : *report.timings) timings[k] = round_sig9(v);
    out["timings"] = std::move(timings);
  }
  return out;
}

inline std::string report_json_text(const EditReport& report) { return report_to_json(report).dump(2) + "\n"; }

/// Structural check of a serialized report, used by the service tests and
/// `report` command.
inline bool is_valid_report_json(const nlohmann::json& doc, std::string* why = nullptr) {
  auto bad = [&](const std::string& reason) {
    if (why) *why = reason;
    return false;
  };
  if (!doc.is_object()) return bad("not an object");
  if (doc.value("schema", "") != kReportSchema) return bad("schema tag missing or unknown");
  for (const char* key : {"config", "layers", "projection_shift", "warnings", "passthrough_layers"}) {
    if (!doc.contains(key)) return bad(std::string("missing '") + key + "'");
  }
  if (!doc["layers"].is_array()) return bad("'layers' is not an array");
  std::string previous;
  for (const auto& layer : doc["layers"]) {
    for (const char* key : {"name", "rank", "initial_align", "final_align", "refactored_align", "svd_relative_error",
                            "param_drift", "projection_shift", "steps"}) {
      if (!layer.contains(key)) return bad(std::string("layer missing '") + key + "'");
    }
    const auto name = layer["name"].get<std::string>();
    if (name < previous) return bad("layers not sorted by name");
    previous = name;
    for (const char* key : {"initial_align", "final_align", "refactored_align", "svd_relative_error", "param_drift"}) {
      if (!layer[key].is_number()) return bad(std::string("layer '") + name + "' has non-numeric '" + key + "'");
    }
  }
  return true;
}

/// Human-readable rendering of a serialized report.
inline std::string report_text_from_json(const nlohmann::json& doc) {
  std::ostringstream out;
  out << std::left << std::setw(72) << "layer" << std::right << std::setw(6) << "rank" << std::setw(13) << "align0"
      << std::setw(13) << "align" << std::setw(11) << "shift" << std::setw(11) << "drift" << std::setw(11)
      << "svd_err" << "\n";
  out << std::setprecision(4);
  for (const auto& layer : doc.at("layers")) {
    double shift = 0.0;
    const auto& shifts = layer.at("projection_shift");
    for (const auto& s : shifts) shift += s.get<double>();
    if (!shifts.empty()) shift /= static_cast<double>(shifts.size());
    out << std::left << std::setw(72) << layer.at("name").get<std::string>() << std::right << std::setw(6)
        << layer.at("rank").get<long>() << std::setw(13) << layer.at("initial_align").get<double>() << std::setw(13)
        << layer.at("refactored_align").get<double>() << std::setw(11) << shift << std::setw(11);
    if (layer.contains("benign_drift")) {
      out << layer["benign_drift"].at("max").get<double>();
    } else {
      out << "-";
    }
    out << std::setw(11) << layer.at("svd_relative_error").get<double>() << "\n";
  }
  out << "mean projection_shift: " << doc.at("projection_shift").at("mean").get<double>() << "\n";
  if (doc.contains("benign_drift") && !doc["benign_drift"].is_null()) {
    out << "benign_drift max: " << doc["benign_drift"].at("max").get<double>()
        << "  mean: " << doc["benign_drift"].at("mean").get<double>() << "\n";
  }
  for (const auto& w : doc.at("warnings")) out << "warning: " << w.get<std::string>() << "\n";
  return out.str();
}

inline std::string report_text(const EditReport& report) { return report_text_from_json(report_to_json(report)); }

}  // namespace lorashield
