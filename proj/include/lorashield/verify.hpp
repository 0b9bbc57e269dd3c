// Copyright 2026 The lorashield Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include <json.hpp>

#include "lorashield/adapter.hpp"
#include "lorashield/concept.hpp"
#include "lorashield/diagnostics.hpp"

namespace lorashield {

struct LayerVerification {
  std::string name;
  std::vector<double> projection_shift;  // per pair
  std::vector<double> benign_drift;      // per probe
  double param_drift = 0.0;
};

struct VerifyResult {
  std::vector<LayerVerification> layers;
  double mean_projection_shift = 1.0;  // mean over pairs of the per-pair layer mean
  double max_benign_drift = 0.0;
  double mean_benign_drift = 0.0;

  bool passes(double max_shift, double max_drift) const {
    return mean_projection_shift <= max_shift && max_benign_drift <= max_drift;
  }
};

/// Recomputes the diagnostics of `edited` against `original` on the layers
/// selected by `patterns` in the original adapter.
inline VerifyResult verify_edit(const LoraAdapter& original, const LoraAdapter& edited, const BaseWeights& base,
                                const ConceptSpec& spec, const BenignProbeSet& probes, double alpha,
                                const std::vector<std::string>& patterns) {
  check_probe_shape(probes, spec);
  VerifyResult result;
  const auto names = resolve_target_layers(original, patterns);
  std::vector<double> pair_sums(spec.k(), 0.0);
  double drift_sum = 0.0;
  std::size_t drift_count = 0;
  for (const auto& name : names) {
    const Mat<double>* w = base.find(name);
    if (w == nullptr) fail(ErrorCode::kMissingBaseWeight, "no base weight for layer '" + name + "'");
    if (!edited.layers.contains(name)) fail(ErrorCode::kIndexOutOfRange, "edited adapter lacks layer '" + name + "'");
    const Mat<double> before = math_delta<double>(original.layer(name));
    const Mat<double> after = math_delta<double>(edited.layer(name));

    LayerVerification layer;
    layer.name = name;
    layer.param_drift = param_drift(before, after);
    for (std::size_t i = 0; i < spec.k(); ++i) {
      const double shift = projection_shift(*w, before, after, spec.synonyms[i], antonym_or_neutral(spec, i), alpha);
      layer.projection_shift.push_back(shift);
      pair_sums[i] += shift;
    }
    for (const auto& probe : probes.probes) {
      const double drift = benign_drift(*w, before, after, probe, alpha);
      layer.benign_drift.push_back(drift);
      result.max_benign_drift = std::max(result.max_benign_drift, drift);
      drift_sum += drift;
      ++drift_count;
    }
    result.layers.push_back(std::move(layer));
  }
  double total = 0.0;
  for (double s : pair_sums) total += s / static_cast<double>(names.size());
  result.mean_projection_shift = total / static_cast<double>(spec.k());
  if (drift_count > 0) result.mean_benign_drift = drift_sum / static_cast<double>(drift_count);
  return result;
}

inline nlohmann::json verify_to_json(const VerifyResult& result, double max_shift, double max_drift) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : result.layers) {
    nlohmann::json shifts = nlohmann::json::array();
    for (double s : layer.projection_shift) shifts.push_back(round_sig9(s));
    const double worst = layer.benign_drift.empty()
                             ? 0.0
                             : *std::max_element(layer.benign_drift.begin(), layer.benign_drift.end());
    layers.push_back({{"name", layer.name},
                      {"projection_shift", shifts},
                      {"benign_drift_max", round_sig9(worst)},
                      {"param_drift", round_sig9(layer.param_drift)}});
  }
  return {{"layers", layers},
          {"mean_projection_shift", round_sig9(result.mean_projection_shift)},
          {"max_benign_drift", round_sig9(result.max_benign_drift)},
          {"mean_benign_drift", round_sig9(result.mean_benign_drift)},
          {"thresholds", {{"max_shift", max_shift}, {"max_drift", max_drift}}},
          {"passed", result.passes(max_shift, max_drift)}};
}

}  // namespace lorashield
