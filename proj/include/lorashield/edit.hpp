// Copyright 2026 The lorashield Authors
// SPDX-License-Identifier: Apache-2.0

// Data-free concept erasure on LoRA deltas.
//
// For each targeted layer the dense delta D_hat (initialized to the original
// delta D) is optimized against
//
//   L_align = mean_i mean[(c_t^i (W + a D_hat + P) - c^i (W + a D))^2]
//   L_all   = L_align + eta * mean[(D_hat - D)^2]
//
// where P is a one-step adversarial weight perturbation of Frobenius norm
// tau along the ascent direction of L_align with respect to W, recomputed
// every step. The anchor branch c^i (W + a D) is a constant. After T Adam
// steps D_hat is refactorized to rank r by a truncated SVD.

#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lorashield/adapter.hpp"
#include "lorashield/concept.hpp"
#include "lorashield/diagnostics.hpp"
#include "lorashield/error.hpp"
#include "lorashield/matrix.hpp"
#include "lorashield/svd.hpp"

namespace lorashield {

enum class ComputeDtype { kF32, kF64 };

struct EditConfig {
  int steps = 10;
  double tau = 1e-5;
  double eta = 0.1;
  double learning_rate = 1e-3;
  double merge_scale = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  ComputeDtype compute_dtype = ComputeDtype::kF32;
  std::optional<int> rank;  // output rank override; default keeps each layer's rank
  std::vector<std::string> patterns = default_target_patterns();
  int workers = 0;  // 0: hardware concurrency
  bool record_timings = false;

  /// Throws InvalidConfig naming the first offending field.
  void validate() const {
    auto bad = [](const std::string& field, const std::string& why) {
      fail(ErrorCode::kInvalidConfig, field + ": " + why);
    };
    if (steps < 1) bad("steps", "must be >= 1");
    if (!(tau > 0.0) || !std::isfinite(tau)) bad("tau", "must be > 0");
    if (!(eta >= 0.0) || !std::isfinite(eta)) bad("eta", "must be >= 0");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) bad("lr", "must be > 0");
    if (!(merge_scale > 0.0 && merge_scale <= 1.0)) bad("alpha", "must lie in (0, 1]");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) bad("beta1", "must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) bad("beta2", "must lie in [0, 1)");
    if (!(epsilon > 0.0)) bad("epsilon", "must be > 0");
    if (rank && *rank < 1) bad("rank", "must be >= 1");
    if (patterns.empty()) bad("patterns", "at least one pattern is required");
    if (workers < 0) bad("workers", "must be >= 0");
  }
};

inline std::string_view compute_dtype_name(ComputeDtype dtype) {
  return dtype == ComputeDtype::kF64 ? "F64" : "F32";
}

inline ComputeDtype parse_compute_dtype(std::string_view name) {
  if (name == "F32" || name == "f32") return ComputeDtype::kF32;
  if (name == "F64" || name == "f64") return ComputeDtype::kF64;
  fail(ErrorCode::kInvalidConfig, "compute_dtype: expected F32 or F64, got '" + std::string(name) + "'");
}

/// Config echo written into reports; excludes knobs that do not change the
/// result (workers, timings).
inline nlohmann::json config_to_json(const EditConfig& config) {
  nlohmann::json out;
  out["steps"] = config.steps;
  out["tau"] = config.tau;
  out["eta"] = config.eta;
  out["lr"] = config.learning_rate;
  out["alpha"] = config.merge_scale;
  out["beta1"] = config.beta1;
  out["beta2"] = config.beta2;
  out["epsilon"] = config.epsilon;
  out["seed"] = config.seed;
  out["compute_dtype"] = compute_dtype_name(config.compute_dtype);
  out["rank"] = config.rank ? nlohmann::json(*config.rank) : nlohmann::json(nullptr);
  out["patterns"] = config.patterns;
  return out;
}

/// Accepts the config echo layout; unknown keys are rejected.
inline EditConfig config_from_json(const nlohmann::json& doc, EditConfig config = {}) {
  if (!doc.is_object()) fail(ErrorCode::kInvalidConfig, "config: expected a JSON object");
  auto number = [&](const std::string& key) {
    if (!doc[key].is_number()) fail(ErrorCode::kInvalidConfig, key + ": expected a number");
    return doc[key].get<double>();
  };
  auto integer = [&](const std::string& key) {
    if (!doc[key].is_number_integer()) fail(ErrorCode::kInvalidConfig, key + ": expected an integer");
    return doc[key].get<std::int64_t>();
  };
  for (const auto& [key, value] : doc.items()) {
    if (key == "steps") {
      config.steps = static_cast<int>(integer(key));
    } else if (key == "tau") {
      config.tau = number(key);
    } else if (key == "eta") {
      config.eta = number(key);
    } else if (key == "lr") {
      config.learning_rate = number(key);
    } else if (key == "alpha") {
      config.merge_scale = number(key);
    } else if (key == "beta1") {
      config.beta1 = number(key);
    } else if (key == "beta2") {
      config.beta2 = number(key);
    } else if (key == "epsilon") {
      config.epsilon = number(key);
    } else if (key == "seed") {
      config.seed = static_cast<std::uint64_t>(integer(key));
    } else if (key == "compute_dtype") {
      if (!value.is_string()) fail(ErrorCode::kInvalidConfig, "compute_dtype: expected a string");
      config.compute_dtype = parse_compute_dtype(value.get<std::string>());
    } else if (key == "rank") {
      if (value.is_null()) {
        config.rank.reset();
      } else {
        config.rank = static_cast<int>(integer(key));
      }
    } else if (key == "patterns") {
      if (!value.is_array()) fail(ErrorCode::kInvalidConfig, "patterns: expected an array of strings");
      config.patterns.clear();
      for (const auto& p : value) {
        if (!p.is_string()) fail(ErrorCode::kInvalidConfig, "patterns: expected an array of strings");
        config.patterns.push_back(p.get<std::string>());
      }
    } else if (key == "workers") {
      config.workers = static_cast<int>(integer(key));
    } else if (key != "base") {
      fail(ErrorCode::kInvalidConfig, key + ": unknown config field");
    }
  }
  config.validate();
  return config;
}

// ---------------------------------------------------------------------------
// Single-pair losses and gradients. Embeddings are L x n, weights n x m.

namespace detail {

template <typename T>
void check_pair_shapes(const Mat<T>& c_t, const Mat<T>& c, const Mat<T>& w, const Mat<T>& delta_hat,
                       const Mat<T>& delta_orig, const Mat<T>& perturb) {
  auto same = [](const Mat<T>& x, const Mat<T>& y, const char* what) {
    if (x.rows() != y.rows() || x.cols() != y.cols()) {
      fail(ErrorCode::kShapeMismatch, std::string(what) + ": " + shape_string(x.rows(), x.cols()) + " vs " +
                                          shape_string(y.rows(), y.cols()));
    }
  };
  same(c_t, c, "anchor embedding");
  same(w, delta_hat, "edited delta");
  same(w, delta_orig, "original delta");
  same(w, perturb, "perturbation");
  if (c_t.cols() != w.rows()) {
    fail(ErrorCode::kShapeMismatch, "embedding width " + std::to_string(c_t.cols()) + " vs weight rows " +
                                        std::to_string(w.rows()));
  }
  if (!c_t.allFinite() || !c.allFinite() || !w.allFinite() || !delta_hat.allFinite() || !delta_orig.allFinite() ||
      !perturb.allFinite()) {
    fail(ErrorCode::kNonFiniteInput, "alignment inputs contain non-finite values");
  }
}

template <typename T>
Mat<T> alignment_residual(const Mat<T>& c_t, const Mat<T>& c, const Mat<T>& w, const Mat<T>& delta_hat,
                          const Mat<T>& delta_orig, T alpha, const Mat<T>& perturb) {
  check_pair_shapes(c_t, c, w, delta_hat, delta_orig, perturb);
  const Mat<T> anchor = c * (w + alpha * delta_orig);
  return c_t * (w + alpha * delta_hat + perturb) - anchor;
}

}  // namespace detail

template <typename T>
T loss_align(const Mat<T>& c_t, const Mat<T>& c, const Mat<T>& w, const Mat<T>& delta_hat, const Mat<T>& delta_orig,
             T alpha, const Mat<T>& perturb) {
  return detail::alignment_residual(c_t, c, w, delta_hat, delta_orig, alpha, perturb).squaredNorm() /
         static_cast<T>(c_t.rows() * w.cols());
}

template <typename T>
T loss_pre(const Mat<T>& delta_hat, const Mat<T>& delta_orig) {
  if (delta_hat.rows() != delta_orig.rows() || delta_hat.cols() != delta_orig.cols()) {
    fail(ErrorCode::kShapeMismatch, "loss_pre: " + shape_string(delta_hat.rows(), delta_hat.cols()) + " vs " +
                                        shape_string(delta_orig.rows(), delta_orig.cols()));
  }
  return (delta_hat - delta_orig).squaredNorm() / static_cast<T>(delta_hat.size());
}

/// d loss_align / d delta_hat = (2 alpha / (L m)) c_t^T R.
template <typename T>
Mat<T> grad_align(const Mat<T>& c_t, const Mat<T>& c, const Mat<T>& w, const Mat<T>& delta_hat,
                  const Mat<T>& delta_orig, T alpha, const Mat<T>& perturb) {
  const Mat<T> r = detail::alignment_residual(c_t, c, w, delta_hat, delta_orig, alpha, perturb);
  return (T(2) * alpha / static_cast<T>(c_t.rows() * w.cols())) * (c_t.transpose() * r);
}

/// d loss_pre / d delta_hat.
template <typename T>
Mat<T> grad_pre(const Mat<T>& delta_hat, const Mat<T>& delta_orig) {
  return (T(2) / static_cast<T>(delta_hat.size())) * (delta_hat - delta_orig);
}

/// tau * g / ||g|| for g the gradient of a loss with respect to W, or zero
/// when ||g|| < 1e-12.
template <typename T>
Mat<T> normalized_ascent(const Mat<T>& g, T tau) {
  const T norm = g.norm();
  if (!(norm >= T(1e-12))) return Mat<T>::Zero(g.rows(), g.cols());
  return (tau / norm) * g;
}

/// One-step worst-case weight perturbation on the tau-sphere.
template <typename T>
Mat<T> adversarial_delta(const Mat<T>& c_t, const Mat<T>& c, const Mat<T>& w, const Mat<T>& delta_hat,
                         const Mat<T>& delta_orig, T alpha, T tau) {
  if (!(tau > T(0))) fail(ErrorCode::kInvalidConfig, "tau must be > 0");
  const Mat<T> zero = Mat<T>::Zero(w.rows(), w.cols());
  const Mat<T> r = detail::alignment_residual(c_t, c, w, delta_hat, delta_orig, alpha, zero);
  const Mat<T> g = (T(2) / static_cast<T>(c_t.rows() * w.cols())) * (c_t.transpose() * r);
  return normalized_ascent(g, tau);
}

// ---------------------------------------------------------------------------
// Adam.

template <typename T>
struct AdamState {
  Mat<T> first_moment;
  Mat<T> second_moment;
  std::int64_t step_count = 0;

  static AdamState zeros(Eigen::Index rows, Eigen::Index cols) {
    return {Mat<T>::Zero(rows, cols), Mat<T>::Zero(rows, cols), 0};
  }
};

/// In-place bias-corrected Adam update.
template <typename T>
void adam_update(AdamState<T>& state, Mat<T>& param, const Mat<T>& grad, const EditConfig& config) {
  if (param.rows() != grad.rows() || param.cols() != grad.cols() || state.first_moment.rows() != param.rows() ||
      state.first_moment.cols() != param.cols() || state.second_moment.rows() != param.rows() ||
      state.second_moment.cols() != param.cols()) {
    fail(ErrorCode::kShapeMismatch, "adam: parameter, gradient and moments must share a shape");
  }
  const T b1 = static_cast<T>(config.beta1);
  const T b2 = static_cast<T>(config.beta2);
  const T lr = static_cast<T>(config.learning_rate);
  const T eps = static_cast<T>(config.epsilon);
  state.step_count += 1;
  state.first_moment = b1 * state.first_moment + (T(1) - b1) * grad;
  state.second_moment = b2 * state.second_moment + (T(1) - b2) * grad.cwiseAbs2();
  const T c1 = T(1) - static_cast<T>(std::pow(config.beta1, static_cast<double>(state.step_count)));
  const T c2 = T(1) - static_cast<T>(std::pow(config.beta2, static_cast<double>(state.step_count)));
  param.array() -= lr * (state.first_moment.array() / c1) / ((state.second_moment.array() / c2).sqrt() + eps);
}

template <typename T>
std::pair<Mat<T>, AdamState<T>> adam_step(const AdamState<T>& state, const Mat<T>& param, const Mat<T>& grad,
                                          const EditConfig& config) {
  AdamState<T> next = state;
  Mat<T> updated = param;
  adam_update(next, updated, grad, config);
  return {std::move(updated), std::move(next)};
}

// ---------------------------------------------------------------------------
// Pair-averaged objective over the K synonym/anchor pairs.

/// Stacks the K synonyms into one (K L) x n matrix so each step costs four
/// matrix products regardless of K. Losses are means over all K L m
/// entries, which equals the mean over pairs of the per-pair losses.
template <typename T>
class AlignmentObjective {
 public:
  AlignmentObjective(const ConceptSpec& spec, const Mat<double>& w, const Mat<double>& delta_orig, double alpha)
      : alpha_(static_cast<T>(alpha)) {
    const auto k = static_cast<Eigen::Index>(spec.k());
    const Eigen::Index l = spec.tokens();
    if (spec.width() != w.rows()) {
      fail(ErrorCode::kShapeMismatch, "concept width " + std::to_string(spec.width()) + " vs layer input " +
                                          std::to_string(w.rows()));
    }
    if (w.rows() != delta_orig.rows() || w.cols() != delta_orig.cols()) {
      fail(ErrorCode::kShapeMismatch, "base weight " + shape_string(w.rows(), w.cols()) + " vs delta " +
                                          shape_string(delta_orig.rows(), delta_orig.cols()));
    }
    Mat<double> stacked(k * l, spec.width());
    Mat<double> anchors(k * l, spec.width());
    for (Eigen::Index i = 0; i < k; ++i) {
      stacked.middleRows(i * l, l) = spec.synonyms[static_cast<std::size_t>(i)];
      anchors.middleRows(i * l, l) = antonym_or_neutral(spec, static_cast<std::size_t>(i));
    }
    const Mat<double> w_orig = w + alpha * delta_orig;
    // Residual offset C W - Y, shared by every evaluation.
    offset_ = (stacked * w - anchors * w_orig).template cast<T>();
    stacked_ = stacked.template cast<T>();
    entries_ = static_cast<T>(stacked_.rows() * w.cols());
  }

  /// R = C (W + a X) - Y.
  Mat<T> residual(const Mat<T>& delta_hat) const {
    Mat<T> r = offset_;
    r.noalias() += alpha_ * (stacked_ * delta_hat);
    return r;
  }

  T loss(const Mat<T>& residual) const { return residual.squaredNorm() / entries_; }

  /// Gradient with respect to W (perturbation direction) from a residual.
  Mat<T> weight_gradient(const Mat<T>& residual) const {
    Mat<T> g(stacked_.cols(), residual.cols());
    g.noalias() = (T(2) / entries_) * (stacked_.transpose() * residual);
    return g;
  }

  /// Residual after adding a perturbation P to W.
  Mat<T> perturbed_residual(const Mat<T>& residual, const Mat<T>& perturb) const {
    Mat<T> r = residual;
    r.noalias() += stacked_ * perturb;
    return r;
  }

  T alpha() const { return alpha_; }

 private:
  T alpha_;
  T entries_ = T(1);
  Mat<T> stacked_;
  Mat<T> offset_;
};

template <typename T>
struct LayerEditResult {
  Mat<T> edited;  // dense, in x out
  LayerEditTrace trace;
};

/// Edits one layer. `w` is the base weight in math orientation (in x out).
template <typename T>
LayerEditResult<T> edit_layer(const LoraLayer& layer, const Mat<double>& w, const ConceptSpec& spec,
                              const EditConfig& config) {
  config.validate();
  if (w.rows() != layer.in_features() || w.cols() != layer.out_features()) {
    fail(ErrorCode::kShapeMismatch, "layer '" + layer.name + "': base weight is " + shape_string(w.rows(), w.cols()) +
                                        ", adapter expects " +
                                        shape_string(layer.in_features(), layer.out_features()));
  }
  const Mat<double> delta_orig = math_delta<double>(layer);
  AlignmentObjective<T> objective(spec, w, delta_orig, config.merge_scale);

  const Mat<T> original = delta_orig.cast<T>();
  Mat<T> edited = original;
  auto adam = AdamState<T>::zeros(edited.rows(), edited.cols());
  const T tau = static_cast<T>(config.tau);
  const T eta = static_cast<T>(config.eta);
  const T alpha = objective.alpha();

  auto check = [&](double value, const char* what) {
    if (!std::isfinite(value)) {
      fail(ErrorCode::kNonFiniteLoss, "layer '" + layer.name + "': " + what + " became non-finite");
    }
  };

  LayerEditResult<T> result;
  result.trace.steps.reserve(static_cast<std::size_t>(config.steps));
  for (int step = 0; step < config.steps; ++step) {
    const Mat<T> r0 = objective.residual(edited);
    if (step == 0) {
      result.trace.initial_align = static_cast<double>(objective.loss(r0));
      check(result.trace.initial_align, "initial alignment loss");
    }
    const Mat<T> perturb = normalized_ascent(objective.weight_gradient(r0), tau);
    const Mat<T> r = objective.perturbed_residual(r0, perturb);

    Mat<T> grad = alpha * objective.weight_gradient(r);
    grad += eta * grad_pre(edited, original);

    StepRecord record;
    record.align = static_cast<double>(objective.loss(r));
    record.pre = static_cast<double>(loss_pre(edited, original));
    record.total = record.align + config.eta * record.pre;
    record.perturb_norm = static_cast<double>(perturb.norm());
    record.grad_norm = static_cast<double>(grad.norm());
    check(record.total, "total loss");
    check(record.grad_norm, "gradient");
    result.trace.steps.push_back(record);

    adam_update(adam, edited, grad, config);
  }
  result.trace.final_align = static_cast<double>(objective.loss(objective.residual(edited)));
  check(result.trace.final_align, "final alignment loss");
  result.edited = std::move(edited);
  return result;
}

/// Pair-averaged unperturbed alignment loss of an arbitrary delta, in double.
inline double mean_alignment_loss(const ConceptSpec& spec, const Mat<double>& w, const Mat<double>& delta_orig,
                                  const Mat<double>& delta, double alpha) {
  AlignmentObjective<double> objective(spec, w, delta_orig, alpha);
  return objective.loss(objective.residual(delta));
}

struct EditOutcome {
  LoraAdapter adapter;
  EditReport report;
};

namespace detail {

struct LayerJob {
  const LoraLayer* layer;
  const Mat<double>* weight;
};

template <typename T>
std::pair<LoraLayer, LayerReport> edit_and_refactor(const LayerJob& job, const ConceptSpec& spec,
                                                    const BenignProbeSet* probes, const EditConfig& config,
                                                    std::vector<std::string>& warnings) {
  const LoraLayer& layer = *job.layer;
  const Mat<double>& w = *job.weight;
  auto edited = edit_layer<T>(layer, w, spec, config);

  Eigen::Index rank = config.rank ? static_cast<Eigen::Index>(*config.rank) : layer.rank();
  rank = std::min({rank, layer.in_features(), layer.out_features()});
  const Mat<T> disk = edited.edited.transpose();
  const auto factors = sqrt_split(svd_truncate<T>(disk, rank));

  LoraLayer out = layer;
  set_factors(out, factors.b.template cast<double>(), factors.a.template cast<double>(), &warnings);

  const Mat<double> delta_orig = math_delta<double>(layer);
  const Mat<double> dense = edited.edited.template cast<double>();
  const Mat<double> shipped = math_delta<double>(out);
  const double alpha = config.merge_scale;

  LayerReport report;
  report.name = layer.name;
  report.rank = out.rank();
  report.trace = std::move(edited.trace);
  report.final_pre = (dense - delta_orig).squaredNorm() / static_cast<double>(dense.size());
  report.svd_relative_error = (shipped - dense).norm() / std::max(dense.norm(), kNormFloor);
  report.param_drift = param_drift(delta_orig, shipped);
  report.refactored_align = mean_alignment_loss(spec, w, delta_orig, shipped, alpha);
  for (std::size_t i = 0; i < spec.k(); ++i) {
    report.projection_shift.push_back(
        projection_shift(w, delta_orig, shipped, spec.synonyms[i], antonym_or_neutral(spec, i), alpha));
  }
  if (probes != nullptr && !probes->probes.empty()) {
    double max_drift = 0.0;
    double sum = 0.0;
    for (const auto& probe : probes->probes) {
      const double d = benign_drift(w, delta_orig, shipped, probe, alpha);
      max_drift = std::max(max_drift, d);
      sum += d;
    }
    report.benign_drift_max = max_drift;
    report.benign_drift_mean = sum / static_cast<double>(probes->probes.size());
  }
  if (!report.align_decreased()) {
    warnings.push_back("layer '" + layer.name + "': alignment loss did not decrease");
  }
  return {std::move(out), std::move(report)};
}

inline int resolve_workers(int requested, std::size_t jobs) {
  int n = requested > 0 ? requested : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  return std::max(1, std::min(n, static_cast<int>(jobs)));
}

}  // namespace detail

/// Edits every layer matched by `config.patterns` and refactorizes it at its
/// original rank (or `config.rank`). Other layers are untouched. Results do
/// not depend on the worker count.
inline EditOutcome edit_adapter(const LoraAdapter& adapter, const BaseWeights& base, const ConceptSpec& spec,
                                const EditConfig& config, const BenignProbeSet* probes = nullptr) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();
  const auto targets = resolve_target_layers(adapter, config.patterns);
  if (probes != nullptr) check_probe_shape(*probes, spec);

  std::vector<detail::LayerJob> jobs;
  for (const auto& name : targets) {
    const Mat<double>* w = base.find(name);
    if (w == nullptr) fail(ErrorCode::kMissingBaseWeight, "no base weight for layer '" + name + "'");
    jobs.push_back({&adapter.layer(name), w});
  }

  struct Slot {
    std::optional<std::pair<LoraLayer, LayerReport>> value;
    std::vector<std::string> warnings;
    std::exception_ptr error;
  };
  std::vector<Slot> slots(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < jobs.size(); i = next.fetch_add(1)) {
      try {
        if (config.compute_dtype == ComputeDtype::kF64) {
          slots[i].value = detail::edit_and_refactor<double>(jobs[i], spec, probes, config, slots[i].warnings);
        } else {
          slots[i].value = detail::edit_and_refactor<float>(jobs[i], spec, probes, config, slots[i].warnings);
        }
      } catch (...) {
        slots[i].error = std::current_exception();
      }
    }
  };
  const int lanes = detail::resolve_workers(config.workers, jobs.size());
  {
    std::vector<std::jthread> pool;
    for (int i = 1; i < lanes; ++i) pool.emplace_back(worker);
    worker();
  }
  for (auto& slot : slots) {
    if (slot.error) std::rethrow_exception(slot.error);
  }

  EditOutcome outcome{adapter, {}};
  outcome.report.config = config_to_json(config);
  outcome.report.warnings = adapter.warnings;
  for (auto& slot : slots) {
    auto& [layer, report] = *slot.value;
    outcome.adapter.layers.insert_or_assign(layer.name, std::move(layer));
    outcome.report.layers.push_back(std::move(report));
    for (auto& w : slot.warnings) outcome.report.warnings.push_back(std::move(w));
  }
  for (const auto& name : adapter.layer_names()) {
    if (!std::binary_search(targets.begin(), targets.end(), name)) outcome.report.passthrough_layers.push_back(name);
  }
  outcome.adapter.warnings.clear();
  summarize(outcome.report);
  if (outcome.report.benign_drift && probes != nullptr) outcome.report.benign_drift->probes = probes->probes.size();
  if (config.record_timings) {
    const auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    outcome.report.timings = std::map<std::string, double>{{"edit_seconds", elapsed}};
  }
  return outcome;
}

}  // namespace lorashield
