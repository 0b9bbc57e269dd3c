// Copyright 2026 The lorashield Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <fnmatch.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lorashield/error.hpp"
#include "lorashield/matrix.hpp"
#include "lorashield/svd.hpp"
#include "lorashield/tensor_map.hpp"

namespace lorashield {

/// The two tensor naming families found in shared LoRA files.
enum class LoraNaming { kDownUp, kAB };

/// One low-rank delta. A is r x in (down projection), B is out x r (up
/// projection); both are kept in the on-disk orientation and widened to
/// double so untouched layers write back bit-exactly.
struct LoraLayer {
  std::string name;
  Mat<double> a;
  Mat<double> b;
  double stored_alpha = 0.0;
  bool has_alpha = false;
  LoraNaming naming = LoraNaming::kDownUp;
  Dtype dtype = Dtype::kF32;
  Dtype alpha_dtype = Dtype::kF32;

  Eigen::Index rank() const { return a.rows(); }
  Eigen::Index in_features() const { return a.cols(); }
  Eigen::Index out_features() const { return b.rows(); }

  void validate() const {
    if (a.rows() != b.cols()) {
      fail(ErrorCode::kShapeMismatch, "layer '" + name + "': A is " + shape_string(a.rows(), a.cols()) + " but B is " +
                                          shape_string(b.rows(), b.cols()));
    }
    if (rank() < 1 || rank() > std::min(in_features(), out_features())) {
      fail(ErrorCode::kShapeMismatch, "layer '" + name + "': rank " + std::to_string(rank()) + " exceeds min(m, n)");
    }
    if (!(stored_alpha >= 0.0) || !std::isfinite(stored_alpha)) {
      fail(ErrorCode::kInvalidConfig, "layer '" + name + "': alpha must be finite and non-negative");
    }
  }
};

/// alpha / rank under the ecosystem convention, otherwise 1.
inline double scale_factor(double stored_alpha, Eigen::Index rank, bool alpha_over_rank = true) {
  if (!alpha_over_rank) return 1.0;
  return stored_alpha / static_cast<double>(rank);
}

inline double layer_scale(const LoraLayer& layer) {
  return layer.has_alpha ? scale_factor(layer.stored_alpha, layer.rank()) : 1.0;
}

/// scale * B * A, shaped out x in.
template <typename T = double>
Mat<T> compose_delta(const LoraLayer& layer) {
  if (layer.a.rows() != layer.b.cols()) {
    fail(ErrorCode::kShapeMismatch, "layer '" + layer.name + "': inner dimensions disagree");
  }
  return (layer_scale(layer) * (layer.b * layer.a)).cast<T>();
}

/// The composed delta in the in x out orientation used against embeddings.
template <typename T = double>
Mat<T> math_delta(const LoraLayer& layer) {
  return compose_delta<T>(layer).transpose();
}

/// Replaces the factors so that compose_delta(layer) == b * a. The stored
/// alpha is kept and the scale is divided out of both factors equally; a
/// zero alpha is reset to the rank.
inline void set_factors(LoraLayer& layer, Mat<double> b, Mat<double> a, std::vector<std::string>* warnings = nullptr) {
  layer.b = std::move(b);
  layer.a = std::move(a);
  if (!layer.has_alpha) return;
  double scale = scale_factor(layer.stored_alpha, layer.rank());
  if (scale <= 0.0) {
    layer.stored_alpha = static_cast<double>(layer.rank());
    scale = 1.0;
    if (warnings) warnings->push_back("layer '" + layer.name + "': zero alpha reset to rank after refactorization");
  }
  const double root = std::sqrt(scale);
  layer.b /= root;
  layer.a /= root;
}

struct LoraAdapter {
  std::map<std::string, LoraLayer> layers;
  std::optional<std::string> base_model_hint;
  /// Original container, used for tensor order and pass-through entries.
  TensorMap source;
  std::vector<std::string> warnings;

  std::vector<std::string> layer_names() const {
    std::vector<std::string> names;
    for (const auto& [name, layer] : layers) names.push_back(name);
    return names;
  }

  const LoraLayer& layer(const std::string& name) const {
    auto it = layers.find(name);
    if (it == layers.end()) fail(ErrorCode::kIndexOutOfRange, "adapter has no layer '" + name + "'");
    return it->second;
  }
};

namespace detail {

enum class LoraPart { kNone, kA, kB, kAlpha };

struct TensorRole {
  std::string layer;
  LoraPart part = LoraPart::kNone;
  LoraNaming naming = LoraNaming::kDownUp;
};

inline TensorRole classify_tensor(std::string_view name) {
  struct Suffix {
    std::string_view text;
    LoraPart part;
    LoraNaming naming;
  };
  static constexpr Suffix kSuffixes[] = {
      {".lora_down.weight", LoraPart::kA, LoraNaming::kDownUp},
      {".lora_up.weight", LoraPart::kB, LoraNaming::kDownUp},
      {".lora_A.weight", LoraPart::kA, LoraNaming::kAB},
      {".lora_B.weight", LoraPart::kB, LoraNaming::kAB},
      {".alpha", LoraPart::kAlpha, LoraNaming::kDownUp},
  };
  for (const auto& s : kSuffixes) {
    if (name.size() > s.text.size() && name.ends_with(s.text)) {
      return {std::string(name.substr(0, name.size() - s.text.size())), s.part, s.naming};
    }
  }
  return {};
}

inline std::string tensor_name(const std::string& layer, LoraPart part, LoraNaming naming) {
  switch (part) {
    case LoraPart::kA: return layer + (naming == LoraNaming::kAB ? ".lora_A.weight" : ".lora_down.weight");
    case LoraPart::kB: return layer + (naming == LoraNaming::kAB ? ".lora_B.weight" : ".lora_up.weight");
    case LoraPart::kAlpha: return layer + ".alpha";
    case LoraPart::kNone: break;
  }
  return layer;
}

}  // namespace detail

/// Builds the layer model from a container. Tensors that are not part of a
/// matrix LoRA pair (including conv-shaped pairs) pass through untouched.
inline LoraAdapter parse_adapter(TensorMap map) {
  LoraAdapter adapter;
  struct Parts {
    const Tensor* a = nullptr;
    const Tensor* b = nullptr;
    const Tensor* alpha = nullptr;
    LoraNaming naming = LoraNaming::kDownUp;
  };
  std::map<std::string, Parts> parts;
  for (const auto& [name, tensor] : map.entries()) {
    auto role = detail::classify_tensor(name);
    if (role.part == detail::LoraPart::kNone) continue;
    auto& p = parts[role.layer];
    if (role.part == detail::LoraPart::kA) {
      p.a = &tensor;
      p.naming = role.naming;
    } else if (role.part == detail::LoraPart::kB) {
      p.b = &tensor;
    } else {
      p.alpha = &tensor;
    }
  }

  for (const auto& [name, p] : parts) {
    if (p.a == nullptr || p.b == nullptr) {
      if (p.a != nullptr || p.b != nullptr) {
        adapter.warnings.push_back("layer '" + name + "': incomplete A/B pair passed through unedited");
      }
      continue;
    }
    if (p.a->shape.size() != 2 || p.b->shape.size() != 2) {
      adapter.warnings.push_back("layer '" + name + "': non-matrix LoRA factors passed through unedited");
      continue;
    }
    LoraLayer layer;
    layer.name = name;
    layer.a = to_matrix<double>(*p.a);
    layer.b = to_matrix<double>(*p.b);
    layer.naming = p.naming;
    layer.dtype = p.a->dtype;
    if (p.alpha != nullptr) {
      layer.has_alpha = true;
      layer.stored_alpha = to_scalar(*p.alpha);
      layer.alpha_dtype = p.alpha->dtype;
    } else {
      layer.stored_alpha = static_cast<double>(layer.a.rows());
      adapter.warnings.push_back("layer '" + name + "': no alpha tensor, using scale 1.0");
    }
    layer.validate();
    adapter.layers.emplace(name, std::move(layer));
  }

  for (const char* key : {"ss_sd_model_name", "base_model", "base_model_name_or_path"}) {
    if (auto hint = map.metadata_value(key)) {
      adapter.base_model_hint = *hint;
      break;
    }
  }
  adapter.source = std::move(map);
  return adapter;
}

inline LoraAdapter load_adapter(const std::filesystem::path& path) { return parse_adapter(load_container(path)); }

/// Serializes in the source tensor order; layers that did not come from the
/// source container are appended in name order.
inline TensorMap adapter_to_tensor_map(const LoraAdapter& adapter) {
  TensorMap out;
  if (adapter.source.metadata()) out.set_metadata(*adapter.source.metadata());

  auto emit_part = [&](const LoraLayer& layer, detail::LoraPart part, const std::string& name) {
    switch (part) {
      case detail::LoraPart::kA: out.add(name, to_tensor<double>(layer.a, layer.dtype)); break;
      case detail::LoraPart::kB: out.add(name, to_tensor<double>(layer.b, layer.dtype)); break;
      case detail::LoraPart::kAlpha: {
        Tensor alpha = scalar_tensor(layer.stored_alpha, layer.alpha_dtype);
        if (const Tensor* original = adapter.source.find(name)) alpha.shape = original->shape;
        out.add(name, std::move(alpha));
        break;
      }
      case detail::LoraPart::kNone: break;
    }
  };

  std::map<std::string, bool> emitted;
  for (const auto& [name, tensor] : adapter.source.entries()) {
    auto role = detail::classify_tensor(name);
    auto it = adapter.layers.find(role.layer);
    if (role.part == detail::LoraPart::kNone || it == adapter.layers.end()) {
      out.add(name, tensor);
      continue;
    }
    if (role.part == detail::LoraPart::kAlpha && !it->second.has_alpha) continue;
    emit_part(it->second, role.part, name);
    emitted[role.layer] = true;
  }
  for (const auto& [name, layer] : adapter.layers) {
    if (emitted.contains(name)) continue;
    emit_part(layer, detail::LoraPart::kA, detail::tensor_name(name, detail::LoraPart::kA, layer.naming));
    emit_part(layer, detail::LoraPart::kB, detail::tensor_name(name, detail::LoraPart::kB, layer.naming));
    if (layer.has_alpha) {
      emit_part(layer, detail::LoraPart::kAlpha, detail::tensor_name(name, detail::LoraPart::kAlpha, layer.naming));
    }
  }
  // An alpha added to a layer that had none in the source.
  for (const auto& [name, layer] : adapter.layers) {
    const auto alpha_name = detail::tensor_name(name, detail::LoraPart::kAlpha, layer.naming);
    if (layer.has_alpha && !out.contains(alpha_name)) emit_part(layer, detail::LoraPart::kAlpha, alpha_name);
  }
  return out;
}

inline void save_adapter(const std::filesystem::path& path, const LoraAdapter& adapter) {
  save_container(path, adapter_to_tensor_map(adapter));
}

/// Cross-attention key/value projections: the layers that consume the text
/// embedding directly.
inline std::vector<std::string> default_target_patterns() { return {"*attn2*to_k*", "*attn2*to_v*"}; }

inline bool glob_match(const std::string& pattern, const std::string& name) {
  return ::fnmatch(pattern.c_str(), name.c_str(), 0) == 0;
}

inline std::vector<std::string> resolve_target_layers(const LoraAdapter& adapter,
                                                      const std::vector<std::string>& patterns) {
  if (patterns.empty()) fail(ErrorCode::kInvalidConfig, "at least one layer pattern is required");
  std::vector<std::string> names;
  for (const auto& [name, layer] : adapter.layers) {
    if (std::any_of(patterns.begin(), patterns.end(), [&](const auto& p) { return glob_match(p, name); })) {
      names.push_back(name);
    }
  }
  if (names.empty()) fail(ErrorCode::kNoLayersMatched, "no adapter layer matches the given patterns");
  return names;  // std::map iteration is already sorted
}

/// Base-model weights in math orientation (in x out), keyed by the adapter
/// layer name they pair with.
struct BaseWeights {
  std::map<std::string, Mat<double>> layers;
  std::string source;

  const Mat<double>* find(const std::string& name) const {
    auto it = layers.find(name);
    return it == layers.end() ? nullptr : &it->second;
  }
};

/// Base tensors are looked up as `<layer>` or `<layer>.weight` and stored on
/// disk as (out, in), the usual linear-layer layout.
inline BaseWeights load_base_weights(const TensorMap& map, const std::string& source = {}) {
  BaseWeights base;
  base.source = source;
  for (const auto& [name, tensor] : map.entries()) {
    if (tensor.shape.size() != 2) continue;
    std::string key = name;
    if (key.ends_with(".weight")) key.resize(key.size() - 7);
    Mat<double> w = to_matrix<double>(tensor).transpose();
    if (!w.allFinite()) fail(ErrorCode::kNonFiniteInput, "base weight '" + name + "' has non-finite entries");
    base.layers.insert_or_assign(std::move(key), std::move(w));
  }
  return base;
}

inline BaseWeights load_base_weights(const std::filesystem::path& path) {
  return load_base_weights(load_container(path), path.string());
}

inline TensorMap base_weights_to_tensor_map(const BaseWeights& base, Dtype dtype = Dtype::kF32) {
  TensorMap out;
  for (const auto& [name, w] : base.layers) out.add(name + ".weight", to_tensor<double>(w.transpose(), dtype));
  return out;
}

struct WeightedAdapter {
  const LoraAdapter* adapter;
  double weight;
};

/// Weighted sum of composed deltas, refactorized per layer at the largest
/// input rank (or `rank_override`, clamped to the matrix size).
inline LoraAdapter merge_adapters(const std::vector<WeightedAdapter>& inputs,
                                  std::optional<Eigen::Index> rank_override = std::nullopt) {
  if (inputs.empty()) fail(ErrorCode::kInvalidConfig, "merge needs at least one adapter");
  std::map<std::string, std::vector<std::pair<const LoraLayer*, double>>> by_layer;
  for (const auto& in : inputs) {
    if (!std::isfinite(in.weight)) fail(ErrorCode::kInvalidConfig, "merge weights must be finite");
    for (const auto& [name, layer] : in.adapter->layers) by_layer[name].emplace_back(&layer, in.weight);
  }

  LoraAdapter merged;
  for (const auto& [name, contributions] : by_layer) {
    const LoraLayer& first = *contributions.front().first;
    Mat<double> sum = Mat<double>::Zero(first.out_features(), first.in_features());
    Eigen::Index rank = 0;
    for (const auto& [layer, weight] : contributions) {
      if (layer->out_features() != sum.rows() || layer->in_features() != sum.cols()) {
        fail(ErrorCode::kShapeMismatch, "layer '" + name + "': delta shapes " + shape_string(sum.rows(), sum.cols()) +
                                            " and " + shape_string(layer->out_features(), layer->in_features()) +
                                            " cannot be merged");
      }
      sum += weight * compose_delta(*layer);
      rank = std::max(rank, layer->rank());
    }
    if (rank_override) rank = *rank_override;
    rank = std::min({rank, sum.rows(), sum.cols()});

    auto factors = sqrt_split(svd_truncate(sum, rank));
    LoraLayer out;
    out.name = name;
    out.naming = first.naming;
    out.dtype = first.dtype;
    out.alpha_dtype = first.alpha_dtype;
    out.has_alpha = true;
    out.stored_alpha = static_cast<double>(rank);
    out.b = std::move(factors.b);
    out.a = std::move(factors.a);
    merged.layers.emplace(name, std::move(out));
  }
  merged.source.set_metadata("merged_from", std::to_string(inputs.size()));
  return merged;
}

}  // namespace lorashield
