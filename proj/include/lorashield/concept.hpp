// Copyright 2026 The lorashield Authors
// SPDX-License-Identifier: Apache-2.0

// Concept bundles: K synonym/antonym embedding pairs plus the neutral
// (empty prompt) embedding. Tensor names inside the container:
//   syn/<i>, ant/<i>     i = 0..K-1, each L x n
//   ant/<i>/absent       zero-length flag, the slot falls back to neutral
//   neutral              L x n
// Metadata keys: concept, encoder_id, k.

#pragma once

#include <charconv>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lorashield/error.hpp"
#include "lorashield/matrix.hpp"
#include "lorashield/tensor_map.hpp"

namespace lorashield {

inline constexpr int kDefaultConceptPairs = 5;
inline constexpr int kMaxConceptPairs = 16;

struct ConceptSpec {
  std::string label;
  std::string encoder_id;
  std::vector<Mat<double>> synonyms;
  std::vector<Mat<double>> antonyms;  // neutral copy where absent
  std::vector<bool> antonym_absent;
  Mat<double> neutral;

  std::size_t k() const { return synonyms.size(); }
  Eigen::Index tokens() const { return neutral.rows(); }
  Eigen::Index width() const { return neutral.cols(); }

  bool operator==(const ConceptSpec& other) const {
    auto same = [](const std::vector<Mat<double>>& x, const std::vector<Mat<double>>& y) {
      if (x.size() != y.size()) return false;
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i].rows() != y[i].rows() || x[i].cols() != y[i].cols() || x[i] != y[i]) return false;
      }
      return true;
    };
    return label == other.label && encoder_id == other.encoder_id && antonym_absent == other.antonym_absent &&
           same(synonyms, other.synonyms) && same(antonyms, other.antonyms) &&
           same({neutral}, {other.neutral});
  }
};

/// The anchor for pair i: the antonym, or the neutral embedding when the
/// bundle flagged that antonym as absent.
inline const Mat<double>& antonym_or_neutral(const ConceptSpec& spec, std::size_t i) {
  if (i >= spec.k()) {
    fail(ErrorCode::kIndexOutOfRange, "pair index " + std::to_string(i) + " out of range for K=" +
                                          std::to_string(spec.k()));
  }
  return spec.antonym_absent[i] ? spec.neutral : spec.antonyms[i];
}

namespace detail {

inline std::optional<std::size_t> parse_index(std::string_view text) {
  std::size_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) return std::nullopt;
  return value;
}

inline void check_embedding(const Mat<double>& m, const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  if (m.rows() != rows || m.cols() != cols) {
    fail(ErrorCode::kShapeDisagreement, "'" + name + "' is " + shape_string(m.rows(), m.cols()) + ", expected " +
                                            shape_string(rows, cols));
  }
  if (!m.allFinite()) fail(ErrorCode::kNonFiniteInput, "'" + name + "' has non-finite entries");
}

inline Mat<double> embedding_matrix(const Tensor& tensor, const std::string& name) {
  if (tensor.shape.size() != 2) fail(ErrorCode::kShapeDisagreement, "'" + name + "' must be a 2-D L x n tensor");
  return to_matrix<double>(tensor);
}

}  // namespace detail

inline ConceptSpec parse_concept_spec(const TensorMap& map) {
  const Tensor* neutral = map.find("neutral");
  if (neutral == nullptr) fail(ErrorCode::kMissingNeutral, "bundle has no 'neutral' tensor");

  ConceptSpec spec;
  spec.neutral = detail::embedding_matrix(*neutral, "neutral");
  spec.label = map.metadata_value("concept").value_or("");
  spec.encoder_id = map.metadata_value("encoder_id").value_or("");
  const auto rows = spec.neutral.rows();
  const auto cols = spec.neutral.cols();
  detail::check_embedding(spec.neutral, "neutral", rows, cols);

  std::map<std::size_t, const Tensor*> syn;
  std::map<std::size_t, const Tensor*> ant;
  std::map<std::size_t, bool> absent;
  for (const auto& [name, tensor] : map.entries()) {
    std::string_view view(name);
    if (view.starts_with("syn/")) {
      auto i = detail::parse_index(view.substr(4));
      if (!i) fail(ErrorCode::kUnevenPairs, "unrecognized synonym tensor '" + name + "'");
      syn[*i] = &tensor;
    } else if (view.starts_with("ant/") && view.ends_with("/absent")) {
      auto i = detail::parse_index(view.substr(4, view.size() - 4 - 7));
      if (!i) fail(ErrorCode::kUnevenPairs, "unrecognized absent flag '" + name + "'");
      absent[*i] = true;
    } else if (view.starts_with("ant/")) {
      auto i = detail::parse_index(view.substr(4));
      if (!i) fail(ErrorCode::kUnevenPairs, "unrecognized antonym tensor '" + name + "'");
      ant[*i] = &tensor;
    }
  }

  std::size_t antonym_slots = ant.size();
  for (const auto& [i, flag] : absent) {
    if (!ant.contains(i)) ++antonym_slots;
  }
  if (syn.empty()) fail(ErrorCode::kUnevenPairs, "bundle has no synonym embeddings");
  if (syn.size() != antonym_slots) {
    fail(ErrorCode::kUnevenPairs, std::to_string(syn.size()) + " synonyms but " + std::to_string(antonym_slots) +
                                      " antonym slots");
  }
  const std::size_t k = syn.size();
  if (syn.rbegin()->first != k - 1) fail(ErrorCode::kUnevenPairs, "synonym indices are not 0..K-1");
  if (auto declared = map.metadata_value("k")) {
    if (declared != std::to_string(k)) {
      fail(ErrorCode::kUnevenPairs, "metadata declares k=" + *declared + " but bundle holds " + std::to_string(k));
    }
  }

  for (std::size_t i = 0; i < k; ++i) {
    const std::string syn_name = "syn/" + std::to_string(i);
    Mat<double> s = detail::embedding_matrix(*syn.at(i), syn_name);
    detail::check_embedding(s, syn_name, rows, cols);
    spec.synonyms.push_back(std::move(s));

    const bool is_absent = absent.contains(i);
    if (!is_absent && !ant.contains(i)) fail(ErrorCode::kUnevenPairs, "antonym slot " + std::to_string(i) + " missing");
    spec.antonym_absent.push_back(is_absent);
    if (is_absent) {
      spec.antonyms.push_back(spec.neutral);
    } else {
      const std::string ant_name = "ant/" + std::to_string(i);
      Mat<double> a = detail::embedding_matrix(*ant.at(i), ant_name);
      detail::check_embedding(a, ant_name, rows, cols);
      spec.antonyms.push_back(std::move(a));
    }
  }
  return spec;
}

inline ConceptSpec load_concept_spec(const std::filesystem::path& path) {
  return parse_concept_spec(load_container(path));
}

inline TensorMap concept_spec_to_tensor_map(const ConceptSpec& spec, Dtype dtype = Dtype::kF32) {
  TensorMap out;
  for (std::size_t i = 0; i < spec.k(); ++i) out.add("syn/" + std::to_string(i), to_tensor<double>(spec.synonyms[i], dtype));
  for (std::size_t i = 0; i < spec.k(); ++i) {
    if (spec.antonym_absent[i]) {
      Tensor flag;
      flag.dtype = dtype;
      flag.shape = {0};
      out.add("ant/" + std::to_string(i) + "/absent", std::move(flag));
    } else {
      out.add("ant/" + std::to_string(i), to_tensor<double>(spec.antonyms[i], dtype));
    }
  }
  out.add("neutral", to_tensor<double>(spec.neutral, dtype));
  out.set_metadata("concept", spec.label);
  out.set_metadata("encoder_id", spec.encoder_id);
  out.set_metadata("k", std::to_string(spec.k()));
  return out;
}

inline void save_concept_spec(const std::filesystem::path& path, const ConceptSpec& spec, Dtype dtype = Dtype::kF32) {
  save_container(path, concept_spec_to_tensor_map(spec, dtype));
}

/// Embeddings used only to measure collateral change. Stored as probe/<i>.
struct BenignProbeSet {
  std::vector<Mat<double>> probes;
};

inline BenignProbeSet parse_probe_set(const TensorMap& map) {
  BenignProbeSet set;
  std::map<std::size_t, const Tensor*> probes;
  for (const auto& [name, tensor] : map.entries()) {
    std::string_view view(name);
    if (!view.starts_with("probe/")) continue;
    auto i = detail::parse_index(view.substr(6));
    if (!i) fail(ErrorCode::kShapeDisagreement, "unrecognized probe tensor '" + name + "'");
    probes[*i] = &tensor;
  }
  if (probes.empty()) fail(ErrorCode::kShapeDisagreement, "probe bundle holds no probe/<i> tensors");
  for (const auto& [i, tensor] : probes) {
    const std::string name = "probe/" + std::to_string(i);
    Mat<double> m = detail::embedding_matrix(*tensor, name);
    if (!set.probes.empty()) detail::check_embedding(m, name, set.probes.front().rows(), set.probes.front().cols());
    if (!m.allFinite()) fail(ErrorCode::kNonFiniteInput, "'" + name + "' has non-finite entries");
    set.probes.push_back(std::move(m));
  }
  return set;
}

inline BenignProbeSet load_probe_set(const std::filesystem::path& path) { return parse_probe_set(load_container(path)); }

inline TensorMap probe_set_to_tensor_map(const BenignProbeSet& set, Dtype dtype = Dtype::kF32) {
  TensorMap out;
  for (std::size_t i = 0; i < set.probes.size(); ++i) {
    out.add("probe/" + std::to_string(i), to_tensor<double>(set.probes[i], dtype));
  }
  return out;
}

inline void check_probe_shape(const BenignProbeSet& set, const ConceptSpec& spec) {
  for (std::size_t i = 0; i < set.probes.size(); ++i) {
    detail::check_embedding(set.probes[i], "probe/" + std::to_string(i), spec.tokens(), spec.width());
  }
}

}  // namespace lorashield
