// Copyright 2026 The lorashield Authors
// SPDX-License-Identifier: Apache-2.0

// Seeded synthetic adapters, base weights and concept bundles.
//
// Embeddings share a common component (as token-sequence encodings of
// different prompts do); the target and anchor concepts differ from it by
// `concept_gap`, and each synonym/antonym by a further `synonym_noise`.
// Probes are independent standard normal matrices.

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "lorashield/adapter.hpp"
#include "lorashield/concept.hpp"
#include "lorashield/matrix.hpp"

namespace lorashield {

struct SyntheticOptions {
  int layers = 32;
  int in_features = 64;
  int out_features = 64;
  int rank = 8;
  int tokens = 4;
  int pairs = 5;
  int probes = 20;
  int absent_antonyms = 0;  // trailing antonym slots flagged absent
  double weight_scale = 0.25;
  double factor_scale = 0.05;
  double concept_gap = 0.1;
  double synonym_noise = 0.01;
  bool self_attention = false;  // every other layer pair is attn1 (not targeted by default)
  bool with_alpha = true;
  LoraNaming naming = LoraNaming::kDownUp;
  Dtype dtype = Dtype::kF32;
  std::uint64_t seed = 0;
};

struct SyntheticFixture {
  LoraAdapter adapter;
  BaseWeights base;
  ConceptSpec spec;
  BenignProbeSet probes;
};

/// UNet-style layer names: block/attention/projection combinations.
inline std::vector<std::string> synthetic_layer_names(int count, bool self_attention) {
  static const char* kBlocks[] = {"down_blocks_0", "down_blocks_1", "down_blocks_2", "mid_block",
                                  "up_blocks_1",   "up_blocks_2",   "up_blocks_3",   "up_blocks_0"};
  std::vector<std::string> names;
  for (int i = 0; static_cast<int>(names.size()) < count; ++i) {
    const int per_group = self_attention ? 4 : 2;
    const int group = i / per_group;
    const int slot = i % per_group;
    const std::string block = kBlocks[group % 8];
    const std::string attention = std::to_string(group / 8);
    const std::string attn = self_attention && slot >= 2 ? "attn1" : "attn2";
    const std::string proj = slot % 2 == 0 ? "to_k" : "to_v";
    names.push_back("lora_unet_" + block + "_attentions_" + attention + "_transformer_blocks_0_" + attn + "_" + proj);
  }
  return names;
}

namespace detail {

inline Mat<double> gaussian(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double scale) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat<double> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * normal(rng);
  return m;
}

/// Rounds through the storage dtype so in-memory and on-disk fixtures agree.
inline Mat<double> quantize(const Mat<double>& m, Dtype dtype) {
  return to_matrix<double>(to_tensor<double>(m, dtype));
}

}  // namespace detail

inline ConceptSpec synthetic_concept(std::mt19937_64& rng, const SyntheticOptions& opt, const std::string& label) {
  const Eigen::Index l = opt.tokens;
  const Eigen::Index n = opt.in_features;
  const Mat<double> common = detail::gaussian(rng, l, n, 1.0);
  const Mat<double> target = common + detail::gaussian(rng, l, n, opt.concept_gap);
  const Mat<double> anchor = common + detail::gaussian(rng, l, n, opt.concept_gap);
  ConceptSpec spec;
  spec.label = label;
  spec.encoder_id = "synthetic";
  spec.neutral = detail::quantize(common + detail::gaussian(rng, l, n, opt.concept_gap), opt.dtype);
  for (int i = 0; i < opt.pairs; ++i) {
    spec.synonyms.push_back(
        detail::quantize(target + detail::gaussian(rng, l, n, opt.synonym_noise), opt.dtype));
    const bool absent = i >= opt.pairs - opt.absent_antonyms;
    const Mat<double> antonym = anchor + detail::gaussian(rng, l, n, opt.synonym_noise);
    spec.antonym_absent.push_back(absent);
    spec.antonyms.push_back(absent ? spec.neutral : detail::quantize(antonym, opt.dtype));
  }
  return spec;
}

inline SyntheticFixture make_synthetic_fixture(const SyntheticOptions& opt) {
  std::mt19937_64 rng(opt.seed);
  SyntheticFixture fx;
  fx.spec = synthetic_concept(rng, opt, "synthetic-target");
  for (int i = 0; i < opt.probes; ++i) {
    fx.probes.probes.push_back(detail::quantize(detail::gaussian(rng, opt.tokens, opt.in_features, 1.0), opt.dtype));
  }

  TensorMap map;
  map.set_metadata("ss_sd_model_name", "synthetic-base");
  for (const auto& name : synthetic_layer_names(opt.layers, opt.self_attention)) {
    LoraLayer layer;
    layer.name = name;
    layer.naming = opt.naming;
    layer.dtype = opt.dtype;
    layer.alpha_dtype = opt.dtype;
    layer.a = detail::quantize(detail::gaussian(rng, opt.rank, opt.in_features, opt.factor_scale), opt.dtype);
    layer.b = detail::quantize(detail::gaussian(rng, opt.out_features, opt.rank, opt.factor_scale), opt.dtype);
    layer.has_alpha = opt.with_alpha;
    layer.stored_alpha = static_cast<double>(opt.rank);
    map.add(detail::tensor_name(name, detail::LoraPart::kA, opt.naming), to_tensor<double>(layer.a, opt.dtype));
    map.add(detail::tensor_name(name, detail::LoraPart::kB, opt.naming), to_tensor<double>(layer.b, opt.dtype));
    if (opt.with_alpha) {
      map.add(detail::tensor_name(name, detail::LoraPart::kAlpha, opt.naming),
              scalar_tensor(layer.stored_alpha, opt.dtype));
    }
    fx.base.layers.emplace(
        name, detail::quantize(detail::gaussian(rng, opt.in_features, opt.out_features, opt.weight_scale), opt.dtype));
  }
  fx.base.source = "synthetic";
  fx.adapter = parse_adapter(std::move(map));
  return fx;
}

}  // namespace lorashield
