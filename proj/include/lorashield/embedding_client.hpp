// Copyright 2026 The lorashield Authors
// SPDX-License-Identifier: Apache-2.0

// Client for the embedding service protocol:
//   POST /v1/expand {"concept": str, "k": int} -> {"synonyms": [str], "antonyms": [str]}
//   POST /v1/embed  {"texts": [str]}           -> {"embeddings": [[[float]]], "shape": [L, n]}
// Optional; nothing else in the library needs network access.

#pragma once

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "lorashield/concept.hpp"
#include "lorashield/error.hpp"

// After Eigen: glibc's resolv.h, pulled in by httplib, defines a `_res` macro.
#include <httplib.h>

namespace lorashield {

struct FetchOptions {
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{500};
  std::chrono::seconds timeout{30};
  std::string encoder_id;  // recorded in the bundle; defaults to the endpoint
  std::optional<std::filesystem::path> output;
  /// Replaceable for tests.
  std::function<void(std::chrono::milliseconds)> sleep = [](std::chrono::milliseconds d) {
    std::this_thread::sleep_for(d);
  };
};

namespace detail {

inline nlohmann::json post_json(httplib::Client& client, const std::string& path, const nlohmann::json& body,
                                const FetchOptions& options) {
  auto backoff = options.initial_backoff;
  std::string last_error;
  for (int attempt = 1; attempt <= options.attempts; ++attempt) {
    auto res = client.Post(path, body.dump(), "application/json");
    std::chrono::milliseconds wait = backoff;
    if (!res) {
      last_error = httplib::to_string(res.error());
    } else if (res->status >= 200 && res->status < 300) {
      try {
        return nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::kProtocolError, path + ": response is not JSON: " + e.what());
      }
    } else if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      if (res->has_header("Retry-After")) {
        const auto seconds = std::atol(res->get_header_value("Retry-After").c_str());
        wait = std::max(wait, std::chrono::milliseconds(seconds * 1000));
      }
    } else {
      fail(ErrorCode::kProtocolError, path + ": HTTP " + std::to_string(res->status) + ": " + res->body);
    }
    if (attempt < options.attempts) {
      options.sleep(wait);
      backoff *= 2;
    }
  }
  fail(ErrorCode::kServiceUnavailable, path + " failed after " + std::to_string(options.attempts) +
                                           " attempts: " + last_error);
}

inline std::vector<std::string> string_list(const nlohmann::json& doc, const char* key) {
  if (!doc.is_object() || !doc.contains(key) || !doc[key].is_array()) {
    fail(ErrorCode::kProtocolError, std::string("expand response lacks '") + key + "'");
  }
  std::vector<std::string> out;
  for (const auto& item : doc[key]) {
    if (!item.is_string()) fail(ErrorCode::kProtocolError, std::string("'") + key + "' must hold strings");
    out.push_back(item.get<std::string>());
  }
  return out;
}

inline Mat<double> embed_one(httplib::Client& client, const std::string& text, const FetchOptions& options) {
  const auto doc = post_json(client, "/v1/embed", {{"texts", {text}}}, options);
  if (!doc.is_object() || !doc.contains("embeddings") || !doc.contains("shape")) {
    fail(ErrorCode::kProtocolError, "embed response lacks 'embeddings' or 'shape'");
  }
  const auto& shape = doc["shape"];
  if (!shape.is_array() || shape.size() != 2 || !shape[0].is_number_unsigned() || !shape[1].is_number_unsigned()) {
    fail(ErrorCode::kProtocolError, "embed response 'shape' must be [L, n]");
  }
  const auto rows = shape[0].get<Eigen::Index>();
  const auto cols = shape[1].get<Eigen::Index>();
  const auto& batch = doc["embeddings"];
  if (!batch.is_array() || batch.size() != 1 || !batch[0].is_array() ||
      static_cast<Eigen::Index>(batch[0].size()) != rows) {
    fail(ErrorCode::kProtocolError, "embed response must hold one L x n matrix per text");
  }
  Mat<double> out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = batch[0][static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      fail(ErrorCode::kProtocolError, "embedding row width disagrees with 'shape'");
    }
    for (Eigen::Index j = 0; j < cols; ++j) {
      const auto& v = row[static_cast<std::size_t>(j)];
      if (!v.is_number()) fail(ErrorCode::kProtocolError, "embedding values must be numbers");
      out(i, j) = v.get<double>();
    }
  }
  return out;
}

}  // namespace detail

/// One expansion request, then one embedding request per synonym, per
/// returned antonym, and for the empty string. Missing antonyms are flagged
/// absent. The result is validated by reloading it as a bundle.
inline ConceptSpec fetch_concept_bundle(const std::string& endpoint, const std::string& concept_name, int k,
                                        const FetchOptions& options = {}) {
  if (k < 1 || k > kMaxConceptPairs) {
    fail(ErrorCode::kInvalidConfig, "k must lie in [1, " + std::to_string(kMaxConceptPairs) + "]");
  }
  httplib::Client client(endpoint);
  client.set_connection_timeout(options.timeout);
  client.set_read_timeout(options.timeout);

  const auto expansion = detail::post_json(client, "/v1/expand", {{"concept", concept_name}, {"k", k}}, options);
  auto synonyms = detail::string_list(expansion, "synonyms");
  auto antonyms = detail::string_list(expansion, "antonyms");
  if (static_cast<int>(synonyms.size()) < k) {
    fail(ErrorCode::kProtocolError, "service returned " + std::to_string(synonyms.size()) + " synonyms, need " +
                                        std::to_string(k));
  }
  synonyms.resize(static_cast<std::size_t>(k));
  if (static_cast<int>(antonyms.size()) > k) antonyms.resize(static_cast<std::size_t>(k));

  ConceptSpec spec;
  spec.label = concept_name;
  spec.encoder_id = options.encoder_id.empty() ? endpoint : options.encoder_id;
  for (const auto& text : synonyms) spec.synonyms.push_back(detail::embed_one(client, text, options));
  std::vector<Mat<double>> present;
  for (const auto& text : antonyms) present.push_back(detail::embed_one(client, text, options));
  spec.neutral = detail::embed_one(client, "", options);
  for (int i = 0; i < k; ++i) {
    const bool absent = i >= static_cast<int>(present.size());
    spec.antonym_absent.push_back(absent);
    spec.antonyms.push_back(absent ? spec.neutral : present[static_cast<std::size_t>(i)]);
  }

  // F64 keeps the service's values exact through the bundle roundtrip.
  TensorMap bundle = concept_spec_to_tensor_map(spec, Dtype::kF64);
  ConceptSpec validated = parse_concept_spec(bundle);
  if (options.output) save_container(*options.output, bundle);
  return validated;
}

}  // namespace lorashield
