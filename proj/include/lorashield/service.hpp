// Copyright 2026 The lorashield Authors
// SPDX-License-Identifier: Apache-2.0

// Asynchronous edit service backed by a spool directory.
//
// Routes:
//   POST /v1/edits                          multipart: adapter, concept, config[, base] -> 202 {job_id}
//   GET  /v1/edits/{id}                     job JSON
//   GET  /v1/edits/{id}/artifacts/{kind}    kind = adapter | report
//   GET  /v1/bases                          registered base-model names
//   GET  /healthz
// Errors are {"code", "message", "field"?}.
//
// Spool layout, one directory per job:
//   <spool>/<job_id>/state.json
//   <spool>/<job_id>/adapter.safetensors, concept.safetensors, config.json
//   <spool>/<job_id>/edited.safetensors, report.json      (on success)
// Every file is written to a temporary name and renamed into place.

#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "lorashield/adapter.hpp"
#include "lorashield/concept.hpp"
#include "lorashield/diagnostics.hpp"
#include "lorashield/edit.hpp"
#include "lorashield/error.hpp"
#include "lorashield/tensor_map.hpp"

// After Eigen: glibc's resolv.h, pulled in by httplib, defines a `_res` macro.
#include <httplib.h>

namespace lorashield {

enum class JobState { kQueued, kRunning, kSucceeded, kFailed };

inline std::string_view job_state_name(JobState state) {
  switch (state) {
    case JobState::kQueued: return "queued";
    case JobState::kRunning: return "running";
    case JobState::kSucceeded: return "succeeded";
    case JobState::kFailed: return "failed";
  }
  return "unknown";
}

inline JobState parse_job_state(std::string_view name) {
  if (name == "queued") return JobState::kQueued;
  if (name == "running") return JobState::kRunning;
  if (name == "succeeded") return JobState::kSucceeded;
  if (name == "failed") return JobState::kFailed;
  fail(ErrorCode::kProtocolError, "unknown job state '" + std::string(name) + "'");
}

inline bool is_valid_transition(JobState from, JobState to) {
  switch (from) {
    case JobState::kQueued: return to == JobState::kRunning;
    case JobState::kRunning: return to == JobState::kSucceeded || to == JobState::kFailed;
    default: return false;
  }
}

struct EditJob {
  std::string id;
  JobState state = JobState::kQueued;
  std::int64_t submitted_at = 0;  // unix seconds
  std::optional<std::int64_t> completed_at;
  std::string base;
  nlohmann::json config;
  std::optional<std::string> failure;
  std::map<std::string, std::string> etags;  // artifact kind -> ETag, present iff succeeded
};

inline nlohmann::json job_to_json(const EditJob& job) {
  nlohmann::json out;
  out["job_id"] = job.id;
  out["state"] = job_state_name(job.state);
  out["submitted_at"] = job.submitted_at;
  out["completed_at"] = job.completed_at ? nlohmann::json(*job.completed_at) : nlohmann::json(nullptr);
  out["base"] = job.base;
  out["config"] = job.config;
  if (job.failure) out["failure"] = *job.failure;
  if (job.state == JobState::kSucceeded) {
    nlohmann::json artifacts;
    for (const auto& [kind, etag] : job.etags) artifacts[kind] = "/v1/edits/" + job.id + "/artifacts/" + kind;
    out["artifacts"] = std::move(artifacts);
  }
  return out;
}

inline EditJob job_from_json(const nlohmann::json& doc) {
  EditJob job;
  job.id = doc.at("job_id").get<std::string>();
  job.state = parse_job_state(doc.at("state").get<std::string>());
  job.submitted_at = doc.at("submitted_at").get<std::int64_t>();
  if (doc.contains("completed_at") && !doc["completed_at"].is_null()) {
    job.completed_at = doc["completed_at"].get<std::int64_t>();
  }
  job.base = doc.value("base", "");
  job.config = doc.value("config", nlohmann::json::object());
  if (doc.contains("failure")) job.failure = doc["failure"].get<std::string>();
  if (doc.contains("etags")) job.etags = doc["etags"].get<std::map<std::string, std::string>>();
  return job;
}

/// 64-bit FNV-1a, used as a content-addressed ETag.
inline std::string content_etag(std::string_view bytes) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  char buf[24];
  std::snprintf(buf, sizeof(buf), "\"%016llx\"", static_cast<unsigned long long>(hash));
  return buf;
}

/// Error surfaced to HTTP clients.
struct ServiceError {
  int status;
  std::string code;
  std::string message;
  std::optional<std::string> field;

  nlohmann::json body() const {
    nlohmann::json out{{"code", code}, {"message", message}};
    if (field) out["field"] = *field;
    return out;
  }
};

struct ServiceOptions {
  std::filesystem::path spool;
  std::map<std::string, std::filesystem::path> bases;  // name -> weight container
  int workers = 1;                                     // concurrent jobs
  int edit_workers = 1;                                // layer lanes within a job
  std::size_t queue_depth = 64;
  std::size_t max_payload = std::size_t{512} << 20;
  std::chrono::seconds ttl{24 * 3600};
};

class EditService {
 public:
  explicit EditService(ServiceOptions options) : options_(std::move(options)) {
    std::filesystem::create_directories(options_.spool);
    for (const auto& [name, path] : options_.bases) bases_.emplace(name, load_base_weights(path));
    recover();
  }

  EditService(const EditService&) = delete;
  EditService& operator=(const EditService&) = delete;

  ~EditService() { stop(); }

  void start() {
    std::lock_guard lock(mutex_);
    if (!workers_.empty()) return;
    stopping_ = false;
    for (int i = 0; i < std::max(1, options_.workers); ++i) workers_.emplace_back([this] { work(); });
  }

  void stop() {
    {
      std::lock_guard lock(mutex_);
      stopping_ = true;
    }
    wake_.notify_all();
    workers_.clear();  // jthread joins
  }

  std::vector<std::string> base_names() const {
    std::vector<std::string> names;
    for (const auto& [name, base] : bases_) names.push_back(name);
    return names;
  }

  /// Validates and spools a request, then enqueues it.
  std::string submit(const std::string& adapter_bytes, const std::string& concept_bytes,
                     const std::string& config_text, std::string base_name = {}) {
    nlohmann::json config_doc;
    try {
      config_doc = config_text.empty() ? nlohmann::json::object() : nlohmann::json::parse(config_text);
    } catch (const nlohmann::json::exception& e) {
      throw ServiceError{400, "InvalidConfig", std::string("config is not valid JSON: ") + e.what(), "config"};
    }
    if (!config_doc.is_object()) throw ServiceError{400, "InvalidConfig", "config must be a JSON object", "config"};
    if (base_name.empty() && config_doc.contains("base") && config_doc["base"].is_string()) {
      base_name = config_doc["base"].get<std::string>();
    }
    EditConfig config;
    try {
      config = config_from_json(config_doc);
    } catch (const Error& e) {
      const std::string message = e.what();
      const auto colon = message.find(": ");
      const auto field_end = message.find(':', colon + 2);
      std::string field = field_end == std::string::npos ? "config" : message.substr(colon + 2, field_end - colon - 2);
      throw ServiceError{400, std::string(to_string(e.code())), message, field};
    }
    if (base_name.empty()) throw ServiceError{400, "InvalidConfig", "a base model name is required", "base"};
    auto base_it = bases_.find(base_name);
    if (base_it == bases_.end()) {
      throw ServiceError{404, "UnknownBase", "base model '" + base_name + "' is not registered", "base"};
    }

    auto as_span = [](const std::string& s) {
      return std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size());
    };
    try {
      LoraAdapter adapter = parse_adapter(read_container(as_span(adapter_bytes)));
      for (const auto& name : resolve_target_layers(adapter, config.patterns)) {
        if (base_it->second.find(name) == nullptr) {
          fail(ErrorCode::kMissingBaseWeight, "base '" + base_name + "' has no weight for layer '" + name + "'");
        }
      }
    } catch (const Error& e) {
      throw ServiceError{400, std::string(to_string(e.code())), e.what(), "adapter"};
    }
    try {
      parse_concept_spec(read_container(as_span(concept_bytes)));
    } catch (const Error& e) {
      throw ServiceError{400, std::string(to_string(e.code())), e.what(), "concept"};
    }

    EditJob job;
    job.id = new_job_id();
    job.submitted_at = now_seconds();
    job.base = base_name;
    job.config = config_to_json(config);

    {
      std::lock_guard lock(mutex_);
      if (queue_.size() >= options_.queue_depth) throw ServiceError{503, "QueueFull", "edit queue is full", {}};
    }
    const auto dir = job_dir(job.id);
    std::filesystem::create_directories(dir);
    write_file(dir / "adapter.safetensors", adapter_bytes);
    write_file(dir / "concept.safetensors", concept_bytes);
    write_file(dir / "config.json", job.config.dump(2));
    persist(job);
    {
      std::lock_guard lock(mutex_);
      if (queue_.size() >= options_.queue_depth) {
        std::error_code ec;
        std::filesystem::remove_all(dir, ec);
        throw ServiceError{503, "QueueFull", "edit queue is full", {}};
      }
      jobs_.emplace(job.id, job);
      queue_.push_back(job.id);
    }
    wake_.notify_one();
    return job.id;
  }

  std::optional<EditJob> get_job(const std::string& id) const {
    std::lock_guard lock(mutex_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
  }

  struct Artifact {
    std::string bytes;
    std::string etag;
    std::string content_type;
  };

  Artifact download_artifact(const std::string& id, const std::string& kind) const {
    auto job = get_job(id);
    if (!job) throw ServiceError{404, "UnknownJob", "no job '" + id + "'", {}};
    if (kind != "adapter" && kind != "report") {
      throw ServiceError{404, "UnknownArtifact", "artifact kind must be 'adapter' or 'report'", "kind"};
    }
    if (job->state != JobState::kSucceeded) {
      throw ServiceError{409, "JobNotSucceeded", "job is " + std::string(job_state_name(job->state)), {}};
    }
    const auto file = job_dir(id) / (kind == "adapter" ? "edited.safetensors" : "report.json");
    const auto raw = read_file(file);
    Artifact out;
    out.bytes.assign(raw.begin(), raw.end());
    out.etag = job->etags.at(kind);
    out.content_type = kind == "adapter" ? "application/octet-stream" : "application/json";
    return out;
  }

  /// Drops completed jobs older than the TTL; returns how many were removed.
  std::size_t expire(std::int64_t now) {
    std::vector<std::string> doomed;
    {
      std::lock_guard lock(mutex_);
      for (auto it = jobs_.begin(); it != jobs_.end();) {
        const auto& job = it->second;
        if (job.completed_at && now - *job.completed_at >= options_.ttl.count()) {
          doomed.push_back(job.id);
          it = jobs_.erase(it);
        } else {
          ++it;
        }
      }
    }
    for (const auto& id : doomed) {
      std::error_code ec;
      std::filesystem::remove_all(job_dir(id), ec);
    }
    return doomed.size();
  }

  /// Blocks until the job leaves queued/running or the timeout elapses.
  std::optional<EditJob> wait_for(const std::string& id, std::chrono::milliseconds timeout) const {
    std::unique_lock lock(mutex_);
    done_.wait_for(lock, timeout, [&] {
      auto it = jobs_.find(id);
      return it == jobs_.end() || it->second.state == JobState::kSucceeded || it->second.state == JobState::kFailed;
    });
    auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
  }

  void register_routes(httplib::Server& server) {
    server.set_payload_max_length(options_.max_payload);
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (!res.body.empty()) return;
      const char* code = res.status == 413 ? "PayloadTooLarge" : res.status == 404 ? "NotFound" : "HttpError";
      res.set_content(nlohmann::json{{"code", code}, {"message", httplib::status_message(res.status)}}.dump(),
                      "application/json");
    });

    server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"status":"ok"})", "application/json");
    });
    server.Get("/v1/bases", [this](const httplib::Request&, httplib::Response& res) {
      res.set_content(nlohmann::json{{"bases", base_names()}}.dump(), "application/json");
    });
    server.Post("/v1/edits", [this](const httplib::Request& req, httplib::Response& res) {
      handle([&] {
        if (!req.is_multipart_form_data()) {
          throw ServiceError{400, "InvalidRequest", "expected multipart/form-data", {}};
        }
        for (const char* field : {"adapter", "concept"}) {
          if (!req.has_file(field)) {
            throw ServiceError{400, "InvalidRequest", std::string("missing multipart field '") + field + "'", field};
          }
        }
        const std::string config = req.has_file("config") ? req.get_file_value("config").content : "";
        const std::string base = req.has_file("base") ? req.get_file_value("base").content : "";
        const auto id = submit(req.get_file_value("adapter").content, req.get_file_value("concept").content, config,
                               base);
        res.status = 202;
        res.set_content(nlohmann::json{{"job_id", id}}.dump(), "application/json");
      }, res);
    });
    server.Get(R"(/v1/edits/([A-Za-z0-9-]+))", [this](const httplib::Request& req, httplib::Response& res) {
      handle([&] {
        auto job = get_job(req.matches[1]);
        if (!job) throw ServiceError{404, "UnknownJob", "no job '" + std::string(req.matches[1]) + "'", {}};
        res.set_content(job_to_json(*job).dump(), "application/json");
      }, res);
    });
    server.Get(R"(/v1/edits/([A-Za-z0-9-]+)/artifacts/([a-z]+))",
               [this](const httplib::Request& req, httplib::Response& res) {
                 handle([&] {
                   auto artifact = download_artifact(req.matches[1], req.matches[2]);
                   res.set_header("ETag", artifact.etag);
                   if (req.get_header_value("If-None-Match") == artifact.etag) {
                     res.status = 304;
                     return;
                   }
                   res.set_content(std::move(artifact.bytes), artifact.content_type);
                 }, res);
               });
  }

 private:
  template <typename Fn>
  static void handle(Fn&& fn, httplib::Response& res) {
    try {
      fn();
    } catch (const ServiceError& e) {
      res.status = e.status;
      res.set_content(e.body().dump(), "application/json");
    } catch (const std::exception& e) {
      res.status = 500;
      res.set_content(nlohmann::json{{"code", "Internal"}, {"message", e.what()}}.dump(), "application/json");
    }
  }

  static std::int64_t now_seconds() {
    return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
  }

  std::string new_job_id() {
    std::lock_guard lock(rng_mutex_);
    std::uniform_int_distribution<int> nibble(0, 15);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string id;
    for (int i = 0; i < 32; ++i) {
      if (i == 8 || i == 12 || i == 16 || i == 20) id.push_back('-');
      int v = nibble(rng_);
      if (i == 12) v = 4;               // version
      if (i == 16) v = 8 | (v & 0x3);   // variant
      id.push_back(kHex[v]);
    }
    return id;
  }

  std::filesystem::path job_dir(const std::string& id) const { return options_.spool / id; }

  void persist(const EditJob& job) const {
    nlohmann::json doc = job_to_json(job);
    doc["etags"] = job.etags;
    write_file(job_dir(job.id) / "state.json", doc.dump(2));
  }

  /// Loads every job from the spool; queued and interrupted jobs go back on
  /// the queue in submission order.
  void recover() {
    std::vector<EditJob> pending;
    for (const auto& entry : std::filesystem::directory_iterator(options_.spool)) {
      if (!entry.is_directory()) continue;
      const auto state_file = entry.path() / "state.json";
      if (!std::filesystem::exists(state_file)) continue;
      try {
        const auto raw = read_file(state_file);
        EditJob job = job_from_json(nlohmann::json::parse(raw.begin(), raw.end()));
        if (job.state == JobState::kRunning) {
          job.state = JobState::kQueued;
          persist(job);
        }
        if (job.state == JobState::kQueued) pending.push_back(job);
        jobs_.emplace(job.id, std::move(job));
      } catch (const std::exception&) {
        // Unreadable state file: leave the directory for inspection.
      }
    }
    std::sort(pending.begin(), pending.end(), [](const EditJob& a, const EditJob& b) {
      return std::pair(a.submitted_at, a.id) < std::pair(b.submitted_at, b.id);
    });
    for (const auto& job : pending) queue_.push_back(job.id);
  }

  void transition(const std::string& id, JobState to, const std::function<void(EditJob&)>& mutate = {}) {
    EditJob snapshot;
    {
      std::lock_guard lock(mutex_);
      auto& job = jobs_.at(id);
      if (!is_valid_transition(job.state, to)) {
        throw std::logic_error("invalid job transition " + std::string(job_state_name(job.state)) + " -> " +
                               std::string(job_state_name(to)));
      }
      EditJob next = job;
      next.state = to;
      if (mutate) mutate(next);
      persist(next);
      job = next;
      snapshot = job;
    }
    if (to == JobState::kSucceeded || to == JobState::kFailed) done_.notify_all();
  }

  void run_job(const std::string& id) {
    const auto dir = job_dir(id);
    std::string base_name;
    {
      std::lock_guard lock(mutex_);
      base_name = jobs_.at(id).base;
    }
    try {
      const auto config_raw = read_file(dir / "config.json");
      EditConfig config = config_from_json(nlohmann::json::parse(config_raw.begin(), config_raw.end()));
      config.workers = options_.edit_workers;
      auto base_it = bases_.find(base_name);
      if (base_it == bases_.end()) fail(ErrorCode::kMissingBaseWeight, "base '" + base_name + "' is not registered");
      const LoraAdapter adapter = load_adapter(dir / "adapter.safetensors");
      const ConceptSpec spec = load_concept_spec(dir / "concept.safetensors");
      auto outcome = edit_adapter(adapter, base_it->second, spec, config);

      const auto adapter_bytes = write_container(adapter_to_tensor_map(outcome.adapter));
      const std::string report = report_json_text(outcome.report);
      write_file(dir / "edited.safetensors", adapter_bytes);
      write_file(dir / "report.json", report);
      const std::string adapter_etag =
          content_etag(std::string_view(reinterpret_cast<const char*>(adapter_bytes.data()), adapter_bytes.size()));
      const std::string report_etag = content_etag(report);
      transition(id, JobState::kSucceeded, [&](EditJob& job) {
        job.completed_at = now_seconds();
        job.etags = {{"adapter", adapter_etag}, {"report", report_etag}};
      });
    } catch (const std::exception& e) {
      const std::string reason = e.what();
      transition(id, JobState::kFailed, [&](EditJob& job) {
        job.completed_at = now_seconds();
        job.failure = reason;
      });
    }
  }

  void work() {
    for (;;) {
      std::string id;
      {
        std::unique_lock lock(mutex_);
        wake_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
        if (stopping_) return;
        id = queue_.front();
        queue_.pop_front();
      }
      transition(id, JobState::kRunning);
      run_job(id);
    }
  }

  ServiceOptions options_;
  std::map<std::string, BaseWeights> bases_;

  mutable std::mutex mutex_;
  mutable std::condition_variable done_;
  std::condition_variable wake_;
  std::map<std::string, EditJob> jobs_;
  std::deque<std::string> queue_;
  bool stopping_ = false;
  std::vector<std::jthread> workers_;

  std::mutex rng_mutex_;
  std::mt19937_64 rng_{std::random_device{}()};
};

}  // namespace lorashield
