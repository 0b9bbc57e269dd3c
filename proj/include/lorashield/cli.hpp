// Copyright 2026 The lorashield Authors
// SPDX-License-Identifier: Apache-2.0

// Command implementations behind the `lorashield` executable. Each command
// parses its flags, calls into the library and maps failures onto the exit
// code contract:
//
//   0 success, 1 verification failure, 2 validation, 3 numerical, 4 I/O.

#pragma once

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "lorashield/adapter.hpp"
#include "lorashield/concept.hpp"
#include "lorashield/diagnostics.hpp"
#include "lorashield/edit.hpp"
#include "lorashield/embedding_client.hpp"
#include "lorashield/error.hpp"
#include "lorashield/service.hpp"
#include "lorashield/synthetic.hpp"
#include "lorashield/verify.hpp"

// After Eigen: glibc's resolv.h, pulled in by httplib, defines a `_res` macro.
#include <httplib.h>

namespace lorashield {

enum ExitCode : int {
  kExitOk = 0,
  kExitVerifyFailed = 1,
  kExitValidation = 2,
  kExitNumerical = 3,
  kExitIo = 4,
};

inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNonFiniteLoss:
    case ErrorCode::kNoConvergence:
      return kExitNumerical;
    case ErrorCode::kMalformedHeader:
    case ErrorCode::kOverlappingOffsets:
    case ErrorCode::kUnsupportedDtype:
    case ErrorCode::kIo:
    case ErrorCode::kServiceUnavailable:
    case ErrorCode::kProtocolError:
      return kExitIo;
    default:
      return kExitValidation;
  }
}

namespace cli {

/// Flag values for `edit`. Unset optionals fall back to EditConfig defaults.
struct EditArgs {
  std::string adapter;
  std::string base;
  std::string concept_path;
  std::string probes;
  std::string out;
  std::string report;
  EditConfig config;
  std::optional<int> rank;
  std::string compute_dtype = "F32";
};

struct VerifyArgs {
  std::string original;
  std::string edited;
  std::string base;
  std::string concept_path;
  std::string probes;
  std::vector<std::string> patterns = default_target_patterns();
  double alpha = 1.0;
  double max_shift = 0.5;
  double max_drift = 0.1;
  std::string format = "text";
};

struct MergeArgs {
  std::vector<std::string> adapters;
  std::vector<double> weights;
  std::string out;
  std::optional<int> rank;
};

struct FixtureArgs {
  std::string dir;
  SyntheticOptions options;
  std::string dtype = "F32";
  std::string naming = "down_up";
};

struct ServeArgs {
  std::string spool;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::vector<std::string> bases;
  int workers = 1;
  int edit_workers = 1;
  std::size_t queue_depth = 64;
  std::size_t max_payload_mb = 512;
  double ttl_hours = 24.0;
};

inline std::string default_report_path(const std::string& out) {
  std::filesystem::path p(out);
  p.replace_extension(".report.json");
  return p.string();
}

inline void require_parent_dir(const std::string& flag, const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty() && !std::filesystem::is_directory(parent)) {
    fail(ErrorCode::kInvalidConfig, flag + ": directory '" + parent.string() + "' does not exist");
  }
}

inline std::string fmt_metric(double v) {
  std::ostringstream s;
  s << std::setprecision(4) << v;
  return s.str();
}

inline int cmd_edit(const EditArgs& args, std::ostream& out, spdlog::logger& log) {
  EditConfig config = args.config;
  config.rank = args.rank;
  config.compute_dtype = parse_compute_dtype(args.compute_dtype);
  config.validate();
  require_parent_dir("--out", args.out);
  const std::string report_path = args.report.empty() ? default_report_path(args.out) : args.report;
  require_parent_dir("--report", report_path);

  const auto started = std::chrono::steady_clock::now();
  const LoraAdapter adapter = load_adapter(args.adapter);
  const BaseWeights base = load_base_weights(std::filesystem::path(args.base));
  const ConceptSpec spec = load_concept_spec(args.concept_path);
  std::optional<BenignProbeSet> probes;
  if (!args.probes.empty()) probes = load_probe_set(args.probes);
  for (const auto& w : adapter.warnings) log.warn("{}", w);
  log.info("editing '{}' with concept '{}' (K={}), {} steps", args.adapter, spec.label, spec.k(), config.steps);

  const EditOutcome outcome = edit_adapter(adapter, base, spec, config, probes ? &*probes : nullptr);
  for (const auto& w : outcome.report.warnings) log.warn("{}", w);
  save_adapter(args.out, outcome.adapter);
  write_file(report_path, report_json_text(outcome.report));

  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  const auto drift = outcome.report.max_benign_drift();
  out << "edited " << outcome.report.layers.size() << " layers: mean projection_shift "
      << fmt_metric(outcome.report.mean_projection_shift) << ", max benign_drift "
      << (drift ? fmt_metric(*drift) : std::string("n/a")) << ", " << std::fixed << std::setprecision(2) << elapsed
      << " s\n";
  out.unsetf(std::ios::fixed);
  return kExitOk;
}

inline std::string naming_name(LoraNaming naming) { return naming == LoraNaming::kAB ? "lora_A/lora_B" : "lora_down/lora_up"; }

inline int cmd_inspect(const std::string& path, bool as_json, std::ostream& out) {
  const LoraAdapter adapter = load_adapter(path);
  nlohmann::json doc;
  doc["layers"] = nlohmann::json::array();
  for (const auto& [name, layer] : adapter.layers) {
    doc["layers"].push_back({{"name", name},
                             {"shape", {layer.out_features(), layer.in_features()}},
                             {"rank", layer.rank()},
                             {"stored_alpha", layer.has_alpha ? nlohmann::json(layer.stored_alpha) : nlohmann::json()},
                             {"dtype", dtype_name(layer.dtype)},
                             {"naming", naming_name(layer.naming)}});
  }
  doc["base_model"] = adapter.base_model_hint ? nlohmann::json(*adapter.base_model_hint) : nlohmann::json();
  doc["warnings"] = adapter.warnings;
  if (as_json) {
    out << doc.dump(2) << "\n";
    return kExitOk;
  }
  out << "layer\tshape\trank\tstored_alpha\tdtype\n";
  for (const auto& row : doc["layers"]) {
    const auto& alpha = row["stored_alpha"];
    out << row["name"].get<std::string>() << '\t' << row["shape"][0].get<long>() << 'x' << row["shape"][1].get<long>()
        << '\t' << row["rank"].get<long>() << '\t' << (alpha.is_null() ? std::string("-") : fmt_metric(alpha.get<double>()))
        << '\t' << row["dtype"].get<std::string>() << '\n';
  }
  return kExitOk;
}

inline int cmd_verify(const VerifyArgs& args, std::ostream& out) {
  if (!(args.alpha > 0.0 && args.alpha <= 1.0)) fail(ErrorCode::kInvalidConfig, "--alpha: must lie in (0, 1]");
  if (args.format != "text" && args.format != "json") fail(ErrorCode::kInvalidConfig, "--format: expected text or json");
  const LoraAdapter original = load_adapter(args.original);
  const LoraAdapter edited = load_adapter(args.edited);
  const BaseWeights base = load_base_weights(std::filesystem::path(args.base));
  const ConceptSpec spec = load_concept_spec(args.concept_path);
  const BenignProbeSet probes = load_probe_set(args.probes);
  const VerifyResult result = verify_edit(original, edited, base, spec, probes, args.alpha, args.patterns);
  const bool passed = result.passes(args.max_shift, args.max_drift);
  if (args.format == "json") {
    out << verify_to_json(result, args.max_shift, args.max_drift).dump(2) << "\n";
  } else {
    out << "layer\tshift\tdrift_max\tparam_drift\n";
    for (const auto& layer : result.layers) {
      double shift = 0.0;
      for (double s : layer.projection_shift) shift += s;
      if (!layer.projection_shift.empty()) shift /= static_cast<double>(layer.projection_shift.size());
      double worst = 0.0;
      for (double d : layer.benign_drift) worst = std::max(worst, d);
      out << layer.name << '\t' << fmt_metric(shift) << '\t' << fmt_metric(worst) << '\t'
          << fmt_metric(layer.param_drift) << '\n';
    }
    out << "mean projection_shift " << fmt_metric(result.mean_projection_shift) << " (max " << args.max_shift << ")\n";
    out << "max benign_drift " << fmt_metric(result.max_benign_drift) << " (max " << args.max_drift << ")\n";
    out << (passed ? "PASS" : "FAIL") << "\n";
  }
  return passed ? kExitOk : kExitVerifyFailed;
}

inline int cmd_merge(const MergeArgs& args, std::ostream& out) {
  if (args.adapters.size() < 2) fail(ErrorCode::kInvalidConfig, "--adapter: at least two adapters are required");
  if (args.weights.size() != args.adapters.size()) {
    fail(ErrorCode::kInvalidConfig, "--weight: got " + std::to_string(args.weights.size()) + " weights for " +
                                        std::to_string(args.adapters.size()) + " adapters");
  }
  if (args.rank && *args.rank < 1) fail(ErrorCode::kInvalidConfig, "--rank: must be >= 1");
  require_parent_dir("--out", args.out);
  std::vector<LoraAdapter> loaded;
  loaded.reserve(args.adapters.size());
  for (const auto& path : args.adapters) loaded.push_back(load_adapter(path));
  std::vector<WeightedAdapter> inputs;
  for (std::size_t i = 0; i < loaded.size(); ++i) inputs.push_back({&loaded[i], args.weights[i]});
  std::optional<Eigen::Index> rank;
  if (args.rank) rank = *args.rank;
  const LoraAdapter merged = merge_adapters(inputs, rank);
  save_adapter(args.out, merged);
  out << "merged " << loaded.size() << " adapters into " << merged.layers.size() << " layers\n";
  return kExitOk;
}

inline int cmd_report(const std::string& path, const std::string& format, std::ostream& out) {
  if (format != "text" && format != "json") fail(ErrorCode::kInvalidConfig, "--format: expected text or json");
  const auto bytes = read_file(path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kIo, "'" + path + "' is not JSON: " + e.what());
  }
  std::string why;
  if (!is_valid_report_json(doc, &why)) fail(ErrorCode::kIo, "'" + path + "' is not an edit report: " + why);
  out << (format == "json" ? doc.dump(2) + "\n" : report_text_from_json(doc));
  return kExitOk;
}

inline int cmd_make_fixture(const FixtureArgs& args, std::ostream& out) {
  SyntheticOptions opt = args.options;
  opt.dtype = parse_dtype(args.dtype);
  if (args.naming == "ab") {
    opt.naming = LoraNaming::kAB;
  } else if (args.naming != "down_up") {
    fail(ErrorCode::kInvalidConfig, "--naming: expected down_up or ab");
  }
  if (opt.layers < 1 || opt.rank < 1 || opt.pairs < 1 || opt.pairs > kMaxConceptPairs || opt.tokens < 1) {
    fail(ErrorCode::kInvalidConfig, "fixture sizes must be positive and pairs <= " + std::to_string(kMaxConceptPairs));
  }
  const auto fx = make_synthetic_fixture(opt);
  const std::filesystem::path dir(args.dir);
  std::filesystem::create_directories(dir);
  save_adapter(dir / "adapter.safetensors", fx.adapter);
  save_container(dir / "base.safetensors", base_weights_to_tensor_map(fx.base, opt.dtype));
  save_concept_spec(dir / "concept.safetensors", fx.spec, opt.dtype);
  save_container(dir / "probes.safetensors", probe_set_to_tensor_map(fx.probes, opt.dtype));
  out << "wrote adapter, base, concept and probes to " << dir.string() << "\n";
  return kExitOk;
}

inline int cmd_fetch(const std::string& endpoint, const std::string& name, int k, const std::string& path,
                     const std::string& encoder_id, std::ostream& out) {
  require_parent_dir("--out", path);
  FetchOptions options;
  options.output = path;
  options.encoder_id = encoder_id;
  const ConceptSpec spec = fetch_concept_bundle(endpoint, name, k, options);
  std::size_t absent = 0;
  for (bool a : spec.antonym_absent) absent += a ? 1 : 0;
  out << "wrote bundle '" << spec.label << "' with K=" << spec.k() << " (" << absent << " absent antonyms), "
      << spec.tokens() << "x" << spec.width() << " embeddings\n";
  return kExitOk;
}

inline std::atomic<httplib::Server*>& active_server() {
  static std::atomic<httplib::Server*> server{nullptr};
  return server;
}

inline int cmd_serve(const ServeArgs& args, std::ostream& out, spdlog::logger& log) {
  ServiceOptions options;
  options.spool = args.spool;
  for (const auto& entry : args.bases) {
    const auto eq = entry.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == entry.size()) {
      fail(ErrorCode::kInvalidConfig, "--base: expected name=path, got '" + entry + "'");
    }
    options.bases.emplace(entry.substr(0, eq), entry.substr(eq + 1));
  }
  if (args.workers < 1 || args.edit_workers < 1 || args.queue_depth < 1) {
    fail(ErrorCode::kInvalidConfig, "--workers, --edit-workers and --queue-depth must be >= 1");
  }
  options.workers = args.workers;
  options.edit_workers = args.edit_workers;
  options.queue_depth = args.queue_depth;
  options.max_payload = args.max_payload_mb << 20;
  options.ttl = std::chrono::seconds(static_cast<std::int64_t>(args.ttl_hours * 3600.0));

  EditService service(options);
  httplib::Server server;
  service.register_routes(server);
  service.start();
  if (!server.bind_to_port(args.host, args.port)) fail(ErrorCode::kIo, "cannot bind " + args.host + ":" + std::to_string(args.port));
  active_server() = &server;
  auto previous_int = std::signal(SIGINT, [](int) {
    if (auto* s = active_server().load()) s->stop();
  });
  auto previous_term = std::signal(SIGTERM, [](int) {
    if (auto* s = active_server().load()) s->stop();
  });
  out << "listening on " << args.host << ":" << args.port << " with " << service.base_names().size() << " bases\n";
  out.flush();
  log.info("spool at {}", args.spool);
  server.listen_after_bind();
  active_server() = nullptr;
  std::signal(SIGINT, previous_int);
  std::signal(SIGTERM, previous_term);
  service.stop();
  return kExitOk;
}

inline std::shared_ptr<spdlog::logger> make_logger(std::ostream& err) {
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err, true);
  auto logger = std::make_shared<spdlog::logger>("lorashield", sink);
  logger->set_pattern("[%l] %v");
  spdlog::level::level_enum level = spdlog::level::warn;
  if (const char* env = std::getenv("LORASHIELD_LOG"); env != nullptr && *env != '\0') {
    level = spdlog::level::from_str(env);
  }
  logger->set_level(level);
  return logger;
}

/// Expands `edit --config FILE` into flags. Keys mirror the flag names
/// (`steps = 5`, `patterns = "*to_k*,*to_v*"`); a value is only taken from the
/// file when the command line does not already give that flag.
inline std::vector<std::string> expand_config_file(const std::vector<std::string>& args) {
  if (args.empty() || args.front() != "edit") return args;
  std::optional<std::string> path;
  std::vector<std::string> given;
  for (std::size_t i = 1; i < args.size(); ++i) {
    const std::string& token = args[i];
    if (token.rfind("--", 0) != 0) continue;
    const auto eq = token.find('=');
    const std::string flag = token.substr(0, eq);
    given.push_back(flag);
    if (flag == "--config") {
      if (eq != std::string::npos) {
        path = token.substr(eq + 1);
      } else if (i + 1 < args.size()) {
        path = args[i + 1];
      }
    }
  }
  if (!path) return args;
  if (!std::filesystem::is_regular_file(*path)) fail(ErrorCode::kInvalidConfig, "--config: file '" + *path + "' does not exist");
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML().from_file(*path);
  } catch (const CLI::Error& e) {
    fail(ErrorCode::kInvalidConfig, "--config: " + std::string(e.what()));
  }
  std::vector<std::string> expanded = args;
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    if (!item.parents.empty() && !(item.parents.size() == 1 && item.parents[0] == "edit")) {
      fail(ErrorCode::kInvalidConfig, "--config: unexpected section for key '" + item.fullname() + "'");
    }
    const std::string flag = "--" + item.name;
    if (flag == "--config") fail(ErrorCode::kInvalidConfig, "--config: files cannot nest");
    if (std::find(given.begin(), given.end(), flag) != given.end()) continue;
    expanded.push_back(flag);
    std::string joined;
    for (const auto& v : item.inputs) joined += (joined.empty() ? "" : ",") + v;
    expanded.push_back(joined);
  }
  return expanded;
}

}  // namespace cli

/// Entry point shared by the executable and in-process tests. `args` excludes
/// the program name.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  auto log = cli::make_logger(err);
  CLI::App app{"Data-free concept erasure for LoRA adapters", "lorashield"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  cli::EditArgs edit;
  auto* edit_cmd = app.add_subcommand("edit", "Erase a concept from an adapter");
  std::string edit_config;
  edit_cmd->add_option("--config", edit_config, "Flat key = value file mirroring the flag names; flags win")
      ->check(CLI::ExistingFile);
  edit_cmd->add_option("--adapter", edit.adapter, "Input adapter container")->required()->check(CLI::ExistingFile);
  edit_cmd->add_option("--base", edit.base, "Base-model weight container")->required()->check(CLI::ExistingFile);
  edit_cmd->add_option("--concept", edit.concept_path, "Concept embedding bundle")->required()->check(CLI::ExistingFile);
  edit_cmd->add_option("--probes", edit.probes, "Benign probe bundle")->check(CLI::ExistingFile);
  edit_cmd->add_option("--out", edit.out, "Edited adapter output path")->required();
  edit_cmd->add_option("--report", edit.report, "Report path (default: <out>.report.json)");
  edit_cmd->add_option("--steps", edit.config.steps, "Optimization steps")->capture_default_str();
  edit_cmd->add_option("--tau", edit.config.tau, "Perturbation radius")->capture_default_str();
  edit_cmd->add_option("--eta", edit.config.eta, "Preservation weight")->capture_default_str();
  edit_cmd->add_option("--lr", edit.config.learning_rate, "Adam learning rate")->capture_default_str();
  edit_cmd->add_option("--alpha", edit.config.merge_scale, "Merge scale")->capture_default_str();
  edit_cmd->add_option("--rank", edit.rank, "Output rank (default: keep each layer's rank)");
  edit_cmd->add_option("--patterns", edit.config.patterns, "Layer glob patterns")->delimiter(',')->capture_default_str();
  edit_cmd->add_option("--workers", edit.config.workers, "Layer worker threads (0: all cores)")->capture_default_str();
  edit_cmd->add_option("--seed", edit.config.seed, "Random seed")->capture_default_str();
  edit_cmd->add_option("--compute-dtype", edit.compute_dtype, "F32 or F64")->capture_default_str();

  std::string inspect_path;
  bool inspect_json = false;
  auto* inspect_cmd = app.add_subcommand("inspect", "List the layers of an adapter");
  inspect_cmd->add_option("--adapter", inspect_path, "Adapter container")->required()->check(CLI::ExistingFile);
  inspect_cmd->add_flag("--json", inspect_json, "Machine-readable output");

  cli::VerifyArgs verify;
  auto* verify_cmd = app.add_subcommand("verify", "Check an edited adapter against its original");
  verify_cmd->add_option("--adapter", verify.original, "Original adapter")->required()->check(CLI::ExistingFile);
  verify_cmd->add_option("--edited", verify.edited, "Edited adapter")->required()->check(CLI::ExistingFile);
  verify_cmd->add_option("--base", verify.base, "Base-model weights")->required()->check(CLI::ExistingFile);
  verify_cmd->add_option("--concept", verify.concept_path, "Concept bundle")->required()->check(CLI::ExistingFile);
  verify_cmd->add_option("--probes", verify.probes, "Benign probe bundle")->required()->check(CLI::ExistingFile);
  verify_cmd->add_option("--patterns", verify.patterns, "Layer glob patterns")->delimiter(',')->capture_default_str();
  verify_cmd->add_option("--alpha", verify.alpha, "Merge scale")->capture_default_str();
  verify_cmd->add_option("--max-shift", verify.max_shift, "Projection shift threshold")->capture_default_str();
  verify_cmd->add_option("--max-drift", verify.max_drift, "Benign drift threshold")->capture_default_str();
  verify_cmd->add_option("--format", verify.format, "text or json")->capture_default_str();

  cli::MergeArgs merge;
  auto* merge_cmd = app.add_subcommand("merge", "Weighted sum of adapters");
  merge_cmd->add_option("--adapter", merge.adapters, "Adapter (repeat)")->required()->check(CLI::ExistingFile);
  merge_cmd->add_option("--weight", merge.weights, "Weight per adapter (repeat)")->required();
  merge_cmd->add_option("--out", merge.out, "Merged adapter output path")->required();
  merge_cmd->add_option("--rank", merge.rank, "Output rank (default: largest input rank)");

  std::string report_path;
  std::string report_format = "text";
  auto* report_cmd = app.add_subcommand("report", "Render an edit report");
  report_cmd->add_option("--report", report_path, "Report JSON")->required()->check(CLI::ExistingFile);
  report_cmd->add_option("--format", report_format, "text or json")->capture_default_str();

  std::string fetch_endpoint;
  std::string fetch_name;
  int fetch_k = kDefaultConceptPairs;
  std::string fetch_out;
  std::string fetch_encoder;
  auto* fetch_cmd = app.add_subcommand("fetch", "Build a concept bundle from an embedding service");
  fetch_cmd->add_option("--endpoint", fetch_endpoint, "Service base URL")->required();
  fetch_cmd->add_option("--name", fetch_name, "Concept phrase")->required();
  fetch_cmd->add_option("--k", fetch_k, "Synonym/antonym pairs")->capture_default_str();
  fetch_cmd->add_option("--out", fetch_out, "Bundle output path")->required();
  fetch_cmd->add_option("--encoder-id", fetch_encoder, "Encoder id recorded in the bundle");

  cli::ServeArgs serve;
  auto* serve_cmd = app.add_subcommand("serve", "Run the editing HTTP service");
  serve_cmd->add_option("--spool", serve.spool, "Spool directory")->required();
  serve_cmd->add_option("--host", serve.host)->capture_default_str();
  serve_cmd->add_option("--port", serve.port)->capture_default_str();
  serve_cmd->add_option("--base", serve.bases, "Registered base, name=path (repeat)")->required();
  serve_cmd->add_option("--workers", serve.workers, "Concurrent jobs")->capture_default_str();
  serve_cmd->add_option("--edit-workers", serve.edit_workers, "Layer lanes per job")->capture_default_str();
  serve_cmd->add_option("--queue-depth", serve.queue_depth)->capture_default_str();
  serve_cmd->add_option("--max-payload-mb", serve.max_payload_mb)->capture_default_str();
  serve_cmd->add_option("--ttl-hours", serve.ttl_hours)->capture_default_str();

  cli::FixtureArgs fixture;
  auto* fixture_cmd = app.add_subcommand("make-fixture", "Write a seeded synthetic adapter, base, concept and probes");
  fixture_cmd->add_option("--dir", fixture.dir, "Output directory")->required();
  fixture_cmd->add_option("--layers", fixture.options.layers)->capture_default_str();
  fixture_cmd->add_option("--in-features", fixture.options.in_features)->capture_default_str();
  fixture_cmd->add_option("--out-features", fixture.options.out_features)->capture_default_str();
  fixture_cmd->add_option("--rank", fixture.options.rank)->capture_default_str();
  fixture_cmd->add_option("--tokens", fixture.options.tokens)->capture_default_str();
  fixture_cmd->add_option("--pairs", fixture.options.pairs)->capture_default_str();
  fixture_cmd->add_option("--probes", fixture.options.probes)->capture_default_str();
  fixture_cmd->add_option("--absent-antonyms", fixture.options.absent_antonyms)->capture_default_str();
  fixture_cmd->add_option("--factor-scale", fixture.options.factor_scale)->capture_default_str();
  fixture_cmd->add_flag("--self-attention", fixture.options.self_attention, "Add attn1 layers");
  fixture_cmd->add_flag("!--no-alpha", fixture.options.with_alpha, "Omit alpha tensors");
  fixture_cmd->add_option("--naming", fixture.naming, "down_up or ab")->capture_default_str();
  fixture_cmd->add_option("--dtype", fixture.dtype, "F16, F32 or F64")->capture_default_str();
  fixture_cmd->add_option("--seed", fixture.options.seed)->capture_default_str();

  try {
    std::vector<std::string> expanded;
    try {
      expanded = cli::expand_config_file(args);
    } catch (const Error& e) {
      err << "error: " << e.what() << "\n";
      return kExitValidation;
    }
    app.parse(std::vector<std::string>(expanded.rbegin(), expanded.rend()));
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }

  try {
    if (*edit_cmd) return cli::cmd_edit(edit, out, *log);
    if (*inspect_cmd) return cli::cmd_inspect(inspect_path, inspect_json, out);
    if (*verify_cmd) return cli::cmd_verify(verify, out);
    if (*merge_cmd) {
      try {
        return cli::cmd_merge(merge, out);
      } catch (const Error& e) {
        // Conflicting layer shapes come from the inputs, not the flags.
        if (e.code() != ErrorCode::kShapeMismatch) throw;
        err << "error: " << e.what() << "\n";
        return kExitIo;
      }
    }
    if (*report_cmd) return cli::cmd_report(report_path, report_format, out);
    if (*fetch_cmd) return cli::cmd_fetch(fetch_endpoint, fetch_name, fetch_k, fetch_out, fetch_encoder, out);
    if (*serve_cmd) return cli::cmd_serve(serve, out, *log);
    if (*fixture_cmd) return cli::cmd_make_fixture(fixture, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: Io: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitValidation;
}

}  // namespace lorashield
