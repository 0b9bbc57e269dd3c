// Copyright 2026 The lorashield Authors
// SPDX-License-Identifier: Apache-2.0

#include <regex>
#include <thread>

#include <gtest/gtest.h>

#include "lorashield/service.hpp"
#include "lorashield/synthetic.hpp"
#include "support/oracles.hpp"

#include <httplib.h>

namespace ls = lorashield;
namespace fs = std::filesystem;
using namespace std::chrono_literals;

namespace {

std::string bytes_of(const ls::TensorMap& map) {
  const auto raw = ls::write_container(map);
  return {raw.begin(), raw.end()};
}

struct Payload {
  std::string adapter;
  std::string concept_bundle;
  ls::SyntheticFixture fixture;
};

Payload make_payload(int layers = 2) {
  ls::SyntheticOptions opt;
  opt.layers = layers;
  Payload p;
  p.fixture = ls::make_synthetic_fixture(opt);
  p.adapter = bytes_of(ls::adapter_to_tensor_map(p.fixture.adapter));
  p.concept_bundle = bytes_of(ls::concept_spec_to_tensor_map(p.fixture.spec));
  return p;
}

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    payload_ = make_payload();
    base_path_ = tmp_ / "base.safetensors";
    ls::save_container(base_path_, ls::base_weights_to_tensor_map(payload_.fixture.base));
  }

  ls::ServiceOptions options() const {
    ls::ServiceOptions opt;
    opt.spool = tmp_ / "spool";
    opt.bases = {{"sd15", base_path_}};
    return opt;
  }

  static int error_status(const std::function<void()>& fn, std::string* field = nullptr) {
    try {
      fn();
    } catch (const ls::ServiceError& e) {
      if (field) *field = e.field.value_or("");
      return e.status;
    }
    return 0;
  }

  oracle::TempDir tmp_;
  fs::path base_path_;
  Payload payload_;
};

// Runs the HTTP routes on an ephemeral port for the duration of a test.
class HttpHarness {
 public:
  explicit HttpHarness(ls::EditService& service) {
    service.register_routes(server_);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~HttpHarness() {
    server_.stop();
    thread_.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(30, 0);
    return c;
  }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

httplib::MultipartFormDataItems form(const Payload& p, const std::string& config) {
  return {{"adapter", p.adapter, "adapter.safetensors", "application/octet-stream"},
          {"concept", p.concept_bundle, "concept.safetensors", "application/octet-stream"},
          {"config", config, "config.json", "application/json"}};
}

}  // namespace

TEST_F(ServiceTest, SubmitPollDownload) {
  ls::EditService service(options());
  service.start();
  const auto id = service.submit(payload_.adapter, payload_.concept_bundle, R"({"steps": 4})", "sd15");
  EXPECT_TRUE(std::regex_match(id, std::regex("[a-z0-9-]{36}"))) << id;
  const auto early = service.get_job(id);
  ASSERT_TRUE(early);
  EXPECT_TRUE(early->state == ls::JobState::kQueued || early->state == ls::JobState::kRunning ||
              early->state == ls::JobState::kSucceeded);
  const auto done = service.wait_for(id, 60s);
  ASSERT_TRUE(done);
  ASSERT_EQ(done->state, ls::JobState::kSucceeded) << done->failure.value_or("");
  EXPECT_TRUE(done->completed_at.has_value());
  EXPECT_EQ(done->config["steps"], 4);

  const auto adapter = service.download_artifact(id, "adapter");
  const auto edited = ls::parse_adapter(
      ls::read_container(std::span(reinterpret_cast<const std::uint8_t*>(adapter.bytes.data()), adapter.bytes.size())));
  EXPECT_EQ(edited.layers.size(), 2u);
  const auto report = service.download_artifact(id, "report");
  EXPECT_TRUE(ls::is_valid_report_json(nlohmann::json::parse(report.bytes)));
  EXPECT_EQ(adapter.etag, ls::content_etag(adapter.bytes));
  EXPECT_EQ(report.content_type, "application/json");

  // Artifacts are exactly what the library produces for the same inputs.
  auto config = ls::config_from_json(done->config);
  config.workers = 1;
  const auto direct = ls::edit_adapter(payload_.fixture.adapter, payload_.fixture.base, payload_.fixture.spec, config);
  EXPECT_EQ(report.bytes, ls::report_json_text(direct.report));
}

TEST_F(ServiceTest, SubmitValidation) {
  ls::EditService service(options());
  std::string field;
  EXPECT_EQ(error_status([&] { service.submit(payload_.adapter, payload_.concept_bundle, R"({"steps": 0})", "sd15"); }, &field),
            400);
  EXPECT_EQ(field, "steps");
  EXPECT_EQ(error_status([&] { service.submit(payload_.adapter, payload_.concept_bundle, "{}", "no-such-base"); }, &field),
            404);
  EXPECT_EQ(field, "base");
  EXPECT_EQ(error_status([&] { service.submit(payload_.adapter, payload_.concept_bundle, "{}", ""); }, &field), 400);
  EXPECT_EQ(field, "base");
  EXPECT_EQ(error_status([&] { service.submit(payload_.adapter, payload_.concept_bundle, "not json", "sd15"); }), 400);
  EXPECT_EQ(error_status([&] { service.submit("garbage", payload_.concept_bundle, "{}", "sd15"); }, &field), 400);
  EXPECT_EQ(field, "adapter");
  EXPECT_EQ(error_status([&] { service.submit(payload_.adapter, payload_.adapter, "{}", "sd15"); }, &field), 400);
  EXPECT_EQ(field, "concept");
  // Base named inside the config document.
  EXPECT_EQ(error_status([&] { service.submit(payload_.adapter, payload_.concept_bundle, R"({"base": "sd15"})"); }), 0);
}

TEST_F(ServiceTest, QueueFullAndUnknownJob) {
  auto opt = options();
  opt.queue_depth = 2;
  ls::EditService service(opt);  // not started: jobs stay queued
  service.submit(payload_.adapter, payload_.concept_bundle, "{}", "sd15");
  const auto second = service.submit(payload_.adapter, payload_.concept_bundle, "{}", "sd15");
  EXPECT_EQ(error_status([&] { service.submit(payload_.adapter, payload_.concept_bundle, "{}", "sd15"); }), 503);
  EXPECT_EQ(service.get_job(second)->state, ls::JobState::kQueued);
  EXPECT_EQ(error_status([&] { service.download_artifact(second, "adapter"); }), 409);
  EXPECT_FALSE(service.get_job("00000000-0000-4000-8000-000000000000"));
  EXPECT_EQ(error_status([&] { service.download_artifact("00000000-0000-4000-8000-000000000000", "adapter"); }), 404);
}

TEST_F(ServiceTest, FailedJobRecordsReason) {
  ls::EditService service(options());
  service.start();
  // The base catalogue has matching shapes, so a numerically hostile config
  // is what fails: a huge learning rate makes the loss overflow in float.
  const auto id = service.submit(payload_.adapter, payload_.concept_bundle, R"({"lr": 1e30, "steps": 3})", "sd15");
  const auto done = service.wait_for(id, 60s);
  ASSERT_TRUE(done);
  EXPECT_EQ(done->state, ls::JobState::kFailed);
  ASSERT_TRUE(done->failure);
  EXPECT_NE(done->failure->find("NonFiniteLoss"), std::string::npos) << *done->failure;
  EXPECT_EQ(error_status([&] { service.download_artifact(id, "report"); }), 409);
  EXPECT_FALSE(ls::job_to_json(*done).contains("artifacts"));
}

TEST_F(ServiceTest, InterruptedJobsAreRequeuedOnRestart) {
  std::string id;
  {
    ls::EditService service(options());
    id = service.submit(payload_.adapter, payload_.concept_bundle, R"({"steps": 2})", "sd15");
  }
  // Simulate a crash mid-edit.
  const auto state_file = tmp_ / "spool" / id / "state.json";
  const auto raw = ls::read_file(state_file);
  auto doc = nlohmann::json::parse(raw.begin(), raw.end());
  doc["state"] = "running";
  ls::write_file(state_file, doc.dump());

  ls::EditService restarted(options());
  EXPECT_EQ(restarted.get_job(id)->state, ls::JobState::kQueued);
  restarted.start();
  const auto done = restarted.wait_for(id, 60s);
  ASSERT_TRUE(done);
  EXPECT_EQ(done->state, ls::JobState::kSucceeded);
}

TEST_F(ServiceTest, ExpiryHonoursTtl) {
  auto opt = options();
  opt.ttl = 3600s;
  ls::EditService service(opt);
  service.start();
  const auto id = service.submit(payload_.adapter, payload_.concept_bundle, R"({"steps": 1})", "sd15");
  const auto done = service.wait_for(id, 60s);
  ASSERT_TRUE(done && done->completed_at);
  EXPECT_EQ(service.expire(*done->completed_at + 10), 0u);
  EXPECT_TRUE(fs::exists(tmp_ / "spool" / id));
  EXPECT_EQ(service.expire(*done->completed_at + 3600), 1u);
  EXPECT_FALSE(service.get_job(id));
  EXPECT_FALSE(fs::exists(tmp_ / "spool" / id));
}

TEST(JobStates, OnlyForwardTransitions) {
  using S = ls::JobState;
  const S all[] = {S::kQueued, S::kRunning, S::kSucceeded, S::kFailed};
  for (S from : all) {
    for (S to : all) {
      const bool want = (from == S::kQueued && to == S::kRunning) ||
                        (from == S::kRunning && (to == S::kSucceeded || to == S::kFailed));
      EXPECT_EQ(ls::is_valid_transition(from, to), want)
          << ls::job_state_name(from) << " -> " << ls::job_state_name(to);
    }
  }
  for (S s : all) EXPECT_EQ(ls::parse_job_state(ls::job_state_name(s)), s);
}

TEST_F(ServiceTest, HttpEndToEnd) {
  ls::EditService service(options());
  service.start();
  HttpHarness http(service);
  auto client = http.client();

  auto health = client.Get("/healthz");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  auto bases = client.Get("/v1/bases");
  ASSERT_TRUE(bases);
  EXPECT_EQ(nlohmann::json::parse(bases->body)["bases"], nlohmann::json::array({"sd15"}));

  auto items = form(payload_, R"({"steps": 3})");
  items.push_back({"base", "sd15", "", "text/plain"});
  auto posted = client.Post("/v1/edits", items);
  ASSERT_TRUE(posted);
  ASSERT_EQ(posted->status, 202) << posted->body;
  const std::string id = nlohmann::json::parse(posted->body)["job_id"];
  EXPECT_TRUE(std::regex_match(id, std::regex("[a-z0-9-]{36}")));

  auto polled = client.Get("/v1/edits/" + id);
  ASSERT_TRUE(polled);
  EXPECT_EQ(polled->status, 200);
  const std::string first_state = nlohmann::json::parse(polled->body)["state"];
  EXPECT_TRUE(first_state == "queued" || first_state == "running" || first_state == "succeeded");

  ASSERT_TRUE(service.wait_for(id, 60s));
  polled = client.Get("/v1/edits/" + id);
  const auto job = nlohmann::json::parse(polled->body);
  ASSERT_EQ(job["state"], "succeeded") << polled->body;
  ASSERT_EQ(job["artifacts"].size(), 2u);

  const std::string adapter_url = job["artifacts"]["adapter"];
  auto adapter = client.Get(adapter_url);
  ASSERT_TRUE(adapter);
  EXPECT_EQ(adapter->status, 200);
  EXPECT_NO_THROW(ls::read_container(
      std::span(reinterpret_cast<const std::uint8_t*>(adapter->body.data()), adapter->body.size())));
  const std::string etag = adapter->get_header_value("ETag");
  EXPECT_FALSE(etag.empty());
  auto cached = client.Get(adapter_url, httplib::Headers{{"If-None-Match", etag}});
  ASSERT_TRUE(cached);
  EXPECT_EQ(cached->status, 304);
  EXPECT_TRUE(cached->body.empty());

  auto report = client.Get(std::string(job["artifacts"]["report"]));
  ASSERT_TRUE(report);
  EXPECT_TRUE(ls::is_valid_report_json(nlohmann::json::parse(report->body)));
}

TEST_F(ServiceTest, HttpErrors) {
  auto opt = options();
  opt.max_payload = 64 * 1024;
  ls::EditService service(opt);  // not started: submitted jobs stay queued
  HttpHarness http(service);
  auto client = http.client();

  auto bad = client.Post("/v1/edits", form(payload_, R"({"base": "sd15", "steps": 0})"));
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);
  auto body = nlohmann::json::parse(bad->body);
  EXPECT_EQ(body["field"], "steps");
  EXPECT_TRUE(body.contains("code") && body.contains("message"));

  auto unknown = client.Post("/v1/edits", form(payload_, R"({"base": "no-such-base"})"));
  ASSERT_TRUE(unknown);
  EXPECT_EQ(unknown->status, 404);
  EXPECT_EQ(nlohmann::json::parse(unknown->body)["code"], "UnknownBase");

  auto missing = client.Post("/v1/edits", httplib::MultipartFormDataItems{{"adapter", payload_.adapter, "a", ""}});
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 400);

  Payload big = payload_;
  big.adapter.append(128 * 1024, ' ');
  auto too_large = client.Post("/v1/edits", form(big, R"({"base": "sd15"})"));
  ASSERT_TRUE(too_large);
  EXPECT_EQ(too_large->status, 413);

  auto queued = client.Post("/v1/edits", form(payload_, R"({"base": "sd15"})"));
  ASSERT_TRUE(queued);
  ASSERT_EQ(queued->status, 202);
  const std::string id = nlohmann::json::parse(queued->body)["job_id"];
  auto early = client.Get("/v1/edits/" + id + "/artifacts/adapter");
  ASSERT_TRUE(early);
  EXPECT_EQ(early->status, 409);

  auto no_job = client.Get("/v1/edits/6f1c2b9e-0000-4000-8000-000000000000");
  ASSERT_TRUE(no_job);
  EXPECT_EQ(no_job->status, 404);
  EXPECT_TRUE(nlohmann::json::parse(no_job->body).contains("code"));
}

TEST_F(ServiceTest, ConcurrentJobsMatchSerialResults) {
  auto opt = options();
  opt.workers = 3;
  ls::EditService service(opt);
  service.start();
  std::vector<std::string> ids;
  for (int i = 0; i < 4; ++i) ids.push_back(service.submit(payload_.adapter, payload_.concept_bundle, "{}", "sd15"));
  std::vector<std::string> reports;
  for (const auto& id : ids) {
    const auto done = service.wait_for(id, 120s);
    ASSERT_TRUE(done);
    ASSERT_EQ(done->state, ls::JobState::kSucceeded);
    reports.push_back(service.download_artifact(id, "report").bytes);
  }
  for (const auto& r : reports) EXPECT_EQ(r, reports.front());
}
