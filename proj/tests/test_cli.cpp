// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <sys/wait.h>

#include <json.hpp>

#include "test_util.hpp"

#ifndef PROXEX_CLI_PATH
#error "PROXEX_CLI_PATH must point at the built binary"
#endif

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

int run_cli(const std::string& args) {
  const std::string cmd = std::string(PROXEX_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

// A self-contained workspace: mock registry, inline sentiment task with
// three instances, and a run config wired to temp store/output paths.
struct Workspace {
  proxex::testing::TempDir dir;
  std::string config_path;

  Workspace() {
    const json weights{{"good", 1.4}, {"bad", -1.6}, {"fine", 0.6}};
    const json registry{
        {"models",
         json::array(
             {json{{"model_id", "base"},
                   {"mock", {{"type", "linear-sentiment"}, {"weights", weights}, {"bias", 0.2}}}},
              json{{"model_id", "other"},
                   {"mock", {{"type", "linear-sentiment"}, {"weights", weights}, {"bias", 0.2}}}},
              json{{"model_id", "gpt-4o"},
                   {"endpoint", "https://api.openai.com/v1"},
                   {"price_in", 2.50},
                   {"price_out", 10.00},
                   {"supports_logprobs", true}}})}};
    const json task{
        {"kind", "sentiment"},
        {"dataset_id", "cli-demo"},
        {"format", "inline"},
        {"instances", json::array({json{{"id", "a"}, {"text", "good and fine work"}, {"gold", "positive"}},
                                   json{{"id", "b"}, {"text", "bad and tired plot"}, {"gold", "negative"}},
                                   json{{"id", "c"}, {"text", "fine but bad pacing"}, {"gold", "negative"}}})}};
    proxex::testing::write_file(dir.file("registry.json"), registry.dump(2));
    proxex::testing::write_file(dir.file("task.json"), task.dump(2));
    const json run{{"task", dir.file("task.json")},
                   {"registry", dir.file("registry.json")},
                   {"method", "lime"},
                   {"samples", 64},
                   {"seed", 5},
                   {"segmentation", "word"},
                   {"store", dir.file("store.jsonl")},
                   {"out", dir.file("out")},
                   {"models", json::array({"base", "other"})},
                   {"proxy", "base"},
                   {"target", "other"}};
    config_path = dir.file("run.json");
    proxex::testing::write_file(config_path, run.dump(2));
  }
};

long file_lines(const std::string& path) {
  const std::string content = proxex::testing::read_file(path);
  long n = 0;
  for (char c : content)
    if (c == '\n') ++n;
  return n;
}

}  // namespace

TEST_CASE("explain writes one attribution file per instance and exits 0") {
  Workspace ws;
  CHECK(run_cli("explain --config " + ws.config_path) == 0);
  for (const char* id : {"a", "b", "c"})
    CHECK(fs::exists(ws.dir.file("out/attr_" + std::string(id) + ".json")));
  const json summary = json::parse(proxex::testing::read_file(ws.dir.file("out/explain_summary.json")));
  CHECK(summary.at("failures").empty());
  CHECK(summary.at("attribution_files").size() == 3);
  const json attr = json::parse(proxex::testing::read_file(ws.dir.file("out/attr_a.json")));
  CHECK(attr.at("values").size() == 4);  // four words
  CHECK(attr.at("proxy_model_id") == "base");
}

TEST_CASE("replay-only against a cold store exits 2 and lists every instance") {
  Workspace ws;
  CHECK(run_cli("explain --config " + ws.config_path + " --replay-only") == 2);
  const json summary = json::parse(proxex::testing::read_file(ws.dir.file("out/explain_summary.json")));
  CHECK(summary.at("failures").size() == 3);
  for (const auto& f : summary.at("failures"))
    CHECK(std::string(f.at("error")).find("ReplayMiss") != std::string::npos);
  // Replay mode never touches the store.
  CHECK(!fs::exists(ws.dir.file("store.jsonl")));
}

TEST_CASE("a warm rerun costs nothing new and leaves the store unchanged") {
  Workspace ws;
  REQUIRE(run_cli("explain --config " + ws.config_path) == 0);
  const long store_lines = file_lines(ws.dir.file("store.jsonl"));
  const std::string summary_first =
      proxex::testing::read_file(ws.dir.file("out/explain_summary.json"));

  REQUIRE(run_cli("explain --config " + ws.config_path) == 0);
  CHECK(file_lines(ws.dir.file("store.jsonl")) == store_lines);  // zero new queries
  CHECK(proxex::testing::read_file(ws.dir.file("out/explain_summary.json")) == summary_first);
}

TEST_CASE("matrix emits csv, json and svg for the smallest model pair") {
  Workspace ws;
  CHECK(run_cli("matrix --config " + ws.config_path) == 0);
  CHECK(fs::exists(ws.dir.file("out/matrix.csv")));
  CHECK(fs::exists(ws.dir.file("out/matrix.json")));
  CHECK(fs::exists(ws.dir.file("out/matrix.svg")));
  const json report = json::parse(proxex::testing::read_file(ws.dir.file("out/matrix.json")));
  CHECK(report.at("matrix").at("cells").size() == 4);
  // Identical mock definitions: proxy explanations transfer exactly.
  for (const auto& cell : report.at("matrix").at("cells"))
    CHECK(double(cell.at("value")) == double(report.at("matrix").at("cells").at(0).at("value")));
}

TEST_CASE("cost estimates follow the configured price sheet") {
  Workspace ws;
  CHECK(run_cli("cost --config " + ws.config_path +
                " --model gpt-4o --tokens-in 5000000 --tokens-out 0") == 0);
  const json report = json::parse(proxex::testing::read_file(ws.dir.file("out/cost.json")));
  CHECK(double(report.at("estimate").at("usd")) == doctest::Approx(12.50).epsilon(1e-9));
}

TEST_CASE("store-derived cost reports cover every model in the store") {
  Workspace ws;
  REQUIRE(run_cli("explain --config " + ws.config_path) == 0);
  CHECK(run_cli("cost --config " + ws.config_path) == 0);
  const json report = json::parse(proxex::testing::read_file(ws.dir.file("out/cost.json")));
  CHECK(report.at("per_model").contains("base"));
  CHECK(double(report.at("total_usd")) == 0.0);  // mocks are free
}

TEST_CASE("invalid configuration exits 1") {
  Workspace ws;
  proxex::testing::write_file(ws.dir.file("broken.json"), "{\"task\": \"missing.json\"}");
  CHECK(run_cli("explain --config " + ws.dir.file("broken.json")) == 1);
  CHECK(run_cli("explain --config " + ws.dir.file("nonexistent.json")) == 1);
}

TEST_CASE("selected instances restrict the run") {
  Workspace ws;
  CHECK(run_cli("explain --config " + ws.config_path + " --instances a,c") == 0);
  CHECK(fs::exists(ws.dir.file("out/attr_a.json")));
  CHECK(!fs::exists(ws.dir.file("out/attr_b.json")));
  CHECK(fs::exists(ws.dir.file("out/attr_c.json")));
}
