// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "proxex/fidelity.hpp"
#include "test_util.hpp"

using namespace proxex;

namespace {

// Sentiment mock whose logistic stays in its near-linear regime: the local
// surrogate then reproduces every label on the full cube.
ModelSpec register_margin_sentiment(MockRegistry& mocks, const std::string& name, std::size_t n) {
  json weights = json::object();
  for (std::size_t i = 0; i < n; ++i)
    weights["w" + std::to_string(i)] = (i % 2 == 0) ? 0.6 : -0.6;
  return mocks.register_mock(
      name, json{{"type", "linear-sentiment"}, {"weights", weights}, {"bias", 0.3}});
}

json margin_sentiment_def(std::size_t n) {
  json weights = json::object();
  for (std::size_t i = 0; i < n; ++i)
    weights["w" + std::to_string(i)] = (i % 2 == 0) ? 0.6 : -0.6;
  return json{{"type", "linear-sentiment"}, {"weights", weights}, {"bias", 0.3}};
}

std::string words_text(std::size_t n) {
  std::string text;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) text += " ";
    text += "w" + std::to_string(i);
  }
  return text;
}

Instance sentiment_instance(std::size_t n, const std::string& id = "i0") {
  return Instance{id, words_text(n), "positive", make_sentiment_task()};
}

// Choice-table mock over two features with pinned probabilities per
// coalition pattern: p(full)=1, p(without A)=0.6, p(without B)=0.75,
// p(empty)=0.5. The answer is always "yes".
ModelSpec register_two_drop_mock(MockRegistry& mocks, const std::string& name) {
  return mocks.register_mock(name, json{{"type", "choice-table"},
                                        {"markers", {"fA", "fB"}},
                                        {"table",
                                         {{"11", {{"choice", "yes"}, {"prob", 1.0}}},
                                          {"01", {{"choice", "yes"}, {"prob", 0.6}}},
                                          {"10", {{"choice", "yes"}, {"prob", 0.75}}},
                                          {"00", {{"choice", "yes"}, {"prob", 0.5}}}}},
                                        {"default", {{"choice", "yes"}}}});
}

Instance two_feature_instance() {
  TaskSpec task;
  task.kind = TaskKind::multiple_choice;
  task.label_set = {"yes", "no"};
  task.question_block = "Is the signal present? Respond yes or no.\nAnswer:";
  return Instance{"sig0", "fA fB", "yes", task};
}

ExplainOptions exhaustive_lime(std::uint64_t seed = 1) {
  ExplainOptions opts;
  opts.method = AttributionMethod::lime;
  opts.strategy = MaskStrategy::exhaustive;
  opts.ridge_lambda = 0.0;
  opts.seed = seed;
  return opts;
}

}  // namespace

TEST_CASE("surrogate_fidelity counts thresholded label agreement") {
  Attribution attr;
  attr.values = {1.0};
  attr.intercept = 0.0;  // surrogate predicts positive iff the feature is kept
  std::vector<std::pair<Mask, double>> samples;
  for (int i = 0; i < 70; ++i) samples.push_back({Mask::all_ones(1), 1.0});   // agree
  for (int i = 0; i < 30; ++i) samples.push_back({Mask::all_ones(1), 0.0});   // disagree
  const auto report = surrogate_fidelity(attr, samples, TaskKind::sentiment);
  CHECK(report.value == doctest::Approx(0.70).epsilon(1e-12));

  std::vector<std::pair<Mask, double>> perfect(100, {Mask::all_zeros(1), 0.0});
  CHECK(surrogate_fidelity(attr, perfect, TaskKind::sentiment).value == 1.0);

  CHECK_THROWS_AS(surrogate_fidelity(attr, {}, TaskKind::sentiment), Error);
}

TEST_CASE("surrogate_fidelity uses MSE for generation tasks") {
  Attribution attr;
  attr.values = {0.5};
  attr.intercept = 0.25;
  std::vector<std::pair<Mask, double>> samples = {{Mask::all_ones(1), 0.75},
                                                  {Mask::all_zeros(1), 0.05}};
  const auto report = surrogate_fidelity(attr, samples, TaskKind::generation);
  CHECK(report.metric == FidelityMetricKind::mse);
  CHECK(report.value == doctest::Approx((0.0 + 0.04) / 2.0).epsilon(1e-12));
}

TEST_CASE("oracle LIME is an exact surrogate of the margin sentiment mock") {
  for (std::size_t n : {2, 5, 10}) {
    MockRegistry mocks;
    const auto spec = register_margin_sentiment(mocks, "sent", n);
    ModelClient client(&mocks);
    const Instance inst = sentiment_instance(n);
    const auto res = explain_instance(inst, spec, client, exhaustive_lime());
    std::vector<std::pair<Mask, double>> samples;
    for (std::size_t i = 0; i < res.masks.size(); ++i)
      samples.push_back({res.masks[i], res.responses.y[i]});
    const auto report = surrogate_fidelity(res.attribution, samples, TaskKind::sentiment);
    CHECK(report.value == 1.0);
  }
}

TEST_CASE("agreement_filter keeps exactly the agreeing instances") {
  const std::vector<std::string> ids = {"a", "b", "c"};
  std::map<std::string, std::string> same{{"a", "x"}, {"b", "y"}, {"c", "z"}};
  CHECK(agreement_filter(ids, same, same) == ids);

  std::map<std::string, std::string> other{{"a", "q"}, {"b", "r"}, {"c", "s"}};
  CHECK(agreement_filter(ids, same, other).empty());

  // Symmetry in the two maps.
  std::map<std::string, std::string> mixed{{"a", "x"}, {"b", "r"}, {"c", "z"}};
  CHECK(agreement_filter(ids, same, mixed) == agreement_filter(ids, mixed, same));

  std::map<std::string, std::string> incomplete{{"a", "x"}};
  try {
    agreement_filter(ids, same, incomplete);
    FAIL("expected IncompleteInput");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::incomplete_input);
  }
}

TEST_CASE("agreement_filter against a noisy mock keeps the exact quota") {
  MockRegistry mocks;
  const auto base_spec = mocks.register_mock("base", margin_sentiment_def(4));
  const auto noisy_spec = mocks.register_mock(
      "noisy",
      json{{"type", "noisy"}, {"base", margin_sentiment_def(4)}, {"flip_rate", 0.3}, {"seed", 5}});
  auto base = mocks.find("base");
  auto noisy = mocks.find("noisy");

  std::vector<std::string> ids;
  std::map<std::string, std::string> preds_base, preds_noisy;
  for (int i = 0; i < 100; ++i) {
    const std::string id = "inst" + std::to_string(i);
    const std::string prompt = "w0 w1 review number " + std::to_string(i);
    ids.push_back(id);
    preds_base[id] = *base->invoke(prompt).label;
    preds_noisy[id] = *noisy->invoke(prompt).label;
  }
  const auto kept = agreement_filter(ids, preds_base, preds_noisy);
  CHECK(kept.size() == 70);  // floor(100 * 0.3) flips exactly
}

TEST_CASE("AOPC matches the enumerated two-feature curve") {
  MockRegistry mocks;
  const auto spec = register_two_drop_mock(mocks, "drops");
  ModelClient client(&mocks);
  const Instance inst = two_feature_instance();
  const auto seg = segment(inst.text, SegmentationMode::word);

  ExplainOptions opts;
  opts.seed = 3;

  Attribution correct;
  correct.values = {2.0, 1.0};  // fA ranked first
  CHECK(std::abs(aopc(correct, seg, inst, spec, client, opts) - 0.205) < 1e-12);

  Attribution reversed;
  reversed.values = {1.0, 2.0};  // fB ranked first
  const double reversed_aopc = aopc(reversed, seg, inst, spec, client, opts);
  CHECK(std::abs(reversed_aopc - 0.130) < 1e-12);
  CHECK(reversed_aopc < 0.205);
}

TEST_CASE("AOPC of a masking-invariant model is exactly zero") {
  MockRegistry mocks;
  const auto spec = mocks.register_mock("const", json{{"type", "constant"}, {"output", "yes"}});
  ModelClient client(&mocks);
  const Instance inst = two_feature_instance();
  const auto seg = segment(inst.text, SegmentationMode::word);
  Attribution attr;
  attr.values = {1.0, 0.5};
  ExplainOptions opts;
  CHECK(aopc(attr, seg, inst, spec, client, opts) == 0.0);
}

TEST_CASE("AOPC is maximal for the true importance ordering on additive mocks") {
  // Additive drops d = [0.4, 0.3, 0.2, 0.1]; p(S) = 1 - sum of missing d_i.
  const std::vector<double> drops = {0.4, 0.3, 0.2, 0.1};
  const std::size_t n = drops.size();
  json table = json::object();
  for (std::size_t bits = 0; bits < (1u << n); ++bits) {
    std::string pattern(n, '0');
    double p = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (bits & (1u << i))
        pattern[i] = '1';
      else
        p -= drops[i];
    }
    table[pattern] = json{{"choice", "yes"}, {"prob", p}};
  }
  MockRegistry mocks;
  const auto spec = mocks.register_mock("additive", json{{"type", "choice-table"},
                                                         {"markers", {"fA", "fB", "fC", "fD"}},
                                                         {"table", table},
                                                         {"default", {{"choice", "yes"}}}});
  ModelClient client(&mocks);
  TaskSpec task;
  task.kind = TaskKind::multiple_choice;
  task.label_set = {"yes", "no"};
  task.question_block = "Signal? Answer yes or no.\nAnswer:";
  const Instance inst{"sig", "fA fB fC fD", "yes", task};
  const auto seg = segment(inst.text, SegmentationMode::word);
  ExplainOptions opts;

  auto aopc_of_ordering = [&](const std::vector<std::size_t>& order) {
    Attribution attr;
    attr.values.resize(n);
    for (std::size_t rank = 0; rank < n; ++rank)
      attr.values[order[rank]] = static_cast<double>(n - rank);
    return aopc(attr, seg, inst, spec, client, opts);
  };

  std::vector<std::size_t> truth = {0, 1, 2, 3};
  const double best = aopc_of_ordering(truth);
  std::vector<std::size_t> perm = truth;
  do {
    CHECK(aopc_of_ordering(perm) <= best + 1e-12);
  } while (std::next_permutation(perm.begin(), perm.end()));
}

TEST_CASE("fidelity matrix: identical mocks give off-diagonal equal to diagonal") {
  MockRegistry mocks;
  const auto a = mocks.register_mock("mockA", margin_sentiment_def(6));
  const auto b = mocks.register_mock("mockB", margin_sentiment_def(6));
  ModelClient client(&mocks);

  MatrixOptions opts;
  opts.explain = exhaustive_lime(9);
  opts.metric = FidelityMetricKind::accuracy;

  const std::vector<Instance> instances = {sentiment_instance(6, "i0"), sentiment_instance(6, "i1")};
  const auto matrix = fidelity_matrix({a, b}, instances, client, opts);
  REQUIRE(matrix.model_ids.size() == 2);
  const double diag0 = matrix.cell(0, 0).report.value;
  CHECK(matrix.cell(0, 1).report.value == diag0);
  CHECK(matrix.cell(1, 0).report.value == diag0);
  CHECK(matrix.cell(1, 1).report.value == diag0);
  CHECK(*matrix.cell(0, 0).relative == 1.0);
  CHECK(*matrix.cell(1, 0).relative == 1.0);
}

TEST_CASE("fidelity matrix: single model yields the 1x1 oracle cell") {
  MockRegistry mocks;
  const auto a = register_margin_sentiment(mocks, "solo", 4);
  ModelClient client(&mocks);
  MatrixOptions opts;
  opts.explain = exhaustive_lime(2);
  const auto matrix = fidelity_matrix({a}, {sentiment_instance(4)}, client, opts);
  CHECK(matrix.model_ids == std::vector<std::string>{"solo"});
  CHECK(matrix.cells.size() == 1);
  CHECK(matrix.cell(0, 0).report.value == 1.0);
  CHECK(*matrix.cell(0, 0).relative == 1.0);
}

TEST_CASE("fidelity matrix: noisy proxy stays within the flip-rate bound") {
  MockRegistry mocks;
  const auto base = mocks.register_mock("base", margin_sentiment_def(8));
  const auto noisy = mocks.register_mock("noisy", json{{"type", "noisy"},
                                                       {"base", margin_sentiment_def(8)},
                                                       {"flip_rate", 0.3},
                                                       {"seed", 1}});
  ModelClient client(&mocks);

  MatrixOptions opts;
  opts.explain.method = AttributionMethod::lime;
  opts.explain.n_samples = 300;
  opts.explain.seed = 4;
  opts.explain.ridge_lambda = 0.0;

  const std::vector<Instance> instances = {sentiment_instance(8)};
  const auto matrix = fidelity_matrix({base, noisy}, instances, client, opts);
  // Proxy fitted on noisy outputs, evaluated against the clean base.
  CHECK(matrix.cell(1, 0).report.value >= 1.0 - 0.3 - 0.02);
  CHECK(matrix.cell(0, 0).report.value == 1.0);
  // Diagnostics are present.
  CHECK(matrix.cell(1, 0).target_variance.has_value());
}

TEST_CASE("fidelity matrix reuses every perturbation across cells") {
  MockRegistry mocks;
  const auto a = mocks.register_mock("mockA", margin_sentiment_def(5));
  const auto b = mocks.register_mock("mockB", margin_sentiment_def(5));
  testing::TempDir tmp;
  SampleStore store = SampleStore::open(tmp.file("store.jsonl"));
  ModelClient client(&mocks, &store);

  MatrixOptions opts;
  opts.explain = exhaustive_lime(5);
  const std::vector<Instance> instances = {sentiment_instance(5)};

  const auto first = fidelity_matrix({a, b}, instances, client, opts);
  const long misses_after_first = client.cache_misses();
  CHECK(misses_after_first > 0);

  const auto second = fidelity_matrix({a, b}, instances, client, opts);
  CHECK(client.cache_misses() == misses_after_first);  // zero new queries
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 2; ++c)
      CHECK(first.cell(r, c).report.value == second.cell(r, c).report.value);
}

TEST_CASE("filtered matrices drop disagreeing instances per cell") {
  MockRegistry mocks;
  const auto base = mocks.register_mock("base", margin_sentiment_def(4));
  const auto noisy = mocks.register_mock("noisy", json{{"type", "noisy"},
                                                       {"base", margin_sentiment_def(4)},
                                                       {"flip_rate", 0.5},
                                                       {"seed", 2}});
  ModelClient client(&mocks);

  MatrixOptions opts;
  opts.explain = exhaustive_lime(6);
  opts.filtered = true;

  std::vector<Instance> instances;
  for (int i = 0; i < 10; ++i) {
    Instance inst = sentiment_instance(4, "i" + std::to_string(i));
    inst.text = "w0 w1 w2 w3 tag" + std::to_string(i);
    instances.push_back(inst);
  }
  // Filter protocol: unperturbed predictions are collected before any
  // neighborhood sampling, so the noisy quota applies to the anchors.
  for (const auto& inst : instances) {
    client.query(base, build_prompt(inst.task, inst.text), opts.explain.decoding);
    client.query(noisy, build_prompt(inst.task, inst.text), opts.explain.decoding);
  }
  const auto matrix = fidelity_matrix({base, noisy}, instances, client, opts);
  CHECK(matrix.cell(0, 0).report.n_instances == 10);            // diagonal never filtered
  CHECK(matrix.cell(0, 1).report.n_instances == 5);             // floor(10 * 0.5) flips
  CHECK(matrix.cell(0, 1).report.filtered);
}

TEST_CASE("cells go absent instead of aborting when a model cannot answer") {
  MockRegistry mocks;
  const auto good = mocks.register_mock("good", margin_sentiment_def(4));
  // Never produces a parseable sentiment label.
  const auto broken = mocks.register_mock("broken", json{{"type", "constant"}, {"output", "banana"}});
  ModelClient client(&mocks);
  MatrixOptions opts;
  opts.explain = exhaustive_lime(3);
  const auto matrix = fidelity_matrix({good, broken}, {sentiment_instance(4)}, client, opts);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 2; ++c) {
      CHECK(matrix.cell(r, c).absent);
      CHECK(!matrix.cell(r, c).error.empty());
    }
  // Exports render absent cells as blanks, not fabricated numbers.
  const std::string csv = matrix.to_csv();
  CHECK(csv.find("good,,") != std::string::npos);
}

TEST_CASE("generation matrices use MSE over the scored responses") {
  MockRegistry mocks;
  const auto model = mocks.register_mock("gen", json{{"type", "constant"}, {"output", "the answer"}});
  ModelClient client(&mocks);

  Instance inst;
  inst.id = "g0";
  inst.text = "what was the answer";
  inst.gold = "the answer";
  inst.task = make_generation_task("the answer");

  MatrixOptions opts;
  opts.explain = exhaustive_lime(4);
  opts.metric = FidelityMetricKind::mse;
  const auto matrix = fidelity_matrix({model}, {inst}, client, opts);
  // A constant model scores identically on every mask; its surrogate is the
  // constant too, so the MSE vanishes.
  CHECK(matrix.cell(0, 0).report.metric == FidelityMetricKind::mse);
  CHECK(matrix.cell(0, 0).report.value == doctest::Approx(0.0).epsilon(1e-18));

  // accuracy over a generation task is a config error
  MatrixOptions bad = opts;
  bad.metric = FidelityMetricKind::accuracy;
  CHECK_THROWS_AS(fidelity_matrix({model}, {inst}, client, bad), Error);
}

TEST_CASE("aopc-metric matrices recover the deletion-curve reference") {
  MockRegistry mocks;
  const auto drops = register_two_drop_mock(mocks, "drops");
  ModelClient client(&mocks);
  MatrixOptions opts;
  opts.explain.method = AttributionMethod::lime;
  opts.explain.strategy = MaskStrategy::exhaustive;
  opts.explain.ridge_lambda = 0.0;
  opts.explain.seed = 12;
  opts.metric = FidelityMetricKind::aopc;
  const auto matrix = fidelity_matrix({drops}, {two_feature_instance()}, client, opts);
  // The fitted attribution ranks fA over fB, so the oracle cell equals the
  // enumerated deletion value.
  CHECK(matrix.cell(0, 0).report.value == doctest::Approx(0.205).epsilon(1e-12));
}

TEST_CASE("fresh-draw evaluation uses a disjoint mask sample and flags the report") {
  MockRegistry mocks;
  const auto a = mocks.register_mock("mockA", margin_sentiment_def(5));
  ModelClient client(&mocks);

  MatrixOptions opts;
  opts.explain.method = AttributionMethod::lime;
  opts.explain.n_samples = 40;
  opts.explain.seed = 17;
  opts.fresh_draw = true;

  const auto matrix = fidelity_matrix({a}, {sentiment_instance(5)}, client, opts);
  CHECK(matrix.fresh_draw);
  CHECK(matrix.cell(0, 0).report.fresh_draw);
  CHECK(matrix.cell(0, 0).report.value > 0.5);

  // The evaluation draw differs from the fitting draw, so more distinct
  // prompts are queried than a reuse run needs.
  MatrixOptions reuse = opts;
  reuse.fresh_draw = false;
  ModelClient client2(&mocks);
  fidelity_matrix({a}, {sentiment_instance(5)}, client2, reuse);
  CHECK(client.live_queries() > client2.live_queries());
}

TEST_CASE("matrix exports carry values, headers and annotations") {
  MockRegistry mocks;
  const auto a = mocks.register_mock("mockA", margin_sentiment_def(4));
  const auto b = mocks.register_mock("mockB", margin_sentiment_def(4));
  ModelClient client(&mocks);
  MatrixOptions opts;
  opts.explain = exhaustive_lime(8);
  const auto matrix = fidelity_matrix({a, b}, {sentiment_instance(4)}, client, opts);

  const std::string csv = matrix.to_csv();
  CHECK(csv.find("proxy\\target,mockA,mockB") == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);

  const json j = matrix.to_json();
  CHECK(j.at("cells").size() == 4);
  CHECK(j.at("metric") == "accuracy");
  for (const auto& cell : j.at("cells")) CHECK(cell.contains("value"));

  const std::string svg = matrix.to_svg();
  CHECK(svg.find("<svg") == 0);
  CHECK(std::count(svg.begin(), svg.end(), '<') > 8);
  CHECK(svg.find("mockA") != std::string::npos);
}
