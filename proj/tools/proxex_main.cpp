// SPDX-License-Identifier: Apache-2.0
//
// proxex: local attribution explanations for language models via
// budget-friendly proxy sampling, with fidelity evaluation and
// attribution-guided prompt compression.
//
//   proxex explain  --config cfg.json --proxy <model>
//   proxex matrix   --config cfg.json --models a,b,c --metric accuracy
//   proxex aopc     --config cfg.json --proxy <model> --target <model>
//   proxex compress --config cfg.json --proxy <model> --target <model>
//   proxex cost     --config cfg.json [--model <id> --tokens-in N --tokens-out M]

#include <algorithm>
#include <cstdio>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "proxex/compression.hpp"
#include "proxex/config.hpp"
#include "proxex/explain.hpp"
#include "proxex/fidelity.hpp"
#include "proxex/io.hpp"

namespace {

using namespace proxex;

constexpr int kExitOk = 0;
constexpr int kExitFatal = 1;
constexpr int kExitPartial = 2;

std::string sanitize_id(const std::string& id) {
  std::string out = id;
  for (char& c : out)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
  return out;
}

std::string join_path(const std::string& dir, const std::string& name) {
  if (dir.empty()) return name;
  return dir.back() == '/' ? dir + name : dir + "/" + name;
}

struct FlagOverrides {
  std::string config_path;
  std::string method;
  std::string segmentation;
  std::string store;
  std::string out;
  std::string metric;
  std::string proxy;
  std::string target;
  std::string models_csv;
  std::string instances_csv;
  std::string strategy = "attribution-asc";
  std::string cost_model;
  long samples = -1;
  long long seed = -1;
  int max_inflight = -1;
  int repeats = -1;
  long tokens_in = -1;
  long tokens_out = -1;
  bool replay_only = false;
  bool filtered = false;
};

std::vector<std::string> split_csv(const std::string& csv) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= csv.size()) {
    const std::size_t comma = csv.find(',', pos);
    const std::string item =
        csv.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    if (!item.empty()) out.push_back(item);
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

RunConfig resolve_config(const FlagOverrides& flags) {
  if (flags.config_path.empty()) raise(Errc::config, "--config is required");
  RunConfig cfg = RunConfig::from_file(flags.config_path);
  if (!flags.method.empty()) cfg.method = attribution_method_from_string(flags.method);
  if (!flags.segmentation.empty())
    cfg.segmentation = segmentation_mode_from_string(flags.segmentation);
  if (!flags.store.empty()) cfg.store_path = flags.store;
  if (!flags.out.empty()) cfg.out_dir = flags.out;
  if (!flags.metric.empty()) cfg.metric = fidelity_metric_from_string(flags.metric);
  if (!flags.proxy.empty()) cfg.proxy_model = flags.proxy;
  if (!flags.target.empty()) cfg.target_model = flags.target;
  if (!flags.models_csv.empty()) cfg.matrix_models = split_csv(flags.models_csv);
  if (flags.samples >= 0) cfg.n_samples = static_cast<std::size_t>(flags.samples);
  if (flags.seed >= 0) cfg.seed = static_cast<std::uint64_t>(flags.seed);
  if (flags.max_inflight >= 0) cfg.max_inflight = flags.max_inflight;
  if (flags.repeats >= 0) cfg.repeats = flags.repeats;
  if (flags.replay_only) cfg.replay_only = true;
  if (flags.filtered) cfg.filtered = true;
  if (cfg.n_samples < 1) raise(Errc::config, "samples must be >= 1");
  return cfg;
}

// Everything a command needs, with stable lifetimes: registry and store
// must outlive the client.
struct Session {
  RunConfig cfg;
  std::unique_ptr<ModelRegistry> registry;
  TaskBundle bundle;
  std::unique_ptr<SampleStore> store;
  std::unique_ptr<ModelClient> client;

  explicit Session(const FlagOverrides& flags) : cfg(resolve_config(flags)) {
    if (cfg.registry_path.empty()) raise(Errc::config, "config needs a 'registry' path");
    if (cfg.task_path.empty()) raise(Errc::config, "config needs a 'task' path");
    registry = ModelRegistry::from_file(cfg.registry_path);
    bundle = load_task_bundle(cfg.task_path);
    if (cfg.store_path.empty()) raise(Errc::config, "config needs a 'store' path");
    store = std::make_unique<SampleStore>(
        SampleStore::open(cfg.store_path, /*writable=*/!cfg.replay_only));
    client = std::make_unique<ModelClient>(&registry->mocks(), store.get());
    client->set_replay_only(cfg.replay_only);
    client->set_max_inflight(cfg.max_inflight);
    client->set_store_prompts(cfg.store_prompts);
  }

  ExplainOptions explain_options() const { return cfg.explain_options(bundle, *registry); }

  json report_header() const {
    json j;
    j["config"] = cfg.provenance();
    j["dataset_id"] = bundle.dataset_id;
    j["task_kind"] = std::string(to_string(bundle.kind));
    return j;
  }

  void write_report(const std::string& name, const json& body) const {
    const std::string path = join_path(cfg.out_dir, name);
    atomic_write_file(path, body.dump(2) + "\n");
    std::printf("wrote %s\n", path.c_str());
  }

  void write_text(const std::string& name, const std::string& content) const {
    const std::string path = join_path(cfg.out_dir, name);
    atomic_write_file(path, content);
    std::printf("wrote %s\n", path.c_str());
  }
};

json failure_list_json(const std::vector<std::pair<std::string, std::string>>& failures) {
  json arr = json::array();
  for (const auto& [id, what] : failures) arr.push_back({{"id", id}, {"error", what}});
  return arr;
}

std::vector<Instance> select_instances(const TaskBundle& bundle, const std::string& csv) {
  if (csv.empty()) return bundle.instances;
  std::vector<Instance> out;
  for (const auto& wanted : split_csv(csv)) {
    const auto it = std::find_if(bundle.instances.begin(), bundle.instances.end(),
                                 [&](const Instance& i) { return i.id == wanted; });
    if (it == bundle.instances.end())
      raise(Errc::config, "instance '" + wanted + "' is not in the task");
    out.push_back(*it);
  }
  return out;
}

int cmd_explain(Session& s, const FlagOverrides& flags) {
  const std::string proxy_id = !flags.proxy.empty() ? flags.proxy : s.cfg.proxy_model;
  if (proxy_id.empty()) raise(Errc::config, "explain needs --proxy (or 'proxy' in the config)");
  const ModelSpec proxy = s.registry->find(proxy_id);
  const ExplainOptions opts = s.explain_options();
  const std::vector<Instance> instances = select_instances(s.bundle, flags.instances_csv);

  std::vector<std::pair<std::string, std::string>> failures;
  std::mutex mu;
  std::vector<std::string> written(instances.size());
  parallel_for(instances.size(), s.cfg.max_inflight, [&](std::size_t i) {
    const Instance& inst = instances[i];
    try {
      const ExplainResult res = explain_instance(inst, proxy, *s.client, opts);
      json j = s.report_header();
      j["instance_id"] = inst.id;
      j["proxy_model_id"] = proxy.model_id;
      j["method"] = std::string(to_string(opts.method));
      json features = json::array();
      for (std::size_t f = 0; f < res.seg->size(); ++f) features.push_back(res.seg->segment_text(f));
      j["features"] = std::move(features);
      j["values"] = res.attribution.values;
      j["intercept"] = res.attribution.intercept;
      j["n_samples"] = res.attribution.n_samples;
      j["anchor_label"] = res.responses.anchor_label;
      j["unparseable"] = res.responses.unparseable;
      j["condition_warning"] = res.attribution.condition_warning;
      const std::string name = "attr_" + sanitize_id(inst.id) + ".json";
      s.write_report(name, j);
      written[i] = name;
    } catch (const std::exception& e) {
      std::lock_guard<std::mutex> lock(mu);
      failures.emplace_back(inst.id, e.what());
    }
  });

  json summary = s.report_header();
  summary["proxy_model_id"] = proxy.model_id;
  json files = json::array();
  for (const auto& w : written)
    if (!w.empty()) files.push_back(w);
  summary["attribution_files"] = std::move(files);
  std::sort(failures.begin(), failures.end());
  summary["failures"] = failure_list_json(failures);
  summary["ledger"] = s.client->consumed().to_json();
  s.write_report("explain_summary.json", summary);
  return failures.empty() ? kExitOk : kExitPartial;
}

int cmd_matrix(Session& s, const FlagOverrides& flags) {
  std::vector<std::string> ids =
      !flags.models_csv.empty() ? split_csv(flags.models_csv) : s.cfg.matrix_models;
  if (ids.empty()) raise(Errc::config, "matrix needs --models (or 'models' in the config)");
  std::vector<ModelSpec> models;
  for (const auto& id : ids) models.push_back(s.registry->find(id));

  MatrixOptions mopts;
  mopts.explain = s.explain_options();
  mopts.metric = s.cfg.metric;
  mopts.filtered = s.cfg.filtered;

  const FidelityMatrix matrix = fidelity_matrix(models, s.bundle.instances, *s.client, mopts);

  json j = s.report_header();
  j["matrix"] = matrix.to_json();
  j["ledger"] = s.client->consumed().to_json();
  s.write_report("matrix.json", j);
  s.write_text("matrix.csv", matrix.to_csv());
  s.write_text("matrix.svg", matrix.to_svg());

  bool any_absent = false;
  for (const auto& row : matrix.cells)
    for (const auto& cell : row) any_absent |= cell.absent;
  return any_absent ? kExitPartial : kExitOk;
}

int cmd_aopc(Session& s, const FlagOverrides& flags) {
  const std::string proxy_id = !flags.proxy.empty() ? flags.proxy : s.cfg.proxy_model;
  const std::string target_id = !flags.target.empty() ? flags.target : s.cfg.target_model;
  if (proxy_id.empty() || target_id.empty())
    raise(Errc::config, "aopc needs --proxy and --target");
  const ModelSpec proxy = s.registry->find(proxy_id);
  const ModelSpec target = s.registry->find(target_id);
  const ExplainOptions opts = s.explain_options();
  const std::vector<Instance> instances = select_instances(s.bundle, flags.instances_csv);

  json per_instance = json::object();
  std::vector<std::pair<std::string, std::string>> failures;
  double sum = 0.0;
  std::size_t count = 0;
  std::string csv = "instance_id,aopc\n";
  for (const auto& inst : instances) {
    try {
      const ExplainResult res = explain_instance(inst, proxy, *s.client, opts);
      const double value = aopc(res.attribution, *res.seg, inst, target, *s.client, opts);
      per_instance[inst.id] = value;
      csv += csv_escape(inst.id) + "," + fmt_double(value) + "\n";
      sum += value;
      ++count;
    } catch (const std::exception& e) {
      failures.emplace_back(inst.id, e.what());
    }
  }

  json j = s.report_header();
  j["proxy_model_id"] = proxy.model_id;
  j["target_model_id"] = target.model_id;
  j["per_instance"] = std::move(per_instance);
  if (count > 0) j["mean_aopc"] = sum / static_cast<double>(count);
  j["failures"] = failure_list_json(failures);
  j["ledger"] = s.client->consumed().to_json();
  s.write_report("aopc.json", j);
  s.write_text("aopc.csv", csv);
  return failures.empty() ? kExitOk : kExitPartial;
}

// Mean attribution over the first attr_instances eval questions: one
// example-level explanation per model for the shared ICL block.
Attribution example_attribution(Session& s, const ModelSpec& model, const ExplainOptions& opts) {
  const std::size_t m = s.bundle.icl_task.icl_examples.size();
  if (m == 0) raise(Errc::no_examples, "task has no in-context examples");
  const std::size_t take = std::min<std::size_t>(
      std::max<std::size_t>(s.cfg.attr_instances, 1), s.bundle.instances.size());
  Attribution mean;
  mean.values.assign(m, 0.0);
  mean.method = opts.method;
  mean.proxy_model_id = model.model_id;
  mean.seed = opts.seed;
  for (std::size_t i = 0; i < take; ++i) {
    const ExplainResult res = explain_instance(s.bundle.instances[i], model, *s.client, opts);
    if (res.attribution.values.size() != m)
      raise(Errc::mask_shape, "example-level attribution expects example-block segmentation");
    for (std::size_t k = 0; k < m; ++k) mean.values[k] += res.attribution.values[k];
    mean.intercept += res.attribution.intercept;
    mean.n_samples = res.attribution.n_samples;
  }
  for (auto& v : mean.values) v /= static_cast<double>(take);
  mean.intercept /= static_cast<double>(take);
  return mean;
}

int cmd_compress(Session& s, const FlagOverrides& flags) {
  const std::string proxy_id = !flags.proxy.empty() ? flags.proxy : s.cfg.proxy_model;
  const std::string target_id = !flags.target.empty() ? flags.target : s.cfg.target_model;
  if (proxy_id.empty() || target_id.empty())
    raise(Errc::config, "compress needs --proxy and --target");
  if (s.bundle.kind != TaskKind::multiple_choice)
    raise(Errc::config, "compress runs on multiple-choice tasks with in-context examples");
  const ModelSpec proxy = s.registry->find(proxy_id);
  const ModelSpec target = s.registry->find(target_id);

  ExplainOptions opts = s.explain_options();
  opts.segmentation = SegmentationMode::example_block;

  CompressionOptions copts;
  copts.threshold_factor = s.cfg.threshold_factor;
  copts.decoding = s.cfg.decoding;
  copts.dataset_id = s.bundle.dataset_id;
  copts.subject_id = s.bundle.dataset_id;

  json j = s.report_header();
  j["proxy_model_id"] = proxy.model_id;
  j["target_model_id"] = target.model_id;

  const std::string strategy = flags.strategy;
  if (strategy != "attribution-asc" && strategy != "random" && strategy != "all")
    raise(Errc::config, "unknown deletion strategy '" + strategy + "'");

  std::optional<CompressionRun> oracle_run, proxy_run, random_run;
  if (strategy == "attribution-asc" || strategy == "all") {
    const Attribution oracle_attr = example_attribution(s, target, opts);
    oracle_run = compress(s.bundle.icl_task, oracle_attr, s.bundle.instances, target, *s.client,
                          copts);
    const Attribution proxy_attr = example_attribution(s, proxy, opts);
    proxy_run =
        compress(s.bundle.icl_task, proxy_attr, s.bundle.instances, target, *s.client, copts);
    j["oracle"] = oracle_run->to_json();
    j["proxy"] = proxy_run->to_json();
  }
  if (strategy == "random" || strategy == "all") {
    random_run = random_baseline(s.bundle.icl_task, s.bundle.instances, target, *s.client,
                                 s.cfg.repeats, s.cfg.seed, copts);
    j["random"] = random_run->to_json();
  }

  // One row per subject: MDTAs plus the removal ratios of each strategy
  // relative to the target's own explanations.
  std::string csv = "subject,mdta_oracle,mdta_proxy,mdta_random,r_proxy_pct,r_random_pct\n";
  std::string row = csv_escape(copts.subject_id);
  row += oracle_run ? "," + fmt_double(oracle_run->mdta) : ",";
  row += proxy_run ? "," + fmt_double(proxy_run->mdta) : ",";
  row += random_run ? "," + fmt_double(random_run->mdta) : ",";
  if (oracle_run && proxy_run) {
    const double r_proxy = removal_ratio(proxy_run->mdta, oracle_run->mdta);
    j["removal_ratio_proxy_pct"] = r_proxy;
    row += "," + fmt_double(r_proxy);
  } else {
    row += ",";
  }
  if (oracle_run && random_run) {
    const double r_random = removal_ratio(random_run->mdta, oracle_run->mdta);
    j["removal_ratio_random_pct"] = r_random;
    row += "," + fmt_double(r_random);
  } else {
    row += ",";
  }
  csv += row + "\n";

  j["ledger"] = s.client->consumed().to_json();
  s.write_report("compression.json", j);
  s.write_text("compression.csv", csv);
  return kExitOk;
}

int cmd_cost(Session& s, const FlagOverrides& flags) {
  if (!flags.cost_model.empty() && flags.tokens_in >= 0) {
    const ModelSpec model = s.registry->find(flags.cost_model);
    const double usd = estimate_cost(flags.tokens_in, std::max<long>(flags.tokens_out, 0), model,
                                     /*strict=*/true);
    json j = s.report_header();
    j["estimate"] = {{"model_id", model.model_id},
                     {"tokens_in", flags.tokens_in},
                     {"tokens_out", std::max<long>(flags.tokens_out, 0)},
                     {"usd", usd}};
    s.write_report("cost.json", j);
    return kExitOk;
  }

  json per_model = json::object();
  double total = 0.0;
  std::string csv = "model_id,tokens_in,tokens_out,records,usd\n";
  auto counts = s.store->counts();
  for (const auto& [model_id, totals] : s.store->token_totals()) {
    double usd = 0.0;
    try {
      const ModelSpec& spec = s.registry->find(model_id);
      usd = estimate_cost(totals.first, totals.second, spec);
    } catch (const Error&) {
      usd = 0.0;  // model absent from the registry: unpriced
    }
    long records = 0;
    if (const auto it = counts.find(model_id); it != counts.end())
      for (const auto& [ds, c] : it->second) records += c;
    per_model[model_id] = {{"tokens_in", totals.first},
                           {"tokens_out", totals.second},
                           {"records", records},
                           {"usd", usd}};
    csv += csv_escape(model_id) + "," + std::to_string(totals.first) + "," +
           std::to_string(totals.second) + "," + std::to_string(records) + "," + fmt_double(usd) +
           "\n";
    total += usd;
  }
  json j = s.report_header();
  j["per_model"] = std::move(per_model);
  j["total_usd"] = total;
  s.write_report("cost.json", j);
  s.write_text("cost.csv", csv);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"local attribution explanations via budget-friendly proxy models"};
  app.require_subcommand(1);

  FlagOverrides flags;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", flags.config_path, "run configuration JSON")->required();
    cmd->add_option("--method", flags.method, "lime | kernel-shap");
    cmd->add_option("--samples", flags.samples, "perturbation sample budget");
    cmd->add_option("--seed", flags.seed, "run seed");
    cmd->add_option("--segmentation", flags.segmentation, "word | sentence | example-block");
    cmd->add_option("--store", flags.store, "sample store path");
    cmd->add_flag("--replay-only", flags.replay_only, "no live queries; replay from the store");
    cmd->add_option("--max-inflight", flags.max_inflight, "max in-flight requests per endpoint");
    cmd->add_option("--out", flags.out, "output directory");
  };

  CLI::App* explain = app.add_subcommand("explain", "fit attributions for task instances");
  add_common(explain);
  explain->add_option("--proxy", flags.proxy, "proxy model id");
  explain->add_option("--instances", flags.instances_csv, "comma-separated instance ids");

  CLI::App* matrix = app.add_subcommand("matrix", "cross-model fidelity matrix");
  add_common(matrix);
  matrix->add_option("--models", flags.models_csv, "comma-separated model ids");
  matrix->add_option("--metric", flags.metric, "accuracy | mse | aopc");
  matrix->add_flag("--filtered", flags.filtered, "agreement-filter instances per cell");

  CLI::App* aopc_cmd = app.add_subcommand("aopc", "deletion-curve fidelity of proxy explanations");
  add_common(aopc_cmd);
  aopc_cmd->add_option("--proxy", flags.proxy, "proxy model id");
  aopc_cmd->add_option("--target", flags.target, "target model id");
  aopc_cmd->add_option("--instances", flags.instances_csv, "comma-separated instance ids");

  CLI::App* compress_cmd =
      app.add_subcommand("compress", "attribution-guided prompt compression");
  add_common(compress_cmd);
  compress_cmd->add_option("--proxy", flags.proxy, "proxy model id");
  compress_cmd->add_option("--target", flags.target, "target model id");
  compress_cmd->add_option("--strategy", flags.strategy, "attribution-asc | random | all");
  compress_cmd->add_option("--repeats", flags.repeats, "random baseline repeats");

  CLI::App* cost = app.add_subcommand("cost", "token usage and spend report");
  add_common(cost);
  cost->add_option("--model", flags.cost_model, "model id for a one-off estimate");
  cost->add_option("--tokens-in", flags.tokens_in, "input tokens for the estimate");
  cost->add_option("--tokens-out", flags.tokens_out, "output tokens for the estimate");

  CLI11_PARSE(app, argc, argv);

  try {
    Session session(flags);
    if (explain->parsed()) return cmd_explain(session, flags);
    if (matrix->parsed()) return cmd_matrix(session, flags);
    if (aopc_cmd->parsed()) return cmd_aopc(session, flags);
    if (compress_cmd->parsed()) return cmd_compress(session, flags);
    if (cost->parsed()) return cmd_cost(session, flags);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFatal;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFatal;
  }
  return kExitFatal;
}
