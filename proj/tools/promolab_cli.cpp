#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "promolab/common.h"
#include "promolab/experiment.h"
#include "promolab/metrics.h"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace promolab;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
};

ExperimentConfig load_config(const Globals& g) {
  ExperimentConfig c = g.config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(g.config_path);
  if (g.seed) {
    c.seed = *g.seed;
    c.world.synth.seed = *g.seed;
  }
  return c;
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json dataset_summary(const Dataset& d) {
  return {{"users", d.num_users()},
          {"items", d.catalog().size()},
          {"interactions", d.num_interactions()},
          {"mean_length", d.mean_length()},
          {"fingerprint", d.fingerprint()}};
}

// Everything a single-repeat stage command needs.
struct Session {
  ExperimentConfig config;
  std::unique_ptr<TextEmbedder> embedder;
  std::shared_ptr<QueryLedger> ledger = std::make_shared<QueryLedger>();
  std::unique_ptr<Gateway> gateway;
  World world;
  std::unique_ptr<VictimHandle> victim;

  explicit Session(ExperimentConfig c) : config(std::move(c)) {
    embedder = make_embedder(config.embedder);
    ledger->set_cap(VictimHandle::kAttackEndpoint, config.distill.query_budget);
    gateway = std::make_unique<Gateway>(make_operator(config.operators), ledger);
    world = build_world(config.world, derive_seed(config.world.synth.seed, 0));
    const auto& hidden =
        config.victim.hidden_prompt.empty() ? default_hidden_prompt() : config.victim.hidden_prompt;
    victim = std::make_unique<VictimHandle>(
        PromptConditionedScorer(fit_stats(victim_training_sequences(*world.data), world.catalog, *embedder), hidden,
                                *embedder, config.victim.params),
        ledger);
  }

  RunContext context(const fs::path& out) { return RunContext{config, *embedder, *gateway, out}; }
  std::uint64_t seed() const { return derive_seed(config.seed, 0); }
};

int cmd_synth(const Globals& g) {
  auto c = load_config(g);
  SynthConfig s = c.world.synth;
  const Dataset d = synth_generate(s);
  const fs::path out(g.out);
  write_catalog(out / "catalog.jsonl", d.catalog());
  write_interactions(out / "interactions.jsonl", d);
  write_json(out / "manifest.json", {{"synth_seed", s.seed}, {"dataset", dataset_summary(d)}});
  std::cout << "wrote " << d.num_users() << " users and " << d.catalog().size() << " items to " << out << '\n';
  return 0;
}

int cmd_ingest(const Globals& g, const std::string& catalog_path, const std::string& interactions_path) {
  auto c = load_config(g);
  auto catalog = std::make_shared<const Catalog>(load_catalog(catalog_path));
  const Dataset raw = load_interactions(interactions_path, catalog);
  const Dataset d = truncate(k_core_filter(raw, c.world.k_core), c.world.max_len);
  const fs::path out(g.out);
  write_catalog(out / "catalog.jsonl", d.catalog());
  write_interactions(out / "interactions.jsonl", d);
  write_json(out / "manifest.json", {{"raw", dataset_summary(raw)},
                                     {"processed", dataset_summary(d)},
                                     {"targets", select_targets(d, c.world.n_targets)}});
  std::cout << "kept " << d.num_users() << " users and " << d.catalog().size() << " items\n";
  return 0;
}

int cmd_distill(const Globals& g) {
  Session s(load_config(g));
  const auto r = run_stage1(s.context(g.out), s.world, *s.victim, s.seed());
  write_json(fs::path(g.out) / "ledger.json", s.ledger->summary());
  std::cout << "distilled prompt (score " << *r.evolution.best.score << ", " << r.evolution.generations
            << " generations):\n"
            << r.evolution.best.text << '\n';
  return 0;
}

int cmd_surrogate(const Globals& g) {
  Session s(load_config(g));
  const auto r = run_stage1(s.context(g.out), s.world, *s.victim, s.seed());
  const auto inputs = evaluation_inputs(s.world.split);
  std::size_t k_max = 1;
  for (auto k : s.config.agreement_ks) k_max = std::max(k_max, k);
  std::vector<std::vector<std::string>> sur, vic;
  for (const auto& in : inputs) sur.push_back(r.surrogate->recommend(in, k_max).items);
  for (auto& l : s.victim->query_batch(inputs, k_max, VictimHandle::kEvalEndpoint)) vic.push_back(std::move(l.items));
  json agr = json::object();
  for (auto k : s.config.agreement_ks) agr["agreement@" + std::to_string(k)] = agreement(sur, vic, k);
  write_json(fs::path(g.out) / "surrogate.json", {{"prompt", r.evolution.best.text},
                                                  {"weights", r.surrogate->weights()},
                                                  {"agreement", agr},
                                                  {"ledger", s.ledger->summary()}});
  std::cout << agr.dump(2) << '\n';
  return 0;
}

int cmd_forge(const Globals& g, Variant variant) {
  Session s(load_config(g));
  auto ctx = s.context(g.out);
  const auto r1 = run_stage1(ctx, s.world, *s.victim, s.seed());
  const auto r2 = run_stage2(ctx, variant, s.world, r1, derive_seed(s.seed(), 10 + static_cast<std::uint64_t>(variant)));
  const fs::path out(g.out);
  if (r2.titles) {
    write_title_outputs(out / "titles", *r2.titles);
    std::size_t accepted = 0;
    for (const auto& t : r2.titles->results) accepted += !t.fallback;
    std::cout << "refined " << r2.titles->results.size() << " titles (" << accepted << " accepted, "
              << r2.titles->results.size() - accepted << " fallback)\n";
  }
  if (uses_poison(variant)) {
    write_poison(out / "poison", r2.poison);
    std::cout << "generated " << r2.poison.sequences.size() << " poison sequences\n";
  }
  return 0;
}

int cmd_attack(const Globals& g, const std::string& format) {
  const auto c = load_config(g);
  const auto report = run_experiment(c, fs::path(g.out));
  if (format == "csv") export_report(report, fs::path(g.out) / "report.csv", ReportFormat::csv);
  std::cout << report.data.at("summary").dump(2) << '\n';
  return 0;
}

int cmd_sweep(const Globals& g, const std::string& axis_name, std::vector<double> values) {
  const auto c = load_config(g);
  const auto axis = sweep_axis_from_string(axis_name);
  if (values.empty()) values = default_sweep_values(axis);
  const auto result = sweep(c, axis, values);
  const fs::path out(g.out);
  write_json(out / ("sweep_" + axis_name + ".json"), result.to_json());
  {
    std::ofstream csv(out / ("sweep_" + axis_name + ".csv"));
    csv << result.to_csv();
  }
  int failures = 0;
  for (const auto& cell : result.cells) {
    if (!cell.report) {
      std::cerr << "cell " << cell.value << " failed: " << cell.error << '\n';
      ++failures;
    }
  }
  std::cout << "wrote " << result.cells.size() << " cells to " << out << '\n';
  return failures ? 1 : 0;
}

int cmd_report(const std::string& input, const std::string& format, const std::string& output) {
  const auto report = load_report(input);
  if (!output.empty()) {
    export_report(report, output, format == "csv" ? ReportFormat::csv : ReportFormat::json);
  } else if (format == "csv") {
    std::cout << report_csv(report);
  } else {
    std::cout << report.data.at("summary").dump(2) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"promolab: promotion-attack experiments against prompt-conditioned sequential recommenders"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config_path, "JSON experiment config")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Override the experiment and synthetic-data seeds");
  app.add_option("--out", g.out, "Output directory")->capture_default_str();

  auto* synth = app.add_subcommand("synth", "Generate a synthetic catalog and interaction log");
  auto* ingest = app.add_subcommand("ingest", "Validate and preprocess catalog.jsonl + interactions.jsonl");
  std::string catalog_path, interactions_path;
  ingest->add_option("--catalog", catalog_path)->required()->check(CLI::ExistingFile);
  ingest->add_option("--interactions", interactions_path)->required()->check(CLI::ExistingFile);
  auto* distill = app.add_subcommand("distill", "Distill the hidden prompt and build the surrogate corpus");
  auto* surrogate = app.add_subcommand("surrogate", "Fit the surrogate and measure agreement with the victim");
  auto* titles = app.add_subcommand("forge-titles", "Refine target titles against anchor patterns");
  auto* poison = app.add_subcommand("forge-poison", "Generate poisoning sequences");
  std::string poison_variant = "puda_poison_only";
  poison->add_option("--variant", poison_variant, "puda_poison_only, puda, random or bandwagon")
      ->capture_default_str();
  auto* attack = app.add_subcommand("attack", "Run the end-to-end experiment");
  std::string attack_format = "json";
  attack->add_option("--format", attack_format)->check(CLI::IsMember({"json", "csv"}));
  auto* sweep_cmd = app.add_subcommand("sweep", "Repeat the experiment over a budget or ratio axis");
  std::string axis = "budget";
  std::vector<double> values;
  sweep_cmd->add_option("--axis", axis)->check(CLI::IsMember({"budget", "ratio"}))->capture_default_str();
  sweep_cmd->add_option("--values", values, "Axis values (defaults per axis)");
  auto* report = app.add_subcommand("report", "Print or convert a saved report");
  std::string report_in, report_format = "json", report_out;
  report->add_option("--in", report_in, "report.json")->required()->check(CLI::ExistingFile);
  report->add_option("--format", report_format)->check(CLI::IsMember({"json", "csv"}));
  report->add_option("--to", report_out, "Write here instead of stdout");

  CLI11_PARSE(app, argc, argv);
  if (*seed_opt) g.seed = seed;

  try {
    if (*synth) return cmd_synth(g);
    if (*ingest) return cmd_ingest(g, catalog_path, interactions_path);
    if (*distill) return cmd_distill(g);
    if (*surrogate) return cmd_surrogate(g);
    if (*titles) return cmd_forge(g, Variant::puda_titles_only);
    if (*poison) {
      const auto v = variant_from_string(poison_variant);
      if (!uses_poison(v)) throw ConfigError("variant '" + poison_variant + "' does not generate poison");
      return cmd_forge(g, v);
    }
    if (*attack) return cmd_attack(g, attack_format);
    if (*sweep_cmd) return cmd_sweep(g, axis, values);
    if (*report) return cmd_report(report_in, report_format, report_out);
  } catch (const StageError& e) {
    std::cerr << "error [" << e.stage() << "]: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
