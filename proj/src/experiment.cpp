#include "promolab/experiment.h"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "promolab/common.h"
#include "promolab/metrics.h"

namespace promolab {

using nlohmann::json;

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::clean: return "clean";
    case Variant::random: return "random";
    case Variant::bandwagon: return "bandwagon";
    case Variant::puda: return "puda";
    case Variant::puda_titles_only: return "puda_titles_only";
    case Variant::puda_poison_only: return "puda_poison_only";
  }
  return "unknown";
}

Variant variant_from_string(std::string_view name) {
  for (auto v : {Variant::clean, Variant::random, Variant::bandwagon, Variant::puda, Variant::puda_titles_only,
                 Variant::puda_poison_only}) {
    if (to_string(v) == name) return v;
  }
  throw ConfigError("unknown attack variant '" + std::string(name) + "'");
}

bool uses_titles(Variant v) { return v == Variant::puda || v == Variant::puda_titles_only; }
bool uses_poison(Variant v) { return v != Variant::clean && v != Variant::puda_titles_only; }

const std::string& default_hidden_prompt() {
  static const std::string prompt =
      "You are a helpful e-commerce assistant. Based on the user's recent purchases, recommend the next product "
      "they will buy, considering items with similar descriptions.";
  return prompt;
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

namespace {

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

HttpEndpoint read_endpoint(const json& j) {
  HttpEndpoint e;
  read(j, "base_url", e.base_url);
  if (j.contains("api_key_env")) {
    const auto name = j.at("api_key_env").get<std::string>();
    if (const char* v = std::getenv(name.c_str())) e.api_key = v;
  }
  if (j.contains("timeout_ms")) e.timeout = std::chrono::milliseconds(j.at("timeout_ms").get<long>());
  read(j, "max_retries", e.max_retries);
  if (j.contains("backoff_ms")) e.backoff = std::chrono::milliseconds(j.at("backoff_ms").get<long>());
  return e;
}

json endpoint_json(const HttpEndpoint& e) {
  return {{"base_url", e.base_url},
          {"timeout_ms", e.timeout.count()},
          {"max_retries", e.max_retries},
          {"backoff_ms", e.backoff.count()}};
}

void read_params(const json& j, RecommenderParams& p) {
  read(j, "alpha", p.alpha);
  read(j, "tau_w", p.tau_w);
  read(j, "recent_window", p.recent_window);
  read(j, "exclude_seen", p.exclude_seen);
  read(j, "projection_seed", p.projection_seed);
}

json params_json(const RecommenderParams& p) {
  return {{"alpha", p.alpha},
          {"tau_w", p.tau_w},
          {"recent_window", p.recent_window},
          {"exclude_seen", p.exclude_seen},
          {"projection_seed", p.projection_seed}};
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  try {
    if (j.contains("world")) {
      const auto& w = j.at("world");
      read(w, "source", c.world.source);
      if (w.contains("catalog")) c.world.catalog_path = w.at("catalog").get<std::string>();
      if (w.contains("interactions")) c.world.interactions_path = w.at("interactions").get<std::string>();
      read(w, "k_core", c.world.k_core);
      read(w, "max_len", c.world.max_len);
      read(w, "n_targets", c.world.n_targets);
      if (w.contains("synth")) {
        const auto& s = w.at("synth");
        auto& sc = c.world.synth;
        read(s, "n_users", sc.n_users);
        read(s, "n_items", sc.n_items);
        read(s, "min_len", sc.min_len);
        read(s, "max_len", sc.max_len);
        read(s, "vocab", sc.vocab);
        read(s, "n_genres", sc.n_genres);
        read(s, "popularity_skew", sc.popularity_skew);
        read(s, "locality", sc.locality);
        read(s, "genre_stickiness", sc.genre_stickiness);
        read(s, "seed", sc.seed);
      }
    }
    if (j.contains("victim")) {
      const auto& v = j.at("victim");
      if (v.contains("params")) read_params(v.at("params"), c.victim.params);
      if (v.contains("sealed")) read(v.at("sealed"), "hidden_prompt", c.victim.hidden_prompt);
    }
    if (j.contains("distill")) {
      const auto& d = j.at("distill");
      read(d, "observable_ratio", c.distill.observable_ratio);
      read(d, "n_per_seq", c.distill.n_per_seq);
      read(d, "query_budget", c.distill.query_budget);
      read(d, "demo_source", c.distill.demo_source);
      read(d, "demo_holdout", c.distill.demo_holdout);
      read(d, "subsample_min_fraction", c.distill.perturbation.subsample_min_fraction);
      read(d, "subsample_contiguous", c.distill.perturbation.contiguous);
      if (d.contains("calibration")) {
        const auto& k = d.at("calibration");
        read(k, "enabled", c.distill.calibration.enabled);
        read(k, "holdout_fraction", c.distill.calibration.holdout_fraction);
        read(k, "grid", c.distill.calibration.grid);
      }
    }
    if (j.contains("evolution")) {
      const auto& e = j.at("evolution");
      read(e, "population_size", c.evolution.population_size);
      read(e, "n_mutations", c.evolution.n_mutations);
      read(e, "max_generations", c.evolution.max_generations);
      read(e, "metric_k", c.evolution.metric_k);
      read(e, "max_demo_texts", c.evolution.max_demo_texts);
      read(e, "temperature", c.evolution.temperature);
    }
    if (j.contains("titles")) {
      const auto& t = j.at("titles");
      read(t, "popular_fraction", c.anchors.popular_fraction);
      read(t, "k_probe", c.anchors.k_probe);
      if (t.contains("gamma") && !t.at("gamma").is_null()) c.anchors.gamma = t.at("gamma").get<std::size_t>();
      read(t, "gamma_percentile", c.anchors.gamma_percentile);
      read(t, "theta_sem", c.refinement.theta_sem);
      read(t, "theta_lex", c.refinement.theta_lex);
      read(t, "max_iters", c.refinement.max_iters);
      read(t, "n_candidates", c.refinement.n_candidates);
      read(t, "top_p", c.refinement.top_p);
      read(t, "temperature", c.refinement.temperature);
    }
    if (j.contains("poison")) {
      const auto& p = j.at("poison");
      read(p, "budget", c.poison.budget);
      read(p, "length", c.poison.length);
      read(p, "top_j", c.poison.top_j);
      read(p, "guarantee_target", c.poison.guarantee_target);
    }
    if (j.contains("operators")) {
      const auto& o = j.at("operators");
      read(o, "backend", c.operators.backend);
      read(o, "model", c.operators.model);
      if (o.contains("template_dir")) c.operators.template_dir = o.at("template_dir").get<std::string>();
      read(o, "template_version", c.operators.template_version);
      if (o.contains("endpoint")) c.operators.endpoint = read_endpoint(o.at("endpoint"));
    }
    if (j.contains("embedder")) {
      const auto& e = j.at("embedder");
      read(e, "backend", c.embedder.backend);
      read(e, "dim", c.embedder.dim);
      read(e, "model", c.embedder.model);
      if (e.contains("endpoint")) c.embedder.endpoint = read_endpoint(e.at("endpoint"));
    }
    if (j.contains("experiment")) {
      const auto& x = j.at("experiment");
      if (x.contains("variants")) {
        c.variants.clear();
        for (const auto& v : x.at("variants")) c.variants.push_back(variant_from_string(v.get<std::string>()));
      }
      read(x, "repeats", c.repeats);
      read(x, "seed", c.seed);
      read(x, "eval_ks", c.eval_ks);
      read(x, "agreement_ks", c.agreement_ks);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

json ExperimentConfig::to_json(bool include_sealed) const {
  const auto& s = world.synth;
  json j;
  j["world"] = {{"source", world.source},
                {"catalog", world.catalog_path.string()},
                {"interactions", world.interactions_path.string()},
                {"k_core", world.k_core},
                {"max_len", world.max_len},
                {"n_targets", world.n_targets},
                {"synth",
                 {{"n_users", s.n_users},
                  {"n_items", s.n_items},
                  {"min_len", s.min_len},
                  {"max_len", s.max_len},
                  {"vocab", s.vocab},
                  {"n_genres", s.n_genres},
                  {"popularity_skew", s.popularity_skew},
                  {"locality", s.locality},
                  {"genre_stickiness", s.genre_stickiness},
                  {"seed", s.seed}}}};
  j["victim"] = {{"params", params_json(victim.params)}};
  if (include_sealed) j["victim"]["sealed"] = {{"hidden_prompt", victim.hidden_prompt}};
  j["distill"] = {{"observable_ratio", distill.observable_ratio},
                  {"n_per_seq", distill.n_per_seq},
                  {"query_budget", distill.query_budget},
                  {"demo_source", distill.demo_source},
                  {"demo_holdout", distill.demo_holdout},
                  {"subsample_min_fraction", distill.perturbation.subsample_min_fraction},
                  {"subsample_contiguous", distill.perturbation.contiguous},
                  {"calibration",
                   {{"enabled", distill.calibration.enabled},
                    {"holdout_fraction", distill.calibration.holdout_fraction},
                    {"grid", distill.calibration.grid}}}};
  j["evolution"] = {{"population_size", evolution.population_size},
                    {"n_mutations", evolution.n_mutations},
                    {"max_generations", evolution.max_generations},
                    {"metric_k", evolution.metric_k},
                    {"max_demo_texts", evolution.max_demo_texts},
                    {"temperature", evolution.temperature}};
  j["titles"] = {{"popular_fraction", anchors.popular_fraction},
                 {"k_probe", anchors.k_probe},
                 {"gamma", anchors.gamma ? json(*anchors.gamma) : json(nullptr)},
                 {"gamma_percentile", anchors.gamma_percentile},
                 {"theta_sem", refinement.theta_sem},
                 {"theta_lex", refinement.theta_lex},
                 {"max_iters", refinement.max_iters},
                 {"n_candidates", refinement.n_candidates},
                 {"top_p", refinement.top_p},
                 {"temperature", refinement.temperature}};
  j["poison"] = {{"budget", poison.budget},
                 {"length", poison.length},
                 {"top_j", poison.top_j},
                 {"guarantee_target", poison.guarantee_target}};
  j["operators"] = {{"backend", operators.backend},
                    {"model", operators.model},
                    {"template_dir", operators.template_dir.string()},
                    {"template_version", operators.template_version},
                    {"endpoint", endpoint_json(operators.endpoint)}};
  j["embedder"] = {{"backend", embedder.backend},
                   {"dim", embedder.dim},
                   {"model", embedder.model},
                   {"endpoint", endpoint_json(embedder.endpoint)}};
  json variant_names = json::array();
  for (auto v : variants) variant_names.push_back(std::string(to_string(v)));
  j["experiment"] = {{"variants", variant_names},
                     {"repeats", repeats},
                     {"seed", seed},
                     {"eval_ks", eval_ks},
                     {"agreement_ks", agreement_ks}};
  return j;
}

std::string ExperimentConfig::hash() const { return to_hex(fnv1a64(to_json(false).dump())); }

void ExperimentConfig::validate() const {
  if (world.source != "synthetic" && world.source != "files") {
    throw ConfigError("world.source must be 'synthetic' or 'files'");
  }
  if (world.k_core < 1 || world.max_len < 3) throw ConfigError("world.k_core must be >= 1 and max_len >= 3");
  if (world.n_targets < 1) throw ConfigError("world.n_targets must be >= 1");
  if (!(distill.observable_ratio > 0.0 && distill.observable_ratio <= 1.0)) {
    throw ConfigError("distill.observable_ratio must be in (0, 1]");
  }
  demo_source_from_string(distill.demo_source);
  if (!(distill.demo_holdout > 0.0 && distill.demo_holdout < 1.0)) throw ConfigError("distill.demo_holdout must be in (0, 1)");
  evolution.validate();
  refinement.validate();
  if (!(poison.budget >= 0.0 && poison.budget <= 0.1)) throw ConfigError("poison.budget must be in [0, 0.1]");
  if (poison.top_j < 1) throw ConfigError("poison.top_j must be >= 1");
  if (poison.length == 1) throw ConfigError("poison.length must be >= 2");
  if (repeats < 1) throw ConfigError("experiment.repeats must be >= 1");
  if (eval_ks.empty() || agreement_ks.empty()) throw ConfigError("metric cutoffs must not be empty");
  for (auto k : eval_ks) {
    if (k == 0) throw ConfigError("metric cutoffs must be >= 1");
  }
  for (auto k : agreement_ks) {
    if (k == 0) throw ConfigError("metric cutoffs must be >= 1");
  }
  if (variants.empty()) throw ConfigError("experiment.variants must not be empty");
  if (operators.backend != "mock" && operators.backend != "remote") {
    throw ConfigError("operators.backend must be 'mock' or 'remote'");
  }
  if (embedder.backend != "hashing" && embedder.backend != "remote") {
    throw ConfigError("embedder.backend must be 'hashing' or 'remote'");
  }
}

std::unique_ptr<TextEmbedder> make_embedder(const EmbedderConfig& config) {
  if (config.backend == "remote") {
    return std::make_unique<RemoteEmbedder>(std::make_shared<HttpJsonClient>(config.endpoint), config.model,
                                            config.dim);
  }
  return std::make_unique<HashingEmbedder>(config.dim);
}

std::shared_ptr<TextOperator> make_operator(const OperatorConfig& config) {
  if (config.backend == "remote") {
    const auto dir = config.template_dir.empty() ? std::filesystem::path(PROMOLAB_ASSET_DIR) / "templates"
                                                 : config.template_dir;
    return std::make_shared<RemoteTextOperator>(std::make_shared<HttpJsonClient>(config.endpoint), config.model,
                                                TemplateSet::load(dir, config.template_version));
  }
  return std::make_shared<MockTextOperator>();
}

// ---------------------------------------------------------------------------
// World and stages
// ---------------------------------------------------------------------------

World build_world(const WorldConfig& config, std::uint64_t seed) {
  std::optional<Dataset> raw;
  if (config.source == "files") {
    auto catalog = std::make_shared<const Catalog>(load_catalog(config.catalog_path));
    raw.emplace(load_interactions(config.interactions_path, catalog));
  } else {
    SynthConfig s = config.synth;
    s.seed = seed;
    raw.emplace(synth_generate(s));
  }
  Dataset data = truncate(k_core_filter(*raw, config.k_core), config.max_len);
  if (data.num_users() == 0) throw ConfigError("no users survive preprocessing");
  World w;
  w.catalog = data.catalog_ptr();
  w.split = split_leave_last_two(data);
  w.targets = select_targets(data, config.n_targets);
  w.data = std::make_shared<const Dataset>(std::move(data));
  return w;
}

std::vector<std::vector<std::string>> evaluation_inputs(const Split& split) {
  std::vector<std::vector<std::string>> out;
  for (const auto& u : split.users) {
    if (!u.evaluable()) continue;
    auto seq = u.train;
    seq.push_back(*u.valid);
    out.push_back(std::move(seq));
  }
  return out;
}

std::vector<InteractionSequence> victim_training_sequences(const Dataset& data) {
  return training_view(data).sequences();
}

namespace {

template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

void write_json(const std::filesystem::path& path, const json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace

Stage1Result run_stage1(const RunContext& ctx, const World& world, const VictimHandle& victim, std::uint64_t seed) {
  const auto& cfg = ctx.config;
  Stage1Result r;
  r.observable = stage("observe", [&] {
    return std::make_shared<const Dataset>(sample_observable(*world.data, cfg.distill.observable_ratio,
                                                             derive_seed(seed, 1)));
  });
  r.observed = labeled_examples(*r.observable);
  r.synthetic = stage("synthesize", [&] {
    return build_synthetic(r.observed, victim, cfg.distill.n_per_seq, derive_seed(seed, 2),
                           cfg.distill.perturbation);
  });
  r.corpus = assemble_corpus(r.observed, r.synthetic);

  r.evolution = stage("evolve", [&] {
    auto split = split_demos(r.corpus, cfg.distill.demo_holdout, demo_source_from_string(cfg.distill.demo_source),
                             derive_seed(seed, 5));
    auto stats = fit_stats(counting_sequences(split.fit), world.catalog, ctx.embedder);
    PromptEvaluator evaluator(stats, std::move(split.demos), ctx.embedder, cfg.victim.params, cfg.evolution.metric_k);
    EvolutionConfig ec = cfg.evolution;
    ec.seed = derive_seed(seed, 3);
    return evolve(ctx.gateway, evaluator, render_demos(r.observed, *world.catalog, ec.max_demo_texts), ec);
  });

  r.surrogate = stage("surrogate", [&] {
    CalibrationConfig cal = cfg.distill.calibration;
    cal.seed = derive_seed(seed, 4);
    return std::make_shared<const PromptConditionedScorer>(fit_surrogate(
        r.corpus, r.evolution.best.text, world.catalog, ctx.embedder, cfg.victim.params, cal, &r.calibration));
  });

  if (ctx.artifacts) {
    const auto dir = *ctx.artifacts / "distill";
    std::filesystem::create_directories(dir);
    write_corpus(dir / "d_syn.jsonl", dir / "d_syn.provenance.jsonl", r.synthetic);
    write_corpus(dir / "d_st.jsonl", dir / "d_st.provenance.jsonl", r.corpus.examples);
    write_trace(dir / "evolution.jsonl", r.evolution.trace);
    write_json(dir / "manifest.json", {{"prompt", r.evolution.best.text},
                                       {"score", *r.evolution.best.score},
                                       {"generations", r.evolution.generations},
                                       {"elite_scores", r.evolution.elite_scores},
                                       {"weights", r.surrogate->weights()}});
  }
  return r;
}

Stage2Result run_stage2(const RunContext& ctx, Variant variant, const World& world, const Stage1Result& stage1,
                        std::uint64_t seed) {
  const auto& cfg = ctx.config;
  Stage2Result r;
  r.catalog = world.catalog;
  const Dataset& observable = *stage1.observable;
  const PopularityTable pop = popularity(observable);
  std::vector<std::vector<std::string>> probes;
  const Dataset observed_view = training_view(observable);
  for (const auto& s : observed_view.sequences()) probes.push_back(s.items);

  if (uses_titles(variant)) {
    r.titles = stage("titles", [&] {
      return forge_titles(ctx.gateway, *stage1.surrogate, probes, pop, world.targets, ctx.embedder, cfg.anchors,
                          cfg.refinement, derive_seed(seed, 4));
    });
    r.catalog = std::make_shared<const Catalog>(world.catalog->with_titles(r.titles->overlay()));
  }
  if (!uses_poison(variant)) return r;

  r.poison = stage("poison", [&] {
    PoisonConfig pc;
    pc.budget = cfg.poison.budget;
    pc.top_j = cfg.poison.top_j;
    pc.targets = world.targets;
    pc.popular = top_fraction(pop, cfg.anchors.popular_fraction);
    pc.guarantee_target = cfg.poison.guarantee_target;
    pc.seed = derive_seed(seed, 5);
    const std::size_t length = cfg.poison.length ? cfg.poison.length : default_poison_length(observable);
    const std::size_t n_users = world.data->num_users();
    if (variant == Variant::random) return random_attack(pc, *r.catalog, n_users, length);
    if (variant == Variant::bandwagon) return bandwagon_attack(pc, *r.catalog, n_users, length);

    // The surrogate sees the refined titles; its weights stay as distilled.
    std::shared_ptr<const PromptConditionedScorer> surrogate = stage1.surrogate;
    if (r.catalog != world.catalog) {
      surrogate = std::make_shared<const PromptConditionedScorer>(fit_surrogate(
          stage1.corpus, stage1.surrogate->weights(), r.catalog, ctx.embedder, cfg.victim.params));
    }
    const TitleEmbeddings titles(*r.catalog, ctx.embedder);
    const Embedding e_avg = avg_real_embedding(observable, titles);
    return generate_dataset(pc, PoisonContext{*surrogate, *r.catalog, titles, e_avg}, n_users, length);
  });
  return r;
}

// ---------------------------------------------------------------------------
// Experiment
// ---------------------------------------------------------------------------

namespace {

using Lists = std::vector<std::vector<std::string>>;

Lists local_lists(const PromptConditionedScorer& scorer, const Lists& inputs, std::size_t k) {
  Lists out;
  out.reserve(inputs.size());
  for (const auto& in : inputs) out.push_back(scorer.recommend(in, k).items);
  return out;
}

Lists victim_lists(const VictimHandle& victim, const Lists& inputs, std::size_t k) {
  Lists out;
  for (auto& r : victim.query_batch(inputs, k, VictimHandle::kEvalEndpoint)) out.push_back(std::move(r.items));
  return out;
}

std::vector<EvalCase> target_cases(const Lists& lists, const std::vector<std::string>& targets) {
  std::vector<EvalCase> cases;
  cases.reserve(lists.size() * targets.size());
  for (const auto& l : lists) {
    for (const auto& t : targets) cases.push_back({l, t});
  }
  return cases;
}

void add_exposure(json& m, const std::string& prefix, const Lists& lists, const std::vector<std::string>& targets,
                  const std::vector<std::size_t>& ks) {
  const auto cases = target_cases(lists, targets);
  for (auto k : ks) {
    m[prefix + "hr@" + std::to_string(k)] = hit_ratio(cases, k);
    m[prefix + "ndcg@" + std::to_string(k)] = ndcg(cases, k);
  }
}

void add_agreement(json& m, const std::string& name, const Lists& a, const Lists& b,
                   const std::vector<std::size_t>& ks) {
  for (auto k : ks) m[name + "@" + std::to_string(k)] = agreement(a, b, k);
}

json run_repeat(const ExperimentConfig& config, const TextEmbedder& embedder,
                const std::shared_ptr<TextOperator>& backend, std::size_t repeat,
                const std::optional<std::filesystem::path>& artifacts) {
  const std::uint64_t seed = derive_seed(config.seed, repeat);
  auto ledger = std::make_shared<QueryLedger>();
  ledger->set_cap(VictimHandle::kAttackEndpoint, config.distill.query_budget);
  Gateway gateway(backend, ledger);
  std::optional<std::filesystem::path> dir;
  if (artifacts) dir = *artifacts / ("repeat_" + std::to_string(repeat));
  RunContext ctx{config, embedder, gateway, dir};

  const World world = stage("world", [&] { return build_world(config.world, derive_seed(config.world.synth.seed, repeat)); });
  const std::string& hidden = config.victim.hidden_prompt.empty() ? default_hidden_prompt() : config.victim.hidden_prompt;
  const auto victim_sequences = victim_training_sequences(*world.data);
  const VictimHandle victim = stage("victim", [&] {
    return VictimHandle(PromptConditionedScorer(fit_stats(victim_sequences, world.catalog, embedder), hidden, embedder,
                                                config.victim.params),
                        ledger);
  });
  if (dir) {
    write_catalog(*dir / "world" / "catalog.jsonl", *world.catalog);
    write_interactions(*dir / "world" / "interactions.jsonl", *world.data);
  }

  const Stage1Result s1 = run_stage1(ctx, world, victim, seed);

  std::size_t k_max = 0;
  for (auto k : config.eval_ks) k_max = std::max(k_max, k);
  for (auto k : config.agreement_ks) k_max = std::max(k_max, k);

  const Lists inputs = evaluation_inputs(world.split);
  if (inputs.empty()) throw StageError("evaluate", "no evaluable users");
  const Split obs_split = split_leave_last_two(*s1.observable);
  const Lists obs_inputs = evaluation_inputs(obs_split);

  const Lists clean_victim = stage("evaluate", [&] { return victim_lists(victim, inputs, k_max); });
  const Lists clean_surrogate = local_lists(*s1.surrogate, inputs, k_max);
  std::size_t eval_queries = inputs.size();

  json variants = json::object();
  json titles_table = json::object();
  for (Variant v : config.variants) {
    const std::string name(to_string(v));
    const Stage2Result s2 = run_stage2(ctx, v, world, s1, derive_seed(seed, 10 + static_cast<std::uint64_t>(v)));
    json m = json::object();

    // Transfer: refit the victim on D plus the poison with the title overlay.
    Lists post_victim = clean_victim;
    std::shared_ptr<const PromptConditionedScorer> post_surrogate = s1.surrogate;
    if (v != Variant::clean) {
      auto seqs = victim_sequences;
      for (const auto& p : s2.poison.sequences) seqs.push_back({p.user_id, p.items});
      const VictimHandle transferred(
          PromptConditionedScorer(fit_stats(seqs, s2.catalog, embedder), hidden, embedder, config.victim.params),
          ledger);
      post_victim = stage("transfer", [&] { return victim_lists(transferred, inputs, k_max); });
      eval_queries += inputs.size();
      post_surrogate = std::make_shared<const PromptConditionedScorer>(
          stage("retrain", [&] {
            return retrain_with_poison(s1.observed, s2.poison.to_dataset(s2.catalog), s1.evolution.best.text,
                                       s2.catalog, embedder, config.victim.params);
          }));
    }
    add_exposure(m, "", post_victim, world.targets, config.eval_ks);
    if (!obs_inputs.empty()) {
      add_exposure(m, "surrogate_", local_lists(*post_surrogate, obs_inputs, k_max), world.targets, config.eval_ks);
    }
    add_agreement(m, "agreement_pre", clean_surrogate, clean_victim, config.agreement_ks);
    add_agreement(m, "agreement_post", local_lists(*post_surrogate, inputs, k_max), post_victim, config.agreement_ks);
    std::size_t forced = 0;
    for (const auto& p : s2.poison.sequences) forced += p.forced;
    m["poison_users"] = s2.poison.sequences.size();
    m["forced_sequences"] = forced;

    if (s2.titles) {
      json t = json::object();
      double sim_sum = 0.0;
      for (const auto& res : s2.titles->results) {
        const double sim = title_similarity(res.original, res.title);
        sim_sum += sim;
        const auto& last = res.audit.empty() ? AuditEntry{} : res.audit.back();
        t[res.item_id] = {{"original", res.original},
                          {"refined", res.title},
                          {"title_similarity", sim},
                          {"fallback", res.fallback},
                          {"iterations", res.iterations},
                          {"sim_sem", res.fallback ? json(nullptr) : json(last.sem)},
                          {"sim_lex", res.fallback ? json(nullptr) : json(last.lex)}};
      }
      m["title_similarity"] = s2.titles->results.empty() ? 1.0 : sim_sum / static_cast<double>(s2.titles->results.size());
      titles_table[name] = t;
    }
    if (dir) {
      if (s2.titles) write_title_outputs(*dir / name / "titles", *s2.titles);
      if (uses_poison(v)) write_poison(*dir / name / "poison", s2.poison);
    }
    variants[name] = m;
  }

  json distill = {{"observed", s1.observed.size()},
                  {"synthetic", s1.synthetic.size()},
                  {"corpus", s1.corpus.examples.size()},
                  {"prompt", s1.evolution.best.text},
                  {"elite_score", *s1.evolution.best.score},
                  {"elite_scores", s1.evolution.elite_scores},
                  {"generations", s1.evolution.generations},
                  {"weights", s1.surrogate->weights()}};
  if (config.distill.calibration.enabled) {
    distill["calibration"] = {{"multipliers", s1.calibration.multipliers},
                              {"base_accuracy", s1.calibration.base_accuracy},
                              {"accuracy", s1.calibration.accuracy},
                              {"holdout", s1.calibration.holdout_size}};
  }
  json queries = {{"attack", ledger->count(VictimHandle::kAttackEndpoint)},
                  {"eval", ledger->count(VictimHandle::kEvalEndpoint)},
                  {"expected_eval", eval_queries},
                  {"synthetic", s1.synthetic.size()},
                  {"cap", config.distill.query_budget}};
  json world_json = {{"users", world.data->num_users()},
                     {"items", world.catalog->size()},
                     {"interactions", world.data->num_interactions()},
                     {"evaluable_users", inputs.size()},
                     {"fingerprint", world.data->fingerprint()},
                     {"targets", world.targets}};
  return {{"repeat", repeat},   {"seed", seed},           {"world", world_json}, {"distill", distill},
          {"queries", queries}, {"ledger", ledger->summary()}, {"variants", variants}, {"titles", titles_table}};
}

json summarize(const json& repeats) {
  json summary = json::object();
  std::map<std::string, std::map<std::string, std::pair<double, std::size_t>>> acc;
  for (const auto& r : repeats) {
    for (const auto& [variant, metrics] : r.at("variants").items()) {
      for (const auto& [metric, value] : metrics.items()) {
        if (!value.is_number()) continue;
        auto& slot = acc[variant][metric];
        slot.first += value.get<double>();
        slot.second += 1;
      }
    }
  }
  for (const auto& [variant, metrics] : acc) {
    for (const auto& [metric, s] : metrics) summary[variant][metric] = s.first / static_cast<double>(s.second);
  }
  return summary;
}

}  // namespace

double ExperimentReport::mean(Variant variant, const std::string& metric) const {
  const auto& s = data.at("summary");
  const std::string name(to_string(variant));
  if (!s.contains(name) || !s.at(name).contains(metric)) {
    throw ConfigError("report has no metric '" + metric + "' for variant '" + name + "'");
  }
  return s.at(name).at(metric).get<double>();
}

ExperimentReport run_experiment(const ExperimentConfig& config,
                                const std::optional<std::filesystem::path>& artifacts) {
  config.validate();
  const auto embedder = make_embedder(config.embedder);
  const auto backend = make_operator(config.operators);
  json repeats = json::array();
  for (std::size_t r = 0; r < config.repeats; ++r) repeats.push_back(run_repeat(config, *embedder, backend, r, artifacts));
  ExperimentReport report;
  report.data = {{"format", "promolab.report"},
                 {"version", 1},
                 {"config", config.to_json(false)},
                 {"config_hash", config.hash()},
                 {"repeats", repeats},
                 {"summary", summarize(repeats)}};
  if (artifacts) export_report(report, *artifacts / "report.json", ReportFormat::json);
  return report;
}

// ---------------------------------------------------------------------------
// Sweeps and export
// ---------------------------------------------------------------------------

SweepAxis sweep_axis_from_string(std::string_view name) {
  if (name == "budget") return SweepAxis::budget;
  if (name == "ratio") return SweepAxis::ratio;
  throw ConfigError("unknown sweep axis '" + std::string(name) + "'");
}

std::vector<double> default_sweep_values(SweepAxis axis) {
  if (axis == SweepAxis::budget) return {0.005, 0.01, 0.015, 0.02};
  return {0.1, 0.2, 0.3};
}

SweepResult sweep(const ExperimentConfig& config, SweepAxis axis, const std::vector<double>& values) {
  if (values.empty()) throw ConfigError("sweep axis has no values");
  SweepResult result;
  result.axis = axis;
  for (double v : values) {
    SweepCell cell;
    cell.value = v;
    try {
      ExperimentConfig c = config;
      if (axis == SweepAxis::budget) {
        c.poison.budget = v;
      } else {
        c.distill.observable_ratio = v;
      }
      cell.report = run_experiment(c);
    } catch (const std::exception& e) {
      cell.error = e.what();
    }
    result.cells.push_back(std::move(cell));
  }
  return result;
}

json SweepResult::to_json() const {
  json cells_json = json::array();
  for (const auto& c : cells) {
    json row = {{"value", c.value}};
    if (c.report) {
      row["summary"] = c.report->data.at("summary");
      row["config_hash"] = c.report->data.at("config_hash");
    } else {
      row["error"] = c.error;
    }
    cells_json.push_back(row);
  }
  return {{"axis", axis == SweepAxis::budget ? "budget" : "ratio"}, {"cells", cells_json}};
}

std::string SweepResult::to_csv() const {
  std::ostringstream out;
  out << "axis,value,variant,metric,mean\n";
  const char* name = axis == SweepAxis::budget ? "budget" : "ratio";
  for (const auto& c : cells) {
    if (!c.report) continue;
    for (const auto& [variant, metrics] : c.report->data.at("summary").items()) {
      for (const auto& [metric, value] : metrics.items()) {
        out << name << ',' << c.value << ',' << variant << ',' << metric << ',' << value.dump() << '\n';
      }
    }
  }
  return out.str();
}

std::string report_csv(const ExperimentReport& report) {
  std::ostringstream out;
  out << "variant,metric,k,value\n";
  for (const auto& [variant, metrics] : report.data.at("summary").items()) {
    for (const auto& [metric, value] : metrics.items()) {
      const auto at = metric.find('@');
      if (at == std::string::npos) continue;
      out << variant << ',' << metric.substr(0, at) << ',' << metric.substr(at + 1) << ',' << value.dump() << '\n';
    }
  }
  return out.str();
}

void export_report(const ExperimentReport& report, const std::filesystem::path& path, ReportFormat format) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write report to " + path.string());
  if (format == ReportFormat::json) {
    out << report.data.dump(2) << '\n';
  } else {
    out << report_csv(report);
  }
  if (!out) throw ConfigError("failed writing report to " + path.string());
}

ExperimentReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open report " + path.string());
  ExperimentReport r;
  try {
    in >> r.data;
  } catch (const json::exception& e) {
    throw FormatError("report " + path.string() + " is not valid JSON: " + e.what());
  }
  if (r.data.value("format", "") != "promolab.report") throw FormatError(path.string() + " is not a report");
  return r;
}

}  // namespace promolab
