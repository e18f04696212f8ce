#include "wildlab/experiment.h"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <mutex>
#include <numeric>
#include <sstream>

#include "wildlab/binary_io.h"
#include "wildlab/errors.h"
#include "wildlab/json_util.h"
#include "wildlab/rng.h"

namespace wildlab {

namespace fs = std::filesystem;

// ---- config -----------------------------------------------------------------

namespace {

bool is_known_method(const std::string& m) {
  if (m == "BADGE") return true;
  try {
    parse_score_method(m);
    return true;
  } catch (const ValidationError&) {
    return false;
  }
}

const char* reference_name(ReferenceSet r) {
  return r == ReferenceSet::kIdTrain ? "id_train" : "id_train+annotated";
}

nlohmann::json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

void ExperimentConfig::validate() const {
  synthetic.validate();
  wild.validate();
  architecture.validate();
  erm.validate();
  joint.validate();
  bound.validate();
  if (architecture.input_dim != synthetic.dim) {
    throw ValidationError("architecture.input_dim must equal synthetic.dim");
  }
  if (architecture.num_classes != synthetic.num_classes) {
    throw ValidationError("architecture.num_classes must equal synthetic.num_classes");
  }
  if (!is_known_method(scoring.method)) {
    throw ValidationError("unknown score method '" + scoring.method + "'");
  }
  if (scoring.power.max_iters < 1) throw ValidationError("power_iteration.max_iters must be >= 1");
  if (scoring.power.block_size < 1) throw ValidationError("power_iteration.block_size must be >= 1");
  if (selection.k < 1) throw ValidationError("selection.k must be >= 1");
  if (!(selection.lambda >= 0.0 && selection.lambda <= 1.0)) {
    throw ValidationError("selection.lambda must be in [0, 1]");
  }
  if (!(selection.percentile > 0.0 && selection.percentile < 1.0)) {
    throw ValidationError("selection.percentile must be in (0, 1)");
  }
  if (rounds < 1) throw ValidationError("rounds must be >= 1");
  if (stop_when) {
    const std::string& m = stop_when->metric;
    if (m != "id_acc" && m != "ood_acc" && m != "fpr95" && m != "auroc") {
      throw ValidationError("stop_when.metric must be id_acc, ood_acc, fpr95 or auroc");
    }
  }
  if (annotation.mode == AnnotationMode::kHuman && (annotation.port < 0 || annotation.port > 65535)) {
    throw ValidationError("annotation.port out of range");
  }
}

ExperimentConfig ExperimentConfig::effective() const {
  ExperimentConfig c = *this;
  c.synthetic.seed = derive_seed(seed, "synthetic");
  c.erm.seed = derive_seed(seed, "erm");
  c.joint.seed = derive_seed(seed, "joint");
  c.scoring.power.seed = derive_seed(seed, "power");
  return c;
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  nlohmann::json annotation = {
      {"mode", c.annotation.mode == AnnotationMode::kOracle ? "oracle" : "human"},
      {"host", c.annotation.host},
      {"port", c.annotation.port},
      {"session_dir", c.annotation.session_dir},
      {"static_dir", c.annotation.static_dir}};
  j = {{"synthetic", c.synthetic},
       {"wild", c.wild},
       {"architecture", c.architecture},
       {"erm", c.erm},
       {"joint", c.joint},
       {"scoring",
        {{"method", c.scoring.method},
         {"last_layer_only", c.scoring.last_layer_only},
         {"reference", reference_name(c.scoring.reference)},
         {"power_iteration",
          {{"tol", c.scoring.power.tol},
           {"residual_tol", c.scoring.power.residual_tol},
           {"max_iters", c.scoring.power.max_iters},
           {"block_size", c.scoring.power.block_size}}}}},
       {"selection",
        {{"strategy", strategy_name(c.selection.strategy)},
         {"k", c.selection.k},
         {"lambda", c.selection.lambda},
         {"percentile", c.selection.percentile}}},
       {"annotation", annotation},
       {"bound", c.bound},
       {"rounds", c.rounds},
       {"stop_when", c.stop_when ? nlohmann::json{{"metric", c.stop_when->metric},
                                                  {"threshold", c.stop_when->threshold}}
                                 : nlohmann::json(nullptr)},
       {"seed", c.seed},
       {"output_dir", c.output_dir}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  StrictObject o(j, "config");
  // Nested objects overlay the defaults already in `c`.
  nlohmann::json sub;
  if (o.has("synthetic")) {
    o.optional("synthetic", sub);
    from_json(sub, c.synthetic);
  }
  if (o.has("wild")) {
    o.optional("wild", sub);
    from_json(sub, c.wild);
  }
  if (o.has("architecture")) {
    o.optional("architecture", sub);
    from_json(sub, c.architecture);
  }
  if (o.has("erm")) {
    o.optional("erm", sub);
    from_json(sub, c.erm);
  }
  if (o.has("joint")) {
    o.optional("joint", sub);
    from_json(sub, c.joint);
  }
  if (o.has("scoring")) {
    o.optional("scoring", sub);
    StrictObject s(sub, "config.scoring");
    s.optional("method", c.scoring.method);
    s.optional("last_layer_only", c.scoring.last_layer_only);
    std::string ref = reference_name(c.scoring.reference);
    s.optional("reference", ref);
    if (ref == "id_train") {
      c.scoring.reference = ReferenceSet::kIdTrain;
    } else if (ref == "id_train+annotated") {
      c.scoring.reference = ReferenceSet::kIdTrainPlusAnnotated;
    } else {
      throw ValidationError("config.scoring.reference must be id_train or id_train+annotated");
    }
    if (s.has("power_iteration")) {
      nlohmann::json pj;
      s.optional("power_iteration", pj);
      StrictObject p(pj, "config.scoring.power_iteration");
      p.optional("tol", c.scoring.power.tol);
      p.optional("residual_tol", c.scoring.power.residual_tol);
      p.optional("max_iters", c.scoring.power.max_iters);
      p.optional("block_size", c.scoring.power.block_size);
      p.finish();
    }
    s.finish();
  }
  if (o.has("selection")) {
    o.optional("selection", sub);
    StrictObject s(sub, "config.selection");
    std::string strategy = strategy_name(c.selection.strategy);
    s.optional("strategy", strategy);
    c.selection.strategy = parse_strategy(strategy);
    int64_t k = static_cast<int64_t>(c.selection.k);
    s.optional("k", k);
    if (k < 1) throw ValidationError("config.selection.k must be >= 1");
    c.selection.k = static_cast<size_t>(k);
    s.optional("lambda", c.selection.lambda);
    s.optional("percentile", c.selection.percentile);
    s.finish();
  }
  if (o.has("annotation")) {
    o.optional("annotation", sub);
    StrictObject s(sub, "config.annotation");
    std::string mode = c.annotation.mode == AnnotationMode::kOracle ? "oracle" : "human";
    s.optional("mode", mode);
    if (mode == "oracle") {
      c.annotation.mode = AnnotationMode::kOracle;
    } else if (mode == "human") {
      c.annotation.mode = AnnotationMode::kHuman;
    } else {
      throw ValidationError("config.annotation.mode must be oracle or human");
    }
    s.optional("host", c.annotation.host);
    s.optional("port", c.annotation.port);
    s.optional("session_dir", c.annotation.session_dir);
    s.optional("static_dir", c.annotation.static_dir);
    s.finish();
  }
  if (o.has("bound")) {
    o.optional("bound", sub);
    from_json(sub, c.bound);
  }
  int64_t rounds = static_cast<int64_t>(c.rounds);
  o.optional("rounds", rounds);
  if (rounds < 1) throw ValidationError("config.rounds must be >= 1");
  c.rounds = static_cast<size_t>(rounds);
  if (o.has("stop_when") && !j.at("stop_when").is_null()) {
    o.optional("stop_when", sub);
    StrictObject s(sub, "config.stop_when");
    StopRule rule;
    s.required("metric", rule.metric);
    s.required("threshold", rule.threshold);
    s.finish();
    c.stop_when = rule;
  } else {
    o.optional("stop_when", sub);
  }
  o.optional("seed", c.seed);
  o.optional("output_dir", c.output_dir);
  o.finish();
  c.validate();
}

ExperimentConfig load_config(const fs::path& path) {
  const std::string text = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  }
  ExperimentConfig c;
  from_json(j, c);
  return c;
}

// ---- report -----------------------------------------------------------------

namespace {

nlohmann::json round_json(const RoundReport& r) {
  nlohmann::json j = {
      {"round", r.round},
      {"scorer_eval", r.scorer_eval},
      {"joint_eval", r.joint_eval},
      {"bound", r.bound ? nlohmann::json(*r.bound) : nlohmann::json(nullptr)},
      {"selection",
       {{"strategy", strategy_name(r.selection.strategy)},
        {"score_method", r.selection.score_method},
        {"k", r.selection.k},
        {"n_selected", r.selection.n_selected},
        {"tau_b", opt_json(r.selection.tau_b)},
        {"lambda", opt_json(r.selection.lambda)},
        {"sigma1_sq", opt_json(r.selection.sigma1_sq)},
        {"power_iterations", r.selection.power_iterations}}},
      {"composition", r.composition},
      {"annotations_used", r.annotations_used},
      {"cumulative_annotations", r.cumulative_annotations},
      {"warnings", r.warnings}};
  return j;
}

nlohmann::json report_json(const RunReport& r, bool with_clock) {
  nlohmann::json rounds = nlohmann::json::array();
  for (const RoundReport& rr : r.rounds) rounds.push_back(round_json(rr));
  nlohmann::json j = {{"config", r.config},
                      {"rounds", rounds},
                      {"total_annotations", r.total_annotations},
                      {"annotation_limit", r.annotation_limit},
                      {"within_budget", r.total_annotations <= r.annotation_limit},
                      {"stopped_early", r.stopped_early},
                      {"versions",
                       {{"wildlab", kWildlabVersion}, {"dataset_format", "WDS1"},
                        {"checkpoint_format", "WNN1"}}}};
  if (with_clock) j["wall_clock_seconds"] = r.wall_clock_seconds;
  return j;
}

}  // namespace

void to_json(nlohmann::json& j, const RunReport& r) { j = report_json(r, true); }

std::string report_fingerprint(const RunReport& r) { return report_json(r, false).dump(2); }

StageError::StageError(std::string stage, const std::string& what)
    : std::runtime_error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}

// ---- run --------------------------------------------------------------------

struct RunHooks::Cache {
  struct Base {
    SyntheticData data;
    Dataset wild;
    TrainResult erm;
  };
  struct FirstScore {
    ScoreTable table;
    std::vector<double> ref;
    size_t iterations = 0;
  };
  std::mutex mu;
  std::map<std::string, std::shared_ptr<const Base>> bases;
  std::map<std::string, std::shared_ptr<const FirstScore>> scores;
};

std::shared_ptr<RunHooks::Cache> make_run_cache() { return std::make_shared<RunHooks::Cache>(); }

namespace {

template <typename F>
auto stage(const std::string& name, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

EvalReport evaluate(const Network& net, const ParamVector& params, const SyntheticData& data) {
  EvalReport r;
  r.id_acc = accuracy(net, params, data.id_test);
  r.ood_acc = accuracy(net, params, data.cov_test);
  const DetectorMetrics d = detector_eval(net, params, data.id_test, data.sem_test);
  r.fpr95 = d.fpr95;
  r.auroc = d.auroc;
  r.threshold_lambda = d.threshold_lambda;
  return r;
}

double metric_value(const EvalReport& r, const std::string& metric) {
  if (metric == "id_acc") return r.id_acc;
  if (metric == "ood_acc") return r.ood_acc;
  if (metric == "auroc") return r.auroc;
  return r.fpr95;
}

bool stop_reached(const StopRule& rule, const EvalReport& r) {
  const double v = metric_value(r, rule.metric);
  return rule.metric == "fpr95" ? v <= rule.threshold : v >= rule.threshold;
}

uint64_t round_seed(uint64_t base, size_t round) {
  return round == 1 ? base : derive_seed(base, "round" + std::to_string(round));
}

std::string base_key(const ExperimentConfig& c) {
  nlohmann::json k = {{"synthetic", c.synthetic}, {"wild", c.wild},
                      {"architecture", c.architecture}, {"erm", c.erm}, {"seed", c.seed}};
  return k.dump();
}

std::string score_key(const ExperimentConfig& c) {
  nlohmann::json full = c;
  return base_key(c) + full["scoring"].dump();
}

// Selection-relevant scores over the rows still unannotated. Sample ids in
// the returned table index the full wild set.
struct RoundScores {
  ScoreTable table;
  std::vector<double> ref;  // GRADIENT only
  size_t iterations = 0;
};

void write_csv_rows(const fs::path& path, const std::string& header,
                    const std::vector<std::string>& rows) {
  std::string text = header + "\n";
  for (const std::string& r : rows) text += r + "\n";
  write_file(path, text);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_bound_csv(const fs::path& path, const std::vector<RoundReport>& rounds) {
  std::vector<std::string> rows;
  for (const RoundReport& r : rounds) {
    if (!r.bound) continue;
    const BoundReport& b = *r.bound;
    rows.push_back(std::to_string(r.round) + "," + fmt(b.grad_discrepancy) + "," + fmt(b.id_risk) +
                   "," + fmt(b.cov_risk) + "," + fmt(b.loss_sup_M) + "," + fmt(b.zeta) + "," +
                   fmt(b.omega_in) + "," + fmt(b.omega_c) + "," + fmt(b.delta) + "," +
                   fmt(b.vc_proxy_d) + "," + std::to_string(b.n) + "," + std::to_string(b.m_c));
  }
  write_csv_rows(path,
                 "round,grad_discrepancy,id_risk,cov_risk,loss_sup_M,zeta,omega_in,omega_c,delta,"
                 "vc_proxy_d,n,m_c",
                 rows);
}

struct RunState {
  RunReport report;
  ParamVector final_params;
  std::shared_ptr<const RunHooks::Cache::Base> base;
};

RunState run_impl(const ExperimentConfig& cfg_in, const RunHooks& hooks, bool write_outputs) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg_in.validate();
  const ExperimentConfig cfg = cfg_in.effective();
  const Network net(cfg.architecture);
  const fs::path out = cfg.output_dir;

  RunState state;
  RunReport& report = state.report;
  report.config = cfg_in;
  report.annotation_limit = cfg.rounds * cfg.selection.k;

  auto persist = [&](const char* error_stage, const std::string& error) {
    if (!write_outputs) return;
    nlohmann::json j = report;
    if (error_stage) j["error"] = {{"stage", error_stage}, {"message", error}};
    write_file(out / "report.json", j.dump(2) + "\n");
    write_bound_csv(out / "bound.csv", report.rounds);
  };

  try {
    if (write_outputs) fs::create_directories(out);

    // generate + ERM (shared across sweep cells through the cache)
    std::shared_ptr<const RunHooks::Cache::Base> base;
    const std::string bkey = base_key(cfg);
    if (hooks.cache) {
      std::lock_guard lock(hooks.cache->mu);
      auto it = hooks.cache->bases.find(bkey);
      if (it != hooks.cache->bases.end()) base = it->second;
    }
    if (!base) {
      auto b = std::make_shared<RunHooks::Cache::Base>();
      stage("generate", [&] {
        b->data = generate_synthetic(cfg.synthetic);
        b->wild = mix_wild(b->data.id_pool, b->data.cov_pool, b->data.sem_pool, cfg.wild,
                           derive_seed(cfg.seed, "wild"));
        return 0;
      });
      b->erm = stage("train-erm", [&] { return train_erm(net, b->data.id_train, cfg.erm); });
      base = b;
      if (hooks.cache) {
        std::lock_guard lock(hooks.cache->mu);
        hooks.cache->bases.emplace(bkey, base);
      }
    }
    state.base = base;
    const SyntheticData& data = base->data;
    const Dataset& wild = base->wild;

    if (write_outputs) {
      stage("write-data", [&] {
        const fs::path dd = out / "data";
        const std::pair<const char*, const Dataset*> sets[] = {
            {"id_train", &data.id_train}, {"id_pool", &data.id_pool},
            {"cov_pool", &data.cov_pool}, {"sem_pool", &data.sem_pool},
            {"id_test", &data.id_test},   {"cov_test", &data.cov_test},
            {"sem_test", &data.sem_test}, {"wild", &wild}};
        for (const auto& [name, ds] : sets) {
          const fs::path p = dd / (std::string(name) + ".wds");
          write_dataset(*ds, p);
          write_manifest(p, {{"split", name},
                             {"synthetic", cfg.synthetic},
                             {"wild", cfg.wild},
                             {"seed", cfg.seed},
                             {"generator", std::string("wildlab ") + kWildlabVersion}});
        }
        write_checkpoint(out / "erm.wnn", cfg.architecture, base->erm.params);
        write_epoch_csv(out / "epochs.csv", base->erm.epochs, "erm", false);
        return 0;
      });
    }

    ParamVector scorer = base->erm.params;
    EvalReport scorer_eval = stage("evaluate", [&] { return evaluate(net, scorer, data); });

    std::vector<bool> taken(wild.size(), false);
    Dataset in_class(wild.dim(), wild.num_classes());
    Dataset sem_acc(wild.dim(), wild.num_classes());
    Dataset cov_acc(wild.dim(), wild.num_classes());

    std::unique_ptr<SessionStore> store;
    std::unique_ptr<AnnotationServer> server;
    if (cfg.annotation.mode == AnnotationMode::kHuman) {
      stage("serve", [&] {
        const fs::path dir = cfg.annotation.session_dir.empty() ? out / "sessions"
                                                                : fs::path(cfg.annotation.session_dir);
        store = std::make_unique<SessionStore>(wild, dir, ContextProjection(data.id_train));
        store->set_reference(data.id_train);
        std::optional<fs::path> static_dir;
        if (!cfg.annotation.static_dir.empty()) static_dir = cfg.annotation.static_dir;
        server = std::make_unique<AnnotationServer>(*store, static_dir);
        server->start(cfg.annotation.host, cfg.annotation.port);
        return 0;
      });
    }

    const GradientOptions gopts{cfg.scoring.last_layer_only};
    const bool gradient = cfg.scoring.method == "GRADIENT";
    const bool badge = cfg.scoring.method == "BADGE";

    for (size_t r = 1; r <= cfg.rounds; ++r) {
      RoundReport rr;
      rr.round = r;
      rr.scorer_eval = scorer_eval;

      std::vector<size_t> remaining;
      for (size_t i = 0; i < wild.size(); ++i) {
        if (!taken[i]) remaining.push_back(i);
      }
      const size_t k_r = std::min(cfg.selection.k, report.annotation_limit - report.total_annotations);
      if (k_r == 0 || remaining.empty()) break;
      const Dataset wild_rem = wild.subset(remaining);
      const Dataset ref_set = cfg.scoring.reference == ReferenceSet::kIdTrain
                                  ? data.id_train
                                  : data.id_train.concat(in_class);

      SelectionResult sel;
      rr.selection.score_method = cfg.scoring.method;
      rr.selection.k = k_r;
      std::optional<ScoreTable> table;

      if (badge) {
        sel = stage("select", [&] {
          SelectionResult s;
          s.strategy = Strategy::kTopK;
          s.k = k_r;
          const auto picks = badge_select(net, scorer, wild_rem, std::min(k_r, wild_rem.size()),
                                          round_seed(derive_seed(cfg.seed, "badge"), r));
          for (size_t p : picks) s.indices.push_back(remaining[p]);
          return s;
        });
      } else {
        RoundScores rs = stage("score", [&] {
          const std::string skey = score_key(cfg);
          if (r == 1 && hooks.cache) {
            std::lock_guard lock(hooks.cache->mu);
            auto it = hooks.cache->scores.find(skey);
            if (it != hooks.cache->scores.end()) {
              return RoundScores{it->second->table, it->second->ref, it->second->iterations};
            }
          }
          RoundScores s;
          if (gradient) {
            s.ref = reference_gradient(net, scorer, ref_set, gopts);
            GradMatrix g = wild_gradient_matrix(net, scorer, wild_rem, s.ref, gopts);
            PowerIterationOptions popts = cfg.scoring.power;
            popts.seed = round_seed(popts.seed, r);
            const TopSingular top = top_singular_vector(g, popts);
            s.table = gradient_scores(g, top.v);
            s.table.sigma1_sq = top.sigma1_sq;
            s.iterations = top.iterations;
            if (!top.converged) {
              rr.warnings.push_back("power iteration stopped at max_iters before converging");
            }
          } else {
            s.table = baseline_score(net, scorer, wild_rem, parse_score_method(cfg.scoring.method),
                                     round_seed(derive_seed(cfg.seed, "score"), r));
          }
          for (size_t& id : s.table.sample_ids) id = remaining[id];
          if (r == 1 && hooks.cache) {
            std::lock_guard lock(hooks.cache->mu);
            hooks.cache->scores.emplace(
                skey, std::make_shared<RunHooks::Cache::FirstScore>(
                          RunHooks::Cache::FirstScore{s.table, s.ref, s.iterations}));
          }
          return s;
        });
        rr.selection.sigma1_sq = rs.table.sigma1_sq;
        rr.selection.power_iterations = rs.iterations;
        table = rs.table;

        sel = stage("select", [&] {
          const Strategy st = cfg.selection.strategy;
          if (st == Strategy::kTopK) return select_top_k(rs.table, k_r);
          double tau_b = 0.0;
          if (gradient) {
            tau_b = id_boundary_threshold(net, scorer, data.id_train, *rs.table.v, rs.ref,
                                          cfg.selection.percentile, gopts);
          } else {
            const ScoreTable id_scores =
                baseline_score(net, scorer, data.id_train, parse_score_method(cfg.scoring.method),
                               round_seed(derive_seed(cfg.seed, "score_id"), r));
            tau_b = quantile_linear(id_scores.scores, cfg.selection.percentile);
          }
          if (st == Strategy::kNearBoundary) return select_near_boundary(rs.table, tau_b, k_r);
          return select_mixed(rs.table, tau_b, k_r, cfg.selection.lambda);
        });
      }
      rr.selection.strategy = sel.strategy;
      rr.selection.tau_b = sel.tau_b;
      rr.selection.lambda = sel.lambda;
      rr.selection.n_selected = sel.indices.size();

      std::vector<LabelAssignment> labels = stage("annotate", [&] {
        if (cfg.annotation.mode == AnnotationMode::kOracle) return oracle_labels(wild, sel);
        const std::string id = store->open_session(sel);
        std::cerr << "annotation session " << id << " open at http://" << cfg.annotation.host << ":"
                  << server->port() << "/api/sessions/" << id << "\n";
        if (hooks.on_session_open) hooks.on_session_open(id, server->port());
        store->wait_complete(id);
        return store->labels(id);
      });
      const AnnotatedSets sets = stage("annotate", [&] { return apply_labels(wild, labels); });
      for (size_t i : sel.indices) taken[i] = true;
      in_class = in_class.concat(sets.in_class);
      sem_acc = sem_acc.concat(sets.sem_selected);
      cov_acc = cov_acc.concat(sets.cov_selected);
      rr.annotations_used = labels.size();
      report.total_annotations += labels.size();
      rr.cumulative_annotations = report.total_annotations;
      rr.composition = composition(sel, wild);

      TrainConfig jcfg = cfg.joint;
      jcfg.seed = round_seed(cfg.joint.seed, r);
      const TrainResult joint = stage("train-joint", [&] {
        return train_joint(net, scorer, data.id_train, in_class, sem_acc, jcfg);
      });
      for (const std::string& w : joint.warnings) rr.warnings.push_back(w);

      rr.joint_eval = stage("evaluate", [&] { return evaluate(net, joint.params, data); });
      rr.joint_eval.selection_composition = rr.composition;
      if (!cov_acc.empty()) {
        rr.bound = stage("bound", [&] {
          return bound_report(net, joint.params, data.id_train, cov_acc, cfg.bound);
        });
      } else {
        rr.warnings.push_back("no covariate samples annotated; bound terms skipped");
      }

      if (write_outputs) {
        stage("write-round", [&] {
          const std::string tag = "_r" + std::to_string(r);
          write_file(out / ("selection" + tag + ".json"), nlohmann::json(sel).dump(2) + "\n");
          write_checkpoint(out / ("joint" + tag + ".wnn"), cfg.architecture, joint.params);
          write_epoch_csv(out / "epochs.csv", joint.epochs, "joint" + tag, true);
          if (table) {
            write_scores_csv(out / "scores.csv", *table);
            write_score_histogram_csv(out / "score_hist.csv", *table, wild);
          }
          write_dataset(sets.in_class, out / "data" / ("in_class" + tag + ".wds"));
          write_dataset(sets.sem_selected, out / "data" / ("sem_selected" + tag + ".wds"));
          return 0;
        });
      }

      scorer = joint.params;
      scorer_eval = rr.joint_eval;
      report.rounds.push_back(std::move(rr));
      if (cfg.stop_when && stop_reached(*cfg.stop_when, scorer_eval)) {
        report.stopped_early = r < cfg.rounds;
        break;
      }
    }
    if (server) server->stop();
    state.final_params = scorer;
  } catch (const StageError& e) {
    report.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    persist(e.stage().c_str(), e.what());
    throw;
  }

  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  persist(nullptr, "");
  return state;
}

}  // namespace

RunReport run_experiment(const ExperimentConfig& cfg, const RunHooks& hooks, bool write_outputs) {
  return run_impl(cfg, hooks, write_outputs).report;
}

// ---- sweep ------------------------------------------------------------------

bool SweepAxes::empty() const {
  return budgets.empty() && score_methods.empty() && strategies.empty() && lambdas.empty() &&
         alphas.empty() && transforms.empty() && seeds.empty();
}

void from_json(const nlohmann::json& j, SweepAxes& a) {
  StrictObject o(j, "sweep");
  o.optional("budgets", a.budgets);
  o.optional("score_methods", a.score_methods);
  std::vector<std::string> strategies;
  o.optional("strategies", strategies);
  a.strategies.clear();
  for (const std::string& s : strategies) a.strategies.push_back(parse_strategy(s));
  o.optional("lambdas", a.lambdas);
  o.optional("alphas", a.alphas);
  if (o.has("transforms")) {
    nlohmann::json t;
    o.optional("transforms", t);
    a.transforms.clear();
    for (const auto& e : t) a.transforms.push_back(e.get<CovariateTransform>());
  }
  o.optional("seeds", a.seeds);
  o.finish();
  if (a.empty()) throw ValidationError("sweep: every axis is empty");
}

namespace {

// Mixed-radix enumeration of the axis product; empty axes contribute a
// single "keep base value" slot.
std::vector<ExperimentConfig> expand(const ExperimentConfig& base, const SweepAxes& axes) {
  const size_t nb = std::max<size_t>(1, axes.budgets.size());
  const size_t nm = std::max<size_t>(1, axes.score_methods.size());
  const size_t ns = std::max<size_t>(1, axes.strategies.size());
  const size_t nl = std::max<size_t>(1, axes.lambdas.size());
  const size_t na = std::max<size_t>(1, axes.alphas.size());
  const size_t nt = std::max<size_t>(1, axes.transforms.size());
  const size_t nseed = std::max<size_t>(1, axes.seeds.size());
  std::vector<ExperimentConfig> out;
  for (size_t i0 = 0; i0 < nseed; ++i0)
    for (size_t i1 = 0; i1 < nt; ++i1)
      for (size_t i2 = 0; i2 < nm; ++i2)
        for (size_t i3 = 0; i3 < ns; ++i3)
          for (size_t i4 = 0; i4 < nl; ++i4)
            for (size_t i5 = 0; i5 < na; ++i5)
              for (size_t i6 = 0; i6 < nb; ++i6) {
                ExperimentConfig c = base;
                if (!axes.seeds.empty()) c.seed = axes.seeds[i0];
                if (!axes.transforms.empty()) c.synthetic.covariate = axes.transforms[i1];
                if (!axes.score_methods.empty()) c.scoring.method = axes.score_methods[i2];
                if (!axes.strategies.empty()) c.selection.strategy = axes.strategies[i3];
                if (!axes.lambdas.empty()) c.selection.lambda = axes.lambdas[i4];
                if (!axes.alphas.empty()) c.joint.alpha = axes.alphas[i5];
                if (!axes.budgets.empty()) c.selection.k = axes.budgets[i6];
                out.push_back(std::move(c));
              }
  return out;
}

}  // namespace

std::vector<SweepCell> run_sweep(const ExperimentConfig& base, const SweepAxes& axes,
                                 bool write_outputs) {
  if (axes.empty()) throw ValidationError("sweep: every axis is empty");
  std::vector<ExperimentConfig> configs = expand(base, axes);
  RunHooks hooks;
  hooks.cache = make_run_cache();
  std::vector<SweepCell> cells;
  for (size_t i = 0; i < configs.size(); ++i) {
    SweepCell cell;
    cell.index = i;
    cell.config = configs[i];
    char name[32];
    std::snprintf(name, sizeof(name), "cell_%03zu", i);
    cell.config.output_dir = (fs::path(base.output_dir) / name).string();
    try {
      cell.report = run_experiment(cell.config, hooks, write_outputs);
    } catch (const std::exception& e) {
      cell.error = e.what();
    }
    cells.push_back(std::move(cell));
  }
  if (write_outputs) write_sweep_csv(fs::path(base.output_dir) / "sweep.csv", cells);
  return cells;
}

void write_sweep_csv(const fs::path& path, const std::vector<SweepCell>& cells) {
  std::vector<std::string> rows;
  for (const SweepCell& c : cells) {
    std::ostringstream row;
    row << c.index << ',' << c.config.seed << ',' << c.config.selection.k << ','
        << c.config.scoring.method << ',' << strategy_name(c.config.selection.strategy) << ','
        << fmt(c.config.selection.lambda) << ',' << fmt(c.config.joint.alpha) << ','
        << '"' << transform_name(c.config.synthetic.covariate) << '"' << ',';
    if (c.report && !c.report->rounds.empty()) {
      const RoundReport& first = c.report->rounds.front();
      const RoundReport& last = c.report->rounds.back();
      Composition total;
      for (const RoundReport& r : c.report->rounds) {
        total.n_id += r.composition.n_id;
        total.n_cov += r.composition.n_cov;
        total.n_sem += r.composition.n_sem;
      }
      row << "ok," << fmt(first.scorer_eval.id_acc) << ',' << fmt(first.scorer_eval.ood_acc) << ','
          << fmt(first.scorer_eval.fpr95) << ',' << fmt(last.joint_eval.id_acc) << ','
          << fmt(last.joint_eval.ood_acc) << ',' << fmt(last.joint_eval.fpr95) << ','
          << fmt(last.joint_eval.auroc) << ',' << total.n_id << ',' << total.n_cov << ','
          << total.n_sem << ',' << (last.bound ? fmt(last.bound->grad_discrepancy) : "") << ",";
    } else {
      std::string err = c.error;
      std::replace(err.begin(), err.end(), '"', '\'');
      row << "error,,,,,,,,,,,,\"" << err << '"';
    }
    rows.push_back(row.str());
  }
  write_csv_rows(path,
                 "cell,seed,k,score_method,strategy,lambda,alpha,transform,status,erm_id_acc,"
                 "erm_ood_acc,erm_fpr95,id_acc,ood_acc,fpr95,auroc,n_id,n_cov,n_sem,"
                 "grad_discrepancy,error",
                 rows);
}

std::vector<DiscrepancyRow> discrepancy_table(const ExperimentConfig& base,
                                              const std::vector<CovariateTransform>& transforms) {
  std::vector<DiscrepancyRow> rows;
  for (const CovariateTransform& t : transforms) {
    ExperimentConfig c = base;
    c.synthetic.covariate = t;
    c.rounds = 1;
    const RunState s = run_impl(c, {}, false);
    const Network net(c.architecture);
    DiscrepancyRow row;
    row.transform = transform_name(t);
    row.grad_discrepancy =
        gradient_discrepancy(net, s.final_params, s.base->data.id_test, s.base->data.cov_test);
    row.ood_acc = s.report.rounds.empty() ? accuracy(net, s.final_params, s.base->data.cov_test)
                                          : s.report.rounds.back().joint_eval.ood_acc;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace wildlab
