// wildlab command-line driver. Every subcommand reads and writes under --out.
//
// Exit codes: 0 success, 2 invalid input (config, flags, malformed files),
// 3 failure inside a pipeline stage.

#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "wildlab/annotate.h"
#include "wildlab/binary_io.h"
#include "wildlab/errors.h"
#include "wildlab/experiment.h"

namespace fs = std::filesystem;
using namespace wildlab;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitStage = 3;

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

struct Globals {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::string out;
};

ExperimentConfig resolve(const Globals& g) {
  ExperimentConfig c = g.config_path.empty() ? ExperimentConfig{} : load_config(g.config_path);
  if (g.seed) c.seed = *g.seed;
  if (!g.out.empty()) c.output_dir = g.out;
  c.validate();
  return c;
}

fs::path data_path(const ExperimentConfig& c, const std::string& name) {
  return fs::path(c.output_dir) / "data" / (name + ".wds");
}

void save_json(const fs::path& p, const nlohmann::json& j) { write_file(p, j.dump(2) + "\n"); }

nlohmann::json load_json(const fs::path& p) {
  try {
    return nlohmann::json::parse(read_file(p));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

struct Model {
  Architecture arch;
  ParamVector params;
};

Model load_model(const fs::path& p) {
  Model m;
  read_checkpoint(p, m.arch, m.params);
  return m;
}

std::string model_or(const std::string& flag, const ExperimentConfig& c, const char* fallback) {
  return flag.empty() ? (fs::path(c.output_dir) / fallback).string() : flag;
}

int cmd_gen(const ExperimentConfig& cfg0) {
  const ExperimentConfig cfg = cfg0.effective();
  const SyntheticData data = generate_synthetic(cfg.synthetic);
  const Dataset wild = mix_wild(data.id_pool, data.cov_pool, data.sem_pool, cfg.wild,
                                derive_seed(cfg.seed, "wild"));
  const std::pair<const char*, const Dataset*> sets[] = {
      {"id_train", &data.id_train}, {"id_pool", &data.id_pool},   {"cov_pool", &data.cov_pool},
      {"sem_pool", &data.sem_pool}, {"id_test", &data.id_test},   {"cov_test", &data.cov_test},
      {"sem_test", &data.sem_test}, {"wild", &wild}};
  for (const auto& [name, ds] : sets) {
    const fs::path p = data_path(cfg, name);
    write_dataset(*ds, p);
    write_manifest(p, {{"split", name},
                       {"synthetic", cfg.synthetic},
                       {"wild", cfg.wild},
                       {"seed", cfg.seed},
                       {"generator", std::string("wildlab ") + kWildlabVersion}});
    std::cout << p.string() << " (" << ds->size() << " rows)\n";
  }
  return 0;
}

int cmd_train_erm(const ExperimentConfig& cfg0) {
  const ExperimentConfig cfg = cfg0.effective();
  const Network net(cfg.architecture);
  const TrainResult r = train_erm(net, read_dataset(data_path(cfg, "id_train")), cfg.erm);
  write_checkpoint(fs::path(cfg.output_dir) / "erm.wnn", cfg.architecture, r.params);
  write_epoch_csv(fs::path(cfg.output_dir) / "epochs.csv", r.epochs, "erm", false);
  std::cout << "final ce_loss " << r.epochs.back().ce_loss << "\n";
  return 0;
}

int cmd_score(const ExperimentConfig& cfg0, const std::string& model_flag) {
  const ExperimentConfig cfg = cfg0.effective();
  const Model m = load_model(model_or(model_flag, cfg, "erm.wnn"));
  const Network net(m.arch);
  const Dataset wild = read_dataset(data_path(cfg, "wild"));
  const Dataset id_train = read_dataset(data_path(cfg, "id_train"));
  const GradientOptions gopts{cfg.scoring.last_layer_only};
  nlohmann::json meta = {{"method", cfg.scoring.method}};
  ScoreTable table;
  if (cfg.scoring.method == "GRADIENT") {
    const std::vector<double> ref = reference_gradient(net, m.params, id_train, gopts);
    const GradMatrix g = wild_gradient_matrix(net, m.params, wild, ref, gopts);
    const TopSingular top = top_singular_vector(g, cfg.scoring.power);
    table = gradient_scores(g, top.v);
    meta["sigma1_sq"] = top.sigma1_sq;
    meta["power_iterations"] = top.iterations;
    meta["converged"] = top.converged;
    meta["tau_b"] = id_boundary_threshold(net, m.params, id_train, top.v, ref,
                                          cfg.selection.percentile, gopts);
  } else if (cfg.scoring.method == "BADGE") {
    throw ValidationError("BADGE selects directly; use `select` with scoring.method BADGE");
  } else {
    const ScoreMethod method = parse_score_method(cfg.scoring.method);
    table = baseline_score(net, m.params, wild, method, derive_seed(cfg.seed, "score"));
    const ScoreTable id_scores =
        baseline_score(net, m.params, id_train, method, derive_seed(cfg.seed, "score_id"));
    meta["tau_b"] = quantile_linear(id_scores.scores, cfg.selection.percentile);
  }
  write_scores_csv(fs::path(cfg.output_dir) / "scores.csv", table);
  write_score_histogram_csv(fs::path(cfg.output_dir) / "score_hist.csv", table, wild);
  save_json(fs::path(cfg.output_dir) / "score.json", meta);
  std::cout << meta.dump() << "\n";
  return 0;
}

ScoreTable read_scores_csv(const fs::path& p) {
  std::istringstream in(read_file(p));
  std::string line;
  if (!std::getline(in, line) || line != "sample_id,score,method") {
    throw FormatError(p.string() + ": unexpected header");
  }
  ScoreTable t;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string id, score, method;
    if (!std::getline(row, id, ',') || !std::getline(row, score, ',') || !std::getline(row, method)) {
      throw FormatError(p.string() + ":" + std::to_string(lineno) + ": expected 3 columns");
    }
    try {
      t.sample_ids.push_back(std::stoull(id));
      t.scores.push_back(std::stod(score));
      t.method = parse_score_method(method);
    } catch (const std::exception&) {
      throw FormatError(p.string() + ":" + std::to_string(lineno) + ": malformed row");
    }
  }
  return t;
}

int cmd_select(const ExperimentConfig& cfg0, const std::string& model_flag) {
  const ExperimentConfig cfg = cfg0.effective();
  const fs::path out = cfg.output_dir;
  SelectionResult sel;
  if (cfg.scoring.method == "BADGE") {
    const Model m = load_model(model_or(model_flag, cfg, "erm.wnn"));
    const Dataset wild = read_dataset(data_path(cfg, "wild"));
    sel.strategy = Strategy::kTopK;
    sel.k = cfg.selection.k;
    sel.indices = badge_select(Network(m.arch), m.params, wild, std::min(cfg.selection.k, wild.size()),
                               derive_seed(cfg.seed, "badge"));
  } else {
    const ScoreTable table = read_scores_csv(out / "scores.csv");
    const nlohmann::json meta = load_json(out / "score.json");
    const double tau_b = meta.at("tau_b").get<double>();
    switch (cfg.selection.strategy) {
      case Strategy::kTopK:
        sel = select_top_k(table, cfg.selection.k);
        break;
      case Strategy::kNearBoundary:
        sel = select_near_boundary(table, tau_b, cfg.selection.k);
        break;
      case Strategy::kMixed:
        sel = select_mixed(table, tau_b, cfg.selection.k, cfg.selection.lambda);
        break;
    }
  }
  save_json(out / "selection.json", sel);
  std::cout << "selected " << sel.indices.size() << " samples (" << strategy_name(sel.strategy)
            << ")\n";
  return 0;
}

void write_annotated(const ExperimentConfig& cfg, const AnnotatedSets& sets) {
  write_dataset(sets.in_class, data_path(cfg, "in_class"));
  write_dataset(sets.id_selected, data_path(cfg, "id_selected"));
  write_dataset(sets.cov_selected, data_path(cfg, "cov_selected"));
  write_dataset(sets.sem_selected, data_path(cfg, "sem_selected"));
  std::cout << "in-class " << sets.in_class.size() << " (id " << sets.id_selected.size() << ", cov "
            << sets.cov_selected.size() << "), bottom " << sets.sem_selected.size() << "\n";
}

SelectionResult load_selection(const ExperimentConfig& cfg, const std::string& flag) {
  const fs::path p = flag.empty() ? fs::path(cfg.output_dir) / "selection.json" : fs::path(flag);
  return load_json(p).get<SelectionResult>();
}

int cmd_annotate_oracle(const ExperimentConfig& cfg, const std::string& selection_flag) {
  const Dataset wild = read_dataset(data_path(cfg, "wild"));
  write_annotated(cfg, oracle_annotate(wild, load_selection(cfg, selection_flag)));
  return 0;
}

int cmd_serve(const ExperimentConfig& cfg, const std::string& selection_flag, bool until_complete) {
  const Dataset wild = read_dataset(data_path(cfg, "wild"));
  const Dataset id_train = read_dataset(data_path(cfg, "id_train"));
  const fs::path dir = cfg.annotation.session_dir.empty() ? fs::path(cfg.output_dir) / "sessions"
                                                          : fs::path(cfg.annotation.session_dir);
  std::vector<std::string> names;
  const nlohmann::json manifest = read_manifest(data_path(cfg, "id_train"));
  if (manifest.contains("class_names")) names = manifest["class_names"].get<std::vector<std::string>>();
  SessionStore store(wild, dir, ContextProjection(id_train), names);
  store.set_reference(id_train);
  std::optional<fs::path> static_dir;
  if (!cfg.annotation.static_dir.empty()) static_dir = cfg.annotation.static_dir;
  AnnotationServer server(store, static_dir);
  try {
    server.start(cfg.annotation.host, cfg.annotation.port);
  } catch (const std::runtime_error& e) {
    throw StageError("serve", e.what());
  }
  std::cout << "listening on http://" << cfg.annotation.host << ":" << server.port() << std::endl;
  std::string session;
  if (!selection_flag.empty() || until_complete) {
    session = store.open_session(load_selection(cfg, selection_flag));
    std::cout << "session " << session << std::endl;
  }
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_interrupted) {
    if (until_complete && store.get(session).status() == SessionStatus::kComplete) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(200));
  }
  server.stop();
  if (until_complete && !session.empty() &&
      store.get(session).status() == SessionStatus::kComplete) {
    write_annotated(cfg, store.export_session(session));
  }
  return 0;
}

int cmd_train_joint(const ExperimentConfig& cfg0, const std::string& init_flag) {
  const ExperimentConfig cfg = cfg0.effective();
  const Model init = load_model(model_or(init_flag, cfg, "erm.wnn"));
  if (!(init.arch == cfg.architecture)) {
    throw ValidationError("checkpoint architecture differs from the config");
  }
  const Network net(init.arch);
  const TrainResult r =
      train_joint(net, init.params, read_dataset(data_path(cfg, "id_train")),
                  read_dataset(data_path(cfg, "in_class")),
                  read_dataset(data_path(cfg, "sem_selected")), cfg.joint);
  for (const std::string& w : r.warnings) std::cerr << "warning: " << w << "\n";
  write_checkpoint(fs::path(cfg.output_dir) / "joint.wnn", cfg.architecture, r.params);
  write_epoch_csv(fs::path(cfg.output_dir) / "epochs.csv", r.epochs, "joint", true);
  return 0;
}

int cmd_eval(const ExperimentConfig& cfg, const std::string& model_flag) {
  const Model m = load_model(model_or(model_flag, cfg, "joint.wnn"));
  const Network net(m.arch);
  EvalReport r;
  r.id_acc = accuracy(net, m.params, read_dataset(data_path(cfg, "id_test")));
  r.ood_acc = accuracy(net, m.params, read_dataset(data_path(cfg, "cov_test")));
  const DetectorMetrics d = detector_eval(net, m.params, read_dataset(data_path(cfg, "id_test")),
                                          read_dataset(data_path(cfg, "sem_test")));
  r.fpr95 = d.fpr95;
  r.auroc = d.auroc;
  r.threshold_lambda = d.threshold_lambda;
  const fs::path sel = fs::path(cfg.output_dir) / "selection.json";
  if (fs::exists(sel)) {
    r.selection_composition =
        composition(load_json(sel).get<SelectionResult>(), read_dataset(data_path(cfg, "wild")));
  }
  const nlohmann::json j = r;
  save_json(fs::path(cfg.output_dir) / "eval.json", j);
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_bound(const ExperimentConfig& cfg, const std::string& model_flag, bool table) {
  const fs::path out = cfg.output_dir;
  if (table) {
    const std::vector<CovariateTransform> transforms = {
        cfg.synthetic.covariate, AdditiveNoise{1.0},
        AffineShift{std::vector<double>(cfg.synthetic.dim, 1.5)}, Rotation{0.6}};
    const auto rows = discrepancy_table(cfg, transforms);
    write_discrepancy_csv(out / "discrepancy.csv", rows);
    for (const auto& r : rows) {
      std::cout << r.transform << "," << r.grad_discrepancy << "," << r.ood_acc << "\n";
    }
    return 0;
  }
  const Model m = load_model(model_or(model_flag, cfg, "joint.wnn"));
  const BoundReport b = bound_report(Network(m.arch), m.params, read_dataset(data_path(cfg, "id_train")),
                                     read_dataset(data_path(cfg, "cov_selected")), cfg.bound);
  const nlohmann::json j = b;
  save_json(out / "bound.json", j);
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_run(const ExperimentConfig& cfg) {
  const RunReport r = run_experiment(cfg);
  for (const RoundReport& rr : r.rounds) {
    std::cout << "round " << rr.round << ": ood_acc " << rr.scorer_eval.ood_acc << " -> "
              << rr.joint_eval.ood_acc << ", fpr95 " << rr.scorer_eval.fpr95 << " -> "
              << rr.joint_eval.fpr95 << "\n";
  }
  std::cout << (fs::path(cfg.output_dir) / "report.json").string() << "\n";
  return 0;
}

int cmd_sweep(const ExperimentConfig& cfg, const std::string& axes_path) {
  SweepAxes axes = load_json(axes_path).get<SweepAxes>();
  const auto cells = run_sweep(cfg, axes);
  size_t failed = 0;
  for (const SweepCell& c : cells) {
    if (!c.report) {
      ++failed;
      std::cerr << "cell " << c.index << ": " << c.error << "\n";
    }
  }
  std::cout << cells.size() - failed << "/" << cells.size() << " cells ok; "
            << (fs::path(cfg.output_dir) / "sweep.csv").string() << "\n";
  return failed == 0 ? 0 : kExitStage;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wildlab: OOD learning with human feedback on synthetic wild data"};
  app.require_subcommand(1);
  Globals g;
  uint64_t seed = 0;
  app.add_option("--config", g.config_path, "experiment config (JSON)");
  auto* seed_opt = app.add_option("--seed", seed, "experiment seed");
  app.add_option("--out", g.out, "output directory");

  std::string model, init, selection, axes;
  bool until_complete = false, table = false;
  auto* gen = app.add_subcommand("gen", "generate synthetic splits and the wild mixture");
  auto* erm = app.add_subcommand("train-erm", "train the ERM model on labeled ID data");
  auto* score = app.add_subcommand("score", "score wild samples");
  score->add_option("--model", model, "checkpoint (default <out>/erm.wnn)");
  auto* sel = app.add_subcommand("select", "select an annotation batch from scores");
  sel->add_option("--model", model, "checkpoint for BADGE (default <out>/erm.wnn)");
  auto* oracle = app.add_subcommand("annotate-oracle", "label a selection with ground truth");
  oracle->add_option("--selection", selection, "selection JSON (default <out>/selection.json)");
  auto* serve = app.add_subcommand("serve", "run the annotation service");
  serve->add_option("--selection", selection, "open a session for this selection");
  serve->add_flag("--until-complete", until_complete,
                  "exit and export once the session is complete");
  auto* joint = app.add_subcommand("train-joint", "joint training on annotated samples");
  joint->add_option("--init", init, "warm-start checkpoint (default <out>/erm.wnn)");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--model", model, "checkpoint (default <out>/joint.wnn)");
  auto* bound = app.add_subcommand("bound", "bound terms for a checkpoint");
  bound->add_option("--model", model, "checkpoint (default <out>/joint.wnn)");
  bound->add_flag("--table", table, "discrepancy vs OOD accuracy across covariate transforms");
  auto* run = app.add_subcommand("run", "end-to-end experiment");
  auto* sweep = app.add_subcommand("sweep", "run a grid of experiments");
  sweep->add_option("--axes", axes, "sweep axes JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitValidation;
  }
  if (*seed_opt) g.seed = seed;

  try {
    const ExperimentConfig cfg = resolve(g);
    if (*gen) return cmd_gen(cfg);
    if (*erm) return cmd_train_erm(cfg);
    if (*score) return cmd_score(cfg, model);
    if (*sel) return cmd_select(cfg, model);
    if (*oracle) return cmd_annotate_oracle(cfg, selection);
    if (*serve) return cmd_serve(cfg, selection, until_complete);
    if (*joint) return cmd_train_joint(cfg, init);
    if (*eval) return cmd_eval(cfg, model);
    if (*bound) return cmd_bound(cfg, model, table);
    if (*run) return cmd_run(cfg);
    if (*sweep) return cmd_sweep(cfg, axes);
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStage;
  } catch (const ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitValidation;
  } catch (const FormatError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStage;
  }
  return 0;
}
