#include <cstdlib>
#include <string>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "httplib.h"
#include "test_util.h"
#include "wildlab/experiment.h"

namespace wildlab {
namespace {

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.synthetic.sizes = {200, 300, 300, 300, 100, 100, 100};
  c.wild.m = 300;
  c.architecture.hidden_sizes = {16};
  c.erm.epochs = 5;
  c.joint.epochs = 5;
  c.selection.k = 20;
  c.seed = 7;
  return c;
}

TEST(Experiment, ReportIsDeterministic) {
  const ExperimentConfig c = small_config();
  const RunReport a = run_experiment(c, {}, false);
  const RunReport b = run_experiment(c, {}, false);
  EXPECT_EQ(report_fingerprint(a), report_fingerprint(b));
  ExperimentConfig other = c;
  other.seed = 8;
  EXPECT_NE(report_fingerprint(run_experiment(other, {}, false)), report_fingerprint(a));
  ASSERT_EQ(a.rounds.size(), 1u);
  EXPECT_EQ(a.total_annotations, 20u);
  const Composition& comp = a.rounds[0].composition;
  EXPECT_EQ(comp.n_id + comp.n_cov + comp.n_sem, 20u);
}

TEST(Experiment, RoundsShareOneBudget) {
  ExperimentConfig c = small_config();
  c.rounds = 3;
  c.selection.k = 10;
  const RunReport r = run_experiment(c, {}, false);
  ASSERT_EQ(r.rounds.size(), 3u);
  EXPECT_EQ(r.annotation_limit, 30u);
  EXPECT_EQ(r.rounds.back().cumulative_annotations, 30u);
}

TEST(Experiment, InvalidConfigsAreRejected) {
  ExperimentConfig c = small_config();
  c.selection.k = 0;
  EXPECT_THROW(c.validate(), ValidationError);
  nlohmann::json j = small_config();
  j["erm"]["warmup"] = 3;
  EXPECT_THROW(j.get<ExperimentConfig>(), ValidationError);
  j = small_config();
  EXPECT_EQ(nlohmann::json(j.get<ExperimentConfig>()), j);
}

TEST(Experiment, HumanSessionWithOracleAnswersMatchesOracleMode) {
  testing::TempDir dir("exp");
  ExperimentConfig oracle = small_config();
  oracle.output_dir = (dir / "oracle").string();
  ExperimentConfig human = oracle;
  human.output_dir = (dir / "human").string();
  human.annotation.mode = AnnotationMode::kHuman;
  human.annotation.port = 0;

  RunHooks hooks;
  int opened = 0;
  hooks.on_session_open = [&](const std::string& id, int port) {
    ++opened;
    // Act as the annotator: read the answer key off disk and post it.
    const Dataset wild = read_dataset(dir / "human" / "data" / "wild.wds");
    httplib::Client cli("127.0.0.1", port);
    auto res = cli.Get("/api/sessions/" + id);
    ASSERT_TRUE(res && res->status == 200);
    const nlohmann::json session = nlohmann::json::parse(res->body);
    SelectionResult sel;
    for (const auto& item : session["items"]) {
      sel.indices.push_back(item["sample_id"].get<size_t>());
    }
    nlohmann::json body = nlohmann::json::array();
    for (const LabelAssignment& a : oracle_labels(wild, sel)) {
      body.push_back({{"sample_id", a.sample_id}, {"label", label_to_json(a.label)}});
    }
    res = cli.Post("/api/sessions/" + id + "/labels", body.dump(), "application/json");
    ASSERT_TRUE(res && res->status == 200);
  };
  const RunReport h = run_experiment(human, hooks);
  const RunReport o = run_experiment(oracle);
  EXPECT_EQ(opened, 1);
  EXPECT_EQ(testing::slurp(dir / "human" / "joint_r1.wnn"), testing::slurp(dir / "oracle" / "joint_r1.wnn"));
  EXPECT_EQ(nlohmann::json(h.rounds[0].joint_eval), nlohmann::json(o.rounds[0].joint_eval));
}

TEST(Sweep, SingleValueCellEqualsAStandaloneRun) {
  const ExperimentConfig c = small_config();
  SweepAxes axes;
  axes.budgets = {20};
  const auto cells = run_sweep(c, axes, false);
  ASSERT_EQ(cells.size(), 1u);
  ASSERT_TRUE(cells[0].report.has_value()) << cells[0].error;
  // Cells write into their own subdirectory; everything else must agree.
  auto strip = [](const RunReport& r) {
    nlohmann::json j = nlohmann::json::parse(report_fingerprint(r));
    j["config"].erase("output_dir");
    return j;
  };
  EXPECT_EQ(strip(*cells[0].report), strip(run_experiment(c, {}, false)));
}

TEST(Sweep, FailingCellDoesNotStopTheGrid) {
  SweepAxes axes;
  axes.budgets = {0, 10};
  const auto cells = run_sweep(small_config(), axes, false);
  ASSERT_EQ(cells.size(), 2u);
  EXPECT_FALSE(cells[0].report.has_value());
  EXPECT_FALSE(cells[0].error.empty());
  EXPECT_TRUE(cells[1].report.has_value());
}

class Cli : public ::testing::Test {
 protected:
  Cli() : dir_("cli") {
    testing::spit(dir_ / "small.json", nlohmann::json(small_config()).dump());
  }
  int run(const std::string& args) {
    const std::string cmd = std::string(WILDLAB_CLI) + " " + args + " >" +
                            (dir_ / "stdout.txt").string() + " 2>" + (dir_ / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  std::string cfg() const { return "--config " + (dir_ / "small.json").string(); }
  std::string out(const std::string& name) const { return "--out " + (dir_ / name).string(); }

  testing::TempDir dir_;
};

TEST_F(Cli, StagesChainThroughFiles) {
  const std::string common = cfg() + " " + out("o");
  EXPECT_EQ(run(common + " gen"), 0);
  EXPECT_EQ(run(common + " train-erm"), 0);
  EXPECT_EQ(run(common + " score"), 0);
  EXPECT_EQ(run(common + " select"), 0);
  EXPECT_EQ(run(common + " annotate-oracle"), 0);
  EXPECT_EQ(run(common + " train-joint"), 0);
  EXPECT_EQ(run(common + " eval"), 0);
  EXPECT_EQ(run(common + " bound"), 0);
  EXPECT_TRUE(std::filesystem::exists(dir_ / "o" / "joint.wnn"));
}

TEST_F(Cli, RunWritesAReport) {
  EXPECT_EQ(run(cfg() + " " + out("r") + " run"), 0);
  const auto report = nlohmann::json::parse(testing::slurp(dir_ / "r" / "report.json"));
  EXPECT_EQ(report["rounds"].size(), 1u);
}

TEST_F(Cli, ExitCodes) {
  testing::spit(dir_ / "bad.json", R"({"bogus": 1})");
  EXPECT_EQ(run("--config " + (dir_ / "bad.json").string() + " gen"), 2);
  EXPECT_EQ(run("no-such-command"), 2);
  EXPECT_EQ(run(out("x") + " eval --model " + (dir_ / "missing.wnn").string()), 2);
  testing::spit(dir_ / "axes.json", R"({"budgets": [0, 10]})");
  EXPECT_EQ(run(cfg() + " " + out("s") + " sweep --axes " + (dir_ / "axes.json").string()), 3);
  EXPECT_EQ(run(cfg() + " --out /proc/wildlab-nope run"), 3);
}

}  // namespace
}  // namespace wildlab
