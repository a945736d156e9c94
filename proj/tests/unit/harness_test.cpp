// Copyright 2026 The vqforge Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "vqforge/cli.hpp"
#include "vqforge/harness.hpp"

namespace vqforge {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("vqforge_harness_" + name);
  fs::remove_all(p);
  return p;
}

// 32x32 images, 4x4 latent grid, matched budgets: 16*20 = (16+4)*16 and
// 32*4 = 2*16*4.
ExperimentConfig tiny(const fs::path& out) {
  ExperimentConfig c;
  c.corpus.image_size = 32;
  c.corpus.train_count = 32;
  c.corpus.eval_count = 8;
  c.single = SingleBudget{4, 4, 20, 32, 4};
  c.hier = HierBudget{4, 4, 2, 2, 16, 16, 4};
  c.sweep.codes = {8, 32};
  c.sweep.dims = {2, 4};
  c.steps = 30;
  c.batch = 8;
  c.seeds = {0, 1};
  c.jobs = 2;
  c.output_dir = out.string();
  return c;
}

TEST(Config, JsonRoundTrip) {
  ExperimentConfig c = tiny("x");
  c.arch = Arch::kHier;
  c.options.learning_rate = 0.125;
  c.options.reset.sample_size = 3;
  c.off_init = InitMode::kRandom;
  c.dead_code_reset = false;
  const Json j = c.to_json();
  EXPECT_EQ(ExperimentConfig::from_json(j).to_json(), j);
  EXPECT_EQ(ExperimentConfig::from_json(Json{{"experiment", j}}).to_json(), j);
  EXPECT_EQ(ExperimentConfig::from_json(Json::parse(j.dump())).to_json(), j);
}

TEST(Config, PartialJsonKeepsDefaults) {
  const ExperimentConfig c = ExperimentConfig::from_json(Json{{"schedule", {{"steps", 5}}}});
  EXPECT_EQ(c.steps, 5);
  EXPECT_EQ(c.batch, 32);
  EXPECT_EQ(c.single.channels, 60);
  EXPECT_EQ(c.hier.codes, 256);
}

TEST(Config, RejectsUnknownAndMistypedKeys) {
  EXPECT_THROW(ExperimentConfig::from_json(Json{{"stepz", 5}}), ConfigError);
  EXPECT_THROW(ExperimentConfig::from_json(Json{{"schedule", {{"stpes", 5}}}}), ConfigError);
  EXPECT_THROW(ExperimentConfig::from_json(Json{{"options", {{"lr", 1}}}}), ConfigError);
  EXPECT_THROW(ExperimentConfig::from_json(Json{{"schedule", {{"steps", "many"}}}}), ConfigError);
  EXPECT_THROW(ExperimentConfig::from_json(Json{{"arch", "deep"}}), ConfigError);
  EXPECT_THROW(ExperimentConfig::from_json(Json{{"interventions", {{"off_init", "zeros"}}}}), ConfigError);
}

TEST(Config, ValidateChecksBudgetsAndShapes) {
  EXPECT_NO_THROW(ExperimentConfig{}.validate());
  EXPECT_NO_THROW(tiny("x").validate());
  ExperimentConfig c = tiny("x");
  c.single.codes = 16;
  EXPECT_THROW(c.validate(), InfeasibleBudget);
  c.matched = false;
  EXPECT_NO_THROW(c.validate());
  c = tiny("x");
  c.corpus.image_size = 36;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny("x");
  c.corpus.train = "noise";
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny("x");
  c.single.channels = 100;
  c.matched = false;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Trend, CountsInversions) {
  const TrendSummary k = summarize_trend("codes", 8, 0, {64, 128, 256, 512}, {0.040, 0.030, 0.0303, 0.020}, true);
  EXPECT_EQ(k.inversions, 1);
  EXPECT_NEAR(k.worst_inversion, 0.01, 1e-12);
  EXPECT_EQ(k.best, 512);
  EXPECT_EQ(k.worst, 64);
  const TrendSummary d = summarize_trend("code_dim", 512, 0, {4, 8, 32, 64}, {0.02, 0.03, 0.025, 0.04}, false);
  EXPECT_EQ(d.inversions, 1);
  EXPECT_EQ(d.best, 4);
  EXPECT_EQ(d.worst, 64);
}

TEST(Harness, TrainWritesSelfDescribingRun) {
  const fs::path out = scratch("train");
  const ExperimentConfig cfg = tiny(out);
  const TrainOutcome t = run_train(cfg);
  ASSERT_TRUE(t.result.ok());
  const fs::path run = out / "runs" / t.result.id;
  for (const char* f : {"manifest.json", "model.vqfm", "metrics.csv", "lorenz.csv"}) EXPECT_TRUE(fs::exists(run / f));
  EXPECT_TRUE(fs::exists(out / "report.json"));
  EXPECT_TRUE(fs::exists(out / "summary.csv"));

  // The manifest alone reproduces the checkpoint byte for byte.
  const Bytes model = read_file(run / "model.vqfm");
  const Bytes metrics = read_file(run / "metrics.csv");
  const Bytes m = read_file(run / "manifest.json");
  fs::remove_all(out);
  const TrainOutcome t2 = run_train(ExperimentConfig::from_json(Json::parse(m.begin(), m.end())));
  EXPECT_EQ(t2.result.id, t.result.id);
  EXPECT_EQ(read_file(run / "model.vqfm"), model);
  EXPECT_EQ(read_file(run / "metrics.csv"), metrics);

  const EvalRow row = read_eval_row(run / "metrics.csv");
  EXPECT_EQ(row.mse, t.result.mse);
  EXPECT_EQ(row.gini, t.result.gini);
  fs::remove_all(out);
}

TEST(Harness, ZeroStepsWritesEvalOnlyMetrics) {
  const fs::path out = scratch("zero");
  ExperimentConfig cfg = tiny(out);
  cfg.steps = 0;
  const TrainOutcome t = run_train(cfg);
  const Bytes b = read_file(out / "runs" / t.result.id / "metrics.csv");
  const std::string text(b.begin(), b.end());
  EXPECT_EQ(text.rfind(std::string(kMetricsHeader) + "\n" + t.result.id + ",eval,", 0), 0u) << text;
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
  fs::remove_all(out);
}

TEST(Harness, DivergenceIsRecordedNotThrown) {
  const fs::path out = scratch("diverge");
  ExperimentConfig cfg = tiny(out);
  cfg.options.learning_rate = 1e8;
  const TrainOutcome t = run_train(cfg);
  EXPECT_EQ(t.result.status, "diverged");
  EXPECT_GE(t.result.diverged_step, 0);
  fs::remove_all(out);
}

TEST(Harness, SweepCsvsMatchMemoryAndJobsDoNotMatter) {
  const fs::path out = scratch("sweep");
  ExperimentConfig cfg = tiny(out);
  cfg.matched = false;
  const SweepResult s = run_sweep(cfg);
  ASSERT_EQ(s.cells.size(), 8u);
  const SweepResult disk = sweep_from_disk(cfg, s);
  ASSERT_EQ(disk.cells.size(), s.cells.size());
  for (std::size_t i = 0; i < s.cells.size(); ++i) {
    EXPECT_EQ(disk.cells[i].mse, s.cells[i].mse);
    EXPECT_EQ(disk.cells[i].normalized_perplexity, s.cells[i].normalized_perplexity);
    EXPECT_EQ(disk.cells[i].gini, s.cells[i].gini);
    EXPECT_EQ(disk.cells[i].dead_codes, s.cells[i].dead_codes);
  }
  ASSERT_EQ(disk.over_codes.size(), s.over_codes.size());
  for (std::size_t i = 0; i < s.over_codes.size(); ++i) EXPECT_EQ(to_json(disk.over_codes[i]), to_json(s.over_codes[i]));
  for (std::size_t i = 0; i < s.over_dims.size(); ++i) EXPECT_EQ(to_json(disk.over_dims[i]), to_json(s.over_dims[i]));

  cfg.jobs = 1;
  cfg.output_dir = (out / "serial").string();
  const SweepResult serial = run_sweep(cfg);
  for (std::size_t i = 0; i < s.cells.size(); ++i) {
    EXPECT_EQ(serial.cells[i].id, s.cells[i].id);
    EXPECT_EQ(serial.cells[i].mse, s.cells[i].mse);
  }
  fs::remove_all(out);
}

TEST(Harness, MatchedSweepSkipsInfeasibleCells) {
  const fs::path out = scratch("msweep");
  ExperimentConfig cfg = tiny(out);
  cfg.seeds = {0};
  cfg.sweep.codes = {16, 32};
  cfg.sweep.dims = {3, 4};
  RunHooks hooks;
  hooks.persist = false;
  const SweepResult s = run_sweep(cfg, hooks);
  int ran = 0, skipped = 0;
  for (const auto& c : s.cells) {
    if (c.status == "skipped") {
      ++skipped;
      EXPECT_FALSE(c.reason.empty());
    } else {
      ++ran;
      EXPECT_EQ(c.spec.single.codes * c.spec.single.code_dim, 2 * cfg.hier.codes * cfg.hier.code_dim);
      EXPECT_EQ(c.spec.single.channels, 20);
    }
  }
  EXPECT_EQ(ran, 1);
  EXPECT_EQ(skipped, 3);
  cfg.sweep.codes = {16};
  EXPECT_THROW(run_sweep(cfg, hooks), InfeasibleBudget);
}

TEST(Harness, AblationAndMatchedShapes) {
  const fs::path out = scratch("ablate");
  ExperimentConfig cfg = tiny(out);
  cfg.steps = 20;
  const AblationResult a = run_ablation(cfg);
  EXPECT_EQ(a.arms.size(), 16u);
  EXPECT_EQ(a.comparisons.size(), 4u);
  for (const auto& r : a.arms) EXPECT_TRUE(r.ok()) << r.id << " " << r.reason;
  EXPECT_NE(a.find(Arch::kHier, false, true, 1), nullptr);

  cfg.output_dir = (out / "matched").string();
  const MatchedResult m = run_matched(cfg);
  ASSERT_EQ(m.pairs.size(), 2u);
  for (const auto& p : m.pairs) {
    EXPECT_TRUE(p.ok);
    EXPECT_EQ(p.single->spec.arch, Arch::kSingle);
    EXPECT_EQ(p.hier->spec.arch, Arch::kHier);
    EXPECT_DOUBLE_EQ(p.gap, (p.single->mse - p.hier->mse) / p.hier->mse);
  }
  fs::remove_all(out);
}

// --- CLI -------------------------------------------------------------------------

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "vqforge");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::vector<Json> json_lines(const std::string& text) {
  std::vector<Json> lines;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) lines.push_back(Json::parse(line));
  return lines;
}

fs::path write_config(const fs::path& dir, const ExperimentConfig& c) {
  fs::create_directories(dir);
  const fs::path p = dir / "config.json";
  write_text(p, c.to_json().dump(2));
  return p;
}

TEST(Cli, UnknownFlagPrintsUsage) {
  const CliRun r = cli({"train", "--bogus"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--steps"), std::string::npos);
  EXPECT_EQ(cli({}).code, 1);
  EXPECT_EQ(cli({"--help"}).code, 0);
}

TEST(Cli, MatchedSweepCitesDiscreteConstraint) {
  const CliRun r = cli({"sweep", "--k", "512", "--d", "16", "--out", scratch("cli_sweep").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("K_s*D_s"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("2*K_h*D_h"), std::string::npos) << r.err;
}

TEST(Cli, BadConfigIsExitOne) {
  const fs::path dir = scratch("cli_bad");
  fs::create_directories(dir);
  write_text(dir / "c.json", "{\"schedule\": {\"steps\": -1}}");
  EXPECT_EQ(cli({"train", "--config", (dir / "c.json").string()}).code, 1);
  write_text(dir / "c.json", "{not json");
  EXPECT_EQ(cli({"train", "--config", (dir / "c.json").string()}).code, 1);
  EXPECT_EQ(cli({"eval", "--ckpt", (dir / "missing.vqfm").string()}).code, 1);
  fs::remove_all(dir);
}

TEST(Cli, TrainEvalReconstructReport) {
  const fs::path dir = scratch("cli_flow");
  const fs::path cfg = write_config(dir, tiny(dir / "out"));
  const CliRun zero = cli({"train", "--config", cfg.string(), "--steps", "0", "--seed", "4"});
  ASSERT_EQ(zero.code, 0) << zero.err;
  const auto zero_lines = json_lines(zero.out);
  ASSERT_EQ(zero_lines.size(), 2u);
  EXPECT_EQ(zero_lines[0]["event"], "run");
  EXPECT_EQ(zero_lines[1]["event"], "summary");
  EXPECT_EQ(zero_lines[1]["steps"], 0);
  const std::string id = zero_lines[0]["run_id"];
  EXPECT_NE(id.find("-s4"), std::string::npos);

  const CliRun trained = cli({"train", "--config", cfg.string(), "--arch", "hier", "--out", (dir / "h").string()});
  ASSERT_EQ(trained.code, 0) << trained.err;
  const std::string hid = json_lines(trained.out)[0]["run_id"];
  const fs::path ckpt = dir / "h" / "runs" / hid / "model.vqfm";

  const CliRun ev = cli({"eval", "--ckpt", ckpt.string()});
  ASSERT_EQ(ev.code, 0) << ev.err;
  const Json e = json_lines(ev.out).at(0);
  EXPECT_EQ(e["event"], "eval");
  // Checkpoints hold f32 parameters, so the reloaded model agrees closely, not exactly.
  EXPECT_NEAR(e["mse"].get<double>(), json_lines(trained.out)[0]["mse"].get<double>(), 1e-5);

  write_image(gen_synthetic("edges", 1, 9, 32).front(), dir / "in.pgm");
  const CliRun rc = cli({"reconstruct", "--ckpt", ckpt.string(), "--in", (dir / "in.pgm").string(), "--out-img",
                         (dir / "rec.pgm").string()});
  ASSERT_EQ(rc.code, 0) << rc.err;
  EXPECT_TRUE(fs::exists(dir / "rec.pgm"));
  const Json rj = json_lines(rc.out).at(0);
  EXPECT_GT(rj["mse"].get<double>(), 0.0);
  EXPECT_TRUE(rj["psnr"].is_number());

  const CliRun rep = cli({"report", "--out", (dir / "h").string()});
  ASSERT_EQ(rep.code, 0) << rep.err;
  EXPECT_EQ(json_lines(rep.out).back()["consistent"], true);
  fs::remove_all(dir);
}

TEST(Cli, ReconstructTrainsLargeCodebookInline) {
  const fs::path dir = scratch("cli_big");
  ExperimentConfig c = tiny(dir / "out");
  c.matched = false;
  c.single = SingleBudget{4, 4, 20, 8192, 8};
  const fs::path cfg = write_config(dir, c);
  write_image(gen_synthetic("mix", 1, 9, 32).front(), dir / "in.pgm");
  const CliRun r = cli({"reconstruct", "--config", cfg.string(), "--steps", "5", "--in", (dir / "in.pgm").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "out" / "reconstruction.pgm"));
  fs::remove_all(dir);
}

TEST(Cli, DivergenceIsExitTwo) {
  const fs::path dir = scratch("cli_div");
  ExperimentConfig c = tiny(dir / "out");
  c.options.learning_rate = 1e8;
  const CliRun r = cli({"train", "--config", write_config(dir, c).string()});
  EXPECT_EQ(r.code, 2) << r.err;
  EXPECT_EQ(json_lines(r.out).at(0)["status"], "diverged");
  fs::remove_all(dir);
}

TEST(Cli, SeedPrecedence) {
  const fs::path dir = scratch("cli_seed");
  ExperimentConfig c = tiny(dir / "out");
  c.steps = 0;
  Json j = c.to_json();
  j.erase("seeds");
  j["schedule"].erase("seed");
  fs::create_directories(dir);
  write_text(dir / "c.json", j.dump());
  ::setenv("VQFORGE_SEED", "7", 1);
  const CliRun env = cli({"train", "--config", (dir / "c.json").string()});
  const CliRun flag = cli({"train", "--config", (dir / "c.json").string(), "--seed", "3"});
  const CliRun cfg = cli({"train", "--config", write_config(dir / "b", c).string()});
  ::setenv("VQFORGE_SEED", "seven", 1);
  const CliRun bad = cli({"train", "--config", (dir / "c.json").string()});
  ::unsetenv("VQFORGE_SEED");
  ASSERT_EQ(env.code, 0) << env.err;
  EXPECT_NE(json_lines(env.out)[0]["run_id"].get<std::string>().find("-s7"), std::string::npos);
  EXPECT_NE(json_lines(flag.out)[0]["run_id"].get<std::string>().find("-s3"), std::string::npos);
  EXPECT_NE(json_lines(cfg.out)[0]["run_id"].get<std::string>().find("-s0"), std::string::npos);
  EXPECT_EQ(bad.code, 1);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace vqforge
