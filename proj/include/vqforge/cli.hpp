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


#pragma once

#include <cerrno>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vqforge/harness.hpp"

// Command-line front end. stdout carries one JSON object per line; progress
// and errors go to stderr. Exit codes: 0 success, 1 configuration or input
// error, 2 training divergence.
namespace vqforge {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitDivergence = 2;

struct CliOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> arch;
  std::optional<std::int64_t> k;
  std::optional<std::int64_t> d;
  bool no_reset = false;
  bool no_data_init = false;
  std::optional<std::int64_t> steps;
  std::optional<std::int64_t> batch;
  std::optional<int> jobs;
  std::string ckpt;
  std::string in;
  std::string out_img;
};

namespace detail {

inline void add_common(CLI::App* cmd, CliOptions& o) {
  cmd->add_option("--config", o.config, "JSON experiment config (or a run manifest.json)");
  cmd->add_option("--seed", o.seed, "seed; for multi-seed commands runs this seed only");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--arch", o.arch, "single|hier")->check(CLI::IsMember({"single", "hier"}));
  cmd->add_option("--k", o.k, "codebook size (per level for hier)");
  cmd->add_option("--d", o.d, "code vector dimension");
  cmd->add_flag("--no-reset", o.no_reset, "disable dead-code reset");
  cmd->add_flag("--no-data-init", o.no_data_init, "initialize codebooks without data (see interventions.off_init)");
  cmd->add_option("--steps", o.steps, "training steps");
  cmd->add_option("--batch", o.batch, "images per batch");
  cmd->add_option("--jobs", o.jobs, "parallel runs (default: available cores)");
}

inline bool json_has_seed(const Json& root) {
  const Json& j = root.is_object() && root.contains("experiment") ? root.at("experiment") : root;
  if (!j.is_object()) return false;
  if (j.contains("seeds")) return true;
  return j.contains("schedule") && j.at("schedule").is_object() && j.at("schedule").contains("seed");
}

inline std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("VQFORGE_SEED");
  if (v == nullptr || *v == '\0') return std::nullopt;
  char* end = nullptr;
  errno = 0;
  const unsigned long long s = std::strtoull(v, &end, 10);
  if (errno != 0 || *end != '\0' || *v == '-') throw ConfigError(std::string("VQFORGE_SEED is not a u64: ") + v);
  return static_cast<std::uint64_t>(s);
}

enum class Command { kTrain, kEval, kReconstruct, kSweep, kAblate, kMatched, kReport };

// Flags > config file > VQFORGE_SEED (seed only) > defaults.
inline ExperimentConfig resolve_config(const CliOptions& o, Command cmd, const ExperimentConfig* base = nullptr) {
  ExperimentConfig cfg = base != nullptr ? *base : ExperimentConfig{};
  bool seeded = base != nullptr;
  if (!o.config.empty()) {
    const Bytes bytes = read_file(o.config);
    Json j;
    try {
      j = Json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("cannot parse " + o.config + ": " + e.what());
    }
    cfg = ExperimentConfig::from_json(j);
    seeded = json_has_seed(j);
  }
  std::optional<std::uint64_t> seed = o.seed;
  if (!seed && !seeded) seed = env_seed();
  if (seed) {
    cfg.seed = *seed;
    cfg.seeds = {*seed};
  }
  if (o.out) cfg.output_dir = *o.out;
  if (o.arch) cfg.arch = arch_from_string(*o.arch);
  if (cmd == Command::kSweep) {
    if (o.k) cfg.sweep.codes = {*o.k};
    if (o.d) cfg.sweep.dims = {*o.d};
  } else if (cfg.arch == Arch::kSingle) {
    if (o.k) cfg.single.codes = *o.k;
    if (o.d) cfg.single.code_dim = *o.d;
  } else {
    if (o.k) cfg.hier.codes = *o.k;
    if (o.d) cfg.hier.code_dim = *o.d;
  }
  if (o.no_reset) cfg.dead_code_reset = false;
  if (o.no_data_init) cfg.data_init = false;
  if (o.steps) cfg.steps = *o.steps;
  if (o.batch) cfg.batch = *o.batch;
  if (o.jobs) cfg.jobs = *o.jobs;
  return cfg;
}

inline void print_line(std::ostream& out, Json j) { out << j.dump() << std::endl; }

inline Json event(const char* name, Json body) {
  Json j{{"event", name}};
  for (auto& [k, v] : body.items()) j[k] = v;
  return j;
}

inline RunHooks cli_hooks(std::ostream& out, std::ostream& err) {
  RunHooks h;
  h.log = [&err](const std::string& m) { err << m << '\n'; };
  h.on_result = [&out](const RunResult& r) { print_line(out, event("run", to_json(r))); };
  return h;
}

inline bool any_diverged(const std::vector<RunResult>& runs) {
  for (const auto& r : runs) {
    if (r.status == "diverged") return true;
  }
  return false;
}

inline Json eval_json(const Evaluation& ev) {
  Json j{{"mse", ev.mse}, {"psnr", ev.psnr.exact ? Json("exact") : Json(ev.psnr.db)}};
  if (ev.pooled.total > 0) {
    j["perplexity"] = perplexity(ev.pooled);
    j["normalized_perplexity"] = normalized_perplexity(ev.pooled);
    j["gini"] = gini(ev.pooled);
  }
  j["dead_codes"] = ev.dead_codes;
  return j;
}

inline ModelFile load_checkpoint(const std::string& path) {
  if (path.empty()) throw ConfigError("--ckpt is required");
  return decode_model(read_file(path));
}

inline std::optional<ExperimentConfig> manifest_config(const Json& manifest) {
  if (manifest.is_object() && manifest.contains("experiment")) return ExperimentConfig::from_json(manifest);
  return std::nullopt;
}

inline int cmd_train(const CliOptions& o, std::ostream& out, std::ostream& err) {
  const ExperimentConfig cfg = resolve_config(o, Command::kTrain);
  const TrainOutcome t = run_train(cfg, cli_hooks(out, err));
  print_line(out, event("summary", Json{{"kind", "train"}, {"output_dir", cfg.output_dir},
                                        {"run_id", t.result.id}, {"status", t.result.status},
                                        {"steps", cfg.steps}}));
  return t.result.status == "diverged" ? kExitDivergence : kExitOk;
}

inline int cmd_eval(const CliOptions& o, std::ostream& out, std::ostream&) {
  const ModelFile mf = load_checkpoint(o.ckpt);
  const auto from_manifest = manifest_config(mf.manifest);
  const ExperimentConfig cfg = resolve_config(o, Command::kEval, from_manifest ? &*from_manifest : nullptr);
  const Corpora corpora = load_corpora(cfg);
  const Evaluation ev = std::visit([&](const auto& m) { return evaluate(m, corpora.eval); }, mf.model);
  Json body = eval_json(ev);
  body["checkpoint"] = o.ckpt;
  print_line(out, event("eval", body));
  return kExitOk;
}

inline int cmd_reconstruct(const CliOptions& o, std::ostream& out, std::ostream& err) {
  if (o.in.empty()) throw ConfigError("--in is required");
  std::optional<AnyModel> model;
  ExperimentConfig cfg;
  if (!o.ckpt.empty()) {
    ModelFile mf = load_checkpoint(o.ckpt);
    const auto from_manifest = manifest_config(mf.manifest);
    cfg = resolve_config(o, Command::kReconstruct, from_manifest ? &*from_manifest : nullptr);
    model = std::move(mf.model);
  } else {
    cfg = resolve_config(o, Command::kReconstruct);
    cfg.validate();
    const Corpora corpora = load_corpora(cfg);
    const Schedule s = cfg.schedule(cfg.seed, cfg.data_init, cfg.dead_code_reset);
    const StepCallback progress = [&err, &cfg](std::int64_t step) {
      if ((step + 1) % 500 == 0) err << "step " << step + 1 << "/" << cfg.steps << '\n';
    };
    if (cfg.arch == Arch::kSingle) {
      SingleLevelModel m = build_single_model(cfg.single, cfg.options, corpora.train, s.init, cfg.seed);
      train(m, corpora.train, s, progress);
      model = std::move(m);
    } else {
      HierarchicalModel m = build_hier_model(cfg.hier, cfg.options, corpora.train, s.init, cfg.seed);
      train(m, corpora.train, s, progress);
      model = std::move(m);
    }
  }
  const Image input = read_image(o.in);
  Image recon;
  if (const auto* single = std::get_if<SingleLevelModel>(&*model)) {
    recon = single_forward(*single, input).reconstruction;
  } else {
    recon = hier_forward(std::get<HierarchicalModel>(*model), input).reconstruction;
  }
  std::filesystem::path target = o.out_img;
  if (target.empty()) {
    target = std::filesystem::path(cfg.output_dir) / (input.channels == 1 ? "reconstruction.pgm" : "reconstruction.ppm");
  }
  write_image(recon, target);
  const double m = mse(input, recon);
  const Psnr p = Psnr::from_mse(m);
  print_line(out, event("reconstruct", Json{{"input", o.in},
                                            {"output", target.string()},
                                            {"mse", m},
                                            {"psnr", p.exact ? Json("exact") : Json(p.db)}}));
  return kExitOk;
}

inline int cmd_sweep(const CliOptions& o, std::ostream& out, std::ostream& err) {
  const ExperimentConfig cfg = resolve_config(o, Command::kSweep);
  const SweepResult s = run_sweep(cfg, cli_hooks(out, err));
  for (const auto& t : s.over_codes) print_line(out, event("trend", to_json(t)));
  for (const auto& t : s.over_dims) print_line(out, event("trend", to_json(t)));
  print_line(out, event("summary", Json{{"kind", "sweep"}, {"output_dir", cfg.output_dir},
                                        {"cells", s.cells.size()}, {"seconds", s.seconds}}));
  return any_diverged(s.cells) ? kExitDivergence : kExitOk;
}

inline int cmd_ablate(const CliOptions& o, std::ostream& out, std::ostream& err) {
  const ExperimentConfig cfg = resolve_config(o, Command::kAblate);
  const AblationResult a = run_ablation(cfg, cli_hooks(out, err));
  Json j = to_json(a);
  print_line(out, event("summary", Json{{"kind", "ablation"}, {"output_dir", cfg.output_dir},
                                        {"comparisons", j["comparisons"]}, {"seconds", a.seconds}}));
  return any_diverged(a.arms) ? kExitDivergence : kExitOk;
}

inline int cmd_matched(const CliOptions& o, std::ostream& out, std::ostream& err) {
  const ExperimentConfig cfg = resolve_config(o, Command::kMatched);
  const MatchedResult m = run_matched(cfg, cli_hooks(out, err));
  Json j = to_json(m);
  print_line(out, event("summary", Json{{"kind", "matched"}, {"output_dir", cfg.output_dir},
                                        {"pairs", j["pairs"]}, {"seconds", m.seconds}}));
  return any_diverged(m.runs) ? kExitDivergence : kExitOk;
}

// Re-reads every run's metrics.csv and checks it against report.json.
inline int cmd_report(const CliOptions& o, std::ostream& out, std::ostream&) {
  const std::filesystem::path dir = o.out ? *o.out : std::string("vqforge-out");
  const Bytes bytes = read_file(dir / "report.json");
  Json report;
  try {
    report = Json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw InputError("cannot parse " + (dir / "report.json").string() + ": " + e.what());
  }
  if (!report.contains("runs")) throw InputError((dir / "report.json").string() + " has no runs");
  bool consistent = true;
  std::size_t count = 0;
  for (const Json& r : report.at("runs")) {
    const std::string id = r.at("run_id").get<std::string>();
    Json line{{"run_id", id}, {"status", r.at("status")}};
    if (r.at("status") == "ok") {
      const EvalRow row = read_eval_row(dir / "runs" / id / "metrics.csv");
      const bool same = row.mse == r.at("mse").get<double>() &&
                        row.normalized_perplexity == r.at("normalized_perplexity").get<double>() &&
                        row.gini == r.at("gini").get<double>() && row.dead_codes == r.at("dead_codes").get<std::int64_t>();
      consistent = consistent && same;
      line["mse"] = row.mse;
      line["psnr"] = row.psnr;
      line["normalized_perplexity"] = row.normalized_perplexity;
      line["gini"] = row.gini;
      line["dead_codes"] = row.dead_codes;
      line["matches_report"] = same;
    }
    print_line(out, event("run", line));
    ++count;
  }
  print_line(out, event("report", Json{{"kind", report.value("kind", "")}, {"output_dir", dir.string()},
                                       {"runs", count}, {"consistent", consistent}}));
  return consistent ? kExitOk : kExitConfig;
}

}  // namespace detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"vqforge: vector-quantization experiments on linear patch codecs"};
  app.footer(
      "Precedence: command-line flags override --config values; VQFORGE_SEED supplies the seed only when neither "
      "--seed nor the config sets one.\nExit codes: 0 ok, 1 configuration/input error, 2 training divergence.");
  app.require_subcommand(1);
  CliOptions o;
  auto* train_cmd = app.add_subcommand("train", "train one model and write a run directory");
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the evaluation corpus");
  auto* recon_cmd = app.add_subcommand("reconstruct", "reconstruct one image");
  auto* sweep_cmd = app.add_subcommand("sweep", "single-level grid over codebook size and code dimension");
  auto* ablate_cmd = app.add_subcommand("ablate", "data init x dead-code reset x architecture");
  auto* matched_cmd = app.add_subcommand("matched", "single-level vs hierarchical under a matched budget");
  auto* report_cmd = app.add_subcommand("report", "re-read an output directory and check it");
  for (auto* cmd : {train_cmd, eval_cmd, recon_cmd, sweep_cmd, ablate_cmd, matched_cmd}) detail::add_common(cmd, o);
  for (auto* cmd : {eval_cmd, recon_cmd}) cmd->add_option("--ckpt", o.ckpt, "model checkpoint (.vqfm)");
  recon_cmd->add_option("--in", o.in, "input image (.pgm/.ppm)");
  recon_cmd->add_option("--out-img", o.out_img, "output image path");
  report_cmd->add_option("--out", o.out, "output directory to read");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App* failing = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << failing->help();
    return kExitConfig;
  }

  try {
    using detail::Command;
    if (train_cmd->parsed()) return detail::cmd_train(o, out, err);
    if (eval_cmd->parsed()) return detail::cmd_eval(o, out, err);
    if (recon_cmd->parsed()) return detail::cmd_reconstruct(o, out, err);
    if (sweep_cmd->parsed()) return detail::cmd_sweep(o, out, err);
    if (ablate_cmd->parsed()) return detail::cmd_ablate(o, out, err);
    if (matched_cmd->parsed()) return detail::cmd_matched(o, out, err);
    if (report_cmd->parsed()) return detail::cmd_report(o, out, err);
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  return kExitConfig;
}

}  // namespace vqforge
