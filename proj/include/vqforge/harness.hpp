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

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "vqforge/budget.hpp"
#include "vqforge/checkpoint.hpp"
#include "vqforge/io.hpp"
#include "vqforge/metrics.hpp"
#include "vqforge/pipeline.hpp"
#include "vqforge/serialize.hpp"

namespace vqforge {

// --- Configuration -----------------------------------------------------------------

enum class Arch { kSingle, kHier };

inline std::string to_string(Arch a) { return a == Arch::kSingle ? "single" : "hier"; }

inline Arch arch_from_string(const std::string& s) {
  if (s == "single") return Arch::kSingle;
  if (s == "hier") return Arch::kHier;
  throw ConfigError("unknown architecture '" + s + "' (expected single or hier)");
}

// Synthetic corpora by default. A non-empty *_dir replaces the synthetic
// source with every .pgm/.ppm/.pnm file in that directory, sorted by name.
struct CorpusConfig {
  std::string train = "mix";
  std::uint64_t train_count = 256;
  std::uint64_t train_seed = 1;
  std::string eval = "mix";
  std::uint64_t eval_count = 64;
  std::uint64_t eval_seed = 2;
  Index image_size = 64;
  std::string train_dir;
  std::string eval_dir;
};

struct SweepConfig {
  std::vector<std::int64_t> codes{64, 128, 256, 512};
  std::vector<std::int64_t> dims{4, 8, 32, 64};
};

struct ExperimentConfig {
  Arch arch = Arch::kSingle;
  CorpusConfig corpus;
  SingleBudget single{8, 8, 60, 512, 8};
  HierBudget hier{8, 8, 4, 4, 48, 256, 8};
  bool matched = true;  // single and hier budgets must satisfy the capacity-matching constraints
  SweepConfig sweep;
  std::int64_t steps = 2000;
  std::int64_t batch = 32;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  bool data_init = true;
  bool dead_code_reset = true;
  InitMode off_init = InitMode::kCollapsed;  // codebook init used when data_init is off
  ModelOptions options;
  std::string output_dir = "vqforge-out";
  int jobs = 0;  // 0 = hardware concurrency

  Schedule schedule(std::uint64_t run_seed, bool from_data, bool reset) const {
    Schedule s;
    s.steps = steps;
    s.batch = batch;
    s.seed = run_seed;
    s.init = from_data ? InitMode::kFromData : off_init;
    s.dead_code_reset = reset;
    return s;
  }

  Index grid() const { return corpus.image_size / options.patch_size; }

  void validate() const {
    const ModelOptions& o = options;
    if (o.patch_size < 1) throw ConfigError("options.patch_size must be positive");
    if (o.channels != 1 && o.channels != 3) throw ConfigError("options.channels must be 1 or 3");
    if (!(o.learning_rate >= 0.0)) throw ConfigError("options.learning_rate must be non-negative");
    if (!(o.beta >= 0.0)) throw ConfigError("options.beta must be non-negative");
    if (!(o.decay >= 0.0 && o.decay < 1.0)) throw ConfigError("options.decay must lie in [0, 1)");
    if (!(o.smoothing_eps > 0.0)) throw ConfigError("options.smoothing_eps must be positive");
    if (o.window < 1) throw ConfigError("options.window must be at least 1");
    if (o.threshold < 1) throw ConfigError("options.threshold must be at least 1");
    if (o.reset.sample_size < 1) throw ConfigError("options.reset_sample_size must be at least 1");
    if (!(o.reset.jitter_scale >= 0.0) || !(o.init_jitter >= 0.0)) throw ConfigError("jitter must be non-negative");
    if (o.init_images < 1) throw ConfigError("options.init_images must be at least 1");
    if (steps < 0) throw ConfigError("schedule.steps must be non-negative");
    if (batch < 1) throw ConfigError("schedule.batch must be positive");
    if (seeds.empty()) throw ConfigError("seeds must not be empty");
    if (corpus.train_dir.empty() && corpus.train_count < 1) throw ConfigError("corpus.train_count must be positive");
    if (corpus.eval_dir.empty() && corpus.eval_count < 1) throw ConfigError("corpus.eval_count must be positive");
    if (corpus.train_dir.empty()) parse_synthetic(corpus.train);
    if (corpus.eval_dir.empty()) parse_synthetic(corpus.eval);
    if (corpus.image_size < 1 || corpus.image_size % o.patch_size != 0) {
      throw ConfigError("corpus.image_size " + std::to_string(corpus.image_size) +
                        " is not a positive multiple of the patch size " + std::to_string(o.patch_size));
    }
    for (auto k : sweep.codes) {
      if (k < 1) throw ConfigError("sweep.codes entries must be positive");
    }
    for (auto d : sweep.dims) {
      if (d < 1) throw ConfigError("sweep.dims entries must be positive");
    }
    if (sweep.codes.empty() || sweep.dims.empty()) throw ConfigError("sweep.codes and sweep.dims must not be empty");

    const Index max_channels = o.patch_size * o.patch_size * o.channels;
    const auto check_channels = [&](std::int64_t c, const char* name) {
      if (c > max_channels) {
        throw ConfigError(std::string(name) + " = " + std::to_string(c) + " exceeds the patch dimension " +
                          std::to_string(max_channels));
      }
    };
    if (matched) {
      BudgetSpec::make(single, hier);
    } else {
      detail::require_positive(single.height, "H_s");
      detail::require_positive(single.width, "W_s");
      detail::require_positive(single.channels, "C_s");
      detail::require_positive(single.codes, "K_s");
      detail::require_positive(single.code_dim, "D_s");
    }
    check_channels(single.channels, "C_s");
    check_channels(hier.channels, "C_h");
    if (hier.bottom_height != 2 * hier.top_height || hier.bottom_width != 2 * hier.top_width) {
      throw InfeasibleBudget("top grid must be the 2x-downsampled bottom grid");
    }
    if (hier.top_height < 1 || hier.top_width < 1 || hier.channels < 1 || hier.codes < 1 || hier.code_dim < 1) {
      throw InfeasibleBudget("hierarchical budget entries must be positive");
    }
    if (corpus.train_dir.empty()) {
      const Index g = grid();
      if (single.height != g || single.width != g || hier.bottom_height != g || hier.bottom_width != g) {
        throw ConfigError("latent grid " + std::to_string(g) + "x" + std::to_string(g) + " (image_size / patch_size)" +
                          " does not match H_s x W_s = " + std::to_string(single.height) + "x" +
                          std::to_string(single.width) + " or H_b x W_b = " + std::to_string(hier.bottom_height) +
                          "x" + std::to_string(hier.bottom_width));
      }
    }
  }

  Json to_json() const {
    Json j;
    j["arch"] = to_string(arch);
    j["corpus"] = Json{{"train", corpus.train},           {"train_count", corpus.train_count},
                       {"train_seed", corpus.train_seed}, {"eval", corpus.eval},
                       {"eval_count", corpus.eval_count}, {"eval_seed", corpus.eval_seed},
                       {"image_size", corpus.image_size}, {"train_dir", corpus.train_dir},
                       {"eval_dir", corpus.eval_dir}};
    j["budget"] = Json{{"matched", matched}, {"single", vqforge::to_json(single)}, {"hier", vqforge::to_json(hier)}};
    j["sweep"] = Json{{"codes", sweep.codes}, {"dims", sweep.dims}};
    j["schedule"] = Json{{"steps", steps}, {"batch", batch}, {"seed", seed}};
    j["seeds"] = seeds;
    j["interventions"] =
        Json{{"data_init", data_init}, {"dead_code_reset", dead_code_reset}, {"off_init", to_string(off_init)}};
    j["options"] = vqforge::to_json(options);
    j["output_dir"] = output_dir;
    j["jobs"] = jobs;
    return j;
  }

  // Accepts a config object, or a run manifest carrying one under "experiment".
  static ExperimentConfig from_json(const Json& root) {
    const Json& j = root.is_object() && root.contains("experiment") ? root.at("experiment") : root;
    detail::reject_unknown(j, "config",
                           {"arch", "corpus", "budget", "sweep", "schedule", "seeds", "interventions", "options",
                            "output_dir", "jobs"});
    ExperimentConfig c;
    std::string arch = to_string(c.arch);
    detail::read_field(j, "config", "arch", arch);
    c.arch = arch_from_string(arch);
    if (j.contains("corpus")) {
      const Json& cj = j.at("corpus");
      detail::reject_unknown(cj, "corpus",
                             {"train", "train_count", "train_seed", "eval", "eval_count", "eval_seed", "image_size",
                              "train_dir", "eval_dir"});
      detail::read_field(cj, "corpus", "train", c.corpus.train);
      detail::read_field(cj, "corpus", "train_count", c.corpus.train_count);
      detail::read_field(cj, "corpus", "train_seed", c.corpus.train_seed);
      detail::read_field(cj, "corpus", "eval", c.corpus.eval);
      detail::read_field(cj, "corpus", "eval_count", c.corpus.eval_count);
      detail::read_field(cj, "corpus", "eval_seed", c.corpus.eval_seed);
      detail::read_field(cj, "corpus", "image_size", c.corpus.image_size);
      detail::read_field(cj, "corpus", "train_dir", c.corpus.train_dir);
      detail::read_field(cj, "corpus", "eval_dir", c.corpus.eval_dir);
    }
    if (j.contains("budget")) {
      const Json& bj = j.at("budget");
      detail::reject_unknown(bj, "budget", {"matched", "single", "hier"});
      detail::read_field(bj, "budget", "matched", c.matched);
      if (bj.contains("single")) c.single = single_budget_from_json(bj.at("single"));
      if (bj.contains("hier")) c.hier = hier_budget_from_json(bj.at("hier"));
    }
    if (j.contains("sweep")) {
      const Json& sj = j.at("sweep");
      detail::reject_unknown(sj, "sweep", {"codes", "dims"});
      detail::read_field(sj, "sweep", "codes", c.sweep.codes);
      detail::read_field(sj, "sweep", "dims", c.sweep.dims);
    }
    if (j.contains("schedule")) {
      const Json& sj = j.at("schedule");
      detail::reject_unknown(sj, "schedule", {"steps", "batch", "seed"});
      detail::read_field(sj, "schedule", "steps", c.steps);
      detail::read_field(sj, "schedule", "batch", c.batch);
      detail::read_field(sj, "schedule", "seed", c.seed);
    }
    detail::read_field(j, "config", "seeds", c.seeds);
    if (j.contains("interventions")) {
      const Json& ij = j.at("interventions");
      detail::reject_unknown(ij, "interventions", {"data_init", "dead_code_reset", "off_init"});
      detail::read_field(ij, "interventions", "data_init", c.data_init);
      detail::read_field(ij, "interventions", "dead_code_reset", c.dead_code_reset);
      std::string off = to_string(c.off_init);
      detail::read_field(ij, "interventions", "off_init", off);
      c.off_init = init_mode_from_string(off);
    }
    if (j.contains("options")) c.options = model_options_from_json(j.at("options"));
    detail::read_field(j, "config", "output_dir", c.output_dir);
    detail::read_field(j, "config", "jobs", c.jobs);
    return c;
  }

  static ExperimentConfig load(const std::filesystem::path& path) {
    const Bytes bytes = read_file(path);
    Json j;
    try {
      j = Json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("cannot parse " + path.string() + ": " + e.what());
    }
    return from_json(j);
  }
};

// --- Corpora ---------------------------------------------------------------------

struct Corpora {
  PatchCorpus train;
  PatchCorpus eval;
};

inline std::vector<Image> load_image_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw InputError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto ext = entry.path().extension().string();
    if (entry.is_regular_file() && (ext == ".pgm" || ext == ".ppm" || ext == ".pnm")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw InputError("no .pgm/.ppm/.pnm images in " + dir.string());
  std::vector<Image> images;
  for (const auto& f : files) {
    images.push_back(read_image(f));
    if (!images.back().same_shape(images.front())) {
      throw InputError("image " + f.string() + " differs in shape from " + files.front().string());
    }
  }
  return images;
}

inline std::vector<Image> corpus_images(const std::string& dir, const std::string& kind, std::uint64_t count,
                                        std::uint64_t seed, Index size) {
  if (!dir.empty()) return load_image_dir(dir);
  return gen_synthetic(kind, static_cast<std::size_t>(count), seed, size);
}

inline Corpora load_corpora(const ExperimentConfig& cfg) {
  const CorpusConfig& c = cfg.corpus;
  const Index p = cfg.options.patch_size;
  Corpora out;
  out.train =
      PatchCorpus::from_images(corpus_images(c.train_dir, c.train, c.train_count, c.train_seed, c.image_size), p);
  out.eval = PatchCorpus::from_images(corpus_images(c.eval_dir, c.eval, c.eval_count, c.eval_seed, c.image_size), p);
  if (out.train.channels != cfg.options.channels || out.eval.channels != cfg.options.channels) {
    throw ConfigError("corpus channel count does not match options.channels");
  }
  if (out.train.grid_h != out.eval.grid_h || out.train.grid_w != out.eval.grid_w) {
    throw ConfigError("train and eval images differ in size");
  }
  return out;
}

// --- Single runs -------------------------------------------------------------------

struct RunSpec {
  Arch arch = Arch::kSingle;
  SingleBudget single;
  HierBudget hier;
  std::uint64_t seed = 0;
  bool data_init = true;
  bool reset = true;

  std::int64_t codes() const { return arch == Arch::kSingle ? single.codes : hier.codes; }
  std::int64_t code_dim() const { return arch == Arch::kSingle ? single.code_dim : hier.code_dim; }
  std::int64_t channels() const { return arch == Arch::kSingle ? single.channels : hier.channels; }
};

inline std::string run_id(const RunSpec& s, const ExperimentConfig& cfg) {
  return to_string(s.arch) + "-K" + std::to_string(s.codes()) + "-D" + std::to_string(s.code_dim()) + "-C" +
         std::to_string(s.channels()) + "-" + to_string(s.data_init ? InitMode::kFromData : cfg.off_init) + "-" +
         (s.reset ? "reset" : "noreset") + "-s" + std::to_string(s.seed);
}

struct RunResult {
  std::string id;
  RunSpec spec;
  std::string status = "ok";  // ok | diverged | failed | skipped
  std::string reason;
  std::int64_t diverged_step = -1;
  double mse = 0.0;
  Psnr psnr;
  double perplexity = 0.0;
  double normalized_perplexity = 0.0;
  double gini = 0.0;
  std::int64_t dead_codes = 0;
  std::int64_t resets = 0;
  double seconds = 0.0;
  LorenzCurve lorenz;

  bool ok() const { return status == "ok"; }
};

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline const char* kMetricsHeader = "run_id,step,mse,psnr,perplexity,normalized_perplexity,gini,dead_code_count";

// Training rows carry batch statistics; the final row (step "eval") holds
// the evaluation-set numbers.
inline std::string metrics_csv(const std::string& id, const TrainReport& report, const RunResult& result) {
  std::ostringstream out;
  out << kMetricsHeader << '\n';
  for (const StepRecord& r : report.history) {
    std::int64_t dead = 0;
    for (auto d : r.dead_codes) dead += d;
    out << id << ',' << r.step << ',' << format_double(r.loss.reconstruction) << ','
        << Psnr::from_mse(r.loss.reconstruction).str() << ',' << format_double(r.pooled_perplexity) << ','
        << format_double(r.normalized_perplexity) << ',' << format_double(r.gini) << ',' << dead << '\n';
  }
  out << id << ",eval," << format_double(result.mse) << ',' << result.psnr.str() << ','
      << format_double(result.perplexity) << ',' << format_double(result.normalized_perplexity) << ','
      << format_double(result.gini) << ',' << result.dead_codes << '\n';
  return out.str();
}

inline std::string lorenz_csv(const LorenzCurve& curve) {
  std::ostringstream out;
  out << "code_fraction,assignment_share\n";
  for (const auto& [x, y] : curve.points) out << format_double(x) << ',' << format_double(y) << '\n';
  return out.str();
}

namespace detail {

inline void fill_eval(RunResult& r, const Evaluation& ev) {
  r.mse = ev.mse;
  r.psnr = ev.psnr;
  if (ev.pooled.total > 0) {
    r.perplexity = perplexity(ev.pooled);
    r.normalized_perplexity = normalized_perplexity(ev.pooled);
    r.gini = gini(ev.pooled);
    r.lorenz = lorenz(ev.pooled);
  }
  r.dead_codes = ev.dead_codes;
}

}  // namespace detail

// The config describing exactly this run; a manifest holding it reproduces the run.
inline ExperimentConfig run_config(const ExperimentConfig& cfg, const RunSpec& spec) {
  ExperimentConfig c = cfg;
  c.arch = spec.arch;
  c.single = spec.single;
  c.hier = spec.hier;
  c.seed = spec.seed;
  c.seeds = {spec.seed};
  c.data_init = spec.data_init;
  c.dead_code_reset = spec.reset;
  c.matched = cfg.matched && spec.single.codes * spec.single.code_dim == 2 * spec.hier.codes * spec.hier.code_dim &&
              spec.single.channels == cfg.single.channels;
  return c;
}

inline Json run_manifest(const ExperimentConfig& cfg, const RunSpec& spec, const std::string& id) {
  const ExperimentConfig rc = run_config(cfg, spec);
  Json m;
  m["format"] = "vqforge-run";
  m["version"] = kFormatVersion;
  m["run_id"] = id;
  m["arch"] = to_string(spec.arch);
  m["budget"] = spec.arch == Arch::kSingle ? to_json(spec.single) : to_json(spec.hier);
  m["seed"] = spec.seed;
  m["schedule"] = to_json(cfg.schedule(spec.seed, spec.data_init, spec.reset));
  m["options"] = to_json(cfg.options);
  m["experiment"] = rc.to_json();
  return m;
}

struct RunArtifacts {
  Bytes model;
  std::string metrics;
  std::string lorenz;
  Json manifest;
};

using LogFn = std::function<void(const std::string&)>;

// Trains and evaluates one model. Divergence is reported in the result, not thrown.
inline RunResult execute_run(const ExperimentConfig& cfg, const Corpora& corpora, const RunSpec& spec,
                             RunArtifacts* artifacts = nullptr, const LogFn& log = {}) {
  RunResult r;
  r.id = run_id(spec, cfg);
  r.spec = spec;
  const auto t0 = std::chrono::steady_clock::now();
  const Schedule schedule = cfg.schedule(spec.seed, spec.data_init, spec.reset);
  const auto progress = [&](std::int64_t step) {
    if (log && (step + 1) % 500 == 0) log(r.id + ": step " + std::to_string(step + 1) + "/" + std::to_string(cfg.steps));
  };
  const auto finish = [&](const auto& model, const TrainReport& report) {
    detail::fill_eval(r, evaluate(model, corpora.eval));
    r.resets = report.total_resets();
    if (artifacts != nullptr) {
      artifacts->manifest = run_manifest(cfg, spec, r.id);
      artifacts->model = encode_model(model, artifacts->manifest);
      artifacts->metrics = metrics_csv(r.id, report, r);
      artifacts->lorenz = lorenz_csv(r.lorenz);
    }
  };
  try {
    if (spec.arch == Arch::kSingle) {
      SingleLevelModel model =
          build_single_model(spec.single, cfg.options, corpora.train, schedule.init, spec.seed);
      const TrainReport report = train(model, corpora.train, schedule, progress);
      finish(model, report);
    } else {
      HierarchicalModel model = build_hier_model(spec.hier, cfg.options, corpora.train, schedule.init, spec.seed);
      const TrainReport report = train(model, corpora.train, schedule, progress);
      finish(model, report);
    }
  } catch (const DivergenceError& e) {
    r.status = "diverged";
    r.reason = e.what();
    r.diverged_step = e.step();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline void write_run(const std::filesystem::path& dir, const RunArtifacts& a) {
  write_text(dir / "manifest.json", a.manifest.dump(2) + "\n");
  write_file(dir / "model.vqfm", a.model);
  write_text(dir / "metrics.csv", a.metrics);
  write_text(dir / "lorenz.csv", a.lorenz);
}

inline Json to_json(const RunResult& r) {
  Json j;
  j["run_id"] = r.id;
  j["arch"] = to_string(r.spec.arch);
  j["codes"] = r.spec.codes();
  j["code_dim"] = r.spec.code_dim();
  j["channels"] = r.spec.channels();
  j["seed"] = r.spec.seed;
  j["data_init"] = r.spec.data_init;
  j["dead_code_reset"] = r.spec.reset;
  j["status"] = r.status;
  if (!r.reason.empty()) j["reason"] = r.reason;
  if (r.ok()) {
    j["mse"] = r.mse;
    j["psnr"] = r.psnr.exact ? Json("exact") : Json(r.psnr.db);
    j["perplexity"] = r.perplexity;
    j["normalized_perplexity"] = r.normalized_perplexity;
    j["gini"] = r.gini;
    j["dead_codes"] = r.dead_codes;
    j["resets"] = r.resets;
  }
  if (r.diverged_step >= 0) j["diverged_step"] = r.diverged_step;
  j["seconds"] = r.seconds;
  return j;
}

// --- Batches of runs -----------------------------------------------------------------

using ResultFn = std::function<void(const RunResult&)>;

struct RunHooks {
  LogFn log;         // progress lines
  ResultFn on_result;  // called once per finished run, serialized
  bool persist = true;
};

inline int effective_jobs(int jobs) {
  if (jobs > 0) return jobs;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs independent cells on a worker pool. Results keep the input order.
inline std::vector<RunResult> run_all(const ExperimentConfig& cfg, const Corpora& corpora,
                                      const std::vector<RunSpec>& specs, const std::filesystem::path& out_dir,
                                      const RunHooks& hooks) {
  std::vector<RunResult> results(specs.size());
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr failure;
  const auto worker = [&] {
    for (std::size_t i = next++; i < specs.size(); i = next++) {
      try {
        RunArtifacts artifacts;
        RunResult r = execute_run(cfg, corpora, specs[i], hooks.persist ? &artifacts : nullptr, [&](const std::string& m) {
          if (!hooks.log) return;
          std::lock_guard lock(mu);
          hooks.log(m);
        });
        if (hooks.persist && r.ok()) write_run(out_dir / "runs" / r.id, artifacts);
        std::lock_guard lock(mu);
        if (hooks.on_result) hooks.on_result(r);
        results[i] = std::move(r);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        next = specs.size();
      }
    }
  };
  const int jobs = std::min<int>(effective_jobs(cfg.jobs), static_cast<int>(std::max<std::size_t>(specs.size(), 1)));
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return results;
}

inline std::string summary_csv(const std::vector<RunResult>& runs) {
  std::ostringstream out;
  out << "run_id,arch,codes,code_dim,channels,seed,data_init,dead_code_reset,status,mse,psnr,perplexity,"
         "normalized_perplexity,gini,dead_codes,resets\n";
  for (const auto& r : runs) {
    out << r.id << ',' << to_string(r.spec.arch) << ',' << r.spec.codes() << ',' << r.spec.code_dim() << ','
        << r.spec.channels() << ',' << r.spec.seed << ',' << (r.spec.data_init ? 1 : 0) << ','
        << (r.spec.reset ? 1 : 0) << ',' << r.status << ',';
    if (r.ok()) {
      out << format_double(r.mse) << ',' << r.psnr.str() << ',' << format_double(r.perplexity) << ','
          << format_double(r.normalized_perplexity) << ',' << format_double(r.gini) << ',' << r.dead_codes << ','
          << r.resets;
    } else {
      out << ",,,,,,";
    }
    out << '\n';
  }
  return out.str();
}

inline Json runs_json(const std::vector<RunResult>& runs) {
  Json a = Json::array();
  for (const auto& r : runs) a.push_back(to_json(r));
  return a;
}

// --- Single training run -----------------------------------------------------------

struct TrainOutcome {
  RunResult result;
  Json report;
};

inline TrainOutcome run_train(const ExperimentConfig& cfg, const RunHooks& hooks = {}) {
  cfg.validate();
  const Corpora corpora = load_corpora(cfg);
  RunSpec spec{cfg.arch, cfg.single, cfg.hier, cfg.seed, cfg.data_init, cfg.dead_code_reset};
  const std::filesystem::path out = cfg.output_dir;
  RunArtifacts artifacts;
  RunResult r = execute_run(cfg, corpora, spec, hooks.persist ? &artifacts : nullptr, hooks.log);
  if (hooks.persist && r.ok()) write_run(out / "runs" / r.id, artifacts);
  if (hooks.on_result) hooks.on_result(r);
  Json report{{"kind", "train"}, {"config", cfg.to_json()}, {"runs", runs_json({r})}};
  if (hooks.persist) {
    write_text(out / "report.json", report.dump(2) + "\n");
    write_text(out / "summary.csv", summary_csv({r}));
  }
  return {std::move(r), std::move(report)};
}

// --- Trend summaries -------------------------------------------------------------------

// MSE along one axis of the sweep with the other axis and the seed fixed.
// An inversion is a step against the expected direction: MSE going up with
// K, or going down with D.
struct TrendSummary {
  std::string axis;  // "codes" or "code_dim"
  std::int64_t fixed = 0;
  std::uint64_t seed = 0;
  std::vector<std::int64_t> values;
  std::vector<double> mse;
  int inversions = 0;
  double worst_inversion = 0.0;  // largest relative size of an inversion
  std::int64_t best = 0;         // axis value with the lowest MSE
  std::int64_t worst = 0;        // axis value with the highest MSE
};

inline TrendSummary summarize_trend(std::string axis, std::int64_t fixed, std::uint64_t seed,
                                    std::vector<std::int64_t> values, std::vector<double> mse, bool expect_decrease) {
  TrendSummary t{std::move(axis), fixed, seed, std::move(values), std::move(mse)};
  if (t.mse.empty()) return t;
  std::size_t lo = 0;
  std::size_t hi = 0;
  for (std::size_t i = 0; i < t.mse.size(); ++i) {
    if (t.mse[i] < t.mse[lo]) lo = i;
    if (t.mse[i] > t.mse[hi]) hi = i;
    if (i == 0) continue;
    const double prev = t.mse[i - 1];
    const double cur = t.mse[i];
    const bool against = expect_decrease ? cur > prev : cur < prev;
    if (against) {
      ++t.inversions;
      t.worst_inversion = std::max(t.worst_inversion, std::abs(cur - prev) / prev);
    }
  }
  t.best = t.values[lo];
  t.worst = t.values[hi];
  return t;
}

inline Json to_json(const TrendSummary& t) {
  return Json{{"axis", t.axis},
              {"fixed", t.fixed},
              {"seed", t.seed},
              {"values", t.values},
              {"mse", t.mse},
              {"inversions", t.inversions},
              {"worst_inversion", t.worst_inversion},
              {"best", t.best},
              {"worst", t.worst}};
}

// --- Sweep ---------------------------------------------------------------------

struct SweepResult {
  std::vector<RunResult> cells;          // every requested (K, D, seed), possibly skipped
  std::vector<TrendSummary> over_codes;  // per fixed D and seed
  std::vector<TrendSummary> over_dims;   // per fixed K and seed
  std::vector<std::uint64_t> seeds;
  double seconds = 0.0;

  const RunResult* find(std::int64_t k, std::int64_t d, std::uint64_t seed) const {
    for (const auto& c : cells) {
      if (c.spec.single.codes == k && c.spec.single.code_dim == d && c.spec.seed == seed) return &c;
    }
    return nullptr;
  }
};

// MSE over K at each D and over D at each K, from whichever cells finished.
inline void compute_trends(SweepResult& s, const SweepConfig& grid) {
  s.over_codes.clear();
  s.over_dims.clear();
  for (std::uint64_t seed : s.seeds) {
    for (std::int64_t d : grid.dims) {
      std::vector<std::int64_t> xs;
      std::vector<double> ys;
      for (std::int64_t k : grid.codes) {
        const RunResult* c = s.find(k, d, seed);
        if (c != nullptr && c->ok()) {
          xs.push_back(k);
          ys.push_back(c->mse);
        }
      }
      if (xs.size() >= 2) s.over_codes.push_back(summarize_trend("codes", d, seed, xs, ys, true));
    }
    for (std::int64_t k : grid.codes) {
      std::vector<std::int64_t> xs;
      std::vector<double> ys;
      for (std::int64_t d : grid.dims) {
        const RunResult* c = s.find(k, d, seed);
        if (c != nullptr && c->ok()) {
          xs.push_back(d);
          ys.push_back(c->mse);
        }
      }
      if (xs.size() >= 2) s.over_dims.push_back(summarize_trend("code_dim", k, seed, xs, ys, false));
    }
  }
}

inline Json to_json(const SweepResult& s) {
  Json j;
  j["runs"] = runs_json(s.cells);
  Json oc = Json::array();
  for (const auto& t : s.over_codes) oc.push_back(to_json(t));
  Json od = Json::array();
  for (const auto& t : s.over_dims) od.push_back(to_json(t));
  j["trends"] = Json{{"over_codes", oc}, {"over_dims", od}};
  j["seeds"] = s.seeds;
  j["seconds"] = s.seconds;
  return j;
}

// Single-level grid over sweep.codes x sweep.dims. In matched mode a cell is
// feasible only if K*D equals the hierarchical 2*K_h*D_h, and C_s is derived
// from the hierarchical continuous budget; other cells are skipped with the
// budget error as reason. Throws InfeasibleBudget if no cell is feasible.
inline SweepResult run_sweep(const ExperimentConfig& cfg, const RunHooks& hooks = {}) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  SweepResult out;
  out.seeds = cfg.seeds;
  std::vector<RunSpec> specs;
  std::vector<RunResult> skipped;
  std::string first_reason;
  for (std::uint64_t seed : cfg.seeds) {
    for (std::int64_t d : cfg.sweep.dims) {
      for (std::int64_t k : cfg.sweep.codes) {
        RunSpec spec{Arch::kSingle, cfg.single, cfg.hier, seed, cfg.data_init, cfg.dead_code_reset};
        spec.single.codes = k;
        spec.single.code_dim = d;
        if (cfg.matched) {
          try {
            const BudgetSpec b = match_budget(cfg.hier, cfg.single.height, cfg.single.width, d);
            SingleBudget cell = b.single();
            cell.codes = k;
            BudgetSpec::make(cell, cfg.hier);
            spec.single = cell;
          } catch (const InfeasibleBudget& e) {
            RunResult r;
            r.spec = spec;
            r.id = run_id(spec, cfg);
            r.status = "skipped";
            r.reason = e.what();
            if (first_reason.empty()) first_reason = r.reason;
            skipped.push_back(std::move(r));
            continue;
          }
        }
        specs.push_back(spec);
      }
    }
  }
  if (specs.empty()) throw InfeasibleBudget("no feasible sweep cell in matched mode: " + first_reason);
  for (const auto& r : skipped) {
    if (hooks.on_result) hooks.on_result(r);
  }
  const std::filesystem::path dir = cfg.output_dir;
  std::vector<RunResult> ran = run_all(cfg, load_corpora(cfg), specs, dir, hooks);
  out.cells = std::move(ran);
  out.cells.insert(out.cells.end(), skipped.begin(), skipped.end());
  compute_trends(out, cfg.sweep);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (hooks.persist) {
    Json report = to_json(out);
    report["kind"] = "sweep";
    report["config"] = cfg.to_json();
    write_text(dir / "report.json", report.dump(2) + "\n");
    write_text(dir / "summary.csv", summary_csv(out.cells));
  }
  return out;
}

// --- Ablation ------------------------------------------------------------------------

struct AblationComparison {
  Arch arch = Arch::kSingle;
  std::uint64_t seed = 0;
  bool reset_lowers_mse = false;          // off-init arms: reset ON vs OFF
  bool reset_raises_perplexity = false;
  bool both_on_highest_perplexity = false;  // among the four arms
};

struct AblationResult {
  std::vector<RunResult> arms;
  std::vector<AblationComparison> comparisons;
  double seconds = 0.0;

  const RunResult* find(Arch arch, bool data_init, bool reset, std::uint64_t seed) const {
    for (const auto& r : arms) {
      if (r.spec.arch == arch && r.spec.data_init == data_init && r.spec.reset == reset && r.spec.seed == seed) {
        return &r;
      }
    }
    return nullptr;
  }
};

inline Json to_json(const AblationResult& a) {
  Json cmp = Json::array();
  for (const auto& c : a.comparisons) {
    cmp.push_back(Json{{"arch", to_string(c.arch)},
                       {"seed", c.seed},
                       {"reset_lowers_mse", c.reset_lowers_mse},
                       {"reset_raises_perplexity", c.reset_raises_perplexity},
                       {"both_on_highest_perplexity", c.both_on_highest_perplexity}});
  }
  return Json{{"runs", runs_json(a.arms)}, {"comparisons", cmp}, {"seconds", a.seconds}};
}

// {data init, off init} x {reset on, off} x {single, hier}, for every seed.
inline AblationResult run_ablation(const ExperimentConfig& cfg, const RunHooks& hooks = {}) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<RunSpec> specs;
  for (std::uint64_t seed : cfg.seeds) {
    for (Arch arch : {Arch::kSingle, Arch::kHier}) {
      for (bool data_init : {false, true}) {
        for (bool reset : {false, true}) specs.push_back(RunSpec{arch, cfg.single, cfg.hier, seed, data_init, reset});
      }
    }
  }
  const std::filesystem::path dir = cfg.output_dir;
  AblationResult out;
  out.arms = run_all(cfg, load_corpora(cfg), specs, dir, hooks);
  for (std::uint64_t seed : cfg.seeds) {
    for (Arch arch : {Arch::kSingle, Arch::kHier}) {
      const RunResult* off_off = out.find(arch, false, false, seed);
      const RunResult* off_on = out.find(arch, false, true, seed);
      const RunResult* on_off = out.find(arch, true, false, seed);
      const RunResult* on_on = out.find(arch, true, true, seed);
      AblationComparison c{arch, seed};
      if (off_off->ok() && off_on->ok()) {
        c.reset_lowers_mse = off_on->mse < off_off->mse;
        c.reset_raises_perplexity = off_on->normalized_perplexity > off_off->normalized_perplexity;
      }
      if (off_off->ok() && off_on->ok() && on_off->ok() && on_on->ok()) {
        c.both_on_highest_perplexity = on_on->normalized_perplexity > off_off->normalized_perplexity &&
                                       on_on->normalized_perplexity > off_on->normalized_perplexity &&
                                       on_on->normalized_perplexity > on_off->normalized_perplexity;
      }
      out.comparisons.push_back(c);
    }
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (hooks.persist) {
    Json report = to_json(out);
    report["kind"] = "ablation";
    report["config"] = cfg.to_json();
    write_text(dir / "report.json", report.dump(2) + "\n");
    write_text(dir / "summary.csv", summary_csv(out.arms));
  }
  return out;
}

// --- Matched comparison ----------------------------------------------------------------

struct MatchedPair {
  std::uint64_t seed = 0;
  const RunResult* single = nullptr;
  const RunResult* hier = nullptr;
  double gap = 0.0;  // (MSE_single - MSE_hier) / MSE_hier
  bool ok = false;
};

struct MatchedResult {
  std::vector<RunResult> runs;
  std::vector<MatchedPair> pairs;
  double seconds = 0.0;
};

inline Json to_json(const MatchedResult& m) {
  Json pairs = Json::array();
  for (const auto& p : m.pairs) {
    Json j{{"seed", p.seed}, {"single", p.single->id}, {"hier", p.hier->id}, {"ok", p.ok}};
    if (p.ok) j["relative_gap"] = p.gap;
    pairs.push_back(j);
  }
  return Json{{"runs", runs_json(m.runs)}, {"pairs", pairs}, {"seconds", m.seconds}};
}

// Both architectures under the matched budget, same schedule and seed.
inline MatchedResult run_matched(const ExperimentConfig& cfg, const RunHooks& hooks = {}) {
  cfg.validate();
  if (!cfg.matched) BudgetSpec::make(cfg.single, cfg.hier);
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<RunSpec> specs;
  for (std::uint64_t seed : cfg.seeds) {
    specs.push_back(RunSpec{Arch::kSingle, cfg.single, cfg.hier, seed, cfg.data_init, cfg.dead_code_reset});
    specs.push_back(RunSpec{Arch::kHier, cfg.single, cfg.hier, seed, cfg.data_init, cfg.dead_code_reset});
  }
  const std::filesystem::path dir = cfg.output_dir;
  MatchedResult out;
  out.runs = run_all(cfg, load_corpora(cfg), specs, dir, hooks);
  for (std::size_t i = 0; i + 1 < out.runs.size(); i += 2) {
    MatchedPair p{out.runs[i].spec.seed, &out.runs[i], &out.runs[i + 1]};
    p.ok = p.single->ok() && p.hier->ok();
    if (p.ok) p.gap = (p.single->mse - p.hier->mse) / p.hier->mse;
    out.pairs.push_back(p);
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (hooks.persist) {
    Json report = to_json(out);
    report["kind"] = "matched";
    report["config"] = cfg.to_json();
    write_text(dir / "report.json", report.dump(2) + "\n");
    write_text(dir / "summary.csv", summary_csv(out.runs));
  }
  return out;
}

// --- Reading persisted runs ------------------------------------------------------------

struct EvalRow {
  std::string run_id;
  double mse = 0.0;
  std::string psnr;
  double perplexity = 0.0;
  double normalized_perplexity = 0.0;
  double gini = 0.0;
  std::int64_t dead_codes = 0;
};

inline double parse_double(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw InputError("bad number '" + s + "' in " + what);
  return v;
}

// The "eval" row of a run's metrics.csv.
inline EvalRow read_eval_row(const std::filesystem::path& metrics_path) {
  std::ifstream in(metrics_path);
  if (!in) throw InputError("cannot open " + metrics_path.string());
  std::string line;
  std::getline(in, line);
  if (line != kMetricsHeader) throw InputError(metrics_path.string() + ": unexpected header");
  std::string last;
  while (std::getline(in, line)) {
    if (!line.empty()) last = line;
  }
  std::vector<std::string> f;
  std::stringstream ss(last);
  for (std::string field; std::getline(ss, field, ',');) f.push_back(field);
  if (f.size() != 8 || f[1] != "eval") throw InputError(metrics_path.string() + ": missing eval row");
  const std::string w = metrics_path.string();
  EvalRow r;
  r.run_id = f[0];
  r.mse = parse_double(f[2], w);
  r.psnr = f[3];
  r.perplexity = parse_double(f[4], w);
  r.normalized_perplexity = parse_double(f[5], w);
  r.gini = parse_double(f[6], w);
  r.dead_codes = static_cast<std::int64_t>(parse_double(f[7], w));
  return r;
}

// Rebuilds sweep trends from the per-cell CSVs under dir/runs.
inline SweepResult sweep_from_disk(const ExperimentConfig& cfg, const SweepResult& in_memory) {
  SweepResult s;
  s.seeds = in_memory.seeds;
  for (const RunResult& c : in_memory.cells) {
    RunResult r;
    r.id = c.id;
    r.spec = c.spec;
    r.status = c.status;
    if (c.ok()) {
      const EvalRow row = read_eval_row(std::filesystem::path(cfg.output_dir) / "runs" / c.id / "metrics.csv");
      r.mse = row.mse;
      r.perplexity = row.perplexity;
      r.normalized_perplexity = row.normalized_perplexity;
      r.gini = row.gini;
      r.dead_codes = row.dead_codes;
    }
    s.cells.push_back(std::move(r));
  }
  compute_trends(s, cfg.sweep);
  return s;
}

}  // namespace vqforge
