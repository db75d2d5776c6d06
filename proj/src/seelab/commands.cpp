#include "seelab/commands.hpp"

#include <cstdlib>
#include <mutex>
#include <sstream>

#include <json.hpp>

#include "seelab/errors.hpp"
#include "seelab/metrics.hpp"
#include "seelab/serialize.hpp"
#include "seelab/verify.hpp"

namespace seelab {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// Rng streams owned by the commands (the trainer uses its own).
constexpr std::uint64_t kPretrainStream = 10;
constexpr std::uint64_t kCoverageStream = 11;
constexpr int kCoverageSamples = 1000;

void say(const CommandOptions& o, const std::string& msg) {
  if (o.log) o.log(msg);
}

std::string num(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

std::string full(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// Refuses to touch existing outputs unless forced; clears them when forced.
void claim(const fs::path& p, const CommandOptions& o) {
  if (!fs::exists(p)) return;
  if (!o.force) {
    throw ConfigError("output '" + p.string() + "' already exists; pass --force to overwrite");
  }
  fs::remove_all(p);
}

DenoiserParams load_reference(const fs::path& out, ScheduleKind* kind) {
  const fs::path p = out / "reference.json";
  if (!fs::exists(p)) {
    throw MissingArtifact("reference checkpoint '" + p.string() + "' not found; run pretrain first");
  }
  return denoiser_from_json(read_text_file(p), kind);
}

DenoiserParams checked_reference(const ExperimentConfig& cfg, const fs::path& out) {
  ScheduleKind kind{};
  DenoiserParams ref = load_reference(out, &kind);
  if (kind != cfg.schedule || !(ref.spec == cfg.denoiser_spec())) {
    throw ConfigError("reference checkpoint does not match the config (schedule, T, model or dataset); rerun pretrain");
  }
  return ref;
}

json row_summary(const RunLogRow& r) {
  return json{{"step", r.step},         {"proxy_reward", r.proxy_reward}, {"true_reward", r.true_reward},
              {"kl", r.kl},             {"diversity", r.diversity},       {"e2", r.e2},
              {"coverage", r.coverage}, {"composite", composite_score(r)}};
}

json hacking_json(const RunLog& log) {
  if (static_cast<int>(log.rows.size()) < 2 * DetectorSettings{}.window) {
    return json{{"evaluated", false}, {"flagged", false}, {"first_step", -1}};
  }
  const HackingReport h = detect_reward_hacking(log);
  return json{{"evaluated", true}, {"flagged", h.flagged}, {"first_row", h.first_row}, {"first_step", h.first_step}};
}

void write_log(const fs::path& dir, const RunLog& log) {
  write_text_file(dir / "runlog.csv", runlog_to_csv(log));
  write_text_file(dir / "runlog.json", runlog_to_json(log));
}

std::string cell_name(double gamma, double beta) { return "gamma_" + num(gamma) + "_beta_" + num(beta); }

}  // namespace

Mutation parse_mutation(const std::string& name) {
  if (name == "none") return Mutation::None;
  if (name == "gamma-scaling") return Mutation::FormAGammaScaling;
  throw ConfigError("unknown mutation '" + name + "' (expected none or gamma-scaling)");
}

std::string to_string(Mutation m) { return m == Mutation::None ? "none" : "gamma-scaling"; }

ExperimentConfig load_config(const fs::path& path, const CommandOptions& options) {
  if (!fs::exists(path)) throw ConfigError("config file '" + path.string() + "' not found");
  ExperimentConfig cfg;
  try {
    cfg = experiment_config_from_json(read_text_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (options.seed) {
    cfg.seed = *options.seed;
    cfg.propagate();
  }
  return cfg;
}

fs::path output_directory(const ExperimentConfig& config, const CommandOptions& options) {
  fs::path root = ".";
  if (!options.output_root.empty()) {
    root = options.output_root;
  } else if (const char* env = std::getenv(kOutputRootEnv); env && *env) {
    root = env;
  }
  return root / config.output_dir;
}

CommandResult cmd_pretrain(const ExperimentConfig& cfg, const CommandOptions& options) {
  cfg.validate();
  const fs::path out = output_directory(cfg, options);
  claim(out / "reference.json", options);
  claim(out / "pretrain", options);

  const ToyDataset ds(cfg.dataset);
  const DiffusionSchedule sched = make_schedule(cfg.T, cfg.schedule);
  Rng rng(cfg.seed, kPretrainStream);
  PretrainReport report;
  say(options, "pretraining " + std::to_string(cfg.pretrain.steps) + " steps on " + to_string(cfg.dataset));
  const DenoiserParams params = pretrain_denoiser(ds, sched, cfg.denoiser_spec(), cfg.pretrain, rng, &report);
  if (!params.net.all_finite()) throw NumericalAbort("pretrain produced non-finite parameters");

  json summary{{"dataset", to_string(cfg.dataset)},
               {"steps", cfg.pretrain.steps},
               {"initial_loss", report.initial_loss},
               {"final_loss", report.final_loss}};
  if (cfg.dataset == DatasetId::Mixture2d) {
    std::vector<std::vector<double>> conds(kCoverageSamples, ds.prompts().front());
    Rng crng(cfg.seed, kCoverageStream);
    const auto samples = sample_final(sched, params, conds, crng);
    const auto cov = mode_coverage(samples, ds.centers());
    summary["mode_coverage"] = cov;
    summary["modes_at_5pct"] = modes_covered(cov, 0.05);
  }

  write_text_file(out / "config.json", experiment_config_to_json(cfg));
  write_text_file(out / "reference.json", denoiser_to_json(params, cfg.schedule));
  std::string curve = "# seelab-pretrain v1\nblock,mean_loss\n";
  for (std::size_t i = 0; i < report.loss_curve.size(); ++i) {
    curve += std::to_string(i) + "," + full(report.loss_curve[i]) + "\n";
  }
  write_text_file(out / "pretrain" / "loss.csv", curve);
  write_text_file(out / "pretrain" / "report.json", summary.dump(1) + "\n");

  std::string line = "pretrain: loss " + num(report.initial_loss) + " -> " + num(report.final_loss);
  if (summary.contains("modes_at_5pct")) line += ", modes >=5%: " + summary["modes_at_5pct"].dump();
  return CommandResult{0, line, summary.dump()};
}

CommandResult cmd_train(const ExperimentConfig& cfg, const CommandOptions& options) {
  cfg.validate();
  const fs::path out = output_directory(cfg, options);
  const DenoiserParams ref = checked_reference(cfg, out);
  const fs::path dir = out / "train";
  const fs::path state_path = dir / "state.json";
  if (options.force && fs::exists(dir)) fs::remove_all(dir);

  TrainerState state;
  if (fs::exists(state_path)) {
    state = trainer_state_from_json(read_text_file(state_path), ref);
    if (!(state.config == cfg.run)) {
      throw ConfigError("'" + state_path.string() + "' was written by a different run config; pass --force to restart");
    }
    say(options, "resuming at iteration " + std::to_string(state.iteration));
  } else {
    if (fs::exists(dir)) throw ConfigError("'" + dir.string() + "' exists without a checkpoint; pass --force");
    say(options, "fitting proxy reward model");
    state = init_trainer(cfg.run, ref);
    say(options, "proxy reward model held-out accuracy " + num(state.proxy_fit.heldout_accuracy));
  }

  auto checkpoint = [&](const TrainerState& s) {
    write_text_file(state_path, trainer_state_to_json(s));
    write_log(dir, s.log);
  };
  checkpoint(state);
  try {
    train(
        state,
        [&](const TrainerState& s) {
          checkpoint(s);
          const auto& r = s.log.rows.back();
          say(options, "step " + std::to_string(r.step) + " proxy " + num(r.proxy_reward) + " true " +
                           num(r.true_reward) + " kl " + num(r.kl));
        },
        options.iteration_limit);
  } catch (const NumericalAbort&) {
    checkpoint(state);
    throw;
  }
  checkpoint(state);
  write_text_file(dir / "dataset.jsonl", pairs_to_jsonl(state.dataset));

  const bool finished = state.iteration >= cfg.run.iterations;
  json summary{{"variant", to_string(cfg.run.loss.variant)},
               {"beta", cfg.run.loss.beta},
               {"effective_beta", cfg.run.loss.effective_beta()},
               {"gamma", cfg.run.loss.gamma},
               {"iteration", state.iteration},
               {"finished", finished},
               {"dataset_pairs", state.dataset.size()},
               {"proxy_heldout_accuracy", state.proxy_fit.heldout_accuracy},
               {"final", row_summary(state.log.rows.back())},
               {"reward_hacking", hacking_json(state.log)}};
  write_text_file(dir / "summary.json", summary.dump(1) + "\n");
  const auto& last = state.log.rows.back();
  return CommandResult{0,
                       std::string(finished ? "train finished" : "train stopped") + " at iteration " +
                           std::to_string(state.iteration) + ": proxy " + num(last.proxy_reward) + ", true " +
                           num(last.true_reward) + ", kl " + num(last.kl),
                       summary.dump()};
}

CommandResult cmd_sweep(const ExperimentConfig& cfg, const CommandOptions& options) {
  cfg.validate();
  const fs::path out = output_directory(cfg, options);
  const DenoiserParams ref = checked_reference(cfg, out);
  const fs::path dir = out / "sweep";
  claim(dir, options);
  fs::create_directories(dir / "cells");

  std::mutex log_mu;
  const SweepResult result =
      sweep(cfg.run, ref, cfg.sweep_gammas, cfg.sweep_betas, options.jobs,
            [&](std::size_t, const SweepCell& cell, const TrainerState*) {
              // Each worker writes only inside its own cell directory.
              const fs::path cdir = dir / "cells" / cell_name(cell.gamma, cell.beta);
              write_log(cdir, cell.log);
              json info{{"gamma", cell.gamma},
                        {"beta", cell.beta},
                        {"variant", to_string(sweep_variant(cfg.run.loss.variant, cell.gamma))},
                        {"ok", cell.ok},
                        {"error", cell.error}};
              write_text_file(cdir / "cell.json", info.dump(1) + "\n");
              std::lock_guard lock(log_mu);
              say(options, "cell " + cell_name(cell.gamma, cell.beta) + (cell.ok ? " done" : " failed: " + cell.error));
            });

  std::string csv = "# seelab-sweep v1\n";
  csv += "gamma,beta,variant,ok,proxy_reward,true_reward,kl,diversity,e2,composite,hacking_flagged,hacking_first_step,error\n";
  int failed = 0;
  for (const auto& c : result.cells) {
    csv += full(c.gamma) + "," + full(c.beta) + "," + to_string(sweep_variant(cfg.run.loss.variant, c.gamma)) + "," +
           (c.ok ? "1" : "0");
    if (c.ok && !c.log.rows.empty()) {
      const auto& r = c.log.rows.back();
      csv += "," + full(r.proxy_reward) + "," + full(r.true_reward) + "," + full(r.kl) + "," + full(r.diversity) +
             "," + full(r.e2) + "," + full(composite_score(r));
    } else {
      ++failed;
      csv += ",,,,,,";
    }
    std::string err = c.error;
    for (char& ch : err) {
      if (ch == ',' || ch == '\n' || ch == '"') ch = ' ';
    }
    csv += "," + std::string(c.hacking.flagged ? "1" : "0") + "," + std::to_string(c.hacking.first_step) + "," +
           err + "\n";
  }
  write_text_file(dir / "matrix.csv", csv);
  const int total = static_cast<int>(result.cells.size());
  json summary{{"cells", total}, {"failed", failed}};
  return CommandResult{failed == total ? 4 : 0,
                       "sweep: " + std::to_string(total - failed) + "/" + std::to_string(total) + " cells succeeded",
                       summary.dump()};
}

CommandResult cmd_verify(const CommandOptions& options, const fs::path& report_path) {
  VerifyOptions vo;
  vo.mutation = options.mutation;
  vo.seed = options.seed.value_or(0);
  const VerifyReport report = run_verify(vo);
  const std::string text = verify_report_json(report);
  if (!report_path.empty()) write_text_file(report_path, text);
  int passed = 0;
  for (const auto& r : report.results) passed += r.passed ? 1 : 0;
  return CommandResult{report.all_passed() ? 0 : 1,
                       "verify: " + std::to_string(passed) + "/" + std::to_string(report.results.size()) +
                           " properties passed",
                       text};
}

CommandResult cmd_toy(const ExperimentConfig& cfg, const CommandOptions& options) {
  cfg.validate();
  const fs::path dir = output_directory(cfg, options) / "toy";
  claim(dir, options);
  const auto curves = run_bandit_toy(cfg.toy);
  std::string summary = "# seelab-toy-summary v1\ngamma,time_to_half_mass,final_mass\n";
  json j = json::array();
  for (const auto& c : curves) {
    std::string csv = "# seelab-toy v1\nstep,mass\n";
    for (std::size_t s = 0; s < c.mass.size(); ++s) csv += std::to_string(s) + "," + full(c.mass[s]) + "\n";
    write_text_file(dir / ("gamma_" + num(c.gamma) + ".csv"), csv);
    const int t = time_to_mass(c, 0.5);
    summary += full(c.gamma) + "," + std::to_string(t) + "," + full(c.mass.back()) + "\n";
    j.push_back(json{{"gamma", c.gamma}, {"time_to_half_mass", t}, {"final_mass", c.mass.back()}});
  }
  write_text_file(dir / "summary.csv", summary);
  return CommandResult{0, "toy: " + std::to_string(curves.size()) + " curves written", j.dump()};
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const MissingArtifact*>(&e)) return 3;
  if (dynamic_cast<const NumericalAbort*>(&e)) return 4;
  return 5;
}

}  // namespace seelab
