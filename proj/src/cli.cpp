#include "aemlab/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "aemlab/config.hpp"
#include "aemlab/errors.hpp"
#include "aemlab/geometry.hpp"
#include "aemlab/probes.hpp"
#include "aemlab/trainer.hpp"

#ifndef AEMLAB_VERSION
#define AEMLAB_VERSION "dev"
#endif

namespace aemlab {

namespace fs = std::filesystem;
using nlohmann::json;

std::string version_tag() { return AEMLAB_VERSION; }

namespace {

// Exit-code carrier for failed checks.
struct CheckFailed {
  std::string message;
};

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", path, "key = value config file");
    cmd->add_option("--set", overrides, "override, e.g. --set train.lr=0.5")->take_all();
  }
  TrainConfig load() const {
    TrainConfig cfg = path.empty() ? TrainConfig{} : load_train_config(path);
    for (const auto& o : overrides) apply_override(cfg, o);
    cfg.validate();
    return cfg;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

std::string num(double v) { return std::isnan(v) ? "nan" : format_double(v); }

double mean_of(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v;
  return x.empty() ? std::nan("") : s / static_cast<double>(x.size());
}

// Sample standard deviation; a single value has spread 0.
double sample_std(const std::vector<double>& x) {
  if (x.size() < 2) return 0.0;
  const double m = mean_of(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(x.size() - 1));
}

json timings_json(const PhaseTimings& t) {
  const double total = t.total();
  return {{"rollout", t.rollout},
          {"advantage", t.advantage},
          {"aem", t.aem},
          {"update", t.update},
          {"total", total},
          {"aem_fraction", total > 0.0 ? t.aem / total : 0.0}};
}

json kv_json(const TrainConfig& cfg) {
  json j = json::object();
  for (const auto& [k, v] : train_config_to_key_values(cfg)) j[k] = v;
  return j;
}

// ---------------------------------------------------------------- train

int cmd_train(const ConfigArgs& cargs, const std::string& out_dir, std::ostream& out) {
  const TrainConfig cfg = cargs.load();
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  save_train_config(cfg, (dir / "config.txt").string());
  TrainResult result = train(cfg, out_dir);

  json outputs = json::array();
  std::vector<std::string> files{"config.txt"};
  files.insert(files.end(), result.written_files.begin(), result.written_files.end());
  for (const auto& f : files) {
    if (!fs::exists(dir / f)) throw ProtocolError("declared output missing: " + f);
    outputs.push_back({{"path", f}, {"bytes", fs::file_size(dir / f)}});
  }
  const json manifest = {{"format", "aemlab-manifest"},
                         {"version", version_tag()},
                         {"command", "train"},
                         {"seed", cfg.seed},
                         {"config", kv_json(cfg)},
                         {"outputs", outputs},
                         {"timings", timings_json(result.timings)}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");

  const RunSummary s = summarize_run(result.metrics);
  out << "train: steps=" << s.steps << " final_success_rate=" << num(s.final_success_rate)
      << " final_mean_reward=" << num(s.final_mean_reward)
      << " aem_time_fraction=" << num(timings_json(result.timings)["aem_fraction"].get<double>())
      << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- verify

struct VerifyArgs {
  std::string kind = "all";
  int trials = -1;
  double fd_step = 1e-6;
  double rel_tol = 1e-4;
  double abs_tol = 1e-8;
  double near_vertex = 0.0;
  std::uint64_t seed = 0;
  bool corrupt = false;
  std::string out_dir;
};

int default_trials(const std::string& kind) {
  if (kind == "resp") return 1000;
  if (kind == "regularized") return 500;
  if (kind == "parametrized") return 200;
  return 50;  // nesting: H_resp against the expected token-entropy sum
}

int cmd_verify(const VerifyArgs& a, std::ostream& out) {
  std::vector<std::string> kinds;
  if (a.kind == "all")
    kinds = {"resp", "regularized", "parametrized", "nesting"};
  else if (a.kind == "nesting")
    kinds = {"nesting"};
  else
    kinds = {to_string(drift_kind_from_string(a.kind))};

  VerifyOptions options;
  options.fd_step = a.fd_step;
  options.rel_tol = a.rel_tol;
  options.abs_tol = a.abs_tol;
  options.near_vertex_fraction = a.near_vertex;
  options.corrupt = a.corrupt;

  std::ofstream reports_out;
  if (!a.out_dir.empty()) {
    fs::create_directories(a.out_dir);
    reports_out.open(fs::path(a.out_dir) / "drift_reports.jsonl");
  }
  json summary_json = json::array();
  bool ok = true;
  for (const auto& kind : kinds) {
    const int trials = a.trials >= 0 ? a.trials : default_trials(kind);
    Rng rng(derive_seed(a.seed, std::hash<std::string>{}(kind) & 0xffff));
    if (kind == "nesting") {
      auto gaps = entropy_nesting_gaps(trials, rng);
      if (a.corrupt)
        for (double& g : gaps) g += 1e-6;
      double worst = 0.0;
      int failures = 0;
      for (double g : gaps) {
        worst = std::max(worst, g);
        failures += !(g < 1e-10);
      }
      out << "verify nesting: trials=" << trials << " max_abs_diff=" << num(worst)
          << " failures=" << failures << (failures ? " FAIL" : " PASS") << "\n";
      summary_json.push_back({{"kind", kind}, {"trials", trials}, {"max_abs_error", worst},
                              {"failures", failures}});
      ok = ok && failures == 0;
      continue;
    }
    const auto reports = verify_drift_fd(drift_kind_from_string(kind), trials, options, rng);
    const DriftSummary s = summarize(reports);
    if (reports_out.is_open())
      for (const auto& r : reports)
        reports_out << json{{"kind", kind},         {"trial", r.trial},
                            {"responses", r.responses}, {"analytic", r.analytic},
                            {"finite_difference", r.finite_difference},
                            {"abs_error", r.abs_error}, {"rel_error", r.rel_error},
                            {"fd_step", r.fd_step},  {"conditioned", r.conditioned},
                            {"side_condition", r.side_condition}, {"pass", r.pass}}
                           .dump()
                    << "\n";
    out << "verify " << kind << ": trials=" << s.trials << " asserted=" << s.asserted
        << " failures=" << s.failures << " max_rel=" << num(s.max_rel_error)
        << " mean_rel=" << num(s.mean_rel_error) << (s.failures ? " FAIL" : " PASS") << "\n";
    if (s.failures) {
      out << "  worst trials:";
      for (int t : s.worst) {
        const auto& r = reports[t];
        out << " #" << t << "(analytic=" << num(r.analytic)
            << ", fd=" << num(r.finite_difference) << ")";
      }
      out << "\n";
    }
    summary_json.push_back({{"kind", kind},
                            {"trials", s.trials},
                            {"asserted", s.asserted},
                            {"failures", s.failures},
                            {"max_rel_error", s.max_rel_error},
                            {"mean_rel_error", s.mean_rel_error},
                            {"max_abs_error", s.max_abs_error}});
    ok = ok && s.failures == 0;
  }
  if (!a.out_dir.empty())
    write_text(fs::path(a.out_dir) / "verify_summary.json", summary_json.dump(2) + "\n");
  return ok ? kExitOk : kExitCheckFailed;
}

// ---------------------------------------------------------------- probes

PolicyTable load_checked_policy(const std::string& path, const Environment& env) {
  PolicyTable policy = load_policy(path);
  if (policy.vocab().size != env.vocab().size || policy.max_len() != env.max_response_len())
    throw ConfigError("checkpoint " + path + " does not match the configured environment");
  return policy;
}

struct ConsistencyArgs {
  ConfigArgs config;
  std::string checkpoint;
  int states = 64;
  int k = 64;
  std::uint64_t seed = 0;
  std::string out_dir;
  bool require_positive = false;
};

int cmd_probe_consistency(const ConsistencyArgs& a, std::ostream& out) {
  const TrainConfig cfg = a.config.load();
  const auto env = make_environment(cfg.env);
  const PolicyTable policy = load_checked_policy(a.checkpoint, *env);
  const auto states = reachable_states(*env, static_cast<std::size_t>(a.states));
  if (static_cast<int>(states.size()) < a.states)
    out << "probe-consistency: only " << states.size() << " distinct states reachable\n";
  Rng rng(a.seed);
  const auto r = consistency_probe(policy, states, a.k, rng, cfg.aem);
  out << "probe-consistency: states=" << r.n_states << " K=" << r.k_samples
      << " pearson_r=" << num(r.pearson_r) << " ci95=[" << num(r.ci_low) << ", "
      << num(r.ci_high) << "] sign_agreement=" << num(r.sign_agreement)
      << " nonzero_pairs=" << r.nonzero_pairs << "\n";
  if (!a.out_dir.empty()) {
    const fs::path dir(a.out_dir);
    write_text(dir / "consistency.json",
               json{{"pearson_r", num(r.pearson_r)},
                    {"ci_low", num(r.ci_low)},
                    {"ci_high", num(r.ci_high)},
                    {"sign_agreement", num(r.sign_agreement)},
                    {"nonzero_pairs", r.nonzero_pairs},
                    {"n_states", r.n_states},
                    {"k_samples", r.k_samples},
                    {"checkpoint", a.checkpoint},
                    {"seed", a.seed}}
                       .dump(2) +
                   "\n");
    std::string csv = "alpha_minus_1,delta_s_mc\n";
    for (const auto& p : r.pairs) csv += num(p.alpha_minus_1) + "," + num(p.delta_s_mc) + "\n";
    write_text(dir / "scatter.csv", csv);
  }
  if (a.require_positive && !(r.ci_low > 0.0)) return kExitCheckFailed;
  return kExitOk;
}

struct DoobArgs {
  ConfigArgs config;
  std::string checkpoint;
  int state = 0;
  int samples = 100000;
  std::uint64_t seed = 0;
  std::string out_dir;
};

int cmd_probe_doob(const DoobArgs& a, std::ostream& out) {
  const TrainConfig cfg = a.config.load();
  const auto env = make_environment(cfg.env);
  const PolicyTable policy =
      a.checkpoint.empty() ? env->make_policy() : load_checked_policy(a.checkpoint, *env);
  const auto states = reachable_states(*env, static_cast<std::size_t>(a.state) + 1);
  if (a.state < 0 || a.state >= static_cast<int>(states.size()))
    throw ConfigError("--state index out of range");
  const StateId state = states[a.state];
  Rng rng(a.seed);
  const DoobReport r = doob_probe(policy, state, a.samples, rng);
  double exact = std::nan("");
  try {
    exact = exact_prefix_residual(policy, state);
  } catch (const BudgetError&) {
  }
  out << "probe-doob: samples=" << r.n_samples << " mean=" << num(r.residual_mean)
      << " stderr=" << num(r.residual_stderr) << " exact_prefix_residual=" << num(exact)
      << (r.pass ? " PASS" : " FAIL") << "\n";
  if (!a.out_dir.empty()) {
    json lengths = json::array();
    for (const auto& l : r.per_length)
      lengths.push_back({{"length", l.length}, {"count", l.count}, {"mean", l.mean},
                         {"stderr", l.stderr_}});
    json prefixes = json::array();
    for (const auto& p : r.per_prefix)
      prefixes.push_back({{"prefix", p.prefix}, {"count", p.count}, {"mean", p.mean}});
    write_text(fs::path(a.out_dir) / "doob.json",
               json{{"residual_mean", r.residual_mean},
                    {"residual_stderr", r.residual_stderr},
                    {"n_samples", r.n_samples},
                    {"exact_prefix_residual", num(exact)},
                    {"pass", r.pass},
                    {"per_length", lengths},
                    {"per_prefix", prefixes}}
                       .dump(2) +
                   "\n");
  }
  return r.pass ? kExitOk : kExitCheckFailed;
}

std::vector<StepMetrics> metrics_of(const std::string& dir) {
  const fs::path p = fs::path(dir) / "metrics.jsonl";
  if (!fs::exists(p)) throw ConfigError("missing metrics log " + p.string());
  return read_metrics_log(p.string());
}

int cmd_probe_transition(const std::string& base, const std::string& aem,
                         const std::string& out_path, std::ostream& out) {
  const auto t = transition_tracker(metrics_of(base), metrics_of(aem));
  auto side = [](const RunQuartiles& q) {
    return json{{"entropy_first_quartile", q.entropy_first},
                {"entropy_last_quartile", q.entropy_last},
                {"success_first", q.success_first},
                {"success_last", q.success_last},
                {"final_success", q.final_success},
                {"frac_positive_advantage", q.frac_positive}};
  };
  const json j = {{"baseline", side(t.baseline)},
                  {"aem", side(t.aem)},
                  {"early_entropy_gap", t.early_entropy_gap},
                  {"late_entropy_gap", t.late_entropy_gap},
                  {"final_success_gap", t.final_success_gap}};
  out << "probe-transition: early_entropy_gap=" << num(t.early_entropy_gap)
      << " late_entropy_gap=" << num(t.late_entropy_gap)
      << " final_success_gap=" << num(t.final_success_gap) << "\n";
  if (!out_path.empty()) write_text(out_path, j.dump(2) + "\n");
  return kExitOk;
}

// ---------------------------------------------------------------- ablate

struct AblateArgs {
  ConfigArgs config;
  std::vector<std::string> variants{"off", "aem", "reverse", "shuffle", "traj_norm",
                                    "batch_norm"};
  std::vector<std::uint64_t> seeds{0};
  std::string out_dir;
};

int cmd_ablate(const AblateArgs& a, std::ostream& out, std::ostream& err) {
  if (a.seeds.empty()) throw ConfigError("ablate needs at least one seed");
  TrainConfig base = a.config.load();
  std::vector<AemMode> modes;
  for (const auto& v : a.variants) modes.push_back(aem_mode_from_string(v));
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);

  std::string table = "variant,n_seeds,success_mean,success_std,reward_mean,reward_std\n";
  auto flush = [&] { write_text(dir / "table.csv", table); };
  for (AemMode mode : modes) {
    std::vector<double> success, reward;
    for (std::uint64_t seed : a.seeds) {
      TrainConfig cfg = base;
      cfg.aem_mode = mode;
      cfg.seed = seed;
      const fs::path run = dir / to_string(mode) / ("seed_" + std::to_string(seed));
      try {
        fs::create_directories(run);
        save_train_config(cfg, (run / "config.txt").string());
        const RunSummary s = summarize_run(train(cfg, run.string()).metrics);
        success.push_back(s.final_success_rate);
        reward.push_back(s.final_mean_reward);
      } catch (const Error& e) {
        flush();
        err << "ablate: run " << run.string() << " failed: " << e.what() << "\n";
        return kExitInvalid;
      }
    }
    table += to_string(mode) + "," + std::to_string(success.size()) + "," +
             num(mean_of(success)) + "," + num(sample_std(success)) + "," +
             num(mean_of(reward)) + "," + num(sample_std(reward)) + "\n";
  }
  flush();
  out << table;
  return kExitOk;
}

// ---------------------------------------------------------------- report

int cmd_report(const std::vector<std::string>& runs, const std::string& out_dir,
               std::ostream& out) {
  if (runs.empty()) return kExitOk;
  std::vector<std::string> names;
  std::vector<std::map<int, StepMetrics>> series;
  std::set<int> steps;
  std::map<std::string, int> name_count;
  for (const auto& r : runs) {
    std::string name = fs::path(r).lexically_normal().filename().string();
    if (name.empty()) name = fs::path(r).lexically_normal().parent_path().filename().string();
    if (name_count[name]++) name += "_" + std::to_string(name_count[name] - 1);
    names.push_back(name);
    std::map<int, StepMetrics> m;
    for (const auto& s : metrics_of(r)) {
      m[s.step] = s;
      steps.insert(s.step);
    }
    series.push_back(std::move(m));
  }
  const fs::path dir(out_dir);
  auto emit = [&](const std::string& file, auto field) {
    std::string csv = "step";
    for (const auto& n : names) csv += "," + n;
    csv += "\n";
    for (int step : steps) {
      csv += std::to_string(step);
      for (const auto& s : series) {
        const auto it = s.find(step);
        csv += "," + (it == s.end() ? std::string() : num(field(it->second)));
      }
      csv += "\n";
    }
    write_text(dir / file, csv);
  };
  emit("entropy.csv", [](const StepMetrics& m) { return m.policy_entropy_estimate; });
  emit("success.csv", [](const StepMetrics& m) { return m.success_rate; });
  emit("mean_alpha.csv", [](const StepMetrics& m) { return m.mean_alpha; });
  emit("frac_positive.csv", [](const StepMetrics& m) { return m.frac_positive_advantage; });

  std::string scatter = "run,alpha_minus_1,delta_s_mc\n";
  std::string drift = "run,kind,trials,failures,max_rel_error,mean_rel_error\n";
  bool any_scatter = false, any_drift = false;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const fs::path sc = fs::path(runs[i]) / "scatter.csv";
    if (fs::exists(sc)) {
      std::ifstream in(sc);
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line))
        if (!line.empty()) scatter += names[i] + "," + line + "\n";
      any_scatter = true;
    }
    const fs::path vs = fs::path(runs[i]) / "verify_summary.json";
    if (fs::exists(vs)) {
      std::ifstream in(vs);
      for (const auto& k : json::parse(in)) {
        drift += names[i] + "," + k.at("kind").get<std::string>() + "," +
                 std::to_string(k.at("trials").get<int>()) + "," +
                 std::to_string(k.at("failures").get<int>()) + "," +
                 num(k.value("max_rel_error", k.value("max_abs_error", 0.0))) + "," +
                 num(k.value("mean_rel_error", 0.0)) + "\n";
      }
      any_drift = true;
    }
  }
  if (any_scatter) write_text(dir / "alpha_scatter.csv", scatter);
  if (any_drift) write_text(dir / "drift_summary.csv", drift);
  out << "report: " << runs.size() << " runs, " << steps.size() << " steps -> "
      << dir.string() << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"aemlab: entropy-modulated group policy optimization laboratory"};
  app.set_version_flag("--version", version_tag());
  app.require_subcommand(1);

  ConfigArgs train_cfg;
  std::string train_out;
  auto* train_cmd = app.add_subcommand("train", "run one training job");
  train_cfg.attach(train_cmd);
  train_cmd->add_option("--out", train_out, "output directory")->required();

  VerifyArgs verify;
  auto* verify_cmd = app.add_subcommand("verify", "check drift identities numerically");
  verify_cmd->add_option("--kind", verify.kind)
      ->check(CLI::IsMember({"resp", "regularized", "parametrized", "nesting", "all"}));
  verify_cmd->add_option("--trials", verify.trials, "trials per kind (default per kind)");
  verify_cmd->add_option("--fd-step", verify.fd_step)->check(CLI::PositiveNumber);
  verify_cmd->add_option("--rel-tol", verify.rel_tol);
  verify_cmd->add_option("--abs-tol", verify.abs_tol);
  verify_cmd->add_option("--near-vertex", verify.near_vertex,
                         "fraction of trials placed near a vertex (reported, not asserted)");
  verify_cmd->add_option("--seed", verify.seed);
  verify_cmd->add_flag("--corrupt", verify.corrupt, "perturb the analytic values (self-test)");
  verify_cmd->add_option("--out", verify.out_dir, "directory for reports");

  ConsistencyArgs cons;
  auto* cons_cmd = app.add_subcommand("probe-consistency", "alpha-1 versus MC surprisal shift");
  cons.config.attach(cons_cmd);
  cons_cmd->add_option("--checkpoint", cons.checkpoint)->required();
  cons_cmd->add_option("--states", cons.states);
  cons_cmd->add_option("--k", cons.k);
  cons_cmd->add_option("--seed", cons.seed);
  cons_cmd->add_option("--out", cons.out_dir);
  cons_cmd->add_flag("--require-positive", cons.require_positive,
                     "exit 2 unless the 95% interval of r lies above 0");

  DoobArgs doob;
  auto* doob_cmd = app.add_subcommand("probe-doob", "martingale residual of surprisal");
  doob.config.attach(doob_cmd);
  doob_cmd->add_option("--checkpoint", doob.checkpoint);
  doob_cmd->add_option("--state", doob.state, "index into the reachable states");
  doob_cmd->add_option("--samples", doob.samples);
  doob_cmd->add_option("--seed", doob.seed);
  doob_cmd->add_option("--out", doob.out_dir);

  std::string trans_base, trans_aem, trans_out;
  auto* trans_cmd = app.add_subcommand("probe-transition", "early/late entropy of two runs");
  trans_cmd->add_option("--baseline", trans_base)->required();
  trans_cmd->add_option("--aem", trans_aem)->required();
  trans_cmd->add_option("--out", trans_out, "summary JSON path");

  AblateArgs ablate;
  auto* ablate_cmd = app.add_subcommand("ablate", "modulation variants over shared seeds");
  ablate.config.attach(ablate_cmd);
  ablate_cmd->add_option("--variants", ablate.variants)->delimiter(',');
  ablate_cmd->add_option("--seeds", ablate.seeds)->delimiter(',');
  ablate_cmd->add_option("--out", ablate.out_dir)->required();

  std::vector<std::string> report_runs;
  std::string report_out = "report";
  auto* report_cmd = app.add_subcommand("report", "CSV series from run directories");
  report_cmd->add_option("runs", report_runs, "run directories");
  report_cmd->add_option("--out", report_out);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  try {
    if (*train_cmd) return cmd_train(train_cfg, train_out, out);
    if (*verify_cmd) return cmd_verify(verify, out);
    if (*cons_cmd) return cmd_probe_consistency(cons, out);
    if (*doob_cmd) return cmd_probe_doob(doob, out);
    if (*trans_cmd) return cmd_probe_transition(trans_base, trans_aem, trans_out, out);
    if (*ablate_cmd) return cmd_ablate(ablate, out, err);
    if (*report_cmd) return cmd_report(report_runs, report_out, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const nlohmann::json::exception& e) {
    err << "error: malformed JSON: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  }
  return kExitInvalid;
}

}  // namespace aemlab
