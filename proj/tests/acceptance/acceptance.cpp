// Acceptance run: one PASS/FAIL line per criterion, exit 1 if any fails.
//
//   acceptance [--work-dir DIR] [--only N[,N...]]

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "aemlab/aem.hpp"
#include "aemlab/cli.hpp"
#include "aemlab/config.hpp"
#include "aemlab/geometry.hpp"
#include "aemlab/probes.hpp"
#include "aemlab/trainer.hpp"

using namespace aemlab;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double mean_of(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

double sample_std(const std::vector<double>& x) {
  if (x.size() < 2) return 0.0;
  const double m = mean_of(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(x.size() - 1));
}

// Key-chain setting shared by the training experiments.
TrainConfig keychain_config() {
  TrainConfig c;
  c.env.kind = EnvKind::key_chain;
  c.env.key_alphabet = 3;
  c.env.max_key_len = 2;
  c.env.keys_per_task = 2;
  c.lr = 10.0;
  c.log_exact_entropy = false;
  return c;
}

// ------------------------------------------------------------------ 1

// E[sum_l H_l] by direct recursion over token_distribution.
double pathwise_entropy_sum(const PolicyTable& policy, std::vector<Token>& prefix) {
  const auto p = token_distribution(policy, 0, prefix);
  double out = shannon_entropy(p);
  for (int y = 0; y < policy.vocab().size; ++y) {
    prefix.push_back(y);
    if (!is_complete_response(policy, prefix)) out += p[y] * pathwise_entropy_sum(policy, prefix);
    prefix.pop_back();
  }
  return out;
}

Outcome nesting_exactness() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int v = 2 + trial % 3;
    const int n = 1 + (trial / 3) % 4;
    const PolicyTable policy = random_policy(v, n, 0, rng);
    std::vector<Token> prefix;
    worst = std::max(worst, std::abs(exact_response_entropy(policy, 0) -
                                     pathwise_entropy_sum(policy, prefix)));
  }
  const double dt = seconds_since(t0);
  return {worst < 1e-10 && dt < 10.0,
          "policies=50 max|diff|=" + fmt("%.3g", worst) + " time=" + fmt("%.2fs", dt)};
}

// ------------------------------------------------------------------ 2-4

Outcome drift_fd(DriftKind kind, int trials, std::uint64_t seed, double time_limit) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(seed);
  const VerifyOptions options;  // fd step 1e-6
  const auto reports = verify_drift_fd(kind, trials, options, rng);
  const double dt = seconds_since(t0);
  int rel_fail = 0, side_fail = 0, unconditioned = 0;
  double worst = 0.0;
  for (const auto& r : reports) {
    unconditioned += !r.conditioned;
    rel_fail += !(r.rel_error < 1e-4);
    side_fail += !r.side_condition;
    worst = std::max(worst, r.rel_error);
  }
  const bool ok = static_cast<int>(reports.size()) == trials && rel_fail == 0 &&
                  side_fail == 0 && unconditioned == 0 && dt < time_limit;
  return {ok, "trials=" + std::to_string(reports.size()) + " rel>=1e-4: " +
                  std::to_string(rel_fail) + " side-condition failures: " +
                  std::to_string(side_fail) + " max_rel=" + fmt("%.3g", worst) +
                  " time=" + fmt("%.2fs", dt)};
}

// ------------------------------------------------------------------ 5

Group synthetic_group(const std::vector<std::vector<std::vector<double>>>& entropies,
                      const std::vector<double>& rewards) {
  Group g;
  for (std::size_t i = 0; i < entropies.size(); ++i) {
    Trajectory t;
    for (const auto& span : entropies[i]) {
      Step s;
      s.response.entropy = span;
      s.response.tokens.assign(span.size(), 0);
      s.response.logprob.assign(span.size(), -0.1);
      t.steps.push_back(s);
    }
    const auto spans = parse_spans(t, static_cast<int>(i));
    g.spans.insert(g.spans.end(), spans.begin(), spans.end());
    g.trajectories.push_back(t);
    g.rewards.push_back(rewards[i]);
  }
  return g;
}

Group random_group(Rng& rng, int n) {
  std::vector<std::vector<std::vector<double>>> e(n);
  std::vector<double> r(n);
  // Some groups get a narrow entropy band so the guard fires.
  const double width = uniform01(rng) < 0.2 ? 0.08 : 1.4;
  for (int i = 0; i < n; ++i) {
    const int turns = 1 + static_cast<int>(uniform01(rng) * 4);
    for (int t = 0; t < turns; ++t) {
      std::vector<double> span(1 + static_cast<int>(uniform01(rng) * 5));
      for (double& h : span) h = 0.3 + width * uniform01(rng);
      e[i].push_back(span);
    }
    r[i] = uniform01(rng) < 0.4 ? 10.0 : 0.0;
  }
  return synthetic_group(e, r);
}

Outcome pipeline_conformance() {
  Rng rng(55);
  int mismatches = 0, degenerate = 0, guard_fail = 0, calib_fail = 0, mono_fail = 0;
  double worst_calib = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Group g = random_group(rng, 2 + trial % 9);
    const AdvantageTable base = grpo_advantage(g);
    const auto set = compute_modulation({g}, AemMode::aem, AemParams{}).front();
    const AdvantageTable got = apply_modulation(base, set);

    std::vector<double> hbar;
    for (const auto& s : g.spans) {
      const auto& e = g.trajectories[s.rollout_index].steps[s.turn_index].response.entropy;
      double acc = 0.0;
      for (double h : e) acc += h;
      hbar.push_back(acc / static_cast<double>(e.size()));
    }
    const double lo = *std::min_element(hbar.begin(), hbar.end());
    const double hi = *std::max_element(hbar.begin(), hbar.end());
    std::vector<double> alpha(hbar.size(), 1.0), htilde(hbar.size(), 0.0);
    const bool guard = hi - lo < 0.1;
    if (!guard) {
      double total = 0.0;
      for (std::size_t k = 0; k < hbar.size(); ++k) {
        htilde[k] = (hbar[k] - lo) / (hi - lo + 1e-8);
        alpha[k] = std::exp(-1.0 * htilde[k]);
        total += alpha[k];
      }
      const double mean = total / static_cast<double>(alpha.size());
      for (double& a : alpha) a = a / (mean + 1e-8);
    }
    double sum = 0.0;
    for (std::size_t k = 0; k < g.spans.size(); ++k) {
      const SpanKey key = g.spans[k].key();
      mismatches += set.alpha.at(key) != alpha[k] || got.at(key) != alpha[k] * base.at(key);
      sum += set.alpha.at(key);
    }
    if (guard) {
      ++degenerate;
      for (const auto& [k, a] : set.alpha) guard_fail += a != 1.0;
      continue;
    }
    const double calib = std::abs(sum / static_cast<double>(g.spans.size()) - 1.0);
    worst_calib = std::max(worst_calib, calib);
    calib_fail += !(calib < 1e-6);
    for (std::size_t i = 0; i < hbar.size(); ++i)
      for (std::size_t j = 0; j < hbar.size(); ++j)
        if (htilde[i] < htilde[j]) mono_fail += !(alpha[i] > alpha[j]);
  }
  const bool ok = mismatches == 0 && guard_fail == 0 && calib_fail == 0 && mono_fail == 0 &&
                  degenerate > 0;
  return {ok, "groups=1000 mismatches=" + std::to_string(mismatches) +
                  " degenerate=" + std::to_string(degenerate) + " guard_fail=" +
                  std::to_string(guard_fail) + " max|mean-1|=" + fmt("%.3g", worst_calib) +
                  " monotonicity_fail=" + std::to_string(mono_fail)};
}

// ------------------------------------------------------------------ 6

Outcome worked_values() {
  const Group g = synthetic_group({{{0.2}}, {{0.5}}, {{0.8}}}, {10, 0, 0});
  const auto set = compute_modulation({g}, AemMode::aem, AemParams{}).front();
  const double want[3] = {1.5194, 0.9216, 0.5590};
  // direct evaluation of the formula
  const double h[3] = {0.0, 0.3 / (0.6 + 1e-8), 0.6 / (0.6 + 1e-8)};
  const double mean = (std::exp(-h[0]) + std::exp(-h[1]) + std::exp(-h[2])) / 3.0;
  bool ok = true;
  std::string detail = "alpha=";
  for (int i = 0; i < 3; ++i) {
    const double a = set.alpha.at({i, 0});
    const double direct = std::exp(-h[i]) / (mean + 1e-8);
    ok = ok && std::abs(a - want[i]) < 1e-3 && std::abs(a - direct) < 1e-12;
    detail += fmt(i ? ", %.4f" : "{%.4f", a);
  }
  return {ok, detail + "}"};
}

// ------------------------------------------------------------------ 7

Outcome doob() {
  Rng rng(77);
  double worst_exact = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const PolicyTable policy = random_policy(2 + trial % 3, 1 + trial % 4, 0, rng);
    worst_exact = std::max(worst_exact, exact_prefix_residual(policy, 0));
  }
  int empirical_fail = 0;
  double worst_z = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const PolicyTable policy = random_policy(2 + trial % 3, 2 + trial % 3, 0, rng);
    const DoobReport r = doob_probe(policy, 0, 100000, rng);
    const double z = std::abs(r.residual_mean) / r.residual_stderr;
    worst_z = std::max(worst_z, z);
    empirical_fail += !(std::abs(r.residual_mean) < 4.0 * r.residual_stderr);
  }
  return {worst_exact < 1e-12 && empirical_fail == 0,
          "exact max residual=" + fmt("%.3g", worst_exact) +
              " empirical failures=" + std::to_string(empirical_fail) +
              "/10 max|mean|/stderr=" + fmt("%.2f", worst_z)};
}

// ------------------------------------------------------------------ 8

Outcome sign_shift() {
  Rng rng(88);
  int ok = 0, total = 0;
  while (total < 1000) {
    const std::size_t m = 2 + static_cast<std::size_t>(uniform01(rng) * 9);
    const SimplexPoint pi = sample_interior_dirichlet(m, rng, 1e-3);
    const std::size_t a = static_cast<std::size_t>(uniform01(rng) * m) % m;
    const double gap = surprisals(pi)[a] - entropy(pi);
    if (gap == 0.0) continue;
    const double adv = (uniform01(rng) < 0.5 ? -1.0 : 1.0) * (0.05 + 2.0 * uniform01(rng));
    const double alpha = gap > 0 ? 0.05 + 0.9 * uniform01(rng) : 1.05 + 2.0 * uniform01(rng);
    const double diff = resp_entropy_drift(pi, a, alpha * adv) - resp_entropy_drift(pi, a, adv);
    ok += diff != 0.0 && (diff > 0) == (adv < 0);
    ++total;
  }
  return {ok == total, std::to_string(ok) + "/" + std::to_string(total) + " agree"};
}

// ------------------------------------------------------------------ 9

Outcome masking_direction() {
  const auto t0 = std::chrono::steady_clock::now();
  TrainConfig c = keychain_config();
  c.estimator = Estimator::grpo;
  c.steps = 50;
  int wins = 0;
  std::string per_seed;
  for (int s = 0; s < 10; ++s) {
    c.seed = static_cast<std::uint64_t>(s);
    c.env.seed = static_cast<std::uint64_t>(s);
    double mean_h[2];
    int i = 0;
    for (MaskMode m : {MaskMode::mask_pos_quadrants, MaskMode::mask_neg_quadrants}) {
      const auto r = masked_train(c, m);
      double sum = 0.0;
      int n = 0;
      for (const auto& x : r.metrics)
        if (x.step >= 10 && x.step <= 50) {
          sum += x.policy_entropy_estimate;
          ++n;
        }
      mean_h[i++] = sum / n;
    }
    wins += mean_h[0] < mean_h[1];
    per_seed += fmt(" %+.3f", mean_h[0] - mean_h[1]);
  }
  const double dt = seconds_since(t0);
  return {wins >= 8 && dt < 300.0,
          "mask(+1) lower in " + std::to_string(wins) + "/10 seeds; H(+1)-H(-1):" + per_seed +
              " time=" + fmt("%.1fs", dt)};
}

// ------------------------------------------------------------------ 10

Outcome consistency(const fs::path& work) {
  TrainConfig c = keychain_config();
  c.env.task_count = 32;
  c.steps = 200;
  c.checkpoint_every = 100;
  const fs::path run = work / "consistency_run";
  fs::remove_all(run);
  train(c, run.string());
  const PolicyTable mid = load_policy((run / "checkpoints" / "step_000100.json").string());
  const auto env = make_environment(c.env);
  const auto states = reachable_states(*env, 64);
  Rng rng(7);
  const auto r = consistency_probe(mid, states, 64, rng, c.aem);
  const bool ok = states.size() == 64 && r.pearson_r > 0.0 && r.ci_low > 0.0;
  return {ok, "states=" + std::to_string(states.size()) + " K=64 r=" + fmt("%.4f", r.pearson_r) +
                  " ci95=[" + fmt("%.4f", r.ci_low) + ", " + fmt("%.4f", r.ci_high) +
                  "] sign_agreement=" + fmt("%.3f", r.sign_agreement)};
}

// ------------------------------------------------------------------ 11

Outcome transition() {
  TrainConfig c = keychain_config();
  c.steps = 200;
  std::vector<double> first[2], last[2], success[2];
  for (int s = 0; s < 10; ++s) {
    c.seed = 1000 + static_cast<std::uint64_t>(s);
    c.env.seed = static_cast<std::uint64_t>(s);
    int i = 0;
    for (AemMode m : {AemMode::off, AemMode::aem}) {
      c.aem_mode = m;
      const RunSummary r = summarize_run(train(c).metrics);
      first[i].push_back(r.entropy_first_quartile);
      last[i].push_back(r.entropy_last_quartile);
      success[i].push_back(r.final_success_rate);
      ++i;
    }
  }
  const double early_gap = mean_of(first[1]) - mean_of(first[0]);
  const double late_gap = mean_of(last[1]) - mean_of(last[0]);
  const double floor = mean_of(success[0]) - sample_std(success[0]);
  const bool ok = early_gap > 0.0 && late_gap < 0.0 && mean_of(success[1]) >= floor;
  return {ok, "seeds=10 early(AEM-GRPO)=" + fmt("%+.4f", early_gap) +
                  " late(AEM-GRPO)=" + fmt("%+.4f", late_gap) + " success AEM=" +
                  fmt("%.3f", mean_of(success[1])) + " GRPO=" + fmt("%.3f", mean_of(success[0])) +
                  "+-" + fmt("%.3f", sample_std(success[0]))};
}

// ------------------------------------------------------------------ 12

struct GradientCase {
  TrainConfig config;
  std::unique_ptr<Environment> env;
  PolicyTable behavior;
  std::vector<Group> batch;
  std::vector<AdvantageTable> advantages;

  PolicyTable perturbed(Rng& rng, double scale) const {
    PolicyTable p = behavior;
    for (const auto& g : batch)
      for (const auto& t : g.trajectories)
        for (const auto& s : t.steps)
          for (std::size_t l = 0; l < s.response.size(); ++l) {
            auto& z = p.logits(s.state_id, std::span(s.response.tokens.data(), l));
            for (double& v : z) v += scale * (2.0 * uniform01(rng) - 1.0);
          }
    return p;
  }
  void collect(Rng& rng) {
    for (int p = 0; p < config.prompts_per_step; ++p)
      batch.push_back(collect_group(behavior, *env, p % config.env.task_count,
                                    config.group_size, rng));
  }
};

GradientCase random_case(Rng& rng, int index) {
  GradientCase gc;
  TrainConfig& c = gc.config;
  c.env.kind = index % 2 ? EnvKind::bandit_chain : EnvKind::key_chain;
  c.env.task_count = 2;
  c.env.horizon = 2 + index % 2;
  c.env.key_alphabet = 2;
  c.env.max_key_len = 1 + index % 2;
  c.env.keys_per_task = 2;
  c.env.arms = 2 + index % 2;
  c.env.depth = 2;
  c.group_size = 2 + static_cast<int>(uniform01(rng) * 3);
  c.prompts_per_step = 1 + static_cast<int>(uniform01(rng) * 2);
  c.loss = std::array{LossKind::grpo_clip, LossKind::dapo_token, LossKind::gspo_seq}[index % 3];
  c.entropy_coef = (index / 3) % 2 ? 0.5 * uniform01(rng) : 0.0;
  c.kl_coef = (index / 6) % 2 ? 0.1 * uniform01(rng) : 0.0;
  c.clip_low = 0.1 + 0.2 * uniform01(rng);
  c.clip_high = c.clip_low + 0.1 * uniform01(rng);
  gc.env = make_environment(c.env);
  gc.behavior = gc.env->make_policy();
  gc.collect(rng);
  gc.behavior = gc.perturbed(rng, 1.5);
  gc.batch.clear();
  gc.collect(rng);
  for (auto& g : gc.batch)
    for (auto& r : g.rewards) r = 10.0 * uniform01(rng) - 2.0;
  const auto mods = compute_modulation(gc.batch, AemMode::aem, AemParams{});
  for (std::size_t g = 0; g < gc.batch.size(); ++g)
    gc.advantages.push_back(apply_modulation(grpo_advantage(gc.batch[g]), mods[g]));
  return gc;
}

double norm_sq_of(const LogitMap& m) {
  double s = 0.0;
  for (const auto& [k, v] : m)
    for (double x : v) s += x * x;
  return s;
}

double gradient_error(const GradientCase& gc, const PolicyTable& policy,
                      const PolicyTable& reference) {
  auto loss = [&](const PolicyTable& p) {
    return surrogate_loss(p, gc.batch, gc.advantages, gc.config, reference).loss;
  };
  const LossResult base =
      surrogate_loss(policy, gc.batch, gc.advantages, gc.config, reference);
  std::set<PolicyKey> keys;
  for (const auto& [k, v] : base.gradient) keys.insert(k);
  for (const auto& [k, v] : policy.entries()) keys.insert(k);
  const double h = 1e-6;
  double diff_sq = 0.0, fd_sq = 0.0;
  for (const auto& key : keys)
    for (int i = 0; i < policy.vocab().size; ++i) {
      PolicyTable plus = policy, minus = policy;
      plus.logits(key.state, key.prefix)[i] += h;
      minus.logits(key.state, key.prefix)[i] -= h;
      const double fd = (loss(plus) - loss(minus)) / (2.0 * h);
      double analytic = 0.0;
      if (auto it = base.gradient.find(key); it != base.gradient.end()) analytic = it->second[i];
      diff_sq += (analytic - fd) * (analytic - fd);
      fd_sq += fd * fd;
    }
  return std::sqrt(diff_sq / std::max(fd_sq, 1e-300));
}

Outcome gradient_correctness() {
  Rng rng(1212);
  int fail = 0;
  double worst = 0.0;
  std::map<std::string, int> counts;
  int redrawn = 0;
  for (int index = 0; index < 100; ++index) {
    GradientCase gc = random_case(rng, index);
    PolicyTable policy = gc.perturbed(rng, 0.4);
    PolicyTable reference = gc.perturbed(rng, 0.2);
    // Identical responses within a group cancel exactly and leave a zero
    // gradient, where a relative error is undefined. Draw again.
    while (norm_sq_of(surrogate_loss(policy, gc.batch, gc.advantages, gc.config, reference)
                          .gradient) < 1e-16) {
      ++redrawn;
      gc = random_case(rng, index);
      policy = gc.perturbed(rng, 0.4);
      reference = gc.perturbed(rng, 0.2);
    }
    const double err = gradient_error(gc, policy, reference);
    worst = std::max(worst, err);
    fail += !(err < 1e-5);
    ++counts[to_string(gc.config.loss) + (gc.config.entropy_coef > 0 ? "+b" : "") +
             (gc.config.kl_coef > 0 ? "+g" : "")];
  }
  std::string mix;
  for (const auto& [k, n] : counts) mix += " " + k + ":" + std::to_string(n);
  return {fail == 0, "configs=100 failures=" + std::to_string(fail) +
                         " zero-gradient redraws=" + std::to_string(redrawn) +
                         " max_rel=" + fmt("%.3g", worst) + " mix:" + mix};
}

// ------------------------------------------------------------------ 13

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  if (!fs::exists(root)) return out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const std::string name = e.path().filename().string();
    // wall-clock measurements are not part of the deterministic output
    if (name == "timings.jsonl" || name == "manifest.json") continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    out[fs::relative(e.path(), root).string()] = ss.str();
  }
  return out;
}

Outcome determinism(const fs::path& work) {
  const std::vector<std::string> small{"--set", "env.task_count=4", "train.steps=4",
                                       "train.group_size=4", "train.prompts_per_step=2",
                                       "env.key_alphabet=3", "env.max_key_len=2",
                                       "train.aem_mode=aem", "train.num_threads=2"};
  auto with = [](std::vector<std::string> head, const std::vector<std::string>& tail) {
    head.insert(head.end(), tail.begin(), tail.end());
    return head;
  };
  std::vector<std::string> failed;
  int compared = 0;
  // Both repetitions use the same paths; outputs record their inputs.
  const fs::path d = work / "determinism";
  fs::remove_all(work / "determinism_0");
  fs::remove_all(work / "determinism_1");
  for (int rep = 0; rep < 2; ++rep) {
    fs::remove_all(d);
    std::ostringstream out, err;
    const std::string run = (d / "train").string();
    run_cli(with({"train", "--out", run}, small), out, err);
    run_cli({"verify", "--trials", "20", "--seed", "5", "--out", (d / "verify").string()}, out,
            err);
    const std::string ckpt = run + "/checkpoints/step_000004.json";
    run_cli(with({"probe-consistency", "--checkpoint", ckpt, "--states", "6", "--k", "16",
                  "--out", (d / "cons").string()},
                 small),
            out, err);
    run_cli(with({"probe-doob", "--checkpoint", ckpt, "--samples", "5000", "--out",
                  (d / "doob").string()},
                 small),
            out, err);
    run_cli({"probe-transition", "--baseline", run, "--aem", run, "--out",
             (d / "transition.json").string()},
            out, err);
    run_cli(with({"ablate", "--out", (d / "ablate").string(), "--variants", "off,aem,shuffle",
                  "--seeds", "1,2"},
                 small),
            out, err);
    run_cli({"report", run, (d / "verify").string(), (d / "cons").string(), "--out",
             (d / "report").string()},
            out, err);
    fs::rename(d, work / ("determinism_" + std::to_string(rep)));
  }
  const auto a = tree_bytes(work / "determinism_0");
  const auto b = tree_bytes(work / "determinism_1");
  for (const auto& [path, bytes] : a) {
    ++compared;
    const auto it = b.find(path);
    if (it == b.end() || it->second != bytes) failed.push_back(path);
  }
  if (a.size() != b.size()) failed.push_back("<file sets differ>");
  const bool has_metrics = a.count("train/metrics.jsonl") && !a.at("train/metrics.jsonl").empty();
  std::string detail = "files compared=" + std::to_string(compared) +
                       " differing=" + std::to_string(failed.size());
  for (const auto& f : failed) detail += " " + f;
  return {failed.empty() && has_metrics && compared > 10, detail};
}

// ------------------------------------------------------------------ 14

Outcome overhead() {
  TrainConfig c;  // default desk-scale configuration
  c.aem_mode = AemMode::aem;
  const TrainResult r = train(c);
  const double frac = r.timings.aem / r.timings.total();
  std::vector<double> per_step;
  for (const auto& t : r.step_timings) per_step.push_back(t.aem / t.total());
  std::sort(per_step.begin(), per_step.end());
  return {frac < 0.05, "aem fraction=" + fmt("%.4f", frac) + " per-step median=" +
                           fmt("%.4f", per_step[per_step.size() / 2]) + " steps=" +
                           std::to_string(per_step.size())};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "aemlab_acceptance";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--work-dir" && i + 1 < argc) {
      work = argv[++i];
    } else if (arg == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string n; std::getline(ss, n, ',');) only.insert(std::stoi(n));
    } else {
      std::cerr << "usage: acceptance [--work-dir DIR] [--only N[,N...]]\n";
      return 2;
    }
  }
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"response entropy equals expected token-entropy sum", nesting_exactness},
      {"response drift identity vs finite differences",
       [] { return drift_fd(DriftKind::resp, 1000, 2, 30.0); }},
      {"regularized drift decomposition",
       [] { return drift_fd(DriftKind::regularized, 500, 3, 1e9); }},
      {"parametrized drift decomposition",
       [] { return drift_fd(DriftKind::parametrized, 200, 4, 1e9); }},
      {"modulation pipeline conformance", pipeline_conformance},
      {"worked modulation values", worked_values},
      {"surprisal martingale residual", doob},
      {"sign-shift identity", sign_shift},
      {"quadrant masking direction", masking_direction},
      {"consistency probe", [&] { return consistency(work); }},
      {"exploration transition", transition},
      {"surrogate gradient correctness", gradient_correctness},
      {"byte-identical reruns", [&] { return determinism(work); }},
      {"modulation overhead", overhead},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(n)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("[%s] %2d %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", n,
                criteria[i].first.c_str(), o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d criteria failed\n", failures);
  return failures ? 1 : 0;
}
