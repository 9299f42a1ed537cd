#include "aemlab/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "aemlab/errors.hpp"

namespace aemlab {

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::grpo_clip: return "grpo_clip";
    case LossKind::dapo_token: return "dapo_token";
    case LossKind::gspo_seq: return "gspo_seq";
  }
  return "unknown";
}

LossKind loss_kind_from_string(const std::string& s) {
  for (LossKind k : {LossKind::grpo_clip, LossKind::dapo_token, LossKind::gspo_seq})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown loss '" + s + "'");
}

std::string to_string(MaskMode m) {
  switch (m) {
    case MaskMode::none: return "none";
    case MaskMode::mask_pos_quadrants: return "mask_pos_quadrants";
    case MaskMode::mask_neg_quadrants: return "mask_neg_quadrants";
    case MaskMode::both: return "both";
  }
  return "unknown";
}

MaskMode mask_mode_from_string(const std::string& s) {
  for (MaskMode m : {MaskMode::none, MaskMode::mask_pos_quadrants,
                     MaskMode::mask_neg_quadrants, MaskMode::both})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown mask mode '" + s + "'");
}

void TrainConfig::validate() const {
  env.validate();
  if (!(clip_low > 0.0 && clip_low < 1.0))
    throw ConfigError("train.clip_low must lie in (0, 1)");
  if (!(clip_high > 0.0 && clip_high < 1.0))
    throw ConfigError("train.clip_high must lie in (0, 1)");
  if (!(lr > 0.0)) throw ConfigError("train.lr must be > 0");
  if (kl_coef < 0.0) throw ConfigError("train.kl_coef must be >= 0");
  if (entropy_coef < 0.0) throw ConfigError("train.entropy_coef must be >= 0");
  if (group_size < 2) throw ConfigError("train.group_size must be >= 2");
  if (prompts_per_step < 1) throw ConfigError("train.prompts_per_step must be >= 1");
  if (steps < 0) throw ConfigError("train.steps must be >= 0");
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
  if (num_threads < 1) throw ConfigError("train.num_threads must be >= 1");
  if (!(aem.epsilon >= 0.0)) throw ConfigError("aem.epsilon must be >= 0");
  if (!(aem.degenerate_range >= 0.0))
    throw ConfigError("aem.degenerate_range must be >= 0");
}

nlohmann::json to_json(const StepMetrics& m) {
  nlohmann::json j = {{"step", m.step},
                      {"mean_reward", m.mean_reward},
                      {"success_rate", m.success_rate},
                      {"policy_entropy_estimate", m.policy_entropy_estimate},
                      {"mean_alpha", m.mean_alpha},
                      {"frac_positive_advantage", m.frac_positive_advantage},
                      {"loss_value", m.loss_value},
                      {"groups_used", m.groups_used},
                      {"masked_spans", m.masked_spans}};
  if (!std::isnan(m.exact_resp_entropy)) j["exact_resp_entropy"] = m.exact_resp_entropy;
  return j;
}

StepMetrics step_metrics_from_json(const nlohmann::json& j) {
  StepMetrics m;
  m.step = j.at("step").get<int>();
  m.mean_reward = j.at("mean_reward").get<double>();
  m.success_rate = j.at("success_rate").get<double>();
  m.policy_entropy_estimate = j.at("policy_entropy_estimate").get<double>();
  m.mean_alpha = j.at("mean_alpha").get<double>();
  m.frac_positive_advantage = j.at("frac_positive_advantage").get<double>();
  m.loss_value = j.at("loss_value").get<double>();
  m.groups_used = j.value("groups_used", 0);
  m.masked_spans = j.value("masked_spans", 0);
  if (j.contains("exact_resp_entropy"))
    m.exact_resp_entropy = j.at("exact_resp_entropy").get<double>();
  return m;
}

std::vector<StepMetrics> read_metrics_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read metrics log " + path);
  std::vector<StepMetrics> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(step_metrics_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

namespace {

// Post-order walk of the response tree of `state` evaluating a functional
// F(u) = sum_y p(y|u) (local(u, y) + F(u y)) and accumulating
// weight * dF(root)/dz_u = weight * P(u) * p (.) (f - F(u)) into `grad`.
// `kl` selects local = log p - log q (KL to reference); otherwise
// local = -log p (entropy).
class TreeFunctional {
 public:
  TreeFunctional(const PolicyTable& policy, const PolicyTable* reference,
                 std::size_t budget)
      : policy_(policy), reference_(reference), budget_(budget) {}

  double evaluate(StateId state, double weight, LogitMap* grad) {
    state_ = state;
    weight_ = weight;
    grad_ = grad;
    leaves_ = 0;
    prefix_.clear();
    return visit(1.0);
  }

 private:
  double visit(double path_prob) {
    const auto logp = token_log_distribution(policy_, state_, prefix_);
    const auto p = softmax(logp);
    std::vector<double> logq;
    if (reference_) logq = token_log_distribution(*reference_, state_, prefix_);
    const Token term = policy_.vocab().terminator;
    const int vsize = policy_.vocab().size;

    std::vector<double> f(vsize);
    double value = 0.0;
    for (Token y = 0; y < vsize; ++y) {
      f[y] = reference_ ? logp[y] - logq[y] : -logp[y];
      prefix_.push_back(y);
      if (y == term || static_cast<int>(prefix_.size()) == policy_.max_len()) {
        if (++leaves_ > budget_)
          throw BudgetError("regularizer enumeration exceeds budget");
      } else {
        f[y] += visit(path_prob * p[y]);
      }
      prefix_.pop_back();
      value += p[y] * f[y];
    }
    if (grad_) {
      auto& g = (*grad_)[PolicyKey{state_, prefix_}];
      if (g.empty()) g.assign(vsize, 0.0);
      const double scale = weight_ * path_prob;
      for (Token y = 0; y < vsize; ++y) g[y] += scale * p[y] * (f[y] - value);
    }
    return value;
  }

  const PolicyTable& policy_;
  const PolicyTable* reference_;
  std::size_t budget_;
  StateId state_ = 0;
  double weight_ = 0.0;
  LogitMap* grad_ = nullptr;
  std::size_t leaves_ = 0;
  std::vector<Token> prefix_;
};

void accumulate(LogitMap& into, const PolicyKey& key, std::span<const double> dir,
                double scale) {
  auto& g = into[key];
  if (g.empty()) g.assign(dir.size(), 0.0);
  for (std::size_t i = 0; i < dir.size(); ++i) g[i] += scale * dir[i];
}

void add_into(LogitMap& into, const LogitMap& from, double scale) {
  for (const auto& [key, values] : from) accumulate(into, key, values, scale);
}

// d log p(y | u) / d z_u = e_y - p.
std::vector<double> score(std::span<const double> p, Token y) {
  std::vector<double> g(p.begin(), p.end());
  for (double& v : g) v = -v;
  g[y] += 1.0;
  return g;
}

double clip(double r, double lo, double hi) { return std::min(std::max(r, lo), hi); }

}  // namespace

RegularizerTerms regularizer_terms(const PolicyTable& policy,
                                   const std::vector<Group>& batch,
                                   const TrainConfig& config,
                                   const PolicyTable& reference,
                                   std::size_t budget) {
  RegularizerTerms out;
  if (config.entropy_coef == 0.0 && config.kl_coef == 0.0) return out;

  std::map<StateId, int> visits;
  int total = 0;
  for (const auto& g : batch)
    for (const auto& t : g.trajectories)
      for (const auto& s : t.steps) {
        ++visits[s.state_id];
        ++total;
      }
  if (total == 0) return out;

  TreeFunctional entropy(policy, nullptr, budget);
  TreeFunctional kl(policy, &reference, budget);
  for (const auto& [state, count] : visits) {
    const double w = static_cast<double>(count) / total;
    if (config.entropy_coef != 0.0)
      out.mean_entropy += w * entropy.evaluate(state, config.entropy_coef * w, &out.gradient);
    if (config.kl_coef != 0.0) {
      LogitMap kl_grad;
      out.mean_kl += w * kl.evaluate(state, config.kl_coef * w, &kl_grad);
      add_into(out.gradient, kl_grad, -1.0);
    }
  }
  out.entropy_bonus = config.entropy_coef * out.mean_entropy;
  out.kl_penalty = config.kl_coef * out.mean_kl;
  return out;
}

LossResult surrogate_loss(const PolicyTable& policy,
                          const std::vector<Group>& batch,
                          const std::vector<AdvantageTable>& advantages,
                          const TrainConfig& config,
                          const PolicyTable& reference,
                          const SpanMasks* masked) {
  if (advantages.size() != batch.size())
    throw ProtocolError("advantage tables do not match the batch");
  if (masked && masked->size() != batch.size())
    throw ProtocolError("span masks do not match the batch");

  LossResult out;
  LogitMap& grad = out.gradient;
  const double lo = 1.0 - config.clip_low, hi = 1.0 + config.clip_high;

  std::size_t n_traj = 0;
  for (const auto& g : batch) n_traj += g.trajectories.size();

  for (std::size_t gi = 0; gi < batch.size(); ++gi) {
    const Group& group = batch[gi];
    std::size_t group_tokens = 0;
    for (const auto& t : group.trajectories) group_tokens += t.token_count();

    for (std::size_t i = 0; i < group.trajectories.size(); ++i) {
      const Trajectory& traj = group.trajectories[i];
      double weight = 0.0;
      switch (config.loss) {
        case LossKind::grpo_clip:
          weight = 1.0 / (static_cast<double>(n_traj) * traj.token_count());
          break;
        case LossKind::dapo_token:
          weight = 1.0 / (static_cast<double>(batch.size()) * group_tokens);
          break;
        case LossKind::gspo_seq:
          weight = 1.0 / (static_cast<double>(n_traj) * traj.steps.size());
          break;
      }

      for (std::size_t t = 0; t < traj.steps.size(); ++t) {
        const SpanKey key{static_cast<int>(i), static_cast<int>(t)};
        const double adv = advantages[gi].at(key);
        if (masked && (*masked)[gi].count(key)) continue;
        const Step& step = traj.steps[t];
        const auto& tokens = step.response.tokens;
        if (step.response.logprob.size() != tokens.size())
          throw ProtocolError("behavior log-probs do not cover the response");

        std::vector<std::vector<double>> probs(tokens.size());
        std::vector<double> log_ratio(tokens.size());
        for (std::size_t l = 0; l < tokens.size(); ++l) {
          const std::span<const Token> prefix(tokens.data(), l);
          const auto logp = token_log_distribution(policy, step.state_id, prefix);
          probs[l] = softmax(logp);
          log_ratio[l] = logp[tokens[l]] - step.response.logprob[l];
        }

        if (config.loss == LossKind::gspo_seq) {
          double mean_log_ratio = 0.0;
          for (double v : log_ratio) mean_log_ratio += v;
          mean_log_ratio /= static_cast<double>(tokens.size());
          const double s = std::exp(mean_log_ratio);
          const double unclipped = s * adv, clipped = clip(s, lo, hi) * adv;
          out.policy_objective += weight * std::min(unclipped, clipped);
          if (unclipped <= clipped) {
            const double scale = weight * adv * s / static_cast<double>(tokens.size());
            for (std::size_t l = 0; l < tokens.size(); ++l)
              accumulate(grad,
                         PolicyKey{step.state_id, {tokens.begin(), tokens.begin() + l}},
                         score(probs[l], tokens[l]), -scale);
          }
        } else {
          for (std::size_t l = 0; l < tokens.size(); ++l) {
            const double rho = std::exp(log_ratio[l]);
            const double unclipped = rho * adv, clipped = clip(rho, lo, hi) * adv;
            out.policy_objective += weight * std::min(unclipped, clipped);
            if (unclipped <= clipped)
              accumulate(grad,
                         PolicyKey{step.state_id, {tokens.begin(), tokens.begin() + l}},
                         score(probs[l], tokens[l]), -weight * adv * rho);
          }
        }
      }
    }
  }

  out.regularizers = regularizer_terms(policy, batch, config, reference);
  add_into(grad, out.regularizers.gradient, -1.0);
  out.loss = -(out.policy_objective + out.regularizers.entropy_bonus -
               out.regularizers.kl_penalty);
  return out;
}

SpanMasks quadrant_masks(const std::vector<Group>& batch,
                         const std::vector<AdvantageTable>& base,
                         const std::vector<ModulationSet>& modulation,
                         MaskMode mode) {
  SpanMasks masks(batch.size());
  if (mode == MaskMode::none) return masks;
  for (std::size_t g = 0; g < batch.size(); ++g) {
    for (const auto& span : batch[g].spans) {
      const double a = base[g].at(span.key());
      const double am1 = modulation[g].alpha.at(span.key()) - 1.0;
      const double sign = (a > 0 ? 1 : a < 0 ? -1 : 0) * (am1 > 0 ? 1 : am1 < 0 ? -1 : 0);
      const bool hit = (sign > 0 && (mode == MaskMode::mask_pos_quadrants ||
                                     mode == MaskMode::both)) ||
                       (sign < 0 && (mode == MaskMode::mask_neg_quadrants ||
                                     mode == MaskMode::both));
      if (hit) masks[g].insert(span.key());
    }
  }
  return masks;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string checkpoint_name(int step) {
  std::ostringstream os;
  os << "checkpoints/step_" << std::setw(6) << std::setfill('0') << step << ".json";
  return os.str();
}

}  // namespace

TrainResult train(const TrainConfig& config, const std::string& output_dir) {
  config.validate();
  const auto env = make_environment(config.env);
  TrainResult result;
  result.policy = env->make_policy();
  const PolicyTable reference = result.policy;

  namespace fs = std::filesystem;
  std::ofstream metrics_out, timings_out, traj_out;
  auto write_checkpoint = [&](int step) {
    if (output_dir.empty()) return;
    const std::string name = checkpoint_name(step);
    save_policy(result.policy, (fs::path(output_dir) / name).string());
    result.written_files.push_back(name);
  };
  if (!output_dir.empty()) {
    fs::create_directories(fs::path(output_dir) / "checkpoints");
    metrics_out.open(fs::path(output_dir) / "metrics.jsonl");
    timings_out.open(fs::path(output_dir) / "timings.jsonl");
    result.written_files.push_back("metrics.jsonl");
    result.written_files.push_back("timings.jsonl");
    if (config.log_trajectories) {
      traj_out.open(fs::path(output_dir) / "trajectories.jsonl");
      result.written_files.push_back("trajectories.jsonl");
    }
  }
  write_checkpoint(0);

  const bool need_alpha = config.aem_mode != AemMode::off || config.mask != MaskMode::none;
  for (int step = 1; step <= config.steps; ++step) {
    const std::uint64_t step_seed = derive_seed(config.seed, static_cast<std::uint64_t>(step));
    PhaseTimings timing;

    // Rollout.
    auto t0 = Clock::now();
    Rng prompt_rng(step_seed);
    std::vector<Group> collected;
    for (int g = 0; g < config.prompts_per_step; ++g) {
      const int task = static_cast<int>(prompt_rng() % static_cast<std::uint64_t>(env->task_count()));
      Rng group_rng(derive_seed(step_seed, 0x100 + g));
      collected.push_back(collect_group(result.policy, *env, task, config.group_size,
                                        group_rng, config.num_threads));
    }
    if (traj_out.is_open())
      for (const auto& g : collected)
        for (const auto& t : g.trajectories) traj_out << trajectory_to_json(t).dump() << "\n";
    std::vector<Group> batch = filter_degenerate_groups(collected, config.group_filter);
    timing.rollout = seconds_since(t0);

    // Exact H_resp under the behavior policy, averaged over visited states.
    double exact_entropy = std::numeric_limits<double>::quiet_NaN();
    if (config.log_exact_entropy) {
      std::map<StateId, double> cache;
      double sum = 0.0;
      int count = 0;
      try {
        for (const auto& g : collected)
          for (const auto& t : g.trajectories)
            for (const auto& s : t.steps) {
              auto it = cache.find(s.state_id);
              if (it == cache.end())
                it = cache.emplace(s.state_id,
                                   exact_response_entropy(result.policy, s.state_id))
                         .first;
              sum += it->second;
              ++count;
            }
        exact_entropy = sum / count;
      } catch (const BudgetError&) {
        exact_entropy = std::numeric_limits<double>::quiet_NaN();
      }
    }

    // Advantage.
    t0 = Clock::now();
    std::vector<AdvantageTable> base;
    for (const auto& g : batch)
      base.push_back(compute_advantage(config.estimator, g, result.policy, *env));
    timing.advantage = seconds_since(t0);

    // Modulation.
    t0 = Clock::now();
    std::vector<AdvantageTable> advantages;
    std::vector<ModulationSet> modulation;
    SpanMasks masks;
    if (need_alpha) {
      const AemMode mode = config.aem_mode == AemMode::off ? AemMode::aem : config.aem_mode;
      modulation = compute_modulation(batch, mode, config.aem, derive_seed(step_seed, 0x5348));
      if (config.force_unit_alpha)
        for (auto& set : modulation)
          for (auto& [key, a] : set.alpha) a = 1.0;
      if (config.aem_mode != AemMode::off)
        for (std::size_t g = 0; g < batch.size(); ++g)
          advantages.push_back(apply_modulation(base[g], modulation[g]));
      masks = quadrant_masks(batch, base, modulation, config.mask);
    }
    timing.aem = seconds_since(t0);
    if (advantages.empty()) advantages = std::move(base);

    // Update.
    t0 = Clock::now();
    StepMetrics m;
    m.step = step;
    for (int epoch = 0; epoch < config.epochs && !batch.empty(); ++epoch) {
      const LossResult loss = surrogate_loss(result.policy, batch, advantages, config,
                                             reference, masks.empty() ? nullptr : &masks);
      if (epoch == 0) m.loss_value = loss.loss;
      result.policy.add_scaled(loss.gradient, -config.lr);
    }
    timing.update = seconds_since(t0);

    // Metrics over everything collected this step.
    double reward = 0.0, success = 0.0, h_bar_sum = 0.0;
    int n_traj = 0, n_spans = 0;
    for (const auto& g : collected) {
      for (const auto& t : g.trajectories) {
        reward += t.reward;
        success += t.success ? 1.0 : 0.0;
        ++n_traj;
      }
      for (const auto& span : g.spans) {
        h_bar_sum += response_entropy_proxy(g.span_entropies(span));
        ++n_spans;
      }
    }
    m.mean_reward = reward / n_traj;
    m.success_rate = success / n_traj;
    m.policy_entropy_estimate = h_bar_sum / n_spans;
    m.groups_used = static_cast<int>(batch.size());
    double alpha_sum = 0.0, positive = 0.0;
    int used_spans = 0;
    for (std::size_t g = 0; g < batch.size(); ++g) {
      for (const auto& span : batch[g].spans) {
        alpha_sum += need_alpha && config.aem_mode != AemMode::off
                         ? modulation[g].alpha.at(span.key())
                         : 1.0;
        positive += advantages[g].at(span.key()) > 0.0 ? 1.0 : 0.0;
        ++used_spans;
      }
      if (!masks.empty()) m.masked_spans += static_cast<int>(masks[g].size());
    }
    if (used_spans > 0) {
      m.mean_alpha = alpha_sum / used_spans;
      m.frac_positive_advantage = positive / used_spans;
    }
    m.exact_resp_entropy = exact_entropy;
    result.metrics.push_back(m);
    result.step_timings.push_back(timing);
    result.timings.rollout += timing.rollout;
    result.timings.advantage += timing.advantage;
    result.timings.aem += timing.aem;
    result.timings.update += timing.update;

    if (metrics_out.is_open()) metrics_out << to_json(m).dump() << "\n";
    if (timings_out.is_open())
      timings_out << nlohmann::json{{"step", step},
                                    {"rollout", timing.rollout},
                                    {"advantage", timing.advantage},
                                    {"aem", timing.aem},
                                    {"update", timing.update}}
                         .dump()
                  << "\n";
    if (config.checkpoint_every > 0 && step % config.checkpoint_every == 0 &&
        step != config.steps)
      write_checkpoint(step);
  }
  if (config.steps > 0) write_checkpoint(config.steps);
  if (!output_dir.empty()) {
    save_policy(result.policy, (fs::path(output_dir) / "policy_final.json").string());
    result.written_files.push_back("policy_final.json");
  }
  return result;
}

TrainResult masked_train(TrainConfig config, MaskMode mask,
                         const std::string& output_dir) {
  config.mask = mask;
  return train(config, output_dir);
}

RunSummary summarize_run(const std::vector<StepMetrics>& metrics) {
  RunSummary s;
  s.steps = static_cast<int>(metrics.size());
  if (metrics.empty()) return s;
  const std::size_t q = std::max<std::size_t>(1, metrics.size() / 4);
  auto mean_of = [&](std::size_t begin, std::size_t end, auto field) {
    double sum = 0.0;
    for (std::size_t i = begin; i < end; ++i) sum += field(metrics[i]);
    return sum / static_cast<double>(end - begin);
  };
  const std::size_t n = metrics.size();
  s.final_success_rate = mean_of(n - q, n, [](const StepMetrics& m) { return m.success_rate; });
  s.final_mean_reward = mean_of(n - q, n, [](const StepMetrics& m) { return m.mean_reward; });
  s.entropy_first_quartile =
      mean_of(0, q, [](const StepMetrics& m) { return m.policy_entropy_estimate; });
  s.entropy_last_quartile =
      mean_of(n - q, n, [](const StepMetrics& m) { return m.policy_entropy_estimate; });
  return s;
}

}  // namespace aemlab
