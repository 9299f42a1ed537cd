#include "aemlab/advantage.hpp"

#include <cmath>
#include <functional>
#include <map>

#include "aemlab/errors.hpp"

namespace aemlab {

std::string to_string(Estimator e) {
  switch (e) {
    case Estimator::grpo: return "grpo";
    case Estimator::rloo: return "rloo";
    case Estimator::oracle_value: return "oracle-value";
  }
  return "unknown";
}

Estimator estimator_from_string(const std::string& s) {
  if (s == "grpo") return Estimator::grpo;
  if (s == "rloo") return Estimator::rloo;
  if (s == "oracle-value") return Estimator::oracle_value;
  throw ConfigError("unknown estimator '" + s + "'");
}

double AdvantageTable::at(const SpanKey& key) const {
  auto it = values.find(key);
  if (it == values.end())
    throw ProtocolError("no advantage for span (" + std::to_string(key.rollout) +
                        ", " + std::to_string(key.turn) + ")");
  return it->second;
}

namespace {

AdvantageTable broadcast(const Group& group, Estimator tag,
                         const std::vector<double>& per_trajectory) {
  AdvantageTable table;
  table.estimator = tag;
  for (const auto& span : group.spans)
    table.values[span.key()] = per_trajectory.at(span.rollout_index);
  return table;
}

void require_group(const Group& group) {
  if (group.rewards.size() < 2)
    throw ConfigError("advantage estimation needs N >= 2 trajectories");
}

}  // namespace

AdvantageTable grpo_advantage(const Group& group, double epsilon) {
  require_group(group);
  const auto& r = group.rewards;
  const double n = static_cast<double>(r.size());
  double mean = 0.0;
  for (double v : r) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : r) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);

  std::vector<double> adv(r.size(), 0.0);
  bool all_equal = true;
  for (double v : r) all_equal = all_equal && v == r.front();
  if (!all_equal)
    for (std::size_t i = 0; i < r.size(); ++i) adv[i] = (r[i] - mean) / (sd + epsilon);
  return broadcast(group, Estimator::grpo, adv);
}

AdvantageTable rloo_advantage(const Group& group) {
  require_group(group);
  const auto& r = group.rewards;
  double total = 0.0;
  for (double v : r) total += v;
  const double others = static_cast<double>(r.size() - 1);
  std::vector<double> adv(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) adv[i] = r[i] - (total - r[i]) / others;
  return broadcast(group, Estimator::rloo, adv);
}

double state_value(const PolicyTable& policy, const Environment& env,
                   const EnvState& state, std::size_t budget) {
  const auto& scheme = env.config().reward;
  if (state.done)
    return state.success ? scheme.success_reward : scheme.failure_reward;

  std::map<std::pair<std::vector<int>, int>, double> memo;
  std::size_t expanded = 0;
  std::function<double(const EnvState&)> value = [&](const EnvState& s) -> double {
    if (s.done) return s.success ? scheme.success_reward : scheme.failure_reward;
    const auto key = std::make_pair(s.features, s.step_index);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    double v = 0.0;
    for_each_response(policy, env.state_id(s), [&](const EnumeratedResponse& r) {
      if (++expanded > budget)
        throw BudgetError("state value enumeration exceeds budget");
      const StepResult next = env.step(s, r.tokens);
      const double penalty = next.valid ? 0.0 : scheme.invalid_penalty;
      v += r.probability * (value(next.state) - penalty);
    });
    memo.emplace(key, v);
    return v;
  };
  return value(state);
}

AdvantageTable oracle_value_advantage(const Group& group,
                                      const PolicyTable& policy,
                                      const Environment& env,
                                      std::size_t budget) {
  require_group(group);
  const double penalty = env.config().reward.invalid_penalty;
  AdvantageTable table;
  table.estimator = Estimator::oracle_value;
  for (const auto& span : group.spans) {
    const auto& traj = group.trajectory_of(span);
    int invalid_before = 0;
    for (int t = 0; t < span.turn_index; ++t)
      if (!traj.steps[t].valid) ++invalid_before;
    const EnvState& s = traj.steps.at(span.turn_index).state;
    const double baseline =
        state_value(policy, env, s, budget) - penalty * invalid_before;
    table.values[span.key()] = traj.reward - baseline;
  }
  return table;
}

AdvantageTable compute_advantage(Estimator estimator, const Group& group,
                                 const PolicyTable& policy,
                                 const Environment& env) {
  switch (estimator) {
    case Estimator::grpo: return grpo_advantage(group);
    case Estimator::rloo: return rloo_advantage(group);
    case Estimator::oracle_value: return oracle_value_advantage(group, policy, env);
  }
  throw ConfigError("unknown estimator");
}

}  // namespace aemlab
