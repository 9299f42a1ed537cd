#pragma once

// Base response-level advantage estimators. Outcome-level estimators compute
// one value per trajectory and broadcast it to every response span of that
// trajectory.

#include <string>

#include <boost/container/flat_map.hpp>

#include "aemlab/env.hpp"
#include "aemlab/policy.hpp"
#include "aemlab/rollout.hpp"

namespace aemlab {

enum class Estimator { grpo, rloo, oracle_value };
std::string to_string(Estimator e);
Estimator estimator_from_string(const std::string& s);

// Sorted by key; spans are produced in key order so appends stay cheap.
using SpanValues = boost::container::flat_map<SpanKey, double>;

struct AdvantageTable {
  Estimator estimator = Estimator::grpo;
  SpanValues values;

  double at(const SpanKey& key) const;  // throws ProtocolError when missing
  bool operator==(const AdvantageTable&) const = default;
};

inline constexpr double kGroupStdEpsilon = 1e-8;

// A_i = (R_i - mean R) / (std R + eps), population std; zero-variance groups
// yield exactly zero.
AdvantageTable grpo_advantage(const Group& group,
                              double epsilon = kGroupStdEpsilon);

// A_i = R_i - mean_{j != i} R_j.
AdvantageTable rloo_advantage(const Group& group);

// Expected remaining outcome contribution from `state` under `policy`:
// success/failure reward plus expected future invalid penalties. At a
// terminal state this is the realized outcome reward. Computed exactly by
// enumerating responses and memoizing on (features, step). Throws
// BudgetError when more than `budget` (state, response) pairs are expanded.
double state_value(const PolicyTable& policy, const Environment& env,
                   const EnvState& state,
                   std::size_t budget = kDefaultEnumerationBudget);

// A_{i,t} = R(tau_i) - (penalties before turn t + state_value(s_{i,t})).
AdvantageTable oracle_value_advantage(const Group& group,
                                      const PolicyTable& policy,
                                      const Environment& env,
                                      std::size_t budget = kDefaultEnumerationBudget);

AdvantageTable compute_advantage(Estimator estimator, const Group& group,
                                 const PolicyTable& policy,
                                 const Environment& env);

}  // namespace aemlab
