#pragma once

// Probes over policy snapshots and training logs.
//
//   consistency_probe  does the entropy-proxy coefficient alpha track the
//                      Monte-Carlo surprisal shift of sampled responses?
//   doob_probe         is the surprisal minus its token-entropy sum a
//                      zero-mean martingale?
//   transition_tracker early/late entropy and success of a baseline run
//                      against an AEM run.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "aemlab/aem.hpp"
#include "aemlab/env.hpp"
#include "aemlab/policy.hpp"
#include "aemlab/rng.hpp"
#include "aemlab/trainer.hpp"

namespace aemlab {

// Pearson correlation of raw pairs. NaN when either side has zero variance;
// throws StatisticsError with fewer than two pairs.
double pearson(std::span<const double> x, std::span<const double> y);

struct ConsistencyPair {
  double alpha_minus_1 = 0.0;
  double delta_s_mc = 0.0;  // -(S(a|s) - mean_j S(a_j|s))
};

struct ConsistencyReport {
  double pearson_r = 0.0;
  double ci_low = 0.0;   // 95% percentile bootstrap interval of r
  double ci_high = 0.0;
  double sign_agreement = 0.0;  // over pairs with both entries nonzero
  int nonzero_pairs = 0;
  int n_states = 0;
  int k_samples = 0;
  std::vector<ConsistencyPair> pairs;
};

inline constexpr int kBootstrapResamples = 1000;

// For each state, K responses form a synthetic group: alpha comes from their
// mean-token-entropy proxies, the MC surprisal baseline from their mean S.
ConsistencyReport consistency_probe(const PolicyTable& policy,
                                    const std::vector<StateId>& states, int k,
                                    Rng& rng, const AemParams& params = {},
                                    int bootstrap = kBootstrapResamples);

// Up to `limit` non-terminal states of `env` reachable from the task
// starts, breadth-first over tasks, deduplicated by state id.
std::vector<StateId> reachable_states(const Environment& env, std::size_t limit);

struct LengthStats {
  int length = 0;
  int count = 0;
  double mean = 0.0;
  double stderr_ = 0.0;
};

struct PrefixResidual {
  std::vector<Token> prefix;
  int count = 0;
  double mean = 0.0;  // of X_l - H_l at the position after `prefix`
};

struct DoobReport {
  double residual_mean = 0.0;  // mean of M_L
  double residual_stderr = 0.0;
  int n_samples = 0;
  std::vector<LengthStats> per_length;
  std::vector<PrefixResidual> per_prefix;
  bool pass = false;  // |mean| <= 4 stderr (or exactly 0)
};

// M_L = sum_l (X_l - H_l), X_l = -log p(y_l | prefix), from sampled
// responses. Throws ConfigError when n_samples < 1.
DoobReport doob_probe(const PolicyTable& policy, StateId state, int n_samples,
                      Rng& rng);

// Largest |E[X_l - H_l | prefix]| over every prefix of the response tree,
// by exact enumeration (the conditional mean is sum_y p_y (-log p_y) - H).
double exact_prefix_residual(const PolicyTable& policy, StateId state,
                             std::size_t budget = kDefaultEnumerationBudget);

// Policy over vocabulary `vocab_size` (terminator = last token) with
// uniform(-scale, scale) logits at every prefix of `state`.
PolicyTable random_policy(int vocab_size, int max_len, StateId state, Rng& rng,
                          double scale = 2.0);

// |H_resp - E[sum_l H_l]| for `trials` random enumerable policies with
// |V| in [2, max_vocab] and max_len in [1, max_len].
std::vector<double> entropy_nesting_gaps(int trials, Rng& rng, int max_vocab = 4,
                                         int max_len = 4);

struct RunQuartiles {
  double entropy_first = 0.0;
  double entropy_last = 0.0;
  double success_first = 0.0;  // first-step and final-step success rates
  double success_last = 0.0;
  double final_success = 0.0;  // mean over the last quartile
  std::vector<double> frac_positive;  // per step
};

struct TransitionSummary {
  RunQuartiles baseline;
  RunQuartiles aem;
  double early_entropy_gap = 0.0;  // aem - baseline, first quartile
  double late_entropy_gap = 0.0;   // aem - baseline, last quartile
  double final_success_gap = 0.0;
};

// Quartile length is max(1, steps / 4). Throws ProtocolError when the two
// logs cover different step ranges or are empty.
TransitionSummary transition_tracker(const std::vector<StepMetrics>& baseline,
                                     const std::vector<StepMetrics>& aem);

}  // namespace aemlab
