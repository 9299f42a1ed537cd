#include "aemlab/probes.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <set>

#include "aemlab/errors.hpp"

namespace aemlab {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

int sign_of(double x) { return (x > 0.0) - (x < 0.0); }

// Linear interpolation between order statistics.
double quantile(std::vector<double> sorted, double q) {
  if (sorted.empty()) return kNaN;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw StatisticsError("pearson: size mismatch");
  if (x.size() < 2) throw StatisticsError("pearson needs at least two pairs");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return kNaN;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

ConsistencyReport consistency_probe(const PolicyTable& policy,
                                    const std::vector<StateId>& states, int k,
                                    Rng& rng, const AemParams& params, int bootstrap) {
  if (k < 1) throw ConfigError("K must be >= 1");
  ConsistencyReport report;
  report.n_states = static_cast<int>(states.size());
  report.k_samples = k;

  for (StateId state : states) {
    std::vector<double> surprisal(k), h_bar(k);
    for (int j = 0; j < k; ++j) {
      const Response r = sample_response(policy, state, rng);
      double s = 0.0;
      for (double lp : r.logprob) s -= lp;
      surprisal[j] = s;
      h_bar[j] = response_entropy_proxy(r.entropy);
    }
    double h_mc = 0.0;
    for (double s : surprisal) h_mc += s;
    h_mc /= k;
    const auto pop = population_alpha(h_bar, params);
    for (int j = 0; j < k; ++j)
      report.pairs.push_back({pop.alpha[j] - 1.0, -(surprisal[j] - h_mc)});
  }
  if (report.pairs.size() < 2)
    throw StatisticsError("consistency probe needs at least two pairs");

  std::vector<double> x, y;
  int agree = 0;
  for (const auto& p : report.pairs) {
    x.push_back(p.alpha_minus_1);
    y.push_back(p.delta_s_mc);
    if (p.alpha_minus_1 != 0.0 && p.delta_s_mc != 0.0) {
      ++report.nonzero_pairs;
      agree += sign_of(p.alpha_minus_1) == sign_of(p.delta_s_mc);
    }
  }
  report.sign_agreement =
      report.nonzero_pairs > 0 ? static_cast<double>(agree) / report.nonzero_pairs : kNaN;
  report.pearson_r = pearson(x, y);

  Rng boot(derive_seed(rng(), 0xb007));
  std::vector<double> rs;
  std::vector<double> bx(x.size()), by(y.size());
  for (int b = 0; b < bootstrap; ++b) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      const auto idx = std::min(x.size() - 1,
                                static_cast<std::size_t>(uniform01(boot) * x.size()));
      bx[i] = x[idx];
      by[i] = y[idx];
    }
    const double r = pearson(bx, by);
    if (!std::isnan(r)) rs.push_back(r);
  }
  std::sort(rs.begin(), rs.end());
  report.ci_low = quantile(rs, 0.025);
  report.ci_high = quantile(rs, 0.975);
  return report;
}

std::vector<StateId> reachable_states(const Environment& env, std::size_t limit) {
  const auto responses = all_responses(env);
  std::vector<std::vector<StateId>> per_task(env.task_count());
  for (int task = 0; task < env.task_count(); ++task) {
    std::deque<EnvState> frontier{env.reset(task)};
    std::set<std::vector<int>> seen{frontier.front().features};
    while (!frontier.empty()) {
      const EnvState s = frontier.front();
      frontier.pop_front();
      per_task[task].push_back(env.state_id(s));
      for (const auto& r : responses) {
        const StepResult next = env.step(s, r);
        if (next.state.done || !seen.insert(next.state.features).second) continue;
        frontier.push_back(next.state);
      }
    }
  }
  std::vector<StateId> out;
  std::set<StateId> taken;
  for (std::size_t depth = 0; out.size() < limit; ++depth) {
    bool any = false;
    for (const auto& ids : per_task) {
      if (depth >= ids.size()) continue;
      any = true;
      if (out.size() < limit && taken.insert(ids[depth]).second) out.push_back(ids[depth]);
    }
    if (!any) break;
  }
  return out;
}

DoobReport doob_probe(const PolicyTable& policy, StateId state, int n_samples, Rng& rng) {
  if (n_samples < 1) throw ConfigError("n_samples must be >= 1");
  DoobReport report;
  report.n_samples = n_samples;

  struct Acc {
    int count = 0;
    double sum = 0.0, sum_sq = 0.0;
  };
  std::map<int, Acc> by_length;
  std::map<std::vector<Token>, Acc> by_prefix;
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < n_samples; ++i) {
    const Response r = sample_response(policy, state, rng);
    double m = 0.0;
    for (std::size_t l = 0; l < r.size(); ++l) {
      const double residual = -r.logprob[l] - r.entropy[l];
      m += residual;
      auto& p = by_prefix[std::vector<Token>(r.tokens.begin(), r.tokens.begin() + l)];
      ++p.count;
      p.sum += residual;
    }
    sum += m;
    sum_sq += m * m;
    auto& a = by_length[static_cast<int>(r.size())];
    ++a.count;
    a.sum += m;
    a.sum_sq += m * m;
  }
  auto stderr_of = [](const Acc& a) {
    if (a.count < 2) return 0.0;
    const double mean = a.sum / a.count;
    const double var = std::max(0.0, (a.sum_sq - a.count * mean * mean) / (a.count - 1));
    return std::sqrt(var / a.count);
  };
  const Acc total{n_samples, sum, sum_sq};
  report.residual_mean = sum / n_samples;
  report.residual_stderr = stderr_of(total);
  for (const auto& [len, a] : by_length)
    report.per_length.push_back({len, a.count, a.sum / a.count, stderr_of(a)});
  for (const auto& [prefix, a] : by_prefix)
    report.per_prefix.push_back({prefix, a.count, a.sum / a.count});
  report.pass = std::abs(report.residual_mean) <= 4.0 * report.residual_stderr ||
                std::abs(report.residual_mean) < 1e-12;
  return report;
}

double exact_prefix_residual(const PolicyTable& policy, StateId state, std::size_t budget) {
  const Token term = policy.vocab().terminator;
  std::vector<Token> prefix;
  std::size_t visited = 0;
  double worst = 0.0;
  auto rec = [&](auto&& self) -> void {
    if (++visited > budget) throw BudgetError("prefix enumeration exceeds budget");
    const auto logp = token_log_distribution(policy, state, prefix);
    const auto p = softmax(logp);
    double expected_x = 0.0;
    for (std::size_t y = 0; y < p.size(); ++y) expected_x -= p[y] * logp[y];
    worst = std::max(worst, std::abs(expected_x - shannon_entropy(p)));
    for (Token y = 0; y < static_cast<Token>(p.size()); ++y) {
      if (y == term || static_cast<int>(prefix.size()) + 1 == policy.max_len()) continue;
      prefix.push_back(y);
      self(self);
      prefix.pop_back();
    }
  };
  rec(rec);
  return worst;
}

PolicyTable random_policy(int vocab_size, int max_len, StateId state, Rng& rng,
                          double scale) {
  PolicyTable policy(Vocabulary(vocab_size, vocab_size - 1), max_len);
  std::vector<Token> prefix;
  auto rec = [&](auto&& self) -> void {
    auto& z = policy.logits(state, prefix);
    for (double& v : z) v = scale * (2.0 * uniform01(rng) - 1.0);
    if (static_cast<int>(prefix.size()) + 1 == max_len) return;
    for (Token y = 0; y + 1 < vocab_size; ++y) {
      prefix.push_back(y);
      self(self);
      prefix.pop_back();
    }
  };
  rec(rec);
  return policy;
}

std::vector<double> entropy_nesting_gaps(int trials, Rng& rng, int max_vocab,
                                         int max_len) {
  std::vector<double> gaps;
  for (int t = 0; t < trials; ++t) {
    const int v = 2 + static_cast<int>(uniform01(rng) * (max_vocab - 1));
    const int n = 1 + static_cast<int>(uniform01(rng) * max_len);
    const PolicyTable policy = random_policy(v, n, 0, rng);
    double token_sum = 0.0;
    for_each_response(policy, 0, [&](const EnumeratedResponse& r) {
      double h = 0.0;
      for (double e : r.token_entropies) h += e;
      token_sum += r.probability * h;
    });
    gaps.push_back(std::abs(exact_response_entropy(policy, 0) - token_sum));
  }
  return gaps;
}

namespace {

RunQuartiles quartiles_of(const std::vector<StepMetrics>& m) {
  RunQuartiles q;
  const std::size_t n = m.size();
  const std::size_t len = std::max<std::size_t>(1, n / 4);
  for (std::size_t i = 0; i < len; ++i) {
    q.entropy_first += m[i].policy_entropy_estimate;
    q.entropy_last += m[n - len + i].policy_entropy_estimate;
    q.final_success += m[n - len + i].success_rate;
  }
  q.entropy_first /= static_cast<double>(len);
  q.entropy_last /= static_cast<double>(len);
  q.final_success /= static_cast<double>(len);
  q.success_first = m.front().success_rate;
  q.success_last = m.back().success_rate;
  for (const auto& s : m) q.frac_positive.push_back(s.frac_positive_advantage);
  return q;
}

}  // namespace

TransitionSummary transition_tracker(const std::vector<StepMetrics>& baseline,
                                     const std::vector<StepMetrics>& aem) {
  if (baseline.empty() || aem.empty()) throw ProtocolError("transition tracker needs non-empty logs");
  if (baseline.size() != aem.size())
    throw ProtocolError("logs cover different step ranges");
  for (std::size_t i = 0; i < baseline.size(); ++i)
    if (baseline[i].step != aem[i].step) throw ProtocolError("logs cover different step ranges");
  TransitionSummary t;
  t.baseline = quartiles_of(baseline);
  t.aem = quartiles_of(aem);
  t.early_entropy_gap = t.aem.entropy_first - t.baseline.entropy_first;
  t.late_entropy_gap = t.aem.entropy_last - t.baseline.entropy_last;
  t.final_success_gap = t.aem.final_success - t.baseline.final_success;
  return t;
}

}  // namespace aemlab
