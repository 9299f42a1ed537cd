#include "aemlab/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "aemlab/errors.hpp"

namespace aemlab {

namespace {

double sum_of(std::span<const double> x) {
  return std::accumulate(x.begin(), x.end(), 0.0);
}

void require_tangent(std::span<const double> u, const char* name) {
  if (std::abs(sum_of(u)) > kTangentTolerance)
    throw ProtocolError(std::string(name) + " is not a tangent vector");
}

void require_size(const SimplexPoint& pi, std::span<const double> x) {
  if (x.size() != pi.size()) throw ProtocolError("vector size does not match the simplex");
}

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

std::size_t uniform_index(Rng& rng, std::size_t lo, std::size_t hi) {
  const auto span = hi - lo + 1;
  return lo + std::min(span - 1, static_cast<std::size_t>(uniform01(rng) * span));
}

double entropy_of(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) h -= v * std::log(v);
  return h;
}

}  // namespace

SimplexPoint::SimplexPoint(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.empty()) throw ProtocolError("empty simplex point");
  for (double p : probs_)
    if (!(p > 0.0)) throw ProtocolError("simplex point is not strictly interior");
  if (std::abs(sum_of(probs_) - 1.0) > 1e-12)
    throw ProtocolError("simplex point does not sum to 1");
}

SimplexPoint SimplexPoint::normalized(std::vector<double> weights) {
  const double s = sum_of(weights);
  for (double& w : weights) w /= s;
  return SimplexPoint(std::move(weights));
}

double SimplexPoint::min_prob() const {
  return *std::min_element(probs_.begin(), probs_.end());
}

double fisher_rao_inner(const SimplexPoint& pi, std::span<const double> u,
                        std::span<const double> v) {
  require_size(pi, u);
  require_size(pi, v);
  require_tangent(u, "u");
  require_tangent(v, "v");
  double s = 0.0;
  for (std::size_t i = 0; i < pi.size(); ++i) s += u[i] * v[i] / pi[i];
  return s;
}

std::vector<double> natural_gradient(const SimplexPoint& pi,
                                     std::span<const double> euclidean_grad) {
  require_size(pi, euclidean_grad);
  const double mean = expectation(pi, euclidean_grad);
  std::vector<double> out(pi.size());
  for (std::size_t i = 0; i < pi.size(); ++i) out[i] = pi[i] * (euclidean_grad[i] - mean);
  // Remove the rounding residue so the result is tangent to working precision.
  const double residue = sum_of(out);
  std::size_t largest = 0;
  for (std::size_t i = 1; i < out.size(); ++i)
    if (std::abs(out[i]) > std::abs(out[largest])) largest = i;
  out[largest] -= residue;
  return out;
}

std::vector<double> surprisals(const SimplexPoint& pi) {
  std::vector<double> s(pi.size());
  for (std::size_t i = 0; i < pi.size(); ++i) s[i] = -std::log(pi[i]);
  return s;
}

double entropy(const SimplexPoint& pi) { return entropy_of(pi.probs()); }

double expectation(const SimplexPoint& pi, std::span<const double> x) {
  require_size(pi, x);
  double e = 0.0;
  for (std::size_t i = 0; i < pi.size(); ++i) e += pi[i] * x[i];
  return e;
}

double covariance(const SimplexPoint& pi, std::span<const double> x,
                  std::span<const double> y) {
  const double mx = expectation(pi, x), my = expectation(pi, y);
  double c = 0.0;
  for (std::size_t i = 0; i < pi.size(); ++i) c += pi[i] * (x[i] - mx) * (y[i] - my);
  return c;
}

double kl_divergence(const SimplexPoint& p, const SimplexPoint& q) {
  if (p.size() != q.size()) throw ProtocolError("KL between simplices of different size");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) kl += p[i] * (std::log(p[i]) - std::log(q[i]));
  return kl;
}

double resp_entropy_drift(const SimplexPoint& pi, std::size_t a, double advantage) {
  if (a >= pi.size()) throw ProtocolError("response index out of range");
  return advantage * (-std::log(pi[a]) - entropy(pi));
}

double resp_entropy_drift_inner(const SimplexPoint& pi, std::size_t a,
                                double advantage) {
  if (a >= pi.size()) throw ProtocolError("response index out of range");
  // Ambient gradients: dH/dpi = -log pi - 1, d(A log pi_a)/dpi = A e_a / pi_a.
  std::vector<double> dh(pi.size()), dl(pi.size(), 0.0);
  for (std::size_t i = 0; i < pi.size(); ++i) dh[i] = -std::log(pi[i]) - 1.0;
  dl[a] = advantage / pi[a];
  return fisher_rao_inner(pi, natural_gradient(pi, dh), natural_gradient(pi, dl));
}

RegularizedDrift regularized_drift(const SimplexPoint& pi, std::size_t a,
                                   const DriftConfig& cfg) {
  if (cfg.beta < 0.0 || cfg.gamma < 0.0)
    throw ConfigError("beta and gamma must be >= 0");
  if (cfg.gamma > 0.0 && (!cfg.reference || cfg.reference->size() != pi.size()))
    throw ConfigError("gamma > 0 requires a reference policy of matching size");
  RegularizedDrift d;
  const auto s = surprisals(pi);
  const double h = entropy(pi);
  d.term_i = resp_entropy_drift(pi, a, cfg.advantage);
  d.term_ii = (cfg.beta * cfg.psi_prime(h) + cfg.gamma) * covariance(pi, s, s);
  if (cfg.gamma > 0.0) d.term_iii = cfg.gamma * covariance(pi, s, surprisals(*cfg.reference));
  d.total = d.term_i + d.term_ii - d.term_iii;
  return d;
}

double regularized_objective(std::span<const double> pi, std::size_t a,
                             const DriftConfig& cfg) {
  double value = cfg.advantage * std::log(pi[a]);
  if (cfg.beta != 0.0) value += cfg.beta * cfg.psi(entropy_of(pi));
  if (cfg.gamma != 0.0) {
    double kl = 0.0;
    for (std::size_t i = 0; i < pi.size(); ++i)
      kl += pi[i] * (std::log(pi[i]) - std::log((*cfg.reference)[i]));
    value -= cfg.gamma * kl;
  }
  return value;
}

double occupancy_weighted_drift(std::span<const double> drifts,
                                std::span<const double> visitation) {
  if (drifts.size() != visitation.size())
    throw ProtocolError("drifts and visitation probabilities differ in size");
  double total = 0.0;
  for (std::size_t i = 0; i < drifts.size(); ++i) {
    if (!(visitation[i] >= 0.0 && visitation[i] <= 1.0))
      throw ProtocolError("visitation probability outside [0, 1]");
    total += visitation[i] * drifts[i];
  }
  return total;
}

std::vector<double> visitation_probabilities(
    const TabularMdp& mdp, const std::vector<std::vector<double>>& policy) {
  const std::size_t n = mdp.next.size();
  if (policy.size() != n) throw ProtocolError("policy does not cover every state");
  if (mdp.initial < 0 || static_cast<std::size_t>(mdp.initial) >= n)
    throw ProtocolError("initial state out of range");
  std::vector<double> visits(n, 0.0), current(n, 0.0);
  current[mdp.initial] = 1.0;
  for (int t = 0; t < mdp.horizon; ++t) {
    std::vector<double> next(n, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
      if (current[s] == 0.0) continue;
      visits[s] += current[s];
      if (policy[s].size() != mdp.next[s].size())
        throw ProtocolError("action count mismatch");
      for (std::size_t k = 0; k < mdp.next[s].size(); ++k) {
        const int to = mdp.next[s][k];
        if (to >= 0) next[to] += current[s] * policy[s][k];
      }
    }
    current = std::move(next);
  }
  return visits;
}

Eigen::VectorXd SoftmaxPolicy::probs() const {
  Eigen::VectorXd z = features * theta;
  z.array() -= z.maxCoeff();
  Eigen::VectorXd p = z.array().exp();
  return p / p.sum();
}

Eigen::MatrixXd SoftmaxPolicy::scores() const {
  const Eigen::VectorXd p = probs();
  const Eigen::RowVectorXd mean = p.transpose() * features;
  return features.rowwise() - mean;
}

Eigen::MatrixXd SoftmaxPolicy::kernel() const {
  const Eigen::MatrixXd g = scores();
  return g * g.transpose();
}

Eigen::VectorXd entropy_gradient(const SoftmaxPolicy& policy) {
  const Eigen::VectorXd p = policy.probs();
  const Eigen::VectorXd s = -p.array().log();
  const double h = p.dot(s);
  const Eigen::VectorXd w = p.array() * (s.array() - h);
  return policy.scores().transpose() * w;
}

ParametrizedDrift parametrized_drift(const SoftmaxPolicy& policy, std::size_t a,
                                     const DriftConfig& cfg) {
  const Eigen::VectorXd p = policy.probs();
  const auto m = static_cast<std::size_t>(p.size());
  if (a >= m) throw ProtocolError("response index out of range");
  if (cfg.gamma > 0.0 && (!cfg.reference || cfg.reference->size() != m))
    throw ConfigError("gamma > 0 requires a reference policy of matching size");

  const Eigen::MatrixXd k = policy.kernel();
  const Eigen::VectorXd s = -p.array().log();
  const double h = p.dot(s);

  ParametrizedDrift d;
  for (std::size_t b = 0; b < m; ++b)
    if (b != a) d.b_ker += p[b] * (h - s[b]) * k(b, a);
  d.task_term = -cfg.advantage * (p[a] * (h - s[a]) * k(a, a) + d.b_ker);

  const Eigen::VectorXd centered = p.array() * (s.array() - h);
  d.v_theta = centered.dot(k * centered);
  d.entropy_grad_norm_sq = entropy_gradient(policy).squaredNorm();
  if (cfg.gamma > 0.0) {
    Eigen::VectorXd s_ref(m);
    for (std::size_t b = 0; b < m; ++b) s_ref[b] = -std::log((*cfg.reference)[b]);
    const double h_ref = p.dot(s_ref);
    const Eigen::VectorXd ref_centered = p.array() * (s_ref.array() - h_ref);
    d.c_theta = centered.dot(k * ref_centered);
  }
  const double coef = cfg.beta * cfg.psi_prime(h) + cfg.gamma;
  d.total = d.task_term + coef * d.v_theta - cfg.gamma * d.c_theta;
  return d;
}

double parametrized_objective(const SoftmaxPolicy& policy, std::size_t a,
                              const DriftConfig& cfg) {
  const Eigen::VectorXd p = policy.probs();
  return regularized_objective(std::span<const double>(p.data(), p.size()), a, cfg);
}

SimplexPoint sample_interior_dirichlet(std::size_t n, Rng& rng, double min_prob) {
  if (n == 0) throw ConfigError("simplex dimension must be >= 1");
  if (min_prob * static_cast<double>(n) >= 1.0)
    throw ConfigError("min_prob too large for the simplex dimension");
  for (;;) {
    std::vector<double> w(n);
    for (double& x : w) x = -std::log1p(-uniform01(rng));  // Gamma(1)
    const double s = sum_of(w);
    bool ok = true;
    for (double& x : w) {
      x /= s;
      ok = ok && x >= min_prob;
    }
    if (!ok) continue;
    // Pin the sum to 1 exactly enough for the SimplexPoint contract.
    return SimplexPoint::normalized(std::move(w));
  }
}

std::string to_string(DriftKind k) {
  switch (k) {
    case DriftKind::resp: return "resp";
    case DriftKind::regularized: return "regularized";
    case DriftKind::parametrized: return "parametrized";
  }
  return "unknown";
}

DriftKind drift_kind_from_string(const std::string& s) {
  for (DriftKind k : {DriftKind::resp, DriftKind::regularized, DriftKind::parametrized})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown drift kind '" + s + "'");
}

namespace {

void finish(DriftReport& r, const VerifyOptions& o) {
  if (o.corrupt) r.analytic = r.analytic * 1.05 + 1e-3;
  r.fd_step = o.fd_step;
  r.abs_error = std::abs(r.analytic - r.finite_difference);
  const double scale = std::max(std::abs(r.finite_difference), 1e-300);
  r.rel_error = r.abs_error / scale;
  r.pass = (r.rel_error < o.rel_tol || r.abs_error < o.abs_tol) && r.side_condition;
}

// Maps a point of the open orthant back to the simplex interior.
std::vector<double> retract(std::span<const double> x) {
  std::vector<double> y(x.begin(), x.end());
  for (double& v : y) v = std::max(v, 1e-300);
  const double s = sum_of(y);
  for (double& v : y) v /= s;
  return y;
}

}  // namespace

DriftReport check_simplex_drift(const SimplexPoint& pi, std::size_t a,
                                const DriftConfig& cfg, const VerifyOptions& options) {
  const std::size_t m = pi.size();
  const double h = options.fd_step;
  DriftReport r;
  r.responses = m;
  r.conditioned = pi.min_prob() >= options.min_prob;

  const auto terms = regularized_drift(pi, a, cfg);
  r.analytic = terms.total;
  r.side_condition = terms.term_ii >= 0.0;

  // Update direction: gradient of l_a in logit coordinates z with
  // pi = softmax(log pi + z), by central differences at z = 0.
  std::vector<double> log_pi(m);
  for (std::size_t i = 0; i < m; ++i) log_pi[i] = std::log(pi[i]);
  auto objective_at = [&](std::size_t k, double dz) {
    std::vector<double> z = log_pi;
    z[k] += dz;
    const double top = *std::max_element(z.begin(), z.end());
    std::vector<double> q(m);
    for (std::size_t i = 0; i < m; ++i) q[i] = std::exp(z[i] - top);
    return regularized_objective(retract(q), a, cfg);
  };
  std::vector<double> direction(m);
  for (std::size_t k = 0; k < m; ++k)
    direction[k] = (objective_at(k, h) - objective_at(k, -h)) / (2.0 * h);

  auto entropy_along = [&](double t) {
    std::vector<double> x(m);
    for (std::size_t i = 0; i < m; ++i) x[i] = pi[i] + t * direction[i];
    return entropy_of(retract(x));
  };
  r.finite_difference = (entropy_along(h) - entropy_along(-h)) / (2.0 * h);
  finish(r, options);
  return r;
}

DriftReport check_parametrized_drift(const SoftmaxPolicy& policy, std::size_t a,
                                     const DriftConfig& cfg,
                                     const VerifyOptions& options) {
  const double h = options.fd_step;
  const auto d = static_cast<std::size_t>(policy.theta.size());
  DriftReport r;
  r.responses = static_cast<std::size_t>(policy.features.rows());
  r.conditioned = policy.probs().minCoeff() >= options.min_prob;

  const auto terms = parametrized_drift(policy, a, cfg);
  r.analytic = terms.total;
  r.side_condition = std::abs(terms.v_theta - terms.entropy_grad_norm_sq) <= 1e-10;

  SoftmaxPolicy probe = policy;
  Eigen::VectorXd grad(d);
  for (std::size_t k = 0; k < d; ++k) {
    probe.theta = policy.theta;
    probe.theta[k] += h;
    const double up = parametrized_objective(probe, a, cfg);
    probe.theta[k] -= 2.0 * h;
    const double down = parametrized_objective(probe, a, cfg);
    grad[k] = (up - down) / (2.0 * h);
  }
  auto entropy_along = [&](double t) {
    probe.theta = policy.theta + t * grad;
    const Eigen::VectorXd p = probe.probs();
    return entropy_of(std::span<const double>(p.data(), p.size()));
  };
  r.finite_difference = (entropy_along(h) - entropy_along(-h)) / (2.0 * h);
  finish(r, options);
  return r;
}

std::vector<DriftReport> verify_drift_fd(DriftKind kind, int trials,
                                         const VerifyOptions& options, Rng& rng) {
  if (!(options.fd_step > 0.0)) throw ConfigError("fd_step must be > 0");
  if (options.min_responses < 2 || options.max_responses < options.min_responses)
    throw ConfigError("invalid response-count range");
  std::vector<std::uint64_t> seeds(std::max(trials, 0));
  for (auto& s : seeds) s = rng();

  std::vector<DriftReport> reports;
  for (int t = 0; t < trials; ++t) {
    Rng trial_rng(seeds[t]);
    const std::size_t m = uniform_index(trial_rng, options.min_responses, options.max_responses);
    const bool near_vertex = uniform01(trial_rng) < options.near_vertex_fraction;
    const std::size_t a = uniform_index(trial_rng, 0, m - 1);

    DriftConfig cfg;
    cfg.advantage = uniform(trial_rng, -options.advantage_range, options.advantage_range);
    if (kind != DriftKind::resp) {
      cfg.beta = uniform(trial_rng, 0.0, options.beta_max);
      cfg.gamma = uniform(trial_rng, 0.0, options.gamma_max);
      cfg.reference = sample_interior_dirichlet(m, trial_rng, options.min_prob);
    }

    DriftReport r;
    if (kind == DriftKind::parametrized) {
      const int d_max = options.max_params > 0 ? options.max_params
                                               : static_cast<int>(m) - 1;
      const auto d = uniform_index(trial_rng, 2, std::max<std::size_t>(2, d_max));
      SoftmaxPolicy policy;
      policy.features.resize(m, d);
      policy.theta.resize(d);
      for (Eigen::Index i = 0; i < policy.features.size(); ++i)
        policy.features.data()[i] = uniform(trial_rng, -1.0, 1.0);
      for (Eigen::Index i = 0; i < policy.theta.size(); ++i)
        policy.theta[i] = uniform(trial_rng, -1.0, 1.0);
      if (near_vertex) policy.theta *= 25.0;
      r = check_parametrized_drift(policy, a, cfg, options);
    } else {
      SimplexPoint pi = sample_interior_dirichlet(m, trial_rng, options.min_prob);
      if (near_vertex) {
        std::vector<double> w = pi.probs();
        w[uniform_index(trial_rng, 0, m - 1)] = 1e-6;
        pi = SimplexPoint::normalized(std::move(w));
      }
      r = check_simplex_drift(pi, a, cfg, options);
    }
    r.trial = t;
    reports.push_back(r);
  }
  return reports;
}

DriftSummary summarize(const std::vector<DriftReport>& reports) {
  DriftSummary s;
  s.trials = static_cast<int>(reports.size());
  std::vector<const DriftReport*> failing;
  double rel_sum = 0.0;
  for (const auto& r : reports) {
    if (!r.conditioned) continue;
    ++s.asserted;
    rel_sum += r.rel_error;
    s.max_rel_error = std::max(s.max_rel_error, r.rel_error);
    s.max_abs_error = std::max(s.max_abs_error, r.abs_error);
    if (!r.pass) failing.push_back(&r);
  }
  if (s.asserted > 0) s.mean_rel_error = rel_sum / s.asserted;
  s.failures = static_cast<int>(failing.size());
  std::sort(failing.begin(), failing.end(), [](const DriftReport* x, const DriftReport* y) {
    return x->abs_error > y->abs_error;
  });
  for (std::size_t i = 0; i < failing.size() && i < 5; ++i) s.worst.push_back(failing[i]->trial);
  return s;
}

}  // namespace aemlab
