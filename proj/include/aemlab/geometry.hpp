#pragma once

// Fisher-Rao geometry of the response simplex and entropy-drift identities.
//
// A policy at a fixed state is a point pi in the open simplex over its
// finite response set. Tangent vectors have components summing to zero and
// the metric is g_pi(u, v) = sum u_a v_a / pi_a. The drift of a functional
// under an update direction is the inner product of Riemannian gradients;
// for the entropy H and the per-response objective l_a = A log pi_a it
// reduces to A (S_a - H).

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "aemlab/rng.hpp"

namespace aemlab {

class SimplexPoint {
 public:
  SimplexPoint() = default;
  // Throws ProtocolError unless every entry is > 0 and the sum is 1 within
  // 1e-12.
  explicit SimplexPoint(std::vector<double> probs);
  // Divides by the sum first.
  static SimplexPoint normalized(std::vector<double> weights);

  const std::vector<double>& probs() const { return probs_; }
  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  double min_prob() const;

 private:
  std::vector<double> probs_;
};

inline constexpr double kTangentTolerance = 1e-9;

// Throws ProtocolError when u or v is not tangent.
double fisher_rao_inner(const SimplexPoint& pi, std::span<const double> u,
                        std::span<const double> v);

// pi (.) (grad - (pi . grad) 1).
std::vector<double> natural_gradient(const SimplexPoint& pi,
                                     std::span<const double> euclidean_grad);

std::vector<double> surprisals(const SimplexPoint& pi);  // -log pi
double entropy(const SimplexPoint& pi);
double expectation(const SimplexPoint& pi, std::span<const double> x);
double covariance(const SimplexPoint& pi, std::span<const double> x,
                  std::span<const double> y);
double kl_divergence(const SimplexPoint& p, const SimplexPoint& q);

// Closed form A (S_a - H).
double resp_entropy_drift(const SimplexPoint& pi, std::size_t a, double advantage);
// Same quantity through the explicit inner product
// g_pi(grad^F H, grad^F (A log pi_a)).
double resp_entropy_drift_inner(const SimplexPoint& pi, std::size_t a,
                                double advantage);

struct DriftConfig {
  double advantage = 0.0;
  double beta = 0.0;   // entropy bonus weight
  double gamma = 0.0;  // KL penalty weight
  std::function<double(double)> psi = [](double h) { return h; };
  std::function<double(double)> psi_prime = [](double) { return 1.0; };
  std::optional<SimplexPoint> reference;  // required when gamma > 0
};

struct RegularizedDrift {
  double total = 0.0;
  double term_i = 0.0;    // A (S_a - H)
  double term_ii = 0.0;   // (beta psi'(H) + gamma) Var(S) >= 0
  double term_iii = 0.0;  // gamma Cov(S, S_ref), enters with a minus sign
};

// Throws ConfigError when gamma > 0 without a reference of matching size.
RegularizedDrift regularized_drift(const SimplexPoint& pi, std::size_t a,
                                   const DriftConfig& cfg);

// l_a(pi) = A log pi_a + beta psi(H(pi)) - gamma KL(pi || pi_ref), evaluated
// on the positive orthant (the entropy and KL formulas extend off the
// simplex unchanged).
double regularized_objective(std::span<const double> pi, std::size_t a,
                             const DriftConfig& cfg);

// sum_t P[s_t = s] D(s). Throws ProtocolError on a size mismatch or a
// probability outside [0, 1].
double occupancy_weighted_drift(std::span<const double> drifts,
                                std::span<const double> visitation);

// Finite deterministic MDP for visitation bookkeeping: next[s][k] is the
// successor after action k, or -1 when the episode ends.
struct TabularMdp {
  std::vector<std::vector<int>> next;
  int initial = 0;
  int horizon = 1;
};

// P[s_t = s] summed over t < horizon under a per-state action distribution.
std::vector<double> visitation_probabilities(
    const TabularMdp& mdp, const std::vector<std::vector<double>>& policy);

// Softmax over m responses with logits W theta, W of shape m x d.
struct SoftmaxPolicy {
  Eigen::MatrixXd features;  // W
  Eigen::VectorXd theta;

  Eigen::VectorXd probs() const;
  // Row b is G_b = grad_theta log pi(b) = W_b - pi^T W.
  Eigen::MatrixXd scores() const;
  Eigen::MatrixXd kernel() const;  // K = G G^T
};

struct ParametrizedDrift {
  double total = 0.0;
  double task_term = 0.0;  // -A [pi_a (H - S_a) K_aa + B_ker]
  double b_ker = 0.0;      // sum_{b != a} pi_b (H - S_b) K_ba
  double v_theta = 0.0;    // sum pi_b pi_c (S_b - H)(S_c - H) K_bc
  double c_theta = 0.0;    // same with the second factor S_ref - H_ref
  double entropy_grad_norm_sq = 0.0;  // |grad_theta H|^2, equals v_theta
};

Eigen::VectorXd entropy_gradient(const SoftmaxPolicy& policy);
ParametrizedDrift parametrized_drift(const SoftmaxPolicy& policy, std::size_t a,
                                     const DriftConfig& cfg);
double parametrized_objective(const SoftmaxPolicy& policy, std::size_t a,
                              const DriftConfig& cfg);

// Symmetric Dirichlet(1) draw, redrawn until every entry is >= min_prob.
SimplexPoint sample_interior_dirichlet(std::size_t n, Rng& rng,
                                       double min_prob = 1e-4);

enum class DriftKind { resp, regularized, parametrized };
std::string to_string(DriftKind k);
DriftKind drift_kind_from_string(const std::string& s);

struct DriftReport {
  int trial = 0;
  std::size_t responses = 0;
  double analytic = 0.0;
  double finite_difference = 0.0;
  double abs_error = 0.0;
  double rel_error = 0.0;
  double fd_step = 0.0;
  // False for near-vertex points; such trials are reported but not asserted.
  bool conditioned = true;
  bool pass = true;
  // Extra identity checked alongside (term_II >= 0, V_theta = |grad H|^2).
  bool side_condition = true;
};

struct VerifyOptions {
  double fd_step = 1e-6;
  double rel_tol = 1e-4;
  double abs_tol = 1e-8;
  std::size_t min_responses = 3;
  std::size_t max_responses = 10;
  double min_prob = 1e-4;
  double advantage_range = 2.0;  // A ~ U(-range, range)
  double beta_max = 1.0;
  double gamma_max = 0.1;
  int max_params = 0;            // parametrized: d in [2, m-1] unless > 0
  double near_vertex_fraction = 0.0;  // share of trials pinned at 1e-6
  bool corrupt = false;          // harness self-test: perturbed analytic value
};

// Analytic drift against a central finite-difference directional derivative
// of the entropy along the (natural or Euclidean) gradient of l_a. Per-trial
// seeds come from `rng` up front.
std::vector<DriftReport> verify_drift_fd(DriftKind kind, int trials,
                                         const VerifyOptions& options, Rng& rng);

// Single-configuration checks used by the harness.
DriftReport check_simplex_drift(const SimplexPoint& pi, std::size_t a,
                                const DriftConfig& cfg,
                                const VerifyOptions& options);
DriftReport check_parametrized_drift(const SoftmaxPolicy& policy, std::size_t a,
                                     const DriftConfig& cfg,
                                     const VerifyOptions& options);

struct DriftSummary {
  int trials = 0;
  int asserted = 0;
  int failures = 0;
  double max_rel_error = 0.0;
  double mean_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::vector<int> worst;  // up to five failing trials, worst first
};

DriftSummary summarize(const std::vector<DriftReport>& reports);

}  // namespace aemlab
