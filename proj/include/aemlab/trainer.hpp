#pragma once

// Group-based policy-gradient training of a tabular softmax policy.
//
// One training step: sample `prompts_per_step` groups of `group_size`
// rollouts, estimate base advantages, optionally modulate them (AEM or an
// ablation variant), then take `epochs` plain gradient-ascent steps on the
// clipped surrogate objective plus the optional entropy bonus and KL
// penalty. Gradients are analytic on the logit tables.

#include <cstdint>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "aemlab/advantage.hpp"
#include "aemlab/aem.hpp"
#include "aemlab/env.hpp"
#include "aemlab/policy.hpp"
#include "aemlab/rollout.hpp"

namespace aemlab {

// grpo_clip: token ratios, per-trajectory length normalization.
// dapo_token: token ratios, token-level aggregation over each group.
// gspo_seq: length-normalized sequence ratio per response span.
enum class LossKind { grpo_clip, dapo_token, gspo_seq };
std::string to_string(LossKind k);
LossKind loss_kind_from_string(const std::string& s);

// Gradient masking by the sign of A_base * (alpha - 1).
enum class MaskMode { none, mask_pos_quadrants, mask_neg_quadrants, both };
std::string to_string(MaskMode m);
MaskMode mask_mode_from_string(const std::string& s);

struct TrainConfig {
  EnvConfig env;
  Estimator estimator = Estimator::grpo;
  AemMode aem_mode = AemMode::off;
  AemParams aem;
  LossKind loss = LossKind::grpo_clip;
  double clip_low = 0.2;
  double clip_high = 0.2;
  double kl_coef = 0.01;
  double entropy_coef = 0.0;
  double lr = 0.05;
  int group_size = 8;
  int prompts_per_step = 4;
  int steps = 100;
  int epochs = 1;
  std::uint64_t seed = 0;
  GroupFilter group_filter = GroupFilter::off;
  MaskMode mask = MaskMode::none;
  bool force_unit_alpha = false;  // modulation runs but alpha is replaced by 1
  int checkpoint_every = 0;       // 0: initial and final checkpoints only
  int num_threads = 1;
  bool log_exact_entropy = true;
  bool log_trajectories = false;

  void validate() const;  // throws ConfigError naming the field
};

struct StepMetrics {
  int step = 0;
  double mean_reward = 0.0;
  double success_rate = 0.0;
  double policy_entropy_estimate = 0.0;  // mean span H̄
  double mean_alpha = 1.0;
  double frac_positive_advantage = 0.0;
  double loss_value = 0.0;
  double exact_resp_entropy = std::numeric_limits<double>::quiet_NaN();
  int groups_used = 0;
  int masked_spans = 0;

  bool operator==(const StepMetrics&) const = default;
};

nlohmann::json to_json(const StepMetrics& m);
StepMetrics step_metrics_from_json(const nlohmann::json& j);
std::vector<StepMetrics> read_metrics_log(const std::string& path);

// Masked spans per group (same order as the batch).
using SpanMasks = std::vector<std::set<SpanKey>>;

struct RegularizerTerms {
  double mean_entropy = 0.0;  // mean over the batch's spans of H_resp(s)
  double mean_kl = 0.0;       // mean over spans of KL(pi(.|s) || pi_ref(.|s))
  double entropy_bonus = 0.0; // beta * mean psi(H_resp), psi = identity
  double kl_penalty = 0.0;    // gamma * mean KL
  LogitMap gradient;          // d(entropy_bonus - kl_penalty)/dtheta
};

// Exact over each visited state's response tree. Nothing is enumerated when
// both coefficients are zero.
RegularizerTerms regularizer_terms(const PolicyTable& policy,
                                   const std::vector<Group>& batch,
                                   const TrainConfig& config,
                                   const PolicyTable& reference,
                                   std::size_t budget = kDefaultEnumerationBudget);

struct LossResult {
  double loss = 0.0;              // -(objective + bonus - penalty)
  double policy_objective = 0.0;  // clipped surrogate J
  RegularizerTerms regularizers;
  LogitMap gradient;              // d loss / d theta
};

// `advantages[g]` must cover every span of batch[g]; behavior log-probs are
// the ones recorded at sampling time. Throws ProtocolError on shape
// mismatch.
LossResult surrogate_loss(const PolicyTable& policy,
                          const std::vector<Group>& batch,
                          const std::vector<AdvantageTable>& advantages,
                          const TrainConfig& config,
                          const PolicyTable& reference,
                          const SpanMasks* masked = nullptr);

SpanMasks quadrant_masks(const std::vector<Group>& batch,
                         const std::vector<AdvantageTable>& base,
                         const std::vector<ModulationSet>& modulation,
                         MaskMode mode);

struct PhaseTimings {
  double rollout = 0.0;
  double advantage = 0.0;
  double aem = 0.0;
  double update = 0.0;
  double total() const { return rollout + advantage + aem + update; }
};

struct TrainResult {
  std::vector<StepMetrics> metrics;
  PolicyTable policy;
  PhaseTimings timings;
  std::vector<PhaseTimings> step_timings;
  std::vector<std::string> written_files;
};

// Writes metrics.jsonl, timings.jsonl, checkpoints/ (and trajectories.jsonl
// when enabled) under `output_dir` unless it is empty.
TrainResult train(const TrainConfig& config, const std::string& output_dir = "");
TrainResult masked_train(TrainConfig config, MaskMode mask,
                         const std::string& output_dir = "");

struct RunSummary {
  int steps = 0;
  double final_success_rate = 0.0;  // mean over the last quarter of steps
  double final_mean_reward = 0.0;
  double entropy_first_quartile = 0.0;
  double entropy_last_quartile = 0.0;
};

RunSummary summarize_run(const std::vector<StepMetrics>& metrics);

}  // namespace aemlab
