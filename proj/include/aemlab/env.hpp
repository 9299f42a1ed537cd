#pragma once

// Deterministic synthetic multi-turn environments with sparse outcome
// rewards. Each turn the agent emits one complete response (a token
// sequence); the environment interprets the whole sequence as its action.
//
//   key-chain     a fixed list of secret keys (1..max_key_len content tokens)
//                 must be emitted in order, one per turn.
//   grid-fetch    each response is a short list of moves on a small grid;
//                 success on reaching the goal cell.
//   bandit-chain  each response picks one arm; the correct arm advances one
//                 level, a wrong arm ends the episode in failure.
//
// A response is invalid (unparsable) when it carries no content token or is
// cut off at max_len without the terminator where the environment expects
// one. Invalid responses consume a turn and incur the per-invalid penalty.

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aemlab/policy.hpp"

namespace aemlab {

enum class EnvKind { key_chain, grid_fetch, bandit_chain };

std::string to_string(EnvKind kind);
EnvKind env_kind_from_string(const std::string& name);  // throws ConfigError

struct EnvState {
  int task_id = 0;
  int step_index = 0;
  std::vector<int> features;
  bool done = false;
  bool success = false;

  bool operator==(const EnvState&) const = default;
};

struct RewardScheme {
  double success_reward = 10.0;
  double failure_reward = 0.0;
  double invalid_penalty = 0.1;  // subtracted once per invalid response

  static RewardScheme binary() { return {1.0, 0.0, 0.0}; }
  void validate() const;
};

double terminal_reward(bool success, int invalid_count,
                       const RewardScheme& scheme);

struct EnvConfig {
  EnvKind kind = EnvKind::key_chain;
  int task_count = 8;
  int horizon = 8;
  std::uint64_t seed = 0;  // task layout seed
  RewardScheme reward;

  // key-chain
  int keys_per_task = 2;
  int max_key_len = 1;
  int key_alphabet = 3;  // content tokens; vocab = alphabet + terminator
  // grid-fetch
  int grid_size = 3;
  // bandit-chain
  int arms = 2;
  int depth = 3;

  void validate() const;
};

struct StepResult {
  EnvState state;
  bool valid = true;
};

class Environment {
 public:
  virtual ~Environment() = default;

  const EnvConfig& config() const { return config_; }
  EnvKind kind() const { return config_.kind; }
  int task_count() const { return config_.task_count; }
  int horizon() const { return config_.horizon; }

  virtual Vocabulary vocab() const = 0;
  virtual int max_response_len() const = 0;

  // Initial state s_0 of a task. Throws ConfigError for unknown task ids.
  EnvState reset(int task_id) const;

  // Pure transition. Throws ProtocolError when state.done is set.
  StepResult step(const EnvState& state, std::span<const Token> response) const;

  // Policy-table key for the observation (kind, task, features). The step
  // index is deliberately excluded so the policy is stationary.
  StateId state_id(const EnvState& state) const;

  // Monotone task progress: keys emitted, bandit level, or negative
  // Manhattan distance to the goal cell.
  virtual int progress(const EnvState& state) const = 0;

  PolicyTable make_policy() const {
    return PolicyTable(vocab(), max_response_len());
  }

 protected:
  explicit Environment(EnvConfig config) : config_(std::move(config)) {}

  virtual std::vector<int> initial_features(int task_id) const = 0;
  // Returns (new features, valid, success) for a non-terminal state.
  struct Outcome {
    std::vector<int> features;
    bool valid = true;
    bool success = false;
    bool failure = false;
  };
  virtual Outcome transition(const EnvState& state,
                             std::span<const Token> response) const = 0;

 private:
  EnvConfig config_;
};

std::unique_ptr<Environment> make_environment(const EnvConfig& config);

// Every complete response of the environment's vocabulary and max length,
// in lexicographic order.
std::vector<std::vector<Token>> all_responses(const Environment& env);

// Exhaustive search: shortest sequence of responses that reaches success
// from s_0 within the horizon, or nullopt.
std::optional<std::vector<std::vector<Token>>> find_success_path(
    const Environment& env, int task_id);

// Responses from `state` that strictly increase progress() or succeed.
std::vector<std::vector<Token>> advancing_responses(const Environment& env,
                                                    const EnvState& state);

// key-chain only: the secret keys of a task.
std::vector<std::vector<Token>> key_chain_keys(const Environment& env,
                                               int task_id);

}  // namespace aemlab
