#pragma once

// Trajectories, response spans and groups.
//
// A prompt is (environment, task id); a group holds the N trajectories
// sampled from one prompt together with one ResponseSpan per turn. Spans
// index into the trajectory's concatenated token stream (inclusive ends).

#include <compare>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "aemlab/env.hpp"
#include "aemlab/policy.hpp"
#include "aemlab/rng.hpp"

namespace aemlab {

struct Step {
  EnvState state;  // state the response was generated in
  StateId state_id = 0;
  Response response;
  bool valid = true;

  bool operator==(const Step&) const = default;
};

struct Trajectory {
  int prompt_id = 0;
  std::uint64_t seed = 0;
  std::vector<Step> steps;
  EnvState final_state;
  double reward = 0.0;
  bool success = false;
  int invalid_count = 0;

  std::vector<Token> token_stream() const;
  std::vector<double> entropy_stream() const;
  std::size_t token_count() const;

  bool operator==(const Trajectory&) const = default;
};

// Identifies one response inside a group.
struct SpanKey {
  int rollout = 0;
  int turn = 0;
  auto operator<=>(const SpanKey&) const = default;
};

struct ResponseSpan {
  int rollout_index = 0;
  int turn_index = 0;
  int begin = 0;  // inclusive
  int end = 0;    // inclusive

  int length() const { return end - begin + 1; }
  SpanKey key() const { return {rollout_index, turn_index}; }
  bool operator==(const ResponseSpan&) const = default;
};

struct Group {
  int prompt_id = 0;
  std::vector<Trajectory> trajectories;
  std::vector<ResponseSpan> spans;
  std::vector<double> rewards;

  const Trajectory& trajectory_of(const ResponseSpan& s) const {
    return trajectories.at(s.rollout_index);
  }
  // Per-token entropies of the span's response.
  std::span<const double> span_entropies(const ResponseSpan& s) const;

  bool operator==(const Group&) const = default;
};

// Runs one episode of task `prompt_id` to termination.
Trajectory run_episode(const PolicyTable& policy, const Environment& env,
                       int prompt_id, std::uint64_t seed);

// R(tau) recomputed from the trajectory. Throws ProtocolError when the
// trajectory has not terminated.
double terminal_reward(const Trajectory& trajectory, const RewardScheme& scheme);

// N >= 2 independent rollouts. Each rollout gets its own seed drawn from
// `rng` up front, so the result does not depend on execution order.
Group collect_group(const PolicyTable& policy, const Environment& env,
                    int prompt_id, int n, Rng& rng, int num_threads = 1);

std::vector<ResponseSpan> parse_spans(const Trajectory& trajectory,
                                      int rollout_index = 0);

enum class GroupFilter { off, reject_uniform };
std::string to_string(GroupFilter f);
GroupFilter group_filter_from_string(const std::string& s);

std::vector<Group> filter_degenerate_groups(std::vector<Group> groups,
                                            GroupFilter mode);

// One line-delimited log record per trajectory.
nlohmann::json trajectory_to_json(const Trajectory& t);
Trajectory trajectory_from_json(const nlohmann::json& j);

}  // namespace aemlab
