#include "aemlab/rollout.hpp"

#include <thread>

#include <nlohmann/json.hpp>

#include "aemlab/errors.hpp"

namespace aemlab {

std::vector<Token> Trajectory::token_stream() const {
  std::vector<Token> out;
  for (const auto& s : steps)
    out.insert(out.end(), s.response.tokens.begin(), s.response.tokens.end());
  return out;
}

std::vector<double> Trajectory::entropy_stream() const {
  std::vector<double> out;
  for (const auto& s : steps)
    out.insert(out.end(), s.response.entropy.begin(), s.response.entropy.end());
  return out;
}

std::size_t Trajectory::token_count() const {
  std::size_t n = 0;
  for (const auto& s : steps) n += s.response.size();
  return n;
}

std::span<const double> Group::span_entropies(const ResponseSpan& s) const {
  const auto& r = trajectory_of(s).steps.at(s.turn_index).response;
  return r.entropy;
}

Trajectory run_episode(const PolicyTable& policy, const Environment& env,
                       int prompt_id, std::uint64_t seed) {
  Trajectory t;
  t.prompt_id = prompt_id;
  t.seed = seed;
  Rng rng(seed);
  EnvState state = env.reset(prompt_id);
  while (!state.done) {
    Step step;
    step.state = state;
    step.state_id = env.state_id(state);
    step.response = sample_response(policy, step.state_id, rng);
    StepResult next = env.step(state, step.response.tokens);
    step.valid = next.valid;
    if (!next.valid) ++t.invalid_count;
    t.steps.push_back(std::move(step));
    state = std::move(next.state);
  }
  t.final_state = state;
  t.success = state.success;
  t.reward = terminal_reward(t, env.config().reward);
  return t;
}

double terminal_reward(const Trajectory& trajectory, const RewardScheme& scheme) {
  if (trajectory.steps.empty() || !trajectory.final_state.done)
    throw ProtocolError("terminal_reward on a non-terminated trajectory");
  return terminal_reward(trajectory.final_state.success, trajectory.invalid_count,
                         scheme);
}

Group collect_group(const PolicyTable& policy, const Environment& env,
                    int prompt_id, int n, Rng& rng, int num_threads) {
  if (n < 2) throw ConfigError("group size N must be >= 2");
  std::vector<std::uint64_t> seeds(n);
  for (auto& s : seeds) s = rng();

  Group g;
  g.prompt_id = prompt_id;
  g.trajectories.resize(n);
  auto work = [&](int begin, int stride) {
    for (int i = begin; i < n; i += stride)
      g.trajectories[i] = run_episode(policy, env, prompt_id, seeds[i]);
  };
  const int workers = std::max(1, std::min(num_threads, n));
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
  }
  for (int i = 0; i < n; ++i) {
    auto spans = parse_spans(g.trajectories[i], i);
    g.spans.insert(g.spans.end(), spans.begin(), spans.end());
    g.rewards.push_back(g.trajectories[i].reward);
  }
  return g;
}

std::vector<ResponseSpan> parse_spans(const Trajectory& trajectory,
                                      int rollout_index) {
  std::vector<ResponseSpan> spans;
  int cursor = 0;
  for (std::size_t t = 0; t < trajectory.steps.size(); ++t) {
    const int len = static_cast<int>(trajectory.steps[t].response.size());
    if (len < 1) throw ProtocolError("empty response in trajectory");
    spans.push_back({rollout_index, static_cast<int>(t), cursor, cursor + len - 1});
    cursor += len;
  }
  return spans;
}

std::string to_string(GroupFilter f) {
  return f == GroupFilter::off ? "off" : "reject-uniform";
}

GroupFilter group_filter_from_string(const std::string& s) {
  if (s == "off") return GroupFilter::off;
  if (s == "reject-uniform") return GroupFilter::reject_uniform;
  throw ConfigError("unknown group filter '" + s + "'");
}

std::vector<Group> filter_degenerate_groups(std::vector<Group> groups,
                                            GroupFilter mode) {
  if (mode == GroupFilter::off) return groups;
  std::vector<Group> kept;
  for (auto& g : groups) {
    bool any_success = false, any_failure = false;
    for (const auto& t : g.trajectories) (t.success ? any_success : any_failure) = true;
    if (any_success && any_failure) kept.push_back(std::move(g));
  }
  return kept;
}

nlohmann::json trajectory_to_json(const Trajectory& t) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : t.steps) {
    steps.push_back({{"step_index", s.state.step_index},
                     {"features", s.state.features},
                     {"state_id", s.state_id},
                     {"tokens", s.response.tokens},
                     {"logprob", s.response.logprob},
                     {"entropy", s.response.entropy},
                     {"valid", s.valid}});
  }
  return {{"prompt_id", t.prompt_id},
          {"seed", t.seed},
          {"steps", std::move(steps)},
          {"final_features", t.final_state.features},
          {"final_step_index", t.final_state.step_index},
          {"reward", t.reward},
          {"success", t.success},
          {"invalid_count", t.invalid_count}};
}

Trajectory trajectory_from_json(const nlohmann::json& j) {
  Trajectory t;
  t.prompt_id = j.at("prompt_id").get<int>();
  t.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& s : j.at("steps")) {
    Step step;
    step.state.task_id = t.prompt_id;
    step.state.step_index = s.at("step_index").get<int>();
    step.state.features = s.at("features").get<std::vector<int>>();
    step.state_id = s.at("state_id").get<StateId>();
    step.response.tokens = s.at("tokens").get<std::vector<Token>>();
    step.response.logprob = s.at("logprob").get<std::vector<double>>();
    step.response.entropy = s.at("entropy").get<std::vector<double>>();
    step.valid = s.at("valid").get<bool>();
    t.steps.push_back(std::move(step));
  }
  t.final_state.task_id = t.prompt_id;
  t.final_state.step_index = j.at("final_step_index").get<int>();
  t.final_state.features = j.at("final_features").get<std::vector<int>>();
  t.final_state.done = true;
  t.success = j.at("success").get<bool>();
  t.final_state.success = t.success;
  t.reward = j.at("reward").get<double>();
  t.invalid_count = j.at("invalid_count").get<int>();
  return t;
}

}  // namespace aemlab
