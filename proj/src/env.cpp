#include "aemlab/env.hpp"

#include <algorithm>
#include <array>
#include <cstdlib>
#include <deque>
#include <map>

#include "aemlab/errors.hpp"
#include "aemlab/rng.hpp"

namespace aemlab {

std::string to_string(EnvKind kind) {
  switch (kind) {
    case EnvKind::key_chain: return "key-chain";
    case EnvKind::grid_fetch: return "grid-fetch";
    case EnvKind::bandit_chain: return "bandit-chain";
  }
  return "unknown";
}

EnvKind env_kind_from_string(const std::string& name) {
  if (name == "key-chain") return EnvKind::key_chain;
  if (name == "grid-fetch") return EnvKind::grid_fetch;
  if (name == "bandit-chain") return EnvKind::bandit_chain;
  throw ConfigError("unknown env kind '" + name + "'");
}

void RewardScheme::validate() const {
  if (!(success_reward > failure_reward))
    throw ConfigError("reward: success_reward must exceed failure_reward");
}

double terminal_reward(bool success, int invalid_count,
                       const RewardScheme& scheme) {
  return (success ? scheme.success_reward : scheme.failure_reward) -
         scheme.invalid_penalty * invalid_count;
}

void EnvConfig::validate() const {
  reward.validate();
  if (task_count < 1) throw ConfigError("env.task_count must be >= 1");
  if (horizon < 1) throw ConfigError("env.horizon must be >= 1");
  switch (kind) {
    case EnvKind::key_chain:
      if (keys_per_task < 1) throw ConfigError("env.keys_per_task must be >= 1");
      if (max_key_len < 1) throw ConfigError("env.max_key_len must be >= 1");
      if (key_alphabet < 1) throw ConfigError("env.key_alphabet must be >= 1");
      if (keys_per_task > horizon)
        throw ConfigError("env.keys_per_task exceeds horizon");
      break;
    case EnvKind::grid_fetch:
      if (grid_size < 2) throw ConfigError("env.grid_size must be >= 2");
      break;
    case EnvKind::bandit_chain:
      if (arms < 2) throw ConfigError("env.arms must be >= 2");
      if (depth < 1 || depth > horizon)
        throw ConfigError("env.depth must be in [1, horizon]");
      break;
  }
}

EnvState Environment::reset(int task_id) const {
  if (task_id < 0 || task_id >= config_.task_count)
    throw ConfigError("task_id " + std::to_string(task_id) +
                      " outside task count " + std::to_string(config_.task_count));
  EnvState s;
  s.task_id = task_id;
  s.features = initial_features(task_id);
  return s;
}

StepResult Environment::step(const EnvState& state,
                             std::span<const Token> response) const {
  if (state.done) throw ProtocolError("step called on a finished episode");
  Outcome out = transition(state, response);
  StepResult r;
  r.valid = out.valid;
  r.state.task_id = state.task_id;
  r.state.step_index = state.step_index + 1;
  r.state.features = std::move(out.features);
  r.state.success = out.success;
  r.state.done = out.success || out.failure || r.state.step_index >= horizon();
  return r;
}

StateId Environment::state_id(const EnvState& state) const {
  std::uint64_t h = mix64(static_cast<std::uint64_t>(kind()) + 1);
  h = mix64(h ^ static_cast<std::uint64_t>(state.task_id));
  for (int f : state.features) h = mix64(h ^ static_cast<std::uint64_t>(f + 0x1000));
  return h;
}

namespace {

// Content tokens of a terminated response, or nullopt when the response is
// unparsable (no terminator, or nothing before it).
std::optional<std::vector<Token>> terminated_content(
    std::span<const Token> response, Token terminator) {
  if (response.empty() || response.back() != terminator) return std::nullopt;
  if (response.size() < 2) return std::nullopt;
  for (std::size_t i = 0; i + 1 < response.size(); ++i)
    if (response[i] == terminator) return std::nullopt;
  return std::vector<Token>(response.begin(), response.end() - 1);
}

class KeyChain final : public Environment {
 public:
  explicit KeyChain(EnvConfig c) : Environment(std::move(c)) {
    const auto& cfg = config();
    for (int task = 0; task < cfg.task_count; ++task) {
      Rng rng(derive_seed(cfg.seed, 0x4b45590000ULL + task));
      std::vector<std::vector<Token>> keys;
      for (int k = 0; k < cfg.keys_per_task; ++k) {
        const int len = 1 + static_cast<int>(rng() % cfg.max_key_len);
        std::vector<Token> key;
        for (int i = 0; i < len; ++i)
          key.push_back(static_cast<Token>(rng() % cfg.key_alphabet));
        keys.push_back(std::move(key));
      }
      keys_.push_back(std::move(keys));
    }
  }

  Vocabulary vocab() const override {
    return Vocabulary(config().key_alphabet + 1, config().key_alphabet);
  }
  int max_response_len() const override { return config().max_key_len + 1; }

  int progress(const EnvState& s) const override { return s.features.at(0); }

  const std::vector<std::vector<Token>>& keys(int task) const {
    return keys_.at(task);
  }

 protected:
  std::vector<int> initial_features(int) const override { return {0}; }

  Outcome transition(const EnvState& s,
                     std::span<const Token> response) const override {
    Outcome out;
    out.features = s.features;
    const auto content = terminated_content(response, vocab().terminator);
    if (!content) {
      out.valid = false;
      return out;
    }
    const auto& task_keys = keys_[s.task_id];
    const int progress = s.features[0];
    if (*content == task_keys[progress]) {
      out.features[0] = progress + 1;
      out.success = out.features[0] == static_cast<int>(task_keys.size());
    }
    return out;
  }

 private:
  std::vector<std::vector<std::vector<Token>>> keys_;
};

class GridFetch final : public Environment {
 public:
  static constexpr int kMoves = 4;  // up, down, left, right
  static constexpr int kMovesPerResponse = 2;

  explicit GridFetch(EnvConfig c) : Environment(std::move(c)) {
    const auto& cfg = config();
    const int n = cfg.grid_size;
    for (int task = 0; task < cfg.task_count; ++task) {
      Rng rng(derive_seed(cfg.seed, 0x47524944ULL + task));
      const int start = static_cast<int>(rng() % (n * n));
      int goal = static_cast<int>(rng() % (n * n - 1));
      if (goal >= start) ++goal;
      layouts_.push_back({start % n, start / n, goal % n, goal / n});
    }
  }

  Vocabulary vocab() const override { return Vocabulary(kMoves + 1, kMoves); }
  int max_response_len() const override { return kMovesPerResponse + 1; }

  int progress(const EnvState& s) const override {
    const auto& l = layouts_.at(s.task_id);
    return -(std::abs(s.features.at(0) - l[2]) + std::abs(s.features.at(1) - l[3]));
  }

 protected:
  std::vector<int> initial_features(int task) const override {
    return {layouts_[task][0], layouts_[task][1]};
  }

  Outcome transition(const EnvState& s,
                     std::span<const Token> response) const override {
    Outcome out;
    out.features = s.features;
    const auto content = terminated_content(response, vocab().terminator);
    if (!content) {
      out.valid = false;
      return out;
    }
    const int n = config().grid_size;
    int x = s.features[0], y = s.features[1];
    for (Token m : *content) {
      if (m == 0) y = std::max(0, y - 1);
      if (m == 1) y = std::min(n - 1, y + 1);
      if (m == 2) x = std::max(0, x - 1);
      if (m == 3) x = std::min(n - 1, x + 1);
    }
    out.features = {x, y};
    const auto& l = layouts_[s.task_id];
    out.success = x == l[2] && y == l[3];
    return out;
  }

 private:
  std::vector<std::array<int, 4>> layouts_;
};

class BanditChain final : public Environment {
 public:
  explicit BanditChain(EnvConfig c) : Environment(std::move(c)) {
    const auto& cfg = config();
    for (int task = 0; task < cfg.task_count; ++task) {
      Rng rng(derive_seed(cfg.seed, 0x42414e44ULL + task));
      std::vector<Token> arms;
      for (int d = 0; d < cfg.depth; ++d)
        arms.push_back(static_cast<Token>(rng() % cfg.arms));
      correct_.push_back(std::move(arms));
    }
  }

  Vocabulary vocab() const override {
    return Vocabulary(config().arms + 1, config().arms);
  }
  int max_response_len() const override { return 1; }

  int progress(const EnvState& s) const override { return s.features.at(0); }

 protected:
  std::vector<int> initial_features(int) const override { return {0}; }

  Outcome transition(const EnvState& s,
                     std::span<const Token> response) const override {
    Outcome out;
    out.features = s.features;
    if (response.size() != 1 || response[0] == vocab().terminator) {
      out.valid = false;
      return out;
    }
    const int level = s.features[0];
    if (response[0] == correct_[s.task_id][level]) {
      out.features[0] = level + 1;
      out.success = out.features[0] == config().depth;
    } else {
      out.failure = true;
    }
    return out;
  }

 private:
  std::vector<std::vector<Token>> correct_;
};

}  // namespace

std::unique_ptr<Environment> make_environment(const EnvConfig& config) {
  config.validate();
  switch (config.kind) {
    case EnvKind::key_chain: return std::make_unique<KeyChain>(config);
    case EnvKind::grid_fetch: return std::make_unique<GridFetch>(config);
    case EnvKind::bandit_chain: return std::make_unique<BanditChain>(config);
  }
  throw ConfigError("unknown env kind");
}

std::vector<std::vector<Token>> all_responses(const Environment& env) {
  const Vocabulary v = env.vocab();
  const int max_len = env.max_response_len();
  std::vector<std::vector<Token>> out;
  std::vector<Token> cur;
  auto rec = [&](auto&& self) -> void {
    for (Token y = 0; y < v.size; ++y) {
      cur.push_back(y);
      if (y == v.terminator || static_cast<int>(cur.size()) == max_len)
        out.push_back(cur);
      else
        self(self);
      cur.pop_back();
    }
  };
  rec(rec);
  return out;
}

std::optional<std::vector<std::vector<Token>>> find_success_path(
    const Environment& env, int task_id) {
  const auto responses = all_responses(env);
  // Breadth-first over (features, step) with parent pointers.
  struct Node {
    EnvState state;
    int parent;
    int response;
  };
  std::vector<Node> nodes{{env.reset(task_id), -1, -1}};
  std::map<std::vector<int>, bool> seen{{nodes[0].state.features, true}};
  for (std::size_t head = 0; head < nodes.size(); ++head) {
    if (nodes[head].state.done) continue;
    for (std::size_t r = 0; r < responses.size(); ++r) {
      const StepResult next = env.step(nodes[head].state, responses[r]);
      if (next.state.success) {
        std::vector<std::vector<Token>> path{responses[r]};
        for (int i = static_cast<int>(head); nodes[i].parent >= 0; i = nodes[i].parent)
          path.push_back(responses[nodes[i].response]);
        std::reverse(path.begin(), path.end());
        return path;
      }
      if (next.state.done || seen.count(next.state.features)) continue;
      seen[next.state.features] = true;
      nodes.push_back({next.state, static_cast<int>(head), static_cast<int>(r)});
    }
  }
  return std::nullopt;
}

std::vector<std::vector<Token>> advancing_responses(const Environment& env,
                                                    const EnvState& state) {
  std::vector<std::vector<Token>> out;
  for (const auto& r : all_responses(env)) {
    const StepResult next = env.step(state, r);
    if (next.state.success ||
        env.progress(next.state) > env.progress(state))
      out.push_back(r);
  }
  return out;
}

std::vector<std::vector<Token>> key_chain_keys(const Environment& env,
                                               int task_id) {
  const auto* kc = dynamic_cast<const KeyChain*>(&env);
  if (!kc) throw ConfigError("key_chain_keys requires a key-chain environment");
  return kc->keys(task_id);
}

}  // namespace aemlab
