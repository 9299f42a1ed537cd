#include "aemlab/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "aemlab/errors.hpp"

namespace aemlab {

namespace {

constexpr int kCheckpointVersion = 1;
constexpr const char* kCheckpointFormat = "aemlab-policy";

double log_sum_exp(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace

Vocabulary::Vocabulary(int size, Token terminator)
    : size(size), terminator(terminator) {
  if (size < 2) throw ConfigError("vocabulary size must be >= 2");
  if (terminator < 0 || terminator >= size)
    throw ConfigError("terminator id out of range");
}

PolicyTable::PolicyTable(Vocabulary vocab, int max_len)
    : vocab_(vocab), max_len_(max_len) {
  if (max_len < 1) throw ConfigError("max_len must be >= 1");
}

const std::vector<double>* PolicyTable::find(
    StateId state, std::span<const Token> prefix) const {
  const PolicyKey key{state, {prefix.begin(), prefix.end()}};
  auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : &it->second;
}

std::vector<double>& PolicyTable::logits(StateId state,
                                         std::span<const Token> prefix) {
  if (static_cast<int>(prefix.size()) >= max_len_)
    throw LengthError("prefix length " + std::to_string(prefix.size()) +
                      " >= max_len " + std::to_string(max_len_));
  PolicyKey key{state, {prefix.begin(), prefix.end()}};
  auto [it, inserted] = entries_.try_emplace(std::move(key));
  if (inserted) it->second.assign(vocab_.size, 0.0);
  return it->second;
}

void PolicyTable::add_scaled(const LogitMap& delta, double scale) {
  for (const auto& [key, values] : delta) {
    auto& target = logits(key.state, key.prefix);
    for (std::size_t i = 0; i < target.size(); ++i) target[i] += scale * values[i];
  }
}

std::vector<double> softmax(std::span<const double> logits) {
  const double lse = log_sum_exp(logits);
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::max(std::exp(logits[i] - lse),
                    std::numeric_limits<double>::min());
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  const double lse = log_sum_exp(logits);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

double shannon_entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log(p);
  return std::max(h, 0.0);
}

namespace {

std::span<const double> logits_or_zero(const PolicyTable& policy,
                                       StateId state,
                                       std::span<const Token> prefix,
                                       std::vector<double>& scratch) {
  if (static_cast<int>(prefix.size()) >= policy.max_len())
    throw LengthError("prefix length " + std::to_string(prefix.size()) +
                      " >= max_len " + std::to_string(policy.max_len()));
  if (const auto* stored = policy.find(state, prefix)) return *stored;
  scratch.assign(policy.vocab().size, 0.0);
  return scratch;
}

}  // namespace

std::vector<double> token_distribution(const PolicyTable& policy,
                                       StateId state,
                                       std::span<const Token> prefix) {
  std::vector<double> scratch;
  return softmax(logits_or_zero(policy, state, prefix, scratch));
}

std::vector<double> token_log_distribution(const PolicyTable& policy,
                                           StateId state,
                                           std::span<const Token> prefix) {
  std::vector<double> scratch;
  return log_softmax(logits_or_zero(policy, state, prefix, scratch));
}

Response sample_response(const PolicyTable& policy, StateId state, Rng& rng) {
  Response r;
  const Token term = policy.vocab().terminator;
  while (static_cast<int>(r.tokens.size()) < policy.max_len()) {
    std::vector<double> scratch;
    const auto z = logits_or_zero(policy, state, r.tokens, scratch);
    const auto p = softmax(z);
    const auto logp = log_softmax(z);
    const auto y = static_cast<Token>(sample_categorical(p, rng));
    r.tokens.push_back(y);
    r.logprob.push_back(logp[y]);
    r.entropy.push_back(shannon_entropy(p));
    if (y == term) break;
  }
  return r;
}

double response_surprisal(const PolicyTable& policy, StateId state,
                          std::span<const Token> tokens) {
  double s = 0.0;
  for (std::size_t l = 0; l < tokens.size(); ++l) {
    const auto logp = token_log_distribution(policy, state, tokens.first(l));
    const Token y = tokens[l];
    if (y < 0 || y >= policy.vocab().size)
      throw ProtocolError("token index out of vocabulary");
    s -= logp[y];
  }
  return s;
}

bool is_complete_response(const PolicyTable& policy,
                          std::span<const Token> tokens) {
  if (tokens.empty()) return false;
  if (static_cast<int>(tokens.size()) > policy.max_len()) return false;
  return tokens.back() == policy.vocab().terminator ||
         static_cast<int>(tokens.size()) == policy.max_len();
}

void for_each_response(const PolicyTable& policy, StateId state,
                       const std::function<void(const EnumeratedResponse&)>& fn,
                       std::size_t budget) {
  const int vsize = policy.vocab().size;
  const Token term = policy.vocab().terminator;
  std::vector<Token> tokens;
  std::vector<double> entropies;
  std::size_t visited = 0;

  // Depth-first over the response tree; each frame carries the prefix's
  // probability and log-probability.
  std::function<void(double, double)> descend = [&](double prob, double logprob) {
    const auto logp = token_log_distribution(policy, state, tokens);
    const auto p = softmax(std::span<const double>(logp));
    entropies.push_back(shannon_entropy(p));
    for (Token y = 0; y < vsize; ++y) {
      tokens.push_back(y);
      const double child_prob = prob * p[y];
      const double child_logprob = logprob + logp[y];
      if (y == term || static_cast<int>(tokens.size()) == policy.max_len()) {
        if (++visited > budget)
          throw BudgetError("response enumeration exceeds budget of " +
                            std::to_string(budget) + " paths");
        fn(EnumeratedResponse{tokens, child_prob, child_logprob, entropies});
      } else {
        descend(child_prob, child_logprob);
      }
      tokens.pop_back();
    }
    entropies.pop_back();
  };
  descend(1.0, 0.0);
}

double exact_response_entropy(const PolicyTable& policy, StateId state,
                              std::size_t budget) {
  double h = 0.0;
  for_each_response(
      policy, state,
      [&](const EnumeratedResponse& r) { h -= r.probability * r.log_probability; },
      budget);
  return h;
}

double mc_response_entropy(const PolicyTable& policy, StateId state, int k,
                           Rng& rng) {
  if (k < 1) throw ConfigError("sample count K must be >= 1");
  double total = 0.0;
  for (int j = 0; j < k; ++j) {
    const Response r = sample_response(policy, state, rng);
    for (double lp : r.logprob) total -= lp;
  }
  return total / k;
}

std::string policy_to_text(const PolicyTable& policy) {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["vocab_size"] = policy.vocab().size;
  j["terminator"] = policy.vocab().terminator;
  j["max_len"] = policy.max_len();
  auto& entries = j["entries"] = nlohmann::json::array();
  for (const auto& [key, logits] : policy.entries()) {
    entries.push_back({{"state", key.state},
                       {"prefix", key.prefix},
                       {"logits", logits}});
  }
  return j.dump(1) + "\n";
}

PolicyTable policy_from_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed policy checkpoint: ") + e.what());
  }
  if (j.value("format", "") != kCheckpointFormat)
    throw ConfigError("not a policy checkpoint");
  if (j.value("version", 0) != kCheckpointVersion)
    throw ConfigError("unsupported checkpoint version");
  PolicyTable policy(Vocabulary(j.at("vocab_size").get<int>(),
                                j.at("terminator").get<Token>()),
                     j.at("max_len").get<int>());
  for (const auto& e : j.at("entries")) {
    auto prefix = e.at("prefix").get<std::vector<Token>>();
    auto values = e.at("logits").get<std::vector<double>>();
    if (static_cast<int>(values.size()) != policy.vocab().size)
      throw ConfigError("checkpoint logit vector has wrong length");
    policy.logits(e.at("state").get<StateId>(), prefix) = std::move(values);
  }
  return policy;
}

void save_policy(const PolicyTable& policy, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write checkpoint " + path);
  out << policy_to_text(policy);
}

PolicyTable load_policy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read checkpoint " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return policy_from_text(ss.str());
}

}  // namespace aemlab
