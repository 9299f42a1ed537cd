#pragma once

// Autoregressive tabular softmax policy.
//
// A response at state s is a token sequence y_1..y_L drawn one token at a
// time from softmax(logits(s, y_<l)). Generation stops after the terminator
// token or when max_len tokens have been emitted (truncation is a complete
// response). Every (state, exact prefix) pair owns its own logit vector;
// pairs never written to behave as all-zero logits (uniform).
//
// All entropies and log-probabilities are in nats.

#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "aemlab/rng.hpp"

namespace aemlab {

using Token = std::int32_t;
using StateId = std::uint64_t;

struct Vocabulary {
  int size = 2;
  Token terminator = 1;

  Vocabulary() = default;
  Vocabulary(int size, Token terminator);  // throws ConfigError

  bool operator==(const Vocabulary&) const = default;
};

struct PolicyKey {
  StateId state = 0;
  std::vector<Token> prefix;

  auto operator<=>(const PolicyKey&) const = default;
  bool operator==(const PolicyKey&) const = default;
};

// Sparse map of logit vectors. Also the representation of parameter
// gradients, which touch only the visited (state, prefix) entries.
using LogitMap = std::map<PolicyKey, std::vector<double>>;

struct Response {
  std::vector<Token> tokens;
  std::vector<double> logprob;  // log p(y_l | s, y_<l), recorded at sampling
  std::vector<double> entropy;  // H_l of the conditional at position l

  std::size_t size() const { return tokens.size(); }
  bool operator==(const Response&) const = default;
};

class PolicyTable {
 public:
  PolicyTable() = default;
  PolicyTable(Vocabulary vocab, int max_len);

  const Vocabulary& vocab() const { return vocab_; }
  int max_len() const { return max_len_; }

  // Stored logits or nullptr when the entry is still at its zero default.
  const std::vector<double>* find(StateId state,
                                  std::span<const Token> prefix) const;

  // Inserts a zero vector on first access.
  std::vector<double>& logits(StateId state, std::span<const Token> prefix);

  const LogitMap& entries() const { return entries_; }
  LogitMap& entries() { return entries_; }

  // theta += scale * delta for every entry in delta.
  void add_scaled(const LogitMap& delta, double scale);

  bool operator==(const PolicyTable&) const = default;

 private:
  Vocabulary vocab_;
  int max_len_ = 1;
  LogitMap entries_;
};

// Numerically stable softmax with probabilities floored at the smallest
// normal double, so saturated logits still give a strictly positive vector.
std::vector<double> softmax(std::span<const double> logits);
std::vector<double> log_softmax(std::span<const double> logits);
double shannon_entropy(std::span<const double> probs);

// Conditional next-token distribution. Throws LengthError when
// prefix.size() >= max_len.
std::vector<double> token_distribution(const PolicyTable& policy,
                                       StateId state,
                                       std::span<const Token> prefix);
std::vector<double> token_log_distribution(const PolicyTable& policy,
                                           StateId state,
                                           std::span<const Token> prefix);

Response sample_response(const PolicyTable& policy, StateId state, Rng& rng);

// S(a|s) = -sum_l log p(y_l | s, y_<l), recomputed under `policy`.
double response_surprisal(const PolicyTable& policy, StateId state,
                          std::span<const Token> tokens);

// A response is complete when it ends with the terminator or has exactly
// max_len tokens.
bool is_complete_response(const PolicyTable& policy,
                          std::span<const Token> tokens);

inline constexpr std::size_t kDefaultEnumerationBudget = 1'000'000;

struct EnumeratedResponse {
  std::span<const Token> tokens;
  double probability = 0.0;
  double log_probability = 0.0;
  std::span<const double> token_entropies;
};

// Visits every complete response in the response tree of `state` once,
// pruning at the terminator. Throws BudgetError once more than `budget`
// responses would be visited.
void for_each_response(const PolicyTable& policy, StateId state,
                       const std::function<void(const EnumeratedResponse&)>& fn,
                       std::size_t budget = kDefaultEnumerationBudget);

// Exact H_resp(s) = E_a[S(a|s)] by enumeration.
double exact_response_entropy(const PolicyTable& policy, StateId state,
                              std::size_t budget = kDefaultEnumerationBudget);

// (1/K) sum_j S(a_j|s) over K sampled responses. Throws ConfigError if K < 1.
double mc_response_entropy(const PolicyTable& policy, StateId state, int k,
                           Rng& rng);

// Versioned checkpoint text (JSON).
std::string policy_to_text(const PolicyTable& policy);
PolicyTable policy_from_text(const std::string& text);
void save_policy(const PolicyTable& policy, const std::string& path);
PolicyTable load_policy(const std::string& path);

}  // namespace aemlab
