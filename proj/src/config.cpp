#include "aemlab/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "aemlab/errors.hpp"

namespace aemlab {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

template <class Int>
Int parse_int(const std::string& key, const std::string& v) {
  Int out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

template <class F>
auto with_key(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    if (what.rfind(key, 0) == 0) throw;
    throw ConfigError(key + ": " + what);
  }
}

struct Field {
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

#define AEMLAB_DOUBLE(KEY, MEMBER)                                                  \
  {KEY,                                                                             \
   {[](TrainConfig& c, const std::string& v) { c.MEMBER = parse_double(KEY, v); }, \
    [](const TrainConfig& c) { return format_double(c.MEMBER); }}}
#define AEMLAB_INT(KEY, MEMBER)                                                     \
  {KEY,                                                                             \
   {[](TrainConfig& c, const std::string& v) {                                      \
      c.MEMBER = parse_int<decltype(c.MEMBER)>(KEY, v);                             \
    },                                                                              \
    [](const TrainConfig& c) { return std::to_string(c.MEMBER); }}}
#define AEMLAB_BOOL(KEY, MEMBER)                                                  \
  {KEY,                                                                           \
   {[](TrainConfig& c, const std::string& v) { c.MEMBER = parse_bool(KEY, v); }, \
    [](const TrainConfig& c) { return std::string(c.MEMBER ? "true" : "false"); }}}
#define AEMLAB_ENUM(KEY, MEMBER, FROM)                                         \
  {KEY,                                                                        \
   {[](TrainConfig& c, const std::string& v) {                                 \
      c.MEMBER = with_key(KEY, [&] { return FROM(v); });                       \
    },                                                                         \
    [](const TrainConfig& c) { return to_string(c.MEMBER); }}}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      AEMLAB_ENUM("env.kind", env.kind, env_kind_from_string),
      AEMLAB_INT("env.task_count", env.task_count),
      AEMLAB_INT("env.horizon", env.horizon),
      AEMLAB_INT("env.seed", env.seed),
      AEMLAB_INT("env.keys_per_task", env.keys_per_task),
      AEMLAB_INT("env.max_key_len", env.max_key_len),
      AEMLAB_INT("env.key_alphabet", env.key_alphabet),
      AEMLAB_INT("env.grid_size", env.grid_size),
      AEMLAB_INT("env.arms", env.arms),
      AEMLAB_INT("env.depth", env.depth),
      AEMLAB_DOUBLE("reward.success", env.reward.success_reward),
      AEMLAB_DOUBLE("reward.failure", env.reward.failure_reward),
      AEMLAB_DOUBLE("reward.invalid_penalty", env.reward.invalid_penalty),
      AEMLAB_ENUM("train.estimator", estimator, estimator_from_string),
      AEMLAB_ENUM("train.aem_mode", aem_mode, aem_mode_from_string),
      AEMLAB_ENUM("train.loss", loss, loss_kind_from_string),
      AEMLAB_DOUBLE("train.clip_low", clip_low),
      AEMLAB_DOUBLE("train.clip_high", clip_high),
      AEMLAB_DOUBLE("train.kl_coef", kl_coef),
      AEMLAB_DOUBLE("train.entropy_coef", entropy_coef),
      AEMLAB_DOUBLE("train.lr", lr),
      AEMLAB_INT("train.group_size", group_size),
      AEMLAB_INT("train.prompts_per_step", prompts_per_step),
      AEMLAB_INT("train.steps", steps),
      AEMLAB_INT("train.epochs", epochs),
      AEMLAB_INT("train.seed", seed),
      AEMLAB_ENUM("train.group_filter", group_filter, group_filter_from_string),
      AEMLAB_ENUM("train.mask", mask, mask_mode_from_string),
      AEMLAB_BOOL("train.force_unit_alpha", force_unit_alpha),
      AEMLAB_INT("train.checkpoint_every", checkpoint_every),
      AEMLAB_INT("train.num_threads", num_threads),
      AEMLAB_BOOL("train.log_exact_entropy", log_exact_entropy),
      AEMLAB_BOOL("train.log_trajectories", log_trajectories),
      AEMLAB_DOUBLE("aem.lambda", aem.lambda),
      AEMLAB_DOUBLE("aem.epsilon", aem.epsilon),
      AEMLAB_DOUBLE("aem.degenerate_range", aem.degenerate_range),
  };
  return table;
}

#undef AEMLAB_DOUBLE
#undef AEMLAB_INT
#undef AEMLAB_BOOL
#undef AEMLAB_ENUM

}  // namespace

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(n) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(n) + ": empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

std::string emit_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw ConfigError("cannot format number");
  return std::string(buf, ptr);
}

TrainConfig train_config_from_key_values(const KeyValues& kv, TrainConfig base) {
  for (const auto& [key, value] : kv) {
    const auto it = fields().find(key);
    if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
    it->second.set(base, value);
  }
  return base;
}

KeyValues train_config_to_key_values(const TrainConfig& config) {
  KeyValues kv;
  for (const auto& [key, field] : fields()) kv[key] = field.get(config);
  return kv;
}

void apply_override(TrainConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override '" + assignment + "' is not key=value");
  config = train_config_from_key_values(
      {{trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1))}}, config);
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return train_config_from_key_values(parse_key_values(ss.str()));
}

void save_train_config(const TrainConfig& config, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config file " + path);
  out << emit_key_values(train_config_to_key_values(config));
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [key, field] : fields()) keys.push_back(key);
  return keys;
}

}  // namespace aemlab
