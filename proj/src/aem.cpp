#include "aemlab/aem.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "aemlab/errors.hpp"
#include "aemlab/rng.hpp"

namespace aemlab {

std::string to_string(AemMode m) {
  switch (m) {
    case AemMode::off: return "off";
    case AemMode::aem: return "aem";
    case AemMode::reverse: return "reverse";
    case AemMode::shuffle: return "shuffle";
    case AemMode::traj_norm: return "traj_norm";
    case AemMode::batch_norm: return "batch_norm";
  }
  return "unknown";
}

AemMode aem_mode_from_string(const std::string& s) {
  for (AemMode m : {AemMode::off, AemMode::aem, AemMode::reverse, AemMode::shuffle,
                    AemMode::traj_norm, AemMode::batch_norm})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown aem mode '" + s + "'");
}

double response_entropy_proxy(std::span<const double> token_entropies) {
  if (token_entropies.empty())
    throw ProtocolError("entropy proxy of an empty span");
  double sum = 0.0;
  for (double h : token_entropies) sum += h;
  return sum / static_cast<double>(token_entropies.size());
}

MinMaxResult group_minmax_normalize(std::span<const double> h_bar,
                                    double epsilon, double degenerate_range) {
  MinMaxResult out;
  if (h_bar.empty()) {
    out.degenerate = true;
    return out;
  }
  const auto [lo_it, hi_it] = std::minmax_element(h_bar.begin(), h_bar.end());
  const double lo = *lo_it, hi = *hi_it;
  if (hi - lo < degenerate_range) {
    out.degenerate = true;
    return out;
  }
  out.h_tilde.reserve(h_bar.size());
  for (double h : h_bar) out.h_tilde.push_back((h - lo) / (hi - lo + epsilon));
  return out;
}

std::vector<double> modulation_coeffs(std::span<const double> h_tilde,
                                      double lambda, double epsilon) {
  std::vector<double> alpha;
  alpha.reserve(h_tilde.size());
  for (double h : h_tilde) alpha.push_back(std::exp(-lambda * h));
  double sum = 0.0;
  for (double a : alpha) sum += a;
  const double mean = sum / static_cast<double>(alpha.size());
  for (double& a : alpha) a = a / (mean + epsilon);
  return alpha;
}

PopulationAlpha population_alpha(std::span<const double> h_bar,
                                 const AemParams& params) {
  PopulationAlpha out;
  auto mm = group_minmax_normalize(h_bar, params.epsilon, params.degenerate_range);
  out.degenerate = mm.degenerate;
  if (mm.degenerate) {
    out.alpha.assign(h_bar.size(), 1.0);
    return out;
  }
  out.alpha = modulation_coeffs(mm.h_tilde, params.lambda, params.epsilon);
  out.h_tilde = std::move(mm.h_tilde);
  return out;
}

std::vector<double> permute(std::span<const double> alpha,
                            std::span<const std::size_t> permutation) {
  if (permutation.size() != alpha.size())
    throw ProtocolError("permutation size mismatch");
  std::vector<double> out(alpha.size());
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    if (permutation[i] >= alpha.size()) throw ProtocolError("permutation index out of range");
    out[i] = alpha[permutation[i]];
  }
  return out;
}

namespace {

struct SpanRef {
  std::size_t group;
  SpanKey key;
};

// Evaluates one population and scatters its results into the per-group
// sets; returns whether it was degenerate.
bool scatter_population(const std::vector<SpanRef>& members,
                        const std::vector<double>& h_bar,
                        const AemParams& params,
                        std::vector<ModulationSet>& sets) {
  const auto pop = population_alpha(h_bar, params);
  for (std::size_t k = 0; k < members.size(); ++k) {
    auto& set = sets[members[k].group];
    // Members arrive in key order, so appending with an end hint is O(1).
    set.alpha.insert_or_assign(set.alpha.end(), members[k].key, pop.alpha[k]);
    if (!pop.degenerate)
      set.h_tilde.insert_or_assign(set.h_tilde.end(), members[k].key, pop.h_tilde[k]);
  }
  return pop.degenerate;
}

std::vector<std::size_t> seeded_permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    std::swap(perm[i - 1], perm[std::min(j, i - 1)]);
  }
  return perm;
}

}  // namespace

std::vector<ModulationSet> compute_modulation(const std::vector<Group>& batch,
                                              AemMode mode,
                                              const AemParams& params,
                                              std::uint64_t shuffle_seed) {
  AemParams effective = params;
  if (mode == AemMode::reverse) effective.lambda = -params.lambda;

  std::vector<ModulationSet> sets(batch.size());
  std::vector<std::vector<double>> proxies(batch.size());
  for (std::size_t g = 0; g < batch.size(); ++g) {
    sets[g].lambda = effective.lambda;
    sets[g].epsilon = effective.epsilon;
    sets[g].degenerate = true;
    proxies[g].reserve(batch[g].spans.size());
    sets[g].h_bar.reserve(batch[g].spans.size());
    sets[g].alpha.reserve(batch[g].spans.size());
    for (const auto& span : batch[g].spans) {
      const double h = response_entropy_proxy(batch[g].span_entropies(span));
      proxies[g].push_back(h);
      sets[g].h_bar.insert_or_assign(sets[g].h_bar.end(), span.key(), h);
    }
  }

  auto population_of = [&](std::size_t g, auto&& keep) {
    std::vector<SpanRef> members;
    std::vector<double> h_bar;
    members.reserve(batch[g].spans.size());
    h_bar.reserve(batch[g].spans.size());
    for (std::size_t k = 0; k < batch[g].spans.size(); ++k) {
      const auto& span = batch[g].spans[k];
      if (!keep(span)) continue;
      members.push_back({g, span.key()});
      h_bar.push_back(proxies[g][k]);
    }
    return std::make_pair(std::move(members), std::move(h_bar));
  };

  switch (mode) {
    case AemMode::off:
      for (std::size_t g = 0; g < batch.size(); ++g)
        for (const auto& span : batch[g].spans)
          sets[g].alpha.insert_or_assign(sets[g].alpha.end(), span.key(), 1.0);
      break;
    case AemMode::aem:
    case AemMode::reverse:
    case AemMode::shuffle:
      for (std::size_t g = 0; g < batch.size(); ++g) {
        auto [members, h_bar] = population_of(g, [](const ResponseSpan&) { return true; });
        sets[g].degenerate = scatter_population(members, h_bar, effective, sets);
        if (mode == AemMode::shuffle) {
          Rng rng(derive_seed(shuffle_seed, g));
          std::vector<double> alpha;
          for (const auto& m : members) alpha.push_back(sets[g].alpha.at(m.key));
          const auto shuffled = permute(alpha, seeded_permutation(alpha.size(), rng));
          for (std::size_t k = 0; k < members.size(); ++k)
            sets[g].alpha[members[k].key] = shuffled[k];
        }
      }
      break;
    case AemMode::traj_norm:
      for (std::size_t g = 0; g < batch.size(); ++g) {
        for (std::size_t i = 0; i < batch[g].trajectories.size(); ++i) {
          auto [members, h_bar] = population_of(g, [i](const ResponseSpan& s) {
            return s.rollout_index == static_cast<int>(i);
          });
          if (members.empty()) continue;
          const bool degenerate = scatter_population(members, h_bar, effective, sets);
          sets[g].degenerate = sets[g].degenerate && degenerate;
        }
      }
      break;
    case AemMode::batch_norm: {
      std::vector<SpanRef> members;
      std::vector<double> h_bar;
      for (std::size_t g = 0; g < batch.size(); ++g) {
        auto [m, h] = population_of(g, [](const ResponseSpan&) { return true; });
        members.insert(members.end(), m.begin(), m.end());
        h_bar.insert(h_bar.end(), h.begin(), h.end());
      }
      const bool degenerate = scatter_population(members, h_bar, effective, sets);
      for (auto& set : sets) set.degenerate = degenerate;
      break;
    }
  }
  if (mode == AemMode::off)
    for (auto& set : sets) set.degenerate = true;
  return sets;
}

AdvantageTable apply_modulation(const AdvantageTable& base,
                                const ModulationSet& modulation) {
  AdvantageTable out;
  out.estimator = base.estimator;
  out.values.reserve(base.values.size());
  auto it = modulation.alpha.begin();
  for (const auto& [key, a] : base.values) {
    // Both maps are sorted; walk them together and fall back to a lookup.
    if (it == modulation.alpha.end() || it->first != key) it = modulation.alpha.find(key);
    if (it == modulation.alpha.end())
      throw ProtocolError("no modulation coefficient for span (" +
                          std::to_string(key.rollout) + ", " +
                          std::to_string(key.turn) + ")");
    out.values.emplace_hint(out.values.end(), key, it->second * a);
    ++it;
  }
  return out;
}

}  // namespace aemlab
