#pragma once

// Adaptive entropy modulation of response-level advantages.
//
// For every response span the mean token entropy H̄ serves as a predictable
// proxy of its surprisal. Within a normalization population (by default the
// group of all responses generated from one prompt) the proxies are min-max
// scaled to H̃ in [0, 1] and mapped through a self-calibrated exponential,
//
//   alpha = exp(-lambda * H̃) / (mean_pop exp(-lambda * H̃) + eps),
//
// so low-entropy responses are upweighted (alpha > 1) and high-entropy ones
// downweighted, with the population mean of alpha pinned just below 1. When
// the proxy range of a population is below `degenerate_range` every alpha is
// exactly 1. The modulated advantage is alpha * A_base, uniform over the
// tokens of the span.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "aemlab/advantage.hpp"
#include "aemlab/rollout.hpp"

namespace aemlab {

struct AemParams {
  double lambda = 1.0;
  double epsilon = 1e-8;
  double degenerate_range = 0.1;
};

// off: no modulation. aem: group population, lambda as configured.
// reverse: lambda -> -lambda. shuffle: standard alpha permuted within each
// group. traj_norm / batch_norm: population is one trajectory / the whole
// batch instead of the group.
enum class AemMode { off, aem, reverse, shuffle, traj_norm, batch_norm };
std::string to_string(AemMode m);
AemMode aem_mode_from_string(const std::string& s);

// Mean token entropy of a span. Throws ProtocolError on an empty span.
double response_entropy_proxy(std::span<const double> token_entropies);

struct MinMaxResult {
  std::vector<double> h_tilde;  // empty when degenerate
  bool degenerate = false;
};

MinMaxResult group_minmax_normalize(std::span<const double> h_bar,
                                    double epsilon,
                                    double degenerate_range = 0.1);

std::vector<double> modulation_coeffs(std::span<const double> h_tilde,
                                      double lambda, double epsilon);

struct PopulationAlpha {
  std::vector<double> h_tilde;
  std::vector<double> alpha;
  bool degenerate = false;
};

// Guard + min-max + self-calibration over one population.
PopulationAlpha population_alpha(std::span<const double> h_bar,
                                 const AemParams& params);

// out[i] = alpha[permutation[i]].
std::vector<double> permute(std::span<const double> alpha,
                            std::span<const std::size_t> permutation);

struct ModulationSet {
  SpanValues h_bar;
  SpanValues h_tilde;  // only spans of non-degenerate populations
  SpanValues alpha;
  double lambda = 1.0;
  double epsilon = 1e-8;
  // True when every population touching this group was degenerate.
  bool degenerate = false;
};

// One ModulationSet per group. `shuffle_seed` seeds the within-group
// permutation of the shuffle variant; other modes ignore it. Mode `off`
// yields alpha = 1 everywhere.
std::vector<ModulationSet> compute_modulation(const std::vector<Group>& batch,
                                              AemMode mode,
                                              const AemParams& params,
                                              std::uint64_t shuffle_seed = 0);

// A_AEM = alpha * A_base per span. Throws ProtocolError when a span of
// `base` has no coefficient.
AdvantageTable apply_modulation(const AdvantageTable& base,
                                const ModulationSet& modulation);

}  // namespace aemlab
