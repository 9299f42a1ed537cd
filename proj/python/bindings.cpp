#include <sstream>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "aemlab/aem.hpp"
#include "aemlab/cli.hpp"
#include "aemlab/config.hpp"
#include "aemlab/errors.hpp"
#include "aemlab/geometry.hpp"
#include "aemlab/probes.hpp"
#include "aemlab/trainer.hpp"

namespace py = pybind11;
using namespace aemlab;

namespace {

// One single-turn trajectory per reward; enough for outcome estimators.
Group group_of_rewards(const std::vector<double>& rewards) {
  Group g;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    g.trajectories.emplace_back().steps.resize(1);
    g.spans.push_back({static_cast<int>(i), 0, 0, 0});
    g.rewards.push_back(rewards[i]);
  }
  return g;
}

std::vector<double> per_rollout(const AdvantageTable& t, std::size_t n) {
  std::vector<double> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(t.at({static_cast<int>(i), 0}));
  return out;
}

TrainConfig config_from_dict(const std::map<std::string, std::string>& kv) {
  TrainConfig c = train_config_from_key_values(kv);
  c.validate();
  return c;
}

py::dict metrics_dict(const StepMetrics& m) {
  py::dict d;
  d["step"] = m.step;
  d["mean_reward"] = m.mean_reward;
  d["success_rate"] = m.success_rate;
  d["policy_entropy_estimate"] = m.policy_entropy_estimate;
  d["mean_alpha"] = m.mean_alpha;
  d["frac_positive_advantage"] = m.frac_positive_advantage;
  d["loss_value"] = m.loss_value;
  d["exact_resp_entropy"] = m.exact_resp_entropy;
  d["groups_used"] = m.groups_used;
  d["masked_spans"] = m.masked_spans;
  return d;
}

}  // namespace

PYBIND11_MODULE(_aemlab, m) {
  m.doc() = "aemlab native core";
  m.attr("__version__") = version_tag();

  auto error = py::register_exception<Error>(m, "Error");
  py::register_exception<ConfigError>(m, "ConfigError", error);
  py::register_exception<ProtocolError>(m, "ProtocolError", error);
  py::register_exception<BudgetError>(m, "BudgetError", error);
  py::register_exception<LengthError>(m, "LengthError", error);
  py::register_exception<StatisticsError>(m, "StatisticsError", error);

  m.def("response_entropy_proxy",
        [](const std::vector<double>& e) { return response_entropy_proxy(e); },
        py::arg("token_entropies"));
  m.def(
      "population_alpha",
      [](const std::vector<double>& h_bar, double lam, double eps, double degenerate_range) {
        const auto p = population_alpha(h_bar, AemParams{lam, eps, degenerate_range});
        return py::make_tuple(p.alpha, p.degenerate);
      },
      py::arg("h_bar"), py::arg("lam") = 1.0, py::arg("eps") = 1e-8,
      py::arg("degenerate_range") = 0.1,
      "Modulation coefficients of one population; returns (alpha, degenerate).");

  m.def("grpo_advantages",
        [](const std::vector<double>& r) { return per_rollout(grpo_advantage(group_of_rewards(r)), r.size()); },
        py::arg("rewards"));
  m.def("rloo_advantages",
        [](const std::vector<double>& r) { return per_rollout(rloo_advantage(group_of_rewards(r)), r.size()); },
        py::arg("rewards"));

  m.def("entropy", [](const std::vector<double>& p) { return entropy(SimplexPoint(p)); },
        py::arg("probs"));
  m.def("natural_gradient",
        [](const std::vector<double>& p, const std::vector<double>& g) {
          return natural_gradient(SimplexPoint(p), g);
        },
        py::arg("probs"), py::arg("euclidean_grad"));
  m.def("resp_entropy_drift",
        [](const std::vector<double>& p, std::size_t a, double adv) {
          return resp_entropy_drift(SimplexPoint(p), a, adv);
        },
        py::arg("probs"), py::arg("response"), py::arg("advantage"));
  m.def("entropy_nesting_gaps",
        [](int trials, std::uint64_t seed) {
          Rng rng(seed);
          return entropy_nesting_gaps(trials, rng);
        },
        py::arg("trials"), py::arg("seed") = 0);

  m.def("config_keys", &config_keys);
  m.def("default_config", [] { return train_config_to_key_values(TrainConfig{}); });
  m.def(
      "train",
      [](const std::map<std::string, std::string>& kv, const std::string& out_dir) {
        const TrainConfig c = config_from_dict(kv);
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(c, out_dir);
        }
        py::list out;
        for (const auto& s : r.metrics) out.append(metrics_dict(s));
        return out;
      },
      py::arg("config") = std::map<std::string, std::string>{}, py::arg("out_dir") = "",
      "Runs one training job; `config` maps dotted keys to string values.");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Returns (exit_code, stdout, stderr).");
}
