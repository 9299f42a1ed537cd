#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "aemlab/cli.hpp"
#include "aemlab/config.hpp"
#include "aemlab/trainer.hpp"

using namespace aemlab;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out, err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("aemlab_test_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Small, fast run.
const std::vector<std::string> kSmall{"--set", "env.task_count=4", "train.group_size=4",
                                      "train.prompts_per_step=2", "env.max_key_len=2",
                                      "env.key_alphabet=3"};

std::vector<std::string> with(std::vector<std::string> head, const std::vector<std::string>& tail) {
  head.insert(head.end(), tail.begin(), tail.end());
  return head;
}

}  // namespace

TEST_CASE("train with zero steps") {
  const fs::path dir = scratch("zero");
  const auto r = cli(with({"train", "--out", (dir / "run").string()},
                          with(kSmall, {"train.steps=0"})));
  REQUIRE(r.code == kExitOk);
  CHECK(r.out.find("steps=0") != std::string::npos);
  CHECK(slurp(dir / "run" / "metrics.jsonl").empty());
  const auto manifest = nlohmann::json::parse(slurp(dir / "run" / "manifest.json"));
  CHECK(manifest.at("command") == "train");
  for (const auto& o : manifest.at("outputs")) {
    const fs::path p = dir / "run" / o.at("path").get<std::string>();
    CHECK(fs::exists(p));
    CHECK(fs::file_size(p) == o.at("bytes").get<std::uintmax_t>());
  }
  CHECK(fs::exists(dir / "run" / "config.txt"));
  fs::remove_all(dir);
}

TEST_CASE("train is byte-deterministic and rejects bad configs") {
  const fs::path dir = scratch("det");
  const auto args = with(kSmall, {"train.steps=3", "train.aem_mode=aem"});
  REQUIRE(cli(with({"train", "--out", (dir / "a").string()}, args)).code == kExitOk);
  REQUIRE(cli(with({"train", "--out", (dir / "b").string()}, args)).code == kExitOk);
  const std::string a = slurp(dir / "a" / "metrics.jsonl");
  CHECK_FALSE(a.empty());
  CHECK(a == slurp(dir / "b" / "metrics.jsonl"));
  CHECK(read_metrics_log((dir / "a" / "metrics.jsonl").string()).size() == 3);

  auto bad = cli({"train", "--out", (dir / "c").string(), "--set", "train.group_size=1"});
  CHECK(bad.code == kExitInvalid);
  CHECK(bad.err.find("train.group_size") != std::string::npos);
  bad = cli({"train", "--out", (dir / "c").string(), "--set", "train.nonsense=1"});
  CHECK(bad.code == kExitInvalid);
  bad = cli({"train", "--out", (dir / "c").string(), "--config", (dir / "missing.txt").string()});
  CHECK(bad.code == kExitInvalid);
  CHECK(cli({"train"}).code == kExitInvalid);  // --out is required
  CHECK(cli({}).code == kExitInvalid);

  // config file plus override
  std::ofstream(dir / "cfg.txt") << "# small\nenv.task_count = 4\ntrain.steps = 1\n";
  const auto r = cli({"train", "--out", (dir / "d").string(), "--config",
                      (dir / "cfg.txt").string(), "--set", "train.lr=0.25"});
  REQUIRE(r.code == kExitOk);
  const TrainConfig saved = load_train_config((dir / "d" / "config.txt").string());
  CHECK(saved.env.task_count == 4);
  CHECK(saved.steps == 1);
  CHECK(saved.lr == 0.25);
  fs::remove_all(dir);
}

TEST_CASE("verify exit codes") {
  const fs::path dir = scratch("verify");
  CHECK(cli({"verify", "--trials", "0"}).code == kExitOk);
  auto r = cli({"verify", "--kind", "resp", "--trials", "20", "--out", dir.string()});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("PASS") != std::string::npos);
  CHECK(fs::exists(dir / "verify_summary.json"));
  r = cli({"verify", "--kind", "resp", "--trials", "20", "--corrupt"});
  CHECK(r.code == kExitCheckFailed);
  CHECK(r.out.find("FAIL") != std::string::npos);
  CHECK(cli({"verify", "--kind", "nesting", "--trials", "5", "--corrupt"}).code ==
        kExitCheckFailed);
  CHECK(cli({"verify", "--kind", "bogus"}).code == kExitInvalid);
  fs::remove_all(dir);
}

TEST_CASE("ablate table matches an independent aggregation of the runs") {
  const fs::path dir = scratch("ablate");
  const auto r = cli(with({"ablate", "--out", dir.string(), "--variants", "off,aem", "--seeds",
                           "3,4"},
                          with(kSmall, {"train.steps=2"})));
  REQUIRE(r.code == kExitOk);
  std::istringstream table(slurp(dir / "table.csv"));
  std::string line;
  std::getline(table, line);
  CHECK(line == "variant,n_seeds,success_mean,success_std,reward_mean,reward_std");
  int rows = 0;
  while (std::getline(table, line)) {
    std::istringstream row(line);
    std::string variant, n, sm, ss, rm, rs;
    std::getline(row, variant, ',');
    std::getline(row, n, ',');
    std::getline(row, sm, ',');
    std::getline(row, ss, ',');
    std::getline(row, rm, ',');
    std::getline(row, rs, ',');
    CHECK(n == "2");
    std::vector<double> succ;
    for (const char* seed : {"seed_3", "seed_4"}) {
      const auto log = read_metrics_log((dir / variant / seed / "metrics.jsonl").string());
      REQUIRE(log.size() == 2);
      succ.push_back(log.back().success_rate);
    }
    const double mean = (succ[0] + succ[1]) / 2.0;
    const double sd = std::abs(succ[0] - succ[1]) / std::sqrt(2.0);
    CHECK(std::stod(sm) == doctest::Approx(mean).epsilon(1e-12));
    CHECK(std::stod(ss) == doctest::Approx(sd).epsilon(1e-12));
    ++rows;
  }
  CHECK(rows == 2);

  const fs::path one = scratch("ablate_one");
  REQUIRE(cli(with({"ablate", "--out", one.string(), "--variants", "aem", "--seeds", "0"},
                   with(kSmall, {"train.steps=1"})))
              .code == kExitOk);
  const std::string t = slurp(one / "table.csv");
  CHECK(std::count(t.begin(), t.end(), '\n') == 2);
  CHECK(cli({"ablate", "--out", one.string(), "--variants", "sideways"}).code == kExitInvalid);
  fs::remove_all(dir);
  fs::remove_all(one);
}

TEST_CASE("report aligns runs on step") {
  const fs::path dir = scratch("report");
  REQUIRE(cli(with({"train", "--out", (dir / "short").string()}, with(kSmall, {"train.steps=2"})))
              .code == kExitOk);
  REQUIRE(cli(with({"train", "--out", (dir / "long").string()}, with(kSmall, {"train.steps=4"})))
              .code == kExitOk);
  const auto r = cli({"report", (dir / "short").string(), (dir / "long").string(), "--out",
                      (dir / "rep").string()});
  REQUIRE(r.code == kExitOk);
  const std::string csv = slurp(dir / "rep" / "success.csv");
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "step,short,long");
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  REQUIRE(lines.size() == 4);
  CHECK(lines[3].rfind("4,,", 0) == 0);  // short run has no step 4
  CHECK(fs::exists(dir / "rep" / "entropy.csv"));
  CHECK(fs::exists(dir / "rep" / "mean_alpha.csv"));
  CHECK(fs::exists(dir / "rep" / "frac_positive.csv"));

  const auto empty = cli({"report", "--out", (dir / "none").string()});
  CHECK(empty.code == kExitOk);
  CHECK(empty.out.empty());
  CHECK_FALSE(fs::exists(dir / "none"));
  CHECK(cli({"report", (dir / "absent").string(), "--out", (dir / "x").string()}).code ==
        kExitInvalid);
  fs::remove_all(dir);
}

TEST_CASE("probe subcommands on a trained checkpoint") {
  const fs::path dir = scratch("probe");
  const auto cfg = with(kSmall, {"train.steps=2"});
  REQUIRE(cli(with({"train", "--out", (dir / "run").string()}, cfg)).code == kExitOk);
  const std::string ckpt = (dir / "run" / "checkpoints" / "step_000002.json").string();
  REQUIRE(fs::exists(ckpt));
  auto r = cli(with({"probe-consistency", "--checkpoint", ckpt, "--states", "6", "--k", "8",
                     "--out", (dir / "cons").string()},
                    cfg));
  CHECK(r.code == kExitOk);
  CHECK(fs::exists(dir / "cons" / "scatter.csv"));
  r = cli(with({"probe-doob", "--checkpoint", ckpt, "--samples", "2000"}, cfg));
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("PASS") != std::string::npos);
  // checkpoint built for a different vocabulary
  r = cli({"probe-doob", "--checkpoint", ckpt, "--set", "env.key_alphabet=5"});
  CHECK(r.code == kExitInvalid);
  r = cli({"probe-transition", "--baseline", (dir / "run").string(), "--aem",
           (dir / "run").string()});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("early_entropy_gap=0") != std::string::npos);
  fs::remove_all(dir);
}

#ifdef AEMLAB_CLI_PATH
TEST_CASE("installed binary exit codes") {
  const std::string bin = AEMLAB_CLI_PATH;
  auto status = [](const std::string& cmd) {
    const int raw = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  };
  CHECK(status(bin + " --version") == 0);
  CHECK(status(bin + " verify --trials 0") == kExitOk);
  CHECK(status(bin + " verify --kind resp --trials 5 --corrupt") == kExitCheckFailed);
  CHECK(status(bin + " train") == kExitInvalid);
}
#endif
