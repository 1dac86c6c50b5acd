#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out;
};

Run run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + EFM_CLI_PATH + " " + args + " 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string out;
  char buf[4096];
  while (std::size_t got = fread(buf, 1, sizeof buf, pipe)) out.append(buf, got);
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("efm_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}

TEST_SUITE("cli") {

TEST_CASE("oracle constant") {
  const auto r = run("oracle constant --a 0.1 --b 1.9");
  CHECK(r.code == 0);
  CHECK(json::parse(r.out) == json{{"c", 0.27}});
  CHECK(json::parse(run("oracle clt --law constant").out)["variance"] == 2.0);
}

TEST_CASE("usage errors exit with 1") {
  CHECK(run("").code == 1);
  CHECK(run("detect").code == 1);
  CHECK(run("oracle constant --a 0.1 --b 1.9 --bogus").code == 1);
  CHECK(run("oracle nothing").code == 1);
  CHECK(run("oracle clt --law 't(4)'").code == 1);
  CHECK(run("simulate --config /nonexistent.json").code == 1);
  CHECK(run("--help").code == 0);
}

TEST_CASE("detect on a light-tailed panel flags nothing") {
  const auto d = scratch("detect");
  REQUIRE(run("generate --p 80 --n 120 --spikes 12,6 --law constant --seed 5 --out " + (d / "p.csv").string()).code == 0);
  const auto r = run("detect --input " + (d / "p.csv").string() + " --K 60 --o 8 --seed 3");
  REQUIRE(r.code == 0);
  const auto j = json::parse(r.out);
  CHECK(j["summary"]["f_hat"] == 0);
  CHECK(j["records"].size() == 8);

  REQUIRE(run("estimate --input " + (d / "p.csv").string() + " --K 60 --o 8 --out " + (d / "est").string()).code == 0);
  const auto est = json::parse(slurp(d / "est" / "estimate.json"));
  CHECK(est["Ma"]["r_hat"] == 2);
  CHECK(est["On"]["r_hat"] == 2);
  for (const char* f : {"effective_config.json", "scree.csv", "gaps.csv", "fluctuation.csv"})
    CHECK(fs::exists(d / "est" / f));
  fs::remove_all(d);
}

TEST_CASE("simulate is reproducible and honours seed precedence") {
  const auto d = scratch("sim");
  {
    std::ofstream c(d / "cfg.json");
    c << R"({"scenario": "cli", "model": {"p": 60, "spikes": [12, 6]}, "law": {"family": "t", "parameter": 4.3},
             "n": 80, "reps": 4, "magnification": {"K": 20, "o": 6}, "seed": 11})";
  }
  const std::string base = "simulate --config " + (d / "cfg.json").string();
  REQUIRE(run(base + " --out " + (d / "a").string()).code == 0);
  REQUIRE(run(base + " --threads 3 --out " + (d / "b").string()).code == 0);
  for (const char* f : {"records.csv", "summary.json", "scree.csv", "gaps.csv", "fluctuation.csv"})
    CHECK(slurp(d / "a" / f) == slurp(d / "b" / f));

  const auto eff = json::parse(slurp(d / "a" / "effective_config.json"));
  CHECK(eff["seed"] == 11);
  CHECK(eff["reps"] == 4);

  REQUIRE(run(base + " --out " + (d / "e").string(), "EFM_SEED=99").code == 0);
  CHECK(json::parse(slurp(d / "e" / "effective_config.json"))["seed"] == 99);
  REQUIRE(run(base + " --seed 7 --out " + (d / "f").string(), "EFM_SEED=99").code == 0);
  CHECK(json::parse(slurp(d / "f" / "effective_config.json"))["seed"] == 7);
  CHECK(slurp(d / "e" / "records.csv") != slurp(d / "a" / "records.csv"));

  CHECK(run(base + " --out " + (d / "g").string(), "EFM_SEED=abc").code == 1);
  fs::remove_all(d);
}

TEST_CASE("panel command writes a timeline") {
  const auto d = scratch("panel");
  REQUIRE(run("generate --p 30 --n 96 --spikes 20,10 --law constant --seed 2 --out " + (d / "x.csv").string()).code == 0);
  const auto r = run("panel --input " + (d / "x.csv").string() + " --window 48 --step 48 --K 30 --nu 5 --out " +
                     (d / "out").string());
  REQUIRE(r.code == 0);
  CHECK(r.out.rfind("window_start,window_end,r_on,r_ma\n", 0) == 0);
  CHECK(fs::exists(d / "out" / "windows" / "window_001.json"));
  CHECK(fs::exists(d / "out" / "effective_config.json"));
  fs::remove_all(d);
}

}
