#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mmgrpo/io.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kCli = MMGRPO_CLI_PATH;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("mmgrpo_cli_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

int run(const std::string& args, const std::string& log = "/dev/null") {
  const std::string cmd = kCli + " " + args + " > " + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_config(const std::string& path, int steps, const std::string& extra = "") {
  std::ofstream out(path);
  out << R"({"version":1,"env":{"name":"chain-2","vocab":8},"policy":{"context_window":2},)"
      << R"("train":{"steps":)" << steps
      << R"(,"batch_size":4,"student_rollouts":12,"group_size":12,"eval_every":20})" << extra
      << "}";
}

}  // namespace

TEST_CASE("train runs are reproducible file for file") {
  TempDir dir;
  write_config(dir.file("cfg.json"), 40);
  REQUIRE(run("train --config " + dir.file("cfg.json") + " --seed 7 --out " + dir.file("a")) == 0);
  REQUIRE(run("train --config " + dir.file("cfg.json") + " --seed 7 --out " + dir.file("b")) == 0);
  CHECK(slurp(dir.file("a/metrics.csv")) == slurp(dir.file("b/metrics.csv")));
  CHECK(slurp(dir.file("a/steps.csv")) == slurp(dir.file("b/steps.csv")));
  CHECK(slurp(dir.file("a/checkpoint.json")) == slurp(dir.file("b/checkpoint.json")));
  CHECK(!slurp(dir.file("a/metrics.csv")).empty());

  const mmgrpo::RunManifest a = mmgrpo::load_manifest(dir.file("a/manifest.json"));
  const mmgrpo::RunManifest b = mmgrpo::load_manifest(dir.file("b/manifest.json"));
  CHECK(a.config_hash == b.config_hash);
  CHECK(a.status == "complete");
  CHECK(a.last_step == 40);
  CHECK(a.seed == 7);
}

TEST_CASE("another seed changes the metrics") {
  TempDir dir;
  write_config(dir.file("cfg.json"), 30);
  REQUIRE(run("train --config " + dir.file("cfg.json") + " --seed 1 --out " + dir.file("a")) == 0);
  REQUIRE(run("train --config " + dir.file("cfg.json") + " --seed 2 --out " + dir.file("b")) == 0);
  CHECK(slurp(dir.file("a/metrics.csv")) != slurp(dir.file("b/metrics.csv")));
}

TEST_CASE("invalid configs exit nonzero naming the field") {
  TempDir dir;
  {
    std::ofstream out(dir.file("bad.json"));
    out << R"({"version":1,"env":{"name":"chain-2"},"train":{"steps":5}})";
  }
  const std::string log = dir.file("stderr.txt");
  CHECK(run("train --config " + dir.file("bad.json") + " --out " + dir.file("x"), log) != 0);
  CHECK(slurp(log).find("train.group_size") != std::string::npos);
}

TEST_CASE("halted runs resume to a byte-identical history") {
  TempDir dir;
  write_config(dir.file("cfg.json"), 60);
  REQUIRE(run("train --config " + dir.file("cfg.json") + " --seed 3 --out " + dir.file("full")) ==
          0);
  REQUIRE(run("train --config " + dir.file("cfg.json") + " --seed 3 --out " + dir.file("part") +
              " --halt-after 30") == 0);
  const mmgrpo::RunManifest halted = mmgrpo::load_manifest(dir.file("part/manifest.json"));
  CHECK(halted.status == "interrupted");
  CHECK(halted.last_step == 30);
  REQUIRE(run("train --config " + dir.file("cfg.json") + " --seed 3 --out " + dir.file("part") +
              " --resume") == 0);
  const mmgrpo::RunManifest resumed = mmgrpo::load_manifest(dir.file("part/manifest.json"));
  CHECK(resumed.status == "complete");
  CHECK(resumed.last_step == 60);
  CHECK(slurp(dir.file("part/steps.csv")) == slurp(dir.file("full/steps.csv")));
  CHECK(slurp(dir.file("part/metrics.csv")) == slurp(dir.file("full/metrics.csv")));
  CHECK(slurp(dir.file("part/checkpoint.json")) == slurp(dir.file("full/checkpoint.json")));
}

TEST_CASE("resume refuses a different configuration") {
  TempDir dir;
  write_config(dir.file("cfg.json"), 20);
  REQUIRE(run("train --config " + dir.file("cfg.json") + " --seed 3 --out " + dir.file("r") +
              " --halt-after 10") == 0);
  write_config(dir.file("cfg2.json"), 21);
  CHECK(run("train --config " + dir.file("cfg2.json") + " --seed 3 --out " + dir.file("r") +
            " --resume") != 0);
}

TEST_CASE("rollout writes a parseable line-delimited log") {
  TempDir dir;
  write_config(dir.file("cfg.json"), 10);
  REQUIRE(run("train --config " + dir.file("cfg.json") + " --seed 5 --out " + dir.file("run")) ==
          0);
  REQUIRE(run("rollout --config " + dir.file("cfg.json") + " --checkpoint " +
              dir.file("run/checkpoint.json") + " -n 7 --out " + dir.file("t.jsonl")) == 0);
  const std::vector<mmgrpo::TrajectoryLogRecord> records =
      mmgrpo::load_trajectory_log(dir.file("t.jsonl"));
  REQUIRE(records.size() == 7);
  for (const mmgrpo::TrajectoryLogRecord& r : records) {
    CHECK(r.trajectory.status == mmgrpo::TrajStatus::complete);
    CHECK(r.trajectory.traces.size() == 2);
    CHECK(r.reward.has_value());
  }
}

TEST_CASE("rollout refuses a checkpoint that does not match the program") {
  TempDir dir;
  write_config(dir.file("cfg.json"), 10);
  REQUIRE(run("train --config " + dir.file("cfg.json") + " --seed 5 --out " + dir.file("run")) ==
          0);
  std::ofstream other(dir.file("other.json"));
  other << R"({"version":1,"env":{"name":"branch","vocab":8},)"
        << R"("train":{"steps":5,"group_size":12}})";
  other.close();
  CHECK(run("rollout --config " + dir.file("other.json") + " --checkpoint " +
            dir.file("run/checkpoint.json") + " -n 2 --out " + dir.file("x.jsonl")) != 0);
}

TEST_CASE("inspect-groups reproduces the three-group alignment from a crafted log") {
  TempDir dir;
  const std::string log = dir.file("report.txt");
  REQUIRE(run(std::string("inspect-groups --log ") + MMGRPO_GOLDEN_DIR +
              "/three_group_log.jsonl --group-size 3 --out " + dir.file("dump.jsonl"), log) == 0);
  const std::string report = slurp(log);
  CHECK(report.find("3 rollouts, 3 groups pre-padding, 3 after fill") != std::string::npos);
  CHECK(report.find("m1#0: pre=3 post=3") != std::string::npos);
  CHECK(report.find("m1#1: pre=3 post=3") != std::string::npos);
  CHECK(report.find("m2#0: pre=3 post=3") != std::string::npos);
  std::ifstream dump(dir.file("dump.jsonl"));
  std::string line;
  int lines = 0;
  while (std::getline(dump, line)) ++lines;
  CHECK(lines == 3);
}

TEST_CASE("inspect-groups handles empty and mixed-structure logs") {
  TempDir dir;
  {
    std::ofstream out(dir.file("empty.jsonl"));
  }
  const std::string log = dir.file("empty_report.txt");
  REQUIRE(run("inspect-groups --log " + dir.file("empty.jsonl") + " --group-size 2", log) == 0);
  CHECK(slurp(log).find("empty log") != std::string::npos);

  // counts {2,3,1} for one module: 3 groups pre-padding, truncate keeps 1
  {
    std::ofstream out(dir.file("mixed.jsonl"));
    const auto record = [](const std::vector<int>& outputs) {
      mmgrpo::Trajectory t;
      t.program_input_id = 0;
      t.status = mmgrpo::TrajStatus::complete;
      t.final_output = mmgrpo::StructuredValue{0};
      int pos = 0;
      for (int o : outputs) t.traces.push_back({"m1", {0}, {o}, pos++});
      return mmgrpo::trajectory_record_line(t, 1.0);
    };
    out << record({1, 2}) << "\n" << record({3, 4, 5}) << "\n" << record({6}) << "\n";
  }
  const std::string mixed_log = dir.file("mixed_report.txt");
  REQUIRE(run("inspect-groups --log " + dir.file("mixed.jsonl") +
              " --group-size 3 --padding truncate", mixed_log) == 0);
  const std::string report = slurp(mixed_log);
  CHECK(report.find("3 groups pre-padding, 1 after truncate") != std::string::npos);
}

TEST_CASE("verify passes clean and fails under gradient mutation") {
  TempDir dir;
  const std::string log = dir.file("verify.txt");
  CHECK(run("verify", log) == 0);
  const std::string clean = slurp(log);
  CHECK(clean.find("[PASS]") != std::string::npos);
  CHECK(clean.find("[FAIL]") == std::string::npos);
  CHECK(run("verify --mutate-gradient 0.5", log) != 0);
  CHECK(slurp(log).find("[FAIL]") != std::string::npos);
}

TEST_CASE("MMGRPO_LOG controls diagnostic verbosity") {
  TempDir dir;
  write_config(dir.file("cfg.json"), 5);
  const std::string base =
      "train --config " + dir.file("cfg.json") + " --seed 1 --out " + dir.file("v");
  const std::string log = dir.file("log.txt");
  REQUIRE(std::system(("MMGRPO_LOG=debug " + kCli + " " + base + " > " + log + " 2>&1").c_str()) ==
          0);
  CHECK(slurp(log).find("step 1 reward") != std::string::npos);
  REQUIRE(std::system(("MMGRPO_LOG=quiet " + kCli + " " + base + " > " + log + " 2>&1").c_str()) ==
          0);
  CHECK(slurp(log).find("step 1 reward") == std::string::npos);
}

TEST_CASE("better-together stage initializes from the given bank") {
  TempDir dir;
  write_config(dir.file("cfg.json"), 30);
  REQUIRE(run("train --config " + dir.file("cfg.json") + " --seed 8 --out " + dir.file("pre")) ==
          0);
  const std::string log = dir.file("bt.txt");
  REQUIRE(run("train --config " + dir.file("cfg.json") + " --seed 9 --out " + dir.file("bt") +
              " --stage better-together --init-bank " + dir.file("pre/checkpoint.json"), log) == 0);
  // the staged run starts from the pretrained bank: its reference checkpoint
  // equals the init bank rather than a fresh uniform bank
  CHECK(slurp(dir.file("bt/reference.json")) == slurp(dir.file("pre/checkpoint.json")));
}
