#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "test_support.hpp"

using trajformer::testing::temp_path;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
};

CliResult run(const std::string& args) {
  const std::string cmd = std::string(TRAJFORMER_CLI) + " " + args + " 2>/dev/null";
  CliResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string config_file() {
  const auto path = temp_path("cli-config.json");
  std::ofstream(path) << R"({
    "model": {"d_model": 16, "n_heads": 2, "d_ff": 32, "max_seq": 32},
    "train": {"batch_size": 8, "seq_len": 24, "epochs": 1, "lr": 0.003, "seed": 2},
    "synthetic": {"n_traj": 30, "points_per_traj": 24, "seed": 6}
  })";
  return path.string();
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    cfg_ = config_file();
    data_ = temp_path("cli.jsonl").string();
    ckpt_ = temp_path("cli.ckpt").string();
    ASSERT_EQ(run("synth --config " + cfg_ + " --out " + data_).code, 0);
    const CliResult t = run("train --config " + cfg_ + " --data " + data_ + " --out " + ckpt_ +
                      " --metrics " + temp_path("cli-metrics.csv").string());
    ASSERT_EQ(t.code, 0) << t.out;
    train_out_ = t.out;
  }

  static std::string cfg_, data_, ckpt_, train_out_;
};

std::string Cli::cfg_, Cli::data_, Cli::ckpt_, Cli::train_out_;

TEST_F(Cli, SynthWritesOneLinePerTrajectory) {
  const std::string text = read_file(data_);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 30);
}

TEST_F(Cli, TrainReportsCheckpointAndMetrics) {
  const auto j = nlohmann::json::parse(train_out_);
  EXPECT_EQ(j.at("checkpoint").get<std::string>(), ckpt_);
  EXPECT_GT(j.at("steps").get<int>(), 0);
  EXPECT_TRUE(std::filesystem::exists(ckpt_ + ".norm.json"));
  const std::string csv = read_file(temp_path("cli-metrics.csv"));
  EXPECT_EQ(csv.rfind("epoch,split,objective,loss", 0), 0u);
}

TEST_F(Cli, TrainingIsReproducible) {
  const auto other = temp_path("cli-again.ckpt").string();
  const CliResult t = run("train --config " + cfg_ + " --data " + data_ + " --out " + other);
  ASSERT_EQ(t.code, 0);
  EXPECT_EQ(nlohmann::json::parse(t.out).at("hash"), nlohmann::json::parse(train_out_).at("hash"));
  EXPECT_EQ(read_file(other), read_file(ckpt_));
}

TEST_F(Cli, EvalFormats) {
  const CliResult j = run("eval --checkpoint " + ckpt_ + " --data " + data_);
  ASSERT_EQ(j.code, 0);
  const auto report = nlohmann::json::parse(j.out);
  EXPECT_GT(report.at("ade_m").get<double>(), 0.0);
  EXPECT_EQ(report.at("n_traj").get<int>(), 30);
  const CliResult c = run("eval --checkpoint " + ckpt_ + " --data " + data_ + " --format csv");
  ASSERT_EQ(c.code, 0);
  EXPECT_EQ(c.out.rfind("ade_m,fde_m,time_mae_s,n_points,n_traj,objective\n", 0), 0u);
  const CliResult r = run("eval --checkpoint " + ckpt_ + " --data " + data_ + " --mode rollout --horizon 3");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(nlohmann::json::parse(r.out).at("objective"), "rollout(3)");
  EXPECT_EQ(run("eval --checkpoint " + ckpt_ + " --data " + data_ + " --norm " + ckpt_ + ".norm.json").code, 0);
}

TEST_F(Cli, RolloutWritesPredictedContinuations) {
  const CliResult r = run("rollout --checkpoint " + ckpt_ + " --data " + data_ + " --prefix-len 10 --horizon 4");
  ASSERT_EQ(r.code, 0);
  std::istringstream lines(r.out), source(read_file(data_));
  std::string line, src;
  std::size_t n = 0;
  while (std::getline(lines, line) && std::getline(source, src)) {
    const auto j = nlohmann::json::parse(line);
    const auto prefix_end = nlohmann::json::parse(src).at("points")[9][2].get<std::int64_t>();
    ASSERT_EQ(j.at("points").size(), 4u);
    EXPECT_GT(j.at("points")[0][2].get<std::int64_t>(), prefix_end);
    ++n;
  }
  EXPECT_EQ(n, 30u);
}

TEST_F(Cli, SynthFromFlags) {
  const auto out = temp_path("flags.jsonl");
  ASSERT_EQ(run("synth --n-traj 100 --seed 7 --out " + out.string()).code, 0);
  const std::string text = read_file(out);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 100);
}

TEST_F(Cli, DivergentTrainingExitsWithNumericCode) {
  const CliResult r = run("train --config " + cfg_ + " --data " + data_ + " --lr 1e300 --epochs 5 --out " +
                          temp_path("nan.ckpt").string());
  EXPECT_EQ(r.code, 3);
}

TEST_F(Cli, ErrorsMapToExitCodes) {
  const auto norm = temp_path("shifted-norm.json");
  auto j = nlohmann::json::parse(read_file(ckpt_ + ".norm.json"));
  j["center_lat"] = j["center_lat"].get<double>() + 1.0;
  std::ofstream(norm) << j.dump();
  EXPECT_EQ(run("eval --checkpoint " + ckpt_ + " --data " + data_ + " --norm " + norm.string()).code, 2);
  EXPECT_EQ(run("eval --checkpoint " + temp_path("none.ckpt").string()).code, 2);
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("eval --checkpoint " + ckpt_ + " --mode beam").code, 1);
  const auto bad = temp_path("bad-config.json");
  std::ofstream(bad) << R"({"model": {"d_model": 16, "wings": 2}})";
  EXPECT_EQ(run("train --config " + bad.string() + " --out " + temp_path("x.ckpt").string()).code, 1);
}

}  // namespace
