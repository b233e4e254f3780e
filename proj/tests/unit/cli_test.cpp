#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace {

namespace fs = std::filesystem;

struct CliRun {
  int exit_code = -1;
  std::string out;
};

CliRun run_cli(const std::string& args) {
  const std::string cmd = std::string(NPIPG_CLI_PATH) + " " + args + " 2>&1";
  CliRun r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n = 0;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("npipg_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

TEST_F(Cli, SolvesGeneratedProblem) {
  ASSERT_EQ(run_cli("gen oscmass --n 6 --seed 3 --out " + path("p.json")).exit_code, 0);
  const CliRun r = run_cli("solve " + path("p.json") + " --trace " + path("t.csv") + " --solution " +
                        path("s.json"));
  EXPECT_EQ(r.exit_code, 0) << r.out;
  EXPECT_NE(r.out.find("status: Converged"), std::string::npos);
  const std::string trace = slurp(path("t.csv"));
  EXPECT_EQ(trace.rfind("iter,step,residual,elapsed_ms\n", 0), 0u);
  const auto sol = nlohmann::json::parse(slurp(path("s.json")));
  EXPECT_TRUE(sol.contains("z"));
  EXPECT_TRUE(sol.contains("w"));
  EXPECT_TRUE(sol["kkt"].contains("primal"));
  EXPECT_TRUE(sol["kkt"].contains("dual"));
}

TEST_F(Cli, TruncatedJsonExitsWithInputError) {
  ASSERT_EQ(run_cli("gen oscmass --n 3 --out " + path("p.json")).exit_code, 0);
  const std::string text = slurp(path("p.json"));
  std::ofstream(path("bad.json")) << text.substr(0, text.size() / 2);
  const CliRun r = run_cli("solve " + path("bad.json"));
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.out.find("line"), std::string::npos);
}

TEST_F(Cli, MissingFileAndBadFlagsExitWithInputError) {
  EXPECT_EQ(run_cli("solve " + path("none.json")).exit_code, 2);
  EXPECT_EQ(run_cli("bench oscmass --n 0").exit_code, 2);
  EXPECT_EQ(run_cli("bench pdg --rinit 1,2").exit_code, 2);
}

TEST_F(Cli, IterationCapExitsWithThree) {
  ASSERT_EQ(run_cli("gen oscmass --n 6 --out " + path("p.json")).exit_code, 0);
  const CliRun r = run_cli("solve " + path("p.json") + " --max-iters 3");
  EXPECT_EQ(r.exit_code, 3);
  EXPECT_NE(r.out.find("status: MaxIters"), std::string::npos);
}

TEST_F(Cli, PurePipgAndNewtonAgree) {
  ASSERT_EQ(run_cli("gen oscmass --n 20 --seed 1 --out " + path("p.json")).exit_code, 0);
  ASSERT_EQ(run_cli("solve " + path("p.json") + " --solution " + path("n.json")).exit_code, 0);
  ASSERT_EQ(run_cli("solve " + path("p.json") + " --pure-pipg --solution " + path("p2.json")).exit_code, 0);
  const auto a = nlohmann::json::parse(slurp(path("n.json")))["z"].get<std::vector<double>>();
  const auto b = nlohmann::json::parse(slurp(path("p2.json")))["z"].get<std::vector<double>>();
  ASSERT_EQ(a.size(), b.size());
  double d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) d += (a[k] - b[k]) * (a[k] - b[k]);
  EXPECT_LE(std::sqrt(d), 1e-6);
}

TEST_F(Cli, BenchOscmassCsvIsReproducible) {
  const std::string args = "bench oscmass --n 10 --umax 1 --trials 2 --seed 5 --out ";
  ASSERT_EQ(run_cli(args + path("a.csv")).exit_code, 0);
  ASSERT_EQ(run_cli(args + path("b.csv")).exit_code, 0);
  const std::string a = slurp(path("a.csv"));
  EXPECT_EQ(a, slurp(path("b.csv")));
  EXPECT_EQ(a.rfind("trial,seed,status,", 0), 0u);
  EXPECT_NE(a.find("\nmean,"), std::string::npos);
  EXPECT_NE(a.find("\nmedian,"), std::string::npos);
}

TEST_F(Cli, BenchPdgWritesTraces) {
  const CliRun r = run_cli("bench pdg --horizon 10 --rinit-y-sweep 0:500:500 --out " + path("s.csv") +
                        " --trace-dir " + path("traces"));
  EXPECT_EQ(r.exit_code, 0) << r.out;
  EXPECT_TRUE(fs::exists(path("traces/pdg_y00000.csv")));
  EXPECT_TRUE(fs::exists(path("traces/pdg_y00500.csv")));
  const std::string csv = slurp(path("s.csv"));
  EXPECT_EQ(csv.rfind("point,rinit_x,rinit_y,rinit_z,status,", 0), 0u);
}

}  // namespace
