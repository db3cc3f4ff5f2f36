#include <gtest/gtest.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "calq/key_value.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

const fs::path& work_dir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("calq_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Result run(const std::string& args) {
  const auto log = work_dir() / "last_output.txt";
  const std::string cmd = std::string("\"") + CALQ_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  Result r;
  const int status = std::system(cmd.c_str());
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.out = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string p(const std::string& name) { return "\"" + (work_dir() / name).string() + "\""; }

std::string graph_args() {
  return " --train " + p("kg/train.txt") + " --valid " + p("kg/valid.txt") + " --test " + p("kg/test.txt");
}

// Small synthetic graph and model shared by the pipeline tests.
void ensure_pipeline_inputs() {
  static bool done = false;
  if (done) return;
  ASSERT_EQ(run("synth --entities 60 --relations 4 --seed 1 --out " + p("kg")).code, 0);
  ASSERT_EQ(run("train-kgc" + graph_args() + " --dim 4 --epochs 3 --out " + p("model.bin")).code, 0);
  done = true;
}

}  // namespace

TEST(Cli, HelpExitsZero) {
  auto r = run("--help");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("build-tensor"), std::string::npos);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("ingest --train " + p("does_not_exist.txt")).code, 2);
  EXPECT_EQ(run("no-such-command").code, 2);
  ensure_pipeline_inputs();
  EXPECT_EQ(run("gen-queries" + graph_args() + " --structures 7p --out " + p("bad.q")).code, 2);
  EXPECT_EQ(run("calibrate" + graph_args() + " --model " + p("model.bin") + " --mode S99 --out " + p("bad.w")).code,
            2);
}

TEST(Cli, S12WritesNoAdaptationMatrix) {
  ensure_pipeline_inputs();
  auto r = run("calibrate" + graph_args() + " --model " + p("model.bin") + " --mode S12 --out " + p("s12.w"));
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_FALSE(fs::exists(work_dir() / "s12.w"));
}

TEST(Cli, FullPipelineWithManifests) {
  ensure_pipeline_inputs();
  auto r = run("ingest" + graph_args() + " --out " + p("vocab"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(work_dir() / "vocab" / "entities.tsv"));
  r = run("gen-queries" + graph_args() + " --structures train --split train --count 20 --out " + p("train.q"));
  ASSERT_EQ(r.code, 0) << r.out;
  r = run("gen-queries" + graph_args() + " --structures 1p,2in --count 10 --out " + p("test.q"));
  ASSERT_EQ(r.code, 0) << r.out;
  r = run("calibrate" + graph_args() + " --model " + p("model.bin") + " --queries " + p("train.q") +
          " --mode S1234 --lr 0.01 --batch 10 --out " + p("w.bin"));
  ASSERT_EQ(r.code, 0) << r.out;
  r = run("build-tensor" + graph_args() + " --model " + p("model.bin") + " --w " + p("w.bin") +
          " --mode S1234 --epsilon 0.001 --out " + p("x.cqt"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("nnz"), std::string::npos);
  r = run("eval" + graph_args() + " --tensor " + p("x.cqt") + " --queries " + p("test.q") + " --report " + p("report.txt"));
  ASSERT_EQ(r.code, 0) << r.out;
  std::istringstream lines(r.out);
  std::string header;
  std::getline(lines, header);
  std::istringstream tokens(header);
  std::size_t n = 0;
  for (std::string t; tokens >> t;) ++n;
  EXPECT_EQ(n, 16u) << r.out;
  auto kv = calq::KeyValueFile::load(work_dir() / "report.txt");
  EXPECT_EQ(kv.get_int("1p.queries"), 10);
  EXPECT_EQ(kv.get_int("2in.queries"), 10);
  for (const char* a : {"model.bin", "w.bin", "x.cqt", "train.q", "test.q", "report.txt"}) {
    const auto m = work_dir() / (std::string(a) + ".manifest");
    ASSERT_TRUE(fs::exists(m)) << a;
    EXPECT_TRUE(calq::KeyValueFile::load(m).has("command")) << a;
  }
  // Provider path without a tensor.
  r = run("eval --model " + p("model.bin") + " --w " + p("w.bin") + " --mode S1234" + graph_args() + " --queries " +
          p("test.q"));
  EXPECT_EQ(r.code, 0) << r.out;
}

TEST(Cli, ArtifactsAreIdempotent) {
  ensure_pipeline_inputs();
  for (const char* out : {"a.cqt", "b.cqt"}) {
    ASSERT_EQ(run("build-tensor" + graph_args() + " --model " + p("model.bin") + " --mode S12 --epsilon 0.01 --out " +
                  p(out))
                  .code,
              0);
  }
  EXPECT_EQ(slurp(work_dir() / "a.cqt"), slurp(work_dir() / "b.cqt"));
  ASSERT_EQ(run("train-kgc" + graph_args() + " --dim 4 --epochs 3 --out " + p("model2.bin")).code, 0);
  EXPECT_EQ(slurp(work_dir() / "model.bin"), slurp(work_dir() / "model2.bin"));
}

TEST(Cli, EpsilonSweepIsMonotone) {
  ensure_pipeline_inputs();
  std::uint64_t prev = 0;
  for (const char* eps : {"0.05", "0.01", "0.001", "0.0001"}) {
    auto r = run("build-tensor" + graph_args() + " --model " + p("model.bin") + " --mode S12 --epsilon " + eps +
                 " --out " + p("sweep.cqt"));
    ASSERT_EQ(r.code, 0) << r.out;
    auto kv = calq::KeyValueFile::load(work_dir() / "sweep.cqt.manifest");
    auto nnz = static_cast<std::uint64_t>(*kv.get_int("nnz"));
    EXPECT_GE(nnz, prev) << eps;
    prev = nnz;
  }
}

TEST(Cli, MemoryCapFailsWithSuggestion) {
  ensure_pipeline_inputs();
  auto r = run("build-tensor" + graph_args() + " --model " + p("model.bin") +
               " --mode S12 --epsilon 0.0001 --memory-cap 5000 --out " + p("capped.cqt"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("epsilon"), std::string::npos) << r.out;
}
