#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "mhmr/pipeline.hpp"

using namespace mhmr;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
  int code = -1;
  std::string out;  // stdout and stderr
};

CliResult cli(const std::string& args) {
  const std::string cmd = std::string(MHMR_CLI_PATH) + " " + args + " 2>&1";
  CliResult r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "mhmr_cli_test";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    RunConfig rc = RunConfig::tiny();
    rc.train.max_steps = 30;
    rc.train.checkpoint_interval = 0;
    std::ofstream(dir_ / "tiny.json") << rc.to_json();
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static std::string p(const std::string& name) { return (dir_ / name).string(); }
  static fs::path dir_;
};

fs::path Cli::dir_;

}  // namespace

TEST_F(Cli, GenTrainEvalGreenPath) {
  ASSERT_EQ(cli("gen --config " + p("tiny.json") + " --count 8 --seed 1 --out " + p("d.bin")).code, 0);
  const CliResult t = cli("train --config " + p("tiny.json") + " --data " + p("d.bin") + " --out " + p("c.ckpt"));
  ASSERT_EQ(t.code, 0) << t.out;
  EXPECT_TRUE(fs::exists(p("c.ckpt.log.jsonl")));
  const CliResult e = cli("eval --checkpoint " + p("c.ckpt") + " --data " + p("d.bin") + " --out " + p("m.json"));
  ASSERT_EQ(e.code, 0) << e.out;
  const json m = json::parse(slurp(p("m.json")));
  EXPECT_TRUE(m.contains("f1"));
  EXPECT_TRUE(m.contains("recall"));
  EXPECT_NE(e.out.find("f1"), std::string::npos);
}

TEST_F(Cli, GenIsIdempotent) {
  ASSERT_EQ(cli("gen --config " + p("tiny.json") + " --count 4 --seed 2 --out " + p("a.bin")).code, 0);
  ASSERT_EQ(cli("gen --config " + p("tiny.json") + " --count 4 --seed 2 --out " + p("b.bin")).code, 0);
  EXPECT_EQ(slurp(p("a.bin")), slurp(p("b.bin")));
}

TEST_F(Cli, GradCheckPasses) {
  const CliResult r = cli("gradcheck --config " + p("tiny.json"));
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("max relative error"), std::string::npos);
}

TEST_F(Cli, HelpOnEverySubcommand) {
  for (const char* sub : {"gen", "train", "eval", "infer", "bench", "gradcheck"}) {
    const CliResult r = cli(std::string(sub) + " --help");
    EXPECT_EQ(r.code, 0) << sub;
    EXPECT_NE(r.out.find("--"), std::string::npos) << sub;
  }
  EXPECT_EQ(cli("--help").code, 0);
}

TEST_F(Cli, Errors) {
  EXPECT_NE(cli("gen --count 2 --out " + p("x.bin") + " --bogus").code, 0);
  EXPECT_NE(cli("").code, 0);
  const CliResult missing = cli("eval --checkpoint " + p("nope.ckpt") + " --data " + p("nope.bin"));
  EXPECT_EQ(missing.code, 3);
  EXPECT_NE(missing.out.find("error:"), std::string::npos);
  std::ofstream(p("bad.json")) << "{\"train\": {\"batch_size\": 0}}";
  EXPECT_EQ(cli("gen --config " + p("bad.json") + " --count 2 --out " + p("x.bin")).code, 5);
  std::ofstream(p("junk.bin")) << "not a dataset";
  ASSERT_EQ(cli("gen --config " + p("tiny.json") + " --count 2 --out " + p("e.bin")).code, 0);
  ASSERT_EQ(cli("train --config " + p("tiny.json") + " --data " + p("e.bin") + " --out " + p("e.ckpt")).code, 0);
  EXPECT_EQ(cli("eval --checkpoint " + p("e.ckpt") + " --data " + p("junk.bin")).code, 4);
}

TEST_F(Cli, InferOnEmptyScene) {
  ASSERT_EQ(cli("gen --config " + p("tiny.json") + " --count 2 --out " + p("f.bin")).code, 0);
  ASSERT_EQ(cli("train --config " + p("tiny.json") + " --data " + p("f.bin") + " --out " + p("f.ckpt")).code, 0);
  io::write_pfm(p("empty.pfm"), io::Image{32, 32, 3, std::vector<float>(32 * 32 * 3, 0.0f)});
  const CliResult r = cli("infer --checkpoint " + p("f.ckpt") + " --image " + p("empty.pfm") + " --out " + p("pred"));
  ASSERT_EQ(r.code, 0) << r.out;
  const json j = json::parse(slurp(fs::path(p("pred")) / "empty.json"));
  EXPECT_TRUE(j["people"].empty());
}

TEST_F(Cli, BenchWritesSchema) {
  const CliResult r = cli("bench --config " + p("tiny.json") + " --people 1 2 --count 3 --out " + p("bench.json"));
  ASSERT_EQ(r.code, 0) << r.out;
  const json j = json::parse(slurp(p("bench.json")));
  EXPECT_EQ(j["results"].size(), 2u);
  EXPECT_GT(j["parameter_count"].get<std::size_t>(), 0u);
}
