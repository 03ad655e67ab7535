#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <string>

#include "ddsm/io.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
};

Outcome cli(const std::string& args) {
  const std::string cmd = std::string(DDSM_CLI_PATH) + " " + args + " 2>/dev/null";
  FILE* p = popen(cmd.c_str(), "r");
  Outcome o;
  if (!p) return o;
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) o.out.append(buf.data(), n);
  const int status = pclose(p);
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return o;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ddsm_test_cli_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
  EXPECT_EQ(cli("gen-data").code, 2);
  EXPECT_EQ(cli("--help").code, 0);
}

TEST(Cli, BadConfigExitsTwo) {
  const auto dir = scratch("config");
  fs::create_directories(dir);
  ddsm::write_file((dir / "bad.json").string(), R"({"data": {"unknown": 1}})");
  EXPECT_EQ(cli("run --config " + (dir / "bad.json").string()).code, 2);
  ddsm::write_file((dir / "broken.json").string(), "{");
  EXPECT_EQ(cli("run --config " + (dir / "broken.json").string()).code, 2);
  EXPECT_EQ(cli("gen-data --out " + (dir / "d").string() + " --scenario 9").code, 2);
  fs::remove_all(dir);
}

TEST(Cli, MissingDataExitsFour) {
  EXPECT_EQ(cli("train-fnn --data " + scratch("nodata").string() + " --out x.eitp").code, 4);
  EXPECT_EQ(cli("run --config /nonexistent/cfg.json").code, 4);
}

TEST(Cli, GradcheckPasses) {
  const auto o = cli("gradcheck");
  EXPECT_EQ(o.code, 0);
  EXPECT_EQ(o.out.find("FAIL"), std::string::npos);
}

TEST(Cli, GenDataIsIdempotentAndPipelineRuns) {
  const auto dir = scratch("pipeline");
  const std::string common = " --count 3 --patterns 2 --grid 16 --seed 5";
  const auto a = cli("gen-data --out " + (dir / "a").string() + common);
  const auto b = cli("gen-data --out " + (dir / "b").string() + common);
  ASSERT_EQ(a.code, 0);
  ASSERT_EQ(b.code, 0);
  const auto digest = [](const std::string& s) { return s.substr(s.find("digest")); };
  EXPECT_EQ(digest(a.out), digest(b.out));

  const std::string data = (dir / "a").string(), ckpt = (dir / "m.eitp").string();
  ASSERT_EQ(cli("train-fnn --data " + data + " --out " + ckpt + " --iterations 3").code, 0);
  EXPECT_TRUE(fs::exists(ckpt + ".json"));
  ASSERT_EQ(cli("predict --checkpoint " + ckpt + " --data " + data + " --out " + (dir / "pred").string()).code, 0);
  const auto e = cli("eval --pred " + (dir / "pred").string() + " --data " + data + " --out " + (dir / "r.json").string());
  EXPECT_EQ(e.code, 0);
  EXPECT_NE(e.out.find("samples 3"), std::string::npos);
  ASSERT_EQ(cli("dsm --data " + data + " --out " + (dir / "dsm").string() + " --limit 1").code, 0);
  const auto field = fs::directory_iterator(dir / "dsm")->path().string();
  EXPECT_EQ(cli("render --field " + field + " --out " + (dir / "f.png").string()).code, 0);
  EXPECT_TRUE(fs::exists(dir / "f.png"));
  fs::remove_all(dir);
}
