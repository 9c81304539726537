#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "support.hpp"
#include "xai_triage/synthetic.hpp"
#include "xai_triage/xai_triage.hpp"

namespace fs = std::filesystem;
using namespace xai_triage;

namespace {

struct Outcome {
  int status = -1;
  std::string out;
  std::string err;
};

Outcome run(const std::string& args, const fs::path& scratch) {
  const fs::path out = scratch / "stdout.txt", err = scratch / "stderr.txt";
  const std::string cmd = std::string("\"") + XAI_TRIAGE_CLI + "\" " + args + " >\"" +
                          out.string() + "\" 2>\"" + err.string() + "\"";
  const int raw = std::system(cmd.c_str());
  Outcome o;
  o.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  o.out = detail::read_file_bytes(out.string());
  o.err = detail::read_file_bytes(err.string());
  return o;
}

const synthetic::WrittenCorpus& corpus() {
  static const synthetic::WrittenCorpus c = [] {
    synthetic::CorpusSpec spec;
    spec.train_counts = {10, 15, 40};
    spec.test_counts = {8, 8, 8};
    spec.seed = 11;
    spec.blur_fraction = 0.25;
    return synthetic::write_corpus(testing_support::scratch_dir("cli_corpus"), spec);
  }();
  return c;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

}  // namespace

TEST(Cli, SweepWritesOneRowPerThreshold) {
  const auto dir = testing_support::scratch_dir("cli_sweep");
  const Outcome o = run("sweep --model " + q(corpus().model) + " --manifest " + q(corpus().manifest) +
                            " --thresholds 0:50:5 --out " + q(dir / "o"),
                        dir);
  ASSERT_EQ(o.status, 0) << o.err;
  const std::string csv = detail::read_file_bytes((dir / "o" / "sweep.csv").string());
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 12);
  EXPECT_EQ(csv, o.out);
}

TEST(Cli, ExplainWritesHeatmapAndDump) {
  const auto dir = testing_support::scratch_dir("cli_explain");
  const fs::path image = corpus().manifest.parent_path() / "images" / "test_00000.ppm";
  const Outcome o = run("explain --model " + q(corpus().model) + " --image " + q(image) +
                            " --box 4,4,24,24 --out " + q(dir / "o"),
                        dir);
  ASSERT_EQ(o.status, 0) << o.err;
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir / "o")) {
    (void)e;
    ++files;
  }
  EXPECT_EQ(files, 2u);
  EXPECT_TRUE(fs::exists(dir / "o" / "test_00000.ppm"));
  const Tensor r = parse_relevance(detail::read_file_bytes((dir / "o" / "test_00000.relevance").string()));
  EXPECT_EQ(r.shape(), (Shape{1, 24, 24}));
  const auto j = nlohmann::json::parse(o.out);
  EXPECT_EQ(j["target"], j["prediction"]);
}

TEST(Cli, RetrainedHeadIsUsedByRun) {
  const auto dir = testing_support::scratch_dir("cli_retrain");
  const Outcome rt = run("retrain-head --model " + q(corpus().model) + " --manifest " +
                             q(corpus().manifest) + " --partitions 3 --emphasis broken=2 --out " +
                             q(dir / "r"),
                         dir);
  ASSERT_EQ(rt.status, 0) << rt.err;
  const auto summary = nlohmann::json::parse(rt.out);
  EXPECT_EQ(summary["train_shells"], 65);
  EXPECT_EQ(summary["partitions"], 3);
  EXPECT_EQ(summary["partition_size"], 30);

  const fs::path head = dir / "r" / "head.model";
  const Outcome ran = run("run --model " + q(head) + " --manifest " + q(corpus().manifest) +
                              " --out " + q(dir / "o"),
                          dir);
  ASSERT_EQ(ran.status, 0) << ran.err;
  const auto report = nlohmann::json::parse(detail::read_file_bytes((dir / "o" / "report.json").string()));
  EXPECT_EQ(report["aggregates"]["rows"], 24);
  EXPECT_EQ(report["aggregates"]["accuracy"]["per_class"], summary["after"]["per_class"]);
  EXPECT_EQ(detail::read_file_bytes((dir / "o" / "head.model").string()),
            detail::read_file_bytes(head.string()));
}

TEST(Cli, GateNeedsNoModel) {
  const auto dir = testing_support::scratch_dir("cli_gate");
  const Outcome o = run("gate --manifest " + q(corpus().manifest) + " --threshold 0", dir);
  ASSERT_EQ(o.status, 0) << o.err;
  const auto j = nlohmann::json::parse(o.out);
  EXPECT_EQ(j["kept"].size(), corpus().train + corpus().test);
  EXPECT_TRUE(j["discarded"].empty());
}

TEST(Cli, UsageErrorsExitTwoWithJson) {
  const auto dir = testing_support::scratch_dir("cli_usage");
  const Outcome o = run("run --no-such-flag", dir);
  EXPECT_EQ(o.status, 2);
  const auto j = nlohmann::json::parse(o.err);
  EXPECT_EQ(j["error"]["kind"], "usage");

  const Outcome bad = run("sweep --model " + q(corpus().model) + " --manifest " +
                              q(corpus().manifest) + " --thresholds 5:0:1 --out " + q(dir / "o"),
                          dir);
  EXPECT_NE(bad.status, 0);
  EXPECT_TRUE(nlohmann::json::parse(bad.err).contains("error"));

  const Outcome emph = run("retrain-head --model " + q(corpus().model) + " --manifest " +
                               q(corpus().manifest) + " --emphasis cracked=2 --out " + q(dir / "r"),
                           dir);
  EXPECT_NE(emph.status, 0);
  EXPECT_NE(emph.err.find("cracked"), std::string::npos);
}

TEST(Cli, MissingModelIsIoError) {
  const auto dir = testing_support::scratch_dir("cli_io");
  const Outcome o = run("run --model " + q(dir / "nope.model") + " --manifest " +
                            q(corpus().manifest) + " --out " + q(dir / "o"),
                        dir);
  EXPECT_EQ(o.status, 1);
  EXPECT_EQ(nlohmann::json::parse(o.err)["error"]["kind"], "io");
}
