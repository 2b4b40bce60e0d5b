#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "grain/io.hpp"

using namespace grain;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() / ("grain_io_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_minimal(const fs::path& dir) {
  write_file(dir / "meta.tsv", "name\ttiny\nnum_classes\t2\nnum_features\t1\n");
  write_file(dir / "features.tsv", "0\t0.5\n1\t-1.25\n");
  write_file(dir / "labels.tsv", "0\t0\n1\t1\n");
  write_file(dir / "edges.tsv", "0\t1\n");
  write_file(dir / "splits.tsv", "0\ttrain\n1\tval\n");
}

// Returns the ParseError message or "" when loading succeeds.
std::string load_error(const fs::path& dir) {
  try {
    load_dataset(dir);
  } catch (const ParseError& e) {
    return e.what();
  }
  return "";
}

struct CommandResult {
  int status = 0;
  std::string output;
};

CommandResult run_cli(const std::string& args) {
  const std::string cmd = std::string(GRAIN_CLI_PATH) + " " + args + " 2>&1";
  CommandResult r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return {-1, ""};
  char buf[4096];
  while (std::size_t got = std::fread(buf, 1, sizeof(buf), pipe)) r.output.append(buf, got);
  const int raw = ::pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

}  // namespace

TEST(Load, MinimalTwoNodeDataset) {
  TempDir t;
  write_minimal(t.path());
  const LabeledDataset ds = load_dataset(t.path());
  EXPECT_EQ(ds.n_nodes(), 2u);
  EXPECT_EQ(ds.n_features(), 1u);
  EXPECT_EQ(ds.num_classes, 2);
  EXPECT_EQ(ds.name, "tiny");
  EXPECT_EQ(ds.features(1, 0), -1.25);
  EXPECT_EQ(ds.graph.undirected_edge_count(), 1u);
  EXPECT_EQ(ds.splits.source, "file");
  EXPECT_TRUE(ds.splits.test.empty());
}

TEST(Load, DuplicateEdgesCollapse) {
  TempDir t;
  write_minimal(t.path());
  fs::remove(t / "splits.tsv");
  write_file(t / "edges.tsv", "0\t1\n1\t0\n0\t1\n1\t1\n");
  const LabeledDataset ds = load_dataset(t.path());
  EXPECT_EQ(ds.graph.nnz(), 2u);
}

TEST(Load, ErrorsNameFileAndLine) {
  {
    TempDir t;
    write_minimal(t.path());
    write_file(t / "features.tsv", "0\t0.5\n1\t-1.25\t3.0\n");
    const std::string e = load_error(t.path());
    EXPECT_NE(e.find("features.tsv:2:"), std::string::npos) << e;
  }
  {
    TempDir t;
    write_minimal(t.path());
    write_file(t / "labels.tsv", "0\t0\n1\t2\n");
    const std::string e = load_error(t.path());
    EXPECT_NE(e.find("labels.tsv:2:"), std::string::npos) << e;
  }
  {
    TempDir t;
    write_minimal(t.path());
    write_file(t / "splits.tsv", "0\ttrain\n1\tval\n0\ttest\n");
    const std::string e = load_error(t.path());
    EXPECT_NE(e.find("splits.tsv:3:"), std::string::npos) << e;
  }
  {
    TempDir t;
    write_minimal(t.path());
    fs::remove(t / "edges.tsv");
    const std::string e = load_error(t.path());
    EXPECT_NE(e.find("edges.tsv"), std::string::npos) << e;
  }
  {
    TempDir t;
    write_minimal(t.path());
    write_file(t / "edges.tsv", "0\t1\n0\tx\n");
    const std::string e = load_error(t.path());
    EXPECT_NE(e.find("edges.tsv:2:"), std::string::npos) << e;
  }
}

TEST(Load, RoundTripThroughWriter) {
  const auto ds = generate_synthetic({.n = 60, .seed = 8});
  TempDir t;
  write_dataset(ds, t.path());
  const auto back = load_dataset(t.path());
  EXPECT_EQ(back.graph, ds.graph);
  EXPECT_EQ(back.features, ds.features);
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(back.splits.train, ds.splits.train);
  EXPECT_EQ(back.splits.test, ds.splits.test);
}

TEST(Load, GeneratedSplitWhenFileAbsent) {
  const auto ds = generate_synthetic({.n = 60, .seed = 8});
  TempDir t;
  write_dataset(ds, t.path(), false);
  const auto a = load_dataset(t.path(), 3), b = load_dataset(t.path(), 3);
  EXPECT_EQ(a.splits, b.splits);
  EXPECT_NE(a.splits.source, "file");
}

TEST(Convert, ToyInput) {
  TempDir t;
  write_file(t / "toy.content", "p9 1 0 1 theory\npA 0 1 1 agents\np3 1 1 0 theory\n");
  write_file(t / "toy.cites", "p9 pA\np3 p9\n");
  const ConversionReport r = convert_content_cites(t / "toy.content", t / "toy.cites", t / "out", "toy");
  EXPECT_EQ(r.nodes, 3u);
  EXPECT_EQ(r.features, 3u);
  EXPECT_EQ(r.classes, 2u);
  EXPECT_EQ(r.edges_written, 2u);
  EXPECT_EQ(r.dropped_unknown, 0u);
  EXPECT_EQ(r.class_names, std::vector<std::string>({"agents", "theory"}));
  const auto ds = load_dataset(t / "out");
  EXPECT_EQ(ds.labels, std::vector<int>({1, 0, 1}));  // ids in first-appearance order
  EXPECT_EQ(ds.features(1, 1), 1.0);
  EXPECT_EQ(ds.graph.undirected_edge_count(), 2u);
  EXPECT_EQ(ds.name, "toy");
}

TEST(Convert, UnknownCitationDropped) {
  TempDir t;
  write_file(t / "c", "a 1 x\nb 0 y\nc 1 x\n");
  write_file(t / "e", "a b\nb zz\nb c\n");
  const auto r = convert_content_cites(t / "c", t / "e", t / "out");
  EXPECT_EQ(r.dropped_unknown, 1u);
  EXPECT_EQ(r.edges_written, 2u);
}

TEST(Convert, RaggedWidthRejected) {
  TempDir t;
  write_file(t / "c", "a 1 0 x\nb 0 y\n");
  write_file(t / "e", "a b\n");
  try {
    convert_content_cites(t / "c", t / "e", t / "out");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
}

TEST(Convert, ByteIdentical) {
  TempDir t;
  write_file(t / "c", "x1 0.5 1e-3 b\nx2 2 0 a\nx3 0 0 b\nx4 1 1 c\n");
  write_file(t / "e", "x1 x2\nx2 x3\nx4 x1\nx4 x4\n");
  convert_content_cites(t / "c", t / "e", t / "o1");
  convert_content_cites(t / "c", t / "e", t / "o2");
  for (const char* f : {"meta.tsv", "features.tsv", "labels.tsv", "edges.tsv"})
    EXPECT_EQ(read_file(t / "o1" / f), read_file(t / "o2" / f)) << f;
  EXPECT_NO_THROW(load_dataset(t / "o1"));
}

TEST(RunConfig, UnknownKeyRejectedWithPath) {
  TempDir t;
  write_file(t / "cfg.json", R"({"rl.steps": 10, "td3.gama": 0.5})");
  try {
    load_run_config(t / "cfg.json");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("cfg.json"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("td3.gama"), std::string::npos);
  }
  write_file(t / "ok.json", R"({"rl.steps": 10, "gnn.alpha": 0.5})");
  const TrainConfig c = load_run_config(t / "ok.json");
  EXPECT_EQ(c.rl_steps, 10u);
  EXPECT_EQ(c.alpha, 0.5);
}

TEST(Cli, GenSynthThenHomophily) {
  TempDir t;
  const auto gen = run_cli("gen-synth --h 1.0 --n 100 --seed 2 --out " + (t / "d").string());
  ASSERT_EQ(gen.status, 0) << gen.output;
  const auto h = run_cli("homophily --data " + (t / "d").string());
  ASSERT_EQ(h.status, 0) << h.output;
  EXPECT_EQ(h.output, "1.000\n");
}

TEST(Cli, UsageErrorsExitNonzero) {
  EXPECT_NE(run_cli("frobnicate").status, 0);
  EXPECT_NE(run_cli("homophily --bogus-flag").status, 0);
  const auto missing = run_cli("homophily --data /nonexistent/dir");
  EXPECT_NE(missing.status, 0);
  EXPECT_NE(missing.output.find("error:"), std::string::npos);
}

TEST(Cli, ConvertPrintsSummary) {
  TempDir t;
  write_file(t / "c", "a 1 x\nb 0 y\nc 1 x\n");
  write_file(t / "e", "a b\nb zz\n");
  const auto r = run_cli("convert --content " + (t / "c").string() + " --cites " + (t / "e").string() + " --out " +
                         (t / "o").string());
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_NE(r.output.find("nodes=3"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("dropped_unknown=1"), std::string::npos) << r.output;
}

TEST(Cli, TrainIsDeterministic) {
  TempDir t;
  ASSERT_EQ(run_cli("gen-synth --h 0.3 --n 80 --seed 5 --out " + (t / "d").string()).status, 0);
  write_file(t / "cfg.json",
             R"({"rl.steps": 60, "td3.batch_size": 16, "td3.hidden": 8, "fitness.epochs": 3, "gnn.epochs": 10, "gnn.hidden": 8})");
  for (const char* run : {"r1", "r2"}) {
    const auto r = run_cli("train --data " + (t / "d").string() + " --config " + (t / "cfg.json").string() +
                           " --seed 3 --out " + (t / run).string());
    ASSERT_EQ(r.status, 0) << r.output;
  }
  auto strip = [](nlohmann::json j) {
    j.erase("wall_clock_seconds");
    return j.dump();
  };
  EXPECT_EQ(strip(nlohmann::json::parse(read_file(t / "r1" / "report.json"))),
            strip(nlohmann::json::parse(read_file(t / "r2" / "report.json"))));
  EXPECT_EQ(read_file(t / "r1" / "actions.tsv"), read_file(t / "r2" / "actions.tsv"));
  EXPECT_EQ(read_file(t / "r1" / "embedding.tsv"), read_file(t / "r2" / "embedding.tsv"));
}

TEST(Cli, GradcheckPasses) {
  const auto r = run_cli("gradcheck --instances 3");
  EXPECT_EQ(r.status, 0) << r.output;
  EXPECT_NE(r.output.find("granular_propagate"), std::string::npos);
}
