#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int code;
  std::string output;
};

CmdResult run(const std::string& args) {
  const std::string cmd = std::string(RELTR_CLI_PATH) + " " + args + " 2>&1";
  std::array<char, 4096> buf{};
  std::string output;
  FILE* pipe = popen(cmd.c_str(), "r");
  EXPECT_NE(pipe, nullptr);
  while (fgets(buf.data(), buf.size(), pipe)) output += buf.data();
  const int status = pclose(pipe);
  return {WEXITSTATUS(status), output};
}

fs::path temp_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("reltr_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

const std::string kTinyFlags =
    " --obj-classes 8 --rel-classes 6 --feature-dim 5 --train-scenes 10 --val-scenes 2"
    " --test-scenes 4 --triplets-per-scene 3 --h 8 --heads 2 --global-layers 1"
    " --rel-layers 1 --mem-slots 3 --embed-dim 12";

}  // namespace

TEST(Cli, HelpExitsZero) {
  EXPECT_EQ(run("--help").code, 0);
  EXPECT_EQ(run("train --help").code, 0);
}

TEST(Cli, UnknownCommandIsUsageError) {
  EXPECT_EQ(run("frobnicate").code, 1);
}

TEST(Cli, EvalWithoutCheckpointIsUsageError) {
  CmdResult r = run("eval --data /tmp --out /tmp/x");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("--checkpoint"), std::string::npos) << r.output;
}

TEST(Cli, UnknownFlagValueIsUsageError) {
  EXPECT_EQ(run("eval --data /tmp --checkpoint /none --out /tmp/x --split foo").code, 1);
}

TEST(Cli, GenDataIsDeterministic) {
  fs::path a = temp_dir("gen_a");
  fs::path b = temp_dir("gen_b");
  EXPECT_EQ(run("gen-data --seed 7 --out " + a.string() + kTinyFlags).code, 0);
  EXPECT_EQ(run("gen-data --seed 7 --out " + b.string() + kTinyFlags).code, 0);
  for (const char* f : {"train.jsonl", "val.jsonl", "test.jsonl", "manifest.json"}) {
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
    EXPECT_FALSE(slurp(a / f).empty()) << f;
  }
  ASSERT_EQ(run("gen-data --seed 8 --out " + b.string() + kTinyFlags).code, 0);
  EXPECT_NE(slurp(b / "train.jsonl"), slurp(a / "train.jsonl"));
}

TEST(Cli, GradCheckPassesAndExitsZero) {
  CmdResult r = run("grad-check --h 8 --heads 2 --mem-slots 2 --embed-dim 6 --n-triplets 2");
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("PASS"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("max_rel_err"), std::string::npos) << r.output;
}

TEST(Cli, MissingDataDirIsRuntimeError) {
  fs::path out = temp_dir("train_nodata");
  CmdResult r = run("train --data /nonexistent_dir_xyz --out " + out.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("error:"), std::string::npos) << r.output;
}

TEST(Cli, FullPipeline) {
  fs::path data = temp_dir("pipe_data");
  fs::path run1 = temp_dir("pipe_run1");
  fs::path run2 = temp_dir("pipe_run2");
  fs::path evald = temp_dir("pipe_eval");
  fs::path memd = temp_dir("pipe_mem");

  ASSERT_EQ(run("gen-data --seed 3 --out " + data.string() + kTinyFlags).code, 0);

  CmdResult tr = run("train --data " + data.string() + " --out " + run1.string() + kTinyFlags +
                     " --epochs 2 --seed 3");
  ASSERT_EQ(tr.code, 0) << tr.output;
  EXPECT_TRUE(fs::exists(run1 / "checkpoint"));
  EXPECT_TRUE(fs::exists(run1 / "trace"));
  EXPECT_TRUE(fs::exists(run1 / "config.echo"));

  CmdResult rt = run("retrain-classifier --data " + data.string() + " --checkpoint " +
                     (run1 / "checkpoint").string() + " --out " + run2.string() +
                     " --epochs 1 --seed 3");
  ASSERT_EQ(rt.code, 0) << rt.output;
  EXPECT_TRUE(fs::exists(run2 / "checkpoint"));

  CmdResult ev = run("eval --data " + data.string() + " --checkpoint " +
                     (run2 / "checkpoint").string() + " --out " + evald.string());
  ASSERT_EQ(ev.code, 0) << ev.output;
  EXPECT_TRUE(fs::exists(evald / "metrics.json"));
  EXPECT_TRUE(fs::exists(evald / "metrics.txt"));
  EXPECT_NE(ev.output.find("per-class accuracy"), std::string::npos) << ev.output;

  CmdResult mr = run("mem-report --data " + data.string() + " --checkpoint " +
                     (run1 / "checkpoint").string() + " --out " + memd.string());
  ASSERT_EQ(mr.code, 0) << mr.output;
  EXPECT_TRUE(fs::exists(memd / "mem_report.json"));
  EXPECT_NE(mr.output.find("spearman"), std::string::npos) << mr.output;
}

TEST(Cli, AblationFlagRoundTripsThroughCheckpoint) {
  fs::path data = temp_dir("abl_data");
  fs::path run1 = temp_dir("abl_run");
  fs::path memd = temp_dir("abl_mem");
  ASSERT_EQ(run("gen-data --seed 5 --out " + data.string() + kTinyFlags).code, 0);
  CmdResult tr = run("train --data " + data.string() + " --out " + run1.string() + kTinyFlags +
                     " --epochs 1 --ablate memory");
  ASSERT_EQ(tr.code, 0) << tr.output;
  EXPECT_NE(slurp(run1 / "config.echo").find("ablate_memory = true"), std::string::npos);

  // mem-report on a memory-ablated checkpoint is a runtime error.
  CmdResult mr = run("mem-report --data " + data.string() + " --checkpoint " +
                     (run1 / "checkpoint").string() + " --out " + memd.string());
  EXPECT_EQ(mr.code, 2);
}

TEST(Cli, ConfigFileAndFlagPrecedence) {
  fs::path data = temp_dir("cfg_data");
  fs::path cfg = fs::temp_directory_path() / "reltr_cli_cfg.conf";
  {
    std::ofstream out(cfg);
    out << "seed = 11\nobj_classes = 8\nrel_classes = 6\nfeature_dim = 5\n"
        << "train_scenes = 10\nval_scenes = 2\ntest_scenes = 4\ntriplets_per_scene = 3\n";
  }
  ASSERT_EQ(run("gen-data --config " + cfg.string() + " --seed 13 --out " + data.string()).code,
            0);
  // The flag wins over the file; the echoed config shows the effective seed.
  EXPECT_NE(slurp(data / "config.echo").find("seed = 13"), std::string::npos);
}

TEST(Cli, BadConfigFileNamesKeyAndLine) {
  fs::path cfg = fs::temp_directory_path() / "reltr_cli_bad.conf";
  {
    std::ofstream out(cfg);
    out << "h = 8\nbogus_key = 1\n";
  }
  CmdResult r = run("gen-data --config " + cfg.string() + " --out /tmp/reltr_cli_never");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("bogus_key"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find(":2"), std::string::npos) << r.output;
}
