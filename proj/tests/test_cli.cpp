#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "json.hpp"
#include "lcd/line_dataset.hpp"

namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
};

CliRun run(const std::string& args) {
  static int counter = 0;
  const fs::path capture = fs::temp_directory_path() / ("lcd_cli_out_" + std::to_string(::getpid()) + "_" +
                                                         std::to_string(counter++));
  const std::string cmd = std::string(LCD_CLI_PATH) + " " + args + " > " + capture.string() + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(capture);
  std::stringstream ss;
  ss << in.rdbuf();
  r.out = ss.str();
  fs::remove(capture);
  return r;
}

nlohmann::json last_json(const CliRun& r) {
  const auto pos = r.out.rfind('{');
  const auto line_start = r.out.rfind('\n', r.out.size() > 1 ? r.out.size() - 2 : 0);
  return nlohmann::json::parse(r.out.substr(line_start == std::string::npos ? 0 : line_start + 1 > pos ? pos : line_start + 1));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string s; std::getline(in, s);) n += !s.empty();
  return n;
}

class CliTest : public ::testing::Test {
 protected:
  static fs::path dir;
  static fs::path config;

  static void SetUpTestSuite() {
    dir = fs::temp_directory_path() / ("lcd_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    config = dir / "tiny.json";
    const nlohmann::json cfg = {
        {"seed", 3},
        {"synth", {{"scenes", 3}, {"views", 3}, {"width", 160}, {"height", 120}, {"focal", 131.25}, {"supersample", 1}}},
        {"extract", {{"detector", {{"min_length_px", 10.0}}}}},
        {"cluster",
         {{"d_geom", 16}, {"d_visual", 16}, {"d_model", 32}, {"d_h", 32}, {"n_layers", 1}, {"h_dot", 1}, {"h_add", 1},
          {"d_qk", 16}, {"d_ff", 32}, {"conv_channels1", 4}, {"conv_channels2", 4}, {"epochs", 2}, {"lr", 1e-3}}},
        {"descriptor",
         {{"d_geom", 16}, {"d_visual", 16}, {"d_model", 32}, {"n_layers", 1}, {"layer_h_dot", 1}, {"layer_h_add", 1},
          {"d_qk", 16}, {"d_ff", 32}, {"global_h_dot", 1}, {"global_h_add", 1}, {"global_d_qk", 16},
          {"d_global", 32}, {"d_fc", 32}, {"d_descriptor", 16}, {"epochs", 2}, {"steps_per_epoch", 2},
          {"triplets_per_step", 4}, {"validation_triplets", 10}}}};
    std::ofstream(config) << cfg.dump(2);
    ASSERT_EQ(run("synth --config " + config.string() + " --out " + (dir / "ds").string()).code, 0);
    ASSERT_EQ(run("extract --config " + config.string() + " --dataset " + (dir / "ds").string() + " --out " +
                  (dir / "lines.bin").string())
                  .code,
              0);
  }

  static void TearDownTestSuite() { fs::remove_all(dir); }

  static std::string cfg() { return " --config " + config.string(); }
};

fs::path CliTest::dir;
fs::path CliTest::config;

}  // namespace

TEST_F(CliTest, SynthWritesEveryFrameAndIsReproducible) {
  std::size_t pngs = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "ds")) pngs += e.path().extension() == ".png";
  EXPECT_EQ(pngs, 3u * 3u * 4u);
  const CliRun again = run("synth" + cfg() + " --out " + (dir / "ds2").string());
  ASSERT_EQ(again.code, 0);
  EXPECT_EQ(last_json(again)["frames"], 9);
  for (const auto& e : fs::recursive_directory_iterator(dir / "ds"))
    if (e.is_regular_file()) EXPECT_EQ(slurp(e.path()), slurp(dir / "ds2" / fs::relative(e.path(), dir / "ds")));
  fs::remove_all(dir / "ds2");
}

TEST_F(CliTest, ZeroScenesIsAConfigError) {
  const fs::path bad = dir / "zero.json";
  std::ofstream(bad) << R"({"synth": {"scenes": 0}})";
  EXPECT_EQ(run("synth --config " + bad.string() + " --out " + (dir / "none").string()).code, 2);
  std::ofstream(bad) << R"({"synth": {"scenes": 1}, "bogus": true})";
  EXPECT_EQ(run("synth --config " + bad.string() + " --out " + (dir / "none").string()).code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
}

TEST_F(CliTest, ExtractCapsAndIsDeterministic) {
  const lcd::LineDataset data = lcd::read_line_dataset(dir / "lines.bin");
  ASSERT_EQ(data.size(), 9u);
  std::size_t total = 0;
  for (const auto& f : data) {
    EXPECT_LE(f.lines.size(), 220u);
    total += f.lines.size();
  }
  EXPECT_GT(total, 0u);
  ASSERT_EQ(run("extract" + cfg() + " --dataset " + (dir / "ds").string() + " --out " + (dir / "again.bin").string()).code, 0);
  EXPECT_EQ(slurp(dir / "lines.bin"), slurp(dir / "again.bin"));
  EXPECT_EQ(run("extract" + cfg() + " --dataset " + (dir / "missing").string() + " --out " + (dir / "x.bin").string()).code, 3);
}

TEST_F(CliTest, ExtractReportsBrokenFramesWithoutAborting) {
  fs::copy(dir / "ds", dir / "broken", fs::copy_options::recursive);
  fs::remove(dir / "broken" / "scene_0000" / "frame_001_depth.png");
  const CliRun r = run("extract" + cfg() + " --dataset " + (dir / "broken").string() + " --out " + (dir / "b.bin").string());
  EXPECT_EQ(r.code, 3);
  const auto rep = last_json(r);
  EXPECT_EQ(rep["failed_frames"], 1);
  EXPECT_EQ(rep["frames"], 8);
  fs::remove_all(dir / "broken");
}

TEST_F(CliTest, ClusterTrainingResumesAndLogsPerEpoch) {
  const std::string base = "train-cluster" + cfg() + " --dataset " + (dir / "lines.bin").string() + " --out " + (dir / "ck").string();
  const CliRun first = run(base + " --epochs 1");
  ASSERT_EQ(first.code, 0);
  EXPECT_EQ(count_lines(dir / "ck" / "cluster_metrics.jsonl"), 1u);
  const CliRun second = run(base);
  ASSERT_EQ(second.code, 0);
  EXPECT_EQ(last_json(second)["next_epoch"], 2);
  EXPECT_EQ(last_json(second)["epochs_run"], 1);
  EXPECT_EQ(count_lines(dir / "ck" / "cluster_metrics.jsonl"), 2u);

  // An uninterrupted run reaches the same weights.
  const CliRun whole = run("train-cluster" + cfg() + " --dataset " + (dir / "lines.bin").string() + " --out " + (dir / "ck_whole").string());
  ASSERT_EQ(whole.code, 0);
  EXPECT_EQ(last_json(whole)["final"]["loss"], last_json(second)["final"]["loss"]);
  EXPECT_EQ(slurp(dir / "ck" / "cluster_metrics.jsonl"), slurp(dir / "ck_whole" / "cluster_metrics.jsonl"));

  const fs::path other = dir / "wide.json";
  auto j = nlohmann::json::parse(slurp(config));
  j["cluster"]["d_ff"] = 64;
  std::ofstream(other) << j.dump();
  EXPECT_EQ(run("train-cluster --config " + other.string() + " --dataset " + (dir / "lines.bin").string() + " --out " +
                (dir / "ck").string())
                .code,
            2);
}

TEST_F(CliTest, DescriptorNeedsClusteringCheckpoint) {
  EXPECT_EQ(run("train-descriptor" + cfg() + " --dataset " + (dir / "lines.bin").string() + " --out " + (dir / "dk").string()).code, 3);
}

TEST_F(CliTest, EvaluationModes) {
  ASSERT_EQ(run("train-cluster" + cfg() + " --dataset " + (dir / "lines.bin").string() + " --out " + (dir / "e").string()).code, 0);
  ASSERT_EQ(run("train-cluster" + cfg() + " --no-attention --dataset " + (dir / "lines.bin").string() + " --out " + (dir / "e").string()).code, 0);
  ASSERT_EQ(run("train-descriptor" + cfg() + " --dataset " + (dir / "lines.bin").string() + " --cluster " +
                (dir / "e" / "cluster.ckpt").string() + " --out " + (dir / "e").string())
                .code,
            0);
  EXPECT_EQ(count_lines(dir / "e" / "descriptor_metrics.jsonl"), 2u);

  const CliRun clus = run("eval --mode clustering" + cfg() + " --dataset " + (dir / "lines.bin").string() + " --cluster " +
                       (dir / "e" / "cluster.ckpt").string() + " --no-attention --ablation " +
                       (dir / "e" / "cluster_noattn.ckpt").string() + " --agglo-baseline");
  ASSERT_EQ(clus.code, 0);
  const auto cr = last_json(clus);
  for (const char* key : {"nmi", "nmi_no_attention", "nmi_agglomerative"}) {
    ASSERT_TRUE(cr.contains(key)) << key;
    EXPECT_GE(cr[key].get<double>(), 0.0);
    EXPECT_LE(cr[key].get<double>(), 1.0);
  }
  EXPECT_EQ(cr["config_hash"].get<std::string>().size(), 16u);

  const fs::path report = dir / "place.json";
  const CliRun gtc = run("eval --mode place --gtc --k-nn 4" + cfg() + " --dataset " + (dir / "lines.bin").string() +
                      " --descriptor " + (dir / "e" / "descriptor.ckpt").string() + " --out " + report.string() +
                      " --embeddings " + (dir / "emb.bin").string());
  ASSERT_EQ(gtc.code, 0);
  const auto pr = last_json(gtc);
  EXPECT_GE(pr["accuracy"].get<double>(), 0.0);
  EXPECT_LE(pr["accuracy"].get<double>(), 1.0);
  EXPECT_EQ(pr["k_nn"], 4);
  EXPECT_EQ(nlohmann::json::parse(slurp(report))["accuracy"], pr["accuracy"]);
  EXPECT_TRUE(fs::exists(dir / "emb.bin"));

  EXPECT_EQ(run("eval --mode place" + cfg() + " --dataset " + (dir / "lines.bin").string() + " --descriptor " +
                (dir / "e" / "descriptor.ckpt").string())
                .code,
            3);
}
