#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "cli.hpp"
#include "isample/keyvalue.hpp"
#include "isample/synthetic.hpp"

namespace fs = std::filesystem;
using isample::KeyValues;
namespace cli = isample::cli;

namespace {

const fs::path root = fs::temp_directory_path() / "isample_test_cli";

int run(std::vector<std::string> args, const std::atomic<bool>* stop = nullptr) {
  args.insert(args.begin(), "isample");
  std::vector<const char*> argv;
  for (auto& a : args) argv.push_back(a.c_str());
  return cli::run(int(argv.size()), argv.data(), stop);
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

std::string p(const std::string& name) { return (root / name).string(); }

fs::path write(const std::string& name, const std::string& text) {
  std::ofstream(root / name) << text;
  return root / name;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(root);
    fs::create_directories(root);
    ASSERT_EQ(run({"gen-data", "--preset", "kidney2d", "--seed", "42", "--out", p("data")}), 0);
    write("short.txt", "train.epochs = 2\ntrain.batches_per_epoch = 3\ntrain.warmup_epochs = 1\n");
  }
};

}  // namespace

TEST(Sha256, KnownVector) {
  EXPECT_EQ(cli::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_F(Cli, GenDataSplitAndDeterminism) {
  auto m = isample::DatasetManifest::load(root / "data" / "manifest.txt");
  EXPECT_EQ(m.entries.size(), 20u);
  EXPECT_EQ(m.split(isample::Split::train).size(), 16u);
  EXPECT_EQ(m.split(isample::Split::validation).size(), 4u);
  ASSERT_EQ(run({"gen-data", "--preset", "kidney2d", "--seed", "42", "--out", p("data_again")}), 0);
  for (const auto& e : fs::directory_iterator(root / "data"))
    EXPECT_EQ(slurp(e.path()), slurp(root / "data_again" / e.path().filename())) << e.path();
}

TEST_F(Cli, GenDataEchoesForegroundFraction) {
  ASSERT_EQ(run({"gen-data", "--seed", "1", "--fg-fraction", "0.003", "--out", p("fg")}), 0);
  EXPECT_EQ(isample::DatasetManifest::load(root / "fg" / "manifest.txt").generator.str("fg_fraction"), "0.003");
}

TEST_F(Cli, RefusesOverwriteWithoutForce) {
  fs::create_directories(root / "taken");
  std::ofstream(root / "taken" / "keep") << "x";
  EXPECT_EQ(run({"gen-data", "--out", p("taken")}), 1);
  EXPECT_TRUE(fs::exists(root / "taken" / "keep"));
  EXPECT_EQ(run({"train", "--data", p("data"), "--out", p("taken"), "--model", "tiny2d"}), 1);
  EXPECT_TRUE(fs::exists(root / "taken" / "keep"));
  EXPECT_EQ(run({"gen-data", "--out", p("taken"), "--force"}), 0);
  EXPECT_FALSE(fs::exists(root / "taken" / "keep"));
}

TEST_F(Cli, PresetValuesInEcho) {
  write("one.txt", "train.epochs = 1\ntrain.warmup_epochs = 0\n");
  ASSERT_EQ(run({"train", "--data", p("data"), "--out", p("kidney"), "--model", "tiny2d", "--preset", "kidney",
                 "--config", p("one.txt")}),
            0);
  auto k = KeyValues::read(root / "kidney" / "config.txt");
  EXPECT_EQ(k.real("train.base_lr"), 0.001);
  EXPECT_EQ(k.integer("sampler.patches_per_batch"), 12);
  EXPECT_EQ(k.integer("train.batches_per_epoch"), 100);
  EXPECT_EQ(k.integer("sampler.images_per_batch"), 1);
  // One row per iteration, one image per batch.
  EXPECT_EQ(std::count(std::istreambuf_iterator<char>(*std::make_unique<std::ifstream>(root / "kidney" / "train.csv")),
                       {}, '\n'),
            101);

  write("mo.txt", "train.epochs = 1\ntrain.warmup_epochs = 0\ntrain.batches_per_epoch = 1\n");
  ASSERT_EQ(run({"train", "--data", p("data"), "--out", p("multi"), "--model", "tiny2d", "--preset", "multiorgan",
                 "--config", p("mo.txt")}),
            0);
  auto m = KeyValues::read(root / "multi" / "config.txt");
  EXPECT_EQ(m.real("train.base_lr"), 0.05);
  EXPECT_EQ(m.integer("sampler.patches_per_batch"), 24);
  EXPECT_EQ(m.integer("sampler.images_per_batch"), 2);
  EXPECT_EQ(m.integer("train.halving_period"), 25);
  EXPECT_EQ(KeyValues::parse(slurp(root / "multi" / "config.txt")).str("train.preset"), "multiorgan");
}

TEST_F(Cli, EpsilonOneMatchesUniform) {
  ASSERT_EQ(run({"train", "--data", p("data"), "--out", p("uni"), "--model", "tiny2d", "--config", p("short.txt"),
                 "--sampler", "uniform", "--seed", "7"}),
            0);
  ASSERT_EQ(run({"train", "--data", p("data"), "--out", p("eps1"), "--model", "tiny2d", "--config", p("short.txt"),
                 "--sampler", "isample", "--epsilon", "1.0", "--seed", "7"}),
            0);
  EXPECT_EQ(slurp(root / "uni" / "batches.csv"), slurp(root / "eps1" / "batches.csv"));
}

TEST_F(Cli, RunDirectoryReproducesFromItsEcho) {
  ASSERT_EQ(run({"train", "--data", p("data"), "--out", p("first"), "--model", "tiny2d", "--config", p("short.txt"),
                 "--sampler", "isample", "--seed", "3"}),
            0);
  for (const char* f : {"config.txt", "seed.txt", "inputs.sha256", "train.csv", "checkpoints/final.isck"})
    EXPECT_TRUE(fs::exists(root / "first" / f)) << f;
  EXPECT_EQ(slurp(root / "first" / "seed.txt"), "3\n");
  ASSERT_EQ(run({"train", "--data", p("data"), "--out", p("second"), "--config", p("first/config.txt")}), 0);
  for (const char* f : {"config.txt", "inputs.sha256", "train.csv", "epochs.csv", "batches.csv"})
    EXPECT_EQ(slurp(root / "first" / f), slurp(root / "second" / f)) << f;
}

TEST_F(Cli, InputsHashTracksContent) {
  fs::create_directories(root / "h");
  std::ofstream(root / "h" / "a") << "one";
  std::ofstream(root / "h" / "b") << "two";
  const auto h1 = cli::inputs_hash({root / "h" / "a", root / "h" / "b"}, root / "h");
  EXPECT_EQ(h1, cli::inputs_hash({root / "h" / "b", root / "h" / "a"}, root / "h"));
  std::ofstream(root / "h" / "b") << "three";
  EXPECT_NE(h1, cli::inputs_hash({root / "h" / "a", root / "h" / "b"}, root / "h"));
}

TEST_F(Cli, UnknownKeysAreHardErrors) {
  write("typo.txt", "train.epochs = 1\ntrain.warmup_epochs = 0\nsampler.epsilom = 0.1\n");
  EXPECT_EQ(run({"train", "--data", p("data"), "--out", p("typo"), "--model", "tiny2d", "--config", p("typo.txt")}),
            2);
  EXPECT_FALSE(fs::exists(root / "typo"));
  write("mtypo.txt", "train.epochs = 1\ntrain.warmup_epochs = 0\nmodel.head_width = 8\n");
  EXPECT_EQ(run({"train", "--data", p("data"), "--out", p("mtypo"), "--model", "tiny2d", "--config", p("mtypo.txt")}),
            2);
  EXPECT_EQ(run({"train", "--data", p("data"), "--out", p("bad"), "--sampler", "greedy"}), 2);
  EXPECT_EQ(run({"train", "--bogus"}), 2);
}

TEST_F(Cli, StopFlagExitsNonzeroWithCheckpoint) {
  std::atomic<bool> stop{true};
  EXPECT_EQ(run({"train", "--data", p("data"), "--out", p("stopped"), "--model", "tiny2d", "--config", p("short.txt")},
                &stop),
            cli::interrupted);
  EXPECT_TRUE(fs::exists(root / "stopped" / "checkpoints" / "interrupted.isck"));
}

TEST_F(Cli, InferEvalAndExport) {
  write("snap.txt", "train.epochs = 2\ntrain.batches_per_epoch = 3\ntrain.warmup_epochs = 1\n"
                    "train.snapshot_epochs = 2\nsampler.mode = isample\n");
  ASSERT_EQ(run({"train", "--data", p("data"), "--out", p("full"), "--model", "tiny2d", "--config", p("snap.txt")}), 0);
  const auto ck = p("full/checkpoints/final.isck");
  ASSERT_EQ(run({"infer", "--checkpoint", ck, "--input", p("data/case_000.img.isvl"), "--out", p("pred.isvl")}), 0);
  auto pred = isample::load_labels(root / "pred.isvl", 2);
  EXPECT_EQ(pred.dims(), (isample::Dims{128, 128}));
  ASSERT_EQ(run({"eval", "--checkpoint", ck, "--data", p("data"), "--out", p("dice.csv"), "--post-filter"}), 0);
  std::ifstream is(root / "dice.csv");
  int rows = 0;
  for (std::string l; std::getline(is, l);) ++rows;
  EXPECT_EQ(rows, 1 + 4);
  EXPECT_EQ(run({"eval", "--checkpoint", ck, "--data", p("data"), "--out", p("dice.csv")}), 1);
  ASSERT_EQ(run({"export-maps", "--maps", p("full/maps/epoch_2"), "--out", p("pgm")}), 0);
  int images = 0;
  for (const auto& e : fs::directory_iterator(root / "pgm")) {
    ++images;
    EXPECT_EQ(slurp(e.path()).substr(0, 15), "P5\n128 128\n255\n");
  }
  EXPECT_EQ(images, 16);
}

TEST_F(Cli, PatchDump) {
  ASSERT_EQ(run({"train", "--data", p("data"), "--out", p("dump"), "--model", "tiny2d", "--config", p("short.txt"),
                 "--dump-patches", "3"}),
            0);
  int n = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(root / "dump" / "patches")) ++n;
  EXPECT_EQ(n, 9);
}
