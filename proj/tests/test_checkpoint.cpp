#include <gtest/gtest.h>

#include "savc/checkpoint.hpp"
#include "savc/error.hpp"
#include "support.hpp"

using namespace savc;
using savc::testing::slurp;
using savc::testing::TempDir;

namespace {

Checkpoint make_ckpt(int centroids = 0) {
  auto cfg = savc::testing::tiny_model(savc::testing::small_spec());
  cfg.quantize_centroids = centroids;
  Checkpoint c;
  c.stage = Stage::main;
  c.model = SavcModel(cfg, {"spk00", "spk01", "spk02"}, {"emo0", "emo1"}, 9);
  c.train.lr_main = 3e-4;
  c.train.asa_mode = AsaMode::fixed;
  c.rng = {123, 456};
  c.step_count = 77;
  return c;
}

std::map<std::string, std::string> dir_bytes(const std::filesystem::path& d) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(d))
    if (e.is_regular_file()) out[std::filesystem::relative(e.path(), d).string()] = slurp(e.path());
  return out;
}

}  // namespace

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  TempDir dir;
  auto c = make_ckpt(4);
  save_checkpoint(dir / "a", c);
  auto loaded = load_checkpoint(dir / "a");
  save_checkpoint(dir / "b", loaded);
  EXPECT_EQ(dir_bytes(dir / "a"), dir_bytes(dir / "b"));
}

TEST(Checkpoint, RestoresMetadataAndValues) {
  TempDir dir;
  auto c = make_ckpt();
  save_checkpoint(dir.path(), c);
  auto l = load_checkpoint(dir.path());
  EXPECT_EQ(l.stage, Stage::main);
  EXPECT_EQ(l.step_count, 77);
  EXPECT_EQ(l.rng, c.rng);
  EXPECT_EQ(l.train.lr_main, 3e-4);
  EXPECT_EQ(l.train.asa_mode, AsaMode::fixed);
  EXPECT_EQ(l.model.config().d_speaker, c.model.config().d_speaker);
  EXPECT_EQ(l.model.speakers.names(), c.model.speakers.names());
  EXPECT_EQ(l.model.emotions(), c.model.emotions());
  const auto pa = c.model.all_params(), pb = l.model.all_params();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    ASSERT_EQ(pa[i].first, pb[i].first);
    // float32 storage
    EXPECT_TRUE(pa[i].second->value.cast<float>().cast<double>() == pb[i].second->value) << pa[i].first;
  }
}

TEST(Checkpoint, Errors) {
  TempDir dir;
  EXPECT_THROW(load_checkpoint(dir / "missing"), IoError);
  auto c = make_ckpt();
  save_checkpoint(dir.path(), c);
  std::filesystem::remove(dir / "params" / "asa.i_mu.savt");
  EXPECT_ANY_THROW(load_checkpoint(dir.path()));
}

TEST(Stage, RequireStage) {
  auto c = make_ckpt();
  EXPECT_NO_THROW(require_stage(c, {Stage::main}, "finetune"));
  c.stage = Stage::teacher;
  EXPECT_THROW(require_stage(c, {Stage::main, Stage::finetuned}, "convert"), StageError);
  EXPECT_EQ(parse_stage(to_string(Stage::finetuned)), Stage::finetuned);
  EXPECT_THROW(parse_stage("nope"), FormatError);
}
