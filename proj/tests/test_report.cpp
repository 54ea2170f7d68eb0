#include <gtest/gtest.h>

#include "savc/error.hpp"
#include "savc/report.hpp"
#include "support.hpp"

using namespace savc;
using savc::testing::slurp;
using savc::testing::TempDir;

class ReportTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("report");
    run_ = new savc::testing::TinyRun(savc::testing::tiny_run(dir_->path(), 150));
  }
  static void TearDownTestSuite() {
    delete run_;
    delete dir_;
  }
  static EvalOptions opts() {
    EvalOptions o;
    o.seed = 3;
    o.probe.epochs = 50;
    return o;
  }
  static TempDir* dir_;
  static savc::testing::TinyRun* run_;
};
TempDir* ReportTest::dir_ = nullptr;
savc::testing::TinyRun* ReportTest::run_ = nullptr;

TEST_F(ReportTest, EmptyPairsGiveProbesOnly) {
  const auto r = eval_report(run_->manifest, run_->main, {}, opts());
  EXPECT_TRUE(r.pairs.empty());
  EXPECT_EQ(r.mcd_count, 0);
  EXPECT_FALSE(r.reconstruction.has_value());
  EXPECT_EQ(r.probes.samples, static_cast<int>(run_->manifest.utterances.size()));
  EXPECT_GT(r.probes.speaker_from_raw, 0.0);
  EXPECT_EQ(r.checkpoint_stage, "main");
}

TEST_F(ReportTest, SelfPairsMatchReconstruction) {
  std::vector<ConversionPair> pairs;
  EvalOptions o = opts();
  for (int i = 0; i < 6; ++i) {
    const auto& rec = run_->manifest.utterances[i * 3];
    pairs.push_back({rec.id, rec.speaker});
    o.reconstruction_ids.push_back(rec.id);
  }
  const auto r = eval_report(run_->manifest, run_->main, pairs, o);
  ASSERT_TRUE(r.reconstruction.has_value());
  EXPECT_EQ(r.mcd_count, 6);
  // Ground truth is re-rendered in double; the stored mel is float32.
  EXPECT_NEAR(r.mcd_mean, r.reconstruction->mcd_mean, 1e-4);
  EXPECT_NEAR(r.self_mcd_mean, r.reconstruction->mcd_mean, 1e-12);
  EXPECT_NEAR(r.baseline_mcd_mean, 0.0, 1e-4);
}

TEST_F(ReportTest, TrainedBeatsUntrained) {
  Checkpoint untrained = run_->main;
  untrained.model = SavcModel(run_->main.model.config(), run_->data.speakers, run_->data.emotions, 99);
  const auto pairs = random_pairs(run_->data, 20, 1);
  const auto a = eval_report(run_->manifest, run_->main, pairs, opts());
  const auto b = eval_report(run_->manifest, untrained, pairs, opts());
  EXPECT_LT(a.mcd_mean, b.mcd_mean);
}

TEST_F(ReportTest, JsonRoundTripAndCsv) {
  EvalOptions o = opts();
  o.config_echo = "[train]\nseed = 3\n";
  o.reconstruction_ids = {run_->manifest.utterances[1].id};
  auto r = eval_report(run_->manifest, run_->main, random_pairs(run_->data, 5, 2), o);
  TempDir out;
  write_report(out / "sub" / "report.json", r);
  ASSERT_TRUE(std::filesystem::exists(out / "sub" / "report.csv"));
  const auto back = load_report(out / "sub" / "report.json");
  EXPECT_EQ(report_to_json(back), report_to_json(r));
  EXPECT_EQ(back.pairs.size(), 5u);
  EXPECT_EQ(back.config_echo, o.config_echo);
  EXPECT_EQ(back.mcd_mean, r.mcd_mean);
  EXPECT_FALSE(back.cer.has_value());
  const std::string csv = slurp(out / "sub" / "report.csv");
  EXPECT_EQ(csv.rfind("section,key,value\n", 0), 0u);
  EXPECT_NE(csv.find("summary,mcd_mean,"), std::string::npos);
  EXPECT_THROW(report_from_json("{\"format\":\"other\",\"version\":1}"), FormatError);
  EXPECT_THROW(report_from_json("not json"), FormatError);
}

TEST_F(ReportTest, ParallelMatchesSerial) {
  const auto pairs = random_pairs(run_->data, 8, 4);
  EvalOptions o = opts();
  o.reconstruction_ids = {run_->manifest.utterances[0].id, run_->manifest.utterances[7].id};
  const auto a = eval_report(run_->manifest, run_->main, pairs, o);
  o.jobs = 3;
  const auto b = eval_report(run_->manifest, run_->main, pairs, o);
  EXPECT_EQ(report_to_json(a), report_to_json(b));
}

TEST_F(ReportTest, UnknownPairFailsUpFront) {
  EXPECT_THROW(eval_report(run_->manifest, run_->main, {{"nope", "spk00"}}, opts()), ValidationError);
  EXPECT_THROW(eval_report(run_->manifest, run_->main, {{run_->manifest.utterances[0].id, "ghost"}}, opts()),
               ValidationError);
  Checkpoint t = run_->main;
  t.stage = Stage::teacher;
  EXPECT_THROW(eval_report(run_->manifest, t, {}, opts()), StageError);
}

TEST_F(ReportTest, MissingFactorsAreSkippedAndCounted) {
  Manifest m = run_->manifest;
  for (auto& rec : m.utterances) rec.factors_path.reset();
  const auto r = eval_report(m, run_->main, random_pairs(run_->data, 4, 5), opts());
  EXPECT_EQ(r.mcd_skipped, 4);
  EXPECT_EQ(r.mcd_count, 0);
}

TEST(RandomPairs, SeededAndCrossSpeaker) {
  TempDir dir;
  const auto data = load_dataset(syndata::make_corpus(savc::testing::small_spec(), dir.path()));
  const auto a = random_pairs(data, 30, 7), b = random_pairs(data, 30, 7), c = random_pairs(data, 30, 8);
  ASSERT_EQ(a.size(), 30u);
  bool differs = false;
  std::map<std::string, std::string> spk;
  for (const auto& u : data.items) spk[u.id] = u.speaker;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].utterance_id, b[i].utterance_id);
    EXPECT_EQ(a[i].target_speaker, b[i].target_speaker);
    EXPECT_NE(a[i].target_speaker, spk[a[i].utterance_id]);
    differs |= a[i].utterance_id != c[i].utterance_id;
  }
  EXPECT_TRUE(differs);
}

TEST(SvgPlot, DrawsEveryColumn) {
  TempDir dir;
  std::ofstream(dir / "m.csv") << "step,rec,dis\n0,2,1\n1,1.5,0.5\n2,1,0.25\n";
  const auto svg = svg_plot(dir / "m.csv", "loss");
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find(">rec ["), std::string::npos);
  EXPECT_NE(svg.find(">dis ["), std::string::npos);
  std::ofstream(dir / "bad.csv") << "step,rec\n0,x\n";
  EXPECT_THROW(svg_plot(dir / "bad.csv", "t"), FormatError);
}
