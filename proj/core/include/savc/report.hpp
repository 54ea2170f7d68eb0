#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "savc/convert.hpp"
#include "savc/probe.hpp"

namespace savc {

struct PairMetrics {
  std::string source_id;
  std::string source_speaker;
  std::string target_speaker;
  std::optional<double> mcd;           // converted vs ground-truth target rendering
  std::optional<double> baseline_mcd;  // untouched source vs the same target rendering
  double self_mcd = 0.0;               // source converted to its own speaker vs source
  std::optional<double> pearson_f0;
  std::optional<double> pearson_energy;
  double ses = 0.0;
  double dist_target = 0.0;  // converted stats to target speaker mean stats
  double dist_source = 0.0;  // converted stats to source speaker mean stats
};

struct ProbeSummary {
  double speaker_from_content = 0.0;
  double speaker_from_raw = 0.0;
  double emotion_from_prosody = 0.0;
  bool degenerate = false;
  int samples = 0;
};

struct ReconstructionSummary {
  int utterances = 0;
  double mcd_mean = 0.0;
  std::optional<double> pearson_f0_mean;
  std::optional<double> pearson_energy_mean;
};

struct EvalReport {
  std::uint64_t seed = 0;
  std::string checkpoint_stage;
  std::string config_echo;

  std::vector<PairMetrics> pairs;
  int mcd_count = 0;
  int mcd_skipped = 0;  // pairs without a ground-truth rendering
  double mcd_mean = 0.0;
  double mcd_std = 0.0;
  double self_mcd_mean = 0.0;
  double baseline_mcd_mean = 0.0;
  std::optional<double> pearson_f0_mean;
  std::optional<double> pearson_energy_mean;
  double ses_mean = 0.0;
  double target_closer_fraction = 0.0;

  ProbeSummary probes;
  std::optional<ReconstructionSummary> reconstruction;
  // Reserved for an externally computed character error rate.
  std::optional<double> cer;
};

struct EvalOptions {
  std::uint64_t seed = 1234;
  int jobs = 1;
  // Held-out records reconstructed through their own speaker; empty skips it.
  std::vector<std::string> reconstruction_ids;
  std::string config_echo;
  ProbeOptions probe;
};

EvalReport eval_report(const Manifest& manifest, const Checkpoint& ckpt, const std::vector<ConversionPair>& pairs,
                       const EvalOptions& opts = {});

// n seeded (source, target) pairs drawn from `pool` with target != source speaker.
std::vector<ConversionPair> random_pairs(const Dataset& pool, int n, std::uint64_t seed);

std::string report_to_json(const EvalReport& r);
EvalReport report_from_json(const std::string& text);
std::string report_to_csv(const EvalReport& r);
void write_report(const std::filesystem::path& json_path, const EvalReport& r);
EvalReport load_report(const std::filesystem::path& json_path);

// Line chart of every numeric column of a metrics CSV against its first column.
std::string svg_plot(const std::filesystem::path& csv_path, const std::string& title);

}  // namespace savc
