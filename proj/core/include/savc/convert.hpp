#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "savc/checkpoint.hpp"
#include "savc/tensorio.hpp"

namespace savc {

struct ConversionTarget {
  std::string speaker;
  // External (zero-shot) embedding; takes precedence over the speaker table.
  std::optional<Vec> embedding;
};

struct ConversionRequest {
  UtteranceRecord source;
  ConversionTarget target;
  std::filesystem::path checkpoint;
  std::filesystem::path output;  // empty: do not write
};

// Inference path: encoder on the (optionally quantized) units, then decode
// with the given speaker embedding. The perturbation module is never used.
Mat convert_units(const SavcModel& model, const Mat& units, const Vec& target_embedding);
Vec resolve_target(const SavcModel& model, const ConversionTarget& target);

Mat convert(const ConversionRequest& req, const Manifest& manifest);
Mat convert(const Checkpoint& ckpt, const Manifest& manifest, const UtteranceRecord& source,
            const ConversionTarget& target);

struct ConversionPair {
  std::string utterance_id;
  std::string target_speaker;
};

struct ConversionResult {
  std::string source_id;
  std::string target_speaker;
  std::filesystem::path mel_path;  // relative to the results directory
  std::uint32_t frames = 0;
  std::uint32_t mel_channels = 0;
};

struct ConversionResults {
  std::string checkpoint_stage;
  std::vector<ConversionResult> results;
};

// Validates every pair before writing anything, then converts (in parallel
// when jobs > 1) into out_dir/mel/ and writes out_dir/results.json.
ConversionResults batch_convert(const Manifest& manifest, const std::vector<ConversionPair>& pairs,
                                const Checkpoint& ckpt, const std::filesystem::path& out_dir, int jobs = 1);
ConversionResults load_conversion_results(const std::filesystem::path& path);

}  // namespace savc
