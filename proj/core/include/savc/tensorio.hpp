#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace savc {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Rank 1..3 float32 array, row-major. This is the persisted representation;
// computation happens on Mat/Vec in double precision.
struct FeatureTensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  FeatureTensor() = default;
  FeatureTensor(std::vector<std::uint32_t> d, std::vector<float> values);

  std::size_t numel() const;
  std::size_t ndim() const { return dims.size(); }

  static FeatureTensor from_matrix(const Mat& m);
  static FeatureTensor from_vector(const Vec& v);
  // Rank-2 tensors map onto rows x cols; rank-1 becomes a single column.
  Mat to_matrix() const;
  Vec to_vector() const;
};

struct TensorHeader {
  std::uint32_t version = 0;
  std::uint8_t dtype_code = 0;
  std::vector<std::uint32_t> dims;
};

inline constexpr char kTensorMagic[4] = {'S', 'A', 'V', 'T'};
inline constexpr std::uint32_t kTensorVersion = 1;

void write_tensor(const std::filesystem::path& path, const FeatureTensor& t);
FeatureTensor read_tensor(const std::filesystem::path& path);
TensorHeader read_tensor_header(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_tensor(const FeatureTensor& t);
FeatureTensor decode_tensor(std::span<const std::uint8_t> bytes);

struct UtteranceRecord {
  std::string id;
  std::string speaker;
  std::string emotion;
  std::filesystem::path units_path;
  std::filesystem::path mel_path;
  std::filesystem::path f0_path;
  std::filesystem::path energy_path;
  std::optional<std::filesystem::path> factors_path;
};

struct Manifest {
  int format_version = 1;
  int sample_rate_hz = 16000;
  // Optional configured label set; empty means "derive from records".
  std::vector<std::string> emotions;
  std::vector<UtteranceRecord> utterances;
  // Directory relative paths resolve against.
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::filesystem::path& p) const;
  const UtteranceRecord& find(const std::string& id) const;
  std::vector<std::string> speakers() const;
  std::vector<std::string> emotion_labels() const;
};

struct ManifestOptions {
  bool strict = false;
  std::vector<std::string> emotion_labels;
};

Manifest load_manifest(const std::filesystem::path& path, const ManifestOptions& opts = {});
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);
// Shape check of one record against its units tensor's frame count.
void validate_record_shapes(const Manifest& manifest, const UtteranceRecord& rec);

// Fully loaded utterance in compute precision.
struct Utterance {
  std::string id;
  std::string speaker;
  std::string emotion;
  int speaker_index = -1;
  int emotion_index = -1;
  Mat units;   // W x C
  Mat mel;     // W x M
  Vec f0;      // W, log-scale, 0 on unvoiced frames
  Vec energy;  // W, log-scale

  Eigen::Index frames() const { return units.rows(); }
  Vec voicing() const;
};

Utterance load_utterance(const Manifest& manifest, const UtteranceRecord& rec);

struct Dataset {
  std::vector<std::string> speakers;
  std::vector<std::string> emotions;
  std::vector<Utterance> items;
};

Dataset load_dataset(const Manifest& manifest);
// Deterministic train/held-out split: every `every`-th record (1-based) is held out.
std::pair<Dataset, Dataset> split_dataset(const Dataset& data, int every);

}  // namespace savc
