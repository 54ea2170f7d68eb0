#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "savc/nets.hpp"
#include "savc/syndata.hpp"
#include "savc/train.hpp"

namespace savc::testing {

// Scratch directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static int counter = 0;
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("savc_" + tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Mat random_mat(Eigen::Index r, Eigen::Index c, std::mt19937_64& gen, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = nd(gen);
  return m;
}

inline syndata::SynthSpec small_spec(int speakers = 3, int emotions = 2, int utts = 4) {
  syndata::SynthSpec s;
  s.n_speakers = speakers;
  s.n_emotions = emotions;
  s.utterances_per_pair = utts;
  s.frames = 16;
  s.unit_channels = 6;
  s.mel_channels = 5;
  s.seed = 77;
  return s;
}

// Every dim <= 8 so finite-difference sweeps stay cheap.
inline EncoderConfig tiny_model(const syndata::SynthSpec& s) {
  EncoderConfig c;
  c.unit_channels = s.unit_channels;
  c.mel_channels = s.mel_channels;
  c.n_emotions = s.n_emotions;
  c.conv_blocks = 2;
  c.kernel = 3;
  c.dilations = {1, 2};
  c.conv_channels = 6;
  c.gru_hidden = 4;
  c.d_content = 3;
  c.d_prosody = 2;
  c.d_speaker = 4;
  c.n_style_tokens = 3;
  return c;
}

// Small corpus plus a briefly trained main-stage checkpoint.
struct TinyRun {
  Manifest manifest;
  Dataset data;
  Checkpoint main;
};

inline TinyRun tiny_run(const std::filesystem::path& dir, int main_steps = 10) {
  TinyRun r;
  const auto spec = small_spec();
  r.manifest = syndata::make_corpus(spec, dir);
  r.data = load_dataset(r.manifest);
  TrainConfig cfg;
  cfg.batch_size = 3;
  cfg.steps_teacher = 3;
  cfg.steps_main = main_steps;
  cfg.adversarial_window = 0;
  cfg.seed = 5;
  auto teacher = pretrain_teacher(r.data, tiny_model(spec), cfg).checkpoint;
  r.main = train_main(r.data, teacher, cfg).checkpoint;
  return r;
}

}  // namespace savc::testing
