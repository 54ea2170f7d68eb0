#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "savc/asa.hpp"
#include "savc/layers.hpp"

namespace savc {

struct EncoderConfig {
  int unit_channels = 16;  // C
  int conv_blocks = 3;
  int kernel = 5;
  std::vector<int> dilations{1, 2, 4};
  int conv_channels = 64;
  int gru_hidden = 32;
  int d_content = 12;
  int d_prosody = 4;
  int d_speaker = 64;
  int n_style_tokens = 8;
  int n_emotions = 5;  // K
  int mel_channels = 20;  // M
  // Ablation: feed zeros instead of the prosody stream into the decoder.
  bool prosody_stream = true;
  // Ablation: > 0 snaps units to the nearest of this many k-means centroids.
  int quantize_centroids = 0;

  void validate() const;
  // Dilation for block i; the list repeats if shorter than conv_blocks.
  std::vector<int> block_dilations() const;
};

// Attribute encoder: one conv + Bi-GRU trunk with two linear bottleneck heads.
class AttributeEncoder {
 public:
  struct Output {
    Mat content;  // W x d_c
    Mat prosody;  // W x d_p
  };
  struct Cache {
    nn::Trunk::Cache trunk;
    Mat features;
  };

  AttributeEncoder() = default;
  AttributeEncoder(const EncoderConfig& cfg, CounterRng& rng);

  Output forward(const Mat& units, Cache* cache = nullptr) const;
  // Returns d loss / d units.
  Mat backward(const Cache& cache, const Mat& d_content, const Mat& d_prosody);
  void zero_heads();
  void collect(const std::string& prefix, nn::ParamList& out);

 private:
  int kernel_ = 5;
  nn::Trunk trunk_;
  nn::Linear head_content_, head_prosody_;
};

// Teacher inputs: z-normalized voiced log-f0, voicing mask, log energy.
Mat prosody_features(const Vec& f0, const Vec& voicing, const Vec& energy);

// Prosody encoder driven only by pitch/energy contours, with a single-head
// style-token attention whose readout is added to every frame.
class TeacherEncoder {
 public:
  struct Cache {
    Mat input;
    nn::Trunk::Cache trunk;
    Mat features;
    Vec final_state;
    Vec query;
    Vec attention;
    Vec readout;
  };

  TeacherEncoder() = default;
  TeacherEncoder(const EncoderConfig& cfg, CounterRng& rng);

  Mat forward(const Vec& f0, const Vec& voicing, const Vec& energy, Cache* cache = nullptr) const;
  void backward(const Cache& cache, const Mat& d_out);
  void collect(const std::string& prefix, nn::ParamList& out);

 private:
  int kernel_ = 5;
  nn::Trunk trunk_;
  nn::Linear query_, frame_proj_, readout_proj_;
  nn::Param tokens_;  // n_tokens x d_token; serve as both keys and values
};

class Decoder {
 public:
  struct Cache {
    Mat input;
    nn::Trunk::Cache trunk;
    Mat features;
  };
  struct Grads {
    Mat content;
    Mat prosody;
    Vec speaker;
  };

  Decoder() = default;
  Decoder(const EncoderConfig& cfg, CounterRng& rng);

  Mat forward(const Mat& content, const Mat& prosody, const Vec& speaker, Cache* cache = nullptr) const;
  Grads backward(const Cache& cache, const Mat& d_mel);
  void zero_output();
  void collect(const std::string& prefix, nn::ParamList& out);

 private:
  int d_content_ = 0, d_prosody_ = 0, d_speaker_ = 0;
  nn::Trunk trunk_;
  nn::Linear out_;
};

class SpeakerTable {
 public:
  SpeakerTable() = default;
  SpeakerTable(std::vector<std::string> names, int dim, CounterRng& rng);

  // Table row for a known speaker, else an imported vector, else throws.
  Vec embed(const std::string& speaker) const;
  bool contains(const std::string& speaker) const;
  int index_of(const std::string& speaker) const;
  void import_embedding(const std::string& speaker, const Vec& v);
  void accumulate_grad(int index, const Vec& g);
  void collect(const std::string& prefix, nn::ParamList& out);

  const std::vector<std::string>& names() const { return names_; }
  int dim() const { return static_cast<int>(table_.value.cols()); }

 private:
  std::vector<std::string> names_;
  nn::Param table_;  // n_speakers x d_s
  std::map<std::string, Vec> imported_;
};

// Mean-pool over frames, then a linear map to K raw scores.
class EmotionHead {
 public:
  EmotionHead() = default;
  EmotionHead(int d_in, int classes, CounterRng& rng);

  Vec forward(const Mat& z) const;
  Mat backward(const Mat& z, const Vec& dy);
  void zero_init();
  void collect(const std::string& prefix, nn::ParamList& out);
  nn::Linear& linear() { return linear_; }

 private:
  nn::Linear linear_;
};

// Everything trained across the three stages, plus the ASA parameters.
class SavcModel {
 public:
  SavcModel() = default;
  SavcModel(const EncoderConfig& cfg, std::vector<std::string> speakers, std::vector<std::string> emotions,
            std::uint64_t seed);

  const EncoderConfig& config() const { return cfg_; }
  const std::vector<std::string>& emotions() const { return emotions_; }

  AttributeEncoder encoder;
  TeacherEncoder teacher;
  Decoder decoder;
  SpeakerTable speakers;
  EmotionHead student_head;
  EmotionHead teacher_head;
  nn::Linear contour_head;  // Z_P frame -> (normalized f0, energy)
  nn::Param asa_i_mu;       // C x 1
  nn::Param asa_i_sigma;    // C x 1
  nn::Param centroids;      // k x C, empty unless quantization is enabled

  asa::PerturbParams perturb_params(asa::PerturbMode mode, double grl_lambda) const;

  // Named parameter groups. Names are stable and used as checkpoint keys.
  nn::ParamList all_params();
  nn::ParamList teacher_params();
  nn::ParamList student_params();  // encoder, decoder, speakers, student head
  nn::ParamList asa_params();

  // Applies the unit quantizer when configured; identity otherwise.
  Mat prepare_units(const Mat& units) const;

 private:
  EncoderConfig cfg_;
  std::vector<std::string> emotions_;
};

}  // namespace savc
