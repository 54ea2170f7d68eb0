#pragma once

#include <cstdint>
#include <string>

namespace savc {

enum class AsaMode { off, literal, learned_scale, fixed };

std::string to_string(AsaMode m);
AsaMode parse_asa_mode(const std::string& s);

struct TrainConfig {
  // Loss weights.
  double alpha = 1.0;
  double beta = 0.5;
  double lambda = 0.1;
  double cons_weight = 0.0;
  // Weight of the teacher's contour-reconstruction objective.
  double contour_weight = 1.0;

  double lr_teacher = 1e-3;
  double lr_main = 1e-4;
  // Learning rate of the perturbation parameters; <= 0 means "same as lr_main".
  double lr_asa = 0.0;
  // Learning rate of the student emotion head, a fresh linear layer at fine-tune.
  double lr_head = 1e-3;
  std::string lr_schedule = "constant";  // constant | linear
  int batch_size = 8;
  int steps_teacher = 200;
  int steps_main = 2000;
  int steps_finetune = 1000;
  double grad_clip = 1.0;
  std::uint64_t seed = 1234;

  AsaMode asa_mode = AsaMode::learned_scale;
  double grl_lambda = 1.0;
  // Window length of the adversarial-direction diagnostic (0 disables it).
  int adversarial_window = 100;
  // Every n-th utterance is held out from training.
  int holdout_every = 5;

  void validate() const;
};

}  // namespace savc
