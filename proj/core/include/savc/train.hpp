#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "savc/checkpoint.hpp"
#include "savc/losses.hpp"

namespace savc {

struct StepMetrics {
  long step = 0;
  double rec = 0.0;
  double dis = 0.0;
  double pred = 0.0;
  double total = 0.0;
  double wall_ms = 0.0;
};

// Adversarial-direction diagnostic: for each window, whether the loss on a
// fixed probe batch (fixed noise, current encoder/decoder) is at least as high
// with the updated perturbation parameters as with those from the window start.
struct AdversarialTally {
  int windows = 0;
  int ascended = 0;
  double fraction() const { return windows ? static_cast<double>(ascended) / windows : 0.0; }
};

struct StageResult {
  Checkpoint checkpoint;
  std::vector<StepMetrics> log;
  AdversarialTally adversarial;
};

enum class StudentObjective {
  main,      // alpha * L_rec + beta * L_dis
  finetune,  // + lambda * L_pred
};

// Teacher stage: teacher half of L_pred plus contour reconstruction. The
// logged "rec" column holds the contour term for this stage.
StageResult pretrain_teacher(const Dataset& train, const EncoderConfig& model_cfg, const TrainConfig& cfg);
StageResult train_main(const Dataset& train, const Checkpoint& teacher, const TrainConfig& cfg);
StageResult finetune(const Dataset& train, const Checkpoint& main, const TrainConfig& cfg);

// Shared student loop behind train_main and finetune. Continues from
// `start` (including its RNG state) and labels the result `out_stage`.
StageResult run_student_stage(const Dataset& train, Checkpoint start, const TrainConfig& cfg,
                              StudentObjective objective, int steps, Stage out_stage);

// One batch of the student objective: accumulates gradients into the model's
// params (ASA gradients arrive GRL-reversed) and returns the summed terms.
LossTerms student_batch_gradients(SavcModel& model, std::span<const Utterance* const> batch, const TrainConfig& cfg,
                                  StudentObjective objective, CounterRng& rng);
LossTerms teacher_batch_gradients(SavcModel& model, std::span<const Utterance* const> batch, const TrainConfig& cfg);

// Forward-only student loss on a batch with the same semantics (no grads).
double student_batch_loss(const SavcModel& model, std::span<const Utterance* const> batch, const TrainConfig& cfg,
                          StudentObjective objective, CounterRng& rng);

// Fits the unit quantizer when the config asks for one and it is still unset.
void fit_quantizer(SavcModel& model, const Dataset& train, CounterRng& rng);

// ASA-free diagnostics over a dataset.
double mean_reconstruction_loss(const SavcModel& model, const Dataset& data);
double student_emotion_accuracy(const SavcModel& model, const Dataset& data);
double teacher_emotion_accuracy(const SavcModel& model, const Dataset& data);

void write_metrics_csv(const std::filesystem::path& path, const std::vector<StepMetrics>& log);
std::vector<StepMetrics> read_metrics_csv(const std::filesystem::path& path);

}  // namespace savc
