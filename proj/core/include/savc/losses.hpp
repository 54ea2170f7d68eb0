#pragma once

#include "savc/tensorio.hpp"
#include "savc/train_config.hpp"

namespace savc {

// Per-utterance reconstruction loss: mean squared error over all W x M
// elements. Batches sum this over utterances.
double loss_rec(const Mat& mel_hat, const Mat& mel);
Mat loss_rec_grad(const Mat& mel_hat, const Mat& mel);

// Prosody distillation: MSE between student and (frozen) teacher embeddings.
double loss_dis(const Mat& student, const Mat& teacher);
Mat loss_dis_grad(const Mat& student, const Mat& teacher);

// ||y - y_t||^2 + ||y - y_s||^2 with y one-hot.
double loss_pred(const Vec& y, const Vec& y_teacher, const Vec& y_student);
// Gradient of one squared-L2 term w.r.t. its prediction.
Vec loss_pred_grad(const Vec& y, const Vec& y_hat);

Vec one_hot(int index, int classes);

struct LossTerms {
  double rec = 0.0;
  double dis = 0.0;
  double pred = 0.0;
  double cons = 0.0;
};

// alpha * rec + beta * dis + lambda * pred (+ cons_weight * cons).
double loss_total(const LossTerms& terms, const TrainConfig& cfg);

}  // namespace savc
