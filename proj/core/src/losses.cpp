#include "savc/losses.hpp"

#include "savc/error.hpp"

namespace savc {

namespace {
void same_shape(const Mat& a, const Mat& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ValidationError(std::string(what) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                          std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                          std::to_string(b.cols()) + ")");
}
}  // namespace

double loss_rec(const Mat& mel_hat, const Mat& mel) {
  same_shape(mel_hat, mel, "loss_rec");
  return (mel_hat - mel).squaredNorm() / static_cast<double>(mel.size());
}

Mat loss_rec_grad(const Mat& mel_hat, const Mat& mel) {
  same_shape(mel_hat, mel, "loss_rec");
  return 2.0 * (mel_hat - mel) / static_cast<double>(mel.size());
}

double loss_dis(const Mat& student, const Mat& teacher) {
  same_shape(student, teacher, "loss_dis");
  return (student - teacher).squaredNorm() / static_cast<double>(student.size());
}

Mat loss_dis_grad(const Mat& student, const Mat& teacher) {
  same_shape(student, teacher, "loss_dis");
  return 2.0 * (student - teacher) / static_cast<double>(student.size());
}

Vec one_hot(int index, int classes) {
  if (index < 0 || index >= classes) throw ValidationError("one_hot: label out of range");
  Vec y = Vec::Zero(classes);
  y(index) = 1.0;
  return y;
}

double loss_pred(const Vec& y, const Vec& y_teacher, const Vec& y_student) {
  if (y.size() != y_teacher.size() || y.size() != y_student.size())
    throw ValidationError("loss_pred: length mismatch");
  int ones = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y(i) == 1.0) ++ones;
    else if (y(i) != 0.0) ones = -100;
  }
  if (ones != 1) throw ValidationError("loss_pred: target is not one-hot");
  return (y - y_teacher).squaredNorm() + (y - y_student).squaredNorm();
}

Vec loss_pred_grad(const Vec& y, const Vec& y_hat) { return 2.0 * (y_hat - y); }

double loss_total(const LossTerms& t, const TrainConfig& cfg) {
  return cfg.alpha * t.rec + cfg.beta * t.dis + cfg.lambda * t.pred + cfg.cons_weight * t.cons;
}

}  // namespace savc
