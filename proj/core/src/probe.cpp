#include "savc/probe.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "savc/error.hpp"
#include "savc/rng.hpp"

namespace savc {

ProbeResult leakage_probe(const Mat& features, const std::vector<int>& labels, const ProbeOptions& opts) {
  const auto n = static_cast<Eigen::Index>(labels.size());
  if (features.rows() != n) throw ValidationError("probe: feature rows do not match label count");
  if (n == 0) throw ValidationError("probe: no samples");
  if (!features.allFinite()) throw ValidationError("probe: non-finite features");

  std::map<int, std::vector<int>> by_class;
  for (int i = 0; i < static_cast<int>(n); ++i) by_class[labels[i]].push_back(i);
  ProbeResult res;
  res.classes = static_cast<int>(by_class.size());
  for (const auto& [label, members] : by_class) {
    if (members.size() < 2)
      throw ValidationError("probe: label " + std::to_string(label) + " has fewer than 2 samples");
  }
  if (by_class.size() == 1) {
    res.accuracy = 1.0;
    res.degenerate = true;
    res.train_size = static_cast<int>(n);
    return res;
  }

  CounterRng rng(opts.seed);
  std::vector<int> train_idx, test_idx;
  for (const auto& [label, members] : by_class) {
    const auto perm = rng.permutation(members.size());
    const int m = static_cast<int>(members.size());
    const int n_test = std::clamp(static_cast<int>(std::lround(opts.test_fraction * m)), 1, m - 1);
    for (int k = 0; k < m; ++k) (k < n_test ? test_idx : train_idx).push_back(members[perm[k]]);
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());

  std::map<int, int> class_of;
  for (const auto& [label, members] : by_class) class_of.emplace(label, static_cast<int>(class_of.size()));
  const int k = res.classes;
  const Eigen::Index d = features.cols();

  auto gather = [&](const std::vector<int>& idx) {
    Mat x(static_cast<Eigen::Index>(idx.size()), d);
    for (std::size_t i = 0; i < idx.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = features.row(idx[i]);
    return x;
  };
  Mat xtr = gather(train_idx), xte = gather(test_idx);
  const Eigen::RowVectorXd mean = xtr.colwise().mean();
  Eigen::RowVectorXd sd = ((xtr.rowwise() - mean).array().square().colwise().mean()).sqrt();
  for (Eigen::Index j = 0; j < d; ++j)
    if (sd[j] < 1e-12) sd[j] = 1.0;
  xtr = ((xtr.rowwise() - mean).array().rowwise() / sd.array()).matrix();
  xte = ((xte.rowwise() - mean).array().rowwise() / sd.array()).matrix();

  const auto ntr = xtr.rows();
  Mat y = Mat::Zero(ntr, k);
  for (Eigen::Index i = 0; i < ntr; ++i) y(i, class_of[labels[train_idx[i]]]) = 1.0;

  Mat w = Mat::Zero(d, k);
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(k);
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    Mat logits = (xtr * w).rowwise() + b;
    const Vec row_max = logits.rowwise().maxCoeff();
    logits.colwise() -= row_max;
    Mat p = logits.array().exp();
    p.array().colwise() /= p.rowwise().sum().array();
    const Mat g = (p - y) / static_cast<double>(ntr);
    w -= opts.lr * xtr.transpose() * g;
    b -= opts.lr * g.colwise().sum();
  }

  const Mat scores = (xte * w).rowwise() + b;
  int correct = 0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index arg = 0;
    scores.row(i).maxCoeff(&arg);
    if (static_cast<int>(arg) == class_of[labels[test_idx[i]]]) ++correct;
  }
  res.train_size = static_cast<int>(train_idx.size());
  res.test_size = static_cast<int>(test_idx.size());
  res.accuracy = static_cast<double>(correct) / static_cast<double>(res.test_size);
  return res;
}

}  // namespace savc
