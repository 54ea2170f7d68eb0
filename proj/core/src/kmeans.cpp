#include "savc/kmeans.hpp"

#include <limits>

#include "savc/error.hpp"

namespace savc {

namespace {

Eigen::Index nearest(const Eigen::RowVectorXd& row, const Mat& centroids) {
  Eigen::Index best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < centroids.rows(); ++k) {
    const double d = (centroids.row(k) - row).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

}  // namespace

Mat kmeans(const Mat& frames, int k, int iterations, CounterRng& rng) {
  if (k < 1 || frames.rows() < k) throw ValidationError("kmeans needs at least k frames");
  auto order = rng.permutation(static_cast<std::size_t>(frames.rows()));
  Mat centroids(k, frames.cols());
  for (int i = 0; i < k; ++i) centroids.row(i) = frames.row(static_cast<Eigen::Index>(order[i]));

  std::vector<Eigen::Index> assign(static_cast<std::size_t>(frames.rows()), -1);
  for (int it = 0; it < iterations; ++it) {
    bool changed = false;
    for (Eigen::Index r = 0; r < frames.rows(); ++r) {
      const auto a = nearest(frames.row(r), centroids);
      if (a != assign[r]) {
        assign[r] = a;
        changed = true;
      }
    }
    Mat sums = Mat::Zero(k, frames.cols());
    Vec counts = Vec::Zero(k);
    for (Eigen::Index r = 0; r < frames.rows(); ++r) {
      sums.row(assign[r]) += frames.row(r);
      counts(assign[r]) += 1.0;
    }
    for (int i = 0; i < k; ++i)
      if (counts(i) > 0) centroids.row(i) = sums.row(i) / counts(i);
    if (!changed) break;
  }
  return centroids;
}

Mat quantize_rows(const Mat& x, const Mat& centroids) {
  if (centroids.cols() != x.cols()) throw ValidationError("quantizer width does not match input channels");
  Mat out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) out.row(r) = centroids.row(nearest(x.row(r), centroids));
  return out;
}

}  // namespace savc
