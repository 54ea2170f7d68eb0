#include "savc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "savc/error.hpp"

namespace savc {

DtwResult dtw_align(const Mat& x, const Mat& y) {
  const Eigen::Index n = x.rows(), m = y.rows();
  if (n == 0 || m == 0) throw ValidationError("dtw: empty sequence");
  if (x.cols() != y.cols())
    throw ValidationError("dtw: feature dims differ (" + std::to_string(x.cols()) + " vs " +
                          std::to_string(y.cols()) + ")");
  const double inf = std::numeric_limits<double>::infinity();
  Mat acc = Mat::Constant(n + 1, m + 1, inf);
  acc(0, 0) = 0.0;
  for (Eigen::Index i = 1; i <= n; ++i) {
    for (Eigen::Index j = 1; j <= m; ++j) {
      const double d = (x.row(i - 1) - y.row(j - 1)).norm();
      acc(i, j) = d + std::min({acc(i - 1, j - 1), acc(i - 1, j), acc(i, j - 1)});
    }
  }
  DtwResult r;
  r.cost = acc(n, m);
  Eigen::Index i = n, j = m;
  while (i > 0 && j > 0) {
    r.path.emplace_back(static_cast<int>(i - 1), static_cast<int>(j - 1));
    if (i == 1 && j == 1) break;
    const double diag = acc(i - 1, j - 1), up = acc(i - 1, j), left = acc(i, j - 1);
    if (diag <= up && diag <= left) {
      --i;
      --j;
    } else if (up <= left) {
      --i;
    } else {
      --j;
    }
  }
  std::reverse(r.path.begin(), r.path.end());
  return r;
}

double mcd(const Mat& x, const Mat& y, bool exclude_c0) {
  if (x.rows() != y.rows() || x.cols() != y.cols())
    throw ValidationError("mcd: shape mismatch (" + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) +
                          " vs " + std::to_string(y.rows()) + "x" + std::to_string(y.cols()) + ")");
  if (x.rows() == 0) throw ValidationError("mcd: empty input");
  const Eigen::Index start = exclude_c0 ? 1 : 0;
  if (x.cols() - start < 1) throw ValidationError("mcd: no channels left");
  const Mat diff = x.rightCols(x.cols() - start) - y.rightCols(y.cols() - start);
  const Vec per_frame = diff.rowwise().norm();
  return kMcdScale * per_frame.mean();
}

double mcd_dtw(const Mat& x, const Mat& y, bool exclude_c0) {
  const Eigen::Index start = exclude_c0 ? 1 : 0;
  if (x.cols() - start < 1) throw ValidationError("mcd: no channels left");
  const Mat xs = x.rightCols(x.cols() - start);
  const Mat ys = y.rightCols(y.cols() - start);
  const DtwResult al = dtw_align(xs, ys);
  double sum = 0.0;
  for (const auto& [i, j] : al.path) sum += (xs.row(i) - ys.row(j)).norm();
  return kMcdScale * sum / static_cast<double>(al.path.size());
}

std::optional<double> pearson(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw ValidationError("pearson: size mismatch");
  if (a.size() < 2) return std::nullopt;
  const Vec ca = a.array() - a.mean();
  const Vec cb = b.array() - b.mean();
  const double va = ca.squaredNorm(), vb = cb.squaredNorm();
  const double tiny = 1e-12 * static_cast<double>(a.size());
  if (va <= tiny || vb <= tiny) return std::nullopt;
  return ca.dot(cb) / std::sqrt(va * vb);
}

std::optional<double> pearson_masked(const Vec& a, const Vec& b, const Vec& mask) {
  if (a.size() != b.size() || a.size() != mask.size()) throw ValidationError("pearson: size mismatch");
  std::vector<double> xa, xb;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (mask[i] > 0.5) {
      xa.push_back(a[i]);
      xb.push_back(b[i]);
    }
  }
  return pearson(Eigen::Map<const Vec>(xa.data(), static_cast<Eigen::Index>(xa.size())),
                 Eigen::Map<const Vec>(xb.data(), static_cast<Eigen::Index>(xb.size())));
}

double cosine_sim(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw ValidationError("cosine: size mismatch");
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw ValidationError("cosine: zero vector");
  return a.dot(b) / (na * nb);
}

double pairwise_sum(const std::vector<double>& v) {
  auto rec = [&](auto&& self, std::size_t lo, std::size_t hi) -> double {
    if (hi - lo <= 8) {
      double s = 0.0;
      for (std::size_t i = lo; i < hi; ++i) s += v[i];
      return s;
    }
    const std::size_t mid = lo + (hi - lo) / 2;
    return self(self, lo, mid) + self(self, mid, hi);
  };
  return rec(rec, 0, v.size());
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : pairwise_sum(v) / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double m = mean_of(v);
  std::vector<double> sq(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) sq[i] = (v[i] - m) * (v[i] - m);
  return std::sqrt(mean_of(sq));
}

Vec energy_proxy(const Mat& mel) { return mel.rowwise().mean(); }

Vec pitch_proxy(const Mat& mel) {
  const Eigen::Index m = mel.cols();
  Vec ramp = Vec::LinSpaced(m, 0.0, static_cast<double>(m - 1));
  ramp.array() -= ramp.mean();
  const double den = ramp.squaredNorm();
  if (den == 0.0) return Vec::Zero(mel.rows());
  return mel * ramp / den;
}

Vec pooled_stats(const Mat& x) {
  const Eigen::Index c = x.cols();
  Vec out(2 * c);
  const Eigen::RowVectorXd mean = x.colwise().mean();
  out.head(c) = mean.transpose();
  out.tail(c) = ((x.rowwise() - mean).array().square().colwise().mean()).sqrt().transpose();
  return out;
}

}  // namespace savc
