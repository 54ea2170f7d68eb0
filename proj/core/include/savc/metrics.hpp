#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "savc/tensorio.hpp"

namespace savc {

struct DtwResult {
  std::vector<std::pair<int, int>> path;  // (row of x, row of y), monotone
  double cost = 0.0;                      // summed Euclidean frame distances
};

// Classic DTW with steps (1,1), (1,0), (0,1). Backtracking prefers the
// diagonal, then advancing x, then advancing y, so ties resolve the same way
// every time.
DtwResult dtw_align(const Mat& x, const Mat& y);

// Mel cepstral distortion in dB, framewise on equal-length inputs. Channel 0
// is dropped when exclude_c0 is set.
double mcd(const Mat& x, const Mat& y, bool exclude_c0 = false);
// Same, averaged over a DTW path for unequal lengths.
double mcd_dtw(const Mat& x, const Mat& y, bool exclude_c0 = false);
constexpr double kMcdScale = 6.141851463713754;  // 10 * sqrt(2) / ln(10)

// nullopt when either side has (near) zero variance or fewer than 2 points.
std::optional<double> pearson(const Vec& a, const Vec& b);
// Restricted to entries with mask > 0.5.
std::optional<double> pearson_masked(const Vec& a, const Vec& b, const Vec& mask);

// Throws ValidationError on a zero vector or size mismatch.
double cosine_sim(const Vec& a, const Vec& b);

// Prosody proxies on a mel-like matrix.
Vec energy_proxy(const Mat& mel);  // per-frame mean across channels
Vec pitch_proxy(const Mat& mel);   // per-frame projection on the centered channel index

// Summation over a fixed binary tree, independent of thread scheduling.
double pairwise_sum(const std::vector<double>& v);
double mean_of(const std::vector<double>& v);
double std_of(const std::vector<double>& v);  // population

// Per-channel temporal mean then std, concatenated (2 * cols entries).
Vec pooled_stats(const Mat& x);

}  // namespace savc
