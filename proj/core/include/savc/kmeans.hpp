#pragma once

#include <vector>

#include "savc/rng.hpp"
#include "savc/tensorio.hpp"

namespace savc {

// Lloyd's algorithm over frame vectors (rows). Seeds with k distinct rows
// chosen by `rng`; empty clusters keep their previous centroid.
Mat kmeans(const Mat& frames, int k, int iterations, CounterRng& rng);

// Replaces every row with its nearest centroid (ties go to the lower index).
Mat quantize_rows(const Mat& x, const Mat& centroids);

}  // namespace savc
