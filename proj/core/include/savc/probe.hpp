#pragma once

#include <cstdint>
#include <vector>

#include "savc/tensorio.hpp"

namespace savc {

struct ProbeOptions {
  std::uint64_t seed = 1234;
  double test_fraction = 0.2;
  int epochs = 200;
  double lr = 0.1;
};

struct ProbeResult {
  double accuracy = 0.0;  // on the held-out part of the split
  bool degenerate = false;  // single label: accuracy is trivially 1
  int train_size = 0;
  int test_size = 0;
  int classes = 0;
};

// Linear (softmax regression) probe. Rows of `features` are samples. The
// split is stratified and seeded; features are standardized on the training
// part. Throws ValidationError when a label has fewer than 2 samples.
ProbeResult leakage_probe(const Mat& features, const std::vector<int>& labels, const ProbeOptions& opts = {});

}  // namespace savc
