#pragma once

#include <span>
#include <string>
#include <vector>

#include "savc/rng.hpp"
#include "savc/tensorio.hpp"

// Feature-statistic style perturbation: per-instance channel statistics,
// instance normalization, Gaussian resampling of the statistics with a
// batch-derived spread, and the gradient-reversal link that lets the spread
// scale be trained against the encoder.
namespace savc::asa {

inline constexpr double kStatEps = 1e-5;
inline constexpr double kSigmaMin = 1e-3;

struct ChannelStats {
  Vec mu;
  Vec sigma;
};

struct BatchSpread {
  Vec mu;
  Vec sigma;
};

enum class PerturbMode { literal, learned_scale, fixed };

std::string to_string(PerturbMode m);
PerturbMode parse_perturb_mode(const std::string& s);

struct PerturbParams {
  Vec i_mu;
  Vec i_sigma;
  PerturbMode mode = PerturbMode::learned_scale;
  double grl_lambda = 1.0;
  // Replacement for a literal-mode channel whose I * Sigma vanishes.
  double literal_cap = 10.0;

  // softplus(I) == 1 on every channel.
  static PerturbParams initial(Eigen::Index channels, PerturbMode mode = PerturbMode::learned_scale,
                               double grl_lambda = 1.0);
};

double softplus(double x);
double inverse_softplus(double y);

// Population statistics over frames; sigma = sqrt(var + eps^2).
ChannelStats channel_stats(const Mat& x, double eps = kStatEps);
Mat instance_normalize(const Mat& x, const ChannelStats& stats);
BatchSpread batch_stat_spread(std::span<const ChannelStats> batch);
BatchSpread perturbed_spread(const PerturbParams& params, const BatchSpread& spread);

struct SampledStats {
  Vec mu;
  Vec sigma;
  // Standard-normal draws, kept for the backward pass.
  Vec z_mu;
  Vec z_sigma;
  // 1 where sigma was clamped at kSigmaMin.
  Eigen::Array<bool, Eigen::Dynamic, 1> clamped;
};

// Draw order per instance: C normals for mu, then C normals for sigma.
SampledStats sample_stats(const ChannelStats& stats, const BatchSpread& spread, CounterRng& rng);
Mat style_transform(const Mat& normalized, const Vec& mu_t, const Vec& sigma_t);

// Identity forward; backward multiplies by -lambda.
class GradientReversal {
 public:
  explicit GradientReversal(double lambda);
  template <typename T>
  const T& forward(const T& x) const {
    return x;
  }
  template <typename T>
  T backward(const T& grad) const {
    return -lambda_ * grad;
  }
  double lambda() const { return lambda_; }

 private:
  double lambda_;
};

struct AsaCache {
  std::vector<ChannelStats> stats;
  std::vector<Mat> normalized;
  std::vector<SampledStats> samples;
  BatchSpread spread;
  BatchSpread perturbed;
};

struct AsaGrads {
  Vec i_mu;
  Vec i_sigma;
};

enum class Phase { training, inference };

// Full perturbation of a batch of W x C instances (frames may differ per
// instance, channels may not). Throws on inference phase or batch < 2.
std::vector<Mat> asa_forward(std::span<const Mat> batch, const PerturbParams& params, CounterRng& rng,
                             AsaCache* cache = nullptr, Phase phase = Phase::training);

// Number of asa_forward calls in this process; inference paths must leave it unchanged.
std::uint64_t invocation_count();

// Gradient of the downstream loss w.r.t. I_mu / I_sigma given d loss / d output,
// already sign-reversed and scaled by the GRL.
AsaGrads asa_backward(const AsaCache& cache, std::span<const Mat> grad_out, const PerturbParams& params);

}  // namespace savc::asa
