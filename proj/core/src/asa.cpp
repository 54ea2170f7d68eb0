#include "savc/asa.hpp"

#include <atomic>
#include <cmath>

#include "savc/error.hpp"

namespace savc::asa {

std::string to_string(PerturbMode m) {
  switch (m) {
    case PerturbMode::literal: return "literal";
    case PerturbMode::learned_scale: return "learned-scale";
    case PerturbMode::fixed: return "fixed";
  }
  return "?";
}

PerturbMode parse_perturb_mode(const std::string& s) {
  if (s == "literal") return PerturbMode::literal;
  if (s == "learned-scale") return PerturbMode::learned_scale;
  if (s == "fixed") return PerturbMode::fixed;
  throw ValidationError("unknown perturbation mode '" + s + "'");
}

double softplus(double x) {
  // log1p(exp(x)) without overflow for large x.
  return x > 30.0 ? x : std::log1p(std::exp(x));
}

double inverse_softplus(double y) { return std::log(std::expm1(y)); }

namespace {
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace

PerturbParams PerturbParams::initial(Eigen::Index channels, PerturbMode mode, double grl_lambda) {
  if (grl_lambda <= 0) throw ValidationError("GRL lambda must be positive");
  PerturbParams p;
  p.i_mu = Vec::Constant(channels, inverse_softplus(1.0));
  p.i_sigma = Vec::Constant(channels, inverse_softplus(1.0));
  p.mode = mode;
  p.grl_lambda = grl_lambda;
  return p;
}

ChannelStats channel_stats(const Mat& x, double eps) {
  if (x.rows() < 2) throw ValidationError("channel_stats needs at least 2 frames");
  const double w = static_cast<double>(x.rows());
  ChannelStats s;
  s.mu = x.colwise().sum().transpose() / w;
  s.sigma.resize(x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const double var = (x.col(c).array() - s.mu(c)).square().sum() / w;
    s.sigma(c) = std::sqrt(var + eps * eps);
  }
  return s;
}

Mat instance_normalize(const Mat& x, const ChannelStats& stats) {
  if (stats.mu.size() != x.cols() || stats.sigma.size() != x.cols()) {
    throw ValidationError("instance_normalize: stats have " + std::to_string(stats.mu.size()) +
                          " channels, input has " + std::to_string(x.cols()));
  }
  Mat out = x.rowwise() - stats.mu.transpose();
  return out.array().rowwise() / stats.sigma.transpose().array();
}

BatchSpread batch_stat_spread(std::span<const ChannelStats> batch) {
  if (batch.size() < 2) throw ValidationError("batch statistic spread needs batch size >= 2");
  const auto c = batch.front().mu.size();
  const double b = static_cast<double>(batch.size());
  Vec mean_mu = Vec::Zero(c), mean_sigma = Vec::Zero(c);
  for (const auto& s : batch) {
    if (s.mu.size() != c) throw ValidationError("batch instances disagree on channel count");
    mean_mu += s.mu;
    mean_sigma += s.sigma;
  }
  mean_mu /= b;
  mean_sigma /= b;
  Vec var_mu = Vec::Zero(c), var_sigma = Vec::Zero(c);
  for (const auto& s : batch) {
    var_mu.array() += (s.mu - mean_mu).array().square();
    var_sigma.array() += (s.sigma - mean_sigma).array().square();
  }
  return {(var_mu / b).cwiseSqrt(), (var_sigma / b).cwiseSqrt()};
}

namespace {

Vec perturb_one(const Vec& i, const Vec& spread, const PerturbParams& p) {
  Vec out(spread.size());
  for (Eigen::Index c = 0; c < spread.size(); ++c) {
    switch (p.mode) {
      case PerturbMode::fixed:
        out(c) = spread(c);
        break;
      case PerturbMode::learned_scale:
        out(c) = softplus(i(c)) * spread(c);
        break;
      case PerturbMode::literal: {
        const double denom = i(c) * spread(c);
        out(c) = std::abs(denom) < 1e-12 ? p.literal_cap : i(c) / denom;
        break;
      }
    }
  }
  return out;
}

}  // namespace

BatchSpread perturbed_spread(const PerturbParams& params, const BatchSpread& spread) {
  if (!spread.mu.allFinite() || !spread.sigma.allFinite())
    throw ValidationError("perturbed_spread: non-finite spread");
  if (params.mode != PerturbMode::fixed &&
      (params.i_mu.size() != spread.mu.size() || params.i_sigma.size() != spread.sigma.size())) {
    throw ValidationError("perturbation parameters do not match channel count");
  }
  return {perturb_one(params.i_mu, spread.mu, params), perturb_one(params.i_sigma, spread.sigma, params)};
}

SampledStats sample_stats(const ChannelStats& stats, const BatchSpread& spread, CounterRng& rng) {
  const auto c = stats.mu.size();
  SampledStats s;
  s.z_mu.resize(c);
  s.z_sigma.resize(c);
  for (Eigen::Index k = 0; k < c; ++k) s.z_mu(k) = rng.normal();
  for (Eigen::Index k = 0; k < c; ++k) s.z_sigma(k) = rng.normal();
  s.mu = stats.mu + spread.mu.cwiseProduct(s.z_mu);
  s.sigma = stats.sigma + spread.sigma.cwiseProduct(s.z_sigma);
  s.clamped = s.sigma.array() < kSigmaMin;
  s.sigma = s.sigma.cwiseMax(kSigmaMin);
  return s;
}

Mat style_transform(const Mat& normalized, const Vec& mu_t, const Vec& sigma_t) {
  if (mu_t.size() != normalized.cols() || sigma_t.size() != normalized.cols())
    throw ValidationError("style_transform: statistic length does not match channels");
  Mat out = normalized.array().rowwise() * sigma_t.transpose().array();
  return out.rowwise() + mu_t.transpose();
}

GradientReversal::GradientReversal(double lambda) : lambda_(lambda) {
  if (!(lambda > 0)) throw ValidationError("GRL lambda must be positive");
}

namespace {
std::atomic<std::uint64_t> g_invocations{0};
}  // namespace

std::uint64_t invocation_count() { return g_invocations.load(); }

std::vector<Mat> asa_forward(std::span<const Mat> batch, const PerturbParams& params, CounterRng& rng,
                             AsaCache* cache, Phase phase) {
  if (phase == Phase::inference) throw ValidationError("ASA must not run at inference time");
  if (batch.size() < 2) throw ValidationError("ASA needs batch size >= 2");
  ++g_invocations;
  AsaCache local;
  AsaCache& c = cache ? *cache : local;
  c = {};
  for (const auto& x : batch) {
    c.stats.push_back(channel_stats(x));
    c.normalized.push_back(instance_normalize(x, c.stats.back()));
  }
  c.spread = batch_stat_spread(c.stats);
  // The GRL sits on the perturbed spread; forward is the identity.
  GradientReversal grl(params.grl_lambda);
  c.perturbed = grl.forward(perturbed_spread(params, c.spread));
  std::vector<Mat> out;
  out.reserve(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    c.samples.push_back(sample_stats(c.stats[b], c.perturbed, rng));
    out.push_back(style_transform(c.normalized[b], c.samples[b].mu, c.samples[b].sigma));
  }
  return out;
}

AsaGrads asa_backward(const AsaCache& cache, std::span<const Mat> grad_out, const PerturbParams& params) {
  const auto ch = cache.spread.mu.size();
  Vec d_spread_mu = Vec::Zero(ch), d_spread_sigma = Vec::Zero(ch);
  for (std::size_t b = 0; b < grad_out.size(); ++b) {
    const Mat& g = grad_out[b];
    const auto& s = cache.samples[b];
    Vec d_mu_t = g.colwise().sum().transpose();
    Vec d_sigma_t = g.cwiseProduct(cache.normalized[b]).colwise().sum().transpose();
    for (Eigen::Index k = 0; k < ch; ++k)
      if (s.clamped(k)) d_sigma_t(k) = 0.0;
    d_spread_mu += d_mu_t.cwiseProduct(s.z_mu);
    d_spread_sigma += d_sigma_t.cwiseProduct(s.z_sigma);
  }
  GradientReversal grl(params.grl_lambda);
  d_spread_mu = grl.backward(d_spread_mu);
  d_spread_sigma = grl.backward(d_spread_sigma);

  AsaGrads out{Vec::Zero(ch), Vec::Zero(ch)};
  switch (params.mode) {
    case PerturbMode::fixed:
      break;
    case PerturbMode::learned_scale:
      for (Eigen::Index k = 0; k < ch; ++k) {
        out.i_mu(k) = d_spread_mu(k) * cache.spread.mu(k) * sigmoid(params.i_mu(k));
        out.i_sigma(k) = d_spread_sigma(k) * cache.spread.sigma(k) * sigmoid(params.i_sigma(k));
      }
      break;
    case PerturbMode::literal:
      // d/dI [I / (I * S)] = 0: the parameter cancels out of the literal formula.
      break;
  }
  return out;
}

}  // namespace savc::asa
