#include "savc/layers.hpp"

#include <cmath>

#include "savc/error.hpp"

namespace savc::nn {

void init_uniform(Param& p, int fan_in, CounterRng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (Eigen::Index j = 0; j < p.value.cols(); ++j)
    for (Eigen::Index i = 0; i < p.value.rows(); ++i) p.value(i, j) = rng.uniform(-bound, bound);
  p.zero_grad();
}

// ---------------------------------------------------------------------------

Linear::Linear(int in, int out, CounterRng& rng) : w_(out, in), b_(out, 1) {
  init_uniform(w_, in, rng);
  init_uniform(b_, in, rng);
}

Mat Linear::forward(const Mat& x) const {
  if (x.cols() != w_.value.cols())
    throw ValidationError("linear: expected " + std::to_string(w_.value.cols()) + " input features, got " +
                          std::to_string(x.cols()));
  Mat y = x * w_.value.transpose();
  y.rowwise() += b_.value.col(0).transpose();
  return y;
}

Mat Linear::backward(const Mat& x, const Mat& dy) {
  w_.grad.noalias() += dy.transpose() * x;
  b_.grad.col(0) += dy.colwise().sum().transpose();
  return dy * w_.value;
}

void Linear::zero_init() {
  w_.value.setZero();
  b_.value.setZero();
}

void Linear::collect(const std::string& prefix, ParamList& out) {
  out.emplace_back(prefix + ".weight", &w_);
  out.emplace_back(prefix + ".bias", &b_);
}

// ---------------------------------------------------------------------------

Conv1d::Conv1d(int in, int out, int kernel, int dilation, CounterRng& rng)
    : in_(in), kernel_(kernel), dilation_(dilation), w_(out, kernel * in), b_(out, 1) {
  if (kernel % 2 == 0) throw ValidationError("conv kernel must be odd");
  init_uniform(w_, kernel * in, rng);
  init_uniform(b_, kernel * in, rng);
}

Mat Conv1d::im2col(const Mat& x) const {
  const auto t_len = x.rows();
  const int half = kernel_ / 2;
  Mat cols = Mat::Zero(t_len, static_cast<Eigen::Index>(kernel_) * in_);
  for (int k = 0; k < kernel_; ++k) {
    const Eigen::Index offset = static_cast<Eigen::Index>(k - half) * dilation_;
    const Eigen::Index lo = std::max<Eigen::Index>(0, -offset);
    const Eigen::Index hi = std::min<Eigen::Index>(t_len, t_len - offset);
    if (hi > lo) cols.block(lo, k * in_, hi - lo, in_) = x.middleRows(lo + offset, hi - lo);
  }
  return cols;
}

Mat Conv1d::forward(const Mat& x, Cache* cache) const {
  if (x.cols() != in_)
    throw ValidationError("conv: expected " + std::to_string(in_) + " channels, got " + std::to_string(x.cols()));
  Mat cols = im2col(x);
  Mat y = cols * w_.value.transpose();
  y.rowwise() += b_.value.col(0).transpose();
  if (cache) cache->cols = std::move(cols);
  return y;
}

Mat Conv1d::backward(const Cache& cache, const Mat& dy) {
  w_.grad.noalias() += dy.transpose() * cache.cols;
  b_.grad.col(0) += dy.colwise().sum().transpose();
  const Mat dcols = dy * w_.value;
  const auto t_len = dy.rows();
  const int half = kernel_ / 2;
  Mat dx = Mat::Zero(t_len, in_);
  for (int k = 0; k < kernel_; ++k) {
    const Eigen::Index offset = static_cast<Eigen::Index>(k - half) * dilation_;
    const Eigen::Index lo = std::max<Eigen::Index>(0, -offset);
    const Eigen::Index hi = std::min<Eigen::Index>(t_len, t_len - offset);
    if (hi > lo) dx.middleRows(lo + offset, hi - lo) += dcols.block(lo, k * in_, hi - lo, in_);
  }
  return dx;
}

void Conv1d::collect(const std::string& prefix, ParamList& out) {
  out.emplace_back(prefix + ".weight", &w_);
  out.emplace_back(prefix + ".bias", &b_);
}

// ---------------------------------------------------------------------------

ConvBlock::ConvBlock(int in, int out, int kernel, int dilation, CounterRng& rng)
    : conv_(in, out, kernel, dilation, rng), residual_(in == out) {}

Mat ConvBlock::forward(const Mat& x, Cache* cache) const {
  Mat act = conv_.forward(x, cache ? &cache->conv : nullptr).array().tanh();
  Mat y = residual_ ? Mat(act + x) : act;
  if (cache) cache->act = std::move(act);
  return y;
}

Mat ConvBlock::backward(const Cache& cache, const Mat& dy) {
  const Mat dpre = dy.array() * (1.0 - cache.act.array().square());
  Mat dx = conv_.backward(cache.conv, dpre);
  if (residual_) dx += dy;
  return dx;
}

void ConvBlock::collect(const std::string& prefix, ParamList& out) { conv_.collect(prefix + ".conv", out); }

// ---------------------------------------------------------------------------

namespace {
inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }
}  // namespace

Gru::Gru(int in, int hidden, CounterRng& rng)
    : hidden_(hidden), w_ih_(3 * hidden, in), w_hh_(3 * hidden, hidden), b_ih_(3 * hidden, 1), b_hh_(3 * hidden, 1) {
  init_uniform(w_ih_, hidden, rng);
  init_uniform(w_hh_, hidden, rng);
  init_uniform(b_ih_, hidden, rng);
  init_uniform(b_hh_, hidden, rng);
}

Mat Gru::forward(const Mat& x, bool reverse, Cache* cache) const {
  const int h = hidden_;
  const auto t_len = x.rows();
  // Input projections for every frame at once: 3H x T.
  Mat gi = w_ih_.value * x.transpose();
  gi.colwise() += b_ih_.value.col(0);

  Mat states(h, t_len);
  Mat h_prev(h, t_len), r(h, t_len), z(h, t_len), n(h, t_len), hn(h, t_len);
  Vec state = Vec::Zero(h);
  Vec gh(3 * h);
  for (Eigen::Index s = 0; s < t_len; ++s) {
    const Eigen::Index t = reverse ? t_len - 1 - s : s;
    gh.noalias() = w_hh_.value * state;
    gh += b_hh_.value.col(0);
    h_prev.col(s) = state;
    for (int k = 0; k < h; ++k) {
      const double rk = sigmoid(gi(k, t) + gh(k));
      const double zk = sigmoid(gi(h + k, t) + gh(h + k));
      const double nk = std::tanh(gi(2 * h + k, t) + rk * gh(2 * h + k));
      r(k, s) = rk;
      z(k, s) = zk;
      n(k, s) = nk;
      hn(k, s) = gh(2 * h + k);
      state(k) = (1.0 - zk) * nk + zk * state(k);
    }
    states.col(t) = state;
  }
  if (cache) {
    cache->x = x;
    cache->h_prev = std::move(h_prev);
    cache->r = std::move(r);
    cache->z = std::move(z);
    cache->n = std::move(n);
    cache->hn = std::move(hn);
    cache->reverse = reverse;
  }
  return states.transpose();
}

Mat Gru::backward(const Cache& c, const Mat& dh_frames) {
  const int h = hidden_;
  const auto t_len = dh_frames.rows();
  Mat dgi(3 * h, t_len);  // indexed by frame
  Mat dgh(3 * h, t_len);  // indexed by processing step
  Vec carry = Vec::Zero(h);
  for (Eigen::Index s = t_len - 1; s >= 0; --s) {
    const Eigen::Index t = c.reverse ? t_len - 1 - s : s;
    const Vec dh = dh_frames.row(t).transpose() + carry;
    Vec dh_prev(h);
    for (int k = 0; k < h; ++k) {
      const double rk = c.r(k, s), zk = c.z(k, s), nk = c.n(k, s), hp = c.h_prev(k, s);
      const double dn_pre = dh(k) * (1.0 - zk) * (1.0 - nk * nk);
      const double dz_pre = dh(k) * (hp - nk) * zk * (1.0 - zk);
      const double dr_pre = dn_pre * c.hn(k, s) * rk * (1.0 - rk);
      dgi(k, t) = dr_pre;
      dgi(h + k, t) = dz_pre;
      dgi(2 * h + k, t) = dn_pre;
      dgh(k, s) = dr_pre;
      dgh(h + k, s) = dz_pre;
      dgh(2 * h + k, s) = dn_pre * rk;
      dh_prev(k) = dh(k) * zk;
    }
    dh_prev.noalias() += w_hh_.value.transpose() * dgh.col(s);
    carry = dh_prev;
  }
  w_ih_.grad.noalias() += dgi * c.x;
  b_ih_.grad.col(0) += dgi.rowwise().sum();
  w_hh_.grad.noalias() += dgh * c.h_prev.transpose();
  b_hh_.grad.col(0) += dgh.rowwise().sum();
  return dgi.transpose() * w_ih_.value;
}

void Gru::collect(const std::string& prefix, ParamList& out) {
  out.emplace_back(prefix + ".w_ih", &w_ih_);
  out.emplace_back(prefix + ".w_hh", &w_hh_);
  out.emplace_back(prefix + ".b_ih", &b_ih_);
  out.emplace_back(prefix + ".b_hh", &b_hh_);
}

// ---------------------------------------------------------------------------

BiGru::BiGru(int in, int hidden, CounterRng& rng) : fwd_(in, hidden, rng), bwd_(in, hidden, rng) {}

Mat BiGru::forward(const Mat& x, Cache* cache) const {
  const int h = fwd_.hidden();
  Mat y(x.rows(), 2 * h);
  y.leftCols(h) = fwd_.forward(x, false, cache ? &cache->fwd : nullptr);
  y.rightCols(h) = bwd_.forward(x, true, cache ? &cache->bwd : nullptr);
  return y;
}

Mat BiGru::backward(const Cache& cache, const Mat& dy) {
  const int h = fwd_.hidden();
  Mat dx = fwd_.backward(cache.fwd, dy.leftCols(h));
  dx += bwd_.backward(cache.bwd, dy.rightCols(h));
  return dx;
}

void BiGru::collect(const std::string& prefix, ParamList& out) {
  fwd_.collect(prefix + ".fwd", out);
  bwd_.collect(prefix + ".bwd", out);
}

Vec BiGru::final_state(const Mat& y, int hidden) {
  Vec s(2 * hidden);
  s.head(hidden) = y.row(y.rows() - 1).head(hidden).transpose();
  s.tail(hidden) = y.row(0).tail(hidden).transpose();
  return s;
}

void BiGru::add_final_state_grad(Mat& dy, const Vec& d_final, int hidden) {
  dy.row(dy.rows() - 1).head(hidden) += d_final.head(hidden).transpose();
  dy.row(0).tail(hidden) += d_final.tail(hidden).transpose();
}

// ---------------------------------------------------------------------------

Trunk::Trunk(int in, int conv_channels, int kernel, const std::vector<int>& dilations, int gru_hidden,
             CounterRng& rng) {
  int c = in;
  for (int d : dilations) {
    blocks_.emplace_back(c, conv_channels, kernel, d, rng);
    c = conv_channels;
  }
  gru_ = BiGru(c, gru_hidden, rng);
}

Mat Trunk::forward(const Mat& x, Cache* cache) const {
  if (cache) cache->blocks.resize(blocks_.size());
  Mat h = x;
  for (std::size_t i = 0; i < blocks_.size(); ++i) h = blocks_[i].forward(h, cache ? &cache->blocks[i] : nullptr);
  return gru_.forward(h, cache ? &cache->gru : nullptr);
}

Mat Trunk::backward(const Cache& cache, const Mat& dy) {
  Mat d = gru_.backward(cache.gru, dy);
  for (std::size_t i = blocks_.size(); i-- > 0;) d = blocks_[i].backward(cache.blocks[i], d);
  return d;
}

void Trunk::collect(const std::string& prefix, ParamList& out) {
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(prefix + ".block" + std::to_string(i), out);
  gru_.collect(prefix + ".gru", out);
}

// ---------------------------------------------------------------------------

double grad_norm(const ParamList& params) {
  double s = 0.0;
  for (const auto& [name, p] : params) s += p->grad.squaredNorm();
  return std::sqrt(s);
}

Adam::Adam(ParamList params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& [name, p] : params_) {
    m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
  }
}

double Adam::step() {
  const double norm = grad_norm(params_);
  const double scale = (cfg_.grad_clip > 0 && norm > cfg_.grad_clip) ? cfg_.grad_clip / norm : 1.0;
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Param& p = *params_[i].second;
    const Mat g = p.grad * scale;
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    p.value.array() -= cfg_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
  }
  return norm;
}

void Adam::zero_grad() {
  for (auto& [name, p] : params_) p->zero_grad();
}

}  // namespace savc::nn
