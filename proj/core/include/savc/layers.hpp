#pragma once

#include <string>
#include <utility>
#include <vector>

#include "savc/rng.hpp"
#include "savc/tensorio.hpp"

// Small differentiable building blocks with hand-written backward passes.
// Sequences are T x features matrices; every backward accumulates into the
// owning Param's grad and returns the gradient w.r.t. its input.
namespace savc::nn {

struct Param {
  Mat value;
  Mat grad;

  Param() = default;
  Param(Eigen::Index rows, Eigen::Index cols) : value(Mat::Zero(rows, cols)), grad(Mat::Zero(rows, cols)) {}
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

using ParamList = std::vector<std::pair<std::string, Param*>>;

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
void init_uniform(Param& p, int fan_in, CounterRng& rng);

class Linear {
 public:
  Linear() = default;
  Linear(int in, int out, CounterRng& rng);

  Mat forward(const Mat& x) const;
  Mat backward(const Mat& x, const Mat& dy);
  void zero_init();
  void collect(const std::string& prefix, ParamList& out);

  int in_features() const { return static_cast<int>(w_.value.cols()); }
  int out_features() const { return static_cast<int>(w_.value.rows()); }
  Param& weight() { return w_; }
  Param& bias() { return b_; }
  const Param& weight() const { return w_; }
  const Param& bias() const { return b_; }

 private:
  Param w_;  // out x in
  Param b_;  // out x 1
};

// Same-padded dilated 1-D convolution over time.
class Conv1d {
 public:
  struct Cache {
    Mat cols;  // T x (kernel * in)
  };

  Conv1d() = default;
  Conv1d(int in, int out, int kernel, int dilation, CounterRng& rng);

  Mat forward(const Mat& x, Cache* cache) const;
  Mat backward(const Cache& cache, const Mat& dy);
  void collect(const std::string& prefix, ParamList& out);

  int kernel() const { return kernel_; }

 private:
  Mat im2col(const Mat& x) const;

  int in_ = 0;
  int kernel_ = 1;
  int dilation_ = 1;
  Param w_;  // out x (kernel * in), tap-major
  Param b_;
};

// conv -> tanh, with an identity skip when channel counts agree.
class ConvBlock {
 public:
  struct Cache {
    Conv1d::Cache conv;
    Mat act;
  };

  ConvBlock() = default;
  ConvBlock(int in, int out, int kernel, int dilation, CounterRng& rng);

  Mat forward(const Mat& x, Cache* cache) const;
  Mat backward(const Cache& cache, const Mat& dy);
  void collect(const std::string& prefix, ParamList& out);

 private:
  Conv1d conv_;
  bool residual_ = false;
};

class Gru {
 public:
  struct Cache {
    Mat x;        // T x in
    Mat h_prev;   // H x T, state entering step t (processing order)
    Mat r, z, n;  // H x T
    Mat hn;       // H x T, W_hn h_prev + b_hn
    bool reverse = false;
  };

  Gru() = default;
  Gru(int in, int hidden, CounterRng& rng);

  // Returns T x H states indexed by frame (not processing order).
  Mat forward(const Mat& x, bool reverse, Cache* cache) const;
  Mat backward(const Cache& cache, const Mat& dh);
  void collect(const std::string& prefix, ParamList& out);

  int hidden() const { return hidden_; }

 private:
  int hidden_ = 0;
  Param w_ih_, w_hh_, b_ih_, b_hh_;  // gates ordered r, z, n
};

class BiGru {
 public:
  struct Cache {
    Gru::Cache fwd, bwd;
  };

  BiGru() = default;
  BiGru(int in, int hidden, CounterRng& rng);

  // T x 2H: [forward | backward].
  Mat forward(const Mat& x, Cache* cache) const;
  Mat backward(const Cache& cache, const Mat& dy);
  void collect(const std::string& prefix, ParamList& out);

  int hidden() const { return fwd_.hidden(); }

  // Final states of both directions: forward at T-1, backward at 0.
  static Vec final_state(const Mat& y, int hidden);
  static void add_final_state_grad(Mat& dy, const Vec& d_final, int hidden);

 private:
  Gru fwd_, bwd_;
};

// Stack of dilated conv blocks followed by a bidirectional GRU.
class Trunk {
 public:
  struct Cache {
    std::vector<ConvBlock::Cache> blocks;
    BiGru::Cache gru;
  };

  Trunk() = default;
  Trunk(int in, int conv_channels, int kernel, const std::vector<int>& dilations, int gru_hidden,
        CounterRng& rng);

  Mat forward(const Mat& x, Cache* cache) const;
  Mat backward(const Cache& cache, const Mat& dy);
  void collect(const std::string& prefix, ParamList& out);

  int out_features() const { return 2 * gru_.hidden(); }

 private:
  std::vector<ConvBlock> blocks_;
  BiGru gru_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 1.0;
};

class Adam {
 public:
  Adam(ParamList params, AdamConfig cfg);

  // Clips by global norm, then applies one update. Returns the pre-clip norm.
  double step();
  void zero_grad();
  void set_lr(double lr) { cfg_.lr = lr; }
  const ParamList& params() const { return params_; }
  long steps() const { return t_; }

 private:
  ParamList params_;
  AdamConfig cfg_;
  std::vector<Mat> m_, v_;
  long t_ = 0;
};

double grad_norm(const ParamList& params);

}  // namespace savc::nn
