#pragma once

// Test-only oracles, independent of the library's differentiation path:
// central finite differences, a plain-Eigen MLP with a closed-form input
// gradient, and brute-force discounted returns.

#include <wdail/autodiff.hpp>
#include <wdail/rng.hpp>

#include <functional>
#include <vector>

namespace oracles {

using wdail::ad::Mat;

// |a - b| scaled by max(|a|, |b|, floor).
inline double rel_err(double a, double b, double floor = 1e-3) {
  double denom = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / denom;
}

// Central finite differences of f with respect to every entry of every leaf.
// Returns one gradient matrix per leaf.
inline std::vector<Mat> finite_diff(
    const std::function<double(const std::vector<Mat>&)>& f,
    std::vector<Mat> leaves, double h = 1e-4) {
  std::vector<Mat> grads;
  grads.reserve(leaves.size());
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    Mat g(leaves[k].rows(), leaves[k].cols());
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      for (Eigen::Index j = 0; j < g.cols(); ++j) {
        double orig = leaves[k](i, j);
        leaves[k](i, j) = orig + h;
        double fp = f(leaves);
        leaves[k](i, j) = orig - h;
        double fm = f(leaves);
        leaves[k](i, j) = orig;
        g(i, j) = (fp - fm) / (2.0 * h);
      }
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

// Plain-Eigen tanh MLP: layers alternate weight (in x out) and bias (1 x out).
struct RawMlp {
  std::vector<Mat> params;  // W0, b0, W1, b1, ...

  static RawMlp random(const std::vector<int>& dims, wdail::Rng& rng,
                       double scale = 0.6) {
    RawMlp net;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      Mat w(dims[l], dims[l + 1]);
      Mat b(1, dims[l + 1]);
      for (Eigen::Index i = 0; i < w.size(); ++i)
        w.reshaped()(i) = scale * rng.normal();
      for (Eigen::Index i = 0; i < b.size(); ++i)
        b.reshaped()(i) = 0.1 * rng.normal();
      net.params.push_back(std::move(w));
      net.params.push_back(std::move(b));
    }
    return net;
  }

  // Forward for a batch (rows = samples); tanh on all but the last layer.
  Mat forward(const Mat& x) const {
    Mat h = x;
    for (std::size_t l = 0; l + 1 < params.size(); l += 2) {
      Mat z = h * params[l];
      z.rowwise() += params[l + 1].row(0);
      h = (l + 2 < params.size()) ? Mat(z.array().tanh().matrix()) : z;
    }
    return h;
  }

  // Closed-form d(output)/d(input) for a single-hidden-layer scalar net:
  // D(z) = w2^T tanh(W1 z + b1) + b2.
  Mat input_gradient_1h(const Mat& z_row) const {
    const Mat& w1 = params[0];
    const Mat& b1 = params[1];
    const Mat& w2 = params[2];
    Mat pre = z_row * w1 + b1;
    Mat sech2 = (1.0 - pre.array().tanh().square()).matrix();
    Mat scaled = (w2.col(0).transpose().array() * sech2.array()).matrix();
    return scaled * w1.transpose();  // 1 x in
  }
};

// Discounted return G_t for every step of an episode, brute force.
inline std::vector<double> discounted_returns(const std::vector<double>& rewards,
                                              double gamma) {
  std::vector<double> g(rewards.size(), 0.0);
  double acc = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc = rewards[i] + gamma * acc;
    g[i] = acc;
  }
  return g;
}

}  // namespace oracles
