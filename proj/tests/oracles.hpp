#pragma once

// Brute-force reference computations. These use plain nested loops over the
// dense adjacency and never call into the library's kernels.

#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <vector>

#include "gmil/bag_graph.hpp"
#include "gmil/linalg.hpp"
#include "gmil/model.hpp"
#include "gmil/train.hpp"

namespace oracle {

using gmil::Matrix;
using gmil::Vector;

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

inline double cosine(const Vector& a, const Vector& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

inline Matrix similarity_adjacency(const gmil::Bag& bag, double threshold) {
  const std::size_t k = bag.size();
  Matrix a(k, k);
  for (std::size_t m = 0; m < k; ++m)
    for (std::size_t n = 0; n < k; ++n)
      a(m, n) = (m == n || cosine(bag.instances[m].features, bag.instances[n].features) > threshold)
                    ? 1.0
                    : 0.0;
  return a;
}

inline Matrix spatial_adjacency(const gmil::Bag& bag) {
  const std::size_t k = bag.size();
  Matrix a(k, k);
  for (std::size_t m = 0; m < k; ++m)
    for (std::size_t n = 0; n < k; ++n) {
      const auto& p = *bag.instances[m].grid_pos;
      const auto& q = *bag.instances[n].grid_pos;
      a(m, n) = (std::abs(p.row - q.row) <= 1 && std::abs(p.col - q.col) <= 1) ? 1.0 : 0.0;
    }
  return a;
}

inline Vector row_sums(const Matrix& a) {
  Vector d(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) d[i] += a(i, j);
  return d;
}

// out_k = sum_{j in N(k)} f_j^T W / d_k, one node at a time.
inline Matrix graph_conv(const Matrix& f, const Matrix& adj, const Matrix& w) {
  const std::size_t k = f.rows();
  Matrix out(k, w.cols());
  for (std::size_t node = 0; node < k; ++node) {
    double deg = 0.0;
    for (std::size_t j = 0; j < k; ++j) deg += adj(node, j);
    for (std::size_t c = 0; c < w.cols(); ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        if (adj(node, j) == 0.0) continue;
        for (std::size_t i = 0; i < f.cols(); ++i) s += f(j, i) * w(i, c);
      }
      out(node, c) = s / deg;
    }
  }
  return out;
}

struct Pool {
  Vector scores;
  Vector alpha;
  Vector z;
};

// score_k = u . tanh(sum_{j in N(k)} V z_j / d_k); alpha = softmax; Z = sum alpha_k z_k.
inline Pool attention(const Matrix& z, const Matrix& adj, const Vector& u, const Matrix& v) {
  const std::size_t k = z.rows();
  Pool p;
  p.scores.assign(k, 0.0);
  for (std::size_t node = 0; node < k; ++node) {
    double deg = 0.0;
    Vector m(v.rows(), 0.0);
    for (std::size_t j = 0; j < k; ++j) {
      if (adj(node, j) == 0.0) continue;
      deg += 1.0;
      for (std::size_t l = 0; l < v.rows(); ++l)
        for (std::size_t c = 0; c < z.cols(); ++c) m[l] += v(l, c) * z(j, c);
    }
    for (std::size_t l = 0; l < v.rows(); ++l) p.scores[node] += u[l] * std::tanh(m[l] / deg);
  }
  double mx = p.scores[0];
  for (double s : p.scores) mx = std::max(mx, s);
  double total = 0.0;
  p.alpha.assign(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) total += p.alpha[i] = std::exp(p.scores[i] - mx);
  for (double& a : p.alpha) a /= total;
  p.z.assign(z.cols(), 0.0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t c = 0; c < z.cols(); ++c) p.z[c] += p.alpha[i] * z(i, c);
  return p;
}

// Class probabilities of the full model, composed from the oracles above.
// Dense convolution and plain attention use the identity adjacency.
inline Vector forward_probs(const Matrix& features, const Matrix& adj,
                            const gmil::ModelParams& params) {
  const auto& cfg = params.config;
  const std::size_t k = features.rows();
  Matrix eye(k, k);
  for (std::size_t i = 0; i < k; ++i) eye(i, i) = 1.0;
  const Matrix& conv_adj = cfg.conv_mode == gmil::ConvMode::kGraph ? adj : eye;
  const Matrix& att_adj = cfg.attention_mode == gmil::AttentionMode::kGraph ? adj : eye;

  Matrix h = features;
  for (const auto& layer : params.encoder) {
    Matrix pre = oracle::matmul(h, layer.weight);
    for (std::size_t r = 0; r < pre.rows(); ++r)
      for (std::size_t c = 0; c < pre.cols(); ++c) pre(r, c) = std::max(0.0, pre(r, c) + layer.bias[c]);
    h = pre;
  }
  for (std::size_t l = 0; l < params.conv.size(); ++l) {
    h = oracle::graph_conv(h, conv_adj, params.conv[l]);
    if (l + 1 < params.conv.size())
      for (double& x : h.data()) x = std::max(0.0, x);
  }
  const Pool pool = oracle::attention(h, att_adj, params.att_u, params.att_v);
  const std::size_t outs = params.head_w.rows();
  Vector logits(outs);
  for (std::size_t o = 0; o < outs; ++o) {
    logits[o] = params.head_b[o];
    for (std::size_t c = 0; c < pool.z.size(); ++c) logits[o] += params.head_w(o, c) * pool.z[c];
  }
  if (outs == 1) {
    const double p = 1.0 / (1.0 + std::exp(-logits[0]));
    return {1.0 - p, p};
  }
  double mx = logits[0];
  for (double x : logits) mx = std::max(mx, x);
  Vector probs(outs);
  double total = 0.0;
  for (std::size_t o = 0; o < outs; ++o) total += probs[o] = std::exp(logits[o] - mx);
  for (double& p : probs) p /= total;
  return probs;
}

// Fraction of (positive, negative) pairs ranked correctly, ties counting half.
inline double pairwise_auc(const std::vector<gmil::Prediction>& preds) {
  double credit = 0.0;
  double pairs = 0.0;
  for (const auto& p : preds) {
    if (p.label != 1) continue;
    for (const auto& n : preds) {
      if (n.label != 0) continue;
      pairs += 1.0;
      if (p.prob > n.prob) credit += 1.0;
      else if (p.prob == n.prob) credit += 0.5;
    }
  }
  return credit / pairs;
}

inline double bce(double p, int y) {
  p = std::min(std::max(p, 1e-12), 1.0 - 1e-12);
  return -(y * std::log(p) + (1 - y) * std::log(1.0 - p));
}

}  // namespace oracle
