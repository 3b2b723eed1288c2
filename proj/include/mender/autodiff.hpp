#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "mender/errors.hpp"
#include "mender/tensor.hpp"
#include "mender/tokens.hpp"

namespace mender::ad {

// Reverse-mode differentiation over whole matrices. Nodes are appended in
// evaluation order; backward() walks them in reverse.

struct Var {
  std::size_t id = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& grad)>;

  Var leaf(Matrix value, bool requires_grad = true) { return push(std::move(value), requires_grad, nullptr); }
  Var constant(Matrix value) { return push(std::move(value), false, nullptr); }

  /// `needs_grad` should be true when any input needs a gradient.
  Var push(Matrix value, bool needs_grad, Backward backward) {
    nodes_.push_back({std::move(value), Matrix(), needs_grad, std::move(backward)});
    return {nodes_.size() - 1};
  }

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }
  bool any_needs_grad(std::initializer_list<Var> vars) const {
    for (Var v : vars)
      if (needs_grad(v)) return true;
    return false;
  }

  /// Gradient of the last backward() root with respect to `v`; zeros if unreached.
  Matrix grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.grad.empty() ? Matrix(n.value.rows(), n.value.cols()) : n.grad;
  }

  void accumulate(Var v, const Matrix& g) {
    Node& n = nodes_.at(v.id);
    if (!n.needs_grad) return;
    if (n.grad.empty()) n.grad = g;
    else n.grad += g;
  }

  /// Seeds d(root)/d(root) = 1 for a 1×1 root.
  void backward(Var root) {
    Node& r = nodes_.at(root.id);
    if (r.value.rows() != 1 || r.value.cols() != 1) throw ShapeError("backward needs a scalar root");
    for (auto& n : nodes_) n.grad = Matrix();
    r.grad = Matrix(1, 1, 1.0);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.needs_grad || !n.backward || n.grad.empty()) continue;
      const Matrix g = n.grad;
      n.backward(*this, g);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

inline Var matmul(Tape& t, Var a, Var b) {
  return t.push(mender::matmul(t.value(a), t.value(b)), t.any_needs_grad({a, b}), [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.accumulate(a, mender::matmul_nt(g, t.value(b)));
    if (t.needs_grad(b)) t.accumulate(b, mender::matmul_tn(t.value(a), g));
  });
}

/// a·bᵀ
inline Var matmul_nt(Tape& t, Var a, Var b) {
  return t.push(mender::matmul_nt(t.value(a), t.value(b)), t.any_needs_grad({a, b}), [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.accumulate(a, mender::matmul(g, t.value(b)));
    if (t.needs_grad(b)) t.accumulate(b, mender::matmul_tn(g, t.value(a)));
  });
}

inline Var add(Tape& t, Var a, Var b) {
  t.value(a).require_same_shape(t.value(b), "ad::add");
  return t.push(t.value(a) + t.value(b), t.any_needs_grad({a, b}), [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

inline Var add_const(Tape& t, Var a, const Matrix& c) {
  return t.push(t.value(a) + c, t.needs_grad(a), [a](Tape& t, const Matrix& g) { t.accumulate(a, g); });
}

inline Var scale(Tape& t, Var a, double s) {
  return t.push(t.value(a) * s, t.needs_grad(a), [a, s](Tape& t, const Matrix& g) { t.accumulate(a, g * s); });
}

/// Elementwise product with a constant matrix (dropout masks).
inline Var mul_const(Tape& t, Var a, Matrix c) {
  Matrix out = t.value(a);
  out.require_same_shape(c, "ad::mul_const");
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= c.data()[i];
  return t.push(std::move(out), t.needs_grad(a), [a, c = std::move(c)](Tape& t, const Matrix& g) {
    Matrix d = g;
    for (std::size_t i = 0; i < d.size(); ++i) d.data()[i] *= c.data()[i];
    t.accumulate(a, d);
  });
}

/// Adds a 1×C row to every row of a.
inline Var add_row(Tape& t, Var a, Var row) {
  return t.push(add_row_broadcast(t.value(a), t.value(row).row(0)), t.any_needs_grad({a, row}),
                [a, row](Tape& t, const Matrix& g) {
                  t.accumulate(a, g);
                  if (!t.needs_grad(row)) return;
                  Matrix s(1, g.cols());
                  for (std::size_t r = 0; r < g.rows(); ++r)
                    for (std::size_t c = 0; c < g.cols(); ++c) s(0, c) += g(r, c);
                  t.accumulate(row, s);
                });
}

inline Var relu(Tape& t, Var a) {
  Matrix out = t.value(a);
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return t.push(std::move(out), t.needs_grad(a), [a](Tape& t, const Matrix& g) {
    Matrix d = g;
    const auto x = t.value(a).data();
    for (std::size_t i = 0; i < d.size(); ++i)
      if (x[i] <= 0.0) d.data()[i] = 0.0;
    t.accumulate(a, d);
  });
}

inline Var softmax_rows(Tape& t, Var a) {
  // The output node's id is known before it is pushed; backward reads its value.
  const Var self{t.size()};
  return t.push(mender::softmax_rows(t.value(a)), t.needs_grad(a), [a, self](Tape& t, const Matrix& g) {
    const Matrix& y = t.value(self);
    Matrix d(y.rows(), y.cols());
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) d(r, c) = y(r, c) * (g(r, c) - dot);
    }
    t.accumulate(a, d);
  });
}

/// Row-wise layer norm with 1×C gain and shift.
inline Var layer_norm(Tape& t, Var x, Var gain, Var shift, double eps = kLayerNormEps) {
  const Matrix& xv = t.value(x);
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Matrix xhat(rows, cols);
  std::vector<double> inv(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += xv(r, c);
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (xv(r, c) - mean) * (xv(r, c) - mean);
    var /= static_cast<double>(cols);
    inv[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) xhat(r, c) = (xv(r, c) - mean) * inv[r];
  }
  const Matrix out = mender::layer_norm(xv, t.value(gain).row(0), t.value(shift).row(0), eps);
  return t.push(out, t.any_needs_grad({x, gain, shift}),
                [x, gain, shift, xhat = std::move(xhat), inv = std::move(inv)](Tape& t, const Matrix& g) {
                  const std::size_t rows = g.rows(), cols = g.cols();
                  const auto gv = t.value(gain).row(0);
                  if (t.needs_grad(x)) {
                    Matrix d(rows, cols);
                    for (std::size_t r = 0; r < rows; ++r) {
                      double m1 = 0.0, m2 = 0.0;
                      for (std::size_t c = 0; c < cols; ++c) {
                        const double dh = g(r, c) * gv[c];
                        m1 += dh;
                        m2 += dh * xhat(r, c);
                      }
                      m1 /= static_cast<double>(cols);
                      m2 /= static_cast<double>(cols);
                      for (std::size_t c = 0; c < cols; ++c)
                        d(r, c) = inv[r] * (g(r, c) * gv[c] - m1 - xhat(r, c) * m2);
                    }
                    t.accumulate(x, d);
                  }
                  Matrix dg(1, cols), ds(1, cols);
                  for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < cols; ++c) {
                      dg(0, c) += g(r, c) * xhat(r, c);
                      ds(0, c) += g(r, c);
                    }
                  t.accumulate(gain, dg);
                  t.accumulate(shift, ds);
                });
}

inline Var slice_cols(Tape& t, Var a, std::size_t begin, std::size_t count) {
  return t.push(mender::slice_cols(t.value(a), begin, count), t.needs_grad(a),
                [a, begin, count](Tape& t, const Matrix& g) {
                  const Matrix& av = t.value(a);
                  Matrix d(av.rows(), av.cols());
                  for (std::size_t r = 0; r < g.rows(); ++r)
                    for (std::size_t c = 0; c < count; ++c) d(r, begin + c) = g(r, c);
                  t.accumulate(a, d);
                });
}

/// 1×C column sums.
inline Var col_sum(Tape& t, Var a) {
  const Matrix& av = t.value(a);
  Matrix out(1, av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c) out(0, c) += av(r, c);
  return t.push(std::move(out), t.needs_grad(a), [a](Tape& t, const Matrix& g) {
    const Matrix& av = t.value(a);
    Matrix d(av.rows(), av.cols());
    for (std::size_t r = 0; r < d.rows(); ++r)
      for (std::size_t c = 0; c < d.cols(); ++c) d(r, c) = g(0, c);
    t.accumulate(a, d);
  });
}

/// Multiplies every row of a elementwise by the 1×C row.
inline Var mul_row(Tape& t, Var a, Var row) {
  const Matrix& av = t.value(a);
  const auto rv = t.value(row).row(0);
  if (rv.size() != av.cols()) throw ShapeError("ad::mul_row width mismatch");
  Matrix out = av;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) *= rv[c];
  return t.push(std::move(out), t.any_needs_grad({a, row}), [a, row](Tape& t, const Matrix& g) {
    const Matrix& av = t.value(a);
    const auto rv = t.value(row).row(0);
    Matrix da(g.rows(), g.cols()), dr(1, g.cols());
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) {
        da(r, c) = g(r, c) * rv[c];
        dr(0, c) += g(r, c) * av(r, c);
      }
    t.accumulate(a, da);
    t.accumulate(row, dr);
  });
}

/// Rows flagged in `mask` are replaced by the 1×C row `fill`.
inline Var fill_rows(Tape& t, Var a, const std::vector<char>& mask, Var fill) {
  Matrix out = t.value(a);
  const auto fv = t.value(fill).row(0);
  if (mask.size() != out.rows() || fv.size() != out.cols()) throw ShapeError("ad::fill_rows shape mismatch");
  for (std::size_t r = 0; r < out.rows(); ++r)
    if (mask[r]) std::copy(fv.begin(), fv.end(), out.row(r).begin());
  return t.push(std::move(out), t.any_needs_grad({a, fill}), [a, mask, fill](Tape& t, const Matrix& g) {
    Matrix da = g, df(1, g.cols());
    for (std::size_t r = 0; r < g.rows(); ++r) {
      if (!mask[r]) continue;
      for (std::size_t c = 0; c < g.cols(); ++c) {
        df(0, c) += g(r, c);
        da(r, c) = 0.0;
      }
    }
    t.accumulate(a, da);
    t.accumulate(fill, df);
  });
}

/// Row g of the result is the mean of the rows of a listed in groups[g].
inline Var pool_rows(Tape& t, Var a, std::vector<std::vector<std::size_t>> groups) {
  Matrix out = mender::pool_rows(t.value(a), groups);
  return t.push(std::move(out), t.needs_grad(a), [a, groups = std::move(groups)](Tape& t, const Matrix& g) {
    const Matrix& av = t.value(a);
    Matrix d(av.rows(), av.cols());
    for (std::size_t r = 0; r < groups.size(); ++r) {
      if (groups[r].empty()) continue;
      const double inv = 1.0 / static_cast<double>(groups[r].size());
      for (std::size_t id : groups[r])
        for (std::size_t c = 0; c < d.cols(); ++c) d(id, c) += g(r, c) * inv;
    }
    t.accumulate(a, d);
  });
}

/// Scalar node whose value and input gradients were computed elsewhere.
inline Var fused(Tape& t, std::vector<Var> inputs, double value, std::vector<Matrix> grads) {
  if (inputs.size() != grads.size()) throw ShapeError("ad::fused needs one gradient per input");
  bool ng = false;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    t.value(inputs[i]).require_same_shape(grads[i], "ad::fused");
    ng = ng || t.needs_grad(inputs[i]);
  }
  return t.push(Matrix(1, 1, value), ng,
                [inputs = std::move(inputs), grads = std::move(grads)](Tape& t, const Matrix& g) {
                  for (std::size_t i = 0; i < inputs.size(); ++i) t.accumulate(inputs[i], grads[i] * g(0, 0));
                });
}

/// Sum of 1×1 nodes with weights.
inline Var weighted_sum(Tape& t, const std::vector<std::pair<Var, double>>& terms) {
  double v = 0.0;
  bool ng = false;
  for (const auto& [var, w] : terms) {
    v += w * t.value(var)(0, 0);
    ng = ng || t.needs_grad(var);
  }
  return t.push(Matrix(1, 1, v), ng, [terms](Tape& t, const Matrix& g) {
    for (const auto& [var, w] : terms) t.accumulate(var, Matrix(1, 1, w * g(0, 0)));
  });
}

/// Head-averaged attention softmax_j((x·Wq)_h (y·Wk)_hᵀ / √D).
inline Var cross_attention(Tape& t, Var x, Var y, Var wq, Var wk, std::size_t heads) {
  const Var q = matmul(t, x, wq);
  const Var k = matmul(t, y, wk);
  const std::size_t d = t.value(wq).cols();
  const std::size_t hw = d / heads;
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  Var acc{};
  for (std::size_t h = 0; h < heads; ++h) {
    const Var a = softmax_rows(t, scale(t, matmul_nt(t, slice_cols(t, q, h * hw, hw), slice_cols(t, k, h * hw, hw)), s));
    acc = h == 0 ? a : add(t, acc, a);
  }
  return scale(t, acc, 1.0 / static_cast<double>(heads));
}

}  // namespace mender::ad
