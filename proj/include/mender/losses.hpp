#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mender/box.hpp"
#include "mender/errors.hpp"
#include "mender/hungarian.hpp"
#include "mender/model.hpp"
#include "mender/tensor.hpp"
#include "mender/tokens.hpp"

namespace mender {

/// Positive links between tracklet rows j and prompt rows k.
struct PositivePairs {
  std::vector<std::pair<std::size_t, std::size_t>> prompt_positive;  // (j, k)
  std::vector<std::pair<std::size_t, std::size_t>> object_positive;  // (k, j)

  /// Both sets built from the same (j, k) links.
  static PositivePairs from_links(const std::vector<std::pair<std::size_t, std::size_t>>& links) {
    PositivePairs p;
    p.prompt_positive = links;
    for (auto [j, k] : links) p.object_positive.emplace_back(k, j);
    return p;
  }

  void validate(std::size_t n, std::size_t k) const {
    if (prompt_positive.empty() || object_positive.empty()) throw SupervisionError("empty positive set");
    for (auto [j, c] : prompt_positive)
      if (j >= n || c >= k) throw IndexError("positive pair out of range");
    for (auto [c, j] : object_positive)
      if (j >= n || c >= k) throw IndexError("positive pair out of range");
  }
};

/// A scalar with its gradients with respect to two matrix inputs.
struct PairGrad {
  double value = 0.0;
  Matrix d_first;
  Matrix d_second;
};

namespace detail {

// −log softmax_c(logits(r, ·)) at column `target`; adds ∂/∂logits(r, ·) · scale to `d`.
inline double nll_row(const Matrix& logits, std::size_t r, std::size_t target, double scale, Matrix& d) {
  const auto row = logits.row(r);
  const double mx = *std::max_element(row.begin(), row.end());
  double sum = 0.0;
  for (double v : row) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  for (std::size_t c = 0; c < row.size(); ++c) d(r, c) += scale * std::exp(row[c] - lse);
  d(r, target) -= scale;
  return lse - row[target];
}

}  // namespace detail

/// Symmetric contrastive alignment between tracklet rows and prompt rows.
inline PairGrad alignment_loss_grad(const Matrix& trk, const Matrix& prm, const PositivePairs& pos) {
  if (trk.cols() != prm.cols()) throw ShapeError("alignment_loss: widths differ");
  pos.validate(trk.rows(), prm.rows());
  const Matrix s = matmul_nt(trk, prm);       // N×K
  const Matrix st = transpose(s);             // K×N
  Matrix ds(s.rows(), s.cols()), dst(st.rows(), st.cols());
  double value = 0.0;
  const double a = 1.0 / static_cast<double>(pos.prompt_positive.size());
  for (auto [j, k] : pos.prompt_positive) value += a * detail::nll_row(s, j, k, a, ds);
  const double b = 1.0 / static_cast<double>(pos.object_positive.size());
  for (auto [k, j] : pos.object_positive) value += b * detail::nll_row(st, k, j, b, dst);
  ds += transpose(dst);
  return {value, matmul(ds, prm), matmul_tn(ds, trk)};
}

inline double alignment_loss(const TokenMatrix& trk, const TokenMatrix& prm, const PositivePairs& pos) {
  return alignment_loss_grad(trk.tokens, prm.tokens, pos).value;
}

/// Σ_j −log softmax over tracklets l of trk_l·img_{i(j)}, evaluated at l = j.
/// `assignment` holds (tracklet j, image row i).
inline PairGrad objectness_loss_grad(const Matrix& trk, const Matrix& img,
                                     const std::vector<std::pair<std::size_t, std::size_t>>& assignment) {
  if (trk.cols() != img.cols()) throw ShapeError("objectness_loss: widths differ");
  Matrix dtrk(trk.rows(), trk.cols()), dimg(img.rows(), img.cols());
  double value = 0.0;
  if (assignment.empty()) return {0.0, dtrk, dimg};
  const Matrix s = matmul_nt(img, trk);  // M×N, row i holds trk_l·img_i over l
  Matrix ds(s.rows(), s.cols());
  for (auto [j, i] : assignment) {
    if (j >= trk.rows() || i >= img.rows()) throw IndexError("objectness assignment out of range");
    value += detail::nll_row(s, i, j, 1.0, ds);
  }
  return {value, matmul_tn(ds, img), matmul(ds, trk)};
}

inline double objectness_loss(const TokenMatrix& trk, const TokenMatrix& img,
                              const std::vector<std::pair<std::size_t, std::size_t>>& assignment) {
  return objectness_loss_grad(trk.tokens, img.tokens, assignment).value;
}

// ---------------------------------------------------------------------------
// Box terms

/// GIoU of `pred` against `target` and ∂GIoU/∂(cx, cy, w, h) of `pred`.
struct GiouGrad {
  double value = 0.0;
  std::array<double, 4> d_pred{};
};

inline GiouGrad giou_grad(const Box& a, const Box& b) {
  const double il = std::max(a.left(), b.left()), ir = std::min(a.right(), b.right());
  const double it = std::max(a.top(), b.top()), ib = std::min(a.bottom(), b.bottom());
  const double iw = std::max(0.0, ir - il), ih = std::max(0.0, ib - it);
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter + kAreaEps;
  const double hw = std::max(a.right(), b.right()) - std::min(a.left(), b.left());
  const double hh = std::max(a.bottom(), b.bottom()) - std::min(a.top(), b.top());
  const double hull = hw * hh + kAreaEps;

  GiouGrad g;
  g.value = inter / uni - (hull - uni) / hull;
  // G = I/U + U/C − 1 with U = A_a + A_b − I.
  const double dg_du = -inter / (uni * uni) + 1.0 / hull;
  const double dg_di = 1.0 / uni - dg_du;
  const double dg_dc = -uni / (hull * hull);

  // Edge derivatives of the intersection and hull extents w.r.t. a's edges.
  const double diw_dl = (iw > 0.0 && a.left() > b.left()) ? -1.0 : 0.0;
  const double diw_dr = (iw > 0.0 && a.right() < b.right()) ? 1.0 : 0.0;
  const double dih_dt = (ih > 0.0 && a.top() > b.top()) ? -1.0 : 0.0;
  const double dih_db = (ih > 0.0 && a.bottom() < b.bottom()) ? 1.0 : 0.0;
  const double dhw_dl = a.left() < b.left() ? -1.0 : 0.0;
  const double dhw_dr = a.right() > b.right() ? 1.0 : 0.0;
  const double dhh_dt = a.top() < b.top() ? -1.0 : 0.0;
  const double dhh_db = a.bottom() > b.bottom() ? 1.0 : 0.0;

  auto edge = [&](double diw, double dih, double dhw, double dhh) {
    return dg_di * (diw * ih + dih * iw) + dg_dc * (dhw * hh + dhh * hw);
  };
  const double g_l = edge(diw_dl, 0.0, dhw_dl, 0.0);
  const double g_r = edge(diw_dr, 0.0, dhw_dr, 0.0);
  const double g_t = edge(0.0, dih_dt, 0.0, dhh_dt);
  const double g_b = edge(0.0, dih_db, 0.0, dhh_db);
  g.d_pred[0] = g_l + g_r;
  g.d_pred[1] = g_t + g_b;
  g.d_pred[2] = 0.5 * (g_r - g_l) + dg_du * a.h;
  g.d_pred[3] = 0.5 * (g_b - g_t) + dg_du * a.w;
  return g;
}

/// A scalar and its gradient with respect to the M×5 decoder logits.
struct RawGrad {
  double value = 0.0;
  Matrix d_raw;
};

/// Minimum-cost assignment of decoder rows to target boxes. Cost is
/// −conf + 5·L1 + 2·(1 − GIoU). Returns (row, target) pairs.
inline std::vector<std::pair<std::size_t, std::size_t>> match_targets(const Matrix& raw, const std::vector<Box>& anchors,
                                                                      const std::vector<Box>& targets) {
  if (raw.rows() != anchors.size() || raw.cols() != 5) throw ShapeError("match_targets: raw/anchor mismatch");
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (targets.empty() || raw.rows() == 0) return out;
  Matrix cost(targets.size(), raw.rows());
  for (std::size_t t = 0; t < targets.size(); ++t)
    for (std::size_t i = 0; i < raw.rows(); ++i) {
      const Box p = box_from_logits(raw.row(i), anchors[i]);
      const auto pa = p.as_array(), ta = targets[t].as_array();
      double l1 = 0.0;
      for (std::size_t c = 0; c < 4; ++c) l1 += std::abs(pa[c] - ta[c]);
      cost(t, i) = -sigmoid(raw(i, 4)) + 5.0 * l1 + 2.0 * (1.0 - giou(p, targets[t]));
    }
  const Assignment a = hungarian(cost);
  for (std::size_t t = 0; t < targets.size(); ++t)
    if (a.row_to_col[t] >= 0) out.emplace_back(static_cast<std::size_t>(a.row_to_col[t]), t);
  std::sort(out.begin(), out.end());
  return out;
}

/// Σ over matches of 1 − GIoU(decoded row, target).
inline RawGrad giou_loss_grad(const Matrix& raw, const std::vector<Box>& anchors, const std::vector<Box>& targets,
                              const std::vector<std::pair<std::size_t, std::size_t>>& matches) {
  RawGrad out{0.0, Matrix(raw.rows(), raw.cols())};
  for (auto [i, t] : matches) {
    if (i >= raw.rows() || t >= targets.size()) throw IndexError("box match out of range");
    const Box p = box_from_logits(raw.row(i), anchors[i]);
    const GiouGrad g = giou_grad(p, targets[t]);
    out.value += 1.0 - g.value;
    const auto slope = box_logit_slopes(raw.row(i), anchors[i]);
    for (std::size_t c = 0; c < 4; ++c) out.d_raw(i, c) -= g.d_pred[c] * slope[c];
  }
  return out;
}

/// Σ over matches of |decoded row − target|₁ over (cx, cy, w, h).
inline RawGrad l1_loss_grad(const Matrix& raw, const std::vector<Box>& anchors, const std::vector<Box>& targets,
                            const std::vector<std::pair<std::size_t, std::size_t>>& matches) {
  RawGrad out{0.0, Matrix(raw.rows(), raw.cols())};
  for (auto [i, t] : matches) {
    if (i >= raw.rows() || t >= targets.size()) throw IndexError("box match out of range");
    const auto pa = box_from_logits(raw.row(i), anchors[i]).as_array();
    const auto slope = box_logit_slopes(raw.row(i), anchors[i]);
    const auto ta = targets[t].as_array();
    for (std::size_t c = 0; c < 4; ++c) {
      const double diff = pa[c] - ta[c];
      out.value += std::abs(diff);
      const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
      out.d_raw(i, c) = sign * slope[c];
    }
  }
  return out;
}

/// Mean binary cross-entropy on the confidence column; positives weighted by
/// `positive_weight`.
inline RawGrad confidence_loss_grad(const Matrix& raw, const std::vector<char>& positive, double positive_weight) {
  if (positive.size() != raw.rows()) throw ShapeError("confidence targets out of sync");
  RawGrad out{0.0, Matrix(raw.rows(), raw.cols())};
  if (raw.rows() == 0) return out;
  const double inv = 1.0 / static_cast<double>(raw.rows());
  for (std::size_t i = 0; i < raw.rows(); ++i) {
    const double x = raw(i, 4);
    const double p = sigmoid(x);
    // softplus forms keep large logits finite
    const double sp_pos = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));  // −log(1 − p)
    const double sp_neg = sp_pos - x;                                             // −log p
    if (positive[i]) {
      out.value += inv * positive_weight * sp_neg;
      out.d_raw(i, 4) = inv * positive_weight * (p - 1.0);
    } else {
      out.value += inv * sp_pos;
      out.d_raw(i, 4) = inv * p;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Weighted total

struct LossWeights {
  double tp = 0.3;    // tracklet|prompt alignment
  double it = 0.3;    // image|tracklet objectness
  double giou = 0.3;

  void validate() const {
    if (tp < 0.0 || it < 0.0 || giou < 0.0) throw ConfigError("loss weights must be non-negative");
    if (tp + it + giou <= 0.0) throw ConfigError("at least one loss weight must be positive");
  }
};

struct LossComponents {
  double tp = 0.0;
  double it = 0.0;
  double giou = 0.0;
};

inline double total_loss(const LossComponents& c, const LossWeights& w = {}) {
  w.validate();
  return w.tp * c.tp + w.it * c.it + w.giou * c.giou;
}

/// Triplet objective and its gradient with respect to every entry of T.
inline double triplet_objective_grad(const Tensor3& t, std::size_t i, std::size_t j, std::size_t k, Tensor3* grad) {
  const double value = triplet_objective(t, i, j, k);
  if (grad) {
    *grad = Tensor3(t.regions(), t.tracklets(), t.prompts());
    const auto src = t.data();
    auto dst = grad->data();
    // softmax(T) − onehot, with log Z recovered from the value.
    const double log_z = value + t(i, j, k);
    for (std::size_t n = 0; n < src.size(); ++n) dst[n] = std::exp(src[n] - log_z);
    (*grad)(i, j, k) -= 1.0;
  }
  return value;
}

struct TripleGrad {
  double value = 0.0;
  Matrix d_q, d_k, d_p;
};

/// Mean triplet objective over `positives` (i, j, k) for the superdiagonal
/// tensor T = Σ_d q_id k_jd p_kd / √D, with gradients for the three factors.
inline TripleGrad triplet_loss_grad(const Matrix& q, const Matrix& k, const Matrix& p,
                                    const std::vector<std::array<std::size_t, 3>>& positives) {
  if (q.cols() != k.cols() || k.cols() != p.cols()) throw ShapeError("triplet_loss_grad: widths differ");
  if (positives.empty()) throw SupervisionError("triplet_loss_grad: no positive triplets");
  const std::size_t d = q.cols();
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  const Tensor3 t = [&] {
    Tensor3 raw = triple_correlation(q, k, p);
    for (double& v : raw.data()) v *= s;
    return raw;
  }();
  Tensor3 g(t.regions(), t.tracklets(), t.prompts());
  TripleGrad out;
  for (const auto& [i, j, c] : positives) {
    Tensor3 one;
    out.value += triplet_objective_grad(t, i, j, c, &one);
    auto dst = g.data();
    const auto src = one.data();
    for (std::size_t n = 0; n < dst.size(); ++n) dst[n] += src[n];
  }
  const double inv = 1.0 / static_cast<double>(positives.size());
  out.value *= inv;
  out.d_q = Matrix(q.rows(), d);
  out.d_k = Matrix(k.rows(), d);
  out.d_p = Matrix(p.rows(), d);
  for (std::size_t i = 0; i < q.rows(); ++i)
    for (std::size_t j = 0; j < k.rows(); ++j)
      for (std::size_t c = 0; c < p.rows(); ++c) {
        const double w = g(i, j, c) * inv * s;
        if (w == 0.0) continue;
        for (std::size_t e = 0; e < d; ++e) {
          out.d_q(i, e) += w * k(j, e) * p(c, e);
          out.d_k(j, e) += w * q(i, e) * p(c, e);
          out.d_p(c, e) += w * q(i, e) * k(j, e);
        }
      }
  return out;
}

// ---------------------------------------------------------------------------
// Finite-difference verification

/// f(x) with ∂f/∂x written to `grad` when it is non-null.
using Objective = std::function<double(const std::vector<double>& x, std::vector<double>* grad)>;

/// Max over coordinates of |analytic − numeric| / max(1, |numeric|), with
/// central differences of step `eps`.
inline double grad_check(const Objective& f, std::vector<double> x, double eps = 1e-5) {
  std::vector<double> analytic;
  f(x, &analytic);
  if (analytic.size() != x.size()) throw ShapeError("grad_check: gradient size mismatch");
  double worst = 0.0;
  for (std::size_t n = 0; n < x.size(); ++n) {
    const double keep = x[n];
    x[n] = keep + eps;
    const double up = f(x, nullptr);
    x[n] = keep - eps;
    const double down = f(x, nullptr);
    x[n] = keep;
    const double numeric = (up - down) / (2.0 * eps);
    worst = std::max(worst, std::abs(analytic[n] - numeric) / std::max(1.0, std::abs(numeric)));
  }
  return worst;
}

}  // namespace mender
