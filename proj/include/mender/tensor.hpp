#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mender/errors.hpp"
#include "mender/rng.hpp"

namespace mender {

inline constexpr double kLayerNormEps = 1e-5;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                       " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ShapeError("ragged matrix literal");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix random_normal(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
    Matrix m(rows, cols);
    for (double& v : m.data_) v = rng.normal(0.0, stddev);
    return m;
  }

  static Matrix row_vector(std::span<const double> values) {
    return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  void append_row(std::span<const double> values) {
    if (rows_ == 0 && cols_ == 0) cols_ = values.size();
    if (values.size() != cols_) throw ShapeError("append_row width mismatch");
    data_.insert(data_.end(), values.begin(), values.end());
    ++rows_;
  }

  Matrix& operator+=(const Matrix& other) {
    require_same_shape(other, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }
  Matrix& operator-=(const Matrix& other) {
    require_same_shape(other, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
  }
  Matrix& operator*=(double s) noexcept {
    for (double& v : data_) v *= s;
    return *this;
  }

  bool operator==(const Matrix& other) const = default;

  void require_same_shape(const Matrix& other, const char* what) const {
    if (rows_ != other.rows_ || cols_ != other.cols_) {
      throw ShapeError(std::string(what) + ": " + shape_string() + " vs " + other.shape_string());
    }
  }

  std::string shape_string() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
inline Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
inline Matrix operator*(Matrix a, double s) { return a *= s; }
inline Matrix operator*(double s, Matrix a) { return a *= s; }

inline bool all_finite(const Matrix& m) {
  return std::all_of(m.data().begin(), m.data().end(),
                     [](double v) { return std::isfinite(v); });
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  a.require_same_shape(b, "max_abs_diff");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  }
  return worst;
}

// Flop tallies split by stage. Per-token linear projections cost O(n·D²) and
// are identical in both correlation modes; the correlation stage is where the
// cubic and quadratic constructions differ.
struct FlopCounter {
  std::uint64_t projection = 0;
  std::uint64_t correlation = 0;
  std::uint64_t total() const noexcept { return projection + correlation; }
};

inline Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) t(c, r) = m(r, c);
  return t;
}

/// a × b.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + a.shape_string() + " x " + b.shape_string());
  }
  Matrix out(a.rows(), b.cols());
  const std::size_t inner = a.cols();
  const std::size_t width = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* dst = out.row(i).data();
    const double* lhs = a.row(i).data();
    for (std::size_t k = 0; k < inner; ++k) {
      const double s = lhs[k];
      if (s == 0.0) continue;
      const double* rhs = b.row(k).data();
      for (std::size_t j = 0; j < width; ++j) dst[j] += s * rhs[j];
    }
  }
  return out;
}

/// a × bᵀ.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: " + a.shape_string() + " x " + b.shape_string() + "^T");
  }
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* lhs = a.row(i).data();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* rhs = b.row(j).data();
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += lhs[k] * rhs[k];
      out(i, j) = acc;
    }
  }
  return out;
}

/// aᵀ × b.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: " + a.shape_string() + "^T x " + b.shape_string());
  }
  Matrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* lhs = a.row(k).data();
    const double* rhs = b.row(k).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double s = lhs[i];
      if (s == 0.0) continue;
      double* dst = out.row(i).data();
      for (std::size_t j = 0; j < b.cols(); ++j) dst[j] += s * rhs[j];
    }
  }
  return out;
}

inline std::uint64_t matmul_flops(std::size_t n, std::size_t k, std::size_t m) {
  return 2ULL * n * k * m;
}

/// Row-wise softmax, stabilised by subtracting each row's maximum.
inline Matrix softmax_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto in = m.row(r);
    auto dst = out.row(r);
    if (in.empty()) continue;
    const double peak = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      dst[c] = std::exp(in[c] - peak);
      sum += dst[c];
    }
    for (double& v : dst) v /= sum;
  }
  return out;
}

/// Per-row normalisation to zero mean and unit variance, then affine gain/bias.
inline Matrix layer_norm(const Matrix& m, std::span<const double> gain,
                         std::span<const double> bias, double eps = kLayerNormEps) {
  if (gain.size() != m.cols() || bias.size() != m.cols()) {
    throw ShapeError("layer_norm: gain/bias width " + std::to_string(gain.size()) + "/" +
                     std::to_string(bias.size()) + " vs rows of width " +
                     std::to_string(m.cols()));
  }
  Matrix out(m.rows(), m.cols());
  const double n = static_cast<double>(m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto in = m.row(r);
    const double mean = std::accumulate(in.begin(), in.end(), 0.0) / n;
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + eps);
    auto dst = out.row(r);
    for (std::size_t c = 0; c < in.size(); ++c) dst[c] = (in[c] - mean) * inv * gain[c] + bias[c];
  }
  return out;
}

inline Matrix slice_cols(const Matrix& m, std::size_t begin, std::size_t count) {
  if (begin + count > m.cols()) throw ShapeError("slice_cols out of range");
  Matrix out(m.rows(), count);
  for (std::size_t r = 0; r < m.rows(); ++r)
    std::copy_n(m.row(r).begin() + static_cast<std::ptrdiff_t>(begin), count, out.row(r).begin());
  return out;
}

inline Matrix add_row_broadcast(Matrix m, std::span<const double> row) {
  if (row.size() != m.cols()) throw ShapeError("add_row_broadcast width mismatch");
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto dst = m.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) dst[c] += row[c];
  }
  return m;
}

// ---------------------------------------------------------------------------
// Third-order tensors

enum class Axis { kRegion, kTracklet, kPrompt };

/// M×N×K tensor in (region, tracklet, prompt) axis order.
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(std::size_t m, std::size_t n, std::size_t k, double fill = 0.0)
      : m_(m), n_(n), k_(k), data_(m * n * k, fill) {}

  std::size_t dim(Axis axis) const noexcept {
    switch (axis) {
      case Axis::kRegion: return m_;
      case Axis::kTracklet: return n_;
      case Axis::kPrompt: return k_;
    }
    return 0;
  }
  std::size_t regions() const noexcept { return m_; }
  std::size_t tracklets() const noexcept { return n_; }
  std::size_t prompts() const noexcept { return k_; }

  double& operator()(std::size_t i, std::size_t j, std::size_t k) noexcept {
    return data_[(i * n_ + j) * k_ + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const noexcept {
    return data_[(i * n_ + j) * k_ + k];
  }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  bool operator==(const Tensor3&) const = default;

 private:
  std::size_t m_ = 0, n_ = 0, k_ = 0;
  std::vector<double> data_;
};

enum class CoreKind {
  kSuperdiagonal,  // T[i,j,k] = Σ_d e[i,d]·x[j,d]·p[k,d]
  kAllOnes,        // T[i,j,k] = (Σ_d e[i,d])(Σ_d x[j,d])(Σ_d p[k,d]); always rank one
};

inline CoreKind parse_core_kind(const std::string& name) {
  if (name == "superdiagonal") return CoreKind::kSuperdiagonal;
  if (name == "all-ones" || name == "all_ones") return CoreKind::kAllOnes;
  throw ConfigError("unknown core kind '" + name + "'");
}

/// Mode-1/2/3 products of a D×D×D core with the three token matrices.
inline Tensor3 triple_correlation(const Matrix& e, const Matrix& x, const Matrix& p,
                                  CoreKind core = CoreKind::kSuperdiagonal,
                                  FlopCounter* counter = nullptr) {
  if (e.cols() != x.cols() || x.cols() != p.cols()) {
    throw ShapeError("triple_correlation widths " + std::to_string(e.cols()) + "/" +
                     std::to_string(x.cols()) + "/" + std::to_string(p.cols()));
  }
  const std::size_t d = e.cols();
  Tensor3 t(e.rows(), x.rows(), p.rows());
  if (core == CoreKind::kAllOnes) {
    auto row_sums = [](const Matrix& m) {
      std::vector<double> s(m.rows());
      for (std::size_t r = 0; r < m.rows(); ++r)
        s[r] = std::accumulate(m.row(r).begin(), m.row(r).end(), 0.0);
      return s;
    };
    const auto se = row_sums(e), sx = row_sums(x), sp = row_sums(p);
    for (std::size_t i = 0; i < e.rows(); ++i)
      for (std::size_t j = 0; j < x.rows(); ++j)
        for (std::size_t k = 0; k < p.rows(); ++k) t(i, j, k) = se[i] * sx[j] * sp[k];
    if (counter) counter->correlation += d * (e.rows() + x.rows() + p.rows()) + 2ULL * t.data().size();
    return t;
  }
  std::vector<double> ex(d);
  for (std::size_t i = 0; i < e.rows(); ++i) {
    const auto er = e.row(i);
    for (std::size_t j = 0; j < x.rows(); ++j) {
      const auto xr = x.row(j);
      for (std::size_t c = 0; c < d; ++c) ex[c] = er[c] * xr[c];
      for (std::size_t k = 0; k < p.rows(); ++k) {
        const auto pr = p.row(k);
        double acc = 0.0;
        for (std::size_t c = 0; c < d; ++c) acc += ex[c] * pr[c];
        t(i, j, k) = acc;
      }
    }
  }
  if (counter) {
    counter->correlation += e.rows() * x.rows() * d +
                            2ULL * e.rows() * x.rows() * p.rows() * d;
  }
  return t;
}

/// Horizontal (region), lateral (tracklet) or frontal (prompt) slice.
/// Region slice i: N×K. Tracklet slice j: M×K. Prompt slice k: M×N.
inline Matrix tensor_slice(const Tensor3& t, Axis axis, std::size_t index) {
  if (index >= t.dim(axis)) {
    throw IndexError("tensor_slice index " + std::to_string(index) + " >= " +
                     std::to_string(t.dim(axis)));
  }
  const std::size_t m = t.regions(), n = t.tracklets(), k = t.prompts();
  switch (axis) {
    case Axis::kRegion: {
      Matrix s(n, k);
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t c = 0; c < k; ++c) s(j, c) = t(index, j, c);
      return s;
    }
    case Axis::kTracklet: {
      Matrix s(m, k);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t c = 0; c < k; ++c) s(i, c) = t(i, index, c);
      return s;
    }
    case Axis::kPrompt: {
      Matrix s(m, n);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) s(i, j) = t(i, j, index);
      return s;
    }
  }
  return {};
}

/// Inverse of slicing every index along `axis`.
inline Tensor3 stack_slices(std::span<const Matrix> slices, Axis axis) {
  if (slices.empty()) return {};
  const std::size_t a = slices.front().rows(), b = slices.front().cols();
  for (const auto& s : slices) {
    if (s.rows() != a || s.cols() != b) throw ShapeError("stack_slices: ragged slices");
  }
  const std::size_t count = slices.size();
  switch (axis) {
    case Axis::kRegion: {
      Tensor3 t(count, a, b);
      for (std::size_t i = 0; i < count; ++i)
        for (std::size_t j = 0; j < a; ++j)
          for (std::size_t k = 0; k < b; ++k) t(i, j, k) = slices[i](j, k);
      return t;
    }
    case Axis::kTracklet: {
      Tensor3 t(a, count, b);
      for (std::size_t j = 0; j < count; ++j)
        for (std::size_t i = 0; i < a; ++i)
          for (std::size_t k = 0; k < b; ++k) t(i, j, k) = slices[j](i, k);
      return t;
    }
    case Axis::kPrompt: {
      Tensor3 t(a, b, count);
      for (std::size_t k = 0; k < count; ++k)
        for (std::size_t i = 0; i < a; ++i)
          for (std::size_t j = 0; j < b; ++j) t(i, j, k) = slices[k](i, j);
      return t;
    }
  }
  return {};
}

// ---------------------------------------------------------------------------
// Multi-head cross-attention

/// Query/key/value projections for one correlation. The value projection is
/// applied to the key family when aggregating.
struct AttentionParams {
  std::size_t heads = 1;
  Matrix query;  // D×D
  Matrix key;    // D×D
  Matrix value;  // D×D

  std::size_t width() const noexcept { return query.rows(); }
  std::size_t head_width() const noexcept { return width() / heads; }

  void validate() const {
    const std::size_t d = query.rows();
    if (heads == 0 || d % heads != 0) {
      throw ConfigError("model width " + std::to_string(d) + " not divisible by " +
                        std::to_string(heads) + " heads");
    }
    for (const Matrix* m : {&query, &key, &value}) {
      if (m->rows() != d || m->cols() != d) {
        throw ShapeError("attention projection must be " + std::to_string(d) + "x" +
                         std::to_string(d) + ", got " + m->shape_string());
      }
    }
  }

  static AttentionParams identity(std::size_t d, std::size_t heads = 1) {
    AttentionParams p{heads, Matrix::identity(d), Matrix::identity(d), Matrix::identity(d)};
    p.validate();
    return p;
  }

  static AttentionParams random(std::size_t d, std::size_t heads, Rng& rng) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    AttentionParams p{heads, Matrix::random_normal(d, d, scale, rng),
                      Matrix::random_normal(d, d, scale, rng),
                      Matrix::random_normal(d, d, scale, rng)};
    p.validate();
    return p;
  }
};

/// Scaled per-head logits (xW_Q)_h (yW_K)_hᵀ / √D, one matrix per head.
inline std::vector<Matrix> attention_logits(const Matrix& x, const Matrix& y,
                                            const AttentionParams& p,
                                            FlopCounter* counter = nullptr) {
  p.validate();
  const std::size_t d = p.width();
  if (x.cols() != d || y.cols() != d) {
    throw ShapeError("cross_attention: token widths " + std::to_string(x.cols()) + "/" +
                     std::to_string(y.cols()) + " vs model width " + std::to_string(d));
  }
  const Matrix q = matmul(x, p.query);
  const Matrix k = matmul(y, p.key);
  if (counter) counter->projection += matmul_flops(x.rows(), d, d) + matmul_flops(y.rows(), d, d);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const std::size_t hw = p.head_width();
  std::vector<Matrix> logits;
  logits.reserve(p.heads);
  for (std::size_t h = 0; h < p.heads; ++h) {
    Matrix s(x.rows(), y.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const double* qr = q.row(i).data() + h * hw;
      for (std::size_t j = 0; j < y.rows(); ++j) {
        const double* kr = k.row(j).data() + h * hw;
        double acc = 0.0;
        for (std::size_t c = 0; c < hw; ++c) acc += qr[c] * kr[c];
        s(i, j) = acc * scale;
      }
    }
    logits.push_back(std::move(s));
  }
  if (counter) counter->correlation += matmul_flops(x.rows(), d, y.rows()) + x.rows() * y.rows() * p.heads;
  return logits;
}

inline Matrix average_head_softmax(const std::vector<Matrix>& logits, FlopCounter* counter = nullptr) {
  if (logits.empty()) return {};
  Matrix out(logits.front().rows(), logits.front().cols());
  for (const Matrix& l : logits) out += softmax_rows(l);
  out *= 1.0 / static_cast<double>(logits.size());
  if (counter) counter->correlation += 4ULL * logits.size() * logits.front().size();
  return out;
}

/// Row-stochastic attention A_{X|Y}: per-head softmax of scaled logits, averaged
/// across heads. Shape |x|×|y|.
inline Matrix cross_attention(const Matrix& x, const Matrix& y, const AttentionParams& p,
                              FlopCounter* counter = nullptr) {
  return average_head_softmax(attention_logits(x, y, p, counter), counter);
}

}  // namespace mender
