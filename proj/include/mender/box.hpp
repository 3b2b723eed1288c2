#pragma once

#include <algorithm>
#include <array>
#include <cmath>

namespace mender {

// Guard added to union and hull areas so near-degenerate boxes stay finite.
inline constexpr double kAreaEps = 1e-9;

/// Axis-aligned box in center/size form, normalised scene coordinates.
struct Box {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  double left() const noexcept { return cx - 0.5 * w; }
  double right() const noexcept { return cx + 0.5 * w; }
  double top() const noexcept { return cy - 0.5 * h; }
  double bottom() const noexcept { return cy + 0.5 * h; }
  double area() const noexcept { return w * h; }

  std::array<double, 4> as_array() const noexcept { return {cx, cy, w, h}; }
  static Box from_array(const std::array<double, 4>& a) noexcept { return {a[0], a[1], a[2], a[3]}; }

  bool operator==(const Box&) const = default;
};

inline double intersection_area(const Box& a, const Box& b) noexcept {
  const double iw = std::max(0.0, std::min(a.right(), b.right()) - std::max(a.left(), b.left()));
  const double ih = std::max(0.0, std::min(a.bottom(), b.bottom()) - std::max(a.top(), b.top()));
  return iw * ih;
}

inline double iou(const Box& a, const Box& b) noexcept {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

/// Generalised IoU: IoU − (hull − union)/hull, in [−1, 1].
inline double giou(const Box& a, const Box& b) noexcept {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter + kAreaEps;
  const double hw = std::max(a.right(), b.right()) - std::min(a.left(), b.left());
  const double hh = std::max(a.bottom(), b.bottom()) - std::min(a.top(), b.top());
  const double hull = hw * hh + kAreaEps;
  return inter / uni - (hull - uni) / hull;
}

inline double giou_loss(const Box& a, const Box& b) noexcept { return 1.0 - giou(a, b); }

inline double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) noexcept {
  p = std::clamp(p, 1e-6, 1.0 - 1e-6);
  return std::log(p / (1.0 - p));
}

}  // namespace mender
