#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "mender/attributes.hpp"
#include "mender/box.hpp"

namespace mender {

struct SceneObject {
  int track_id = 0;
  Attributes attributes;
  Box box;
};

/// The visible content of one frame of a synthetic world.
struct SceneFrame {
  int index = 0;
  int grid_w = 8;
  int grid_h = 8;
  std::vector<SceneObject> objects;
};

/// Row-major index of the grid cell that contains the box center.
inline std::size_t cell_index(const Box& b, int grid_w, int grid_h) {
  const int col = std::clamp(static_cast<int>(b.cx * grid_w), 0, grid_w - 1);
  const int row = std::clamp(static_cast<int>(b.cy * grid_h), 0, grid_h - 1);
  return static_cast<std::size_t>(row * grid_w + col);
}

/// Footprint of a grid cell as a box.
inline Box cell_box(std::size_t cell, int grid_w, int grid_h) {
  const auto col = static_cast<double>(cell % static_cast<std::size_t>(grid_w));
  const auto row = static_cast<double>(cell / static_cast<std::size_t>(grid_w));
  return {(col + 0.5) / grid_w, (row + 0.5) / grid_h, 1.0 / grid_w, 1.0 / grid_h};
}

}  // namespace mender
