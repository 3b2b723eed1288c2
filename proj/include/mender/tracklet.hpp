#pragma once

#include <cstddef>
#include <vector>

#include "mender/box.hpp"

namespace mender {

/// One decoded object: box, confidence and the image token it came from.
struct Candidate {
  Box box;
  double conf = 0.0;
  std::size_t source = 0;  // image-token row index
  int label = -1;          // category id when the decoder can name one
};

using CandidateSet = std::vector<Candidate>;

enum class TrackletState { kActive, kInactive };

struct Tracklet {
  Box box;
  double conf = 0.0;
  int id = 0;  // 0 until initialized; immutable afterwards
  std::vector<double> feature;
  TrackletState state = TrackletState::kActive;
  int last_seen = -1;  // frame of deactivation while inactive
  // Image-token rows of the previous frame pooled into this tracklet.
  // Cleared on deactivation, after which `feature` stands in.
  std::vector<std::size_t> assigned_token_indices;
  int label = -1;
};

using TrackletSet = std::vector<Tracklet>;

}  // namespace mender
