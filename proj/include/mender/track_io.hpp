#pragma once

#include <algorithm>
#include <cstddef>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mender/box.hpp"
#include "mender/errors.hpp"

namespace mender {

/// One tracked box in one frame. `label` is a category id, -1 if unknown.
struct TrackRecord {
  int frame = 0;
  int id = 0;
  Box box;
  double conf = 1.0;
  int label = -1;

  bool operator==(const TrackRecord&) const = default;
};

using TrackSet = std::vector<TrackRecord>;

/// Throws SchemaError on a duplicated (frame, id) pair.
inline void validate_tracks(const TrackSet& tracks) {
  std::set<std::pair<int, int>> seen;
  for (std::size_t i = 0; i < tracks.size(); ++i) {
    const auto& r = tracks[i];
    if (!seen.emplace(r.frame, r.id).second) {
      throw SchemaError("[" + std::to_string(i) + "]", "duplicate record for frame " + std::to_string(r.frame) +
                                                           " id " + std::to_string(r.id));
    }
    if (r.box.w < 0.0 || r.box.h < 0.0) throw SchemaError("[" + std::to_string(i) + "].box", "negative size");
  }
}

/// Records grouped by frame, in input order within a frame.
inline std::map<int, std::vector<TrackRecord>> group_by_frame(const TrackSet& tracks) {
  std::map<int, std::vector<TrackRecord>> out;
  for (const auto& r : tracks) out[r.frame].push_back(r);
  return out;
}

inline nlohmann::ordered_json track_to_json(const TrackRecord& r) {
  nlohmann::ordered_json j;
  j["frame"] = r.frame;
  j["id"] = r.id;
  j["box"] = {r.box.cx, r.box.cy, r.box.w, r.box.h};
  j["conf"] = r.conf;
  j["class"] = r.label;
  return j;
}

inline TrackRecord track_from_json(const nlohmann::json& j, const std::string& path) {
  auto need = [&](const char* key) -> const nlohmann::json& {
    if (!j.is_object() || !j.contains(key)) throw SchemaError(path + "." + key, "missing required key");
    return j.at(key);
  };
  TrackRecord r;
  try {
    r.frame = need("frame").get<int>();
    r.id = need("id").get<int>();
    const auto& box = need("box");
    if (!box.is_array() || box.size() != 4) throw SchemaError(path + ".box", "expected [cx, cy, w, h]");
    r.box = {box[0].get<double>(), box[1].get<double>(), box[2].get<double>(), box[3].get<double>()};
    r.conf = j.contains("conf") ? j.at("conf").get<double>() : 1.0;
    r.label = j.contains("class") ? j.at("class").get<int>() : -1;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path, e.what());
  }
  return r;
}

/// Newline-delimited JSON, one record per line. Doubles are written with
/// round-trip precision.
inline void write_tracks(std::ostream& out, const TrackSet& tracks) {
  for (const auto& r : tracks) out << track_to_json(r).dump() << '\n';
}

inline std::string write_tracks(const TrackSet& tracks) {
  std::ostringstream out;
  write_tracks(out, tracks);
  return out.str();
}

inline TrackSet read_tracks(std::istream& in) {
  TrackSet tracks;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string path = "line " + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw SchemaError(path, e.what());
    }
    tracks.push_back(track_from_json(j, path));
  }
  validate_tracks(tracks);
  return tracks;
}

inline TrackSet read_tracks(const std::string& text) {
  std::istringstream in(text);
  return read_tracks(in);
}

}  // namespace mender
