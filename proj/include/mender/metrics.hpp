#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "mender/box.hpp"
#include "mender/errors.hpp"
#include "mender/hungarian.hpp"
#include "mender/track_io.hpp"

namespace mender {

enum class MatchMode { kClassAware, kClassAgnostic };

inline constexpr double kMatchIou = 0.5;
inline constexpr double kMostlyTracked = 0.8;

struct ClassCounts {
  long fn = 0, fp = 0, ids = 0, gt = 0, matches = 0;

  ClassCounts& operator+=(const ClassCounts& o) {
    fn += o.fn;
    fp += o.fp;
    ids += o.ids;
    gt += o.gt;
    matches += o.matches;
    return *this;
  }
  bool operator==(const ClassCounts&) const = default;
};

/// CLEAR-MOT accumulators, pooled and per class. FN, IDS and GT are charged to
/// the ground-truth label, FP to the predicted label. The identity counts are
/// global and filled by id_counts().
struct EvalCounts {
  MatchMode mode = MatchMode::kClassAgnostic;
  ClassCounts pooled;
  std::map<int, ClassCounts> per_class;
  long idtp = 0, idfp = 0, idfn = 0;
};

struct FrameCorrespondence {
  int frame = 0;
  std::vector<std::pair<int, int>> pairs;  // (gt id, pred id)
};

struct MatchResult {
  std::vector<FrameCorrespondence> frames;
  EvalCounts counts;
};

namespace detail {

inline bool labels_compatible(const TrackRecord& g, const TrackRecord& p, MatchMode mode) {
  return mode == MatchMode::kClassAgnostic || g.label == p.label;
}

inline std::vector<int> sorted_frames(const TrackSet& a, const TrackSet& b) {
  std::set<int> frames;
  for (const auto& r : a) frames.insert(r.frame);
  for (const auto& r : b) frames.insert(r.frame);
  return {frames.begin(), frames.end()};
}

}  // namespace detail

/// CLEAR-MOT association. Per frame: keep last frame's gt→pred pairs that
/// still overlap at `iou_thr`, Hungarian on 1−IoU for the rest, and count an
/// id switch whenever a gt object is matched to a different prediction id than
/// at its previous match.
inline MatchResult match_frames(const TrackSet& gt, const TrackSet& pred, double iou_thr = kMatchIou,
                                MatchMode mode = MatchMode::kClassAgnostic) {
  validate_tracks(gt);
  validate_tracks(pred);
  MatchResult result;
  result.counts.mode = mode;
  const auto gt_frames = group_by_frame(gt);
  const auto pred_frames = group_by_frame(pred);
  std::map<int, int> last_match;  // gt id -> pred id of its latest match
  std::map<int, int> carried;     // gt id -> pred id matched in the previous frame

  for (int f : detail::sorted_frames(gt, pred)) {
    static const std::vector<TrackRecord> kNone;
    const auto git = gt_frames.find(f);
    const auto pit = pred_frames.find(f);
    const auto& g = git == gt_frames.end() ? kNone : git->second;
    const auto& p = pit == pred_frames.end() ? kNone : pit->second;

    std::vector<int> g_to_p(g.size(), -1);
    std::vector<char> p_used(p.size(), 0);
    auto ok = [&](std::size_t gi, std::size_t pi) {
      return detail::labels_compatible(g[gi], p[pi], mode) && iou(g[gi].box, p[pi].box) >= iou_thr;
    };
    for (std::size_t gi = 0; gi < g.size(); ++gi) {
      const auto c = carried.find(g[gi].id);
      if (c == carried.end()) continue;
      for (std::size_t pi = 0; pi < p.size(); ++pi) {
        if (p[pi].id == c->second && !p_used[pi] && ok(gi, pi)) {
          g_to_p[gi] = static_cast<int>(pi);
          p_used[pi] = 1;
        }
      }
    }
    std::vector<std::size_t> g_rest, p_rest;
    for (std::size_t gi = 0; gi < g.size(); ++gi)
      if (g_to_p[gi] < 0) g_rest.push_back(gi);
    for (std::size_t pi = 0; pi < p.size(); ++pi)
      if (!p_used[pi]) p_rest.push_back(pi);
    Matrix cost(g_rest.size(), p_rest.size());
    for (std::size_t a = 0; a < g_rest.size(); ++a)
      for (std::size_t b = 0; b < p_rest.size(); ++b) cost(a, b) = 1.0 - iou(g[g_rest[a]].box, p[p_rest[b]].box);
    const GatedMatch gm = gated_hungarian(cost, [&](std::size_t a, std::size_t b) { return ok(g_rest[a], p_rest[b]); });

    FrameCorrespondence fc{f, {}};
    std::map<int, int> next_carried;
    for (auto [a, b] : gm.pairs) {
      const std::size_t gi = g_rest[a], pi = p_rest[b];
      g_to_p[gi] = static_cast<int>(pi);
      p_used[pi] = 1;
      const auto last = last_match.find(g[gi].id);
      if (last != last_match.end() && last->second != p[pi].id) {
        ++result.counts.pooled.ids;
        ++result.counts.per_class[g[gi].label].ids;
      }
    }
    for (std::size_t gi = 0; gi < g.size(); ++gi) {
      auto& cls = result.counts.per_class[g[gi].label];
      ++cls.gt;
      ++result.counts.pooled.gt;
      if (g_to_p[gi] < 0) {
        ++cls.fn;
        ++result.counts.pooled.fn;
        continue;
      }
      const int pid = p[static_cast<std::size_t>(g_to_p[gi])].id;
      ++cls.matches;
      ++result.counts.pooled.matches;
      last_match[g[gi].id] = pid;
      next_carried[g[gi].id] = pid;
      fc.pairs.emplace_back(g[gi].id, pid);
    }
    for (std::size_t pi = 0; pi < p.size(); ++pi) {
      if (p_used[pi]) continue;
      ++result.counts.per_class[p[pi].label].fp;
      ++result.counts.pooled.fp;
    }
    carried = std::move(next_carried);
    result.frames.push_back(std::move(fc));
  }
  return result;
}

/// 1 − Σ(FN + FP + IDS) / ΣGT over the pooled counts.
inline double mota(const ClassCounts& c) {
  if (c.gt == 0) throw UndefinedMetricError("MOTA undefined without ground truth");
  return 1.0 - static_cast<double>(c.fn + c.fp + c.ids) / static_cast<double>(c.gt);
}

inline double mota(const EvalCounts& c) { return mota(c.pooled); }

/// Counts should come from class-agnostic association.
inline double ca_mota(const EvalCounts& c) { return mota(c.pooled); }

inline double ca_mota(const TrackSet& gt, const TrackSet& pred) {
  return mota(match_frames(gt, pred, kMatchIou, MatchMode::kClassAgnostic).counts);
}

struct IdentityCounts {
  long idtp = 0, idfp = 0, idfn = 0;
  std::map<int, int> gt_to_pred;  // optimal trajectory matching
};

/// Global trajectory matching maximising the number of co-occurring frames
/// with IoU ≥ thr (and equal labels in class-aware mode).
inline IdentityCounts id_counts(const TrackSet& gt, const TrackSet& pred, MatchMode mode,
                                double iou_thr = kMatchIou) {
  validate_tracks(gt);
  validate_tracks(pred);
  std::map<int, std::size_t> gt_index, pred_index;
  for (const auto& r : gt) gt_index.emplace(r.id, gt_index.size());
  for (const auto& r : pred) pred_index.emplace(r.id, pred_index.size());
  Matrix overlap(gt_index.size(), pred_index.size());
  const auto pred_frames = group_by_frame(pred);
  for (const auto& g : gt) {
    const auto it = pred_frames.find(g.frame);
    if (it == pred_frames.end()) continue;
    for (const auto& p : it->second)
      if (detail::labels_compatible(g, p, mode) && iou(g.box, p.box) >= iou_thr)
        overlap(gt_index[g.id], pred_index[p.id]) += 1.0;
  }
  Matrix cost = overlap;
  cost *= -1.0;
  const Assignment a = hungarian(cost);
  IdentityCounts out;
  std::vector<int> gt_ids(gt_index.size()), pred_ids(pred_index.size());
  for (auto [id, i] : gt_index) gt_ids[i] = id;
  for (auto [id, i] : pred_index) pred_ids[i] = id;
  for (std::size_t r = 0; r < a.row_to_col.size(); ++r) {
    const int c = a.row_to_col[r];
    if (c < 0 || overlap(r, static_cast<std::size_t>(c)) <= 0.0) continue;
    out.idtp += static_cast<long>(overlap(r, static_cast<std::size_t>(c)));
    out.gt_to_pred[gt_ids[r]] = pred_ids[static_cast<std::size_t>(c)];
  }
  out.idfn = static_cast<long>(gt.size()) - out.idtp;
  out.idfp = static_cast<long>(pred.size()) - out.idtp;
  return out;
}

inline double idf1(const IdentityCounts& c) {
  const long denom = 2 * c.idtp + c.idfp + c.idfn;
  if (denom == 0) throw UndefinedMetricError("IDF1 undefined for empty track sets");
  return 2.0 * static_cast<double>(c.idtp) / static_cast<double>(denom);
}

inline double ca_idf1(const TrackSet& gt, const TrackSet& pred, MatchMode mode = MatchMode::kClassAgnostic) {
  return idf1(id_counts(gt, pred, mode));
}

/// Class-agnostic AP at IoU 0.5: confidence-sorted greedy matching, all-point
/// interpolated area under the precision–recall curve.
inline double map50(const TrackSet& gt, const TrackSet& pred) {
  if (gt.empty()) throw UndefinedMetricError("mAP undefined without ground truth");
  std::vector<std::size_t> order(pred.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pred[a].conf > pred[b].conf; });
  std::map<int, std::vector<std::size_t>> gt_by_frame;
  for (std::size_t i = 0; i < gt.size(); ++i) gt_by_frame[gt[i].frame].push_back(i);
  std::vector<char> gt_used(gt.size(), 0);
  std::vector<double> precision, recall;
  long tp = 0, fp = 0;
  for (std::size_t idx : order) {
    const auto& p = pred[idx];
    double best = kMatchIou;
    long best_gt = -1;
    if (auto it = gt_by_frame.find(p.frame); it != gt_by_frame.end()) {
      for (std::size_t gi : it->second) {
        if (gt_used[gi]) continue;
        const double v = iou(gt[gi].box, p.box);
        if (v >= best) {
          best = v;
          best_gt = static_cast<long>(gi);
        }
      }
    }
    if (best_gt >= 0) {
      gt_used[static_cast<std::size_t>(best_gt)] = 1;
      ++tp;
    } else {
      ++fp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(gt.size()));
  }
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

/// Ground-truth trajectories matched in at least 80% of their frames.
inline long mostly_tracked(const TrackSet& gt, const MatchResult& m) {
  std::map<int, long> length, covered;
  for (const auto& r : gt) ++length[r.id];
  for (const auto& f : m.frames)
    for (auto [g, p] : f.pairs) ++covered[g];
  long mt = 0;
  for (auto [id, len] : length)
    if (static_cast<double>(covered[id]) >= kMostlyTracked * static_cast<double>(len)) ++mt;
  return mt;
}

struct MetricReport {
  double ca_mota = 0.0, ca_idf1 = 0.0, mota = 0.0, idf1 = 0.0, map50 = 0.0;
  long mt = 0, ids = 0, gt_tracks = 0;
  EvalCounts agnostic, aware;
};

inline MetricReport summary(const TrackSet& gt, const TrackSet& pred) {
  MetricReport r;
  const MatchResult ag = match_frames(gt, pred, kMatchIou, MatchMode::kClassAgnostic);
  const MatchResult aw = match_frames(gt, pred, kMatchIou, MatchMode::kClassAware);
  r.agnostic = ag.counts;
  r.aware = aw.counts;
  r.ca_mota = ca_mota(ag.counts);
  r.mota = mota(aw.counts);
  const auto ida = id_counts(gt, pred, MatchMode::kClassAgnostic);
  const auto idw = id_counts(gt, pred, MatchMode::kClassAware);
  r.agnostic.idtp = ida.idtp;
  r.agnostic.idfp = ida.idfp;
  r.agnostic.idfn = ida.idfn;
  r.aware.idtp = idw.idtp;
  r.aware.idfp = idw.idfp;
  r.aware.idfn = idw.idfn;
  r.ca_idf1 = idf1(ida);
  r.idf1 = idf1(idw);
  r.map50 = map50(gt, pred);
  r.mt = mostly_tracked(gt, ag);
  r.ids = ag.counts.pooled.ids;
  std::set<int> ids;
  for (const auto& g : gt) ids.insert(g.id);
  r.gt_tracks = static_cast<long>(ids.size());
  return r;
}

inline std::string format_table(const MetricReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%-8s %8s %8s %8s %8s %8s %5s %5s\n"
                "%-8s %8.4f %8.4f %8.4f %8.4f %8.4f %5ld %5ld\n",
                "", "CA-MOTA", "CA-IDF1", "MOTA", "IDF1", "mAP50", "MT", "IDs", "summary", r.ca_mota, r.ca_idf1,
                r.mota, r.idf1, r.map50, r.mt, r.ids);
  return buf;
}

inline std::string format_csv(const MetricReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "ca_mota,ca_idf1,mota,idf1,map50,mt,ids\n%.6f,%.6f,%.6f,%.6f,%.6f,%ld,%ld\n",
                r.ca_mota, r.ca_idf1, r.mota, r.idf1, r.map50, r.mt, r.ids);
  return buf;
}

}  // namespace mender
