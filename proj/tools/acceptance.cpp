// Acceptance run: one PASS/FAIL line per criterion, exit status 1 on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "mender/annotations.hpp"
#include "mender/hungarian.hpp"
#include "mender/losses.hpp"
#include "mender/metrics.hpp"
#include "mender/server.hpp"
#include "mender/session.hpp"
#include "mender/training.hpp"

using namespace mender;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome slice_equivalence() {
  double worst = 0.0;
  std::size_t compared = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    ModelConfig mc;
    mc.seed = seed + 1;
    const Model model = Model::create(mc);
    const Scenario s = generate(seed);
    Rng rng(mix_seed(seed, 0x511ce));
    const int t = 1 + static_cast<int>(rng.below(static_cast<std::size_t>(s.frames - 1)));
    const SceneFrame prev = s.frame(t - 1);
    const TokenMatrix img_prev = model.encode(prev);
    TrackletSet tracklets;
    for (const auto& o : prev.objects) {
      Tracklet tr;
      tr.id = o.track_id;
      tr.box = o.box;
      tr.assigned_token_indices = {cell_index(o.box, prev.grid_w, prev.grid_h)};
      tracklets.push_back(tr);
    }
    if (tracklets.empty()) continue;
    const TokenMatrix trk = extract_tracklets(tracklets, img_prev);
    const TokenMatrix prm = model.embed({ScenarioKind::kName, {"person", "car", "bicycle", "dog"}});
    const auto region = attention_logits(img_prev.tokens, prm.tokens, model.weights.visual_prompt);
    const auto tracklet = attention_logits(trk.tokens, prm.tokens, model.weights.visual_prompt);
    for (std::size_t h = 0; h < region.size(); ++h)
      for (std::size_t j = 0; j < tracklets.size(); ++j)
        for (std::size_t k = 0; k < prm.count(); ++k) {
          worst = std::max(worst, std::abs(tracklet[h](j, k) - region[h](tracklets[j].assigned_token_indices[0], k)));
          ++compared;
        }
  }
  return {worst <= 1e-9 && compared > 0, fmt("100 instances, %zu logits, max |diff| %.3g", compared, worst)};
}

double fitted_exponent(const std::vector<double>& n, const std::vector<double>& y) {
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n.size(); ++i) {
    mx += std::log(n[i]);
    my += std::log(y[i]);
  }
  mx /= n.size();
  my /= n.size();
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < n.size(); ++i) {
    sxy += (std::log(n[i]) - mx) * (std::log(y[i]) - my);
    sxx += (std::log(n[i]) - mx) * (std::log(n[i]) - mx);
  }
  return sxy / sxx;
}

Outcome complexity() {
  const Model model = Model::create({});
  const std::size_t d = model.config.width();
  Rng rng(17);
  auto tokens = [&](TokenFamily f, std::size_t n) {
    return TokenMatrix{f, Matrix::random_normal(n, d, 1.0, rng), std::vector<TokenOrigin>(n)};
  };
  const std::vector<double> sizes{8, 16, 32, 64};
  std::vector<double> full, simplified;
  for (double n : sizes) {
    const auto img = tokens(TokenFamily::kImage, n), trk = tokens(TokenFamily::kTracklet, n),
               prm = tokens(TokenFamily::kPrompt, n);
    FlopCounter cf, cs;
    forward_full(img, trk, prm, model.weights, &cf);
    forward_simplified(img, trk, prm, model.weights, &cs);
    full.push_back(static_cast<double>(cf.correlation));
    simplified.push_back(static_cast<double>(cs.correlation));
  }
  const double ef = fitted_exponent(sizes, full), es = fitted_exponent(sizes, simplified);

  const auto img = tokens(TokenFamily::kImage, 64), trk = tokens(TokenFamily::kTracklet, 64),
             prm = tokens(TokenFamily::kPrompt, 64);
  auto best_of = [&](auto&& fn) {
    double best = INFINITY;
    for (int rep = 0; rep < 7; ++rep) {
      const auto t0 = Clock::now();
      fn();
      best = std::min(best, seconds_since(t0));
    }
    return best;
  };
  double sink = 0.0;
  const double tf = best_of([&] { sink += forward_full(img, trk, prm, model.weights).z(0, 0); });
  const double ts = best_of([&] { sink += forward_simplified(img, trk, prm, model.weights).z(0, 0); });
  const double speedup = tf / ts;
  const bool pass = std::abs(ef - 3.0) <= 0.2 && std::abs(es - 2.0) <= 0.2 && speedup >= 2.0 && std::isfinite(sink);
  return {pass, fmt("exponent full %.3f, simplified %.3f; speedup at n=64 %.1fx (%.2f ms vs %.2f ms)", ef, es, speedup,
                    tf * 1e3, ts * 1e3)};
}

// ---------------------------------------------------------------------------

std::vector<double> flatten(const std::vector<Matrix>& ms) {
  std::vector<double> out;
  for (const auto& m : ms) out.insert(out.end(), m.data().begin(), m.data().end());
  return out;
}

std::vector<Matrix> unflatten(const std::vector<double>& x, const std::vector<Matrix>& like) {
  std::vector<Matrix> out;
  std::size_t n = 0;
  for (const auto& m : like) {
    Matrix r(m.rows(), m.cols());
    for (double& v : r.data()) v = x[n++];
    out.push_back(std::move(r));
  }
  return out;
}

std::size_t below(Rng& rng, std::size_t n) { return rng.below(n); }

Outcome gradients() {
  std::map<std::string, double> worst;
  auto note = [&](const std::string& name, double e) { worst[name] = std::max(worst[name], e); };
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(mix_seed(seed, 0x9dc));
    const std::size_t n = 2 + below(rng, 4), k = 2 + below(rng, 4), m = 6 + below(rng, 5), d = 3 + below(rng, 6);
    const std::vector<Matrix> pair{Matrix::random_normal(n, d, 1.0, rng), Matrix::random_normal(k, d, 1.0, rng)};
    std::vector<std::pair<std::size_t, std::size_t>> links;
    for (std::size_t j = 0; j < n; ++j) links.emplace_back(j, below(rng, k));
    const auto pos = PositivePairs::from_links(links);
    note("L_TP", grad_check(
                     [&](const std::vector<double>& x, std::vector<double>* g) {
                       const auto v = unflatten(x, pair);
                       const PairGrad r = alignment_loss_grad(v[0], v[1], pos);
                       if (g) *g = flatten({r.d_first, r.d_second});
                       return r.value;
                     },
                     flatten(pair)));

    const std::vector<Matrix> trk_img{Matrix::random_normal(n, d, 1.0, rng), Matrix::random_normal(m, d, 1.0, rng)};
    std::vector<std::pair<std::size_t, std::size_t>> owned;
    std::vector<std::size_t> cells(m);
    std::iota(cells.begin(), cells.end(), 0);
    for (std::size_t i = m; i > 1; --i) std::swap(cells[i - 1], cells[below(rng, i)]);
    for (std::size_t j = 0; j < n; ++j) owned.emplace_back(j, cells[j]);
    note("L_IT", grad_check(
                     [&](const std::vector<double>& x, std::vector<double>* g) {
                       const auto v = unflatten(x, trk_img);
                       const PairGrad r = objectness_loss_grad(v[0], v[1], owned);
                       if (g) *g = flatten({r.d_first, r.d_second});
                       return r.value;
                     },
                     flatten(trk_img)));

    std::vector<Box> anchors, targets;
    std::vector<std::pair<std::size_t, std::size_t>> matches;
    std::vector<char> positive(m, 0);
    for (std::size_t i = 0; i < m; ++i)
      anchors.push_back({rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), 0.08, 0.08});
    for (std::size_t j = 0; j < std::min<std::size_t>(3, m); ++j) {
      const Box& a = anchors[cells[j]];
      targets.push_back({a.cx + rng.uniform(-0.03, 0.03), a.cy + rng.uniform(-0.03, 0.03), rng.uniform(0.05, 0.12),
                         rng.uniform(0.05, 0.12)});
      matches.emplace_back(cells[j], j);
      positive[cells[j]] = 1;
    }
    const std::vector<Matrix> raw{Matrix::random_normal(m, 5, 0.5, rng)};
    auto raw_check = [&](auto&& fn, double eps) {
      return grad_check(
          [&](const std::vector<double>& x, std::vector<double>* g) {
            const RawGrad r = fn(unflatten(x, raw)[0]);
            if (g) *g = flatten({r.d_raw});
            return r.value;
          },
          flatten(raw), eps);
    };
    note("L_GIoU", raw_check([&](const Matrix& r) { return giou_loss_grad(r, anchors, targets, matches); }, 1e-7));
    note("L1", raw_check([&](const Matrix& r) { return l1_loss_grad(r, anchors, targets, matches); }, 1e-6));
    note("L_conf", raw_check([&](const Matrix& r) { return confidence_loss_grad(r, positive, 2.0); }, 1e-5));

    const std::vector<Matrix> qkp{Matrix::random_normal(m, d, 1.0, rng), Matrix::random_normal(n, d, 1.0, rng),
                                  Matrix::random_normal(k, d, 1.0, rng)};
    std::vector<std::array<std::size_t, 3>> triples;
    for (std::size_t j = 0; j < n; ++j) triples.push_back({cells[j], j, below(rng, k)});
    note("triplet", grad_check(
                        [&](const std::vector<double>& x, std::vector<double>* g) {
                          const auto v = unflatten(x, qkp);
                          const TripleGrad r = triplet_loss_grad(v[0], v[1], v[2], triples);
                          if (g) *g = flatten({r.d_q, r.d_k, r.d_p});
                          return r.value;
                        },
                        flatten(qkp)));
  }

  // whole training objective through the tape, a few coordinates per parameter
  TrainConfig cfg;
  cfg.l1_weight = 0.0;
  Model model = Model::create(cfg.model);
  const Scenario world = generate(21);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const TrainingSample sample = draw_sample(world, rng);
    auto loss_at = [&] {
      ad::Tape t;
      const TapeModel tm(t, model);
      return sample_loss(t, tm, sample, cfg, nullptr).second.total;
    };
    ad::Tape t;
    const TapeModel tm(t, model);
    t.backward(sample_loss(t, tm, sample, cfg, nullptr).first);
    auto params = parameters(model);
    for (std::size_t p = 0; p < params.size(); ++p) {
      const Matrix g = t.grad(tm.leaves[p]);
      Matrix& w = *params[p].value;
      for (std::size_t probe = 0; probe < 2; ++probe) {
        const std::size_t i = (probe * 7919 + seed * 31) % w.size();
        const double keep = w.data()[i], eps = 1e-5;
        w.data()[i] = keep + eps;
        const double up = loss_at();
        w.data()[i] = keep - eps;
        const double down = loss_at();
        w.data()[i] = keep;
        const double numeric = (up - down) / (2 * eps);
        note("sample", std::abs(numeric - g.data()[i]) / std::max(1.0, std::abs(numeric)));
      }
    }
  }

  bool pass = true;
  std::string detail = "20 seeds, max rel err";
  for (const auto& [name, e] : worst) {
    pass = pass && e < 1e-4;
    detail += fmt(" %s %.1e", name.c_str(), e);
  }
  return {pass, detail};
}

// ---------------------------------------------------------------------------

double brute_force(const Matrix& c, std::vector<int>& best_assign) {
  const bool flip = c.rows() > c.cols();
  const Matrix m = flip ? transpose(c) : c;
  std::vector<int> cols(m.cols());
  std::iota(cols.begin(), cols.end(), 0);
  double best = INFINITY;
  std::vector<int> best_rows;
  // every permutation of the columns; the first rows() entries give the injection
  do {
    double s = 0.0;
    for (std::size_t r = 0; r < m.rows(); ++r) s += m(r, static_cast<std::size_t>(cols[r]));
    if (s < best) {
      best = s;
      best_rows.assign(cols.begin(), cols.begin() + static_cast<long>(m.rows()));
    }
  } while (std::next_permutation(cols.begin(), cols.end()));
  best_assign.assign(c.rows(), -1);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    if (flip)
      best_assign[static_cast<std::size_t>(best_rows[r])] = static_cast<int>(r);
    else
      best_assign[r] = best_rows[r];
  }
  return best;
}

Outcome hungarian_oracle() {
  Rng rng(4242);
  int mismatches = 0;
  for (int n = 0; n < 500; ++n) {
    const std::size_t rows = 1 + rng.below(7), cols = 1 + rng.below(7);
    Matrix c(rows, cols);
    for (double& v : c.data()) v = rng.uniform(-5.0, 5.0);
    std::vector<int> want;
    brute_force(c, want);
    if (hungarian(c).row_to_col != want) ++mismatches;
  }
  return {mismatches == 0, fmt("500 matrices up to 7x7, %d mismatches", mismatches)};
}

// ---------------------------------------------------------------------------

TrackRecord rec(int frame, int id, double cx, int label = 1) { return {frame, id, Box{cx, 0.5, 0.1, 0.1}, 1.0, label}; }

Outcome metric_oracles() {
  TrackSet gt;
  for (int f = 0; f < 10; ++f) {
    gt.push_back(rec(f, 1, 0.2));
    gt.push_back(rec(f, 2, 0.7));
  }
  TrackSet pred;
  for (const auto& g : gt) {
    if (g.id == 1 && g.frame < 2) continue;
    TrackRecord p = g;
    if (g.id == 2 && g.frame >= 6) p.id = 3;
    pred.push_back(p);
  }
  pred.push_back(rec(5, 9, 0.45));
  const MatchResult m = match_frames(gt, pred, kMatchIou, MatchMode::kClassAgnostic);
  const auto& c = m.counts.pooled;
  const double camota = ca_mota(m.counts);

  TrackSet swapped = gt;
  for (auto& p : swapped)
    if (p.frame >= 5) p.id = 3 - p.id;
  const double swap_idf1 = summary(gt, swapped).ca_idf1;

  const MetricReport wrong = summary({rec(0, 1, 0.2, 1), rec(0, 2, 0.7, 2)}, {rec(0, 1, 0.2, 3), rec(0, 2, 0.7, 4)});

  const bool pass = c.gt == 20 && c.fn == 2 && c.fp == 1 && c.ids == 1 && camota == 0.8 && swap_idf1 == 0.5 &&
                    wrong.mota == -1.0 && wrong.ca_mota == 1.0;
  return {pass, fmt("CA-MOTA %.4f (GT %ld FN %ld FP %ld IDS %ld), swap IDF1 %.4f, wrong-class MOTA %.4f CA-MOTA %.4f",
                    camota, c.gt, c.fn, c.fp, c.ids, swap_idf1, wrong.mota, wrong.ca_mota)};
}

// ---------------------------------------------------------------------------

Outcome lifecycle() {
  WorldConfig cfg;
  cfg.noise = 0.0;
  TrackerParams params;
  params.t_tlr = 30;
  double worst_mota = 1.0, worst_idf1 = 1.0;
  long ids = 0;
  int occlusions = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Scenario s = generate(seed, cfg);
    for (const auto& o : s.objects)
      for (auto [b, e] : o.occluded) occlusions += (e - b == 5);
    OracleBackend oracle(s);
    const MetricReport r = summary(ground_truth(s), run_tracker(s, oracle, s.schedule, params));
    worst_mota = std::min(worst_mota, r.ca_mota);
    worst_idf1 = std::min(worst_idf1, r.ca_idf1);
    ids += r.ids;
  }
  return {worst_mota == 1.0 && worst_idf1 == 1.0 && ids == 0 && occlusions == 20,
          fmt("20 scenarios with %d five-frame occlusions: min CA-MOTA %.4f, min CA-IDF1 %.4f, IDS %ld", occlusions,
              worst_mota, worst_idf1, ids)};
}

// ---------------------------------------------------------------------------

Outcome end_to_end() {
  const TrainConfig cfg;
  const Model untrained = Model::create(cfg.model);
  Model model = untrained;
  OptimizerState opt;
  const auto t0 = Clock::now();
  train(model, opt, cfg);
  const double train_s = seconds_since(t0);
  const Scenario held = generate(1001);
  const MetricReport r = evaluate_model(model, held);
  const double before = heldout_triplet(untrained, held), after = heldout_triplet(model, held);
  const bool pass = train_s <= 600.0 && r.ca_mota >= 0.9 && r.ca_idf1 >= 0.9 && after < before;
  return {pass, fmt("trained %d x %d steps in %.0fs; held-out seed 1001 CA-MOTA %.4f CA-IDF1 %.4f; triplet %.3f -> %.3f",
                    cfg.epochs, cfg.steps_per_epoch, train_s, r.ca_mota, r.ca_idf1, before, after)};
}

// ---------------------------------------------------------------------------

json frame_request(int t) { return {{"kind", "frame_request"}, {"frame", t}}; }
json prompt_change(const std::string& text) { return {{"kind", "prompt_change"}, {"text", text}}; }

template <class Send>
TrackSet scripted(const Scenario& s, Send&& send) {
  TrackSet out;
  for (int t = 0; t < s.frames; ++t) {
    if (t > 0)
      if (const PromptText* p = s.schedule.fires_at(t)) send(prompt_change(p->text()));
    const auto replies = send(frame_request(t));
    const TrackSet r = records_from_result(replies.at(0));
    out.insert(out.end(), r.begin(), r.end());
  }
  return out;
}

Outcome prompt_schedule() {
  int disjoint_bad = 0, subset_bad = 0, served_bad = 0, checked = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Scenario s = generate(seed);
    const auto& e = s.schedule.entries();
    OracleBackend oracle(s);
    TrackerState state;
    std::set<int> before_subset, ever_before_disjoint;
    for (int t = 0; t < s.frames; ++t) {
      const FrameResult r = step(state, oracle, s.frame(t), s.schedule);
      std::set<int> live;
      for (const auto& tr : state.active) live.insert(tr.id);
      for (const auto& tr : state.inactive) live.insert(tr.id);
      if (t == e[1].frame - 1) before_subset = live;
      if (t == e[1].frame)
        for (int id : live) subset_bad += !before_subset.count(id);
      if (t < e[2].frame) ever_before_disjoint.insert(live.begin(), live.end());
      if (t >= e[2].frame)
        for (int id : live) disjoint_bad += ever_before_disjoint.count(id) || id <= *ever_before_disjoint.rbegin();
    }
    ++checked;

    Session<OracleBackend> session(s, OracleBackend(s), {}, e[0].prompt);
    OracleBackend batch(s);
    served_bad += scripted(s, [&](const json& m) { return session.handle(m); }) != run_tracker(s, batch, s.schedule);
  }

  // one model-backed run over the socket
  const Model model = Model::create({});
  const Scenario s = generate(5);
  TrackerParams p;
  p.gamma = 0.3;
  SessionServer<ModelBackend> server(
      [&] { return Session<ModelBackend>(s, ModelBackend(model), p, s.schedule.entries()[0].prompt); }, 0);
  server.start();
  TrackSet served;
  {
    SessionClient client("127.0.0.1", server.port());
    client.receive();
    served = scripted(s, [&](const json& m) {
      client.send(m);
      std::vector<json> r{client.receive()};
      if (r[0]["kind"] == "frame_result" && r[0]["frame"] == s.frames - 1) r.push_back(client.receive());
      return r;
    });
    client.close();
  }
  server.stop();
  ModelBackend batch(model);
  served_bad += served != run_tracker(s, batch, s.schedule, p);

  return {disjoint_bad == 0 && subset_bad == 0 && served_bad == 0,
          fmt("%d scenarios + 1 websocket run: disjoint reuse %d, subset id changes %d, served/batch diffs %d", checked,
              disjoint_bad, subset_bad, served_bad)};
}

// ---------------------------------------------------------------------------

const char* kTable5 = R"({
  "categories": [
    {"id": 1, "name": "person", "synonyms": ["baby", "child", "boy", "girl", "man", "woman", "perdestrian", "human"],
     "def": "a human being"},
    {"id": 35, "name": "backpack", "synonyms": ["backpack", "knapsack", "packsack", "rucksack", "haversack"],
     "def": "a bag carried by a strap on your back or shoulder"}
  ],
  "images": [
    {"id": 1, "frame_index": 0, "video_id": 1, "file_name": "MOT17-02/000001.jpg", "width": 1920, "height": 1080},
    {"id": 2, "frame_index": 0, "video_id": 2, "width": 640, "height": 480, "prompt": "woman carrying two bags"}
  ],
  "annotations": [
    {"id": 1, "image_id": 1, "category_id": 1, "track_id": 1, "video_id": 1, "bbox": [10, 20, 30, 60],
     "captions": ["man walking on sidewalk", "man wearing a orange shirt"]},
    {"id": 2, "image_id": 2, "category_id": 35, "track_id": 5, "video_id": 2, "bbox": [100, 80, 40, 50],
     "captions": ["a black colored bag", "the bag is yellow in color"]}
  ]
})";

const char* kTable6 = R"({
  "categories": [
    {"id": 1, "name": "person", "synonyms": ["perdestrian"], "def": "a human being"},
    {"id": 2, "name": "bus", "synonyms": ["autobus"], "def": "a vehicle carrying many passengers; used for public transport"},
    {"id": 3, "name": "bicycle", "synonyms": ["bicycle"], "def": "a motor vehicle with two wheels and a strong frame"}
  ],
  "images": [{"id": 1, "frame_index": 0, "video_id": 1, "prompt": "people crossing the street"}],
  "annotations": [
    {"id": 1, "image_id": 1, "category_id": 2, "track_id": 1, "video_id": 1, "bbox": [0, 0, 9, 9], "captions": ["a black van"]},
    {"id": 2, "image_id": 1, "category_id": 3, "track_id": 2, "video_id": 1, "bbox": [0, 0, 9, 9], "captions": ["silver framed bicycle"]},
    {"id": 3, "image_id": 1, "category_id": 1, "track_id": 3, "video_id": 1, "bbox": [0, 0, 9, 9], "captions": ["person wearing black pants"]}
  ]
})";

Outcome format_fidelity() {
  int failures = 0;
  for (const char* doc : {kTable5, kTable6}) {
    const std::string once = write_annotations(parse_annotations(std::string(doc)));
    failures += nlohmann::ordered_json::parse(once) != nlohmann::ordered_json::parse(doc);
    failures += write_annotations(parse_annotations(once)) != once;
  }
  const AnnotationSet t5 = parse_annotations(std::string(kTable5));
  failures += t5.categories[0].synonyms[6] != "perdestrian" || *t5.categories[1].def != "a bag carried by a strap on your back or shoulder";
  failures += build_prompt(ScenarioKind::kRetrieval, t5, 2, 0).text() != "woman carrying two bags";

  const AnnotationSet t6 = parse_annotations(std::string(kTable6));
  using V = std::vector<std::string>;
  const V nm = build_prompt(ScenarioKind::kName, t6, 1, 0).phrases;
  const V syn = build_prompt(ScenarioKind::kSynonym, t6, 1, 0).phrases;
  const V def = build_prompt(ScenarioKind::kDefinition, t6, 1, 0).phrases;
  const V cap = build_prompt(ScenarioKind::kCaption, t6, 1, 0).phrases;
  failures += nm != V{"bus", "bicycle", "person"};
  failures += syn != V{"autobus", "bicycle", "perdestrian"};
  failures += def != V{"a vehicle carrying many passengers; used for public transport",
                       "a motor vehicle with two wheels and a strong frame", "a human being"};
  failures += cap != V{"a black van", "silver framed bicycle", "person wearing black pants"};
  failures += build_prompt(ScenarioKind::kRetrieval, t6, 1, 0).text() != "people crossing the street";
  return {failures == 0, fmt("2 documents round-tripped, nm \"%s\", syn \"%s\", %d mismatches",
                             build_prompt(ScenarioKind::kName, t6, 1, 0).text().c_str(),
                             build_prompt(ScenarioKind::kSynonym, t6, 1, 0).text().c_str(), failures)};
}

struct Criterion {
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"slice-equivalence", 5, slice_equivalence},
      {"complexity", 120, complexity},
      {"gradients", 60, gradients},
      {"hungarian-oracle", 30, hungarian_oracle},
      {"metric-oracles", 10, metric_oracles},
      {"lifecycle-isolation", 30, lifecycle},
      {"end-to-end-learning", 900, end_to_end},
      {"prompt-schedule", 60, prompt_schedule},
      {"format-fidelity", 10, format_fidelity},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = seconds_since(t0);
    const bool pass = o.pass && s <= c.budget_s;
    failed += !pass;
    std::printf("%s %-20s %s [%.1fs / %.0fs]\n", pass ? "PASS" : "FAIL", c.name, o.detail.c_str(), s, c.budget_s);
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
