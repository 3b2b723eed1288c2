// mender: generate worlds, train, track, evaluate and serve sessions.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "mender/checkpoint.hpp"
#include "mender/metrics.hpp"
#include "mender/server.hpp"
#include "mender/session.hpp"
#include "mender/simworld.hpp"
#include "mender/track_io.hpp"
#include "mender/tracker.hpp"
#include "mender/training.hpp"

using namespace mender;

namespace {

// Missing or unreadable inputs.
constexpr int kExitMissingInput = 2;

struct UsageExit {
  int code;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    std::cerr << "error: cannot open " << path << '\n';
    throw UsageExit{kExitMissingInput};
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

Model load_weights(const std::string& path) {
  if (!std::filesystem::exists(path)) {
    std::cerr << "error: weights file not found: " << path << '\n';
    throw UsageExit{kExitMissingInput};
  }
  return load_checkpoint(path).model;
}

PromptSchedule load_schedule(const std::string& path, const Scenario& s) {
  if (path.empty()) return s.schedule;
  return schedule_from_json(nlohmann::json::parse(slurp(path)));
}

struct TrackOptions {
  std::string scenario, weights, schedule, out, mode = "simplified";
  double gamma = 0.7, gamma_reassign = 0.75;
  int ttlr = 30;
  bool oracle = false, timing = false;
};

template <class Backend>
TrackSet track_frames(const Scenario& s, Backend& backend, const PromptSchedule& schedule, const TrackerParams& params,
                      const FlopCounter* counter, bool timing) {
  TrackerState state;
  state.params = params;
  TrackSet out;
  for (int t = 0; t < s.frames; ++t) {
    const std::uint64_t before = counter ? counter->correlation : 0;
    const auto t0 = std::chrono::steady_clock::now();
    const FrameResult r = step(state, backend, s.frame(t), schedule);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (timing) {
      std::printf("frame %d %s %.3f ms correlation_flops %llu tracks %zu\n", t, r.grounding ? "ground" : "track", ms,
                  static_cast<unsigned long long>(counter ? counter->correlation - before : 0), r.records.size());
    }
    out.insert(out.end(), r.records.begin(), r.records.end());
  }
  return out;
}

int cmd_track(const TrackOptions& o) {
  const Scenario s = read_scenario_text(slurp(o.scenario));
  const PromptSchedule schedule = load_schedule(o.schedule, s);
  TrackerParams params;
  params.gamma = o.gamma;
  params.gamma_reassign = o.gamma_reassign;
  params.t_tlr = o.ttlr;
  params.validate();
  TrackSet pred;
  if (o.oracle) {
    OracleBackend backend(s);
    pred = track_frames(s, backend, schedule, params, nullptr, o.timing);
  } else {
    const Model model = load_weights(o.weights);
    ModelBackend backend(model, parse_forward_mode(o.mode));
    FlopCounter counter;
    backend.set_counter(&counter);
    pred = track_frames(s, backend, schedule, params, &counter, o.timing);
  }
  if (!o.out.empty()) write_file(o.out, write_tracks(pred));
  std::cout << format_table(summary(ground_truth(s, schedule), pred));
  return 0;
}

int cmd_eval(const std::string& gt_path, const std::string& pred_path, bool class_aware) {
  try {
    const TrackSet gt = read_tracks(slurp(gt_path));
    const TrackSet pred = read_tracks(slurp(pred_path));
    const MetricReport r = summary(gt, pred);
    if (class_aware) {
      std::printf("%-8s %8s %8s %5s\n%-8s %8.4f %8.4f %5ld\n", "", "MOTA", "IDF1", "IDs", "aware", r.mota, r.idf1,
                  r.aware.pooled.ids);
    } else {
      std::cout << format_table(r);
    }
  } catch (const SchemaError& e) {
    std::cerr << "schema error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

struct TrainOptions {
  std::string out = "mender.ckpt", loss_csv, resume;
  std::uint64_t seed = 1;
  int epochs = -1, steps = -1;
  std::string mode = "simplified";
  bool quiet = false;
};

int cmd_train(const TrainOptions& o) {
  TrainConfig cfg;
  cfg.seed = o.seed;
  if (o.epochs >= 0) cfg.epochs = o.epochs;
  if (o.steps > 0) cfg.steps_per_epoch = o.steps;
  cfg.mode = parse_forward_mode(o.mode);
  Model model = Model::create(cfg.model);
  OptimizerState opt;
  if (!o.resume.empty()) {
    if (!std::filesystem::exists(o.resume)) {
      std::cerr << "error: checkpoint not found: " << o.resume << '\n';
      return kExitMissingInput;
    }
    Checkpoint ck = load_checkpoint(o.resume);
    model = std::move(ck.model);
    if (ck.optimizer) opt = std::move(*ck.optimizer);
  }
  std::ofstream csv;
  if (!o.loss_csv.empty()) {
    const bool append = !o.resume.empty() && std::filesystem::exists(o.loss_csv);
    csv.open(o.loss_csv, append ? std::ios::app : std::ios::trunc);
    if (!append) write_loss_header(csv);
  }
  const auto t0 = std::chrono::steady_clock::now();
  train(model, opt, cfg, [&](const EpochLoss& e) {
    if (csv.is_open()) {
      write_loss_row(csv, e);
      csv.flush();
    }
    if (!o.quiet) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::printf("epoch %d  total %.4f  L_TP %.4f  L_IT %.4f  L_GIoU %.4f  (%.1fs)\n", e.epoch, e.total, e.tp, e.it,
                  e.giou, secs);
      std::fflush(stdout);
    }
  });
  save_checkpoint(o.out, model, &opt, cfg.adam);
  return 0;
}

int cmd_serve(const std::string& scenario_path, const std::string& weights, unsigned short port, const std::string& mode,
              bool oracle, const TrackerParams& params) {
  const Scenario s = read_scenario_text(slurp(scenario_path));
  std::optional<PromptText> initial;
  if (const PromptText* p = s.schedule.active_at(0)) initial = *p;
  if (oracle) {
    SessionServer<OracleBackend> server([&] { return Session<OracleBackend>(s, OracleBackend(s), params, initial); },
                                        port);
    std::printf("serving on ws://127.0.0.1:%u/\n", server.port());
    std::fflush(stdout);
    server.run();
    return 0;
  }
  const Model model = load_weights(weights);
  const ForwardMode fm = parse_forward_mode(mode);
  SessionServer<ModelBackend> server(
      [&] { return Session<ModelBackend>(s, ModelBackend(model, fm), params, initial); }, port);
  std::printf("serving on ws://127.0.0.1:%u/\n", server.port());
  std::fflush(stdout);
  server.run();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mender: prompt-driven multi-object tracking on a synthetic world"};
  app.require_subcommand(1);

  std::uint64_t gen_seed = 1;
  std::string gen_out = "scenario.json", gen_gt, gen_groot;
  int gen_frames = -1;
  auto* gen = app.add_subcommand("generate", "write a seeded world");
  gen->add_option("--seed", gen_seed, "world seed");
  gen->add_option("--frames", gen_frames, "frame count");
  gen->add_option("--out", gen_out, "scenario file");
  gen->add_option("--ground-truth", gen_gt, "also write ground-truth tracks");
  gen->add_option("--groot", gen_groot, "also write a GroOT-style annotation document");

  TrackOptions to;
  auto* trk = app.add_subcommand("track", "run the tracker over a scenario");
  trk->add_option("--scenario", to.scenario, "scenario file")->required();
  trk->add_option("--weights", to.weights, "checkpoint");
  trk->add_option("--schedule", to.schedule, "prompt schedule JSON (default: the scenario's)");
  trk->add_option("--mode", to.mode, "full|simplified")->check(CLI::IsMember({"full", "simplified"}));
  trk->add_option("--gamma", to.gamma, "confidence threshold");
  trk->add_option("--gamma-reassign", to.gamma_reassign, "re-identification similarity threshold");
  trk->add_option("--ttlr", to.ttlr, "frames an inactive tracklet is kept");
  trk->add_option("--seed", gen_seed, "unused; runs are deterministic");
  trk->add_option("--out", to.out, "track records (JSON lines)");
  trk->add_flag("--oracle", to.oracle, "use ground-truth detections instead of the network");
  trk->add_flag("--timing", to.timing, "print one timing line per frame");

  std::string gt_path, pred_path;
  bool aware = false, agnostic = false;
  auto* ev = app.add_subcommand("eval", "score predicted tracks against ground truth");
  ev->add_option("--gt", gt_path, "ground-truth tracks")->required();
  ev->add_option("--pred", pred_path, "predicted tracks")->required();
  auto* aw = ev->add_flag("--class-aware", aware, "class-aware MOTA/IDF1");
  ev->add_flag("--class-agnostic", agnostic, "class-agnostic CA-MOTA/CA-IDF1 (default)")->excludes(aw);

  TrainOptions tr;
  auto* trn = app.add_subcommand("train", "train on seeded worlds");
  trn->add_option("--seed", tr.seed, "training seed");
  trn->add_option("--epochs", tr.epochs, "epochs");
  trn->add_option("--steps", tr.steps, "steps per epoch");
  trn->add_option("--mode", tr.mode, "full|simplified")->check(CLI::IsMember({"full", "simplified"}));
  trn->add_option("--out", tr.out, "checkpoint to write");
  trn->add_option("--loss-csv", tr.loss_csv, "per-epoch loss CSV");
  trn->add_option("--resume", tr.resume, "continue from a checkpoint");
  trn->add_flag("--quiet", tr.quiet, "no per-epoch lines");

  std::string srv_scenario, srv_weights, srv_mode = "simplified";
  unsigned short port = 8765;
  bool srv_oracle = false;
  TrackerParams srv_params;
  auto* srv = app.add_subcommand("serve", "interactive sessions over WebSocket");
  srv->add_option("--scenario", srv_scenario, "scenario file")->required();
  srv->add_option("--weights", srv_weights, "checkpoint");
  srv->add_option("--port", port, "TCP port (0 picks one)");
  srv->add_option("--mode", srv_mode, "full|simplified")->check(CLI::IsMember({"full", "simplified"}));
  srv->add_option("--gamma", srv_params.gamma, "confidence threshold");
  srv->add_option("--gamma-reassign", srv_params.gamma_reassign, "re-identification similarity threshold");
  srv->add_option("--ttlr", srv_params.t_tlr, "frames an inactive tracklet is kept");
  srv->add_flag("--oracle", srv_oracle, "use ground-truth detections");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      WorldConfig wc;
      if (gen_frames > 0) {
        wc.frames = gen_frames;
        wc.schedule_frames = {0, gen_frames / 3, 2 * gen_frames / 3};
      }
      const Scenario s = generate(gen_seed, wc);
      write_file(gen_out, write_scenario(s));
      if (!gen_gt.empty()) write_file(gen_gt, write_tracks(ground_truth(s)));
      if (!gen_groot.empty()) write_file(gen_groot, write_annotations(export_groot(s)));
      return 0;
    }
    if (*trk) {
      if (!to.oracle && to.weights.empty()) {
        std::cerr << "error: --weights is required unless --oracle is given\n";
        return kExitMissingInput;
      }
      return cmd_track(to);
    }
    if (*ev) return cmd_eval(gt_path, pred_path, aware);
    if (*trn) return cmd_train(tr);
    if (*srv) {
      if (!srv_oracle && srv_weights.empty()) {
        std::cerr << "error: --weights is required unless --oracle is given\n";
        return kExitMissingInput;
      }
      return cmd_serve(srv_scenario, srv_weights, port, srv_mode, srv_oracle, srv_params);
    }
  } catch (const UsageExit& e) {
    return e.code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
