#include <gtest/gtest.h>

#include <regex>
#include <set>
#include <thread>

#include "mender/model.hpp"
#include "mender/server.hpp"
#include "mender/session.hpp"
#include "mender/simworld.hpp"

using namespace mender;
using nlohmann::json;

namespace {

json frame_request(int frame) { return {{"kind", "frame_request"}, {"frame", frame}}; }
json prompt_change(const std::string& text) { return {{"kind", "prompt_change"}, {"text", text}}; }

// Drives a session through every frame, issuing the schedule's later prompts
// as prompt_change messages just before their frame. Returns all records.
template <class Send>
TrackSet scripted(const Scenario& s, const PromptSchedule& schedule, Send&& send) {
  TrackSet out;
  for (int t = 0; t < s.frames; ++t) {
    if (t > 0)
      if (const PromptText* p = schedule.fires_at(t)) {
        const auto ack = send(prompt_change(p->text()));
        EXPECT_EQ(ack.at(0)["kind"], "prompt_change");
        EXPECT_EQ(ack.at(0)["frame"], t);
      }
    const auto replies = send(frame_request(t));
    EXPECT_EQ(replies.at(0)["kind"], "frame_result");
    EXPECT_EQ(replies.at(0)["frame"], t);
    const TrackSet r = records_from_result(replies[0]);
    out.insert(out.end(), r.begin(), r.end());
  }
  return out;
}

std::optional<PromptText> first_prompt(const Scenario& s) { return s.schedule.entries().front().prompt; }

}  // namespace

TEST(FilterPrompt, DropsUnknownWords) {
  const auto known = [](const std::string& w) { return w == "red" || w == "car" || w == "dog"; };
  FilteredPrompt f = filter_prompt("Red zeppelin car. Unicorn. dog", known);
  EXPECT_EQ(f.prompt.phrases, (std::vector<std::string>{"red car", "dog"}));
  EXPECT_EQ(f.prompt.kind, ScenarioKind::kRetrieval);
  EXPECT_EQ(f.dropped, (std::vector<std::string>{"zeppelin", "unicorn"}));
  f = filter_prompt("car. dog", known);
  EXPECT_EQ(f.prompt.kind, ScenarioKind::kName);
  EXPECT_TRUE(filter_prompt("unicorn", known).prompt.empty());
}

TEST(IdColor, StableHexPerId) {
  const std::regex hex("#[0-9a-f]{6}");
  std::set<std::string> seen;
  for (int id = 1; id <= 50; ++id) {
    EXPECT_TRUE(std::regex_match(id_color(id), hex));
    EXPECT_EQ(id_color(id), id_color(id));
    seen.insert(id_color(id));
  }
  EXPECT_GT(seen.size(), 45u);
}

TEST(Session, HelloDescribesScenario) {
  const Scenario s = generate(1);
  const Session<OracleBackend> session(s, OracleBackend(s), {}, first_prompt(s));
  const Message h = session.hello();
  EXPECT_EQ(h["kind"], "hello");
  EXPECT_EQ(h["version"], kProtocolVersion);
  EXPECT_EQ(h["frames"], s.frames);
  EXPECT_EQ(h["grid"], json::array({8, 8}));
  EXPECT_EQ(h["prompt"], s.schedule.entries()[0].prompt.text());
}

TEST(Session, ScriptedSessionMatchesBatchRun) {
  const Scenario s = generate(2);
  Session<OracleBackend> session(s, OracleBackend(s), {}, first_prompt(s));
  const TrackSet served = scripted(s, s.schedule, [&](const json& m) { return session.handle(m); });
  OracleBackend batch_backend(s);
  EXPECT_EQ(served, run_tracker(s, batch_backend, s.schedule));
  EXPECT_TRUE(session.finished());
}

TEST(Session, ModelBackendMatchesBatchRun) {
  const Model model = Model::create({});
  const Scenario s = generate(3);
  TrackerParams p;
  p.gamma = 0.3;
  Session<ModelBackend> session(s, ModelBackend(model), p, first_prompt(s));
  const TrackSet served = scripted(s, s.schedule, [&](const json& m) { return session.handle(m); });
  ModelBackend batch_backend(model);
  EXPECT_EQ(served, run_tracker(s, batch_backend, s.schedule, p));
}

TEST(Session, EndMessageAfterFinalFrame) {
  WorldConfig cfg;
  cfg.frames = 3;
  cfg.schedule_frames = {0};
  cfg.occlusions = 0;
  const Scenario s = generate(4, cfg);
  Session<OracleBackend> session(s, OracleBackend(s), {}, first_prompt(s));
  EXPECT_EQ(session.handle(frame_request(0)).size(), 1u);
  EXPECT_EQ(session.handle(json{{"kind", "frame_request"}}).size(), 1u);
  const auto last = session.handle(frame_request(2));
  ASSERT_EQ(last.size(), 2u);
  EXPECT_EQ(last[1]["kind"], "end");
  EXPECT_EQ(last[1]["frames"], 3);
  EXPECT_EQ(session.handle(frame_request(3))[0]["kind"], "error");
}

TEST(Session, UnknownPromptKeepsPriorPrompt) {
  const Scenario s = generate(5);
  Session<OracleBackend> a(s, OracleBackend(s), {}, first_prompt(s));
  Session<OracleBackend> b(s, OracleBackend(s), {}, first_prompt(s));
  for (int t = 0; t < 5; ++t) {
    if (t == 2) {
      const auto r = a.handle(prompt_change("zeppelin unicorn"));
      EXPECT_EQ(r[0]["kind"], "error");
    }
    EXPECT_EQ(a.handle(frame_request(t)), b.handle(frame_request(t)));
  }
}

TEST(Session, PromptChangeAckListsDroppedWordsAndLaterChangeWins) {
  const Scenario s = generate(5);
  Session<OracleBackend> session(s, OracleBackend(s), {}, first_prompt(s));
  session.handle(frame_request(0));
  const auto ack = session.handle(prompt_change("Car. Zeppelin"));
  EXPECT_EQ(ack[0]["text"], "car");
  EXPECT_EQ(ack[0]["frame"], 1);
  EXPECT_EQ(ack[0]["dropped"], json::array({"zeppelin"}));
  session.handle(prompt_change("dog"));
  const auto r = session.handle(frame_request(1));
  EXPECT_EQ(r[0]["prompt"], "dog");
  for (const auto& t : r[0]["tracks"]) EXPECT_EQ(t["class"], 4);
}

TEST(Session, SubsetPromptKeepsSurvivingIds) {
  const Scenario s = generate(2);
  const auto& e = s.schedule.entries();
  Session<OracleBackend> session(s, OracleBackend(s), {}, e[0].prompt);
  std::set<int> before;
  for (int t = 0; t < e[1].frame; ++t) {
    before.clear();
    const auto replies = session.handle(frame_request(t));
    for (const auto& tr : replies[0]["tracks"]) before.insert(tr["id"].get<int>());
  }
  session.handle(prompt_change(e[1].prompt.text()));
  const auto tracks = session.handle(frame_request(e[1].frame))[0]["tracks"];
  ASSERT_FALSE(tracks.empty());
  for (const auto& tr : tracks) {
    EXPECT_TRUE(before.count(tr["id"].get<int>()));
    EXPECT_EQ(tr["color"], id_color(tr["id"].get<int>()));
  }
}

TEST(Session, ProtocolErrorsDoNotEndTheSession) {
  const Scenario s = generate(1);
  Session<OracleBackend> session(s, OracleBackend(s), {}, first_prompt(s));
  EXPECT_EQ(session.handle_text("{oops")[0]["kind"], "error");
  EXPECT_EQ(session.handle(json{{"kind", "teleport"}})[0]["kind"], "error");
  EXPECT_EQ(session.handle(json{{"kind", "hello"}})[0]["kind"], "error");
  EXPECT_EQ(session.handle(json::array())[0]["kind"], "error");
  EXPECT_EQ(session.handle(prompt_change("  "))[0]["kind"], "error");
  EXPECT_EQ(session.handle(json{{"kind", "prompt_change"}})[0]["kind"], "error");
  EXPECT_EQ(session.handle(frame_request(4))[0]["kind"], "error");
  EXPECT_FALSE(session.finished());
  EXPECT_EQ(session.handle(frame_request(0))[0]["kind"], "frame_result");
  EXPECT_EQ(session.handle(json{{"kind", "end"}})[0]["kind"], "end");
  EXPECT_TRUE(session.finished());
  EXPECT_EQ(session.handle(prompt_change("car"))[0]["kind"], "error");
}

TEST(Session, NoPromptYetIsAnError) {
  const Scenario s = generate(1);
  Session<OracleBackend> session(s, OracleBackend(s));
  EXPECT_TRUE(session.hello()["prompt"].is_null());
  EXPECT_EQ(session.handle(frame_request(0))[0]["kind"], "error");
  session.handle(prompt_change("car. dog"));
  EXPECT_EQ(session.handle(frame_request(0))[0]["kind"], "frame_result");
}

TEST(Server, ScriptedWebSocketSessionMatchesBatch) {
  const Scenario s = generate(2);
  SessionServer<OracleBackend> server([&] { return Session<OracleBackend>(s, OracleBackend(s), {}, first_prompt(s)); }, 0);
  server.start();
  SessionClient client("127.0.0.1", server.port());
  const json hello = client.receive();
  EXPECT_EQ(hello["kind"], "hello");
  // one reply per message, two after the final frame
  const TrackSet served = scripted(s, s.schedule, [&](const json& m) {
    client.send(m);
    std::vector<json> out{client.receive()};
    if (out[0]["kind"] == "frame_result" && out[0]["frame"] == s.frames - 1) out.push_back(client.receive());
    return out;
  });
  client.close();
  OracleBackend batch_backend(s);
  EXPECT_EQ(served, run_tracker(s, batch_backend, s.schedule));
  server.stop();
  EXPECT_EQ(server.sessions_served(), 1u);
}

TEST(Server, ConcurrentSessionsAreIsolated) {
  const Model model = Model::create({});
  const Scenario s = generate(6);
  TrackerParams p;
  p.gamma = 0.3;
  SessionServer<ModelBackend> server([&] { return Session<ModelBackend>(s, ModelBackend(model), p); }, 0);
  server.start();
  const PromptSchedule one = s.schedule;
  const PromptSchedule two({{0, {ScenarioKind::kName, {"dog", "bicycle"}}}, {10, {ScenarioKind::kName, {"person"}}}});
  auto drive = [&](const PromptSchedule& schedule, TrackSet& out) {
    SessionClient client("127.0.0.1", server.port());
    client.receive();
    client.send(prompt_change(schedule.entries()[0].prompt.text()));
    client.receive();
    // alternate sends so the two sessions interleave on the server
    out = scripted(s, schedule, [&](const json& m) {
      client.send(m);
      std::vector<json> r{client.receive()};
      if (r[0]["kind"] == "frame_result" && r[0]["frame"] == s.frames - 1) r.push_back(client.receive());
      std::this_thread::yield();
      return r;
    });
    client.close();
  };
  TrackSet a, b;
  std::thread ta([&] { drive(one, a); }), tb([&] { drive(two, b); });
  ta.join();
  tb.join();
  server.stop();
  ModelBackend ba(model), bb(model);
  EXPECT_EQ(a, run_tracker(s, ba, one, p));
  EXPECT_EQ(b, run_tracker(s, bb, two, p));
  EXPECT_EQ(server.sessions_served(), 2u);
}
