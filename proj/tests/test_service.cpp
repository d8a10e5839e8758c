#include <doctest.h>
#include <httplib.h>

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "fixtures.hpp"
#include "trustsyn/service.hpp"

using namespace trustsyn;

namespace {

const Json& policy_doc() {
  static Json doc = [] {
    const auto& b = fixtures::town(1);
    PolicyFile pf;
    pf.model = b.model.document();
    pf.spec = b.spec.document;
    pf.model_hash = b.model_hash;
    pf.spec_hash = b.spec_hash;
    SolverParams p;
    p.max_trials = 300;
    pf.result = synthesize(b.model, b.spec, b.dfa, p);
    return policy_to_json(pf, b.model);
  }();
  return doc;
}

Json post(SessionManager& m, const std::string& target, const Json& body, int expect) {
  auto r = route_request(m, "POST", target, body.dump());
  INFO(r.body);
  CHECK(r.status == expect);
  return Json::parse(r.body);
}

Json create(SessionManager& m, const std::string& mode, std::uint64_t seed, int budget = 20) {
  return post(m, "/sessions",
              {{"mode", mode}, {"seed", seed}, {"step_budget", budget}, {"policy", policy_doc()}}, 201);
}

std::string error_message(const Json& j) { return j["error"]["message"].get<std::string>(); }

}  // namespace

TEST_CASE("health and unknown routes") {
  SessionManager m;
  auto h = route_request(m, "GET", "/health", "");
  CHECK(h.status == 200);
  CHECK(Json::parse(h.body)["ok"] == true);
  CHECK(route_request(m, "GET", "/nothing", "").status == 404);
  CHECK(route_request(m, "GET", "/sessions/s99", "").status == 404);
  CHECK(route_request(m, "POST", "/sessions/s99/step", "{}").status == 404);
  CHECK(route_request(m, "DELETE", "/sessions", "").status == 405);
  CHECK(route_request(m, "POST", "/sessions", "{not json").status == 400);
  CHECK(route_request(m, "POST", "/sessions", "{}").status == 400);  // no policy, no default
  CHECK(route_request(m, "GET", "/ui/index.html", "").status == 404);
}

TEST_CASE("session creation") {
  SessionManager m;
  auto v = create(m, "interactive", 1);
  CHECK(v["x"] == "EA");
  CHECK(v["step"] == 0);
  CHECK(v["status"] == "running");
  CHECK(v["dfa"]["phase"] == 0);
  CHECK(v["dfa"]["phases"] == 3);
  CHECK_FALSE(v.contains("hidden_trust"));
  const auto b = v["belief"].get<std::vector<double>>();
  CHECK(std::accumulate(b.begin(), b.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(v["model_hash"] == fixtures::town(1).model_hash);

  auto listed = Json::parse(route_request(m, "GET", "/sessions", "").body);
  REQUIRE(listed["sessions"].size() == 1);
  CHECK(listed["sessions"][0]["id"] == v["id"]);

  auto stale = Json{{"policy", policy_doc()}, {"model_hash", std::string(64, '0')}};
  auto r = post(m, "/sessions", stale, 409);
  CHECK(error_message(r).find("stale") != std::string::npos);
  Json other_model = fixtures::town(1).model.document();
  other_model["initial_belief"] = {1, 0, 0, 0, 0, 0, 0};
  post(m, "/sessions", {{"policy", policy_doc()}, {"model", other_model}}, 409);
  post(m, "/sessions", {{"policy", policy_doc()}, {"spec", policy_doc()["spec"]}}, 201);

  post(m, "/sessions", {{"policy", policy_doc()}, {"mode", "sideways"}}, 400);
  post(m, "/sessions", {{"policy", policy_doc()}, {"step_budget", -1}}, 400);
  post(m, "/sessions", {{"policy", Json{{"format", "nope"}}}}, 400);

  Json tampered = policy_doc();
  tampered["model_hash"] = std::string(64, 'a');
  post(m, "/sessions", {{"policy", tampered}}, 409);

  SessionManager locked(ServiceOptions{std::nullopt, std::nullopt, std::nullopt, false});
  post(locked, "/sessions", {{"policy_path", "/tmp/x.json"}}, 403);
}

TEST_CASE("interactive turn taking") {
  SessionManager m;
  const std::string id = create(m, "interactive", 3, 40)["id"];
  const std::string step = "/sessions/" + id + "/step";
  int prompts = 0, moves = 0;
  for (int guard = 0; guard < 200; ++guard) {
    auto view = Json::parse(route_request(m, "GET", "/sessions/" + id, "").body);
    if (view["status"] != "running") break;
    CHECK_FALSE(view.contains("hidden_trust"));
    if (view["awaiting_human"] == true) {
      ++prompts;
      // a bare step while a decision is pending is out of turn
      auto r = post(m, step, Json::object(), 409);
      CHECK(error_message(r).find("takeover decision required") != std::string::npos);
      post(m, step, {{"human", "maybe"}}, 400);
      post(m, step, {{"human", "st"}, {"trust_report", 99}}, 400);
      auto out = post(m, step, {{"human", "st"}, {"trust_report", 4}}, 200);
      CHECK(out["record"]["trust"] == 4);
      ++moves;
    } else {
      auto r = route_request(m, "POST", step, Json{{"human", "tk"}}.dump());
      CHECK(r.status == 409);
      auto out = post(m, step, Json::object(), 200);
      if (!out["record"].is_null()) ++moves;
    }
    const auto b = Json::parse(route_request(m, "GET", "/sessions/" + id, "").body)["belief"]
                       .get<std::vector<double>>();
    CHECK(std::accumulate(b.begin(), b.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-9));
  }
  CHECK(prompts > 0);
  auto final_view = Json::parse(route_request(m, "GET", "/sessions/" + id, "").body);
  CHECK(final_view["status"] != "running");
  CHECK(final_view["step"] == moves);
  auto r = post(m, step, Json::object(), 409);
  CHECK(error_message(r) == "session terminal");

  auto trace = Json::parse(route_request(m, "GET", "/sessions/" + id + "/trace", "").body);
  CHECK(trace["records"].size() == static_cast<std::size_t>(moves));
  auto events = Json::parse(route_request(m, "GET", "/sessions/" + id + "/events", "").body)["events"];
  CHECK(events.front()["type"] == "created");
  CHECK(events.back()["type"] == "terminal");
  for (std::size_t i = 0; i < events.size(); ++i) CHECK(events[i]["seq"] == i);
}

TEST_CASE("auto session replays the simulator") {
  SessionManager m;
  for (std::uint64_t seed : {1u, 2u, 42u}) {
    auto v = create(m, "auto", seed);
    CHECK(v.contains("hidden_trust"));
    const std::string id = v["id"];
    while (Json::parse(route_request(m, "GET", "/sessions/" + id, "").body)["status"] == "running")
      post(m, "/sessions/" + id + "/step", Json::object(), 200);
    auto got = Json::parse(route_request(m, "GET", "/sessions/" + id + "/trace", "").body);

    auto lp = prepare_policy(policy_from_json(policy_doc()));
    auto want = simulate_episode(*lp->ctx, lp->result(), EpisodeOptions{}, seed);
    const auto& model = lp->bundle->model;
    Json w = trace_to_json(want, model);
    CHECK(got["records"] == w["records"]);
    CHECK(got["status"] == w["status"]);
    CHECK(got["model_hash"] == lp->bundle->model_hash);
  }
  post(m, "/sessions/s1/step", {{"human", "st"}}, 409);
}

TEST_CASE("finished sessions are written to the trace directory") {
  const auto dir = std::filesystem::temp_directory_path() / "trustsyn_service_traces";
  std::filesystem::remove_all(dir);
  SessionManager m(ServiceOptions{std::nullopt, dir, std::nullopt, true});
  const std::string id = create(m, "auto", 5, 3)["id"];
  while (Json::parse(route_request(m, "GET", "/sessions/" + id, "").body)["status"] == "running")
    post(m, "/sessions/" + id + "/step", Json::object(), 200);
  const auto file = dir / (id + ".json");
  REQUIRE(std::filesystem::exists(file));
  const auto& b = fixtures::town(1);
  auto t = trace_from_json(fixtures::read_json(file.string()), b.model);
  CHECK(t.records.size() <= 3);
  CHECK(t.model_hash == b.model_hash);
  std::filesystem::remove_all(dir);
}

TEST_CASE("HTTP and WebSocket front end") {
  SessionManager m;
  Server server(m, "127.0.0.1", 0);
  const unsigned short port = server.start();
  REQUIRE(port != 0);

  httplib::Client cli("127.0.0.1", port);
  auto health = cli.Get("/health");
  REQUIRE(health);
  CHECK(health->status == 200);

  Json req{{"mode", "auto"}, {"seed", 9}, {"step_budget", 6}, {"policy", policy_doc()}};
  auto created = cli.Post("/sessions", req.dump(), "application/json");
  REQUIRE(created);
  CHECK(created->status == 201);
  const std::string id = Json::parse(created->body)["id"];

  namespace beast = boost::beast;
  namespace net = boost::asio;
  net::io_context ioc;
  net::ip::tcp::resolver resolver(ioc);
  beast::websocket::stream<net::ip::tcp::socket> ws(ioc);
  net::connect(ws.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
  ws.handshake("127.0.0.1", "/sessions/" + id + "/events");

  std::vector<Json> seen;
  beast::flat_buffer buf;
  ws.read(buf);
  seen.push_back(Json::parse(beast::buffers_to_string(buf.data())));
  CHECK(seen[0]["type"] == "created");

  int steps = 0;
  for (;;) {
    auto r = cli.Post("/sessions/" + id + "/step", "{}", "application/json");
    REQUIRE(r);
    if (r->status == 409) break;
    CHECK(r->status == 200);
    ++steps;
  }
  CHECK(steps >= 1);
  CHECK(steps <= 6);

  for (;;) {
    buf.clear();
    beast::error_code ec;
    ws.read(buf, ec);
    if (ec) break;
    seen.push_back(Json::parse(beast::buffers_to_string(buf.data())));
  }
  CHECK(seen.back()["type"] == "terminal");
  int step_events = 0;
  for (std::size_t i = 0; i < seen.size(); ++i) {
    CHECK(seen[i]["seq"] == i);
    if (seen[i]["type"] == "step") ++step_events;
  }
  CHECK(step_events == steps);

  auto missing = cli.Get("/sessions/nope");
  REQUIRE(missing);
  CHECK(missing->status == 404);
  server.stop();
}

// Bodies of every endpoint, written for the schema check (tools/check_schemas.py).
TEST_CASE("API samples") {
  Json samples = Json::array();
  auto keep = [&](const char* def, const HttpReply& r) {
    samples.push_back(Json{{"def", def}, {"body", Json::parse(r.body)}});
    return Json::parse(r.body);
  };
  SessionManager m;
  keep("Health", route_request(m, "GET", "/health", ""));
  keep("Error", route_request(m, "GET", "/sessions/none", ""));
  for (const char* mode : {"interactive", "auto"}) {
    Json req{{"mode", mode}, {"seed", 8}, {"step_budget", 12}, {"policy", policy_doc()}};
    samples.push_back(Json{{"def", "CreateSessionRequest"}, {"body", req}});
    const std::string id = keep("View", route_request(m, "POST", "/sessions", req.dump()))["id"];
    for (int guard = 0; guard < 100; ++guard) {
      auto v = keep("View", route_request(m, "GET", "/sessions/" + id, ""));
      if (v["status"] != "running") break;
      Json step = v["awaiting_human"] == true ? Json{{"human", "tk"}, {"trust_report", 5}} : Json::object();
      samples.push_back(Json{{"def", "StepRequest"}, {"body", step}});
      auto r = route_request(m, "POST", "/sessions/" + id + "/step", step.dump());
      keep(r.status == 200 ? "StepResponse" : "Error", r);
    }
    keep("Error", route_request(m, "POST", "/sessions/" + id + "/step", "{}"));
    keep("Trace", route_request(m, "GET", "/sessions/" + id + "/trace", ""));
    keep("EventList", route_request(m, "GET", "/sessions/" + id + "/events", ""));
  }
  keep("SessionList", route_request(m, "GET", "/sessions", ""));
  std::filesystem::create_directories(TRUSTSYN_SAMPLE_DIR);
  std::ofstream(std::string(TRUSTSYN_SAMPLE_DIR) + "/api_samples.json") << samples.dump(1);
  CHECK(samples.size() > 20);
}
