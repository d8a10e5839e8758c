#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "oracle.hpp"
#include "trustsyn/runtime.hpp"

using namespace trustsyn;

namespace {

SolverParams quick(std::int64_t trials = 300, std::uint64_t seed = 0) {
  SolverParams p;
  p.max_trials = trials;
  p.seed = seed;
  return p;
}

Json end_pred() { return {{"END", {{"kind", "state"}, {"members", {"C2"}}}}}; }

AnnotatedTrace annotate(const Trace& t, const std::vector<int>& theta) {
  AnnotatedTrace out{{t.x0, theta[0], t.belief0}};
  for (std::size_t i = 0; i < t.records.size(); ++i)
    out.push_back({t.records[i].next_x, theta[i + 1], t.records[i].belief});
  return out;
}

const SynthesisResult& town_policy() {
  static SynthesisResult r = [] {
    const auto& b = fixtures::town(1);
    return synthesize(b.model, b.spec, b.dfa, SolverParams{});
  }();
  return r;
}

}  // namespace

TEST_CASE("true is accepted before any move") {
  auto b = Bundle::from_documents(fixtures::corridor_model(), fixtures::spec_doc("true"));
  ProductContext ctx(b->model, b->spec, b->dfa);
  auto r = synthesize(b->model, b->spec, b->dfa, quick());
  auto t = simulate_episode(ctx, r, EpisodeOptions{}, 5);
  CHECK(t.status == TraceStatus::kAccepted);
  CHECK(t.accepted_step == 0);
  CHECK(t.records.empty());
  CHECK(check_trace(b->model, b->spec, b->dfa, t) == 1.0);
}

TEST_CASE("corridor goal two moves away") {
  auto b = Bundle::from_documents(fixtures::corridor_model(), fixtures::spec_doc("F END", end_pred()));
  ProductContext ctx(b->model, b->spec, b->dfa);
  auto r = synthesize(b->model, b->spec, b->dfa, quick());
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto t = simulate_episode(ctx, r, EpisodeOptions{}, seed);
    CHECK(t.status == TraceStatus::kAccepted);
    CHECK(t.accepted_step == 2);
    CHECK(t.records.size() == 2);
  }
  EpisodeOptions tight;
  tight.step_budget = 1;
  auto t = simulate_episode(ctx, r, tight, 0);
  CHECK(t.status == TraceStatus::kBudgetExhausted);
  CHECK(check_trace(b->model, b->spec, b->dfa, t) == 0.0);
}

TEST_CASE("state-only predicates give exact verdicts") {
  const auto& b = fixtures::town(2);
  ProductContext ctx(b.model, b.spec, b.dfa);
  auto r = synthesize(b.model, b.spec, b.dfa, quick(200));
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    auto t = simulate_episode(ctx, r, EpisodeOptions{}, seed);
    const double p = check_trace(b.model, b.spec, b.dfa, t);
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
    std::vector<int> theta(t.records.size() + 1, 0);
    auto tr = annotate(t, theta);
    const bool truth = evaluate_trace(b.spec.formula, b.spec.table, tr);
    bool uses_trust = false;
    for (int i = 0; i < b.spec.table.num_state_predicates(); ++i)
      if (b.spec.table.state_depends_on_trust(i)) uses_trust = true;
    if (!uses_trust) CHECK(p == (truth ? 1.0 : 0.0));
  }
}

TEST_CASE("trace check agrees with enumeration over hidden trust") {
  oracle::Gen g(21);
  int compared = 0, fractional = 0;
  for (int i = 0; i < 40; ++i) {
    const Json model = oracle::tiny_model(g, 3 + oracle::pick(g, 2), 2 + oracle::pick(g, 2));
    const Json preds = oracle::tiny_predicates(g, model, true);
    const std::string formula = oracle::random_formula_text(g, {"NU1", "NU2", "B1"}, 3);
    auto b = Bundle::from_documents(model, {{"formula", formula}, {"predicates", preds}});
    ProductContext ctx(b->model, b->spec, b->dfa);
    auto r = synthesize(b->model, b->spec, b->dfa, quick(50, i));
    EpisodeOptions opt;
    opt.step_budget = 5;
    for (std::uint64_t s = 0; s < 5; ++s) {
      auto t = simulate_episode(ctx, r, opt, s);
      const double have = check_trace(b->model, b->spec, b->dfa, t);
      const double want = oracle::check_by_enumeration(b->model, b->spec, t);
      INFO("formula " << formula);
      CHECK(std::abs(have - want) < 1e-9);
      ++compared;
      if (want > 1e-9 && want < 1.0 - 1e-9) ++fractional;
    }
  }
  CHECK(compared == 200);
  CHECK(fractional > 0);
}

TEST_CASE("reported trust check") {
  const auto& b = fixtures::town(1);
  ProductContext ctx(b.model, b.spec, b.dfa);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto t = simulate_episode(ctx, town_policy(), EpisodeOptions{}, seed);
    std::vector<int> theta{*t.trust0};
    for (const auto& r : t.records) theta.push_back(*r.trust_report);
    CHECK(check_trace_reported(b.spec, t) == evaluate_trace(b.spec.formula, b.spec.table, annotate(t, theta)));
    t.records.back().trust_report.reset();
    CHECK_THROWS_AS(check_trace_reported(b.spec, t), TraceError);
  }
}

TEST_CASE("replayed beliefs match the recorded ones") {
  for (int which : {1, 2}) {
    const auto& b = fixtures::town(which);
    ProductContext ctx(b.model, b.spec, b.dfa);
    auto r = synthesize(b.model, b.spec, b.dfa, quick(200));
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      auto t = simulate_episode(ctx, r, EpisodeOptions{}, seed);
      CHECK(replay_deviation(b.model, t) <= 1e-12);
      for (const auto& rec : t.records) CHECK(is_distribution(rec.belief, 1e-9));
    }
  }
}

TEST_CASE("golden trace") {
  const auto& b = fixtures::town(1);
  ProductContext ctx(b.model, b.spec, b.dfa);
  auto t = simulate_episode(ctx, town_policy(), EpisodeOptions{}, 42);
  const Json have = trace_to_json(t, b.model);
  const Json want = fixtures::read_json(std::string(TRUSTSYN_GOLDEN_DIR) + "/town_phi1_seed42.json");
  CHECK(have["status"] == want["status"]);
  CHECK(have["accepted_step"] == want["accepted_step"]);
  CHECK(have["initial"]["x"] == want["initial"]["x"]);
  CHECK(have["initial"]["trust"] == want["initial"]["trust"]);
  REQUIRE(have["records"].size() == want["records"].size());
  for (std::size_t i = 0; i < want["records"].size(); ++i) {
    const auto& h = have["records"][i];
    const auto& w = want["records"][i];
    INFO("record " << i);
    CHECK(h["x"] == w["x"]);
    CHECK(h["action"] == w["action"]);
    CHECK(h["observation"] == w["observation"]);
    CHECK(h["next_x"] == w["next_x"]);
    CHECK(h["trust"] == w["trust"]);
    for (std::size_t k = 0; k < w["belief"].size(); ++k)
      CHECK(std::abs(h["belief"][k].get<double>() - w["belief"][k].get<double>()) <= 1e-12);
  }
}

TEST_CASE("trace documents") {
  const auto& b = fixtures::town(1);
  ProductContext ctx(b.model, b.spec, b.dfa);
  auto t = simulate_episode(ctx, town_policy(), EpisodeOptions{}, 3);
  const Json j = trace_to_json(t, b.model);
  auto back = trace_from_json(j, b.model);
  CHECK(trace_to_json(back, b.model) == j);
  CHECK(check_trace(b.model, b.spec, b.dfa, back) == check_trace(b.model, b.spec, b.dfa, t));

  REQUIRE(j["records"].size() >= 2);
  Json broken = j;
  broken["records"][1]["x"] = j["records"][0]["next_x"] == "EA" ? "AB" : "EA";
  CHECK_THROWS_AS(trace_from_json(broken, b.model), TraceError);
  Json unknown = j;
  unknown["records"][0]["next_x"] = "NOWHERE";
  CHECK_THROWS_AS(trace_from_json(unknown, b.model), TraceError);
  Json other = j;
  other["format"] = "something-else";
  CHECK_THROWS_AS(trace_from_json(other, b.model), TraceError);
  Json bad_belief = j;
  bad_belief["records"][0]["belief"][0] = 2.0;
  CHECK_THROWS_AS(trace_from_json(bad_belief, b.model), TraceError);

  // a move the world model cannot make
  Trace impossible = t;
  impossible.records[0].next_x = impossible.records[0].x;
  CHECK_THROWS_AS(check_trace(b.model, b.spec, b.dfa, impossible), TraceError);
}

TEST_CASE("fallback modes") {
  const auto& b = fixtures::town(1);
  ProductContext ctx(b.model, b.spec, b.dfa);
  SynthesisResult empty;
  EpisodeOptions opt;
  opt.fallback = FallbackMode::kError;
  CHECK_THROWS_AS(simulate_episode(ctx, empty, opt, 1), UnknownNode);
  opt.fallback = FallbackMode::kFirstAction;
  auto t = simulate_episode(ctx, empty, opt, 1);
  for (const auto& r : t.records) CHECK(r.action == 0);
  opt.fallback = FallbackMode::kLocalSolve;
  opt.step_budget = 4;
  auto s = simulate_episode(ctx, empty, opt, 1);
  CHECK(s.records.size() <= 4);
  CHECK(parse_fallback("solve") == FallbackMode::kLocalSolve);
  CHECK_THROWS(parse_fallback("maybe"));
}

TEST_CASE("interactive episode") {
  const auto& b = fixtures::town(1);
  ProductContext ctx(b.model, b.spec, b.dfa);
  Episode ep(ctx, town_policy(), EpisodeOptions{}, 11, false);
  CHECK_FALSE(ep.hidden_trust().has_value());
  CHECK(b.model.state_name(ep.x()) == "EA");
  const auto& p = ep.prepare();
  CHECK(&ep.prepare() == &p);  // prepared once
  const auto& rec = ep.resolve(HumanAction::kStandstill, 3);
  CHECK(rec.observation.human == HumanAction::kStandstill);
  CHECK(rec.trust_report == 3);
  CHECK(ep.step() == 1);
  CHECK(is_distribution(ep.belief(), 1e-9));
  int zero = 0;
  while (!ep.terminal()) {
    if (ep.prepare().incident == kNoIncident) {
      // nobody takes over without an incident in this model
      const int before = ep.step();
      CHECK_THROWS_AS(ep.resolve(HumanAction::kTakeover), ZeroLikelihood);
      CHECK(ep.step() == before);
      ++zero;
      ep.resolve(HumanAction::kStandstill);
    } else {
      ep.resolve(HumanAction::kTakeover);
    }
  }
  CHECK(zero > 0);
  CHECK_THROWS(ep.prepare());
}

TEST_CASE("Monte Carlo anchors") {
  auto tb = Bundle::from_documents(fixtures::corridor_model(), fixtures::spec_doc("true"));
  ProductContext tctx(tb->model, tb->spec, tb->dfa);
  auto tr = synthesize(tb->model, tb->spec, tb->dfa, quick());
  McParams p;
  p.episodes = 500;
  auto m = monte_carlo_eval(tctx, tr, p);
  CHECK(m.estimate == 1.0);
  CHECK(m.std_error == 0.0);
  CHECK(m.accepted == 500);

  auto nb = Bundle::from_documents(fixtures::corridor_model(),
                                   fixtures::spec_doc("F NOWHERE", {{"NOWHERE", {{"kind", "state"}, {"members", Json::array()}}}}));
  ProductContext nctx(nb->model, nb->spec, nb->dfa);
  auto nr = synthesize(nb->model, nb->spec, nb->dfa, quick(20));
  auto n = monte_carlo_eval(nctx, nr, p);
  CHECK(n.estimate == 0.0);
  CHECK(n.errors == 0);
}

TEST_CASE("serial and parallel Monte Carlo are bitwise equal") {
  const auto& b = fixtures::town(1);
  ProductContext ctx(b.model, b.spec, b.dfa);
  McParams p;
  p.episodes = 2000;
  p.seed = 17;
  auto s = monte_carlo_eval_serial(ctx, town_policy(), p);
  for (int threads : {1, 2, 4}) {
    p.threads = threads;
    auto o = monte_carlo_eval(ctx, town_policy(), p);
    CHECK(o.estimate == s.estimate);
    CHECK(o.std_error == s.std_error);
    CHECK(o.accepted == s.accepted);
    CHECK(o.errors == s.errors);
  }
  CHECK(episode_seed(17, 0) != episode_seed(17, 1));
  CHECK(episode_seed(17, 5) == episode_seed(17, 5));
}

TEST_CASE("Monte Carlo matches the exact policy value") {
  int done = 0;
  for (std::uint64_t seed = 100; seed < 400 && done < 3; ++seed) {
    SolverParams sp;
    sp.max_depth = 30;
    sp.max_trials = 20000;
    auto c = oracle::solver_case(seed, sp);
    if (!c.settled || c.brute < 0.05 || c.brute > 0.95 || c.result.gap > 1e-9) continue;
    ProductContext ctx(c.bundle->model, c.bundle->spec, c.bundle->dfa);
    McParams p;
    p.episodes = 20000;
    p.seed = seed;
    p.episode.fallback = FallbackMode::kError;
    auto m = monte_carlo_eval(ctx, c.result, p);
    INFO("seed " << seed << " formula " << c.formula << " exact " << c.policy_value);
    CHECK(m.errors == 0);
    CHECK(std::abs(m.estimate - c.policy_value) <= 3.0 * m.std_error + 1e-9);
    ++done;
  }
  CHECK(done == 3);
}
