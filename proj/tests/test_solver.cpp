#include <doctest.h>

#include <cmath>
#include <map>

#include "fixtures.hpp"
#include "oracle.hpp"
#include "trustsyn/solver.hpp"

using namespace trustsyn;

namespace {

// S --bad--> D, S --good--> G, S --mix--> G 0.3 / D 0.7 ; D and G absorbing.
Json fork_model(const std::vector<std::string>& acts) {
  Json actions = {{"D", {"stay"}}, {"G", {"stay"}}};
  Json inc = {{"D", {{"stay", {{"none", 1.0}}}}}, {"G", {{"stay", {{"none", 1.0}}}}}};
  Json world = {{"D", {{"stay", {{"D", 1.0}}}}}, {"G", {{"stay", {{"G", 1.0}}}}}};
  for (const auto& a : acts) {
    actions["S"].push_back(a);
    inc["S"][a] = {{"none", 1.0}};
    if (a == "bad") world["S"][a] = {{"D", 1.0}};
    else if (a == "mix") world["S"][a] = {{"G", 0.3}, {"D", 0.7}};
    else world["S"][a] = {{"G", 1.0}};
  }
  return {{"workspace_states", {"S", "D", "G"}},
          {"trust_levels", 1},
          {"actions", actions},
          {"incidents", Json::array()},
          {"incident_model", inc},
          {"human_decision_model", {{"1", {{"none", {{"st", 1.0}}}}}}},
          {"performance_model", {{"none", {{"tk", {{"succ", 1.0}}}, {"st", {{"succ", 1.0}}}}}}},
          {"trust_dynamics", fixtures::identity_rows(1, {"none"})},
          {"world_transition", world},
          {"initial_state", "S"},
          {"initial_belief", {1.0}}};
}

Json fork_preds() {
  return {{"DD", {{"kind", "state"}, {"members", {"D"}}}}, {"GG", {{"kind", "state"}, {"members", {"G"}}}}};
}

SolverParams small(std::int64_t trials = 5000) {
  SolverParams p;
  p.max_depth = 30;
  p.max_trials = trials;
  return p;
}

}  // namespace

TEST_CASE("trivial formulas") {
  const auto& town = fixtures::town(1);
  auto t = Bundle::from_documents(town.model.document(), fixtures::spec_doc("true"));
  auto r = synthesize(t->model, t->spec, t->dfa, small());
  CHECK(r.lower == 1.0);
  CHECK(r.upper == 1.0);
  CHECK(r.policy.empty());
  CHECK(r.status == SynthesisStatus::kConverged);

  auto dead = Bundle::from_documents(town.model.document(),
                                     fixtures::spec_doc("NU1 & !NU1", {{"NU1", {{"kind", "state"}, {"members", {"BG"}}}}}));
  auto d = synthesize(dead->model, dead->spec, dead->dfa, small());
  CHECK(d.lower == 0.0);
  CHECK(d.upper == 0.0);

  auto none = Bundle::from_documents(town.model.document(),
                                     fixtures::spec_doc("F NOWHERE", {{"NOWHERE", {{"kind", "state"}, {"members", Json::array()}}}}));
  auto n = synthesize(none->model, none->spec, none->dfa, small(200));
  CHECK(n.lower == 0.0);
  CHECK(n.upper >= n.lower);
}

TEST_CASE("single backups") {
  SUBCASE("every action reaches acceptance") {
    auto b = Bundle::from_documents(fixtures::corridor_model(),
                                    fixtures::spec_doc("F END", {{"END", {{"kind", "state"}, {"members", {"C2"}}}}}));
    ProductContext ctx(b->model, b->spec, b->dfa);
    Solver s(ctx, small());
    const int id = s.intern(make_node(1, std::vector<double>{0.5, 0.5}, 0));
    auto e = s.backup(id);
    CHECK(e.lower == 1.0);
    CHECK(e.upper == 1.0);
  }
  SUBCASE("dead versus accepting") {
    auto b = Bundle::from_documents(fork_model({"bad", "good"}), fixtures::spec_doc("(!DD) U GG", fork_preds()));
    ProductContext ctx(b->model, b->spec, b->dfa);
    Solver s(ctx, small());
    auto roots = ctx.initial_nodes();
    const int id = s.intern(roots[0].first);
    auto e = s.backup(id);
    CHECK(e.lower == 1.0);
    CHECK(e.upper == 1.0);
    CHECK(e.lower_action == 1);
  }
  SUBCASE("mixed branch") {
    auto b = Bundle::from_documents(fork_model({"mix"}), fixtures::spec_doc("(!DD) U GG", fork_preds()));
    ProductContext ctx(b->model, b->spec, b->dfa);
    Solver s(ctx, small());
    const int id = s.intern(ctx.initial_nodes()[0].first);
    auto e = s.backup(id);
    CHECK(e.lower == doctest::Approx(0.3));
    CHECK(e.upper == doctest::Approx(0.3));
  }
  SUBCASE("ties go to declaration order") {
    auto b = Bundle::from_documents(fork_model({"good", "good2"}), fixtures::spec_doc("F GG", fork_preds()));
    auto r = synthesize(b->model, b->spec, b->dfa, small());
    REQUIRE(r.policy.size() == 1);
    CHECK(r.policy[0].action == 0);
    CHECK(extract_action(r, r.policy[0].key) == 0);
    NodeKey missing{2, 0, {kBeliefUnits}};
    CHECK_THROWS_AS(extract_action(r, missing), UnknownNode);
  }
}

TEST_CASE("one trial next to acceptance") {
  auto b = Bundle::from_documents(fork_model({"mix"}), fixtures::spec_doc("F GG", fork_preds()));
  ProductContext ctx(b->model, b->spec, b->dfa);
  Solver s(ctx, small());
  s.set_roots(ctx.initial_nodes());
  s.trial();
  CHECK(s.root_lower() >= 0.3 - 1e-12);
}

TEST_CASE("bounds are monotone across every backup") {
  const auto& b = fixtures::town(1);
  ProductContext ctx(b.model, b.spec, b.dfa);
  SolverParams p;
  p.max_trials = 300;
  p.seed = 3;
  Solver s(ctx, p);
  std::int64_t n = 0, bad = 0;
  s.set_observer([&](const NodeKey&, const BoundEntry& before, const BoundEntry& after) {
    ++n;
    if (!(0.0 <= after.lower && after.lower <= after.upper && after.upper <= 1.0)) ++bad;
    if (after.lower < before.lower || after.upper > before.upper) ++bad;
  });
  auto r = s.solve();
  CHECK(n > 1000);
  CHECK(bad == 0);
  CHECK(r.lower <= r.upper);
  CHECK(r.backups == n);
}

TEST_CASE("brute-force sandwich on tiny instances") {
  int checked = 0, interior = 0;
  for (std::uint64_t seed = 100; seed < 400 && interior < 20; ++seed) {
    auto c = oracle::solver_case(seed, small(20000));
    if (!c.settled) continue;
    ++checked;
    if (c.brute > 1e-9 && c.brute < 1.0 - 1e-9) ++interior;
    INFO("seed " << seed << " formula " << c.formula);
    // node beliefs live on the 1e-6 grid, the brute force does not
    CHECK(c.result.lower <= c.brute + 1e-6);
    CHECK(c.brute <= c.result.upper + 1e-6);
    if (c.tree_nodes <= 100000) CHECK(c.result.gap <= 0.01);
    CHECK(c.policy_value >= c.result.lower - 1e-9);
  }
  CHECK(interior >= 20);
  CHECK(checked >= interior);
}

TEST_CASE("anytime validity") {
  auto full = oracle::solver_case(7, small(20000));
  REQUIRE(full.settled);
  for (std::int64_t trials : {1, 2, 3, 5, 10, 30}) {
    auto c = oracle::solver_case(7, small(trials));
    CHECK(c.result.lower <= full.brute + 1e-6);
    CHECK(full.brute <= c.result.upper + 1e-6);
    CHECK(c.policy_value >= c.result.lower - 1e-9);
  }
}

TEST_CASE("tiny corridor instance") {
  // three states, two trust levels, deterministic world, horizon 5, F goal
  oracle::Gen g(77);
  Json model = oracle::tiny_model(g, 3, 2);
  for (auto& [x, acts] : model["world_transition"].items())
    for (auto& [a, row] : acts.items()) {
      auto first = row.begin().key();
      row = {{first, 1.0}};
    }
  auto b = Bundle::from_documents(model, fixtures::spec_doc("F GOAL", {{"GOAL", {{"kind", "state"}, {"members", {"T"}}}}}));
  auto brute = oracle::expectimax_words(b->model, b->spec, 5);
  auto r = synthesize(b->model, b->spec, b->dfa, small());
  CHECK(r.lower <= brute.value + 1e-9);
  CHECK(brute.value <= r.upper + 1e-9);
  CHECK(r.gap <= 0.01);
}

TEST_CASE("seeded determinism") {
  const auto& b = fixtures::town(2);
  SolverParams p;
  p.max_trials = 200;
  p.seed = 9;
  auto r1 = synthesize(b.model, b.spec, b.dfa, p);
  auto r2 = synthesize(b.model, b.spec, b.dfa, p);
  CHECK(r1.lower == r2.lower);
  CHECK(r1.upper == r2.upper);
  CHECK(r1.nodes == r2.nodes);
  REQUIRE(r1.policy.size() == r2.policy.size());
  for (std::size_t i = 0; i < r1.policy.size(); ++i) {
    CHECK(r1.policy[i].key == r2.policy[i].key);
    CHECK(r1.policy[i].action == r2.policy[i].action);
  }
}

TEST_CASE("memory cap") {
  const auto& b = fixtures::town(1);
  SolverParams p;
  p.max_nodes = 50;
  auto r = synthesize(b.model, b.spec, b.dfa, p);
  CHECK(r.status == SynthesisStatus::kMemoryCap);
  CHECK(r.lower <= r.upper);
}
