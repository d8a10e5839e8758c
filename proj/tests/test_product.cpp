#include <doctest.h>

#include <cmath>
#include <map>
#include <numeric>

#include "fixtures.hpp"
#include "oracle.hpp"
#include "trustsyn/product.hpp"

using namespace trustsyn;

namespace {

std::unique_ptr<Bundle> toy_bundle(const std::string& formula) {
  Json preds = {{"NU", {{"kind", "state"}, {"members", Json::array({{{"state", "B"}, {"trust", {1}}}})}}},
                {"ATB", {{"kind", "state"}, {"members", {"B"}}}}};
  return Bundle::from_documents(fixtures::toy_model(), fixtures::spec_doc(formula, preds));
}

}  // namespace

TEST_CASE("belief rounding") {
  std::vector<double> tiny{1e-9, 0.5, 0.5 - 1e-9};
  auto u = round_belief(tiny);
  CHECK(u[0] == 1);
  CHECK(std::accumulate(u.begin(), u.end(), std::int64_t{0}) == kBeliefUnits);
  std::vector<double> zero{0.0, 1.0};
  CHECK(round_belief(zero)[0] == 0);

  oracle::Gen g(1);
  for (int i = 0; i < 10000; ++i) {
    auto b = oracle::random_distribution(g, 2 + i % 6, true);
    auto k = round_belief(b);
    CHECK(std::accumulate(k.begin(), k.end(), std::int64_t{0}) == kBeliefUnits);
    for (std::size_t t = 0; t < b.size(); ++t) {
      CHECK((k[t] > 0) == (b[t] > 0.0));
      CHECK(std::abs(k[t] - b[t] * kBeliefUnits) <= 1.0 + 1e-6);
    }
    auto again = round_belief(belief_of(k));
    CHECK(again == k);
    CHECK(is_distribution(belief_of(k)));
  }
}

TEST_CASE("label distribution") {
  const auto& b = fixtures::town(1);
  ProductContext ctx(b.model, b.spec, b.dfa);
  oracle::Gen g(2);
  for (int i = 0; i < 100; ++i) {
    auto out = ctx.label_distribution(oracle::pick(g, 36), oracle::random_distribution(g, 7, true));
    REQUIRE(out.size() == 1);  // x-only state predicates
    CHECK(out[0].probability == doctest::Approx(1.0));
  }
  std::vector<double> top{0.0, 0.1, 0.1, 0.1, 0.1, 0.3, 0.3};
  auto kl = ctx.label_distribution(b.model.state_index("KL"), top);
  REQUIRE(kl.size() == 1);
  auto names = alphabet_names(b.spec);
  std::vector<std::string> on;
  for (int i = 0; i < static_cast<int>(names.size()); ++i)
    if (kl[0].label >> i & 1) on.push_back(names[i]);
  CHECK(on == std::vector<std::string>{"NU3", "HIGHTRUST"});

  auto toy = toy_bundle("F NU");
  ProductContext tctx(toy->model, toy->spec, toy->dfa);
  auto split = tctx.label_distribution(1, std::vector<double>{0.3, 0.7});
  REQUIRE(split.size() == 2);
  CHECK(split[0].label == 0);
  CHECK(split[0].probability == doctest::Approx(0.7));
  CHECK(split[1].label == 1);
  CHECK(split[1].probability == doctest::Approx(0.3));

  // belief bits are shared by every outcome
  auto mixed = toy_bundle("F (NU & ATB)");
  ProductContext mctx(mixed->model, mixed->spec, mixed->dfa);
  auto m = mctx.label_distribution(1, std::vector<double>{0.5, 0.5});
  double s = 0.0;
  for (const auto& o : m) s += o.probability;
  CHECK(s == doctest::Approx(1.0));
  for (const auto& o : m) CHECK((o.label & 2u) == 2u);
}

TEST_CASE("classification") {
  const auto& b = fixtures::town(1);
  ProductContext ctx(b.model, b.spec, b.dfa);
  auto roots = ctx.initial_nodes();
  REQUIRE(roots.size() == 1);
  CHECK(roots[0].second == doctest::Approx(1.0));
  CHECK(ctx.classify(roots[0].first) == NodeClass::kOpen);
  CHECK(b.model.state_name(roots[0].first.x()) == "EA");
  for (int q = 0; q < b.dfa.num_states(); ++q)
    if (b.dfa.accepting(q)) CHECK(ctx.classify(q) == NodeClass::kAccepting);
  CHECK(ctx.abstract_distance(b.model.state_index("EA"), roots[0].first.q()) < kUnreachable);

  auto dead = Bundle::from_documents(fixtures::toy_model(),
                                     fixtures::spec_doc("ATB & !ATB", {{"ATB", {{"kind", "state"}, {"members", {"B"}}}}}));
  ProductContext dctx(dead->model, dead->spec, dead->dfa);
  for (const auto& [n, p] : dctx.initial_nodes()) CHECK(dctx.classify(n) == NodeClass::kDead);
}

TEST_CASE("expand on hand-computed branches") {
  auto toy = toy_bundle("F NU");
  ProductContext ctx(toy->model, toy->spec, toy->dfa);
  auto root = make_node(0, std::vector<double>{0.5, 0.5}, 0);
  auto ex = ctx.expand(root);
  REQUIRE(ex.size() == 1);
  std::map<std::pair<int, LabelSet>, double> got;
  double total = 0.0;
  for (const auto& br : ex[0].branches) {
    got[{br.observation.index(), br.label}] += br.probability;
    total += br.probability;
    CHECK(br.child.q() == toy->dfa.step(0, br.label));
    CHECK(br.child.belief == belief_of(br.child.key.belief));
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  const int tk = Observation{1, HumanAction::kTakeover, Outcome::kSuccess}.index();
  const int ss = Observation{1, HumanAction::kStandstill, Outcome::kSuccess}.index();
  const int sf = Observation{1, HumanAction::kStandstill, Outcome::kFailure}.index();
  CHECK(got[{tk, 1}] == doctest::Approx(0.4));
  CHECK(got[{tk, 0}] == doctest::Approx(0.1));
  CHECK(got[{ss, 1}] == doctest::Approx(0.06));
  CHECK(got[{ss, 0}] == doctest::Approx(0.24));
  CHECK(got[{sf, 1}] == doctest::Approx(0.04));
  CHECK(got[{sf, 0}] == doctest::Approx(0.16));

  auto corridor = Bundle::from_documents(fixtures::corridor_model(),
                                         fixtures::spec_doc("F END", {{"END", {{"kind", "state"}, {"members", {"C2"}}}}}));
  ProductContext cctx(corridor->model, corridor->spec, corridor->dfa);
  auto c = cctx.expand(make_node(0, std::vector<double>{0.5, 0.5}, 0));
  REQUIRE(c.size() == 1);
  REQUIRE(c[0].branches.size() == 1);
  CHECK(c[0].branches[0].probability == 1.0);
}

TEST_CASE("expand matches the oracle and sums to one") {
  oracle::Gen g(6);
  for (int which : {1, 2}) {
    const auto& b = fixtures::town(which);
    for (auto mode : {UpdateMode::kBayes, UpdateMode::kMarginal}) {
      ProductContext ctx(b.model, b.spec, b.dfa, mode);
      for (int i = 0; i < 150; ++i) {
        const int x = oracle::pick(g, 36);
        auto node = make_node(x, oracle::random_distribution(g, 7, true), oracle::pick(g, b.dfa.num_states() - 1));
        if (ctx.classify(node) != NodeClass::kOpen) continue;
        auto ex = ctx.expand(node);
        CHECK(static_cast<int>(ex.size()) == b.model.num_actions(x));
        for (const auto& ab : ex) {
          double s = 0.0;
          for (const auto& br : ab.branches) s += br.probability;
          CHECK(std::abs(s - 1.0) < 1e-9);
          if (mode != UpdateMode::kBayes) continue;
          std::map<std::pair<int, int>, double> want;
          for (int o = 0; o < b.model.num_observations(); ++o) {
            auto obs = Observation::from_index(o);
            auto [nb, like] = oracle::bayes(b.model, x, node.belief, ab.action, obs);
            if (like <= 0.0) continue;
            for (auto [y, p] : b.model.world_transition(x, ab.action, obs)) want[{o, y}] += like * p;
          }
          std::map<std::pair<int, int>, double> have;
          for (const auto& br : ab.branches) have[{br.observation.index(), br.next_x}] += br.probability;
          REQUIRE(have.size() == want.size());
          for (const auto& [k, p] : want) CHECK(std::abs(have[k] - p) < 1e-12);
        }
      }
    }
  }
}

TEST_CASE("equal keys expand identically") {
  const auto& b = fixtures::town(1);
  ProductContext ctx(b.model, b.spec, b.dfa);
  oracle::Gen g(12);
  for (int i = 0; i < 50; ++i) {
    const int x = oracle::pick(g, 36);
    auto raw = oracle::random_distribution(g, 7);
    auto n1 = make_node(x, raw, 0);
    auto n2 = make_node(x, n1.belief, 0);
    REQUIRE(n1.key == n2.key);
    auto e1 = ctx.expand(n1), e2 = ctx.expand(n2);
    REQUIRE(e1.size() == e2.size());
    for (std::size_t a = 0; a < e1.size(); ++a) {
      REQUIRE(e1[a].branches.size() == e2[a].branches.size());
      for (std::size_t k = 0; k < e1[a].branches.size(); ++k) {
        CHECK(e1[a].branches[k].probability == e2[a].branches[k].probability);
        CHECK(e1[a].branches[k].child.key == e2[a].branches[k].child.key);
      }
    }
  }
}

TEST_CASE("collapsed and literal constructions agree") {
  oracle::Gen g(44);
  for (int i = 0; i < 6; ++i) {
    const Json model = oracle::tiny_model(g, 3, 2);
    Json spec = {{"formula", i % 2 ? "F (NU2 & X NU1)" : "(!NU1) U (NU2 | B1)"},
                 {"predicates", oracle::tiny_predicates(g, model, true)}};
    auto b = Bundle::from_documents(model, spec);
    for (int h = 1; h <= 4; ++h) {
      auto col = oracle::expectimax_collapsed(b->model, b->spec, b->dfa, h);
      auto lit = oracle::expectimax_literal(b->model, b->spec, b->dfa, h + 1);
      auto words = oracle::expectimax_words(b->model, b->spec, h);
      CHECK(std::abs(col.value - lit.value) < 1e-9);
      CHECK(std::abs(col.value - words.value) < 1e-9);
    }
  }
}
