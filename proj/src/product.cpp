#include "trustsyn/product.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>

namespace trustsyn {

std::size_t NodeKeyHash::operator()(const NodeKey& k) const noexcept {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](std::uint64_t v) {
    h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  };
  mix(static_cast<std::uint64_t>(k.x));
  mix(static_cast<std::uint64_t>(k.q));
  for (auto u : k.belief) mix(static_cast<std::uint64_t>(u));
  return static_cast<std::size_t>(h);
}

std::vector<std::int32_t> round_belief(std::span<const double> belief) {
  const auto n = belief.size();
  double total = 0.0;
  for (double v : belief) total += std::max(0.0, v);
  std::vector<std::int32_t> units(n, 0);
  if (!(total > 0.0)) return units;
  std::vector<double> exact(n, 0.0);
  std::int64_t sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (belief[i] <= 0.0) continue;
    exact[i] = belief[i] / total * static_cast<double>(kBeliefUnits);
    units[i] = static_cast<std::int32_t>(std::max<long long>(1, std::llround(exact[i])));
    sum += units[i];
  }
  // Move single units until the key sums to kBeliefUnits: add where the
  // rounding lost most, take where it gained most (never below one unit).
  while (sum != kBeliefUnits) {
    int pick = -1;
    for (std::size_t i = 0; i < n; ++i) {
      if (belief[i] <= 0.0) continue;
      if (sum > kBeliefUnits && units[i] <= 1) continue;
      const double err = exact[i] - units[i];
      if (pick < 0 || (sum < kBeliefUnits ? err > exact[pick] - units[pick]
                                          : err < exact[pick] - units[pick]))
        pick = static_cast<int>(i);
    }
    const int step = sum < kBeliefUnits ? 1 : -1;
    units[pick] += step;
    sum += step;
  }
  return units;
}

std::vector<double> belief_of(std::span<const std::int32_t> units) {
  std::int64_t total = 0;
  for (auto u : units) total += u;
  std::vector<double> b(units.size(), 0.0);
  for (std::size_t i = 0; i < units.size(); ++i)
    b[i] = static_cast<double>(units[i]) / static_cast<double>(total);
  return b;
}

ProductNode make_node(int x, std::span<const double> belief, int q) {
  ProductNode n;
  n.key.x = x;
  n.key.q = q;
  n.key.belief = round_belief(belief);
  n.belief = belief_of(n.key.belief);
  return n;
}

ProductContext::ProductContext(const TrustPomdp& model, const Specification& spec, const Dfa& dfa,
                               UpdateMode mode)
    : model_(&model), spec_(&spec), dfa_(&dfa), mode_(mode) {
  if (dfa.num_predicates() != spec.alphabet.size())
    throw AutomatonError("automaton alphabet does not match the specification");
  compute_abstract_distances();
}

std::vector<LabelOutcome> ProductContext::label_distribution(int x,
                                                             std::span<const double> belief) const {
  const LabelSet bl = belief_labels(spec_->table, spec_->alphabet, x, belief);
  std::map<LabelSet, double> grouped;
  for (int t = 0; t < model_->num_trust_levels(); ++t) {
    if (belief[t] <= 0.0) continue;
    grouped[state_labels(spec_->table, spec_->alphabet, x, t) | bl] += belief[t];
  }
  std::vector<LabelOutcome> out;
  out.reserve(grouped.size());
  for (const auto& [l, p] : grouped) out.push_back({l, p});
  return out;
}

NodeClass ProductContext::classify(int q) const {
  if (dfa_->accepting(q)) return NodeClass::kAccepting;
  if (dfa_->dead(q)) return NodeClass::kDead;
  return NodeClass::kOpen;
}

std::vector<ActionBranches> ProductContext::expand(const ProductNode& node) const {
  std::vector<ActionBranches> out;
  const BeliefState b{node.x(), node.belief};
  for (int a = 0; a < model_->num_actions(node.x()); ++a) {
    ActionBranches ab{a, {}};
    for (auto& tr : enumerate_transitions(*model_, b, a, mode_)) {
      auto units = round_belief(tr.trust);
      auto canonical = belief_of(units);
      for (const auto& lo : label_distribution(tr.next_x, canonical)) {
        Branch br;
        br.observation = tr.observation;
        br.next_x = tr.next_x;
        br.label = lo.label;
        br.probability = tr.probability * lo.probability;
        br.child.key = NodeKey{tr.next_x, dfa_->step(node.q(), lo.label), units};
        br.child.belief = canonical;
        ab.branches.push_back(std::move(br));
      }
    }
    out.push_back(std::move(ab));
  }
  return out;
}

std::vector<std::pair<ProductNode, double>> ProductContext::initial_nodes() const {
  return initial_nodes(model_->initial_state(), model_->initial_belief(), dfa_->initial());
}

std::vector<std::pair<ProductNode, double>> ProductContext::initial_nodes(
    int x, std::span<const double> belief, int q_before) const {
  auto units = round_belief(belief);
  auto canonical = belief_of(units);
  std::vector<std::pair<ProductNode, double>> out;
  for (const auto& lo : label_distribution(x, canonical)) {
    ProductNode n;
    n.key = NodeKey{x, dfa_->step(q_before, lo.label), units};
    n.belief = canonical;
    out.emplace_back(std::move(n), lo.probability);
  }
  return out;
}

void ProductContext::compute_abstract_distances() {
  const int nx = model_->num_states();
  const int nq = dfa_->num_states();
  const auto& alpha = spec_->alphabet;
  const int nb = static_cast<int>(alpha.belief_preds.size());
  const int ns = static_cast<int>(alpha.state_preds.size());

  // Label sets each workspace state can carry.
  std::vector<std::vector<LabelSet>> possible(nx);
  for (int x = 0; x < nx; ++x) {
    LabelSet allowed = 0;
    for (int i = 0; i < nb; ++i) {
      const auto& guard = spec_->table.belief(alpha.belief_preds[i]).guard;
      if (guard.empty() || guard[x]) allowed |= LabelSet{1} << (ns + i);
    }
    std::vector<LabelSet> labels;
    for (int t = 0; t < model_->num_trust_levels(); ++t) {
      const LabelSet s = state_labels(spec_->table, alpha, x, t);
      // Every subset of the allowed belief bits.
      for (LabelSet sub = allowed;; sub = (sub - 1) & allowed) {
        labels.push_back(s | sub);
        if (sub == 0) break;
      }
    }
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    possible[x] = std::move(labels);
  }

  std::vector<std::vector<int>> reverse(static_cast<std::size_t>(nx) * nq);
  const Observation any{};
  for (int x = 0; x < nx; ++x)
    for (int a = 0; a < model_->num_actions(x); ++a)
      for (const auto& [x2, p] : model_->world_transition(x, a, any)) {
        (void)p;
        for (int q = 0; q < nq; ++q)
          for (LabelSet l : possible[x2]) {
            const int to = x2 * nq + dfa_->step(q, l);
            reverse[to].push_back(x * nq + q);
          }
      }
  distance_.assign(static_cast<std::size_t>(nx) * nq, kUnreachable);
  std::deque<int> queue;
  for (int x = 0; x < nx; ++x)
    for (int q = 0; q < nq; ++q)
      if (dfa_->accepting(q)) {
        distance_[x * nq + q] = 0;
        queue.push_back(x * nq + q);
      }
  while (!queue.empty()) {
    const int v = queue.front();
    queue.pop_front();
    for (int u : reverse[v])
      if (distance_[u] == kUnreachable) {
        distance_[u] = distance_[v] + 1;
        queue.push_back(u);
      }
  }
}

}  // namespace trustsyn
