#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "trustsyn/automaton.hpp"
#include "trustsyn/ldtl.hpp"
#include "trustsyn/model.hpp"

namespace trustsyn {

// Beliefs in memo keys are stored in units of 1e-6.
inline constexpr std::int64_t kBeliefUnits = 1'000'000;

/// Memo key of a product node: (x, rounded belief, DFA state).
struct NodeKey {
  int x = 0;
  int q = 0;
  std::vector<std::int32_t> belief;

  friend bool operator==(const NodeKey&, const NodeKey&) = default;
  friend auto operator<=>(const NodeKey&, const NodeKey&) = default;
};

struct NodeKeyHash {
  std::size_t operator()(const NodeKey& k) const noexcept;
};

/// Rounds to the 1e-6 grid: units sum to kBeliefUnits, a positive
/// component keeps at least one unit, and round_belief(belief_of(u)) == u.
std::vector<std::int32_t> round_belief(std::span<const double> belief);
/// The belief a rounded key stands for (units renormalized to sum 1).
std::vector<double> belief_of(std::span<const std::int32_t> units);

/// A product belief-MDP node. `q` is the DFA state after consuming the
/// labels of every belief state up to and including this one.
struct ProductNode {
  NodeKey key;
  std::vector<double> belief;  // canonical: belief_of(key.belief)

  int x() const { return key.x; }
  int q() const { return key.q; }
};

ProductNode make_node(int x, std::span<const double> belief, int q);

struct LabelOutcome {
  LabelSet label = 0;
  double probability = 0.0;
};

enum class NodeClass : std::uint8_t { kOpen, kAccepting, kDead };

struct Branch {
  Observation observation;
  int next_x = 0;
  LabelSet label = 0;
  double probability = 0.0;
  ProductNode child;
};

struct ActionBranches {
  int action = 0;
  std::vector<Branch> branches;
};

/// Everything needed to expand product nodes lazily.
class ProductContext {
 public:
  ProductContext(const TrustPomdp& model, const Specification& spec, const Dfa& dfa,
                 UpdateMode mode = UpdateMode::kBayes);

  const TrustPomdp& model() const { return *model_; }
  const Specification& spec() const { return *spec_; }
  const Dfa& dfa() const { return *dfa_; }
  UpdateMode mode() const { return mode_; }

  /// p_L(x, b, l): trust levels with positive mass grouped by their full
  /// label set; outcomes ordered by label.
  std::vector<LabelOutcome> label_distribution(int x, std::span<const double> belief) const;

  NodeClass classify(int q) const;
  NodeClass classify(const ProductNode& n) const { return classify(n.q()); }

  /// Per action (declaration order): (o, x', l') branches ordered
  /// lexicographically, with probability Z * T_X * p_L.
  std::vector<ActionBranches> expand(const ProductNode& node) const;

  /// Chance root over the label outcomes of the initial belief state.
  std::vector<std::pair<ProductNode, double>> initial_nodes() const;
  std::vector<std::pair<ProductNode, double>> initial_nodes(int x, std::span<const double> belief,
                                                            int q_before) const;

  /// Length of the shortest (x, q) path to acceptance when belief
  /// predicates may take either value and trust-dependent state predicates
  /// any of their values. kUnreachable when no such path exists.
  int abstract_distance(int x, int q) const { return distance_[static_cast<std::size_t>(x) * dfa_->num_states() + q]; }

 private:
  void compute_abstract_distances();

  const TrustPomdp* model_;
  const Specification* spec_;
  const Dfa* dfa_;
  UpdateMode mode_;
  std::vector<int> distance_;
};

}  // namespace trustsyn
