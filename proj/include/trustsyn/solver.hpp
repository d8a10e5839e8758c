#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "trustsyn/product.hpp"
#include "trustsyn/random.hpp"

namespace trustsyn {

struct SolverParams {
  double tau = 0.01;
  int max_depth = 50;
  std::int64_t max_trials = 2000;
  UpdateMode update_mode = UpdateMode::kBayes;
  std::uint64_t seed = 0;
  std::size_t max_nodes = 2'000'000;
};

enum class SynthesisStatus : std::uint8_t {
  kConverged,        // root gap <= tau
  kBudgetExhausted,  // max_trials reached
  kExplored,         // nothing left to explore within max_depth
  kMemoryCap,        // max_nodes reached
};
std::string_view to_string(SynthesisStatus s);
SynthesisStatus parse_status(std::string_view s);

/// Value bounds of one product node (V-bar, V-lower).
struct BoundEntry {
  double upper = 1.0;
  double lower = 0.0;
  int upper_action = -1;
  int lower_action = -1;  // action of the last strict lower-bound improvement
  std::int64_t visits = 0;
};

struct PolicyEntry {
  NodeKey key;
  int action = 0;
  double lower = 0.0;
  double upper = 1.0;
};

class UnknownNode : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SynthesisResult {
  double lower = 0.0;
  double upper = 1.0;
  double gap = 1.0;
  SynthesisStatus status = SynthesisStatus::kBudgetExhausted;
  std::vector<std::pair<NodeKey, double>> initial;
  std::vector<PolicyEntry> policy;  // sorted by key
  std::int64_t nodes = 0;
  std::int64_t expanded = 0;
  std::int64_t backups = 0;
  std::int64_t trials = 0;
  double seconds = 0.0;
  SolverParams params;

  const PolicyEntry* find(const NodeKey& key) const;
};

/// Greedy lower-bound action stored for the node. Throws UnknownNode when
/// the node lies outside the explored region.
int extract_action(const SynthesisResult& result, const NodeKey& key);

/// Heuristic-search point-based value iteration over the lazily expanded
/// product. Single-threaded; identical inputs give identical results.
class Solver {
 public:
  using BackupObserver =
      std::function<void(const NodeKey&, const BoundEntry& before, const BoundEntry& after)>;

  Solver(const ProductContext& ctx, SolverParams params);

  void set_observer(BackupObserver observer) { observer_ = std::move(observer); }

  /// Runs trials from the chance root over the initial label outcomes.
  SynthesisResult solve();
  SynthesisResult solve_from(const std::vector<std::pair<ProductNode, double>>& roots);

  // Lower-level access, mostly for tests.
  int intern(const ProductNode& node);
  BoundEntry backup(int id);
  std::vector<int> trial();
  const BoundEntry& bounds(int id) const { return nodes_.at(id).bounds; }
  const ProductNode& node(int id) const { return nodes_.at(id).node; }
  NodeClass node_class(int id) const { return nodes_.at(id).cls; }
  std::optional<int> find(const NodeKey& key) const;
  std::size_t num_nodes() const { return nodes_.size(); }
  void set_roots(const std::vector<std::pair<ProductNode, double>>& roots);
  double root_lower() const;
  double root_upper() const;

 private:
  struct Edge {
    int child;
    double probability;
  };
  struct Node {
    ProductNode node;
    NodeClass cls = NodeClass::kOpen;
    BoundEntry bounds;
    bool expanded = false;
    int exhausted_depth = std::numeric_limits<int>::max();
    std::vector<std::vector<Edge>> actions;
  };
  struct QValues {
    double upper;
    double lower;
  };

  void expand(int id);
  QValues q_values(int id, int action) const;
  double gap(int id) const { return nodes_[id].bounds.upper - nodes_[id].bounds.lower; }
  bool exhausted(int id, int depth) const;
  bool action_exhausted(int id, int action, int depth) const;
  void refresh_exhaustion(int id, int depth);
  double action_distance(int id, int action) const;
  int sample(std::span<const double> weights);
  SynthesisResult collect(SynthesisStatus status, double seconds) const;

  const ProductContext& ctx_;
  SolverParams params_;
  std::vector<Node> nodes_;
  std::unordered_map<NodeKey, int, NodeKeyHash> index_;
  std::vector<std::pair<int, double>> roots_;
  BackupObserver observer_;
  Rng rng_;
  std::int64_t backups_ = 0;
  std::int64_t expanded_ = 0;
  std::int64_t trials_ = 0;
};

class MemoryCapExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

SynthesisResult synthesize(const TrustPomdp& model, const Specification& spec, const Dfa& dfa,
                           const SolverParams& params);

}  // namespace trustsyn
