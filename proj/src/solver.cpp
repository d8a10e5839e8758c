#include "trustsyn/solver.hpp"

#include <algorithm>
#include <chrono>
#include <deque>

namespace trustsyn {

namespace {
constexpr double kClosedGap = 1e-12;
constexpr double kSelfLoopOne = 1.0 - 1e-15;
constexpr double kFarAway = 1e6;
}  // namespace

std::string_view to_string(SynthesisStatus s) {
  switch (s) {
    case SynthesisStatus::kConverged: return "converged";
    case SynthesisStatus::kBudgetExhausted: return "budget_exhausted";
    case SynthesisStatus::kExplored: return "explored";
    case SynthesisStatus::kMemoryCap: return "memory_cap";
  }
  return "unknown";
}

SynthesisStatus parse_status(std::string_view s) {
  if (s == "converged") return SynthesisStatus::kConverged;
  if (s == "budget_exhausted") return SynthesisStatus::kBudgetExhausted;
  if (s == "explored") return SynthesisStatus::kExplored;
  if (s == "memory_cap") return SynthesisStatus::kMemoryCap;
  throw std::invalid_argument("unknown synthesis status '" + std::string(s) + "'");
}

const PolicyEntry* SynthesisResult::find(const NodeKey& key) const {
  auto it = std::lower_bound(policy.begin(), policy.end(), key,
                             [](const PolicyEntry& e, const NodeKey& k) { return e.key < k; });
  if (it == policy.end() || it->key != key) return nullptr;
  return &*it;
}

int extract_action(const SynthesisResult& result, const NodeKey& key) {
  if (const auto* e = result.find(key)) return e->action;
  throw UnknownNode("node outside the explored region");
}

Solver::Solver(const ProductContext& ctx, SolverParams params)
    : ctx_(ctx), params_(params), rng_(params.seed) {}

std::optional<int> Solver::find(const NodeKey& key) const {
  auto it = index_.find(key);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Solver::intern(const ProductNode& node) {
  auto it = index_.find(node.key);
  if (it != index_.end()) return it->second;
  if (nodes_.size() >= params_.max_nodes)
    throw MemoryCapExceeded("memo table reached " + std::to_string(params_.max_nodes) + " nodes");
  Node n;
  n.node = node;
  n.cls = ctx_.classify(node);
  // V-bar = 1 everywhere, V-lower = 1 on accepting nodes; dead nodes pinned to 0.
  if (n.cls == NodeClass::kAccepting) {
    n.bounds.lower = 1.0;
  } else if (n.cls == NodeClass::kDead) {
    n.bounds.upper = 0.0;
  }
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(std::move(n));
  index_.emplace(node.key, id);
  return id;
}

void Solver::expand(int id) {
  if (nodes_[id].expanded) return;
  const ProductNode node = nodes_[id].node;
  std::vector<std::vector<Edge>> actions;
  for (const auto& ab : ctx_.expand(node)) {
    std::vector<Edge> edges;
    edges.reserve(ab.branches.size());
    for (const auto& br : ab.branches) edges.push_back({intern(br.child), br.probability});
    actions.push_back(std::move(edges));
  }
  nodes_[id].actions = std::move(actions);
  nodes_[id].expanded = true;
  ++expanded_;
}

Solver::QValues Solver::q_values(int id, int action) const {
  double self = 0.0, rest_upper = 0.0, rest_lower = 0.0;
  for (const auto& e : nodes_[id].actions[action]) {
    if (e.child == id) {
      self += e.probability;
    } else {
      rest_upper += e.probability * nodes_[e.child].bounds.upper;
      rest_lower += e.probability * nodes_[e.child].bounds.lower;
    }
  }
  // A branch back into the node itself: the stationary value of repeating
  // the action is rest / (1 - p_self), and 0 when it never leaves.
  if (self >= kSelfLoopOne) return {0.0, 0.0};
  if (self > 0.0) {
    rest_upper /= 1.0 - self;
    rest_lower /= 1.0 - self;
  }
  return {std::min(1.0, rest_upper), std::min(1.0, rest_lower)};
}

BoundEntry Solver::backup(int id) {
  Node& n = nodes_[id];
  const BoundEntry before = n.bounds;
  if (n.cls == NodeClass::kAccepting) {
    n.bounds.upper = n.bounds.lower = 1.0;
  } else if (n.cls == NodeClass::kDead) {
    n.bounds.upper = n.bounds.lower = 0.0;
  } else {
    expand(id);
    Node& m = nodes_[id];
    double best_upper = -1.0, best_lower = -1.0;
    int a_upper = 0, a_lower = 0;
    for (int a = 0; a < static_cast<int>(m.actions.size()); ++a) {
      const auto q = q_values(id, a);
      if (q.upper > best_upper) {
        best_upper = q.upper;
        a_upper = a;
      }
      if (q.lower > best_lower) {
        best_lower = q.lower;
        a_lower = a;
      }
    }
    m.bounds.upper = std::min(m.bounds.upper, best_upper);
    m.bounds.upper_action = a_upper;
    if (best_lower > m.bounds.lower || m.bounds.lower_action < 0) {
      m.bounds.lower = std::max(m.bounds.lower, best_lower);
      m.bounds.lower_action = a_lower;
    }
  }
  ++nodes_[id].bounds.visits;
  ++backups_;
  if (observer_) observer_(nodes_[id].node.key, before, nodes_[id].bounds);
  return nodes_[id].bounds;
}

bool Solver::exhausted(int id, int depth) const {
  const Node& n = nodes_[id];
  return n.cls != NodeClass::kOpen || gap(id) <= kClosedGap || depth >= params_.max_depth ||
         n.exhausted_depth <= depth;
}

bool Solver::action_exhausted(int id, int action, int depth) const {
  for (const auto& e : nodes_[id].actions[action])
    if (!exhausted(e.child, depth + 1)) return false;
  return true;
}

void Solver::refresh_exhaustion(int id, int depth) {
  Node& n = nodes_[id];
  if (!n.expanded || depth >= params_.max_depth) return;
  for (int a = 0; a < static_cast<int>(n.actions.size()); ++a)
    if (!action_exhausted(id, a, depth)) return;
  n.exhausted_depth = std::min(n.exhausted_depth, depth);
}

double Solver::action_distance(int id, int action) const {
  double d = 0.0;
  for (const auto& e : nodes_[id].actions[action]) {
    const auto& k = nodes_[e.child].node.key;
    const int dist = ctx_.abstract_distance(k.x, k.q);
    d += e.probability * (dist == kUnreachable ? kFarAway : static_cast<double>(dist));
  }
  return d;
}

int Solver::sample(std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) return -1;  // nothing left to explore
  return rng_.categorical(weights);
}

std::vector<int> Solver::trial() {
  std::vector<int> path;
  // Chance root: an initial label outcome drawn by weighted gap.
  std::vector<double> weights;
  for (const auto& [id, p] : roots_) weights.push_back(exhausted(id, 0) ? 0.0 : p * gap(id));
  const int pick = sample(weights);
  if (pick < 0) return path;
  int current = roots_[pick].first;

  int depth = 0;
  for (;;) {
    path.push_back(current);
    if (nodes_[current].cls != NodeClass::kOpen || depth >= params_.max_depth) break;
    backup(current);
    if (gap(current) <= kClosedGap) break;

    // Action: largest upper Q among actions with something left to explore.
    int action = -1;
    double action_upper = -1.0, action_dist = 0.0;
    for (int a = 0; a < static_cast<int>(nodes_[current].actions.size()); ++a) {
      if (action_exhausted(current, a, depth)) continue;
      const double qu = q_values(current, a).upper;
      if (qu > action_upper) {
        action = a;
        action_upper = qu;
        action_dist = action_distance(current, a);
      } else if (qu == action_upper) {
        const double d = action_distance(current, a);
        if (d < action_dist) {
          action = a;
          action_dist = d;
        }
      }
    }
    if (action < 0) {
      refresh_exhaustion(current, depth);
      break;
    }
    // Branch: drawn in proportion to probability-weighted gap.
    const auto& edges = nodes_[current].actions[action];
    weights.assign(edges.size(), 0.0);
    for (std::size_t i = 0; i < edges.size(); ++i)
      if (!exhausted(edges[i].child, depth + 1)) weights[i] = edges[i].probability * gap(edges[i].child);
    const int b = sample(weights);
    if (b < 0) break;
    current = edges[b].child;
    ++depth;
  }

  for (std::size_t i = path.size(); i-- > 0;) {
    backup(path[i]);
    refresh_exhaustion(path[i], static_cast<int>(i));
  }
  ++trials_;
  return path;
}

void Solver::set_roots(const std::vector<std::pair<ProductNode, double>>& roots) {
  roots_.clear();
  for (const auto& [n, p] : roots) roots_.emplace_back(intern(n), p);
}

double Solver::root_lower() const {
  double v = 0.0;
  for (const auto& [id, p] : roots_) v += p * nodes_[id].bounds.lower;
  return v;
}

double Solver::root_upper() const {
  double v = 0.0;
  for (const auto& [id, p] : roots_) v += p * nodes_[id].bounds.upper;
  return std::min(1.0, v);
}

SynthesisResult Solver::solve() { return solve_from(ctx_.initial_nodes()); }

SynthesisResult Solver::solve_from(const std::vector<std::pair<ProductNode, double>>& roots) {
  const auto start = std::chrono::steady_clock::now();
  SynthesisStatus status = SynthesisStatus::kBudgetExhausted;
  try {
    set_roots(roots);
    for (const auto& [id, p] : roots_) backup(id);
    for (;;) {
      if (root_upper() - root_lower() <= params_.tau) {
        status = SynthesisStatus::kConverged;
        break;
      }
      bool open = false;
      for (const auto& [id, p] : roots_) open = open || !exhausted(id, 0);
      if (!open) {
        status = SynthesisStatus::kExplored;
        break;
      }
      if (trials_ >= params_.max_trials) {
        status = SynthesisStatus::kBudgetExhausted;
        break;
      }
      trial();
    }
  } catch (const MemoryCapExceeded&) {
    status = SynthesisStatus::kMemoryCap;
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return collect(status, secs);
}

SynthesisResult Solver::collect(SynthesisStatus status, double seconds) const {
  SynthesisResult r;
  r.lower = root_lower();
  r.upper = root_upper();
  r.gap = std::max(0.0, r.upper - r.lower);
  r.status = status;
  for (const auto& [id, p] : roots_) r.initial.emplace_back(nodes_[id].node.key, p);

  // Every expanded open node the lower-bound greedy policy can reach.
  std::vector<bool> seen(nodes_.size(), false);
  std::deque<int> queue;
  for (const auto& [id, p] : roots_)
    if (!seen[id]) {
      seen[id] = true;
      queue.push_back(id);
    }
  while (!queue.empty()) {
    const int id = queue.front();
    queue.pop_front();
    const Node& n = nodes_[id];
    if (n.cls != NodeClass::kOpen || !n.expanded) continue;
    const int a = std::max(0, n.bounds.lower_action);
    r.policy.push_back({n.node.key, a, n.bounds.lower, n.bounds.upper});
    for (const auto& e : n.actions[a])
      if (!seen[e.child]) {
        seen[e.child] = true;
        queue.push_back(e.child);
      }
  }
  std::sort(r.policy.begin(), r.policy.end(),
            [](const PolicyEntry& a, const PolicyEntry& b) { return a.key < b.key; });
  r.nodes = static_cast<std::int64_t>(nodes_.size());
  r.expanded = expanded_;
  r.backups = backups_;
  r.trials = trials_;
  r.seconds = seconds;
  r.params = params_;
  return r;
}

SynthesisResult synthesize(const TrustPomdp& model, const Specification& spec, const Dfa& dfa,
                           const SolverParams& params) {
  ProductContext ctx(model, spec, dfa, params.update_mode);
  Solver solver(ctx, params);
  return solver.solve();
}

}  // namespace trustsyn
