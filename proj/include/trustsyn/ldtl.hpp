#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "trustsyn/model.hpp"

namespace trustsyn {

// ---------------------------------------------------------------------------
// Predicates
// ---------------------------------------------------------------------------

/// A set of hidden states (x, theta). Indexed x * num_trust + theta.
struct StatePredicate {
  std::string name;
  std::vector<bool> members;

  bool holds(int x, int theta, int num_trust) const {
    return members[static_cast<std::size_t>(x) * num_trust + theta];
  }
};

/// Affine belief predicate: true iff x is in the guard and c - A.b < 0.
struct BeliefPredicate {
  std::string name;
  std::vector<double> weights;
  double offset = 0.0;
  std::vector<bool> guard;  // empty: every workspace state
};

bool eval_belief_predicate(const BeliefPredicate& mu, int x, std::span<const double> belief);

enum class PredicateKind : std::uint8_t { kState, kBelief };

struct PredicateRef {
  PredicateKind kind;
  int index;
};

class PredicateTable {
 public:
  PredicateTable() = default;
  PredicateTable(int num_states, int num_trust) : num_states_(num_states), num_trust_(num_trust) {}

  int add_state(StatePredicate p);
  int add_belief(BeliefPredicate p);

  // Case-insensitive.
  std::optional<PredicateRef> find(std::string_view name) const;

  const StatePredicate& state(int i) const { return state_.at(i); }
  const BeliefPredicate& belief(int i) const { return belief_.at(i); }
  int num_state_predicates() const { return static_cast<int>(state_.size()); }
  int num_belief_predicates() const { return static_cast<int>(belief_.size()); }
  int num_states() const { return num_states_; }
  int num_trust() const { return num_trust_; }

  // True when membership of some x differs across trust levels.
  bool state_depends_on_trust(int i) const;

 private:
  int num_states_ = 0;
  int num_trust_ = 0;
  std::vector<StatePredicate> state_;
  std::vector<BeliefPredicate> belief_;
};

// ---------------------------------------------------------------------------
// Formulas
// ---------------------------------------------------------------------------

/// kFalse never comes out of the parser; it appears in automaton states.
enum class Op : std::uint8_t {
  kFalse,
  kTrue,
  kStatePred,
  kBeliefPred,
  kNotState,
  kNotBelief,
  kAnd,
  kOr,
  kUntil,
  kNext,
  kEventually,
};

struct FormulaNode;
using Formula = std::shared_ptr<const FormulaNode>;

struct FormulaNode {
  Op op = Op::kTrue;
  int pred = -1;  // predicate-table index for the four literal ops
  std::vector<Formula> kids;
};

namespace f {
Formula top();
Formula bottom();
Formula state(int index);
Formula belief(int index);
Formula not_state(int index);
Formula not_belief(int index);
Formula conj(Formula a, Formula b);
Formula disj(Formula a, Formula b);
Formula until(Formula a, Formula b);
Formula next(Formula a);
Formula eventually(Formula a);
// n-ary variants used by the automaton's normal form
Formula conj(std::vector<Formula> kids);
Formula disj(std::vector<Formula> kids);
}  // namespace f

bool is_literal(Op op);
bool structurally_equal(const Formula& a, const Formula& b);
int compare(const Formula& a, const Formula& b);
int depth(const Formula& phi);

class ParseError : public std::runtime_error {
 public:
  ParseError(std::string message, std::size_t position);
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

/// Precedence: ! X F (tightest), then U (right-associative), &, |.
Formula parse_formula(std::string_view text, const PredicateTable& table);

/// Prints in the concrete grammar; binary operators are parenthesized so
/// the output reparses to the same tree.
std::string print(const Formula& phi, const PredicateTable& table);

// ---------------------------------------------------------------------------
// Alphabet and labelling
// ---------------------------------------------------------------------------

using LabelSet = std::uint32_t;
inline constexpr int kMaxPredicates = 16;

/// AP followed by BP, each in first-occurrence order. Bit i of a LabelSet
/// refers to the i-th predicate of that concatenation.
struct Alphabet {
  std::vector<int> state_preds;
  std::vector<int> belief_preds;

  int size() const { return static_cast<int>(state_preds.size() + belief_preds.size()); }
  int bit_of(PredicateRef ref) const;  // -1 when absent
  LabelSet belief_mask() const;
};

Alphabet predicates(const Formula& phi);

LabelSet state_labels(const PredicateTable& table, const Alphabet& alphabet, int x, int theta);
LabelSet belief_labels(const PredicateTable& table, const Alphabet& alphabet, int x,
                       std::span<const double> belief);

// ---------------------------------------------------------------------------
// Specification documents
// ---------------------------------------------------------------------------

struct Specification {
  Json document;
  std::string text;
  PredicateTable table;
  Formula formula;
  Alphabet alphabet;

  // True when some state predicate in the alphabet depends on trust.
  bool labels_depend_on_trust() const;
};

class SpecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Resolves predicate memberships against the model's states and levels.
Specification load_spec(const Json& doc, const TrustPomdp& model);
Specification load_spec_file(const std::string& path, const TrustPomdp& model);

/// Reads only predicate names and kinds; memberships are left empty. Enough
/// to build the automaton without a model.
Specification load_spec_syntax(const Json& doc);

// ---------------------------------------------------------------------------
// Finite-trace semantics
// ---------------------------------------------------------------------------

struct TraceStep {
  int x = 0;
  int theta = 0;
  std::vector<double> belief;
};
using AnnotatedTrace = std::vector<TraceStep>;

/// Recursive co-safe semantics over a nonempty finite trace; Next is false
/// at the last position.
bool evaluate_trace(const Formula& phi, const PredicateTable& table, const AnnotatedTrace& trace);

/// Same semantics over a word of label sets.
bool evaluate_labels(const Formula& phi, const Alphabet& alphabet,
                     std::span<const LabelSet> word);

}  // namespace trustsyn
