#pragma once

#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "trustsyn/ldtl.hpp"

namespace trustsyn {

class AutomatonError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kUnreachable = std::numeric_limits<int>::max();

/// Total DFA over label sets with a dense transition table. State 0 is
/// initial; accepting states are absorbing.
class Dfa {
 public:
  Dfa() = default;

  /// Validates totality and absorbing acceptance, then derives the dead set
  /// and distances. `table` is row-major: states x 2^num_predicates.
  static Dfa from_table(int num_predicates, std::vector<int> table, std::vector<bool> accepting,
                        std::vector<std::string> descriptions = {});

  int num_states() const { return static_cast<int>(accepting_.size()); }
  int num_predicates() const { return num_predicates_; }
  int num_letters() const { return 1 << num_predicates_; }
  int initial() const { return 0; }

  int step(int q, LabelSet l) const {
    return table_[static_cast<std::size_t>(q) * num_letters() + (l & (num_letters() - 1))];
  }
  bool accepting(int q) const { return accepting_[q]; }
  bool dead(int q) const { return dead_[q]; }
  // Fewest letters needed to reach an accepting state; kUnreachable if dead.
  int distance_to_accept(int q) const { return distance_[q]; }
  const std::string& description(int q) const { return descriptions_[q]; }
  const std::vector<int>& table() const { return table_; }

 private:
  int num_predicates_ = 0;
  std::vector<int> table_;
  std::vector<bool> accepting_;
  std::vector<bool> dead_;
  std::vector<int> distance_;
  std::vector<std::string> descriptions_;
};

struct TranslateOptions {
  std::size_t max_states = 1'000'000;
};

/// Formula progression. Each DFA state is the residual obligation after the
/// labels consumed so far, kept as a reduced DNF over literals and temporal
/// subformulas (a finite set, so translation terminates). A finite word is
/// accepted iff it satisfies the formula with Next false at the end.
Dfa translate(const Formula& phi, const Alphabet& alphabet, const PredicateTable* table = nullptr,
              TranslateOptions options = {});
Dfa translate(const Specification& spec, TranslateOptions options = {});

/// Normal form used to identify automaton states.
Formula normalize(const Formula& phi);
/// Whether a word whose last letter is `label` satisfies the residual
/// (Next is false at the final position).
bool holds_at_end(const Formula& phi, const Alphabet& alphabet, LabelSet label);
/// One progression step of a normalized formula.
Formula progress(const Formula& phi, const Alphabet& alphabet, LabelSet label);

std::vector<int> dead_states(const Dfa& dfa);

/// Moore partition refinement over reachable states; states renumbered in
/// breadth-first order from the initial state.
Dfa minimize(const Dfa& dfa);

bool accepts(const Dfa& dfa, std::span<const LabelSet> word);

/// `q bits q'` per transition (bit i of the string is predicate i), then
/// `acc:` and `dead:` footer lines.
std::string export_text(const Dfa& dfa, const std::vector<std::string>& predicate_names = {});
Dfa import_text(const std::string& text);

std::vector<std::string> alphabet_names(const Specification& spec);

}  // namespace trustsyn
