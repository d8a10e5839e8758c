#include "trustsyn/automaton.hpp"

#include <algorithm>
#include <deque>
#include <map>
#include <sstream>
#include <unordered_map>

namespace trustsyn {

namespace {

void key_into(const Formula& phi, std::string& out) {
  static constexpr const char* kOps[] = {"0", "1", "s", "b", "!s", "!b", "&", "|", "U", "X", "F"};
  out += kOps[static_cast<int>(phi->op)];
  if (phi->pred >= 0) out += std::to_string(phi->pred);
  if (!phi->kids.empty()) {
    out += '(';
    for (std::size_t i = 0; i < phi->kids.size(); ++i) {
      if (i) out += ',';
      key_into(phi->kids[i], out);
    }
    out += ')';
  }
}

std::string key_of(const Formula& phi) {
  std::string k;
  key_into(phi, k);
  return k;
}

Formula normalize_junction(Op op, const std::vector<Formula>& kids) {
  const Op unit = op == Op::kAnd ? Op::kTrue : Op::kFalse;
  const Op zero = op == Op::kAnd ? Op::kFalse : Op::kTrue;
  std::vector<Formula> flat;
  for (const auto& k : kids) {
    if (k->op == unit) continue;
    if (k->op == zero) return zero == Op::kTrue ? f::top() : f::bottom();
    if (k->op == op)
      flat.insert(flat.end(), k->kids.begin(), k->kids.end());
    else
      flat.push_back(k);
  }
  std::sort(flat.begin(), flat.end(), [](const Formula& a, const Formula& b) { return compare(a, b) < 0; });
  flat.erase(std::unique(flat.begin(), flat.end(),
                         [](const Formula& a, const Formula& b) { return compare(a, b) == 0; }),
             flat.end());
  if (flat.empty()) return unit == Op::kTrue ? f::top() : f::bottom();
  if (flat.size() == 1) return flat.front();
  return op == Op::kAnd ? f::conj(std::move(flat)) : f::disj(std::move(flat));
}

// Builds the normal form of a node whose children are already normal.
Formula rebuild(Op op, int pred, std::vector<Formula> kids) {
  switch (op) {
    case Op::kAnd:
    case Op::kOr: return normalize_junction(op, kids);
    case Op::kUntil: {
      const auto& a = kids[0];
      const auto& b = kids[1];
      if (b->op == Op::kTrue || b->op == Op::kFalse) return b;
      if (a->op == Op::kFalse) return b;
      if (a->op == Op::kTrue) return rebuild(Op::kEventually, -1, {b});
      return f::until(a, b);
    }
    case Op::kEventually: {
      const auto& a = kids[0];
      if (a->op == Op::kTrue || a->op == Op::kFalse || a->op == Op::kEventually) return a;
      return f::eventually(a);
    }
    case Op::kNext:
      if (kids[0]->op == Op::kFalse) return kids[0];
      return f::next(kids[0]);
    case Op::kTrue: return f::top();
    case Op::kFalse: return f::bottom();
    case Op::kStatePred: return f::state(pred);
    case Op::kBeliefPred: return f::belief(pred);
    case Op::kNotState: return f::not_state(pred);
    case Op::kNotBelief: return f::not_belief(pred);
  }
  return f::bottom();
}

bool literal_holds(const Formula& lit, const Alphabet& alphabet, LabelSet label) {
  const bool state = lit->op == Op::kStatePred || lit->op == Op::kNotState;
  const int bit = alphabet.bit_of({state ? PredicateKind::kState : PredicateKind::kBelief, lit->pred});
  const bool value = bit >= 0 && ((label >> bit) & 1u) != 0;
  const bool negated = lit->op == Op::kNotState || lit->op == Op::kNotBelief;
  return value != negated;
}

using Clause = std::vector<Formula>;

bool formula_less(const Formula& a, const Formula& b) { return compare(a, b) < 0; }

// Disjunctive normal form over elementary formulas (literals and temporal
// nodes, all subformulas of the start formula). Clauses are sorted sets;
// contradictory and subsumed clauses are dropped. Without this, residuals
// like (F p) & ((F p) U q) nest one level deeper on every step.
std::vector<Clause> dnf(const Formula& phi) {
  switch (phi->op) {
    case Op::kTrue: return {Clause{}};
    case Op::kFalse: return {};
    case Op::kOr: {
      std::vector<Clause> out;
      for (const auto& k : phi->kids) {
        auto d = dnf(k);
        out.insert(out.end(), d.begin(), d.end());
      }
      return out;
    }
    case Op::kAnd: {
      std::vector<Clause> out{Clause{}};
      for (const auto& k : phi->kids) {
        auto d = dnf(k);
        std::vector<Clause> next;
        for (const auto& c : out)
          for (const auto& e : d) {
            Clause m = c;
            m.insert(m.end(), e.begin(), e.end());
            next.push_back(std::move(m));
          }
        out = std::move(next);
      }
      return out;
    }
    default: return {Clause{phi}};
  }
}

bool contradictory(const Clause& c) {
  for (const auto& a : c) {
    if (a->op != Op::kStatePred && a->op != Op::kBeliefPred) continue;
    const Op neg = a->op == Op::kStatePred ? Op::kNotState : Op::kNotBelief;
    for (const auto& b : c)
      if (b->op == neg && b->pred == a->pred) return true;
  }
  return false;
}

Formula canonical(const Formula& phi) {
  auto clauses = dnf(phi);
  std::vector<Clause> kept;
  for (auto& c : clauses) {
    std::sort(c.begin(), c.end(), formula_less);
    c.erase(std::unique(c.begin(), c.end(), [](const Formula& a, const Formula& b) { return compare(a, b) == 0; }),
            c.end());
    if (!contradictory(c)) kept.push_back(std::move(c));
  }
  std::sort(kept.begin(), kept.end(), [](const Clause& a, const Clause& b) {
    if (a.size() != b.size()) return a.size() < b.size();
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end(), formula_less);
  });
  std::vector<Formula> disjuncts;
  std::vector<Clause> minimal;
  for (auto& c : kept) {
    bool subsumed = false;
    for (const auto& m : minimal)
      if (std::includes(c.begin(), c.end(), m.begin(), m.end(), formula_less)) {
        subsumed = true;
        break;
      }
    if (subsumed) continue;
    disjuncts.push_back(normalize_junction(Op::kAnd, c));
    minimal.push_back(std::move(c));
  }
  return normalize_junction(Op::kOr, disjuncts);
}

}  // namespace

Formula normalize(const Formula& phi) {
  std::vector<Formula> kids;
  kids.reserve(phi->kids.size());
  for (const auto& k : phi->kids) kids.push_back(normalize(k));
  return rebuild(phi->op, phi->pred, std::move(kids));
}

bool holds_at_end(const Formula& phi, const Alphabet& alphabet, LabelSet label) {
  switch (phi->op) {
    case Op::kTrue: return true;
    case Op::kFalse: return false;
    case Op::kStatePred:
    case Op::kBeliefPred:
    case Op::kNotState:
    case Op::kNotBelief: return literal_holds(phi, alphabet, label);
    case Op::kAnd:
      return std::all_of(phi->kids.begin(), phi->kids.end(),
                         [&](const Formula& k) { return holds_at_end(k, alphabet, label); });
    case Op::kOr:
      return std::any_of(phi->kids.begin(), phi->kids.end(),
                         [&](const Formula& k) { return holds_at_end(k, alphabet, label); });
    case Op::kUntil: return holds_at_end(phi->kids[1], alphabet, label);
    case Op::kEventually: return holds_at_end(phi->kids[0], alphabet, label);
    case Op::kNext: return false;
  }
  return false;
}

Formula progress(const Formula& phi, const Alphabet& alphabet, LabelSet label) {
  switch (phi->op) {
    case Op::kTrue:
    case Op::kFalse: return phi;
    case Op::kStatePred:
    case Op::kBeliefPred:
    case Op::kNotState:
    case Op::kNotBelief: return literal_holds(phi, alphabet, label) ? f::top() : f::bottom();
    case Op::kAnd:
    case Op::kOr: {
      std::vector<Formula> kids;
      kids.reserve(phi->kids.size());
      for (const auto& k : phi->kids) kids.push_back(progress(k, alphabet, label));
      return normalize_junction(phi->op, kids);
    }
    case Op::kUntil: {
      // a U b  ==  b | (a & X(a U b))
      auto b = progress(phi->kids[1], alphabet, label);
      auto a = progress(phi->kids[0], alphabet, label);
      return normalize_junction(Op::kOr, {b, normalize_junction(Op::kAnd, {a, phi})});
    }
    case Op::kEventually: {
      auto a = progress(phi->kids[0], alphabet, label);
      return normalize_junction(Op::kOr, {a, phi});
    }
    case Op::kNext: return phi->kids[0];
  }
  return f::bottom();
}

Dfa Dfa::from_table(int num_predicates, std::vector<int> table, std::vector<bool> accepting,
                    std::vector<std::string> descriptions) {
  if (num_predicates < 0 || num_predicates > kMaxPredicates)
    throw AutomatonError("unsupported alphabet size " + std::to_string(num_predicates));
  Dfa d;
  d.num_predicates_ = num_predicates;
  const int n = static_cast<int>(accepting.size());
  const auto letters = static_cast<std::size_t>(1) << num_predicates;
  if (n == 0) throw AutomatonError("automaton has no states");
  if (table.size() != static_cast<std::size_t>(n) * letters)
    throw AutomatonError("transition table is not total");
  for (int q = 0; q < n; ++q)
    for (std::size_t l = 0; l < letters; ++l) {
      const int to = table[q * letters + l];
      if (to < 0 || to >= n) throw AutomatonError("transition to unknown state");
      if (accepting[q] && to != q) throw AutomatonError("accepting state is not absorbing");
    }
  d.table_ = std::move(table);
  d.accepting_ = std::move(accepting);
  if (descriptions.empty()) {
    for (int q = 0; q < n; ++q) descriptions.push_back("q" + std::to_string(q));
  }
  d.descriptions_ = std::move(descriptions);

  // Backward breadth-first search from the accepting set.
  std::vector<std::vector<int>> preds(n);
  for (int q = 0; q < n; ++q)
    for (std::size_t l = 0; l < letters; ++l) {
      const int to = d.table_[q * letters + l];
      if (preds[to].empty() || preds[to].back() != q) preds[to].push_back(q);
    }
  d.distance_.assign(n, kUnreachable);
  std::deque<int> queue;
  for (int q = 0; q < n; ++q)
    if (d.accepting_[q]) {
      d.distance_[q] = 0;
      queue.push_back(q);
    }
  while (!queue.empty()) {
    const int q = queue.front();
    queue.pop_front();
    for (int p : preds[q])
      if (d.distance_[p] == kUnreachable) {
        d.distance_[p] = d.distance_[q] + 1;
        queue.push_back(p);
      }
  }
  d.dead_.resize(n);
  for (int q = 0; q < n; ++q) d.dead_[q] = d.distance_[q] == kUnreachable;
  return d;
}

Dfa translate(const Formula& phi, const Alphabet& alphabet, const PredicateTable* table,
              TranslateOptions options) {
  const int k = alphabet.size();
  if (k > kMaxPredicates)
    throw AutomatonError("alphabet of " + std::to_string(k) + " predicates exceeds the dense limit");
  const int letters = 1 << k;
  std::vector<Formula> states;
  std::unordered_map<std::string, int> index;
  auto intern = [&](const Formula& psi) {
    auto key = key_of(psi);
    auto [it, inserted] = index.emplace(std::move(key), static_cast<int>(states.size()));
    if (inserted) {
      if (states.size() >= options.max_states)
        throw AutomatonError("automaton exceeds the state budget of " +
                             std::to_string(options.max_states));
      states.push_back(psi);
    }
    return it->second;
  };
  // A state is the residual obligation on the rest of the trace. Reading l
  // accepts when the word ending in l already satisfies the residual (Next
  // false at the end); otherwise the residual progresses. The accepting
  // state is kept apart from a residual "true", which still needs one more
  // position.
  const Formula start = canonical(normalize(phi));
  int accept = -1;
  if (start->op == Op::kTrue) {
    states.push_back(start);
    index.emplace("#accept", 0);
    accept = 0;
  } else {
    intern(start);
  }
  auto accept_state = [&] {
    if (accept < 0) {
      accept = static_cast<int>(states.size());
      if (states.size() >= options.max_states)
        throw AutomatonError("automaton exceeds the state budget of " +
                             std::to_string(options.max_states));
      states.push_back(f::top());
      index.emplace("#accept", accept);
    }
    return accept;
  };
  std::vector<int> trans;
  for (std::size_t q = 0; q < states.size(); ++q) {
    if (static_cast<int>(q) == accept) {
      for (int l = 0; l < letters; ++l) trans.push_back(accept);
      continue;
    }
    const Formula psi = states[q];
    for (int l = 0; l < letters; ++l) {
      const auto label = static_cast<LabelSet>(l);
      trans.push_back(holds_at_end(psi, alphabet, label) ? accept_state()
                                                         : intern(canonical(progress(psi, alphabet, label))));
    }
  }
  std::vector<bool> acc;
  std::vector<std::string> desc;
  for (std::size_t q = 0; q < states.size(); ++q) {
    acc.push_back(static_cast<int>(q) == accept);
    std::string d = table ? print(states[q], *table) : key_of(states[q]);
    if (static_cast<int>(q) != accept && states[q]->op == Op::kTrue) d = "X true";
    desc.push_back(std::move(d));
  }
  return Dfa::from_table(k, std::move(trans), std::move(acc), std::move(desc));
}

Dfa translate(const Specification& spec, TranslateOptions options) {
  return translate(spec.formula, spec.alphabet, &spec.table, options);
}

std::vector<int> dead_states(const Dfa& dfa) {
  std::vector<int> out;
  for (int q = 0; q < dfa.num_states(); ++q)
    if (dfa.dead(q)) out.push_back(q);
  return out;
}

Dfa minimize(const Dfa& dfa) {
  const int letters = dfa.num_letters();
  // Reachable states in breadth-first order.
  std::vector<int> order{dfa.initial()};
  std::vector<bool> seen(dfa.num_states(), false);
  seen[dfa.initial()] = true;
  for (std::size_t i = 0; i < order.size(); ++i)
    for (int l = 0; l < letters; ++l) {
      const int to = dfa.step(order[i], static_cast<LabelSet>(l));
      if (!seen[to]) {
        seen[to] = true;
        order.push_back(to);
      }
    }

  std::vector<int> cls(dfa.num_states(), -1);
  for (int q : order) cls[q] = dfa.accepting(q) ? 1 : 0;
  int num_classes = 0;
  for (;;) {
    std::map<std::vector<int>, int> signature_ids;
    std::vector<int> next(dfa.num_states(), -1);
    for (int q : order) {
      std::vector<int> sig;
      sig.reserve(letters + 1);
      sig.push_back(cls[q]);
      for (int l = 0; l < letters; ++l) sig.push_back(cls[dfa.step(q, static_cast<LabelSet>(l))]);
      auto [it, inserted] = signature_ids.emplace(std::move(sig), static_cast<int>(signature_ids.size()));
      next[q] = it->second;
    }
    const int count = static_cast<int>(signature_ids.size());
    cls = std::move(next);
    if (count == num_classes) break;
    num_classes = count;
  }

  // Renumber classes breadth-first from the initial class.
  std::vector<int> rep_of_class(num_classes, -1);
  std::vector<int> new_id(num_classes, -1);
  std::vector<int> reps;
  std::deque<int> queue{cls[dfa.initial()]};
  rep_of_class[cls[dfa.initial()]] = dfa.initial();
  new_id[cls[dfa.initial()]] = 0;
  reps.push_back(dfa.initial());
  while (!queue.empty()) {
    const int c = queue.front();
    queue.pop_front();
    const int rep = rep_of_class[c];
    for (int l = 0; l < letters; ++l) {
      const int to = dfa.step(rep, static_cast<LabelSet>(l));
      const int tc = cls[to];
      if (new_id[tc] < 0) {
        new_id[tc] = static_cast<int>(reps.size());
        rep_of_class[tc] = to;
        reps.push_back(to);
        queue.push_back(tc);
      }
    }
  }
  std::vector<int> table;
  std::vector<bool> acc;
  std::vector<std::string> desc;
  for (int rep : reps) {
    for (int l = 0; l < letters; ++l) table.push_back(new_id[cls[dfa.step(rep, static_cast<LabelSet>(l))]]);
    acc.push_back(dfa.accepting(rep));
    desc.push_back(dfa.description(rep));
  }
  return Dfa::from_table(dfa.num_predicates(), std::move(table), std::move(acc), std::move(desc));
}

bool accepts(const Dfa& dfa, std::span<const LabelSet> word) {
  int q = dfa.initial();
  for (LabelSet l : word) q = dfa.step(q, l);
  return dfa.accepting(q);
}

std::string export_text(const Dfa& dfa, const std::vector<std::string>& predicate_names) {
  std::ostringstream os;
  os << "# trustsyn-dfa states=" << dfa.num_states() << " predicates=" << dfa.num_predicates() << "\n";
  if (!predicate_names.empty()) {
    os << "# bits:";
    for (const auto& n : predicate_names) os << ' ' << n;
    os << "\n";
  }
  for (int q = 0; q < dfa.num_states(); ++q) os << "# q" << q << " = " << dfa.description(q) << "\n";
  for (int q = 0; q < dfa.num_states(); ++q)
    for (int l = 0; l < dfa.num_letters(); ++l) {
      os << q << ' ';
      for (int b = 0; b < dfa.num_predicates(); ++b) os << (((l >> b) & 1) ? '1' : '0');
      if (dfa.num_predicates() == 0) os << '-';
      os << ' ' << dfa.step(q, static_cast<LabelSet>(l)) << "\n";
    }
  os << "acc:";
  for (int q = 0; q < dfa.num_states(); ++q)
    if (dfa.accepting(q)) os << ' ' << q;
  os << "\ndead:";
  for (int q : dead_states(dfa)) os << ' ' << q;
  os << "\n";
  return os.str();
}

Dfa import_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int width = -1;
  std::map<std::pair<int, int>, int> edges;
  std::vector<int> acc_list;
  int max_state = -1;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    if (line.rfind("acc:", 0) == 0) {
      ls.ignore(4);
      int q;
      while (ls >> q) acc_list.push_back(q);
      continue;
    }
    if (line.rfind("dead:", 0) == 0) continue;
    int q, to;
    std::string bits;
    if (!(ls >> q >> bits >> to)) throw AutomatonError("malformed transition line: " + line);
    const int w = bits == "-" ? 0 : static_cast<int>(bits.size());
    if (width < 0) width = w;
    if (w != width) throw AutomatonError("inconsistent label width: " + line);
    int l = 0;
    for (int b = 0; b < w; ++b) {
      if (bits[b] == '1') l |= 1 << b;
      else if (bits[b] != '0') throw AutomatonError("bad label bits: " + line);
    }
    edges[{q, l}] = to;
    max_state = std::max({max_state, q, to});
  }
  if (width < 0) throw AutomatonError("no transitions");
  const int n = max_state + 1;
  const int letters = 1 << width;
  std::vector<int> table(static_cast<std::size_t>(n) * letters, -1);
  for (const auto& [k, to] : edges) table[static_cast<std::size_t>(k.first) * letters + k.second] = to;
  if (std::find(table.begin(), table.end(), -1) != table.end())
    throw AutomatonError("transition table is not total");
  std::vector<bool> acc(n, false);
  for (int q : acc_list) {
    if (q < 0 || q >= n) throw AutomatonError("accepting state out of range");
    acc[q] = true;
  }
  return Dfa::from_table(width, std::move(table), std::move(acc));
}

std::vector<std::string> alphabet_names(const Specification& spec) {
  std::vector<std::string> names;
  for (int i : spec.alphabet.state_preds) names.push_back(spec.table.state(i).name);
  for (int i : spec.alphabet.belief_preds) names.push_back(spec.table.belief(i).name);
  return names;
}

}  // namespace trustsyn
