#include "trustsyn/ldtl.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

namespace trustsyn {

namespace {

std::string upper(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

Formula make(Op op, int pred = -1, std::vector<Formula> kids = {}) {
  auto n = std::make_shared<FormulaNode>();
  n->op = op;
  n->pred = pred;
  n->kids = std::move(kids);
  return n;
}

}  // namespace

// ---------------------------------------------------------------------------
// Predicates

bool eval_belief_predicate(const BeliefPredicate& mu, int x, std::span<const double> belief) {
  if (!mu.guard.empty() && !mu.guard[x]) return false;
  double g = mu.offset;
  for (std::size_t i = 0; i < mu.weights.size(); ++i) g -= mu.weights[i] * belief[i];
  return g < 0.0;
}

int PredicateTable::add_state(StatePredicate p) {
  if (find(p.name)) throw SpecError("duplicate predicate '" + p.name + "'");
  state_.push_back(std::move(p));
  return static_cast<int>(state_.size()) - 1;
}

int PredicateTable::add_belief(BeliefPredicate p) {
  if (find(p.name)) throw SpecError("duplicate predicate '" + p.name + "'");
  belief_.push_back(std::move(p));
  return static_cast<int>(belief_.size()) - 1;
}

std::optional<PredicateRef> PredicateTable::find(std::string_view name) const {
  const auto key = upper(name);
  for (std::size_t i = 0; i < state_.size(); ++i)
    if (upper(state_[i].name) == key) return PredicateRef{PredicateKind::kState, static_cast<int>(i)};
  for (std::size_t i = 0; i < belief_.size(); ++i)
    if (upper(belief_[i].name) == key)
      return PredicateRef{PredicateKind::kBelief, static_cast<int>(i)};
  return std::nullopt;
}

bool PredicateTable::state_depends_on_trust(int i) const {
  const auto& m = state_.at(i).members;
  if (m.empty()) return false;
  for (int x = 0; x < num_states_; ++x)
    for (int t = 1; t < num_trust_; ++t)
      if (m[static_cast<std::size_t>(x) * num_trust_ + t] != m[static_cast<std::size_t>(x) * num_trust_])
        return true;
  return false;
}

// ---------------------------------------------------------------------------
// Formula construction

namespace f {
Formula top() {
  static const Formula t = make(Op::kTrue);
  return t;
}
Formula bottom() {
  static const Formula b = make(Op::kFalse);
  return b;
}
Formula state(int i) { return make(Op::kStatePred, i); }
Formula belief(int i) { return make(Op::kBeliefPred, i); }
Formula not_state(int i) { return make(Op::kNotState, i); }
Formula not_belief(int i) { return make(Op::kNotBelief, i); }
Formula conj(Formula a, Formula b) { return make(Op::kAnd, -1, {std::move(a), std::move(b)}); }
Formula disj(Formula a, Formula b) { return make(Op::kOr, -1, {std::move(a), std::move(b)}); }
Formula until(Formula a, Formula b) { return make(Op::kUntil, -1, {std::move(a), std::move(b)}); }
Formula next(Formula a) { return make(Op::kNext, -1, {std::move(a)}); }
Formula eventually(Formula a) { return make(Op::kEventually, -1, {std::move(a)}); }
Formula conj(std::vector<Formula> kids) { return make(Op::kAnd, -1, std::move(kids)); }
Formula disj(std::vector<Formula> kids) { return make(Op::kOr, -1, std::move(kids)); }
}  // namespace f

bool is_literal(Op op) {
  return op == Op::kStatePred || op == Op::kBeliefPred || op == Op::kNotState ||
         op == Op::kNotBelief;
}

int compare(const Formula& a, const Formula& b) {
  if (a.get() == b.get()) return 0;
  if (a->op != b->op) return a->op < b->op ? -1 : 1;
  if (a->pred != b->pred) return a->pred < b->pred ? -1 : 1;
  if (a->kids.size() != b->kids.size()) return a->kids.size() < b->kids.size() ? -1 : 1;
  for (std::size_t i = 0; i < a->kids.size(); ++i)
    if (int c = compare(a->kids[i], b->kids[i]); c != 0) return c;
  return 0;
}

bool structurally_equal(const Formula& a, const Formula& b) { return compare(a, b) == 0; }

int depth(const Formula& phi) {
  int d = 0;
  for (const auto& k : phi->kids) d = std::max(d, depth(k));
  return phi->kids.empty() ? 0 : d + 1;
}

// ---------------------------------------------------------------------------
// Parser

ParseError::ParseError(std::string message, std::size_t position)
    : std::runtime_error(message + " at position " + std::to_string(position)),
      position_(position) {}

namespace {

enum class Tok { kLParen, kRParen, kNot, kAnd, kOr, kUntil, kNext, kEventually, kTrue, kName, kEnd };

struct Token {
  Tok kind;
  std::string text;
  std::size_t pos;
};

class Parser {
 public:
  Parser(std::string_view text, const PredicateTable& table) : text_(text), table_(table) {
    advance();
  }

  Formula parse() {
    auto phi = disj();
    if (tok_.kind != Tok::kEnd) throw ParseError("unexpected '" + tok_.text + "'", tok_.pos);
    return phi;
  }

 private:
  void advance() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    const std::size_t start = pos_;
    if (pos_ >= text_.size()) {
      tok_ = {Tok::kEnd, "end of input", start};
      return;
    }
    const char c = text_[pos_];
    auto single = [&](Tok k) {
      ++pos_;
      tok_ = {k, std::string(1, c), start};
    };
    switch (c) {
      case '(': return single(Tok::kLParen);
      case ')': return single(Tok::kRParen);
      case '!': return single(Tok::kNot);
      case '&': return single(Tok::kAnd);
      case '|': return single(Tok::kOr);
      default: break;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      while (pos_ < text_.size() &&
             (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
        ++pos_;
      std::string word(text_.substr(start, pos_ - start));
      Tok k = Tok::kName;
      if (word == "U") k = Tok::kUntil;
      else if (word == "X") k = Tok::kNext;
      else if (word == "F") k = Tok::kEventually;
      else if (word == "true") k = Tok::kTrue;
      tok_ = {k, std::move(word), start};
      return;
    }
    throw ParseError(std::string("unexpected character '") + c + "'", start);
  }

  Formula disj() {
    auto lhs = conj();
    while (tok_.kind == Tok::kOr) {
      advance();
      lhs = f::disj(lhs, conj());
    }
    return lhs;
  }

  Formula conj() {
    auto lhs = until();
    while (tok_.kind == Tok::kAnd) {
      advance();
      lhs = f::conj(lhs, until());
    }
    return lhs;
  }

  Formula until() {
    auto lhs = unary();
    if (tok_.kind == Tok::kUntil) {
      advance();
      return f::until(lhs, until());
    }
    return lhs;
  }

  Formula unary() {
    switch (tok_.kind) {
      case Tok::kNot: {
        const auto at = tok_.pos;
        advance();
        auto inner = atom();
        if (inner->op == Op::kStatePred) return f::not_state(inner->pred);
        if (inner->op == Op::kBeliefPred) return f::not_belief(inner->pred);
        throw ParseError("negation applies only to predicates", at);
      }
      case Tok::kNext:
        advance();
        return f::next(unary());
      case Tok::kEventually:
        advance();
        return f::eventually(unary());
      default:
        return atom();
    }
  }

  Formula atom() {
    switch (tok_.kind) {
      case Tok::kTrue:
        advance();
        return f::top();
      case Tok::kName: {
        auto ref = table_.find(tok_.text);
        if (!ref) throw ParseError("undeclared predicate '" + tok_.text + "'", tok_.pos);
        advance();
        return ref->kind == PredicateKind::kState ? f::state(ref->index) : f::belief(ref->index);
      }
      case Tok::kLParen: {
        advance();
        auto inner = disj();
        if (tok_.kind != Tok::kRParen) throw ParseError("expected ')'", tok_.pos);
        advance();
        return inner;
      }
      default:
        throw ParseError("unexpected '" + tok_.text + "'", tok_.pos);
    }
  }

  std::string_view text_;
  const PredicateTable& table_;
  std::size_t pos_ = 0;
  Token tok_{Tok::kEnd, "", 0};
};

void print_into(const Formula& phi, const PredicateTable& table, std::string& out) {
  auto join = [&](std::string_view sep) {
    out += '(';
    for (std::size_t i = 0; i < phi->kids.size(); ++i) {
      if (i) out += sep;
      print_into(phi->kids[i], table, out);
    }
    out += ')';
  };
  switch (phi->op) {
    case Op::kFalse: out += "false"; break;
    case Op::kTrue: out += "true"; break;
    case Op::kStatePred: out += table.state(phi->pred).name; break;
    case Op::kBeliefPred: out += table.belief(phi->pred).name; break;
    case Op::kNotState: out += "!" + table.state(phi->pred).name; break;
    case Op::kNotBelief: out += "!" + table.belief(phi->pred).name; break;
    case Op::kAnd: join(" & "); break;
    case Op::kOr: join(" | "); break;
    case Op::kUntil: join(" U "); break;
    case Op::kNext:
      out += "X ";
      print_into(phi->kids[0], table, out);
      break;
    case Op::kEventually:
      out += "F ";
      print_into(phi->kids[0], table, out);
      break;
  }
}

}  // namespace

Formula parse_formula(std::string_view text, const PredicateTable& table) {
  return Parser(text, table).parse();
}

std::string print(const Formula& phi, const PredicateTable& table) {
  std::string out;
  print_into(phi, table, out);
  return out;
}

// ---------------------------------------------------------------------------
// Alphabet

int Alphabet::bit_of(PredicateRef ref) const {
  const auto& list = ref.kind == PredicateKind::kState ? state_preds : belief_preds;
  auto it = std::find(list.begin(), list.end(), ref.index);
  if (it == list.end()) return -1;
  int bit = static_cast<int>(it - list.begin());
  return ref.kind == PredicateKind::kState ? bit : bit + static_cast<int>(state_preds.size());
}

LabelSet Alphabet::belief_mask() const {
  LabelSet m = 0;
  for (std::size_t i = 0; i < belief_preds.size(); ++i) m |= LabelSet{1} << (state_preds.size() + i);
  return m;
}

namespace {
void collect(const Formula& phi, Alphabet& a) {
  auto add = [](std::vector<int>& v, int i) {
    if (std::find(v.begin(), v.end(), i) == v.end()) v.push_back(i);
  };
  switch (phi->op) {
    case Op::kStatePred:
    case Op::kNotState: add(a.state_preds, phi->pred); break;
    case Op::kBeliefPred:
    case Op::kNotBelief: add(a.belief_preds, phi->pred); break;
    default:
      for (const auto& k : phi->kids) collect(k, a);
  }
}
}  // namespace

Alphabet predicates(const Formula& phi) {
  Alphabet a;
  collect(phi, a);
  if (a.size() > kMaxPredicates)
    throw SpecError("formula uses " + std::to_string(a.size()) + " predicates; at most " +
                    std::to_string(kMaxPredicates) + " are supported");
  return a;
}

LabelSet state_labels(const PredicateTable& table, const Alphabet& alphabet, int x, int theta) {
  LabelSet l = 0;
  for (std::size_t i = 0; i < alphabet.state_preds.size(); ++i)
    if (table.state(alphabet.state_preds[i]).holds(x, theta, table.num_trust()))
      l |= LabelSet{1} << i;
  return l;
}

LabelSet belief_labels(const PredicateTable& table, const Alphabet& alphabet, int x,
                       std::span<const double> belief) {
  LabelSet l = 0;
  const auto off = alphabet.state_preds.size();
  for (std::size_t i = 0; i < alphabet.belief_preds.size(); ++i)
    if (eval_belief_predicate(table.belief(alphabet.belief_preds[i]), x, belief))
      l |= LabelSet{1} << (off + i);
  return l;
}

// ---------------------------------------------------------------------------
// Specification documents

bool Specification::labels_depend_on_trust() const {
  for (int i : alphabet.state_preds)
    if (table.state_depends_on_trust(i)) return true;
  return false;
}

namespace {

const Json& spec_field(const Json& doc, const char* key) {
  if (!doc.is_object()) throw SpecError("specification document must be an object");
  auto it = doc.find(key);
  if (it == doc.end()) throw SpecError(std::string("specification is missing '") + key + "'");
  return *it;
}

std::string predicate_kind(const std::string& name, const Json& body) {
  if (!body.is_object() || !body.contains("kind") || !body["kind"].is_string())
    throw SpecError("predicate '" + name + "': missing 'kind'");
  auto kind = body["kind"].get<std::string>();
  if (kind != "state" && kind != "belief")
    throw SpecError("predicate '" + name + "': kind must be 'state' or 'belief'");
  return kind;
}

Specification finish(Json doc, PredicateTable table) {
  Specification spec;
  const Json& formula = spec_field(doc, "formula");
  if (!formula.is_string()) throw SpecError("'formula' must be a string");
  spec.text = formula.get<std::string>();
  spec.formula = parse_formula(spec.text, table);
  spec.alphabet = predicates(spec.formula);
  spec.table = std::move(table);
  spec.document = std::move(doc);
  return spec;
}

}  // namespace

Specification load_spec(const Json& doc, const TrustPomdp& model) {
  const Json& preds = spec_field(doc, "predicates");
  if (!preds.is_object()) throw SpecError("'predicates' must be an object keyed by name");
  const int nx = model.num_states();
  const int nt = model.num_trust_levels();
  PredicateTable table(nx, nt);
  for (auto it = preds.begin(); it != preds.end(); ++it) {
    const auto& name = it.key();
    const Json& body = *it;
    if (predicate_kind(name, body) == "state") {
      StatePredicate p{name, std::vector<bool>(static_cast<std::size_t>(nx) * nt, false)};
      if (!body.contains("members") || !body["members"].is_array())
        throw SpecError("state predicate '" + name + "': 'members' must be an array");
      for (const auto& m : body["members"]) {
        std::string sname;
        std::vector<int> levels;
        if (m.is_string()) {
          sname = m.get<std::string>();
          for (int t = 0; t < nt; ++t) levels.push_back(t);
        } else if (m.is_object() && m.contains("state") && m.contains("trust")) {
          sname = m["state"].get<std::string>();
          for (const auto& t : m["trust"]) {
            int level = t.get<int>();
            if (level < 1 || level > nt)
              throw SpecError("state predicate '" + name + "': trust level " +
                              std::to_string(level) + " out of range");
            levels.push_back(level - 1);
          }
        } else {
          throw SpecError("state predicate '" + name + "': malformed member");
        }
        if (!model.has_state(sname))
          throw SpecError("state predicate '" + name + "': unknown state '" + sname + "'");
        const int x = model.state_index(sname);
        for (int t : levels) p.members[static_cast<std::size_t>(x) * nt + t] = true;
      }
      table.add_state(std::move(p));
    } else {
      BeliefPredicate p;
      p.name = name;
      if (!body.contains("A") || !body["A"].is_array())
        throw SpecError("belief predicate '" + name + "': 'A' must be an array");
      p.weights = body["A"].get<std::vector<double>>();
      if (static_cast<int>(p.weights.size()) != nt)
        throw SpecError("belief predicate '" + name + "': 'A' has length " +
                        std::to_string(p.weights.size()) + ", expected " + std::to_string(nt));
      if (!body.contains("c") || !body["c"].is_number())
        throw SpecError("belief predicate '" + name + "': 'c' must be a number");
      p.offset = body["c"].get<double>();
      if (body.contains("guard")) {
        p.guard.assign(static_cast<std::size_t>(nx), false);
        for (const auto& g : body["guard"]) {
          auto sname = g.get<std::string>();
          if (!model.has_state(sname))
            throw SpecError("belief predicate '" + name + "': unknown guard state '" + sname + "'");
          p.guard[model.state_index(sname)] = true;
        }
      }
      table.add_belief(std::move(p));
    }
  }
  return finish(doc, std::move(table));
}

Specification load_spec_file(const std::string& path, const TrustPomdp& model) {
  std::ifstream in(path);
  if (!in) throw SpecError("cannot open specification file '" + path + "'");
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw SpecError(std::string("specification file is not valid JSON: ") + e.what());
  }
  return load_spec(doc, model);
}

Specification load_spec_syntax(const Json& doc) {
  const Json& preds = spec_field(doc, "predicates");
  if (!preds.is_object()) throw SpecError("'predicates' must be an object keyed by name");
  PredicateTable table;
  for (auto it = preds.begin(); it != preds.end(); ++it) {
    if (predicate_kind(it.key(), *it) == "state")
      table.add_state(StatePredicate{it.key(), {}});
    else
      table.add_belief(BeliefPredicate{it.key(), {}, 0.0, {}});
  }
  return finish(doc, std::move(table));
}

// ---------------------------------------------------------------------------
// Semantics

namespace {

// Bottom-up evaluation of every position at once.
template <class AtomFn>
std::vector<char> sat(const Formula& phi, std::size_t n, const AtomFn& atom) {
  std::vector<char> r(n, 0);
  switch (phi->op) {
    case Op::kFalse: break;
    case Op::kTrue: std::fill(r.begin(), r.end(), 1); break;
    case Op::kStatePred:
    case Op::kBeliefPred:
    case Op::kNotState:
    case Op::kNotBelief: {
      const bool negated = phi->op == Op::kNotState || phi->op == Op::kNotBelief;
      const auto kind = (phi->op == Op::kStatePred || phi->op == Op::kNotState)
                            ? PredicateKind::kState
                            : PredicateKind::kBelief;
      for (std::size_t t = 0; t < n; ++t) r[t] = atom(PredicateRef{kind, phi->pred}, t) != negated;
      break;
    }
    case Op::kAnd: {
      std::fill(r.begin(), r.end(), 1);
      for (const auto& k : phi->kids) {
        auto s = sat(k, n, atom);
        for (std::size_t t = 0; t < n; ++t) r[t] = r[t] && s[t];
      }
      break;
    }
    case Op::kOr: {
      for (const auto& k : phi->kids) {
        auto s = sat(k, n, atom);
        for (std::size_t t = 0; t < n; ++t) r[t] = r[t] || s[t];
      }
      break;
    }
    case Op::kUntil: {
      auto a = sat(phi->kids[0], n, atom);
      auto b = sat(phi->kids[1], n, atom);
      for (std::size_t i = n; i-- > 0;) r[i] = b[i] || (a[i] && i + 1 < n && r[i + 1]);
      break;
    }
    case Op::kNext: {
      auto a = sat(phi->kids[0], n, atom);
      for (std::size_t t = 0; t + 1 < n; ++t) r[t] = a[t + 1];
      break;
    }
    case Op::kEventually: {
      auto a = sat(phi->kids[0], n, atom);
      for (std::size_t i = n; i-- > 0;) r[i] = a[i] || (i + 1 < n && r[i + 1]);
      break;
    }
  }
  return r;
}

}  // namespace

bool evaluate_trace(const Formula& phi, const PredicateTable& table, const AnnotatedTrace& trace) {
  if (trace.empty()) throw std::invalid_argument("evaluate_trace: empty trace");
  auto atom = [&](PredicateRef ref, std::size_t t) {
    const auto& s = trace[t];
    if (ref.kind == PredicateKind::kState)
      return table.state(ref.index).holds(s.x, s.theta, table.num_trust());
    return eval_belief_predicate(table.belief(ref.index), s.x, s.belief);
  };
  return sat(phi, trace.size(), atom)[0] != 0;
}

bool evaluate_labels(const Formula& phi, const Alphabet& alphabet, std::span<const LabelSet> word) {
  if (word.empty()) throw std::invalid_argument("evaluate_labels: empty word");
  auto atom = [&](PredicateRef ref, std::size_t t) {
    const int bit = alphabet.bit_of(ref);
    return bit >= 0 && ((word[t] >> bit) & 1u) != 0;
  };
  return sat(phi, word.size(), atom)[0] != 0;
}

}  // namespace trustsyn
