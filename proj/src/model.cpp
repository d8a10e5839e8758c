#include "trustsyn/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace trustsyn {

namespace {

constexpr double kRowTol = 1e-9;
constexpr const char* kHumanNames[kNumHumanActions] = {"tk", "st"};
constexpr const char* kOutcomeNames[kNumOutcomes] = {"succ", "fail"};

std::string coord(std::initializer_list<std::string_view> parts) {
  std::string out;
  bool first = true;
  for (auto p : parts) {
    if (first) {
      out += p;
      first = false;
    } else {
      out += '[';
      out += p;
      out += ']';
    }
  }
  return out;
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(12);
  os << v;
  return os.str();
}

class Validator {
 public:
  std::vector<std::string> violations;

  void fail(std::string msg) { violations.push_back(std::move(msg)); }

  const Json* object_at(const Json& parent, const std::string& key, const std::string& where) {
    auto it = parent.find(key);
    if (it == parent.end()) return nullptr;
    if (!it->is_object()) {
      fail(where + ": expected an object");
      return nullptr;
    }
    return &*it;
  }

  // Reads a probability row keyed by names. Unknown keys and out-of-range
  // values are violations; omitted keys stay 0.
  std::vector<double> read_row(const Json* row, const std::vector<std::string>& names,
                               const std::string& where, const std::string& what) {
    std::vector<double> out(names.size(), 0.0);
    if (row == nullptr) return out;
    for (auto it = row->begin(); it != row->end(); ++it) {
      auto pos = std::find(names.begin(), names.end(), it.key());
      if (pos == names.end()) {
        fail(where + ": unknown " + what + " '" + it.key() + "'");
        continue;
      }
      if (!it->is_number()) {
        fail(where + "[" + it.key() + "]: expected a number");
        continue;
      }
      double p = it->get<double>();
      if (!(p >= 0.0 && p <= 1.0)) {
        fail(where + "[" + it.key() + "]: probability " + fmt_double(p) + " outside [0,1]");
        continue;
      }
      out[static_cast<std::size_t>(pos - names.begin())] = p;
    }
    return out;
  }

  void check_sum(const std::vector<double>& row, const std::string& where) {
    double s = std::accumulate(row.begin(), row.end(), 0.0);
    if (std::abs(s - 1.0) > kRowTol) fail(where + ": row sums to " + fmt_double(s));
  }
};

const Json& require(const Json& raw, const char* key) {
  auto it = raw.find(key);
  if (it == raw.end()) throw ModelError({std::string("missing top-level key '") + key + "'"});
  return *it;
}

}  // namespace

std::string_view to_string(HumanAction a) { return kHumanNames[static_cast<int>(a)]; }
std::string_view to_string(Outcome e) { return kOutcomeNames[static_cast<int>(e)]; }

HumanAction parse_human_action(std::string_view s) {
  if (s == "tk") return HumanAction::kTakeover;
  if (s == "st") return HumanAction::kStandstill;
  throw std::invalid_argument("unknown human action '" + std::string(s) + "'");
}

Outcome parse_outcome(std::string_view s) {
  if (s == "succ") return Outcome::kSuccess;
  if (s == "fail") return Outcome::kFailure;
  throw std::invalid_argument("unknown outcome '" + std::string(s) + "'");
}

std::string_view to_string(UpdateMode m) { return m == UpdateMode::kBayes ? "bayes" : "marginal"; }

UpdateMode parse_update_mode(std::string_view s) {
  if (s == "bayes") return UpdateMode::kBayes;
  if (s == "marginal") return UpdateMode::kMarginal;
  throw std::invalid_argument("unknown update mode '" + std::string(s) + "'");
}

ModelError::ModelError(std::vector<std::string> violations)
    : std::runtime_error([&] {
        std::string msg = "invalid model:";
        for (const auto& v : violations) msg += "\n  " + v;
        return msg;
      }()),
      violations_(std::move(violations)) {}

int TrustPomdp::state_index(std::string_view name) const {
  auto it = state_lookup_.find(std::string(name));
  if (it == state_lookup_.end())
    throw std::out_of_range("unknown workspace state '" + std::string(name) + "'");
  return it->second;
}

bool TrustPomdp::has_state(std::string_view name) const {
  return state_lookup_.contains(std::string(name));
}

int TrustPomdp::incident_index(std::string_view name) const {
  auto it = incident_lookup_.find(std::string(name));
  if (it == incident_lookup_.end())
    throw std::out_of_range("unknown incident '" + std::string(name) + "'");
  return it->second;
}

int TrustPomdp::action_index(int x, std::string_view name) const {
  const auto& acts = actions_.at(x);
  for (std::size_t i = 0; i < acts.size(); ++i)
    if (acts[i].name == name) return static_cast<int>(i);
  throw std::out_of_range("action '" + std::string(name) + "' not available at " + state_name(x));
}

TrustPomdp validate_model(const Json& raw) {
  if (!raw.is_object()) throw ModelError({"model document must be an object"});
  TrustPomdp m;
  Validator v;

  const Json& states = require(raw, "workspace_states");
  if (!states.is_array() || states.empty())
    throw ModelError({"workspace_states: expected a nonempty array"});
  for (const auto& s : states) {
    if (!s.is_string()) throw ModelError({"workspace_states: entries must be strings"});
    auto name = s.get<std::string>();
    if (m.state_lookup_.contains(name)) v.fail("workspace_states: duplicate state '" + name + "'");
    m.state_lookup_.emplace(name, static_cast<int>(m.state_names_.size()));
    m.state_names_.push_back(name);
  }

  const Json& levels = require(raw, "trust_levels");
  if (!levels.is_number_integer() || levels.get<int>() < 1)
    throw ModelError({"trust_levels: expected a positive integer"});
  m.num_trust_ = levels.get<int>();
  std::vector<std::string> theta_names;
  for (int t = 1; t <= m.num_trust_; ++t) theta_names.push_back(std::to_string(t));

  m.incident_names_.push_back("none");
  const Json& incidents = require(raw, "incidents");
  if (!incidents.is_array()) throw ModelError({"incidents: expected an array"});
  for (const auto& s : incidents) {
    if (!s.is_string()) throw ModelError({"incidents: entries must be strings"});
    auto name = s.get<std::string>();
    if (name == "none") continue;
    if (std::find(m.incident_names_.begin(), m.incident_names_.end(), name) !=
        m.incident_names_.end()) {
      v.fail("incidents: duplicate incident '" + name + "'");
      continue;
    }
    m.incident_names_.push_back(name);
  }
  for (int i = 0; i < static_cast<int>(m.incident_names_.size()); ++i)
    m.incident_lookup_.emplace(m.incident_names_[i], i);

  const std::vector<std::string> human_names{kHumanNames[0], kHumanNames[1]};
  const std::vector<std::string> outcome_names{kOutcomeNames[0], kOutcomeNames[1]};

  // Actions and world transitions.
  const Json& actions = require(raw, "actions");
  if (!actions.is_object()) throw ModelError({"actions: expected an object"});
  for (auto it = actions.begin(); it != actions.end(); ++it)
    if (!m.state_lookup_.contains(it.key())) v.fail("actions: unknown state '" + it.key() + "'");
  const Json& world = require(raw, "world_transition");
  if (!world.is_object()) throw ModelError({"world_transition: expected an object"});
  for (auto it = world.begin(); it != world.end(); ++it)
    if (!m.state_lookup_.contains(it.key()))
      v.fail("world_transition: unknown state '" + it.key() + "'");

  m.actions_.resize(m.state_names_.size());
  m.action_offset_.resize(m.state_names_.size());
  int flat = 0;
  for (std::size_t x = 0; x < m.state_names_.size(); ++x) {
    const auto& xname = m.state_names_[x];
    m.action_offset_[x] = flat;
    auto ait = actions.find(xname);
    if (ait == actions.end() || !ait->is_array() || ait->empty()) {
      v.fail(coord({"actions", xname}) + ": empty action list");
      continue;
    }
    const Json* wrow = v.object_at(world, xname, coord({"world_transition", xname}));
    for (const auto& a : *ait) {
      if (!a.is_string()) {
        v.fail(coord({"actions", xname}) + ": action names must be strings");
        continue;
      }
      Action act;
      act.name = a.get<std::string>();
      for (const auto& prev : m.actions_[x])
        if (prev.name == act.name)
          v.fail(coord({"actions", xname}) + ": duplicate action '" + act.name + "'");
      auto where = coord({"world_transition", xname, act.name});
      const Json* succ = wrow ? v.object_at(*wrow, act.name, where) : nullptr;
      std::vector<double> row = v.read_row(succ, m.state_names_, where, "state");
      v.check_sum(row, where);
      for (std::size_t y = 0; y < row.size(); ++y)
        if (row[y] > 0.0) act.successors.emplace_back(static_cast<int>(y), row[y]);
      m.actions_[x].push_back(std::move(act));
      ++flat;
    }
  }

  // p(id | x, a)
  const Json& inc_model = require(raw, "incident_model");
  if (!inc_model.is_object()) throw ModelError({"incident_model: expected an object"});
  m.incident_.resize(static_cast<std::size_t>(flat));
  for (std::size_t x = 0; x < m.state_names_.size(); ++x) {
    const auto& xname = m.state_names_[x];
    const Json* xrow = v.object_at(inc_model, xname, coord({"incident_model", xname}));
    for (std::size_t a = 0; a < m.actions_[x].size(); ++a) {
      const auto& aname = m.actions_[x][a].name;
      auto where = coord({"incident_model", xname, aname});
      const Json* row = xrow ? v.object_at(*xrow, aname, where) : nullptr;
      auto probs = v.read_row(row, m.incident_names_, where, "incident");
      v.check_sum(probs, where);
      m.incident_[m.action_offset_[x] + a] = std::move(probs);
    }
  }

  // p(a^h | theta, id)
  const Json& hdm = require(raw, "human_decision_model");
  if (!hdm.is_object()) throw ModelError({"human_decision_model: expected an object"});
  m.human_.assign(static_cast<std::size_t>(m.num_trust_) * m.num_incidents() * kNumHumanActions,
                  0.0);
  for (int t = 0; t < m.num_trust_; ++t) {
    const auto& tname = theta_names[t];
    const Json* trow = v.object_at(hdm, tname, coord({"human_decision_model", tname}));
    for (int id = 0; id < m.num_incidents(); ++id) {
      const auto& iname = m.incident_names_[id];
      auto where = coord({"human_decision_model", tname, iname});
      const Json* row = trow ? v.object_at(*trow, iname, where) : nullptr;
      auto probs = v.read_row(row, human_names, where, "human action");
      v.check_sum(probs, where);
      if (id == kNoIncident && probs[0] != 0.0)
        v.fail(where + "[tk]: takeover without an incident must have probability 0");
      for (int h = 0; h < kNumHumanActions; ++h)
        m.human_[(t * m.num_incidents() + id) * kNumHumanActions + h] = probs[h];
    }
  }

  // p(e^r | id, a^h)
  const Json& perf = require(raw, "performance_model");
  if (!perf.is_object()) throw ModelError({"performance_model: expected an object"});
  m.performance_.assign(static_cast<std::size_t>(m.num_incidents()) * kNumHumanActions *
                            kNumOutcomes,
                        0.0);
  for (int id = 0; id < m.num_incidents(); ++id) {
    const auto& iname = m.incident_names_[id];
    const Json* irow = v.object_at(perf, iname, coord({"performance_model", iname}));
    for (int h = 0; h < kNumHumanActions; ++h) {
      auto where = coord({"performance_model", iname, human_names[h]});
      const Json* row = irow ? v.object_at(*irow, human_names[h], where) : nullptr;
      auto probs = v.read_row(row, outcome_names, where, "outcome");
      v.check_sum(probs, where);
      for (int e = 0; e < kNumOutcomes; ++e)
        m.performance_[(id * kNumHumanActions + h) * kNumOutcomes + e] = probs[e];
    }
  }

  // p(theta' | theta, o)
  const Json& dyn = require(raw, "trust_dynamics");
  if (!dyn.is_object()) throw ModelError({"trust_dynamics: expected an object"});
  const auto n_theta = static_cast<std::size_t>(m.num_trust_);
  m.trust_.assign(n_theta * m.num_observations() * n_theta, 0.0);
  for (int t = 0; t < m.num_trust_; ++t) {
    const auto& tname = theta_names[t];
    const Json* trow = v.object_at(dyn, tname, coord({"trust_dynamics", tname}));
    for (int id = 0; id < m.num_incidents(); ++id) {
      const auto& iname = m.incident_names_[id];
      const Json* irow =
          trow ? v.object_at(*trow, iname, coord({"trust_dynamics", tname, iname})) : nullptr;
      for (int h = 0; h < kNumHumanActions; ++h) {
        const Json* hrow =
            irow ? v.object_at(*irow, human_names[h],
                               coord({"trust_dynamics", tname, iname, human_names[h]}))
                 : nullptr;
        for (int e = 0; e < kNumOutcomes; ++e) {
          auto where = coord({"trust_dynamics", tname, iname, human_names[h], outcome_names[e]});
          const Json* row = hrow ? v.object_at(*hrow, outcome_names[e], where) : nullptr;
          auto probs = v.read_row(row, theta_names, where, "trust level");
          v.check_sum(probs, where);
          Observation o{id, static_cast<HumanAction>(h), static_cast<Outcome>(e)};
          std::copy(probs.begin(), probs.end(),
                    m.trust_.begin() +
                        static_cast<std::ptrdiff_t>((t * m.num_observations() + o.index()) * n_theta));
        }
      }
    }
  }

  const Json& init_x = require(raw, "initial_state");
  if (!init_x.is_string() || !m.state_lookup_.contains(init_x.get<std::string>())) {
    v.fail("initial_state: unknown state");
  } else {
    m.initial_state_ = m.state_lookup_.at(init_x.get<std::string>());
  }

  const Json& init_b = require(raw, "initial_belief");
  if (!init_b.is_array() || init_b.size() != n_theta) {
    v.fail("initial_belief: expected an array of length " + std::to_string(n_theta));
  } else {
    for (const auto& p : init_b) {
      if (!p.is_number()) {
        v.fail("initial_belief: entries must be numbers");
        break;
      }
      m.initial_belief_.push_back(p.get<double>());
    }
    if (m.initial_belief_.size() == n_theta && !is_distribution(m.initial_belief_))
      v.fail("initial_belief: not a probability distribution");
  }

  if (!v.violations.empty()) throw ModelError(std::move(v.violations));
  m.document_ = raw;
  return m;
}

TrustPomdp load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model file '" + path + "'");
  Json raw;
  try {
    raw = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ModelError({std::string("model file is not valid JSON: ") + e.what()});
  }
  return validate_model(raw);
}

BeliefState initial_belief_state(const TrustPomdp& model) {
  return BeliefState{model.initial_state(), model.initial_belief()};
}

bool is_distribution(std::span<const double> p, double tol) {
  double s = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) return false;
    s += v;
  }
  return std::abs(s - 1.0) <= tol;
}

double observation_prob(const TrustPomdp& model, int x, int theta, int action,
                        const Observation& o) {
  double p_id = model.incident_prob(x, action, o.incident);
  if (p_id == 0.0) return 0.0;
  return p_id * model.human_prob(theta, o.incident, o.human) *
         model.performance_prob(o.incident, o.human, o.outcome);
}

double observation_likelihood(const TrustPomdp& model, const BeliefState& b, int action,
                              const Observation& o) {
  double eta = 0.0;
  for (int t = 0; t < model.num_trust_levels(); ++t)
    if (b.trust[t] > 0.0) eta += b.trust[t] * observation_prob(model, b.x, t, action, o);
  return eta;
}

std::vector<Observation> observation_support(const TrustPomdp& model, const BeliefState& b,
                                             int action) {
  std::vector<Observation> out;
  for (int i = 0; i < model.num_observations(); ++i) {
    auto o = Observation::from_index(i);
    if (observation_likelihood(model, b, action, o) > 0.0) out.push_back(o);
  }
  return out;
}

TrustUpdate belief_update_bayes(const TrustPomdp& model, const BeliefState& b, int action,
                                const Observation& o) {
  const int n = model.num_trust_levels();
  std::vector<double> weighted(n, 0.0);
  double eta = 0.0;
  for (int t = 0; t < n; ++t) {
    if (b.trust[t] <= 0.0) continue;
    weighted[t] = b.trust[t] * observation_prob(model, b.x, t, action, o);
    eta += weighted[t];
  }
  if (!(eta > 0.0))
    throw ZeroLikelihood("observation (" + model.incident_name(o.incident) + ", " +
                         std::string(to_string(o.human)) + ", " + std::string(to_string(o.outcome)) +
                         ") has zero likelihood at " + model.state_name(b.x));
  TrustUpdate out{std::vector<double>(n, 0.0), eta};
  for (int t = 0; t < n; ++t) {
    if (weighted[t] == 0.0) continue;
    const double w = weighted[t] / eta;
    auto row = model.trust_row(t, o);
    for (int t2 = 0; t2 < n; ++t2) out.trust[t2] += w * row[t2];
  }
  return out;
}

std::vector<double> belief_update_marginal(const TrustPomdp& model, const BeliefState& b,
                                           int action) {
  const int n = model.num_trust_levels();
  std::vector<double> out(n, 0.0);
  for (int t = 0; t < n; ++t) {
    if (b.trust[t] == 0.0) continue;
    for (int i = 0; i < model.num_observations(); ++i) {
      auto o = Observation::from_index(i);
      double z = observation_prob(model, b.x, t, action, o);
      if (z == 0.0) continue;
      const double w = b.trust[t] * z;
      auto row = model.trust_row(t, o);
      for (int t2 = 0; t2 < n; ++t2) out[t2] += w * row[t2];
    }
  }
  return out;
}

std::vector<Transition> enumerate_transitions(const TrustPomdp& model, const BeliefState& b,
                                              int action, UpdateMode mode) {
  std::vector<Transition> out;
  std::vector<double> marginal;
  if (mode == UpdateMode::kMarginal) marginal = belief_update_marginal(model, b, action);
  for (int i = 0; i < model.num_observations(); ++i) {
    auto o = Observation::from_index(i);
    double eta = observation_likelihood(model, b, action, o);
    if (eta <= 0.0) continue;
    std::vector<double> next = mode == UpdateMode::kBayes
                                   ? belief_update_bayes(model, b, action, o).trust
                                   : marginal;
    for (const auto& [x2, p] : model.world_transition(b.x, action, o))
      out.push_back(Transition{o, x2, next, eta * p});
  }
  return out;
}

}  // namespace trustsyn
