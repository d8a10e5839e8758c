#include "trustsyn/runtime.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <omp.h>

namespace trustsyn {

namespace {
constexpr double kCertain = 1.0 - 1e-12;
}

std::string_view to_string(TraceStatus s) {
  switch (s) {
    case TraceStatus::kRunning: return "running";
    case TraceStatus::kAccepted: return "accepted";
    case TraceStatus::kRejected: return "rejected";
    case TraceStatus::kBudgetExhausted: return "budget_exhausted";
  }
  return "unknown";
}

namespace {

TraceStatus parse_trace_status(std::string_view s) {
  if (s == "running") return TraceStatus::kRunning;
  if (s == "accepted") return TraceStatus::kAccepted;
  if (s == "rejected") return TraceStatus::kRejected;
  if (s == "budget_exhausted") return TraceStatus::kBudgetExhausted;
  throw TraceError("unknown trace status '" + std::string(s) + "'");
}

Json observation_to_json(const Observation& o, const TrustPomdp& model) {
  return Json{{"incident", model.incident_name(o.incident)},
              {"human", std::string(to_string(o.human))},
              {"outcome", std::string(to_string(o.outcome))}};
}

Observation observation_from_json(const Json& j, const TrustPomdp& model) {
  Observation o;
  o.incident = model.incident_index(j.at("incident").get<std::string>());
  o.human = parse_human_action(j.at("human").get<std::string>());
  o.outcome = parse_outcome(j.at("outcome").get<std::string>());
  return o;
}

std::optional<int> trust_from_json(const Json& j, const TrustPomdp& model) {
  if (!j.contains("trust") || j.at("trust").is_null()) return std::nullopt;
  const int t = j.at("trust").get<int>();
  if (t < 1 || t > model.num_trust_levels())
    throw TraceError("trust level " + std::to_string(t) + " out of range");
  return t - 1;
}

std::vector<double> belief_from_json(const Json& j, const TrustPomdp& model) {
  auto b = j.get<std::vector<double>>();
  if (static_cast<int>(b.size()) != model.num_trust_levels())
    throw TraceError("belief has the wrong length");
  if (!is_distribution(b, 1e-6)) throw TraceError("belief is not a distribution");
  return b;
}

}  // namespace

Json record_to_json(const TraceRecord& r, const TrustPomdp& model) {
  Json j{{"x", model.state_name(r.x)},
         {"action", model.actions(r.x)[r.action].name},
         {"observation", observation_to_json(r.observation, model)},
         {"next_x", model.state_name(r.next_x)},
         {"belief", r.belief}};
  j["trust"] = r.trust_report ? Json(*r.trust_report + 1) : Json(nullptr);
  return j;
}

Json trace_to_json(const Trace& t, const TrustPomdp& model) {
  Json initial{{"x", model.state_name(t.x0)}, {"belief", t.belief0}};
  initial["trust"] = t.trust0 ? Json(*t.trust0 + 1) : Json(nullptr);
  Json records = Json::array();
  for (const auto& r : t.records) records.push_back(record_to_json(r, model));
  return Json{{"format", "trustsyn-trace"},
              {"version", 1},
              {"seed", t.seed},
              {"update_mode", std::string(to_string(t.mode))},
              {"model_hash", t.model_hash},
              {"spec_hash", t.spec_hash},
              {"initial", std::move(initial)},
              {"records", std::move(records)},
              {"status", std::string(to_string(t.status))},
              {"accepted_step", t.accepted_step}};
}

Trace trace_from_json(const Json& j, const TrustPomdp& model) {
  try {
    if (j.value("format", "") != "trustsyn-trace") throw TraceError("not a trustsyn trace document");
    Trace t;
    t.seed = j.value("seed", std::uint64_t{0});
    t.mode = parse_update_mode(j.value("update_mode", "bayes"));
    t.model_hash = j.value("model_hash", "");
    t.spec_hash = j.value("spec_hash", "");
    const auto& init = j.at("initial");
    t.x0 = model.state_index(init.at("x").get<std::string>());
    t.belief0 = belief_from_json(init.at("belief"), model);
    t.trust0 = trust_from_json(init, model);
    int x = t.x0;
    for (const auto& rj : j.at("records")) {
      TraceRecord r;
      r.x = model.state_index(rj.at("x").get<std::string>());
      if (r.x != x) throw TraceError("record starts at '" + model.state_name(r.x) +
                                     "' but the previous step ended at '" + model.state_name(x) + "'");
      r.action = model.action_index(r.x, rj.at("action").get<std::string>());
      r.observation = observation_from_json(rj.at("observation"), model);
      r.next_x = model.state_index(rj.at("next_x").get<std::string>());
      r.belief = belief_from_json(rj.at("belief"), model);
      r.trust_report = trust_from_json(rj, model);
      x = r.next_x;
      t.records.push_back(std::move(r));
    }
    t.status = parse_trace_status(j.value("status", "running"));
    t.accepted_step = j.value("accepted_step", -1);
    return t;
  } catch (const Json::exception& e) {
    throw TraceError(std::string("malformed trace: ") + e.what());
  } catch (const std::out_of_range& e) {
    throw TraceError(std::string("trace references unknown names: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw TraceError(std::string("malformed trace: ") + e.what());
  }
}

namespace {

// Successor key units exactly as the product expansion computes them.
std::vector<std::int32_t> next_units(const TrustPomdp& model, UpdateMode mode, int x,
                                     std::span<const double> b, int action, const Observation& o) {
  const BeliefState bs{x, std::vector<double>(b.begin(), b.end())};
  std::vector<double> raw = mode == UpdateMode::kBayes
                                ? belief_update_bayes(model, bs, action, o).trust
                                : belief_update_marginal(model, bs, action);
  return round_belief(raw);
}

}  // namespace

double replay_deviation(const TrustPomdp& model, const Trace& trace) {
  std::vector<double> b = trace.belief0;
  double worst = 0.0;
  for (const auto& r : trace.records) {
    const auto expect = belief_of(next_units(model, trace.mode, r.x, b, r.action, r.observation));
    for (std::size_t i = 0; i < expect.size(); ++i)
      worst = std::max(worst, std::abs(expect[i] - r.belief[i]));
    b = r.belief;
  }
  return worst;
}

// ---------------------------------------------------------------------------

ForwardFilter::ForwardFilter(const TrustPomdp& model, const Specification& spec, const Dfa& dfa)
    : model_(&model), spec_(&spec), dfa_(&dfa), nq_(dfa.num_states()) {}

void ForwardFilter::start(int x0, std::span<const double> belief0) {
  const int nt = model_->num_trust_levels();
  alpha_.assign(static_cast<std::size_t>(nt) * nq_, 0.0);
  const LabelSet bl = belief_labels(spec_->table, spec_->alphabet, x0, belief0);
  double total = 0.0;
  for (int t = 0; t < nt; ++t) {
    if (belief0[t] <= 0.0) continue;
    const LabelSet l = state_labels(spec_->table, spec_->alphabet, x0, t) | bl;
    alpha_[static_cast<std::size_t>(t) * nq_ + dfa_->step(dfa_->initial(), l)] += belief0[t];
    total += belief0[t];
  }
  if (total <= 0.0) throw TraceError("initial belief has no mass");
  for (double& a : alpha_) a /= total;
}

void ForwardFilter::advance(int x, int action, const Observation& o, int next_x,
                            std::span<const double> next_belief) {
  const int nt = model_->num_trust_levels();
  double tx = 0.0;
  for (const auto& [x2, p] : model_->world_transition(x, action, o))
    if (x2 == next_x) tx = p;
  if (tx <= 0.0)
    throw TraceError("transition " + model_->state_name(x) + " -> " + model_->state_name(next_x) +
                     " has probability 0");

  const LabelSet bl = belief_labels(spec_->table, spec_->alphabet, next_x, next_belief);
  std::vector<int> label_q(static_cast<std::size_t>(nt) * nq_);
  for (int t2 = 0; t2 < nt; ++t2) {
    const LabelSet l = state_labels(spec_->table, spec_->alphabet, next_x, t2) | bl;
    for (int q = 0; q < nq_; ++q) label_q[static_cast<std::size_t>(t2) * nq_ + q] = dfa_->step(q, l);
  }

  std::vector<double> next(alpha_.size(), 0.0);
  double total = 0.0;
  for (int t = 0; t < nt; ++t) {
    const double z = observation_prob(*model_, x, t, action, o);
    if (z <= 0.0) continue;
    const auto row = model_->trust_row(t, o);
    for (int q = 0; q < nq_; ++q) {
      const double w = alpha_[static_cast<std::size_t>(t) * nq_ + q] * z;
      if (w <= 0.0) continue;
      for (int t2 = 0; t2 < nt; ++t2) {
        if (row[t2] <= 0.0) continue;
        const double v = w * row[t2];
        next[static_cast<std::size_t>(t2) * nq_ + label_q[static_cast<std::size_t>(t2) * nq_ + q]] += v;
        total += v;
      }
    }
  }
  if (total <= 0.0) throw TraceError("observation has probability 0 given the trace so far");
  for (double& a : next) a /= total;
  alpha_ = std::move(next);
}

double ForwardFilter::accepting_mass() const {
  double m = 0.0;
  for (std::size_t i = 0; i < alpha_.size(); ++i)
    if (dfa_->accepting(static_cast<int>(i % nq_))) m += alpha_[i];
  return std::min(1.0, m);
}

double ForwardFilter::dead_mass() const {
  double m = 0.0;
  for (std::size_t i = 0; i < alpha_.size(); ++i)
    if (dfa_->dead(static_cast<int>(i % nq_))) m += alpha_[i];
  return std::min(1.0, m);
}

std::map<int, double> ForwardFilter::q_distribution() const {
  std::map<int, double> out;
  for (std::size_t i = 0; i < alpha_.size(); ++i)
    if (alpha_[i] > 0.0) out[static_cast<int>(i % nq_)] += alpha_[i];
  for (auto& [q, p] : out) p = std::min(1.0, p);
  return out;
}

double check_trace(const TrustPomdp& model, const Specification& spec, const Dfa& dfa,
                   const Trace& trace) {
  ForwardFilter f(model, spec, dfa);
  f.start(trace.x0, trace.belief0);
  for (const auto& r : trace.records) f.advance(r.x, r.action, r.observation, r.next_x, r.belief);
  return f.accepting_mass();
}

bool check_trace_reported(const Specification& spec, const Trace& trace) {
  if (!trace.trust0) throw TraceError("initial record has no trust report");
  AnnotatedTrace steps;
  steps.push_back({trace.x0, *trace.trust0, trace.belief0});
  for (std::size_t i = 0; i < trace.records.size(); ++i) {
    const auto& r = trace.records[i];
    if (!r.trust_report) throw TraceError("record " + std::to_string(i) + " has no trust report");
    steps.push_back({r.next_x, *r.trust_report, r.belief});
  }
  return evaluate_trace(spec.formula, spec.table, steps);
}

// ---------------------------------------------------------------------------

FallbackMode parse_fallback(std::string_view s) {
  if (s == "error") return FallbackMode::kError;
  if (s == "first") return FallbackMode::kFirstAction;
  if (s == "solve") return FallbackMode::kLocalSolve;
  throw std::invalid_argument("unknown fallback mode '" + std::string(s) + "'");
}

Episode::Episode(const ProductContext& ctx, const SynthesisResult& policy, EpisodeOptions options,
                 std::uint64_t seed, bool hidden_trust)
    : ctx_(ctx),
      policy_(policy),
      options_(options),
      rng_(seed),
      x_(ctx.model().initial_state()),
      units_(round_belief(ctx.model().initial_belief())),
      belief_(belief_of(units_)),
      filter_(ctx.model(), ctx.spec(), ctx.dfa()) {
  if (hidden_trust) theta_ = rng_.categorical(belief_);
  filter_.start(x_, belief_);
  trace_.seed = seed;
  trace_.mode = ctx.mode();
  trace_.x0 = x_;
  trace_.belief0 = belief_;
  trace_.trust0 = theta_;
  check_terminal();
}

LabelSet Episode::current_belief_labels() const {
  return belief_labels(ctx_.spec().table, ctx_.spec().alphabet, x_, belief_);
}

void Episode::check_terminal() {
  if (trace_.status != TraceStatus::kRunning) return;
  if (filter_.accepting_mass() >= kCertain) {
    trace_.status = TraceStatus::kAccepted;
    trace_.accepted_step = step();
  } else if (filter_.dead_mass() >= kCertain) {
    trace_.status = TraceStatus::kRejected;
  } else if (step() >= options_.step_budget) {
    trace_.status = TraceStatus::kBudgetExhausted;
  }
}

int Episode::reschedule_action(const std::map<int, double>& qdist) const {
  int q = qdist.begin()->first;
  double pq = -1.0;
  for (const auto& [qq, p] : qdist)
    if (p > pq) {
      pq = p;
      q = qq;
    }
  const auto& model = ctx_.model();
  const Observation any{};
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int a = 0; a < model.num_actions(x_); ++a) {
    double d = 0.0;
    for (const auto& [x2, p] : model.world_transition(x_, a, any)) {
      int dmin = kUnreachable;
      for (const auto& lo : ctx_.label_distribution(x2, belief_))
        dmin = std::min(dmin, ctx_.abstract_distance(x2, ctx_.dfa().step(q, lo.label)));
      d += p * (dmin == kUnreachable ? 1e6 : static_cast<double>(dmin));
    }
    if (d < best_d) {
      best_d = d;
      best = a;
    }
  }
  return best;
}

int Episode::fallback_action(const std::map<int, double>& qdist) {
  switch (options_.fallback) {
    case FallbackMode::kError:
      throw UnknownNode("belief state at '" + ctx_.model().state_name(x_) +
                        "' lies outside the synthesized policy");
    case FallbackMode::kFirstAction:
      return 0;
    case FallbackMode::kLocalSolve: {
      SolverParams p = options_.local_solver;
      p.update_mode = ctx_.mode();
      p.max_depth = std::max(1, std::min(p.max_depth, options_.step_budget - step()));
      std::vector<double> score(ctx_.model().num_actions(x_), 0.0);
      for (const auto& [q, w] : qdist) {
        Solver solver(ctx_, p);
        const ProductNode root{NodeKey{x_, q, units_}, belief_};
        const auto r = solver.solve_from({{root, 1.0}});
        if (const auto* e = r.find(root.key)) score[e->action] += w * e->lower;
      }
      return static_cast<int>(std::max_element(score.begin(), score.end()) - score.begin());
    }
  }
  return 0;
}

int Episode::choose_action() {
  const auto qdist = filter_.q_distribution();
  if (options_.reschedule && step() >= options_.reschedule_after) return reschedule_action(qdist);
  const auto& units = units_;
  if (qdist.size() == 1) {
    if (const auto* e = policy_.find(NodeKey{x_, qdist.begin()->first, units})) return e->action;
    return fallback_action(qdist);
  }
  // Uncertain automaton state: weight each candidate's stored lower bound.
  std::vector<double> score(ctx_.model().num_actions(x_), 0.0);
  bool any = false;
  for (const auto& [q, w] : qdist) {
    const auto* e = policy_.find(NodeKey{x_, q, units});
    if (e == nullptr) continue;
    score[e->action] += w * e->lower;
    any = true;
  }
  if (!any) return fallback_action(qdist);
  return static_cast<int>(std::max_element(score.begin(), score.end()) - score.begin());
}

const Episode::Pending& Episode::prepare() {
  if (terminal()) throw std::logic_error("episode already finished");
  if (pending_) return *pending_;
  Pending p;
  p.action = choose_action();
  const auto& model = ctx_.model();
  std::vector<double> w(model.num_incidents());
  for (int id = 0; id < model.num_incidents(); ++id) w[id] = model.incident_prob(x_, p.action, id);
  p.incident = rng_.categorical(w);
  pending_ = p;
  return *pending_;
}

const TraceRecord& Episode::resolve(std::optional<HumanAction> human,
                                    std::optional<int> trust_report) {
  if (!pending_) prepare();
  const auto& model = ctx_.model();
  const Pending p = *pending_;
  Observation o;
  o.incident = p.incident;
  if (human) {
    o.human = *human;
  } else {
    std::vector<double> w(kNumHumanActions, 0.0);
    for (int h = 0; h < kNumHumanActions; ++h) {
      const auto ha = static_cast<HumanAction>(h);
      if (theta_) {
        w[h] = model.human_prob(*theta_, o.incident, ha);
      } else {
        for (int t = 0; t < model.num_trust_levels(); ++t)
          w[h] += belief_[t] * model.human_prob(t, o.incident, ha);
      }
    }
    o.human = static_cast<HumanAction>(rng_.categorical(w));
  }
  {
    std::vector<double> w(kNumOutcomes);
    for (int e = 0; e < kNumOutcomes; ++e)
      w[e] = model.performance_prob(o.incident, o.human, static_cast<Outcome>(e));
    o.outcome = static_cast<Outcome>(rng_.categorical(w));
  }
  const auto succ = model.world_transition(x_, p.action, o);
  std::vector<double> w;
  for (const auto& s : succ) w.push_back(s.second);
  const int next_x = succ[rng_.categorical(w)].first;

  // Throws ZeroLikelihood before any state changes.
  auto u2 = next_units(model, ctx_.mode(), x_, belief_, p.action, o);
  auto b2 = belief_of(u2);
  if (theta_) {
    theta_ = rng_.categorical(model.trust_row(*theta_, o));
    if (!trust_report) trust_report = theta_;
  }
  filter_.advance(x_, p.action, o, next_x, b2);

  TraceRecord r;
  r.x = x_;
  r.action = p.action;
  r.observation = o;
  r.next_x = next_x;
  r.belief = b2;
  r.trust_report = trust_report;
  trace_.records.push_back(std::move(r));
  x_ = next_x;
  units_ = std::move(u2);
  belief_ = std::move(b2);
  pending_.reset();
  check_terminal();
  return trace_.records.back();
}

Trace simulate_episode(const ProductContext& ctx, const SynthesisResult& policy,
                       const EpisodeOptions& options, std::uint64_t seed) {
  Episode ep(ctx, policy, options, seed, true);
  while (!ep.terminal()) ep.resolve();
  return ep.trace();
}

// ---------------------------------------------------------------------------

namespace {

struct EpisodeValue {
  double value = 0.0;
  bool ok = false;
  bool accepted = false;
  std::string error;
};

EpisodeValue run_one(const ProductContext& ctx, const SynthesisResult& policy,
                     const McParams& params, std::int64_t i) {
  EpisodeValue v;
  try {
    const Trace t = simulate_episode(ctx, policy, params.episode,
                                     episode_seed(params.seed, static_cast<std::uint64_t>(i)));
    v.value = check_trace(ctx.model(), ctx.spec(), ctx.dfa(), t);
    v.accepted = t.status == TraceStatus::kAccepted;
    v.ok = true;
  } catch (const std::exception& e) {
    v.error = e.what();
  }
  return v;
}

McResult reduce(const std::vector<EpisodeValue>& values) {
  McResult r;
  r.episodes = static_cast<std::int64_t>(values.size());
  double sum = 0.0;
  std::int64_t n = 0;
  for (const auto& v : values) {
    if (!v.ok) {
      if (r.errors++ == 0) r.first_error = v.error;
      continue;
    }
    sum += v.value;
    ++n;
    if (v.accepted) ++r.accepted;
  }
  if (n == 0) return r;
  r.estimate = sum / static_cast<double>(n);
  double ss = 0.0;
  for (const auto& v : values)
    if (v.ok) ss += (v.value - r.estimate) * (v.value - r.estimate);
  r.std_error = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n)) : 0.0;
  return r;
}

}  // namespace

McResult monte_carlo_eval_serial(const ProductContext& ctx, const SynthesisResult& policy,
                                 const McParams& params) {
  std::vector<EpisodeValue> values(static_cast<std::size_t>(params.episodes));
  for (std::int64_t i = 0; i < params.episodes; ++i) values[i] = run_one(ctx, policy, params, i);
  return reduce(values);
}

McResult monte_carlo_eval(const ProductContext& ctx, const SynthesisResult& policy,
                          const McParams& params) {
  std::vector<EpisodeValue> values(static_cast<std::size_t>(params.episodes));
  const int threads = params.threads > 0 ? params.threads : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic, 64) num_threads(threads)
  for (std::int64_t i = 0; i < params.episodes; ++i) values[i] = run_one(ctx, policy, params, i);
  return reduce(values);
}

}  // namespace trustsyn
