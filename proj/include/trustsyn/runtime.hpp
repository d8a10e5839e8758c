#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "trustsyn/product.hpp"
#include "trustsyn/random.hpp"
#include "trustsyn/solver.hpp"

namespace trustsyn {

// ---------------------------------------------------------------------------
// Traces

enum class TraceStatus : std::uint8_t { kRunning, kAccepted, kRejected, kBudgetExhausted };
std::string_view to_string(TraceStatus s);

struct TraceRecord {
  int x = 0;
  int action = 0;
  Observation observation;
  int next_x = 0;
  std::vector<double> belief;       // posterior trust belief at next_x
  std::optional<int> trust_report;  // 0-based trust level, when recorded
};

struct Trace {
  std::uint64_t seed = 0;
  UpdateMode mode = UpdateMode::kBayes;
  std::string model_hash;
  std::string spec_hash;
  int x0 = 0;
  std::vector<double> belief0;
  std::optional<int> trust0;
  std::vector<TraceRecord> records;
  TraceStatus status = TraceStatus::kRunning;
  int accepted_step = -1;
};

Json record_to_json(const TraceRecord& r, const TrustPomdp& model);
Json trace_to_json(const Trace& t, const TrustPomdp& model);
Trace trace_from_json(const Json& j, const TrustPomdp& model);

class TraceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Largest componentwise difference between the recorded beliefs and the
/// beliefs recomputed from the recorded actions and observations.
double replay_deviation(const TrustPomdp& model, const Trace& trace);

// ---------------------------------------------------------------------------
// Forward filter over (theta, q)

/// Joint weights alpha(theta, q) over hidden trust and automaton state given
/// an observed execution. Normalized after every step.
class ForwardFilter {
 public:
  ForwardFilter(const TrustPomdp& model, const Specification& spec, const Dfa& dfa);

  void start(int x0, std::span<const double> belief0);
  /// Throws TraceError when the step has zero probability under the model.
  void advance(int x, int action, const Observation& o, int next_x,
               std::span<const double> next_belief);

  double accepting_mass() const;
  double dead_mass() const;
  std::map<int, double> q_distribution() const;
  double weight(int theta, int q) const { return alpha_[static_cast<std::size_t>(theta) * nq_ + q]; }

 private:
  const TrustPomdp* model_;
  const Specification* spec_;
  const Dfa* dfa_;
  int nq_;
  std::vector<double> alpha_;
};

/// Probability that the execution satisfies the formula, marginalizing the
/// hidden trust sequence given the recorded observations.
double check_trace(const TrustPomdp& model, const Specification& spec, const Dfa& dfa,
                   const Trace& trace);

/// Boolean satisfaction using the recorded trust reports as hidden states.
/// Throws TraceError when a report is missing.
bool check_trace_reported(const Specification& spec, const Trace& trace);

// ---------------------------------------------------------------------------
// Episodes

enum class FallbackMode : std::uint8_t { kError, kFirstAction, kLocalSolve };
FallbackMode parse_fallback(std::string_view s);

struct EpisodeOptions {
  int step_budget = 20;
  FallbackMode fallback = FallbackMode::kFirstAction;
  bool reschedule = false;
  int reschedule_after = 20;
  SolverParams local_solver{0.01, 20, 200, UpdateMode::kBayes, 0, 200'000};
};

/// One live execution: the policy picks actions, the modelled (or real)
/// human answers incidents. Shared by simulate_episode and the service.
class Episode {
 public:
  struct Pending {
    int action = 0;
    int incident = kNoIncident;
  };

  /// With `hidden_trust`, theta_0 is sampled from b_0 and evolved by the
  /// trust dynamics (auto mode). Without it, human decisions must be given.
  Episode(const ProductContext& ctx, const SynthesisResult& policy, EpisodeOptions options,
          std::uint64_t seed, bool hidden_trust = true);

  int x() const { return x_; }
  const std::vector<double>& belief() const { return belief_; }
  int step() const { return static_cast<int>(trace_.records.size()); }
  bool terminal() const { return trace_.status != TraceStatus::kRunning; }
  TraceStatus status() const { return trace_.status; }
  std::optional<int> hidden_trust() const { return theta_; }
  const ForwardFilter& filter() const { return filter_; }
  const Trace& trace() const { return trace_; }
  const std::optional<Pending>& pending() const { return pending_; }
  LabelSet current_belief_labels() const;

  /// Chooses the next action and samples its incident.
  const Pending& prepare();
  /// Completes the prepared move. `human` overrides the human decision
  /// model; `trust_report` is logged only.
  const TraceRecord& resolve(std::optional<HumanAction> human = std::nullopt,
                             std::optional<int> trust_report = std::nullopt);

  int choose_action();

 private:
  void check_terminal();
  int fallback_action(const std::map<int, double>& qdist);
  int reschedule_action(const std::map<int, double>& qdist) const;

  const ProductContext& ctx_;
  const SynthesisResult& policy_;
  EpisodeOptions options_;
  Rng rng_;
  int x_;
  std::vector<std::int32_t> units_;  // memo-key form of belief_
  std::vector<double> belief_;
  std::optional<int> theta_;
  ForwardFilter filter_;
  Trace trace_;
  std::optional<Pending> pending_;
};

Trace simulate_episode(const ProductContext& ctx, const SynthesisResult& policy,
                       const EpisodeOptions& options, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Monte Carlo evaluation

struct McParams {
  std::int64_t episodes = 1000;
  std::uint64_t seed = 0;
  EpisodeOptions episode;
  int threads = 1;
};

struct McResult {
  double estimate = 0.0;
  double std_error = 0.0;
  std::int64_t episodes = 0;
  std::int64_t errors = 0;
  std::int64_t accepted = 0;
  std::string first_error;
};

/// Serial reference: episode i uses episode_seed(seed, i).
McResult monte_carlo_eval_serial(const ProductContext& ctx, const SynthesisResult& policy,
                                 const McParams& params);
/// OpenMP kernel over episodes; bitwise identical to the serial reference.
McResult monte_carlo_eval(const ProductContext& ctx, const SynthesisResult& policy,
                          const McParams& params);

}  // namespace trustsyn
