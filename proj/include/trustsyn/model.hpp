#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

namespace trustsyn {

using Json = nlohmann::json;

enum class HumanAction : std::uint8_t { kTakeover = 0, kStandstill = 1 };
enum class Outcome : std::uint8_t { kSuccess = 0, kFailure = 1 };

inline constexpr int kNumHumanActions = 2;
inline constexpr int kNumOutcomes = 2;
inline constexpr int kNoIncident = 0;

std::string_view to_string(HumanAction a);
std::string_view to_string(Outcome e);
HumanAction parse_human_action(std::string_view s);
Outcome parse_outcome(std::string_view s);

// o = (id, a^h, e^r). Observations are totally ordered by index(), which is
// lexicographic in (incident, human action, outcome).
struct Observation {
  int incident = kNoIncident;
  HumanAction human = HumanAction::kStandstill;
  Outcome outcome = Outcome::kSuccess;

  int index() const {
    return (incident * kNumHumanActions + static_cast<int>(human)) * kNumOutcomes +
           static_cast<int>(outcome);
  }
  static Observation from_index(int index) {
    Observation o;
    o.outcome = static_cast<Outcome>(index % kNumOutcomes);
    o.human = static_cast<HumanAction>((index / kNumOutcomes) % kNumHumanActions);
    o.incident = index / (kNumOutcomes * kNumHumanActions);
    return o;
  }
  friend bool operator==(const Observation&, const Observation&) = default;
};

enum class UpdateMode : std::uint8_t { kBayes, kMarginal };
std::string_view to_string(UpdateMode m);
UpdateMode parse_update_mode(std::string_view s);

class ModelError : public std::runtime_error {
 public:
  explicit ModelError(std::vector<std::string> violations);
  const std::vector<std::string>& violations() const { return violations_; }

 private:
  std::vector<std::string> violations_;
};

class ZeroLikelihood : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Action {
  std::string name;
  // Successor distribution p(x' | x, a); sorted by successor index.
  std::vector<std::pair<int, double>> successors;
};

/// Factored trust POMDP over workspace states X and hidden trust levels
/// Theta. Trust levels are 0-based internally and 1-based in documents.
/// Immutable once built by validate_model().
class TrustPomdp {
 public:
  int num_states() const { return static_cast<int>(state_names_.size()); }
  int num_trust_levels() const { return num_trust_; }
  // Includes the reserved "none" incident at index 0.
  int num_incidents() const { return static_cast<int>(incident_names_.size()); }
  int num_observations() const { return num_incidents() * kNumHumanActions * kNumOutcomes; }

  const std::string& state_name(int x) const { return state_names_.at(x); }
  int state_index(std::string_view name) const;
  bool has_state(std::string_view name) const;
  const std::string& incident_name(int id) const { return incident_names_.at(id); }
  int incident_index(std::string_view name) const;

  std::span<const Action> actions(int x) const { return actions_.at(x); }
  int num_actions(int x) const { return static_cast<int>(actions_.at(x).size()); }
  int action_index(int x, std::string_view name) const;

  double incident_prob(int x, int action, int incident) const {
    return incident_[action_offset_[x] + action][incident];
  }
  double human_prob(int theta, int incident, HumanAction a) const {
    return human_[(theta * num_incidents() + incident) * kNumHumanActions + static_cast<int>(a)];
  }
  double performance_prob(int incident, HumanAction a, Outcome e) const {
    return performance_[(incident * kNumHumanActions + static_cast<int>(a)) * kNumOutcomes +
                        static_cast<int>(e)];
  }
  // p(theta' | theta, o)
  std::span<const double> trust_row(int theta, const Observation& o) const {
    const auto n = static_cast<std::size_t>(num_trust_);
    return std::span<const double>(trust_).subspan(
        (static_cast<std::size_t>(theta) * num_observations() + o.index()) * n, n);
  }
  // p(x' | x, a, o); observation-independent in the current file format.
  std::span<const std::pair<int, double>> world_transition(int x, int action,
                                                           const Observation& /*o*/) const {
    return actions_.at(x).at(action).successors;
  }

  int initial_state() const { return initial_state_; }
  const std::vector<double>& initial_belief() const { return initial_belief_; }

  const Json& document() const { return document_; }

 private:
  friend TrustPomdp validate_model(const Json& raw);

  std::vector<std::string> state_names_;
  std::unordered_map<std::string, int> state_lookup_;
  int num_trust_ = 0;
  std::vector<std::string> incident_names_;
  std::unordered_map<std::string, int> incident_lookup_;
  std::vector<std::vector<Action>> actions_;
  std::vector<int> action_offset_;
  std::vector<std::vector<double>> incident_;  // [flat action][incident]
  std::vector<double> human_;
  std::vector<double> performance_;
  std::vector<double> trust_;
  int initial_state_ = 0;
  std::vector<double> initial_belief_;
  Json document_;
};

/// Builds a TrustPomdp from a parsed model document. Throws ModelError
/// carrying every violation found, each naming its table coordinates.
TrustPomdp validate_model(const Json& raw);
TrustPomdp load_model(const std::string& path);

/// Observable workspace state paired with a belief over trust levels.
struct BeliefState {
  int x = 0;
  std::vector<double> trust;
};

BeliefState initial_belief_state(const TrustPomdp& model);

// Z(x, theta, a, o) = p(id|x,a) p(a^h|theta,id) p(e^r|id,a^h)
double observation_prob(const TrustPomdp& model, int x, int theta, int action,
                        const Observation& o);

// sum_theta b(theta) Z(x, theta, a, o)
double observation_likelihood(const TrustPomdp& model, const BeliefState& b, int action,
                              const Observation& o);

/// Observations with positive probability under the belief, ordered by index.
std::vector<Observation> observation_support(const TrustPomdp& model, const BeliefState& b,
                                             int action);

struct TrustUpdate {
  std::vector<double> trust;
  double likelihood = 0.0;
};

/// Conditions the trust belief on o, then advances it through the trust
/// dynamics. Throws ZeroLikelihood when o is impossible under the belief.
TrustUpdate belief_update_bayes(const TrustPomdp& model, const BeliefState& b, int action,
                                const Observation& o);

/// Observation-marginalized update, linear in the belief:
/// b'(t') = sum_t b(t) sum_{o : Z > 0} Z(x,t,a,o) p(t'|t,o).
std::vector<double> belief_update_marginal(const TrustPomdp& model, const BeliefState& b,
                                           int action);

struct Transition {
  Observation observation;
  int next_x = 0;
  std::vector<double> trust;
  double probability = 0.0;
};

/// All (o, x') successors of the belief under the action, ordered by
/// (observation index, x'). Probabilities sum to 1.
std::vector<Transition> enumerate_transitions(const TrustPomdp& model, const BeliefState& b,
                                              int action, UpdateMode mode);

bool is_distribution(std::span<const double> p, double tol = 1e-9);

}  // namespace trustsyn
