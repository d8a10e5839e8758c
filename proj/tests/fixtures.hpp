#pragma once

#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "trustsyn/model.hpp"
#include "trustsyn/policy.hpp"

namespace fixtures {

using trustsyn::Json;

inline std::string data(const std::string& name) { return std::string(TRUSTSYN_DATA_DIR) + "/" + name; }

inline Json read_json(const std::string& path) {
  std::ifstream in(path);
  return Json::parse(in);
}

// Shared town model with phi1 / phi2, loaded once.
inline const trustsyn::Bundle& town(int which = 1) {
  static std::unique_ptr<trustsyn::Bundle> b1, b2;
  auto& b = which == 1 ? b1 : b2;
  if (!b) b = trustsyn::Bundle::from_files(data("town.json"), data(which == 1 ? "phi1.ldtl" : "phi2.ldtl"));
  return *b;
}

inline Json identity_rows(int nt, const std::vector<std::string>& incidents) {
  Json dyn = Json::object();
  for (int t = 1; t <= nt; ++t)
    for (const auto& i : incidents)
      for (const char* ah : {"tk", "st"})
        for (const char* er : {"succ", "fail"}) dyn[std::to_string(t)][i][ah][er] = {{std::to_string(t), 1.0}};
  return dyn;
}

// Two workspace states A -> B -> B, two trust levels, one incident "ev" on
// the A -> B move. p(tk | theta) = 0.8 / 0.2, takeover always succeeds,
// standstill succeeds with 0.6. Trust dynamics are the identity.
inline Json toy_model() {
  Json m = {
      {"workspace_states", {"A", "B"}},
      {"trust_levels", 2},
      {"actions", {{"A", {"go"}}, {"B", {"stay"}}}},
      {"incidents", {"ev"}},
      {"incident_model", {{"A", {{"go", {{"ev", 1.0}}}}}, {"B", {{"stay", {{"none", 1.0}}}}}}},
      {"human_decision_model",
       {{"1", {{"none", {{"tk", 0.0}, {"st", 1.0}}}, {"ev", {{"tk", 0.8}, {"st", 0.2}}}}},
        {"2", {{"none", {{"tk", 0.0}, {"st", 1.0}}}, {"ev", {{"tk", 0.2}, {"st", 0.8}}}}}}},
      {"performance_model",
       {{"none", {{"tk", {{"succ", 1.0}}}, {"st", {{"succ", 1.0}}}}},
        {"ev", {{"tk", {{"succ", 1.0}}}, {"st", {{"succ", 0.6}, {"fail", 0.4}}}}}}},
      {"trust_dynamics", identity_rows(2, {"none", "ev"})},
      {"world_transition", {{"A", {{"go", {{"B", 1.0}}}}}, {"B", {{"stay", {{"B", 1.0}}}}}}},
      {"initial_state", "A"},
      {"initial_belief", {0.5, 0.5}},
  };
  return m;
}

// Deterministic corridor C0 -> C1 -> C2 (absorbing), no incidents.
inline Json corridor_model() {
  Json m = {
      {"workspace_states", {"C0", "C1", "C2"}},
      {"trust_levels", 2},
      {"actions", {{"C0", {"fwd"}}, {"C1", {"fwd"}}, {"C2", {"stay"}}}},
      {"incidents", Json::array()},
      {"incident_model",
       {{"C0", {{"fwd", {{"none", 1.0}}}}}, {"C1", {{"fwd", {{"none", 1.0}}}}}, {"C2", {{"stay", {{"none", 1.0}}}}}}},
      {"human_decision_model",
       {{"1", {{"none", {{"st", 1.0}}}}}, {"2", {{"none", {{"st", 1.0}}}}}}},
      {"performance_model", {{"none", {{"tk", {{"succ", 1.0}}}, {"st", {{"succ", 1.0}}}}}}},
      {"trust_dynamics", identity_rows(2, {"none"})},
      {"world_transition",
       {{"C0", {{"fwd", {{"C1", 1.0}}}}}, {"C1", {{"fwd", {{"C2", 1.0}}}}}, {"C2", {{"stay", {{"C2", 1.0}}}}}}},
      {"initial_state", "C0"},
      {"initial_belief", {0.5, 0.5}},
  };
  return m;
}

inline Json spec_doc(const std::string& formula, Json predicates = Json::object()) {
  return {{"formula", formula}, {"predicates", predicates}};
}

}  // namespace fixtures
