#include "trustsyn/policy.hpp"

#include <openssl/sha.h>

#include <fstream>
#include <iomanip>
#include <sstream>

namespace trustsyn {

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), digest);
  std::ostringstream os;
  for (unsigned char c : digest) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(c);
  return os.str();
}

std::string content_hash(const Json& doc) { return sha256_hex(doc.dump()); }

namespace {

Json key_to_json(const NodeKey& k, const TrustPomdp& model) {
  return Json{{"x", model.state_name(k.x)}, {"q", k.q}, {"belief", k.belief}};
}

NodeKey key_from_json(const Json& j, const TrustPomdp& model) {
  NodeKey k;
  k.x = model.state_index(j.at("x").get<std::string>());
  k.q = j.at("q").get<int>();
  k.belief = j.at("belief").get<std::vector<std::int32_t>>();
  if (static_cast<int>(k.belief.size()) != model.num_trust_levels())
    throw PolicyFormatError("policy belief has the wrong length");
  return k;
}

Json params_to_json(const SolverParams& p) {
  return Json{{"tau", p.tau},
              {"max_depth", p.max_depth},
              {"max_trials", p.max_trials},
              {"update_mode", std::string(to_string(p.update_mode))},
              {"seed", p.seed},
              {"max_nodes", p.max_nodes}};
}

SolverParams params_from_json(const Json& j) {
  SolverParams p;
  p.tau = j.at("tau").get<double>();
  p.max_depth = j.at("max_depth").get<int>();
  p.max_trials = j.at("max_trials").get<std::int64_t>();
  p.update_mode = parse_update_mode(j.at("update_mode").get<std::string>());
  p.seed = j.at("seed").get<std::uint64_t>();
  p.max_nodes = j.at("max_nodes").get<std::size_t>();
  return p;
}

}  // namespace

Json result_summary(const SynthesisResult& r) {
  return Json{{"lower", r.lower},         {"upper", r.upper},
              {"gap", r.gap},             {"status", std::string(to_string(r.status))},
              {"nodes", r.nodes},         {"expanded", r.expanded},
              {"backups", r.backups},     {"trials", r.trials},
              {"policy_entries", r.policy.size()}};
}

Json policy_to_json(const PolicyFile& policy, const TrustPomdp& model) {
  const auto& r = policy.result;
  Json initial = Json::array();
  for (const auto& [k, p] : r.initial) {
    auto j = key_to_json(k, model);
    j["probability"] = p;
    initial.push_back(std::move(j));
  }
  Json entries = Json::array();
  for (const auto& e : r.policy) {
    auto j = key_to_json(e.key, model);
    j["action"] = model.actions(e.key.x)[e.action].name;
    j["lower"] = e.lower;
    j["upper"] = e.upper;
    entries.push_back(std::move(j));
  }
  return Json{{"format", "trustsyn-policy"},
              {"version", kPolicyFormatVersion},
              {"model_hash", policy.model_hash},
              {"spec_hash", policy.spec_hash},
              {"params", params_to_json(r.params)},
              {"result", result_summary(r)},
              {"initial", std::move(initial)},
              {"entries", std::move(entries)},
              {"model", policy.model},
              {"spec", policy.spec}};
}

PolicyFile policy_from_json(const Json& doc) {
  try {
    if (doc.at("format").get<std::string>() != "trustsyn-policy")
      throw PolicyFormatError("not a trustsyn policy document");
    if (doc.at("version").get<int>() != kPolicyFormatVersion)
      throw PolicyFormatError("unsupported policy version " + doc.at("version").dump());
    PolicyFile pf;
    pf.model = doc.at("model");
    pf.spec = doc.at("spec");
    pf.model_hash = doc.at("model_hash").get<std::string>();
    pf.spec_hash = doc.at("spec_hash").get<std::string>();
    if (content_hash(pf.model) != pf.model_hash)
      throw PolicyFormatError("embedded model does not match model_hash");
    if (content_hash(pf.spec) != pf.spec_hash)
      throw PolicyFormatError("embedded spec does not match spec_hash");
    const TrustPomdp model = validate_model(pf.model);
    auto& r = pf.result;
    r.params = params_from_json(doc.at("params"));
    const auto& res = doc.at("result");
    r.lower = res.at("lower").get<double>();
    r.upper = res.at("upper").get<double>();
    r.gap = res.at("gap").get<double>();
    r.status = parse_status(res.at("status").get<std::string>());
    r.nodes = res.at("nodes").get<std::int64_t>();
    r.expanded = res.at("expanded").get<std::int64_t>();
    r.backups = res.at("backups").get<std::int64_t>();
    r.trials = res.at("trials").get<std::int64_t>();
    for (const auto& j : doc.at("initial"))
      r.initial.emplace_back(key_from_json(j, model), j.at("probability").get<double>());
    for (const auto& j : doc.at("entries")) {
      PolicyEntry e;
      e.key = key_from_json(j, model);
      e.action = model.action_index(e.key.x, j.at("action").get<std::string>());
      e.lower = j.at("lower").get<double>();
      e.upper = j.at("upper").get<double>();
      r.policy.push_back(std::move(e));
    }
    std::sort(r.policy.begin(), r.policy.end(),
              [](const PolicyEntry& a, const PolicyEntry& b) { return a.key < b.key; });
    return pf;
  } catch (const Json::exception& e) {
    throw PolicyFormatError(std::string("malformed policy document: ") + e.what());
  } catch (const std::out_of_range& e) {
    throw PolicyFormatError(std::string("policy references unknown names: ") + e.what());
  }
}

PolicyFile load_policy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw PolicyFormatError("cannot open policy file '" + path + "'");
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw PolicyFormatError(std::string("policy file is not valid JSON: ") + e.what());
  }
  return policy_from_json(doc);
}

void save_policy(const std::string& path, const PolicyFile& policy, const TrustPomdp& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write policy file '" + path + "'");
  out << policy_to_json(policy, model).dump(1) << "\n";
}

Dfa build_automaton(const Specification& spec) { return minimize(translate(spec)); }

std::unique_ptr<Bundle> Bundle::from_documents(const Json& model, const Json& spec) {
  auto b = std::make_unique<Bundle>(Bundle{validate_model(model), {}, {}, "", ""});
  b->spec = load_spec(spec, b->model);
  b->dfa = build_automaton(b->spec);
  b->model_hash = content_hash(b->model.document());
  b->spec_hash = content_hash(b->spec.document);
  return b;
}

std::unique_ptr<Bundle> Bundle::from_files(const std::string& model_path,
                                           const std::string& spec_path) {
  auto b = std::make_unique<Bundle>(Bundle{load_model(model_path), {}, {}, "", ""});
  b->spec = load_spec_file(spec_path, b->model);
  b->dfa = build_automaton(b->spec);
  b->model_hash = content_hash(b->model.document());
  b->spec_hash = content_hash(b->spec.document);
  return b;
}

std::shared_ptr<const LoadedPolicy> prepare_policy(PolicyFile file) {
  auto lp = std::make_shared<LoadedPolicy>();
  lp->bundle = Bundle::from_documents(file.model, file.spec);
  lp->file = std::move(file);
  lp->ctx = std::make_unique<ProductContext>(lp->bundle->model, lp->bundle->spec, lp->bundle->dfa,
                                             lp->file.result.params.update_mode);
  return lp;
}

}  // namespace trustsyn
