#pragma once

#include <memory>
#include <string>

#include "trustsyn/automaton.hpp"
#include "trustsyn/ldtl.hpp"
#include "trustsyn/model.hpp"
#include "trustsyn/product.hpp"
#include "trustsyn/solver.hpp"

namespace trustsyn {

inline constexpr int kPolicyFormatVersion = 1;

std::string sha256_hex(std::string_view bytes);
/// SHA-256 of the compact serialization (object keys sorted).
std::string content_hash(const Json& doc);

/// A synthesized policy together with the documents it was built from.
struct PolicyFile {
  Json model;
  Json spec;
  std::string model_hash;
  std::string spec_hash;
  SynthesisResult result;
};

class PolicyFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Json policy_to_json(const PolicyFile& policy, const TrustPomdp& model);
PolicyFile policy_from_json(const Json& doc);
/// Reads a policy file and the model/spec documents embedded in it,
/// rejecting it when a hash does not match its embedded document.
PolicyFile load_policy(const std::string& path);
void save_policy(const std::string& path, const PolicyFile& policy, const TrustPomdp& model);

Json result_summary(const SynthesisResult& r);

/// The automaton every component uses for a specification.
Dfa build_automaton(const Specification& spec);

/// Model, specification and automaton built from one pair of documents.
struct Bundle {
  TrustPomdp model;
  Specification spec;
  Dfa dfa;
  std::string model_hash;
  std::string spec_hash;

  static std::unique_ptr<Bundle> from_documents(const Json& model, const Json& spec);
  static std::unique_ptr<Bundle> from_files(const std::string& model_path,
                                            const std::string& spec_path);
};

/// A policy ready for execution. Not movable: the context points into the bundle.
struct LoadedPolicy {
  PolicyFile file;
  std::unique_ptr<Bundle> bundle;
  std::unique_ptr<ProductContext> ctx;

  const SynthesisResult& result() const { return file.result; }
};

std::shared_ptr<const LoadedPolicy> prepare_policy(PolicyFile file);

}  // namespace trustsyn
