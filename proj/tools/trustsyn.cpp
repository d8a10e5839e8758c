#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "trustsyn/automaton.hpp"
#include "trustsyn/policy.hpp"
#include "trustsyn/runtime.hpp"
#include "trustsyn/service.hpp"

using namespace trustsyn;

namespace {

enum ExitCode : int { kOk = 0, kValidation = 2, kBudget = 3, kRuntime = 4 };

struct CliError {
  int code;
  std::string kind;
  std::string message;
  Json details = nullptr;
};

void write_json(const Json& doc, const std::optional<std::string>& path) {
  const std::string text = doc.dump(1) + "\n";
  if (!path) {
    std::cout << text;
    return;
  }
  std::ofstream out(*path, std::ios::binary);
  if (!out) throw CliError{kRuntime, "io", "cannot write '" + *path + "'"};
  out << text;
}

Json read_json(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw CliError{kValidation, "io", std::string("cannot open ") + what + " '" + path + "'"};
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw CliError{kValidation, "parse", std::string(what) + " is not valid JSON: " + e.what()};
  }
}

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("trustsyn");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("TRUSTSYN_LOG")) {
    const auto level = spdlog::level::from_str(env);
    if (level != spdlog::level::off || std::string(env) == "off") spdlog::set_level(level);
  }
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string model, spec;
  std::optional<std::string> out, report;
  SolverParams params;
  std::string update_mode = "bayes";
  int threads = 1;
};

int run_synth(SynthArgs& a) {
  a.params.update_mode = parse_update_mode(a.update_mode);
  if (!(a.params.tau > 0.0 && a.params.tau < 1.0))
    throw CliError{kValidation, "config", "--tau must lie in (0, 1)"};
  if (a.threads != 1) spdlog::info("synthesis is single-threaded; --threads {} ignored", a.threads);
  auto bundle = Bundle::from_files(a.model, a.spec);
  spdlog::info("automaton: {} states over {} predicates", bundle->dfa.num_states(),
               bundle->dfa.num_predicates());
  PolicyFile pf;
  pf.model = bundle->model.document();
  pf.spec = bundle->spec.document;
  pf.model_hash = bundle->model_hash;
  pf.spec_hash = bundle->spec_hash;
  pf.result = synthesize(bundle->model, bundle->spec, bundle->dfa, a.params);
  spdlog::info("synthesis: {} in {:.2f}s, {} nodes", to_string(pf.result.status), pf.result.seconds,
               pf.result.nodes);
  if (a.out) save_policy(*a.out, pf, bundle->model);

  Json report{{"command", "synth"},
              {"model_hash", pf.model_hash},
              {"spec_hash", pf.spec_hash},
              {"formula", bundle->spec.text},
              {"dfa_states", bundle->dfa.num_states()},
              {"tau", a.params.tau},
              {"result", result_summary(pf.result)},
              {"converged", pf.result.gap <= a.params.tau}};
  if (a.out) report["policy"] = *a.out;
  write_json(report, a.report);
  if (a.report) std::cout << report.dump(1) << "\n";
  return pf.result.gap <= a.params.tau ? kOk : kBudget;
}

struct EvalArgs {
  std::string policy;
  std::optional<std::string> out;
  std::int64_t episodes = 1000;
  std::uint64_t seed = 0;
  int step_budget = 20;
  int threads = 1;
  std::string fallback = "first";
};

int run_eval(const EvalArgs& a) {
  auto lp = prepare_policy(load_policy(a.policy));
  McParams p;
  p.episodes = a.episodes;
  p.seed = a.seed;
  p.threads = a.threads;
  p.episode.step_budget = a.step_budget;
  p.episode.fallback = parse_fallback(a.fallback);
  p.episode.local_solver.update_mode = lp->ctx->mode();
  if (p.episodes < 1) throw CliError{kValidation, "config", "--episodes must be at least 1"};
  const McResult r = a.threads == 1 ? monte_carlo_eval_serial(*lp->ctx, lp->result(), p)
                                    : monte_carlo_eval(*lp->ctx, lp->result(), p);
  const auto& res = lp->result();
  const double lo = res.lower - 3.0 * r.std_error;
  const double hi = res.upper + 3.0 * r.std_error;
  Json report{{"command", "eval"},
              {"model_hash", lp->file.model_hash},
              {"spec_hash", lp->file.spec_hash},
              {"episodes", r.episodes},
              {"seed", a.seed},
              {"step_budget", a.step_budget},
              {"estimate", r.estimate},
              {"std_error", r.std_error},
              {"accepted", r.accepted},
              {"errors", r.errors},
              {"lower", res.lower},
              {"upper", res.upper},
              {"within_bounds", r.estimate >= lo && r.estimate <= hi}};
  if (r.errors > 0) report["first_error"] = r.first_error;
  write_json(report, a.out);
  if (r.errors > 0) {
    spdlog::error("{} of {} episodes failed: {}", r.errors, r.episodes, r.first_error);
    return kRuntime;
  }
  return kOk;
}

struct CheckArgs {
  std::string trace, spec, model;
  bool reported = false;
};

int run_check(const CheckArgs& a) {
  auto bundle = Bundle::from_files(a.model, a.spec);
  const Trace t = trace_from_json(read_json(a.trace, "trace"), bundle->model);
  if (!t.model_hash.empty() && t.model_hash != bundle->model_hash)
    throw CliError{kValidation, "hash", "trace was recorded against a different model"};
  if (!t.spec_hash.empty() && t.spec_hash != bundle->spec_hash)
    spdlog::warn("trace was recorded under a different specification");
  if (a.reported) {
    std::cout << (check_trace_reported(bundle->spec, t) ? 1 : 0) << "\n";
  } else {
    const double p = check_trace(bundle->model, bundle->spec, bundle->dfa, t);
    std::cout << Json(p).dump() << "\n";
  }
  return kOk;
}

struct SimulateArgs {
  std::string policy;
  std::string out;
  std::int64_t episodes = 1;
  std::uint64_t seed = 0;
  int step_budget = 20;
  std::string fallback = "first";
  bool reschedule = false;
};

int run_simulate(const SimulateArgs& a) {
  auto lp = prepare_policy(load_policy(a.policy));
  EpisodeOptions opts;
  opts.step_budget = a.step_budget;
  opts.fallback = parse_fallback(a.fallback);
  opts.reschedule = a.reschedule;
  opts.local_solver.update_mode = lp->ctx->mode();
  if (a.episodes > 1) std::filesystem::create_directories(a.out);
  Json summary = Json::array();
  for (std::int64_t i = 0; i < a.episodes; ++i) {
    const std::uint64_t seed =
        a.episodes == 1 ? a.seed : episode_seed(a.seed, static_cast<std::uint64_t>(i));
    Trace t = simulate_episode(*lp->ctx, lp->result(), opts, seed);
    t.model_hash = lp->file.model_hash;
    t.spec_hash = lp->file.spec_hash;
    const std::string path =
        a.episodes == 1 ? a.out : (std::filesystem::path(a.out) / ("trace-" + std::to_string(i) + ".json")).string();
    write_json(trace_to_json(t, lp->bundle->model), path);
    summary.push_back(Json{{"trace", path},
                           {"seed", seed},
                           {"steps", t.records.size()},
                           {"status", std::string(to_string(t.status))},
                           {"satisfaction", check_trace(lp->bundle->model, lp->bundle->spec,
                                                        lp->bundle->dfa, t)}});
  }
  std::cout << Json{{"command", "simulate"}, {"episodes", std::move(summary)}}.dump(1) << "\n";
  return kOk;
}

struct DfaArgs {
  std::string spec;
  std::optional<std::string> model, out;
  std::string format = "text";
};

int run_dfa(const DfaArgs& a) {
  std::unique_ptr<Bundle> bundle;
  Specification syntax_only;
  const Specification* spec = nullptr;
  Dfa dfa;
  if (a.model) {
    bundle = Bundle::from_files(*a.model, a.spec);
    spec = &bundle->spec;
    dfa = bundle->dfa;
  } else {
    syntax_only = load_spec_syntax(read_json(a.spec, "specification"));
    spec = &syntax_only;
    dfa = build_automaton(syntax_only);
  }
  const auto names = alphabet_names(*spec);
  std::string text;
  if (a.format == "text") {
    text = export_text(dfa, names);
  } else if (a.format == "json") {
    Json states = Json::array();
    for (int q = 0; q < dfa.num_states(); ++q) {
      Json row = Json::array();
      for (int l = 0; l < dfa.num_letters(); ++l) row.push_back(dfa.step(q, static_cast<LabelSet>(l)));
      states.push_back(Json{{"id", q},
                            {"description", dfa.description(q)},
                            {"accepting", dfa.accepting(q)},
                            {"dead", dfa.dead(q)},
                            {"distance_to_accept", dfa.distance_to_accept(q) == kUnreachable
                                                       ? Json(nullptr)
                                                       : Json(dfa.distance_to_accept(q))},
                            {"next", std::move(row)}});
    }
    text = Json{{"formula", spec->text},
                {"predicates", names},
                {"initial", dfa.initial()},
                {"states", std::move(states)}}
               .dump(1) +
           "\n";
  } else {
    throw CliError{kValidation, "config", "--format must be text or json"};
  }
  if (a.out) {
    std::ofstream out(*a.out, std::ios::binary);
    out << text;
  } else {
    std::cout << text;
  }
  return kOk;
}

struct ServeArgs {
  std::string address = "0.0.0.0";
  unsigned short port = 8080;
  std::optional<std::string> policy, trace_dir, ui_dir;
};

int run_serve(const ServeArgs& a) {
  ServiceOptions opts;
  opts.default_policy = a.policy;
  if (a.trace_dir) opts.trace_dir = *a.trace_dir;
  if (a.ui_dir) opts.ui_dir = *a.ui_dir;
  if (a.policy) (void)prepare_policy(load_policy(*a.policy));  // fail fast on a bad file

  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  SessionManager manager(opts);
  Server server(manager, a.address, a.port);
  const auto port = server.start();
  spdlog::warn("listening on {}:{}", a.address, port);
  std::cout << Json{{"listening", a.address}, {"port", port}}.dump() << std::endl;
  int sig = 0;
  sigwait(&set, &sig);
  spdlog::warn("signal {} received, shutting down", sig);
  server.stop();
  return kOk;
}

void print_error(const CliError& e) {
  Json doc{{"error", {{"kind", e.kind}, {"message", e.message}, {"exit_code", e.code}}}};
  if (!e.details.is_null()) doc["error"]["details"] = e.details;
  std::cerr << doc.dump(1) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Trust-aware policy synthesis under belief temporal logic"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "synthesize a policy");
  s->add_option("--model", synth.model, "model file")->required();
  s->add_option("--spec", synth.spec, "specification file")->required();
  s->add_option("--tau", synth.params.tau, "target gap at the root")->capture_default_str();
  s->add_option("--max-depth", synth.params.max_depth)->capture_default_str();
  s->add_option("--max-trials", synth.params.max_trials)->capture_default_str();
  s->add_option("--max-nodes", synth.params.max_nodes)->capture_default_str();
  s->add_option("--update-mode", synth.update_mode)->check(CLI::IsMember({"bayes", "marginal"}))->capture_default_str();
  s->add_option("--seed", synth.params.seed)->capture_default_str();
  s->add_option("--threads", synth.threads)->capture_default_str();
  s->add_option("--out", synth.out, "policy output file");
  s->add_option("--report", synth.report, "report output file (also printed)");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Monte Carlo evaluation of a policy");
  e->add_option("--policy", eval.policy)->required();
  e->add_option("--episodes", eval.episodes)->capture_default_str();
  e->add_option("--seed", eval.seed)->capture_default_str();
  e->add_option("--step-budget", eval.step_budget)->capture_default_str();
  e->add_option("--threads", eval.threads, "0 = all cores")->capture_default_str();
  e->add_option("--fallback", eval.fallback)->check(CLI::IsMember({"error", "first", "solve"}))->capture_default_str();
  e->add_option("--out", eval.out);

  CheckArgs check;
  auto* c = app.add_subcommand("check", "satisfaction probability of a recorded trace");
  c->add_option("--trace", check.trace)->required();
  c->add_option("--spec", check.spec)->required();
  c->add_option("--model", check.model)->required();
  c->add_flag("--reported", check.reported, "boolean check using recorded trust reports");

  SimulateArgs sim;
  auto* m = app.add_subcommand("simulate", "simulate episodes and write trace files");
  m->add_option("--policy", sim.policy)->required();
  m->add_option("--out", sim.out, "trace file, or directory when --episodes > 1")->required();
  m->add_option("--episodes", sim.episodes)->capture_default_str();
  m->add_option("--seed", sim.seed)->capture_default_str();
  m->add_option("--step-budget", sim.step_budget)->capture_default_str();
  m->add_option("--fallback", sim.fallback)->check(CLI::IsMember({"error", "first", "solve"}))->capture_default_str();
  m->add_flag("--reschedule", sim.reschedule);

  DfaArgs dfa;
  auto* d = app.add_subcommand("dfa", "dump the automaton of a specification");
  d->add_option("--spec", dfa.spec)->required();
  d->add_option("--model", dfa.model);
  d->add_option("--format", dfa.format)->check(CLI::IsMember({"text", "json"}))->capture_default_str();
  d->add_option("--out", dfa.out);

  ServeArgs serve;
  auto* v = app.add_subcommand("serve", "run the session service");
  v->add_option("--address", serve.address)->capture_default_str();
  v->add_option("--port", serve.port)->capture_default_str();
  v->add_option("--policy", serve.policy, "default policy for new sessions");
  v->add_option("--trace-dir", serve.trace_dir, "write finished sessions here");
  v->add_option("--ui-dir", serve.ui_dir, "static assets served under /ui");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    print_error({kValidation, "usage", ex.what()});
    return kValidation;
  }

  try {
    if (*s) return run_synth(synth);
    if (*e) return run_eval(eval);
    if (*c) return run_check(check);
    if (*m) return run_simulate(sim);
    if (*d) return run_dfa(dfa);
    if (*v) return run_serve(serve);
  } catch (const CliError& ex) {
    print_error(ex);
    return ex.code;
  } catch (const ModelError& ex) {
    print_error({kValidation, "model", "invalid model", Json(ex.violations())});
    return kValidation;
  } catch (const ParseError& ex) {
    print_error({kValidation, "formula", ex.what(), Json{{"position", ex.position()}}});
    return kValidation;
  } catch (const SpecError& ex) {
    print_error({kValidation, "spec", ex.what()});
    return kValidation;
  } catch (const PolicyFormatError& ex) {
    print_error({kValidation, "policy", ex.what()});
    return kValidation;
  } catch (const TraceError& ex) {
    print_error({kValidation, "trace", ex.what()});
    return kValidation;
  } catch (const AutomatonError& ex) {
    print_error({kValidation, "automaton", ex.what()});
    return kValidation;
  } catch (const std::invalid_argument& ex) {
    print_error({kValidation, "config", ex.what()});
    return kValidation;
  } catch (const std::exception& ex) {
    print_error({kRuntime, "runtime", ex.what()});
    return kRuntime;
  }
  return kOk;
}
