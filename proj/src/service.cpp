#include "trustsyn/service.hpp"

#include <sys/socket.h>

#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

namespace trustsyn {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

namespace {

std::string_view to_string(SessionMode m) { return m == SessionMode::kAuto ? "auto" : "interactive"; }

SessionMode parse_mode(const std::string& s) {
  if (s == "auto") return SessionMode::kAuto;
  if (s == "interactive") return SessionMode::kInteractive;
  throw ServiceError(400, "invalid mode '" + s + "' (expected auto or interactive)");
}

std::vector<std::string> split_path(std::string_view target) {
  if (auto q = target.find('?'); q != std::string_view::npos) target = target.substr(0, q);
  std::vector<std::string> parts;
  std::size_t i = 0;
  while (i < target.size()) {
    while (i < target.size() && target[i] == '/') ++i;
    const std::size_t j = target.find('/', i);
    const std::size_t end = j == std::string_view::npos ? target.size() : j;
    if (end > i) parts.emplace_back(target.substr(i, end - i));
    i = end;
  }
  return parts;
}

Json error_doc(int status, const std::string& message) {
  return Json{{"error", {{"status", status}, {"message", message}}}};
}

}  // namespace

// ---------------------------------------------------------------------------

namespace {

// Phase of each automaton state: longest path from the initial state in the
// graph of strongly connected components, so waiting states that one letter
// can skip still get distinct phases. -1 when unreachable.
std::vector<int> automaton_phases(const Dfa& dfa, int* phases) {
  const int n = dfa.num_states();
  std::vector<std::vector<bool>> reach(n, std::vector<bool>(n, false));
  std::vector<int> size(n, 0);
  for (int q = 0; q < n; ++q) {
    std::vector<int> todo{q};
    reach[q][q] = true;
    for (std::size_t i = 0; i < todo.size(); ++i)
      for (int l = 0; l < dfa.num_letters(); ++l) {
        const int r = dfa.step(todo[i], static_cast<LabelSet>(l));
        if (!reach[q][r]) {
          reach[q][r] = true;
          todo.push_back(r);
        }
      }
    size[q] = static_cast<int>(todo.size());
  }
  // a component reaches strictly fewer states than any component before it
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return size[a] > size[b]; });
  std::vector<int> depth(n, -1);
  depth[dfa.initial()] = 0;
  for (int q : order) {
    for (int r = 0; r < n; ++r)
      if (reach[q][r] && reach[r][q]) depth[q] = std::max(depth[q], depth[r]);
    if (depth[q] < 0) continue;
    for (int l = 0; l < dfa.num_letters(); ++l) {
      const int r = dfa.step(q, static_cast<LabelSet>(l));
      if (!reach[r][q]) depth[r] = std::max(depth[r], depth[q] + 1);
    }
  }
  *phases = 0;
  for (int q = 0; q < n; ++q)
    if (depth[q] >= 0 && !dfa.accepting(q) && !dfa.dead(q)) *phases = std::max(*phases, depth[q] + 1);
  return depth;
}

}  // namespace

Session::Session(std::string id, SessionMode mode, std::shared_ptr<const LoadedPolicy> policy,
                 EpisodeOptions options, std::uint64_t seed)
    : id_(std::move(id)), mode_(mode), policy_(std::move(policy)), options_(options) {
  phase_of_ = automaton_phases(policy_->bundle->dfa, &phases_);
  episode_ = std::make_unique<Episode>(*policy_->ctx, policy_->result(), options_, seed,
                                       mode_ == SessionMode::kAuto);
  snapshot_ = std::make_shared<const Json>(make_view());
  publish("created", Json{{"view", *snapshot_}});
  if (episode_->terminal()) publish("terminal", Json{{"view", *snapshot_}});
}

Json Session::make_view() const {
  const auto& ep = *episode_;
  const auto& bundle = *policy_->bundle;
  const auto& model = bundle.model;
  const auto& spec = bundle.spec;
  const auto& dfa = bundle.dfa;

  Json v;
  v["api_version"] = kApiVersion;
  v["id"] = id_;
  v["mode"] = std::string(to_string(mode_));
  v["step"] = ep.step();
  v["step_budget"] = options_.step_budget;
  v["x"] = model.state_name(ep.x());
  v["belief"] = ep.belief();
  v["status"] = std::string(to_string(ep.status()));
  v["accept_probability"] = ep.filter().accepting_mass();
  v["model_hash"] = bundle.model_hash;
  v["spec_hash"] = bundle.spec_hash;
  v["formula"] = spec.text;

  Json actions = Json::array();
  for (const auto& a : model.actions(ep.x())) actions.push_back(a.name);
  v["actions"] = std::move(actions);

  // Label bits of the current belief state. Trust-dependent state
  // predicates are reported as the probability of holding under b.
  Json labels = Json::object();
  const auto names = alphabet_names(spec);
  const LabelSet bl = ep.current_belief_labels();
  const int ns = static_cast<int>(spec.alphabet.state_preds.size());
  for (int i = 0; i < ns; ++i) {
    const auto& pred = spec.table.state(spec.alphabet.state_preds[i]);
    double p = 0.0;
    for (int t = 0; t < model.num_trust_levels(); ++t)
      if (pred.members[static_cast<std::size_t>(ep.x()) * model.num_trust_levels() + t])
        p += ep.belief()[t];
    if (spec.table.state_depends_on_trust(spec.alphabet.state_preds[i]))
      labels[names[i]] = p;
    else
      labels[names[i]] = p > 0.5;
  }
  for (int i = ns; i < spec.alphabet.size(); ++i) labels[names[i]] = ((bl >> i) & 1U) != 0;
  v["labels"] = std::move(labels);

  Json dist = Json::array();
  int likely = -1;
  double best = -1.0;
  for (const auto& [q, p] : ep.filter().q_distribution()) {
    dist.push_back(Json{{"q", q}, {"probability", p}});
    if (p > best) {
      best = p;
      likely = q;
    }
  }
  Json d{{"distribution", std::move(dist)}, {"phases", phases_}};
  if (likely >= 0 && !dfa.dead(likely) && phase_of_[likely] >= 0) {
    d["q"] = likely;
    d["phase"] = dfa.accepting(likely) ? phases_ : phase_of_[likely];
  } else {
    d["q"] = likely;
    d["phase"] = nullptr;
  }
  v["dfa"] = std::move(d);

  const auto& pending = ep.pending();
  if (pending) {
    v["pending"] = Json{{"action", model.actions(ep.x())[pending->action].name},
                        {"incident", model.incident_name(pending->incident)}};
  } else {
    v["pending"] = nullptr;
  }
  v["awaiting_human"] =
      mode_ == SessionMode::kInteractive && pending && pending->incident != kNoIncident;
  if (mode_ == SessionMode::kAuto && ep.hidden_trust()) v["hidden_trust"] = *ep.hidden_trust() + 1;
  return v;
}

void Session::publish(std::string type, Json payload) {
  std::lock_guard lock(event_mutex_);
  payload["seq"] = events_.size();
  payload["type"] = std::move(type);
  payload["session"] = id_;
  events_.push_back(std::move(payload));
  event_cv_.notify_all();
}

std::shared_ptr<const Json> Session::view() const { return std::atomic_load(&snapshot_); }

Json Session::summary() const {
  const auto v = view();
  return Json{{"id", id_},           {"mode", std::string(to_string(mode_))},
              {"x", v->at("x")},     {"step", v->at("step")},
              {"status", v->at("status")}};
}

Json Session::step(const Json& request) {
  std::lock_guard lock(step_mutex_);
  auto& ep = *episode_;
  const auto& model = policy_->bundle->model;
  if (ep.terminal()) throw ServiceError(409, "session terminal");

  std::optional<HumanAction> human;
  std::optional<int> report;
  if (!request.is_object() && !request.is_null()) throw ServiceError(400, "step body must be an object");
  if (request.is_object()) {
    if (request.contains("human") && !request["human"].is_null()) {
      try {
        human = parse_human_action(request["human"].get<std::string>());
      } catch (const std::exception&) {
        throw ServiceError(400, "human must be \"tk\" or \"st\"");
      }
    }
    if (request.contains("trust_report") && !request["trust_report"].is_null()) {
      if (!request["trust_report"].is_number_integer())
        throw ServiceError(400, "trust_report must be an integer");
      const int t = request["trust_report"].get<int>();
      if (t < 1 || t > model.num_trust_levels())
        throw ServiceError(400, "trust_report out of range 1.." +
                                    std::to_string(model.num_trust_levels()));
      report = t - 1;
    }
  }

  const TraceRecord* record = nullptr;
  try {
    if (mode_ == SessionMode::kAuto) {
      if (human) throw ServiceError(409, "out-of-turn input: auto sessions take no human decision");
      const auto& p = ep.prepare();
      publish("prepared", Json{{"action", model.actions(ep.x())[p.action].name},
                               {"incident", model.incident_name(p.incident)}});
      record = &ep.resolve(std::nullopt, report);
    } else if (!ep.pending()) {
      if (human) throw ServiceError(409, "out-of-turn input: no incident pending");
      const auto& p = ep.prepare();
      publish("prepared", Json{{"action", model.actions(ep.x())[p.action].name},
                               {"incident", model.incident_name(p.incident)}});
      if (p.incident != kNoIncident) {
        std::atomic_store(&snapshot_, std::make_shared<const Json>(make_view()));
        return Json{{"record", nullptr}, {"view", *view()}};
      }
      record = &ep.resolve(HumanAction::kStandstill, report);
    } else {
      if (!human) throw ServiceError(409, "takeover decision required for the pending incident");
      record = &ep.resolve(human, report);
    }
  } catch (const ZeroLikelihood& e) {
    throw ServiceError(422, e.what());
  } catch (const UnknownNode& e) {
    throw ServiceError(422, e.what());
  } catch (const TraceError& e) {
    throw ServiceError(422, e.what());
  }

  Json rec = record_to_json(*record, model);
  std::atomic_store(&snapshot_, std::make_shared<const Json>(make_view()));
  publish("step", Json{{"record", rec}, {"view", *view()}});
  if (ep.terminal()) publish("terminal", Json{{"view", *view()}});
  return Json{{"record", std::move(rec)}, {"view", *view()}};
}

std::vector<Json> Session::events_since(std::size_t from, std::chrono::milliseconds timeout,
                                        bool* closed) {
  std::unique_lock lock(event_mutex_);
  auto finished = [this] { return !events_.empty() && events_.back().at("type") == "terminal"; };
  event_cv_.wait_for(lock, timeout, [&] { return events_.size() > from || finished(); });
  std::vector<Json> out;
  for (std::size_t i = from; i < events_.size(); ++i) out.push_back(events_[i]);
  if (closed != nullptr) *closed = finished() && out.empty();
  return out;
}

std::vector<Json> Session::events() const {
  std::lock_guard lock(event_mutex_);
  return events_;
}

Trace Session::trace() const {
  std::lock_guard lock(step_mutex_);
  Trace t = episode_->trace();
  t.model_hash = policy_->bundle->model_hash;
  t.spec_hash = policy_->bundle->spec_hash;
  return t;
}

// ---------------------------------------------------------------------------

SessionManager::SessionManager(ServiceOptions options) : options_(std::move(options)) {}

std::shared_ptr<const LoadedPolicy> SessionManager::resolve_policy(const Json& request) {
  auto load = [&](const std::string& key, auto&& make) -> std::shared_ptr<const LoadedPolicy> {
    {
      std::lock_guard lock(mutex_);
      if (auto it = policy_cache_.find(key); it != policy_cache_.end()) return it->second;
    }
    auto lp = make();
    std::lock_guard lock(mutex_);
    return policy_cache_.emplace(key, std::move(lp)).first->second;
  };
  try {
    if (request.contains("policy") && !request["policy"].is_null()) {
      const auto& doc = request["policy"];
      if (!doc.is_object()) throw ServiceError(400, "policy must be a policy document");
      return load("doc:" + content_hash(doc), [&] { return prepare_policy(policy_from_json(doc)); });
    }
    std::string path;
    if (request.contains("policy_path") && !request["policy_path"].is_null()) {
      if (!options_.allow_policy_paths) throw ServiceError(403, "policy paths are disabled");
      path = request["policy_path"].get<std::string>();
    } else if (options_.default_policy) {
      path = *options_.default_policy;
    } else {
      throw ServiceError(400, "no policy given and the server has no default policy");
    }
    return load("path:" + path, [&] { return prepare_policy(load_policy(path)); });
  } catch (const PolicyFormatError& e) {
    const std::string what = e.what();
    const int status = what.find("does not match") != std::string::npos ? 409 : 400;
    throw ServiceError(status, what);
  } catch (const ModelError& e) {
    throw ServiceError(400, e.what());
  } catch (const SpecError& e) {
    throw ServiceError(400, e.what());
  } catch (const Json::exception& e) {
    throw ServiceError(400, e.what());
  }
}

Json SessionManager::create(const Json& request) {
  if (!request.is_object()) throw ServiceError(400, "session request must be an object");
  const SessionMode mode = parse_mode(request.value("mode", "interactive"));
  auto policy = resolve_policy(request);

  // Artifacts named by the client must be the ones the policy was built from.
  auto check_hash = [](const Json& req, const char* doc_key, const char* hash_key,
                       const std::string& expected) {
    std::optional<std::string> given;
    if (req.contains(hash_key) && req[hash_key].is_string()) given = req[hash_key].get<std::string>();
    if (req.contains(doc_key) && req[doc_key].is_object()) given = content_hash(req[doc_key]);
    if (given && *given != expected)
      throw ServiceError(409, std::string(doc_key) + " does not match the policy (stale " +
                                  hash_key + ")");
  };
  check_hash(request, "model", "model_hash", policy->bundle->model_hash);
  check_hash(request, "spec", "spec_hash", policy->bundle->spec_hash);

  EpisodeOptions opts;
  std::uint64_t seed = 0;
  try {
    seed = request.value("seed", std::uint64_t{0});
    opts.step_budget = request.value("step_budget", opts.step_budget);
    opts.reschedule = request.value("reschedule", false);
    opts.reschedule_after = request.value("reschedule_after", opts.reschedule_after);
    opts.fallback = parse_fallback(request.value("fallback", std::string("first")));
  } catch (const Json::exception& e) {
    throw ServiceError(400, e.what());
  } catch (const std::invalid_argument& e) {
    throw ServiceError(400, e.what());
  }
  if (opts.step_budget < 0) throw ServiceError(400, "step_budget must be nonnegative");
  opts.local_solver.update_mode = policy->ctx->mode();

  std::string id;
  {
    std::lock_guard lock(mutex_);
    id = "s" + std::to_string(next_id_++);
  }
  auto session = std::make_shared<Session>(id, mode, std::move(policy), opts, seed);
  {
    std::lock_guard lock(mutex_);
    sessions_.emplace(id, session);
  }
  if (session->view()->at("status") != "running") persist(*session);
  return *session->view();
}

std::shared_ptr<Session> SessionManager::find(const std::string& id) const {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) return nullptr;
  return it->second;
}

Json SessionManager::step(const std::string& id, const Json& request) {
  auto s = find(id);
  if (!s) throw ServiceError(404, "unknown session '" + id + "'");
  Json out = s->step(request);
  if (out["view"]["status"] != "running") persist(*s);
  return out;
}

Json SessionManager::get(const std::string& id) const {
  auto s = find(id);
  if (!s) throw ServiceError(404, "unknown session '" + id + "'");
  return *s->view();
}

Json SessionManager::list() const {
  std::vector<std::shared_ptr<Session>> all;
  {
    std::lock_guard lock(mutex_);
    for (const auto& [id, s] : sessions_) all.push_back(s);
  }
  Json out = Json::array();
  for (const auto& s : all) out.push_back(s->summary());
  return Json{{"sessions", std::move(out)}};
}

void SessionManager::persist(const Session& s) const {
  if (!options_.trace_dir) return;
  std::filesystem::create_directories(*options_.trace_dir);
  std::ofstream out(*options_.trace_dir / (s.id() + ".json"), std::ios::binary);
  out << trace_to_json(s.trace(), s.policy().bundle->model).dump(1) << "\n";
}

// ---------------------------------------------------------------------------

namespace {

std::string content_type_for(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".html") return "text/html";
  if (ext == ".js" || ext == ".mjs") return "text/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".json") return "application/json";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".png") return "image/png";
  return "application/octet-stream";
}

HttpReply json_reply(int status, const Json& doc) { return {status, "application/json", doc.dump()}; }

HttpReply serve_static(const SessionManager& manager, const std::vector<std::string>& parts) {
  const auto& dir = manager.options().ui_dir;
  if (!dir) return json_reply(404, error_doc(404, "no UI assets configured"));
  std::filesystem::path rel;
  for (std::size_t i = 1; i < parts.size(); ++i) {
    if (parts[i] == ".." || parts[i] == ".") return json_reply(400, error_doc(400, "invalid path"));
    rel /= parts[i];
  }
  if (rel.empty()) rel = "index.html";
  const auto path = *dir / rel;
  std::ifstream in(path, std::ios::binary);
  if (!in) return json_reply(404, error_doc(404, "not found"));
  std::ostringstream os;
  os << in.rdbuf();
  return {200, content_type_for(path), os.str()};
}

}  // namespace

HttpReply route_request(SessionManager& manager, const std::string& method,
                        const std::string& target, const std::string& body) {
  const auto parts = split_path(target);
  auto parse_body = [&]() -> Json {
    if (body.empty()) return Json::object();
    try {
      return Json::parse(body);
    } catch (const Json::parse_error& e) {
      throw ServiceError(400, std::string("request body is not valid JSON: ") + e.what());
    }
  };
  try {
    if (parts.size() == 1 && parts[0] == "health" && method == "GET")
      return json_reply(200, Json{{"ok", true}, {"api_version", kApiVersion}});
    if (!parts.empty() && parts[0] == "ui" && method == "GET") return serve_static(manager, parts);
    if (parts.empty() || parts[0] != "sessions") throw ServiceError(404, "no route for " + target);
    if (parts.size() == 1) {
      if (method == "GET") return json_reply(200, manager.list());
      if (method == "POST") return json_reply(201, manager.create(parse_body()));
      throw ServiceError(405, "method not allowed");
    }
    const std::string& id = parts[1];
    if (parts.size() == 2) {
      if (method != "GET") throw ServiceError(405, "method not allowed");
      return json_reply(200, manager.get(id));
    }
    if (parts.size() == 3) {
      auto s = manager.find(id);
      if (!s) throw ServiceError(404, "unknown session '" + id + "'");
      if (parts[2] == "step") {
        if (method != "POST") throw ServiceError(405, "method not allowed");
        return json_reply(200, manager.step(id, parse_body()));
      }
      if (method != "GET") throw ServiceError(405, "method not allowed");
      if (parts[2] == "events") return json_reply(200, Json{{"events", s->events()}});
      if (parts[2] == "trace")
        return json_reply(200, trace_to_json(s->trace(), s->policy().bundle->model));
      if (parts[2] == "model") return json_reply(200, s->policy().bundle->model.document());
    }
    throw ServiceError(404, "no route for " + target);
  } catch (const ServiceError& e) {
    return json_reply(e.status(), error_doc(e.status(), e.what()));
  } catch (const std::exception& e) {
    return json_reply(500, error_doc(500, e.what()));
  }
}

// ---------------------------------------------------------------------------

struct Server::Impl {
  SessionManager& manager;
  std::string address;
  unsigned short port;
  net::io_context ioc;
  tcp::acceptor acceptor{ioc};
  std::thread accept_thread;
  std::atomic<bool> stopping{false};
  std::mutex conn_mutex;
  std::vector<std::shared_ptr<tcp::socket>> sockets;
  std::vector<std::thread> threads;

  Impl(SessionManager& m, std::string addr, unsigned short p)
      : manager(m), address(std::move(addr)), port(p) {}

  void accept_loop() {
    while (!stopping) {
      auto sock = std::make_shared<tcp::socket>(ioc);
      boost::system::error_code ec;
      acceptor.accept(*sock, ec);
      if (ec) {
        if (stopping) break;
        continue;
      }
      std::lock_guard lock(conn_mutex);
      sockets.push_back(sock);
      threads.emplace_back([this, sock] { handle(sock); });
    }
  }

  void handle(const std::shared_ptr<tcp::socket>& sock) {
    try {
      beast::flat_buffer buffer;
      for (;;) {
        http::request<http::string_body> req;
        boost::system::error_code ec;
        http::read(*sock, buffer, req, ec);
        if (ec) break;
        const auto parts = split_path(std::string(req.target()));
        if (websocket::is_upgrade(req) && parts.size() == 3 && parts[0] == "sessions" &&
            parts[2] == "events") {
          if (auto s = manager.find(parts[1])) {
            stream_events(*sock, std::move(req), s);
            return;
          }
        }
        const auto reply = route_request(manager, std::string(req.method_string()),
                                         std::string(req.target()), req.body());
        http::response<http::string_body> res{static_cast<http::status>(reply.status),
                                              req.version()};
        res.set(http::field::server, "trustsyn");
        res.set(http::field::content_type, reply.content_type);
        res.keep_alive(req.keep_alive());
        res.body() = reply.body;
        res.prepare_payload();
        http::write(*sock, res, ec);
        if (ec || !res.keep_alive()) break;
      }
      boost::system::error_code ignored;
      sock->shutdown(tcp::socket::shutdown_send, ignored);
    } catch (const std::exception&) {
      // connection dropped
    }
  }

  void stream_events(tcp::socket& sock, http::request<http::string_body> req,
                     const std::shared_ptr<Session>& session) {
    websocket::stream<tcp::socket&> ws(sock);
    ws.accept(req);
    ws.text(true);
    std::size_t next = 0;
    while (!stopping) {
      bool closed = false;
      auto events = session->events_since(next, std::chrono::milliseconds(200), &closed);
      for (const auto& e : events) ws.write(net::buffer(e.dump()));
      next += events.size();
      if (closed) {
        ws.close(websocket::close_code::normal);
        return;
      }
    }
    boost::system::error_code ec;
    ws.close(websocket::close_code::going_away, ec);
  }
};

Server::Server(SessionManager& manager, std::string address, unsigned short port)
    : impl_(std::make_unique<Impl>(manager, std::move(address), port)) {}

Server::~Server() { stop(); }

unsigned short Server::start() {
  auto& im = *impl_;
  const tcp::endpoint ep{net::ip::make_address(im.address), im.port};
  im.acceptor.open(ep.protocol());
  im.acceptor.set_option(net::socket_base::reuse_address(true));
  im.acceptor.bind(ep);
  im.acceptor.listen();
  const unsigned short bound = im.acceptor.local_endpoint().port();
  im.accept_thread = std::thread([&im] { im.accept_loop(); });
  return bound;
}

void Server::stop() {
  auto& im = *impl_;
  if (im.stopping.exchange(true)) {
    wait();
    return;
  }
  if (im.acceptor.is_open()) ::shutdown(im.acceptor.native_handle(), SHUT_RDWR);
  {
    std::lock_guard lock(im.conn_mutex);
    for (auto& s : im.sockets)
      if (s->is_open()) ::shutdown(s->native_handle(), SHUT_RDWR);
  }
  wait();
  boost::system::error_code ec;
  im.acceptor.close(ec);
}

void Server::wait() {
  auto& im = *impl_;
  if (im.accept_thread.joinable()) im.accept_thread.join();
  std::vector<std::thread> threads;
  {
    std::lock_guard lock(im.conn_mutex);
    threads.swap(im.threads);
  }
  for (auto& t : threads)
    if (t.joinable()) t.join();
}

}  // namespace trustsyn
