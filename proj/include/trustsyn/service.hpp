#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "trustsyn/policy.hpp"
#include "trustsyn/runtime.hpp"

namespace trustsyn {

inline constexpr int kApiVersion = 1;

/// Error carrying the HTTP status it maps to.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, const std::string& what) : std::runtime_error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

enum class SessionMode : std::uint8_t { kAuto, kInteractive };

class Session {
 public:
  Session(std::string id, SessionMode mode, std::shared_ptr<const LoadedPolicy> policy,
          EpisodeOptions options, std::uint64_t seed);

  const std::string& id() const { return id_; }
  SessionMode mode() const { return mode_; }

  /// Advances the session by one request. Strictly serialized per session.
  Json step(const Json& request);
  /// Latest view; does not wait for a step in progress.
  std::shared_ptr<const Json> view() const;
  Json summary() const;

  /// Events with sequence number >= from; blocks until one exists, the
  /// session ends, or the timeout passes.
  std::vector<Json> events_since(std::size_t from, std::chrono::milliseconds timeout, bool* closed);
  std::vector<Json> events() const;
  Trace trace() const;
  const LoadedPolicy& policy() const { return *policy_; }

 private:
  Json make_view() const;
  void publish(std::string type, Json payload);

  std::string id_;
  SessionMode mode_;
  std::shared_ptr<const LoadedPolicy> policy_;
  EpisodeOptions options_;
  std::unique_ptr<Episode> episode_;
  std::vector<int> phase_of_;
  int phases_ = 0;

  mutable std::mutex step_mutex_;
  std::shared_ptr<const Json> snapshot_;
  mutable std::mutex event_mutex_;
  std::condition_variable event_cv_;
  std::vector<Json> events_;
};

struct ServiceOptions {
  std::optional<std::string> default_policy;  // used when a request names none
  std::optional<std::filesystem::path> trace_dir;
  std::optional<std::filesystem::path> ui_dir;
  bool allow_policy_paths = true;
};

/// Transport-independent session registry.
class SessionManager {
 public:
  explicit SessionManager(ServiceOptions options = {});

  Json create(const Json& request);
  Json step(const std::string& id, const Json& request);
  Json get(const std::string& id) const;
  Json list() const;
  std::shared_ptr<Session> find(const std::string& id) const;
  const ServiceOptions& options() const { return options_; }

 private:
  std::shared_ptr<const LoadedPolicy> resolve_policy(const Json& request);
  void persist(const Session& s) const;

  ServiceOptions options_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::map<std::string, std::shared_ptr<const LoadedPolicy>> policy_cache_;
  std::uint64_t next_id_ = 1;
};

struct HttpReply {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

/// Routes one HTTP request; used by the server and directly by tests.
HttpReply route_request(SessionManager& manager, const std::string& method,
                        const std::string& target, const std::string& body);

/// HTTP + WebSocket front end, one thread per connection.
class Server {
 public:
  Server(SessionManager& manager, std::string address, unsigned short port);
  ~Server();

  /// Binds and starts accepting in the background; returns the bound port.
  unsigned short start();
  void stop();
  void wait();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace trustsyn
