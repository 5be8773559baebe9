#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "cwb/json.hpp"

namespace cwb {

struct ServiceConfig {
  std::optional<std::string> state_dir;  // persist sessions as JSON here
  std::size_t max_upload_bytes = std::size_t{64} << 20;
  std::chrono::seconds idle_ttl{3600};
};

struct Request {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::optional<std::string> session;  // X-Session header
  std::string body;
  std::string content_type;
};

struct Response {
  int status = 200;
  json body;
  std::string session;
  std::uint64_t mutation_counter = 0;
};

// Session-scoped HTTP API over the engine. Transport-free: `handle` maps a
// request onto engine calls, so it can be exercised without sockets.
class Service {
public:
  explicit Service(ServiceConfig config = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  Response handle(const Request& request);

  // Drops sessions idle for longer than the configured ttl; returns how many.
  std::size_t evict_idle(std::chrono::steady_clock::time_point now = std::chrono::steady_clock::now());
  std::size_t n_sessions() const;

  struct Session;

private:
  // Looks up the request's session or mints a new one; `id` receives its key.
  std::shared_ptr<Session> open_session(const Request& request, std::string& id);
  void persist(const std::string& id, const Session& s) const;
  void load_persisted();

  ServiceConfig config_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
};

// cpp-httplib front end. `start` binds and serves on a background thread.
class HttpServer {
public:
  explicit HttpServer(Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Port 0 picks a free port. Returns the bound port.
  int start(const std::string& host, int port);
  // Blocks until stop() is called from another thread or a signal handler.
  void run(const std::string& host, int port);
  void stop();

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace cwb
