#pragma once

// HTTP API over the trajectory engine. Service::handle is a pure request ->
// response mapping (apart from the series registry), so it can be tested and
// replayed without a socket; HttpServer binds it to cpp-httplib.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <shared_mutex>
#include <string>

#include "lode/latent_ode.hpp"

namespace lode::service {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t default_members = 30;
  double default_horizon = 1.5;
  double hop_threshold = 1.0;
  double risk_threshold = 0.5;
  std::size_t max_members = 2000;
  std::size_t max_proposals = 200000;
  std::size_t threads = 0;  // worker threads per ensemble, 0 = hardware concurrency
};

struct Request {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
};

struct Response {
  int status = 200;
  std::string body;
};

class Service {
 public:
  Service(model::ModelParams params, std::string checkpoint_sha256, ServiceConfig config = {});

  /// Thread-safe. Every body is a JSON document; errors carry
  /// {"error": {"code", "message", "field"?}}.
  Response handle(const Request& request);

  std::size_t series_count() const;
  const ServiceConfig& config() const { return config_; }

 private:
  Response health() const;
  Response put_series(const Request& r);
  Response get_series(const std::string& id, const Request& r) const;
  Response get_ensemble(const std::string& id, const Request& r) const;
  Response post_query(const std::string& id, const Request& r) const;
  Response get_risk(const std::string& id, const Request& r) const;
  IrregularSeries lookup(const std::string& id) const;

  const model::ModelParams params_;
  const std::string checkpoint_sha256_;
  const ServiceConfig config_;
  const std::chrono::steady_clock::time_point started_;
  mutable std::shared_mutex registry_mutex_;
  std::map<std::string, IrregularSeries> registry_;
  std::uint64_t next_id_ = 1;
};

class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds host:port (port 0 picks a free one) and returns the bound port.
  int bind(const std::string& host, int port);
  /// Blocks until stop() is called.
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace lode::service
