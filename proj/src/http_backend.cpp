#include <condition_variable>
#include <cstdlib>
#include <memory>
#include <mutex>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "alignforge/annotation.hpp"

namespace alignforge::annotation {

namespace {

// httplib serializes requests per client, so the in-flight cap is realized
// as a pool of clients checked out per request.
class ClientPool {
 public:
  ClientPool(const std::string& host, int size, int timeout_ms) {
    if (size < 1) size = 1;
    for (int i = 0; i < size; ++i) {
      auto client = std::make_unique<httplib::Client>(host);
      const auto timeout = std::chrono::milliseconds(timeout_ms);
      client->set_connection_timeout(timeout);
      client->set_read_timeout(timeout);
      client->set_write_timeout(timeout);
      idle_.push_back(std::move(client));
    }
  }

  std::unique_ptr<httplib::Client> acquire() {
    std::unique_lock<std::mutex> lock(mu_);
    cv_.wait(lock, [&] { return !idle_.empty(); });
    auto client = std::move(idle_.back());
    idle_.pop_back();
    return client;
  }

  void release(std::unique_ptr<httplib::Client> client) {
    {
      std::lock_guard<std::mutex> lock(mu_);
      idle_.push_back(std::move(client));
    }
    cv_.notify_one();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::vector<std::unique_ptr<httplib::Client>> idle_;
};

struct ClientLease {
  ClientPool& pool;
  std::unique_ptr<httplib::Client> client;
  explicit ClientLease(ClientPool& p) : pool(p), client(p.acquire()) {}
  ~ClientLease() { pool.release(std::move(client)); }
};

}  // namespace

struct HttpBackend::Impl {
  HttpBackendConfig config;
  ClientPool pool;

  explicit Impl(HttpBackendConfig cfg)
      : config(std::move(cfg)), pool(config.host, config.in_flight_cap, config.timeout_ms) {}
};

HttpBackend::HttpBackend(HttpBackendConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

HttpBackend::~HttpBackend() = default;

std::string HttpBackend::complete(const AnnotationRequest& request) {
  ClientLease lease(impl_->pool);

  nlohmann::json body{{"model", impl_->config.model},
                      {"messages", nlohmann::json::array({nlohmann::json{
                                       {"role", "user"}, {"content", request.prompt}}})}};
  httplib::Headers headers;
  if (const char* token = std::getenv(impl_->config.token_env.c_str());
      token != nullptr && *token != '\0') {
    headers.emplace("Authorization", std::string("Bearer ") + token);
  }
  auto result =
      lease.client->Post(impl_->config.path, headers, body.dump(), "application/json");
  if (!result)
    throw BackendError("http backend: " + httplib::to_string(result.error()) + " for " +
                       impl_->config.host);
  if (result->status != 200)
    throw BackendError("http backend: status " + std::to_string(result->status));

  auto reply = nlohmann::json::parse(result->body, nullptr, false);
  if (reply.is_discarded()) throw BackendError("http backend: reply is not JSON");
  try {
    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception&) {
    throw BackendError("http backend: reply lacks choices[0].message.content");
  }
}

}  // namespace alignforge::annotation
