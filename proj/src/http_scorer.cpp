#include <httplib.h>
#include <json.hpp>

#include "alignforge/direction_aggregator.hpp"
#include "alignforge/eval_harness.hpp"

namespace alignforge::eval {

struct HttpScorer::Impl {
  HttpScorerConfig config;
  httplib::Client client;

  explicit Impl(HttpScorerConfig cfg) : config(std::move(cfg)), client(config.host) {
    const auto timeout = std::chrono::milliseconds(config.timeout_ms);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
  }
};

HttpScorer::HttpScorer(HttpScorerConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

HttpScorer::~HttpScorer() = default;

LogProbQuad HttpScorer::score(const personas::PersonaExample& example) {
  nlohmann::json body{{"id", example.id},
                      {"post", example.post},
                      {"chosen", example.chosen},
                      {"rejected", example.rejected},
                      {"history", aggregate::persona_history_text(example)}};
  auto result = impl_->client.Post(impl_->config.path, body.dump(), "application/json");
  if (!result)
    throw IoError("http scorer: " + httplib::to_string(result.error()) + " for " +
                  impl_->config.host);
  if (result->status != 200)
    throw IoError("http scorer: status " + std::to_string(result->status));
  auto reply = nlohmann::json::parse(result->body, nullptr, false);
  if (reply.is_discarded()) throw IoError("http scorer: reply is not JSON");
  LogProbQuad quad;
  quad.id = example.id;
  try {
    quad.lp_policy_w = reply.at("lp_policy_w").get<double>();
    quad.lp_policy_l = reply.at("lp_policy_l").get<double>();
    quad.lp_ref_w = reply.at("lp_ref_w").get<double>();
    quad.lp_ref_l = reply.at("lp_ref_l").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("http scorer: malformed reply: ") + e.what());
  }
  quad.validate();
  return quad;
}

}  // namespace alignforge::eval
