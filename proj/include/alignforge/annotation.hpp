#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "alignforge/common.hpp"
#include "alignforge/preference_space.hpp"
#include "alignforge/prompts.hpp"

namespace alignforge::annotation {

enum class Task : std::uint8_t { Intensity, Demographic, DirectionInference };

std::string to_string(Task t);

struct AnnotationRequest {
  Task task = Task::Intensity;
  std::string request_id;
  std::string post;
  std::vector<std::string> responses;
  std::optional<std::string> dimension;
  std::string prompt;
};

// Transient backend failure; the annotator retries these.
class BackendError : public std::runtime_error {
 public:
  explicit BackendError(const std::string& msg) : std::runtime_error(msg) {}
};

// A backend turns a rendered request into a raw reply string. Backends must
// be callable from multiple workers at once.
class AnnotatorBackend {
 public:
  virtual ~AnnotatorBackend() = default;
  virtual std::string complete(const AnnotationRequest& request) = 0;
  // External backends get backoff sleeps between retries; local ones don't.
  virtual bool is_external() const { return false; }
};

// Test corpora may plant ground-truth levels as [[d:<id>=<level>]] headers.
// The mock backend reads them; prompt rendering strips them.
std::unordered_map<std::string, int> parse_planted_levels(std::string_view text);
std::string strip_planted_headers(std::string_view text);

// Option number in the intensity prompt -> ordered level, and back. The
// prompt's options are (1) high/likes, (2) low/dislikes, (3) cannot reflect;
// levels order them as strength 1 < 2 < 3.
int option_to_level(int option);
int level_to_option(int level);

// Extracts the last balanced {...} block that parses as a JSON object.
std::optional<nlohmann::json> extract_last_json_object(std::string_view text);

// The 48-attribute table of the demographic prompt: display names, the
// registry dimension each maps to (or none for free-text attributes such as
// Occupation), and the two option strings.
struct DemographicAttribute {
  std::string name;
  std::string dim_id;  // empty for free-text attributes
  std::string positive_option;
  std::string negative_option;
  bool directional() const { return !dim_id.empty(); }
};

class DemographicAttributes {
 public:
  static DemographicAttributes load_file(const std::filesystem::path& path);

  const DemographicAttribute* find(std::string_view name) const;
  const DemographicAttribute* find_by_dim(std::string_view dim_id) const;
  const std::vector<DemographicAttribute>& all() const { return attrs_; }

 private:
  std::vector<DemographicAttribute> attrs_;
  std::unordered_map<std::string, std::size_t> by_name_;
  std::unordered_map<std::string, std::size_t> by_dim_;
};

// Deterministic stand-in for the annotation LLM. Planted headers win; other
// (response, dimension) pairs get a seed-derived level.
class MockBackend : public AnnotatorBackend {
 public:
  MockBackend(std::uint64_t seed, const space::DimensionRegistry& registry,
              const DemographicAttributes& attrs, int max_level = 3);

  std::string complete(const AnnotationRequest& request) override;

  int intensity_level(const std::string& response, const std::string& dim_id) const;

 private:
  std::uint64_t seed_;
  const space::DimensionRegistry& registry_;
  const DemographicAttributes& attrs_;
  int max_level_;
};

// Canned replies keyed by request id; unknown ids raise BackendError.
// Covers the line-delimited replay half of the external-backend contract.
class ReplayBackend : public AnnotatorBackend {
 public:
  static ReplayBackend load_file(const std::filesystem::path& path);
  explicit ReplayBackend(std::unordered_map<std::string, std::string> replies)
      : replies_(std::move(replies)) {}

  std::string complete(const AnnotationRequest& request) override;

 private:
  std::unordered_map<std::string, std::string> replies_;
};

struct HttpBackendConfig {
  std::string host;        // e.g. http://127.0.0.1:8080
  std::string path = "/v1/chat/completions";
  std::string model = "annotator";
  int timeout_ms = 30000;
  int in_flight_cap = 4;
  std::string token_env = "ALIGNFORGE_ANNOTATOR_TOKEN";
};

// Chat-completion-style wire backend. Bounded timeout, bounded concurrent
// requests, bearer token from the environment.
class HttpBackend : public AnnotatorBackend {
 public:
  explicit HttpBackend(HttpBackendConfig config);
  ~HttpBackend() override;

  std::string complete(const AnnotationRequest& request) override;
  bool is_external() const override { return true; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct RetryPolicy {
  int max_retries = 2;
  int initial_backoff_ms = 100;
  double backoff_factor = 2.0;
};

// Append-only JSONL audit of every raw annotator exchange.
class AuditLog {
 public:
  explicit AuditLog(const std::filesystem::path& path);

  void record(const AnnotationRequest& request, const std::string& reply, int attempt);

 private:
  std::mutex mu_;
  std::ofstream out_;
  std::filesystem::path path_;
};

struct DemoPersona {
  std::string narrative;
  space::DirectionVector directions;
  std::set<std::string> like_tags;
  std::set<std::string> dislike_tags;
  std::string rationale;
};

struct DemoOutcome {
  std::optional<DemoPersona> persona;
  std::string diagnostic;  // set when persona is absent
};

struct UgcItem {
  std::string post;
  std::string response;
};

struct PairItem {
  std::string post;
  std::string chosen;
  std::string rejected;
};

// Drives a backend through the three annotation tasks with retries, option
// recoding, structured-reply parsing, and audit logging.
class Annotator {
 public:
  Annotator(AnnotatorBackend& backend, const space::DimensionRegistry& registry,
            const DemographicAttributes& attrs, const PromptLibrary& prompts,
            RetryPolicy retry = {}, AuditLog* audit = nullptr, int max_level = 3);

  // Level in [1, max_level]; nullopt once retries are exhausted.
  std::optional<int> annotate_intensity(const std::string& post, const std::string& response,
                                        const std::string& dim_id, const std::string& request_id);

  // All registry dimensions for one response; nullopt if any is unannotatable.
  std::optional<space::IntensityVector> annotate_response(const std::string& post,
                                                          const std::string& response,
                                                          const std::string& request_key);

  DemoOutcome annotate_demo_persona(const std::string& post, const std::string& chosen,
                                    const std::string& rejected,
                                    const space::DirectionVector& target,
                                    const std::string& request_id);

  // Per-example direction vectors: UGC via the median heuristic, pairs via
  // intensity comparison. Throws ValidationError on an empty component.
  std::vector<space::DirectionVector> infer_ugc_directions(std::span<const UgcItem> examples,
                                                           const std::string& request_key);
  std::vector<space::DirectionVector> infer_pair_directions(std::span<const PairItem> examples,
                                                            const std::string& request_key);

  const space::DimensionRegistry& registry() const { return registry_; }
  int max_level() const { return max_level_; }

 private:
  std::string complete_with_retry(AnnotationRequest& request,
                                  const std::function<bool(const std::string&)>& accept);

  AnnotatorBackend& backend_;
  const space::DimensionRegistry& registry_;
  const DemographicAttributes& attrs_;
  const PromptLibrary& prompts_;
  RetryPolicy retry_;
  AuditLog* audit_;
  int max_level_;
};

// Parses the structured demographic reply into a persona. Throws
// ValidationError with a diagnostic on names or options outside the
// registry; returns nullopt for malformed (retriable) replies.
std::optional<DemoPersona> parse_demo_reply(const std::string& reply,
                                            const space::DimensionRegistry& registry,
                                            const DemographicAttributes& attrs);

}  // namespace alignforge::annotation
