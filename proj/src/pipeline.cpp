#include "alignforge/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "alignforge/digest.hpp"
#include "alignforge/direction_aggregator.hpp"
#include "alignforge/eval_harness.hpp"
#include "alignforge/jsonl.hpp"
#include "alignforge/rng.hpp"

namespace alignforge::pipeline {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config

namespace {

bool parse_bool(const std::string& value, const std::string& key) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + value + "'");
}

std::string unquote(std::string value) {
  if (value.size() >= 2 && ((value.front() == '"' && value.back() == '"') ||
                            (value.front() == '\'' && value.back() == '\'')))
    return value.substr(1, value.size() - 2);
  return value;
}

}  // namespace

void RunConfig::apply_entry(const std::string& key, const std::string& raw_value) {
  const std::string value = unquote(trim(raw_value));
  if (key == "L" || key == "max_level")
    max_level = std::stoi(value);
  else if (key == "K" || key == "clusters")
    clusters = std::stoi(value);
  else if (key == "t" || key == "similarity_threshold")
    similarity_threshold = Rational::from_decimal(value);
  else if (key == "H" || key == "persona_examples")
    persona_examples = std::stoi(value);
  else if (key == "t1")
    t1 = Rational::from_decimal(value);
  else if (key == "t2")
    t2 = Rational::from_decimal(value);
  else if (key == "beta")
    beta = std::stod(value);
  else if (key == "seed")
    seed = std::stoull(value);
  else if (key == "pairs_per_record")
    pairs_per_record = std::stoi(value);
  else if (key == "in_flight_cap")
    in_flight_cap = std::stoi(value);
  else if (key == "threads")
    threads = std::stoi(value);
  else if (key == "retry_max")
    retry_max = std::stoi(value);
  else if (key == "demo_attempts")
    demo_attempts = std::stoi(value);
  else if (key == "per_component_vote")
    per_component_vote = parse_bool(value, key);
  else if (key == "subsample_lo")
    subsample_range = {std::stoi(value), subsample_range ? subsample_range->second : 4};
  else if (key == "subsample_hi")
    subsample_range = {subsample_range ? subsample_range->first : 0, std::stoi(value)};
  else if (key == "backend")
    backend = value;
  else if (key == "backend_host")
    backend_host = value;
  else if (key == "backend_model")
    backend_model = value;
  else if (key == "backend_replay_file")
    backend_replay_file = value;
  else if (key == "data_dir")
    data_dir = value;
  else
    throw ConfigError("unknown config key '" + key + "'");
}

RunConfig RunConfig::load_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  RunConfig config;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    try {
      config.apply_entry(trim(stripped.substr(0, eq)), stripped.substr(eq + 1));
    } catch (const std::exception& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return config;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j{{"L", max_level},
                   {"K", clusters},
                   {"t", similarity_threshold.to_double()},
                   {"H", persona_examples},
                   {"t1", t1.to_double()},
                   {"t2", t2.to_double()},
                   {"beta", beta},
                   {"seed", seed},
                   {"pairs_per_record", pairs_per_record},
                   {"in_flight_cap", in_flight_cap},
                   {"threads", threads},
                   {"retry_max", retry_max},
                   {"demo_attempts", demo_attempts},
                   {"per_component_vote", per_component_vote},
                   {"backend", backend}};
  if (subsample_range) {
    j["subsample_lo"] = subsample_range->first;
    j["subsample_hi"] = subsample_range->second;
  }
  if (!backend_host.empty()) j["backend_host"] = backend_host;
  if (!backend_replay_file.empty()) j["backend_replay_file"] = backend_replay_file;
  return j;
}

void RunConfig::save(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write config " + path.string());
  const auto j = to_json();
  for (const auto& [key, value] : j.items()) {
    if (value.is_string())
      out << key << " = \"" << value.get<std::string>() << "\"\n";
    else
      out << key << " = " << value.dump() << "\n";
  }
}

fs::path RunConfig::resolved_data_dir() const {
  if (!data_dir.empty()) return data_dir;
  if (const char* env = std::getenv("ALIGNFORGE_DATA_DIR"); env != nullptr && *env != '\0')
    return env;
  return ALIGNFORGE_SOURCE_DATA_DIR;
}

PipelineContext PipelineContext::load(const RunConfig& config) {
  const fs::path dir = config.resolved_data_dir();
  return PipelineContext{
      space::DimensionRegistry::load_file(dir / "dimensions.tsv"),
      annotation::DemographicAttributes::load_file(dir / "demographic_attributes.tsv"),
      annotation::PromptLibrary::load(dir / "prompts")};
}

std::unique_ptr<annotation::AnnotatorBackend> make_backend(const RunConfig& config,
                                                           const PipelineContext& context) {
  if (config.backend == "mock")
    return std::make_unique<annotation::MockBackend>(config.seed, context.registry,
                                                     context.attributes, config.max_level);
  if (config.backend == "replay") {
    if (config.backend_replay_file.empty())
      throw ConfigError("replay backend needs backend_replay_file");
    return std::make_unique<annotation::ReplayBackend>(
        annotation::ReplayBackend::load_file(config.backend_replay_file));
  }
  if (config.backend == "http") {
    if (config.backend_host.empty()) throw ConfigError("http backend needs backend_host");
    annotation::HttpBackendConfig http;
    http.host = config.backend_host;
    http.model = config.backend_model;
    http.in_flight_cap = config.in_flight_cap;
    return std::make_unique<annotation::HttpBackend>(http);
  }
  throw ConfigError("unknown backend '" + config.backend + "'");
}

// ---------------------------------------------------------------------------
// File formats

std::vector<pairs::RawRecord> load_corpus(const fs::path& path) {
  std::vector<pairs::RawRecord> records;
  std::unordered_set<std::string> seen;
  for_each_jsonl(path, [&](const Json& record, std::size_t lineno) {
    pairs::RawRecord raw;
    try {
      raw.id = record.at("id").get<std::string>();
      raw.post = record.at("post").get<std::string>();
      raw.responses = record.at("responses").get<std::vector<std::string>>();
    } catch (const Json::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (raw.responses.size() < 2)
      throw IoError(path.string() + ":" + std::to_string(lineno) +
                    ": record needs at least 2 responses");
    if (!seen.insert(raw.id).second)
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": duplicate record id '" +
                    raw.id + "'");
    records.push_back(std::move(raw));
  });
  return records;
}

void write_intensities(const fs::path& path, const std::vector<pairs::AnnotatedRecord>& records) {
  JsonlWriter writer(path);
  for (const auto& annotated : records) {
    Json levels = Json::array();
    for (const auto& iv : annotated.intensities) {
      if (iv)
        levels.push_back(iv->levels);
      else
        levels.push_back(nullptr);
    }
    writer.write(Json{{"id", annotated.record.id}, {"levels", std::move(levels)}});
  }
}

std::vector<pairs::AnnotatedRecord> load_annotated_corpus(const fs::path& corpus_path,
                                                          const fs::path& intensities_path,
                                                          int max_level) {
  auto records = load_corpus(corpus_path);
  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < records.size(); ++i) by_id.emplace(records[i].id, i);

  std::vector<pairs::AnnotatedRecord> annotated(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) annotated[i].record = records[i];

  std::vector<bool> filled(records.size(), false);
  for_each_jsonl(intensities_path, [&](const Json& record, std::size_t lineno) {
    const std::string id = record.at("id").get<std::string>();
    auto it = by_id.find(id);
    if (it == by_id.end())
      throw IoError(intensities_path.string() + ":" + std::to_string(lineno) +
                    ": unknown record id '" + id + "'");
    auto& slot = annotated[it->second];
    const auto& levels = record.at("levels");
    if (levels.size() != slot.record.responses.size())
      throw IoError(intensities_path.string() + ":" + std::to_string(lineno) +
                    ": level rows do not match response count for '" + id + "'");
    for (const auto& row : levels) {
      if (row.is_null()) {
        slot.intensities.push_back(std::nullopt);
        continue;
      }
      space::IntensityVector iv;
      iv.max_level = max_level;
      iv.levels = row.get<std::vector<int>>();
      iv.validate();
      slot.intensities.push_back(std::move(iv));
    }
    filled[it->second] = true;
  });
  for (std::size_t i = 0; i < records.size(); ++i)
    if (!filled[i])
      throw IoError(intensities_path.string() + ": no intensities for record '" + records[i].id +
                    "'");
  return annotated;
}

void write_pairs(const fs::path& path, const std::vector<pairs::PreferencePair>& out) {
  JsonlWriter writer(path);
  for (const auto& pair : out) {
    writer.write(Json{{"id", pair.record_id},
                      {"post", pair.post},
                      {"chosen", pair.chosen},
                      {"rejected", pair.rejected},
                      {"direction", pair.direction.to_chars()},
                      {"intensity_w", pair.intensity_w.levels},
                      {"intensity_l", pair.intensity_l.levels},
                      {"cluster_w", pair.cluster_w},
                      {"cluster_l", pair.cluster_l}});
  }
}

std::vector<pairs::PreferencePair> load_pairs(const fs::path& path, int max_level) {
  std::vector<pairs::PreferencePair> out;
  for_each_jsonl(path, [&](const Json& record, std::size_t lineno) {
    pairs::PreferencePair pair;
    try {
      pair.record_id = record.at("id").get<std::string>();
      pair.post = record.at("post").get<std::string>();
      pair.chosen = record.at("chosen").get<std::string>();
      pair.rejected = record.at("rejected").get<std::string>();
      pair.direction = space::DirectionVector::from_chars(record.at("direction").get<std::string>());
      pair.intensity_w.levels = record.at("intensity_w").get<std::vector<int>>();
      pair.intensity_l.levels = record.at("intensity_l").get<std::vector<int>>();
      pair.intensity_w.max_level = max_level;
      pair.intensity_l.max_level = max_level;
      pair.cluster_w = record.value("cluster_w", -1);
      pair.cluster_l = record.value("cluster_l", -1);
    } catch (const Json::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    out.push_back(std::move(pair));
  });
  return out;
}

// ---------------------------------------------------------------------------
// Stage manifests

namespace {

nlohmann::json digest_map(const std::vector<fs::path>& paths) {
  nlohmann::json m = nlohmann::json::object();
  for (const auto& p : paths) m[p.filename().string()] = sha256_file(p);
  return m;
}

nlohmann::json make_manifest(const std::string& stage, const RunConfig& config,
                             const std::vector<fs::path>& inputs,
                             const std::vector<fs::path>& outputs, nlohmann::json counts) {
  const auto config_json = config.to_json();
  return nlohmann::json{{"stage", stage},
                        {"run_id", sha256_hex(config_json.dump()).substr(0, 16)},
                        {"config", config_json},
                        {"inputs", digest_map(inputs)},
                        {"outputs", digest_map(outputs)},
                        {"counts", std::move(counts)}};
}

nlohmann::json reject_histogram(const std::vector<pairs::RecordReject>& rejects) {
  nlohmann::json histogram = nlohmann::json::object();
  for (const auto& reject : rejects) {
    const auto& key = reject.reason;
    histogram[key] = histogram.value(key, 0) + 1;
  }
  return histogram;
}

annotation::Annotator make_annotator(const RunConfig& config, const PipelineContext& context,
                                     annotation::AnnotatorBackend& backend,
                                     annotation::AuditLog* audit) {
  annotation::RetryPolicy retry;
  retry.max_retries = config.retry_max;
  return annotation::Annotator(backend, context.registry, context.attributes, context.prompts,
                               retry, audit, config.max_level);
}

}  // namespace

nlohmann::json run_annotate_stage(const RunConfig& config, const PipelineContext& context,
                                  const fs::path& corpus, const fs::path& out_intensities,
                                  const fs::path& audit_path) {
  auto records = load_corpus(corpus);
  auto backend = make_backend(config, context);
  std::optional<annotation::AuditLog> audit;
  if (!audit_path.empty()) audit.emplace(audit_path);
  auto annotator = make_annotator(config, context, *backend, audit ? &*audit : nullptr);

  auto annotated = pairs::annotate_corpus(records, annotator, config.threads);
  write_intensities(out_intensities, annotated);

  std::size_t unannotatable = 0;
  for (const auto& record : annotated)
    for (const auto& iv : record.intensities)
      if (!iv) ++unannotatable;

  return make_manifest("annotate", config, {corpus}, {out_intensities},
                       nlohmann::json{{"records_in", records.size()},
                                      {"responses_unannotatable", unannotatable}});
}

nlohmann::json run_build_pairs_stage(const RunConfig& config, const fs::path& corpus,
                                     const fs::path& intensities, const fs::path& out_pairs) {
  auto annotated = load_annotated_corpus(corpus, intensities, config.max_level);

  pairs::BuildConfig build;
  build.max_level = config.max_level;
  build.clusters = config.clusters;
  build.seed = config.seed;
  build.pairs_per_record = config.pairs_per_record;
  build.threads = config.threads;
  auto result = pairs::build_pairs(annotated, build);
  write_pairs(out_pairs, result.pairs);

  return make_manifest("build-pairs", config, {corpus, intensities}, {out_pairs},
                       nlohmann::json{{"records_in", result.records_in},
                                      {"pairs_out", result.pairs.size()},
                                      {"dropped_all_neutral", result.dropped_all_neutral},
                                      {"rejects", reject_histogram(result.rejects)}});
}

nlohmann::json run_build_personas_stage(const RunConfig& config, const PipelineContext& context,
                                        const fs::path& corpus, const fs::path& intensities,
                                        const fs::path& pairs_path, const fs::path& out_dataset,
                                        const fs::path& audit_path) {
  auto annotated = load_annotated_corpus(corpus, intensities, config.max_level);
  auto anchors = load_pairs(pairs_path, config.max_level);

  personas::CorpusIndex corpus_index(annotated, config.max_level);
  auto backend = make_backend(config, context);
  std::optional<annotation::AuditLog> audit;
  if (!audit_path.empty()) audit.emplace(audit_path);
  auto annotator = make_annotator(config, context, *backend, audit ? &*audit : nullptr);

  personas::PersonaConfig persona;
  persona.similarity_threshold = config.similarity_threshold;
  persona.max_examples = config.persona_examples;
  persona.seed = config.seed;
  persona.threads = config.threads;
  persona.demo_attempts = config.demo_attempts;
  persona.subsample_range = config.subsample_range;
  auto result = personas::build_personas(anchors, corpus_index, annotator, persona);

  JsonlWriter writer(out_dataset);
  for (const auto& example : result.examples) writer.write(personas::to_json(example));

  return make_manifest("build-personas", config, {corpus, intensities, pairs_path}, {out_dataset},
                       nlohmann::json{{"anchors_in", result.anchors_in},
                                      {"examples_out", result.examples.size()},
                                      {"demo_missing", result.demo_missing},
                                      {"rejects", reject_histogram(result.rejects)}});
}

nlohmann::json run_aggregate_stage(const RunConfig& config, const PipelineContext& context,
                                   const fs::path& dataset, const fs::path& out_pba) {
  aggregate::AggregationConfig agg;
  agg.t1 = config.t1;
  agg.t2 = config.t2;
  agg.per_component_vote = config.per_component_vote;
  agg.validate();

  std::size_t records = 0;
  JsonlWriter writer(out_pba);
  for_each_jsonl(dataset, [&](const Json& record, std::size_t) {
    auto example = personas::example_from_json(record, config.max_level);
    const auto inputs = aggregate::collect_aggregation_inputs(example, config.per_component_vote);
    const auto unified = aggregate::aggregate_directions(inputs, agg);
    const auto rendered = aggregate::render_description(unified, context.registry);
    writer.write(Json{{"id", example.id},
                      {"ptilde", unified.to_chars()},
                      {"description", rendered.text},
                      {"prompt_pba", aggregate::build_pba_prompt(context.prompts, rendered.text,
                                                                 example.post)},
                      {"prompt_ica", aggregate::build_ica_prompt(context.prompts, example)}});
    ++records;
  });

  return make_manifest("aggregate", config, {dataset}, {out_pba},
                       nlohmann::json{{"records", records}});
}

// ---------------------------------------------------------------------------
// Validation

namespace {

// The checks below re-derive everything from raw JSON with plain loops so a
// pipeline bug cannot hide behind shared library code.

char compare_levels(int w, int l) { return w > l ? '+' : (w < l ? '-' : '0'); }

char median_rule(int level, int max_level) {
  const int median = (max_level + 1) / 2;
  return level > median ? '+' : (level < median ? '-' : '0');
}

std::string vote_chars(const std::vector<std::string>& members, std::size_t dims) {
  std::string voted(dims, '0');
  for (std::size_t d = 0; d < dims; ++d) {
    int pos = 0;
    int neu = 0;
    int neg = 0;
    for (const auto& m : members) {
      if (m[d] == '+') ++pos;
      if (m[d] == '0') ++neu;
      if (m[d] == '-') ++neg;
    }
    const int best = std::max({pos, neu, neg});
    const int winners = (pos == best ? 1 : 0) + (neu == best ? 1 : 0) + (neg == best ? 1 : 0);
    if (winners > 1)
      voted[d] = '0';
    else
      voted[d] = pos == best ? '+' : (neu == best ? '0' : '-');
  }
  return voted;
}

struct RecordCheck {
  const RunConfig& config;
  std::size_t dims;
  std::vector<std::string>& violations;
  std::size_t lineno;

  void fail(const std::string& message) {
    violations.push_back(std::to_string(lineno) + ": " + message);
  }

  bool direction_ok(const std::string& chars) {
    if (chars.size() != dims) {
      fail("direction length " + std::to_string(chars.size()) + " != D=" + std::to_string(dims));
      return false;
    }
    for (char c : chars)
      if (c != '+' && c != '0' && c != '-') {
        fail(std::string("direction contains invalid char '") + c + "'");
        return false;
      }
    return true;
  }

  bool levels_ok(const Json& value, const std::string& what) {
    if (!value.is_array() || value.size() != dims) {
      fail(what + ": intensity length mismatch");
      return false;
    }
    for (const auto& v : value) {
      if (!v.is_number_integer() || v.get<int>() < 1 || v.get<int>() > config.max_level) {
        fail(what + ": intensity level outside [1, " + std::to_string(config.max_level) + "]");
        return false;
      }
    }
    return true;
  }

  std::size_t matches(const Json& a, const Json& b) {
    std::size_t m = 0;
    for (std::size_t d = 0; d < dims; ++d)
      if (a[d].get<int>() == b[d].get<int>()) ++m;
    return m;
  }

  bool similarity_above(const Json& a, const Json& b) {
    return ratio_greater(static_cast<long long>(matches(a, b)), static_cast<long long>(dims),
                         config.similarity_threshold);
  }
};

}  // namespace

ValidationReport validate_dataset(const fs::path& dataset, const RunConfig& config,
                                  const PipelineContext& context) {
  ValidationReport report;
  const std::size_t dims = context.registry.size();
  std::set<std::string> platform_ids;
  for (const auto& dim : context.registry.dimensions())
    if (dim.category == space::Category::Platform) platform_ids.insert(dim.id);

  for_each_jsonl(dataset, [&](const Json& record, std::size_t lineno) {
    ++report.records;
    RecordCheck check{config, dims, report.violations, lineno};

    for (const char* field : {"id", "post", "chosen", "rejected", "direction"}) {
      if (!record.contains(field) || !record[field].is_string()) {
        check.fail(std::string("missing or non-string field '") + field + "'");
        return;
      }
    }
    const std::string target = record["direction"].get<std::string>();
    if (!check.direction_ok(target)) return;

    const bool has_intensity = record.contains("intensity_w") && record.contains("intensity_l");
    if (has_intensity) {
      if (!check.levels_ok(record["intensity_w"], "intensity_w") ||
          !check.levels_ok(record["intensity_l"], "intensity_l"))
        return;
      for (std::size_t d = 0; d < dims; ++d) {
        const char expected =
            compare_levels(record["intensity_w"][d].get<int>(), record["intensity_l"][d].get<int>());
        if (target[d] != expected) {
          check.fail("direction disagrees with intensity comparison at dimension " +
                     std::to_string(d));
          return;
        }
      }
    }

    std::vector<std::string> component_vectors;

    if (record.contains("ugc")) {
      if (!record["ugc"].is_array() || record["ugc"].empty()) {
        check.fail("ugc component must be a non-empty array");
        return;
      }
      std::vector<std::string> member_dirs;
      for (const auto& item : record["ugc"]) {
        if (!item.contains("direction") || !item["direction"].is_string()) {
          check.fail("ugc item lacks a direction");
          return;
        }
        const std::string dir = item["direction"].get<std::string>();
        if (!check.direction_ok(dir)) return;
        if (item.contains("intensity")) {
          if (!check.levels_ok(item["intensity"], "ugc intensity")) return;
          for (std::size_t d = 0; d < dims; ++d) {
            if (dir[d] != median_rule(item["intensity"][d].get<int>(), config.max_level)) {
              check.fail("ugc direction disagrees with the median rule at dimension " +
                         std::to_string(d));
              return;
            }
          }
          if (has_intensity && !check.similarity_above(item["intensity"], record["intensity_w"])) {
            check.fail("ugc example similarity does not exceed the threshold");
            return;
          }
        }
        member_dirs.push_back(dir);
      }
      component_vectors.push_back(vote_chars(member_dirs, dims));
    }

    if (record.contains("pairs")) {
      if (!record["pairs"].is_array() || record["pairs"].empty()) {
        check.fail("pairs component must be a non-empty array");
        return;
      }
      std::vector<std::string> member_dirs;
      for (const auto& item : record["pairs"]) {
        if (!item.contains("direction") || !item["direction"].is_string()) {
          check.fail("pair item lacks a direction");
          return;
        }
        const std::string dir = item["direction"].get<std::string>();
        if (!check.direction_ok(dir)) return;
        if (item.contains("intensity_w") && item.contains("intensity_l")) {
          if (!check.levels_ok(item["intensity_w"], "pair intensity_w") ||
              !check.levels_ok(item["intensity_l"], "pair intensity_l"))
            return;
          for (std::size_t d = 0; d < dims; ++d) {
            const char expected = compare_levels(item["intensity_w"][d].get<int>(),
                                                 item["intensity_l"][d].get<int>());
            if (dir[d] != expected) {
              check.fail("pair example direction disagrees with its intensities at dimension " +
                         std::to_string(d));
              return;
            }
          }
          if (has_intensity &&
              (!check.similarity_above(item["intensity_w"], record["intensity_w"]) ||
               !check.similarity_above(item["intensity_l"], record["intensity_l"]))) {
            check.fail("pair example similarity does not exceed the threshold on both sides");
            return;
          }
        }
        member_dirs.push_back(dir);
      }
      component_vectors.push_back(vote_chars(member_dirs, dims));
    }

    if (record.contains("demo")) {
      const auto& demo = record["demo"];
      if (!demo.contains("direction") || !demo["direction"].is_string()) {
        check.fail("demo component lacks a direction");
        return;
      }
      const std::string dir = demo["direction"].get<std::string>();
      if (!check.direction_ok(dir)) return;
      for (const char* field : {"like_tags", "dislike_tags"}) {
        if (!demo.contains(field)) continue;
        for (const auto& tag : demo[field]) {
          if (!platform_ids.count(tag.get<std::string>())) {
            check.fail("demo tag '" + tag.get<std::string>() + "' is not a platform dimension");
            return;
          }
        }
      }
      component_vectors.push_back(dir);
    }

    if (component_vectors.empty()) {
      check.fail("no persona component present");
      return;
    }

    // Brute-force consistency criterion over the raw chars.
    bool witnessed = false;
    for (std::size_t d = 0; d < dims && !witnessed; ++d) {
      if (target[d] == '0') continue;
      bool all = true;
      for (const auto& vec : component_vectors)
        if (vec[d] != target[d]) all = false;
      witnessed = all;
    }
    if (!witnessed) check.fail("preference consistency criterion fails");
  });
  return report;
}

nlohmann::json ValidationReport::to_json() const {
  return nlohmann::json{
      {"records", records}, {"ok", ok()}, {"violations", violations}};
}

// ---------------------------------------------------------------------------
// Statistics

DatasetStats dataset_stats(const fs::path& dataset, const RunConfig& config,
                           const PipelineContext& context, const fs::path& csv_dir) {
  DatasetStats stats;
  const std::size_t dims = context.registry.size();
  stats.nonneutral_per_dim.assign(dims, 0);

  std::vector<space::DirectionVector> targets;
  for_each_jsonl(dataset, [&](const Json& record, std::size_t) {
    ++stats.records;
    const auto target = space::DirectionVector::from_chars(record.at("direction").get<std::string>());
    if (target.size() != dims)
      throw ValidationError("stats: direction length mismatch for '" +
                            record.value("id", std::string("?")) + "'");
    for (std::size_t d = 0; d < dims; ++d)
      if (target[d] != space::Direction::Neutral) ++stats.nonneutral_per_dim[d];
    if (record.contains("ugc")) ++stats.with_ugc;
    if (record.contains("pairs")) ++stats.with_pairs;
    if (record.contains("demo")) ++stats.with_demo;
    targets.push_back(target);
  });

  stats.diversity = eval::diversity_count(targets);
  if (targets.size() >= 2) {
    const auto report = eval::correlation_diagnostics(targets, 0.5, config.threads);
    stats.correlation_fraction_below = report.fraction_below;
    stats.constant_dims = report.constant_dims;
    if (!csv_dir.empty()) {
      fs::create_directories(csv_dir);
      std::ofstream matrix(csv_dir / "correlation_matrix.csv", std::ios::binary | std::ios::trunc);
      matrix << "dim";
      for (const auto& dim : context.registry.dimensions()) matrix << ',' << dim.id;
      matrix << '\n';
      for (std::size_t i = 0; i < dims; ++i) {
        matrix << context.registry.at(i).id;
        for (std::size_t j = 0; j < dims; ++j) matrix << ',' << report.at(i, j);
        matrix << '\n';
      }
    }
  }
  if (!csv_dir.empty()) {
    fs::create_directories(csv_dir);
    std::ofstream freq(csv_dir / "dimension_frequencies.csv", std::ios::binary | std::ios::trunc);
    freq << "dim,nonneutral\n";
    for (std::size_t d = 0; d < dims; ++d)
      freq << context.registry.at(d).id << ',' << stats.nonneutral_per_dim[d] << '\n';
  }
  return stats;
}

nlohmann::json DatasetStats::to_json(const space::DimensionRegistry& registry) const {
  nlohmann::json freq = nlohmann::json::object();
  for (std::size_t d = 0; d < nonneutral_per_dim.size(); ++d)
    if (nonneutral_per_dim[d] > 0) freq[registry.at(d).id] = nonneutral_per_dim[d];
  return nlohmann::json{{"records", records},
                        {"with_ugc", with_ugc},
                        {"with_pairs", with_pairs},
                        {"with_demo", with_demo},
                        {"distinct_directions", diversity},
                        {"correlation_fraction_below_0.5", correlation_fraction_below},
                        {"constant_dimensions", constant_dims},
                        {"nonneutral_frequencies", std::move(freq)}};
}

void sample_dataset(const fs::path& dataset, const fs::path& out, std::size_t count,
                    const std::string& mode, std::uint64_t seed, int max_level) {
  auto records = read_jsonl(dataset);
  std::vector<std::size_t> picked;
  Rng rng(substream_seed(seed, "sample", mode));

  if (mode == "uniform") {
    std::vector<std::size_t> order(records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    order.resize(std::min(count, order.size()));
    picked = std::move(order);
  } else if (mode == "stratified") {
    // buckets keyed by the first non-neutral dimension of the target
    std::unordered_map<std::string, std::vector<std::size_t>> buckets;
    std::vector<std::string> bucket_order;
    for (std::size_t i = 0; i < records.size(); ++i) {
      const std::string target = records[i].at("direction").get<std::string>();
      std::string key = "none";
      for (std::size_t d = 0; d < target.size(); ++d) {
        if (target[d] != '0') {
          key = std::to_string(d) + target[d];
          break;
        }
      }
      if (!buckets.count(key)) bucket_order.push_back(key);
      buckets[key].push_back(i);
    }
    std::sort(bucket_order.begin(), bucket_order.end());
    for (auto& [key, members] : buckets) rng.shuffle(members);
    std::size_t round = 0;
    while (picked.size() < std::min(count, records.size())) {
      bool any = false;
      for (const auto& key : bucket_order) {
        auto& members = buckets[key];
        if (round < members.size()) {
          picked.push_back(members[round]);
          any = true;
          if (picked.size() >= count) break;
        }
      }
      if (!any) break;
      ++round;
    }
  } else {
    throw ConfigError("unknown sample mode '" + mode + "' (uniform | stratified)");
  }
  (void)max_level;

  std::sort(picked.begin(), picked.end());
  JsonlWriter writer(out);
  for (std::size_t index : picked) writer.write(records[index]);
}

std::size_t adapt_benchmark_records(const fs::path& in, const fs::path& out,
                                    const PipelineContext& context) {
  const std::size_t dims = context.registry.size();
  std::size_t converted = 0;
  JsonlWriter writer(out);
  for_each_jsonl(in, [&](const Json& record, std::size_t lineno) {
    auto bail = [&](const std::string& message) {
      throw IoError(in.string() + ":" + std::to_string(lineno) + ": " + message);
    };
    for (const char* field : {"id", "post", "chosen", "rejected"})
      if (!record.contains(field) || !record[field].is_string())
        bail(std::string("missing or non-string field '") + field + "'");

    space::DirectionVector target;
    if (record.contains("direction_vector")) {
      target = space::DirectionVector::from_chars(record["direction_vector"].get<std::string>());
      if (target.size() != dims) bail("direction_vector length mismatch");
    } else if (record.contains("dimension") && record.contains("direction")) {
      const auto index = context.registry.find(record["dimension"].get<std::string>());
      if (!index) bail("unknown dimension '" + record["dimension"].get<std::string>() + "'");
      const std::string sign = record["direction"].get<std::string>();
      if (sign != "+" && sign != "-") bail("direction must be '+' or '-'");
      target = space::DirectionVector::neutral(dims);
      target[*index] =
          sign == "+" ? space::Direction::Positive : space::Direction::Negative;
    } else {
      bail("need either direction_vector or dimension + direction");
    }
    if (target.all_neutral()) bail("target direction is all-neutral");

    if (!record.contains("persona_pairs") || !record["persona_pairs"].is_array() ||
        record["persona_pairs"].empty())
      bail("persona_pairs must be a non-empty array");

    Json items = Json::array();
    for (const auto& pair : record["persona_pairs"]) {
      for (const char* field : {"post", "chosen", "rejected"})
        if (!pair.contains(field) || !pair[field].is_string())
          bail(std::string("persona pair missing field '") + field + "'");
      items.push_back(Json{{"post", pair["post"]},
                           {"chosen", pair["chosen"]},
                           {"rejected", pair["rejected"]},
                           {"direction", target.to_chars()}});
    }
    writer.write(Json{{"id", record["id"]},
                      {"post", record["post"]},
                      {"chosen", record["chosen"]},
                      {"rejected", record["rejected"]},
                      {"direction", target.to_chars()},
                      {"pairs", std::move(items)}});
    ++converted;
  });
  return converted;
}

// ---------------------------------------------------------------------------
// Orchestration

namespace {

void write_manifest(const fs::path& path, const nlohmann::json& manifest) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << manifest.dump(2) << '\n';
  if (!out) throw IoError("cannot write manifest " + path.string());
}

bool stage_is_current(const fs::path& manifest_path, const nlohmann::json& config_json,
                      const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs) {
  std::ifstream in(manifest_path);
  if (!in) return false;
  nlohmann::json manifest = nlohmann::json::parse(in, nullptr, false);
  if (manifest.is_discarded() || !manifest.contains("config")) return false;
  if (manifest["config"] != config_json) return false;
  auto check_digests = [&](const char* key, const std::vector<fs::path>& paths) {
    if (!manifest.contains(key)) return false;
    for (const auto& path : paths) {
      if (!fs::exists(path)) return false;
      const auto name = path.filename().string();
      if (!manifest[key].contains(name)) return false;
      if (manifest[key][name] != sha256_file(path)) return false;
    }
    return true;
  };
  return check_digests("inputs", inputs) && check_digests("outputs", outputs);
}

}  // namespace

nlohmann::json run_pipeline(const RunConfig& config, const fs::path& corpus, const fs::path& outdir,
                            bool resume) {
  const auto context = PipelineContext::load(config);
  fs::create_directories(outdir / "runs");
  config.save(outdir / "runs" / "config.resolved");

  const fs::path intensities = outdir / "intensities.jsonl";
  const fs::path pairs_path = outdir / "pairs.jsonl";
  const fs::path dataset = outdir / "dataset.jsonl";
  const fs::path pba = outdir / "pba.jsonl";
  const fs::path audit = outdir / "runs" / "audit.jsonl";
  const auto config_json = config.to_json();

  nlohmann::json summary{{"stages", nlohmann::json::array()}};
  auto run_stage = [&](const std::string& name, const std::vector<fs::path>& inputs,
                       const std::vector<fs::path>& outputs, auto&& stage_fn) {
    const fs::path manifest_path = outdir / "runs" / (name + ".manifest.json");
    if (resume && stage_is_current(manifest_path, config_json, inputs, outputs)) {
      summary["stages"].push_back(nlohmann::json{{"stage", name}, {"skipped", true}});
      return;
    }
    nlohmann::json manifest;
    try {
      manifest = stage_fn();
    } catch (const std::exception& e) {
      write_manifest(manifest_path, nlohmann::json{{"stage", name},
                                                   {"config", config_json},
                                                   {"error", e.what()}});
      throw;
    }
    write_manifest(manifest_path, manifest);
    summary["stages"].push_back(manifest);
  };

  run_stage("annotate", {corpus}, {intensities}, [&] {
    return run_annotate_stage(config, context, corpus, intensities, audit);
  });
  run_stage("build-pairs", {corpus, intensities}, {pairs_path}, [&] {
    return run_build_pairs_stage(config, corpus, intensities, pairs_path);
  });
  run_stage("build-personas", {corpus, intensities, pairs_path}, {dataset}, [&] {
    return run_build_personas_stage(config, context, corpus, intensities, pairs_path, dataset,
                                    audit);
  });
  run_stage("aggregate", {dataset}, {pba}, [&] {
    return run_aggregate_stage(config, context, dataset, pba);
  });
  run_stage("validate", {dataset}, {}, [&] {
    auto report = validate_dataset(dataset, config, context);
    if (!report.ok())
      throw ValidationError("validation failed with " + std::to_string(report.violations.size()) +
                            " violation(s); first: " + report.violations.front());
    return make_manifest("validate", config, {dataset}, {},
                         nlohmann::json{{"records", report.records}, {"violations", 0}});
  });

  summary["dataset_digest"] = sha256_file(dataset);
  summary["pba_digest"] = sha256_file(pba);
  write_manifest(outdir / "runs" / "run.manifest.json", summary);
  return summary;
}

}  // namespace alignforge::pipeline
