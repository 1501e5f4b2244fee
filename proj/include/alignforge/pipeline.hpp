#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "alignforge/annotation.hpp"
#include "alignforge/common.hpp"
#include "alignforge/pair_builder.hpp"
#include "alignforge/persona_builder.hpp"

namespace alignforge::pipeline {

// Every constant of the construction pipeline, defaulting to the published
// settings (L=3, K=3, t=0.6, H=16, beta=0.1) and the documented choices
// elsewhere. Each run writes a frozen copy of the resolved config.
struct RunConfig {
  int max_level = 3;                          // L
  int clusters = 3;                           // K
  Rational similarity_threshold{3, 5};        // t
  int persona_examples = 16;                  // H
  Rational t1{3, 4};
  Rational t2{1, 4};
  double beta = 0.1;
  std::uint64_t seed = 0;
  int pairs_per_record = 1;
  int in_flight_cap = 4;
  int threads = 0;  // 0 = all cores, 1 = serial
  int retry_max = 2;
  int demo_attempts = 3;
  bool per_component_vote = false;
  std::optional<std::pair<int, int>> subsample_range;  // training emission
  std::string backend = "mock";                        // mock | http | replay
  std::string backend_host;
  std::string backend_model = "annotator";
  std::string backend_replay_file;
  std::string data_dir;  // empty -> resolved default

  // TOML-style key = value file; '#' comments and blank lines are skipped.
  static RunConfig load_file(const std::filesystem::path& path);
  void apply_entry(const std::string& key, const std::string& value);

  nlohmann::json to_json() const;
  void save(const std::filesystem::path& path) const;

  std::filesystem::path resolved_data_dir() const;
};

// Catalog, attribute table, and prompt templates loaded once per run.
struct PipelineContext {
  space::DimensionRegistry registry;
  annotation::DemographicAttributes attributes;
  annotation::PromptLibrary prompts;

  static PipelineContext load(const RunConfig& config);
};

std::unique_ptr<annotation::AnnotatorBackend> make_backend(const RunConfig& config,
                                                           const PipelineContext& context);

// ---------------------------------------------------------------------------
// Corpus and stage file formats

std::vector<pairs::RawRecord> load_corpus(const std::filesystem::path& path);

void write_intensities(const std::filesystem::path& path,
                       const std::vector<pairs::AnnotatedRecord>& records);
std::vector<pairs::AnnotatedRecord> load_annotated_corpus(
    const std::filesystem::path& corpus_path, const std::filesystem::path& intensities_path,
    int max_level);

void write_pairs(const std::filesystem::path& path, const std::vector<pairs::PreferencePair>& out);
std::vector<pairs::PreferencePair> load_pairs(const std::filesystem::path& path, int max_level);

// ---------------------------------------------------------------------------
// Stages; each returns its manifest (also written to <outdir>/runs/)

nlohmann::json run_annotate_stage(const RunConfig& config, const PipelineContext& context,
                                  const std::filesystem::path& corpus,
                                  const std::filesystem::path& out_intensities,
                                  const std::filesystem::path& audit_path = {});

nlohmann::json run_build_pairs_stage(const RunConfig& config,
                                     const std::filesystem::path& corpus,
                                     const std::filesystem::path& intensities,
                                     const std::filesystem::path& out_pairs);

nlohmann::json run_build_personas_stage(const RunConfig& config, const PipelineContext& context,
                                        const std::filesystem::path& corpus,
                                        const std::filesystem::path& intensities,
                                        const std::filesystem::path& pairs,
                                        const std::filesystem::path& out_dataset,
                                        const std::filesystem::path& audit_path = {});

nlohmann::json run_aggregate_stage(const RunConfig& config, const PipelineContext& context,
                                   const std::filesystem::path& dataset,
                                   const std::filesystem::path& out_pba);

// ---------------------------------------------------------------------------
// Validation and statistics

struct ValidationReport {
  std::size_t records = 0;
  std::vector<std::string> violations;  // "<line>: <message>"
  bool ok() const { return violations.empty(); }
  nlohmann::json to_json() const;
};

// Re-checks every record: schema, vector lengths, the consistency criterion
// (as an independent brute-force scan), recomputed majority votes, and
// similarity thresholds where intensities are present.
ValidationReport validate_dataset(const std::filesystem::path& dataset, const RunConfig& config,
                                  const PipelineContext& context);

struct DatasetStats {
  std::size_t records = 0;
  std::size_t with_ugc = 0;
  std::size_t with_pairs = 0;
  std::size_t with_demo = 0;
  std::vector<std::size_t> nonneutral_per_dim;
  std::size_t diversity = 0;
  double correlation_fraction_below = 1.0;  // |r| < 0.5
  std::size_t constant_dims = 0;
  nlohmann::json to_json(const space::DimensionRegistry& registry) const;
};

DatasetStats dataset_stats(const std::filesystem::path& dataset, const RunConfig& config,
                           const PipelineContext& context,
                           const std::filesystem::path& csv_dir = {});

// Seeded subset emission: uniform, or stratified round-robin over the first
// non-neutral dimension of each record's target direction.
void sample_dataset(const std::filesystem::path& dataset, const std::filesystem::path& out,
                    std::size_t count, const std::string& mode, std::uint64_t seed, int max_level);

// Converts benchmark-shaped records into the quintuple schema with
// pairs-only personas. Input rows carry either a full "direction_vector"
// string or a ("dimension", "direction") pair naming one registry dimension;
// persona pairs inherit the same vector.
std::size_t adapt_benchmark_records(const std::filesystem::path& in,
                                    const std::filesystem::path& out,
                                    const PipelineContext& context);

// ---------------------------------------------------------------------------
// Orchestration

// annotate -> build-pairs -> build-personas -> aggregate -> validate, with a
// manifest per stage under <outdir>/runs/. A stage is skipped when resume is
// set and its manifest still matches the config and all file digests.
nlohmann::json run_pipeline(const RunConfig& config, const std::filesystem::path& corpus,
                            const std::filesystem::path& outdir, bool resume);

}  // namespace alignforge::pipeline
