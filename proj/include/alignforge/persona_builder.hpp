#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "alignforge/annotation.hpp"
#include "alignforge/pair_builder.hpp"
#include "alignforge/preference_space.hpp"
#include "alignforge/rng.hpp"

namespace alignforge::personas {

// Postings keyed by (dimension, level); match_counts() returns, for every
// indexed item, the number of dimensions agreeing with the query. Equivalent
// to a linear scan, without the O(corpus) pass per anchor.
class IntensityInvertedIndex {
 public:
  IntensityInvertedIndex() = default;
  explicit IntensityInvertedIndex(std::span<const space::IntensityVector> items);

  std::vector<std::uint32_t> match_counts(const space::IntensityVector& query) const;
  std::size_t item_count() const { return items_; }

 private:
  std::vector<std::vector<std::uint32_t>> postings_;  // [dim * L + (level-1)]
  std::size_t dims_ = 0;
  int levels_ = 0;
  std::size_t items_ = 0;
};

// Read-only view over the annotated corpus used for UGC candidate search.
// Built once, then shared by any number of concurrent anchors.
class CorpusIndex {
 public:
  CorpusIndex(std::span<const pairs::AnnotatedRecord> records, int max_level);

  struct UgcCandidate {
    std::size_t record_index;
    std::size_t response_index;
    std::size_t matches;
  };

  // Best-matching annotated response of each foreign record (ties break to
  // the lowest response index), kept when match_fraction > t strictly.
  std::vector<UgcCandidate> ugc_candidates(const space::IntensityVector& anchor_chosen,
                                           const std::string& anchor_record_id,
                                           const Rational& t) const;

  const pairs::AnnotatedRecord& record(std::size_t index) const { return records_[index]; }
  const space::IntensityVector& intensity(std::size_t record_index,
                                          std::size_t response_index) const;
  std::size_t dimension_count() const { return dims_; }

 private:
  std::span<const pairs::AnnotatedRecord> records_;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> flat_;  // (record, response)
  std::vector<space::IntensityVector> flat_intensity_;
  IntensityInvertedIndex index_;
  std::size_t dims_ = 0;
};

// The anchor pool for PAIR personas: every pair built in the previous
// stage, indexed on both sides.
class PairPool {
 public:
  PairPool(std::span<const pairs::PreferencePair> pool, int max_level);

  struct PairCandidate {
    std::size_t pair_index;
  };

  // Dual filter: similarity above t against the anchor's chosen AND
  // rejected intensities, from contextually independent records.
  std::vector<PairCandidate> candidates(const pairs::PreferencePair& anchor,
                                        const Rational& t) const;

  const pairs::PreferencePair& pair(std::size_t index) const { return pool_[index]; }

 private:
  std::span<const pairs::PreferencePair> pool_;
  IntensityInvertedIndex chosen_index_;
  IntensityInvertedIndex rejected_index_;
  std::size_t dims_ = 0;
};

struct UgcExample {
  std::string post;
  std::string response;
  space::DirectionVector direction;  // median heuristic of its intensities
  space::IntensityVector intensity;
};

struct UgcPersona {
  std::vector<UgcExample> examples;
  space::DirectionVector voted;
};

struct PairExample {
  std::string post;
  std::string chosen;
  std::string rejected;
  space::DirectionVector direction;  // the pair's own comparison
  space::IntensityVector intensity_w;
  space::IntensityVector intensity_l;
};

struct PairPersona {
  std::vector<PairExample> examples;
  space::DirectionVector voted;
};

struct PersonaExample {
  std::string id;
  std::string post;
  std::string chosen;
  std::string rejected;
  space::DirectionVector direction;  // P for the target pair
  space::IntensityVector intensity_w;
  space::IntensityVector intensity_l;
  std::optional<UgcPersona> ugc;
  std::optional<PairPersona> pair_persona;
  std::optional<annotation::DemoPersona> demo;

  std::vector<space::DirectionVector> component_vectors() const;
};

nlohmann::json to_json(const PersonaExample& example);
PersonaExample example_from_json(const nlohmann::json& record, int max_level);

// A candidate with its per-example direction; payload indexes the caller's
// storage.
struct Candidate {
  std::size_t payload;
  space::DirectionVector direction;
};

// Greedy subset search: walk the target's non-neutral dimensions in registry
// order, keep candidates agreeing on that dimension, sample up to
// max_examples with the seed. Returns the chosen candidates and their
// majority vote, or nullopt when no dimension yields any candidate.
std::optional<std::pair<std::vector<Candidate>, space::DirectionVector>> subset_with_consistency(
    std::span<const Candidate> candidates, const space::DirectionVector& target, int max_examples,
    Rng& rng);

struct PersonaConfig {
  Rational similarity_threshold{3, 5};  // t
  int max_examples = 16;                // H
  std::uint64_t seed = 0;
  int threads = 1;
  int demo_attempts = 3;
  // Training-emission subsampling of behavioral persona examples; nullopt
  // keeps every example.
  std::optional<std::pair<int, int>> subsample_range;
  int subsample_budget = 8;
};

struct BuildPersonasResult {
  std::vector<PersonaExample> examples;  // anchor order
  std::vector<pairs::RecordReject> rejects;
  std::size_t anchors_in = 0;
  std::size_t demo_missing = 0;  // emitted without a demo component
};

std::optional<UgcPersona> build_ugc_persona(const pairs::PreferencePair& anchor,
                                            const CorpusIndex& corpus,
                                            const PersonaConfig& config,
                                            const std::string& example_id);

std::optional<PairPersona> build_pair_persona(const pairs::PreferencePair& anchor,
                                              const PairPool& pool, const PersonaConfig& config,
                                              const std::string& example_id);

// Joint consistency validation plus optional training-time subsampling.
std::optional<PersonaExample> assemble_example(PersonaExample candidate, const PersonaConfig& config,
                                              std::string* reject_reason = nullptr);

BuildPersonasResult build_personas(std::span<const pairs::PreferencePair> anchors,
                                   const CorpusIndex& corpus, annotation::Annotator& annotator,
                                   const PersonaConfig& config);

}  // namespace alignforge::personas
