#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "alignforge/annotation.hpp"
#include "alignforge/preference_space.hpp"
#include "alignforge/rng.hpp"

namespace alignforge::pairs {

struct RawRecord {
  std::string id;
  std::string post;
  std::vector<std::string> responses;
};

// A record plus the per-response intensity vectors; nullopt marks a response
// that stayed unannotatable after retries.
struct AnnotatedRecord {
  RawRecord record;
  std::vector<std::optional<space::IntensityVector>> intensities;
};

struct ClusterAssignment {
  std::vector<int> labels;
  std::vector<std::vector<double>> centroids;
  double inertia = 0.0;
  std::uint64_t seed = 0;
  // inertia after each Lloyd assignment step; non-increasing
  std::vector<double> inertia_history;

  int cluster_count() const { return static_cast<int>(centroids.size()); }
  std::vector<std::vector<std::size_t>> members() const;
  int nonempty_count() const;
};

// Lloyd iteration over intensity embeddings with k-means++ seeding, run to
// an assignment fixpoint or 100 iterations. Ties in the nearest-centroid
// step break toward the lowest cluster index, so duplicate points always
// co-assign. Fewer points than clusters: each distinct point gets its own
// cluster and the surplus stays empty.
ClusterAssignment cluster_responses(std::span<const space::IntensityEmbedding> embeddings, int k,
                                    std::uint64_t seed);

struct PreferencePair {
  std::string record_id;
  std::string post;
  std::string chosen;
  std::string rejected;
  space::DirectionVector direction;
  space::IntensityVector intensity_w;
  space::IntensityVector intensity_l;
  int cluster_w = -1;
  int cluster_l = -1;
  std::size_t response_index_w = 0;
  std::size_t response_index_l = 0;
};

// Samples two distinct non-empty clusters, one response from each, and
// labels the direction by intensity comparison. None when fewer than two
// non-empty clusters exist.
std::optional<PreferencePair> select_pair(const AnnotatedRecord& annotated,
                                          const ClusterAssignment& assignment, Rng& rng);

struct BuildConfig {
  int max_level = 3;
  int clusters = 3;
  std::uint64_t seed = 0;
  int pairs_per_record = 1;
  int threads = 1;  // 1 = serial reference, 0 = all cores
};

struct RecordReject {
  std::string record_id;
  std::string reason;  // unannotatable | single-cluster
};

struct BuildPairsResult {
  std::vector<PreferencePair> pairs;  // corpus order
  std::vector<RecordReject> rejects;
  std::size_t records_in = 0;
  std::size_t dropped_all_neutral = 0;
};

// Stage 1: intensity annotation of every response on every dimension.
std::vector<AnnotatedRecord> annotate_corpus(std::span<const RawRecord> records,
                                             annotation::Annotator& annotator, int threads);

// Stage 2: cluster per record and emit up to pairs_per_record pairs each.
BuildPairsResult build_pairs(std::span<const AnnotatedRecord> records, const BuildConfig& config);

}  // namespace alignforge::pairs
