#include "alignforge/pair_builder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "alignforge/parallel.hpp"

namespace alignforge::pairs {

using space::IntensityEmbedding;
using space::IntensityVector;

std::vector<std::vector<std::size_t>> ClusterAssignment::members() const {
  std::vector<std::vector<std::size_t>> out(centroids.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    out[static_cast<std::size_t>(labels[i])].push_back(i);
  return out;
}

int ClusterAssignment::nonempty_count() const {
  std::vector<bool> seen(centroids.size(), false);
  for (int label : labels) seen[static_cast<std::size_t>(label)] = true;
  int count = 0;
  for (bool s : seen) count += s ? 1 : 0;
  return count;
}

namespace {

double squared_distance(const IntensityEmbedding& point, const std::vector<double>& centroid) {
  double sum = 0.0;
  for (std::size_t i = 0; i < centroid.size(); ++i) {
    const double diff = static_cast<double>(point.values[i]) - centroid[i];
    sum += diff * diff;
  }
  return sum;
}

std::vector<double> to_centroid(const IntensityEmbedding& point) {
  return std::vector<double>(point.values.begin(), point.values.end());
}

bool same_embedding(const IntensityEmbedding& a, const IntensityEmbedding& b) {
  return a.values == b.values;
}

// k-means++: first centroid uniform, later ones proportional to the squared
// distance from the nearest chosen centroid. All-zero weights fall back to
// duplicating the first point; those clusters simply end up empty.
std::vector<std::vector<double>> seed_centroids(std::span<const IntensityEmbedding> points, int k,
                                                Rng& rng) {
  std::vector<std::vector<double>> centroids;
  centroids.reserve(static_cast<std::size_t>(k));
  centroids.push_back(to_centroid(points[rng.index(points.size())]));
  std::vector<double> nearest(points.size());
  while (centroids.size() < static_cast<std::size_t>(k)) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      double best = std::numeric_limits<double>::max();
      for (const auto& c : centroids) best = std::min(best, squared_distance(points[i], c));
      nearest[i] = best;
      total += best;
    }
    if (total <= 0.0) {
      centroids.push_back(centroids.front());
      continue;
    }
    double draw = rng.unit() * total;
    std::size_t chosen = points.size() - 1;
    for (std::size_t i = 0; i < points.size(); ++i) {
      draw -= nearest[i];
      if (draw <= 0.0) {
        chosen = i;
        break;
      }
    }
    centroids.push_back(to_centroid(points[chosen]));
  }
  return centroids;
}

}  // namespace

ClusterAssignment cluster_responses(std::span<const IntensityEmbedding> embeddings, int k,
                                    std::uint64_t seed) {
  if (embeddings.empty()) throw ValidationError("cluster_responses: empty input");
  if (k < 1) throw ValidationError("cluster_responses: cluster count must be >= 1");
  for (const auto& e : embeddings)
    if (e.values.size() != embeddings[0].values.size())
      throw ValidationError("cluster_responses: embeddings of mixed length");

  ClusterAssignment out;
  out.seed = seed;

  const std::size_t n = embeddings.size();
  if (n < static_cast<std::size_t>(k)) {
    // Fewer points than clusters: distinct points own a cluster each,
    // duplicates co-assign, the surplus clusters stay empty.
    out.centroids.assign(static_cast<std::size_t>(k),
                         std::vector<double>(embeddings[0].values.size(), 0.0));
    out.labels.resize(n);
    int next = 0;
    for (std::size_t i = 0; i < n; ++i) {
      int label = -1;
      for (std::size_t j = 0; j < i; ++j) {
        if (same_embedding(embeddings[i], embeddings[j])) {
          label = out.labels[j];
          break;
        }
      }
      if (label < 0) {
        label = next++;
        out.centroids[static_cast<std::size_t>(label)] = to_centroid(embeddings[i]);
      }
      out.labels[i] = label;
    }
    out.inertia = 0.0;
    out.inertia_history = {0.0};
    return out;
  }

  Rng rng(seed);
  out.centroids = seed_centroids(embeddings, k, rng);
  out.labels.assign(n, 0);

  constexpr int kMaxIterations = 100;
  for (int iter = 0; iter < kMaxIterations; ++iter) {
    // Assignment step; lowest-index centroid wins ties.
    bool changed = iter == 0;
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_dist = std::numeric_limits<double>::max();
      for (int c = 0; c < k; ++c) {
        const double dist = squared_distance(embeddings[i], out.centroids[static_cast<std::size_t>(c)]);
        if (dist < best_dist) {
          best_dist = dist;
          best = c;
        }
      }
      inertia += best_dist;
      if (out.labels[i] != best) {
        out.labels[i] = best;
        changed = true;
      }
    }
    out.inertia = inertia;
    out.inertia_history.push_back(inertia);
    if (!changed) break;

    // Update step; empty clusters keep their previous centroid.
    std::vector<std::vector<double>> sums(static_cast<std::size_t>(k),
                                          std::vector<double>(embeddings[0].values.size(), 0.0));
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto label = static_cast<std::size_t>(out.labels[i]);
      counts[label] += 1;
      for (std::size_t v = 0; v < embeddings[i].values.size(); ++v)
        sums[label][v] += static_cast<double>(embeddings[i].values[v]);
    }
    for (std::size_t c = 0; c < static_cast<std::size_t>(k); ++c) {
      if (counts[c] == 0) continue;
      for (double& v : sums[c]) v /= static_cast<double>(counts[c]);
      out.centroids[c] = std::move(sums[c]);
    }
  }
  return out;
}

std::optional<PreferencePair> select_pair(const AnnotatedRecord& annotated,
                                          const ClusterAssignment& assignment, Rng& rng) {
  const auto members = assignment.members();
  std::vector<int> nonempty;
  for (int c = 0; c < assignment.cluster_count(); ++c)
    if (!members[static_cast<std::size_t>(c)].empty()) nonempty.push_back(c);
  if (nonempty.size() < 2) return std::nullopt;

  const std::size_t first = rng.index(nonempty.size());
  std::size_t second = rng.index(nonempty.size() - 1);
  if (second >= first) ++second;
  const int cluster_w = nonempty[first];
  const int cluster_l = nonempty[second];

  const auto& members_w = members[static_cast<std::size_t>(cluster_w)];
  const auto& members_l = members[static_cast<std::size_t>(cluster_l)];
  const std::size_t pick_w = members_w[rng.index(members_w.size())];
  const std::size_t pick_l = members_l[rng.index(members_l.size())];

  PreferencePair pair;
  pair.record_id = annotated.record.id;
  pair.post = annotated.record.post;
  pair.chosen = annotated.record.responses[pick_w];
  pair.rejected = annotated.record.responses[pick_l];
  pair.intensity_w = *annotated.intensities[pick_w];
  pair.intensity_l = *annotated.intensities[pick_l];
  pair.direction = space::compare_intensities(pair.intensity_w, pair.intensity_l);
  pair.cluster_w = cluster_w;
  pair.cluster_l = cluster_l;
  pair.response_index_w = pick_w;
  pair.response_index_l = pick_l;
  return pair;
}

std::vector<AnnotatedRecord> annotate_corpus(std::span<const RawRecord> records,
                                             annotation::Annotator& annotator, int threads) {
  std::vector<AnnotatedRecord> out(records.size());
  parallel_for(records.size(), threads, [&](std::size_t i) {
    const RawRecord& record = records[i];
    AnnotatedRecord annotated;
    annotated.record = record;
    annotated.intensities.reserve(record.responses.size());
    for (std::size_t r = 0; r < record.responses.size(); ++r) {
      annotated.intensities.push_back(annotator.annotate_response(
          record.post, record.responses[r], record.id + "#" + std::to_string(r)));
    }
    out[i] = std::move(annotated);
  });
  return out;
}

BuildPairsResult build_pairs(std::span<const AnnotatedRecord> records, const BuildConfig& config) {
  struct PerRecord {
    std::vector<PreferencePair> pairs;
    std::optional<RecordReject> reject;
    std::size_t dropped_all_neutral = 0;
  };
  std::vector<PerRecord> partial(records.size());

  parallel_for(records.size(), config.threads, [&](std::size_t i) {
    const AnnotatedRecord& annotated = records[i];
    PerRecord& slot = partial[i];

    // A record keeps only its annotatable responses; fewer than two left
    // means nothing to contrast.
    AnnotatedRecord usable;
    usable.record.id = annotated.record.id;
    usable.record.post = annotated.record.post;
    for (std::size_t r = 0; r < annotated.record.responses.size(); ++r) {
      if (!annotated.intensities[r]) continue;
      usable.record.responses.push_back(annotated.record.responses[r]);
      usable.intensities.push_back(annotated.intensities[r]);
    }
    if (usable.record.responses.size() < 2) {
      slot.reject = RecordReject{annotated.record.id, "unannotatable"};
      return;
    }

    std::vector<space::IntensityEmbedding> embeddings;
    embeddings.reserve(usable.intensities.size());
    for (const auto& iv : usable.intensities) embeddings.push_back(space::embed_intensities(*iv));

    const auto assignment = cluster_responses(
        embeddings, config.clusters,
        substream_seed(config.seed, "kmeans", annotated.record.id));
    if (assignment.nonempty_count() < 2) {
      slot.reject = RecordReject{annotated.record.id, "single-cluster"};
      return;
    }

    Rng rng(substream_seed(config.seed, "pair-select", annotated.record.id));
    for (int q = 0; q < config.pairs_per_record; ++q) {
      auto pair = select_pair(usable, assignment, rng);
      if (!pair) break;
      if (pair->direction.all_neutral() || pair->chosen == pair->rejected) {
        // Unreachable for distinct clusters under a deterministic
        // annotator; kept as a guard on the downstream criterion.
        slot.dropped_all_neutral += 1;
        continue;
      }
      const bool duplicate = std::any_of(
          slot.pairs.begin(), slot.pairs.end(), [&](const PreferencePair& existing) {
            return existing.response_index_w == pair->response_index_w &&
                   existing.response_index_l == pair->response_index_l;
          });
      if (!duplicate) slot.pairs.push_back(std::move(*pair));
    }
  });

  BuildPairsResult result;
  result.records_in = records.size();
  for (auto& slot : partial) {
    for (auto& p : slot.pairs) result.pairs.push_back(std::move(p));
    if (slot.reject) result.rejects.push_back(std::move(*slot.reject));
    result.dropped_all_neutral += slot.dropped_all_neutral;
  }
  return result;
}

}  // namespace alignforge::pairs
