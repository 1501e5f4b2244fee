#include "alignforge/persona_builder.hpp"

#include <algorithm>
#include <unordered_map>

#include "alignforge/parallel.hpp"

namespace alignforge::personas {

using space::Direction;
using space::DirectionVector;
using space::IntensityVector;

// ---------------------------------------------------------------------------
// Inverted index

IntensityInvertedIndex::IntensityInvertedIndex(std::span<const IntensityVector> items) {
  items_ = items.size();
  if (items.empty()) return;
  dims_ = items[0].levels.size();
  levels_ = items[0].max_level;
  postings_.assign(dims_ * static_cast<std::size_t>(levels_), {});
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& iv = items[i];
    if (iv.levels.size() != dims_ || iv.max_level != levels_)
      throw ValidationError("inverted index: mixed intensity shapes");
    for (std::size_t d = 0; d < dims_; ++d)
      postings_[d * static_cast<std::size_t>(levels_) + static_cast<std::size_t>(iv.levels[d] - 1)]
          .push_back(static_cast<std::uint32_t>(i));
  }
}

std::vector<std::uint32_t> IntensityInvertedIndex::match_counts(const IntensityVector& query) const {
  if (query.levels.size() != dims_ || query.max_level != levels_)
    throw ValidationError("inverted index: query shape mismatch");
  std::vector<std::uint32_t> counts(items_, 0);
  for (std::size_t d = 0; d < dims_; ++d) {
    const auto& posting =
        postings_[d * static_cast<std::size_t>(levels_) + static_cast<std::size_t>(query.levels[d] - 1)];
    for (std::uint32_t item : posting) counts[item] += 1;
  }
  return counts;
}

// ---------------------------------------------------------------------------
// Corpus index

CorpusIndex::CorpusIndex(std::span<const pairs::AnnotatedRecord> records, int max_level)
    : records_(records) {
  for (std::size_t r = 0; r < records.size(); ++r) {
    for (std::size_t i = 0; i < records[r].intensities.size(); ++i) {
      if (!records[r].intensities[i]) continue;
      flat_.emplace_back(static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(i));
      flat_intensity_.push_back(*records[r].intensities[i]);
    }
  }
  if (!flat_intensity_.empty()) {
    dims_ = flat_intensity_[0].levels.size();
    if (flat_intensity_[0].max_level != max_level)
      throw ValidationError("corpus index: intensity level scale mismatch");
  }
  index_ = IntensityInvertedIndex(flat_intensity_);
}

const IntensityVector& CorpusIndex::intensity(std::size_t record_index,
                                              std::size_t response_index) const {
  const auto& slot = records_[record_index].intensities[response_index];
  if (!slot) throw ValidationError("corpus index: response has no intensities");
  return *slot;
}

std::vector<CorpusIndex::UgcCandidate> CorpusIndex::ugc_candidates(
    const IntensityVector& anchor_chosen, const std::string& anchor_record_id,
    const Rational& t) const {
  std::vector<UgcCandidate> out;
  if (flat_.empty()) return out;
  const auto counts = index_.match_counts(anchor_chosen);

  // Per foreign record keep only the best-matching response (Algorithm 1's
  // argmax), ties to the lowest response index; flat_ is already ordered.
  std::size_t i = 0;
  while (i < flat_.size()) {
    const std::uint32_t record = flat_[i].first;
    std::size_t best = i;
    std::size_t j = i;
    while (j < flat_.size() && flat_[j].first == record) {
      if (counts[j] > counts[best]) best = j;
      ++j;
    }
    i = j;
    if (records_[record].record.id == anchor_record_id) continue;  // contextual independence
    const auto matches = static_cast<long long>(counts[best]);
    if (!ratio_greater(matches, static_cast<long long>(dims_), t)) continue;
    out.push_back(UgcCandidate{record, flat_[best].second, static_cast<std::size_t>(counts[best])});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pair pool

PairPool::PairPool(std::span<const pairs::PreferencePair> pool, int max_level) : pool_(pool) {
  std::vector<IntensityVector> chosen;
  std::vector<IntensityVector> rejected;
  chosen.reserve(pool.size());
  rejected.reserve(pool.size());
  for (const auto& p : pool) {
    if (p.intensity_w.max_level != max_level)
      throw ValidationError("pair pool: intensity level scale mismatch");
    chosen.push_back(p.intensity_w);
    rejected.push_back(p.intensity_l);
    dims_ = p.intensity_w.levels.size();
  }
  chosen_index_ = IntensityInvertedIndex(chosen);
  rejected_index_ = IntensityInvertedIndex(rejected);
}

std::vector<PairPool::PairCandidate> PairPool::candidates(const pairs::PreferencePair& anchor,
                                                          const Rational& t) const {
  std::vector<PairCandidate> out;
  if (pool_.empty()) return out;
  const auto chosen_counts = chosen_index_.match_counts(anchor.intensity_w);
  const auto rejected_counts = rejected_index_.match_counts(anchor.intensity_l);
  const auto d = static_cast<long long>(dims_);
  for (std::size_t i = 0; i < pool_.size(); ++i) {
    if (pool_[i].record_id == anchor.record_id) continue;  // contextual independence
    if (!ratio_greater(static_cast<long long>(chosen_counts[i]), d, t)) continue;
    if (!ratio_greater(static_cast<long long>(rejected_counts[i]), d, t)) continue;
    out.push_back(PairCandidate{i});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Subset search

std::optional<std::pair<std::vector<Candidate>, DirectionVector>> subset_with_consistency(
    std::span<const Candidate> candidates, const DirectionVector& target, int max_examples,
    Rng& rng) {
  if (max_examples < 1) throw ValidationError("subset_with_consistency: H must be >= 1");
  for (std::size_t d = 0; d < target.size(); ++d) {
    if (target[d] == Direction::Neutral) continue;
    std::vector<std::size_t> agreeing;
    for (std::size_t i = 0; i < candidates.size(); ++i)
      if (candidates[i].direction[d] == target[d]) agreeing.push_back(i);
    if (agreeing.empty()) continue;

    rng.shuffle(agreeing);
    const std::size_t keep = std::min(agreeing.size(), static_cast<std::size_t>(max_examples));
    agreeing.resize(keep);
    std::sort(agreeing.begin(), agreeing.end());  // stable output order

    std::vector<Candidate> subset;
    std::vector<DirectionVector> directions;
    subset.reserve(keep);
    for (std::size_t index : agreeing) {
      subset.push_back(candidates[index]);
      directions.push_back(candidates[index].direction);
    }
    DirectionVector voted = space::majority_vote(directions);
    return std::make_pair(std::move(subset), std::move(voted));
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Persona construction

std::optional<UgcPersona> build_ugc_persona(const pairs::PreferencePair& anchor,
                                            const CorpusIndex& corpus, const PersonaConfig& config,
                                            const std::string& example_id) {
  const auto raw = corpus.ugc_candidates(anchor.intensity_w, anchor.record_id,
                                         config.similarity_threshold);
  if (raw.empty()) return std::nullopt;

  std::vector<Candidate> candidates;
  candidates.reserve(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto& iv = corpus.intensity(raw[i].record_index, raw[i].response_index);
    candidates.push_back(Candidate{i, space::median_heuristic_direction(iv)});
  }

  Rng rng(substream_seed(config.seed, "ugc-subset", example_id));
  auto subset = subset_with_consistency(candidates, anchor.direction, config.max_examples, rng);
  if (!subset) return std::nullopt;

  UgcPersona persona;
  persona.voted = std::move(subset->second);
  for (const auto& member : subset->first) {
    const auto& source = raw[member.payload];
    UgcExample example;
    example.post = corpus.record(source.record_index).record.post;
    example.response = corpus.record(source.record_index).record.responses[source.response_index];
    example.direction = member.direction;
    example.intensity = corpus.intensity(source.record_index, source.response_index);
    persona.examples.push_back(std::move(example));
  }
  return persona;
}

std::optional<PairPersona> build_pair_persona(const pairs::PreferencePair& anchor,
                                              const PairPool& pool, const PersonaConfig& config,
                                              const std::string& example_id) {
  const auto raw = pool.candidates(anchor, config.similarity_threshold);
  if (raw.empty()) return std::nullopt;

  std::vector<Candidate> candidates;
  candidates.reserve(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i)
    candidates.push_back(Candidate{i, pool.pair(raw[i].pair_index).direction});

  Rng rng(substream_seed(config.seed, "pair-subset", example_id));
  auto subset = subset_with_consistency(candidates, anchor.direction, config.max_examples, rng);
  if (!subset) return std::nullopt;

  PairPersona persona;
  persona.voted = std::move(subset->second);
  for (const auto& member : subset->first) {
    const auto& source = pool.pair(raw[member.payload].pair_index);
    PairExample example;
    example.post = source.post;
    example.chosen = source.chosen;
    example.rejected = source.rejected;
    example.direction = source.direction;
    example.intensity_w = source.intensity_w;
    example.intensity_l = source.intensity_l;
    persona.examples.push_back(std::move(example));
  }
  return persona;
}

std::vector<DirectionVector> PersonaExample::component_vectors() const {
  std::vector<DirectionVector> vectors;
  if (ugc) vectors.push_back(ugc->voted);
  if (pair_persona) vectors.push_back(pair_persona->voted);
  if (demo) vectors.push_back(demo->directions);
  return vectors;
}

namespace {

bool example_consistent(const PersonaExample& example) {
  const auto vectors = example.component_vectors();
  if (vectors.empty()) return false;
  return space::check_preference_consistency(example.direction, vectors);
}

// Subsample one behavioral component in place; empty draws remove the
// component entirely.
template <typename Persona>
void subsample_component(std::optional<Persona>& component, std::size_t want, Rng& rng) {
  if (!component) return;
  auto& examples = component->examples;
  if (want >= examples.size()) return;
  if (want == 0) {
    component.reset();
    return;
  }
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  order.resize(want);
  std::sort(order.begin(), order.end());
  decltype(component->examples) kept;
  std::vector<DirectionVector> directions;
  for (std::size_t index : order) {
    kept.push_back(examples[index]);
    directions.push_back(examples[index].direction);
  }
  component->examples = std::move(kept);
  component->voted = space::majority_vote(directions);
}

}  // namespace

std::optional<PersonaExample> assemble_example(PersonaExample candidate, const PersonaConfig& config,
                                              std::string* reject_reason) {
  if (!candidate.ugc && !candidate.pair_persona && !candidate.demo) {
    if (reject_reason != nullptr) *reject_reason = "no-consistent-subset";
    return std::nullopt;
  }
  if (!example_consistent(candidate)) {
    if (reject_reason != nullptr) *reject_reason = "no-consistent-subset";
    return std::nullopt;
  }
  if (!config.subsample_range) return candidate;

  const auto [lo, hi] = *config.subsample_range;
  if (lo < 0 || hi < lo) throw ConfigError("subsample range must satisfy 0 <= lo <= hi");
  Rng rng(substream_seed(config.seed, "subsample", candidate.id));
  for (int attempt = 0; attempt < config.subsample_budget; ++attempt) {
    PersonaExample trial = candidate;
    const auto span = static_cast<std::uint64_t>(hi - lo + 1);
    subsample_component(trial.ugc, static_cast<std::size_t>(lo + static_cast<int>(rng.below(span))),
                        rng);
    subsample_component(trial.pair_persona,
                        static_cast<std::size_t>(lo + static_cast<int>(rng.below(span))), rng);
    if ((trial.ugc || trial.pair_persona || trial.demo) && example_consistent(trial)) return trial;
  }
  // Budget exhausted: the untouched example is consistent by construction.
  return candidate;
}

BuildPersonasResult build_personas(std::span<const pairs::PreferencePair> anchors,
                                   const CorpusIndex& corpus, annotation::Annotator& annotator,
                                   const PersonaConfig& config) {
  PairPool pool(anchors, annotator.max_level());

  struct Slot {
    std::optional<PersonaExample> example;
    std::optional<pairs::RecordReject> reject;
    bool demo_missing = false;
  };
  std::vector<Slot> slots(anchors.size());

  // Example ids are anchor-ordinal within their record, so reruns and
  // different schedules agree on naming.
  std::vector<std::string> ids(anchors.size());
  {
    std::unordered_map<std::string, int> ordinal;
    for (std::size_t i = 0; i < anchors.size(); ++i)
      ids[i] = anchors[i].record_id + "#" + std::to_string(ordinal[anchors[i].record_id]++);
  }

  parallel_for(anchors.size(), config.threads, [&](std::size_t i) {
    const auto& anchor = anchors[i];
    Slot& slot = slots[i];
    const std::string& id = ids[i];

    PersonaExample example;
    example.id = id;
    example.post = anchor.post;
    example.chosen = anchor.chosen;
    example.rejected = anchor.rejected;
    example.direction = anchor.direction;
    example.intensity_w = anchor.intensity_w;
    example.intensity_l = anchor.intensity_l;

    example.ugc = build_ugc_persona(anchor, corpus, config, id);
    example.pair_persona = build_pair_persona(anchor, pool, config, id);

    std::string demo_diagnostic;
    for (int attempt = 0; attempt < config.demo_attempts && !example.demo; ++attempt) {
      auto outcome = annotator.annotate_demo_persona(anchor.post, anchor.chosen, anchor.rejected,
                                                     anchor.direction,
                                                     id + "/demo" + std::to_string(attempt));
      if (outcome.persona) {
        example.demo = std::move(outcome.persona);
      } else {
        demo_diagnostic = outcome.diagnostic;
      }
    }

    if (!example.demo && !example.ugc && !example.pair_persona) {
      slot.reject = pairs::RecordReject{
          id, demo_diagnostic.empty() ? "no-consistent-subset" : "demo-mismatch"};
      return;
    }
    if (!example.demo) slot.demo_missing = true;

    std::string reason;
    auto assembled = assemble_example(std::move(example), config, &reason);
    if (!assembled) {
      slot.reject = pairs::RecordReject{id, reason};
      return;
    }
    slot.example = std::move(assembled);
  });

  BuildPersonasResult result;
  result.anchors_in = anchors.size();
  for (auto& slot : slots) {
    if (slot.example) result.examples.push_back(std::move(*slot.example));
    if (slot.reject) result.rejects.push_back(std::move(*slot.reject));
    if (slot.demo_missing) result.demo_missing += 1;
  }
  return result;
}

// ---------------------------------------------------------------------------
// JSON serialization

namespace {

nlohmann::json levels_json(const IntensityVector& iv) {
  return nlohmann::json(iv.levels);
}

IntensityVector levels_from_json(const nlohmann::json& value, int max_level) {
  IntensityVector iv;
  iv.max_level = max_level;
  iv.levels = value.get<std::vector<int>>();
  return iv;
}

}  // namespace

nlohmann::json to_json(const PersonaExample& example) {
  nlohmann::json record{{"id", example.id},
                        {"post", example.post},
                        {"chosen", example.chosen},
                        {"rejected", example.rejected},
                        {"direction", example.direction.to_chars()},
                        {"intensity_w", levels_json(example.intensity_w)},
                        {"intensity_l", levels_json(example.intensity_l)}};
  if (example.ugc) {
    nlohmann::json items = nlohmann::json::array();
    for (const auto& e : example.ugc->examples)
      items.push_back(nlohmann::json{{"post", e.post},
                                     {"response", e.response},
                                     {"direction", e.direction.to_chars()},
                                     {"intensity", levels_json(e.intensity)}});
    record["ugc"] = std::move(items);
  }
  if (example.pair_persona) {
    nlohmann::json items = nlohmann::json::array();
    for (const auto& e : example.pair_persona->examples)
      items.push_back(nlohmann::json{{"post", e.post},
                                     {"chosen", e.chosen},
                                     {"rejected", e.rejected},
                                     {"direction", e.direction.to_chars()},
                                     {"intensity_w", levels_json(e.intensity_w)},
                                     {"intensity_l", levels_json(e.intensity_l)}});
    record["pairs"] = std::move(items);
  }
  if (example.demo) {
    record["demo"] = nlohmann::json{
        {"narrative", example.demo->narrative},
        {"direction", example.demo->directions.to_chars()},
        {"like_tags", std::vector<std::string>(example.demo->like_tags.begin(),
                                               example.demo->like_tags.end())},
        {"dislike_tags", std::vector<std::string>(example.demo->dislike_tags.begin(),
                                                  example.demo->dislike_tags.end())},
        {"rationale", example.demo->rationale}};
  }
  return record;
}

PersonaExample example_from_json(const nlohmann::json& record, int max_level) {
  PersonaExample example;
  example.id = record.at("id").get<std::string>();
  example.post = record.at("post").get<std::string>();
  example.chosen = record.at("chosen").get<std::string>();
  example.rejected = record.at("rejected").get<std::string>();
  example.direction = DirectionVector::from_chars(record.at("direction").get<std::string>());
  if (record.contains("intensity_w")) {
    example.intensity_w = levels_from_json(record["intensity_w"], max_level);
    example.intensity_l = levels_from_json(record["intensity_l"], max_level);
  }
  if (record.contains("ugc")) {
    UgcPersona persona;
    std::vector<DirectionVector> directions;
    for (const auto& item : record["ugc"]) {
      UgcExample e;
      e.post = item.at("post").get<std::string>();
      e.response = item.at("response").get<std::string>();
      e.direction = DirectionVector::from_chars(item.at("direction").get<std::string>());
      if (item.contains("intensity")) e.intensity = levels_from_json(item["intensity"], max_level);
      directions.push_back(e.direction);
      persona.examples.push_back(std::move(e));
    }
    persona.voted = space::majority_vote(directions);
    example.ugc = std::move(persona);
  }
  if (record.contains("pairs")) {
    PairPersona persona;
    std::vector<DirectionVector> directions;
    for (const auto& item : record["pairs"]) {
      PairExample e;
      e.post = item.at("post").get<std::string>();
      e.chosen = item.at("chosen").get<std::string>();
      e.rejected = item.at("rejected").get<std::string>();
      e.direction = DirectionVector::from_chars(item.at("direction").get<std::string>());
      if (item.contains("intensity_w")) {
        e.intensity_w = levels_from_json(item["intensity_w"], max_level);
        e.intensity_l = levels_from_json(item["intensity_l"], max_level);
      }
      directions.push_back(e.direction);
      persona.examples.push_back(std::move(e));
    }
    persona.voted = space::majority_vote(directions);
    example.pair_persona = std::move(persona);
  }
  if (record.contains("demo")) {
    annotation::DemoPersona demo;
    const auto& d = record["demo"];
    demo.narrative = d.at("narrative").get<std::string>();
    demo.directions = DirectionVector::from_chars(d.at("direction").get<std::string>());
    for (const auto& tag : d.value("like_tags", std::vector<std::string>{}))
      demo.like_tags.insert(tag);
    for (const auto& tag : d.value("dislike_tags", std::vector<std::string>{}))
      demo.dislike_tags.insert(tag);
    demo.rationale = d.value("rationale", std::string());
    example.demo = std::move(demo);
  }
  return example;
}

}  // namespace alignforge::personas
