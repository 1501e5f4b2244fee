#include <doctest.h>

#include <algorithm>
#include <set>

#include "alignforge/persona_builder.hpp"
#include "test_support.hpp"

using namespace alignforge;
using namespace alignforge::personas;
using testsupport::dv;
using testsupport::iv;

namespace {

pairs::AnnotatedRecord make_record(const space::DimensionRegistry& reg, const std::string& id,
                                   const std::vector<std::vector<int>>& level_sets) {
  pairs::AnnotatedRecord annotated;
  annotated.record.id = id;
  annotated.record.post = "post " + id;
  for (std::size_t i = 0; i < level_sets.size(); ++i) {
    annotated.record.responses.push_back(
        testsupport::planted_response(reg, level_sets[i], "resp " + id + "/" + std::to_string(i)));
    annotated.intensities.push_back(iv(level_sets[i]));
  }
  return annotated;
}

pairs::PreferencePair make_anchor(const std::string& record_id, std::vector<int> w,
                                  std::vector<int> l) {
  pairs::PreferencePair anchor;
  anchor.record_id = record_id;
  anchor.post = "post " + record_id;
  anchor.chosen = "chosen " + record_id;
  anchor.rejected = "rejected " + record_id;
  anchor.intensity_w = iv(std::move(w));
  anchor.intensity_l = iv(std::move(l));
  anchor.direction = space::compare_intensities(anchor.intensity_w, anchor.intensity_l);
  return anchor;
}

}  // namespace

TEST_CASE("inverted index match counts equal a linear scan") {
  Rng gen(3);
  std::vector<space::IntensityVector> items;
  for (int i = 0; i < 60; ++i) {
    std::vector<int> levels(6);
    for (auto& l : levels) l = 1 + static_cast<int>(gen.below(3));
    items.push_back(iv(levels));
  }
  IntensityInvertedIndex index(items);
  for (int q = 0; q < 10; ++q) {
    std::vector<int> levels(6);
    for (auto& l : levels) l = 1 + static_cast<int>(gen.below(3));
    auto query = iv(levels);
    auto counts = index.match_counts(query);
    REQUIRE(counts.size() == items.size());
    for (std::size_t i = 0; i < items.size(); ++i)
      CHECK(counts[i] == space::matching_dimensions(items[i], query));
  }
}

TEST_CASE("ugc candidates: strict threshold, foreign records only, argmax per record") {
  auto reg = testsupport::make_registry(5);
  std::vector<pairs::AnnotatedRecord> records;
  // anchor record (must be excluded)
  records.push_back(make_record(reg, "anchor", {{3, 3, 3, 3, 3}, {1, 1, 1, 1, 1}}));
  // foreign record with 3/5 agreement (sim == 0.6, must be excluded at t=0.6)
  records.push_back(make_record(reg, "edge", {{3, 3, 3, 1, 1}}));
  // foreign record with two responses: 4/5 and 5/5 agreement; argmax keeps 5/5
  records.push_back(make_record(reg, "good", {{3, 3, 3, 3, 1}, {3, 3, 3, 3, 3}}));

  CorpusIndex corpus(records, 3);
  const auto anchor_iv = iv({3, 3, 3, 3, 3});
  auto candidates = corpus.ugc_candidates(anchor_iv, "anchor", Rational(3, 5));

  REQUIRE(candidates.size() == 1);
  CHECK(records[candidates[0].record_index].record.id == "good");
  CHECK(candidates[0].response_index == 1);
  CHECK(candidates[0].matches == 5);

  SUBCASE("identical intensities from a foreign record are included (sim 1.0)") {
    auto at_half = corpus.ugc_candidates(anchor_iv, "anchor", Rational(1, 2));
    // edge (3/5 > 0.5) and good both qualify now
    CHECK(at_half.size() == 2);
  }
}

TEST_CASE("pair pool applies the dual-side filter") {
  auto reg = testsupport::make_registry(4);
  std::vector<pairs::PreferencePair> pool;
  pool.push_back(make_anchor("a", {3, 3, 3, 3}, {1, 1, 1, 1}));
  pool.push_back(make_anchor("b", {3, 3, 3, 3}, {1, 1, 1, 1}));  // identical to anchor
  pool.push_back(make_anchor("c", {3, 3, 3, 3}, {3, 1, 1, 1}));  // rejected side 3/4 only
  pool.push_back(make_anchor("d", {1, 1, 3, 3}, {1, 1, 1, 1}));  // chosen side 2/4 only

  PairPool pairs_index(pool, 3);
  auto anchor = pool[0];
  auto candidates = pairs_index.candidates(anchor, Rational(3, 4));
  REQUIRE(candidates.size() == 1);
  CHECK(pairs_index.pair(candidates[0].pair_index).record_id == "b");

  for (const auto& c : candidates)
    CHECK(pairs_index.pair(c.pair_index).direction == anchor.direction);
}

TEST_CASE("subset_with_consistency: greedy witness with majority vote") {
  Rng rng(17);

  SUBCASE("uniform agreement: any subset qualifies and votes the witness") {
    std::vector<Candidate> candidates;
    for (std::size_t i = 0; i < 10; ++i) candidates.push_back({i, dv("+0")});
    auto result = subset_with_consistency(candidates, dv("+-"), 4, rng);
    REQUIRE(result.has_value());
    CHECK(result->first.size() == 4);
    CHECK(result->second[0] == space::Direction::Positive);
  }

  SUBCASE("no dimension unanimously matched by anyone -> none") {
    std::vector<Candidate> candidates{{0, dv("-0")}, {1, dv("0+")}};
    auto result = subset_with_consistency(candidates, dv("+-"), 4, rng);
    CHECK_FALSE(result.has_value());
  }

  SUBCASE("H above candidate count returns all qualifying candidates") {
    std::vector<Candidate> candidates{{0, dv("+0")}, {1, dv("++")}, {2, dv("-0")}};
    auto result = subset_with_consistency(candidates, dv("+0"), 16, rng);
    REQUIRE(result.has_value());
    CHECK(result->first.size() == 2);
    for (const auto& member : result->first)
      CHECK(member.direction[0] == space::Direction::Positive);
  }

  SUBCASE("falls back to the next witness dimension on shortfall") {
    // nobody agrees on dim 0, everyone on dim 1
    std::vector<Candidate> candidates{{0, dv("0-")}, {1, dv("--")}};
    auto result = subset_with_consistency(candidates, dv("+-"), 2, rng);
    REQUIRE(result.has_value());
    CHECK(result->first.size() == 2);
    CHECK(result->second[1] == space::Direction::Negative);
  }

  SUBCASE("brute force confirms infeasibility on small splits") {
    // exhaustive check: when no single candidate matches any target
    // dimension, no nonempty subset can witness it either
    std::vector<Candidate> candidates{{0, dv("-+")}, {1, dv("-+")}, {2, dv("0+")}};
    const auto target = dv("+-");
    for (int mask = 1; mask < 8; ++mask) {
      std::vector<space::DirectionVector> chosen;
      for (int b = 0; b < 3; ++b)
        if (mask & (1 << b)) chosen.push_back(candidates[static_cast<std::size_t>(b)].direction);
      bool witnessed = false;
      for (std::size_t d = 0; d < target.size(); ++d) {
        if (target[d] == space::Direction::Neutral) continue;
        witnessed |= std::all_of(chosen.begin(), chosen.end(),
                                 [&](const auto& v) { return v[d] == target[d]; });
      }
      CHECK_FALSE(witnessed);
    }
    CHECK_FALSE(subset_with_consistency(candidates, target, 4, rng).has_value());
  }
}

TEST_CASE("build_ugc_persona: boundary threshold, anchored similarity, voted direction") {
  auto reg = testsupport::make_registry(5);
  std::vector<pairs::AnnotatedRecord> records;
  records.push_back(make_record(reg, "anchor", {{3, 3, 3, 3, 3}, {1, 1, 1, 1, 1}}));
  for (int i = 0; i < 6; ++i)
    records.push_back(make_record(reg, "f" + std::to_string(i), {{3, 3, 3, 3, i % 2 == 0 ? 3 : 1}}));
  CorpusIndex corpus(records, 3);

  auto anchor = make_anchor("anchor", {3, 3, 3, 3, 3}, {1, 1, 1, 1, 1});
  PersonaConfig config;
  config.similarity_threshold = Rational(3, 5);
  config.max_examples = 4;
  config.seed = 5;

  auto persona = build_ugc_persona(anchor, corpus, config, "anchor#0");
  REQUIRE(persona.has_value());
  CHECK(persona->examples.size() <= 4);
  for (const auto& example : persona->examples) {
    CHECK(example.direction == space::median_heuristic_direction(example.intensity));
    const auto matches = space::matching_dimensions(example.intensity, anchor.intensity_w);
    CHECK(matches * 5 > 3 * 5);  // strictly above t = 0.6 with D = 5
  }
  // vote equals majority of stored per-example directions
  std::vector<space::DirectionVector> dirs;
  for (const auto& e : persona->examples) dirs.push_back(e.direction);
  CHECK(persona->voted == space::majority_vote(dirs));

  SUBCASE("reruns with the same seed reproduce the subset") {
    auto again = build_ugc_persona(anchor, corpus, config, "anchor#0");
    REQUIRE(again.has_value());
    REQUIRE(again->examples.size() == persona->examples.size());
    for (std::size_t i = 0; i < persona->examples.size(); ++i)
      CHECK(again->examples[i].response == persona->examples[i].response);
  }
}

TEST_CASE("build_pair_persona keeps dual-matching pool entries") {
  std::vector<pairs::PreferencePair> pool;
  pool.push_back(make_anchor("a", {3, 3, 3, 3}, {1, 1, 1, 1}));
  for (int i = 0; i < 5; ++i)
    pool.push_back(make_anchor("p" + std::to_string(i), {3, 3, 3, 3}, {1, 1, 1, 1}));
  pool.push_back(make_anchor("onlyw", {3, 3, 3, 3}, {3, 3, 1, 1}));

  PairPool index(pool, 3);
  PersonaConfig config;
  config.similarity_threshold = Rational(3, 4);
  config.max_examples = 16;
  config.seed = 9;

  auto persona = build_pair_persona(pool[0], index, config, "a#0");
  REQUIRE(persona.has_value());
  CHECK(persona->examples.size() == 5);
  for (const auto& example : persona->examples) CHECK(example.direction == pool[0].direction);
  CHECK(persona->voted == pool[0].direction);
}

TEST_CASE("assemble_example validates the joint criterion") {
  PersonaConfig config;
  PersonaExample example;
  example.id = "e1";
  example.direction = dv("+0-");
  example.intensity_w = iv({3, 2, 1});
  example.intensity_l = iv({1, 2, 3});

  SUBCASE("demo-only consistent example passes") {
    annotation::DemoPersona demo;
    demo.directions = dv("+00");
    example.demo = demo;
    std::string reason;
    auto assembled = assemble_example(example, config, &reason);
    CHECK(assembled.has_value());
  }

  SUBCASE("components disagreeing on every non-neutral dimension fail") {
    annotation::DemoPersona demo;
    demo.directions = dv("-0+");
    example.demo = demo;
    std::string reason;
    auto assembled = assemble_example(example, config, &reason);
    CHECK_FALSE(assembled.has_value());
    CHECK(reason == "no-consistent-subset");
  }

  SUBCASE("no components present fails") {
    std::string reason;
    CHECK_FALSE(assemble_example(example, config, &reason).has_value());
  }
}

TEST_CASE("training-emission subsampling re-votes and stays consistent") {
  PersonaConfig config;
  config.subsample_range = std::make_pair(0, 4);
  config.seed = 31;

  PersonaExample example;
  example.id = "e2";
  example.direction = dv("+0");
  example.intensity_w = iv({3, 2});
  example.intensity_l = iv({1, 2});
  UgcPersona ugc;
  for (int i = 0; i < 8; ++i) {
    UgcExample item;
    item.post = "p" + std::to_string(i);
    item.response = "r" + std::to_string(i);
    item.direction = dv("+0");
    item.intensity = iv({3, 2});
    ugc.examples.push_back(item);
  }
  ugc.voted = dv("+0");
  example.ugc = ugc;
  annotation::DemoPersona demo;
  demo.directions = dv("+0");
  example.demo = demo;

  for (int trial = 0; trial < 10; ++trial) {
    config.seed = static_cast<std::uint64_t>(trial);
    auto assembled = assemble_example(example, config);
    REQUIRE(assembled.has_value());
    if (assembled->ugc) {
      CHECK(assembled->ugc->examples.size() <= 4);
      std::vector<space::DirectionVector> dirs;
      for (const auto& e : assembled->ugc->examples) dirs.push_back(e.direction);
      CHECK(assembled->ugc->voted == space::majority_vote(dirs));
    }
    CHECK(space::check_preference_consistency(assembled->direction,
                                              assembled->component_vectors()));
  }
}

namespace {

// Intensity requests go to the mock; demographic requests come back broken.
class BrokenDemoBackend : public annotation::AnnotatorBackend {
 public:
  explicit BrokenDemoBackend(annotation::MockBackend& mock) : mock_(mock) {}
  std::string complete(const annotation::AnnotationRequest& request) override {
    if (request.task == annotation::Task::Demographic) {
      ++demo_calls_;
      return "no structured block here";
    }
    return mock_.complete(request);
  }
  int demo_calls() const { return demo_calls_; }

 private:
  annotation::MockBackend& mock_;
  int demo_calls_ = 0;
};

}  // namespace

TEST_CASE("examples survive without a demo component when another component exists") {
  auto reg = testsupport::make_registry(4);
  auto attrs = testsupport::make_attributes(reg, std::filesystem::temp_directory_path() /
                                                     "alignforge-brokendemo-attrs");
  annotation::MockBackend mock(55, reg, attrs);
  BrokenDemoBackend backend(mock);
  annotation::RetryPolicy retry;
  retry.max_retries = 0;
  annotation::Annotator annotator(backend, reg, attrs, testsupport::bundled_prompts(), retry);

  std::vector<pairs::AnnotatedRecord> records;
  std::vector<pairs::PreferencePair> anchors;
  for (int r = 0; r < 6; ++r) {
    records.push_back(
        make_record(reg, "rec" + std::to_string(r), {{3, 3, 2, 1}, {1, 1, 2, 1}}));
    auto anchor = make_anchor("rec" + std::to_string(r), {3, 3, 2, 1}, {1, 1, 2, 1});
    anchors.push_back(anchor);
  }
  CorpusIndex corpus(records, 3);

  PersonaConfig config;
  config.similarity_threshold = Rational(3, 5);
  config.max_examples = 4;
  config.seed = 6;
  config.demo_attempts = 3;

  auto result = build_personas(anchors, corpus, annotator, config);
  CHECK(result.examples.size() == 6);
  CHECK(result.demo_missing == 6);
  CHECK(backend.demo_calls() == 6 * 3);  // regeneration budget honored
  for (const auto& example : result.examples) {
    CHECK_FALSE(example.demo.has_value());
    CHECK(example.ugc.has_value());
    CHECK(space::check_preference_consistency(example.direction, example.component_vectors()));
  }
}

TEST_CASE("build_personas end to end over a planted corpus") {
  auto reg = testsupport::make_registry(4);
  auto attrs = testsupport::make_attributes(reg, std::filesystem::temp_directory_path() /
                                                     "alignforge-personas-attrs");
  annotation::MockBackend mock(101, reg, attrs);
  annotation::Annotator annotator(mock, reg, attrs, testsupport::bundled_prompts());

  // Two planted intensity profiles; many records of each so similarity
  // search always finds foreign matches.
  std::vector<pairs::AnnotatedRecord> records;
  std::vector<pairs::PreferencePair> anchors;
  for (int r = 0; r < 12; ++r) {
    records.push_back(
        make_record(reg, "rec" + std::to_string(r), {{3, 3, 2, 1}, {1, 1, 2, 1}, {3, 3, 2, 1}}));
    auto anchor = make_anchor("rec" + std::to_string(r), {3, 3, 2, 1}, {1, 1, 2, 1});
    anchor.post = records.back().record.post;
    anchor.chosen = records.back().record.responses[0];
    anchor.rejected = records.back().record.responses[1];
    anchors.push_back(anchor);
  }
  CorpusIndex corpus(records, 3);

  PersonaConfig config;
  config.similarity_threshold = Rational(3, 5);
  config.max_examples = 4;
  config.seed = 77;

  auto result = build_personas(anchors, corpus, annotator, config);
  CHECK(result.anchors_in == 12);
  CHECK(result.examples.size() == 12);
  CHECK(result.rejects.empty());
  CHECK(result.demo_missing == 0);

  for (const auto& example : result.examples) {
    CHECK(space::check_preference_consistency(example.direction, example.component_vectors()));
    REQUIRE(example.demo.has_value());
    CHECK(example.demo->directions == example.direction);
    if (example.ugc) CHECK(example.ugc->examples.size() <= 4);
    if (example.pair_persona) {
      CHECK(example.pair_persona->examples.size() <= 4);
      for (const auto& item : example.pair_persona->examples) CHECK(item.post != example.post);
    }
  }

  SUBCASE("parallel run matches the serial reference") {
    PersonaConfig parallel = config;
    parallel.threads = 0;
    auto par = build_personas(anchors, corpus, annotator, parallel);
    REQUIRE(par.examples.size() == result.examples.size());
    for (std::size_t i = 0; i < par.examples.size(); ++i)
      CHECK(to_json(par.examples[i]) == to_json(result.examples[i]));
  }

  SUBCASE("json round trip preserves the example") {
    for (const auto& example : result.examples) {
      auto json = to_json(example);
      auto back = example_from_json(json, 3);
      CHECK(to_json(back) == json);
      CHECK(back.direction == example.direction);
      if (example.ugc) CHECK(back.ugc->voted == example.ugc->voted);
    }
  }
}
