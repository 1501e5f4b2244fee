#pragma once

#include <span>
#include <string>
#include <vector>

#include "alignforge/common.hpp"
#include "alignforge/persona_builder.hpp"
#include "alignforge/preference_space.hpp"
#include "alignforge/prompts.hpp"

namespace alignforge::aggregate {

// Thresholds for turning per-dimension mean encodings into directions.
// Means live on the exact grid k/(2n), so comparisons stay in integers.
struct AggregationConfig {
  Rational t1{3, 4};  // mean strictly above -> Positive
  Rational t2{1, 4};  // mean strictly below -> Negative
  bool per_component_vote = false;

  void validate() const {
    if (!(2 * t2.num < t2.den))
      throw ConfigError("aggregation threshold t2 must be below 0.5");
    if (!(2 * t1.num > t1.den))
      throw ConfigError("aggregation threshold t1 must be above 0.5");
  }
};

// Mean of the fixed numeric encodings per dimension, thresholded into the
// unified direction vector.
space::DirectionVector aggregate_directions(std::span<const space::DirectionVector> components,
                                            const AggregationConfig& config);

// The vectors an example contributes to aggregation: one per behavioral
// persona example plus the demo vector, or one voted vector per component
// when per_component_vote is set.
std::vector<space::DirectionVector> collect_aggregation_inputs(
    const personas::PersonaExample& example, bool per_component_vote);

struct RenderedPreference {
  std::string text;                       // "" when everything is neutral
  std::vector<std::string> covered_dims;  // ids of rendered dimensions
};

// Rule-based natural-language rendering of the non-neutral dimensions, in
// registry order, comma-separated.
RenderedPreference render_description(const space::DirectionVector& directions,
                                      const space::DimensionRegistry& registry);

// The assembled history block: numbered UGC examples, numbered pair
// examples, persona narrative; absent components are omitted. Planted test
// headers never reach the text.
std::string persona_history_text(const personas::PersonaExample& example);

// Persona-conditioned prompt around the history block.
std::string build_ica_prompt(const annotation::PromptLibrary& prompts,
                             const personas::PersonaExample& example);

// Preference-conditioned prompt from a rendered description.
std::string build_pba_prompt(const annotation::PromptLibrary& prompts,
                             const std::string& rendered_preferences, const std::string& task);

}  // namespace alignforge::aggregate
