#include "alignforge/direction_aggregator.hpp"

#include "alignforge/annotation.hpp"

namespace alignforge::aggregate {

using space::Direction;
using space::DirectionVector;

DirectionVector aggregate_directions(std::span<const DirectionVector> components,
                                     const AggregationConfig& config) {
  config.validate();
  if (components.empty()) throw ValidationError("aggregate_directions: empty component list");
  const std::size_t dims = components[0].size();
  for (const auto& c : components)
    if (c.size() != dims) throw ValidationError("aggregate_directions: mixed vector lengths");

  const auto n = static_cast<long long>(components.size());
  DirectionVector out;
  out.entries.reserve(dims);
  for (std::size_t d = 0; d < dims; ++d) {
    long long sum2 = 0;  // twice the encoded sum, an exact integer
    for (const auto& c : components) sum2 += space::direction_value_x2(c[d]);
    // mean = sum2 / (2n); compare against thresholds without division
    if (ratio_greater(sum2, 2 * n, config.t1))
      out.entries.push_back(Direction::Positive);
    else if (ratio_less(sum2, 2 * n, config.t2))
      out.entries.push_back(Direction::Negative);
    else
      out.entries.push_back(Direction::Neutral);
  }
  return out;
}

std::vector<DirectionVector> collect_aggregation_inputs(const personas::PersonaExample& example,
                                                        bool per_component_vote) {
  std::vector<DirectionVector> inputs;
  if (per_component_vote) return example.component_vectors();
  if (example.ugc)
    for (const auto& item : example.ugc->examples) inputs.push_back(item.direction);
  if (example.pair_persona)
    for (const auto& item : example.pair_persona->examples) inputs.push_back(item.direction);
  if (example.demo) inputs.push_back(example.demo->directions);
  return inputs;
}

RenderedPreference render_description(const DirectionVector& directions,
                                      const space::DimensionRegistry& registry) {
  if (directions.size() != registry.size())
    throw ValidationError("render_description: vector length " + std::to_string(directions.size()) +
                          " != D=" + std::to_string(registry.size()));
  RenderedPreference out;
  for (std::size_t d = 0; d < directions.size(); ++d) {
    if (directions[d] == Direction::Neutral) continue;
    if (!out.text.empty()) out.text += ", ";
    out.text += space::render_phrase(registry.at(d), directions[d]);
    out.covered_dims.push_back(registry.at(d).id);
  }
  return out;
}

namespace {

std::string clean(const std::string& text) { return annotation::strip_planted_headers(text); }

}  // namespace

std::string persona_history_text(const personas::PersonaExample& example) {
  std::vector<std::string> sections;
  if (example.ugc && !example.ugc->examples.empty()) {
    std::string section = "This person has commented on some posts:";
    for (std::size_t i = 0; i < example.ugc->examples.size(); ++i) {
      const auto& item = example.ugc->examples[i];
      section += "\n" + std::to_string(i + 1) + ". Post: " + clean(item.post);
      section += "\nComment: " + clean(item.response);
    }
    sections.push_back(std::move(section));
  }
  if (example.pair_persona && !example.pair_persona->examples.empty()) {
    std::string section = "This person has chosen or rejected comments on some posts:";
    for (std::size_t i = 0; i < example.pair_persona->examples.size(); ++i) {
      const auto& item = example.pair_persona->examples[i];
      section += "\n" + std::to_string(i + 1) + ". Post: " + clean(item.post);
      section += "\nChosen: " + clean(item.chosen);
      section += "\nRejected: " + clean(item.rejected);
    }
    sections.push_back(std::move(section));
  }
  if (example.demo) {
    sections.push_back("This person's persona is:\n" + clean(example.demo->narrative));
  }

  std::string history;
  for (std::size_t i = 0; i < sections.size(); ++i) {
    if (i > 0) history += "\n\n";
    history += sections[i];
  }
  return history;
}

std::string build_ica_prompt(const annotation::PromptLibrary& prompts,
                             const personas::PersonaExample& example) {
  if (!example.ugc && !example.pair_persona && !example.demo)
    throw ValidationError("build_ica_prompt: example has no persona component");
  std::string text = prompts.ica_template();
  text = replace_all(std::move(text), "{task}", clean(example.post));
  text = replace_all(std::move(text), "{history}", persona_history_text(example));
  return text;
}

std::string build_pba_prompt(const annotation::PromptLibrary& prompts,
                             const std::string& rendered_preferences, const std::string& task) {
  std::string text = prompts.pba_template();
  text = replace_all(std::move(text), "{task}", clean(task));
  text = replace_all(std::move(text), "{preferences}", rendered_preferences);
  return text;
}

}  // namespace alignforge::aggregate
