#include "alignforge/preference_space.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

namespace alignforge::space {

Direction direction_from_char(char c) {
  switch (c) {
    case '+': return Direction::Positive;
    case '0': return Direction::Neutral;
    case '-': return Direction::Negative;
  }
  throw ValidationError(std::string("direction char must be one of +0-, got '") + c + "'");
}

Category category_from_string(std::string_view s) {
  if (s == "psychological") return Category::Psychological;
  if (s == "alignment") return Category::Alignment;
  if (s == "platform") return Category::Platform;
  throw ValidationError("unknown dimension category '" + std::string(s) + "'");
}

RenderKind render_kind_from_string(std::string_view s) {
  if (s == "trait") return RenderKind::Trait;
  if (s == "style") return RenderKind::Style;
  if (s == "value") return RenderKind::Value;
  if (s == "tag") return RenderKind::Tag;
  throw ValidationError("unknown render kind '" + std::string(s) + "'");
}

std::string to_string(Category c) {
  switch (c) {
    case Category::Psychological: return "psychological";
    case Category::Alignment: return "alignment";
    case Category::Platform: return "platform";
  }
  return "?";
}

std::string to_string(RenderKind k) {
  switch (k) {
    case RenderKind::Trait: return "trait";
    case RenderKind::Style: return "style";
    case RenderKind::Value: return "value";
    case RenderKind::Tag: return "tag";
  }
  return "?";
}

DimensionRegistry::DimensionRegistry(std::vector<DimensionSpec> dims) : dims_(std::move(dims)) {
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (dims_[i].id.empty()) throw ValidationError("dimension " + std::to_string(i) + " has empty id");
    auto [it, inserted] = by_id_.emplace(dims_[i].id, i);
    if (!inserted) throw ValidationError("duplicate dimension id '" + dims_[i].id + "'");
  }
}

DimensionRegistry DimensionRegistry::load(std::istream& in, const std::string& origin) {
  std::vector<DimensionSpec> dims;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::array<std::string, 6> fields;
    std::size_t field = 0;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == '\t') {
        if (field >= fields.size())
          throw IoError(origin + ":" + std::to_string(lineno) + ": too many fields");
        fields[field++] = line.substr(start, i - start);
        start = i + 1;
      }
    }
    if (field != fields.size())
      throw IoError(origin + ":" + std::to_string(lineno) + ": expected 6 tab-separated fields, got " +
                    std::to_string(field));
    DimensionSpec spec;
    spec.id = fields[0];
    spec.display_name = fields[1];
    spec.category = category_from_string(fields[2]);
    spec.render_kind = render_kind_from_string(fields[3]);
    spec.positive_phrase = fields[4];
    spec.negative_phrase = fields[5];
    dims.push_back(std::move(spec));
  }
  return DimensionRegistry(std::move(dims));
}

DimensionRegistry DimensionRegistry::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dimension catalog " + path.string());
  return load(in, path.string());
}

const DimensionSpec& DimensionRegistry::at(std::size_t index) const {
  if (index >= dims_.size())
    throw ValidationError("dimension index " + std::to_string(index) + " out of range (D=" +
                          std::to_string(dims_.size()) + ")");
  return dims_[index];
}

std::optional<std::size_t> DimensionRegistry::find(std::string_view id) const {
  auto it = by_id_.find(std::string(id));
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

bool DirectionVector::all_neutral() const {
  for (Direction d : entries)
    if (d != Direction::Neutral) return false;
  return true;
}

DirectionVector DirectionVector::negated() const {
  DirectionVector out;
  out.entries.reserve(entries.size());
  for (Direction d : entries) out.entries.push_back(negate(d));
  return out;
}

std::string DirectionVector::to_chars() const {
  std::string s;
  s.reserve(entries.size());
  for (Direction d : entries) s.push_back(direction_char(d));
  return s;
}

DirectionVector DirectionVector::from_chars(std::string_view chars) {
  DirectionVector out;
  out.entries.reserve(chars.size());
  for (char c : chars) out.entries.push_back(direction_from_char(c));
  return out;
}

void IntensityVector::validate() const {
  if (max_level < 1) throw ValidationError("intensity max level must be >= 1");
  for (std::size_t d = 0; d < levels.size(); ++d) {
    if (levels[d] < 1 || levels[d] > max_level)
      throw ValidationError("intensity level " + std::to_string(levels[d]) + " at dimension " +
                            std::to_string(d) + " outside [1, " + std::to_string(max_level) + "]");
  }
}

IntensityEmbedding embed_intensities(const IntensityVector& iv) {
  iv.validate();
  IntensityEmbedding emb;
  emb.dims = iv.levels.size();
  emb.levels = iv.max_level;
  emb.values.assign(emb.dims * static_cast<std::size_t>(iv.max_level), 0);
  for (std::size_t d = 0; d < emb.dims; ++d)
    emb.values[d * static_cast<std::size_t>(iv.max_level) +
               static_cast<std::size_t>(iv.levels[d] - 1)] = 1;
  return emb;
}

double cosine_similarity(const IntensityEmbedding& a, const IntensityEmbedding& b) {
  if (a.values.size() != b.values.size())
    throw ValidationError("cosine_similarity: length mismatch " + std::to_string(a.values.size()) +
                          " vs " + std::to_string(b.values.size()));
  long long dot = 0;
  long long na = 0;
  long long nb = 0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    dot += static_cast<long long>(a.values[i]) * b.values[i];
    na += static_cast<long long>(a.values[i]) * a.values[i];
    nb += static_cast<long long>(b.values[i]) * b.values[i];
  }
  if (na == 0 || nb == 0) throw ValidationError("cosine_similarity: zero-norm embedding");
  return static_cast<double>(dot) / (std::sqrt(static_cast<double>(na)) * std::sqrt(static_cast<double>(nb)));
}

std::size_t matching_dimensions(const IntensityVector& a, const IntensityVector& b) {
  if (a.levels.size() != b.levels.size() || a.max_level != b.max_level)
    throw ValidationError("matching_dimensions: shape mismatch");
  std::size_t matches = 0;
  for (std::size_t d = 0; d < a.levels.size(); ++d)
    if (a.levels[d] == b.levels[d]) ++matches;
  return matches;
}

DirectionVector compare_intensities(const IntensityVector& winner, const IntensityVector& loser) {
  if (winner.levels.size() != loser.levels.size() || winner.max_level != loser.max_level)
    throw ValidationError("compare_intensities: shape mismatch");
  winner.validate();
  loser.validate();
  DirectionVector out;
  out.entries.reserve(winner.levels.size());
  for (std::size_t d = 0; d < winner.levels.size(); ++d) {
    if (winner.levels[d] > loser.levels[d])
      out.entries.push_back(Direction::Positive);
    else if (winner.levels[d] < loser.levels[d])
      out.entries.push_back(Direction::Negative);
    else
      out.entries.push_back(Direction::Neutral);
  }
  return out;
}

DirectionVector median_heuristic_direction(const IntensityVector& iv) {
  iv.validate();
  if (iv.max_level % 2 == 0)
    throw ConfigError("median heuristic requires an odd number of intensity levels, got " +
                      std::to_string(iv.max_level));
  const int median = (iv.max_level + 1) / 2;
  DirectionVector out;
  out.entries.reserve(iv.levels.size());
  for (int level : iv.levels) {
    if (level > median)
      out.entries.push_back(Direction::Positive);
    else if (level < median)
      out.entries.push_back(Direction::Negative);
    else
      out.entries.push_back(Direction::Neutral);
  }
  return out;
}

DirectionVector majority_vote(std::span<const DirectionVector> vectors) {
  if (vectors.empty()) throw ValidationError("majority_vote: empty input");
  const std::size_t dims = vectors[0].size();
  for (const auto& v : vectors)
    if (v.size() != dims) throw ValidationError("majority_vote: mixed vector lengths");
  DirectionVector out;
  out.entries.reserve(dims);
  for (std::size_t d = 0; d < dims; ++d) {
    std::array<std::size_t, 3> counts{};
    for (const auto& v : vectors) counts[static_cast<std::size_t>(v[d])] += 1;
    const std::size_t best = std::max({counts[0], counts[1], counts[2]});
    int winners = 0;
    Direction winner = Direction::Neutral;
    for (int i = 0; i < 3; ++i) {
      if (counts[static_cast<std::size_t>(i)] == best) {
        ++winners;
        winner = static_cast<Direction>(i);
      }
    }
    out.entries.push_back(winners == 1 ? winner : Direction::Neutral);
  }
  return out;
}

bool check_preference_consistency(const DirectionVector& target,
                                  std::span<const DirectionVector> personas) {
  for (const auto& p : personas)
    if (p.size() != target.size())
      throw ValidationError("check_preference_consistency: persona length " +
                            std::to_string(p.size()) + " != target length " +
                            std::to_string(target.size()));
  for (std::size_t d = 0; d < target.size(); ++d) {
    if (target[d] == Direction::Neutral) continue;
    bool all_agree = true;
    for (const auto& p : personas) {
      if (p[d] != target[d]) {
        all_agree = false;
        break;
      }
    }
    if (all_agree) return true;
  }
  return false;
}

std::string render_phrase(const DimensionSpec& spec, Direction direction) {
  if (direction == Direction::Neutral)
    throw ValidationError("render_phrase: neutral directions are not rendered (" + spec.id + ")");
  const bool positive = direction == Direction::Positive;
  switch (spec.render_kind) {
    case RenderKind::Trait:
      return (positive ? "High " : "Low ") + (positive ? spec.positive_phrase : spec.negative_phrase);
    case RenderKind::Style:
      return (positive ? "Prefers " : "Avoids ") + spec.positive_phrase;
    case RenderKind::Value:
      return positive ? spec.positive_phrase : spec.negative_phrase;
    case RenderKind::Tag:
      return (positive ? "Likes " : "Dislikes ") + spec.display_name;
  }
  return {};
}

}  // namespace alignforge::space
