#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "alignforge/common.hpp"

namespace alignforge::space {

// Per-dimension preference direction. The numeric encoding is fixed:
// Positive = 1.0, Neutral = 0.5, Negative = 0.0.
enum class Direction : std::uint8_t { Negative = 0, Neutral = 1, Positive = 2 };

inline double direction_value(Direction d) {
  switch (d) {
    case Direction::Positive: return 1.0;
    case Direction::Neutral: return 0.5;
    case Direction::Negative: return 0.0;
  }
  return 0.5;
}

// Twice the numeric encoding, as an integer. Lets aggregation means live on
// an exact integer grid.
inline int direction_value_x2(Direction d) { return static_cast<int>(d); }

inline Direction negate(Direction d) {
  switch (d) {
    case Direction::Positive: return Direction::Negative;
    case Direction::Negative: return Direction::Positive;
    case Direction::Neutral: return Direction::Neutral;
  }
  return Direction::Neutral;
}

inline char direction_char(Direction d) {
  switch (d) {
    case Direction::Positive: return '+';
    case Direction::Neutral: return '0';
    case Direction::Negative: return '-';
  }
  return '0';
}

Direction direction_from_char(char c);

enum class Category : std::uint8_t { Psychological, Alignment, Platform };
enum class RenderKind : std::uint8_t { Trait, Style, Value, Tag };

Category category_from_string(std::string_view s);
RenderKind render_kind_from_string(std::string_view s);
std::string to_string(Category c);
std::string to_string(RenderKind k);

struct DimensionSpec {
  std::string id;
  std::string display_name;
  Category category = Category::Psychological;
  RenderKind render_kind = RenderKind::Value;
  std::string positive_phrase;
  std::string negative_phrase;
};

// Ordered catalog of preference dimensions. Order is load order and is part
// of every vector's meaning; ids are unique.
class DimensionRegistry {
 public:
  DimensionRegistry() = default;
  explicit DimensionRegistry(std::vector<DimensionSpec> dims);

  // Tab-separated records: id, display_name, category, render_kind,
  // positive_phrase, negative_phrase.
  static DimensionRegistry load(std::istream& in, const std::string& origin = "<stream>");
  static DimensionRegistry load_file(const std::filesystem::path& path);

  std::size_t size() const { return dims_.size(); }
  const DimensionSpec& at(std::size_t index) const;
  const std::vector<DimensionSpec>& dimensions() const { return dims_; }
  std::optional<std::size_t> find(std::string_view id) const;
  bool contains(std::string_view id) const { return find(id).has_value(); }

 private:
  std::vector<DimensionSpec> dims_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

// Direction per dimension, in registry order.
struct DirectionVector {
  std::vector<Direction> entries;

  std::size_t size() const { return entries.size(); }
  Direction operator[](std::size_t i) const { return entries[i]; }
  Direction& operator[](std::size_t i) { return entries[i]; }

  static DirectionVector neutral(std::size_t dims) {
    return DirectionVector{std::vector<Direction>(dims, Direction::Neutral)};
  }

  bool all_neutral() const;
  DirectionVector negated() const;

  // "+0-" encoding, one char per dimension.
  std::string to_chars() const;
  static DirectionVector from_chars(std::string_view chars);

  friend bool operator==(const DirectionVector&, const DirectionVector&) = default;
};

// Intensity level per dimension, each in [1, max_level].
struct IntensityVector {
  std::vector<int> levels;
  int max_level = 3;

  std::size_t size() const { return levels.size(); }
  void validate() const;

  friend bool operator==(const IntensityVector&, const IntensityVector&) = default;
};

// Concatenated one-hot blocks, length dims * levels; exactly one 1 per block.
struct IntensityEmbedding {
  std::vector<std::uint8_t> values;
  std::size_t dims = 0;
  int levels = 0;

  std::size_t size() const { return values.size(); }
};

// One-hot embedding of an intensity vector: block d carries a 1 at offset
// levels[d] - 1.
IntensityEmbedding embed_intensities(const IntensityVector& iv);

// dot(a,b) / (|a||b|). For well-formed embeddings this equals the fraction
// of dimensions with matching levels.
double cosine_similarity(const IntensityEmbedding& a, const IntensityEmbedding& b);

// Count of dimensions on which two intensity vectors agree. Divided by D it
// equals cosine_similarity of the embeddings, but stays in exact integers.
std::size_t matching_dimensions(const IntensityVector& a, const IntensityVector& b);

// Per dimension: winner stronger -> Positive, equal -> Neutral, weaker ->
// Negative.
DirectionVector compare_intensities(const IntensityVector& winner, const IntensityVector& loser);

// Standalone-response heuristic: direction from the level's position
// relative to the median level (max_level + 1) / 2. Requires odd max_level.
DirectionVector median_heuristic_direction(const IntensityVector& iv);

// Most frequent direction per dimension; ties resolve to Neutral.
DirectionVector majority_vote(std::span<const DirectionVector> vectors);

// True iff some dimension has a non-neutral target direction that every
// supplied persona vector matches exactly.
bool check_preference_consistency(const DirectionVector& target,
                                  std::span<const DirectionVector> personas);

// Natural-language phrase for a non-neutral direction on one dimension.
// trait -> "High/Low <name>", style -> "Prefers/Avoids <phrase>",
// value -> the positive or negative form verbatim, tag -> "Likes/Dislikes
// <name>". Phrases come from the catalog, not code.
std::string render_phrase(const DimensionSpec& spec, Direction direction);

}  // namespace alignforge::space
