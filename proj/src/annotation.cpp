#include "alignforge/annotation.hpp"

#include <algorithm>
#include <chrono>
#include <sstream>
#include <thread>

#include "alignforge/digest.hpp"
#include "alignforge/rng.hpp"

namespace alignforge::annotation {

using space::Direction;
using space::DirectionVector;
using space::IntensityVector;

std::string to_string(Task t) {
  switch (t) {
    case Task::Intensity: return "intensity";
    case Task::Demographic: return "demographic";
    case Task::DirectionInference: return "direction_inference";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Planted headers

std::unordered_map<std::string, int> parse_planted_levels(std::string_view text) {
  std::unordered_map<std::string, int> levels;
  std::size_t pos = 0;
  while ((pos = text.find("[[d:", pos)) != std::string_view::npos) {
    const std::size_t eq = text.find('=', pos + 4);
    const std::size_t close = text.find("]]", pos + 4);
    if (eq == std::string_view::npos || close == std::string_view::npos || eq > close) {
      pos += 4;
      continue;
    }
    std::string id(text.substr(pos + 4, eq - (pos + 4)));
    int level = 0;
    bool numeric = eq + 1 < close;
    for (std::size_t i = eq + 1; i < close; ++i) {
      char c = text[i];
      if (c < '0' || c > '9') {
        numeric = false;
        break;
      }
      level = level * 10 + (c - '0');
    }
    if (numeric && !id.empty()) levels[id] = level;
    pos = close + 2;
  }
  return levels;
}

std::string strip_planted_headers(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t open = text.find("[[d:", pos);
    if (open == std::string_view::npos) {
      out.append(text.substr(pos));
      break;
    }
    const std::size_t close = text.find("]]", open + 4);
    if (close == std::string_view::npos) {
      out.append(text.substr(pos));
      break;
    }
    out.append(text.substr(pos, open - pos));
    pos = close + 2;
    // swallow one following whitespace so headers can sit on their own line
    if (pos < text.size() && (text[pos] == '\n' || text[pos] == ' ')) ++pos;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Option recoding

int option_to_level(int option) {
  switch (option) {
    case 1: return 3;  // high / likes
    case 2: return 1;  // low / dislikes
    case 3: return 2;  // cannot reflect
  }
  throw ValidationError("intensity option must be 1, 2, or 3; got " + std::to_string(option));
}

int level_to_option(int level) {
  switch (level) {
    case 3: return 1;
    case 1: return 2;
    case 2: return 3;
  }
  throw ValidationError("intensity level must be 1, 2, or 3; got " + std::to_string(level));
}

namespace {

// Accepts a bare option number, possibly followed by punctuation ("2", "2.",
// "(2) ..."). Anything else is unparseable.
std::optional<int> parse_intensity_option(const std::string& reply) {
  std::string s = trim(reply);
  if (!s.empty() && s.front() == '(') s.erase(0, 1);
  if (s.empty() || s[0] < '1' || s[0] > '3') return std::nullopt;
  if (s.size() > 1) {
    char next = s[1];
    if (next != '.' && next != ')' && next != ' ' && next != '\n') return std::nullopt;
  }
  return s[0] - '0';
}

}  // namespace

// ---------------------------------------------------------------------------
// Structured-reply extraction

std::optional<nlohmann::json> extract_last_json_object(std::string_view text) {
  std::optional<nlohmann::json> best;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] != '{') continue;
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t j = i; j < text.size(); ++j) {
      char c = text[j];
      if (in_string) {
        if (escaped)
          escaped = false;
        else if (c == '\\')
          escaped = true;
        else if (c == '"')
          in_string = false;
        continue;
      }
      if (c == '"')
        in_string = true;
      else if (c == '{')
        ++depth;
      else if (c == '}') {
        --depth;
        if (depth == 0) {
          auto candidate = nlohmann::json::parse(text.substr(i, j - i + 1), nullptr, false);
          if (candidate.is_object()) {
            best = std::move(candidate);
            i = j;  // resume scanning after this block
          }
          break;
        }
      }
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Demographic attribute table

DemographicAttributes DemographicAttributes::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open demographic attribute table " + path.string());
  DemographicAttributes table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == '\t') {
        fields.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    }
    if (fields.size() != 4)
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 4 fields");
    DemographicAttribute attr;
    attr.name = fields[0];
    attr.dim_id = fields[1] == "-" ? std::string() : fields[1];
    attr.positive_option = fields[2] == "-" ? std::string() : fields[2];
    attr.negative_option = fields[3] == "-" ? std::string() : fields[3];
    table.by_name_.emplace(attr.name, table.attrs_.size());
    if (attr.directional()) table.by_dim_.emplace(attr.dim_id, table.attrs_.size());
    table.attrs_.push_back(std::move(attr));
  }
  return table;
}

const DemographicAttribute* DemographicAttributes::find(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  return it == by_name_.end() ? nullptr : &attrs_[it->second];
}

const DemographicAttribute* DemographicAttributes::find_by_dim(std::string_view dim_id) const {
  auto it = by_dim_.find(std::string(dim_id));
  return it == by_dim_.end() ? nullptr : &attrs_[it->second];
}

// ---------------------------------------------------------------------------
// Mock backend

MockBackend::MockBackend(std::uint64_t seed, const space::DimensionRegistry& registry,
                         const DemographicAttributes& attrs, int max_level)
    : seed_(seed), registry_(registry), attrs_(attrs), max_level_(max_level) {
  if (max_level_ != 3)
    throw ConfigError("annotation protocol is defined for 3 intensity levels, got " +
                      std::to_string(max_level_));
}

int MockBackend::intensity_level(const std::string& response, const std::string& dim_id) const {
  const auto planted = parse_planted_levels(response);
  if (auto it = planted.find(dim_id); it != planted.end()) {
    if (it->second < 1 || it->second > max_level_)
      throw ValidationError("planted level " + std::to_string(it->second) + " for '" + dim_id +
                            "' outside [1, " + std::to_string(max_level_) + "]");
    return it->second;
  }
  const std::string clean = strip_planted_headers(response);
  const std::uint64_t h = substream_seed(seed_, "mock-intensity", dim_id + "\x1f" + clean);
  return 1 + static_cast<int>(h % static_cast<std::uint64_t>(max_level_));
}

std::string MockBackend::complete(const AnnotationRequest& request) {
  if (request.task == Task::Intensity || request.task == Task::DirectionInference) {
    if (!request.dimension || request.responses.size() != 1)
      throw BackendError("mock: intensity request needs one response and a dimension");
    const int level = intensity_level(request.responses[0], *request.dimension);
    return std::to_string(level_to_option(level));
  }

  // Demographic: derive both intensity vectors, compare, and echo the result
  // in the prompt's structured output format.
  if (request.responses.size() != 2)
    throw BackendError("mock: demographic request needs exactly two responses");
  nlohmann::json desc = nlohmann::json::object();
  std::vector<std::string> likes;
  std::vector<std::string> dislikes;
  std::vector<std::string> phrases;
  for (const auto& dim : registry_.dimensions()) {
    const int lw = intensity_level(request.responses[0], dim.id);
    const int ll = intensity_level(request.responses[1], dim.id);
    if (lw == ll) continue;
    const Direction dir = lw > ll ? Direction::Positive : Direction::Negative;
    phrases.push_back(space::render_phrase(dim, dir));
    if (dim.render_kind == space::RenderKind::Tag) {
      (dir == Direction::Positive ? likes : dislikes).push_back(dim.display_name);
      continue;
    }
    const DemographicAttribute* attr = attrs_.find_by_dim(dim.id);
    if (attr == nullptr) continue;
    desc[attr->name] = dir == Direction::Positive ? attr->positive_option : attr->negative_option;
  }
  std::string narrative = "A commenter best described as: ";
  for (std::size_t i = 0; i < phrases.size(); ++i) {
    if (i > 0) narrative += "; ";
    narrative += phrases[i];
  }
  if (phrases.empty()) narrative = "A commenter with no clearly observable preferences.";
  nlohmann::json reply{{"reason", "Derived by comparing the manifested intensity of the two responses."},
                       {"textural persona", narrative},
                       {"dimension description", desc}};
  auto join = [](const std::vector<std::string>& items) {
    std::string s;
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (i > 0) s += ", ";
      s += items[i];
    }
    return s;
  };
  reply["like keywords"] = join(likes);
  reply["dislike keywords"] = join(dislikes);
  return reply.dump(2);
}

// ---------------------------------------------------------------------------
// Replay backend

ReplayBackend ReplayBackend::load_file(const std::filesystem::path& path) {
  std::unordered_map<std::string, std::string> replies;
  std::ifstream in(path);
  if (!in) throw IoError("cannot open replay file " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto record = nlohmann::json::parse(line, nullptr, false);
    if (!record.is_object() || !record.contains("request_id") || !record.contains("reply"))
      throw IoError(path.string() + ":" + std::to_string(lineno) +
                    ": expected {\"request_id\", \"reply\"}");
    replies[record["request_id"].get<std::string>()] = record["reply"].get<std::string>();
  }
  return ReplayBackend(std::move(replies));
}

std::string ReplayBackend::complete(const AnnotationRequest& request) {
  auto it = replies_.find(request.request_id);
  if (it == replies_.end())
    throw BackendError("replay: no recorded reply for request '" + request.request_id + "'");
  return it->second;
}

// ---------------------------------------------------------------------------
// Audit log

AuditLog::AuditLog(const std::filesystem::path& path) : path_(path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, std::ios::binary | std::ios::app);
  if (!out_) throw IoError("cannot open audit log " + path.string());
}

void AuditLog::record(const AnnotationRequest& request, const std::string& reply, int attempt) {
  const auto now = std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::system_clock::now().time_since_epoch())
                       .count();
  nlohmann::json entry{{"request_id", request.request_id},
                       {"task", to_string(request.task)},
                       {"dim", request.dimension ? nlohmann::json(*request.dimension) : nlohmann::json()},
                       {"prompt_sha256", sha256_hex(request.prompt)},
                       {"reply", reply},
                       {"attempt", attempt},
                       {"timestamp", now}};
  std::lock_guard<std::mutex> lock(mu_);
  out_ << entry.dump() << '\n';
  out_.flush();
}

// ---------------------------------------------------------------------------
// Annotator

Annotator::Annotator(AnnotatorBackend& backend, const space::DimensionRegistry& registry,
                     const DemographicAttributes& attrs, const PromptLibrary& prompts,
                     RetryPolicy retry, AuditLog* audit, int max_level)
    : backend_(backend),
      registry_(registry),
      attrs_(attrs),
      prompts_(prompts),
      retry_(retry),
      audit_(audit),
      max_level_(max_level) {
  if (max_level_ != 3)
    throw ConfigError("annotation protocol is defined for 3 intensity levels, got " +
                      std::to_string(max_level_));
}

std::string Annotator::complete_with_retry(AnnotationRequest& request,
                                           const std::function<bool(const std::string&)>& accept) {
  int backoff_ms = retry_.initial_backoff_ms;
  for (int attempt = 0; attempt <= retry_.max_retries; ++attempt) {
    std::string reply;
    try {
      reply = backend_.complete(request);
    } catch (const BackendError& e) {
      reply = std::string("<backend-error> ") + e.what();
    }
    if (audit_ != nullptr) audit_->record(request, reply, attempt);
    if (accept(reply)) return reply;
    if (attempt < retry_.max_retries && backend_.is_external()) {
      std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms));
      backoff_ms = static_cast<int>(backoff_ms * retry_.backoff_factor);
    }
  }
  return {};
}

std::optional<int> Annotator::annotate_intensity(const std::string& post,
                                                 const std::string& response,
                                                 const std::string& dim_id,
                                                 const std::string& request_id) {
  auto index = registry_.find(dim_id);
  if (!index)
    throw ValidationError("annotate_intensity: dimension '" + dim_id + "' not in registry");
  AnnotationRequest request;
  request.task = Task::Intensity;
  request.request_id = request_id;
  request.post = post;
  request.responses = {response};
  request.dimension = dim_id;
  request.prompt = prompts_.intensity_prompt(strip_planted_headers(post),
                                             strip_planted_headers(response), registry_.at(*index));

  std::optional<int> level;
  complete_with_retry(request, [&](const std::string& reply) {
    auto option = parse_intensity_option(reply);
    if (!option) return false;
    level = option_to_level(*option);
    return true;
  });
  return level;
}

std::optional<IntensityVector> Annotator::annotate_response(const std::string& post,
                                                            const std::string& response,
                                                            const std::string& request_key) {
  IntensityVector iv;
  iv.max_level = max_level_;
  iv.levels.reserve(registry_.size());
  for (const auto& dim : registry_.dimensions()) {
    auto level = annotate_intensity(post, response, dim.id, request_key + "/" + dim.id);
    if (!level) return std::nullopt;
    iv.levels.push_back(*level);
  }
  return iv;
}

DemoOutcome Annotator::annotate_demo_persona(const std::string& post, const std::string& chosen,
                                             const std::string& rejected,
                                             const DirectionVector& target,
                                             const std::string& request_id) {
  if (target.size() != registry_.size())
    throw ValidationError("annotate_demo_persona: target length " + std::to_string(target.size()) +
                          " != D=" + std::to_string(registry_.size()));
  AnnotationRequest request;
  request.task = Task::Demographic;
  request.request_id = request_id;
  request.post = post;
  request.responses = {chosen, rejected};
  request.prompt = prompts_.demographic_prompt(strip_planted_headers(post),
                                               strip_planted_headers(chosen),
                                               strip_planted_headers(rejected));

  DemoOutcome outcome;
  complete_with_retry(request, [&](const std::string& reply) {
    std::optional<DemoPersona> persona;
    try {
      persona = parse_demo_reply(reply, registry_, attrs_);
    } catch (const ValidationError& e) {
      outcome.diagnostic = e.what();
      return true;  // semantic violation: reject without further retries
    }
    if (!persona) {
      outcome.diagnostic = "malformed structured reply";
      return false;  // retriable
    }
    // Consistency filter: every non-neutral target dimension the reply
    // mentions must agree with the target.
    for (std::size_t d = 0; d < target.size(); ++d) {
      if (target[d] == Direction::Neutral) continue;
      if (persona->directions[d] != Direction::Neutral && persona->directions[d] != target[d]) {
        outcome.diagnostic = "demo direction contradicts the pair on dimension '" +
                             registry_.at(d).id + "'";
        return true;  // reject
      }
    }
    outcome.persona = std::move(persona);
    outcome.diagnostic.clear();
    return true;
  });
  if (!outcome.persona && outcome.diagnostic.empty())
    outcome.diagnostic = "malformed structured reply after retries";
  return outcome;
}

std::vector<DirectionVector> Annotator::infer_ugc_directions(std::span<const UgcItem> examples,
                                                             const std::string& request_key) {
  if (examples.empty())
    throw ValidationError("infer_ugc_directions: empty persona component");
  std::vector<DirectionVector> out;
  out.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    auto iv = annotate_response(examples[i].post, examples[i].response,
                                request_key + "/ugc" + std::to_string(i));
    if (!iv) continue;  // unannotatable example is excluded
    out.push_back(space::median_heuristic_direction(*iv));
  }
  return out;
}

std::vector<DirectionVector> Annotator::infer_pair_directions(std::span<const PairItem> examples,
                                                              const std::string& request_key) {
  if (examples.empty())
    throw ValidationError("infer_pair_directions: empty persona component");
  std::vector<DirectionVector> out;
  out.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const std::string key = request_key + "/pair" + std::to_string(i);
    auto iw = annotate_response(examples[i].post, examples[i].chosen, key + "/w");
    auto il = annotate_response(examples[i].post, examples[i].rejected, key + "/l");
    if (!iw || !il) continue;  // unannotatable example is excluded
    out.push_back(space::compare_intensities(*iw, *il));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Demographic reply parsing

std::optional<DemoPersona> parse_demo_reply(const std::string& reply,
                                            const space::DimensionRegistry& registry,
                                            const DemographicAttributes& attrs) {
  auto object = extract_last_json_object(reply);
  if (!object) return std::nullopt;
  const auto& obj = *object;
  if (!obj.contains("textural persona") || !obj["textural persona"].is_string())
    return std::nullopt;
  if (!obj.contains("dimension description") || !obj["dimension description"].is_object())
    return std::nullopt;

  DemoPersona persona;
  persona.narrative = obj["textural persona"].get<std::string>();
  persona.rationale = obj.value("reason", std::string());
  persona.directions = DirectionVector::neutral(registry.size());

  for (const auto& [name, value] : obj["dimension description"].items()) {
    const DemographicAttribute* attr = attrs.find(name);
    if (attr == nullptr)
      throw ValidationError("demo reply names unknown dimension '" + name + "'");
    if (!attr->directional()) continue;  // free-text attributes (Occupation)
    auto index = registry.find(attr->dim_id);
    if (!index)
      throw ValidationError("attribute '" + name + "' maps to unknown dimension '" + attr->dim_id +
                            "'");
    if (!value.is_string())
      throw ValidationError("demo reply value for '" + name + "' is not a string");
    const std::string option = value.get<std::string>();
    if (option == attr->positive_option)
      persona.directions[*index] = Direction::Positive;
    else if (option == attr->negative_option)
      persona.directions[*index] = Direction::Negative;
    else
      throw ValidationError("demo reply option '" + option + "' for '" + name +
                            "' matches neither listed option");
  }

  auto apply_keywords = [&](const std::string& field, Direction dir, std::set<std::string>& tags) {
    if (!obj.contains(field) || !obj[field].is_string()) return;
    std::stringstream ss(obj[field].get<std::string>());
    std::string token;
    while (std::getline(ss, token, ',')) {
      token = trim(token);
      if (token.empty()) continue;
      // keywords use display names ("gourmet food"); map to registry ids
      std::optional<std::size_t> index;
      for (std::size_t d = 0; d < registry.size(); ++d) {
        const auto& spec = registry.at(d);
        if (spec.render_kind == space::RenderKind::Tag &&
            (spec.display_name == token || spec.id == token)) {
          index = d;
          break;
        }
      }
      if (!index) throw ValidationError("demo reply keyword '" + token + "' is not a platform tag");
      const auto& spec = registry.at(*index);
      if (spec.category != space::Category::Platform)
        throw ValidationError("demo reply keyword '" + token + "' is not a platform tag");
      if (persona.directions[*index] != Direction::Neutral && persona.directions[*index] != dir)
        throw ValidationError("demo reply lists '" + token + "' as both liked and disliked");
      persona.directions[*index] = dir;
      tags.insert(spec.id);
    }
  };
  apply_keywords("like keywords", Direction::Positive, persona.like_tags);
  apply_keywords("dislike keywords", Direction::Negative, persona.dislike_tags);
  return persona;
}

}  // namespace alignforge::annotation
