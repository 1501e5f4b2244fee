#include "alignforge/eval_harness.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>

#include "alignforge/digest.hpp"
#include "alignforge/direction_aggregator.hpp"
#include "alignforge/jsonl.hpp"
#include "alignforge/parallel.hpp"
#include "alignforge/rng.hpp"

namespace alignforge::eval {

using space::Direction;
using space::DirectionVector;

void LogProbQuad::validate() const {
  if (!std::isfinite(lp_policy_w) || !std::isfinite(lp_policy_l) || !std::isfinite(lp_ref_w) ||
      !std::isfinite(lp_ref_l))
    throw ValidationError("log-probability quad '" + id + "' has non-finite entries");
}

double dpo_loss_from_margin(double beta, double margin) {
  if (!(beta > 0.0)) throw ValidationError("dpo loss: beta must be positive");
  if (!std::isfinite(margin)) throw ValidationError("dpo loss: non-finite margin");
  const double x = beta * margin;
  // -log sigmoid(x) = log(1 + exp(-x)), folded for either sign of x
  if (x >= 0.0) return std::log1p(std::exp(-x));
  return -x + std::log1p(std::exp(x));
}

double dpo_loss(const LogProbQuad& quad, double beta) {
  quad.validate();
  return dpo_loss_from_margin(beta, quad.margin_gap());
}

double alignment_accuracy(std::span<const LogProbQuad> quads) {
  if (quads.empty()) throw ValidationError("alignment_accuracy: empty input");
  std::size_t hits = 0;
  for (const auto& quad : quads) {
    quad.validate();
    if (quad.margin_gap() > 0.0) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(quads.size());
}

personas::PersonaExample reverse_case(const personas::PersonaExample& example) {
  if (!example.pair_persona)
    throw ValidationError("reverse_case: example '" + example.id + "' has no pair persona");
  personas::PersonaExample reversed = example;
  std::swap(reversed.chosen, reversed.rejected);
  std::swap(reversed.intensity_w, reversed.intensity_l);
  reversed.direction = example.direction.negated();
  for (auto& item : reversed.pair_persona->examples) {
    std::swap(item.chosen, item.rejected);
    std::swap(item.intensity_w, item.intensity_l);
    item.direction = item.direction.negated();
  }
  reversed.pair_persona->voted = example.pair_persona->voted.negated();
  if (reversed.ugc) {
    for (auto& item : reversed.ugc->examples) item.direction = item.direction.negated();
    reversed.ugc->voted = example.ugc->voted.negated();
  }
  if (reversed.demo) reversed.demo->directions = example.demo->directions.negated();
  return reversed;
}

namespace {

bool prefers_chosen(const LogProbQuad& quad) { return quad.margin_gap() > 0.0; }

std::unordered_map<std::string, const LogProbQuad*> index_by_id(std::span<const LogProbQuad> quads) {
  std::unordered_map<std::string, const LogProbQuad*> index;
  for (const auto& quad : quads) {
    if (!index.emplace(quad.id, &quad).second)
      throw ValidationError("duplicate case id '" + quad.id + "'");
  }
  return index;
}

}  // namespace

double flip_rate(std::span<const LogProbQuad> original, std::span<const LogProbQuad> reversed,
                 bool strict) {
  if (original.empty()) throw ValidationError("flip_rate: empty input");
  if (original.size() != reversed.size())
    throw ValidationError("flip_rate: case count mismatch");
  const auto reversed_index = index_by_id(reversed);
  std::size_t flips = 0;
  for (const auto& quad : original) {
    auto it = reversed_index.find(quad.id);
    if (it == reversed_index.end())
      throw ValidationError("flip_rate: case '" + quad.id + "' missing from reversed set");
    const bool original_choice = prefers_chosen(quad);
    const bool reversed_choice = prefers_chosen(*it->second);
    const bool success = strict ? !reversed_choice : original_choice != reversed_choice;
    if (success) ++flips;
  }
  return static_cast<double>(flips) / static_cast<double>(original.size());
}

double tally_win_rate(std::span<const JudgeVerdict> verdicts, JudgedModel row) {
  if (verdicts.empty()) throw ValidationError("tally_win_rate: empty input");
  double score = 0.0;
  for (const auto& verdict : verdicts) {
    if (verdict.choice == Choice::Tie) {
      score += 0.5;
      continue;
    }
    const JudgedModel winner =
        verdict.choice == Choice::A
            ? verdict.a_is
            : (verdict.a_is == JudgedModel::Model1 ? JudgedModel::Model2 : JudgedModel::Model1);
    if (winner == row) score += 1.0;
  }
  return score / static_cast<double>(verdicts.size());
}

JudgeCase make_judge_case(const annotation::PromptLibrary& prompts,
                          const personas::PersonaExample& example,
                          const std::string& model1_response, const std::string& model2_response,
                          std::uint64_t seed) {
  Rng rng(substream_seed(seed, "judge-ab", example.id));
  JudgeCase out;
  out.a_is = rng.below(2) == 0 ? JudgedModel::Model1 : JudgedModel::Model2;
  const std::string& a = out.a_is == JudgedModel::Model1 ? model1_response : model2_response;
  const std::string& b = out.a_is == JudgedModel::Model1 ? model2_response : model1_response;
  out.prompt = prompts.judge_prompt(aggregate::persona_history_text(example), example.post, a, b);
  return out;
}

// ---------------------------------------------------------------------------
// Correlation diagnostics

CorrelationReport correlation_diagnostics(std::span<const DirectionVector> rows, double threshold,
                                          int threads) {
  if (rows.size() < 2) throw ValidationError("correlation_diagnostics: need at least 2 rows");
  const std::size_t dims = rows[0].size();
  for (const auto& row : rows)
    if (row.size() != dims) throw ValidationError("correlation_diagnostics: mixed row lengths");

  const auto n = static_cast<double>(rows.size());
  std::vector<double> mean(dims, 0.0);
  std::vector<double> variance(dims, 0.0);
  for (std::size_t d = 0; d < dims; ++d) {
    double sum = 0.0;
    for (const auto& row : rows) sum += space::direction_value(row[d]);
    mean[d] = sum / n;
    double ss = 0.0;
    for (const auto& row : rows) {
      const double delta = space::direction_value(row[d]) - mean[d];
      ss += delta * delta;
    }
    variance[d] = ss;
  }

  CorrelationReport report;
  report.dims = dims;
  report.matrix.assign(dims * dims, 0.0);
  for (std::size_t d = 0; d < dims; ++d)
    if (variance[d] == 0.0) ++report.constant_dims;

  // one task per upper-triangle row keeps the parallel shape simple
  parallel_for(dims, threads, [&](std::size_t i) {
    for (std::size_t j = i; j < dims; ++j) {
      double r;
      if (variance[i] == 0.0 || variance[j] == 0.0) {
        r = 0.0;  // constant column convention
      } else if (i == j) {
        r = 1.0;
      } else {
        double cov = 0.0;
        for (const auto& row : rows)
          cov += (space::direction_value(row[i]) - mean[i]) *
                 (space::direction_value(row[j]) - mean[j]);
        r = cov / std::sqrt(variance[i] * variance[j]);
      }
      report.matrix[i * dims + j] = r;
      report.matrix[j * dims + i] = r;
    }
  });

  std::size_t below = 0;
  std::size_t total = 0;
  for (std::size_t i = 0; i < dims; ++i) {
    for (std::size_t j = i + 1; j < dims; ++j) {
      ++total;
      if (std::abs(report.matrix[i * dims + j]) < threshold) ++below;
    }
  }
  report.fraction_below = total == 0 ? 1.0 : static_cast<double>(below) / static_cast<double>(total);
  return report;
}

std::size_t diversity_count(std::span<const DirectionVector> rows) {
  std::set<std::string> distinct;
  for (const auto& row : rows) distinct.insert(row.to_chars());
  return distinct.size();
}

// ---------------------------------------------------------------------------
// Scorers

namespace {

double noise_unit(std::uint64_t seed, const std::string& stream, const std::string& key) {
  Rng rng(substream_seed(seed, stream, key));
  return rng.unit();
}

}  // namespace

LogProbQuad SyntheticScorer::score(const personas::PersonaExample& example) {
  LogProbQuad quad;
  quad.id = example.id;
  switch (mode_) {
    case SyntheticMode::DirectionAware: {
      quad.lp_ref_w = -5.0 - 3.0 * noise_unit(seed_, "ref-w", example.id);
      quad.lp_ref_l = -5.0 - 3.0 * noise_unit(seed_, "ref-l", example.id);
      const auto components = example.component_vectors();
      const bool agrees =
          !components.empty() &&
          space::check_preference_consistency(example.direction, components);
      quad.lp_policy_w = quad.lp_ref_w + (agrees ? 1.0 : -1.0);
      quad.lp_policy_l = quad.lp_ref_l;
      break;
    }
    case SyntheticMode::PersonaInsensitive: {
      // depends only on the case id and the response text itself
      const std::string w_key = example.id + "/" + sha256_hex(example.chosen);
      const std::string l_key = example.id + "/" + sha256_hex(example.rejected);
      quad.lp_ref_w = -5.0 - 3.0 * noise_unit(seed_, "pi-ref", w_key);
      quad.lp_ref_l = -5.0 - 3.0 * noise_unit(seed_, "pi-ref", l_key);
      quad.lp_policy_w = -5.0 - 3.0 * noise_unit(seed_, "pi-pol", w_key);
      quad.lp_policy_l = -5.0 - 3.0 * noise_unit(seed_, "pi-pol", l_key);
      break;
    }
    case SyntheticMode::RandomMargin: {
      quad.lp_policy_w = -5.0 - 3.0 * noise_unit(seed_, "rand-pw", example.id);
      quad.lp_policy_l = -5.0 - 3.0 * noise_unit(seed_, "rand-pl", example.id);
      quad.lp_ref_w = -5.0 - 3.0 * noise_unit(seed_, "rand-rw", example.id);
      quad.lp_ref_l = -5.0 - 3.0 * noise_unit(seed_, "rand-rl", example.id);
      break;
    }
  }
  return quad;
}

RecordedScorer RecordedScorer::load_file(const std::filesystem::path& path) {
  RecordedScorer scorer;
  for_each_jsonl(path, [&](const Json& record, std::size_t lineno) {
    LogProbQuad quad;
    try {
      quad.id = record.at("id").get<std::string>();
      quad.lp_policy_w = record.at("lp_policy_w").get<double>();
      quad.lp_policy_l = record.at("lp_policy_l").get<double>();
      quad.lp_ref_w = record.at("lp_ref_w").get<double>();
      quad.lp_ref_l = record.at("lp_ref_l").get<double>();
    } catch (const Json::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    quad.validate();
    scorer.quads_[quad.id] = quad;
  });
  return scorer;
}

std::optional<LogProbQuad> RecordedScorer::find(const std::string& id) const {
  auto it = quads_.find(id);
  if (it == quads_.end()) return std::nullopt;
  return it->second;
}

LogProbQuad RecordedScorer::score(const personas::PersonaExample& example) {
  auto quad = find(example.id);
  if (!quad)
    throw ValidationError("recorded scorer: no quad for case '" + example.id + "'");
  return *quad;
}

FlipRun run_flip_protocol(std::span<const personas::PersonaExample> examples, Scorer& scorer) {
  FlipRun run;
  run.original.reserve(examples.size());
  run.reversed.reserve(examples.size());
  for (const auto& example : examples) {
    run.original.push_back(scorer.score(example));
    LogProbQuad quad = scorer.score(reverse_case(example));
    // Re-key to the original labels: the reversed example's chosen is the
    // original rejected response.
    std::swap(quad.lp_policy_w, quad.lp_policy_l);
    std::swap(quad.lp_ref_w, quad.lp_ref_l);
    run.reversed.push_back(quad);
  }
  return run;
}

}  // namespace alignforge::eval
