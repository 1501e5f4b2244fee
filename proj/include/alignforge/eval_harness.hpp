#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "alignforge/common.hpp"
#include "alignforge/persona_builder.hpp"
#include "alignforge/preference_space.hpp"
#include "alignforge/prompts.hpp"

namespace alignforge::eval {

// The four log-probabilities behind one evaluation case. Values are
// per-sequence sums as delivered by the scorer; no length normalization.
struct LogProbQuad {
  std::string id;
  double lp_policy_w = 0.0;
  double lp_policy_l = 0.0;
  double lp_ref_w = 0.0;
  double lp_ref_l = 0.0;

  void validate() const;
  // (policy margin) - (reference margin); positive means the policy leans
  // further toward the chosen response than the reference does.
  double margin_gap() const {
    return (lp_policy_w - lp_policy_l) - (lp_ref_w - lp_ref_l);
  }
};

// -log sigmoid(beta * margin), computed as log1p(exp(-x)) so large margins
// neither overflow nor lose the tail.
double dpo_loss_from_margin(double beta, double margin);
double dpo_loss(const LogProbQuad& quad, double beta);

// Fraction of cases whose policy margin strictly exceeds the reference
// margin; ties count as failures.
double alignment_accuracy(std::span<const LogProbQuad> quads);

// Preference-reversal counterfactual: swaps chosen/rejected in the target
// and in every pair-persona example, and negates every stored direction
// vector. Requires a pair persona; an involution.
personas::PersonaExample reverse_case(const personas::PersonaExample& example);

// Fraction of cases whose preferred response changes between the original
// and reversed runs. Both quad sets are keyed to the ORIGINAL chosen and
// rejected responses. strict: the reversed run must prefer the reversed
// winner, regardless of the original choice.
double flip_rate(std::span<const LogProbQuad> original, std::span<const LogProbQuad> reversed,
                 bool strict = false);

enum class Choice : std::uint8_t { A, B, Tie };
enum class JudgedModel : std::uint8_t { Model1, Model2 };

struct JudgeVerdict {
  std::string id;
  Choice choice = Choice::Tie;
  JudgedModel a_is = JudgedModel::Model1;  // which model sat in position A
};

// (wins + 0.5 * ties) / total for the row model, so paired rates sum to 1.
double tally_win_rate(std::span<const JudgeVerdict> verdicts,
                      JudgedModel row = JudgedModel::Model1);

// Judge prompt with seeded A/B position randomization; the mapping is
// recorded in the returned verdict skeleton.
struct JudgeCase {
  std::string prompt;
  JudgedModel a_is = JudgedModel::Model1;
};
JudgeCase make_judge_case(const annotation::PromptLibrary& prompts,
                          const personas::PersonaExample& example,
                          const std::string& model1_response, const std::string& model2_response,
                          std::uint64_t seed);

struct CorrelationReport {
  std::size_t dims = 0;
  std::vector<double> matrix;  // row-major D x D
  double fraction_below = 0.0;
  std::size_t constant_dims = 0;

  double at(std::size_t i, std::size_t j) const { return matrix[i * dims + j]; }
};

// Pearson correlation between dimensions over the dataset's direction
// encodings. Constant dimensions correlate as 0 by convention. threads: 1 =
// serial reference, 0 = all cores.
CorrelationReport correlation_diagnostics(std::span<const space::DirectionVector> rows,
                                          double threshold = 0.5, int threads = 1);

// Number of distinct direction vectors.
std::size_t diversity_count(std::span<const space::DirectionVector> rows);

// ---------------------------------------------------------------------------
// Scorer backends

class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual LogProbQuad score(const personas::PersonaExample& example) = 0;
};

enum class SyntheticMode : std::uint8_t {
  DirectionAware,     // boosts whichever response the persona supports
  PersonaInsensitive, // depends only on the case id and response texts
  RandomMargin,       // seeded noise on all four values
};

class SyntheticScorer : public Scorer {
 public:
  SyntheticScorer(std::uint64_t seed, SyntheticMode mode) : seed_(seed), mode_(mode) {}
  LogProbQuad score(const personas::PersonaExample& example) override;

 private:
  std::uint64_t seed_;
  SyntheticMode mode_;
};

// Quads preloaded from JSONL; every case id must be present.
class RecordedScorer : public Scorer {
 public:
  static RecordedScorer load_file(const std::filesystem::path& path);
  LogProbQuad score(const personas::PersonaExample& example) override;
  std::optional<LogProbQuad> find(const std::string& id) const;

 private:
  std::unordered_map<std::string, LogProbQuad> quads_;
};

struct HttpScorerConfig {
  std::string host;
  std::string path = "/score";
  int timeout_ms = 30000;
};

// Wire scorer: POST {id, post, chosen, rejected, history} and read the four
// log-probabilities back.
class HttpScorer : public Scorer {
 public:
  explicit HttpScorer(HttpScorerConfig config);
  ~HttpScorer() override;
  LogProbQuad score(const personas::PersonaExample& example) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Scores every example, and again after reversal with quads re-keyed to the
// original labels, ready for flip_rate.
struct FlipRun {
  std::vector<LogProbQuad> original;
  std::vector<LogProbQuad> reversed;
};
FlipRun run_flip_protocol(std::span<const personas::PersonaExample> examples, Scorer& scorer);

}  // namespace alignforge::eval
