// Command-line front end for the preference-pair construction pipeline and
// its evaluation harness. See README.md for the file formats.

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "alignforge/digest.hpp"
#include "alignforge/direction_aggregator.hpp"
#include "alignforge/eval_harness.hpp"
#include "alignforge/jsonl.hpp"
#include "alignforge/pipeline.hpp"

using namespace alignforge;

namespace {

struct CommonOptions {
  std::string config_path;
  std::string seed;
  std::string data_dir;
  int threads = -1;
};

void add_common(CLI::App* cmd, CommonOptions& common) {
  cmd->add_option("--config", common.config_path, "key = value config file");
  cmd->add_option("--seed", common.seed, "run seed (overrides config)");
  cmd->add_option("--data-dir", common.data_dir,
                  "directory with dimensions.tsv, demographic_attributes.tsv, prompts/");
  cmd->add_option("--threads", common.threads, "worker threads (0 = all cores, 1 = serial)");
}

pipeline::RunConfig resolve_config(const CommonOptions& common) {
  pipeline::RunConfig config;
  if (!common.config_path.empty()) config = pipeline::RunConfig::load_file(common.config_path);
  if (!common.seed.empty()) config.seed = std::stoull(common.seed);
  if (!common.data_dir.empty()) config.data_dir = common.data_dir;
  if (common.threads >= 0) config.threads = common.threads;
  return config;
}

void emit_report(const Json& report, const std::string& report_path) {
  const std::string text = report.dump(2);
  if (!report_path.empty()) {
    std::filesystem::path path(report_path);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text << '\n';
    if (!out) throw IoError("cannot write report " + report_path);
  }
  std::cout << text << std::endl;
}

std::vector<eval::LogProbQuad> load_quads(const std::filesystem::path& path) {
  std::vector<eval::LogProbQuad> quads;
  for_each_jsonl(path, [&](const Json& record, std::size_t lineno) {
    eval::LogProbQuad quad;
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
    quads.push_back(std::move(quad));
  });
  return quads;
}

std::vector<personas::PersonaExample> load_dataset(const std::filesystem::path& path,
                                                  int max_level) {
  std::vector<personas::PersonaExample> examples;
  for_each_jsonl(path, [&](const Json& record, std::size_t) {
    examples.push_back(personas::example_from_json(record, max_level));
  });
  return examples;
}

std::unique_ptr<eval::Scorer> make_scorer(const std::string& kind, std::uint64_t seed,
                                          const std::string& recorded_path,
                                          const std::string& host) {
  if (kind == "direction-aware")
    return std::make_unique<eval::SyntheticScorer>(seed, eval::SyntheticMode::DirectionAware);
  if (kind == "insensitive")
    return std::make_unique<eval::SyntheticScorer>(seed, eval::SyntheticMode::PersonaInsensitive);
  if (kind == "random")
    return std::make_unique<eval::SyntheticScorer>(seed, eval::SyntheticMode::RandomMargin);
  if (kind == "recorded") {
    if (recorded_path.empty()) throw ConfigError("recorded scorer needs --scores <path>");
    return std::make_unique<eval::RecordedScorer>(eval::RecordedScorer::load_file(recorded_path));
  }
  if (kind == "http") {
    if (host.empty()) throw ConfigError("http scorer needs --scorer-host");
    eval::HttpScorerConfig config;
    config.host = host;
    return std::make_unique<eval::HttpScorer>(config);
  }
  throw ConfigError("unknown scorer '" + kind +
                    "' (direction-aware | insensitive | random | recorded | http)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"alignforge: persona-annotated preference-pair construction and evaluation"};
  app.require_subcommand(1);

  // ---- annotate ----
  CommonOptions annotate_common;
  std::string annotate_in, annotate_out, annotate_audit;
  auto* annotate = app.add_subcommand("annotate", "intensity-annotate every corpus response");
  annotate->add_option("--in", annotate_in, "corpus JSONL")->required();
  annotate->add_option("--out", annotate_out, "intensities JSONL")->required();
  annotate->add_option("--audit", annotate_audit, "append raw replies to this JSONL");
  add_common(annotate, annotate_common);

  // ---- build-pairs ----
  CommonOptions pairs_common;
  std::string pairs_in, pairs_out, pairs_intensities;
  auto* build_pairs = app.add_subcommand("build-pairs", "cluster responses and select pairs");
  build_pairs->add_option("--in", pairs_in, "corpus JSONL")->required();
  build_pairs->add_option("--out", pairs_out, "pairs JSONL")->required();
  build_pairs->add_option("--intensities", pairs_intensities,
                          "reuse an annotate-stage output instead of annotating");
  add_common(build_pairs, pairs_common);

  // ---- build-personas ----
  CommonOptions personas_common;
  std::string personas_pairs, personas_corpus, personas_out, personas_intensities;
  std::string personas_t;
  int personas_h = -1;
  auto* build_personas =
      app.add_subcommand("build-personas", "attach UGC/PAIR/DEMO personas to pairs");
  build_personas->add_option("--pairs", personas_pairs, "pairs JSONL")->required();
  build_personas->add_option("--corpus", personas_corpus, "corpus JSONL")->required();
  build_personas->add_option("--out", personas_out, "dataset JSONL")->required();
  build_personas->add_option("--intensities", personas_intensities,
                             "reuse an annotate-stage output instead of annotating");
  build_personas->add_option("--t", personas_t, "similarity threshold, e.g. 0.6");
  build_personas->add_option("--H", personas_h, "examples per behavioral persona");
  add_common(build_personas, personas_common);

  // ---- aggregate ----
  CommonOptions aggregate_common;
  std::string aggregate_in, aggregate_out, aggregate_t1, aggregate_t2;
  bool aggregate_component_vote = false;
  auto* aggregate_cmd =
      app.add_subcommand("aggregate", "derive unified directions, descriptions, and prompts");
  aggregate_cmd->add_option("--in", aggregate_in, "dataset JSONL")->required();
  aggregate_cmd->add_option("--out", aggregate_out, "output JSONL")->required();
  aggregate_cmd->add_option("--t1", aggregate_t1, "positive threshold, e.g. 0.75");
  aggregate_cmd->add_option("--t2", aggregate_t2, "negative threshold, e.g. 0.25");
  aggregate_cmd->add_flag("--per-component-vote", aggregate_component_vote,
                          "aggregate voted component vectors instead of per-example vectors");
  add_common(aggregate_cmd, aggregate_common);

  // ---- eval ----
  auto* eval_cmd = app.add_subcommand("eval", "evaluation metrics");
  eval_cmd->require_subcommand(1);

  CommonOptions acc_common;
  std::string acc_in, acc_dataset, acc_scorer = "recorded", acc_scores, acc_host, acc_report;
  double acc_beta = 0.1;
  auto* accuracy = eval_cmd->add_subcommand("accuracy", "alignment accuracy and mean loss");
  accuracy->add_option("--in", acc_in, "recorded quads JSONL");
  accuracy->add_option("--dataset", acc_dataset, "dataset JSONL to score");
  accuracy->add_option("--scorer", acc_scorer, "direction-aware | insensitive | random | recorded | http");
  accuracy->add_option("--scores", acc_scores, "recorded quads for --scorer recorded");
  accuracy->add_option("--scorer-host", acc_host, "http scorer endpoint");
  accuracy->add_option("--beta", acc_beta, "loss temperature");
  accuracy->add_option("--report", acc_report, "write the JSON report here");
  add_common(accuracy, acc_common);

  CommonOptions flip_common;
  std::string flip_in, flip_reversed, flip_dataset, flip_scorer = "direction-aware", flip_scores,
                                                    flip_host, flip_report;
  bool flip_strict = false;
  auto* flip = eval_cmd->add_subcommand("flip", "preference-reversal success rate");
  flip->add_option("--in", flip_in, "original quads JSONL (keyed to original labels)");
  flip->add_option("--reversed", flip_reversed, "reversed-run quads JSONL (same keying)");
  flip->add_option("--dataset", flip_dataset, "dataset JSONL to score under both personas");
  flip->add_option("--scorer", flip_scorer, "scorer for --dataset mode");
  flip->add_option("--scores", flip_scores, "recorded quads for --scorer recorded");
  flip->add_option("--scorer-host", flip_host, "http scorer endpoint");
  flip->add_flag("--flip-strict", flip_strict,
                 "count only cases whose reversed run prefers the reversed winner");
  flip->add_option("--report", flip_report, "write the JSON report here");
  add_common(flip, flip_common);

  CommonOptions win_common;
  std::string win_in, win_model = "model1", win_report;
  auto* winrate = eval_cmd->add_subcommand("winrate", "tally judge verdicts");
  winrate->add_option("--in", win_in, "verdicts JSONL")->required();
  winrate->add_option("--model", win_model, "row model: model1 | model2");
  winrate->add_option("--report", win_report, "write the JSON report here");
  add_common(winrate, win_common);

  CommonOptions diag_common;
  std::string diag_in, diag_report, diag_csv;
  double diag_threshold = 0.5;
  auto* diagnostics = eval_cmd->add_subcommand("diagnostics", "correlation and diversity");
  diagnostics->add_option("--in", diag_in, "dataset JSONL")->required();
  diagnostics->add_option("--threshold", diag_threshold, "|r| threshold for the fraction");
  diagnostics->add_option("--report", diag_report, "write the JSON report here");
  diagnostics->add_option("--csv", diag_csv, "write the correlation matrix CSV here");
  add_common(diagnostics, diag_common);

  // ---- validate ----
  CommonOptions validate_common;
  std::string validate_in, validate_report;
  auto* validate = app.add_subcommand("validate", "re-check every record of a dataset");
  validate->add_option("--in", validate_in, "dataset JSONL")->required();
  validate->add_option("--report", validate_report, "write the JSON report here");
  add_common(validate, validate_common);

  // ---- stats ----
  CommonOptions stats_common;
  std::string stats_in, stats_report, stats_csv_dir, stats_sample_out, stats_sample_mode = "uniform";
  std::size_t stats_sample = 0;
  auto* stats = app.add_subcommand("stats", "dataset statistics and plot-ready CSVs");
  stats->add_option("--in", stats_in, "dataset JSONL")->required();
  stats->add_option("--report", stats_report, "write the JSON report here");
  stats->add_option("--csv-dir", stats_csv_dir, "write CSVs into this directory");
  stats->add_option("--sample", stats_sample, "emit a seeded subset of this size");
  stats->add_option("--sample-mode", stats_sample_mode, "uniform | stratified");
  stats->add_option("--sample-out", stats_sample_out, "subset output JSONL");
  add_common(stats, stats_common);

  // ---- adapt ----
  CommonOptions adapt_common;
  std::string adapt_in, adapt_out;
  auto* adapt = app.add_subcommand(
      "adapt", "convert benchmark-shaped records into pairs-only quintuples");
  adapt->add_option("--in", adapt_in, "benchmark records JSONL")->required();
  adapt->add_option("--out", adapt_out, "quintuple JSONL")->required();
  add_common(adapt, adapt_common);

  // ---- run ----
  CommonOptions run_common;
  std::string run_in, run_outdir;
  bool run_resume = false;
  auto* run = app.add_subcommand("run", "execute the full pipeline");
  run->add_option("--in", run_in, "corpus JSONL")->required();
  run->add_option("--outdir", run_outdir, "output directory")->required();
  run->add_flag("--resume", run_resume, "skip stages whose manifests still match");
  add_common(run, run_common);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*annotate) {
      auto config = resolve_config(annotate_common);
      const auto context = pipeline::PipelineContext::load(config);
      auto manifest = pipeline::run_annotate_stage(config, context, annotate_in, annotate_out,
                                                   annotate_audit);
      emit_report(manifest, "");
    } else if (*build_pairs) {
      auto config = resolve_config(pairs_common);
      const auto context = pipeline::PipelineContext::load(config);
      std::string intensities = pairs_intensities;
      if (intensities.empty()) {
        intensities = pairs_out + ".intensities.jsonl";
        pipeline::run_annotate_stage(config, context, pairs_in, intensities, "");
      }
      auto manifest = pipeline::run_build_pairs_stage(config, pairs_in, intensities, pairs_out);
      emit_report(manifest, "");
    } else if (*build_personas) {
      auto config = resolve_config(personas_common);
      if (!personas_t.empty()) config.similarity_threshold = Rational::from_decimal(personas_t);
      if (personas_h > 0) config.persona_examples = personas_h;
      const auto context = pipeline::PipelineContext::load(config);
      std::string intensities = personas_intensities;
      if (intensities.empty()) {
        intensities = personas_out + ".intensities.jsonl";
        pipeline::run_annotate_stage(config, context, personas_corpus, intensities, "");
      }
      auto manifest = pipeline::run_build_personas_stage(config, context, personas_corpus,
                                                         intensities, personas_pairs, personas_out,
                                                         "");
      emit_report(manifest, "");
    } else if (*aggregate_cmd) {
      auto config = resolve_config(aggregate_common);
      if (!aggregate_t1.empty()) config.t1 = Rational::from_decimal(aggregate_t1);
      if (!aggregate_t2.empty()) config.t2 = Rational::from_decimal(aggregate_t2);
      if (aggregate_component_vote) config.per_component_vote = true;
      const auto context = pipeline::PipelineContext::load(config);
      auto manifest = pipeline::run_aggregate_stage(config, context, aggregate_in, aggregate_out);
      emit_report(manifest, "");
    } else if (*accuracy) {
      auto config = resolve_config(acc_common);
      std::vector<eval::LogProbQuad> quads;
      if (!acc_in.empty()) {
        quads = load_quads(acc_in);
      } else if (!acc_dataset.empty()) {
        auto examples = load_dataset(acc_dataset, config.max_level);
        auto scorer = make_scorer(acc_scorer, config.seed, acc_scores, acc_host);
        for (const auto& example : examples) quads.push_back(scorer->score(example));
      } else {
        throw ConfigError("eval accuracy needs --in or --dataset");
      }
      double loss_sum = 0.0;
      for (const auto& quad : quads) loss_sum += eval::dpo_loss(quad, acc_beta);
      emit_report(Json{{"cases", quads.size()},
                       {"accuracy", eval::alignment_accuracy(quads)},
                       {"beta", acc_beta},
                       {"mean_dpo_loss", loss_sum / static_cast<double>(quads.size())}},
                  acc_report);
    } else if (*flip) {
      auto config = resolve_config(flip_common);
      std::vector<eval::LogProbQuad> original;
      std::vector<eval::LogProbQuad> reversed;
      std::size_t skipped = 0;
      if (!flip_in.empty() && !flip_reversed.empty()) {
        original = load_quads(flip_in);
        reversed = load_quads(flip_reversed);
      } else if (!flip_dataset.empty()) {
        auto examples = load_dataset(flip_dataset, config.max_level);
        // reversal is defined only for examples carrying a pair persona
        std::vector<personas::PersonaExample> reversible;
        for (auto& example : examples) {
          if (example.pair_persona)
            reversible.push_back(std::move(example));
          else
            ++skipped;
        }
        auto scorer = make_scorer(flip_scorer, config.seed, flip_scores, flip_host);
        auto run_result = eval::run_flip_protocol(reversible, *scorer);
        original = std::move(run_result.original);
        reversed = std::move(run_result.reversed);
      } else {
        throw ConfigError("eval flip needs --in plus --reversed, or --dataset");
      }
      emit_report(Json{{"cases", original.size()},
                       {"skipped_no_pair_persona", skipped},
                       {"strict", flip_strict},
                       {"flip_rate", eval::flip_rate(original, reversed, flip_strict)}},
                  flip_report);
    } else if (*winrate) {
      std::vector<eval::JudgeVerdict> verdicts;
      for_each_jsonl(win_in, [&](const Json& record, std::size_t lineno) {
        eval::JudgeVerdict verdict;
        verdict.id = record.at("id").get<std::string>();
        const std::string choice = record.at("choice").get<std::string>();
        if (choice == "A")
          verdict.choice = eval::Choice::A;
        else if (choice == "B")
          verdict.choice = eval::Choice::B;
        else if (choice == "Tie")
          verdict.choice = eval::Choice::Tie;
        else
          throw IoError(win_in + ":" + std::to_string(lineno) + ": bad choice '" + choice + "'");
        const std::string a_is = record.value("a_is", "model1");
        verdict.a_is = a_is == "model2" ? eval::JudgedModel::Model2 : eval::JudgedModel::Model1;
        verdicts.push_back(verdict);
      });
      const auto row = win_model == "model2" ? eval::JudgedModel::Model2 : eval::JudgedModel::Model1;
      emit_report(Json{{"cases", verdicts.size()},
                       {"model", win_model},
                       {"win_rate", eval::tally_win_rate(verdicts, row)}},
                  win_report);
    } else if (*diagnostics) {
      auto config = resolve_config(diag_common);
      std::vector<space::DirectionVector> rows;
      for_each_jsonl(diag_in, [&](const Json& record, std::size_t) {
        rows.push_back(space::DirectionVector::from_chars(record.at("direction").get<std::string>()));
      });
      auto report = eval::correlation_diagnostics(rows, diag_threshold, config.threads);
      if (report.constant_dims > 0)
        std::cerr << "warning: " << report.constant_dims
                  << " constant dimension(s); their correlations are reported as 0" << std::endl;
      if (!diag_csv.empty()) {
        std::filesystem::path path(diag_csv);
        if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
        std::ofstream csv(path, std::ios::binary | std::ios::trunc);
        for (std::size_t i = 0; i < report.dims; ++i) {
          for (std::size_t j = 0; j < report.dims; ++j)
            csv << (j > 0 ? "," : "") << report.at(i, j);
          csv << '\n';
        }
      }
      emit_report(Json{{"cases", rows.size()},
                       {"dims", report.dims},
                       {"threshold", diag_threshold},
                       {"fraction_below", report.fraction_below},
                       {"constant_dimensions", report.constant_dims},
                       {"distinct_directions", eval::diversity_count(rows)}},
                  diag_report);
    } else if (*validate) {
      auto config = resolve_config(validate_common);
      const auto context = pipeline::PipelineContext::load(config);
      auto report = pipeline::validate_dataset(validate_in, config, context);
      emit_report(report.to_json(), validate_report);
      return report.ok() ? 0 : 1;
    } else if (*stats) {
      auto config = resolve_config(stats_common);
      const auto context = pipeline::PipelineContext::load(config);
      auto report = pipeline::dataset_stats(stats_in, config, context, stats_csv_dir);
      emit_report(report.to_json(context.registry), stats_report);
      if (stats_sample > 0) {
        if (stats_sample_out.empty()) throw ConfigError("--sample needs --sample-out");
        pipeline::sample_dataset(stats_in, stats_sample_out, stats_sample, stats_sample_mode,
                                 config.seed, config.max_level);
      }
    } else if (*adapt) {
      auto config = resolve_config(adapt_common);
      const auto context = pipeline::PipelineContext::load(config);
      const auto converted = pipeline::adapt_benchmark_records(adapt_in, adapt_out, context);
      emit_report(Json{{"converted", converted}}, "");
    } else if (*run) {
      auto config = resolve_config(run_common);
      auto summary = pipeline::run_pipeline(config, run_in, run_outdir, run_resume);
      emit_report(summary, "");
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
