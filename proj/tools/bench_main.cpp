// Compares the OpenMP-parallel pipeline kernels against their serial
// reference paths on synthetic corpora, and verifies the outputs agree.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <CLI11.hpp>

#include "alignforge/digest.hpp"
#include "alignforge/eval_harness.hpp"
#include "alignforge/pair_builder.hpp"
#include "alignforge/persona_builder.hpp"
#include "alignforge/pipeline.hpp"
#include "alignforge/rng.hpp"

using namespace alignforge;
namespace fs = std::filesystem;

namespace {

// One untimed warmup run, then the measured one.
double time_seconds(const std::function<void()>& fn) {
  fn();
  const auto started = std::chrono::steady_clock::now();
  fn();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
}

void print_row(const std::string& kernel, double serial, double parallel, bool equal) {
  std::printf("%-28s %10.3fs %10.3fs %8.2fx   %s\n", kernel.c_str(), serial, parallel,
              parallel > 0 ? serial / parallel : 0.0, equal ? "outputs equal" : "OUTPUTS DIFFER");
}

std::vector<pairs::RawRecord> synthetic_corpus(const space::DimensionRegistry& registry,
                                               std::size_t records, std::size_t responses,
                                               std::uint64_t seed) {
  Rng gen(seed);
  std::vector<pairs::RawRecord> out;
  out.reserve(records);
  for (std::size_t r = 0; r < records; ++r) {
    pairs::RawRecord record;
    record.id = "rec" + std::to_string(r);
    record.post = "post " + std::to_string(r);
    for (std::size_t i = 0; i < responses; ++i) {
      std::string text;
      for (std::size_t d = 0; d < registry.size(); ++d)
        text += "[[d:" + registry.at(d).id + "=" + std::to_string(1 + gen.below(3)) + "]]";
      record.responses.push_back(text + "response " + std::to_string(i));
    }
    out.push_back(std::move(record));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"alignforge-bench: serial reference vs OpenMP kernels"};
  std::size_t records = 300;
  std::size_t responses = 5;
  std::size_t correlation_rows = 20000;
  app.add_option("--records", records, "synthetic corpus size");
  app.add_option("--responses", responses, "responses per record");
  app.add_option("--correlation-rows", correlation_rows, "rows for the correlation kernel");
  CLI11_PARSE(app, argc, argv);

#ifdef _OPENMP
  std::printf("OpenMP enabled, max threads = %d\n", omp_get_max_threads());
#else
  std::printf("OpenMP disabled at build time; both columns run serial\n");
#endif
  std::printf("%-28s %11s %11s %9s\n", "kernel", "serial", "parallel", "speedup");

  pipeline::RunConfig config;
  config.seed = 11;
  const auto context = pipeline::PipelineContext::load(config);
  auto backend_serial = pipeline::make_backend(config, context);
  auto backend_parallel = pipeline::make_backend(config, context);
  annotation::Annotator annotator_serial(*backend_serial, context.registry, context.attributes,
                                         context.prompts);
  annotation::Annotator annotator_parallel(*backend_parallel, context.registry, context.attributes,
                                           context.prompts);

  const auto corpus = synthetic_corpus(context.registry, records, responses, 3);

  // annotate
  std::vector<pairs::AnnotatedRecord> annotated_serial;
  std::vector<pairs::AnnotatedRecord> annotated_parallel;
  const double annotate_serial =
      time_seconds([&] { annotated_serial = pairs::annotate_corpus(corpus, annotator_serial, 1); });
  const double annotate_parallel = time_seconds(
      [&] { annotated_parallel = pairs::annotate_corpus(corpus, annotator_parallel, 0); });
  bool annotate_equal = annotated_serial.size() == annotated_parallel.size();
  for (std::size_t i = 0; annotate_equal && i < annotated_serial.size(); ++i)
    annotate_equal = annotated_serial[i].intensities == annotated_parallel[i].intensities;
  print_row("annotate corpus", annotate_serial, annotate_parallel, annotate_equal);

  // build pairs
  pairs::BuildConfig build;
  build.seed = config.seed;
  build.threads = 1;
  pairs::BuildPairsResult pairs_serial;
  pairs::BuildPairsResult pairs_parallel;
  const double build_serial =
      time_seconds([&] { pairs_serial = pairs::build_pairs(annotated_serial, build); });
  build.threads = 0;
  const double build_parallel =
      time_seconds([&] { pairs_parallel = pairs::build_pairs(annotated_serial, build); });
  bool pairs_equal = pairs_serial.pairs.size() == pairs_parallel.pairs.size();
  for (std::size_t i = 0; pairs_equal && i < pairs_serial.pairs.size(); ++i)
    pairs_equal = pairs_serial.pairs[i].chosen == pairs_parallel.pairs[i].chosen &&
                  pairs_serial.pairs[i].direction == pairs_parallel.pairs[i].direction;
  print_row("cluster + select pairs", build_serial, build_parallel, pairs_equal);

  // build personas
  personas::CorpusIndex index(annotated_serial, config.max_level);
  personas::PersonaConfig persona;
  persona.seed = config.seed;
  persona.max_examples = 4;
  persona.threads = 1;
  personas::BuildPersonasResult personas_serial;
  personas::BuildPersonasResult personas_parallel;
  const double persona_serial_s = time_seconds([&] {
    personas_serial = personas::build_personas(pairs_serial.pairs, index, annotator_serial, persona);
  });
  persona.threads = 0;
  const double persona_parallel_s = time_seconds([&] {
    personas_parallel =
        personas::build_personas(pairs_serial.pairs, index, annotator_parallel, persona);
  });
  bool personas_equal = personas_serial.examples.size() == personas_parallel.examples.size();
  for (std::size_t i = 0; personas_equal && i < personas_serial.examples.size(); ++i)
    personas_equal = personas::to_json(personas_serial.examples[i]) ==
                     personas::to_json(personas_parallel.examples[i]);
  print_row("build personas", persona_serial_s, persona_parallel_s, personas_equal);

  // correlation
  Rng gen(9);
  std::vector<space::DirectionVector> rows;
  rows.reserve(correlation_rows);
  for (std::size_t r = 0; r < correlation_rows; ++r) {
    std::string chars;
    for (std::size_t d = 0; d < context.registry.size(); ++d) chars += "+0-"[gen.below(3)];
    rows.push_back(space::DirectionVector::from_chars(chars));
  }
  eval::CorrelationReport corr_serial;
  eval::CorrelationReport corr_parallel;
  const double corr_serial_s =
      time_seconds([&] { corr_serial = eval::correlation_diagnostics(rows, 0.5, 1); });
  const double corr_parallel_s =
      time_seconds([&] { corr_parallel = eval::correlation_diagnostics(rows, 0.5, 0); });
  print_row("correlation matrix", corr_serial_s, corr_parallel_s,
            corr_serial.matrix == corr_parallel.matrix);

  return 0;
}
