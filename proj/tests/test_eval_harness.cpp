#include <doctest.h>

#include <cmath>
#include <thread>

#include <httplib.h>

#include "alignforge/eval_harness.hpp"
#include "alignforge/jsonl.hpp"
#include "test_support.hpp"

using namespace alignforge;
using namespace alignforge::eval;
using space::Direction;
using space::DirectionVector;
using testsupport::dv;
using testsupport::iv;

namespace {

LogProbQuad quad(const std::string& id, double pw, double pl, double rw, double rl) {
  return LogProbQuad{id, pw, pl, rw, rl};
}

personas::PersonaExample consistent_example(const std::string& id) {
  personas::PersonaExample example;
  example.id = id;
  example.post = "post " + id;
  example.chosen = "chosen " + id;
  example.rejected = "rejected " + id;
  example.direction = dv("+-0");
  example.intensity_w = iv({3, 1, 2});
  example.intensity_l = iv({1, 3, 2});
  personas::PairPersona pairp;
  personas::PairExample item;
  item.post = "pool post " + id;
  item.chosen = "pool chosen";
  item.rejected = "pool rejected";
  item.direction = dv("+-0");
  item.intensity_w = iv({3, 1, 2});
  item.intensity_l = iv({1, 3, 2});
  pairp.examples.push_back(item);
  pairp.voted = dv("+-0");
  example.pair_persona = pairp;
  return example;
}

}  // namespace

TEST_CASE("dpo loss basics") {
  CHECK(dpo_loss_from_margin(1.0, 0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-14));

  // quad (-1,-2,-1.5,-1.5): margin_gap = (-1 - -2) - (-1.5 - -1.5) = 1
  const auto q = quad("a", -1.0, -2.0, -1.5, -1.5);
  CHECK(q.margin_gap() == doctest::Approx(1.0));
  const double direct = -std::log(1.0 / (1.0 + std::exp(-1.0)));  // unfused reference
  CHECK(dpo_loss(q, 1.0) == doctest::Approx(direct).epsilon(1e-12));
  CHECK(dpo_loss(q, 1.0) == doctest::Approx(0.313262).epsilon(1e-5));

  SUBCASE("beta scaling is exact") {
    for (int i = 0; i < 100; ++i) {
      const double z = -20.0 + 0.4 * i;
      CHECK(dpo_loss_from_margin(0.1, z) == dpo_loss_from_margin(1.0, 0.1 * z));
    }
  }

  SUBCASE("strictly decreasing and convexity floor") {
    double last = dpo_loss_from_margin(1.0, -10.0);
    for (double z = -9.5; z <= 10.0; z += 0.5) {
      const double cur = dpo_loss_from_margin(1.0, z);
      CHECK(cur < last);
      last = cur;
    }
    for (double z = 0.25; z < 8.0; z += 0.25) {
      const double sum = dpo_loss_from_margin(1.0, z) + dpo_loss_from_margin(1.0, -z);
      CHECK(sum >= 2.0 * std::log(2.0) - 1e-12);
    }
    CHECK(dpo_loss_from_margin(1.0, 0.0) + dpo_loss_from_margin(1.0, -0.0) ==
          doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-14));
  }

  SUBCASE("huge margins stay finite") {
    CHECK(std::isfinite(dpo_loss_from_margin(1.0, 5000.0)));
    CHECK(std::isfinite(dpo_loss_from_margin(1.0, -5000.0)));
    CHECK(dpo_loss_from_margin(1.0, 5000.0) >= 0.0);
  }

  SUBCASE("error paths") {
    CHECK_THROWS_AS(dpo_loss_from_margin(0.0, 1.0), ValidationError);
    CHECK_THROWS_AS(dpo_loss(quad("n", NAN, 0, 0, 0), 1.0), ValidationError);
  }
}

TEST_CASE("alignment accuracy uses strict margin comparison") {
  // policy identical to reference: every case ties and fails
  std::vector<LogProbQuad> ties{quad("a", -1, -2, -1, -2), quad("b", -3, -1, -3, -1)};
  CHECK(alignment_accuracy(ties) == 0.0);

  // +1 boost on the chosen side wins every case
  std::vector<LogProbQuad> boosted{quad("a", 0, -2, -1, -2), quad("b", -2, -1, -3, -1)};
  CHECK(alignment_accuracy(boosted) == 1.0);

  CHECK_THROWS_AS(alignment_accuracy({}), ValidationError);

  SUBCASE("invariant to shifting both policy log-probs of a case") {
    std::vector<LogProbQuad> base{quad("a", -1.0, -2.5, -1.2, -2.0)};
    const double before = alignment_accuracy(base);
    for (double shift : {-10.0, -0.5, 3.25, 100.0}) {
      std::vector<LogProbQuad> shifted{
          quad("a", -1.0 + shift, -2.5 + shift, -1.2, -2.0)};
      CHECK(alignment_accuracy(shifted) == before);
    }
  }
}

TEST_CASE("random scorer sits near one half over 10k cases") {
  SyntheticScorer scorer(2024, SyntheticMode::RandomMargin);
  std::vector<LogProbQuad> quads;
  for (int i = 0; i < 10000; ++i) {
    personas::PersonaExample example;
    example.id = "case" + std::to_string(i);
    quads.push_back(scorer.score(example));
  }
  const double accuracy = alignment_accuracy(quads);
  CHECK(accuracy > 0.48);
  CHECK(accuracy < 0.52);
}

TEST_CASE("reverse_case is an involution that preserves consistency") {
  auto example = consistent_example("r1");
  auto reversed = reverse_case(example);

  CHECK(reversed.chosen == example.rejected);
  CHECK(reversed.rejected == example.chosen);
  CHECK(reversed.direction == example.direction.negated());
  CHECK(reversed.pair_persona->examples[0].chosen == "pool rejected");
  CHECK(reversed.pair_persona->examples[0].direction == dv("-+0"));

  CHECK(space::check_preference_consistency(reversed.direction, reversed.component_vectors()));

  auto twice = reverse_case(reversed);
  CHECK(personas::to_json(twice) == personas::to_json(example));

  personas::PersonaExample no_pair;
  no_pair.id = "x";
  no_pair.direction = dv("+");
  CHECK_THROWS_AS(reverse_case(no_pair), ValidationError);

  SUBCASE("reversed pair directions stay recomputable from intensities") {
    for (const auto& item : reversed.pair_persona->examples)
      CHECK(item.direction == space::compare_intensities(item.intensity_w, item.intensity_l));
    CHECK(reversed.direction ==
          space::compare_intensities(reversed.intensity_w, reversed.intensity_l));
  }
}

TEST_CASE("flip rate: direction-aware flips, insensitive does not") {
  std::vector<personas::PersonaExample> examples;
  for (int i = 0; i < 24; ++i) examples.push_back(consistent_example("c" + std::to_string(i)));

  SUBCASE("direction-aware oracle: accuracy 1.0, flip 1.0") {
    SyntheticScorer scorer(7, SyntheticMode::DirectionAware);
    auto run = run_flip_protocol(examples, scorer);
    CHECK(alignment_accuracy(run.original) == 1.0);
    CHECK(flip_rate(run.original, run.reversed) == 1.0);
    CHECK(flip_rate(run.original, run.reversed, /*strict=*/true) == 1.0);
  }

  SUBCASE("persona-insensitive scorer: flip 0.0") {
    SyntheticScorer scorer(7, SyntheticMode::PersonaInsensitive);
    auto run = run_flip_protocol(examples, scorer);
    CHECK(flip_rate(run.original, run.reversed) == 0.0);
  }

  SUBCASE("identical sets never flip") {
    SyntheticScorer scorer(7, SyntheticMode::DirectionAware);
    auto run = run_flip_protocol(examples, scorer);
    CHECK(flip_rate(run.original, run.original) == 0.0);
  }

  SUBCASE("half-flipped counting") {
    std::vector<LogProbQuad> original{quad("a", 1, 0, 0, 0), quad("b", 1, 0, 0, 0)};
    std::vector<LogProbQuad> reversed{quad("a", -1, 0, 0, 0), quad("b", 1, 0, 0, 0)};
    CHECK(flip_rate(original, reversed) == 0.5);
  }

  SUBCASE("id mismatch is a validation error") {
    std::vector<LogProbQuad> original{quad("a", 1, 0, 0, 0)};
    std::vector<LogProbQuad> other{quad("zzz", 1, 0, 0, 0)};
    CHECK_THROWS_AS(flip_rate(original, other), ValidationError);
  }
}

TEST_CASE("win-rate tally splits ties") {
  std::vector<JudgeVerdict> all_a{{"1", Choice::A, JudgedModel::Model1},
                                  {"2", Choice::B, JudgedModel::Model2}};
  CHECK(tally_win_rate(all_a, JudgedModel::Model1) == 1.0);
  CHECK(tally_win_rate(all_a, JudgedModel::Model2) == 0.0);

  std::vector<JudgeVerdict> ties{{"1", Choice::Tie, JudgedModel::Model1},
                                 {"2", Choice::Tie, JudgedModel::Model2}};
  CHECK(tally_win_rate(ties) == 0.5);

  // paired rates always sum to 1
  std::vector<JudgeVerdict> mixed{{"1", Choice::A, JudgedModel::Model1},
                                  {"2", Choice::A, JudgedModel::Model2},
                                  {"3", Choice::Tie, JudgedModel::Model1}};
  CHECK(tally_win_rate(mixed, JudgedModel::Model1) + tally_win_rate(mixed, JudgedModel::Model2) ==
        doctest::Approx(1.0));

  CHECK_THROWS_AS(tally_win_rate({}), ValidationError);
}

TEST_CASE("judge cases randomize A/B with a recorded mapping") {
  const auto& prompts = testsupport::bundled_prompts();
  auto example = consistent_example("j1");
  int model1_first = 0;
  for (int i = 0; i < 40; ++i) {
    example.id = "j" + std::to_string(i);
    auto judge_case = make_judge_case(prompts, example, "resp one", "resp two", 9);
    if (judge_case.a_is == JudgedModel::Model1) {
      ++model1_first;
      CHECK(judge_case.prompt.find("Response A\nresp one") != std::string::npos);
    } else {
      CHECK(judge_case.prompt.find("Response A\nresp two") != std::string::npos);
    }
    // deterministic per (seed, id)
    auto again = make_judge_case(prompts, example, "resp one", "resp two", 9);
    CHECK(again.a_is == judge_case.a_is);
    CHECK(again.prompt == judge_case.prompt);
  }
  CHECK(model1_first > 5);
  CHECK(model1_first < 35);
}

namespace {

// Textbook two-pass Pearson, double loop, for cross-checking.
double pearson_oracle(std::span<const DirectionVector> rows, std::size_t a, std::size_t b) {
  const double n = static_cast<double>(rows.size());
  double ma = 0.0;
  double mb = 0.0;
  for (const auto& row : rows) {
    ma += space::direction_value(row[a]);
    mb += space::direction_value(row[b]);
  }
  ma /= n;
  mb /= n;
  double cov = 0.0;
  double va = 0.0;
  double vb = 0.0;
  for (const auto& row : rows) {
    const double da = space::direction_value(row[a]) - ma;
    const double db = space::direction_value(row[b]) - mb;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

}  // namespace

TEST_CASE("correlation diagnostics match the brute-force oracle") {
  Rng gen(77);
  std::vector<DirectionVector> rows;
  for (int r = 0; r < 64; ++r) {
    std::string chars;
    for (int d = 0; d < 8; ++d) chars += "+0-"[gen.below(3)];
    rows.push_back(dv(chars));
  }
  auto report = correlation_diagnostics(rows, 0.5, 1);
  REQUIRE(report.dims == 8);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(report.at(i, i) == doctest::Approx(1.0).epsilon(1e-12));
    for (std::size_t j = 0; j < 8; ++j) {
      CHECK(report.at(i, j) == doctest::Approx(report.at(j, i)).epsilon(1e-15));
      CHECK(report.at(i, j) == doctest::Approx(pearson_oracle(rows, i, j)).epsilon(1e-12));
    }
  }

  SUBCASE("parallel kernel equals the serial reference") {
    auto parallel = correlation_diagnostics(rows, 0.5, 0);
    for (std::size_t i = 0; i < report.matrix.size(); ++i)
      CHECK(parallel.matrix[i] == report.matrix[i]);
    CHECK(parallel.fraction_below == report.fraction_below);
  }
}

TEST_CASE("correlation corner cases") {
  // two perfectly anti-aligned dimensions
  std::vector<DirectionVector> rows{dv("+-"), dv("-+"), dv("+-"), dv("0-")};
  rows[3] = dv("00");  // keep variance in both columns
  auto report = correlation_diagnostics(rows, 0.5, 1);
  CHECK(report.at(0, 1) == doctest::Approx(-1.0).epsilon(1e-12));

  // constant column correlates as zero, with the constant count reported
  std::vector<DirectionVector> constant{dv("+0"), dv("+-"), dv("++")};
  auto creport = correlation_diagnostics(constant, 0.5, 1);
  CHECK(creport.at(0, 0) == 0.0);
  CHECK(creport.at(0, 1) == 0.0);
  CHECK(creport.constant_dims == 1);

  CHECK_THROWS_AS(correlation_diagnostics(std::vector<DirectionVector>{dv("+")}, 0.5, 1),
                  ValidationError);
}

TEST_CASE("diversity_count is an exact distinct count") {
  CHECK(diversity_count({}) == 0);
  std::vector<DirectionVector> copies(5, dv("+0-"));
  CHECK(diversity_count(copies) == 1);
  std::vector<DirectionVector> seven;
  for (int i = 0; i < 7; ++i) {
    std::string chars = "000";
    chars[static_cast<std::size_t>(i % 3)] = (i < 3) ? '+' : '-';
    if (i == 6) chars = "+++";
    seven.push_back(dv(chars));
  }
  seven.push_back(dv("+00"));  // duplicate of i=0
  CHECK(diversity_count(seven) == 7);
}

TEST_CASE("recorded scorer requires every case id") {
  const auto dir = std::filesystem::temp_directory_path() / "alignforge-recorded-test";
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "quads.jsonl");
    out << R"({"id": "a", "lp_policy_w": -1.0, "lp_policy_l": -2.0, "lp_ref_w": -1.5, "lp_ref_l": -1.5})"
        << "\n";
  }
  auto scorer = RecordedScorer::load_file(dir / "quads.jsonl");
  personas::PersonaExample known;
  known.id = "a";
  CHECK(scorer.score(known).lp_policy_w == -1.0);
  personas::PersonaExample unknown;
  unknown.id = "b";
  CHECK_THROWS_AS(scorer.score(unknown), ValidationError);
}

TEST_CASE("http scorer round-trips against a local server") {
  httplib::Server server;
  server.Post("/score", [](const httplib::Request& req, httplib::Response& res) {
    auto body = nlohmann::json::parse(req.body);
    nlohmann::json reply{{"lp_policy_w", -1.0},
                         {"lp_policy_l", -2.0},
                         {"lp_ref_w", -1.5},
                         {"lp_ref_l", -1.5}};
    if (body.at("id") == "bad") {
      res.status = 500;
      return;
    }
    res.set_content(reply.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread server_thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  HttpScorerConfig config;
  config.host = "http://127.0.0.1:" + std::to_string(port);
  HttpScorer scorer(config);
  personas::PersonaExample example;
  example.id = "ok";
  auto quad_result = scorer.score(example);
  CHECK(quad_result.lp_policy_w == -1.0);
  CHECK(quad_result.margin_gap() == doctest::Approx(1.0));

  personas::PersonaExample bad;
  bad.id = "bad";
  CHECK_THROWS_AS(scorer.score(bad), IoError);

  server.stop();
  server_thread.join();
}
