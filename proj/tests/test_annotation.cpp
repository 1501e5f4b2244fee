#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "alignforge/annotation.hpp"
#include "alignforge/pair_builder.hpp"
#include "alignforge/jsonl.hpp"
#include "test_support.hpp"

using namespace alignforge;
using namespace alignforge::annotation;
using space::Direction;
using testsupport::dv;
using testsupport::iv;

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE_MESSAGE(in.good(), "missing file ", path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::filesystem::path golden_dir() {
  return std::filesystem::path(ALIGNFORGE_SOURCE_DATA_DIR).parent_path() / "tests" / "golden";
}

// Returns queued replies in order, then repeats the last one.
class ScriptedBackend : public AnnotatorBackend {
 public:
  explicit ScriptedBackend(std::vector<std::string> replies) : replies_(std::move(replies)) {}

  std::string complete(const AnnotationRequest&) override {
    ++calls_;
    if (replies_.empty()) throw BackendError("scripted: no replies queued");
    const std::size_t index = std::min(static_cast<std::size_t>(calls_ - 1), replies_.size() - 1);
    return replies_[index];
  }

  int calls() const { return calls_; }

 private:
  std::vector<std::string> replies_;
  int calls_ = 0;
};

}  // namespace

TEST_CASE("planted headers parse and strip") {
  const std::string text = "[[d:extraversion=3]][[d:humor=1]]Hello there, general!";
  auto planted = parse_planted_levels(text);
  CHECK(planted.at("extraversion") == 3);
  CHECK(planted.at("humor") == 1);
  CHECK(strip_planted_headers(text) == "Hello there, general!");
  CHECK(strip_planted_headers("no headers") == "no headers");
  CHECK(strip_planted_headers("[[d:x=2]]\nline") == "line");
}

TEST_CASE("option recoding orders the prompt categories by strength") {
  CHECK(option_to_level(1) == 3);
  CHECK(option_to_level(2) == 1);
  CHECK(option_to_level(3) == 2);
  for (int level = 1; level <= 3; ++level) CHECK(option_to_level(level_to_option(level)) == level);
  CHECK_THROWS_AS(option_to_level(4), ValidationError);
}

TEST_CASE("prompt rendering is byte-stable against golden files") {
  const auto& prompts = testsupport::bundled_prompts();
  const auto& reg = testsupport::bundled_registry();

  const std::string intensity = prompts.intensity_prompt(
      "Where should I travel this summer?",
      "Try the coastal towns in Portugal; quiet, cheap, and the food is great.",
      reg.at(reg.find("neuroticism").value()));
  CHECK(intensity == read_file(golden_dir() / "intensity_prompt.txt"));

  const std::string demographic = prompts.demographic_prompt(
      "Where should I travel this summer?", "Go hiking in the Alps.", "Stay home and save money.");
  CHECK(demographic == read_file(golden_dir() / "demographic_prompt.txt"));

  const std::string judge = prompts.judge_prompt("Commented: loves budget travel.",
                                                 "Where should I travel this summer?",
                                                 "Go hiking in the Alps.", "Stay home and save money.");
  CHECK(judge == read_file(golden_dir() / "judge_prompt.txt"));

  // referential transparency
  CHECK(intensity == prompts.intensity_prompt(
                         "Where should I travel this summer?",
                         "Try the coastal towns in Portugal; quiet, cheap, and the food is great.",
                         reg.at(reg.find("neuroticism").value())));
}

TEST_CASE("intensity question varies by render kind") {
  const auto& reg = testsupport::bundled_registry();
  CHECK(PromptLibrary::intensity_question(reg.at(reg.find("extraversion").value())) ==
        "What does this comment suggest about the commenter's Extraversion in the Big Five "
        "personality traits? (1) High Extraversion (2) Low Extraversion (3) Comments alone cannot "
        "reflect");
  CHECK(PromptLibrary::intensity_question(reg.at(reg.find("painting").value())) ==
        "Does this comment indicate that the commenter likes or dislikes \"painting\"? (1) Likes "
        "(2) Dislikes (3) Comments alone cannot reflect");
}

TEST_CASE("mock backend reads planted headers and answers deterministically") {
  const auto& reg = testsupport::bundled_registry();
  const auto& attrs = testsupport::bundled_attributes();
  MockBackend mock(42, reg, attrs);
  Annotator annotator(mock, reg, attrs, testsupport::bundled_prompts());

  SUBCASE("planted header wins") {
    auto level = annotator.annotate_intensity("post", "[[d:extraversion=3]]so outgoing",
                                              "extraversion", "req1");
    REQUIRE(level.has_value());
    CHECK(*level == 3);
  }

  SUBCASE("unplanted levels are stable across calls") {
    auto a = annotator.annotate_intensity("post", "some comment", "humor", "req2");
    auto b = annotator.annotate_intensity("post", "some comment", "humor", "req2");
    REQUIRE(a.has_value());
    CHECK(*a == *b);
    CHECK(*a >= 1);
    CHECK(*a <= 3);
  }

  SUBCASE("unknown dimension violates the precondition") {
    CHECK_THROWS_AS(annotator.annotate_intensity("post", "text", "not_a_dim", "req3"),
                    ValidationError);
  }
}

TEST_CASE("external-style reply '2' recodes to the low level") {
  const auto& reg = testsupport::bundled_registry();
  const auto& attrs = testsupport::bundled_attributes();
  ScriptedBackend backend({"2"});
  Annotator annotator(backend, reg, attrs, testsupport::bundled_prompts());
  auto level = annotator.annotate_intensity("post", "text", "neuroticism", "req");
  REQUIRE(level.has_value());
  CHECK(*level == 1);
}

TEST_CASE("unparseable replies exhaust retries and mark unannotatable") {
  const auto& reg = testsupport::bundled_registry();
  const auto& attrs = testsupport::bundled_attributes();
  ScriptedBackend backend({"maybe"});
  RetryPolicy retry;
  retry.max_retries = 2;
  Annotator annotator(backend, reg, attrs, testsupport::bundled_prompts(), retry);
  auto level = annotator.annotate_intensity("post", "text", "neuroticism", "req");
  CHECK_FALSE(level.has_value());
  CHECK(backend.calls() == 3);
}

TEST_CASE("a later parseable reply recovers within the retry budget") {
  const auto& reg = testsupport::bundled_registry();
  const auto& attrs = testsupport::bundled_attributes();
  ScriptedBackend backend({"hmm", "1"});
  Annotator annotator(backend, reg, attrs, testsupport::bundled_prompts());
  auto level = annotator.annotate_intensity("post", "text", "neuroticism", "req");
  REQUIRE(level.has_value());
  CHECK(*level == 3);
  CHECK(backend.calls() == 2);
}

TEST_CASE("extract_last_json_object takes the last well-formed block") {
  const std::string reply =
      "Sure! Here is a draft {\"not\": \"this one\"} and the final answer:\n"
      "{\"reason\": \"r\", \"textural persona\": \"p\", \"dimension description\": {}}";
  auto obj = extract_last_json_object(reply);
  REQUIRE(obj.has_value());
  CHECK((*obj)["reason"] == "r");

  CHECK_FALSE(extract_last_json_object("no braces here").has_value());
  CHECK_FALSE(extract_last_json_object("{broken").has_value());

  // braces inside strings do not confuse the scanner
  auto tricky = extract_last_json_object(R"({"a": "brace } inside", "b": 1})");
  REQUIRE(tricky.has_value());
  CHECK((*tricky)["b"] == 1);
}

TEST_CASE("demographic parse of the worked example reply") {
  const auto& reg = testsupport::bundled_registry();
  const auto& attrs = testsupport::bundled_attributes();
  // the example output block shipped inside the demographic template
  const std::string tmpl = read_file(testsupport::data_dir() / "prompts" / "demographic.txt");
  const auto start = tmpl.find("{\n    \"reason\"");
  REQUIRE(start != std::string::npos);
  const auto stop = tmpl.find("Your task:", start);
  REQUIRE(stop != std::string::npos);
  const std::string reply = tmpl.substr(start, stop - start);

  auto persona = parse_demo_reply(reply, reg, attrs);
  REQUIRE(persona.has_value());
  CHECK(persona->narrative.find("founder of a tech startup") != std::string::npos);
  CHECK(persona->like_tags == std::set<std::string>{"education", "workplace", "finance"});
  CHECK(persona->dislike_tags == std::set<std::string>{"parenting"});
  CHECK(persona->directions[reg.find("openness").value()] == Direction::Positive);
  CHECK(persona->directions[reg.find("agreeableness").value()] == Direction::Negative);
  CHECK(persona->directions[reg.find("parenting").value()] == Direction::Negative);
  CHECK(persona->directions[reg.find("education").value()] == Direction::Positive);
  CHECK(persona->directions[reg.find("age_group").value()] == Direction::Positive);
  // free-text Occupation is consumed without entering the vector
  CHECK(persona->directions[reg.find("gender").value()] == Direction::Neutral);
}

TEST_CASE("demographic parse rejects unknown names and foreign options") {
  const auto& reg = testsupport::bundled_registry();
  const auto& attrs = testsupport::bundled_attributes();
  CHECK_THROWS_WITH_AS(
      parse_demo_reply(R"({"textural persona": "p", "dimension description": {"Made Up": "High"}})",
                       reg, attrs),
      doctest::Contains("unknown dimension"), ValidationError);
  CHECK_THROWS_AS(
      parse_demo_reply(
          R"({"textural persona": "p", "dimension description": {"Gender": "Robot"}})", reg, attrs),
      ValidationError);
  CHECK_THROWS_WITH_AS(
      parse_demo_reply(
          R"({"textural persona": "p", "dimension description": {}, "like keywords": "quantum blogging"})",
          reg, attrs),
      doctest::Contains("not a platform tag"), ValidationError);
}

TEST_CASE("mock demo personas echo the pair's direction") {
  const auto reg = testsupport::make_registry(4);
  const auto attrs = testsupport::make_attributes(reg, std::filesystem::temp_directory_path() /
                                                           "alignforge-test-attrs");
  MockBackend mock(7, reg, attrs);
  Annotator annotator(mock, reg, attrs, testsupport::bundled_prompts());

  const std::string chosen = testsupport::planted_response(reg, {3, 2, 1, 2}, "chosen");
  const std::string rejected = testsupport::planted_response(reg, {1, 2, 3, 2}, "rejected");
  const auto target = space::compare_intensities(iv({3, 2, 1, 2}), iv({1, 2, 3, 2}));
  REQUIRE(target == dv("+0-0"));

  auto outcome = annotator.annotate_demo_persona("post", chosen, rejected, target, "demo1");
  REQUIRE_MESSAGE(outcome.persona.has_value(), outcome.diagnostic);
  CHECK(outcome.persona->directions == target);
  CHECK(!outcome.persona->narrative.empty());
}

TEST_CASE("demo personas contradicting the target are rejected") {
  const auto reg = testsupport::make_registry(2);
  const auto attrs = testsupport::make_attributes(reg, std::filesystem::temp_directory_path() /
                                                           "alignforge-test-attrs2");
  // reply says d0 is Weak (negative) while the target needs positive
  ScriptedBackend backend(
      {R"({"textural persona": "p", "dimension description": {"Dimension 0": "Weak"}})"});
  Annotator annotator(backend, reg, attrs, testsupport::bundled_prompts());
  auto outcome = annotator.annotate_demo_persona("post", "a", "b", dv("+0"), "demo2");
  CHECK_FALSE(outcome.persona.has_value());
  CHECK(outcome.diagnostic.find("contradicts") != std::string::npos);
  CHECK(backend.calls() == 1);  // semantic violation is not retried
}

TEST_CASE("accepted demo personas agree with every mentioned non-neutral target dimension") {
  const auto reg = testsupport::make_registry(3);
  const auto attrs = testsupport::make_attributes(reg, std::filesystem::temp_directory_path() /
                                                           "alignforge-test-attrs3");
  ScriptedBackend backend(
      {R"({"textural persona": "p", "dimension description": {"Dimension 0": "Strong"}})"});
  Annotator annotator(backend, reg, attrs, testsupport::bundled_prompts());
  auto outcome = annotator.annotate_demo_persona("post", "a", "b", dv("+-0"), "demo3");
  REQUIRE(outcome.persona.has_value());
  CHECK(outcome.persona->directions == dv("+00"));
}

TEST_CASE("direction inference over planted pair examples") {
  const auto reg = testsupport::make_registry(3);
  const auto attrs = testsupport::make_attributes(reg, std::filesystem::temp_directory_path() /
                                                           "alignforge-test-attrs4");
  MockBackend mock(11, reg, attrs);
  Annotator annotator(mock, reg, attrs, testsupport::bundled_prompts());

  std::vector<PairItem> items{
      {"p1", testsupport::planted_response(reg, {3, 1, 2}, "w"),
       testsupport::planted_response(reg, {1, 1, 2}, "l")},
      {"p2", testsupport::planted_response(reg, {2, 2, 2}, "w"),
       testsupport::planted_response(reg, {2, 3, 2}, "l")},
  };
  auto dirs = annotator.infer_pair_directions(items, "key");
  REQUIRE(dirs.size() == 2);
  CHECK(dirs[0] == dv("+00"));
  CHECK(dirs[1] == dv("0-0"));

  // determinism: identical examples yield identical vectors
  std::vector<PairItem> twice{items[0], items[0]};
  auto dirs2 = annotator.infer_pair_directions(twice, "key2");
  CHECK(dirs2[0] == dirs2[1]);

  CHECK_THROWS_AS(annotator.infer_pair_directions({}, "key3"), ValidationError);

  std::vector<UgcItem> ugc{{"p", testsupport::planted_response(reg, {3, 2, 1}, "u")}};
  auto udirs = annotator.infer_ugc_directions(ugc, "key4");
  REQUIRE(udirs.size() == 1);
  CHECK(udirs[0] == dv("+0-"));
  CHECK_THROWS_AS(annotator.infer_ugc_directions({}, "key5"), ValidationError);
}

TEST_CASE("audit log captures one record per attempt") {
  const auto& reg = testsupport::bundled_registry();
  const auto& attrs = testsupport::bundled_attributes();
  const auto dir = std::filesystem::temp_directory_path() / "alignforge-audit-test";
  std::filesystem::remove_all(dir);
  AuditLog audit(dir / "audit.jsonl");

  ScriptedBackend backend({"nope", "3"});
  Annotator annotator(backend, reg, attrs, testsupport::bundled_prompts(), RetryPolicy{}, &audit);
  auto level = annotator.annotate_intensity("post", "text", "humor", "req-77");
  REQUIRE(level.has_value());
  CHECK(*level == 2);

  auto records = read_jsonl(dir / "audit.jsonl");
  REQUIRE(records.size() == 2);
  CHECK(records[0]["request_id"] == "req-77");
  CHECK(records[0]["attempt"] == 0);
  CHECK(records[1]["attempt"] == 1);
  CHECK(records[0]["task"] == "intensity");
  CHECK(records[0]["dim"] == "humor");
  CHECK(records[0]["prompt_sha256"].get<std::string>().size() == 64);
  CHECK(records[1]["reply"] == "3");
}

TEST_CASE("http backend speaks the chat-completion wire format") {
  httplib::Server server;
  std::string seen_auth;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen_auth = req.get_header_value("Authorization");
    auto body = nlohmann::json::parse(req.body);
    REQUIRE(body.at("messages").at(0).at("role") == "user");
    const std::string content = body["messages"][0]["content"].get<std::string>();
    nlohmann::json reply{
        {"choices", nlohmann::json::array({nlohmann::json{
                        {"message", nlohmann::json{{"role", "assistant"},
                                                   {"content", content.empty() ? "?" : "2"}}}}})}};
    res.set_content(reply.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread server_thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  setenv("ALIGNFORGE_ANNOTATOR_TOKEN", "sekrit", 1);
  HttpBackendConfig config;
  config.host = "http://127.0.0.1:" + std::to_string(port);
  HttpBackend backend(config);
  CHECK(backend.is_external());

  AnnotationRequest request;
  request.task = Task::Intensity;
  request.request_id = "wire-1";
  request.prompt = "prompt text";
  CHECK(backend.complete(request) == "2");
  CHECK(seen_auth == "Bearer sekrit");

  // end to end through the annotator: "2" recodes to level 1
  const auto& reg = testsupport::bundled_registry();
  const auto& attrs = testsupport::bundled_attributes();
  Annotator annotator(backend, reg, attrs, testsupport::bundled_prompts());
  auto level = annotator.annotate_intensity("post", "text", "neuroticism", "wire-2");
  REQUIRE(level.has_value());
  CHECK(*level == 1);
  unsetenv("ALIGNFORGE_ANNOTATOR_TOKEN");

  server.stop();
  server_thread.join();
}

TEST_CASE("http backend serves concurrent workers within the in-flight cap") {
  std::atomic<int> in_flight{0};
  std::atomic<int> peak{0};
  std::atomic<int> served{0};
  httplib::Server server;
  server.new_task_queue = [] { return new httplib::ThreadPool(8); };
  server.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    const int now = ++in_flight;
    int expected = peak.load();
    while (now > expected && !peak.compare_exchange_weak(expected, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
    ++served;
    --in_flight;
    nlohmann::json reply{{"choices", nlohmann::json::array({nlohmann::json{
                             {"message", nlohmann::json{{"content", "1"}}}}})}};
    res.set_content(reply.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread server_thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  HttpBackendConfig config;
  config.host = "http://127.0.0.1:" + std::to_string(port);
  config.in_flight_cap = 2;
  HttpBackend backend(config);

  const auto reg = testsupport::make_registry(2);
  const auto attrs = testsupport::make_attributes(reg, std::filesystem::temp_directory_path() /
                                                           "alignforge-http-attrs");
  Annotator annotator(backend, reg, attrs, testsupport::bundled_prompts());

  std::vector<pairs::RawRecord> records;
  for (int r = 0; r < 8; ++r)
    records.push_back(pairs::RawRecord{"r" + std::to_string(r), "post", {"a", "b"}});
  auto annotated = pairs::annotate_corpus(records, annotator, 0);

  for (const auto& record : annotated) {
    REQUIRE(record.intensities.size() == 2);
    for (const auto& iv : record.intensities) {
      REQUIRE(iv.has_value());
      CHECK(iv->levels == std::vector<int>{3, 3});  // reply "1" recodes to level 3
    }
  }
  CHECK(served.load() == 8 * 2 * 2);
  CHECK(peak.load() <= 2);

  server.stop();
  server_thread.join();
}

TEST_CASE("replay backend serves recorded replies by request id") {
  const auto dir = std::filesystem::temp_directory_path() / "alignforge-replay-test";
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "replies.jsonl");
    out << R"({"request_id": "a", "reply": "1"})" << "\n";
  }
  auto backend = ReplayBackend::load_file(dir / "replies.jsonl");
  AnnotationRequest request;
  request.request_id = "a";
  CHECK(backend.complete(request) == "1");
  request.request_id = "missing";
  CHECK_THROWS_AS(backend.complete(request), BackendError);
}
