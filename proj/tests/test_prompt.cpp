// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "iag/completion.hpp"
#include "iag/prompt.hpp"
#include "iag/synth.hpp"

using namespace iag;
namespace fs = std::filesystem;

TEST_CASE("inductive prompt renders byte-exactly") {
  const std::string question = "Can you catch a jellyfish in the dumpster?";
  auto text = render_prompt(inductive_template(), question);
  const std::string expected =
      "Question: It is safe to keep wolves as pets.\n"
      "Knowledge: Wolves, tigers and lions are wild animals. Wild animals are generally "
      "dangerous.\n"
      "###\n"
      "Question: Bacon is healthy diet food.\n"
      "Knowledge: Bacon, chips and cakes are junk food. Junk food is not healthy.\n"
      "###\n"
      "Question: Pens are more expensive than cars.\n"
      "Knowledge: Pens, erasers and paper are stationery. Stationery is cheaper than cars.\n"
      "###\n"
      "Question: People make furniture out of oak.\n"
      "Knowledge: Oak, pine and beech are Wood. Wood can be used to make furniture.\n"
      "###\n"
      "Question: Fridges are often used in the wild.\n"
      "Knowledge: Fridges, ovens and TVs are appliances. Appliances are used in houses.\n"
      "###\n"
      "Question: Can you catch a jellyfish in the dumpster?\n"
      "Knowledge:";
  CHECK(text == expected);
}

TEST_CASE("trivial prompt's first demo is the direct assertion") {
  auto text = render_prompt(trivial_template(), "Is water wet?");
  CHECK(text.find("Knowledge: Wolves are dangerous.\n###\n") != std::string::npos);
  CHECK(text.find("wild animals") == std::string::npos);
  CHECK(text.rfind("Question: Is water wet?\nKnowledge:") == text.size() -
                                                                 std::string("Question: Is water "
                                                                             "wet?\nKnowledge:")
                                                                     .size());
}

TEST_CASE("rendered prompt contains exactly five ### separators") {
  auto text = render_prompt(inductive_template(), "Anything?");
  size_t count = 0, pos = 0;
  while ((pos = text.find("###", pos)) != std::string::npos) {
    ++count;
    pos += 3;
  }
  CHECK(count == 5);
}

TEST_CASE("question appears verbatim exactly once after the final marker") {
  std::mt19937_64 rng(5);
  const std::vector<std::string> pool = {"are", "cats", "stars", "cold", "planets", "loud"};
  for (int rep = 0; rep < 50; ++rep) {
    std::string q = "Do";
    for (int i = 0; i < 3; ++i) q += " " + pool[rng() % pool.size()];
    q += std::to_string(rep) + "?";
    auto text = render_prompt(inductive_template(), q);
    const std::string needle = "Question: " + q + "\nKnowledge:";
    size_t count = 0, pos = 0;
    while ((pos = text.find(needle, pos)) != std::string::npos) {
      ++count;
      pos += needle.size();
    }
    CHECK(count == 1);
    CHECK(question_from_prompt(text) == q);
  }
}

TEST_CASE("parse_completion strips markers and whitespace") {
  auto ks = parse_completion(
      " Jellyfish, crabs and shrimps are aquatic animals. You can't catch aquatic animals in the "
      "dumpster.\n###\nQuestion: next?");
  CHECK(ks.text ==
        "Jellyfish, crabs and shrimps are aquatic animals. You can't catch aquatic animals in the "
        "dumpster.");
  CHECK(ks.source == StatementSource::teacher);
}

TEST_CASE("degenerate completion is an error") {
  CHECK_THROWS_WITH_AS(parse_completion("   \n###"), doctest::Contains("empty knowledge"),
                       ConfigError);
}

TEST_CASE("completion without ### truncates before Question:") {
  const std::string raw = "Steel is a metal. Metals are strong.\nQuestion: next?";
  auto ks = parse_completion(raw);
  CHECK(ks.text == "Steel is a metal. Metals are strong.");
}

TEST_CASE("parse round-trips any marker-free knowledge text") {
  std::mt19937_64 rng(11);
  const std::vector<std::string> pool = {"stones", "sink", "rivers", "flow", "embers", "glow"};
  for (int rep = 0; rep < 100; ++rep) {
    std::string k;
    const int len = 2 + static_cast<int>(rng() % 6);
    for (int i = 0; i < len; ++i) k += (i ? " " : "") + pool[rng() % pool.size()];
    k += ".";
    CHECK(parse_completion(k + "\n###\nQuestion: more?").text == k);
  }
}

namespace {

SynthOutput small_synth(double noise = 0.0) {
  SynthSpec spec;
  spec.n_entities = 9;
  spec.n_hypernyms = 3;
  spec.n_properties = 2;
  spec.teacher_noise_rate = 0.0;
  spec.seed = 11;
  auto out = synth_generate(spec);
  (void)noise;
  return out;
}

}  // namespace

TEST_CASE("noiseless mock teacher returns n copies of the gold statement") {
  auto synth = small_synth();
  MockTeacher teacher(synth.teacher_table, synth.dataset, 0.0, 42);
  const auto& ex = synth.dataset[3];
  auto statements = sample_statements(teacher, ex.question, inductive_template(), 3, 0.7);
  REQUIRE(statements.size() == 3);
  for (const auto& s : statements) {
    CHECK(s.text == synth.teacher_table.at(ex.qid).text);
    CHECK(s.source == StatementSource::teacher);
  }
}

TEST_CASE("mock teacher at noise 1.0 corrupts every sample") {
  auto synth = small_synth();
  MockTeacher teacher(synth.teacher_table, synth.dataset, 1.0, 42);
  int corrupted = 0, total = 0;
  for (const auto& ex : synth.dataset) {
    auto statements = sample_statements(teacher, ex.question, inductive_template(), 4, 0.7);
    for (const auto& s : statements) {
      ++total;
      if (s.text != synth.teacher_table.at(ex.qid).text) ++corrupted;
    }
  }
  CHECK(corrupted == total);
}

TEST_CASE("mock teacher corruption flips polarity or swaps the hypernym") {
  auto synth = small_synth();
  MockTeacher teacher(synth.teacher_table, synth.dataset, 1.0, 7);
  int polarity = 0, hypernym = 0;
  for (const auto& ex : synth.dataset) {
    auto statements = sample_statements(teacher, ex.question, inductive_template(), 6, 0.7);
    const std::string& gold = synth.teacher_table.at(ex.qid).text;
    const bool gold_negative = gold.find(" are not ") != std::string::npos;
    for (const auto& s : statements) {
      const bool negative = s.text.find(" are not ") != std::string::npos;
      if (negative != gold_negative) {
        ++polarity;
      } else {
        ++hypernym;
        CHECK(s.text.find("hyp") != std::string::npos);
      }
    }
  }
  // noise/2 each; both kinds must actually occur
  CHECK(polarity > 0);
  CHECK(hypernym > 0);
}

TEST_CASE("mock teacher is deterministic given question, seed and noise") {
  auto synth = small_synth();
  const auto& ex = synth.dataset[5];
  for (int rep = 0; rep < 3; ++rep) {
    MockTeacher teacher(synth.teacher_table, synth.dataset, 0.6, 99);
    auto a = sample_statements(teacher, ex.question, inductive_template(), 5, 0.7);
    MockTeacher again(synth.teacher_table, synth.dataset, 0.6, 99);
    auto b = sample_statements(again, ex.question, inductive_template(), 5, 0.7);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].text == b[i].text);
  }
}

TEST_CASE("fixture replay returns recorded completions and errors on a miss") {
  const auto path = (fs::temp_directory_path() / "iag_fixture_test.jsonl").string();
  fs::remove(path);

  CompletionRequest req;
  req.prompt = render_prompt(inductive_template(), "Is a stone heavy?");
  req.n_samples = 5;
  req.temperature = 0.7;
  {
    FixtureCache cache;
    std::vector<std::string> recorded;
    for (int i = 0; i < 5; ++i) {
      recorded.push_back(" Stones, rocks and boulders are minerals. Minerals are heavy stuff " +
                         std::to_string(i) + ".\n###");
    }
    cache.put(req.cache_key(), recorded);
    cache.append_to(path, req.cache_key());
  }
  FixtureClient client(path);
  auto statements = sample_statements(client, "Is a stone heavy?", inductive_template(), 5, 0.7);
  REQUIRE(statements.size() == 5);
  for (int i = 0; i < 5; ++i) {
    CHECK(statements[static_cast<size_t>(i)].text ==
          "Stones, rocks and boulders are minerals. Minerals are heavy stuff " + std::to_string(i) +
              ".");
  }
  CHECK_THROWS_WITH_AS(
      sample_statements(client, "Un-recorded question?", inductive_template(), 5, 0.7),
      doctest::Contains("miss"), StageError);
  fs::remove(path);
}

TEST_CASE("http client round-trips against a local server and records fixtures") {
  const auto fixture = (fs::temp_directory_path() / "iag_http_fixture.jsonl").string();
  fs::remove(fixture);

  httplib::Server server;
  std::atomic<int> hits{0};
  server.Post("/v1/complete", [&](const httplib::Request& req, httplib::Response& res) {
    ++hits;
    auto body = nlohmann::json::parse(req.body);
    const int n = body.at("n").get<int>();
    nlohmann::json out;
    std::vector<std::string> completions;
    for (int i = 0; i < n; ++i) {
      completions.push_back(" Pebbles, gravel and sand are stones. Stones are small.\n###");
    }
    out["completions"] = completions;
    res.set_content(out.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread server_thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  {
    HttpClient client("http://127.0.0.1:" + std::to_string(port) + "/v1/complete", "test-token",
                      10, 3, fixture);
    auto statements = sample_statements(client, "Are pebbles small?", inductive_template(), 2, 0.7);
    REQUIRE(statements.size() == 2);
    CHECK(statements[0].text == "Pebbles, gravel and sand are stones. Stones are small.");
    CHECK(hits.load() == 1);
    // the same request replays from the in-memory cache
    sample_statements(client, "Are pebbles small?", inductive_template(), 2, 0.7);
    CHECK(hits.load() == 1);
  }
  server.stop();
  server_thread.join();

  // recorded fixture now serves offline replay
  FixtureClient replay(fixture);
  auto statements = sample_statements(replay, "Are pebbles small?", inductive_template(), 2, 0.7);
  CHECK(statements.size() == 2);
  fs::remove(fixture);
}

TEST_CASE("http client reports the attempt count after transport failures") {
  HttpClient client("http://127.0.0.1:9/unreachable", "", 1, 2);
  CompletionRequest req;
  req.prompt = render_prompt(inductive_template(), "Anything?");
  CHECK_THROWS_WITH_AS(client.complete(req), doctest::Contains("after 2 attempts"), StageError);
}
