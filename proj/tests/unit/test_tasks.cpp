#include <fstream>
#include <regex>
#include <set>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "repflow/error.hpp"
#include "repflow/tasks.hpp"
#include "test_util.hpp"

using namespace repflow;
using nlohmann::ordered_json;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// Splits a KVPR prompt into its JSON object and the queried key.
std::pair<ordered_json, std::string> parse_kvpr(const std::string& text) {
  const auto open = text.find("JSON data:\n{");
  const auto close = text.find("\n}\n");
  REQUIRE(open != std::string::npos);
  REQUIRE(close != std::string::npos);
  const auto object = ordered_json::parse(text.substr(open + 11, close + 2 - (open + 11)));
  const std::regex key_re("\nKey: \"([^\"]+)\"\nCorresponding value:$");
  std::smatch m;
  REQUIRE(std::regex_search(text, m, key_re));
  return {object, m[1].str()};
}

MdqaRecord record_with(std::size_t distractors) {
  MdqaRecord r;
  r.question = "which river";
  r.answer = "the long one";
  r.gold_document = {"Gold", "The long one is the answer."};
  for (std::size_t i = 0; i < distractors; ++i)
    r.distractors.push_back({"D" + std::to_string(i), "Distractor body " + std::to_string(i) + "."});
  return r;
}

std::vector<std::pair<std::string, std::string>> mdqa_docs(const std::string& text) {
  static const std::regex doc_re(R"(^Document \[(\d+)\]\(Title: ([^)]*)\) (.*)$)");
  std::vector<std::pair<std::string, std::string>> docs;
  std::istringstream in(text);
  std::string line;
  std::size_t expected = 1;
  while (std::getline(in, line)) {
    std::smatch m;
    if (!std::regex_match(line, m, doc_re)) continue;
    CHECK(std::stoul(m[1].str()) == expected++);
    docs.emplace_back(m[2].str(), m[3].str());
  }
  return docs;
}

}  // namespace

TEST_CASE("uuid format") {
  const std::regex re("^[0-9a-f]{8}-[0-9a-f]{4}-4[0-9a-f]{3}-[89ab][0-9a-f]{3}-[0-9a-f]{12}$");
  std::set<std::string> seen;
  for (std::uint64_t i = 0; i < 2000; ++i) {
    const std::string u = uuid_v4(3, i);
    REQUIRE(std::regex_match(u, re));
    seen.insert(u);
  }
  CHECK(seen.size() == 2000);
  CHECK(uuid_v4(3, 5) == uuid_v4(3, 5));
  CHECK(uuid_v4(3, 5) != uuid_v4(4, 5));
}

TEST_CASE("kvpr golden file") {
  const PromptInstance p = gen_kvpr(3, 2, 7);
  CHECK(prompt_json(p) == slurp(test::fixtures() / "kvpr_pairs3_gold2_seed7.json"));
  CHECK(prompt_json(gen_kvpr(3, 2, 7)) == prompt_json(p));
  const auto [object, key] = parse_kvpr(p.text);
  REQUIRE(object.size() == 3);
  auto it = object.begin();
  ++it;
  CHECK(it.key() == key);
  CHECK(p.label == 1);
  CHECK(p.text.starts_with("Extract the value corresponding to the specified key in the JSON object below.\n\n"));
}

TEST_CASE("kvpr parse-back at n = 50") {
  const PromptInstance p = gen_kvpr(50, 25, 123);
  const auto [object, key] = parse_kvpr(p.text);
  REQUIRE(object.size() == 50);
  std::set<std::string> all;
  std::size_t pos = 0, found = 0;
  for (auto it = object.begin(); it != object.end(); ++it) {
    ++pos;
    all.insert(it.key());
    all.insert(it.value().get<std::string>());
    if (it.key() == key) found = pos;
  }
  CHECK(all.size() == 100);
  CHECK(found == 25);
  CHECK(p.n_items == 50);
  CHECK(p.gold_index == 25);
  CHECK(p.label == 24);
}

TEST_CASE("kvpr errors and determinism") {
  CHECK_THROWS_AS(gen_kvpr(3, 0, 1), Error);
  CHECK_THROWS_AS(gen_kvpr(3, 4, 1), Error);
  CHECK_THROWS_AS(gen_kvpr(0, 1, 1), Error);
  CHECK(gen_kvpr(10, 3, 1).text != gen_kvpr(10, 3, 2).text);
  for (std::size_t k = 1; k <= 10; ++k) {
    const PromptInstance p = gen_kvpr(10, k, 9);
    REQUIRE(p.label == static_cast<int>(k) - 1);
  }
}

TEST_CASE("mdqa golden file and parse-back") {
  const auto records = ingest_mdqa_corpus(test::fixtures() / "mdqa_sample.jsonl");
  const PromptInstance p = build_mdqa(records[0], 5, 3, 11);
  CHECK(prompt_json(p) == slurp(test::fixtures() / "mdqa_record0_docs5_gold3_seed11.json"));
  const auto docs = mdqa_docs(p.text);
  REQUIRE(docs.size() == 5);
  CHECK(docs[2].first == records[0].gold_document.title);
  CHECK(docs[2].second == records[0].gold_document.body);
  CHECK(p.text.ends_with("\nQuestion: " + records[0].question + "\nAnswer:"));
  CHECK(p.label == 2);
  std::set<std::string> titles;
  for (const auto& d : docs) titles.insert(d.first);
  CHECK(titles.size() == 5);
}

TEST_CASE("mdqa gold placement") {
  const MdqaRecord r = record_with(6);
  const auto only = mdqa_docs(build_mdqa(r, 1, 1, 0).text);
  REQUIRE(only.size() == 1);
  CHECK(only[0].first == "Gold");
  for (std::size_t k = 1; k <= 7; ++k) {
    const auto docs = mdqa_docs(build_mdqa(r, 7, k, 4).text);
    REQUIRE(docs.size() == 7);
    REQUIRE(docs[k - 1].first == "Gold");
  }
  CHECK(build_mdqa(r, 4, 2, 1).text == build_mdqa(r, 4, 2, 1).text);
  CHECK_THROWS_WITH_AS(build_mdqa(r, 8, 1, 0), doctest::Contains("insufficient distractors"), Error);
  CHECK_THROWS_AS(build_mdqa(r, 4, 5, 0), Error);
  CHECK_THROWS_AS(build_mdqa(r, 4, 0, 0), Error);
}

TEST_CASE("mdqa corpus ingest") {
  const auto records = ingest_mdqa_corpus(test::fixtures() / "mdqa_sample.jsonl");
  REQUIRE(records.size() == 100);
  std::ifstream in(test::fixtures() / "mdqa_sample.jsonl");
  std::string line;
  for (std::size_t i = 0; std::getline(in, line); ++i) {
    const auto j = ordered_json::parse(line);
    REQUIRE(records[i].question == j["question"].get<std::string>());
    REQUIRE(records[i].distractors.size() == j["documents"].size() - 1);
  }

  const std::string one_gold =
      R"({"question": "q", "answer": "a", "documents": [{"title": "t1", "text": "x", "is_gold": true}, {"title": "t2", "text": "y", "is_gold": false}]})";
  const auto parsed = parse_mdqa_corpus(one_gold + "\n");
  REQUIRE(parsed.size() == 1);
  CHECK(parsed[0].gold_document == Document{"t1", "x"});
  CHECK(parsed[0].distractors.size() == 1);

  const std::string two_golds =
      R"({"question": "q", "answer": "a", "documents": [{"title": "t1", "text": "x", "is_gold": true}, {"title": "t2", "text": "y", "is_gold": true}]})";
  CHECK_THROWS_WITH_AS(parse_mdqa_corpus(one_gold + "\n" + two_golds + "\n"), doctest::Contains("line 2"), Error);
  CHECK_THROWS_WITH_AS(parse_mdqa_corpus(one_gold + "\n{not json\n"), doctest::Contains("line 2: malformed JSON"),
                       Error);
  CHECK_THROWS_AS(ingest_mdqa_corpus(test::fixtures() / "does_not_exist.jsonl"), Error);
}

TEST_CASE("context length helpers") {
  CHECK(whitespace_tokens("") == 0);
  CHECK(whitespace_tokens("  a b\n\tc  ") == 3);
  const auto len = [](std::size_t n) { return whitespace_tokens(gen_kvpr(n, 1, 0).text); };
  for (const std::size_t target : {300u, 1000u, 2000u}) {
    const std::size_t n = items_for_length(target, 4000, len);
    REQUIRE(n >= 1);
    CHECK(len(n) <= target);
    CHECK(len(n + 1) > target);
  }
  CHECK(items_for_length(1, 10, len) == 0);
  CHECK(items_for_length(1000000, 10, len) == 10);
}

TEST_CASE("prompt json round trip") {
  const PromptInstance p = gen_kvpr(4, 3, 2);
  const PromptInstance q = parse_prompt_json(prompt_json(p));
  CHECK(q.kind == p.kind);
  CHECK(q.text == p.text);
  CHECK(q.n_items == 4);
  CHECK(q.gold_index == 3);
  CHECK(q.label == 2);
  CHECK(q.seed == 2);
  CHECK_THROWS_AS(parse_prompt_json("{}"), Error);
  CHECK_THROWS_AS(parse_prompt_json(R"({"kind": "qa", "text": "x", "n_items": 1, "gold_index": 1, "label": 0, "seed": 0})"),
                  Error);
}
