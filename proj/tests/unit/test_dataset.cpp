#include <doctest.h>

#include <set>

#include "fixtures.hpp"
#include "harmaug/dataset.hpp"
#include "harmaug/error.hpp"
#include "tempdir.hpp"

using namespace harmaug;
using harmaug::testing::TempDir;

namespace {

data::Example ex(std::string instr, int label, std::optional<double> score = std::nullopt,
                 data::Source src = data::Source::original) {
  return {std::move(instr), "resp", label, score, src};
}

std::size_t count_lines(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

TEST_CASE("load_dataset on an empty file yields no examples") {
  TempDir dir;
  testing::spit(dir / "empty.jsonl", "");
  CHECK(data::load_dataset(dir / "empty.jsonl").empty());
}

TEST_CASE("load_dataset keeps file order") {
  TempDir dir;
  data::Dataset d("x");
  d.push_back(ex("first", 1));
  d.push_back(ex("second", 0, 0.2));
  d.push_back(ex("third", 1, 0.8, data::Source::harmaug));
  data::save_dataset(d, dir / "d.jsonl");
  const auto back = data::load_dataset(dir / "d.jsonl");
  REQUIRE(back.size() == 3);
  CHECK(back[0].instruction == "first");
  CHECK(back[1].instruction == "second");
  CHECK(back[2].instruction == "third");
}

TEST_CASE("a record missing its label names the line") {
  TempDir dir;
  testing::spit(dir / "bad.jsonl",
                R"({"instruction":"a","response":"b","label":1,"source":"original"})"
                "\n"
                R"({"instruction":"a","response":"b","source":"original"})"
                "\n");
  try {
    data::load_dataset(dir / "bad.jsonl");
    FAIL("expected an error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()) == "line 2: missing field label");
  }
}

TEST_CASE("malformed records are rejected") {
  CHECK_THROWS_AS(data::parse_json_line("{not json", 1), DataError);
  CHECK_THROWS_AS(data::parse_json_line(R"({"instruction":"a","label":2})", 1), DataError);
  CHECK_THROWS_AS(
      data::parse_json_line(R"({"instruction":"a","label":1,"teacher_score":1.5})", 1), DataError);
  CHECK_THROWS_AS(data::parse_json_line(R"({"instruction":"a","label":1,"source":"nope"})", 1),
                  DataError);
  CHECK_THROWS(data::parse_source("unknown"));
}

TEST_CASE("embedded newlines stay on one line and round-trip") {
  TempDir dir;
  data::Dataset d("nl");
  d.push_back(ex("line one\nline two", 1, 0.7));
  data::save_dataset(d, dir / "nl.jsonl");
  const auto raw = testing::slurp(dir / "nl.jsonl");
  CHECK(count_lines(raw) == 1);
  CHECK(raw.find("\\n") != std::string::npos);
  CHECK(data::load_dataset(dir / "nl.jsonl") == d);
}

TEST_CASE("save_dataset writes one line per record") {
  TempDir dir;
  data::Dataset empty("e");
  data::save_dataset(empty, dir / "e.jsonl");
  CHECK(testing::slurp(dir / "e.jsonl").empty());

  data::Dataset d("h");
  for (int i = 0; i < 100; ++i) d.push_back(ex("i" + std::to_string(i), i % 2));
  data::save_dataset(d, dir / "h.jsonl");
  CHECK(count_lines(testing::slurp(dir / "h.jsonl")) == 100);
}

TEST_CASE("save_dataset to an unwritable path fails") {
  data::Dataset d("x");
  CHECK_THROWS(data::save_dataset(d, "/nonexistent-dir/for/sure/x.jsonl"));
}

TEST_CASE("property: load(save(d)) == d for random datasets") {
  TempDir dir;
  Rng rng(17);
  const std::vector<std::string> alphabet = {"a", "b", " ", "\"", "\\", "\n", "\t", "\xc3\xa9", "{", "}", ":", ","};
  for (int trial = 0; trial < 50; ++trial) {
    data::Dataset d("r");
    const auto n = rng.below(20);
    for (std::uint64_t i = 0; i < n; ++i) {
      data::Example e;
      e.instruction = "q";
      const auto len = rng.below(12);
      for (std::uint64_t c = 0; c < len; ++c) e.instruction += alphabet[rng.below(alphabet.size())];
      e.response = rng.bernoulli(0.2) ? "" : e.instruction + "!";
      e.label = static_cast<int>(rng.below(2));
      if (rng.bernoulli(0.6)) e.teacher_score = rng.uniform();
      e.source = static_cast<data::Source>(rng.below(5));
      d.push_back(e);
    }
    data::save_dataset(d, dir / "r.jsonl");
    REQUIRE(data::load_dataset(dir / "r.jsonl") == d);
  }
}

TEST_CASE("mixed batches split exactly") {
  const testing::Lexicon lex;
  const auto a = testing::lexicon_dataset(30, lex.old_harm, lex.benign, lex.benign, 1);
  const auto b = testing::lexicon_dataset(30, lex.new_harm, lex.new_benign, lex.benign, 2);
  std::set<const data::Example*> in_b;
  for (const auto& e : b) in_b.insert(&e);

  SUBCASE("half and half") {
    data::MixedBatchSampler s(a, b, {8, 3, 0.5});
    for (int i = 0; i < 20; ++i) {
      const auto batch = s.next();
      CHECK(batch.items.size() == 8);
      CHECK(batch.from_second == 4);
      CHECK(batch.from_first == 4);
    }
  }
  SUBCASE("a quarter from the second set") {
    data::MixedBatchSampler s(a, b, {8, 3, 0.25});
    const auto batch = s.next();
    CHECK(batch.from_second == 2);
    CHECK(batch.from_first == 6);
  }
  SUBCASE("property: membership matches the declared split") {
    Rng rng(5);
    for (int trial = 0; trial < 40; ++trial) {
      const std::size_t bs = 1 + rng.below(32);
      const double mix = rng.uniform();
      data::MixedBatchSampler s(a, b, {bs, rng.next(), mix});
      const auto expect = static_cast<std::size_t>(std::floor(mix * static_cast<double>(bs) + 0.5));
      for (int k = 0; k < 5; ++k) {
        const auto batch = s.next();
        const auto from_b = static_cast<std::size_t>(std::count_if(
            batch.items.begin(), batch.items.end(), [&](auto* e) { return in_b.count(e) > 0; }));
        REQUIRE(from_b == expect);
        REQUIRE(batch.items.size() == bs);
      }
    }
  }
}

TEST_CASE("same seed gives the same batch sequence") {
  const testing::Lexicon lex;
  const auto a = testing::lexicon_dataset(30, lex.old_harm, lex.benign, lex.benign, 1);
  const auto b = testing::lexicon_dataset(30, lex.new_harm, lex.new_benign, lex.benign, 2);
  data::MixedBatchSampler s1(a, b, {8, 42, 0.5});
  data::MixedBatchSampler s2(a, b, {8, 42, 0.5});
  data::MixedBatchSampler s3(a, b, {8, 43, 0.5});
  bool differs = false;
  for (int i = 0; i < 10; ++i) {
    const auto x = s1.next(), y = s2.next(), z = s3.next();
    CHECK(x.items == y.items);
    differs = differs || x.items != z.items;
  }
  CHECK(differs);
}

TEST_CASE("mixed sampling from an empty dataset fails") {
  const data::Dataset empty("e");
  data::Dataset one("o");
  one.push_back(ex("x", 1));
  CHECK_THROWS(data::MixedBatchSampler(empty, one, {8, 0, 0.5}));
  CHECK_THROWS(data::MixedBatchSampler(one, empty, {8, 0, 0.5}));
}
