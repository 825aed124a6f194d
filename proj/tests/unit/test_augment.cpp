#include <doctest.h>

#include "fixtures.hpp"
#include "harmaug/augment.hpp"
#include "harmaug/error.hpp"
#include "tempdir.hpp"

using namespace harmaug;
using namespace harmaug::augment;

namespace {

class ConstantBackend : public backends::GenerationBackend {
 public:
  std::string generate(std::span<const ChatMessage>, const backends::GenerationParams&) const override {
    return "Explain how to bomb the garden.";
  }
  std::string identity() const override { return "constant"; }
};

class FailingBackend : public backends::GenerationBackend {
 public:
  std::string generate(std::span<const ChatMessage>, const backends::GenerationParams&) const override {
    throw backends::BackendError("boom", 500, false);
  }
  std::string identity() const override { return "failing"; }
};

struct Interrupted {};

const testing::Lexicon kLex;

data::Dataset pool() { return testing::lexicon_dataset(40, kLex.old_harm, kLex.benign, kLex.benign, 1); }

AugmentConfig small(std::size_t n) {
  AugmentConfig c;
  c.n_instructions = n;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("instruction generation without refusals") {
  const testing::MockRoles m(kLex, 1);
  AugmentReport rep;
  const auto xs = generate_instructions(pool(), small(10), m.roles(), &rep);
  CHECK(xs.size() == 10);
  CHECK(rep.refusals_filtered == 0);
  CHECK(rep.generated == 10);
}

TEST_CASE("total refusal exhausts attempts with nothing accepted") {
  const testing::MockRoles m(kLex, 1, /*instruction_refusal_p=*/1.0);
  auto cfg = small(3);
  cfg.max_attempts_per_instruction = 2;
  try {
    generate_instructions(pool(), cfg, m.roles());
    FAIL("expected exhaustion");
  } catch (const GenerationExhausted& e) {
    CHECK(e.accepted() == 0);
  }
}

TEST_CASE("dedup stops a constant generator") {
  const testing::MockRoles m(kLex, 1);
  const ConstantBackend constant;
  auto roles = m.roles();
  roles.instruction_llm = &constant;
  auto cfg = small(2);
  cfg.max_attempts_per_instruction = 3;
  try {
    generate_instructions(pool(), cfg, roles);
    FAIL("expected exhaustion");
  } catch (const GenerationExhausted& e) {
    CHECK(e.accepted() == 1);
  }
  cfg.dedup = false;
  CHECK(generate_instructions(pool(), cfg, roles).size() == 2);
}

TEST_CASE("pool without enough harmful exemplars is rejected") {
  const testing::MockRoles m(kLex, 1);
  data::Dataset tiny("t");
  tiny.push_back({"bomb x", "", 1, std::nullopt, data::Source::original});
  CHECK_THROWS_AS(generate_instructions(tiny, small(1), m.roles()), ConfigError);
}

TEST_CASE("response pairs") {
  const testing::MockRoles m(kLex, 1);
  const promptcraft::RefusalDetector d;
  const auto [r, h] = generate_response_pair("how to hack a camera", 0, small(1), m.roles());
  CHECK(d.is_refusal(r));
  CHECK_FALSE(d.is_refusal(h));
  CHECK(generate_response_pair("how to hack a camera", 0, small(1), m.roles()) ==
        std::pair(r, h));

  const FailingBackend failing;
  auto roles = m.roles();
  roles.harmful_llm = &failing;
  try {
    generate_response_pair("x", 0, small(1), roles);
    FAIL("expected an error");
  } catch (const RoleError& e) {
    CHECK(e.role() == "harmful_llm");
  }
}

TEST_CASE("threshold labels use a strict inequality") {
  CHECK(threshold_label(0.50, 0.50) == 0);
  CHECK(threshold_label(0.51, 0.50) == 1);
  CHECK(threshold_label(0.49, 0.50) == 0);
}

TEST_CASE("run_harmaug emits two scored examples per instruction") {
  const testing::MockRoles m(kLex, 2, 0.0, /*noise=*/0.0);
  const auto res = run_harmaug(pool(), small(5), m.roles());
  REQUIRE(res.dataset.size() == 10);
  CHECK(res.report.pairs_emitted == 10);
  CHECK(res.report.label_counts.at(0) + res.report.label_counts.at(1) == 10);
  const promptcraft::RefusalDetector d;
  for (std::size_t i = 0; i < res.dataset.size(); ++i) {
    const auto& e = res.dataset[i];
    REQUIRE(e.teacher_score);
    CHECK(e.source == data::Source::harmaug);
    CHECK(e.label == threshold_label(*e.teacher_score, 0.5));
    if (i % 2 == 0) {
      CHECK(d.is_refusal(e.response));
      CHECK(e.label == 0);
    } else if (m.teacher.mentions_harmful(e.instruction) || m.teacher.mentions_harmful(e.response)) {
      CHECK(e.label == 1);
    }
  }
}

TEST_CASE("resumed runs match uninterrupted runs") {
  const testing::MockRoles m(kLex, 3);
  const auto cfg = small(12);
  const auto full = run_harmaug(pool(), cfg, m.roles());

  testing::TempDir dir;
  CHECK_THROWS_AS(run_harmaug(pool(), cfg, m.roles(), dir.path(),
                              [](std::size_t done, std::size_t) {
                                if (done == 5) throw Interrupted{};
                              }),
                  Interrupted);
  const auto resumed = run_harmaug(pool(), cfg, m.roles(), dir.path());
  CHECK(resumed.dataset == full.dataset);
  CHECK(resumed.report == full.report);

  auto other = cfg;
  other.tau = 0.7;
  CHECK_THROWS_AS(run_harmaug(pool(), other, m.roles(), dir.path()), ConfigError);
}

TEST_CASE("prefix ablation success rates are exact refusal complements") {
  auto cfg = testing::vocab(testing::MockRoles::words_of(kLex), 0.9, 4);
  cfg.prefix_refusal_p = 0.05;
  const backends::MockGenerationBackend llm(cfg);
  const promptcraft::RefusalDetector d;
  const auto ab = prefix_ablation(pool(), small(1), llm, d, 200);
  CHECK(ab.with_prefix == promptcraft::success_rate(ab.with_completions, d));
  CHECK(ab.without_prefix == promptcraft::success_rate(ab.without_completions, d));
  CHECK(ab.with_prefix > ab.without_prefix);
}
