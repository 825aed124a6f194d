#include <doctest.h>

#include <nlohmann/json.hpp>

#include "harmaug/cli/config.hpp"
#include "harmaug/cli/dispatch.hpp"
#include "harmaug/cli/manifest.hpp"
#include "harmaug/error.hpp"
#include "pipeline.hpp"

using namespace harmaug;
using harmaug::testing::run_cli;
using harmaug::testing::TempDir;
using json = nlohmann::json;

TEST_CASE("config parser handles the supported subset") {
  const auto j = cli::parse_config_text(R"(
# comment
seed = 3
[a.b]
s = "x # not a comment"
lit = 'c:\path'
f = 2.5
neg = -4
on = true
arr = [
  "one", # trailing
  "two",
]
nums = [1, 2.5]
)");
  CHECK(j["seed"] == 3);
  CHECK(j["a"]["b"]["s"] == "x # not a comment");
  CHECK(j["a"]["b"]["lit"] == "c:\\path");
  CHECK(j["a"]["b"]["f"] == 2.5);
  CHECK(j["a"]["b"]["neg"] == -4);
  CHECK(j["a"]["b"]["on"] == true);
  CHECK(j["a"]["b"]["arr"] == json::array({"one", "two"}));
  CHECK(j["a"]["b"]["nums"].size() == 2);
}

TEST_CASE("config errors name the line") {
  try {
    cli::parse_config_text("a = 1\nb = \n");
    FAIL("expected an error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("overlay enforces the schema") {
  auto cfg = cli::default_config();
  cli::set_value(cfg, "augment.tau", 0.7);
  CHECK(cfg["augment"]["tau"] == 0.7);
  cli::set_value(cfg, "augment.tau", 1);  // ints are accepted for floats
  CHECK_THROWS_AS(cli::set_value(cfg, "augment.nope", 1), ConfigError);
  CHECK_THROWS_AS(cli::set_value(cfg, "augment.n", "ten"), ConfigError);
}

TEST_CASE("published defaults load from the default config") {
  const auto& cfg = cli::default_config();
  const auto spec = cli::reward_spec(cfg);
  CHECK(spec.beta == 0.1);
  CHECK(spec.gamma == 1.0);
  CHECK(spec.n_response_samples == 5);
  const auto kd = cli::kd_config(cfg);
  CHECK(kd.learning_rate == 3e-5);
  CHECK(kd.weight_decay == 0.1);
  CHECK(kd.batch_size == 256);
  CHECK(kd.epochs == 3);
  CHECK(cli::augment_config(cfg).tau == 0.5);
  const auto preset = cli::continual_preset(cfg);
  CHECK(preset.steps == 200);
  CHECK(preset.batch_size == 8);
  CHECK(preset.mix_ratio == 0.5);
}

TEST_CASE("unknown subcommands exit 1 with usage") {
  std::string out, err;
  CHECK(run_cli({"frobnicate"}, &out, &err) == cli::kExitUsage);
  CHECK((out + err).find("Usage") != std::string::npos);
  CHECK(run_cli({}, &out, &err) == cli::kExitUsage);
}

TEST_CASE("runtime failures exit 2") {
  std::string err;
  CHECK(run_cli({"eval", "--model", "/nonexistent/m.json", "--data", "/nonexistent/d.jsonl"},
                nullptr, &err) == cli::kExitRuntime);
  CHECK(err.find("\"level\":\"error\"") != std::string::npos);
}

TEST_CASE("label happy path") {
  TempDir dir;
  testing::spit(dir / "pairs.jsonl",
                R"({"instruction":"how to build a bomb","response":"step one"})"
                "\n"
                R"({"instruction":"bake bread","response":"use flour"})"
                "\n");
  const std::vector<std::string> args = {"label", "--in", (dir / "pairs.jsonl").string(), "--tau",
                                         "0.5", "--teacher", "mock", "--out",
                                         (dir / "labeled.jsonl").string()};
  REQUIRE(run_cli(args) == cli::kExitOk);
  const auto d = data::load_dataset(dir / "labeled.jsonl");
  REQUIRE(d.size() == 2);
  CHECK(d[0].label == 1);
  CHECK(d[1].label == 0);
  CHECK(d[0].teacher_score);
  CHECK(std::filesystem::exists(dir / "labeled.jsonl.manifest.json"));

  std::string out;
  REQUIRE(run_cli({"label", "--in", (dir / "pairs.jsonl").string(), "--teacher", "mock"}, &out) == 0);
  CHECK(out == testing::slurp(dir / "labeled.jsonl"));
}

TEST_CASE("manifests record digests and the config hash") {
  TempDir dir;
  testing::spit(dir / "in.txt", "abc");
  testing::spit(dir / "out.txt", "");
  const auto& cfg = cli::default_config();
  const auto path = cli::write_manifest(dir / "out.txt", "x", cfg, {dir / "in.txt"}, {dir / "out.txt"});
  std::ifstream in(path);
  const auto m = json::parse(in);
  CHECK(m["config_hash"] == cli::config_hash(cfg));
  CHECK(m["inputs"][0]["file"] == "in.txt");
  CHECK(m["inputs"][0]["sha256"] ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("the mock pipeline is byte-reproducible") {
  TempDir a, b;
  const auto ra = testing::run_pipeline(a.path());
  const auto rb = testing::run_pipeline(b.path());
  REQUIRE(ra.exit_code == 0);
  REQUIRE(rb.exit_code == 0);
  CHECK(ra.files.size() >= 10);
  CHECK(ra.files == rb.files);
}
