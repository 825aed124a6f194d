#pragma once

// Drives the CLI through augment -> train -> eval -> redteam in a directory.

#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "harmaug/cli/dispatch.hpp"
#include "tempdir.hpp"

namespace harmaug::testing {

struct PipelineRun {
  int exit_code = 0;
  std::string failed_step;
  std::map<std::string, std::string> files;  ///< file name -> contents
};

inline int run_cli(const std::vector<std::string>& args, std::string* out = nullptr,
                   std::string* err = nullptr) {
  std::ostringstream o, e;
  const int rc = cli::dispatch(args, o, e);
  if (out) *out = o.str();
  if (err) *err = e.str();
  return rc;
}

inline PipelineRun run_pipeline(const std::filesystem::path& dir) {
  const Lexicon lex;
  data::save_dataset(lexicon_dataset(60, lex.old_harm, lex.benign, lex.benign, 1), dir / "pool.jsonl");
  data::save_dataset(lexicon_dataset(60, lex.all_harm(), lex.new_benign, lex.benign, 2),
                     dir / "test.jsonl");
  spit(dir / "run.toml",
       "seed = 11\n"
       "[logging]\nlevel = \"warn\"\n"
       "[augment]\nn = 15\n"
       "[train]\nlr = 0.05\nbatch_size = 16\nfeature_dim = 4096\n"
       "[redteam]\nsteps = 60\nbatch_size = 16\ntest_k = 32\n");
  auto p = [&](const char* name) { return (dir / name).string(); };
  const std::string cfg = p("run.toml");
  const std::vector<std::vector<std::string>> steps = {
      {"--config", cfg, "augment", "--pool", p("pool.jsonl"), "--out", p("synth.jsonl"), "--report",
       p("augment_report.json")},
      {"--config", cfg, "train", "--data", p("pool.jsonl"), "--synth", p("synth.jsonl"), "--out",
       p("student.json")},
      {"--config", cfg, "eval", "--model", p("student.json"), "--data", p("test.jsonl"), "--report",
       p("metrics.json")},
      {"--config", cfg, "redteam", "--guard", p("student.json"), "--out", p("policy.json"),
       "--buffer", p("buffer.jsonl"), "--report", p("redteam_report.json")},
  };
  PipelineRun run;
  for (const auto& args : steps) {
    run.exit_code = run_cli(args);
    if (run.exit_code != 0) {
      run.failed_step = args[2];
      return run;
    }
  }
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    run.files[entry.path().filename().string()] = slurp(entry.path());
  }
  return run;
}

}  // namespace harmaug::testing
