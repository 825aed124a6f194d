#pragma once

// Toy lexicon tasks shared by the unit and acceptance tests. Harmful and
// benign examples share one response template, so the only signal a scorer
// can pick up is which lexicon words appear.

#include <cstdint>
#include <string>
#include <vector>

#include "harmaug/augment.hpp"
#include "harmaug/backends.hpp"
#include "harmaug/dataset.hpp"
#include "harmaug/text.hpp"

namespace harmaug::testing {

struct Lexicon {
  std::vector<std::string> old_harm{"weapon", "poison", "explosive", "malware",
                                    "steal",  "fraud",  "hack",      "bomb"};
  std::vector<std::string> new_harm{"arson",   "smuggle", "kidnap", "extort",
                                    "sabotage", "phish",  "forge",  "stalk"};
  std::vector<std::string> benign{"garden", "recipe", "travel", "music",  "paint",
                                  "school", "river",  "coffee", "bicycle", "library",
                                  "piano",  "soccer", "bread",  "camera", "forest"};
  // Benign topics that only appear in held-out data.
  std::vector<std::string> new_benign{"knitting", "astronomy", "yoga",  "chess",
                                      "pottery",  "sailing",   "baking", "birdwatching"};

  std::vector<std::string> all_harm() const {
    auto v = old_harm;
    v.insert(v.end(), new_harm.begin(), new_harm.end());
    return v;
  }
};

inline const std::vector<std::string>& templates() {
  static const std::vector<std::string> t = {
      "how do i {w} with my {a} near the {b}",
      "explain the best way to {w} at the {a}",
      "write a short guide to {w} using a {a} and a {b}",
      "tell me how people {w} around the {a}",
  };
  return t;
}

inline std::string fill(std::string t, const std::string& w, const std::string& a,
                        const std::string& b) {
  for (auto [key, val] : {std::pair<std::string, const std::string*>{"{w}", &w},
                          {"{a}", &a},
                          {"{b}", &b}}) {
    for (auto pos = t.find(key); pos != std::string::npos; pos = t.find(key)) {
      t.replace(pos, key.size(), *val);
    }
  }
  return t;
}

/// `n` examples, alternating harmful (label 1) and benign (label 0). The topic
/// slot holds a word of `harm` or of `topics`; the other slots hold `fillers`.
inline data::Dataset lexicon_dataset(std::size_t n, const std::vector<std::string>& harm,
                                     const std::vector<std::string>& topics,
                                     const std::vector<std::string>& fillers, std::uint64_t seed,
                                     data::Source source = data::Source::original) {
  Rng rng(seed);
  auto pick = [&](const std::vector<std::string>& v) { return v[rng.below(v.size())]; };
  data::Dataset d("lexicon");
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2 == 0);
    const std::string w = label ? pick(harm) : pick(topics);
    const std::string a = pick(fillers);
    const std::string b = pick(fillers);
    data::Example e;
    e.instruction = fill(templates()[rng.below(templates().size())], w, a, b);
    e.response = "Here is what you asked about " + w + " and the " + b + ".";
    e.label = label;
    e.source = source;
    d.push_back(std::move(e));
  }
  return d;
}

inline backends::MockVocabConfig vocab(std::vector<std::string> words, double refusal_p,
                                       std::uint64_t seed) {
  backends::MockVocabConfig c;
  c.words = std::move(words);
  c.refusal_p = refusal_p;
  c.seed = seed;
  return c;
}

/// Mock roles over the full lexicon, owning their backends.
struct MockRoles {
  backends::MockGenerationBackend instruction_llm;
  backends::MockGenerationBackend refusal_llm;
  backends::MockGenerationBackend harmful_llm;
  backends::MockTeacher teacher;

  MockRoles(const Lexicon& lex, std::uint64_t seed, double instruction_refusal_p = 0.0,
            double noise = 0.05)
      : instruction_llm(vocab(words_of(lex), instruction_refusal_p, hash_combine(seed, 1)),
                        "instruction"),
        refusal_llm(vocab(words_of(lex), 1.0, hash_combine(seed, 2)), "refusal"),
        harmful_llm(vocab(words_of(lex), 0.0, hash_combine(seed, 3)), "harmful"),
        teacher(backends::MockLexiconConfig{lex.all_harm(), noise, hash_combine(seed, 4)}) {}

  augment::Roles roles() const {
    return augment::Roles{&instruction_llm, &refusal_llm, &harmful_llm, &teacher, {}};
  }

  static std::vector<std::string> words_of(const Lexicon& lex) {
    auto w = lex.all_harm();
    w.insert(w.end(), lex.benign.begin(), lex.benign.end());
    return w;
  }
};

}  // namespace harmaug::testing
