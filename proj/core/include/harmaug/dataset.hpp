#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace harmaug::data {

/// Where a record came from.
enum class Source { original, harmaug, gfn, eda, other };

std::string_view to_string(Source s) noexcept;
/// Throws DataError on an unknown tag.
Source parse_source(std::string_view tag);

/// One labeled (instruction, response) conversation.
///
/// `response` may be empty: instruction-only benchmarks pair every prompt
/// with the empty response. `teacher_score` is the teacher's harmfulness
/// probability for the pair, when one was computed.
struct Example {
  std::string instruction;
  std::string response;
  int label = 0;
  std::optional<double> teacher_score;
  Source source = Source::original;

  friend bool operator==(const Example&, const Example&) = default;
};

/// Throws DataError if `e` violates a field invariant.
void validate(const Example& e);

/// Ordered, immutable-after-load collection of examples.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::string name, std::vector<Example> examples = {});

  const std::string& name() const noexcept { return name_; }
  void set_name(std::string name) { name_ = std::move(name); }

  std::size_t size() const noexcept { return examples_.size(); }
  bool empty() const noexcept { return examples_.empty(); }
  const Example& operator[](std::size_t i) const { return examples_[i]; }
  const std::vector<Example>& examples() const noexcept { return examples_; }
  auto begin() const noexcept { return examples_.begin(); }
  auto end() const noexcept { return examples_.end(); }

  /// Validates, then appends.
  void push_back(Example e);
  void append(const Dataset& other);

  std::size_t count_label(int label) const noexcept;

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.examples_ == b.examples_;
  }

 private:
  std::string name_;
  std::vector<Example> examples_;
};

/// One JSONL line (no trailing newline) with the fixed field names
/// instruction, response, label, teacher_score, source.
std::string to_json_line(const Example& e);

/// Parses one JSONL record. `line_no` is 1-based and prefixes error text.
Example parse_json_line(std::string_view line, std::size_t line_no);

Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& d, const std::filesystem::path& path);

/// Sampling contract for mixed mini-batches.
struct BatchSpec {
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  double mix_ratio = 0.5;  ///< fraction of each batch drawn from the second dataset
};

/// Number of second-dataset examples per batch: mix_ratio * batch_size,
/// rounded half up.
std::size_t second_share(const BatchSpec& spec);

/// A mixed batch. The first `from_first` items come from dataset a, the
/// remaining `from_second` from dataset b.
struct Batch {
  std::vector<const Example*> items;
  std::size_t from_first = 0;
  std::size_t from_second = 0;
};

/// Infinite with-replacement sampler over two datasets. Single consumer;
/// the datasets must outlive the sampler.
class MixedBatchSampler {
 public:
  MixedBatchSampler(const Dataset& a, const Dataset& b, BatchSpec spec);

  Batch next();
  const BatchSpec& spec() const noexcept { return spec_; }

 private:
  const Dataset* a_;
  const Dataset* b_;
  BatchSpec spec_;
  std::size_t n_second_;
  std::uint64_t state_;
};

}  // namespace harmaug::data
