#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "distilforge/hash.hpp"

namespace distilforge {

enum class TaskKind { lm, cloze, qa };
std::string to_string(TaskKind k);
TaskKind task_kind_from_string(const std::string& s);

// One training pair. Targets are next-token labels, so input and target have
// equal length; for qa the answer occupies the final answer_len target slots.
struct Example {
  std::vector<int32_t> input;
  std::vector<int32_t> target;
};

struct Dataset {
  TaskKind task_kind = TaskKind::lm;
  std::vector<std::string> vocab;  // one UTF-8 encoded character per id
  std::vector<Example> examples;
  nlohmann::json generator_params;  // task metadata: grammar table, answer_len, source
  Hash32 content_hash{};

  int answer_len() const;  // from generator_params; 1 when unspecified
  int max_input_len() const;

  std::vector<int32_t> tokenize(std::string_view text) const;  // IndexError on unknown char
  std::string detokenize(std::span<const int32_t> ids) const;

  void rehash();  // recompute content_hash over task kind + vocab + examples
};

// Character-level LM dataset: vocabulary in first-occurrence order over the
// file's codepoints, stride-1 sliding windows with next-token targets.
Dataset ingest_text(const std::filesystem::path& path, int context_len);

// Completion task: the final character of each sentence is a deterministic
// function of the sentence's leading key word; the key-to-answer table is
// recorded in generator_params. Difficulty widens the key/filler space.
Dataset gen_cloze_task(uint64_t seed, int n_examples, int difficulty);

// In-context lookup task: every example embeds a few rendered facts plus a
// query; the answer is the value bound to the queried key in that context.
Dataset gen_qa_task(uint64_t seed, int n_examples);

struct Batch {
  int batch = 0;
  int len = 0;
  std::vector<int32_t> inputs;      // batch*len, zero-padded
  std::vector<int32_t> targets;     // batch*len
  std::vector<uint8_t> padded;      // batch*len, 1 marks a padded slot
  std::vector<int64_t> example_ids; // dataset example index per row
};

// Deterministic epoch shuffle keyed by (seed, epoch); the final partial batch
// is padded and masked.
std::vector<Batch> batches(const Dataset& ds, int batch_size, uint64_t seed, int epoch);

void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace distilforge
