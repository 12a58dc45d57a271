#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "distilforge/data.hpp"
#include "distilforge/model.hpp"

namespace distilforge {

// Greedy scoring works through this hook so tests can plug in oracle
// predictors; tokens -> [len, vocab] logits.
using LogitFn = std::function<Tensor(std::span<const int32_t>)>;

// exp(mean next-token NLL in nats) over all scored positions; >= 1.
double perplexity(const Model& m, const Dataset& ds);
double perplexity_fn(const LogitFn& fn, const Dataset& ds);

// Fraction of examples whose greedy argmax at the final position matches the
// final target token. Argmax ties break toward the lowest token id.
double completion_accuracy(const Model& m, const Dataset& ds);
double completion_accuracy_fn(const LogitFn& fn, const Dataset& ds);

// Fraction of examples whose free-running greedy decode of the answer span
// matches the reference answer tokens exactly.
double qa_exact_match(const Model& m, const Dataset& ds);
double qa_exact_match_fn(const LogitFn& fn, const Dataset& ds);

struct EvalRow {
  std::string model;
  int64_t n_params = 0;
  std::string task;
  std::string metric;  // acc | ppl | exact_match
  double value = 0.0;
  std::string error;  // non-empty when this combination could not be evaluated
};

struct EvalReport {
  int schema_version = 1;
  std::vector<EvalRow> rows;
  nlohmann::json metadata;  // dataset/model hashes, configs, seeds, timestamp

  // First line is exactly "model,n_params,task,metric,value"; a trailing
  // "# meta ..." comment carries the metadata block.
  std::string csv() const;
  nlohmann::json to_json() const;  // includes a rows_hash integrity field
  static EvalReport from_json(const nlohmann::json& j);

  Hash32 rows_hash() const;  // over the canonical row serialization
};

struct LabeledModel {
  std::string label;
  const Model* model = nullptr;
};
struct LabeledDataset {
  std::string label;
  const Dataset* dataset = nullptr;
};

// Cross product of models x applicable task metrics, rows in (model, dataset)
// order: cloze -> acc + ppl, lm -> ppl, qa -> exact_match. Incompatible pairs
// produce per-row error entries instead of aborting.
EvalReport evaluate_suite(std::span<const LabeledModel> models, std::span<const LabeledDataset> datasets);

// Deterministic shortest round-trip float formatting used by every report.
std::string format_value(double v);

}  // namespace distilforge
