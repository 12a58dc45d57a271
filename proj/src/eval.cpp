#include "distilforge/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <limits>

#include "distilforge/checkpoint.hpp"
#include "distilforge/ops.hpp"

namespace distilforge {

std::string format_value(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

// --- shared scoring helpers ----------------------------------------------

static int argmax_lowest(const double* row, int v) {
  int best = 0;
  for (int j = 1; j < v; ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

static void require_examples(const Dataset& ds, const char* what) {
  if (ds.examples.empty()) throw EvalError(std::string(what) + ": dataset has no examples");
}

// next-token NLL summed over every target position of one example
static void accumulate_nll(const Tensor& logits, std::span<const int32_t> targets, double& nll_sum, int64_t& count) {
  const int v = logits.dim(1);
  for (size_t t = 0; t < targets.size(); ++t) {
    const double* zr = logits.data().data() + t * static_cast<size_t>(v);
    double mx = zr[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, zr[j]);
    double denom = 0.0;
    for (int j = 0; j < v; ++j) denom += std::exp(zr[j] - mx);
    nll_sum += std::log(denom) - (zr[targets[t]] - mx);
    ++count;
  }
}

double perplexity_fn(const LogitFn& fn, const Dataset& ds) {
  if (ds.task_kind == TaskKind::qa) throw EvalError("perplexity requires an lm or cloze dataset");
  require_examples(ds, "perplexity");
  double nll = 0.0;
  int64_t count = 0;
  for (const auto& e : ds.examples) {
    accumulate_nll(fn(e.input), e.target, nll, count);
  }
  return std::exp(nll / static_cast<double>(count));
}

double perplexity(const Model& m, const Dataset& ds) {
  if (ds.task_kind == TaskKind::qa) throw EvalError("perplexity requires an lm or cloze dataset");
  require_examples(ds, "perplexity");
  // batched over consecutive examples; padding never reaches the sums
  const int bs = 64;
  double nll = 0.0;
  int64_t count = 0;
  for (size_t start = 0; start < ds.examples.size(); start += bs) {
    const size_t end = std::min(ds.examples.size(), start + bs);
    int len = 0;
    for (size_t i = start; i < end; ++i) len = std::max(len, static_cast<int>(ds.examples[i].input.size()));
    const int b = static_cast<int>(end - start);
    std::vector<int32_t> toks(static_cast<size_t>(b) * len, 0);
    for (size_t i = start; i < end; ++i) {
      std::copy(ds.examples[i].input.begin(), ds.examples[i].input.end(),
                toks.begin() + static_cast<int64_t>(i - start) * len);
    }
    Tensor logits = forward_batch(m, toks, b, len, nullptr);
    const int v = logits.dim(1);
    for (size_t i = start; i < end; ++i) {
      const auto& e = ds.examples[i];
      const double* base = logits.data().data() + static_cast<size_t>(i - start) * len * v;
      for (size_t t = 0; t < e.target.size(); ++t) {
        const double* zr = base + t * static_cast<size_t>(v);
        double mx = zr[0];
        for (int j = 1; j < v; ++j) mx = std::max(mx, zr[j]);
        double denom = 0.0;
        for (int j = 0; j < v; ++j) denom += std::exp(zr[j] - mx);
        nll += std::log(denom) - (zr[e.target[t]] - mx);
        ++count;
      }
    }
  }
  return std::exp(nll / static_cast<double>(count));
}

double completion_accuracy_fn(const LogitFn& fn, const Dataset& ds) {
  if (ds.task_kind != TaskKind::cloze) throw EvalError("completion accuracy requires a cloze dataset");
  require_examples(ds, "completion_accuracy");
  int64_t hits = 0;
  for (const auto& e : ds.examples) {
    Tensor logits = fn(e.input);
    const int v = logits.dim(1);
    const double* last = logits.data().data() + (e.input.size() - 1) * static_cast<size_t>(v);
    if (argmax_lowest(last, v) == e.target.back()) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ds.examples.size());
}

double completion_accuracy(const Model& m, const Dataset& ds) {
  if (ds.task_kind != TaskKind::cloze) throw EvalError("completion accuracy requires a cloze dataset");
  require_examples(ds, "completion_accuracy");
  const int bs = 64;
  int64_t hits = 0;
  for (size_t start = 0; start < ds.examples.size(); start += bs) {
    const size_t end = std::min(ds.examples.size(), start + bs);
    int len = 0;
    for (size_t i = start; i < end; ++i) len = std::max(len, static_cast<int>(ds.examples[i].input.size()));
    const int b = static_cast<int>(end - start);
    std::vector<int32_t> toks(static_cast<size_t>(b) * len, 0);
    for (size_t i = start; i < end; ++i) {
      std::copy(ds.examples[i].input.begin(), ds.examples[i].input.end(),
                toks.begin() + static_cast<int64_t>(i - start) * len);
    }
    Tensor logits = forward_batch(m, toks, b, len, nullptr);
    const int v = logits.dim(1);
    for (size_t i = start; i < end; ++i) {
      const auto& e = ds.examples[i];
      const double* last =
          logits.data().data() + (static_cast<size_t>(i - start) * len + e.input.size() - 1) * static_cast<size_t>(v);
      if (argmax_lowest(last, v) == e.target.back()) ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(ds.examples.size());
}

double qa_exact_match_fn(const LogitFn& fn, const Dataset& ds) {
  if (ds.task_kind != TaskKind::qa) throw EvalError("exact match requires a qa dataset");
  require_examples(ds, "qa_exact_match");
  const int a = ds.answer_len();
  int64_t hits = 0;
  for (const auto& e : ds.examples) {
    const int prompt_len = static_cast<int>(e.input.size()) - (a - 1);
    if (prompt_len < 1) throw EvalError("qa example shorter than its answer span");
    // free-running greedy decode for answer-length steps
    std::vector<int32_t> seq(e.input.begin(), e.input.begin() + prompt_len);
    bool match = true;
    for (int s = 0; s < a; ++s) {
      Tensor logits = fn(seq);
      const int v = logits.dim(1);
      const double* last = logits.data().data() + (seq.size() - 1) * static_cast<size_t>(v);
      const int32_t next = static_cast<int32_t>(argmax_lowest(last, v));
      if (next != e.target[static_cast<size_t>(prompt_len - 1 + s)]) {
        match = false;
        break;
      }
      seq.push_back(next);
    }
    if (match) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ds.examples.size());
}

double qa_exact_match(const Model& m, const Dataset& ds) {
  return qa_exact_match_fn([&m](std::span<const int32_t> toks) { return forward(m, toks); }, ds);
}

// --- suite ----------------------------------------------------------------

static std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

EvalReport evaluate_suite(std::span<const LabeledModel> models, std::span<const LabeledDataset> datasets) {
  EvalReport report;
  nlohmann::json ds_meta = nlohmann::json::object();
  for (const auto& d : datasets) {
    ds_meta[d.label] = {{"hash", to_hex(d.dataset->content_hash)},
                        {"task_kind", to_string(d.dataset->task_kind)},
                        {"n_examples", d.dataset->examples.size()}};
  }
  nlohmann::json model_meta = nlohmann::json::object();
  for (const auto& m : models) {
    model_meta[m.label] = {{"hash", to_hex(model_content_hash(*m.model))},
                           {"config", nlohmann::json::parse(canonical_config_json(m.model->config))}};
  }
  report.metadata = {{"datasets", ds_meta}, {"models", model_meta}, {"timestamp", utc_timestamp()}};

  for (const auto& lm : models) {
    for (const auto& ld : datasets) {
      std::vector<std::pair<std::string, std::function<double()>>> metrics;
      const Model* mp = lm.model;
      const Dataset* dp = ld.dataset;
      switch (dp->task_kind) {
        case TaskKind::cloze:
          metrics.emplace_back("acc", [mp, dp] { return completion_accuracy(*mp, *dp); });
          metrics.emplace_back("ppl", [mp, dp] { return perplexity(*mp, *dp); });
          break;
        case TaskKind::lm:
          metrics.emplace_back("ppl", [mp, dp] { return perplexity(*mp, *dp); });
          break;
        case TaskKind::qa:
          metrics.emplace_back("exact_match", [mp, dp] { return qa_exact_match(*mp, *dp); });
          break;
      }
      for (auto& [name, compute] : metrics) {
        EvalRow row;
        row.model = lm.label;
        row.n_params = lm.model->config.n_params();
        row.task = ld.label;
        row.metric = name;
        try {
          row.value = compute();
        } catch (const Error& e) {
          row.value = std::numeric_limits<double>::quiet_NaN();
          row.error = e.what();
        }
        report.rows.push_back(std::move(row));
      }
    }
  }
  return report;
}

Hash32 EvalReport::rows_hash() const {
  Sha256 h;
  for (const auto& r : rows) {
    std::string line = r.model + "\x1f" + std::to_string(r.n_params) + "\x1f" + r.task + "\x1f" + r.metric + "\x1f";
    line += r.error.empty() ? format_value(r.value) : "error:" + r.error;
    line += "\x1e";
    h.update(line);
  }
  return h.finish();
}

std::string EvalReport::csv() const {
  std::string out = "model,n_params,task,metric,value\n";
  for (const auto& r : rows) {
    out += r.model + "," + std::to_string(r.n_params) + "," + r.task + "," + r.metric + "," +
           (r.error.empty() ? format_value(r.value) : "nan") + "\n";
  }
  nlohmann::json meta{{"schema_version", schema_version}, {"metadata", metadata}, {"rows_hash", to_hex(rows_hash())}};
  out += "# meta " + meta.dump() + "\n";
  return out;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json jr{{"model", r.model}, {"n_params", r.n_params}, {"task", r.task}, {"metric", r.metric}};
    if (r.error.empty()) {
      jr["value"] = r.value;
    } else {
      jr["error"] = r.error;
    }
    rows_json.push_back(std::move(jr));
  }
  return nlohmann::json{{"schema_version", schema_version},
                        {"metadata", metadata},
                        {"rows", rows_json},
                        {"rows_hash", to_hex(rows_hash())}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  r.schema_version = j.at("schema_version").get<int>();
  if (r.schema_version != 1) {
    throw FormatError("unsupported eval report schema_version " + std::to_string(r.schema_version) + " (this build reads 1)");
  }
  r.metadata = j.value("metadata", nlohmann::json::object());
  for (const auto& jr : j.at("rows")) {
    EvalRow row;
    row.model = jr.at("model").get<std::string>();
    row.n_params = jr.at("n_params").get<int64_t>();
    row.task = jr.at("task").get<std::string>();
    row.metric = jr.at("metric").get<std::string>();
    if (jr.contains("value")) {
      row.value = jr.at("value").get<double>();
    } else {
      row.value = std::numeric_limits<double>::quiet_NaN();
      row.error = jr.value("error", "unknown");
    }
    r.rows.push_back(std::move(row));
  }
  if (j.contains("rows_hash") && j.at("rows_hash").get<std::string>() != to_hex(r.rows_hash())) {
    throw IntegrityError("eval report rows_hash mismatch: rows were modified after writing");
  }
  return r;
}

}  // namespace distilforge
