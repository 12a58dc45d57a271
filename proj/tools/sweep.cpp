#include <atomic>
#include <cmath>
#include <iostream>
#include <map>
#include <thread>

#include "cli.hpp"
#include "distilforge/checkpoint.hpp"
#include "distilforge/distill.hpp"
#include "distilforge/errors.hpp"
#include "distilforge/eval.hpp"
#include "distilforge/fsio.hpp"

namespace distilforge::cli {

namespace fs = std::filesystem;

namespace {

struct GridPoint {
  int index = 0;
  double temperature = 1.0;
  double alpha = 0.5;
  int student = 0;
  ModelConfig student_cfg;
};

struct RunResult {
  int run_index = 0;
  int grid_index = 0;
  double temperature = 1.0;
  double alpha = 0.5;
  std::string student_label;
  int64_t n_params = 0;
  uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::string checkpoint_hash;
  std::string rows_hash;
  std::vector<EvalRow> rows;
};

std::string grid_label(int student_index) { return "s" + std::to_string(student_index); }

}  // namespace

int run_sweep_command(const fs::path& spec_path, const fs::path& out_dir, int parallel) {
  const nlohmann::json spec = load_config_file(spec_path);
  const fs::path base = spec_path.parent_path();

  if (spec.value("schema_version", 1) != 1) {
    throw FormatError("sweep spec schema_version " + spec["schema_version"].dump() + " is not supported (this build reads 1)");
  }
  const auto temperatures = spec.at("temperatures").get<std::vector<double>>();
  const auto alphas = spec.at("alphas").get<std::vector<double>>();
  const auto seeds = spec.at("seeds").get<std::vector<uint64_t>>();
  if (temperatures.empty() || alphas.empty() || seeds.empty()) {
    throw ConfigError("sweep spec: temperatures, alphas and seeds must all be non-empty");
  }

  const Model teacher = load_checkpoint(base / spec.at("teacher").get<std::string>());
  const Dataset dataset = load_dataset(base / spec.at("dataset").get<std::string>());
  const Dataset* eval_dataset = &dataset;
  Dataset eval_holder;
  if (spec.contains("eval_dataset")) {
    eval_holder = load_dataset(base / spec.at("eval_dataset").get<std::string>());
    eval_dataset = &eval_holder;
  }

  LogitCache cache;
  if (spec.contains("cache")) {
    cache = load_logit_cache(base / spec.at("cache").get<std::string>());
    if (cache.teacher_id != model_content_hash(teacher)) {
      throw StalenessError("sweep cache was built from a different teacher checkpoint");
    }
    if (cache.dataset_id != dataset.content_hash) {
      throw StalenessError("sweep cache was built from a different dataset");
    }
  } else {
    cache = cache_teacher_logits(teacher, dataset);
  }

  TrainConfig base_train;
  base_train.epochs = 3;
  base_train.batch_size = 16;
  base_train.learning_rate = 3e-4;
  if (spec.contains("train")) base_train = merge_train_config(base_train, spec["train"]);

  // student axis: explicit partial configs, or the default student preset
  std::vector<ModelConfig> students;
  const int fallback_ctx = std::max(dataset.max_input_len(), eval_dataset->max_input_len());
  const ModelConfig preset = default_student_config(static_cast<int>(dataset.vocab.size()), std::max(fallback_ctx, 1));
  if (spec.contains("students")) {
    for (const auto& sj : spec["students"]) students.push_back(merge_model_config(preset, sj));
  } else {
    students.push_back(preset);
  }

  std::vector<GridPoint> grid;
  for (size_t ti = 0; ti < temperatures.size(); ++ti) {
    for (size_t ai = 0; ai < alphas.size(); ++ai) {
      for (size_t si = 0; si < students.size(); ++si) {
        GridPoint g;
        g.index = static_cast<int>(grid.size());
        g.temperature = temperatures[ti];
        g.alpha = alphas[ai];
        g.student = static_cast<int>(si);
        g.student_cfg = students[si];
        grid.push_back(g);
      }
    }
  }

  struct RunTask {
    GridPoint point;
    uint64_t seed = 0;
    int run_index = 0;
  };
  std::vector<RunTask> tasks;
  for (const auto& g : grid) {
    for (uint64_t s : seeds) tasks.push_back({g, s, static_cast<int>(tasks.size())});
  }

  std::vector<RunResult> results(tasks.size());
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      const RunTask& t = tasks[i];
      RunResult r;
      r.run_index = t.run_index;
      r.grid_index = t.point.index;
      r.temperature = t.point.temperature;
      r.alpha = t.point.alpha;
      r.student_label = grid_label(t.point.student);
      r.seed = t.seed;
      try {
        ModelConfig scfg = t.point.student_cfg;
        scfg.seed = t.seed;
        TrainConfig tcfg = base_train;
        tcfg.seed = t.seed;
        const DistillConfig dcfg{t.point.alpha, t.point.temperature};
        auto [student, log] = distill_student(scfg, dcfg, tcfg, dataset, cache);
        r.n_params = scfg.n_params();

        const fs::path run_dir = out_dir / "runs" / ("g" + std::to_string(t.point.index) + "_s" + std::to_string(t.seed));
        const Hash32 h = save_checkpoint(student, run_dir / "student.ckpt");
        r.checkpoint_hash = to_hex(h);
        TrainLog named = std::move(log);
        named.final_checkpoint_hash = r.checkpoint_hash;
        save_train_log(named, run_dir / "train_log.ndjson");

        const LabeledModel lm[] = {{"student", &student}};
        const LabeledDataset ld[] = {{to_string(eval_dataset->task_kind), eval_dataset}};
        EvalReport report = evaluate_suite(lm, ld);
        atomic_write_file(run_dir / "eval.csv", report.csv());
        atomic_write_file(run_dir / "eval.json", report.to_json().dump(2) + "\n");
        r.rows_hash = to_hex(report.rows_hash());
        r.rows = std::move(report.rows);
        for (const auto& row : r.rows) {
          if (!row.error.empty()) throw EvalError("metric " + row.metric + ": " + row.error);
        }
        r.ok = true;
      } catch (const std::exception& e) {
        r.ok = false;
        r.error = e.what();
      }
      results[i] = std::move(r);
    }
  };

  int n_threads = parallel > 0 ? parallel : static_cast<int>(std::thread::hardware_concurrency());
  n_threads = std::max(1, std::min<int>(n_threads, static_cast<int>(tasks.size())));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(n_threads));
  for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
  for (auto& th : pool) th.join();

  // aggregate rows in run order (grid index, then seed), independent of scheduling
  std::string agg = "grid_index,temperature,alpha,student,n_params,seed,task,metric,value\n";
  for (const auto& r : results) {
    for (const auto& row : r.rows) {
      agg += std::to_string(r.grid_index) + "," + format_value(r.temperature) + "," + format_value(r.alpha) + "," +
             r.student_label + "," + std::to_string(r.n_params) + "," + std::to_string(r.seed) + "," + row.task + "," +
             row.metric + "," + (row.error.empty() ? format_value(row.value) : "nan") + "\n";
    }
  }
  atomic_write_file(out_dir / "aggregate.csv", agg);

  // per-grid-point summary over seeds
  struct Key {
    int grid;
    std::string task, metric;
    bool operator<(const Key& o) const {
      return std::tie(grid, task, metric) < std::tie(o.grid, o.task, o.metric);
    }
  };
  std::map<Key, std::vector<double>> groups;
  for (const auto& r : results) {
    if (!r.ok) continue;
    for (const auto& row : r.rows) groups[{r.grid_index, row.task, row.metric}].push_back(row.value);
  }
  std::string summary = "temperature,alpha,student,task,metric,mean,min,max\n";
  for (const auto& [key, values] : groups) {
    const GridPoint& g = grid[static_cast<size_t>(key.grid)];
    double sum = 0.0, mn = values[0], mx = values[0];
    for (double v : values) {
      sum += v;
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
    summary += format_value(g.temperature) + "," + format_value(g.alpha) + "," + grid_label(g.student) + "," + key.task +
               "," + key.metric + "," + format_value(sum / static_cast<double>(values.size())) + "," + format_value(mn) +
               "," + format_value(mx) + "\n";
  }
  atomic_write_file(out_dir / "summary.csv", summary);

  // plot-ready two-column series: metric vs temperature at fixed alpha, and
  // metric vs alpha at fixed temperature when those axes have width
  std::map<std::string, std::string> series;
  auto series_mean = [&](const GridPoint& g, const std::string& task, const std::string& metric) -> const std::vector<double>* {
    auto it = groups.find(Key{g.index, task, metric});
    return it == groups.end() ? nullptr : &it->second;
  };
  std::vector<std::pair<std::string, std::string>> metrics_seen;
  for (const auto& [key, values] : groups) {
    if (std::find(metrics_seen.begin(), metrics_seen.end(), std::make_pair(key.task, key.metric)) == metrics_seen.end()) {
      metrics_seen.emplace_back(key.task, key.metric);
    }
  }
  for (const auto& [task, metric] : metrics_seen) {
    if (temperatures.size() > 1) {
      for (size_t ai = 0; ai < alphas.size(); ++ai) {
        for (size_t si = 0; si < students.size(); ++si) {
          std::string body = "temperature\t" + metric + "\n";
          for (const auto& g : grid) {
            if (g.alpha != alphas[ai] || g.student != static_cast<int>(si)) continue;
            if (const auto* vals = series_mean(g, task, metric)) {
              double sum = 0.0;
              for (double v : *vals) sum += v;
              body += format_value(g.temperature) + "\t" + format_value(sum / static_cast<double>(vals->size())) + "\n";
            }
          }
          series["plots/" + task + "_" + metric + "_vs_T_a" + format_value(alphas[ai]) + "_" + grid_label(static_cast<int>(si)) + ".tsv"] = body;
        }
      }
    }
    if (alphas.size() > 1) {
      for (size_t ti = 0; ti < temperatures.size(); ++ti) {
        for (size_t si = 0; si < students.size(); ++si) {
          std::string body = "alpha\t" + metric + "\n";
          for (const auto& g : grid) {
            if (g.temperature != temperatures[ti] || g.student != static_cast<int>(si)) continue;
            if (const auto* vals = series_mean(g, task, metric)) {
              double sum = 0.0;
              for (double v : *vals) sum += v;
              body += format_value(g.alpha) + "\t" + format_value(sum / static_cast<double>(vals->size())) + "\n";
            }
          }
          series["plots/" + task + "_" + metric + "_vs_alpha_T" + format_value(temperatures[ti]) + "_" + grid_label(static_cast<int>(si)) + ".tsv"] = body;
        }
      }
    }
  }
  for (const auto& [name, body] : series) atomic_write_file(out_dir / name, body);

  // archive of every run with its hashes
  nlohmann::json runs_json = nlohmann::json::array();
  int failures = 0;
  for (const auto& r : results) {
    nlohmann::json rj{{"run_index", r.run_index},   {"grid_index", r.grid_index},
                      {"temperature", r.temperature}, {"alpha", r.alpha},
                      {"student", r.student_label},  {"seed", r.seed},
                      {"status", r.ok ? "ok" : "failed"}};
    if (r.ok) {
      rj["checkpoint"] = r.checkpoint_hash;
      rj["eval_rows_hash"] = r.rows_hash;
    } else {
      rj["error"] = r.error;
      ++failures;
    }
    runs_json.push_back(std::move(rj));
  }
  nlohmann::json manifest{{"schema_version", 1},
                          {"teacher", to_hex(model_content_hash(teacher))},
                          {"dataset", to_hex(dataset.content_hash)},
                          {"cache", to_hex(logit_cache_hash(cache))},
                          {"n_runs", results.size()},
                          {"failures", failures},
                          {"runs", runs_json}};
  atomic_write_file(out_dir / "runs.json", manifest.dump(2) + "\n");

  std::cout << "sweep " << results.size() << " runs, " << failures << " failed, " << out_dir.string() << "\n";
  return failures == 0 ? kExitOk : kExitPartialSweep;
}

}  // namespace distilforge::cli
