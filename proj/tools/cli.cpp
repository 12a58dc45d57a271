#include "cli.hpp"

#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"

#include "distilforge/checkpoint.hpp"
#include "distilforge/data.hpp"
#include "distilforge/distill.hpp"
#include "distilforge/errors.hpp"
#include "distilforge/eval.hpp"
#include "distilforge/fsio.hpp"
#include "distilforge/hash.hpp"

namespace distilforge::cli {

namespace fs = std::filesystem;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const StalenessError*>(&e)) return kExitStale;
  if (dynamic_cast<const IntegrityError*>(&e)) return kExitStale;
  if (dynamic_cast<const FormatError*>(&e)) return kExitStale;
  if (dynamic_cast<const DivergenceError*>(&e)) return kExitDivergence;
  if (dynamic_cast<const ConfigError*>(&e)) return kExitUsage;
  if (dynamic_cast<const IngestError*>(&e)) return kExitUsage;
  return 1;
}

std::filesystem::path resolve_out_dir(const std::string& flag_value, const std::string& subcommand) {
  if (!flag_value.empty()) return flag_value;
  if (const char* root = std::getenv("DISTILFORGE_OUT"); root != nullptr && *root != '\0') {
    return fs::path(root) / subcommand;
  }
  throw ConfigError("--out is required (or set DISTILFORGE_OUT as the default output root)");
}

nlohmann::json load_config_file(const fs::path& path) {
  const std::string bytes = read_file_bytes(path);
  try {
    return nlohmann::json::parse(bytes);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
}

ModelConfig merge_model_config(ModelConfig base, const nlohmann::json& j) {
  if (j.contains("vocab_size")) base.vocab_size = j["vocab_size"].get<int>();
  if (j.contains("context_len")) base.context_len = j["context_len"].get<int>();
  if (j.contains("n_layers")) base.n_layers = j["n_layers"].get<int>();
  if (j.contains("n_heads")) base.n_heads = j["n_heads"].get<int>();
  if (j.contains("d_model")) base.d_model = j["d_model"].get<int>();
  if (j.contains("d_ff")) base.d_ff = j["d_ff"].get<int>();
  if (j.contains("seed")) base.seed = j["seed"].get<uint64_t>();
  return base;
}

TrainConfig merge_train_config(TrainConfig base, const nlohmann::json& j) {
  if (j.contains("epochs")) base.epochs = j["epochs"].get<int>();
  if (j.contains("batch_size")) base.batch_size = j["batch_size"].get<int>();
  if (j.contains("learning_rate")) base.learning_rate = j["learning_rate"].get<double>();
  if (j.contains("optimizer")) base.optimizer = optimizer_from_string(j["optimizer"].get<std::string>());
  if (j.contains("adam_beta1")) base.adam_beta1 = j["adam_beta1"].get<double>();
  if (j.contains("adam_beta2")) base.adam_beta2 = j["adam_beta2"].get<double>();
  if (j.contains("adam_eps")) base.adam_eps = j["adam_eps"].get<double>();
  if (j.contains("grad_clip")) {
    if (j["grad_clip"].is_null()) {
      base.grad_clip.reset();
    } else {
      base.grad_clip = j["grad_clip"].get<double>();
    }
  }
  if (j.contains("seed")) base.seed = j["seed"].get<uint64_t>();
  return base;
}

namespace {

struct CommonTrainFlags {
  std::string config_path;
  std::string out;
  uint64_t seed = 0;
  bool seed_set = false;
  int epochs = 0;
  bool epochs_set = false;
  int batch_size = 0;
  bool batch_set = false;
  double lr = 0.0;
  bool lr_set = false;
};

void add_train_flags(CLI::App* cmd, CommonTrainFlags& f) {
  cmd->add_option("--config", f.config_path, "canonical-json config file; flags override its fields")->check(CLI::ExistingFile);
  cmd->add_option("--out", f.out, "output directory (default: $DISTILFORGE_OUT/<command>)");
  cmd->add_option("--seed", f.seed, "seed for both model init and batch shuffling")->each([&](const std::string&) { f.seed_set = true; });
  cmd->add_option("--epochs", f.epochs, "training epochs")->each([&](const std::string&) { f.epochs_set = true; });
  cmd->add_option("--batch-size", f.batch_size, "examples per step")->each([&](const std::string&) { f.batch_set = true; });
  cmd->add_option("--lr", f.lr, "learning rate")->each([&](const std::string&) { f.lr_set = true; });
}

// preset, config file and flag overrides, with vocab/context fitted to data
ModelConfig resolve_model_config(const std::string& preset, const nlohmann::json& cfg_json, const Dataset& ds,
                                 int context_flag, const CommonTrainFlags& f) {
  const int fallback_ctx = std::max(ds.max_input_len(), 1);
  ModelConfig base = preset == "student" ? default_student_config(static_cast<int>(ds.vocab.size()), fallback_ctx)
                                         : default_teacher_config(static_cast<int>(ds.vocab.size()), fallback_ctx);
  if (cfg_json.contains("model")) base = merge_model_config(base, cfg_json["model"]);
  if (context_flag > 0) base.context_len = context_flag;
  if (f.seed_set) base.seed = f.seed;
  if (base.vocab_size != static_cast<int>(ds.vocab.size())) {
    throw ConfigError("model vocab_size " + std::to_string(base.vocab_size) + " does not match the dataset vocabulary (" +
                      std::to_string(ds.vocab.size()) + ")");
  }
  return base;
}

TrainConfig resolve_train_config(const nlohmann::json& cfg_json, const CommonTrainFlags& f) {
  TrainConfig t;
  t.epochs = 3;
  t.batch_size = 16;
  t.learning_rate = 3e-4;
  if (cfg_json.contains("train")) t = merge_train_config(t, cfg_json["train"]);
  if (f.seed_set) t.seed = f.seed;
  if (f.epochs_set) t.epochs = f.epochs;
  if (f.batch_set) t.batch_size = f.batch_size;
  if (f.lr_set) t.learning_rate = f.lr;
  return t;
}

std::pair<std::string, std::string> split_label(const std::string& spec) {
  const size_t eq = spec.find('=');
  if (eq == std::string::npos) return {fs::path(spec).stem().string(), spec};
  return {spec.substr(0, eq), spec.substr(eq + 1)};
}

int cmd_gen(const std::string& kind, uint64_t seed, int n, int difficulty, const std::string& text,
            int context, const std::string& out) {
  if (out.empty()) throw ConfigError("--out is required for gen");
  Dataset ds;
  if (kind == "cloze") {
    ds = gen_cloze_task(seed, n, difficulty);
  } else if (kind == "qa") {
    ds = gen_qa_task(seed, n);
  } else {
    ds = ingest_text(text, context);
  }
  save_dataset(ds, out);
  std::cout << "dataset " << to_hex(ds.content_hash) << " " << out << "\n";
  return kExitOk;
}

int cmd_train_teacher(const std::string& data_path, const std::string& preset, int context_flag,
                      const CommonTrainFlags& f) {
  const fs::path out = resolve_out_dir(f.out, "train-teacher");
  const Dataset ds = load_dataset(data_path);
  const nlohmann::json cfg_json = f.config_path.empty() ? nlohmann::json::object() : load_config_file(f.config_path);
  const ModelConfig mcfg = resolve_model_config(preset, cfg_json, ds, context_flag, f);
  const TrainConfig tcfg = resolve_train_config(cfg_json, f);

  auto [model, log] = train_teacher(mcfg, tcfg, ds);
  const Hash32 h = save_checkpoint(model, out / "teacher.ckpt");
  TrainLog named = std::move(log);
  named.final_checkpoint_hash = to_hex(h);
  save_train_log(named, out / "teacher_log.ndjson");
  std::cout << "checkpoint " << to_hex(h) << " " << (out / "teacher.ckpt").string() << "\n";
  return kExitOk;
}

int cmd_cache(const std::string& teacher_path, const std::string& data_path, const std::string& out) {
  if (out.empty()) throw ConfigError("--out is required for cache");
  const Model teacher = load_checkpoint(teacher_path);
  const Dataset ds = load_dataset(data_path);
  const LogitCache cache = cache_teacher_logits(teacher, ds);
  save_logit_cache(cache, out);
  std::cout << "cache " << to_hex(logit_cache_hash(cache)) << " " << out << "\n";
  return kExitOk;
}

int cmd_distill(const std::string& teacher_path, const std::string& cache_path, const std::string& data_path,
                double alpha, bool alpha_set, double temperature, bool temperature_set, int context_flag,
                const CommonTrainFlags& f) {
  const fs::path out = resolve_out_dir(f.out, "distill");
  const Model teacher = load_checkpoint(teacher_path);
  const Dataset ds = load_dataset(data_path);
  const LogitCache cache = load_logit_cache(cache_path);

  if (cache.teacher_id != model_content_hash(teacher)) {
    throw StalenessError("cache " + cache_path + " was built from a different teacher checkpoint; rerun the cache stage");
  }
  if (cache.dataset_id != ds.content_hash) {
    throw StalenessError("cache " + cache_path + " was built from a different dataset; rerun the cache stage");
  }

  const nlohmann::json cfg_json = f.config_path.empty() ? nlohmann::json::object() : load_config_file(f.config_path);
  const ModelConfig scfg = resolve_model_config("student", cfg_json, ds, context_flag, f);
  const TrainConfig tcfg = resolve_train_config(cfg_json, f);
  DistillConfig dcfg;
  if (cfg_json.contains("distill")) {
    const auto& dj = cfg_json["distill"];
    if (dj.contains("alpha")) dcfg.alpha = dj["alpha"].get<double>();
    if (dj.contains("temperature")) dcfg.temperature = dj["temperature"].get<double>();
  }
  if (alpha_set) dcfg.alpha = alpha;
  if (temperature_set) dcfg.temperature = temperature;

  auto [student, log] = distill_student(scfg, dcfg, tcfg, ds, cache);
  const Hash32 h = save_checkpoint(student, out / "student.ckpt");
  TrainLog named = std::move(log);
  named.final_checkpoint_hash = to_hex(h);
  save_train_log(named, out / "student_log.ndjson");
  std::cout << "checkpoint " << to_hex(h) << " " << (out / "student.ckpt").string() << "\n";
  return kExitOk;
}

int cmd_eval(const std::vector<std::string>& model_specs, const std::vector<std::string>& data_specs,
             const std::string& out_flag) {
  const fs::path out = resolve_out_dir(out_flag, "eval");
  std::vector<std::pair<std::string, Model>> models;
  for (const auto& spec : model_specs) {
    auto [label, path] = split_label(spec);
    if (!fs::exists(path)) throw ConfigError("--model: checkpoint does not exist: " + path);
    models.emplace_back(label, load_checkpoint(path));
  }
  std::vector<std::pair<std::string, Dataset>> datasets;
  for (const auto& spec : data_specs) {
    auto [label, path] = split_label(spec);
    if (!fs::exists(path)) throw ConfigError("--data: dataset does not exist: " + path);
    datasets.emplace_back(label, load_dataset(path));
  }

  std::vector<LabeledModel> lm;
  lm.reserve(models.size());
  for (auto& [label, m] : models) lm.push_back({label, &m});
  std::vector<LabeledDataset> ld;
  ld.reserve(datasets.size());
  for (auto& [label, d] : datasets) ld.push_back({label, &d});

  const EvalReport report = evaluate_suite(lm, ld);
  atomic_write_file(out / "eval.csv", report.csv());
  atomic_write_file(out / "eval.json", report.to_json().dump(2) + "\n");
  std::cout << "report " << to_hex(report.rows_hash()) << " " << (out / "eval.csv").string() << "\n";
  return kExitOk;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"desk-scale knowledge distillation: train a teacher, cache its predictions,\n"
               "distill a student with the temperature-softened combined loss, evaluate, sweep"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate or ingest a dataset");
  gen->require_subcommand(1);
  uint64_t gen_seed = 1;
  int gen_n = 1000, gen_difficulty = 1, gen_context = 16;
  std::string gen_text, gen_out;
  auto* gen_cloze = gen->add_subcommand("cloze", "completion task: the final character is determined by the leading key");
  gen_cloze->add_option("--seed", gen_seed, "generator seed");
  gen_cloze->add_option("--n", gen_n, "number of examples");
  gen_cloze->add_option("--difficulty", gen_difficulty, "0 = single-char keys, higher widens keys and filler");
  gen_cloze->add_option("--out", gen_out, "output dataset file")->required();
  auto* gen_qa = gen->add_subcommand("qa", "in-context fact lookup with exact-match answers");
  gen_qa->add_option("--seed", gen_seed, "generator seed");
  gen_qa->add_option("--n", gen_n, "number of examples");
  gen_qa->add_option("--out", gen_out, "output dataset file")->required();
  auto* gen_ingest = gen->add_subcommand("ingest", "character-level windows over a utf-8 text file");
  gen_ingest->add_option("--text", gen_text, "input text file")->required()->check(CLI::ExistingFile);
  gen_ingest->add_option("--context", gen_context, "window length");
  gen_ingest->add_option("--out", gen_out, "output dataset file")->required();

  // train-teacher
  auto* tt = app.add_subcommand("train-teacher", "train a model with plain cross-entropy and checkpoint it");
  std::string tt_data, tt_preset = "teacher";
  int tt_context = 0;
  CommonTrainFlags tt_flags;
  tt->add_option("--data", tt_data, "dataset file")->required()->check(CLI::ExistingFile);
  tt->add_option("--preset", tt_preset, "model size preset: teacher or student")->check(CLI::IsMember({"teacher", "student"}));
  tt->add_option("--context", tt_context, "context length override");
  add_train_flags(tt, tt_flags);

  // cache
  auto* ca = app.add_subcommand("cache", "run the frozen teacher over a dataset and persist its logits");
  std::string ca_teacher, ca_data, ca_out;
  ca->add_option("--teacher", ca_teacher, "teacher checkpoint")->required()->check(CLI::ExistingFile);
  ca->add_option("--data", ca_data, "dataset file")->required()->check(CLI::ExistingFile);
  ca->add_option("--out", ca_out, "output cache file")->required();

  // distill
  auto* di = app.add_subcommand("distill", "train a student against cached teacher logits");
  std::string di_teacher, di_cache, di_data;
  double di_alpha = 0.5, di_temperature = 2.0;
  bool di_alpha_set = false, di_temp_set = false;
  int di_context = 0;
  CommonTrainFlags di_flags;
  di->add_option("--teacher", di_teacher, "teacher checkpoint (for cache binding)")->required()->check(CLI::ExistingFile);
  di->add_option("--cache", di_cache, "teacher logit cache")->required()->check(CLI::ExistingFile);
  di->add_option("--data", di_data, "dataset file")->required()->check(CLI::ExistingFile);
  di->add_option("--alpha", di_alpha, "weight on the hard-label CE term")->each([&](const std::string&) { di_alpha_set = true; });
  di->add_option("--temperature", di_temperature, "softening temperature")->each([&](const std::string&) { di_temp_set = true; });
  di->add_option("--context", di_context, "student context length override");
  add_train_flags(di, di_flags);

  // eval
  auto* ev = app.add_subcommand("eval", "score checkpoints over datasets and write csv/json reports");
  std::vector<std::string> ev_models, ev_datasets;
  std::string ev_out;
  ev->add_option("--model", ev_models, "label=checkpoint (repeatable)")->required();
  ev->add_option("--data", ev_datasets, "label=dataset (repeatable)")->required();
  ev->add_option("--out", ev_out, "output directory");

  // sweep
  auto* sw = app.add_subcommand("sweep", "grid of (temperature, alpha, student) x seeds with aggregated reports");
  std::string sw_spec, sw_out;
  int sw_parallel = 0;
  sw->add_option("--spec", sw_spec, "sweep spec json")->required()->check(CLI::ExistingFile);
  sw->add_option("--out", sw_out, "output directory");
  sw->add_option("--parallel", sw_parallel, "concurrent runs (default: hardware threads)");

  // report
  auto* rp = app.add_subcommand("report", "render markdown tables and plot-ready series from reports");
  std::vector<std::string> rp_evals, rp_sweeps;
  std::string rp_out;
  rp->add_option("--eval", rp_evals, "eval report json (repeatable)");
  rp->add_option("--sweep", rp_sweeps, "sweep aggregate csv (repeatable)");
  rp->add_option("--out", rp_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;  // help/version exit 0, real parse errors exit 2
  }

  try {
    if (gen_cloze->parsed()) return cmd_gen("cloze", gen_seed, gen_n, gen_difficulty, "", 0, gen_out);
    if (gen_qa->parsed()) return cmd_gen("qa", gen_seed, gen_n, 0, "", 0, gen_out);
    if (gen_ingest->parsed()) return cmd_gen("ingest", 0, 0, 0, gen_text, gen_context, gen_out);
    if (tt->parsed()) return cmd_train_teacher(tt_data, tt_preset, tt_context, tt_flags);
    if (ca->parsed()) return cmd_cache(ca_teacher, ca_data, ca_out);
    if (di->parsed()) {
      return cmd_distill(di_teacher, di_cache, di_data, di_alpha, di_alpha_set, di_temperature, di_temp_set,
                         di_context, di_flags);
    }
    if (ev->parsed()) return cmd_eval(ev_models, ev_datasets, ev_out);
    if (sw->parsed()) return run_sweep_command(sw_spec, resolve_out_dir(sw_out, "sweep"), sw_parallel);
    if (rp->parsed()) return run_report_command(rp_evals, rp_sweeps, resolve_out_dir(rp_out, "report"));
    std::cerr << "error: no subcommand\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
}

}  // namespace distilforge::cli
