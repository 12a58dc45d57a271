#include "distilforge/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "distilforge/fsio.hpp"
#include "distilforge/ops.hpp"

namespace distilforge {

std::string to_string(Optimizer o) { return o == Optimizer::sgd ? "sgd" : "adam"; }

Optimizer optimizer_from_string(const std::string& s) {
  if (s == "sgd") return Optimizer::sgd;
  if (s == "adam") return Optimizer::adam;
  throw ConfigError("unknown optimizer: " + s);
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0, got " + std::to_string(epochs));
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1, got " + std::to_string(batch_size));
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be positive and finite");
  }
  if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0) || !(adam_beta2 > 0.0 && adam_beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in (0,1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (grad_clip && !(*grad_clip > 0.0)) throw ConfigError("grad_clip must be positive when set");
}

namespace {

constexpr double kGradNormDivergenceLimit = 1e6;

class Optim {
 public:
  Optim(const TrainConfig& cfg, const Model& m) : cfg_(cfg) {
    if (cfg.optimizer == Optimizer::adam) {
      m1_.resize(m.params.size());
      m2_.resize(m.params.size());
      for (size_t i = 0; i < m.params.size(); ++i) {
        m1_[i].assign(static_cast<size_t>(m.params[i].second.numel()), 0.0);
        m2_[i].assign(static_cast<size_t>(m.params[i].second.numel()), 0.0);
      }
    }
  }

  // Returns the post-clip global gradient norm.
  double step(Model& m) {
    double sq = 0.0;
    for (auto& [name, t] : m.params) {
      if (!t.has_grad()) continue;
      for (double g : t.grad()) sq += g * g;
    }
    double norm = std::sqrt(sq);
    double factor = 1.0;
    if (cfg_.grad_clip && norm > *cfg_.grad_clip) {
      factor = *cfg_.grad_clip / norm;
      norm = *cfg_.grad_clip;
    }

    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.adam_beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.adam_beta2, static_cast<double>(t_));
    for (size_t i = 0; i < m.params.size(); ++i) {
      Tensor& t = m.params[i].second;
      if (!t.has_grad()) continue;
      auto& data = t.data();
      const auto& grad = t.grad();
      if (cfg_.optimizer == Optimizer::sgd) {
        for (size_t j = 0; j < data.size(); ++j) data[j] -= cfg_.learning_rate * factor * grad[j];
      } else {
        auto& m1 = m1_[i];
        auto& m2 = m2_[i];
        for (size_t j = 0; j < data.size(); ++j) {
          const double g = factor * grad[j];
          m1[j] = cfg_.adam_beta1 * m1[j] + (1.0 - cfg_.adam_beta1) * g;
          m2[j] = cfg_.adam_beta2 * m2[j] + (1.0 - cfg_.adam_beta2) * g * g;
          const double mhat = m1[j] / bc1;
          const double vhat = m2[j] / bc2;
          data[j] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.adam_eps);
        }
      }
    }
    return norm;
  }

 private:
  TrainConfig cfg_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m1_, m2_;
};

struct DistillRun {
  const DistillConfig* dcfg = nullptr;
  const LogitCache* cache = nullptr;
};

std::pair<Model, TrainLog> run_training(const ModelConfig& mcfg, const TrainConfig& tcfg,
                                        const Dataset& dataset, const DistillRun* distill) {
  tcfg.validate();
  mcfg.validate();
  if (mcfg.vocab_size != static_cast<int>(dataset.vocab.size())) {
    throw ConfigError("model vocab size " + std::to_string(mcfg.vocab_size) + " does not match dataset vocab size " +
                      std::to_string(dataset.vocab.size()));
  }
  if (dataset.max_input_len() > mcfg.context_len) {
    throw ConfigError("dataset inputs of length " + std::to_string(dataset.max_input_len()) +
                      " exceed model context " + std::to_string(mcfg.context_len));
  }

  Model model = init_model(mcfg);
  Optim optim(tcfg, model);
  TrainLog log;
  if (distill != nullptr) {
    log.alpha = distill->dcfg->alpha;
    log.temperature = distill->dcfg->temperature;
  }

  int64_t step = 0;
  const auto run_start = std::chrono::steady_clock::now();
  double last_ms = 0.0;
  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    for (const Batch& b : batches(dataset, tcfg.batch_size, tcfg.seed, epoch)) {
      GradTape tape;
      Tensor logits = forward_batch(model, b.inputs, b.batch, b.len, &tape);

      // scored positions: everything that is not padding
      std::vector<int64_t> rows;
      std::vector<int32_t> targets;
      for (size_t i = 0; i < b.padded.size(); ++i) {
        if (!b.padded[i]) {
          rows.push_back(static_cast<int64_t>(i));
          targets.push_back(b.targets[i]);
        }
      }
      Tensor scored = gather_rows(&tape, logits, rows);

      Tensor loss;
      double ce_part = 0.0, kd_part = 0.0;
      if (distill == nullptr) {
        loss = cross_entropy(&tape, scored, targets);
        ce_part = loss.item();
      } else {
        // teacher logits for the same scored positions, from the cache
        const int v = mcfg.vocab_size;
        Tensor teacher = Tensor::zeros({static_cast<int>(rows.size()), v});
        int out_row = 0;
        for (int r = 0; r < b.batch; ++r) {
          const auto& entry = distill->cache->entries[static_cast<size_t>(b.example_ids[static_cast<size_t>(r)])];
          for (int t = 0; t < b.len; ++t) {
            if (b.padded[static_cast<size_t>(r) * b.len + t]) continue;
            if (t >= entry.len) throw StalenessError("logit cache entry shorter than its example");
            std::copy_n(entry.logits.data() + static_cast<size_t>(t) * v, v,
                        teacher.data().data() + static_cast<size_t>(out_row) * v);
            ++out_row;
          }
        }
        KdParts parts = kd_loss_parts(&tape, scored, teacher, targets, *distill->dcfg);
        loss = parts.total;
        ce_part = parts.ce;
        kd_part = parts.kd;
      }

      const double loss_value = loss.item();
      if (!std::isfinite(loss_value)) {
        throw DivergenceError("training diverged at step " + std::to_string(step) + ": non-finite loss");
      }
      model.zero_grads();
      tape.backward(loss);
      const double grad_norm = optim.step(model);
      if (!std::isfinite(grad_norm) || grad_norm > kGradNormDivergenceLimit) {
        throw DivergenceError("training diverged at step " + std::to_string(step) + ": gradient norm " +
                              std::to_string(grad_norm));
      }

      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - run_start).count();
      log.steps.push_back(TrainLog::Step{step, epoch, loss_value, ce_part, kd_part, grad_norm, ms - last_ms});
      last_ms = ms;
      ++step;
    }
  }
  return {std::move(model), std::move(log)};
}

}  // namespace

std::pair<Model, TrainLog> train_teacher(const ModelConfig& config, const TrainConfig& tcfg, const Dataset& dataset) {
  return run_training(config, tcfg, dataset, nullptr);
}

std::pair<Model, TrainLog> train_student_baseline(const ModelConfig& student_cfg, const TrainConfig& tcfg,
                                                  const Dataset& dataset) {
  return run_training(student_cfg, tcfg, dataset, nullptr);
}

std::pair<Model, TrainLog> distill_student(const ModelConfig& student_cfg, const DistillConfig& dcfg,
                                           const TrainConfig& tcfg, const Dataset& dataset, const LogitCache& cache) {
  dcfg.validate();
  if (cache.dataset_id != dataset.content_hash) {
    throw StalenessError("logit cache was built for a different dataset (dataset_id mismatch); regenerate the cache");
  }
  if (cache.entries.size() != dataset.examples.size()) {
    throw StalenessError("logit cache entry count does not match the dataset");
  }
  if (!cache.entries.empty() && cache.entries[0].vocab != student_cfg.vocab_size) {
    throw ConfigError("student vocab size " + std::to_string(student_cfg.vocab_size) +
                      " does not match cached teacher vocab " + std::to_string(cache.entries[0].vocab));
  }
  DistillRun ctx{&dcfg, &cache};
  return run_training(student_cfg, tcfg, dataset, &ctx);
}

void save_train_log(const TrainLog& log, const std::filesystem::path& path) {
  std::string out;
  nlohmann::json meta{{"schema", 1},
                      {"type", "meta"},
                      {"alpha", log.alpha},
                      {"temperature", log.temperature},
                      {"n_steps", log.steps.size()}};
  out += meta.dump();
  out += '\n';
  for (const auto& s : log.steps) {
    nlohmann::json j{{"schema", 1}, {"type", "step"},         {"step", s.step},
                     {"epoch", s.epoch}, {"loss", s.loss},    {"ce", s.ce},
                     {"kd", s.kd},       {"grad_norm", s.grad_norm}, {"wall_ms", s.wall_ms}};
    out += j.dump();
    out += '\n';
  }
  nlohmann::json fin{{"schema", 1}, {"type", "final"}, {"checkpoint", log.final_checkpoint_hash}};
  out += fin.dump();
  out += '\n';
  atomic_write_file(path, out);
}

}  // namespace distilforge
