#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "distilforge/data.hpp"
#include "distilforge/distill.hpp"
#include "distilforge/model.hpp"

namespace distilforge {

enum class Optimizer { sgd, adam };
std::string to_string(Optimizer o);
Optimizer optimizer_from_string(const std::string& s);

struct TrainConfig {
  int epochs = 1;
  int batch_size = 16;
  double learning_rate = 3e-4;
  Optimizer optimizer = Optimizer::adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::optional<double> grad_clip;  // global-norm clip when set
  uint64_t seed = 0;

  void validate() const;
};

struct TrainLog {
  struct Step {
    int64_t step = 0;
    int epoch = 0;
    double loss = 0.0;
    double ce = 0.0;         // unweighted CE term
    double kd = 0.0;         // unweighted T^2-scaled divergence term (0 for pure-CE runs)
    double grad_norm = 0.0;  // post-clip global L2 norm
    double wall_ms = 0.0;
  };
  // weights needed to recombine the components into the total
  double alpha = 1.0;
  double temperature = 1.0;
  std::vector<Step> steps;
  std::string final_checkpoint_hash;  // hex; filled by callers that persist the model
};

// Newline-delimited JSON, one record per step plus meta/final records.
void save_train_log(const TrainLog& log, const std::filesystem::path& path);

// Pure next-token CE training from seeded init. Deterministic given
// (config, seeds); aborts with DivergenceError on non-finite loss or
// gradient norm above 1e6.
std::pair<Model, TrainLog> train_teacher(const ModelConfig& config, const TrainConfig& tcfg, const Dataset& dataset);

// Same optimization at the student size; the from-scratch comparison arm.
std::pair<Model, TrainLog> train_student_baseline(const ModelConfig& student_cfg, const TrainConfig& tcfg,
                                                  const Dataset& dataset);

// Student trained against cached teacher logits with the combined loss.
// Rejects a cache whose dataset binding does not match (StalenessError).
std::pair<Model, TrainLog> distill_student(const ModelConfig& student_cfg, const DistillConfig& dcfg,
                                           const TrainConfig& tcfg, const Dataset& dataset, const LogitCache& cache);

}  // namespace distilforge
