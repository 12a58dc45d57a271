#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "distilforge/data.hpp"
#include "distilforge/model.hpp"

namespace distilforge {

struct DistillConfig {
  double alpha = 0.5;        // weight on the hard-label CE term
  double temperature = 2.0;  // softening divisor applied to both logit sets
  void validate() const;     // ConfigError unless alpha in [0,1] and temperature > 0
};

// Teacher logits persisted per training example, bound to the dataset and the
// teacher checkpoint they came from so stale pairings are rejected.
struct LogitCache {
  Hash32 dataset_id{};
  Hash32 teacher_id{};
  struct Entry {
    int64_t example = 0;
    int len = 0;
    int vocab = 0;
    std::vector<double> logits;  // len * vocab, row-major
  };
  std::vector<Entry> entries;
};

// Runs the frozen teacher over every example input, in dataset order.
LogitCache cache_teacher_logits(const Model& teacher, const Dataset& dataset);

// Combined distillation objective over N scored positions:
//   alpha * CE(targets, student)
//   + (1 - alpha) * T^2 * mean_rows KL(softmax(teacher/T) || softmax(student/T))
// The hard-label CE term always uses T = 1. Teacher logits are treated as
// constants; gradient reaches student_logits only.
struct KdParts {
  Tensor total;      // scalar
  double ce = 0.0;   // unweighted CE term value
  double kd = 0.0;   // unweighted T^2-scaled divergence term value
};
KdParts kd_loss_parts(GradTape* tape, const Tensor& student_logits, const Tensor& teacher_logits,
                      std::span<const int32_t> targets, const DistillConfig& cfg);
Tensor kd_loss(GradTape* tape, const Tensor& student_logits, const Tensor& teacher_logits,
               std::span<const int32_t> targets, const DistillConfig& cfg);

// Container format: "KDLC" | version u32 | dataset_id (32) | teacher_id (32) |
// entry count u64 | per entry: index u64, len u32, vocab u32, len*vocab f64 |
// trailing sha-256 over everything preceding.
void save_logit_cache(const LogitCache& cache, const std::filesystem::path& path);
LogitCache load_logit_cache(const std::filesystem::path& path);

// Content hash of the serialized cache (identical to the trailing file hash).
Hash32 logit_cache_hash(const LogitCache& cache);

}  // namespace distilforge
