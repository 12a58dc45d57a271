#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "distilforge/tensor.hpp"

namespace distilforge {

// Decoder-only transformer: learned token + position embeddings,
// pre-normalization residual blocks, untied output projection.
struct ModelConfig {
  int vocab_size = 0;
  int context_len = 0;
  int n_layers = 0;
  int n_heads = 0;
  int d_model = 0;
  int d_ff = 0;
  uint64_t seed = 0;

  void validate() const;   // ConfigError on violation
  int64_t n_params() const;  // closed-form learned-scalar count
  bool operator==(const ModelConfig&) const = default;
};

// Reference sizes used by the tools: the teacher is roughly 3-4x the student.
ModelConfig default_teacher_config(int vocab_size, int context_len, uint64_t seed = 0);
ModelConfig default_student_config(int vocab_size, int context_len, uint64_t seed = 0);

struct Model {
  ModelConfig config;
  // construction order here is the canonical order for serialization
  std::vector<std::pair<std::string, Tensor>> params;

  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;
  void zero_grads();
  void set_requires_grad(bool v);
};

// Parameters drawn from the seeded generator: weights normal with std 0.02,
// normalization gains 1, all biases 0. Same (config, seed) gives identical
// bytes.
Model init_model(const ModelConfig& config);

// Causal LM logits for one sequence of 1 <= len <= context_len tokens,
// recorded on the tape when one is given. Position i sees tokens <= i only.
Tensor forward(const Model& m, std::span<const int32_t> tokens, GradTape* tape = nullptr);

// Batched variant over `batch` sequences of equal padded length `len`;
// returns [batch*len, vocab]. Rows are independent across sequences.
Tensor forward_batch(const Model& m, std::span<const int32_t> tokens, int batch, int len, GradTape* tape = nullptr);

}  // namespace distilforge
