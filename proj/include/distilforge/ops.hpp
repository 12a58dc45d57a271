#pragma once

#include <span>

#include "distilforge/tensor.hpp"

namespace distilforge {

// Raw accumulate kernels shared by the op backwards. ikj ordering so the
// inner loop runs over contiguous rows.
//   gemm_nn: c[m,n] += a[m,k] * b[k,n]
//   gemm_nt: c[m,k] += a[m,n] * b[k,n]^T
//   gemm_tn: c[k,n] += a[m,k]^T * b[m,n]
void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n);
void gemm_nt(const double* a, const double* b, double* c, int m, int n, int k);
void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n);

// Matrix product [m,k] x [k,n] -> [m,n].
Tensor matmul(GradTape* tape, const Tensor& a, const Tensor& b);

// Elementwise sum / product of two same-shape tensors.
Tensor add(GradTape* tape, const Tensor& a, const Tensor& b);
Tensor mul(GradTape* tape, const Tensor& a, const Tensor& b);

// y = c * x
Tensor scale(GradTape* tape, const Tensor& x, double c);

// Sum / mean of all elements -> shape {1}.
Tensor sum_all(GradTape* tape, const Tensor& x);
Tensor mean_all(GradTape* tape, const Tensor& x);

// out[i, :] = x[rows[i], :]; backward scatter-adds, so duplicate rows are fine.
Tensor gather_rows(GradTape* tape, const Tensor& x, std::span<const int64_t> rows);

// y = x w + b; x [n,i], w [i,o], b [o].
Tensor linear(GradTape* tape, const Tensor& x, const Tensor& w, const Tensor& b);

// Normalization over the last axis with learned gain/bias.
Tensor layer_norm(GradTape* tape, const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Exact Gaussian-error gelu: y = x * Phi(x).
Tensor gelu(GradTape* tape, const Tensor& x);

// Temperature softmax over the last axis, max-subtracted for stability:
//   out_i = exp((z_i - max_j z_j) / T) / sum_k exp((z_k - max_j z_j) / T)
// Rows sum to 1; higher T flattens the distribution, lower T sharpens it.
Tensor softmax_temperature(GradTape* tape, const Tensor& logits, double temperature);

// Elementwise log of softmax_temperature, computed directly in log space.
Tensor log_softmax_temperature(GradTape* tape, const Tensor& logits, double temperature);

// Row-wise KL(p || q) in nats with q supplied as log-probabilities:
//   out_r = sum_i p_i * (ln p_i - log_q_i),  0 * ln(0/q) = 0.
// Rows of p must be probability vectors; rows of log_q must normalize.
// A row with p_i > 0 where log_q_i = -inf yields +inf.
Tensor kl_divergence(GradTape* tape, const Tensor& p, const Tensor& log_q);

// Mean over rows of -log softmax(logits)[target], natural-log units.
Tensor cross_entropy(GradTape* tape, const Tensor& logits, std::span<const int32_t> targets);

}  // namespace distilforge
