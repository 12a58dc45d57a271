#pragma once

// Test-only reference implementations. These stay independent of the library
// forward paths they check: long-double arithmetic, naive loop orders, and a
// central-difference gradient probe.

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "distilforge/rng.hpp"

namespace oracles {

// naive jik triple loop with long double accumulation
inline std::vector<double> matmul_ref(std::span<const double> a, std::span<const double> b, int m, int k, int n) {
  std::vector<double> c(static_cast<size_t>(m) * n, 0.0);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < m; ++i) {
      long double acc = 0.0L;
      for (int p = 0; p < k; ++p) {
        acc += static_cast<long double>(a[static_cast<size_t>(i) * k + p]) * b[static_cast<size_t>(p) * n + j];
      }
      c[static_cast<size_t>(i) * n + j] = static_cast<double>(acc);
    }
  }
  return c;
}

// direct exponential normalization per row, long double
inline std::vector<double> softmax_ref(std::span<const double> z, double temperature) {
  std::vector<double> out(z.size());
  long double denom = 0.0L;
  for (double v : z) denom += expl(static_cast<long double>(v) / temperature);
  for (size_t i = 0; i < z.size(); ++i) {
    out[i] = static_cast<double>(expl(static_cast<long double>(z[i]) / temperature) / denom);
  }
  return out;
}

// KL between two probability vectors
inline double kl_ref(std::span<const double> p, std::span<const double> q) {
  long double acc = 0.0L;
  for (size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) acc += static_cast<long double>(p[i]) * (logl(p[i]) - logl(q[i]));
  }
  return static_cast<double>(acc);
}

inline double entropy_ref(std::span<const double> p) {
  long double acc = 0.0L;
  for (double v : p) {
    if (v > 0.0) acc -= static_cast<long double>(v) * logl(v);
  }
  return static_cast<double>(acc);
}

// Central finite differences of a scalar function at x against an analytic
// gradient. Relative error uses a small floor so near-zero coordinates are
// judged on absolute scale.
struct GradCheck {
  double max_rel_err = 0.0;
  size_t worst_index = 0;
};

inline GradCheck finite_diff_check(const std::function<double(const std::vector<double>&)>& f,
                                   const std::vector<double>& x, std::span<const double> analytic,
                                   double h = 1e-5) {
  GradCheck r;
  std::vector<double> probe = x;
  for (size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    const double fd = (up - down) / (2.0 * h);
    const double ad = analytic[i];
    const double rel = std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1e-4});
    if (rel > r.max_rel_err) {
      r.max_rel_err = rel;
      r.worst_index = i;
    }
  }
  return r;
}

inline std::vector<double> random_vector(distilforge::Rng& rng, size_t n, double scl = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = scl * rng.next_normal();
  return v;
}

}  // namespace oracles
