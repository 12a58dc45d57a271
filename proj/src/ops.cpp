#include "distilforge/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace distilforge {

void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = a[static_cast<size_t>(i) * k + p];
      const double* bp = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void gemm_nt(const double* a, const double* b, double* c, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<size_t>(i) * n;
    double* ci = c + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double* bp = b + static_cast<size_t>(p) * n;
      double acc = 0.0;
      for (int j = 0; j < n; ++j) acc += ai[j] * bp[j];
      ci[p] += acc;
    }
  }
}

void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* bi = b + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = a[static_cast<size_t>(i) * k + p];
      double* cp = c + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

static void check_finite_input(const Tensor& t, const char* op) {
  if (!t.all_finite()) throw DomainError(std::string(op) + ": input contains non-finite values");
}

static void check_temperature(double t, const char* op) {
  if (!(t > 0.0) || !std::isfinite(t)) {
    throw DomainError(std::string(op) + ": temperature must be a positive finite value, got " + std::to_string(t));
  }
}

// Rows/last-dim view of an arbitrary-rank tensor.
static std::pair<int64_t, int> rows_and_width(const Tensor& t, const char* op) {
  if (t.rank() < 1) throw ShapeError(std::string(op) + ": rank must be >= 1");
  const int v = t.shape().back();
  return {t.numel() / v, v};
}

Tensor matmul(GradTape* tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  gemm_nn(a.data().data(), b.data().data(), out.data().data(), m, k, n);

  if (grad_needed(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape->record(out, {a, b}, [a, b, out, m, k, n]() mutable {
      const double* g = out.grad().data();
      if (a.requires_grad()) gemm_nt(g, b.data().data(), a.grad().data(), m, n, k);
      if (b.requires_grad()) gemm_tn(a.data().data(), g, b.grad().data(), m, k, n);
    });
  }
  return out;
}

Tensor add(GradTape* tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros(a.shape());
  const size_t n = a.data().size();
  for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];

  if (grad_needed(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape->record(out, {a, b}, [a, b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor mul(GradTape* tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros(a.shape());
  const size_t n = a.data().size();
  for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];

  if (grad_needed(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape->record(out, {a, b}, [a, b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.data()[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.data()[i];
      }
    });
  }
  return out;
}

Tensor scale(GradTape* tape, const Tensor& x, double c) {
  Tensor out = Tensor::zeros(x.shape());
  const size_t n = x.data().size();
  for (size_t i = 0; i < n; ++i) out.data()[i] = c * x.data()[i];

  if (grad_needed(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record(out, {x}, [x, out, c]() mutable {
      const auto& g = out.grad();
      auto& gx = x.grad();
      for (size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
    });
  }
  return out;
}

Tensor sum_all(GradTape* tape, const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor out = Tensor::scalar(acc);

  if (grad_needed(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record(out, {x}, [x, out]() mutable {
      const double g = out.grad()[0];
      auto& gx = x.grad();
      for (double& v : gx) v += g;
    });
  }
  return out;
}

Tensor mean_all(GradTape* tape, const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  const double inv_n = 1.0 / static_cast<double>(x.numel());
  Tensor out = Tensor::scalar(acc * inv_n);

  if (grad_needed(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record(out, {x}, [x, out, inv_n]() mutable {
      const double g = out.grad()[0] * inv_n;
      auto& gx = x.grad();
      for (double& v : gx) v += g;
    });
  }
  return out;
}

Tensor gather_rows(GradTape* tape, const Tensor& x, std::span<const int64_t> rows) {
  if (x.rank() != 2) throw ShapeError("gather_rows: expected a 2-d tensor, got " + shape_str(x.shape()));
  if (rows.empty()) throw ShapeError("gather_rows: empty row selection");
  const int n = x.dim(0), d = x.dim(1);
  for (int64_t r : rows) {
    if (r < 0 || r >= n) throw IndexError("gather_rows: row " + std::to_string(r) + " out of range [0," + std::to_string(n) + ")");
  }
  const int m = static_cast<int>(rows.size());
  Tensor out = Tensor::zeros({m, d});
  for (int i = 0; i < m; ++i) {
    const double* src = x.data().data() + static_cast<size_t>(rows[static_cast<size_t>(i)]) * d;
    std::copy(src, src + d, out.data().data() + static_cast<size_t>(i) * d);
  }

  if (grad_needed(tape, {&x})) {
    out.set_requires_grad(true);
    std::vector<int64_t> idx(rows.begin(), rows.end());
    tape->record(out, {x}, [x, out, idx = std::move(idx), d]() mutable {
      const auto& g = out.grad();
      auto& gx = x.grad();
      for (size_t i = 0; i < idx.size(); ++i) {
        double* dst = gx.data() + static_cast<size_t>(idx[i]) * d;
        const double* src = g.data() + i * static_cast<size_t>(d);
        for (int j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor linear(GradTape* tape, const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1 || x.dim(1) != w.dim(0) || w.dim(1) != b.dim(0)) {
    throw ShapeError("linear: incompatible shapes x" + shape_str(x.shape()) + " w" + shape_str(w.shape()) + " b" + shape_str(b.shape()));
  }
  const int n = x.dim(0), in = x.dim(1), out_w = w.dim(1);
  Tensor out = Tensor::zeros({n, out_w});
  for (int i = 0; i < n; ++i) {
    std::copy(b.data().begin(), b.data().end(), out.data().begin() + static_cast<size_t>(i) * out_w);
  }
  gemm_nn(x.data().data(), w.data().data(), out.data().data(), n, in, out_w);

  if (grad_needed(tape, {&x, &w, &b})) {
    out.set_requires_grad(true);
    tape->record(out, {x, w, b}, [x, w, b, out, n, in, out_w]() mutable {
      const double* g = out.grad().data();
      if (x.requires_grad()) gemm_nt(g, w.data().data(), x.grad().data(), n, out_w, in);
      if (w.requires_grad()) gemm_tn(x.data().data(), g, w.grad().data(), n, in, out_w);
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (int i = 0; i < n; ++i) {
          const double* gi = g + static_cast<size_t>(i) * out_w;
          for (int j = 0; j < out_w; ++j) gb[static_cast<size_t>(j)] += gi[j];
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(GradTape* tape, const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const auto [rows, width] = rows_and_width(x, "layer_norm");
  if (gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != width || bias.dim(0) != width) {
    throw ShapeError("layer_norm: gain/bias must be [" + std::to_string(width) + "]");
  }
  Tensor out = Tensor::zeros(x.shape());
  // saved for backward: normalized rows and inverse stddev per row
  auto xhat = std::make_shared<std::vector<double>>(x.data().size());
  auto inv_sigma = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));

  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + static_cast<size_t>(r) * width;
    double* or_ = out.data().data() + static_cast<size_t>(r) * width;
    double* hr = xhat->data() + static_cast<size_t>(r) * width;
    double mu = 0.0;
    for (int j = 0; j < width; ++j) mu += xr[j];
    mu /= width;
    double var = 0.0;
    for (int j = 0; j < width; ++j) {
      const double d = xr[j] - mu;
      var += d * d;
    }
    var /= width;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_sigma)[static_cast<size_t>(r)] = is;
    for (int j = 0; j < width; ++j) {
      hr[j] = (xr[j] - mu) * is;
      or_[j] = hr[j] * gain.data()[static_cast<size_t>(j)] + bias.data()[static_cast<size_t>(j)];
    }
  }

  if (grad_needed(tape, {&x, &gain, &bias})) {
    out.set_requires_grad(true);
    tape->record(out, {x, gain, bias}, [x, gain, bias, out, xhat, inv_sigma, rows, width]() mutable {
      const double* g = out.grad().data();
      if (gain.requires_grad() || bias.requires_grad()) {
        auto& gg = gain.grad();
        auto& gb = bias.grad();
        for (int64_t r = 0; r < rows; ++r) {
          const double* gr = g + static_cast<size_t>(r) * width;
          const double* hr = xhat->data() + static_cast<size_t>(r) * width;
          for (int j = 0; j < width; ++j) {
            gg[static_cast<size_t>(j)] += gr[j] * hr[j];
            gb[static_cast<size_t>(j)] += gr[j];
          }
        }
      }
      if (x.requires_grad()) {
        auto& gx = x.grad();
        std::vector<double> t(static_cast<size_t>(width));
        for (int64_t r = 0; r < rows; ++r) {
          const double* gr = g + static_cast<size_t>(r) * width;
          const double* hr = xhat->data() + static_cast<size_t>(r) * width;
          double m1 = 0.0, m2 = 0.0;
          for (int j = 0; j < width; ++j) {
            t[static_cast<size_t>(j)] = gr[j] * gain.data()[static_cast<size_t>(j)];
            m1 += t[static_cast<size_t>(j)];
            m2 += t[static_cast<size_t>(j)] * hr[j];
          }
          m1 /= width;
          m2 /= width;
          const double is = (*inv_sigma)[static_cast<size_t>(r)];
          double* gxr = gx.data() + static_cast<size_t>(r) * width;
          for (int j = 0; j < width; ++j) {
            gxr[j] += (t[static_cast<size_t>(j)] - m1 - hr[j] * m2) * is;
          }
        }
      }
    });
  }
  return out;
}

Tensor gelu(GradTape* tape, const Tensor& x) {
  static constexpr double kInvSqrt2 = 0.70710678118654752440;
  static constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  Tensor out = Tensor::zeros(x.shape());
  const size_t n = x.data().size();
  for (size_t i = 0; i < n; ++i) {
    const double v = x.data()[i];
    out.data()[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  }

  if (grad_needed(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record(out, {x}, [x, out]() mutable {
      const auto& g = out.grad();
      auto& gx = x.grad();
      for (size_t i = 0; i < g.size(); ++i) {
        const double v = x.data()[i];
        const double phi_cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double phi_pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        gx[i] += g[i] * (phi_cdf + v * phi_pdf);
      }
    });
  }
  return out;
}

Tensor softmax_temperature(GradTape* tape, const Tensor& logits, double temperature) {
  check_temperature(temperature, "softmax_temperature");
  check_finite_input(logits, "softmax_temperature");
  const auto [rows, width] = rows_and_width(logits, "softmax_temperature");

  Tensor out = Tensor::zeros(logits.shape());
  const double inv_t = 1.0 / temperature;
  for (int64_t r = 0; r < rows; ++r) {
    const double* zr = logits.data().data() + static_cast<size_t>(r) * width;
    double* yr = out.data().data() + static_cast<size_t>(r) * width;
    double mx = zr[0];
    for (int j = 1; j < width; ++j) mx = std::max(mx, zr[j]);
    double denom = 0.0;
    for (int j = 0; j < width; ++j) {
      yr[j] = std::exp((zr[j] - mx) * inv_t);
      denom += yr[j];
    }
    const double inv_d = 1.0 / denom;
    for (int j = 0; j < width; ++j) yr[j] *= inv_d;
  }

  if (grad_needed(tape, {&logits})) {
    out.set_requires_grad(true);
    tape->record(out, {logits}, [logits, out, rows, width, inv_t]() mutable {
      const double* g = out.grad().data();
      const double* y = out.data().data();
      auto& gz = logits.grad();
      for (int64_t r = 0; r < rows; ++r) {
        const double* gr = g + static_cast<size_t>(r) * width;
        const double* yr = y + static_cast<size_t>(r) * width;
        double dot = 0.0;
        for (int j = 0; j < width; ++j) dot += gr[j] * yr[j];
        double* gzr = gz.data() + static_cast<size_t>(r) * width;
        for (int j = 0; j < width; ++j) gzr[j] += yr[j] * (gr[j] - dot) * inv_t;
      }
    });
  }
  return out;
}

Tensor log_softmax_temperature(GradTape* tape, const Tensor& logits, double temperature) {
  check_temperature(temperature, "log_softmax_temperature");
  check_finite_input(logits, "log_softmax_temperature");
  const auto [rows, width] = rows_and_width(logits, "log_softmax_temperature");

  Tensor out = Tensor::zeros(logits.shape());
  const double inv_t = 1.0 / temperature;
  for (int64_t r = 0; r < rows; ++r) {
    const double* zr = logits.data().data() + static_cast<size_t>(r) * width;
    double* yr = out.data().data() + static_cast<size_t>(r) * width;
    double mx = zr[0];
    for (int j = 1; j < width; ++j) mx = std::max(mx, zr[j]);
    double denom = 0.0;
    for (int j = 0; j < width; ++j) {
      yr[j] = (zr[j] - mx) * inv_t;
      denom += std::exp(yr[j]);
    }
    const double lse = std::log(denom);
    for (int j = 0; j < width; ++j) yr[j] -= lse;
  }

  if (grad_needed(tape, {&logits})) {
    out.set_requires_grad(true);
    tape->record(out, {logits}, [logits, out, rows, width, inv_t]() mutable {
      const double* g = out.grad().data();
      const double* y = out.data().data();
      auto& gz = logits.grad();
      for (int64_t r = 0; r < rows; ++r) {
        const double* gr = g + static_cast<size_t>(r) * width;
        const double* yr = y + static_cast<size_t>(r) * width;
        double gsum = 0.0;
        for (int j = 0; j < width; ++j) gsum += gr[j];
        double* gzr = gz.data() + static_cast<size_t>(r) * width;
        for (int j = 0; j < width; ++j) gzr[j] += (gr[j] - std::exp(yr[j]) * gsum) * inv_t;
      }
    });
  }
  return out;
}

Tensor kl_divergence(GradTape* tape, const Tensor& p, const Tensor& log_q) {
  if (p.shape() != log_q.shape()) {
    throw ShapeError("kl_divergence: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(log_q.shape()));
  }
  const auto [rows, width] = rows_and_width(p, "kl_divergence");

  // preconditions: p rows are probability vectors, log_q rows normalize
  for (int64_t r = 0; r < rows; ++r) {
    const double* pr = p.data().data() + static_cast<size_t>(r) * width;
    double sum = 0.0;
    for (int j = 0; j < width; ++j) {
      if (!(pr[j] >= 0.0)) throw DomainError("kl_divergence: p row " + std::to_string(r) + " has a negative or NaN entry");
      sum += pr[j];
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw DomainError("kl_divergence: p row " + std::to_string(r) + " sums to " + std::to_string(sum) + ", not 1");
    }
    const double* qr = log_q.data().data() + static_cast<size_t>(r) * width;
    double mx = qr[0];
    for (int j = 1; j < width; ++j) mx = std::max(mx, qr[j]);
    if (std::isnan(mx) || mx == std::numeric_limits<double>::infinity()) {
      throw DomainError("kl_divergence: log_q row " + std::to_string(r) + " has a NaN or +inf entry");
    }
    double lse_acc = 0.0;
    for (int j = 0; j < width; ++j) lse_acc += std::exp(qr[j] - mx);
    const double lse = mx + std::log(lse_acc);
    if (std::abs(lse) > 1e-6) {
      throw DomainError("kl_divergence: log_q row " + std::to_string(r) + " does not normalize (logsumexp = " + std::to_string(lse) + ")");
    }
  }

  Tensor out = Tensor::zeros({static_cast<int>(rows)});
  for (int64_t r = 0; r < rows; ++r) {
    const double* pr = p.data().data() + static_cast<size_t>(r) * width;
    const double* qr = log_q.data().data() + static_cast<size_t>(r) * width;
    double acc = 0.0;
    for (int j = 0; j < width; ++j) {
      if (pr[j] > 0.0) acc += pr[j] * (std::log(pr[j]) - qr[j]);  // p=0 terms contribute nothing
    }
    out.data()[static_cast<size_t>(r)] = acc;
  }

  if (grad_needed(tape, {&p, &log_q})) {
    out.set_requires_grad(true);
    tape->record(out, {p, log_q}, [p, log_q, out, rows, width]() mutable {
      const auto& g = out.grad();
      if (log_q.requires_grad()) {
        auto& gq = log_q.grad();
        for (int64_t r = 0; r < rows; ++r) {
          const double gr = g[static_cast<size_t>(r)];
          const double* pr = p.data().data() + static_cast<size_t>(r) * width;
          double* gqr = gq.data() + static_cast<size_t>(r) * width;
          for (int j = 0; j < width; ++j) gqr[j] -= pr[j] * gr;
        }
      }
      if (p.requires_grad()) {
        auto& gp = p.grad();
        for (int64_t r = 0; r < rows; ++r) {
          const double gr = g[static_cast<size_t>(r)];
          const double* pr = p.data().data() + static_cast<size_t>(r) * width;
          const double* qr = log_q.data().data() + static_cast<size_t>(r) * width;
          double* gpr = gp.data() + static_cast<size_t>(r) * width;
          for (int j = 0; j < width; ++j) {
            if (pr[j] > 0.0) gpr[j] += (std::log(pr[j]) + 1.0 - qr[j]) * gr;
          }
        }
      }
    });
  }
  return out;
}

Tensor cross_entropy(GradTape* tape, const Tensor& logits, std::span<const int32_t> targets) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be [N,V], got " + shape_str(logits.shape()));
  const int n = logits.dim(0), v = logits.dim(1);
  if (static_cast<int>(targets.size()) != n) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(n) + " rows");
  }
  for (int i = 0; i < n; ++i) {
    if (targets[static_cast<size_t>(i)] < 0 || targets[static_cast<size_t>(i)] >= v) {
      throw IndexError("cross_entropy: target " + std::to_string(targets[static_cast<size_t>(i)]) + " at row " + std::to_string(i) + " out of range [0," + std::to_string(v) + ")");
    }
  }

  auto probs = std::make_shared<std::vector<double>>(logits.data().size());
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const double* zr = logits.data().data() + static_cast<size_t>(i) * v;
    double* pr = probs->data() + static_cast<size_t>(i) * v;
    double mx = zr[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, zr[j]);
    double denom = 0.0;
    for (int j = 0; j < v; ++j) {
      pr[j] = std::exp(zr[j] - mx);
      denom += pr[j];
    }
    const double inv_d = 1.0 / denom;
    for (int j = 0; j < v; ++j) pr[j] *= inv_d;
    total += std::log(denom) - (zr[targets[static_cast<size_t>(i)]] - mx);
  }
  Tensor out = Tensor::scalar(total / n);

  if (grad_needed(tape, {&logits})) {
    out.set_requires_grad(true);
    std::vector<int32_t> tgt(targets.begin(), targets.end());
    tape->record(out, {logits}, [logits, out, probs, tgt = std::move(tgt), n, v]() mutable {
      const double s = out.grad()[0] / n;
      auto& gz = logits.grad();
      for (int i = 0; i < n; ++i) {
        const double* pr = probs->data() + static_cast<size_t>(i) * v;
        double* gr = gz.data() + static_cast<size_t>(i) * v;
        const int y = tgt[static_cast<size_t>(i)];
        for (int j = 0; j < v; ++j) gr[j] += (pr[j] - (j == y ? 1.0 : 0.0)) * s;
      }
    });
  }
  return out;
}

}  // namespace distilforge
