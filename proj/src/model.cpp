#include "distilforge/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "distilforge/ops.hpp"
#include "distilforge/rng.hpp"

namespace distilforge {

void ModelConfig::validate() const {
  if (vocab_size < 1) throw ConfigError("vocab_size must be >= 1, got " + std::to_string(vocab_size));
  if (context_len < 1) throw ConfigError("context_len must be >= 1, got " + std::to_string(context_len));
  if (n_layers < 1) throw ConfigError("n_layers must be >= 1, got " + std::to_string(n_layers));
  if (n_heads < 1) throw ConfigError("n_heads must be >= 1, got " + std::to_string(n_heads));
  if (d_model < 1) throw ConfigError("d_model must be >= 1, got " + std::to_string(d_model));
  if (d_ff < 1) throw ConfigError("d_ff must be >= 1, got " + std::to_string(d_ff));
  if (d_model % n_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " + std::to_string(n_heads));
  }
}

int64_t ModelConfig::n_params() const {
  const int64_t v = vocab_size, c = context_len, d = d_model, f = d_ff, l = n_layers;
  // per layer: two norms (2d each), four d*d projections with biases, mlp
  const int64_t per_layer = 2 * 2 * d + 4 * (d * d + d) + (d * f + f) + (f * d + d);
  return v * d + c * d + l * per_layer + 2 * d + d * v;
}

ModelConfig default_teacher_config(int vocab_size, int context_len, uint64_t seed) {
  return ModelConfig{vocab_size, context_len, 4, 4, 128, 512, seed};
}

ModelConfig default_student_config(int vocab_size, int context_len, uint64_t seed) {
  return ModelConfig{vocab_size, context_len, 2, 2, 64, 256, seed};
}

Tensor& Model::param(const std::string& name) {
  for (auto& [n, t] : params) {
    if (n == name) return t;
  }
  throw ConfigError("model has no parameter named " + name);
}

const Tensor& Model::param(const std::string& name) const {
  return const_cast<Model*>(this)->param(name);
}

void Model::zero_grads() {
  for (auto& [n, t] : params) t.clear_grad();
}

void Model::set_requires_grad(bool v) {
  for (auto& [n, t] : params) t.set_requires_grad(v);
}

Model init_model(const ModelConfig& config) {
  config.validate();
  Model m;
  m.config = config;
  Rng rng(config.seed);

  auto weight = [&](const std::string& name, std::vector<int> shape) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    for (auto& x : t.data()) x = 0.02 * rng.next_normal();
    m.params.emplace_back(name, std::move(t));
  };
  auto zeros = [&](const std::string& name, std::vector<int> shape) {
    m.params.emplace_back(name, Tensor::zeros(std::move(shape), true));
  };
  auto ones = [&](const std::string& name, std::vector<int> shape) {
    m.params.emplace_back(name, Tensor::full(std::move(shape), 1.0));
    m.params.back().second.set_requires_grad(true);
  };

  const int d = config.d_model, f = config.d_ff;
  weight("tok_emb", {config.vocab_size, d});
  weight("pos_emb", {config.context_len, d});
  for (int l = 0; l < config.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    ones(p + "ln1.g", {d});
    zeros(p + "ln1.b", {d});
    weight(p + "attn.wq", {d, d});
    zeros(p + "attn.bq", {d});
    weight(p + "attn.wk", {d, d});
    zeros(p + "attn.bk", {d});
    weight(p + "attn.wv", {d, d});
    zeros(p + "attn.bv", {d});
    weight(p + "attn.wo", {d, d});
    zeros(p + "attn.bo", {d});
    ones(p + "ln2.g", {d});
    zeros(p + "ln2.b", {d});
    weight(p + "mlp.w1", {d, f});
    zeros(p + "mlp.b1", {f});
    weight(p + "mlp.w2", {f, d});
    zeros(p + "mlp.b2", {d});
  }
  ones("ln_f.g", {d});
  zeros("ln_f.b", {d});
  weight("head.w", {d, config.vocab_size});
  return m;
}

// out[r, :] = tok_emb[tokens[r], :] + pos_emb[r % len, :]
static Tensor embed(GradTape* tape, const Tensor& tok_emb, const Tensor& pos_emb,
                    std::span<const int32_t> tokens, int batch, int len) {
  const int d = tok_emb.dim(1);
  Tensor out = Tensor::zeros({batch * len, d});
  for (int r = 0; r < batch * len; ++r) {
    const double* te = tok_emb.data().data() + static_cast<size_t>(tokens[static_cast<size_t>(r)]) * d;
    const double* pe = pos_emb.data().data() + static_cast<size_t>(r % len) * d;
    double* o = out.data().data() + static_cast<size_t>(r) * d;
    for (int j = 0; j < d; ++j) o[j] = te[j] + pe[j];
  }

  if (grad_needed(tape, {&tok_emb, &pos_emb})) {
    out.set_requires_grad(true);
    std::vector<int32_t> toks(tokens.begin(), tokens.end());
    tape->record(out, {tok_emb, pos_emb}, [tok_emb, pos_emb, out, toks = std::move(toks), batch, len, d]() mutable {
      const double* g = out.grad().data();
      for (int r = 0; r < batch * len; ++r) {
        const double* gr = g + static_cast<size_t>(r) * d;
        if (tok_emb.requires_grad()) {
          double* gt = tok_emb.grad().data() + static_cast<size_t>(toks[static_cast<size_t>(r)]) * d;
          for (int j = 0; j < d; ++j) gt[j] += gr[j];
        }
        if (pos_emb.requires_grad()) {
          double* gp = pos_emb.grad().data() + static_cast<size_t>(r % len) * d;
          for (int j = 0; j < d; ++j) gp[j] += gr[j];
        }
      }
    });
  }
  return out;
}

// Multi-head scaled dot-product attention with a causal mask, fused into one
// tape node. q/k/v are [batch*len, d_model]; softmax rows cover keys <= query
// position only, so no future token influences the output.
static Tensor causal_attention(GradTape* tape, const Tensor& q, const Tensor& k, const Tensor& v,
                               int batch, int len, int n_heads) {
  const int d = q.dim(1);
  const int dh = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor out = Tensor::zeros({batch * len, d});

  // per-(sequence, head) softmax weights saved for backward
  auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(batch) * n_heads * len * len, 0.0);

  std::vector<double> qc(static_cast<size_t>(len) * dh), kc(qc.size()), vc(qc.size()), cc(qc.size());
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < n_heads; ++h) {
      const int col = h * dh;
      for (int t = 0; t < len; ++t) {
        const size_t row = static_cast<size_t>(b) * len + t;
        std::copy_n(q.data().data() + row * d + col, dh, qc.data() + static_cast<size_t>(t) * dh);
        std::copy_n(k.data().data() + row * d + col, dh, kc.data() + static_cast<size_t>(t) * dh);
        std::copy_n(v.data().data() + row * d + col, dh, vc.data() + static_cast<size_t>(t) * dh);
      }
      double* pr = probs->data() + (static_cast<size_t>(b) * n_heads + h) * len * len;
      for (int i = 0; i < len; ++i) {
        double* pi = pr + static_cast<size_t>(i) * len;
        const double* qi = qc.data() + static_cast<size_t>(i) * dh;
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j <= i; ++j) {
          const double* kj = kc.data() + static_cast<size_t>(j) * dh;
          double s = 0.0;
          for (int e = 0; e < dh; ++e) s += qi[e] * kj[e];
          pi[j] = s * scale;
          mx = std::max(mx, pi[j]);
        }
        double denom = 0.0;
        for (int j = 0; j <= i; ++j) {
          pi[j] = std::exp(pi[j] - mx);
          denom += pi[j];
        }
        const double inv_d = 1.0 / denom;
        for (int j = 0; j <= i; ++j) pi[j] *= inv_d;
      }
      std::fill(cc.begin(), cc.end(), 0.0);
      gemm_nn(pr, vc.data(), cc.data(), len, len, dh);
      for (int t = 0; t < len; ++t) {
        const size_t row = static_cast<size_t>(b) * len + t;
        std::copy_n(cc.data() + static_cast<size_t>(t) * dh, dh, out.data().data() + row * d + col);
      }
    }
  }

  if (grad_needed(tape, {&q, &k, &v})) {
    out.set_requires_grad(true);
    tape->record(out, {q, k, v}, [q, k, v, out, probs, batch, len, n_heads, d, dh, scale]() mutable {
      std::vector<double> qc(static_cast<size_t>(len) * dh), kc(qc.size()), vc(qc.size());
      std::vector<double> dq(qc.size()), dk(qc.size()), dv(qc.size()), dc(qc.size());
      std::vector<double> dp(static_cast<size_t>(len) * len), ds(dp.size());
      const double* g = out.grad().data();
      for (int b = 0; b < batch; ++b) {
        for (int h = 0; h < n_heads; ++h) {
          const int col = h * dh;
          for (int t = 0; t < len; ++t) {
            const size_t row = static_cast<size_t>(b) * len + t;
            std::copy_n(q.data().data() + row * d + col, dh, qc.data() + static_cast<size_t>(t) * dh);
            std::copy_n(k.data().data() + row * d + col, dh, kc.data() + static_cast<size_t>(t) * dh);
            std::copy_n(v.data().data() + row * d + col, dh, vc.data() + static_cast<size_t>(t) * dh);
            std::copy_n(g + row * d + col, dh, dc.data() + static_cast<size_t>(t) * dh);
          }
          const double* pr = probs->data() + (static_cast<size_t>(b) * n_heads + h) * len * len;
          // dP = dC V^T, dV = P^T dC
          std::fill(dp.begin(), dp.end(), 0.0);
          std::fill(dv.begin(), dv.end(), 0.0);
          gemm_nt(dc.data(), vc.data(), dp.data(), len, dh, len);
          gemm_tn(pr, dc.data(), dv.data(), len, len, dh);
          // softmax jacobian per row; masked entries have p = 0 and drop out
          for (int i = 0; i < len; ++i) {
            const double* pi = pr + static_cast<size_t>(i) * len;
            const double* dpi = dp.data() + static_cast<size_t>(i) * len;
            double* dsi = ds.data() + static_cast<size_t>(i) * len;
            double dot = 0.0;
            for (int j = 0; j <= i; ++j) dot += dpi[j] * pi[j];
            for (int j = 0; j < len; ++j) dsi[j] = j <= i ? pi[j] * (dpi[j] - dot) * scale : 0.0;
          }
          // dQ = dS K, dK = dS^T Q (scale folded into dS)
          std::fill(dq.begin(), dq.end(), 0.0);
          std::fill(dk.begin(), dk.end(), 0.0);
          gemm_nn(ds.data(), kc.data(), dq.data(), len, len, dh);
          gemm_tn(ds.data(), qc.data(), dk.data(), len, len, dh);
          for (int t = 0; t < len; ++t) {
            const size_t row = static_cast<size_t>(b) * len + t;
            if (q.requires_grad()) {
              double* dst = q.grad().data() + row * d + col;
              for (int e = 0; e < dh; ++e) dst[e] += dq[static_cast<size_t>(t) * dh + e];
            }
            if (k.requires_grad()) {
              double* dst = k.grad().data() + row * d + col;
              for (int e = 0; e < dh; ++e) dst[e] += dk[static_cast<size_t>(t) * dh + e];
            }
            if (v.requires_grad()) {
              double* dst = v.grad().data() + row * d + col;
              for (int e = 0; e < dh; ++e) dst[e] += dv[static_cast<size_t>(t) * dh + e];
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor forward_batch(const Model& m, std::span<const int32_t> tokens, int batch, int len, GradTape* tape) {
  const ModelConfig& cfg = m.config;
  if (batch < 1 || len < 1 || len > cfg.context_len) {
    throw ShapeError("forward: sequence length " + std::to_string(len) + " outside [1," + std::to_string(cfg.context_len) + "]");
  }
  if (static_cast<int64_t>(tokens.size()) != static_cast<int64_t>(batch) * len) {
    throw ShapeError("forward: token buffer size " + std::to_string(tokens.size()) + " does not match batch " + std::to_string(batch) + " x len " + std::to_string(len));
  }
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] >= cfg.vocab_size) {
      throw IndexError("forward: token id " + std::to_string(tokens[i]) + " at position " + std::to_string(i) + " out of range [0," + std::to_string(cfg.vocab_size) + ")");
    }
  }

  Tensor x = embed(tape, m.param("tok_emb"), m.param("pos_emb"), tokens, batch, len);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    Tensor h = layer_norm(tape, x, m.param(p + "ln1.g"), m.param(p + "ln1.b"));
    Tensor q = linear(tape, h, m.param(p + "attn.wq"), m.param(p + "attn.bq"));
    Tensor k = linear(tape, h, m.param(p + "attn.wk"), m.param(p + "attn.bk"));
    Tensor v = linear(tape, h, m.param(p + "attn.wv"), m.param(p + "attn.bv"));
    Tensor a = causal_attention(tape, q, k, v, batch, len, cfg.n_heads);
    x = add(tape, x, linear(tape, a, m.param(p + "attn.wo"), m.param(p + "attn.bo")));
    Tensor h2 = layer_norm(tape, x, m.param(p + "ln2.g"), m.param(p + "ln2.b"));
    Tensor ff = linear(tape, gelu(tape, linear(tape, h2, m.param(p + "mlp.w1"), m.param(p + "mlp.b1"))),
                       m.param(p + "mlp.w2"), m.param(p + "mlp.b2"));
    x = add(tape, x, ff);
  }
  x = layer_norm(tape, x, m.param("ln_f.g"), m.param("ln_f.b"));
  return matmul(tape, x, m.param("head.w"));
}

Tensor forward(const Model& m, std::span<const int32_t> tokens, GradTape* tape) {
  return forward_batch(m, tokens, 1, static_cast<int>(tokens.size()), tape);
}

}  // namespace distilforge
