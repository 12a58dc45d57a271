#include "distilforge/distill.hpp"

#include <algorithm>
#include <cmath>

#include "distilforge/bytes.hpp"
#include "distilforge/checkpoint.hpp"
#include "distilforge/fsio.hpp"
#include "distilforge/ops.hpp"

namespace distilforge {

void DistillConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ConfigError("alpha must lie in [0,1], got " + std::to_string(alpha));
  }
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("temperature must be positive and finite, got " + std::to_string(temperature));
  }
}

LogitCache cache_teacher_logits(const Model& teacher, const Dataset& dataset) {
  if (teacher.config.vocab_size != static_cast<int>(dataset.vocab.size())) {
    throw ConfigError("teacher vocab size " + std::to_string(teacher.config.vocab_size) +
                      " does not match dataset vocab size " + std::to_string(dataset.vocab.size()));
  }
  if (dataset.max_input_len() > teacher.config.context_len) {
    throw ConfigError("dataset has inputs of length " + std::to_string(dataset.max_input_len()) +
                      " but teacher context is " + std::to_string(teacher.config.context_len));
  }

  LogitCache cache;
  cache.dataset_id = dataset.content_hash;
  cache.teacher_id = model_content_hash(teacher);
  cache.entries.reserve(dataset.examples.size());
  for (size_t i = 0; i < dataset.examples.size(); ++i) {
    const auto& input = dataset.examples[i].input;
    Tensor logits = forward(teacher, input);
    LogitCache::Entry e;
    e.example = static_cast<int64_t>(i);
    e.len = static_cast<int>(input.size());
    e.vocab = teacher.config.vocab_size;
    e.logits = logits.data();
    cache.entries.push_back(std::move(e));
  }
  return cache;
}

KdParts kd_loss_parts(GradTape* tape, const Tensor& student_logits, const Tensor& teacher_logits,
                      std::span<const int32_t> targets, const DistillConfig& cfg) {
  cfg.validate();
  if (student_logits.rank() != 2 || teacher_logits.rank() != 2 || student_logits.shape() != teacher_logits.shape()) {
    throw ShapeError("kd_loss: student " + shape_str(student_logits.shape()) + " and teacher " +
                     shape_str(teacher_logits.shape()) + " must be matching [N,V]");
  }
  const double t = cfg.temperature;
  const double t2 = t * t;

  Tensor ce = cross_entropy(tape, student_logits, targets);

  // teacher side off-tape: the reference distribution is frozen
  Tensor soft_teacher = softmax_temperature(nullptr, teacher_logits, t);
  Tensor log_soft_student = log_softmax_temperature(tape, student_logits, t);
  Tensor kl_rows = kl_divergence(tape, soft_teacher, log_soft_student);
  Tensor kl_mean = mean_all(tape, kl_rows);

  KdParts parts;
  parts.ce = ce.item();
  parts.kd = t2 * kl_mean.item();
  parts.total = add(tape, scale(tape, ce, cfg.alpha), scale(tape, kl_mean, (1.0 - cfg.alpha) * t2));
  return parts;
}

Tensor kd_loss(GradTape* tape, const Tensor& student_logits, const Tensor& teacher_logits,
               std::span<const int32_t> targets, const DistillConfig& cfg) {
  return kd_loss_parts(tape, student_logits, teacher_logits, targets, cfg).total;
}

// --- container ----------------------------------------------------------

static constexpr char kCacheMagic[4] = {'K', 'D', 'L', 'C'};
static constexpr uint32_t kCacheVersion = 1;

static std::string cache_bytes_without_hash(const LogitCache& cache) {
  ByteWriter w;
  w.put_bytes(kCacheMagic, 4);
  w.put_u32(kCacheVersion);
  w.put_bytes(cache.dataset_id.data(), cache.dataset_id.size());
  w.put_bytes(cache.teacher_id.data(), cache.teacher_id.size());
  w.put_u64(cache.entries.size());
  for (const auto& e : cache.entries) {
    w.put_u64(static_cast<uint64_t>(e.example));
    w.put_u32(static_cast<uint32_t>(e.len));
    w.put_u32(static_cast<uint32_t>(e.vocab));
    for (double v : e.logits) w.put_f64(v);
  }
  return w.take();
}

Hash32 logit_cache_hash(const LogitCache& cache) { return sha256(cache_bytes_without_hash(cache)); }

void save_logit_cache(const LogitCache& cache, const std::filesystem::path& path) {
  std::string bytes = cache_bytes_without_hash(cache);
  const Hash32 h = sha256(bytes);
  bytes.append(reinterpret_cast<const char*>(h.data()), h.size());
  atomic_write_file(path, bytes);
}

LogitCache load_logit_cache(const std::filesystem::path& path) {
  const std::string bytes = read_file_bytes(path);
  if (bytes.size() < 112) throw FormatError("logit cache file too small: " + path.string());
  Hash32 stored{};
  std::copy_n(bytes.end() - 32, 32, stored.begin());
  const std::string_view body = std::string_view(bytes).substr(0, bytes.size() - 32);
  if (sha256(body) != stored) throw IntegrityError("logit cache hash mismatch: " + path.string());

  ByteReader r(body);
  if (r.get_bytes(4) != std::string_view(kCacheMagic, 4)) {
    throw FormatError("not a logit cache file (bad magic): " + path.string());
  }
  const uint32_t version = r.get_u32();
  if (version != kCacheVersion) {
    throw FormatError("unsupported logit cache version " + std::to_string(version) + " in " + path.string());
  }
  LogitCache cache;
  auto read_hash = [&r]() {
    Hash32 h{};
    const std::string_view b = r.get_bytes(32);
    std::copy(b.begin(), b.end(), reinterpret_cast<char*>(h.data()));
    return h;
  };
  cache.dataset_id = read_hash();
  cache.teacher_id = read_hash();
  const uint64_t n = r.get_u64();
  cache.entries.reserve(n);
  for (uint64_t i = 0; i < n; ++i) {
    LogitCache::Entry e;
    e.example = static_cast<int64_t>(r.get_u64());
    e.len = static_cast<int>(r.get_u32());
    e.vocab = static_cast<int>(r.get_u32());
    if (e.len < 0 || e.vocab < 0) throw FormatError("logit cache entry has bad dimensions: " + path.string());
    const size_t count = static_cast<size_t>(e.len) * static_cast<size_t>(e.vocab);
    e.logits.reserve(count);
    for (size_t j = 0; j < count; ++j) e.logits.push_back(r.get_f64());
    cache.entries.push_back(std::move(e));
  }
  if (!r.at_end()) throw FormatError("trailing bytes in logit cache: " + path.string());
  return cache;
}

}  // namespace distilforge
