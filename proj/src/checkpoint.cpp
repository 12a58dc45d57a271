#include "distilforge/checkpoint.hpp"

#include <algorithm>

#include "distilforge/bytes.hpp"
#include "distilforge/fsio.hpp"

namespace distilforge {

static constexpr char kCheckpointMagic[4] = {'K', 'D', 'C', 'K'};

std::string canonical_config_json(const ModelConfig& config) {
  // nlohmann::json with the default object type keeps keys sorted
  nlohmann::json j{{"vocab_size", config.vocab_size}, {"context_len", config.context_len},
                   {"n_layers", config.n_layers},     {"n_heads", config.n_heads},
                   {"d_model", config.d_model},       {"d_ff", config.d_ff},
                   {"seed", config.seed}};
  return j.dump();
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.context_len = j.at("context_len").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.seed = j.at("seed").get<uint64_t>();
  c.validate();
  return c;
}

static std::string checkpoint_body(const Model& m) {
  ByteWriter w;
  w.put_bytes(kCheckpointMagic, 4);
  w.put_u32(kCheckpointVersion);

  const std::string cfg = canonical_config_json(m.config);
  w.put_u64(cfg.size());
  w.put_bytes(cfg);

  nlohmann::json manifest = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : m.params) {
    manifest.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += static_cast<uint64_t>(t.numel()) * 8;
  }
  const std::string mj = manifest.dump();
  w.put_u64(mj.size());
  w.put_bytes(mj);

  w.put_u64(offset);  // parameter block byte length
  for (const auto& [name, t] : m.params) {
    for (double v : t.data()) w.put_f64(v);
  }
  return w.take();
}

std::string checkpoint_bytes(const Model& m) {
  std::string body = checkpoint_body(m);
  const Hash32 h = sha256(body);
  body.append(reinterpret_cast<const char*>(h.data()), h.size());
  return body;
}

Hash32 model_content_hash(const Model& m) { return sha256(checkpoint_body(m)); }

Hash32 save_checkpoint(const Model& m, const std::filesystem::path& path) {
  const std::string bytes = checkpoint_bytes(m);
  atomic_write_file(path, bytes);
  Hash32 h{};
  std::copy_n(bytes.end() - 32, 32, h.begin());
  return h;
}

Model load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_file_bytes(path);
  if (bytes.size() < 64) throw FormatError("checkpoint file too small: " + path.string());
  Hash32 stored{};
  std::copy_n(bytes.end() - 32, 32, stored.begin());
  const std::string_view body = std::string_view(bytes).substr(0, bytes.size() - 32);
  if (sha256(body) != stored) throw IntegrityError("checkpoint hash mismatch: " + path.string());

  ByteReader r(body);
  if (r.get_bytes(4) != std::string_view(kCheckpointMagic, 4)) {
    throw FormatError("not a checkpoint file (bad magic): " + path.string());
  }
  const uint32_t version = r.get_u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  }

  const uint64_t cfg_len = r.get_u64();
  const ModelConfig config = config_from_json(nlohmann::json::parse(r.get_bytes(cfg_len)));
  const uint64_t mj_len = r.get_u64();
  const nlohmann::json manifest = nlohmann::json::parse(r.get_bytes(mj_len));
  const uint64_t block_len = r.get_u64();

  // rebuild an initialized skeleton, then overwrite every tensor from the block
  Model m = init_model(config);
  if (manifest.size() != m.params.size()) {
    throw FormatError("checkpoint manifest has " + std::to_string(manifest.size()) + " entries, expected " + std::to_string(m.params.size()));
  }
  uint64_t consumed = 0;
  for (size_t i = 0; i < m.params.size(); ++i) {
    auto& [name, t] = m.params[i];
    const auto& entry = manifest[i];
    if (entry.at("name").get<std::string>() != name) {
      throw FormatError("checkpoint parameter " + std::to_string(i) + " is '" + entry.at("name").get<std::string>() + "', expected '" + name + "'");
    }
    if (entry.at("shape").get<std::vector<int>>() != t.shape()) {
      throw FormatError("checkpoint parameter " + name + " has unexpected shape");
    }
    if (entry.at("offset").get<uint64_t>() != consumed) {
      throw FormatError("checkpoint parameter " + name + " has unexpected offset");
    }
    for (auto& v : t.data()) v = r.get_f64();
    consumed += static_cast<uint64_t>(t.numel()) * 8;
  }
  if (consumed != block_len) throw FormatError("checkpoint parameter block length mismatch");
  if (!r.at_end()) throw FormatError("trailing bytes in checkpoint: " + path.string());
  return m;
}

}  // namespace distilforge
