#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

#include "distilforge/hash.hpp"
#include "distilforge/model.hpp"

namespace distilforge {

// Checkpoint container: "KDCK" | version u32 | config json (canonical, length
// prefixed) | parameter manifest json (name, shape, offset into the block) |
// parameter block of little-endian f64 | sha-256 over everything preceding.
// The trailing hash doubles as the model's content identity: the layout is a
// pure function of (config, parameters), with no timestamps.
inline constexpr uint32_t kCheckpointVersion = 1;

// Canonical JSON: sorted keys, no insignificant whitespace.
std::string canonical_config_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

std::string checkpoint_bytes(const Model& m);  // full file image incl. trailing hash
Hash32 model_content_hash(const Model& m);     // the hash embedded in that image

Hash32 save_checkpoint(const Model& m, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace distilforge
