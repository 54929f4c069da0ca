#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "edulm/model.hpp"

namespace edulm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    ModelConfig config;
    EncoderParams<float> params;
    /// "base", "domain-adapted", "distilled", "fine-tuned:<task>", ...
    std::string provenance;
};

// Layout: "EDLM", u32 version, u32 length + config text (with a trailing
// provenance= line), u32 tensor count, then per tensor u32 name length + name,
// u8 rank, u32 dims, f32 payload. All integers and floats little-endian.
std::string serialize_checkpoint(const Checkpoint &checkpoint);

/// Throws FormatError (with offset) on undecodable bytes and IntegrityError
/// when the tensor table disagrees with the config.
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint &checkpoint, const std::filesystem::path &path);
Checkpoint load_checkpoint(const std::filesystem::path &path);

}  // namespace edulm
