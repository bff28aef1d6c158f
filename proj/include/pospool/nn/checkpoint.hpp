#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pospool/nn/model.hpp"

namespace pospool {

// Checkpoint layout, all integers little-endian:
//   "PPL1" | u32 version (=1) | u64 header length | UTF-8 JSON header
//   | raw f32 blobs in tensor-table order
// The header is {"spec": <model spec>, "tensors": [{name, shape, offset}]}
// where offset counts bytes from the start of the blob section.
inline constexpr char kCheckpointMagic[4] = {'P', 'P', 'L', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public Error {
public:
    explicit CheckpointError(const std::string& message) : Error(ErrorKind::Checkpoint, message) {}
};

std::vector<std::uint8_t> serialize_checkpoint(const Model& model);
Model deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace pospool
