#pragma once

#include <cstdint>
#include <string>

#include "mlrn/model.hpp"

namespace mlrn {
namespace model {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Bit-exact file layout: magic "MLRN", version u32 LE, u64-length-prefixed
// UTF-8 JSON config, then one record per named tensor (name length u32 + name,
// rank u32, dims as u64s, values f64 LE row-major), and a trailing CRC32 of
// everything before it.
void save_checkpoint(const Model& model, const std::string& path);

// Rebuilds the model from the stored config and overwrites every tensor with
// the stored values. Any structural problem (magic, version, CRC, unknown or
// missing tensor, shape mismatch) throws CheckpointError naming the field.
Model load_checkpoint(const std::string& path);

}  // namespace model
}  // namespace mlrn
