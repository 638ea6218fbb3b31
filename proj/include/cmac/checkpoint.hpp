#pragma once

#include <cstdint>
#include <string>

#include "cmac/config.hpp"
#include "cmac/model.hpp"

// Checkpoint layout (little-endian):
//   8 bytes  "CMACCKPT"
//   u32      format version (1)
//   u64      manifest length M
//   M bytes  JSON manifest: config echo, step, seed, bank counters and the
//            ordered tensor index [{name, shape}]
//   for each indexed tensor: numel x f64
// Tensors: every model parameter and normalisation buffer (online, target,
// saliency heads), SGD momentum buffers as "sgd.<name>", and the two bank
// slot arrays as "bank.visual" / "bank.audio".
namespace cmac {

struct CheckpointInfo {
  std::size_t step = 0;
  std::uint64_t seed = 0;
  std::string config_echo;
};

void save_checkpoint(const std::string& path, CmacModel& model, const RunConfig& cfg, std::size_t step);
// Restores into a model built from the same configuration. Throws
// FormatError on any mismatch.
CheckpointInfo load_checkpoint(const std::string& path, CmacModel& model);
CheckpointInfo read_checkpoint_info(const std::string& path);

}  // namespace cmac
