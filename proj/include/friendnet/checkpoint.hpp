#pragma once

// Self-describing weight container shared by the detector and the dehazer.
//
//   bytes 0..7   "FNETCKPT"
//   bytes 8..11  format version (uint32, little endian)
//   bytes 12..19 header length L (uint64, little endian)
//   next L bytes JSON header: kind, config echo, tensor directory, checksum
//   remainder    float32 little-endian tensor data, in directory order
//
// The checksum is FNV-1a (64 bit) over the data section. Writing the same
// weights and config always yields the same bytes.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "friendnet/nn/module.hpp"
#include "friendnet/tensor.hpp"
#include "json.hpp"

namespace friendnet {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
};

struct Checkpoint {
  std::string kind;  // "detector" or "dehazer"
  nlohmann::json config;
  std::vector<NamedTensor> tensors;
  std::uint64_t checksum = 0;
};

std::uint64_t fnv1a64(const void* data, std::size_t bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string checksum_hex(std::uint64_t checksum);

/// Parameters then buffers, by dotted name.
Checkpoint snapshot(const nn::Module<float>& module, std::string kind, nlohmann::json config);
/// Checksum of the same byte stream a checkpoint of `module` would carry.
std::uint64_t module_checksum(const nn::Module<float>& module);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
/// Throws CheckpointError on bad magic, truncation or checksum mismatch.
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies tensors into a module with identical names and shapes.
void load_into(const Checkpoint& checkpoint, nn::Module<float>& module);

}  // namespace friendnet
