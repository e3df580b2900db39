#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "hrsketch/tensor.hpp"

namespace hrsketch {

// Binary checkpoint container, little-endian:
//
//   char[8]  magic "HRSKCKPT"
//   u32      version (1)
//   u64      header length H, then H bytes of UTF-8 JSON
//   u64      record count R, then R records of
//              u32 name length, name bytes,
//              u32 rank, u64 dims[rank],
//              f64 values[prod(dims)] in row-major order
//
// The JSON header carries the network config under "network" plus any
// caller metadata. Values are written as raw IEEE-754 doubles so a
// save/load cycle is bit-exact.
struct Checkpoint {
  nlohmann::json header;
  std::map<std::string, Tensor> tensors;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace hrsketch
