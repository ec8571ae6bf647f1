#pragma once

// Single-file archive of named weight arrays plus a JSON manifest.
//
// Layout (little-endian):
//   "CASCCKPT" | u32 version | u64 manifest length | manifest JSON bytes
//   u64 array count | per array, in name order:
//     u32 name length | name | u8 dtype | u32 rank | i64 dims[rank] | u64 byte count | raw data
// Serialization is canonical, so save -> load -> save reproduces identical bytes.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace casc {

class Checkpoint {
 public:
  nlohmann::json manifest = nlohmann::json::object();
  std::map<std::string, torch::Tensor> arrays;

  std::vector<uint8_t> serialize() const;
  static Checkpoint deserialize(const std::vector<uint8_t>& bytes);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  /// Copies parameters and buffers of `module` under "<prefix>.<name>".
  void store_module(const std::string& prefix, const torch::nn::Module& module);
  /// Restores a module written by store_module; ConfigError on missing or mismatched arrays.
  void restore_module(const std::string& prefix, torch::nn::Module& module) const;

  bool has_prefix(const std::string& prefix) const;
};

}  // namespace casc
