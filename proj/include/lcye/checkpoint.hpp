#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lcye/nn.hpp"

namespace lcye {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// File layout: 8-byte magic "LCYECKPT", u32 LE format version, u64 LE header
/// length, JSON header, then every array as little-endian float32 in header
/// order. Array names are "<namespace>/<parameter name>".
struct CheckpointHeader {
  std::uint32_t format_version = kCheckpointVersion;
  std::string component;  // victim, mimic, attack
  std::vector<std::string> namespaces;
  nlohmann::json meta = nlohmann::json::object();  // arch names, N, C, H, W
  std::string config_hash;

  struct Array {
    std::string name;
    std::vector<int> shape;
  };
  std::vector<Array> arrays;
};

using NamedLists = std::vector<std::pair<std::string, nn::ParamList>>;

/// Parameters and buffers of every list, in list order.
void save_checkpoint(const std::string& path, const std::string& component, const NamedLists& lists,
                     const nlohmann::json& meta, const std::string& config_hash);

/// Reads the header only. Throws on a missing file, bad magic or version.
CheckpointHeader read_checkpoint_header(const std::string& path);

/// Fills `lists` from the file; names, shapes and the component must match.
CheckpointHeader load_checkpoint(const std::string& path, const std::string& component, const NamedLists& lists);

}  // namespace lcye
