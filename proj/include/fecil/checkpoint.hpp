#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "fecil/backbone.hpp"
#include "fecil/dataset.hpp"
#include "fecil/errors.hpp"

namespace fecil {

inline constexpr char kCheckpointMagic[8] = {'F', 'E', 'C', 'I', 'L', 'C', 'K', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Little-endian container:
///   magic "FECILCK1" | u32 version | u32 tensor count
///   per tensor: u32 name length | name bytes | u32 rank | u32 dims[rank] | f32 payload
///   u32 class count | u32 class ids | u32 echo length | echo bytes
struct Container {
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::vector<int> class_ids;
  std::string echo;

  const Tensor& tensor(const std::string& name) const;
  bool has(const std::string& name) const;
};

std::vector<std::uint8_t> encode_container(const Container& c);
Container decode_container(const std::vector<std::uint8_t>& bytes);
void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

struct ModelCheckpoint {
  CompactNetwork net;
  Normalization norm;
  std::string echo;
};

/// The compact model, its input normalization and a config echo. `extra_echo`
/// is appended after the backbone config lines.
Container to_container(CompactNetwork& net, const Normalization& norm, const std::string& extra_echo = {});
ModelCheckpoint from_container(const Container& c);

void save_model(const std::filesystem::path& path, CompactNetwork& net, const Normalization& norm,
                const std::string& extra_echo = {});
ModelCheckpoint load_model(const std::filesystem::path& path);

}  // namespace fecil
