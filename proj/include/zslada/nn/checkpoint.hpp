#pragma once

#include "zslada/nn/mlp.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>

namespace zslada::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Container layout:
///   8 bytes   magic "ZSLMLP\0\0"
///   u32 LE    format version
///   u64 LE    header length
///   header    JSON {spec, seed, param_count, batchnorm_momentum}
///   f64 LE    parameters
///   f64 LE    running mean then variance, for each batchnorm layer in order
struct Checkpoint {
  MlpNetwork network;
  std::uint64_t seed = 0;
};

void write_checkpoint(std::ostream& out, const MlpNetwork& net, std::uint64_t seed);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const MlpNetwork& net, std::uint64_t seed);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace zslada::nn
