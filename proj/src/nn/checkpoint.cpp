#include "zslada/nn/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace zslada::nn {

namespace {

constexpr std::array<char, 8> kMagic = {'Z', 'S', 'L', 'M', 'L', 'P', '\0', '\0'};

template <typename U>
void put_le(std::ostream& out, U value) {
  unsigned char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<unsigned char>(value >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <typename U>
U get_le(std::istream& in) {
  unsigned char bytes[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U)))
    throw Error(ErrorCode::parse_error, "checkpoint truncated");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

void put_f64(std::ostream& out, const Vector& v) {
  for (Index i = 0; i < v.size(); ++i) put_le(out, std::bit_cast<std::uint64_t>(static_cast<double>(v[i])));
}

Vector get_f64(std::istream& in, Index n) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = static_cast<Real>(std::bit_cast<double>(get_le<std::uint64_t>(in)));
  return v;
}

}  // namespace

void write_checkpoint(std::ostream& out, const MlpNetwork& net, std::uint64_t seed) {
  nlohmann::json header;
  header["spec"] = net.spec();
  header["seed"] = seed;
  header["param_count"] = net.params().size();
  header["batchnorm_momentum"] = net.batchnorm_momentum();
  const std::string text = header.dump();

  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put_f64(out, net.params());
  for (const auto& stats : net.running_stats()) {
    put_f64(out, stats.mean);
    put_f64(out, stats.var);
  }
  if (!out) throw Error(ErrorCode::io_error, "failed writing checkpoint");
}

Checkpoint read_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic)
    throw Error(ErrorCode::parse_error, "not a network checkpoint (bad magic)");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw Error(ErrorCode::parse_error, "unsupported checkpoint version " + std::to_string(version));
  const auto header_len = get_le<std::uint64_t>(in);
  std::string text(header_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(header_len)))
    throw Error(ErrorCode::parse_error, "checkpoint header truncated");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("checkpoint header: ") + e.what());
  }
  const MlpSpec spec = header.at("spec").get<MlpSpec>();
  Checkpoint ckpt{MlpNetwork(spec, 0), header.at("seed").get<std::uint64_t>()};
  const auto count = header.at("param_count").get<Index>();
  if (count != spec.param_count())
    throw Error(ErrorCode::parse_error, "checkpoint param_count disagrees with its spec");
  ckpt.network.set_batchnorm_momentum(header.value("batchnorm_momentum", 0.1));
  ckpt.network.set_params(get_f64(in, count));
  std::vector<BatchNormStats> stats;
  for (const auto& s : ckpt.network.running_stats()) {
    BatchNormStats loaded;
    loaded.mean = get_f64(in, s.mean.size());
    loaded.var = get_f64(in, s.var.size());
    stats.push_back(std::move(loaded));
  }
  ckpt.network.set_running_stats(std::move(stats));
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const MlpNetwork& net, std::uint64_t seed) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io_error, "cannot open " + path.string() + " for writing");
  write_checkpoint(out, net, seed);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::missing_file, path.string());
  return read_checkpoint(in);
}

}  // namespace zslada::nn
