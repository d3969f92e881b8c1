#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace zslada {

#ifdef ZSLADA_SINGLE_PRECISION
using Real = float;
#else
using Real = double;
#endif

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::Matrix<Real, Eigen::Dynamic, 1>;
using RowVector = Eigen::Matrix<Real, 1, Eigen::Dynamic>;

enum class ErrorCode {
  dimension_mismatch,
  stale_cache,
  non_finite,
  unknown_class,
  empty_class,
  empty_batch,
  label_out_of_range,
  missing_file,
  ragged_rows,
  parse_error,
  split_overlap,
  split_unknown_class,
  infeasible_separation,
  invalid_config,
  untrained_classifier,
  io_error,
};

std::string_view to_string(ErrorCode code);

// Numerical failures map to CLI exit code 3, everything else to 2.
bool is_numerical(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// FNV-1a over raw bytes; used for checkpoint and attribute fingerprints.
std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ULL);

std::string hex64(std::uint64_t value);

}  // namespace zslada
