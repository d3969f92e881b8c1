#include "zslada/common.hpp"
#include "zslada/parallel.hpp"
#include "zslada/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <thread>

namespace zslada {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::dimension_mismatch: return "DIMENSION_MISMATCH";
    case ErrorCode::stale_cache: return "STALE_CACHE";
    case ErrorCode::non_finite: return "NON_FINITE";
    case ErrorCode::unknown_class: return "UNKNOWN_CLASS";
    case ErrorCode::empty_class: return "EMPTY_CLASS";
    case ErrorCode::empty_batch: return "EMPTY_BATCH";
    case ErrorCode::label_out_of_range: return "LABEL_OUT_OF_RANGE";
    case ErrorCode::missing_file: return "MISSING_FILE";
    case ErrorCode::ragged_rows: return "RAGGED_ROWS";
    case ErrorCode::parse_error: return "PARSE_ERROR";
    case ErrorCode::split_overlap: return "SPLIT_OVERLAP";
    case ErrorCode::split_unknown_class: return "SPLIT_UNKNOWN_CLASS";
    case ErrorCode::infeasible_separation: return "INFEASIBLE_SEPARATION";
    case ErrorCode::invalid_config: return "INVALID_CONFIG";
    case ErrorCode::untrained_classifier: return "UNTRAINED_CLASSIFIER";
    case ErrorCode::io_error: return "IO_ERROR";
  }
  return "UNKNOWN";
}

bool is_numerical(ErrorCode code) { return code == ErrorCode::non_finite; }

int eval_threads() {
  if (const char* env = std::getenv("ZSLADA_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng Rng::stream(std::uint64_t seed, std::string_view name) {
  const std::uint64_t name_hash = fnv1a(name.data(), name.size());
  return Rng(splitmix64(seed ^ splitmix64(name_hash)));
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n <= 1) return 0;
  // Rejection on the top of the range removes modulo bias.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t r;
  do {
    r = engine_();
  } while (r >= limit);
  return r % n;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller; u1 in (0, 1] keeps the log finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * 3.14159265358979323846 * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

}  // namespace zslada
