#include "zslada/data/export.hpp"
#include "zslada/data/csv.hpp"

#include <fstream>

namespace zslada::data {

std::string to_string(Origin origin) {
  switch (origin) {
    case Origin::generated: return "generated";
    case Origin::real: return "real";
    case Origin::transformed: return "transformed";
  }
  return "real";
}

Origin origin_from_string(const std::string& name) {
  if (name == "generated") return Origin::generated;
  if (name == "real") return Origin::real;
  if (name == "transformed") return Origin::transformed;
  throw Error(ErrorCode::parse_error, "unknown origin tag '" + name + "'");
}

std::string embedding_header(Index dim) {
  std::string header;
  for (Index j = 0; j < dim; ++j) header += "f" + std::to_string(j) + ",";
  return header + "label,origin";
}

void export_embeddings(const std::filesystem::path& path, const std::vector<EmbeddingBlock>& blocks) {
  if (blocks.empty()) throw Error(ErrorCode::empty_batch, "nothing to export");
  const Index dim = blocks.front().features.cols();
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    if (blocks[b].features.cols() != dim)
      throw Error(ErrorCode::dimension_mismatch, "export block " + std::to_string(b) + " has width " +
                                                     std::to_string(blocks[b].features.cols()) + ", expected " +
                                                     std::to_string(dim));
    if (static_cast<Index>(blocks[b].labels.size()) != blocks[b].features.rows())
      throw Error(ErrorCode::dimension_mismatch, "export block " + std::to_string(b) + " label count differs from rows");
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
  out << embedding_header(dim) << '\n';
  for (const auto& block : blocks) {
    const std::string tag = to_string(block.origin);
    for (Index r = 0; r < block.features.rows(); ++r) {
      for (Index j = 0; j < dim; ++j) out << format_real(static_cast<double>(block.features(r, j))) << ',';
      out << block.labels[static_cast<std::size_t>(r)] << ',' << tag << '\n';
    }
  }
  if (!out) throw Error(ErrorCode::io_error, "write failed for " + path.string());
}

std::vector<EmbeddingBlock> read_embeddings(const std::filesystem::path& path) {
  const auto lines = read_lines(path.string());
  if (lines.empty()) throw Error(ErrorCode::parse_error, path.string() + " is empty");
  const auto header = split_fields(lines.front());
  if (header.size() < 2) throw Error(ErrorCode::parse_error, path.string() + ": bad header");
  const Index dim = static_cast<Index>(header.size()) - 2;
  if (lines.front() != embedding_header(dim)) throw Error(ErrorCode::parse_error, path.string() + ": bad header");

  std::vector<EmbeddingBlock> blocks;
  std::vector<std::vector<Real>> pending;
  auto flush = [&] {
    if (pending.empty()) return;
    auto& block = blocks.back();
    block.features.resize(static_cast<Index>(pending.size()), dim);
    for (std::size_t r = 0; r < pending.size(); ++r)
      for (Index j = 0; j < dim; ++j) block.features(static_cast<Index>(r), j) = pending[r][static_cast<std::size_t>(j)];
    pending.clear();
  };
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto fields = split_fields(lines[i]);
    const std::string where = path.string() + " line " + std::to_string(i + 1);
    if (static_cast<Index>(fields.size()) != dim + 2)
      throw Error(ErrorCode::ragged_rows, where + " has " + std::to_string(fields.size()) + " fields");
    const Origin origin = origin_from_string(std::string(fields.back()));
    if (blocks.empty() || blocks.back().origin != origin) {
      flush();
      blocks.push_back(EmbeddingBlock{Matrix(), {}, origin});
    }
    std::vector<Real> row(static_cast<std::size_t>(dim));
    for (Index j = 0; j < dim; ++j) row[static_cast<std::size_t>(j)] = static_cast<Real>(parse_real(fields[static_cast<std::size_t>(j)], where));
    pending.push_back(std::move(row));
    blocks.back().labels.push_back(static_cast<int>(parse_int(fields[static_cast<std::size_t>(dim)], where)));
  }
  flush();
  return blocks;
}

}  // namespace zslada::data
