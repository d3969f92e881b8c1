#pragma once

#include "zslada/common.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace zslada::data {

enum class Origin { generated, real, transformed };

std::string to_string(Origin origin);
Origin origin_from_string(const std::string& name);

/// One block of rows sharing an origin tag.
struct EmbeddingBlock {
  Matrix features;
  std::vector<int> labels;
  Origin origin = Origin::real;
};

/// CSV with header "f0,...,f{d-1},label,origin", blocks written in order.
void export_embeddings(const std::filesystem::path& path, const std::vector<EmbeddingBlock>& blocks);

/// Rows of an exported file, one block per row run with the same origin.
std::vector<EmbeddingBlock> read_embeddings(const std::filesystem::path& path);

/// The header line for a given feature width.
std::string embedding_header(Index dim);

}  // namespace zslada::data
