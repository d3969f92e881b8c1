#include "zslada/data/dataset.hpp"
#include "zslada/data/csv.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <fstream>
#include <set>

namespace zslada::data {

namespace fs = std::filesystem;

namespace {

constexpr std::array<char, 8> kFeatureMagic = {'Z', 'S', 'L', 'F', 'E', 'A', 'T', '1'};

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& in, const std::string& path) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw Error(ErrorCode::parse_error, path + ": truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::trunc) {
  std::ofstream out(path, mode);
  if (!out) throw Error(ErrorCode::io_error, "cannot open " + path.string() + " for writing");
  return out;
}

}  // namespace

void SplitSpec::validate() const {
  const std::set<int> s(seen.begin(), seen.end());
  for (int id : unseen) {
    if (s.count(id)) throw Error(ErrorCode::split_overlap, "class " + std::to_string(id) + " is both seen and unseen");
  }
}

bool SplitSpec::is_seen(int class_id) const { return std::find(seen.begin(), seen.end(), class_id) != seen.end(); }

bool SplitSpec::is_unseen(int class_id) const {
  return std::find(unseen.begin(), unseen.end(), class_id) != unseen.end();
}

bool FeatureDataset::has_labels() const {
  return static_cast<Index>(labels.size()) == rows() &&
         std::none_of(labels.begin(), labels.end(), [](int l) { return l == kUnlabeled; });
}

FeatureDataset FeatureDataset::subset(const std::vector<Index>& row_ids) const {
  FeatureDataset out;
  out.features.resize(static_cast<Index>(row_ids.size()), dim());
  if (!labels.empty()) out.labels.reserve(row_ids.size());
  for (std::size_t i = 0; i < row_ids.size(); ++i) {
    const Index r = row_ids[i];
    if (r < 0 || r >= rows()) throw Error(ErrorCode::dimension_mismatch, "row " + std::to_string(r) + " out of range");
    out.features.row(static_cast<Index>(i)) = features.row(r);
    if (!labels.empty()) out.labels.push_back(labels[static_cast<std::size_t>(r)]);
  }
  out.split.seen = split.seen;
  out.split.unseen = split.unseen;
  out.provenance = provenance;
  return out;
}

FeatureDataset FeatureDataset::without_labels() const {
  FeatureDataset out = *this;
  out.labels.assign(static_cast<std::size_t>(rows()), kUnlabeled);
  return out;
}

void FeatureDataset::validate() const {
  split.validate();
  if (!labels.empty() && static_cast<Index>(labels.size()) != rows())
    throw Error(ErrorCode::dimension_mismatch, std::to_string(labels.size()) + " labels for " +
                                                   std::to_string(rows()) + " feature rows");
  for (int l : labels) {
    if (l != kUnlabeled && !split.is_seen(l) && !split.is_unseen(l))
      throw Error(ErrorCode::split_unknown_class, "label " + std::to_string(l) + " is in neither seen nor unseen");
  }
  for (const auto* rows_list : {&split.train_rows, &split.test_rows}) {
    for (Index r : *rows_list) {
      if (r < 0 || r >= rows())
        throw Error(ErrorCode::split_unknown_class, "split references row " + std::to_string(r) + " of " +
                                                        std::to_string(rows()));
    }
  }
  if (labels.empty()) return;
  for (Index r : split.train_rows) {
    const int l = labels[static_cast<std::size_t>(r)];
    if (l != kUnlabeled && !split.is_seen(l))
      throw Error(ErrorCode::split_overlap, "train row " + std::to_string(r) + " has unseen label " + std::to_string(l));
  }
  for (Index r : split.test_rows) {
    const int l = labels[static_cast<std::size_t>(r)];
    if (l != kUnlabeled && !split.is_unseen(l))
      throw Error(ErrorCode::split_overlap, "test row " + std::to_string(r) + " has seen label " + std::to_string(l));
  }
}

void save_features(const fs::path& path, const Matrix& features, const std::vector<int>& labels) {
  const bool binary = path.extension() == ".bin";
  auto label_of = [&](Index r) { return labels.empty() ? kUnlabeled : labels[static_cast<std::size_t>(r)]; };
  if (binary) {
    auto out = open_out(path, std::ios::binary | std::ios::trunc);
    out.write(kFeatureMagic.data(), kFeatureMagic.size());
    write_u64(out, static_cast<std::uint64_t>(features.rows()));
    write_u64(out, static_cast<std::uint64_t>(features.cols()));
    for (Index r = 0; r < features.rows(); ++r) {
      write_u64(out, static_cast<std::uint64_t>(static_cast<std::int64_t>(label_of(r))));
      for (Index c = 0; c < features.cols(); ++c)
        write_u64(out, std::bit_cast<std::uint64_t>(static_cast<double>(features(r, c))));
    }
    return;
  }
  auto out = open_out(path);
  out << "label";
  for (Index c = 0; c < features.cols(); ++c) out << ",f" << c;
  out << '\n';
  for (Index r = 0; r < features.rows(); ++r) {
    out << label_of(r);
    for (Index c = 0; c < features.cols(); ++c) out << ',' << format_real(static_cast<double>(features(r, c)));
    out << '\n';
  }
}

void load_features(const fs::path& path, Matrix& features, std::vector<int>& labels) {
  if (!fs::exists(path)) throw Error(ErrorCode::missing_file, path.string());
  labels.clear();
  if (path.extension() == ".bin") {
    std::ifstream in(path, std::ios::binary);
    std::array<char, 8> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != kFeatureMagic)
      throw Error(ErrorCode::parse_error, path.string() + ": bad magic");
    const auto rows = static_cast<Index>(read_u64(in, path.string()));
    const auto cols = static_cast<Index>(read_u64(in, path.string()));
    features.resize(rows, cols);
    for (Index r = 0; r < rows; ++r) {
      labels.push_back(static_cast<int>(static_cast<std::int64_t>(read_u64(in, path.string()))));
      for (Index c = 0; c < cols; ++c)
        features(r, c) = static_cast<Real>(std::bit_cast<double>(read_u64(in, path.string())));
    }
    return;
  }
  const auto lines = read_lines(path.string());
  if (lines.empty()) throw Error(ErrorCode::parse_error, path.string() + ": missing header");
  const auto header = split_fields(lines[0]);
  if (header.empty() || header[0] != "label")
    throw Error(ErrorCode::parse_error, path.string() + ": header must start with 'label'");
  const Index cols = static_cast<Index>(header.size()) - 1;
  for (Index c = 0; c < cols; ++c) {
    if (header[static_cast<std::size_t>(c + 1)] != "f" + std::to_string(c))
      throw Error(ErrorCode::parse_error, path.string() + ": header column " + std::to_string(c + 1) + " must be f" +
                                              std::to_string(c));
  }
  std::size_t n = lines.size() - 1;
  while (n > 0 && lines[n].empty()) --n;
  features.resize(static_cast<Index>(n), cols);
  for (std::size_t i = 0; i < n; ++i) {
    const auto fields = split_fields(lines[i + 1]);
    const std::string where = path.string() + " line " + std::to_string(i + 2);
    if (static_cast<Index>(fields.size()) != cols + 1)
      throw Error(ErrorCode::ragged_rows, where + " has " + std::to_string(fields.size()) + " fields, expected " +
                                              std::to_string(cols + 1));
    labels.push_back(static_cast<int>(parse_int(fields[0], where)));
    for (Index c = 0; c < cols; ++c)
      features(static_cast<Index>(i), c) = static_cast<Real>(parse_real(fields[static_cast<std::size_t>(c + 1)], where));
  }
}

void save_attributes(const fs::path& path, const model::ClassAttributeTable& table) {
  auto out = open_out(path);
  out << "class_id";
  for (Index c = 0; c < table.attr_dim(); ++c) out << ",a" << c;
  out << '\n';
  for (Index r = 0; r < table.num_classes(); ++r) {
    out << table.class_ids[static_cast<std::size_t>(r)];
    for (Index c = 0; c < table.attr_dim(); ++c) out << ',' << format_real(static_cast<double>(table.attributes(r, c)));
    out << '\n';
  }
}

model::ClassAttributeTable load_attributes(const fs::path& path, const SplitSpec* split) {
  if (!fs::exists(path)) throw Error(ErrorCode::missing_file, path.string());
  const auto lines = read_lines(path.string());
  if (lines.empty()) throw Error(ErrorCode::parse_error, path.string() + ": missing header");
  const auto header = split_fields(lines[0]);
  if (header.empty() || header[0] != "class_id")
    throw Error(ErrorCode::parse_error, path.string() + ": header must start with 'class_id'");
  const Index cols = static_cast<Index>(header.size()) - 1;
  std::size_t n = lines.size() - 1;
  while (n > 0 && lines[n].empty()) --n;
  model::ClassAttributeTable table;
  table.attributes.resize(static_cast<Index>(n), cols);
  for (std::size_t i = 0; i < n; ++i) {
    const auto fields = split_fields(lines[i + 1]);
    const std::string where = path.string() + " line " + std::to_string(i + 2);
    if (static_cast<Index>(fields.size()) != cols + 1)
      throw Error(ErrorCode::ragged_rows, where + " has " + std::to_string(fields.size()) + " fields, expected " +
                                              std::to_string(cols + 1));
    const int id = static_cast<int>(parse_int(fields[0], where));
    table.class_ids.push_back(id);
    table.seen_mask.push_back(split ? split->is_seen(id) : false);
    for (Index c = 0; c < cols; ++c)
      table.attributes(static_cast<Index>(i), c) =
          static_cast<Real>(parse_real(fields[static_cast<std::size_t>(c + 1)], where));
  }
  return table;
}

void save_split(const fs::path& path, const SplitSpec& split) {
  nlohmann::json j;
  j["seen"] = split.seen;
  j["unseen"] = split.unseen;
  j["train_rows"] = split.train_rows;
  j["test_rows"] = split.test_rows;
  auto out = open_out(path);
  out << j.dump() << '\n';
}

SplitSpec load_split(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::missing_file, path.string());
  SplitSpec split;
  try {
    const auto j = nlohmann::json::parse(in);
    split.seen = j.at("seen").get<std::vector<int>>();
    split.unseen = j.at("unseen").get<std::vector<int>>();
    split.train_rows = j.value("train_rows", std::vector<Index>{});
    split.test_rows = j.value("test_rows", std::vector<Index>{});
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse_error, path.string() + ": " + e.what());
  }
  return split;
}

DatasetBundle load_dataset(const fs::path& dir) {
  DatasetBundle bundle;
  bundle.data.split = load_split(dir / "split.json");
  bundle.data.split.validate();
  const fs::path csv = dir / "features.csv";
  const fs::path bin = dir / "features.bin";
  load_features(fs::exists(csv) || !fs::exists(bin) ? csv : bin, bundle.data.features, bundle.data.labels);
  bundle.attributes = load_attributes(dir / "attributes.csv", &bundle.data.split);
  bundle.data.provenance = "loaded from " + dir.string();

  for (int id : bundle.data.split.seen) {
    if (!bundle.attributes.contains(id))
      throw Error(ErrorCode::split_unknown_class, "seen class " + std::to_string(id) + " has no attribute row");
  }
  for (int id : bundle.data.split.unseen) {
    if (!bundle.attributes.contains(id))
      throw Error(ErrorCode::split_unknown_class, "unseen class " + std::to_string(id) + " has no attribute row");
  }
  bundle.attributes.validate(false);
  bundle.data.validate();
  return bundle;
}

void save_dataset(const fs::path& dir, const DatasetBundle& bundle, bool binary_features) {
  fs::create_directories(dir);
  save_features(dir / (binary_features ? "features.bin" : "features.csv"), bundle.data.features, bundle.data.labels);
  save_attributes(dir / "attributes.csv", bundle.attributes);
  save_split(dir / "split.json", bundle.data.split);
}

}  // namespace zslada::data
