#include "zslada/model/attributes.hpp"

#include <set>
#include <string>

namespace zslada::model {

Index ClassAttributeTable::find(int class_id) const {
  for (std::size_t i = 0; i < class_ids.size(); ++i) {
    if (class_ids[i] == class_id) return static_cast<Index>(i);
  }
  return -1;
}

Index ClassAttributeTable::index_of(int class_id) const {
  const Index i = find(class_id);
  if (i < 0) throw Error(ErrorCode::unknown_class, "class " + std::to_string(class_id) + " has no attribute row");
  return i;
}

std::vector<int> ClassAttributeTable::seen_ids() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < class_ids.size(); ++i)
    if (seen_mask[i]) out.push_back(class_ids[i]);
  return out;
}

std::vector<int> ClassAttributeTable::unseen_ids() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < class_ids.size(); ++i)
    if (!seen_mask[i]) out.push_back(class_ids[i]);
  return out;
}

Matrix ClassAttributeTable::rows_for(const std::vector<int>& ids) const {
  Matrix out(static_cast<Index>(ids.size()), attributes.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Index>(i)) = attributes.row(index_of(ids[i]));
  return out;
}

void ClassAttributeTable::validate(bool require_zsl) const {
  if (static_cast<Index>(class_ids.size()) != attributes.rows() || seen_mask.size() != class_ids.size())
    throw Error(ErrorCode::dimension_mismatch, "attribute table has " + std::to_string(attributes.rows()) +
                                                   " rows for " + std::to_string(class_ids.size()) + " class ids");
  std::set<int> unique;
  for (int id : class_ids) {
    if (!unique.insert(id).second)
      throw Error(ErrorCode::invalid_config, "duplicate class id " + std::to_string(id) + " in attribute table");
  }
  if (require_zsl && (seen_ids().empty() || unseen_ids().empty()))
    throw Error(ErrorCode::invalid_config, "a zero-shot task needs at least one seen and one unseen class");
}

std::uint64_t ClassAttributeTable::hash() const {
  std::uint64_t h = fnv1a(class_ids.data(), class_ids.size() * sizeof(int));
  for (Index r = 0; r < attributes.rows(); ++r) {
    for (Index c = 0; c < attributes.cols(); ++c) {
      const double v = static_cast<double>(attributes(r, c));
      h = fnv1a(&v, sizeof(v), h);
    }
  }
  return h;
}

}  // namespace zslada::model
