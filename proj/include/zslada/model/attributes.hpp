#pragma once

#include "zslada/common.hpp"

#include <cstdint>
#include <vector>

namespace zslada::model {

/// Attribute vectors for every class, seen and unseen.
struct ClassAttributeTable {
  Matrix attributes;  // (S+U) x attr_dim
  std::vector<int> class_ids;
  std::vector<bool> seen_mask;

  Index num_classes() const { return static_cast<Index>(class_ids.size()); }
  Index attr_dim() const { return attributes.cols(); }

  /// Row of `class_id`, or -1.
  Index find(int class_id) const;
  /// Row of `class_id`; throws unknown_class.
  Index index_of(int class_id) const;
  bool contains(int class_id) const { return find(class_id) >= 0; }

  std::vector<int> seen_ids() const;
  std::vector<int> unseen_ids() const;

  /// Stacks the attribute rows of `ids` in order.
  Matrix rows_for(const std::vector<int>& ids) const;

  /// Throws on duplicate ids or size mismatch. With `require_zsl`, also
  /// requires at least one seen and one unseen class.
  void validate(bool require_zsl = true) const;

  std::uint64_t hash() const;
};

}  // namespace zslada::model
