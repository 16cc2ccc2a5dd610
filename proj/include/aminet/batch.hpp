#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "aminet/error.hpp"

namespace aminet {

/// Id reserved for padded instance slots. Its embedding row is zero and frozen.
inline constexpr std::size_t kPaddingId = 0;

/// Index-encoded bags padded to a common width, row-major [size() x max_instances].
struct BagBatch {
  std::size_t max_instances = 0;
  std::vector<std::size_t> token_ids;
  std::vector<bool> mask;  // true = real instance
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }

  std::span<const std::size_t> ids(std::size_t bag) const {
    return std::span<const std::size_t>(token_ids).subspan(bag * max_instances, max_instances);
  }

  std::vector<bool> row_mask(std::size_t bag) const {
    const auto first = mask.begin() + static_cast<std::ptrdiff_t>(bag * max_instances);
    return std::vector<bool>(first, first + static_cast<std::ptrdiff_t>(max_instances));
  }

  std::size_t instance_count(std::size_t bag) const {
    std::size_t n = 0;
    for (bool b : row_mask(bag)) n += b ? 1 : 0;
    return n;
  }

  void validate() const {
    const std::size_t cells = size() * max_instances;
    if (token_ids.size() != cells || mask.size() != cells) {
      throw ContractError("bag batch storage does not match " + std::to_string(size()) + " x " +
                          std::to_string(max_instances));
    }
    for (std::size_t b = 0; b < size(); ++b) {
      bool any = false;
      for (std::size_t m = 0; m < max_instances; ++m) {
        const std::size_t cell = b * max_instances + m;
        any = any || mask[cell];
        if (!mask[cell] && token_ids[cell] != kPaddingId) {
          throw ContractError("bag " + std::to_string(b) + " has a non-padding id in a padded slot");
        }
      }
      if (!any) throw DegenerateBagError("bag " + std::to_string(b) + " has no real instance");
    }
  }
};

}  // namespace aminet
