#pragma once

#include <cstddef>
#include <span>

namespace dva {

// What trainers are allowed to see: observed inputs and observed labels.
// Clean values and true noise draws stay behind in the owning dataset.
struct DataView {
  std::span<const double> x;
  std::span<const double> y;
  std::size_t size() const { return x.size(); }
};

}  // namespace dva
