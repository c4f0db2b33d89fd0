#pragma once

#include <cstddef>
#include <vector>

#include "prpl/feature_store.hpp"

namespace prpl {

// Target rows whose max class probability exceeded the threshold at
// iteration `iteration`, with their argmax pseudo labels.
struct ConfidentSet {
  std::vector<std::size_t> target_indices;  // ascending
  std::vector<Label> pseudo_labels;         // parallel to target_indices
  double threshold = 0.0;
  int iteration = 0;

  std::size_t size() const { return target_indices.size(); }
  bool empty() const { return target_indices.empty(); }
};

}  // namespace prpl
