#pragma once

#include "prpl/classifier.hpp"
#include "prpl/feature_store.hpp"

namespace prpl {

// Fraction of rows whose argmax prediction equals the stored label.
inline double evaluate_accuracy(const ClassifierHead& head, const FeatureSet& fs) {
  if (!fs.has_labels()) fail(ErrorKind::kInvalidArgument, "evaluate_accuracy needs a labeled feature set");
  const auto predicted = predict(head, fs.to_matrix());
  const auto& truth = fs.labels();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) correct += predicted[i] == truth[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(truth.size());
}

}  // namespace prpl
