#pragma once

#include "prpl/feature_store.hpp"

namespace prpl::testing_fixture {

// The shifted-Gaussian task used by the end-to-end tests: 3 classes, d = 16,
// class means 40 apart from the origin, unit-of-shift sigma = 10.
inline SynthSpec shifted_spec(double shift_sigmas = 1.0) {
  SynthSpec spec;
  spec.num_classes = 3;
  spec.d = 16;
  spec.n_per_class_source = 200;
  spec.n_per_class_target = 200;
  spec.class_mean_separation = 40.0;
  spec.noise_sigma = 10.0;
  spec.domain_shift = shift_sigmas * spec.noise_sigma;
  return spec;
}

inline constexpr double kSeed7StageZeroAccuracy = 0.79166666666666663;
inline constexpr double kSeed7FinalAccuracy = 0.94333333333333336;
inline constexpr std::size_t kSeed7FirstConfident = 600;

}  // namespace prpl::testing_fixture
