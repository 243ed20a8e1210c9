#pragma once

#include <cstdint>

#include "yyf/linalg.hpp"

namespace yyf {

struct AdamState {
  Vec first_moment;
  Vec second_moment;
  std::int64_t step = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_params(Eigen::Index n, double learning_rate = 1e-3);
};

/// Bias-corrected Adam update in place. Throws TrainingError on a
/// non-finite gradient, leaving params and state untouched.
void adam_step(Vec& params, const Vec& grads, AdamState& state);

}  // namespace yyf
