#include "yyf/adam.hpp"

#include <cmath>

#include "yyf/errors.hpp"

namespace yyf {

AdamState AdamState::for_params(Eigen::Index n, double learning_rate) {
  AdamState s;
  s.first_moment = Vec::Zero(n);
  s.second_moment = Vec::Zero(n);
  s.learning_rate = learning_rate;
  return s;
}

void adam_step(Vec& params, const Vec& grads, AdamState& state) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw ConfigError("adam_step: size mismatch");
  }
  if (!grads.allFinite()) throw TrainingError("non-finite gradient (training diverged)");
  ++state.step;
  state.first_moment = state.beta1 * state.first_moment + (1 - state.beta1) * grads;
  state.second_moment =
      state.beta2 * state.second_moment + (1 - state.beta2) * grads.cwiseProduct(grads);
  const double c1 = 1 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1 - std::pow(state.beta2, static_cast<double>(state.step));
  params.array() -= state.learning_rate * (state.first_moment.array() / c1) /
                    ((state.second_moment.array() / c2).sqrt() + state.epsilon);
}

}  // namespace yyf
