#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "finmine/autodiff.hpp"

namespace finmine {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Per-parameter moments plus the shared step counter.
template <typename T>
struct AdamState {
  AdamConfig config;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
  std::int64_t step = 0;
};

template <typename T>
AdamState<T> make_adam_state(std::span<Parameter<T>* const> params, AdamConfig config = {});

/// One bias-corrected ADAM update. `grads[i]` belongs to `params[i]`; an
/// empty gradient counts as zero. Frozen parameters are left untouched.
template <typename T>
void adam_step(std::span<Parameter<T>* const> params, const std::vector<std::vector<T>>& grads,
               AdamState<T>& state);

/// Uniform Xavier/Glorot initialization.
template <typename T>
void xavier_uniform(Tensor<T>& tensor, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

template <typename T>
using ScalarGraph = std::function<Var<T>(Tape<T>&)>;

/// Compares tape gradients against central differences
/// (f(θ+h) - f(θ-h)) / 2h for every element of every parameter. The error per
/// element is |analytic - numeric| / max(|analytic| + |numeric|, 1e-8).
template <typename T>
GradCheckResult grad_check(const ScalarGraph<T>& graph, std::span<Parameter<T>* const> params, double step);

}  // namespace finmine
