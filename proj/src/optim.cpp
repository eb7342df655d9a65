#include "finmine/optim.hpp"

#include <cmath>

namespace finmine {

template <typename T>
AdamState<T> make_adam_state(std::span<Parameter<T>* const> params, AdamConfig config) {
  AdamState<T> state;
  state.config = config;
  for (const Parameter<T>* p : params) {
    state.first_moment.emplace_back(p->value.size(), T{0});
    state.second_moment.emplace_back(p->value.size(), T{0});
  }
  return state;
}

template <typename T>
void adam_step(std::span<Parameter<T>* const> params, const std::vector<std::vector<T>>& grads,
               AdamState<T>& state) {
  require(grads.size() == params.size() && state.first_moment.size() == params.size(), ErrorCode::ShapeMismatch,
          "adam_step: parameter, gradient and state counts differ");
  const AdamConfig& c = state.config;
  ++state.step;
  const double correction1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));

  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = *params[i];
    if (!p.trainable || grads[i].empty()) continue;
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    require(grads[i].size() == p.value.size() && m.size() == p.value.size(), ErrorCode::ShapeMismatch,
            "adam_step: gradient shape differs for " + p.name);
    for (std::size_t k = 0; k < m.size(); ++k) {
      const double g = grads[i][k];
      if (!std::isfinite(g)) fail(ErrorCode::NonFiniteValue, "non-finite gradient for " + p.name);
      const double mk = c.beta1 * m[k] + (1.0 - c.beta1) * g;
      const double vk = c.beta2 * v[k] + (1.0 - c.beta2) * g * g;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double m_hat = mk / correction1;
      const double v_hat = vk / correction2;
      p.value[k] = static_cast<T>(p.value[k] - c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon));
    }
  }
}

template <typename T>
void xavier_uniform(Tensor<T>& tensor, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : tensor.data()) v = static_cast<T>(dist(rng));
}

template <typename T>
GradCheckResult grad_check(const ScalarGraph<T>& graph, std::span<Parameter<T>* const> params, double step) {
  require(step > 0.0, ErrorCode::InvalidConfig, "grad_check step must be positive");
  Tape<T> tape;
  Var<T> out = graph(tape);
  require(out.size() == 1, ErrorCode::ShapeMismatch, "grad_check needs a scalar graph");
  tape.backward(out);

  std::vector<std::vector<T>> analytic;
  for (const Parameter<T>* p : params) {
    auto g = tape.gradient(*p);
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(p->value.size(), T{0});
  }

  auto evaluate = [&]() {
    Tape<T> t;
    const double v = static_cast<double>(graph(t).value()[0]);
    if (!std::isfinite(v)) fail(ErrorCode::NonFiniteValue, "grad_check: graph is not finite");
    return v;
  };

  GradCheckResult result;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = *params[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const T saved = p.value[k];
      p.value[k] = static_cast<T>(saved + step);
      const double up = evaluate();
      p.value[k] = static_cast<T>(saved - step);
      const double down = evaluate();
      p.value[k] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = static_cast<double>(analytic[i][k]);
      const double err = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-8);
      if (err > result.max_relative_error) {
        result = {err, p.name, k, a, numeric};
      }
    }
  }
  return result;
}

template AdamState<float> make_adam_state(std::span<Parameter<float>* const>, AdamConfig);
template AdamState<double> make_adam_state(std::span<Parameter<double>* const>, AdamConfig);
template void adam_step(std::span<Parameter<float>* const>, const std::vector<std::vector<float>>&,
                        AdamState<float>&);
template void adam_step(std::span<Parameter<double>* const>, const std::vector<std::vector<double>>&,
                        AdamState<double>&);
template void xavier_uniform(Tensor<float>&, std::size_t, std::size_t, std::mt19937_64&);
template void xavier_uniform(Tensor<double>&, std::size_t, std::size_t, std::mt19937_64&);
template GradCheckResult grad_check(const ScalarGraph<float>&, std::span<Parameter<float>* const>, double);
template GradCheckResult grad_check(const ScalarGraph<double>&, std::span<Parameter<double>* const>, double);

}  // namespace finmine
