#pragma once

#include <cstdint>
#include <vector>

#include "finmine/autodiff.hpp"

namespace finmine {

enum class Activation { Linear, Relu, Sigmoid, Tanh, Softmax };
enum class Mode { Train, Infer };
enum class LossKind { Mse, BinaryCrossEntropy, CategoricalCrossEntropy };

Activation parse_activation(const std::string& name);

// Elementwise / structural ------------------------------------------------

template <typename T> Var<T> reshape(Tape<T>& tape, const Var<T>& x, Shape shape);
template <typename T> Var<T> add(Tape<T>& tape, const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(Tape<T>& tape, const Var<T>& x, T factor);
template <typename T> Var<T> sum(Tape<T>& tape, const Var<T>& x);
template <typename T> Var<T> mul(Tape<T>& tape, const Var<T>& a, const Var<T>& b);

template <typename T> Var<T> relu(Tape<T>& tape, const Var<T>& x);
template <typename T> Var<T> sigmoid(Tape<T>& tape, const Var<T>& x);
template <typename T> Var<T> tanh(Tape<T>& tape, const Var<T>& x);
/// Softmax over the last axis of a rank-2 (or rank-1) tensor.
template <typename T> Var<T> softmax_rows(Tape<T>& tape, const Var<T>& x);
template <typename T> Var<T> activate(Tape<T>& tape, const Var<T>& x, Activation act);

/// Reverses the row (time) order of a T×D matrix.
template <typename T> Var<T> reverse_rows(Tape<T>& tape, const Var<T>& x);
/// [a | b] for two matrices with equal row counts.
template <typename T> Var<T> concat_cols(Tape<T>& tape, const Var<T>& a, const Var<T>& b);
/// Stacks N row vectors of equal length into an N×D matrix.
template <typename T> Var<T> stack_rows(Tape<T>& tape, const std::vector<Var<T>>& rows);
/// Tiles a length-H vector into a T×H matrix.
template <typename T> Var<T> repeat_vector(Tape<T>& tape, const Var<T>& v, std::size_t length);

// Layers -----------------------------------------------------------------

/// x·W + b for x of shape N×D (or a length-D vector), W of shape D×M.
template <typename T>
Var<T> linear(Tape<T>& tape, const Var<T>& x, const Var<T>& weights, const Var<T>& bias);

template <typename T>
Var<T> dense(Tape<T>& tape, const Var<T>& x, const Var<T>& weights, const Var<T>& bias,
             Activation act);

/// "Same" zero-padded cross-correlation. Input T×F×Cin, kernels kh×kw×Cin×Cout,
/// bias Cout. Leading padding is (k-1)/2 on each axis, trailing takes the rest.
template <typename T>
Var<T> conv2d(Tape<T>& tape, const Var<T>& input, const Var<T>& kernels, const Var<T>& bias);

/// T×F×C -> T×C, maximum over the frequency axis. Gradient goes to the
/// lowest-index maximum.
template <typename T> Var<T> maxpool_freq(Tape<T>& tape, const Var<T>& input);

enum class Sequence { ManyToMany, ManyToOne };

/// Single-direction LSTM over a T×D sequence, zero initial state.
/// Weights are D×4H (input), H×4H (recurrent) and 4H (bias) with gate blocks
/// ordered input, forget, candidate, output.
template <typename T>
Var<T> lstm(Tape<T>& tape, const Var<T>& input, const Var<T>& w_input, const Var<T>& w_recurrent,
            const Var<T>& bias, Sequence sequence);

/// Running statistics for batch normalization; updated in train mode.
template <typename T>
struct BatchNormStats {
  Tensor<T>* running_mean = nullptr;
  Tensor<T>* running_var = nullptr;
  T momentum = T(0.99);
  T epsilon = T(1e-5);
};

/// Normalizes each column of an N×D batch.
template <typename T>
Var<T> batchnorm(Tape<T>& tape, const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                 BatchNormStats<T> stats, Mode mode);

/// Inverted dropout; identity in infer mode.
template <typename T>
Var<T> dropout(Tape<T>& tape, const Var<T>& x, double rate, Mode mode, std::uint64_t seed);

/// Scalar loss. Cross-entropies clamp predictions to [1e-7, 1 - 1e-7].
/// Categorical cross-entropy averages over rows; the others over elements.
template <typename T>
Var<T> loss(Tape<T>& tape, const Var<T>& pred, const Var<T>& target, LossKind kind);

}  // namespace finmine
