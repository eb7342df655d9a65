#include "finmine/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <random>

namespace finmine {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <typename T>
ConstMap<T> as_matrix(const std::vector<T>& v, std::size_t rows, std::size_t cols) {
  return ConstMap<T>(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
template <typename T>
ConstMap<T> as_matrix(std::span<const T> v, std::size_t rows, std::size_t cols) {
  return ConstMap<T>(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
template <typename T>
MutMap<T> as_mut_matrix(std::vector<T>& v, std::size_t rows, std::size_t cols) {
  return MutMap<T>(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void check_shape(bool ok, const std::string& what) {
  require(ok, ErrorCode::ShapeMismatch, what);
}

template <typename T>
T sigmoid_scalar(T z) {
  return T(1) / (T(1) + std::exp(-z));
}

// Wires a backward closure onto an output node when any input needs it.
template <typename T, typename Fn>
Var<T> finish(Tape<T>& tape, Tensor<T> value, bool requires_grad, const char* op, Fn&& backward) {
  Var<T> out = tape.push(std::move(value), requires_grad, op);
  if (requires_grad) {
    Node<T>* self = &out.node();
    out.node().backward = [self, fn = std::forward<Fn>(backward)]() { fn(self->grad_or_empty()); };
  }
  return out;
}

}  // namespace

Activation parse_activation(const std::string& name) {
  if (name == "linear") return Activation::Linear;
  if (name == "relu") return Activation::Relu;
  if (name == "sigmoid") return Activation::Sigmoid;
  if (name == "tanh") return Activation::Tanh;
  if (name == "softmax") return Activation::Softmax;
  fail(ErrorCode::InvalidConfig, "unknown activation '" + name + "'");
}

template <typename T>
Var<T> reshape(Tape<T>& tape, const Var<T>& x, Shape shape) {
  check_shape(shape_size(shape) == x.size(),
              "reshape " + shape_string(x.shape()) + " -> " + shape_string(shape));
  Node<T>* in = &x.node();
  return finish(tape, x.value().reshaped(std::move(shape)), x.requires_grad(), "reshape",
                [in](const std::vector<T>& g) {
                  auto& gi = in->grad();
                  for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
                });
}

template <typename T>
Var<T> add(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  check_shape(a.shape() == b.shape(), "add " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  Node<T>* na = &a.node();
  Node<T>* nb = &b.node();
  return finish(tape, std::move(out), a.requires_grad() || b.requires_grad(), "add",
                [na, nb](const std::vector<T>& g) {
                  for (Node<T>* n : {na, nb}) {
                    if (!n->requires_grad()) continue;
                    auto& gi = n->grad();
                    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
                  }
                });
}

template <typename T>
Var<T> mul(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  check_shape(a.shape() == b.shape(), "mul " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  Node<T>* na = &a.node();
  Node<T>* nb = &b.node();
  return finish(tape, std::move(out), a.requires_grad() || b.requires_grad(), "mul",
                [na, nb](const std::vector<T>& g) {
                  if (na->requires_grad()) {
                    auto& ga = na->grad();
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * nb->value()[i];
                  }
                  if (nb->requires_grad()) {
                    auto& gb = nb->grad();
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * na->value()[i];
                  }
                });
}

template <typename T>
Var<T> scale(Tape<T>& tape, const Var<T>& x, T factor) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * factor;
  Node<T>* in = &x.node();
  return finish(tape, std::move(out), x.requires_grad(), "scale", [in, factor](const std::vector<T>& g) {
    auto& gi = in->grad();
    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * factor;
  });
}

template <typename T>
Var<T> sum(Tape<T>& tape, const Var<T>& x) {
  T total{0};
  for (T v : x.value().data()) total += v;
  Node<T>* in = &x.node();
  return finish(tape, Tensor<T>::scalar(total), x.requires_grad(), "sum", [in](const std::vector<T>& g) {
    auto& gi = in->grad();
    for (auto& v : gi) v += g[0];
  });
}

template <typename T>
Var<T> relu(Tape<T>& tape, const Var<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(x.value()[i], T{0});
  Node<T>* in = &x.node();
  return finish(tape, std::move(out), x.requires_grad(), "relu", [in](const std::vector<T>& g) {
    auto& gi = in->grad();
    const auto& xv = in->value();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > T{0}) gi[i] += g[i];
  });
}

template <typename T>
Var<T> sigmoid(Tape<T>& tape, const Var<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(x.value()[i]);
  Node<T>* in = &x.node();
  Var<T> result = tape.push(std::move(out), x.requires_grad(), "sigmoid");
  if (x.requires_grad()) {
    Node<T>* self = &result.node();
    self->backward = [in, self]() {
      const auto& g = self->grad_or_empty();
      auto& gi = in->grad();
      const auto& y = self->value();
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * y[i] * (T(1) - y[i]);
    };
  }
  return result;
}

template <typename T>
Var<T> tanh(Tape<T>& tape, const Var<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.value()[i]);
  Node<T>* in = &x.node();
  Var<T> result = tape.push(std::move(out), x.requires_grad(), "tanh");
  if (x.requires_grad()) {
    Node<T>* self = &result.node();
    self->backward = [in, self]() {
      const auto& g = self->grad_or_empty();
      auto& gi = in->grad();
      const auto& y = self->value();
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * (T(1) - y[i] * y[i]);
    };
  }
  return result;
}

template <typename T>
Var<T> softmax_rows(Tape<T>& tape, const Var<T>& x) {
  check_shape(x.value().rank() == 1 || x.value().rank() == 2, "softmax needs rank 1 or 2");
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.size() / std::max<std::size_t>(cols, 1);
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.value().data().data() + r * cols;
    T* o = out.data().data() + r * cols;
    T peak = *std::max_element(in, in + cols);
    T total{0};
    for (std::size_t c = 0; c < cols; ++c) total += (o[c] = std::exp(in[c] - peak));
    for (std::size_t c = 0; c < cols; ++c) o[c] /= total;
  }
  Node<T>* in = &x.node();
  Var<T> result = tape.push(std::move(out), x.requires_grad(), "softmax");
  if (x.requires_grad()) {
    Node<T>* self = &result.node();
    self->backward = [in, self, rows, cols]() {
      const auto& g = self->grad_or_empty();
      const auto& y = self->value();
      auto& gi = in->grad();
      for (std::size_t r = 0; r < rows; ++r) {
        T dot{0};
        for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c)
          gi[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
      }
    };
  }
  return result;
}

template <typename T>
Var<T> activate(Tape<T>& tape, const Var<T>& x, Activation act) {
  switch (act) {
    case Activation::Linear: return x;
    case Activation::Relu: return relu(tape, x);
    case Activation::Sigmoid: return sigmoid(tape, x);
    case Activation::Tanh: return tanh(tape, x);
    case Activation::Softmax: return softmax_rows(tape, x);
  }
  return x;
}

template <typename T>
Var<T> reverse_rows(Tape<T>& tape, const Var<T>& x) {
  check_shape(x.value().rank() == 2, "reverse_rows needs a matrix");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.value().data().data() + (rows - 1 - r) * cols, cols, out.data().data() + r * cols);
  Node<T>* in = &x.node();
  return finish(tape, std::move(out), x.requires_grad(), "reverse_rows",
                [in, rows, cols](const std::vector<T>& g) {
                  auto& gi = in->grad();
                  for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < cols; ++c)
                      gi[(rows - 1 - r) * cols + c] += g[r * cols + c];
                });
}

template <typename T>
Var<T> concat_cols(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  check_shape(a.value().rank() == 2 && b.value().rank() == 2 && a.shape()[0] == b.shape()[0],
              "concat_cols " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  const std::size_t rows = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1];
  Tensor<T> out(Shape{rows, ca + cb});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.value().data().data() + r * ca, ca, out.data().data() + r * (ca + cb));
    std::copy_n(b.value().data().data() + r * cb, cb, out.data().data() + r * (ca + cb) + ca);
  }
  Node<T>* na = &a.node();
  Node<T>* nb = &b.node();
  return finish(tape, std::move(out), a.requires_grad() || b.requires_grad(), "concat_cols",
                [na, nb, rows, ca, cb](const std::vector<T>& g) {
                  const std::size_t width = ca + cb;
                  if (na->requires_grad()) {
                    auto& ga = na->grad();
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < ca; ++c) ga[r * ca + c] += g[r * width + c];
                  }
                  if (nb->requires_grad()) {
                    auto& gb = nb->grad();
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < cb; ++c) gb[r * cb + c] += g[r * width + ca + c];
                  }
                });
}

template <typename T>
Var<T> stack_rows(Tape<T>& tape, const std::vector<Var<T>>& rows) {
  check_shape(!rows.empty(), "stack_rows needs at least one row");
  const std::size_t width = rows.front().size();
  Tensor<T> out(Shape{rows.size(), width});
  std::vector<Node<T>*> inputs;
  bool rg = false;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    check_shape(rows[r].size() == width, "stack_rows rows differ in length");
    std::copy_n(rows[r].value().data().data(), width, out.data().data() + r * width);
    inputs.push_back(&rows[r].node());
    rg = rg || rows[r].requires_grad();
  }
  return finish(tape, std::move(out), rg, "stack_rows", [inputs, width](const std::vector<T>& g) {
    for (std::size_t r = 0; r < inputs.size(); ++r) {
      if (!inputs[r]->requires_grad()) continue;
      auto& gi = inputs[r]->grad();
      for (std::size_t c = 0; c < width; ++c) gi[c] += g[r * width + c];
    }
  });
}

template <typename T>
Var<T> repeat_vector(Tape<T>& tape, const Var<T>& v, std::size_t length) {
  check_shape(length >= 1, "repeat_vector needs length >= 1");
  const std::size_t width = v.size();
  Tensor<T> out(Shape{length, width});
  for (std::size_t r = 0; r < length; ++r)
    std::copy_n(v.value().data().data(), width, out.data().data() + r * width);
  Node<T>* in = &v.node();
  return finish(tape, std::move(out), v.requires_grad(), "repeat_vector",
                [in, length, width](const std::vector<T>& g) {
                  auto& gi = in->grad();
                  for (std::size_t r = 0; r < length; ++r)
                    for (std::size_t c = 0; c < width; ++c) gi[c] += g[r * width + c];
                });
}

template <typename T>
Var<T> linear(Tape<T>& tape, const Var<T>& x, const Var<T>& weights, const Var<T>& bias) {
  check_shape(weights.value().rank() == 2, "linear weights must be D×M");
  const std::size_t in_dim = weights.shape()[0], out_dim = weights.shape()[1];
  const bool vector_input = x.value().rank() == 1;
  check_shape((vector_input && x.size() == in_dim) || (x.value().rank() == 2 && x.shape()[1] == in_dim),
              "linear input " + shape_string(x.shape()) + " vs weights " + shape_string(weights.shape()));
  check_shape(bias.size() == out_dim, "linear bias length");
  const std::size_t rows = vector_input ? 1 : x.shape()[0];

  Tensor<T> out(vector_input ? Shape{out_dim} : Shape{rows, out_dim});
  auto xm = as_matrix(x.value().storage(), rows, in_dim);
  auto wm = as_matrix(weights.value().storage(), in_dim, out_dim);
  auto bm = as_matrix(bias.value().storage(), 1, out_dim);
  auto om = as_mut_matrix(out.storage(), rows, out_dim);
  om.noalias() = xm * wm;
  om.rowwise() += bm.row(0);

  Node<T>* nx = &x.node();
  Node<T>* nw = &weights.node();
  Node<T>* nb = &bias.node();
  const bool rg = x.requires_grad() || weights.requires_grad() || bias.requires_grad();
  return finish(tape, std::move(out), rg, "linear",
                [nx, nw, nb, rows, in_dim, out_dim](const std::vector<T>& g) {
                  auto gm = as_matrix(g, rows, out_dim);
                  if (nx->requires_grad()) {
                    auto gx = as_mut_matrix(nx->grad(), rows, in_dim);
                    gx.noalias() += gm * as_matrix(nw->value().storage(), in_dim, out_dim).transpose();
                  }
                  if (nw->requires_grad()) {
                    auto gw = as_mut_matrix(nw->grad(), in_dim, out_dim);
                    gw.noalias() += as_matrix(nx->value().storage(), rows, in_dim).transpose() * gm;
                  }
                  if (nb->requires_grad()) {
                    auto gb = as_mut_matrix(nb->grad(), 1, out_dim);
                    gb += gm.colwise().sum();
                  }
                });
}

template <typename T>
Var<T> dense(Tape<T>& tape, const Var<T>& x, const Var<T>& weights, const Var<T>& bias,
             Activation act) {
  return activate(tape, linear(tape, x, weights, bias), act);
}

template <typename T>
Var<T> conv2d(Tape<T>& tape, const Var<T>& input, const Var<T>& kernels, const Var<T>& bias) {
  check_shape(input.value().rank() == 3, "conv2d input must be T×F×C, got " + shape_string(input.shape()));
  check_shape(kernels.value().rank() == 4, "conv2d kernels must be kh×kw×Cin×Cout");
  const std::size_t frames = input.shape()[0], bins = input.shape()[1], cin = input.shape()[2];
  const std::size_t kh = kernels.shape()[0], kw = kernels.shape()[1], cout = kernels.shape()[3];
  check_shape(kernels.shape()[2] == cin, "conv2d channel mismatch: input has " + std::to_string(cin) +
                                             ", kernels expect " + std::to_string(kernels.shape()[2]));
  check_shape(bias.size() == cout, "conv2d bias length");
  check_shape(kh >= 1 && kw >= 1, "conv2d empty kernel");

  const std::size_t pad_t = (kh - 1) / 2, pad_f = (kw - 1) / 2;
  const std::size_t positions = frames * bins;
  const std::size_t patch = kh * kw * cin;
  const bool pointwise = kh == 1 && kw == 1;

  // im2col: one row per output position.
  std::vector<T> cols;
  if (!pointwise) {
    cols.assign(positions * patch, T{0});
    const auto& x = input.value().storage();
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t f = 0; f < bins; ++f) {
        T* row = cols.data() + (t * bins + f) * patch;
        for (std::size_t i = 0; i < kh; ++i) {
          const std::ptrdiff_t st = static_cast<std::ptrdiff_t>(t + i) - static_cast<std::ptrdiff_t>(pad_t);
          if (st < 0 || st >= static_cast<std::ptrdiff_t>(frames)) continue;
          for (std::size_t j = 0; j < kw; ++j) {
            const std::ptrdiff_t sf = static_cast<std::ptrdiff_t>(f + j) - static_cast<std::ptrdiff_t>(pad_f);
            if (sf < 0 || sf >= static_cast<std::ptrdiff_t>(bins)) continue;
            std::copy_n(x.data() + (static_cast<std::size_t>(st) * bins + static_cast<std::size_t>(sf)) * cin,
                        cin, row + (i * kw + j) * cin);
          }
        }
      }
    }
  }
  const std::vector<T>& patches = pointwise ? input.value().storage() : cols;

  Tensor<T> out(Shape{frames, bins, cout});
  auto om = as_mut_matrix(out.storage(), positions, cout);
  om.noalias() = as_matrix(patches, positions, patch) * as_matrix(kernels.value().storage(), patch, cout);
  om.rowwise() += as_matrix(bias.value().storage(), 1, cout).row(0);

  Node<T>* nx = &input.node();
  Node<T>* nk = &kernels.node();
  Node<T>* nb = &bias.node();
  const bool rg = input.requires_grad() || kernels.requires_grad() || bias.requires_grad();
  return finish(
      tape, std::move(out), rg, "conv2d",
      [nx, nk, nb, cols = std::move(cols), pointwise, frames, bins, cin, kh, kw, cout, pad_t, pad_f,
       positions, patch](const std::vector<T>& g) {
        auto gm = as_matrix(g, positions, cout);
        const std::vector<T>& patches = pointwise ? nx->value().storage() : cols;
        if (nk->requires_grad()) {
          auto gk = as_mut_matrix(nk->grad(), patch, cout);
          gk.noalias() += as_matrix(patches, positions, patch).transpose() * gm;
        }
        if (nb->requires_grad()) {
          auto gb = as_mut_matrix(nb->grad(), 1, cout);
          gb += gm.colwise().sum();
        }
        if (!nx->requires_grad()) return;
        auto kmat = as_matrix(nk->value().storage(), patch, cout);
        if (pointwise) {
          auto gx = as_mut_matrix(nx->grad(), positions, patch);
          gx.noalias() += gm * kmat.transpose();
          return;
        }
        RowMat<T> dcols = gm * kmat.transpose();
        auto& gx = nx->grad();
        for (std::size_t t = 0; t < frames; ++t) {
          for (std::size_t f = 0; f < bins; ++f) {
            const T* row = dcols.data() + (t * bins + f) * patch;
            for (std::size_t i = 0; i < kh; ++i) {
              const std::ptrdiff_t st = static_cast<std::ptrdiff_t>(t + i) - static_cast<std::ptrdiff_t>(pad_t);
              if (st < 0 || st >= static_cast<std::ptrdiff_t>(frames)) continue;
              for (std::size_t j = 0; j < kw; ++j) {
                const std::ptrdiff_t sf = static_cast<std::ptrdiff_t>(f + j) - static_cast<std::ptrdiff_t>(pad_f);
                if (sf < 0 || sf >= static_cast<std::ptrdiff_t>(bins)) continue;
                T* dst = gx.data() + (static_cast<std::size_t>(st) * bins + static_cast<std::size_t>(sf)) * cin;
                const T* src = row + (i * kw + j) * cin;
                for (std::size_t c = 0; c < cin; ++c) dst[c] += src[c];
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> maxpool_freq(Tape<T>& tape, const Var<T>& input) {
  check_shape(input.value().rank() == 3 && input.shape()[1] >= 1,
              "maxpool_freq input must be T×F×C with F >= 1, got " + shape_string(input.shape()));
  const std::size_t frames = input.shape()[0], bins = input.shape()[1], channels = input.shape()[2];
  Tensor<T> out(Shape{frames, channels});
  std::vector<std::size_t> argmax(frames * channels, 0);
  const auto& x = input.value().storage();
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t c = 0; c < channels; ++c) {
      std::size_t best = 0;
      T best_value = x[(t * bins) * channels + c];
      for (std::size_t f = 1; f < bins; ++f) {
        const T v = x[(t * bins + f) * channels + c];
        if (v > best_value) {
          best_value = v;
          best = f;
        }
      }
      out[t * channels + c] = best_value;
      argmax[t * channels + c] = best;
    }
  }
  Node<T>* in = &input.node();
  return finish(tape, std::move(out), input.requires_grad(), "maxpool_freq",
                [in, argmax = std::move(argmax), bins, channels](const std::vector<T>& g) {
                  auto& gi = in->grad();
                  for (std::size_t k = 0; k < g.size(); ++k) {
                    const std::size_t t = k / channels, c = k % channels;
                    gi[(t * bins + argmax[k]) * channels + c] += g[k];
                  }
                });
}

template <typename T>
Var<T> lstm(Tape<T>& tape, const Var<T>& input, const Var<T>& w_input, const Var<T>& w_recurrent,
            const Var<T>& bias, Sequence sequence) {
  check_shape(input.value().rank() == 2 && input.shape()[0] >= 1, "lstm input must be T×D with T >= 1");
  check_shape(w_input.value().rank() == 2 && w_recurrent.value().rank() == 2, "lstm weights must be matrices");
  const std::size_t steps = input.shape()[0], in_dim = input.shape()[1];
  const std::size_t hidden = w_recurrent.shape()[0];
  const std::size_t gates = 4 * hidden;
  check_shape(w_input.shape()[0] == in_dim && w_input.shape()[1] == gates,
              "lstm input weights " + shape_string(w_input.shape()) + " vs input " + shape_string(input.shape()));
  check_shape(w_recurrent.shape()[1] == gates, "lstm recurrent weights must be H×4H");
  check_shape(bias.size() == gates, "lstm bias must have 4H entries");

  auto x = as_matrix(input.value().storage(), steps, in_dim);
  auto wx = as_matrix(w_input.value().storage(), in_dim, gates);
  auto wh = as_matrix(w_recurrent.value().storage(), hidden, gates);
  auto b = as_matrix(bias.value().storage(), 1, gates);

  // Activated gates [i f g o] per step, cell states, tanh(cell), hidden states.
  RowMat<T> act = x * wx;
  act.rowwise() += b.row(0);
  RowMat<T> cell(steps, hidden), cell_tanh(steps, hidden), hid(steps, hidden);
  RowVec<T> h_prev = RowVec<T>::Zero(hidden), c_prev = RowVec<T>::Zero(hidden);
  for (std::size_t t = 0; t < steps; ++t) {
    auto z = act.row(t);
    z.noalias() += h_prev * wh;
    for (std::size_t k = 0; k < hidden; ++k) {
      const T ig = sigmoid_scalar(z(k));
      const T fg = sigmoid_scalar(z(hidden + k));
      const T cg = std::tanh(z(2 * hidden + k));
      const T og = sigmoid_scalar(z(3 * hidden + k));
      z(k) = ig;
      z(hidden + k) = fg;
      z(2 * hidden + k) = cg;
      z(3 * hidden + k) = og;
      const T c = fg * c_prev(k) + ig * cg;
      cell(t, k) = c;
      cell_tanh(t, k) = std::tanh(c);
      hid(t, k) = og * cell_tanh(t, k);
    }
    h_prev = hid.row(t);
    c_prev = cell.row(t);
  }

  Tensor<T> out;
  if (sequence == Sequence::ManyToMany) {
    out = Tensor<T>(Shape{steps, hidden}, std::vector<T>(hid.data(), hid.data() + steps * hidden));
  } else {
    out = Tensor<T>(Shape{hidden}, std::vector<T>(hid.data() + (steps - 1) * hidden, hid.data() + steps * hidden));
  }

  Node<T>* nx = &input.node();
  Node<T>* nwx = &w_input.node();
  Node<T>* nwh = &w_recurrent.node();
  Node<T>* nb = &bias.node();
  const bool rg = input.requires_grad() || w_input.requires_grad() || w_recurrent.requires_grad() ||
                  bias.requires_grad();
  return finish(
      tape, std::move(out), rg, "lstm",
      [nx, nwx, nwh, nb, act = std::move(act), cell = std::move(cell), cell_tanh = std::move(cell_tanh),
       hid = std::move(hid), steps, in_dim, hidden, gates, sequence](const std::vector<T>& g) {
        auto wxm = as_matrix(nwx->value().storage(), in_dim, gates);
        auto whm = as_matrix(nwh->value().storage(), hidden, gates);
        RowMat<T> dz(steps, gates);
        RowVec<T> dh_next = RowVec<T>::Zero(hidden), dc_next = RowVec<T>::Zero(hidden);
        for (std::size_t s = steps; s-- > 0;) {
          for (std::size_t k = 0; k < hidden; ++k) {
            T dh = dh_next(k);
            if (sequence == Sequence::ManyToMany) {
              dh += g[s * hidden + k];
            } else if (s == steps - 1) {
              dh += g[k];
            }
            const T ig = act(s, k), fg = act(s, hidden + k), cg = act(s, 2 * hidden + k),
                    og = act(s, 3 * hidden + k);
            const T ct = cell_tanh(s, k);
            const T c_before = s > 0 ? cell(s - 1, k) : T{0};
            const T dc = dc_next(k) + dh * og * (T(1) - ct * ct);
            dz(s, k) = dc * cg * ig * (T(1) - ig);
            dz(s, hidden + k) = dc * c_before * fg * (T(1) - fg);
            dz(s, 2 * hidden + k) = dc * ig * (T(1) - cg * cg);
            dz(s, 3 * hidden + k) = dh * ct * og * (T(1) - og);
            dc_next(k) = dc * fg;
          }
          dh_next.noalias() = dz.row(s) * whm.transpose();
        }
        if (nwx->requires_grad()) {
          auto gw = as_mut_matrix(nwx->grad(), in_dim, gates);
          gw.noalias() += as_matrix(nx->value().storage(), steps, in_dim).transpose() * dz;
        }
        if (nwh->requires_grad() && steps > 1) {
          auto gw = as_mut_matrix(nwh->grad(), hidden, gates);
          gw.noalias() += hid.topRows(steps - 1).transpose() * dz.bottomRows(steps - 1);
        }
        if (nb->requires_grad()) {
          auto gb = as_mut_matrix(nb->grad(), 1, gates);
          gb += dz.colwise().sum();
        }
        if (nx->requires_grad()) {
          auto gx = as_mut_matrix(nx->grad(), steps, in_dim);
          gx.noalias() += dz * wxm.transpose();
        }
      });
}

template <typename T>
Var<T> batchnorm(Tape<T>& tape, const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                 BatchNormStats<T> stats, Mode mode) {
  check_shape(x.value().rank() == 2, "batchnorm input must be N×D");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  check_shape(gamma.size() == cols && beta.size() == cols, "batchnorm gamma/beta length");
  require(stats.running_mean && stats.running_var, ErrorCode::InvalidConfig, "batchnorm needs running stats");
  check_shape(stats.running_mean->size() == cols && stats.running_var->size() == cols,
              "batchnorm running stats length");
  if (mode == Mode::Train)
    require(rows >= 2, ErrorCode::DegenerateBatch, "batchnorm train mode needs batch >= 2, got " + std::to_string(rows));

  const auto& xv = x.value().storage();
  std::vector<T> mean(cols, T{0}), inv_std(cols, T{0});
  if (mode == Mode::Train) {
    std::vector<T> var(cols, T{0});
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) mean[c] += xv[r * cols + c];
    for (auto& m : mean) m /= static_cast<T>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        const T d = xv[r * cols + c] - mean[c];
        var[c] += d * d;
      }
    for (std::size_t c = 0; c < cols; ++c) {
      var[c] /= static_cast<T>(rows);
      inv_std[c] = T(1) / std::sqrt(var[c] + stats.epsilon);
      (*stats.running_mean)[c] = stats.momentum * (*stats.running_mean)[c] + (T(1) - stats.momentum) * mean[c];
      (*stats.running_var)[c] = stats.momentum * (*stats.running_var)[c] + (T(1) - stats.momentum) * var[c];
    }
  } else {
    for (std::size_t c = 0; c < cols; ++c) {
      mean[c] = (*stats.running_mean)[c];
      inv_std[c] = T(1) / std::sqrt((*stats.running_var)[c] + stats.epsilon);
    }
  }

  Tensor<T> normalized(x.shape());
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const T xh = (xv[r * cols + c] - mean[c]) * inv_std[c];
      normalized[r * cols + c] = xh;
      out[r * cols + c] = gamma.value()[c] * xh + beta.value()[c];
    }

  Node<T>* nx = &x.node();
  Node<T>* ng = &gamma.node();
  Node<T>* nbeta = &beta.node();
  const bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  return finish(tape, std::move(out), rg, "batchnorm",
                [nx, ng, nbeta, normalized = std::move(normalized), inv_std = std::move(inv_std), rows, cols,
                 mode](const std::vector<T>& g) {
                  if (ng->requires_grad()) {
                    auto& gg = ng->grad();
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < cols; ++c) gg[c] += g[r * cols + c] * normalized[r * cols + c];
                  }
                  if (nbeta->requires_grad()) {
                    auto& gb = nbeta->grad();
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
                  }
                  if (!nx->requires_grad()) return;
                  auto& gx = nx->grad();
                  const auto& gamma_v = ng->value();
                  if (mode == Mode::Infer) {
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < cols; ++c)
                        gx[r * cols + c] += g[r * cols + c] * gamma_v[c] * inv_std[c];
                    return;
                  }
                  const T n = static_cast<T>(rows);
                  for (std::size_t c = 0; c < cols; ++c) {
                    T sum_d{0}, sum_dx{0};
                    for (std::size_t r = 0; r < rows; ++r) {
                      const T d = g[r * cols + c] * gamma_v[c];
                      sum_d += d;
                      sum_dx += d * normalized[r * cols + c];
                    }
                    for (std::size_t r = 0; r < rows; ++r) {
                      const T d = g[r * cols + c] * gamma_v[c];
                      gx[r * cols + c] += inv_std[c] / n * (n * d - sum_d - normalized[r * cols + c] * sum_dx);
                    }
                  }
                });
}

template <typename T>
Var<T> dropout(Tape<T>& tape, const Var<T>& x, double rate, Mode mode, std::uint64_t seed) {
  require(rate >= 0.0 && rate < 1.0, ErrorCode::InvalidConfig, "dropout rate must be in [0, 1)");
  if (mode == Mode::Infer || rate == 0.0) return x;
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(1.0 - rate);
  const T survivor_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(x.size());
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = keep(rng) ? survivor_scale : T{0};
    out[i] = x.value()[i] * mask[i];
  }
  Node<T>* in = &x.node();
  return finish(tape, std::move(out), x.requires_grad(), "dropout",
                [in, mask = std::move(mask)](const std::vector<T>& g) {
                  auto& gi = in->grad();
                  for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * mask[i];
                });
}

template <typename T>
Var<T> loss(Tape<T>& tape, const Var<T>& pred, const Var<T>& target, LossKind kind) {
  check_shape(pred.size() == target.size() && pred.size() > 0,
              "loss shapes " + shape_string(pred.shape()) + " vs " + shape_string(target.shape()));
  constexpr T lo = T(1e-7), hi = T(1) - T(1e-7);
  const auto& p = pred.value().storage();
  const auto& y = target.value().storage();
  const std::size_t n = p.size();
  // Reduced in extended precision: finite-difference checks subtract two nearly equal losses.
  long double value = 0.0L;
  std::vector<T> dpred(n, T{0});

  switch (kind) {
    case LossKind::Mse:
      for (std::size_t i = 0; i < n; ++i) {
        const T d = p[i] - y[i];
        value += static_cast<long double>(d) * d;
        dpred[i] = T(2) * d / static_cast<T>(n);
      }
      value /= static_cast<long double>(n);
      break;
    case LossKind::BinaryCrossEntropy:
      for (std::size_t i = 0; i < n; ++i) {
        const T pc = std::clamp(p[i], lo, hi);
        value -= static_cast<long double>(y[i] * std::log(pc) + (T(1) - y[i]) * std::log(T(1) - pc));
        if (p[i] > lo && p[i] < hi) dpred[i] = (-y[i] / pc + (T(1) - y[i]) / (T(1) - pc)) / static_cast<T>(n);
      }
      value /= static_cast<long double>(n);
      break;
    case LossKind::CategoricalCrossEntropy: {
      const std::size_t classes = pred.shape().back();
      const T rows = static_cast<T>(n / classes);
      for (std::size_t i = 0; i < n; ++i) {
        const T pc = std::clamp(p[i], lo, hi);
        value -= static_cast<long double>(y[i] * std::log(pc));
        if (p[i] > lo && p[i] < hi) dpred[i] = -y[i] / pc / rows;
      }
      value /= static_cast<long double>(rows);
      break;
    }
  }

  Node<T>* np = &pred.node();
  Node<T>* nt = &target.node();
  require(!nt->requires_grad() || kind == LossKind::Mse, ErrorCode::InvalidConfig,
          "cross-entropy targets must be constants");
  return finish(tape, Tensor<T>::scalar(static_cast<T>(value)), pred.requires_grad() || target.requires_grad(), "loss",
                [np, nt, dpred = std::move(dpred)](const std::vector<T>& g) {
                  if (np->requires_grad()) {
                    auto& gp = np->grad();
                    for (std::size_t i = 0; i < dpred.size(); ++i) gp[i] += g[0] * dpred[i];
                  }
                  if (nt->requires_grad()) {
                    auto& gt = nt->grad();
                    for (std::size_t i = 0; i < dpred.size(); ++i) gt[i] -= g[0] * dpred[i];
                  }
                });
}

#define FINMINE_INSTANTIATE_OPS(T)                                                                          \
  template Var<T> reshape(Tape<T>&, const Var<T>&, Shape);                                                \
  template Var<T> add(Tape<T>&, const Var<T>&, const Var<T>&);                                           \
  template Var<T> mul(Tape<T>&, const Var<T>&, const Var<T>&);                                           \
  template Var<T> scale(Tape<T>&, const Var<T>&, T);                                                      \
  template Var<T> sum(Tape<T>&, const Var<T>&);                                                           \
  template Var<T> relu(Tape<T>&, const Var<T>&);                                                          \
  template Var<T> sigmoid(Tape<T>&, const Var<T>&);                                                       \
  template Var<T> tanh(Tape<T>&, const Var<T>&);                                                          \
  template Var<T> softmax_rows(Tape<T>&, const Var<T>&);                                                  \
  template Var<T> activate(Tape<T>&, const Var<T>&, Activation);                                          \
  template Var<T> reverse_rows(Tape<T>&, const Var<T>&);                                                  \
  template Var<T> concat_cols(Tape<T>&, const Var<T>&, const Var<T>&);                                   \
  template Var<T> stack_rows(Tape<T>&, const std::vector<Var<T>>&);                                       \
  template Var<T> repeat_vector(Tape<T>&, const Var<T>&, std::size_t);                                    \
  template Var<T> linear(Tape<T>&, const Var<T>&, const Var<T>&, const Var<T>&);                         \
  template Var<T> dense(Tape<T>&, const Var<T>&, const Var<T>&, const Var<T>&, Activation);              \
  template Var<T> conv2d(Tape<T>&, const Var<T>&, const Var<T>&, const Var<T>&);                         \
  template Var<T> maxpool_freq(Tape<T>&, const Var<T>&);                                                  \
  template Var<T> lstm(Tape<T>&, const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&, Sequence);  \
  template Var<T> batchnorm(Tape<T>&, const Var<T>&, const Var<T>&, const Var<T>&, BatchNormStats<T>, Mode); \
  template Var<T> dropout(Tape<T>&, const Var<T>&, double, Mode, std::uint64_t);                          \
  template Var<T> loss(Tape<T>&, const Var<T>&, const Var<T>&, LossKind);

FINMINE_INSTANTIATE_OPS(float)
FINMINE_INSTANTIATE_OPS(double)

}  // namespace finmine
