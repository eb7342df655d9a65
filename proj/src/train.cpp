#include "finmine/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <map>
#include <set>
#include <sstream>
#include <thread>

namespace finmine {
namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a simple combination
  std::uint64_t z = a + 0x9E3779B97F4A7C15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::vector<std::vector<float>> zero_like(std::span<Parameter<float>* const> params) {
  std::vector<std::vector<float>> out;
  for (const auto* p : params) out.emplace_back(p->value.size(), 0.0f);
  return out;
}

void add_gradients(std::vector<std::vector<float>>& acc, const Tape<float>& tape,
                   std::span<Parameter<float>* const> params, float weight) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto g = tape.gradient(*params[i]);
    for (std::size_t k = 0; k < g.size(); ++k) acc[i][k] += weight * g[k];
  }
}

struct ExampleResult {
  double loss = 0.0;
  std::vector<std::vector<float>> grads;
};

ExampleResult autoencoder_example(const Autoencoder<float>& model, const Window& window,
                                  std::span<Parameter<float>* const> params) {
  Tape<float> tape;
  Var<float> input = tape.constant(window.values);
  Var<float> mse = loss(tape, model.reconstruct(tape, input), input, LossKind::Mse);
  tape.backward(mse);
  ExampleResult r;
  r.loss = mse.value()[0];
  r.grads.reserve(params.size());
  for (const auto* p : params) {
    auto g = tape.gradient(*p);
    r.grads.emplace_back(g.begin(), g.end());
  }
  return r;
}

std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t count, std::size_t batch_size,
                                                              bool merge_singleton) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t start = 0; start < count; start += batch_size)
    out.emplace_back(start, std::min(count, start + batch_size));
  if (merge_singleton && out.size() > 1 && out.back().second - out.back().first == 1) {
    out[out.size() - 2].second = out.back().second;
    out.pop_back();
  }
  return out;
}

void clip_gradients(std::vector<std::vector<float>>& grads, double max_norm) {
  if (max_norm <= 0.0) return;
  double ss = 0.0;
  for (const auto& g : grads)
    for (float v : g) ss += static_cast<double>(v) * v;
  const double norm = std::sqrt(ss);
  if (norm <= max_norm) return;
  const auto scale = static_cast<float>(max_norm / norm);
  for (auto& g : grads)
    for (auto& v : g) v *= scale;
}

void check_loss(double value, std::size_t epoch) {
  if (!std::isfinite(value)) fail(ErrorCode::NonFiniteLoss, "loss became non-finite in epoch " + std::to_string(epoch));
}

}  // namespace

void TrainConfig::validate() const {
  require(batch_size >= 1, ErrorCode::InvalidConfig, "batch size must be >= 1");
  require(epochs >= 1, ErrorCode::InvalidConfig, "epochs must be >= 1");
  require(learning_rate > 0.0, ErrorCode::InvalidConfig, "learning rate must be positive");
  require(threads >= 1, ErrorCode::InvalidConfig, "threads must be >= 1");
  require(clip_norm >= 0.0, ErrorCode::InvalidConfig, "clip norm must be non-negative");
}

std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, std::size_t epoch, bool shuffle) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) {
    std::mt19937_64 rng(mix(seed, epoch));
    std::shuffle(order.begin(), order.end(), rng);
  }
  return order;
}

TrainHistory train_autoencoder(Autoencoder<float>& model, std::span<const Window> windows, const TrainConfig& config,
                               const EpochCallback& on_epoch) {
  config.validate();
  require(!windows.empty(), ErrorCode::EmptyDataset, "no training windows");
  for (const auto& w : windows)
    require(w.values.rank() == 2 && w.num_bins() == model.bins(), ErrorCode::ShapeMismatch,
            "window " + w.source_id + " has shape " + shape_string(w.values.shape()) + ", model expects " +
                std::to_string(model.bins()) + " bins");

  const auto params = model.parameters();
  AdamConfig adam;
  adam.learning_rate = config.learning_rate;
  auto state = make_adam_state<float>(params, adam);

  TrainHistory history;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = epoch_order(windows.size(), config.seed, epoch, config.shuffle);
    double epoch_total = 0.0;
    for (const auto& [begin, end] : batch_ranges(order.size(), config.batch_size, false)) {
      const std::size_t n = end - begin;
      auto grads = zero_like(params);
      double batch_loss = 0.0;
      // Waves of `threads` examples; results are reduced in example order.
      for (std::size_t wave = begin; wave < end; wave += config.threads) {
        const std::size_t wave_end = std::min(end, wave + config.threads);
        std::vector<ExampleResult> results(wave_end - wave);
        if (results.size() == 1) {
          results[0] = autoencoder_example(model, windows[order[wave]], params);
        } else {
          std::vector<std::exception_ptr> errors(results.size());
          std::vector<std::thread> workers;
          for (std::size_t j = 0; j < results.size(); ++j)
            workers.emplace_back([&, j] {
              try {
                results[j] = autoencoder_example(model, windows[order[wave + j]], params);
              } catch (...) {
                errors[j] = std::current_exception();
              }
            });
          for (auto& w : workers) w.join();
          for (auto& e : errors)
            if (e) std::rethrow_exception(e);
        }
        for (auto& r : results) {
          batch_loss += r.loss;
          for (std::size_t i = 0; i < params.size(); ++i)
            for (std::size_t k = 0; k < r.grads[i].size(); ++k) grads[i][k] += r.grads[i][k];
        }
      }
      const float inv = 1.0f / static_cast<float>(n);
      for (auto& g : grads)
        for (auto& v : g) v *= inv;
      check_loss(batch_loss, epoch);
      clip_gradients(grads, config.clip_norm);
      adam_step<float>(params, grads, state);
      epoch_total += batch_loss;
    }
    const double mean = epoch_total / static_cast<double>(windows.size());
    check_loss(mean, epoch);
    history.epoch_loss.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  return history;
}

double reconstruction_loss(const Autoencoder<float>& model, std::span<const Window> windows) {
  require(!windows.empty(), ErrorCode::EmptyDataset, "no windows");
  double total = 0.0;
  for (const auto& w : windows) {
    Tape<float> tape;
    Var<float> input = tape.constant(w.values);
    total += loss(tape, model.reconstruct(tape, input), input, LossKind::Mse).value()[0];
  }
  return total / static_cast<double>(windows.size());
}

TrainHistory train_head(Classifier<float>& model, std::span<const Window> windows, std::span<const int> labels,
                        const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  require(!windows.empty(), ErrorCode::EmptyDataset, "no labeled windows");
  require(windows.size() == labels.size(), ErrorCode::ShapeMismatch, "window and label counts differ");
  const std::size_t outputs = model.head_config().outputs();
  const bool binary = model.head_config().task == HeadTask::Detect;
  const std::size_t classes = binary ? 2 : outputs;
  std::set<int> seen;
  for (int l : labels) {
    require(l >= 0 && static_cast<std::size_t>(l) < classes, ErrorCode::InvalidConfig,
            "label " + std::to_string(l) + " outside [0, " + std::to_string(classes) + ")");
    seen.insert(l);
  }
  require(seen.size() >= 2, ErrorCode::SingleClassDataset, "training labels contain a single class");

  model.set_freeze_policy(config.freeze);
  const bool cached = config.freeze == FreezePolicy::ExceptLastLstm;
  std::vector<Tensor<float>> prefixes;
  if (cached) {
    prefixes.reserve(windows.size());
    for (const auto& w : windows) {
      Tape<float> tape;
      prefixes.push_back(model.encoder().encode_prefix(tape, tape.constant(w.values)).value());
    }
  }

  const auto params = model.parameters();
  AdamConfig adam;
  adam.learning_rate = config.learning_rate;
  auto state = make_adam_state<float>(params, adam);

  TrainHistory history;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = epoch_order(windows.size(), config.seed, epoch, config.shuffle);
    double epoch_total = 0.0;
    for (const auto& [begin, end] : batch_ranges(order.size(), config.batch_size, true)) {
      const std::size_t n = end - begin;
      Tape<float> tape;
      std::vector<Var<float>> inputs;
      Tensor<float> target(Shape{n, outputs});
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t idx = order[begin + j];
        inputs.push_back(tape.constant(cached ? prefixes[idx] : windows[idx].values));
        if (binary) {
          target[j] = static_cast<float>(labels[idx]);
        } else {
          target.at(j, static_cast<std::size_t>(labels[idx])) = 1.0f;
        }
      }
      const std::uint64_t dropout_seed = mix(config.seed ^ 0xA5A5A5A5ull, step++);
      Var<float> probs = cached ? model.forward_from_prefix(tape, inputs, Mode::Train, dropout_seed)
                                : model.forward(tape, inputs, Mode::Train, dropout_seed);
      Var<float> l = loss(tape, probs, tape.constant(target),
                          binary ? LossKind::BinaryCrossEntropy : LossKind::CategoricalCrossEntropy);
      check_loss(l.value()[0], epoch);
      tape.backward(l);
      auto grads = zero_like(params);
      add_gradients(grads, tape, params, 1.0f);
      clip_gradients(grads, config.clip_norm);
      adam_step<float>(params, grads, state);
      epoch_total += l.value()[0] * static_cast<double>(n);
    }
    const double mean = epoch_total / static_cast<double>(windows.size());
    check_loss(mean, epoch);
    history.epoch_loss.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }

  // The moving averages lag far behind after a few hundred steps, so
  // inference uses statistics of the final encoder over the training set.
  const std::size_t dim = model.encoder().config().embedding_dim;
  Tensor<float> embeddings(Shape{windows.size(), dim});
  for (std::size_t i = 0; i < windows.size(); ++i) {
    Tape<float> tape;
    Var<float> e = cached ? model.encoder().embed(tape, tape.constant(prefixes[i]))
                          : model.encoder().encode(tape, tape.constant(windows[i].values));
    std::copy(e.value().data().begin(), e.value().data().end(), embeddings.data().begin() + i * dim);
  }
  model.set_population_statistics(embeddings);
  return history;
}

std::vector<std::vector<float>> predict(Classifier<float>& model, std::span<const Window> windows) {
  constexpr std::size_t chunk = 32;
  std::vector<std::vector<float>> out;
  out.reserve(windows.size());
  for (std::size_t begin = 0; begin < windows.size(); begin += chunk) {
    const std::size_t end = std::min(windows.size(), begin + chunk);
    Tape<float> tape;
    std::vector<Var<float>> inputs;
    for (std::size_t i = begin; i < end; ++i) inputs.push_back(tape.constant(windows[i].values));
    Var<float> probs = model.forward(tape, inputs, Mode::Infer);
    const std::size_t k = probs.shape()[1];
    for (std::size_t r = 0; r < end - begin; ++r)
      out.emplace_back(probs.value().data().begin() + r * k, probs.value().data().begin() + (r + 1) * k);
  }
  return out;
}

DatasetSplit split_dataset(std::span<const int> labels, double train_fraction, std::uint64_t seed) {
  require(train_fraction > 0.0 && train_fraction < 1.0, ErrorCode::InvalidConfig, "train fraction must be in (0, 1)");
  require(!labels.empty(), ErrorCode::EmptyDataset, "nothing to split");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::mt19937_64 rng(seed);
  DatasetSplit split;
  for (auto& [label, members] : by_class) {
    require(members.size() >= 2, ErrorCode::ClassTooSmall,
            "class " + std::to_string(label) + " has " + std::to_string(members.size()) + " item(s), need >= 2");
    std::shuffle(members.begin(), members.end(), rng);
    const auto wanted = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(members.size())));
    const std::size_t n_train = std::clamp<std::size_t>(wanted, 1, members.size() - 1);
    split.train.insert(split.train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.test.insert(split.test.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train), members.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

ConfusionMatrix::ConfusionMatrix(std::vector<std::string> names, std::vector<std::vector<std::int64_t>> table)
    : class_names(std::move(names)), counts(std::move(table)) {
  require(counts.size() == class_names.size(), ErrorCode::ShapeMismatch, "confusion matrix needs one row per class");
  for (const auto& row : counts) {
    require(row.size() == counts.size(), ErrorCode::ShapeMismatch, "confusion matrix must be square");
    for (auto v : row) require(v >= 0, ErrorCode::InvalidConfig, "confusion counts must be non-negative");
  }
}

ConfusionMatrix::ConfusionMatrix(std::vector<std::string> names)
    : class_names(std::move(names)),
      counts(class_names.size(), std::vector<std::int64_t>(class_names.size(), 0)) {}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t s = 0;
  for (const auto& row : counts) s += std::accumulate(row.begin(), row.end(), std::int64_t{0});
  return s;
}

std::int64_t ConfusionMatrix::trace() const {
  std::int64_t s = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) s += counts[i][i];
  return s;
}

double ConfusionMatrix::accuracy() const {
  const auto n = total();
  return n > 0 ? static_cast<double>(trace()) / static_cast<double>(n) : 0.0;
}

std::int64_t ConfusionMatrix::row_sum(std::size_t truth) const {
  return std::accumulate(counts.at(truth).begin(), counts.at(truth).end(), std::int64_t{0});
}

std::string ConfusionMatrix::to_csv() const {
  std::ostringstream os;
  os << "truth\\prediction";
  for (const auto& n : class_names) os << ',' << n;
  os << '\n';
  for (std::size_t r = 0; r < counts.size(); ++r) {
    os << class_names[r];
    for (auto v : counts[r]) os << ',' << v;
    os << '\n';
  }
  return os.str();
}

ConfusionMatrix confusion_from_probabilities(const std::vector<std::vector<float>>& probabilities,
                                             std::span<const int> labels, std::vector<std::string> class_names,
                                             double threshold) {
  require(!labels.empty(), ErrorCode::EmptyDataset, "empty test set");
  require(probabilities.size() == labels.size(), ErrorCode::ShapeMismatch, "prediction and label counts differ");
  ConfusionMatrix m(std::move(class_names));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto& p = probabilities[i];
    std::size_t decision;
    if (p.size() == 1) {
      decision = p[0] >= threshold ? 1 : 0;
    } else {
      decision = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    }
    const auto truth = static_cast<std::size_t>(labels[i]);
    require(truth < m.size() && decision < m.size(), ErrorCode::ShapeMismatch, "label outside class range");
    ++m.counts[truth][decision];
  }
  return m;
}

ConfusionMatrix evaluate(Classifier<float>& model, std::span<const Window> windows, std::span<const int> labels,
                         std::vector<std::string> class_names, double threshold) {
  require(!windows.empty(), ErrorCode::EmptyDataset, "empty test set");
  return confusion_from_probabilities(predict(model, windows), labels, std::move(class_names), threshold);
}

void write_loss_csv(const TrainHistory& history, const std::filesystem::path& path) {
  std::ostringstream os;
  os.precision(9);
  os << "epoch,mean_loss\n";
  for (std::size_t e = 0; e < history.epoch_loss.size(); ++e) os << e + 1 << ',' << history.epoch_loss[e] << '\n';
  write_file_atomic(path, os.str());
}

}  // namespace finmine
