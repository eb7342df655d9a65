#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "finmine/model.hpp"
#include "finmine/spectrogram.hpp"

namespace finmine {

struct TrainConfig {
  std::size_t batch_size = 50;
  std::size_t epochs = 128;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  bool shuffle = true;
  FreezePolicy freeze = FreezePolicy::ExceptLastLstm;  // heads only
  std::size_t threads = 1;
  double clip_norm = 0.0;  // rescale the batch gradient to at most this L2 norm; 0 disables

  static TrainConfig autoencoder_defaults() { return {}; }
  static TrainConfig head_defaults() {
    TrainConfig c;
    c.batch_size = 10;
    c.epochs = 25;
    return c;
  }
  void validate() const;
};

struct TrainHistory {
  std::vector<double> epoch_loss;  // mean loss per epoch
};

using EpochCallback = std::function<void(std::size_t epoch, double mean_loss)>;

/// Example order for one epoch; a pure function of (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, std::size_t epoch, bool shuffle);

/// Minimizes reconstruction MSE with ADAM. Per-example gradients may be
/// computed on `threads` workers; they are summed in example order, so the
/// result does not depend on the worker count.
TrainHistory train_autoencoder(Autoencoder<float>& model, std::span<const Window> windows, const TrainConfig& config,
                               const EpochCallback& on_epoch = {});

/// Mean reconstruction MSE over windows.
double reconstruction_loss(const Autoencoder<float>& model, std::span<const Window> windows);

/// Trains a head with binary (Detect, labels 0/1) or categorical
/// cross-entropy. Under FreezePolicy::ExceptLastLstm the frozen encoder
/// prefix is evaluated once per window and reused across epochs. A trailing
/// batch of one example is merged into the preceding batch.
TrainHistory train_head(Classifier<float>& model, std::span<const Window> windows, std::span<const int> labels,
                        const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Inference-mode probabilities, one row per window.
std::vector<std::vector<float>> predict(Classifier<float>& model, std::span<const Window> windows);

struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Per-class proportional split; each class keeps at least one item on each
/// side. Indices are returned in ascending order.
DatasetSplit split_dataset(std::span<const int> labels, double train_fraction = 0.6, std::uint64_t seed = 0);

struct ConfusionMatrix {
  std::vector<std::string> class_names;
  std::vector<std::vector<std::int64_t>> counts;  // [truth][prediction]

  ConfusionMatrix() = default;
  ConfusionMatrix(std::vector<std::string> names, std::vector<std::vector<std::int64_t>> table);
  explicit ConfusionMatrix(std::vector<std::string> names);

  std::size_t size() const { return counts.size(); }
  std::int64_t total() const;
  std::int64_t trace() const;
  double accuracy() const;
  std::int64_t row_sum(std::size_t truth) const;

  std::string to_csv() const;
};

/// Decision = argmax for softmax heads, probability >= threshold (label 1)
/// for the sigmoid head.
ConfusionMatrix evaluate(Classifier<float>& model, std::span<const Window> windows, std::span<const int> labels,
                         std::vector<std::string> class_names, double threshold = 0.5);

ConfusionMatrix confusion_from_probabilities(const std::vector<std::vector<float>>& probabilities,
                                             std::span<const int> labels, std::vector<std::string> class_names,
                                             double threshold = 0.5);

void write_loss_csv(const TrainHistory& history, const std::filesystem::path& path);

}  // namespace finmine
