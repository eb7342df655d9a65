#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "finmine/autodiff.hpp"
#include "finmine/checkpoint.hpp"
#include "finmine/ops.hpp"
#include "finmine/optim.hpp"

namespace finmine {

struct EncoderConfig {
  std::size_t num_filters = 256;
  std::size_t kernel_time = 4;   // frames; 4 × 5 ms hop ≈ 0.02 s
  std::size_t kernel_freq = 8;   // bins; 8 × 86.1 Hz ≈ 680 Hz at fft size 512
  std::size_t bilstm_hidden = 128;  // per direction, encoder and decoder
  std::size_t embedding_dim = 128;
  std::size_t decoder_hidden = 128;
  bool decoder_conv_relu = false;

  void validate(std::size_t bins) const;
};

enum class Init { Xavier, Zeros };

template <typename T>
struct LstmParams {
  Parameter<T> w_input;
  Parameter<T> w_recurrent;
  Parameter<T> bias;

  void build(const std::string& prefix, std::size_t input_dim, std::size_t hidden, Init init, std::mt19937_64& rng);
  std::size_t hidden() const { return w_recurrent.value.dim(0); }
  Var<T> run(Tape<T>& tape, const Var<T>& input, Sequence sequence) const;
  void collect(std::vector<Parameter<T>*>& out);
};

template <typename T>
struct BiLstmParams {
  LstmParams<T> forward;
  LstmParams<T> backward;

  void build(const std::string& prefix, std::size_t input_dim, std::size_t hidden, Init init, std::mt19937_64& rng);
  /// T×D -> T×2H, forward states then time-aligned backward states.
  Var<T> run(Tape<T>& tape, const Var<T>& input) const;
  void collect(std::vector<Parameter<T>*>& out);
};

/// Runs a forward and a backward LSTM and concatenates their per-step outputs.
template <typename T>
Var<T> bidirectional_lstm(Tape<T>& tape, const Var<T>& input, const LstmParams<T>& forward,
                          const LstmParams<T>& backward);

/// conv -> max over frequency -> BiLSTM -> many-to-one LSTM.
template <typename T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& config, std::size_t bins, std::uint64_t seed, Init init = Init::Xavier);
  Encoder(const Encoder&) = delete;
  Encoder& operator=(const Encoder&) = delete;
  Encoder(Encoder&&) = default;
  Encoder& operator=(Encoder&&) = default;

  const EncoderConfig& config() const { return config_; }
  std::size_t bins() const { return bins_; }

  /// frames×bins window -> frames×(2·bilstm_hidden) BiLSTM outputs.
  Var<T> encode_prefix(Tape<T>& tape, const Var<T>& window) const;
  /// BiLSTM outputs -> embedding (the last LSTM).
  Var<T> embed(Tape<T>& tape, const Var<T>& prefix) const;
  Var<T> encode(Tape<T>& tape, const Var<T>& window) const;

  Parameter<T>& conv_kernels() { return conv_kernels_; }
  const Parameter<T>& conv_kernels() const { return conv_kernels_; }

  std::vector<Parameter<T>*> parameters();
  /// Parameters upstream of the embedding LSTM.
  std::vector<Parameter<T>*> prefix_parameters();
  std::vector<Parameter<T>*> embedding_parameters();

 private:
  EncoderConfig config_;
  std::size_t bins_ = 0;
  Parameter<T> conv_kernels_;
  Parameter<T> conv_bias_;
  BiLstmParams<T> bilstm_;
  LstmParams<T> embedding_;
};

/// repeat -> LSTM -> BiLSTM -> per-frame projection to F -> conv -> 1×1 conv.
template <typename T>
class Decoder {
 public:
  Decoder() = default;
  Decoder(const EncoderConfig& config, std::size_t bins, std::mt19937_64& rng, Init init = Init::Xavier);
  Decoder(const Decoder&) = delete;
  Decoder& operator=(const Decoder&) = delete;
  Decoder(Decoder&&) = default;
  Decoder& operator=(Decoder&&) = default;

  Var<T> decode(Tape<T>& tape, const Var<T>& embedding, std::size_t frames) const;
  std::vector<Parameter<T>*> parameters();

 private:
  EncoderConfig config_;
  std::size_t bins_ = 0;
  LstmParams<T> lstm_;
  BiLstmParams<T> bilstm_;
  Parameter<T> projection_weights_;
  Parameter<T> projection_bias_;
  Parameter<T> conv_kernels_;
  Parameter<T> conv_bias_;
  Parameter<T> deconv_kernel_;
  Parameter<T> deconv_bias_;
};

template <typename T>
class Autoencoder {
 public:
  Autoencoder() = default;
  Autoencoder(const EncoderConfig& config, std::size_t bins, std::uint64_t seed, Init init = Init::Xavier);

  const EncoderConfig& config() const { return encoder_.config(); }
  std::size_t bins() const { return encoder_.bins(); }

  Encoder<T>& encoder() { return encoder_; }
  const Encoder<T>& encoder() const { return encoder_; }
  Decoder<T>& decoder() { return decoder_; }
  const Decoder<T>& decoder() const { return decoder_; }

  Var<T> encode(Tape<T>& tape, const Var<T>& window) const { return encoder_.encode(tape, window); }
  Var<T> decode(Tape<T>& tape, const Var<T>& embedding, std::size_t frames) const {
    return decoder_.decode(tape, embedding, frames);
  }
  Var<T> reconstruct(Tape<T>& tape, const Var<T>& window) const {
    return decode(tape, encode(tape, window), window.shape()[0]);
  }

  std::vector<Parameter<T>*> parameters();

  std::vector<NamedTensor> to_tensors() const;
  static Autoencoder from_tensors(const std::vector<NamedTensor>& tensors);

 private:
  Encoder<T> encoder_;
  Decoder<T> decoder_;
};

Autoencoder<float> build_autoencoder(const EncoderConfig& config, std::size_t bins, std::uint64_t seed);
void save_checkpoint(const Autoencoder<float>& model, const std::filesystem::path& path);
Autoencoder<float> load_autoencoder(const std::filesystem::path& path);

// Transfer-learning heads ---------------------------------------------------

enum class HeadTask { Detect, Classify };
enum class FreezePolicy { ExceptLastLstm, None };

HeadTask parse_task(const std::string& name);
FreezePolicy parse_freeze(const std::string& name);
std::string task_name(HeadTask task);
std::string freeze_name(FreezePolicy policy);

struct HeadConfig {
  std::vector<std::size_t> hidden{64, 32};
  double dropout = 0.5;
  HeadTask task = HeadTask::Detect;
  std::size_t num_classes = 4;  // Classify only
  FreezePolicy freeze = FreezePolicy::ExceptLastLstm;

  std::size_t outputs() const { return task == HeadTask::Detect ? 1 : num_classes; }
};

/// head(batchnorm(encode(window))): dense relu layers, dropout, then a
/// sigmoid unit (Detect) or a softmax layer (Classify).
template <typename T>
class Classifier {
 public:
  Classifier() = default;
  Classifier(Encoder<T> encoder, const HeadConfig& head, std::uint64_t seed);
  Classifier(const Classifier&) = delete;
  Classifier& operator=(const Classifier&) = delete;
  Classifier(Classifier&&) = default;
  Classifier& operator=(Classifier&&) = default;

  const HeadConfig& head_config() const { return head_; }
  Encoder<T>& encoder() { return encoder_; }
  const Encoder<T>& encoder() const { return encoder_; }

  /// Re-applies the trainable flags for `policy`.
  void set_freeze_policy(FreezePolicy policy);

  /// Replaces the batchnorm running statistics with the population mean and
  /// unbiased variance of `embeddings` (N×embedding_dim).
  void set_population_statistics(const Tensor<T>& embeddings);

  /// N windows -> N×outputs probabilities. In train mode batch statistics
  /// are used and updated, and dropout draws its mask from `dropout_seed`.
  Var<T> forward(Tape<T>& tape, const std::vector<Var<T>>& windows, Mode mode, std::uint64_t dropout_seed = 0);
  /// Same, starting from cached encoder prefixes (frozen upstream layers).
  Var<T> forward_from_prefix(Tape<T>& tape, const std::vector<Var<T>>& prefixes, Mode mode,
                             std::uint64_t dropout_seed = 0);
  Var<T> head_forward(Tape<T>& tape, const Var<T>& embeddings, Mode mode, std::uint64_t dropout_seed);

  std::vector<Parameter<T>*> parameters();
  std::vector<Parameter<T>*> head_parameters();

  std::vector<NamedTensor> to_tensors() const;
  static Classifier from_tensors(const std::vector<NamedTensor>& tensors);

 private:
  Encoder<T> encoder_;
  HeadConfig head_;
  Parameter<T> bn_gamma_;
  Parameter<T> bn_beta_;
  Parameter<T> bn_mean_;
  Parameter<T> bn_var_;
  std::vector<Parameter<T>> dense_weights_;
  std::vector<Parameter<T>> dense_bias_;
};

Classifier<float> attach_head(Encoder<float> encoder, const HeadConfig& head, std::uint64_t seed);
void save_checkpoint(const Classifier<float>& model, const std::filesystem::path& path);
Classifier<float> load_classifier(const std::filesystem::path& path);

/// Builds an encoder from the "encoder.*" tensors of any checkpoint.
Encoder<float> encoder_from_tensors(const std::vector<NamedTensor>& tensors);

// Kernel visualisation --------------------------------------------------------

struct GridLayout {
  std::size_t rows = 0;
  std::size_t cols = 0;
};

/// Near-square grid: cols = ceil(sqrt(n)), rows = ceil(n / cols).
GridLayout kernel_grid_layout(std::size_t count);

enum class ImageFormat { Pgm, Svg };

/// Renders kh×kw×1×K kernels as a grid of tiles, each min-max normalized on
/// its own (constant tiles render mid-gray). Time runs left to right,
/// frequency bottom to top.
std::string render_kernel_grid(const Tensor<float>& kernels, ImageFormat format, std::size_t pixel_scale = 4);
void export_first_layer_kernels(const Encoder<float>& encoder, const std::filesystem::path& path);

}  // namespace finmine
