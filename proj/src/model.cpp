#include "finmine/model.hpp"

#include <algorithm>
#include <cmath>

namespace finmine {
namespace {

template <typename T>
void init_param(Parameter<T>& p, std::string name, Shape shape, Init init, std::size_t fan_in, std::size_t fan_out,
                std::mt19937_64& rng) {
  p.name = std::move(name);
  p.value = Tensor<T>(std::move(shape));
  p.trainable = true;
  if (init == Init::Xavier) xavier_uniform(p.value, fan_in, fan_out, rng);
}

template <typename T>
void init_const(Parameter<T>& p, std::string name, Shape shape, T value, bool trainable = true) {
  p.name = std::move(name);
  p.value = Tensor<T>(std::move(shape), value);
  p.trainable = trainable;
}

const NamedTensor* find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name) {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

const Tensor<float>& need_tensor(const std::vector<NamedTensor>& tensors, const std::string& name) {
  const NamedTensor* t = find_tensor(tensors, name);
  if (!t) fail(ErrorCode::CorruptCheckpoint, "checkpoint lacks tensor '" + name + "'");
  return t->tensor;
}

std::size_t need_dim(const std::vector<NamedTensor>& tensors, const std::string& name, std::size_t rank,
                     std::size_t axis) {
  const auto& t = need_tensor(tensors, name);
  if (t.rank() != rank) fail(ErrorCode::CorruptCheckpoint, "tensor '" + name + "' has unexpected rank");
  return t.dim(axis);
}

float need_scalar(const std::vector<NamedTensor>& tensors, const std::string& name) {
  const auto& t = need_tensor(tensors, name);
  if (t.size() != 1) fail(ErrorCode::CorruptCheckpoint, "tensor '" + name + "' is not a scalar");
  return t[0];
}

template <typename T>
void load_values(std::span<Parameter<T>* const> params, const std::vector<NamedTensor>& tensors) {
  for (Parameter<T>* p : params) {
    const auto& t = need_tensor(tensors, p->name);
    if (t.shape() != p->value.shape())
      fail(ErrorCode::CorruptCheckpoint, "tensor '" + p->name + "' has shape " + shape_string(t.shape()) +
                                             ", expected " + shape_string(p->value.shape()));
    p->value = t.template cast<T>();
  }
}

template <typename T>
void append_tensors(std::vector<NamedTensor>& out, std::span<Parameter<T>* const> params) {
  for (const Parameter<T>* p : params) out.push_back({p->name, p->value.template cast<float>()});
}

NamedTensor meta(const std::string& name, float value) { return {"meta." + name, Tensor<float>::scalar(value)}; }

struct InferredEncoder {
  EncoderConfig config;
  std::size_t bins = 0;
};

InferredEncoder infer_encoder(const std::vector<NamedTensor>& tensors) {
  InferredEncoder r;
  r.config.kernel_time = need_dim(tensors, "encoder.conv.kernels", 4, 0);
  r.config.kernel_freq = need_dim(tensors, "encoder.conv.kernels", 4, 1);
  r.config.num_filters = need_dim(tensors, "encoder.conv.kernels", 4, 3);
  r.config.bilstm_hidden = need_dim(tensors, "encoder.bilstm.forward.w_recurrent", 2, 0);
  r.config.embedding_dim = need_dim(tensors, "encoder.embedding.w_recurrent", 2, 0);
  if (find_tensor(tensors, "decoder.lstm.w_recurrent"))
    r.config.decoder_hidden = need_dim(tensors, "decoder.lstm.w_recurrent", 2, 0);
  if (find_tensor(tensors, "meta.decoder_conv_relu"))
    r.config.decoder_conv_relu = need_scalar(tensors, "meta.decoder_conv_relu") != 0.0f;
  const float bins = need_scalar(tensors, "meta.bins");
  if (!(bins >= 1.0f)) fail(ErrorCode::CorruptCheckpoint, "meta.bins must be positive");
  r.bins = static_cast<std::size_t>(bins);
  return r;
}

}  // namespace

void EncoderConfig::validate(std::size_t bins) const {
  require(num_filters >= 1 && kernel_time >= 1 && kernel_freq >= 1, ErrorCode::InvalidConfig,
          "filter count and kernel dims must be >= 1");
  require(bilstm_hidden >= 1 && embedding_dim >= 1 && decoder_hidden >= 1, ErrorCode::InvalidConfig,
          "recurrent sizes must be >= 1");
  require(bins >= kernel_freq, ErrorCode::InvalidConfig,
          std::to_string(bins) + " frequency bins is fewer than the kernel's " + std::to_string(kernel_freq));
}

// LSTM parameter blocks --------------------------------------------------------

template <typename T>
void LstmParams<T>::build(const std::string& prefix, std::size_t input_dim, std::size_t hidden, Init init,
                          std::mt19937_64& rng) {
  init_param(w_input, prefix + ".w_input", Shape{input_dim, 4 * hidden}, init, input_dim, 4 * hidden, rng);
  init_param(w_recurrent, prefix + ".w_recurrent", Shape{hidden, 4 * hidden}, init, hidden, 4 * hidden, rng);
  init_const(bias, prefix + ".bias", Shape{4 * hidden}, T{0});
  if (init == Init::Xavier)
    for (std::size_t k = hidden; k < 2 * hidden; ++k) bias.value[k] = T{1};  // forget gate
}

template <typename T>
Var<T> LstmParams<T>::run(Tape<T>& tape, const Var<T>& input, Sequence sequence) const {
  return lstm(tape, input, tape.parameter(w_input), tape.parameter(w_recurrent), tape.parameter(bias), sequence);
}

template <typename T>
void LstmParams<T>::collect(std::vector<Parameter<T>*>& out) {
  out.insert(out.end(), {&w_input, &w_recurrent, &bias});
}

template <typename T>
Var<T> bidirectional_lstm(Tape<T>& tape, const Var<T>& input, const LstmParams<T>& forward,
                          const LstmParams<T>& backward) {
  Var<T> ahead = forward.run(tape, input, Sequence::ManyToMany);
  Var<T> behind = reverse_rows(tape, backward.run(tape, reverse_rows(tape, input), Sequence::ManyToMany));
  return concat_cols(tape, ahead, behind);
}

template <typename T>
void BiLstmParams<T>::build(const std::string& prefix, std::size_t input_dim, std::size_t hidden, Init init,
                            std::mt19937_64& rng) {
  forward.build(prefix + ".forward", input_dim, hidden, init, rng);
  backward.build(prefix + ".backward", input_dim, hidden, init, rng);
}

template <typename T>
Var<T> BiLstmParams<T>::run(Tape<T>& tape, const Var<T>& input) const {
  return bidirectional_lstm(tape, input, forward, backward);
}

template <typename T>
void BiLstmParams<T>::collect(std::vector<Parameter<T>*>& out) {
  forward.collect(out);
  backward.collect(out);
}

// Encoder -----------------------------------------------------------------------

template <typename T>
Encoder<T>::Encoder(const EncoderConfig& config, std::size_t bins, std::uint64_t seed, Init init)
    : config_(config), bins_(bins) {
  config.validate(bins);
  std::mt19937_64 rng(seed);
  const auto& c = config_;
  init_param(conv_kernels_, "encoder.conv.kernels", Shape{c.kernel_time, c.kernel_freq, 1, c.num_filters}, init,
             c.kernel_time * c.kernel_freq, c.kernel_time * c.kernel_freq * c.num_filters, rng);
  init_const(conv_bias_, "encoder.conv.bias", Shape{c.num_filters}, T{0});
  bilstm_.build("encoder.bilstm", c.num_filters, c.bilstm_hidden, init, rng);
  embedding_.build("encoder.embedding", 2 * c.bilstm_hidden, c.embedding_dim, init, rng);
}

template <typename T>
Var<T> Encoder<T>::encode_prefix(Tape<T>& tape, const Var<T>& window) const {
  require(window.value().rank() == 2 && window.shape()[1] == bins_, ErrorCode::ShapeMismatch,
          "encoder expects frames×" + std::to_string(bins_) + ", got " + shape_string(window.shape()));
  Var<T> image = reshape(tape, window, Shape{window.shape()[0], bins_, 1});
  Var<T> response = conv2d(tape, image, tape.parameter(conv_kernels_), tape.parameter(conv_bias_));
  Var<T> pooled = maxpool_freq(tape, response);
  return bilstm_.run(tape, pooled);
}

template <typename T>
Var<T> Encoder<T>::embed(Tape<T>& tape, const Var<T>& prefix) const {
  return embedding_.run(tape, prefix, Sequence::ManyToOne);
}

template <typename T>
Var<T> Encoder<T>::encode(Tape<T>& tape, const Var<T>& window) const {
  return embed(tape, encode_prefix(tape, window));
}

template <typename T>
std::vector<Parameter<T>*> Encoder<T>::prefix_parameters() {
  std::vector<Parameter<T>*> out{&conv_kernels_, &conv_bias_};
  bilstm_.collect(out);
  return out;
}

template <typename T>
std::vector<Parameter<T>*> Encoder<T>::embedding_parameters() {
  std::vector<Parameter<T>*> out;
  embedding_.collect(out);
  return out;
}

template <typename T>
std::vector<Parameter<T>*> Encoder<T>::parameters() {
  auto out = prefix_parameters();
  embedding_.collect(out);
  return out;
}

// Decoder -----------------------------------------------------------------------

template <typename T>
Decoder<T>::Decoder(const EncoderConfig& config, std::size_t bins, std::mt19937_64& rng, Init init)
    : config_(config), bins_(bins) {
  config.validate(bins);
  const auto& c = config_;
  lstm_.build("decoder.lstm", c.embedding_dim, c.decoder_hidden, init, rng);
  bilstm_.build("decoder.bilstm", c.decoder_hidden, c.bilstm_hidden, init, rng);
  init_param(projection_weights_, "decoder.projection.weights", Shape{2 * c.bilstm_hidden, bins}, init,
             2 * c.bilstm_hidden, bins, rng);
  init_const(projection_bias_, "decoder.projection.bias", Shape{bins}, T{0});
  init_param(conv_kernels_, "decoder.conv.kernels", Shape{c.kernel_time, c.kernel_freq, 1, c.num_filters}, init,
             c.kernel_time * c.kernel_freq, c.kernel_time * c.kernel_freq * c.num_filters, rng);
  init_const(conv_bias_, "decoder.conv.bias", Shape{c.num_filters}, T{0});
  init_param(deconv_kernel_, "decoder.deconv.kernels", Shape{1, 1, c.num_filters, 1}, init, c.num_filters, 1, rng);
  init_const(deconv_bias_, "decoder.deconv.bias", Shape{1}, T{0});
}

template <typename T>
Var<T> Decoder<T>::decode(Tape<T>& tape, const Var<T>& embedding, std::size_t frames) const {
  require(embedding.size() == config_.embedding_dim, ErrorCode::ShapeMismatch,
          "decoder expects an embedding of length " + std::to_string(config_.embedding_dim));
  Var<T> sequence = repeat_vector(tape, embedding, frames);
  Var<T> hidden = lstm_.run(tape, sequence, Sequence::ManyToMany);
  Var<T> both = bilstm_.run(tape, hidden);
  Var<T> spectral = linear(tape, both, tape.parameter(projection_weights_), tape.parameter(projection_bias_));
  Var<T> image = reshape(tape, spectral, Shape{frames, bins_, 1});
  Var<T> channels = conv2d(tape, image, tape.parameter(conv_kernels_), tape.parameter(conv_bias_));
  if (config_.decoder_conv_relu) channels = relu(tape, channels);
  Var<T> collapsed = conv2d(tape, channels, tape.parameter(deconv_kernel_), tape.parameter(deconv_bias_));
  return reshape(tape, collapsed, Shape{frames, bins_});
}

template <typename T>
std::vector<Parameter<T>*> Decoder<T>::parameters() {
  std::vector<Parameter<T>*> out;
  lstm_.collect(out);
  bilstm_.collect(out);
  out.insert(out.end(), {&projection_weights_, &projection_bias_, &conv_kernels_, &conv_bias_, &deconv_kernel_,
                         &deconv_bias_});
  return out;
}

// Autoencoder -------------------------------------------------------------------

template <typename T>
Autoencoder<T>::Autoencoder(const EncoderConfig& config, std::size_t bins, std::uint64_t seed, Init init)
    : encoder_(config, bins, seed, init) {
  std::mt19937_64 rng(seed ^ 0xD1B54A32D192ED03ull);
  decoder_ = Decoder<T>(config, bins, rng, init);
}

template <typename T>
std::vector<Parameter<T>*> Autoencoder<T>::parameters() {
  auto out = encoder_.parameters();
  auto dec = decoder_.parameters();
  out.insert(out.end(), dec.begin(), dec.end());
  return out;
}

template <typename T>
std::vector<NamedTensor> Autoencoder<T>::to_tensors() const {
  auto& self = const_cast<Autoencoder&>(*this);
  std::vector<NamedTensor> out;
  out.push_back(meta("bins", static_cast<float>(bins())));
  out.push_back(meta("decoder_conv_relu", config().decoder_conv_relu ? 1.0f : 0.0f));
  const auto params = self.parameters();
  append_tensors<T>(out, params);
  return out;
}

template <typename T>
Autoencoder<T> Autoencoder<T>::from_tensors(const std::vector<NamedTensor>& tensors) {
  const auto inferred = infer_encoder(tensors);
  inferred.config.validate(inferred.bins);
  Autoencoder<T> model(inferred.config, inferred.bins, 0, Init::Zeros);
  const auto params = model.parameters();
  load_values<T>(params, tensors);
  return model;
}

Autoencoder<float> build_autoencoder(const EncoderConfig& config, std::size_t bins, std::uint64_t seed) {
  return Autoencoder<float>(config, bins, seed);
}

void save_checkpoint(const Autoencoder<float>& model, const std::filesystem::path& path) {
  write_checkpoint(path, model.to_tensors());
}

Autoencoder<float> load_autoencoder(const std::filesystem::path& path) {
  return Autoencoder<float>::from_tensors(read_checkpoint(path));
}

Encoder<float> encoder_from_tensors(const std::vector<NamedTensor>& tensors) {
  const auto inferred = infer_encoder(tensors);
  Encoder<float> encoder(inferred.config, inferred.bins, 0, Init::Zeros);
  const auto params = encoder.parameters();
  load_values<float>(params, tensors);
  return encoder;
}

// Classifier --------------------------------------------------------------------

HeadTask parse_task(const std::string& name) {
  if (name == "detect") return HeadTask::Detect;
  if (name == "classify") return HeadTask::Classify;
  fail(ErrorCode::InvalidConfig, "unknown task '" + name + "' (expected detect or classify)");
}

FreezePolicy parse_freeze(const std::string& name) {
  if (name == "except-last-lstm") return FreezePolicy::ExceptLastLstm;
  if (name == "none") return FreezePolicy::None;
  fail(ErrorCode::InvalidConfig, "unknown freeze policy '" + name + "' (expected except-last-lstm or none)");
}

std::string task_name(HeadTask task) { return task == HeadTask::Detect ? "detect" : "classify"; }
std::string freeze_name(FreezePolicy policy) {
  return policy == FreezePolicy::ExceptLastLstm ? "except-last-lstm" : "none";
}

template <typename T>
Classifier<T>::Classifier(Encoder<T> encoder, const HeadConfig& head, std::uint64_t seed)
    : encoder_(std::move(encoder)), head_(head) {
  require(head.task == HeadTask::Detect || head.num_classes >= 2, ErrorCode::InvalidConfig,
          "a classification head needs at least 2 classes");
  require(head.dropout >= 0.0 && head.dropout < 1.0, ErrorCode::InvalidConfig, "dropout must be in [0, 1)");
  require(encoder_.bins() > 0, ErrorCode::InvalidConfig, "head needs a built encoder");
  std::mt19937_64 rng(seed);
  const std::size_t width = encoder_.config().embedding_dim;
  init_const(bn_gamma_, "head.bn.gamma", Shape{width}, T{1});
  init_const(bn_beta_, "head.bn.beta", Shape{width}, T{0});
  init_const(bn_mean_, "head.bn.running_mean", Shape{width}, T{0}, false);
  init_const(bn_var_, "head.bn.running_var", Shape{width}, T{1}, false);
  std::vector<std::size_t> sizes{width};
  sizes.insert(sizes.end(), head.hidden.begin(), head.hidden.end());
  sizes.push_back(head.outputs());
  dense_weights_.resize(sizes.size() - 1);
  dense_bias_.resize(sizes.size() - 1);
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    const std::string prefix = "head.dense" + std::to_string(i);
    init_param(dense_weights_[i], prefix + ".weights", Shape{sizes[i], sizes[i + 1]}, Init::Xavier, sizes[i],
               sizes[i + 1], rng);
    init_const(dense_bias_[i], prefix + ".bias", Shape{sizes[i + 1]}, T{0});
  }
  set_freeze_policy(head.freeze);
}

template <typename T>
void Classifier<T>::set_population_statistics(const Tensor<T>& embeddings) {
  const std::size_t width = bn_mean_.value.size();
  require(embeddings.rank() == 2 && embeddings.dim(1) == width && embeddings.dim(0) > 0, ErrorCode::ShapeMismatch,
          "population statistics need N×" + std::to_string(width) + " embeddings");
  const std::size_t n = embeddings.dim(0);
  for (std::size_t c = 0; c < width; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < n; ++r) mean += embeddings.at(r, c);
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t r = 0; r < n; ++r) ss += (embeddings.at(r, c) - mean) * (embeddings.at(r, c) - mean);
    bn_mean_.value[c] = static_cast<T>(mean);
    bn_var_.value[c] = static_cast<T>(n > 1 ? ss / static_cast<double>(n - 1) : ss);
  }
}

template <typename T>
void Classifier<T>::set_freeze_policy(FreezePolicy policy) {
  head_.freeze = policy;
  for (Parameter<T>* p : encoder_.prefix_parameters()) p->trainable = policy == FreezePolicy::None;
  for (Parameter<T>* p : encoder_.embedding_parameters()) p->trainable = true;
}

template <typename T>
Var<T> Classifier<T>::head_forward(Tape<T>& tape, const Var<T>& embeddings, Mode mode, std::uint64_t dropout_seed) {
  BatchNormStats<T> stats{&bn_mean_.value, &bn_var_.value};
  Var<T> x = batchnorm(tape, embeddings, tape.parameter(bn_gamma_), tape.parameter(bn_beta_), stats, mode);
  const std::size_t layers = dense_weights_.size();
  for (std::size_t i = 0; i + 1 < layers; ++i)
    x = dense(tape, x, tape.parameter(dense_weights_[i]), tape.parameter(dense_bias_[i]), Activation::Relu);
  x = dropout(tape, x, head_.dropout, mode, dropout_seed);
  const Activation out_act = head_.task == HeadTask::Detect ? Activation::Sigmoid : Activation::Softmax;
  return dense(tape, x, tape.parameter(dense_weights_[layers - 1]), tape.parameter(dense_bias_[layers - 1]), out_act);
}

template <typename T>
Var<T> Classifier<T>::forward(Tape<T>& tape, const std::vector<Var<T>>& windows, Mode mode,
                              std::uint64_t dropout_seed) {
  std::vector<Var<T>> embeddings;
  embeddings.reserve(windows.size());
  for (const auto& w : windows) embeddings.push_back(encoder_.encode(tape, w));
  return head_forward(tape, stack_rows(tape, embeddings), mode, dropout_seed);
}

template <typename T>
Var<T> Classifier<T>::forward_from_prefix(Tape<T>& tape, const std::vector<Var<T>>& prefixes, Mode mode,
                                          std::uint64_t dropout_seed) {
  std::vector<Var<T>> embeddings;
  embeddings.reserve(prefixes.size());
  for (const auto& p : prefixes) embeddings.push_back(encoder_.embed(tape, p));
  return head_forward(tape, stack_rows(tape, embeddings), mode, dropout_seed);
}

template <typename T>
std::vector<Parameter<T>*> Classifier<T>::head_parameters() {
  std::vector<Parameter<T>*> out{&bn_gamma_, &bn_beta_, &bn_mean_, &bn_var_};
  for (std::size_t i = 0; i < dense_weights_.size(); ++i) {
    out.push_back(&dense_weights_[i]);
    out.push_back(&dense_bias_[i]);
  }
  return out;
}

template <typename T>
std::vector<Parameter<T>*> Classifier<T>::parameters() {
  auto out = encoder_.parameters();
  auto head = head_parameters();
  out.insert(out.end(), head.begin(), head.end());
  return out;
}

template <typename T>
std::vector<NamedTensor> Classifier<T>::to_tensors() const {
  auto& self = const_cast<Classifier&>(*this);
  std::vector<NamedTensor> out;
  out.push_back(meta("bins", static_cast<float>(encoder_.bins())));
  out.push_back(meta("head_dropout", static_cast<float>(head_.dropout)));
  out.push_back(meta("freeze_policy", head_.freeze == FreezePolicy::ExceptLastLstm ? 1.0f : 0.0f));
  const auto params = self.parameters();
  append_tensors<T>(out, params);
  return out;
}

template <typename T>
Classifier<T> Classifier<T>::from_tensors(const std::vector<NamedTensor>& tensors) {
  const auto inferred = infer_encoder(tensors);
  inferred.config.validate(inferred.bins);
  HeadConfig head;
  head.hidden.clear();
  std::size_t layers = 0;
  while (find_tensor(tensors, "head.dense" + std::to_string(layers) + ".weights")) ++layers;
  if (layers == 0) fail(ErrorCode::CorruptCheckpoint, "checkpoint has no head layers");
  for (std::size_t i = 0; i + 1 < layers; ++i)
    head.hidden.push_back(need_dim(tensors, "head.dense" + std::to_string(i) + ".weights", 2, 1));
  const std::size_t outputs = need_dim(tensors, "head.dense" + std::to_string(layers - 1) + ".weights", 2, 1);
  head.task = outputs == 1 ? HeadTask::Detect : HeadTask::Classify;
  head.num_classes = outputs == 1 ? 2 : outputs;
  head.dropout = need_scalar(tensors, "meta.head_dropout");
  head.freeze = need_scalar(tensors, "meta.freeze_policy") != 0.0f ? FreezePolicy::ExceptLastLstm : FreezePolicy::None;

  Classifier<T> model(Encoder<T>(inferred.config, inferred.bins, 0, Init::Zeros), head, 0);
  const auto params = model.parameters();
  load_values<T>(params, tensors);
  model.set_freeze_policy(head.freeze);
  return model;
}

Classifier<float> attach_head(Encoder<float> encoder, const HeadConfig& head, std::uint64_t seed) {
  return Classifier<float>(std::move(encoder), head, seed);
}

void save_checkpoint(const Classifier<float>& model, const std::filesystem::path& path) {
  write_checkpoint(path, model.to_tensors());
}

Classifier<float> load_classifier(const std::filesystem::path& path) {
  return Classifier<float>::from_tensors(read_checkpoint(path));
}

// Kernel grid -------------------------------------------------------------------

GridLayout kernel_grid_layout(std::size_t count) {
  GridLayout g;
  if (count == 0) return g;
  g.cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(count))));
  g.rows = (count + g.cols - 1) / g.cols;
  return g;
}

std::string render_kernel_grid(const Tensor<float>& kernels, ImageFormat format, std::size_t pixel_scale) {
  require(kernels.rank() == 4 && kernels.dim(2) == 1, ErrorCode::ShapeMismatch,
          "kernel grid expects kh×kw×1×K kernels, got " + shape_string(kernels.shape()));
  require(pixel_scale >= 1, ErrorCode::InvalidConfig, "pixel scale must be >= 1");
  const std::size_t kh = kernels.dim(0), kw = kernels.dim(1), count = kernels.dim(3);
  const GridLayout grid = kernel_grid_layout(count);
  const std::size_t tile_w = kh * pixel_scale, tile_h = kw * pixel_scale, gap = 1;
  const std::size_t width = grid.cols * (tile_w + gap) + gap;
  const std::size_t height = grid.rows * (tile_h + gap) + gap;

  // Per-kernel min-max normalized intensities, indexed [kernel][time][freq].
  std::vector<std::uint8_t> level(count * kh * kw);
  for (std::size_t k = 0; k < count; ++k) {
    float lo = kernels[k], hi = kernels[k];
    for (std::size_t i = 0; i < kh * kw; ++i) {
      lo = std::min(lo, kernels[i * count + k]);
      hi = std::max(hi, kernels[i * count + k]);
    }
    for (std::size_t i = 0; i < kh * kw; ++i) {
      const double norm = hi > lo ? (kernels[i * count + k] - lo) / static_cast<double>(hi - lo) : 0.5;
      level[k * kh * kw + i] = static_cast<std::uint8_t>(std::lround(norm * 255.0));
    }
  }

  if (format == ImageFormat::Pgm) {
    std::vector<std::uint8_t> pixels(width * height, 0);
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t x0 = gap + (k % grid.cols) * (tile_w + gap);
      const std::size_t y0 = gap + (k / grid.cols) * (tile_h + gap);
      for (std::size_t y = 0; y < tile_h; ++y)
        for (std::size_t x = 0; x < tile_w; ++x) {
          const std::size_t t = x / pixel_scale;
          const std::size_t f = kw - 1 - y / pixel_scale;
          pixels[(y0 + y) * width + x0 + x] = level[k * kh * kw + t * kw + f];
        }
    }
    std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    out.append(pixels.begin(), pixels.end());
    return out;
  }

  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) + "\" height=\"" +
                    std::to_string(height) + "\" shape-rendering=\"crispEdges\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"#000\"/>\n";
  char buf[160];
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t x0 = gap + (k % grid.cols) * (tile_w + gap);
    const std::size_t y0 = gap + (k / grid.cols) * (tile_h + gap);
    for (std::size_t t = 0; t < kh; ++t)
      for (std::size_t f = 0; f < kw; ++f) {
        const unsigned v = level[k * kh * kw + t * kw + f];
        std::snprintf(buf, sizeof buf, "<rect x=\"%zu\" y=\"%zu\" width=\"%zu\" height=\"%zu\" fill=\"#%02x%02x%02x\"/>\n",
                      x0 + t * pixel_scale, y0 + (kw - 1 - f) * pixel_scale, pixel_scale, pixel_scale, v, v, v);
        out += buf;
      }
  }
  out += "</svg>\n";
  return out;
}

void export_first_layer_kernels(const Encoder<float>& encoder, const std::filesystem::path& path) {
  const ImageFormat format = path.extension() == ".svg" ? ImageFormat::Svg : ImageFormat::Pgm;
  write_file_atomic(path, render_kernel_grid(encoder.conv_kernels().value, format));
}

template struct LstmParams<float>;
template struct LstmParams<double>;
template struct BiLstmParams<float>;
template struct BiLstmParams<double>;
template Var<float> bidirectional_lstm(Tape<float>&, const Var<float>&, const LstmParams<float>&,
                                       const LstmParams<float>&);
template Var<double> bidirectional_lstm(Tape<double>&, const Var<double>&, const LstmParams<double>&,
                                        const LstmParams<double>&);
template class Encoder<float>;
template class Encoder<double>;
template class Decoder<float>;
template class Decoder<double>;
template class Autoencoder<float>;
template class Autoencoder<double>;
template class Classifier<float>;
template class Classifier<double>;

}  // namespace finmine
