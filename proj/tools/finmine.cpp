// finmine — command line front end for the spectrogram / autoencoder /
// mining pipeline. Every subcommand writes a JSON run manifest next to its
// outputs.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "finmine/audio.hpp"
#include "finmine/checkpoint.hpp"
#include "finmine/io.hpp"
#include "finmine/mining.hpp"
#include "finmine/model.hpp"
#include "finmine/spectrogram.hpp"
#include "finmine/synth.hpp"
#include "finmine/train.hpp"

namespace fs = std::filesystem;
using namespace finmine;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

// Raised for problems the user fixes on the command line.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::IOFailure:
      return kExitUsage;
    case ErrorCode::NonFiniteValue:
    case ErrorCode::NonFiniteLoss:
      return kExitNumeric;
    default:
      return kExitData;
  }
}

std::size_t default_threads() {
  if (const char* env = std::getenv("FINMINE_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) return static_cast<std::size_t>(v);
    } catch (...) {
    }
    std::cerr << "warning: ignoring FINMINE_THREADS='" << env << "'\n";
  }
  return 1;
}

class RunManifest {
 public:
  explicit RunManifest(std::string command) : command_(std::move(command)), start_(std::chrono::steady_clock::now()) {}

  void input(const fs::path& p) { inputs_[p.string()] = hex64(file_digest(p)); }
  void output(const fs::path& p) { outputs_.insert(p.string()); }
  void result(const std::string& key, nlohmann::ordered_json value) { results_[key] = std::move(value); }

  void write(const fs::path& path, const CLI::App& sub, std::uint64_t seed) const {
    nlohmann::ordered_json j;
    j["command"] = command_;
    nlohmann::ordered_json config;
    for (const CLI::Option* opt : sub.get_options()) {
      const std::string name = opt->get_single_name();
      if (name.empty() || name == "help") continue;
      if (opt->count() > 0) {
        const auto& res = opt->results();
        config[name] = res.size() == 1 ? nlohmann::ordered_json(res[0]) : nlohmann::ordered_json(res);
      } else {
        config[name] = opt->get_default_str();
      }
    }
    j["config"] = config;
    j["seed"] = seed;
    nlohmann::ordered_json ins = nlohmann::ordered_json::array();
    for (const auto& [p, digest] : inputs_) ins.push_back({{"path", p}, {"fnv1a64", digest}});
    j["inputs"] = ins;
    j["outputs"] = std::vector<std::string>(outputs_.begin(), outputs_.end());
    if (!results_.empty()) j["results"] = results_;
    j["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write_file_atomic(path, j.dump(2) + "\n");
  }

 private:
  std::string command_;
  std::chrono::steady_clock::time_point start_;
  std::map<std::string, std::string> inputs_;
  std::set<std::string> outputs_;
  nlohmann::ordered_json results_ = nlohmann::ordered_json::object();
};

bool is_wav(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".wav";
}

// Files are taken as given; directories contribute their *.wav entries in
// name order (non-recursive).
std::vector<fs::path> collect_wavs(const std::vector<std::string>& args) {
  std::vector<fs::path> out;
  for (const auto& a : args) {
    const fs::path p(a);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p))
        if (e.is_regular_file() && is_wav(e.path())) found.push_back(e.path());
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else if (fs::exists(p)) {
      out.push_back(p);
    } else {
      throw UsageError("input not found: " + a);
    }
  }
  return out;
}

struct SpectrogramOptions {
  std::size_t fft_size = 512;
  double window_seconds = 0.01;
  double hop_seconds = 0.005;
  std::string scale = "magnitude";

  void add(CLI::App* sub) {
    sub->add_option("--fft-size", fft_size, "FFT length (power of two)");
    sub->add_option("--window", window_seconds, "analysis window in seconds");
    sub->add_option("--hop", hop_seconds, "frame hop in seconds");
    sub->add_option("--scale", scale, "magnitude | power | log")
        ->check(CLI::IsMember({"magnitude", "power", "log"}));
  }

  SpectrogramParams params() const {
    SpectrogramParams p;
    p.fft_size = fft_size;
    p.window_seconds = window_seconds;
    p.hop_seconds = hop_seconds;
    p.scale = scale == "power" ? SpectrumScale::Power : scale == "log" ? SpectrumScale::Log : SpectrumScale::Magnitude;
    return p;
  }
};

fs::path with_suffix(const fs::path& p, const std::string& suffix) { return fs::path(p.string() + suffix); }

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw UsageError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::vector<Window> windows_for(const AudioClip& clip, const SpectrogramParams& params, std::size_t hop_frames) {
  return extract_windows(stft(clip, params), kWindowFrames, hop_frames);
}

Encoder<float> load_encoder(const fs::path& path, RunManifest& manifest) {
  manifest.input(path);
  return encoder_from_tensors(read_checkpoint(path));
}

// ---------------------------------------------------------------------------

struct Common {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string manifest;
};

void add_common(CLI::App* sub, Common& c, bool with_seed, bool with_threads) {
  if (with_seed) sub->add_option("--seed", c.seed, "random seed");
  if (with_threads) sub->add_option("--threads", c.threads, "worker threads (env FINMINE_THREADS)")
                        ->check(CLI::PositiveNumber);
  sub->add_option("--manifest", c.manifest, "run manifest path");
}

fs::path manifest_path(const Common& c, const fs::path& fallback) {
  return c.manifest.empty() ? fallback : fs::path(c.manifest);
}

// spectrogram ----------------------------------------------------------------

struct SpectrogramCmd {
  std::vector<std::string> inputs;
  std::string out;
  SpectrogramOptions spec;
  Common common;

  void run(const CLI::App& sub) {
    RunManifest m("spectrogram");
    const auto params = spec.params();
    const auto wavs = collect_wavs(inputs);
    if (wavs.empty()) throw UsageError("no WAV inputs");
    ensure_dir(out);
    for (const auto& w : wavs) {
      m.input(w);
      const auto clip = load_audio(w);
      params.validate(clip.sample_rate);
      const fs::path dst = fs::path(out) / (w.stem().string() + ".csv");
      write_spectrogram_csv(stft(clip, params), dst);
      m.output(dst);
    }
    m.write(manifest_path(common, fs::path(out) / "manifest.json"), sub, common.seed);
  }
};

// synth ------------------------------------------------------------------------

struct SynthCmd {
  std::string out;
  std::array<std::size_t, kNumSignalClasses> counts{10, 10, 10, 10};
  double clip_seconds = 0.75;
  int sample_rate = 44100;
  double noise_rms = 0.01;
  double amplitude = 0.4;
  std::size_t recordings = 0;
  double recording_seconds = 60.0;
  std::size_t events = 10;
  Common common;

  void run(const CLI::App& sub) {
    RunManifest m("synth");
    CorpusRecipe recipe;
    recipe.counts = counts;
    recipe.clip_seconds = clip_seconds;
    recipe.sample_rate = sample_rate;
    recipe.noise_rms = noise_rms;
    recipe.signal_amplitude = amplitude;
    ensure_dir(out);

    std::ostringstream labels;
    labels << "path,start_seconds,end_seconds,label\n";
    std::size_t total = 0;
    for (auto c : counts) total += c;
    if (total > 0) {
      for (const auto& item : synthesize_corpus(common.seed, recipe)) {
        const std::string name = fs::path(item.clip.source_id).filename().string() + ".wav";
        const fs::path dst = fs::path(out) / name;
        save_wav(dst, item.clip.samples, item.clip.sample_rate);
        m.output(dst);
        labels << csv_field(name) << ",0," << item.clip.duration_seconds() << ',' << class_name(item.label) << '\n';
      }
      const fs::path lp = fs::path(out) / "labels.csv";
      write_file_atomic(lp, labels.str());
      m.output(lp);
    }

    if (recordings > 0) {
      const fs::path rec_dir = fs::path(out) / "recordings";
      ensure_dir(rec_dir);
      std::ostringstream ev;
      ev << "path,start_seconds,end_seconds,label\n";
      for (std::size_t r = 0; r < recordings; ++r) {
        char name[64];
        std::snprintf(name, sizeof name, "recording_%04zu.wav", r);
        const auto rec = synthesize_recording(common.seed + 1000 + r, recording_seconds, events, recipe, name);
        save_wav(rec_dir / name, rec.clip.samples, rec.clip.sample_rate);
        m.output(rec_dir / name);
        for (const auto& e : rec.events)
          ev << name << ',' << e.start_seconds << ',' << e.end_seconds << ',' << class_name(e.label) << '\n';
      }
      write_file_atomic(rec_dir / "events.csv", ev.str());
      m.output(rec_dir / "events.csv");
    }
    if (total == 0 && recordings == 0) throw UsageError("nothing to synthesize: all counts are zero");
    m.write(manifest_path(common, fs::path(out) / "manifest.json"), sub, common.seed);
  }
};

// train-ae ---------------------------------------------------------------------

struct ModelOptions {
  std::size_t filters = 256;
  std::size_t kernel_time = 4;
  std::size_t kernel_freq = 8;
  std::size_t bilstm = 128;
  std::size_t embedding = 128;
  std::size_t decoder_hidden = 128;
  bool decoder_relu = false;

  void add(CLI::App* sub) {
    sub->add_option("--filters", filters, "convolution filters");
    sub->add_option("--kernel-time", kernel_time, "kernel length in frames");
    sub->add_option("--kernel-freq", kernel_freq, "kernel height in bins");
    sub->add_option("--bilstm", bilstm, "BiLSTM units per direction");
    sub->add_option("--embedding", embedding, "embedding size");
    sub->add_option("--decoder-hidden", decoder_hidden, "decoder LSTM units");
    sub->add_flag("--decoder-relu", decoder_relu, "ReLU after the decoder convolution");
  }

  EncoderConfig config() const {
    EncoderConfig c;
    c.num_filters = filters;
    c.kernel_time = kernel_time;
    c.kernel_freq = kernel_freq;
    c.bilstm_hidden = bilstm;
    c.embedding_dim = embedding;
    c.decoder_hidden = decoder_hidden;
    c.decoder_conv_relu = decoder_relu;
    return c;
  }
};

void log_epoch(std::size_t epoch, std::size_t total, double loss) {
  std::cerr << "epoch " << epoch + 1 << "/" << total << " loss " << loss << "\n";
}

struct TrainAeCmd {
  std::vector<std::string> inputs;
  std::string out;
  std::string loss_csv;
  std::string kernels;
  std::size_t batch = 50;
  std::size_t epochs = 128;
  double lr = 1e-3;
  double clip_norm = 0.0;
  std::size_t hop_frames = kTrainingHopFrames;
  bool quiet = false;
  ModelOptions model;
  SpectrogramOptions spec;
  Common common;

  void run(const CLI::App& sub) {
    RunManifest m("train-ae");
    const auto params = spec.params();
    const auto wavs = collect_wavs(inputs);
    if (wavs.empty()) throw UsageError("no WAV files found in the given inputs");
    std::vector<Window> windows;
    for (const auto& w : wavs) {
      m.input(w);
      auto ws = windows_for(load_audio(w), params, hop_frames);
      std::move(ws.begin(), ws.end(), std::back_inserter(windows));
    }
    std::cerr << "training on " << windows.size() << " windows from " << wavs.size() << " files\n";

    auto ae = build_autoencoder(model.config(), params.bins(), common.seed);
    TrainConfig cfg;
    cfg.batch_size = batch;
    cfg.epochs = epochs;
    cfg.learning_rate = lr;
    cfg.clip_norm = clip_norm;
    cfg.seed = common.seed;
    cfg.threads = common.threads;
    const auto history = train_autoencoder(ae, windows, cfg, [&](std::size_t e, double l) {
      if (!quiet) log_epoch(e, epochs, l);
    });

    const fs::path ckpt(out);
    if (ckpt.has_parent_path()) ensure_dir(ckpt.parent_path());
    save_checkpoint(ae, ckpt);
    m.output(ckpt);
    const fs::path lp = loss_csv.empty() ? with_suffix(ckpt, ".loss.csv") : fs::path(loss_csv);
    write_loss_csv(history, lp);
    m.output(lp);
    const fs::path kp = kernels.empty() ? with_suffix(ckpt, ".kernels.pgm") : fs::path(kernels);
    export_first_layer_kernels(ae.encoder(), kp);
    m.output(kp);
    m.write(manifest_path(common, with_suffix(ckpt, ".manifest.json")), sub, common.seed);
  }
};

// train-head ---------------------------------------------------------------------

struct LabeledWindows {
  std::vector<Window> windows;
  std::vector<int> labels;
};

int parse_label(const std::string& text, HeadTask task) {
  if (!text.empty() && std::all_of(text.begin(), text.end(), ::isdigit)) return std::stoi(text);
  const int cls = static_cast<int>(parse_class(text));
  return task == HeadTask::Detect ? (cls == 0 ? 0 : 1) : cls;
}

LabeledWindows load_labeled(const fs::path& manifest_csv, HeadTask task, const SpectrogramParams& params,
                            std::size_t hop_frames, RunManifest& m) {
  m.input(manifest_csv);
  const auto table = read_csv(manifest_csv);
  const std::size_t c_path = table.column("path"), c_start = table.column("start_seconds"),
                    c_end = table.column("end_seconds"), c_label = table.column("label");
  std::map<std::string, AudioClip> cache;
  LabeledWindows out;
  for (const auto& row : table.rows) {
    fs::path p(row[c_path]);
    if (p.is_relative()) p = manifest_csv.parent_path() / p;
    auto it = cache.find(p.string());
    if (it == cache.end()) {
      if (!fs::exists(p)) throw UsageError("labeled manifest references a missing file: " + p.string());
      m.input(p);
      it = cache.emplace(p.string(), load_audio(p)).first;
    }
    const AudioClip& clip = it->second;
    const double start = parse_double(row[c_start], "start_seconds");
    const double end = parse_double(row[c_end], "end_seconds");
    require(start >= 0.0 && end > start, ErrorCode::MalformedContainer,
            "bad segment [" + row[c_start] + ", " + row[c_end] + "] for " + row[c_path]);
    const auto first = static_cast<std::size_t>(std::llround(start * clip.sample_rate));
    const auto last = std::min(clip.samples.size(), static_cast<std::size_t>(std::llround(end * clip.sample_rate)));
    require(first < last, ErrorCode::ClipTooShort, "segment outside " + row[c_path]);
    AudioClip seg;
    seg.sample_rate = clip.sample_rate;
    seg.source_id = clip.source_id + "@" + row[c_start];
    seg.samples.assign(clip.samples.begin() + static_cast<std::ptrdiff_t>(first),
                       clip.samples.begin() + static_cast<std::ptrdiff_t>(last));
    const int label = parse_label(row[c_label], task);
    for (auto& w : windows_for(seg, params, hop_frames)) {
      out.windows.push_back(std::move(w));
      out.labels.push_back(label);
    }
  }
  return out;
}

struct TrainHeadCmd {
  std::string labels;
  std::string base;
  std::string out;
  std::string task = "detect";
  std::string freeze = "except-last-lstm";
  std::string confusion;
  std::string loss_csv;
  std::size_t batch = 10;
  std::size_t epochs = 25;
  double lr = 1e-3;
  double clip_norm = 0.0;
  double split = 0.6;
  double threshold = 0.5;
  std::size_t hop_frames = kTrainingHopFrames;
  bool quiet = false;
  SpectrogramOptions spec;
  Common common;

  void run(const CLI::App& sub) {
    RunManifest m("train-head");
    const HeadTask head_task = parse_task(task);
    const FreezePolicy policy = parse_freeze(freeze);
    const auto params = spec.params();
    auto data = load_labeled(labels, head_task, params, hop_frames, m);
    std::cerr << "loaded " << data.windows.size() << " labeled windows\n";

    HeadConfig head;
    head.task = head_task;
    head.freeze = policy;
    auto model = attach_head(load_encoder(base, m), head, common.seed);

    const auto parts = split_dataset(data.labels, split, common.seed);
    auto pick = [&](const std::vector<std::size_t>& idx, std::vector<Window>& w, std::vector<int>& l) {
      for (auto i : idx) {
        w.push_back(data.windows[i]);
        l.push_back(data.labels[i]);
      }
    };
    std::vector<Window> train_w, test_w;
    std::vector<int> train_l, test_l;
    pick(parts.train, train_w, train_l);
    pick(parts.test, test_w, test_l);

    TrainConfig cfg = TrainConfig::head_defaults();
    cfg.batch_size = batch;
    cfg.epochs = epochs;
    cfg.learning_rate = lr;
    cfg.clip_norm = clip_norm;
    cfg.seed = common.seed;
    cfg.freeze = policy;
    cfg.threads = common.threads;
    const auto history = train_head(model, train_w, train_l, cfg, [&](std::size_t e, double l) {
      if (!quiet) log_epoch(e, epochs, l);
    });

    std::vector<std::string> names;
    if (head_task == HeadTask::Detect) {
      names = {"noise", "signal"};
    } else {
      for (std::size_t c = 0; c < kNumSignalClasses; ++c) names.emplace_back(class_name(static_cast<SignalClass>(c)));
    }
    const auto cm = evaluate(model, test_w, test_l, names, threshold);
    std::cerr << "test accuracy " << cm.accuracy() << " (" << cm.trace() << "/" << cm.total() << ")\n";

    const fs::path ckpt(out);
    if (ckpt.has_parent_path()) ensure_dir(ckpt.parent_path());
    save_checkpoint(model, ckpt);
    m.output(ckpt);
    const fs::path cp = confusion.empty() ? with_suffix(ckpt, ".confusion.csv") : fs::path(confusion);
    write_file_atomic(cp, cm.to_csv());
    m.output(cp);
    const fs::path lp = loss_csv.empty() ? with_suffix(ckpt, ".loss.csv") : fs::path(loss_csv);
    write_loss_csv(history, lp);
    m.output(lp);
    m.write(manifest_path(common, with_suffix(ckpt, ".manifest.json")), sub, common.seed);
  }
};

// embed ----------------------------------------------------------------------------

struct EmbedCmd {
  std::vector<std::string> inputs;
  std::string encoder;
  std::string out;
  std::size_t hop_frames = kTrainingHopFrames;
  SpectrogramOptions spec;
  Common common;

  void run(const CLI::App& sub) {
    RunManifest m("embed");
    const auto enc = load_encoder(encoder, m);
    const auto params = spec.params();
    const auto wavs = collect_wavs(inputs);
    if (wavs.empty()) throw UsageError("no WAV inputs");
    std::vector<Window> windows;
    for (const auto& w : wavs) {
      m.input(w);
      auto ws = windows_for(load_audio(w), params, hop_frames);
      std::move(ws.begin(), ws.end(), std::back_inserter(windows));
    }
    write_embeddings_csv(embed_windows(enc, windows, common.threads), out);
    m.output(out);
    m.write(manifest_path(common, with_suffix(out, ".manifest.json")), sub, common.seed);
  }
};

// cluster --------------------------------------------------------------------------

struct ClusterCmd {
  std::string embeddings;
  std::string out;
  std::size_t k = 100;
  std::size_t max_iters = 1024;
  bool filter = false;
  Common common;

  void run(const CLI::App& sub) {
    RunManifest m("cluster");
    m.input(embeddings);
    const auto emb = read_embeddings_csv(embeddings);
    if (emb.size() < k)
      throw UsageError("TooFewPoints: --k " + std::to_string(k) + " exceeds the " + std::to_string(emb.size()) +
                       " embeddings");
    const auto model = kmeans(emb, {k, max_iters, common.seed, common.threads});
    std::cerr << "k-means: " << model.iterations << " iterations, inertia " << model.inertia
              << (model.converged ? "" : " (not converged)") << "\n";
    const auto f = filter_by_median_silhouette(emb, model.assignments, common.threads);
    std::vector<AssignmentRow> rows;
    auto push = [&](std::size_t i) { rows.push_back({emb.provenance[i], model.assignments[i], f.coefficients[i]}); };
    if (filter) {
      for (auto i : f.retained) push(i);
    } else {
      for (std::size_t i = 0; i < emb.size(); ++i) push(i);
    }
    write_assignments_csv(rows, out);
    m.output(out);
    m.write(manifest_path(common, with_suffix(out, ".manifest.json")), sub, common.seed);
  }
};

// tsne -------------------------------------------------------------------------------

struct TsneCmd {
  std::string embeddings;
  std::string assignments;
  std::string out;
  std::string svg;
  double perplexity = 30.0;
  std::size_t iters = 1000;
  double sample_fraction = 1.0;
  Common common;

  void run(const CLI::App& sub) {
    RunManifest m("tsne");
    m.input(embeddings);
    auto emb = read_embeddings_csv(embeddings);
    std::vector<int> clusters(emb.size(), 0);
    if (!assignments.empty()) {
      m.input(assignments);
      // Lay out exactly the assigned rows, in assignment order.
      std::map<Provenance, std::size_t> index;
      for (std::size_t i = 0; i < emb.size(); ++i) index[emb.provenance[i]] = i;
      std::vector<std::size_t> rows;
      clusters.clear();
      for (const auto& a : read_assignments_csv(assignments)) {
        auto it = index.find(a.where);
        require(it != index.end(), ErrorCode::UnresolvedProvenance,
                a.where.source_id + " frame " + std::to_string(a.where.start_frame) + " has no embedding");
        rows.push_back(it->second);
        clusters.push_back(a.cluster);
      }
      emb = emb.subset(rows);
    }
    TsneConfig cfg;
    cfg.perplexity = perplexity;
    cfg.iterations = iters;
    cfg.seed = common.seed;
    cfg.threads = common.threads;
    const auto layout = tsne(emb, cfg);
    std::cerr << "t-SNE KL " << layout.initial_kl << " -> " << layout.kl << "\n";
    write_layout_csv(layout, clusters, out);
    m.output(out);
    if (!svg.empty()) {
      write_scatter_svg(layout, clusters, svg, {sample_fraction, common.seed});
      m.output(svg);
    }
    m.write(manifest_path(common, with_suffix(out, ".manifest.json")), sub, common.seed);
  }
};

// detect -----------------------------------------------------------------------------

struct DetectCmd {
  std::vector<std::string> inputs;
  std::string detector;
  std::string out;
  std::size_t hop_frames = kTrainingHopFrames;
  double threshold = 0.5;
  SpectrogramOptions spec;
  Common common;

  void run(const CLI::App& sub) {
    RunManifest m("detect");
    m.input(detector);
    auto model = load_classifier(detector);
    DetectConfig cfg{hop_frames, threshold, spec.params()};
    const auto wavs = collect_wavs(inputs);
    if (wavs.empty()) throw UsageError("no WAV inputs");
    std::ostringstream os;
    os << "source_id,start_frame,end_frame,start_seconds,end_seconds,score\n";
    for (const auto& w : wavs) {
      m.input(w);
      const auto clip = load_audio(w);
      for (const auto& r : detect_regions(model, clip, cfg)) {
        const auto span = frames_to_samples(r.start_frame, r.end_frame - r.start_frame, cfg.spectrogram,
                                            clip.sample_rate);
        os << csv_field(clip.source_id) << ',' << r.start_frame << ',' << r.end_frame << ','
           << static_cast<double>(span.first) / clip.sample_rate << ','
           << static_cast<double>(span.last) / clip.sample_rate << ',' << r.score << '\n';
      }
    }
    write_file_atomic(out, os.str());
    m.output(out);
    m.write(manifest_path(common, with_suffix(out, ".manifest.json")), sub, common.seed);
  }
};

// export-clusters ------------------------------------------------------------------

void export_all(const std::vector<AssignmentRow>& rows, const ClipLibrary& clips, const SpectrogramParams& params,
                const fs::path& dir, double gap, RunManifest& m) {
  ensure_dir(dir);
  std::map<int, std::vector<Provenance>> by_cluster;
  for (const auto& r : rows) by_cluster[r.cluster].push_back(r.where);
  for (const auto& [c, members] : by_cluster) {
    char name[32];
    std::snprintf(name, sizeof name, "cluster_%03d.wav", c);
    export_cluster_wav(members, clips, params, dir / name, gap);
    m.output(dir / name);
  }
}

struct ExportCmd {
  std::string assignments;
  std::string out;
  double gap = 0.25;
  SpectrogramOptions spec;
  Common common;

  void run(const CLI::App& sub) {
    RunManifest m("export-clusters");
    m.input(assignments);
    const auto rows = read_assignments_csv(assignments);
    ClipLibrary clips;
    for (const auto& r : rows) {
      if (clips.count(r.where.source_id)) continue;
      if (!fs::exists(r.where.source_id))
        fail(ErrorCode::UnresolvedProvenance, "cannot find audio '" + r.where.source_id + "'");
      m.input(r.where.source_id);
      clips.emplace(r.where.source_id, load_audio(r.where.source_id));
    }
    export_all(rows, clips, spec.params(), out, gap, m);
    m.write(manifest_path(common, fs::path(out) / "manifest.json"), sub, common.seed);
  }
};

// mine --------------------------------------------------------------------------------

struct MineCmd {
  std::vector<std::string> inputs;
  std::string detector;
  std::string encoder;
  std::string out;
  std::size_t k = 100;
  std::size_t max_iters = 1024;
  std::size_t hop_frames = kTrainingHopFrames;
  double threshold = 0.5;
  bool run_tsne = false;
  bool export_wavs = false;
  double gap = 0.25;
  double perplexity = 30.0;
  std::size_t tsne_iters = 1000;
  double sample_fraction = 1.0;
  SpectrogramOptions spec;
  Common common;

  void run(const CLI::App& sub) {
    RunManifest m("mine");
    m.input(detector);
    auto det = load_classifier(detector);
    require(det.head_config().task == HeadTask::Detect, ErrorCode::InvalidConfig, "--detector must hold a detect head");
    const auto enc = encoder.empty() ? Encoder<float>() : load_encoder(encoder, m);
    const Encoder<float>& embedder = encoder.empty() ? det.encoder() : enc;
    const auto params = spec.params();
    const auto wavs = collect_wavs(inputs);
    if (wavs.empty()) throw UsageError("no WAV inputs");

    ClipLibrary clips;
    std::vector<Window> detected;
    std::size_t scanned = 0;
    for (const auto& w : wavs) {
      m.input(w);
      auto clip = load_audio(w);
      auto windows = windows_for(clip, params, hop_frames);
      const auto probs = predict(det, windows);
      scanned += windows.size();
      for (std::size_t i = 0; i < windows.size(); ++i)
        if (probs[i][0] >= threshold) detected.push_back(std::move(windows[i]));
      clips.emplace(clip.source_id, std::move(clip));
    }
    std::cerr << "detector kept " << detected.size() << " of " << scanned << " windows\n";
    if (detected.size() < k)
      throw UsageError("TooFewPoints: --k " + std::to_string(k) + " exceeds the " + std::to_string(detected.size()) +
                       " detected windows");

    ensure_dir(out);
    const fs::path dir(out);
    const auto emb = embed_windows(embedder, detected, common.threads);
    write_embeddings_csv(emb, dir / "embeddings.csv");
    m.output(dir / "embeddings.csv");

    const auto model = kmeans(emb, {k, max_iters, common.seed, common.threads});
    std::cerr << "k-means: k=" << k << ", " << model.iterations << " iterations, inertia " << model.inertia << "\n";
    const auto f = filter_by_median_silhouette(emb, model.assignments, common.threads);
    std::vector<AssignmentRow> all, kept;
    for (std::size_t i = 0; i < emb.size(); ++i) all.push_back({emb.provenance[i], model.assignments[i], f.coefficients[i]});
    for (auto i : f.retained) kept.push_back(all[i]);
    write_assignments_csv(all, dir / "assignments.csv");
    write_assignments_csv(kept, dir / "retained.csv");
    m.output(dir / "assignments.csv");
    m.output(dir / "retained.csv");
    std::cerr << "silhouette median " << f.median << ", retained " << kept.size() << "\n";
    m.result("windows_scanned", scanned);
    m.result("windows_detected", detected.size());
    m.result("kmeans", {{"k", model.k},
                        {"max_iterations", max_iters},
                        {"iterations", model.iterations},
                        {"converged", model.converged},
                        {"inertia", model.inertia}});
    m.result("silhouette_median", f.median);
    m.result("retained", kept.size());

    if (run_tsne) {
      const auto sub_emb = emb.subset(f.retained);
      std::vector<int> clusters;
      for (const auto& r : kept) clusters.push_back(r.cluster);
      TsneConfig cfg;
      cfg.perplexity = perplexity;
      cfg.iterations = tsne_iters;
      cfg.seed = common.seed;
      cfg.threads = common.threads;
      const auto layout = tsne(sub_emb, cfg);
      write_layout_csv(layout, clusters, dir / "layout.csv");
      write_scatter_svg(layout, clusters, dir / "layout.svg", {sample_fraction, common.seed});
      m.output(dir / "layout.csv");
      m.output(dir / "layout.svg");
    }
    if (export_wavs) export_all(kept, clips, params, dir / "clusters", gap, m);
    m.write(manifest_path(common, dir / "manifest.json"), sub, common.seed);
  }
};

// render-kernels -----------------------------------------------------------------------

struct RenderKernelsCmd {
  std::string checkpoint;
  std::string out;
  Common common;

  void run(const CLI::App& sub) {
    RunManifest m("render-kernels");
    const auto enc = load_encoder(checkpoint, m);
    export_first_layer_kernels(enc, out);
    m.output(out);
    m.write(manifest_path(common, with_suffix(out, ".manifest.json")), sub, common.seed);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"finmine: spectrogram autoencoder and pattern mining for dolphin recordings"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "key = value configuration file");

  const std::size_t threads = default_threads();

  SpectrogramCmd spectrogram;
  auto* s_spec = app.add_subcommand("spectrogram", "write magnitude spectrogram CSVs");
  s_spec->add_option("inputs", spectrogram.inputs, "WAV files or directories")->required();
  s_spec->add_option("-o,--out", spectrogram.out, "output directory")->required();
  spectrogram.spec.add(s_spec);
  add_common(s_spec, spectrogram.common, false, false);

  SynthCmd synth;
  auto* s_synth = app.add_subcommand("synth", "generate a labeled synthetic corpus");
  s_synth->add_option("-o,--out", synth.out, "output directory")->required();
  s_synth->add_option("--noise", synth.counts[0], "noise clips");
  s_synth->add_option("--whistle", synth.counts[1], "whistle clips");
  s_synth->add_option("--click", synth.counts[2], "click-train clips");
  s_synth->add_option("--burst", synth.counts[3], "burst-pulse clips");
  s_synth->add_option("--clip-seconds", synth.clip_seconds, "clip length");
  s_synth->add_option("--sample-rate", synth.sample_rate, "sample rate")->check(CLI::PositiveNumber);
  s_synth->add_option("--noise-rms", synth.noise_rms, "background noise RMS");
  s_synth->add_option("--amplitude", synth.amplitude, "signal amplitude");
  s_synth->add_option("--recordings", synth.recordings, "long recordings to generate");
  s_synth->add_option("--recording-seconds", synth.recording_seconds, "length of each recording");
  s_synth->add_option("--events", synth.events, "signal events per recording");
  add_common(s_synth, synth.common, true, false);

  TrainAeCmd train_ae;
  auto* s_ae = app.add_subcommand("train-ae", "train the autoencoder on unlabeled audio");
  s_ae->add_option("inputs", train_ae.inputs, "WAV files or directories")->required();
  s_ae->add_option("-o,--out", train_ae.out, "checkpoint path")->required();
  s_ae->add_option("--batch", train_ae.batch, "batch size")->check(CLI::PositiveNumber);
  s_ae->add_option("--epochs", train_ae.epochs, "epochs")->check(CLI::PositiveNumber);
  s_ae->add_option("--lr", train_ae.lr, "ADAM learning rate")->check(CLI::PositiveNumber);
  s_ae->add_option("--clip-norm", train_ae.clip_norm, "clip the batch gradient to this L2 norm (0 = off)")
      ->check(CLI::NonNegativeNumber);
  s_ae->add_option("--window-hop", train_ae.hop_frames, "hop between training windows, frames")
      ->check(CLI::PositiveNumber);
  s_ae->add_option("--loss-csv", train_ae.loss_csv, "loss history path");
  s_ae->add_option("--kernels", train_ae.kernels, "first-layer kernel image (.pgm or .svg)");
  s_ae->add_flag("-q,--quiet", train_ae.quiet, "no per-epoch log");
  train_ae.model.add(s_ae);
  train_ae.spec.add(s_ae);
  train_ae.common.threads = threads;
  add_common(s_ae, train_ae.common, true, true);

  TrainHeadCmd train_head_cmd;
  auto* s_head = app.add_subcommand("train-head", "train a detection or classification head");
  s_head->add_option("labels", train_head_cmd.labels, "labeled manifest CSV (path,start_seconds,end_seconds,label)")
      ->required();
  s_head->add_option("--base", train_head_cmd.base, "checkpoint holding the encoder")->required();
  s_head->add_option("-o,--out", train_head_cmd.out, "head checkpoint path")->required();
  s_head->add_option("--task", train_head_cmd.task, "detect | classify")
      ->check(CLI::IsMember({"detect", "classify"}));
  s_head->add_option("--freeze", train_head_cmd.freeze, "except-last-lstm | none")
      ->check(CLI::IsMember({"except-last-lstm", "none"}));
  s_head->add_option("--batch", train_head_cmd.batch, "batch size")->check(CLI::PositiveNumber);
  s_head->add_option("--epochs", train_head_cmd.epochs, "epochs")->check(CLI::PositiveNumber);
  s_head->add_option("--lr", train_head_cmd.lr, "ADAM learning rate")->check(CLI::PositiveNumber);
  s_head->add_option("--clip-norm", train_head_cmd.clip_norm, "clip the batch gradient to this L2 norm (0 = off)")
      ->check(CLI::NonNegativeNumber);
  s_head->add_option("--split", train_head_cmd.split, "training fraction per class")->check(CLI::Range(0.0, 1.0));
  s_head->add_option("--threshold", train_head_cmd.threshold, "detection threshold")->check(CLI::Range(0.0, 1.0));
  s_head->add_option("--window-hop", train_head_cmd.hop_frames, "hop between windows, frames")
      ->check(CLI::PositiveNumber);
  s_head->add_option("--confusion", train_head_cmd.confusion, "confusion matrix CSV path");
  s_head->add_option("--loss-csv", train_head_cmd.loss_csv, "loss history path");
  s_head->add_flag("-q,--quiet", train_head_cmd.quiet, "no per-epoch log");
  train_head_cmd.spec.add(s_head);
  train_head_cmd.common.threads = threads;
  add_common(s_head, train_head_cmd.common, true, true);

  EmbedCmd embed;
  auto* s_embed = app.add_subcommand("embed", "encode windows to embedding vectors");
  s_embed->add_option("inputs", embed.inputs, "WAV files or directories")->required();
  s_embed->add_option("--encoder", embed.encoder, "checkpoint holding the encoder")->required();
  s_embed->add_option("-o,--out", embed.out, "embeddings CSV")->required();
  s_embed->add_option("--window-hop", embed.hop_frames, "hop between windows, frames")->check(CLI::PositiveNumber);
  embed.spec.add(s_embed);
  embed.common.threads = threads;
  add_common(s_embed, embed.common, false, true);

  ClusterCmd cluster;
  auto* s_cluster = app.add_subcommand("cluster", "k-means++ clustering with silhouette scores");
  s_cluster->add_option("embeddings", cluster.embeddings, "embeddings CSV")->required();
  s_cluster->add_option("-o,--out", cluster.out, "assignments CSV")->required();
  s_cluster->add_option("--k", cluster.k, "clusters")->check(CLI::PositiveNumber);
  s_cluster->add_option("--max-iters", cluster.max_iters, "Lloyd iteration cap")->check(CLI::PositiveNumber);
  s_cluster->add_flag("--filter", cluster.filter, "keep only rows at or above the median silhouette");
  cluster.common.threads = threads;
  add_common(s_cluster, cluster.common, true, true);

  TsneCmd tsne_cmd;
  auto* s_tsne = app.add_subcommand("tsne", "2-D t-SNE layout of embeddings");
  s_tsne->add_option("embeddings", tsne_cmd.embeddings, "embeddings CSV")->required();
  s_tsne->add_option("--assignments", tsne_cmd.assignments, "assignments CSV (colours and row subset)");
  s_tsne->add_option("-o,--out", tsne_cmd.out, "layout CSV")->required();
  s_tsne->add_option("--svg", tsne_cmd.svg, "scatter plot path");
  s_tsne->add_option("--perplexity", tsne_cmd.perplexity, "perplexity")->check(CLI::PositiveNumber);
  s_tsne->add_option("--iters", tsne_cmd.iters, "gradient steps")->check(CLI::PositiveNumber);
  s_tsne->add_option("--sample-fraction", tsne_cmd.sample_fraction, "fraction of points drawn")
      ->check(CLI::Range(0.0, 1.0));
  tsne_cmd.common.threads = threads;
  add_common(s_tsne, tsne_cmd.common, true, true);

  DetectCmd detect;
  auto* s_detect = app.add_subcommand("detect", "sweep a detector over recordings");
  s_detect->add_option("inputs", detect.inputs, "WAV files or directories")->required();
  s_detect->add_option("--detector", detect.detector, "detect-head checkpoint")->required();
  s_detect->add_option("-o,--out", detect.out, "regions CSV")->required();
  s_detect->add_option("--window-hop", detect.hop_frames, "hop between windows, frames")->check(CLI::PositiveNumber);
  s_detect->add_option("--threshold", detect.threshold, "decision threshold")->check(CLI::Range(0.0, 1.0));
  detect.spec.add(s_detect);
  add_common(s_detect, detect.common, false, false);

  MineCmd mine;
  auto* s_mine = app.add_subcommand("mine", "detect, embed, cluster and export patterns");
  s_mine->add_option("inputs", mine.inputs, "WAV files or directories")->required();
  s_mine->add_option("--detector", mine.detector, "detect-head checkpoint")->required();
  s_mine->add_option("--encoder", mine.encoder, "encoder checkpoint (default: the detector's encoder)");
  s_mine->add_option("-o,--out", mine.out, "output directory")->required();
  s_mine->add_option("--k", mine.k, "clusters")->check(CLI::PositiveNumber);
  s_mine->add_option("--max-iters", mine.max_iters, "Lloyd iteration cap")->check(CLI::PositiveNumber);
  s_mine->add_option("--window-hop", mine.hop_frames, "hop between windows, frames")->check(CLI::PositiveNumber);
  s_mine->add_option("--threshold", mine.threshold, "detection threshold")->check(CLI::Range(0.0, 1.0));
  s_mine->add_flag("--tsne", mine.run_tsne, "write layout.csv and layout.svg");
  s_mine->add_flag("--export-wavs", mine.export_wavs, "write one WAV per cluster");
  s_mine->add_option("--gap", mine.gap, "silence between cluster members, seconds")->check(CLI::NonNegativeNumber);
  s_mine->add_option("--perplexity", mine.perplexity, "t-SNE perplexity")->check(CLI::PositiveNumber);
  s_mine->add_option("--tsne-iters", mine.tsne_iters, "t-SNE gradient steps")->check(CLI::PositiveNumber);
  s_mine->add_option("--sample-fraction", mine.sample_fraction, "fraction of points drawn")
      ->check(CLI::Range(0.0, 1.0));
  mine.spec.add(s_mine);
  mine.common.threads = threads;
  add_common(s_mine, mine.common, true, true);

  ExportCmd export_cmd;
  auto* s_export = app.add_subcommand("export-clusters", "concatenate cluster members into WAV files");
  s_export->add_option("assignments", export_cmd.assignments, "assignments CSV")->required();
  s_export->add_option("-o,--out", export_cmd.out, "output directory")->required();
  s_export->add_option("--gap", export_cmd.gap, "silence between members, seconds")->check(CLI::NonNegativeNumber);
  export_cmd.spec.add(s_export);
  add_common(s_export, export_cmd.common, false, false);

  RenderKernelsCmd render;
  auto* s_render = app.add_subcommand("render-kernels", "draw first-layer convolution kernels");
  s_render->add_option("checkpoint", render.checkpoint, "checkpoint holding the encoder")->required();
  s_render->add_option("-o,--out", render.out, "image path (.pgm or .svg)")->required();
  add_common(s_render, render.common, false, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*s_spec) spectrogram.run(*s_spec);
    else if (*s_synth) synth.run(*s_synth);
    else if (*s_ae) train_ae.run(*s_ae);
    else if (*s_head) train_head_cmd.run(*s_head);
    else if (*s_embed) embed.run(*s_embed);
    else if (*s_cluster) cluster.run(*s_cluster);
    else if (*s_tsne) tsne_cmd.run(*s_tsne);
    else if (*s_detect) detect.run(*s_detect);
    else if (*s_mine) mine.run(*s_mine);
    else if (*s_export) export_cmd.run(*s_export);
    else if (*s_render) render.run(*s_render);
  } catch (const UsageError& e) {
    std::cerr << "finmine: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "finmine: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "finmine: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}
