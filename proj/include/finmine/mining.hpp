#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "finmine/audio.hpp"
#include "finmine/model.hpp"
#include "finmine/spectrogram.hpp"

namespace finmine {

struct Provenance {
  std::string source_id;
  std::size_t start_frame = 0;

  friend bool operator==(const Provenance&, const Provenance&) = default;
  friend auto operator<=>(const Provenance&, const Provenance&) = default;
};

/// N×dim row-major embedding matrix with one provenance entry per row.
struct EmbeddingSet {
  std::size_t dim = 0;
  std::vector<double> values;
  std::vector<Provenance> provenance;

  std::size_t size() const { return provenance.size(); }
  std::span<const double> row(std::size_t i) const { return {values.data() + i * dim, dim}; }

  /// Appends a row; the provenance must not already be present.
  void add(std::span<const double> embedding, Provenance where);
  /// Throws ShapeMismatch / NonFiniteValue / InvalidConfig on broken invariants.
  void validate() const;
  EmbeddingSet subset(std::span<const std::size_t> indices) const;
};

/// Rows are encoded independently, `threads` at a time.
EmbeddingSet embed_windows(const Encoder<float>& encoder, std::span<const Window> windows, std::size_t threads = 1);

double squared_distance(std::span<const double> a, std::span<const double> b);

// k-means --------------------------------------------------------------------

struct KMeansConfig {
  std::size_t k = 100;
  std::size_t max_iterations = 1024;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct ClusterModel {
  std::size_t k = 0;
  std::size_t dim = 0;
  std::vector<double> centroids;  // k×dim
  std::vector<int> assignments;
  double inertia = 0.0;
  std::size_t iterations = 0;  // Lloyd iterations run
  bool converged = false;
  std::vector<double> inertia_history;  // after each assignment step

  std::span<const double> centroid(std::size_t c) const { return {centroids.data() + c * dim, dim}; }
  std::vector<std::size_t> members(int cluster) const;
};

/// k-means++ seeding, then Lloyd iterations until the assignment stops
/// changing or max_iterations. Empty clusters are re-seeded with the point
/// farthest from its centroid. Throws TooFewPoints when N < k and
/// NonFiniteValue if the inertia ever increases.
ClusterModel kmeans(const EmbeddingSet& embeddings, const KMeansConfig& config = {});

/// Adjusted Rand index between two labelings of the same points.
double adjusted_rand_index(std::span<const int> a, std::span<const int> b);

// Silhouette ------------------------------------------------------------------

/// s(i) = (b - a) / max(a, b) with Euclidean distances; members of
/// singleton clusters get 0. Throws SingleCluster with fewer than two
/// distinct labels.
std::vector<double> silhouette(const EmbeddingSet& embeddings, std::span<const int> assignments,
                               std::size_t threads = 1);

/// Lower median: the element at index ceil(N/2) - 1 of the sorted values.
double lower_median(std::span<const double> values);

struct SilhouetteFilter {
  std::vector<double> coefficients;
  double median = 0.0;
  std::vector<std::size_t> retained;  // ascending
};

SilhouetteFilter retain_at_or_above_median(std::span<const double> coefficients);
SilhouetteFilter filter_by_median_silhouette(const EmbeddingSet& embeddings, std::span<const int> assignments,
                                             std::size_t threads = 1);

// t-SNE -------------------------------------------------------------------------

struct TsneConfig {
  double perplexity = 30.0;
  std::size_t iterations = 1000;
  double learning_rate = 200.0;
  double exaggeration = 12.0;
  std::size_t exaggeration_iterations = 250;
  double initial_momentum = 0.5;
  double final_momentum = 0.8;
  std::size_t momentum_switch = 250;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct TsneLayout {
  std::vector<double> coords;  // N×2
  double initial_kl = 0.0;
  double kl = 0.0;
  std::size_t iterations = 0;
  double perplexity = 0.0;  // after any auto-reduction

  std::size_t size() const { return coords.size() / 2; }
};

/// Perplexity actually used for N points.
double effective_perplexity(std::size_t n, double requested);

/// Row-stochastic conditional affinities p_{j|i} (N×N, zero diagonal), each
/// row's Gaussian bandwidth found by bisection so that its entropy matches
/// log(perplexity) within 1e-4 (at most 50 steps).
std::vector<double> conditional_affinities(const EmbeddingSet& embeddings, double perplexity,
                                           std::size_t threads = 1);

/// Exact O(N²) t-SNE. Throws TooFewPoints for N < 4, NonFiniteValue on
/// divergence, and NonFiniteValue if the final KL is not below the KL of
/// the initial layout.
TsneLayout tsne(const EmbeddingSet& embeddings, const TsneConfig& config = {});

// Detection sweep ---------------------------------------------------------------

struct Region {
  std::size_t start_frame = 0;
  std::size_t end_frame = 0;  // exclusive
  double score = 0.0;

  friend bool operator==(const Region&, const Region&) = default;
};

struct DetectConfig {
  std::size_t hop_frames = kTrainingHopFrames;
  double threshold = 0.5;
  SpectrogramParams spectrogram{};
};

struct WindowScore {
  std::size_t start_frame = 0;
  double score = 0.0;
};

/// Merges runs of consecutive windows scoring >= threshold; region score is
/// the run's maximum.
std::vector<Region> merge_regions(std::span<const WindowScore> scores, double threshold,
                                  std::size_t window_frames = kWindowFrames);

/// Sigmoid-head scores for every 128-frame window at the configured hop.
std::vector<WindowScore> score_windows(Classifier<float>& detector, const AudioClip& clip, const DetectConfig& config);

/// Throws ClipTooShort if the clip yields fewer than 128 frames.
std::vector<Region> detect_regions(Classifier<float>& detector, const AudioClip& clip, const DetectConfig& config = {});

// Outputs -------------------------------------------------------------------------

using ClipLibrary = std::map<std::string, AudioClip>;

/// Concatenates the raw audio behind each member window with gap_seconds of
/// silence in between and writes 16-bit PCM. An empty member list produces a
/// valid file with no samples at `fallback_rate`.
void export_cluster_wav(std::span<const Provenance> members, const ClipLibrary& clips,
                        const SpectrogramParams& params, const std::filesystem::path& path,
                        double gap_seconds = 0.25, std::size_t window_frames = kWindowFrames,
                        int fallback_rate = 44100);
std::vector<double> cluster_audio(std::span<const Provenance> members, const ClipLibrary& clips,
                                  const SpectrogramParams& params, double gap_seconds = 0.25,
                                  std::size_t window_frames = kWindowFrames);

/// Colour for a cluster id: golden-ratio hue steps over a 100-entry palette.
std::string cluster_color(int cluster);

struct ScatterConfig {
  double sample_fraction = 1.0;
  std::uint64_t seed = 0;
  double width = 800.0;
  double height = 800.0;
  double margin = 20.0;
  double radius = 3.0;
};

std::string render_scatter_svg(const TsneLayout& layout, std::span<const int> assignments,
                               const ScatterConfig& config = {});
void write_scatter_svg(const TsneLayout& layout, std::span<const int> assignments, const std::filesystem::path& path,
                       const ScatterConfig& config = {});

// CSV -----------------------------------------------------------------------------

void write_embeddings_csv(const EmbeddingSet& embeddings, const std::filesystem::path& path);
EmbeddingSet read_embeddings_csv(const std::filesystem::path& path);

struct AssignmentRow {
  Provenance where;
  int cluster = 0;
  double silhouette = 0.0;
};

void write_assignments_csv(std::span<const AssignmentRow> rows, const std::filesystem::path& path);
std::vector<AssignmentRow> read_assignments_csv(const std::filesystem::path& path);

void write_layout_csv(const TsneLayout& layout, std::span<const int> assignments, const std::filesystem::path& path);

}  // namespace finmine
