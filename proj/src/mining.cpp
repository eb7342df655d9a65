#include "finmine/mining.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "finmine/checkpoint.hpp"
#include "finmine/io.hpp"
#include "finmine/parallel.hpp"
#include "finmine/train.hpp"

namespace finmine {

// Embeddings ---------------------------------------------------------------------

void EmbeddingSet::add(std::span<const double> embedding, Provenance where) {
  if (provenance.empty() && dim == 0) dim = embedding.size();
  require(embedding.size() == dim, ErrorCode::ShapeMismatch,
          "embedding has " + std::to_string(embedding.size()) + " values, expected " + std::to_string(dim));
  values.insert(values.end(), embedding.begin(), embedding.end());
  provenance.push_back(std::move(where));
}

void EmbeddingSet::validate() const {
  require(values.size() == dim * provenance.size(), ErrorCode::ShapeMismatch, "embedding matrix size mismatch");
  for (double v : values) require(std::isfinite(v), ErrorCode::NonFiniteValue, "non-finite embedding value");
  std::set<Provenance> seen(provenance.begin(), provenance.end());
  require(seen.size() == provenance.size(), ErrorCode::InvalidConfig, "duplicate embedding provenance");
}

EmbeddingSet EmbeddingSet::subset(std::span<const std::size_t> indices) const {
  EmbeddingSet out;
  out.dim = dim;
  for (std::size_t i : indices) {
    auto r = row(i);
    out.values.insert(out.values.end(), r.begin(), r.end());
    out.provenance.push_back(provenance.at(i));
  }
  return out;
}

EmbeddingSet embed_windows(const Encoder<float>& encoder, std::span<const Window> windows, std::size_t threads) {
  std::vector<std::vector<double>> rows(windows.size());
  parallel_for(windows.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      Tape<float> tape;
      const auto e = encoder.encode(tape, tape.constant(windows[i].values)).value().data();
      rows[i].assign(e.begin(), e.end());
    }
  });
  EmbeddingSet out;
  for (std::size_t i = 0; i < windows.size(); ++i) out.add(rows[i], {windows[i].source_id, windows[i].start_frame});
  out.validate();
  return out;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

// k-means --------------------------------------------------------------------------

std::vector<std::size_t> ClusterModel::members(int cluster) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignments.size(); ++i)
    if (assignments[i] == cluster) out.push_back(i);
  return out;
}

namespace {

std::vector<double> seed_plus_plus(const EmbeddingSet& emb, std::size_t k, std::mt19937_64& rng) {
  const std::size_t n = emb.size();
  const std::size_t d = emb.dim;
  std::vector<double> centroids;
  centroids.reserve(k * d);
  std::vector<bool> chosen(n, false);
  auto take = [&](std::size_t i) {
    chosen[i] = true;
    auto r = emb.row(i);
    centroids.insert(centroids.end(), r.begin(), r.end());
  };
  take(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
  std::vector<double> nearest(n);
  for (std::size_t i = 0; i < n; ++i) nearest[i] = squared_distance(emb.row(i), {centroids.data(), d});
  while (centroids.size() < k * d) {
    const double total = std::accumulate(nearest.begin(), nearest.end(), 0.0);
    std::size_t pick = n;
    if (total > 0.0) {
      const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (nearest[i] <= 0.0) continue;
        acc += nearest[i];
        pick = i;
        if (acc > u) break;
      }
    } else {
      // All remaining points coincide with a centroid; pick an unused one.
      std::vector<std::size_t> free;
      for (std::size_t i = 0; i < n; ++i)
        if (!chosen[i]) free.push_back(i);
      pick = free[std::uniform_int_distribution<std::size_t>(0, free.size() - 1)(rng)];
    }
    take(pick);
    std::span<const double> c(centroids.data() + centroids.size() - d, d);
    for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], squared_distance(emb.row(i), c));
  }
  return centroids;
}

}  // namespace

ClusterModel kmeans(const EmbeddingSet& emb, const KMeansConfig& config) {
  require(config.k >= 1, ErrorCode::InvalidConfig, "k must be >= 1");
  require(config.max_iterations >= 1, ErrorCode::InvalidConfig, "max_iterations must be >= 1");
  const std::size_t n = emb.size();
  require(n >= config.k, ErrorCode::TooFewPoints,
          "k-means needs at least k = " + std::to_string(config.k) + " points, got " + std::to_string(n));
  emb.validate();

  const std::size_t k = config.k;
  const std::size_t d = emb.dim;
  std::mt19937_64 rng(config.seed);
  ClusterModel m;
  m.k = k;
  m.dim = d;
  m.centroids = seed_plus_plus(emb, k, rng);
  m.assignments.assign(n, -1);

  std::vector<double> dist(n);
  auto assign = [&](std::vector<int>& labels) {
    parallel_for(n, config.threads, [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        double best = std::numeric_limits<double>::infinity();
        int arg = 0;
        for (std::size_t c = 0; c < k; ++c) {
          const double s = squared_distance(emb.row(i), m.centroid(c));
          if (s < best) {
            best = s;
            arg = static_cast<int>(c);
          }
        }
        labels[i] = arg;
        dist[i] = best;
      }
    });
    return std::accumulate(dist.begin(), dist.end(), 0.0);
  };

  auto update = [&] {
    std::vector<std::size_t> count(k, 0);
    for (int a : m.assignments) ++count[static_cast<std::size_t>(a)];
    for (std::size_t c = 0; c < k; ++c) {
      if (count[c] > 0) continue;
      // Steal the worst-fitting point from a cluster that can spare it.
      std::size_t far = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (count[static_cast<std::size_t>(m.assignments[i])] < 2) continue;
        if (far == n || dist[i] > dist[far]) far = i;
      }
      if (far == n) continue;
      --count[static_cast<std::size_t>(m.assignments[far])];
      m.assignments[far] = static_cast<int>(c);
      dist[far] = 0.0;
      count[c] = 1;
    }
    std::fill(m.centroids.begin(), m.centroids.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double* c = m.centroids.data() + static_cast<std::size_t>(m.assignments[i]) * d;
      auto r = emb.row(i);
      for (std::size_t j = 0; j < d; ++j) c[j] += r[j];
    }
    for (std::size_t c = 0; c < k; ++c)
      for (std::size_t j = 0; j < d; ++j) m.centroids[c * d + j] /= static_cast<double>(count[c]);
  };

  std::vector<int> next(n);
  for (std::size_t it = 0; it < config.max_iterations; ++it) {
    const double inertia = assign(next);
    require(std::isfinite(inertia), ErrorCode::NonFiniteValue, "k-means inertia is not finite");
    if (!m.inertia_history.empty()) {
      const double prev = m.inertia_history.back();
      require(inertia <= prev + 1e-9 * std::max(1.0, prev), ErrorCode::NonFiniteValue,
              "k-means inertia increased at iteration " + std::to_string(it));
    }
    m.inertia_history.push_back(inertia);
    m.iterations = it + 1;
    if (next == m.assignments) {
      m.converged = true;
      break;
    }
    m.assignments = next;
    update();
  }
  if (!m.converged) {
    // Keep the reported partition consistent with the final centroids.
    m.inertia = assign(m.assignments);
  } else {
    m.inertia = m.inertia_history.back();
  }
  return m;
}

double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
  require(a.size() == b.size(), ErrorCode::ShapeMismatch, "labelings differ in length");
  const std::size_t n = a.size();
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> ra, rb;
  for (std::size_t i = 0; i < n; ++i) {
    joint[{a[i], b[i]}] += 1.0;
    ra[a[i]] += 1.0;
    rb[b[i]] += 1.0;
  }
  auto c2 = [](double x) { return x * (x - 1.0) / 2.0; };
  double sum_joint = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (const auto& [_, v] : joint) sum_joint += c2(v);
  for (const auto& [_, v] : ra) sum_a += c2(v);
  for (const auto& [_, v] : rb) sum_b += c2(v);
  const double total = c2(static_cast<double>(n));
  const double expected = total > 0.0 ? sum_a * sum_b / total : 0.0;
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;  // both trivial partitions
  return (sum_joint - expected) / (max_index - expected);
}

// Silhouette -------------------------------------------------------------------------

std::vector<double> silhouette(const EmbeddingSet& emb, std::span<const int> assignments, std::size_t threads) {
  const std::size_t n = emb.size();
  require(assignments.size() == n, ErrorCode::ShapeMismatch, "one assignment per embedding required");
  std::map<int, std::size_t> dense;
  for (int a : assignments) dense.emplace(a, 0);
  require(dense.size() >= 2, ErrorCode::SingleCluster, "silhouette needs at least two clusters");
  std::size_t next = 0;
  for (auto& [_, idx] : dense) idx = next++;
  std::vector<std::size_t> label(n);
  std::vector<std::size_t> size(dense.size(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    label[i] = dense[assignments[i]];
    ++size[label[i]];
  }

  std::vector<double> s(n, 0.0);
  parallel_for(n, threads, [&](std::size_t begin, std::size_t end) {
    std::vector<double> sums(size.size());
    for (std::size_t i = begin; i < end; ++i) {
      if (size[label[i]] < 2) continue;
      std::fill(sums.begin(), sums.end(), 0.0);
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) sums[label[j]] += std::sqrt(squared_distance(emb.row(i), emb.row(j)));
      const double a = sums[label[i]] / static_cast<double>(size[label[i]] - 1);
      double b = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < size.size(); ++c)
        if (c != label[i]) b = std::min(b, sums[c] / static_cast<double>(size[c]));
      const double denom = std::max(a, b);
      s[i] = denom > 0.0 ? (b - a) / denom : 0.0;
    }
  });
  return s;
}

double lower_median(std::span<const double> values) {
  require(!values.empty(), ErrorCode::TooFewPoints, "median of an empty set");
  std::vector<double> sorted(values.begin(), values.end());
  const std::size_t idx = (sorted.size() + 1) / 2 - 1;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(idx), sorted.end());
  return sorted[idx];
}

SilhouetteFilter retain_at_or_above_median(std::span<const double> coefficients) {
  SilhouetteFilter f;
  f.coefficients.assign(coefficients.begin(), coefficients.end());
  f.median = lower_median(coefficients);
  for (std::size_t i = 0; i < coefficients.size(); ++i)
    if (coefficients[i] >= f.median) f.retained.push_back(i);
  return f;
}

SilhouetteFilter filter_by_median_silhouette(const EmbeddingSet& emb, std::span<const int> assignments,
                                             std::size_t threads) {
  return retain_at_or_above_median(silhouette(emb, assignments, threads));
}

// t-SNE ------------------------------------------------------------------------------

double effective_perplexity(std::size_t n, double requested) {
  require(requested > 0.0, ErrorCode::InvalidConfig, "perplexity must be positive");
  if (static_cast<double>(n) >= 3.0 * requested) return requested;
  return std::max(2.0, static_cast<double>(n - 1) / 3.0);
}

namespace {

std::vector<double> pairwise_squared(const EmbeddingSet& emb, std::size_t threads) {
  const std::size_t n = emb.size();
  std::vector<double> d2(n * n, 0.0);
  parallel_for(n, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) d2[i * n + j] = squared_distance(emb.row(i), emb.row(j));
  });
  return d2;
}

void fit_row(std::span<const double> dist, std::size_t self, double log_perplexity, std::span<double> out) {
  const std::size_t n = dist.size();
  double shift = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j)
    if (j != self) shift = std::min(shift, dist[j]);
  double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
  for (int step = 0; step < 50; ++step) {
    double sum = 0.0, weighted = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == self) {
        out[j] = 0.0;
        continue;
      }
      out[j] = std::exp(-(dist[j] - shift) * beta);
      sum += out[j];
      weighted += (dist[j] - shift) * out[j];
    }
    const double entropy = std::log(sum) + beta * weighted / sum;
    for (std::size_t j = 0; j < n; ++j) out[j] /= sum;
    const double diff = entropy - log_perplexity;
    if (std::abs(diff) < 1e-4) break;
    if (diff > 0.0) {
      lo = beta;
      beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
    } else {
      hi = beta;
      beta = 0.5 * (beta + lo);
    }
  }
}

double kl_divergence(const std::vector<double>& p, const std::vector<double>& y, std::size_t n) {
  double sum_q = 0.0;
  std::vector<double> num(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double dx = y[2 * i] - y[2 * j], dy = y[2 * i + 1] - y[2 * j + 1];
      num[i * n + j] = 1.0 / (1.0 + dx * dx + dy * dy);
      sum_q += num[i * n + j];
    }
  double kl = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double pij = p[i * n + j];
      const double qij = std::max(num[i * n + j] / sum_q, 1e-12);
      kl += pij * std::log(pij / qij);
    }
  return kl;
}

}  // namespace

std::vector<double> conditional_affinities(const EmbeddingSet& emb, double perplexity, std::size_t threads) {
  const std::size_t n = emb.size();
  const auto d2 = pairwise_squared(emb, threads);
  std::vector<double> p(n * n, 0.0);
  const double log_perp = std::log(perplexity);
  parallel_for(n, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i)
      fit_row({d2.data() + i * n, n}, i, log_perp, {p.data() + i * n, n});
  });
  return p;
}

TsneLayout tsne(const EmbeddingSet& emb, const TsneConfig& config) {
  const std::size_t n = emb.size();
  require(n >= 4, ErrorCode::TooFewPoints, "t-SNE needs at least 4 points, got " + std::to_string(n));
  require(config.iterations >= 1, ErrorCode::InvalidConfig, "t-SNE needs at least one iteration");
  emb.validate();

  TsneLayout layout;
  layout.perplexity = effective_perplexity(n, config.perplexity);
  auto p = conditional_affinities(emb, layout.perplexity, config.threads);
  // Symmetrize: p_ij = (p_{j|i} + p_{i|j}) / 2N.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = std::max((p[i * n + j] + p[j * n + i]) / (2.0 * static_cast<double>(n)), 1e-12);
      p[i * n + j] = v;
      p[j * n + i] = v;
    }

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> gauss(0.0, 1e-4);
  std::vector<double> y(2 * n);
  for (auto& v : y) v = gauss(rng);
  layout.initial_kl = kl_divergence(p, y, n);

  std::vector<double> update(2 * n, 0.0), gains(2 * n, 1.0), grad(2 * n), num(n * n), row_sum(n);
  for (std::size_t it = 0; it < config.iterations; ++it) {
    const double exaggeration = it < config.exaggeration_iterations ? config.exaggeration : 1.0;
    const double momentum = it < config.momentum_switch ? config.initial_momentum : config.final_momentum;

    parallel_for(n, config.threads, [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          if (i == j) {
            num[i * n + j] = 0.0;
            continue;
          }
          const double dx = y[2 * i] - y[2 * j], dy = y[2 * i + 1] - y[2 * j + 1];
          num[i * n + j] = 1.0 / (1.0 + dx * dx + dy * dy);
          s += num[i * n + j];
        }
        row_sum[i] = s;
      }
    });
    const double sum_q = std::accumulate(row_sum.begin(), row_sum.end(), 0.0);
    parallel_for(n, config.threads, [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        double gx = 0.0, gy = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          if (i == j) continue;
          const double w = (exaggeration * p[i * n + j] - num[i * n + j] / sum_q) * num[i * n + j];
          gx += w * (y[2 * i] - y[2 * j]);
          gy += w * (y[2 * i + 1] - y[2 * j + 1]);
        }
        grad[2 * i] = 4.0 * gx;
        grad[2 * i + 1] = 4.0 * gy;
      }
    });
    for (std::size_t k = 0; k < 2 * n; ++k) {
      gains[k] = (grad[k] > 0.0) != (update[k] > 0.0) ? gains[k] + 0.2 : gains[k] * 0.8;
      gains[k] = std::max(gains[k], 0.01);
      update[k] = momentum * update[k] - config.learning_rate * gains[k] * grad[k];
      y[k] += update[k];
    }
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      mx += y[2 * i];
      my += y[2 * i + 1];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[2 * i] -= mx;
      y[2 * i + 1] -= my;
    }
    for (double v : y) require(std::isfinite(v), ErrorCode::NonFiniteValue, "t-SNE layout diverged");
    layout.iterations = it + 1;
  }
  layout.coords = std::move(y);
  layout.kl = kl_divergence(p, layout.coords, n);
  require(std::isfinite(layout.kl), ErrorCode::NonFiniteValue, "t-SNE KL is not finite");
  require(layout.kl < layout.initial_kl, ErrorCode::NonFiniteValue,
          "t-SNE failed to reduce KL divergence (initial " + std::to_string(layout.initial_kl) + ", final " +
              std::to_string(layout.kl) + ")");
  return layout;
}

// Detection --------------------------------------------------------------------------

std::vector<Region> merge_regions(std::span<const WindowScore> scores, double threshold, std::size_t window_frames) {
  std::vector<Region> out;
  bool open = false;
  for (const auto& w : scores) {
    if (w.score >= threshold) {
      if (open) {
        out.back().end_frame = w.start_frame + window_frames;
        out.back().score = std::max(out.back().score, w.score);
      } else {
        // Hops shorter than half a window can make runs split by one miss
        // overlap; fold those together so regions stay disjoint.
        if (!out.empty() && w.start_frame < out.back().end_frame) {
          out.back().end_frame = w.start_frame + window_frames;
          out.back().score = std::max(out.back().score, w.score);
        } else {
          out.push_back({w.start_frame, w.start_frame + window_frames, w.score});
        }
        open = true;
      }
    } else {
      open = false;
    }
  }
  return out;
}

std::vector<WindowScore> score_windows(Classifier<float>& detector, const AudioClip& clip, const DetectConfig& config) {
  require(detector.head_config().task == HeadTask::Detect, ErrorCode::InvalidConfig,
          "detection needs a detect head, got " + task_name(detector.head_config().task));
  require(config.hop_frames >= 1, ErrorCode::InvalidConfig, "hop must be >= 1 frame");
  const Spectrogram spec = stft(clip, config.spectrogram);
  require(spec.num_frames() >= kWindowFrames, ErrorCode::ClipTooShort,
          clip.source_id + " yields " + std::to_string(spec.num_frames()) + " frames, need " +
              std::to_string(kWindowFrames));
  const auto windows = extract_windows(spec, kWindowFrames, config.hop_frames);
  const auto probs = predict(detector, windows);
  std::vector<WindowScore> out;
  for (std::size_t i = 0; i < windows.size(); ++i) out.push_back({windows[i].start_frame, probs[i][0]});
  return out;
}

std::vector<Region> detect_regions(Classifier<float>& detector, const AudioClip& clip, const DetectConfig& config) {
  const auto scores = score_windows(detector, clip, config);
  return merge_regions(scores, config.threshold);
}

// Outputs ----------------------------------------------------------------------------

std::vector<double> cluster_audio(std::span<const Provenance> members, const ClipLibrary& clips,
                                  const SpectrogramParams& params, double gap_seconds, std::size_t window_frames) {
  require(gap_seconds >= 0.0, ErrorCode::InvalidConfig, "gap must be non-negative");
  std::vector<double> out;
  int rate = 0;
  for (std::size_t m = 0; m < members.size(); ++m) {
    auto it = clips.find(members[m].source_id);
    require(it != clips.end(), ErrorCode::UnresolvedProvenance, "no loaded clip for '" + members[m].source_id + "'");
    const AudioClip& clip = it->second;
    if (rate == 0) rate = clip.sample_rate;
    require(clip.sample_rate == rate, ErrorCode::InvalidConfig, "cluster members have different sample rates");
    const auto span = frames_to_samples(members[m].start_frame, window_frames, params, rate);
    require(span.last <= clip.samples.size(), ErrorCode::UnresolvedProvenance,
            members[m].source_id + " frame " + std::to_string(members[m].start_frame) + " lies past the clip end");
    if (m > 0) out.insert(out.end(), static_cast<std::size_t>(std::llround(gap_seconds * rate)), 0.0);
    out.insert(out.end(), clip.samples.begin() + static_cast<std::ptrdiff_t>(span.first),
               clip.samples.begin() + static_cast<std::ptrdiff_t>(span.last));
  }
  return out;
}

void export_cluster_wav(std::span<const Provenance> members, const ClipLibrary& clips, const SpectrogramParams& params,
                        const std::filesystem::path& path, double gap_seconds, std::size_t window_frames,
                        int fallback_rate) {
  const auto audio = cluster_audio(members, clips, params, gap_seconds, window_frames);
  const int rate = members.empty() ? fallback_rate : clips.at(members.front().source_id).sample_rate;
  save_wav(path, audio, rate, WavEncoding::Pcm16);
}

std::string cluster_color(int cluster) {
  const int slot = ((cluster % 100) + 100) % 100;
  const double golden = 0.618033988749895;
  const double h = std::fmod(slot * golden, 1.0) * 6.0;
  const double s = 0.7, v = 0.9;
  const double c = v * s;
  const double x = c * (1.0 - std::abs(std::fmod(h, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(h)) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  const double mshift = v - c;
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(std::lround((r + mshift) * 255)),
                static_cast<int>(std::lround((g + mshift) * 255)), static_cast<int>(std::lround((b + mshift) * 255)));
  return buf;
}

std::string render_scatter_svg(const TsneLayout& layout, std::span<const int> assignments,
                               const ScatterConfig& config) {
  const std::size_t n = layout.size();
  require(assignments.size() == n, ErrorCode::ShapeMismatch, "layout and assignments differ in length");
  require(config.sample_fraction > 0.0 && config.sample_fraction <= 1.0, ErrorCode::InvalidConfig,
          "sample fraction must be in (0, 1]");

  std::vector<std::size_t> shown(n);
  std::iota(shown.begin(), shown.end(), std::size_t{0});
  const auto keep = static_cast<std::size_t>(std::llround(config.sample_fraction * static_cast<double>(n)));
  if (keep < n) {
    std::mt19937_64 rng(config.seed);
    std::shuffle(shown.begin(), shown.end(), rng);
    shown.resize(keep);
    std::sort(shown.begin(), shown.end());
  }

  double x0 = 0, x1 = 0, y0 = 0, y1 = 0;
  if (n > 0) {
    x0 = x1 = layout.coords[0];
    y0 = y1 = layout.coords[1];
  }
  for (std::size_t i = 0; i < n; ++i) {
    x0 = std::min(x0, layout.coords[2 * i]);
    x1 = std::max(x1, layout.coords[2 * i]);
    y0 = std::min(y0, layout.coords[2 * i + 1]);
    y1 = std::max(y1, layout.coords[2 * i + 1]);
  }
  const double inner_w = config.width - 2 * config.margin, inner_h = config.height - 2 * config.margin;
  auto sx = [&](double v) { return config.margin + (x1 > x0 ? (v - x0) / (x1 - x0) : 0.5) * inner_w; };
  // SVG y grows downwards.
  auto sy = [&](double v) { return config.margin + (y1 > y0 ? (y1 - v) / (y1 - y0) : 0.5) * inner_h; };

  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n",
                config.width, config.height, config.width, config.height);
  os << buf;
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t i : shown) {
    std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"%.1f\" fill=\"%s\"/>\n", sx(layout.coords[2 * i]),
                  sy(layout.coords[2 * i + 1]), config.radius, cluster_color(assignments[i]).c_str());
    os << buf;
  }
  os << "</svg>\n";
  return os.str();
}

void write_scatter_svg(const TsneLayout& layout, std::span<const int> assignments, const std::filesystem::path& path,
                       const ScatterConfig& config) {
  write_file_atomic(path, render_scatter_svg(layout, assignments, config));
}

// CSV --------------------------------------------------------------------------------

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_embeddings_csv(const EmbeddingSet& emb, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "source_id,start_frame";
  for (std::size_t j = 0; j < emb.dim; ++j) os << ",e" << j;
  os << '\n';
  for (std::size_t i = 0; i < emb.size(); ++i) {
    os << csv_field(emb.provenance[i].source_id) << ',' << emb.provenance[i].start_frame;
    for (double v : emb.row(i)) os << ',' << format_double(v);
    os << '\n';
  }
  write_file_atomic(path, os.str());
}

EmbeddingSet read_embeddings_csv(const std::filesystem::path& path) {
  const auto table = read_csv(path);
  require(table.header.size() >= 3 && table.header[0] == "source_id" && table.header[1] == "start_frame",
          ErrorCode::MalformedContainer, path.string() + " is not an embeddings CSV");
  EmbeddingSet emb;
  emb.dim = table.header.size() - 2;
  std::vector<double> row(emb.dim);
  for (const auto& r : table.rows) {
    for (std::size_t j = 0; j < emb.dim; ++j) row[j] = parse_double(r[j + 2], "embedding value");
    const auto frame = parse_integer(r[1], "start_frame");
    require(frame >= 0, ErrorCode::MalformedContainer, "negative start_frame");
    emb.add(row, {r[0], static_cast<std::size_t>(frame)});
  }
  emb.validate();
  return emb;
}

void write_assignments_csv(std::span<const AssignmentRow> rows, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "source_id,start_frame,cluster,silhouette\n";
  for (const auto& r : rows)
    os << csv_field(r.where.source_id) << ',' << r.where.start_frame << ',' << r.cluster << ','
       << format_double(r.silhouette) << '\n';
  write_file_atomic(path, os.str());
}

std::vector<AssignmentRow> read_assignments_csv(const std::filesystem::path& path) {
  const auto table = read_csv(path);
  const std::size_t c_id = table.column("source_id"), c_frame = table.column("start_frame"),
                    c_cluster = table.column("cluster"), c_sil = table.column("silhouette");
  std::vector<AssignmentRow> out;
  for (const auto& r : table.rows) {
    AssignmentRow a;
    a.where.source_id = r[c_id];
    const auto frame = parse_integer(r[c_frame], "start_frame");
    require(frame >= 0, ErrorCode::MalformedContainer, "negative start_frame");
    a.where.start_frame = static_cast<std::size_t>(frame);
    a.cluster = static_cast<int>(parse_integer(r[c_cluster], "cluster"));
    a.silhouette = parse_double(r[c_sil], "silhouette");
    out.push_back(std::move(a));
  }
  return out;
}

void write_layout_csv(const TsneLayout& layout, std::span<const int> assignments, const std::filesystem::path& path) {
  require(assignments.size() == layout.size(), ErrorCode::ShapeMismatch, "layout and assignments differ in length");
  std::ostringstream os;
  os << "x,y,cluster\n";
  for (std::size_t i = 0; i < layout.size(); ++i)
    os << format_double(layout.coords[2 * i]) << ',' << format_double(layout.coords[2 * i + 1]) << ','
       << assignments[i] << '\n';
  write_file_atomic(path, os.str());
}

}  // namespace finmine
