#pragma once

// Time-series analytics over score series: DTW distance, k-means under DTW
// with barycenter updates, elbow selection of k and the district/product
// pair comparison against realized default rates.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mlrisk/csv.hpp"
#include "mlrisk/error.hpp"
#include "mlrisk/ingest.hpp"
#include "mlrisk/windows.hpp"

namespace mlrisk {

// ---------------------------------------------------------------------------
// Dynamic time warping

/// Minimal cumulative |a_i - b_j| over monotone alignments that match both
/// endpoints. Full DP, no warping band, O(|b|) memory.
inline double dtw_distance(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw ValidationError("dtw_distance needs non-empty series");
  constexpr double inf = std::numeric_limits<double>::infinity();
  const std::size_t m = b.size();
  std::vector<double> prev(m + 1, inf), cur(m + 1, inf);
  prev[0] = 0.0;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = inf;
    for (std::size_t j = 1; j <= m; ++j) {
      const double best = std::min({prev[j], cur[j - 1], prev[j - 1]});
      cur[j] = std::abs(a[i - 1] - b[j - 1]) + best;
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

using WarpingPath = std::vector<std::pair<std::size_t, std::size_t>>;

/// Optimal alignment as (index into a, index into b) pairs from (0,0) to
/// the last elements. Ties prefer the diagonal step.
inline WarpingPath dtw_path(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw ValidationError("dtw_path needs non-empty series");
  constexpr double inf = std::numeric_limits<double>::infinity();
  const std::size_t n = a.size(), m = b.size(), w = m + 1;
  std::vector<double> D((n + 1) * w, inf);
  D[0] = 0.0;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const double best = std::min({D[(i - 1) * w + j], D[i * w + j - 1], D[(i - 1) * w + j - 1]});
      D[i * w + j] = std::abs(a[i - 1] - b[j - 1]) + best;
    }
  }
  WarpingPath path;
  std::size_t i = n, j = m;
  while (true) {
    path.emplace_back(i - 1, j - 1);
    if (i == 1 && j == 1) break;
    const double diag = D[(i - 1) * w + j - 1];
    const double up = D[(i - 1) * w + j];
    const double left = D[i * w + j - 1];
    if (diag <= up && diag <= left) {
      --i;
      --j;
    } else if (up <= left) {
      --i;
    } else {
      --j;
    }
  }
  std::reverse(path.begin(), path.end());
  return path;
}

// ---------------------------------------------------------------------------
// Barycenter

namespace detail {

inline double median_of(std::vector<double>& v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return lo + (hi - lo) / 2.0;
}

inline double total_dtw(std::span<const double> center,
                        std::span<const std::span<const double>> members) {
  double s = 0.0;
  for (const auto& m : members) s += dtw_distance(center, m);
  return s;
}

}  // namespace detail

struct BarycenterResult {
  std::vector<double> center;
  double cost = 0.0;  // sum of DTW distances from the members
};

/// DTW barycenter averaging adapted to the absolute-difference cost: each
/// step aligns every member to the current center and moves every center
/// point to the median of the values aligned to it. A step is kept only if
/// it lowers the total cost, so the cost never increases.
inline BarycenterResult dtw_barycenter(std::vector<double> center,
                                       std::span<const std::span<const double>> members,
                                       std::size_t max_iterations = 10) {
  if (center.empty()) throw ValidationError("barycenter needs a non-empty initial center");
  BarycenterResult out;
  out.cost = members.empty() ? 0.0 : detail::total_dtw(center, members);
  out.center = std::move(center);
  if (members.empty()) return out;
  std::vector<std::vector<double>> aligned(out.center.size());
  for (std::size_t it = 0; it < max_iterations; ++it) {
    for (auto& bucket : aligned) bucket.clear();
    for (const auto& m : members) {
      for (const auto& [c, x] : dtw_path(out.center, m)) aligned[c].push_back(m[x]);
    }
    std::vector<double> candidate(out.center.size());
    for (std::size_t t = 0; t < candidate.size(); ++t) candidate[t] = detail::median_of(aligned[t]);
    const double cost = detail::total_dtw(candidate, members);
    if (!(cost < out.cost)) break;
    out.center = std::move(candidate);
    out.cost = cost;
  }
  return out;
}

// ---------------------------------------------------------------------------
// k-means under DTW

struct KMeansParams {
  std::size_t k = 2;
  std::uint64_t seed = 1;
  std::size_t max_iterations = 100;
  std::size_t barycenter_iterations = 10;
};

struct ClusterResult {
  std::size_t k = 0;
  std::vector<std::string> labels;        // input order; empty for raw data
  std::vector<std::size_t> assignments;   // cluster id per input series
  std::vector<std::vector<double>> centroids;
  double inertia = 0.0;
  std::vector<double> inertia_history;    // after each outer iteration
  std::size_t iterations = 0;             // assignment passes
  bool converged = false;                 // assignment reached a fixpoint
  std::uint64_t seed = 0;

  std::size_t cluster_of(std::string_view label) const {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == label) return assignments[i];
    }
    throw ValidationError("unknown label '" + std::string(label) + "'");
  }

  friend bool operator==(const ClusterResult&, const ClusterResult&) = default;
};

namespace detail {

/// k-means++ seeding with squared DTW weights. Falls back to a uniform pick
/// among unchosen series when every remaining distance is zero.
inline std::vector<std::size_t> seed_centers(std::span<const std::vector<double>> data, std::size_t k,
                                             std::mt19937_64& rng) {
  const std::size_t n = data.size();
  std::vector<std::size_t> chosen;
  std::vector<bool> taken(n, false);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto pick_uniform = [&] {
    std::vector<std::size_t> free;
    for (std::size_t i = 0; i < n; ++i) {
      if (!taken[i]) free.push_back(i);
    }
    const auto r = static_cast<std::size_t>(unit(rng) * static_cast<double>(free.size()));
    return free[std::min(r, free.size() - 1)];
  };
  while (chosen.size() < k) {
    std::size_t pick = 0;
    double total = 0.0;
    if (!chosen.empty()) {
      for (std::size_t i = 0; i < n; ++i) total += taken[i] ? 0.0 : nearest[i] * nearest[i];
    }
    if (total > 0.0) {
      const double target = unit(rng) * total;
      double acc = 0.0;
      pick = n;
      std::size_t last_positive = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (taken[i]) continue;
        const double w = nearest[i] * nearest[i];
        if (w <= 0.0) continue;
        last_positive = i;
        acc += w;
        if (target < acc) {
          pick = i;
          break;
        }
      }
      if (pick == n) pick = last_positive;
    } else {
      pick = pick_uniform();
    }
    chosen.push_back(pick);
    taken[pick] = true;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], dtw_distance(data[i], data[pick]));
    }
  }
  return chosen;
}

}  // namespace detail

/// Lloyd iterations: nearest-centroid assignment (ties keep the current
/// cluster), empty clusters re-seeded from the farthest point of a cluster
/// with at least two members, barycenter update per cluster. Stops when an
/// assignment step changes nothing or after max_iterations.
inline ClusterResult dtw_kmeans(std::span<const std::vector<double>> data, const KMeansParams& params) {
  const std::size_t n = data.size();
  const std::size_t k = params.k;
  if (n == 0) throw ValidationError("k-means needs at least one series");
  if (k == 0 || k > n) {
    throw ValidationError("k must lie in [1, " + std::to_string(n) + "], got " + std::to_string(k));
  }
  if (params.max_iterations == 0) throw ValidationError("k-means max_iterations must be >= 1");
  const std::size_t len = data[0].size();
  if (len == 0) throw ValidationError("series must be non-empty");
  for (const auto& s : data) {
    if (s.size() != len) throw ValidationError("all series must share one length");
  }

  std::mt19937_64 rng(params.seed);
  ClusterResult out;
  out.k = k;
  out.seed = params.seed;
  for (std::size_t c : detail::seed_centers(data, k, rng)) out.centroids.push_back(data[c]);

  constexpr std::size_t unassigned = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> assign(n, unassigned);
  std::vector<double> dist(n, 0.0);

  for (std::size_t iter = 1; iter <= params.max_iterations; ++iter) {
    out.iterations = iter;
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = assign[i];
      double best_d = best == unassigned ? std::numeric_limits<double>::infinity()
                                         : dtw_distance(data[i], out.centroids[best]);
      for (std::size_t c = 0; c < k; ++c) {
        if (c == assign[i]) continue;
        const double d = dtw_distance(data[i], out.centroids[c]);
        if (d < best_d) {
          best = c;
          best_d = d;
        }
      }
      if (best != assign[i]) changed = true;
      assign[i] = best;
      dist[i] = best_d;
    }

    std::vector<std::size_t> counts(k, 0);
    for (std::size_t a : assign) ++counts[a];
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      std::size_t far = unassigned;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[assign[i]] < 2) continue;
        if (far == unassigned || dist[i] > dist[far]) far = i;
      }
      --counts[assign[far]];
      ++counts[c];
      assign[far] = c;
      dist[far] = 0.0;
      out.centroids[c] = data[far];
      changed = true;
    }

    if (!changed) {
      out.converged = true;
      break;
    }

    for (std::size_t c = 0; c < k; ++c) {
      std::vector<std::span<const double>> members;
      for (std::size_t i = 0; i < n; ++i) {
        if (assign[i] == c) members.emplace_back(data[i]);
      }
      auto bary = dtw_barycenter(out.centroids[c], members, params.barycenter_iterations);
      out.centroids[c] = std::move(bary.center);
    }
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      dist[i] = dtw_distance(data[i], out.centroids[assign[i]]);
      inertia += dist[i];
    }
    out.inertia_history.push_back(inertia);
  }

  out.assignments = std::move(assign);
  out.inertia = 0.0;
  for (double d : dist) out.inertia += d;
  return out;
}

inline ClusterResult dtw_kmeans(std::span<const NodeSeries> series, const KMeansParams& params) {
  std::vector<std::vector<double>> data;
  data.reserve(series.size());
  for (const auto& s : series) data.push_back(s.values);
  ClusterResult r = dtw_kmeans(std::span<const std::vector<double>>(data), params);
  for (const auto& s : series) r.labels.push_back(s.label);
  return r;
}

// ---------------------------------------------------------------------------
// Elbow

struct KneeResult {
  std::size_t k = 0;
  bool degenerate = false;  // no interior knee (straight curve); k is the smallest
};

/// Point of the curve farthest from the chord joining its endpoints.
inline KneeResult knee_point(std::span<const std::size_t> ks, std::span<const double> values) {
  if (ks.size() != values.size()) throw ValidationError("knee_point: length mismatch");
  if (ks.size() < 3) throw ValidationError("elbow selection needs at least 3 points");
  const double x0 = static_cast<double>(ks.front()), y0 = values.front();
  const double x1 = static_cast<double>(ks.back()), y1 = values.back();
  const double dx = x1 - x0, dy = y1 - y0;
  const double chord = std::hypot(dx, dy);
  KneeResult out{ks.front(), true};
  if (chord == 0.0) return out;
  double best = 0.0;
  for (std::size_t i = 1; i + 1 < ks.size(); ++i) {
    const double x = static_cast<double>(ks[i]);
    const double d = std::abs(dy * (x - x0) - dx * (values[i] - y0)) / chord;
    if (d > best) {
      best = d;
      out.k = ks[i];
    }
  }
  double scale = 0.0;
  for (double v : values) scale = std::max(scale, std::abs(v));
  if (best <= 1e-12 * std::max({scale, std::abs(dx), 1.0})) {
    out.k = ks.front();
    return out;
  }
  out.degenerate = false;
  return out;
}

struct ElbowResult {
  std::size_t chosen_k = 0;
  bool degenerate = false;
  std::vector<std::size_t> ks;
  std::vector<double> inertia;
  std::vector<ClusterResult> runs;  // one per k

  const ClusterResult& chosen() const {
    for (const auto& r : runs) {
      if (r.k == chosen_k) return r;
    }
    throw ValidationError("chosen k has no clustering run");
  }
};

/// Clusters at every k in [k_min, k_max] with the same seed and picks the knee.
inline ElbowResult elbow_select(std::span<const NodeSeries> series, std::size_t k_min, std::size_t k_max,
                                const KMeansParams& base = {}) {
  if (k_min < 1 || k_max > series.size() || k_min > k_max) {
    throw ValidationError("k range [" + std::to_string(k_min) + ", " + std::to_string(k_max) +
                          "] must lie within [1, " + std::to_string(series.size()) + "]");
  }
  if (k_max - k_min + 1 < 3) throw ValidationError("elbow selection needs at least 3 values of k");
  ElbowResult out;
  for (std::size_t k = k_min; k <= k_max; ++k) {
    KMeansParams p = base;
    p.k = k;
    out.runs.push_back(dtw_kmeans(series, p));
    out.ks.push_back(k);
    out.inertia.push_back(out.runs.back().inertia);
  }
  const auto knee = knee_point(out.ks, out.inertia);
  out.chosen_k = knee.k;
  out.degenerate = knee.degenerate;
  return out;
}

// ---------------------------------------------------------------------------
// Pair comparison

struct PairComparison {
  std::string district;
  std::string product;
  std::vector<double> series_district;
  std::vector<double> series_product;
  std::vector<double> series_sum;
  std::vector<double> default_rate_series;  // 0 where the pair has no loans
};

inline PairComparison pair_comparison(std::span<const LoanRecord> records, const SequenceResult& seq,
                                      const std::string& district, const std::string& product) {
  const bool occurs = std::any_of(records.begin(), records.end(), [&](const LoanRecord& r) {
    return r.district == district && r.product == product;
  });
  if (!occurs) {
    throw ValidationError("pair [" + district + ", " + product + "] does not occur in the records");
  }
  const NodeSeries* sd = seq.find_series("district", district);
  const NodeSeries* sp = seq.find_series("product", product);
  if (sd == nullptr || sp == nullptr) {
    throw ValidationError("pair [" + district + ", " + product + "] has no score series");
  }
  PairComparison out;
  out.district = district;
  out.product = product;
  out.series_district = sd->values;
  out.series_product = sp->values;
  for (std::size_t w = 0; w < seq.windows.size(); ++w) {
    out.series_sum.push_back(sd->values[w] + sp->values[w]);
    RateFilter f;
    f.district = district;
    f.product = product;
    f.first_month = seq.windows[w].window.first;
    f.last_month = seq.windows[w].window.last;
    out.default_rate_series.push_back(default_rate(records, f).rate);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Export

/// Columns: label,node_kind,cluster_id.
inline void write_clusters_csv(std::ostream& os, const ClusterResult& r, const std::string& node_kind,
                               bool header = true) {
  if (header) os << "label,node_kind,cluster_id\n";
  for (std::size_t i = 0; i < r.labels.size(); ++i) {
    os << csv::join(r.labels[i], node_kind) << ',' << r.assignments[i] << '\n';
  }
}

/// Columns: k,inertia.
inline void write_inertia_csv(std::ostream& os, std::span<const std::size_t> ks,
                              std::span<const double> inertia) {
  os << "k,inertia\n";
  for (std::size_t i = 0; i < ks.size(); ++i) {
    os << ks[i] << ',' << csv::format_number(inertia[i]) << '\n';
  }
}

/// Columns: window_index,score_district,score_product,score_sum,default_rate.
inline void write_pair_csv(std::ostream& os, const PairComparison& p) {
  os << "window_index,score_district,score_product,score_sum,default_rate\n";
  for (std::size_t w = 0; w < p.series_sum.size(); ++w) {
    os << w << ',' << csv::format_number(p.series_district[w]) << ','
       << csv::format_number(p.series_product[w]) << ',' << csv::format_number(p.series_sum[w])
       << ',' << csv::format_number(p.default_rate_series[w]) << '\n';
  }
}

}  // namespace mlrisk
