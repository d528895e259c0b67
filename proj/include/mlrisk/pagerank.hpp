#pragma once

// Personalized multilayer PageRank.
//
// The walk follows the column-stochastic supra transition matrix T with
// probability r and teleports to the restart distribution v otherwise:
//
//   p <- r T p + r (mass on dangling columns) v + (1 - r) v
//
// Columns with no outgoing mass (specific nodes seen from a foreign layer)
// send their mass back through v so every iterate stays a distribution.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "mlrisk/csv.hpp"
#include "mlrisk/error.hpp"
#include "mlrisk/netmodel.hpp"
#include "mlrisk/spmat.hpp"

namespace mlrisk {

/// Common nodes where teleports land (the defaulted loans).
struct InfluenceSpec {
  std::vector<std::size_t> nodes;
  std::string description;
};

/// Teleport uniformly over every (node, layer) copy.
struct UniformTeleport {};

using Teleport = std::variant<UniformTeleport, InfluenceSpec>;

struct PageRankParams {
  double restart = 0.85;  // probability of following an edge
  double tolerance = 1e-9;  // L1 change between iterates
  std::size_t max_iterations = 1000;

  void validate() const {
    if (!(restart > 0.0 && restart < 1.0)) {
      throw ValidationError("restart probability must lie strictly between 0 and 1");
    }
    if (!(tolerance > 0.0) || !std::isfinite(tolerance)) {
      throw ValidationError("tolerance must be positive");
    }
    if (max_iterations == 0) throw ValidationError("max_iterations must be >= 1");
  }
};

struct StationaryResult {
  std::vector<double> distribution;
  std::size_t iterations = 0;
  double final_residual = 0.0;
  bool converged = false;
};

/// Power iteration from p0 = teleport on a column-normalized operator.
/// The teleport vector must be a probability distribution.
inline StationaryResult solve_stationary(const NormalizedMatrix& transition,
                                         std::span<const double> teleport,
                                         const PageRankParams& params) {
  params.validate();
  const auto& T = transition.matrix;
  const std::size_t n = T.n_cols();
  if (T.n_rows() != n) throw ValidationError("transition matrix must be square");
  if (teleport.size() != n) throw ValidationError("teleport vector length mismatch");
  double mass = 0.0;
  for (double x : teleport) {
    if (!(x >= 0.0) || !std::isfinite(x)) throw ValidationError("teleport entries must be >= 0");
    mass += x;
  }
  if (std::abs(mass - 1.0) > 1e-12) throw ValidationError("teleport vector must sum to 1");

  const bool redistribute = transition.policy == DanglingPolicy::uniform_restart_flag;
  std::vector<std::size_t> dangling;
  for (std::size_t k = 0; k < n; ++k) {
    if (transition.dangling[k]) dangling.push_back(k);
  }

  const double r = params.restart;
  StationaryResult out;
  std::vector<double> p(teleport.begin(), teleport.end());
  std::vector<double> walked;
  std::vector<double> next(n);
  for (std::size_t it = 1; it <= params.max_iterations; ++it) {
    T.multiply(p, walked);
    double leaked = 0.0;
    if (redistribute) {
      for (std::size_t k : dangling) leaked += p[k];
    }
    const double jump = r * leaked + (1.0 - r);
    double residual = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      next[k] = r * walked[k] + jump * teleport[k];
      residual += std::abs(next[k] - p[k]);
    }
    p.swap(next);
    out.iterations = it;
    out.final_residual = residual;
    if (residual < params.tolerance) {
      out.converged = true;
      break;
    }
  }
  out.distribution = std::move(p);
  return out;
}

/// Restart distribution implied by the influence matrix: with ones on the
/// diagonal positions of every influence node in all L x L blocks, each copy
/// (i, a) with i in the influence set receives 1 / (|V_I| L).
inline std::vector<double> influence_vector(const MultilayerNetwork& net, const InfluenceSpec& spec) {
  if (spec.nodes.empty()) throw ValidationError("influence set is empty");
  std::set<std::size_t> unique(spec.nodes.begin(), spec.nodes.end());
  for (std::size_t i : unique) {
    if (i >= net.n_common()) {
      throw ValidationError("influence node " + std::to_string(i) + " is not a common node");
    }
  }
  const std::size_t L = net.n_layers();
  const double value = 1.0 / static_cast<double>(unique.size() * L);
  std::vector<double> v(net.flat_size(), 0.0);
  for (std::size_t i : unique) {
    for (std::size_t a = 0; a < L; ++a) v[net.flat_index(i, a)] = value;
  }
  return v;
}

inline std::vector<double> uniform_teleport(const MultilayerNetwork& net) {
  return std::vector<double>(net.flat_size(), 1.0 / static_cast<double>(net.flat_size()));
}

inline std::vector<double> teleport_vector(const MultilayerNetwork& net, const Teleport& teleport) {
  if (const auto* spec = std::get_if<InfluenceSpec>(&teleport)) return influence_vector(net, *spec);
  return uniform_teleport(net);
}

struct PageRankResult {
  std::size_t n_nodes = 0;
  std::size_t n_layers = 0;
  std::vector<double> per_layer_scores;  // row-major n_nodes x n_layers
  std::vector<double> node_scores;       // sum over layers
  std::size_t iterations = 0;
  double final_residual = 0.0;
  bool converged = false;

  double layer_score(std::size_t node, std::size_t layer) const {
    return per_layer_scores.at(node * n_layers + layer);
  }
  double total() const {
    double s = 0.0;
    for (double x : node_scores) s += x;
    return s;
  }
};

inline PageRankResult to_pagerank_result(const MultilayerNetwork& net, StationaryResult&& s) {
  const std::size_t N = net.n_total();
  const std::size_t L = net.n_layers();
  PageRankResult out;
  out.n_nodes = N;
  out.n_layers = L;
  out.iterations = s.iterations;
  out.final_residual = s.final_residual;
  out.converged = s.converged;
  out.per_layer_scores.resize(N * L);
  out.node_scores.assign(N, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t a = 0; a < L; ++a) {
      const double x = s.distribution[i + a * N];
      out.per_layer_scores[i * L + a] = x;
      out.node_scores[i] += x;
    }
  }
  return out;
}

/// Non-convergence is reported through `converged`, not thrown.
inline PageRankResult personalized_pagerank(const MultilayerNetwork& net, const Teleport& teleport,
                                            const PageRankParams& params = {}) {
  params.validate();
  const auto v = teleport_vector(net, teleport);
  const auto T = column_normalize(supra_adjacency(net), DanglingPolicy::uniform_restart_flag);
  return to_pagerank_result(net, solve_stationary(T, v, params));
}

// ---------------------------------------------------------------------------
// Export

/// Home-layer name for specific nodes, "common" otherwise.
inline std::string node_kind_label(const MultilayerNetwork& net, const NodeRef& n) {
  return n.kind == NodeKind::common ? std::string("common") : net.layer_names()[n.layer];
}

/// Columns: node_label,node_kind,layer_or_sum,score. One row per (node,
/// layer) followed by the node's "sum" row.
inline void write_scores_csv(std::ostream& os, const MultilayerNetwork& net, const PageRankResult& res) {
  os << "node_label,node_kind,layer_or_sum,score\n";
  for (const auto& n : net.nodes()) {
    const std::string kind = node_kind_label(net, n);
    for (std::size_t a = 0; a < net.n_layers(); ++a) {
      os << csv::join(n.label, kind, net.layer_names()[a]) << ','
         << csv::format_number(res.layer_score(n.index, a)) << '\n';
    }
    os << csv::join(n.label, kind, std::string("sum")) << ','
       << csv::format_number(res.node_scores[n.index]) << '\n';
  }
}

inline nlohmann::json scores_json(const MultilayerNetwork& net, const PageRankResult& res) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : net.nodes()) {
    nlohmann::json layers = nlohmann::json::object();
    for (std::size_t a = 0; a < net.n_layers(); ++a) {
      layers[net.layer_names()[a]] = res.layer_score(n.index, a);
    }
    nodes.push_back({{"label", n.label},
                     {"kind", node_kind_label(net, n)},
                     {"layers", layers},
                     {"score", res.node_scores[n.index]}});
  }
  return {{"iterations", res.iterations},
          {"final_residual", res.final_residual},
          {"converged", res.converged},
          {"nodes", nodes}};
}

}  // namespace mlrisk
