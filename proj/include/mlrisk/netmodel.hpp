#pragma once

// Multilayer network of bipartite layers sharing a set of common nodes, and
// its flattening to a supra-adjacency matrix.
//
// Global node order: the N_c common nodes first, then the specific nodes of
// layer 0, layer 1, ... each in first-appearance order. In the flattened
// matrix node i of layer a sits at row/column i + a * N.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mlrisk/csv.hpp"
#include "mlrisk/error.hpp"
#include "mlrisk/ingest.hpp"
#include "mlrisk/spmat.hpp"

namespace mlrisk {

enum class NodeKind { common, specific };

inline const char* to_string(NodeKind k) { return k == NodeKind::common ? "common" : "specific"; }

inline constexpr std::size_t kNoLayer = std::numeric_limits<std::size_t>::max();

struct NodeRef {
  NodeKind kind = NodeKind::common;
  std::size_t layer = kNoLayer;  // set for specific nodes only
  std::string label;
  std::size_t index = 0;
};

struct IntraEdge {
  std::size_t common = 0;    // global index of the common endpoint
  std::size_t specific = 0;  // global index of the specific endpoint
  double weight = 1.0;
};

/// Position of a node copy in the flattened supra matrix.
struct NodeLayer {
  std::size_t node = 0;
  std::size_t layer = 0;
  friend bool operator==(const NodeLayer&, const NodeLayer&) = default;
};

class MultilayerNetwork {
 public:
  /// Assembles and validates a network. `specific_labels[a]` lists layer a's
  /// specific nodes in order; `edges[a]` uses global node indices.
  static MultilayerNetwork from_parts(std::vector<std::string> layer_names,
                                      std::vector<std::string> common_labels,
                                      std::vector<std::vector<std::string>> specific_labels,
                                      std::vector<std::vector<IntraEdge>> edges) {
    const std::size_t L = layer_names.size();
    if (L == 0) throw ValidationError("network needs at least one layer");
    if (specific_labels.size() != L || edges.size() != L) {
      throw ValidationError("per-layer inputs disagree on the number of layers");
    }
    if (common_labels.empty()) throw ValidationError("network needs at least one common node");

    MultilayerNetwork net;
    net.layer_names_ = std::move(layer_names);
    net.n_common_ = common_labels.size();

    std::unordered_map<std::string, std::size_t> common_seen;
    for (auto& label : common_labels) {
      const std::size_t idx = net.nodes_.size();
      if (!common_seen.emplace(label, idx).second) {
        throw ValidationError("duplicate common node label '" + label + "'");
      }
      net.nodes_.push_back({NodeKind::common, kNoLayer, std::move(label), idx});
    }
    net.layer_begin_.push_back(net.nodes_.size());
    net.specific_lookup_.resize(L);
    for (std::size_t a = 0; a < L; ++a) {
      for (auto& label : specific_labels[a]) {
        const std::size_t idx = net.nodes_.size();
        if (!net.specific_lookup_[a].emplace(label, idx).second) {
          throw ValidationError("duplicate specific label '" + label + "' in layer '" +
                                net.layer_names_[a] + "'");
        }
        net.nodes_.push_back({NodeKind::specific, a, std::move(label), idx});
      }
      net.layer_begin_.push_back(net.nodes_.size());
    }

    std::vector<std::size_t> degree(net.nodes_.size(), 0);
    for (std::size_t a = 0; a < L; ++a) {
      std::set<std::pair<std::size_t, std::size_t>> pairs;
      for (const auto& e : edges[a]) {
        if (e.common >= net.n_common_) {
          throw ValidationError("edge endpoint " + std::to_string(e.common) + " in layer '" +
                                net.layer_names_[a] + "' is not a common node");
        }
        if (e.specific < net.layer_begin_[a] || e.specific >= net.layer_begin_[a + 1]) {
          throw ValidationError("edge endpoint " + std::to_string(e.specific) +
                                " is not a specific node of layer '" + net.layer_names_[a] + "'");
        }
        if (!(e.weight > 0.0) || !std::isfinite(e.weight)) {
          throw ValidationError("edge weights must be positive and finite");
        }
        if (!pairs.emplace(e.common, e.specific).second) {
          throw ValidationError("duplicate edge in layer '" + net.layer_names_[a] + "'");
        }
        ++degree[e.specific];
      }
    }
    for (std::size_t i = net.n_common_; i < net.nodes_.size(); ++i) {
      if (degree[i] == 0) {
        throw ValidationError("specific node '" + net.nodes_[i].label + "' has no edges");
      }
    }
    net.edges_ = std::move(edges);
    return net;
  }

  std::size_t n_layers() const noexcept { return layer_names_.size(); }
  std::size_t n_common() const noexcept { return n_common_; }
  std::size_t n_total() const noexcept { return nodes_.size(); }
  std::size_t flat_size() const noexcept { return n_total() * n_layers(); }

  const std::vector<std::string>& layer_names() const noexcept { return layer_names_; }
  std::span<const NodeRef> nodes() const noexcept { return nodes_; }
  const NodeRef& node(std::size_t i) const { return nodes_.at(i); }
  std::span<const IntraEdge> edges(std::size_t layer) const { return edges_.at(layer); }

  std::size_t edge_count() const noexcept {
    std::size_t n = 0;
    for (const auto& e : edges_) n += e.size();
    return n;
  }

  /// Global index range [first, second) of layer `a`'s specific nodes.
  std::pair<std::size_t, std::size_t> specific_range(std::size_t layer) const {
    return {layer_begin_.at(layer), layer_begin_.at(layer + 1)};
  }

  std::optional<std::size_t> find_specific(std::size_t layer, std::string_view label) const {
    const auto& m = specific_lookup_.at(layer);
    auto it = m.find(std::string(label));
    if (it == m.end()) return std::nullopt;
    return it->second;
  }

  std::optional<std::size_t> find_layer(std::string_view name) const {
    for (std::size_t a = 0; a < layer_names_.size(); ++a) {
      if (layer_names_[a] == name) return a;
    }
    return std::nullopt;
  }

  std::size_t flat_index(std::size_t node, std::size_t layer) const {
    if (node >= n_total() || layer >= n_layers()) {
      throw ValidationError("(node, layer) out of range");
    }
    return node + layer * n_total();
  }

  NodeLayer unflatten(std::size_t flat) const {
    if (flat >= flat_size()) throw ValidationError("flat index out of range");
    return {flat % n_total(), flat / n_total()};
  }

 private:
  MultilayerNetwork() = default;

  std::vector<std::string> layer_names_;
  std::size_t n_common_ = 0;
  std::vector<NodeRef> nodes_;
  std::vector<std::size_t> layer_begin_;  // L + 1 boundaries of the specific blocks
  std::vector<std::unordered_map<std::string, std::size_t>> specific_lookup_;
  std::vector<std::vector<IntraEdge>> edges_;
};

/// Names a layer and the record attribute that defines its specific nodes.
struct LayerSpec {
  std::string name;
  std::function<std::string_view(const LoanRecord&)> select;
};

/// District layer first, product layer second.
inline std::vector<LayerSpec> default_layers() {
  return {
      {"district", [](const LoanRecord& r) -> std::string_view { return r.district; }},
      {"product", [](const LoanRecord& r) -> std::string_view { return r.product; }},
  };
}

/// One common node per record (in input order), one specific node per
/// distinct label per layer, one unit-weight edge per (record, layer).
inline MultilayerNetwork build_network(std::span<const LoanRecord> records,
                                       std::span<const LayerSpec> layers) {
  if (records.empty()) throw ValidationError("cannot build a network from zero records");
  if (layers.empty()) throw ValidationError("at least one layer selector is required");

  const std::size_t L = layers.size();
  std::vector<std::string> names;
  std::vector<std::string> common;
  common.reserve(records.size());
  for (const auto& r : records) common.push_back(r.loan_id);

  std::vector<std::vector<std::string>> specific(L);
  std::vector<std::vector<std::size_t>> local_of_record(L, std::vector<std::size_t>(records.size()));
  for (std::size_t a = 0; a < L; ++a) {
    names.push_back(layers[a].name);
    std::unordered_map<std::string_view, std::size_t> local;
    for (std::size_t i = 0; i < records.size(); ++i) {
      const std::string_view label = layers[a].select(records[i]);
      if (label.empty()) {
        throw ValidationError("record '" + records[i].loan_id + "' has no '" + layers[a].name +
                              "' attribute");
      }
      auto [it, inserted] = local.try_emplace(label, specific[a].size());
      if (inserted) specific[a].emplace_back(label);
      local_of_record[a][i] = it->second;
    }
  }

  std::vector<std::vector<IntraEdge>> edges(L);
  std::size_t offset = records.size();
  for (std::size_t a = 0; a < L; ++a) {
    edges[a].reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
      edges[a].push_back({i, offset + local_of_record[a][i], 1.0});
    }
    offset += specific[a].size();
  }
  return MultilayerNetwork::from_parts(std::move(names), std::move(common), std::move(specific),
                                       std::move(edges));
}

inline MultilayerNetwork build_network(std::span<const LoanRecord> records) {
  const auto layers = default_layers();
  return build_network(records, layers);
}

/// (N L) x (N L) symmetric supra adjacency: symmetrized bipartite layers on
/// the diagonal blocks, unit self-couplings of the common nodes between
/// every pair of layers.
inline SparseMatrix supra_adjacency(const MultilayerNetwork& net) {
  const std::size_t N = net.n_total();
  const std::size_t L = net.n_layers();
  std::vector<Triplet> t;
  t.reserve(2 * net.edge_count() + L * (L - 1) * net.n_common());
  for (std::size_t a = 0; a < L; ++a) {
    for (const auto& e : net.edges(a)) {
      t.push_back({e.common + a * N, e.specific + a * N, e.weight});
      t.push_back({e.specific + a * N, e.common + a * N, e.weight});
    }
  }
  for (std::size_t a = 0; a < L; ++a) {
    for (std::size_t b = 0; b < L; ++b) {
      if (a == b) continue;
      for (std::size_t i = 0; i < net.n_common(); ++i) t.push_back({i + a * N, i + b * N, 1.0});
    }
  }
  return SparseMatrix::from_triplets(N * L, N * L, t);
}

// ---------------------------------------------------------------------------
// Dumps

/// Columns: index,kind,layer,label. Common nodes leave `layer` empty.
inline void write_node_table(std::ostream& os, const MultilayerNetwork& net) {
  os << "index,kind,layer,label\n";
  for (const auto& n : net.nodes()) {
    const std::string layer = n.kind == NodeKind::specific ? net.layer_names()[n.layer] : "";
    os << n.index << ',' << to_string(n.kind) << ',' << csv::escape(layer) << ','
       << csv::escape(n.label) << '\n';
  }
}

/// Columns: layer,src_label,dst_label,weight with the common node as source.
inline void write_edge_list(std::ostream& os, const MultilayerNetwork& net) {
  os << "layer,src_label,dst_label,weight\n";
  for (std::size_t a = 0; a < net.n_layers(); ++a) {
    for (const auto& e : net.edges(a)) {
      os << csv::join(net.layer_names()[a], net.node(e.common).label, net.node(e.specific).label)
         << ',' << csv::format_number(e.weight) << '\n';
    }
  }
}

}  // namespace mlrisk
