#pragma once

// Sliding monthly windows over a record set, one personalized PageRank solve
// per window, and the per-label score series that result.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "mlrisk/csv.hpp"
#include "mlrisk/error.hpp"
#include "mlrisk/ingest.hpp"
#include "mlrisk/netmodel.hpp"
#include "mlrisk/pagerank.hpp"

namespace mlrisk {

struct WindowSpec {
  int window_months = 60;
  int step_months = 1;
  // Span bounds (inclusive). Unset bounds come from the records.
  std::optional<YearMonth> start_month;
  std::optional<YearMonth> end_month;
};

/// Calendar months [first, last], both inclusive.
struct Window {
  std::size_t index = 0;
  YearMonth first;
  YearMonth last;

  bool contains(YearMonth m) const noexcept { return m >= first && m <= last; }
};

inline std::vector<Window> enumerate_windows(YearMonth start, YearMonth end, const WindowSpec& spec) {
  if (spec.window_months < 1) throw ValidationError("window_months must be >= 1");
  if (spec.step_months < 1) throw ValidationError("step_months must be >= 1");
  const int span = end.months_since(start) + 1;
  if (span < spec.window_months) {
    throw ValidationError("record span of " + std::to_string(span) +
                          " months is shorter than the " + std::to_string(spec.window_months) +
                          "-month window");
  }
  const int count = (span - spec.window_months) / spec.step_months + 1;
  std::vector<Window> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int w = 0; w < count; ++w) {
    const YearMonth first = start.plus_months(w * spec.step_months);
    out.push_back({static_cast<std::size_t>(w), first, first.plus_months(spec.window_months - 1)});
  }
  return out;
}

inline std::vector<Window> enumerate_windows(std::span<const LoanRecord> records, const WindowSpec& spec) {
  if (records.empty() && !(spec.start_month && spec.end_month)) {
    throw ValidationError("cannot derive a window span from zero records");
  }
  YearMonth lo, hi;
  if (!records.empty()) {
    auto [mn, mx] = std::minmax_element(records.begin(), records.end(),
                                        [](const auto& a, const auto& b) {
                                          return a.grant_month < b.grant_month;
                                        });
    lo = mn->grant_month;
    hi = mx->grant_month;
  }
  return enumerate_windows(spec.start_month.value_or(lo), spec.end_month.value_or(hi), spec);
}

enum class WindowStatus { solved, skipped_no_defaulters };

inline const char* to_string(WindowStatus s) {
  return s == WindowStatus::solved ? "solved" : "skipped_no_defaulters";
}

struct WindowOutcome {
  Window window;
  std::size_t n_records = 0;
  std::size_t n_defaulters = 0;
  WindowStatus status = WindowStatus::solved;
  std::optional<PageRankResult> result;
  std::shared_ptr<const MultilayerNetwork> network;  // only with keep_networks
};

/// Score trajectory of one specific node (0 where the label is absent or
/// the window was skipped).
struct NodeSeries {
  std::size_t layer = 0;
  std::string node_kind;  // layer name, e.g. "district" or "product"
  std::string label;
  std::vector<double> values;
};

struct SequenceOptions {
  std::size_t jobs = 1;  // solves run in parallel across windows only
  std::vector<LayerSpec> layers = default_layers();
  bool keep_networks = false;
};

struct SequenceResult {
  std::vector<WindowOutcome> windows;
  std::vector<NodeSeries> series;
  std::vector<std::string> layer_names;

  const NodeSeries* find_series(std::string_view node_kind, std::string_view label) const {
    for (const auto& s : series) {
      if (s.node_kind == node_kind && s.label == label) return &s;
    }
    return nullptr;
  }

  std::vector<NodeSeries> series_of(std::string_view node_kind) const {
    std::vector<NodeSeries> out;
    for (const auto& s : series) {
      if (s.node_kind == node_kind) out.push_back(s);
    }
    return out;
  }

  bool all_converged() const {
    return std::all_of(windows.begin(), windows.end(), [](const WindowOutcome& w) {
      return !w.result || w.result->converged;
    });
  }
};

/// Builds and solves a single window. Loans granted in the window are the
/// common nodes; the defaulted ones are the influence set.
inline WindowOutcome solve_window(std::span<const LoanRecord> records, const Window& window,
                                  const PageRankParams& params, std::span<const LayerSpec> layers,
                                  bool keep_network) {
  std::vector<LoanRecord> in_window;
  for (const auto& r : records) {
    if (window.contains(r.grant_month)) in_window.push_back(r);
  }
  WindowOutcome out;
  out.window = window;
  out.n_records = in_window.size();
  if (in_window.empty()) {
    throw ValidationError("window " + std::to_string(window.index) + " (" +
                          window.first.to_string() + ".." + window.last.to_string() +
                          ") contains no records");
  }
  InfluenceSpec spec;
  spec.description = "defaulted loans in window " + std::to_string(window.index);
  for (std::size_t i = 0; i < in_window.size(); ++i) {
    if (in_window[i].defaulted) spec.nodes.push_back(i);
  }
  out.n_defaulters = spec.nodes.size();
  auto net = std::make_shared<const MultilayerNetwork>(build_network(in_window, layers));
  if (spec.nodes.empty()) {
    out.status = WindowStatus::skipped_no_defaulters;
  } else {
    out.result = personalized_pagerank(*net, spec, params);
  }
  if (keep_network || out.result) out.network = std::move(net);
  return out;
}

inline SequenceResult run_sequence(std::span<const LoanRecord> records, const WindowSpec& wspec,
                                   const PageRankParams& params, const SequenceOptions& opts = {}) {
  params.validate();
  if (opts.layers.empty()) throw ValidationError("at least one layer selector is required");
  const auto windows = enumerate_windows(records, wspec);

  SequenceResult out;
  out.windows.resize(windows.size());
  std::vector<std::exception_ptr> errors(windows.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t w = next++; w < windows.size(); w = next++) {
      try {
        out.windows[w] = solve_window(records, windows[w], params, opts.layers, true);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    }
  };
  const std::size_t jobs = std::clamp<std::size_t>(opts.jobs, 1, std::max<std::size_t>(1, windows.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  // Series cover every label seen anywhere in the records, in
  // first-appearance order per layer.
  for (const auto& l : opts.layers) out.layer_names.push_back(l.name);
  std::vector<std::unordered_map<std::string, std::size_t>> slot(opts.layers.size());
  for (std::size_t a = 0; a < opts.layers.size(); ++a) {
    for (const auto& r : records) {
      const std::string label(opts.layers[a].select(r));
      if (slot[a].try_emplace(label, out.series.size()).second) {
        out.series.push_back({a, opts.layers[a].name, label, std::vector<double>(windows.size(), 0.0)});
      }
    }
  }
  for (auto& wo : out.windows) {
    if (wo.result) {
      const auto& net = *wo.network;
      for (std::size_t a = 0; a < net.n_layers(); ++a) {
        const auto [first, last] = net.specific_range(a);
        for (std::size_t i = first; i < last; ++i) {
          const auto s = slot[a].at(net.node(i).label);
          out.series[s].values[wo.window.index] = wo.result->node_scores[i];
        }
      }
    }
    if (!opts.keep_networks) wo.network.reset();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Export

/// Long format: window_index,window_start,node_kind,label,score.
inline void write_series_csv(std::ostream& os, const SequenceResult& seq) {
  os << "window_index,window_start,node_kind,label,score\n";
  for (const auto& s : seq.series) {
    for (std::size_t w = 0; w < s.values.size(); ++w) {
      os << w << ',' << seq.windows[w].window.first.to_string() << ','
         << csv::join(s.node_kind, s.label) << ',' << csv::format_number(s.values[w]) << '\n';
    }
  }
}

/// Inverse of write_series_csv. Series keep first-appearance order; layers
/// are numbered by the first appearance of their node_kind.
inline std::vector<NodeSeries> parse_series_csv(std::istream& in, const std::string& source = "<stream>") {
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  std::vector<NodeSeries> out;
  std::map<std::pair<std::string, std::string>, std::size_t> index;
  std::vector<std::string> kinds;
  std::size_t n_windows = 0;
  std::vector<std::vector<std::pair<std::size_t, double>>> points;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header) {
      if (line != "window_index,window_start,node_kind,label,score") {
        throw ValidationError(source + ":" + std::to_string(line_no) + ": unexpected series header");
      }
      header = true;
      continue;
    }
    const auto f = csv::split_line(line, line_no);
    if (f.size() != 5) {
      throw ValidationError(source + ":" + std::to_string(line_no) + ": expected 5 fields");
    }
    std::size_t w = 0;
    double score = 0.0;
    try {
      std::size_t pos = 0;
      w = std::stoul(f[0], &pos);
      if (pos != f[0].size()) throw std::invalid_argument("trailing");
      score = std::stod(f[4], &pos);
      if (pos != f[4].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ValidationError(source + ":" + std::to_string(line_no) + ": bad number");
    }
    auto key = std::make_pair(f[2], f[3]);
    auto [it, inserted] = index.try_emplace(key, out.size());
    if (inserted) {
      auto k = std::find(kinds.begin(), kinds.end(), f[2]);
      if (k == kinds.end()) k = kinds.insert(kinds.end(), f[2]);
      out.push_back({static_cast<std::size_t>(k - kinds.begin()), f[2], f[3], {}});
      points.emplace_back();
    }
    points[it->second].emplace_back(w, score);
    n_windows = std::max(n_windows, w + 1);
  }
  if (!header) throw ValidationError(source + ": missing header");
  for (std::size_t s = 0; s < out.size(); ++s) {
    out[s].values.assign(n_windows, 0.0);
    for (const auto& [w, v] : points[s]) out[s].values[w] = v;
  }
  return out;
}

inline nlohmann::json window_diagnostics(const WindowOutcome& w) {
  nlohmann::json j{{"index", w.window.index},
                   {"first_month", w.window.first.to_string()},
                   {"last_month", w.window.last.to_string()},
                   {"records", w.n_records},
                   {"defaulters", w.n_defaulters},
                   {"status", to_string(w.status)}};
  if (w.result) {
    j["iterations"] = w.result->iterations;
    j["final_residual"] = w.result->final_residual;
    j["converged"] = w.result->converged;
    j["score_total"] = w.result->total();
  }
  return j;
}

inline nlohmann::json sequence_manifest(const SequenceResult& seq, const WindowSpec& wspec,
                                        const PageRankParams& params) {
  nlohmann::json windows = nlohmann::json::array();
  nlohmann::json skipped = nlohmann::json::array();
  for (const auto& w : seq.windows) {
    windows.push_back(window_diagnostics(w));
    if (w.status != WindowStatus::solved) skipped.push_back(w.window.index);
  }
  nlohmann::json spec{{"window_months", wspec.window_months}, {"step_months", wspec.step_months}};
  if (wspec.start_month) spec["start_month"] = wspec.start_month->to_string();
  if (wspec.end_month) spec["end_month"] = wspec.end_month->to_string();
  return {{"window_spec", spec},
          {"pagerank", {{"restart", params.restart},
                        {"tolerance", params.tolerance},
                        {"max_iterations", params.max_iterations}}},
          {"layers", seq.layer_names},
          {"windows", windows},
          {"skipped_windows", skipped}};
}

}  // namespace mlrisk
