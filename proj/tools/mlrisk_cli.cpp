// mlrisk: loan records -> windowed multilayer networks -> personalized
// PageRank scores -> series, clusters and pair comparisons.
//
// Every command writes into a private staging directory and moves the files
// into the output directory only after the whole command succeeded.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "mlrisk/mlrisk.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunConfig {
  std::string input;
  std::string out_dir;
  int window_months = 60;
  int step_months = 1;
  std::string start_month;
  std::string end_month;
  double restart = 0.85;
  double tol = 1e-9;
  std::size_t max_iter = 1000;
  std::size_t jobs = 1;
  std::uint64_t seed = 1;
};

/// Staging area that is promoted into the output directory on success and
/// removed otherwise.
class Staging {
 public:
  explicit Staging(fs::path out) : out_(std::move(out)) {
    std::error_code ec;
    fs::create_directories(out_, ec);
    if (ec) throw mlrisk::IoError("cannot create output directory '" + out_.string() + "'");
    dir_ = out_ / (".mlrisk-staging-" + std::to_string(::getpid()));
    fs::remove_all(dir_, ec);
    if (!fs::create_directories(dir_, ec) || ec) {
      throw mlrisk::IoError("cannot create staging directory '" + dir_.string() + "'");
    }
  }
  Staging(const Staging&) = delete;
  Staging& operator=(const Staging&) = delete;
  ~Staging() {
    std::error_code ec;
    fs::remove_all(dir_, ec);
  }

  fs::path path(const fs::path& rel) const {
    const fs::path p = dir_ / rel;
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
    return p;
  }

  void write(const fs::path& rel, const std::function<void(std::ostream&)>& fn) const {
    const fs::path p = path(rel);
    std::ofstream os(p, std::ios::binary);
    if (!os) throw mlrisk::IoError("cannot write '" + p.string() + "'");
    fn(os);
    os.flush();
    if (!os) throw mlrisk::IoError("write failed for '" + p.string() + "'");
  }

  void write_json(const fs::path& rel, const json& j) const {
    write(rel, [&](std::ostream& os) { os << j.dump(2) << '\n'; });
  }

  void promote() {
    for (const auto& entry : fs::directory_iterator(dir_)) {
      const fs::path target = out_ / entry.path().filename();
      std::error_code ec;
      fs::remove_all(target, ec);
      fs::rename(entry.path(), target, ec);
      if (ec) throw mlrisk::IoError("cannot move output into '" + target.string() + "'");
    }
  }

 private:
  fs::path out_;
  fs::path dir_;
};

mlrisk::WindowSpec window_spec(const RunConfig& c) {
  mlrisk::WindowSpec w;
  w.window_months = c.window_months;
  w.step_months = c.step_months;
  if (!c.start_month.empty()) w.start_month = mlrisk::YearMonth::parse(c.start_month);
  if (!c.end_month.empty()) w.end_month = mlrisk::YearMonth::parse(c.end_month);
  return w;
}

mlrisk::PageRankParams pagerank_params(const RunConfig& c) {
  mlrisk::PageRankParams p;
  p.restart = c.restart;
  p.tolerance = c.tol;
  p.max_iterations = c.max_iter;
  p.validate();
  return p;
}

std::string resolve_out_dir(const RunConfig& c) {
  if (!c.out_dir.empty()) return c.out_dir;
  if (const char* env = std::getenv("MLRISK_OUT_DIR"); env != nullptr && *env != '\0') return env;
  return "out";
}

json base_manifest(const std::string& command, const RunConfig& c) {
  return {{"tool", "mlrisk"},
          {"version", mlrisk::kVersion},
          {"command", command},
          {"input", c.input},
          {"seed", c.seed},
          {"jobs", c.jobs}};
}

struct Sequence {
  std::vector<mlrisk::LoanRecord> records;
  mlrisk::SequenceResult result;
  json manifest;
};

Sequence run_pipeline(const std::string& command, const RunConfig& c, bool keep_networks) {
  Sequence s;
  s.records = mlrisk::read_records(c.input);
  const auto wspec = window_spec(c);
  const auto params = pagerank_params(c);
  mlrisk::SequenceOptions opts;
  opts.jobs = c.jobs;
  opts.keep_networks = keep_networks;
  s.result = mlrisk::run_sequence(s.records, wspec, params, opts);
  s.manifest = base_manifest(command, c);
  s.manifest.update(mlrisk::sequence_manifest(s.result, wspec, params));
  if (!s.result.all_converged()) {
    std::string ids;
    for (const auto& w : s.result.windows) {
      if (w.result && !w.result->converged) ids += (ids.empty() ? "" : ",") + std::to_string(w.window.index);
    }
    throw mlrisk::ConvergenceError("power iteration did not converge within " +
                                   std::to_string(c.max_iter) + " iterations in windows " + ids);
  }
  return s;
}

std::string window_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "window_%04zu", index);
  return buf;
}

// ---------------------------------------------------------------------------

struct SynthOptions {
  std::string config;
  std::string output = "loans.csv";
  mlrisk::SynthConfig cfg;
  std::string start = "2000-01";
  std::vector<std::string> segments;
};

/// "product=3,district=1,multiplier=3,first=20,last=40"; any key but
/// multiplier/first/last may be omitted.
mlrisk::RiskySegment parse_segment(const std::string& text) {
  mlrisk::RiskySegment s;
  bool have_mult = false, have_first = false, have_last = false;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw mlrisk::ValidationError("segment item '" + item + "' lacks '='");
    const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
    try {
      if (key == "product") {
        s.product = std::stoul(value);
      } else if (key == "district") {
        s.district = std::stoul(value);
      } else if (key == "multiplier") {
        s.multiplier = std::stod(value);
        have_mult = true;
      } else if (key == "first") {
        s.first_month = std::stoi(value);
        have_first = true;
      } else if (key == "last") {
        s.last_month = std::stoi(value);
        have_last = true;
      } else {
        throw mlrisk::ValidationError("unknown segment key '" + key + "'");
      }
    } catch (const std::logic_error&) {
      throw mlrisk::ValidationError("bad value in segment item '" + item + "'");
    }
  }
  if (!have_mult || !have_first || !have_last) {
    throw mlrisk::ValidationError("segment '" + text + "' needs multiplier, first and last");
  }
  return s;
}

void cmd_synth(const RunConfig& c, SynthOptions o) {
  mlrisk::SynthConfig cfg;
  if (!o.config.empty()) {
    cfg = mlrisk::read_synth_config(o.config);
  } else {
    cfg = o.cfg;
    cfg.seed = c.seed;
    cfg.start_month = mlrisk::YearMonth::parse(o.start);
    for (const auto& s : o.segments) cfg.risky_segments.push_back(parse_segment(s));
  }
  const auto records = mlrisk::generate_synthetic(cfg);
  Staging st(resolve_out_dir(c));
  st.write(o.output, [&](std::ostream& os) { mlrisk::write_records(os, records); });
  json m = base_manifest("synth", c);
  m["synth_config"] = cfg;
  m["records"] = records.size();
  m["output"] = o.output;
  st.write_json("synth_manifest.json", m);
  st.promote();
}

void cmd_score(const RunConfig& c, bool with_json, bool dump_network) {
  auto s = run_pipeline("score", c, true);
  Staging st(resolve_out_dir(c));
  for (const auto& w : s.result.windows) {
    const std::string name = window_name(w.window.index);
    if (w.result) {
      st.write("scores/" + name + ".csv",
               [&](std::ostream& os) { mlrisk::write_scores_csv(os, *w.network, *w.result); });
      if (with_json) st.write_json("scores/" + name + ".json", mlrisk::scores_json(*w.network, *w.result));
    }
    if (dump_network && w.network) {
      st.write("networks/" + name + "_nodes.csv",
               [&](std::ostream& os) { mlrisk::write_node_table(os, *w.network); });
      st.write("networks/" + name + "_edges.csv",
               [&](std::ostream& os) { mlrisk::write_edge_list(os, *w.network); });
      st.write("networks/" + name + "_supra.mtx", [&](std::ostream& os) {
        mlrisk::write_matrix_market(os, mlrisk::supra_adjacency(*w.network));
      });
    }
  }
  st.write_json("manifest.json", s.manifest);
  st.promote();
}

void cmd_series(const RunConfig& c) {
  auto s = run_pipeline("series", c, false);
  Staging st(resolve_out_dir(c));
  st.write("series.csv", [&](std::ostream& os) { mlrisk::write_series_csv(os, s.result); });
  st.write_json("manifest.json", s.manifest);
  st.promote();
}

struct ClusterOptions {
  std::string series_file;
  std::optional<std::size_t> k;
  std::size_t k_min = 1;
  std::size_t k_max = 10;
  std::size_t max_iter = 100;
  std::vector<std::string> layers;
};

void cmd_cluster(const RunConfig& c, const ClusterOptions& o) {
  std::vector<mlrisk::NodeSeries> series;
  json manifest;
  if (!o.series_file.empty()) {
    std::ifstream in(o.series_file);
    if (!in) throw mlrisk::IoError("cannot open '" + o.series_file + "'");
    series = mlrisk::parse_series_csv(in, o.series_file);
    manifest = base_manifest("cluster", c);
    manifest["series_input"] = o.series_file;
  } else {
    auto s = run_pipeline("cluster", c, false);
    series = std::move(s.result.series);
    manifest = std::move(s.manifest);
  }

  std::vector<std::string> kinds = o.layers;
  if (kinds.empty()) {
    for (const auto& s : series) {
      if (std::find(kinds.begin(), kinds.end(), s.node_kind) == kinds.end()) kinds.push_back(s.node_kind);
    }
  }

  Staging st(resolve_out_dir(c));
  std::ostringstream clusters;
  clusters << "label,node_kind,cluster_id\n";
  json summary = json::object();
  for (const auto& kind : kinds) {
    std::vector<mlrisk::NodeSeries> group;
    for (const auto& s : series) {
      if (s.node_kind == kind) group.push_back(s);
    }
    if (group.empty()) throw mlrisk::ValidationError("no series of kind '" + kind + "'");
    mlrisk::KMeansParams kp;
    kp.seed = c.seed;
    kp.max_iterations = o.max_iter;
    mlrisk::ClusterResult chosen;
    std::vector<std::size_t> ks;
    std::vector<double> inertia;
    bool degenerate = false;
    if (o.k) {
      kp.k = *o.k;
      chosen = mlrisk::dtw_kmeans(group, kp);
      ks = {chosen.k};
      inertia = {chosen.inertia};
    } else {
      const std::size_t hi = std::min(o.k_max, group.size());
      auto elbow = mlrisk::elbow_select(group, o.k_min, hi, kp);
      chosen = elbow.chosen();
      ks = elbow.ks;
      inertia = elbow.inertia;
      degenerate = elbow.degenerate;
    }
    mlrisk::write_clusters_csv(clusters, chosen, kind, false);
    st.write("inertia_" + kind + ".csv",
             [&](std::ostream& os) { mlrisk::write_inertia_csv(os, ks, inertia); });
    summary[kind] = {{"chosen_k", chosen.k},
                     {"no_interior_knee", degenerate},
                     {"inertia", chosen.inertia},
                     {"iterations", chosen.iterations},
                     {"converged", chosen.converged},
                     {"series", group.size()}};
  }
  st.write("clusters.csv", [&](std::ostream& os) { os << clusters.str(); });
  manifest["clustering"] = summary;
  manifest["k_range"] = o.k ? json{*o.k, *o.k} : json{o.k_min, o.k_max};
  st.write_json("manifest.json", manifest);
  st.promote();
}

void cmd_compare(const RunConfig& c, const std::string& district, const std::string& product) {
  auto s = run_pipeline("compare", c, false);
  const auto pair = mlrisk::pair_comparison(s.records, s.result, district, product);
  Staging st(resolve_out_dir(c));
  st.write("compare.csv", [&](std::ostream& os) { mlrisk::write_pair_csv(os, pair); });
  s.manifest["pair"] = {{"district", district}, {"product", product}};
  st.write_json("manifest.json", s.manifest);
  st.promote();
}

std::string one_line(std::string s) {
  for (char& ch : s) {
    if (ch == '\n' || ch == '\r') ch = ' ';
  }
  std::string out;
  for (char ch : s) {
    if (ch == '"' || ch == '\\') out.push_back('\\');
    out.push_back(ch);
  }
  return out;
}

int report(mlrisk::ErrorKind kind, const std::string& msg) {
  std::cerr << "error kind=" << mlrisk::to_string(kind) << " message=\"" << one_line(msg) << "\"\n";
  return static_cast<int>(kind);
}

void add_pipeline_flags(CLI::App* cmd, RunConfig& c) {
  cmd->add_option("-i,--input", c.input, "Loan record CSV")->required();
  cmd->add_option("--window", c.window_months, "Window length in months")->capture_default_str();
  cmd->add_option("--step", c.step_months, "Window shift in months")->capture_default_str();
  cmd->add_option("--start", c.start_month, "First month of the span (YYYY-MM)");
  cmd->add_option("--end", c.end_month, "Last month of the span (YYYY-MM)");
  cmd->add_option("--restart", c.restart, "Probability of following an edge")->capture_default_str();
  cmd->add_option("--tol", c.tol, "L1 convergence tolerance")->capture_default_str();
  cmd->add_option("--max-iter", c.max_iter, "Power iteration cap")->capture_default_str();
  cmd->add_option("-j,--jobs", c.jobs, "Windows solved in parallel")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multilayer personalized PageRank credit-risk pipeline"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", mlrisk::kVersion);

  RunConfig cfg;
  app.add_option("-o,--out", cfg.out_dir, "Output directory (default $MLRISK_OUT_DIR or ./out)");
  app.add_option("--seed", cfg.seed, "Random seed")->capture_default_str();

  SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic loan dataset");
  synth_cmd->add_option("--config", synth.config, "Generator config JSON (overrides the flags below)");
  synth_cmd->add_option("--output", synth.output, "Dataset file name inside the output directory")
      ->capture_default_str();
  synth_cmd->add_option("--loans", synth.cfg.n_loans)->capture_default_str();
  synth_cmd->add_option("--products", synth.cfg.n_products)->capture_default_str();
  synth_cmd->add_option("--districts", synth.cfg.n_districts)->capture_default_str();
  synth_cmd->add_option("--span", synth.cfg.span_months, "Span in months")->capture_default_str();
  synth_cmd->add_option("--first-month", synth.start, "First grant month (YYYY-MM)")->capture_default_str();
  synth_cmd->add_option("--base-rate", synth.cfg.base_default_rate)->capture_default_str();
  synth_cmd->add_option("--segment", synth.segments,
                        "Risky segment: product=P,district=D,multiplier=M,first=F,last=L");

  auto* score_cmd = app.add_subcommand("score", "Per-window PageRank scores and manifest");
  add_pipeline_flags(score_cmd, cfg);
  bool score_json = false, dump_network = false;
  score_cmd->add_flag("--json", score_json, "Also write JSON score files with diagnostics");
  score_cmd->add_flag("--dump-network", dump_network, "Write node tables, edge lists and supra matrices");

  auto* series_cmd = app.add_subcommand("series", "Long-format score series per district/product");
  add_pipeline_flags(series_cmd, cfg);

  ClusterOptions copt;
  auto* cluster_cmd = app.add_subcommand("cluster", "DTW k-means clustering of the score series");
  cluster_cmd->add_option("-i,--input", cfg.input, "Loan record CSV");
  cluster_cmd->add_option("--series", copt.series_file, "Series CSV written by `series`");
  cluster_cmd->add_option("--window", cfg.window_months)->capture_default_str();
  cluster_cmd->add_option("--step", cfg.step_months)->capture_default_str();
  cluster_cmd->add_option("--start", cfg.start_month);
  cluster_cmd->add_option("--end", cfg.end_month);
  cluster_cmd->add_option("--restart", cfg.restart)->capture_default_str();
  cluster_cmd->add_option("--tol", cfg.tol)->capture_default_str();
  cluster_cmd->add_option("--max-iter", cfg.max_iter)->capture_default_str();
  cluster_cmd->add_option("-j,--jobs", cfg.jobs)->capture_default_str();
  cluster_cmd->add_option("-k,--k", copt.k, "Fixed number of clusters (skips the elbow search)");
  cluster_cmd->add_option("--k-min", copt.k_min)->capture_default_str();
  cluster_cmd->add_option("--k-max", copt.k_max)->capture_default_str();
  cluster_cmd->add_option("--kmeans-iter", copt.max_iter, "k-means iteration cap")->capture_default_str();
  cluster_cmd->add_option("--layer", copt.layers, "Restrict to these node kinds");

  std::string district, product;
  auto* compare_cmd = app.add_subcommand("compare", "Scores vs default rate for a [district, product] pair");
  add_pipeline_flags(compare_cmd, cfg);
  compare_cmd->add_option("--district", district)->required();
  compare_cmd->add_option("--product", product)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report(mlrisk::ErrorKind::validation, e.what());
  }

  try {
    if (*synth_cmd) {
      cmd_synth(cfg, synth);
    } else if (*score_cmd) {
      cmd_score(cfg, score_json, dump_network);
    } else if (*series_cmd) {
      cmd_series(cfg);
    } else if (*cluster_cmd) {
      if (cfg.input.empty() == copt.series_file.empty()) {
        throw mlrisk::ValidationError("cluster needs exactly one of --input or --series");
      }
      cmd_cluster(cfg, copt);
    } else if (*compare_cmd) {
      cmd_compare(cfg, district, product);
    }
  } catch (const mlrisk::Error& e) {
    return report(e.kind(), e.what());
  } catch (const fs::filesystem_error& e) {
    return report(mlrisk::ErrorKind::io, e.what());
  } catch (const std::exception& e) {
    return report(mlrisk::ErrorKind::validation, e.what());
  }
  return 0;
}
