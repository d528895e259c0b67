#include <gtest/gtest.h>

#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "mlrisk/pagerank.hpp"
#include "test_support.hpp"

using namespace mlrisk;

namespace {
std::vector<double> flat_of(const MultilayerNetwork& net, const PageRankResult& r) {
  std::vector<double> p(net.flat_size());
  for (std::size_t i = 0; i < net.n_total(); ++i) {
    for (std::size_t a = 0; a < net.n_layers(); ++a) p[net.flat_index(i, a)] = r.layer_score(i, a);
  }
  return p;
}

std::vector<std::size_t> defaulted(const std::vector<LoanRecord>& r) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (r[i].defaulted) out.push_back(i);
  }
  return out;
}
}  // namespace

TEST(InfluenceVector, ToyTwoInfluenceNodes) {
  auto records = oracle::toy_records();
  auto net = build_network(records);
  auto v = influence_vector(net, {defaulted(records), "X"});
  ASSERT_EQ(v.size(), 24u);
  for (std::size_t k = 0; k < v.size(); ++k) {
    const bool marked = k == 1 || k == 5 || k == 13 || k == 17;
    EXPECT_EQ(v[k], marked ? 0.25 : 0.0) << k;
  }
}

TEST(InfluenceVector, AllCommonNodesIsUniformOverCommonCopies) {
  auto net = build_network(oracle::toy_records());
  auto v = influence_vector(net, {{0, 1, 2, 3, 4, 5, 6}, ""});
  for (std::size_t k = 0; k < v.size(); ++k) {
    EXPECT_DOUBLE_EQ(v[k], net.unflatten(k).node < 7 ? 1.0 / 14.0 : 0.0);
  }
}

TEST(InfluenceVector, RandomMatchesDenseInfluenceMatrix) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 30; ++trial) {
    auto net = oracle::random_network(rng, 2 + trial % 2, 8, 4);
    auto vi = oracle::random_influence(rng, net.n_common());
    auto v = influence_vector(net, {vi, ""});
    auto oracle = oracle::dense_influence(net, vi);
    for (std::size_t k = 0; k < v.size(); ++k) EXPECT_NEAR(v[k], oracle[k], 1e-15);
  }
}

TEST(InfluenceVector, Errors) {
  auto net = build_network(oracle::toy_records());
  EXPECT_THROW(influence_vector(net, {{}, ""}), ValidationError);
  EXPECT_THROW(influence_vector(net, {{7}, ""}), ValidationError);  // a district node
}

TEST(PageRank, SymmetricTwoNodeGraph) {
  auto net = MultilayerNetwork::from_parts({"l"}, {"a"}, {{"b"}}, {{{0, 1, 1.0}}});
  auto r = personalized_pagerank(net, UniformTeleport{}, {});
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.node_scores[0], 0.5, 1e-12);
  EXPECT_NEAR(r.node_scores[1], 0.5, 1e-12);
}

TEST(PageRank, VanishingRestartReturnsTeleport) {
  std::mt19937_64 rng(1);
  auto net = oracle::random_network(rng, 2, 9, 3);
  auto vi = oracle::random_influence(rng, net.n_common());
  PageRankParams p;
  p.restart = 1e-12;
  auto r = personalized_pagerank(net, InfluenceSpec{vi, ""}, p);
  EXPECT_LE(oracle::l1(flat_of(net, r), influence_vector(net, {vi, ""})), 1e-9);
}

TEST(PageRank, ToyMatchesDenseOracle) {
  auto records = oracle::toy_records();
  auto net = build_network(records);
  auto vi = defaulted(records);
  auto r = personalized_pagerank(net, InfluenceSpec{vi, "X"}, {});
  ASSERT_TRUE(r.converged);
  auto oracle = oracle::dense_pagerank(net, oracle::dense_influence(net, vi), 0.85, 1e-12);
  EXPECT_LE(oracle::l1(flat_of(net, r), oracle), 1e-8);
}

TEST(PageRank, ToyMatchesCommittedOracleFile) {
  auto records = oracle::toy_records();
  auto net = build_network(records);
  auto r = personalized_pagerank(net, InfluenceSpec{defaulted(records), "X"}, {});
  std::ifstream in(oracle::data_dir() / "toy_oracle_scores.csv");
  ASSERT_TRUE(in);
  std::string line;
  std::getline(in, line);
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    auto f = csv::split_line(line, 0);
    ASSERT_EQ(f.size(), 4u);
    std::size_t node = net.n_total();
    for (const auto& n : net.nodes()) {
      if (n.label == f[0]) node = n.index;
    }
    ASSERT_LT(node, net.n_total()) << f[0];
    const double expected = std::stod(f[3]);
    const double got = f[2] == "sum" ? r.node_scores[node] : r.layer_score(node, *net.find_layer(f[2]));
    EXPECT_NEAR(got, expected, 1e-8) << line;
    ++rows;
  }
  EXPECT_EQ(rows, 36u);
}

TEST(PageRank, UniformTeleportMatchesDenseOracle) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    auto net = oracle::random_network(rng, 2, 10, 4);
    auto r = personalized_pagerank(net, UniformTeleport{}, {});
    auto oracle = oracle::dense_pagerank(net, uniform_teleport(net), 0.85);
    EXPECT_LE(oracle::l1(flat_of(net, r), oracle), 1e-8);
  }
}

TEST(PageRank, IteratesStayStochastic) {
  std::mt19937_64 rng(4);
  auto net = oracle::random_network(rng, 3, 10, 4);
  auto T = column_normalize(supra_adjacency(net));
  ASSERT_GT(T.dangling_count(), 0u);
  auto v = influence_vector(net, {oracle::random_influence(rng, net.n_common()), ""});
  for (std::size_t cap = 1; cap <= 40; ++cap) {
    PageRankParams p;
    p.max_iterations = cap;
    p.tolerance = 1e-300;
    auto s = solve_stationary(T, v, p);
    double sum = 0.0;
    for (double x : s.distribution) {
      EXPECT_GE(x, 0.0);
      sum += x;
    }
    EXPECT_NEAR(sum, 1.0, 1e-9) << cap;
  }
}

TEST(PageRank, ZeroColumnPolicyLeaksDanglingMass) {
  std::mt19937_64 rng(4);
  auto net = oracle::random_network(rng, 2, 6, 3);
  auto T = column_normalize(supra_adjacency(net), DanglingPolicy::zero_column);
  auto s = solve_stationary(T, uniform_teleport(net), {});
  double sum = 0.0;
  for (double x : s.distribution) sum += x;
  EXPECT_LT(sum, 1.0 - 1e-6);
}

TEST(PageRank, PositiveExactlyOnReachableCopies) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    auto net = oracle::random_network(rng, 2 + trial % 2, 8, 3);
    auto vi = oracle::random_influence(rng, net.n_common());
    auto r = personalized_pagerank(net, InfluenceSpec{vi, ""}, {});
    auto p = flat_of(net, r);
    // Breadth-first search along the walk's edges from every influence copy.
    auto M = oracle::dense_supra(net);
    std::vector<bool> seen(M.n, false);
    std::deque<std::size_t> queue;
    for (std::size_t i : vi) {
      for (std::size_t a = 0; a < net.n_layers(); ++a) {
        seen[net.flat_index(i, a)] = true;
        queue.push_back(net.flat_index(i, a));
      }
    }
    while (!queue.empty()) {
      const std::size_t c = queue.front();
      queue.pop_front();
      for (std::size_t row = 0; row < M.n; ++row) {
        if (M(row, c) > 0.0 && !seen[row]) {
          seen[row] = true;
          queue.push_back(row);
        }
      }
    }
    for (std::size_t k = 0; k < p.size(); ++k) {
      if (seen[k]) {
        EXPECT_GT(p[k], 0.0);
      } else {
        EXPECT_EQ(p[k], 0.0);
      }
    }
  }
}

TEST(PageRank, SingleLayerIntraWeightScaleInvariance) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    auto net = oracle::random_network(rng, 1, 12, 4, true);
    std::vector<std::string> common, specific;
    for (const auto& n : net.nodes()) (n.kind == NodeKind::common ? common : specific).push_back(n.label);
    std::vector<IntraEdge> scaled(net.edges(0).begin(), net.edges(0).end());
    for (auto& e : scaled) e.weight *= 7.5;
    auto net2 = MultilayerNetwork::from_parts(net.layer_names(), common, {specific}, {scaled});
    auto vi = oracle::random_influence(rng, net.n_common());
    auto a = personalized_pagerank(net, InfluenceSpec{vi, ""}, {});
    auto b = personalized_pagerank(net2, InfluenceSpec{vi, ""}, {});
    EXPECT_LE(oracle::l1(a.node_scores, b.node_scores), 1e-10);
  }
}

TEST(PageRank, WholeSupraMatrixScaleInvariance) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    auto net = oracle::random_network(rng, 2, 12, 4, true);
    auto M = supra_adjacency(net);
    auto v = influence_vector(net, {oracle::random_influence(rng, net.n_common()), ""});
    auto a = solve_stationary(column_normalize(M), v, {});
    auto b = solve_stationary(column_normalize(M.scaled(0.125 + trial)), v, {});
    EXPECT_LE(oracle::l1(a.distribution, b.distribution), 1e-10);
  }
}

TEST(PageRank, BitwiseDeterministic) {
  std::mt19937_64 rng(14);
  auto net = oracle::random_network(rng, 3, 10, 4, true);
  auto vi = oracle::random_influence(rng, net.n_common());
  auto a = personalized_pagerank(net, InfluenceSpec{vi, ""}, {});
  auto b = personalized_pagerank(net, InfluenceSpec{vi, ""}, {});
  EXPECT_EQ(a.per_layer_scores, b.per_layer_scores);
  EXPECT_EQ(a.node_scores, b.node_scores);
  EXPECT_EQ(a.iterations, b.iterations);
}

TEST(PageRank, NonConvergenceIsReported) {
  auto net = build_network(oracle::toy_records());
  PageRankParams p;
  p.max_iterations = 2;
  p.tolerance = 1e-15;
  auto r = personalized_pagerank(net, InfluenceSpec{{1}, ""}, p);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.iterations, 2u);
  EXPECT_GT(r.final_residual, 1e-15);
}

TEST(PageRank, ParameterValidation) {
  PageRankParams p;
  EXPECT_EQ(p.restart, 0.85);
  EXPECT_EQ(p.tolerance, 1e-9);
  EXPECT_EQ(p.max_iterations, 1000u);
  for (double r : {0.0, 1.0, -0.1, 1.5}) {
    p.restart = r;
    EXPECT_THROW(p.validate(), ValidationError);
  }
  p = {};
  p.tolerance = 0.0;
  EXPECT_THROW(p.validate(), ValidationError);
}

TEST(PageRankExport, CsvAndJson) {
  auto records = oracle::toy_records();
  auto net = build_network(records);
  auto r = personalized_pagerank(net, InfluenceSpec{defaulted(records), ""}, {});
  std::ostringstream os;
  write_scores_csv(os, net, r);
  const auto text = os.str();
  EXPECT_TRUE(text.starts_with("node_label,node_kind,layer_or_sum,score\nL1,common,district,"));
  EXPECT_NE(text.find("\nD1,district,sum,"), std::string::npos);
  auto j = scores_json(net, r);
  EXPECT_EQ(j["converged"], true);
  EXPECT_EQ(j["nodes"].size(), 12u);
  EXPECT_EQ(j["nodes"][9]["label"], "red");
}

// Regenerates the committed oracle table with the numpy script when numpy is
// available, so the fixture file cannot silently drift from its generator.
TEST(PageRankFixture, OracleScriptReproducesCommittedTable) {
  if (std::system("python3 -c 'import numpy' > /dev/null 2>&1") != 0) GTEST_SKIP() << "numpy not available";
  const auto out = std::filesystem::temp_directory_path() / "mlrisk_oracle_regen.csv";
  const std::string cmd = "python3 '" + std::string(MLRISK_ORACLE_SCRIPT) + "' '" +
                          (oracle::data_dir() / "toy_loans.csv").string() + "' '" + out.string() + "'";
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  auto rows = [](const std::filesystem::path& p) {
    std::ifstream in(p);
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) lines.push_back(line);
    return lines;
  };
  const auto fresh = rows(out), committed = rows(oracle::data_dir() / "toy_oracle_scores.csv");
  std::filesystem::remove(out);
  ASSERT_EQ(fresh.size(), committed.size());
  for (std::size_t i = 1; i < fresh.size(); ++i) {
    const auto a = csv::split_line(fresh[i], i), b = csv::split_line(committed[i], i);
    ASSERT_EQ(a.size(), 4u);
    EXPECT_EQ(std::vector<std::string>(a.begin(), a.begin() + 3), std::vector<std::string>(b.begin(), b.begin() + 3));
    EXPECT_NEAR(std::stod(a[3]), std::stod(b[3]), 1e-14);
  }
}
