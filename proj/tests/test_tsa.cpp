#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "mlrisk/tsa.hpp"
#include "test_support.hpp"

using namespace mlrisk;

namespace {
std::vector<double> random_series(std::mt19937_64& rng, std::size_t len) {
  std::uniform_real_distribution<double> v(-3.0, 3.0);
  std::vector<double> s(len);
  for (auto& x : s) x = v(rng);
  return s;
}

NodeSeries named(const std::string& label, std::vector<double> v) {
  return {0, "product", label, std::move(v)};
}
}  // namespace

TEST(Dtw, SpecExamples) {
  std::vector<double> a{3.0, -1.0, 2.5};
  EXPECT_EQ(dtw_distance(a, a), 0.0);
  EXPECT_EQ(dtw_distance(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 2, 3}), 0.0);
  EXPECT_EQ(dtw_distance(std::vector<double>{0, 0}, std::vector<double>{1, 1}), 2.0);
  EXPECT_THROW(dtw_distance(std::vector<double>{}, a), ValidationError);
}

TEST(Dtw, MatchesNaiveTableAndMetricProperties) {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<std::size_t> len(1, 12);
  for (int trial = 0; trial < 300; ++trial) {
    auto a = random_series(rng, len(rng));
    auto b = random_series(rng, len(rng));
    const double d = dtw_distance(a, b);
    EXPECT_EQ(d, oracle::naive_dtw(a, b));
    EXPECT_EQ(d, dtw_distance(b, a));
    EXPECT_GE(d, 0.0);
    if (a.size() == b.size()) {
      double diag = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) diag += std::abs(a[i] - b[i]);
      EXPECT_LE(d, diag);
    }
  }
}

TEST(Dtw, PathCostEqualsDistance) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    auto a = random_series(rng, 1 + trial % 9);
    auto b = random_series(rng, 1 + trial % 7);
    auto path = dtw_path(a, b);
    EXPECT_EQ(path.front(), (std::pair<std::size_t, std::size_t>{0, 0}));
    EXPECT_EQ(path.back(), (std::pair<std::size_t, std::size_t>{a.size() - 1, b.size() - 1}));
    double cost = 0.0;
    for (std::size_t k = 0; k < path.size(); ++k) {
      cost += std::abs(a[path[k].first] - b[path[k].second]);
      if (k > 0) {
        const auto di = path[k].first - path[k - 1].first;
        const auto dj = path[k].second - path[k - 1].second;
        EXPECT_LE(di, 1u);
        EXPECT_LE(dj, 1u);
        EXPECT_GE(di + dj, 1u);
      }
    }
    EXPECT_NEAR(cost, dtw_distance(a, b), 1e-12);
  }
}

TEST(Barycenter, CostNeverIncreases) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<double>> data;
    for (int i = 0; i < 6; ++i) data.push_back(random_series(rng, 10));
    std::vector<std::span<const double>> members(data.begin(), data.end());
    const double before = detail::total_dtw(data[0], members);
    auto b = dtw_barycenter(data[0], members, 10);
    EXPECT_LE(b.cost, before);
    EXPECT_NEAR(b.cost, detail::total_dtw(b.center, members), 1e-12);
  }
}

TEST(KMeans, SingleClusterIsTheBarycenter) {
  std::mt19937_64 rng(2);
  std::vector<NodeSeries> s;
  for (int i = 0; i < 7; ++i) s.push_back(named("s" + std::to_string(i), random_series(rng, 15)));
  KMeansParams p;
  p.k = 1;
  auto r = dtw_kmeans(s, p);
  for (auto a : r.assignments) EXPECT_EQ(a, 0u);
  double total = 0.0;
  for (const auto& x : s) total += dtw_distance(x.values, r.centroids[0]);
  EXPECT_NEAR(r.inertia, total, 1e-12);
}

TEST(KMeans, SeparatesConstantLevels) {
  std::vector<NodeSeries> s;
  for (int i = 0; i < 5; ++i) s.push_back(named("low" + std::to_string(i), std::vector<double>(20, 0.0 + 0.01 * i)));
  for (int i = 0; i < 5; ++i) s.push_back(named("high" + std::to_string(i), std::vector<double>(20, 10.0 - 0.01 * i)));
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    KMeansParams p;
    p.k = 2;
    p.seed = seed;
    auto r = dtw_kmeans(s, p);
    // The two ways to label a perfect split.
    bool split = true;
    for (int i = 0; i < 10; ++i) split &= r.assignments[i] == r.assignments[i < 5 ? 0 : 5];
    EXPECT_TRUE(split);
    EXPECT_NE(r.assignments[0], r.assignments[5]);
  }
}

TEST(KMeans, DeterministicForSeed) {
  std::mt19937_64 rng(3);
  std::vector<NodeSeries> s;
  for (int i = 0; i < 20; ++i) s.push_back(named("s" + std::to_string(i), random_series(rng, 25)));
  KMeansParams p;
  p.k = 4;
  p.seed = 42;
  const auto first = dtw_kmeans(s, p);
  for (int rep = 0; rep < 3; ++rep) EXPECT_EQ(dtw_kmeans(s, p), first);
}

TEST(KMeans, InertiaNonIncreasingAndFixpoint) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::vector<double>> data;
    for (int i = 0; i < 25; ++i) data.push_back(random_series(rng, 20));
    KMeansParams p;
    p.k = 2 + trial % 4;
    p.seed = static_cast<std::uint64_t>(trial);
    auto r = dtw_kmeans(std::span<const std::vector<double>>(data), p);
    for (std::size_t i = 1; i < r.inertia_history.size(); ++i) {
      EXPECT_LE(r.inertia_history[i], r.inertia_history[i - 1]);
    }
    if (!r.inertia_history.empty()) EXPECT_LE(r.inertia, r.inertia_history.back());
    ASSERT_TRUE(r.converged);
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double own = dtw_distance(data[i], r.centroids[r.assignments[i]]);
      for (const auto& c : r.centroids) EXPECT_LE(own, dtw_distance(data[i], c));
    }
  }
}

TEST(KMeans, IdenticalSeriesWithSeveralClusters) {
  std::vector<NodeSeries> s;
  for (int i = 0; i < 6; ++i) s.push_back(named("s" + std::to_string(i), {1.0, 2.0, 3.0}));
  KMeansParams p;
  p.k = 3;
  auto r = dtw_kmeans(s, p);
  std::vector<int> sizes(3, 0);
  for (auto a : r.assignments) ++sizes[a];
  for (int n : sizes) EXPECT_GT(n, 0);
  EXPECT_EQ(r.inertia, 0.0);
}

TEST(KMeans, InvalidInputs) {
  std::vector<NodeSeries> s{named("a", {1, 2}), named("b", {1, 2})};
  KMeansParams p;
  p.k = 3;
  EXPECT_THROW(dtw_kmeans(s, p), ValidationError);
  p.k = 0;
  EXPECT_THROW(dtw_kmeans(s, p), ValidationError);
  s.push_back(named("c", {1, 2, 3}));
  p.k = 2;
  EXPECT_THROW(dtw_kmeans(s, p), ValidationError);
}

TEST(Elbow, KneeOfReferenceCurve) {
  std::vector<std::size_t> ks{1, 2, 3, 4, 5, 6};
  std::vector<double> curve{100, 50, 20, 18, 17, 16};
  auto k = knee_point(ks, curve);
  EXPECT_EQ(k.k, 3u);
  EXPECT_FALSE(k.degenerate);
}

TEST(Elbow, LinearCurveHasNoKnee) {
  std::vector<std::size_t> ks{2, 3, 4, 5};
  std::vector<double> curve{40, 30, 20, 10};
  auto k = knee_point(ks, curve);
  EXPECT_EQ(k.k, 2u);
  EXPECT_TRUE(k.degenerate);
}

TEST(Elbow, ConvexDecreasingGivesInteriorK) {
  std::vector<std::size_t> ks;
  std::vector<double> curve;
  for (std::size_t k = 1; k <= 9; ++k) {
    ks.push_back(k);
    curve.push_back(100.0 / static_cast<double>(k * k) + 1.0);
  }
  auto k = knee_point(ks, curve);
  EXPECT_GT(k.k, 1u);
  EXPECT_LT(k.k, 9u);
}

TEST(Elbow, TooFewPoints) {
  std::vector<std::size_t> ks{1, 2};
  std::vector<double> curve{2, 1};
  EXPECT_THROW(knee_point(ks, curve), ValidationError);
  std::vector<NodeSeries> s{named("a", {1}), named("b", {2}), named("c", {3})};
  EXPECT_THROW(elbow_select(s, 1, 2), ValidationError);
  EXPECT_THROW(elbow_select(s, 1, 4), ValidationError);
}

TEST(Elbow, ThreeLevelGroups) {
  std::vector<NodeSeries> s;
  for (int g = 0; g < 3; ++g) {
    for (int i = 0; i < 4; ++i) {
      s.push_back(named("g" + std::to_string(g) + "_" + std::to_string(i),
                        std::vector<double>(12, 10.0 * g + 0.05 * i)));
    }
  }
  KMeansParams p;
  p.seed = 3;
  auto e = elbow_select(s, 1, 6, p);
  EXPECT_EQ(e.ks.size(), 6u);
  EXPECT_EQ(e.chosen_k, 3u);
  EXPECT_EQ(e.chosen().k, 3u);
}

TEST(PairComparison, RatesScoresAndSums) {
  // Window 0 (2010-01): 10 loans of [D1, P1], 3 defaulted.
  // Window 1 (2010-02): the pair is absent.
  std::vector<LoanRecord> r;
  for (int i = 0; i < 10; ++i) {
    r.push_back({"a" + std::to_string(i), YearMonth::parse("2010-01"), "D1", "P1", i < 3});
  }
  r.push_back({"b0", YearMonth::parse("2010-02"), "D2", "P2", true});
  r.push_back({"b1", YearMonth::parse("2010-02"), "D2", "P2", false});
  WindowSpec w;
  w.window_months = 1;
  auto seq = run_sequence(r, w, {});
  auto p = pair_comparison(r, seq, "D1", "P1");
  ASSERT_EQ(p.default_rate_series.size(), 2u);
  EXPECT_DOUBLE_EQ(p.default_rate_series[0], 0.3);
  EXPECT_EQ(p.default_rate_series[1], 0.0);
  EXPECT_EQ(p.series_district[1], 0.0);
  EXPECT_EQ(p.series_product[1], 0.0);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_EQ(p.series_sum[k], p.series_district[k] + p.series_product[k]);
  }
  EXPECT_THROW(pair_comparison(r, seq, "D1", "P2"), ValidationError);

  std::ostringstream os;
  write_pair_csv(os, p);
  EXPECT_TRUE(os.str().starts_with("window_index,score_district,score_product,score_sum,default_rate\n0,"));
  EXPECT_NE(os.str().find(",0.3\n"), std::string::npos);
}

TEST(ClusterExport, CsvLayouts) {
  std::vector<NodeSeries> s{named("a", {0, 0}), named("b", {5, 5}), named("c", {0, 0.1})};
  KMeansParams p;
  p.k = 2;
  auto r = dtw_kmeans(s, p);
  std::ostringstream os;
  write_clusters_csv(os, r, "product");
  EXPECT_TRUE(os.str().starts_with("label,node_kind,cluster_id\na,product,"));
  std::ostringstream in;
  std::vector<std::size_t> ks{1, 2};
  std::vector<double> inertia{3.5, 0.25};
  write_inertia_csv(in, ks, inertia);
  EXPECT_EQ(in.str(), "k,inertia\n1,3.5\n2,0.25\n");
}
