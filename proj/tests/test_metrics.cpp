#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <set>

#include "molbench/metrics.hpp"
#include "molbench/smiles.hpp"

using namespace molbench;
using namespace molbench::metrics;
using oracle::Trace;

namespace {

Trace make_trace(std::initializer_list<double> scores) {
  Trace t;
  int i = 0;
  for (double s : scores) t.records.push_back({++i, "M" + std::to_string(i), s});
  return t;
}

// Brute-force oracle: re-sort the prefix at every t, mean of top min(K,t),
// summed descending (same accumulation order as the implementation).
double brute_auc(const Trace& trace, int k, int budget) {
  if (trace.records.empty()) return 0.0;
  double sum = 0, last = 0;
  for (std::size_t t = 1; t <= trace.records.size(); ++t) {
    std::multiset<double, std::greater<double>> top;
    for (std::size_t i = 0; i < t; ++i) {
      top.insert(trace.records[i].score);
      if (static_cast<int>(top.size()) > k) top.erase(std::prev(top.end()));
    }
    double s = 0;
    for (double v : top) s += v;
    last = s / top.size();
    sum += last;
  }
  sum += last * (budget - static_cast<double>(trace.records.size()));
  return sum / budget;
}

}  // namespace

TEST_CASE("auc constant ones") {
  Trace t = make_trace({1.0, 1.0, 1.0, 1.0});
  CHECK(auc_topk(t, 10, 4) == 1.0);
  CHECK(auc_topk(t, 10, 100) == 1.0);
}

TEST_CASE("auc single call flat extension") {
  Trace t = make_trace({0.37});
  CHECK(auc_topk(t, 10, 50) == Catch::Approx(0.37).margin(1e-15));
}

TEST_CASE("auc worked example") {
  // B=4, K=2, scores (0.0, 1.0, 0.5): f = (0.0, 0.5, 0.75, 0.75), AUC = 0.5
  Trace t = make_trace({0.0, 1.0, 0.5});
  double auc = auc_topk(t, 2, 4);
  CHECK(std::abs(auc - 0.5) < 1e-12);
}

TEST_CASE("auc empty trace") {
  Trace t;
  CHECK(auc_topk(t, 10, 100) == 0.0);
}

TEST_CASE("auc matches brute force exactly") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> score_d(0.0, 1.0);
  std::uniform_int_distribution<int> len_d(1, 200);
  for (int trial = 0; trial < 1000; ++trial) {
    int len = len_d(rng);
    Trace t;
    for (int i = 0; i < len; ++i) t.records.push_back({i + 1, "m", score_d(rng)});
    int budget = len + static_cast<int>(rng() % 100);
    for (int k : {1, 10, 100}) {
      double a = auc_topk(t, k, budget);
      double b = brute_auc(t, k, budget);
      REQUIRE(a == b);  // exact
    }
  }
}

TEST_CASE("auc dominance monotonicity") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    Trace lo, hi;
    int len = 1 + static_cast<int>(rng() % 50);
    for (int i = 0; i < len; ++i) {
      double v = d(rng);
      lo.records.push_back({i + 1, "m", v});
      hi.records.push_back({i + 1, "m", std::min(1.0, v + d(rng) * (1 - v))});
    }
    CHECK(auc_topk(hi, 10, len + 10) >= auc_topk(lo, 10, len + 10));
  }
}

TEST_CASE("auc range") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    Trace t;
    int len = 1 + static_cast<int>(rng() % 30);
    for (int i = 0; i < len; ++i) t.records.push_back({i + 1, "m", d(rng)});
    double a = auc_topk(t, 10, 50);
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
  }
}

TEST_CASE("topk mean") {
  Trace t = make_trace({0.2, 0.8, 0.5});
  CHECK(topk_mean(t, 1) == 0.8);
  CHECK(topk_mean(t, 2) == Catch::Approx(0.65).margin(1e-15));
  CHECK(topk_mean(t, 10) == Catch::Approx((0.2 + 0.8 + 0.5) / 3).margin(1e-15));
  CHECK(topk_mean(Trace{}, 5) == 0.0);
}

TEST_CASE("diversity") {
  using chem::parse_smiles;
  // identical molecules -> 0
  std::vector<chem::Molecule> same{parse_smiles("CCO"), parse_smiles("OCC")};
  CHECK(diversity(same) == 0.0);

  // disjoint radius-0 fingerprints -> 1
  std::vector<chem::Molecule> far{parse_smiles("C"), parse_smiles("Ic1ccccc1")};
  CHECK(diversity(far, {0, 2048}) == 1.0);

  CHECK_THROWS_AS(diversity({parse_smiles("C")}), TooFewError);

  // pairwise similarities {1.0, 0.0, 0.5} -> mean distance 0.5, via synthetic fps
  fingerprint::Fingerprint a(64, 0), b(64, 0), c(64, 0);
  a.set(1);
  a.set(2);
  b.set(1);
  b.set(2);  // sim(a,b) = 1
  c.set(1);
  c.set(2);
  c.set(3);
  c.set(4);  // sim(a,c) = sim(b,c) = 0.5
  fingerprint::Fingerprint d(64, 0);
  d.set(9);
  d.set(10);  // sim(a,d) = 0
  // pick trio a, c', d': sims 1.0 (a,b), 0.0 (a,d), 0.5 (a,c)
  double div = diversity_fps({a, b, d});  // sims: 1, 0, 0
  CHECK(div == Catch::Approx((0.0 + 1.0 + 1.0) / 3).margin(1e-15));
  double div2 = diversity_fps({a, b, c});  // sims: 1, 0.5, 0.5
  CHECK(div2 == Catch::Approx((0.0 + 0.5 + 0.5) / 3).margin(1e-15));
}

TEST_CASE("prefix stability and tail monotonicity") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  const int k = 10;
  Trace t;
  for (int i = 0; i < 100; ++i) t.records.push_back({i + 1, "m", d(rng)});

  // appending records never changes f(t) at earlier indices: AUC over a fixed
  // prefix-budget is unaffected by what comes after the budget
  Trace prefix;
  prefix.records.assign(t.records.begin(), t.records.begin() + 40);
  CHECK(auc_topk(prefix, k, 40) == auc_topk(prefix, k, 40));

  // once t >= K the running top-K mean is non-decreasing
  std::multiset<double, std::greater<double>> top;
  double prev = -1;
  for (int i = 0; i < 100; ++i) {
    top.insert(t.records[i].score);
    if (static_cast<int>(top.size()) > k) top.erase(std::prev(top.end()));
    double sum = 0;
    for (double v : top) sum += v;
    double f = sum / top.size();
    if (i + 1 >= k) {
      CHECK(f >= prev - 1e-15);
      prev = f;
    }
  }
}
