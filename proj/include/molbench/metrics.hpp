#pragma once

#include <algorithm>
#include <set>
#include <stdexcept>
#include <vector>

#include "molbench/fingerprint.hpp"
#include "molbench/oracle.hpp"

namespace molbench::metrics {

class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class TooFewError : public MetricError {
 public:
  using MetricError::MetricError;
};

struct MetricConfig {
  std::vector<int> k_values{1, 10, 100};
  int budget = 10000;
};

namespace detail {

// Mean of the given multiset iterated in descending order. Both the running
// implementation and the brute-force oracle sum in this exact order, so the
// equality tests can require bitwise-identical doubles.
inline double desc_mean(const std::multiset<double, std::greater<double>>& top) {
  double sum = 0;
  for (double v : top) sum += v;
  return sum / top.size();
}

}  // namespace detail

// AUC of the running top-K mean versus call index, extended flat to the full
// budget B and scaled by 1/B. f(t) = mean of the top min(K,t) scores among
// the first t records; empty trace scores 0.
inline double auc_topk(const oracle::Trace& trace, int k, int budget) {
  if (k < 1) throw MetricError("K must be >= 1");
  if (budget < 1) throw MetricError("budget must be >= 1");
  if (static_cast<int>(trace.records.size()) > budget)
    throw MetricError("trace longer than budget");
  if (trace.records.empty()) return 0.0;

  std::multiset<double, std::greater<double>> top;
  double sum = 0.0;
  double last = 0.0;
  for (const auto& rec : trace.records) {
    top.insert(rec.score);
    if (static_cast<int>(top.size()) > k) top.erase(std::prev(top.end()));
    last = detail::desc_mean(top);
    sum += last;
  }
  sum += last * (budget - static_cast<int>(trace.records.size()));
  return sum / budget;
}

// Mean of the top min(K, |trace|) final scores.
inline double topk_mean(const oracle::Trace& trace, int k) {
  if (k < 1) throw MetricError("K must be >= 1");
  if (trace.records.empty()) return 0.0;
  std::vector<double> scores = trace.scores();
  std::sort(scores.begin(), scores.end(), std::greater<double>());
  int take = std::min<int>(k, static_cast<int>(scores.size()));
  double sum = 0;
  for (int i = 0; i < take; ++i) sum += scores[i];
  return sum / take;
}

// Mean pairwise (1 - tanimoto) over fingerprints.
inline double diversity_fps(const std::vector<fingerprint::Fingerprint>& fps) {
  if (fps.size() < 2) throw TooFewError("diversity needs at least two molecules");
  double sum = 0;
  int pairs = 0;
  for (std::size_t i = 0; i < fps.size(); ++i)
    for (std::size_t j = i + 1; j < fps.size(); ++j) {
      sum += 1.0 - fingerprint::tanimoto(fps[i], fps[j]);
      ++pairs;
    }
  return sum / pairs;
}

inline double diversity(const std::vector<chem::Molecule>& mols,
                        const fingerprint::FpConfig& cfg = {}) {
  if (mols.size() < 2) throw TooFewError("diversity needs at least two molecules");
  std::vector<fingerprint::Fingerprint> fps;
  fps.reserve(mols.size());
  for (const auto& m : mols) fps.push_back(fingerprint::morgan_fp(m, cfg));
  return diversity_fps(fps);
}

}  // namespace molbench::metrics
