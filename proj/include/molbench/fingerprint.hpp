#pragma once

#include <bit>
#include <cstdint>
#include <string>
#include <vector>

#include "molbench/chem.hpp"

namespace molbench::fingerprint {

class WidthMismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FpConfig {
  int radius = 2;
  int width = 2048;
};

// Fixed seed so environment identifiers (and therefore bit positions) are
// stable across platforms and versions.
inline constexpr std::uint64_t kMorganSeed = 0x6d6f6c62656e6368ULL;

class Fingerprint {
 public:
  Fingerprint() = default;
  Fingerprint(int width, int radius)
      : width_(width), radius_(radius), words_((width + 63) / 64, 0) {}

  int width() const { return width_; }
  int radius() const { return radius_; }

  void set(std::uint64_t id) {
    std::uint64_t bit = id % static_cast<std::uint64_t>(width_);
    words_[bit / 64] |= 1ULL << (bit % 64);
  }

  bool test(int bit) const { return (words_[bit / 64] >> (bit % 64)) & 1; }

  int popcount() const {
    int c = 0;
    for (std::uint64_t w : words_) c += std::popcount(w);
    return c;
  }

  const std::vector<std::uint64_t>& words() const { return words_; }

  bool operator==(const Fingerprint& o) const {
    return width_ == o.width_ && words_ == o.words_;
  }

  std::string to_hex() const {
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(width_ / 4);
    for (int bit = width_ - 4; bit >= 0; bit -= 4) {
      int nib = (test(bit) << 0) | (test(bit + 1) << 1) | (test(bit + 2) << 2) |
                (test(bit + 3) << 3);
      out += digits[nib];
    }
    return out;
  }

 private:
  int width_ = 0;
  int radius_ = 0;
  std::vector<std::uint64_t> words_;
};

// Morgan/ECFP-style circular fingerprint. Initial atom identifier hashes
// (element, degree, charge, total H, ring flag, aromatic flag); each round
// hashes the previous identifier with the sorted (bond class, neighbour
// identifier) list. An atom emits at radius r only while its environment
// still grows (methane has exactly one environment).
inline Fingerprint morgan_fp(const chem::Molecule& m, int radius = 2, int width = 2048) {
  if (radius < 0 || radius > 4) throw std::invalid_argument("radius must be in [0,4]");
  if (width <= 0 || (width & (width - 1)) != 0)
    throw std::invalid_argument("width must be a power of two");

  int n = m.atom_count();
  Fingerprint fp(width, radius);

  std::vector<std::uint64_t> id(n);
  for (int i = 0; i < n; ++i) {
    const chem::Atom& a = m.atom(i);
    std::uint64_t h = kMorganSeed;
    h = hash_combine(h, static_cast<std::uint64_t>(chem::atomic_number(a.element)));
    h = hash_combine(h, static_cast<std::uint64_t>(m.degree(i)));
    h = hash_combine(h, static_cast<std::uint64_t>(a.formal_charge + 16));
    h = hash_combine(h, static_cast<std::uint64_t>(m.total_h(i)));
    h = hash_combine(h, static_cast<std::uint64_t>(a.in_ring));
    h = hash_combine(h, static_cast<std::uint64_t>(a.aromatic));
    id[i] = h;
    fp.set(h);
  }

  // BFS distances for environment-growth tracking.
  std::vector<std::vector<int>> dist(n, std::vector<int>(n, -1));
  for (int s = 0; s < n; ++s) {
    std::vector<int> q{s};
    dist[s][s] = 0;
    for (std::size_t qi = 0; qi < q.size(); ++qi)
      for (int bi : m.bonds_of(q[qi]))
        if (int to = m.bond(bi).other(q[qi]); dist[s][to] == -1) {
          dist[s][to] = dist[s][q[qi]] + 1;
          q.push_back(to);
        }
  }
  auto env_bonds = [&](int center, int r) {
    int c = 0;
    for (const chem::Bond& b : m.bonds())
      if (std::min(dist[center][b.a], dist[center][b.b]) <= r - 1) ++c;
    return c;
  };

  std::vector<std::uint64_t> next(n);
  for (int r = 1; r <= radius; ++r) {
    for (int i = 0; i < n; ++i) {
      std::vector<std::pair<int, std::uint64_t>> nb;
      for (int bi : m.bonds_of(i)) {
        const chem::Bond& b = m.bond(bi);
        int cls = b.aromatic ? 4 : b.order;
        nb.push_back({cls, id[b.other(i)]});
      }
      std::sort(nb.begin(), nb.end());
      std::uint64_t h = hash_combine(kMorganSeed, static_cast<std::uint64_t>(r));
      h = hash_combine(h, id[i]);
      for (auto& [cls, nid] : nb) {
        h = hash_combine(h, static_cast<std::uint64_t>(cls));
        h = hash_combine(h, nid);
      }
      next[i] = h;
    }
    for (int i = 0; i < n; ++i) {
      if (env_bonds(i, r) > env_bonds(i, r - 1)) fp.set(next[i]);
      id[i] = next[i];
    }
  }
  return fp;
}

inline Fingerprint morgan_fp(const chem::Molecule& m, const FpConfig& cfg) {
  return morgan_fp(m, cfg.radius, cfg.width);
}

// |a AND b| / |a OR b|; 0 when both are empty.
inline double tanimoto(const Fingerprint& a, const Fingerprint& b) {
  if (a.width() != b.width())
    throw WidthMismatchError("fingerprint widths differ: " + std::to_string(a.width()) + " vs " +
                             std::to_string(b.width()));
  int inter = 0, uni = 0;
  for (std::size_t w = 0; w < a.words().size(); ++w) {
    inter += std::popcount(a.words()[w] & b.words()[w]);
    uni += std::popcount(a.words()[w] | b.words()[w]);
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
}

}  // namespace molbench::fingerprint
