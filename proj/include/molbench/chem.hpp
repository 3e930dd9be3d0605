#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "molbench/util.hpp"

namespace molbench::chem {

class ChemError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class SyntaxError : public ChemError {
 public:
  using ChemError::ChemError;
};
class ValenceError : public ChemError {
 public:
  using ChemError::ChemError;
};
class UnsupportedError : public ChemError {
 public:
  using ChemError::ChemError;
};
class MultiFragmentError : public ChemError {
 public:
  using ChemError::ChemError;
};

enum class Element : std::uint8_t { B, C, N, O, P, S, F, Cl, Br, I, H };

inline constexpr int kNumElements = 11;

inline const char* symbol(Element e) {
  static const char* kSym[kNumElements] = {"B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I", "H"};
  return kSym[static_cast<int>(e)];
}

inline int atomic_number(Element e) {
  static const int kZ[kNumElements] = {5, 6, 7, 8, 15, 16, 9, 17, 35, 53, 1};
  return kZ[static_cast<int>(e)];
}

// IUPAC standard atomic weights.
inline double atomic_mass(Element e) {
  static const double kMass[kNumElements] = {10.811,  12.011, 14.007, 15.999, 30.974, 32.06,
                                             18.998,  35.45,  79.904, 126.904, 1.008};
  return kMass[static_cast<int>(e)];
}

inline std::optional<Element> element_from_symbol(std::string_view s) {
  for (int i = 0; i < kNumElements; ++i)
    if (s == symbol(static_cast<Element>(i))) return static_cast<Element>(i);
  return std::nullopt;
}

inline bool aromatic_capable(Element e) {
  switch (e) {
    case Element::B:
    case Element::C:
    case Element::N:
    case Element::O:
    case Element::P:
    case Element::S:
      return true;
    default:
      return false;
  }
}

// Allowed total valences for (element, formal charge), ascending. Base sets
// B3, C4, N3, O2, P3/5, S2/4/6, halogens 1, H1; one unit of charge shifts by
// one: +charge raises the target for N/O/P/S/halogens, boron goes the other
// way, and carbon loses one either direction (CH3+ and CH3- both trivalent).
inline std::vector<int> allowed_valences(Element e, int charge) {
  std::vector<int> base;
  int shift = 0;
  switch (e) {
    case Element::B:
      base = {3};
      shift = -charge;
      break;
    case Element::C:
      base = {4};
      shift = -std::abs(charge);
      break;
    case Element::N:
      base = {3};
      shift = charge;
      break;
    case Element::O:
      base = {2};
      shift = charge;
      break;
    case Element::P:
      base = {3, 5};
      shift = charge;
      break;
    case Element::S:
      base = {2, 4, 6};
      shift = charge;
      break;
    case Element::F:
    case Element::Cl:
    case Element::Br:
    case Element::I:
      base = {1};
      shift = charge;
      break;
    case Element::H:
      base = {1};
      shift = -std::abs(charge);
      break;
  }
  std::vector<int> out;
  for (int v : base)
    if (v + shift >= 0) out.push_back(v + shift);
  return out;
}

inline int max_allowed_valence(Element e, int charge) {
  auto v = allowed_valences(e, charge);
  return v.empty() ? -1 : v.back();
}

struct Atom {
  Element element = Element::C;
  int formal_charge = 0;
  bool aromatic = false;
  bool explicit_h_set = false;  // bracket atoms carry a fixed H count
  int explicit_h = 0;
  // Derived at sanitization:
  int implicit_h = 0;
  bool in_ring = false;
};

struct Bond {
  int a = 0;
  int b = 0;
  int order = 1;  // kekulé order 1..3; aromatic bonds keep their kekulé order
  bool aromatic = false;
  bool explicit_aromatic_input = false;  // written ':' rather than defaulted
  bool in_ring = false;

  int other(int atom) const { return atom == a ? b : a; }
};

struct ElementCounts {
  std::map<Element, int> counts;  // includes hydrogens (implicit + explicit H atoms)
  int net_charge = 0;

  int count(Element e) const {
    auto it = counts.find(e);
    return it == counts.end() ? 0 : it->second;
  }
  int total_atoms() const {
    int t = 0;
    for (auto& [e, c] : counts) t += c;
    return t;
  }
  bool operator==(const ElementCounts& o) const {
    return counts == o.counts && net_charge == o.net_charge;
  }
};

struct Descriptors {
  double mol_weight = 0.0;
  int heavy_atom_count = 0;
  int ring_count = 0;
  int aromatic_ring_count = 0;
  int rotatable_bond_count = 0;
};

class MoleculeBuilder;

// Immutable sanitized molecular graph. Constructed only through
// MoleculeBuilder::finalize(), which enforces the valence model, single
// connectivity, ring perception and kekulé/aromatic consistency.
class Molecule {
 public:
  int atom_count() const { return static_cast<int>(atoms_.size()); }
  int bond_count() const { return static_cast<int>(bonds_.size()); }
  const Atom& atom(int i) const { return atoms_[i]; }
  const Bond& bond(int i) const { return bonds_[i]; }
  const std::vector<Atom>& atoms() const { return atoms_; }
  const std::vector<Bond>& bonds() const { return bonds_; }

  const std::vector<int>& bonds_of(int atom) const { return adj_[atom]; }
  int degree(int atom) const { return static_cast<int>(adj_[atom].size()); }

  const Bond* bond_between(int u, int v) const {
    for (int bi : adj_[u]) {
      const Bond& b = bonds_[bi];
      if (b.other(u) == v) return &b;
    }
    return nullptr;
  }

  // Smallest set of smallest rings; each entry is a simple cycle as an
  // ordered atom-index list.
  const std::vector<std::vector<int>>& sssr() const { return sssr_; }

  // True when the parser discarded stereo markers or isotopes.
  bool dropped_input_features() const { return dropped_features_; }

  int bond_order_sum(int atom) const {
    int s = 0;
    for (int bi : adj_[atom]) s += bonds_[bi].order;
    return s;
  }

  // Implicit hydrogens plus explicit H-atom neighbours.
  int total_h(int atom) const {
    int h = atoms_[atom].implicit_h;
    for (int bi : adj_[atom])
      if (atoms_[bonds_[bi].other(atom)].element == Element::H) ++h;
    return h;
  }

  int heavy_degree(int atom) const {
    int d = 0;
    for (int bi : adj_[atom])
      if (atoms_[bonds_[bi].other(atom)].element != Element::H) ++d;
    return d;
  }

 private:
  friend class MoleculeBuilder;
  std::vector<Atom> atoms_;
  std::vector<Bond> bonds_;
  std::vector<std::vector<int>> adj_;
  std::vector<std::vector<int>> sssr_;
  bool dropped_features_ = false;
};

namespace detail {

// Bridge edges via DFS low-link; an edge lies on a cycle iff it is not a
// bridge.
inline std::vector<bool> bridge_flags(int n, const std::vector<Bond>& bonds,
                                      const std::vector<std::vector<int>>& adj) {
  std::vector<bool> is_bridge(bonds.size(), false);
  std::vector<int> tin(n, -1), low(n, 0);
  int timer = 0;
  // Iterative DFS: frames of (vertex, incoming bond, next adjacency slot).
  struct Frame {
    int v;
    int in_bond;
    std::size_t next;
  };
  for (int start = 0; start < n; ++start) {
    if (tin[start] != -1) continue;
    std::vector<Frame> stack{{start, -1, 0}};
    tin[start] = low[start] = timer++;
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next < adj[f.v].size()) {
        int bi = adj[f.v][f.next++];
        if (bi == f.in_bond) continue;
        int to = bonds[bi].other(f.v);
        if (tin[to] != -1) {
          low[f.v] = std::min(low[f.v], tin[to]);
        } else {
          tin[to] = low[to] = timer++;
          stack.push_back({to, bi, 0});
        }
      } else {
        int v = f.v, in_bond = f.in_bond;
        stack.pop_back();
        if (!stack.empty()) {
          int p = stack.back().v;
          low[p] = std::min(low[p], low[v]);
          if (low[v] > tin[p]) is_bridge[in_bond] = true;
        }
      }
    }
  }
  return is_bridge;
}

// Horton-style minimum cycle basis: shortest cycles through (vertex, edge)
// pairs, greedily selected by GF(2) independence until the cyclomatic number
// is reached. Exact and fast for molecule-sized graphs.
inline std::vector<std::vector<int>> compute_sssr(int n, const std::vector<Bond>& bonds,
                                                  const std::vector<std::vector<int>>& adj) {
  int m = static_cast<int>(bonds.size());
  int want = m - n + 1;  // single connected component
  if (want <= 0) return {};

  // BFS parents from every vertex.
  std::vector<std::vector<int>> dist(n, std::vector<int>(n, -1));
  std::vector<std::vector<int>> par(n, std::vector<int>(n, -1));
  for (int s = 0; s < n; ++s) {
    std::vector<int> q{s};
    dist[s][s] = 0;
    for (std::size_t qi = 0; qi < q.size(); ++qi) {
      int v = q[qi];
      for (int bi : adj[v]) {
        int to = bonds[bi].other(v);
        if (dist[s][to] == -1) {
          dist[s][to] = dist[s][v] + 1;
          par[s][to] = v;
          q.push_back(to);
        }
      }
    }
  }

  auto path_to = [&](int s, int v) {
    std::vector<int> p;
    for (int x = v; x != -1; x = par[s][x]) p.push_back(x);
    std::reverse(p.begin(), p.end());
    return p;  // s .. v
  };

  struct Candidate {
    std::vector<int> atoms;          // ordered cycle
    std::vector<std::uint64_t> ebits;  // GF(2) edge incidence
  };
  int words = (m + 63) / 64;
  auto edge_index = [&](int u, int v) {
    for (int bi : adj[u])
      if (bonds[bi].other(u) == v) return bi;
    return -1;
  };

  std::vector<Candidate> cands;
  std::vector<std::vector<std::uint64_t>> seen;
  for (int v = 0; v < n; ++v) {
    for (int bi = 0; bi < m; ++bi) {
      int x = bonds[bi].a, y = bonds[bi].b;
      if (dist[v][x] == -1 || dist[v][y] == -1) continue;
      auto px = path_to(v, x), py = path_to(v, y);
      // Paths must only share v, else the walk is not a simple cycle.
      std::vector<bool> on_px(n, false);
      for (int a : px) on_px[a] = true;
      bool disjoint = true;
      for (std::size_t i = 1; i < py.size(); ++i)
        if (on_px[py[i]]) {
          disjoint = false;
          break;
        }
      if (!disjoint) continue;
      std::vector<int> cyc = px;
      for (auto it = py.rbegin(); it != py.rend() - 1; ++it) cyc.push_back(*it);
      if (cyc.size() < 3) continue;
      std::vector<std::uint64_t> eb(words, 0);
      bool ok = true;
      for (std::size_t i = 0; i < cyc.size(); ++i) {
        int e = edge_index(cyc[i], cyc[(i + 1) % cyc.size()]);
        if (e < 0) {
          ok = false;
          break;
        }
        eb[e / 64] ^= 1ULL << (e % 64);
      }
      if (!ok) continue;
      bool dup = false;
      for (auto& sv : seen)
        if (sv == eb) {
          dup = true;
          break;
        }
      if (dup) continue;
      seen.push_back(eb);
      cands.push_back({std::move(cyc), std::move(eb)});
    }
  }

  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.atoms.size() != b.atoms.size()) return a.atoms.size() < b.atoms.size();
    return a.ebits < b.ebits;
  });

  // Greedy GF(2) independence (Gaussian elimination over edge space).
  std::vector<std::vector<std::uint64_t>> basis;  // reduced rows
  std::vector<std::vector<int>> rings;
  auto reduce = [&](std::vector<std::uint64_t> v) {
    for (auto& row : basis) {
      int pivot = -1;
      for (int w = words - 1; w >= 0; --w)
        if (row[w]) {
          pivot = w * 64 + 63 - __builtin_clzll(row[w]);
          break;
        }
      if (pivot >= 0 && (v[pivot / 64] >> (pivot % 64)) & 1)
        for (int w = 0; w < words; ++w) v[w] ^= row[w];
    }
    return v;
  };
  for (auto& c : cands) {
    if (static_cast<int>(rings.size()) == want) break;
    auto red = reduce(c.ebits);
    bool zero = true;
    for (auto w : red)
      if (w) {
        zero = false;
        break;
      }
    if (zero) continue;
    basis.push_back(red);
    rings.push_back(c.atoms);
  }
  return rings;
}

enum class PiNeed { Must, May, Cannot };

}  // namespace detail

// Mutable construction surface for Molecule. finalize() runs the full
// sanitization pipeline and either returns a valid Molecule or throws.
class MoleculeBuilder {
 public:
  MoleculeBuilder() = default;

  // Copy an existing molecule as a plain kekulé graph (aromatic flags
  // stripped); sanitization re-perceives aromaticity. This is the entry
  // point for structural mutations.
  static MoleculeBuilder from_kekule(const Molecule& m) {
    MoleculeBuilder b;
    for (const Atom& a : m.atoms()) {
      Atom c = a;
      c.aromatic = false;
      c.implicit_h = 0;
      c.in_ring = false;
      b.atoms_.push_back(c);
    }
    for (const Bond& bd : m.bonds()) b.add_bond(bd.a, bd.b, bd.order, false);
    return b;
  }

  int add_atom(Element e, int charge = 0, bool aromatic = false,
               std::optional<int> explicit_h = std::nullopt) {
    Atom a;
    a.element = e;
    a.formal_charge = charge;
    a.aromatic = aromatic;
    if (explicit_h) {
      a.explicit_h_set = true;
      a.explicit_h = *explicit_h;
    }
    atoms_.push_back(a);
    return static_cast<int>(atoms_.size()) - 1;
  }

  // order 1..3; aromatic marks a candidate aromatic bond (order is then a
  // placeholder until kekulization).
  void add_bond(int u, int v, int order, bool aromatic = false, bool explicit_aromatic = false) {
    if (u == v) throw SyntaxError("bond endpoints must be distinct");
    for (const Bond& b : bonds_)
      if ((b.a == u && b.b == v) || (b.a == v && b.b == u))
        throw SyntaxError("duplicate bond between atoms");
    Bond b;
    b.a = u;
    b.b = v;
    b.order = order;
    b.aromatic = aromatic;
    b.explicit_aromatic_input = explicit_aromatic;
    bonds_.push_back(b);
  }

  int atom_count() const { return static_cast<int>(atoms_.size()); }
  const std::vector<Atom>& atoms() const { return atoms_; }
  const std::vector<Bond>& bonds() const { return bonds_; }
  std::vector<Atom>& atoms() { return atoms_; }
  std::vector<Bond>& bonds() { return bonds_; }

  int bond_order_sum(int atom) const {
    int s = 0;
    for (const Bond& b : bonds_)
      if (b.a == atom || b.b == atom) s += b.order;
    return s;
  }

  void set_dropped_features(bool v) { dropped_ = v; }

  Molecule finalize() const {
    Molecule m;
    m.atoms_ = atoms_;
    m.bonds_ = bonds_;
    m.dropped_features_ = dropped_;
    int n = m.atom_count();
    if (n == 0) throw SyntaxError("empty molecule");

    m.adj_.assign(n, {});
    for (int bi = 0; bi < m.bond_count(); ++bi) {
      m.adj_[m.bonds_[bi].a].push_back(bi);
      m.adj_[m.bonds_[bi].b].push_back(bi);
    }

    check_connected(m);
    perceive_rings(m);
    demote_and_validate_aromatic(m);
    kekulize(m);
    assign_hydrogens(m);
    perceive_aromaticity(m);
    m.sssr_ = detail::compute_sssr(n, m.bonds_, m.adj_);
    return m;
  }

 private:
  std::vector<Atom> atoms_;
  std::vector<Bond> bonds_;
  bool dropped_ = false;

  static void check_connected(const Molecule& m) {
    int n = m.atom_count();
    std::vector<bool> vis(n, false);
    std::vector<int> q{0};
    vis[0] = true;
    int cnt = 1;
    for (std::size_t qi = 0; qi < q.size(); ++qi)
      for (int bi : m.adj_[q[qi]]) {
        int to = m.bonds_[bi].other(q[qi]);
        if (!vis[to]) {
          vis[to] = true;
          ++cnt;
          q.push_back(to);
        }
      }
    if (cnt != n) throw MultiFragmentError("molecule has more than one fragment");
  }

  static void perceive_rings(Molecule& m) {
    auto bridges = detail::bridge_flags(m.atom_count(), m.bonds_, m.adj_);
    for (int bi = 0; bi < m.bond_count(); ++bi) m.bonds_[bi].in_ring = !bridges[bi];
    for (int i = 0; i < m.atom_count(); ++i) {
      bool r = false;
      for (int bi : m.adj_[i]) r |= m.bonds_[bi].in_ring;
      m.atoms_[i].in_ring = r;
    }
  }

  // Default bonds between two lowercase atoms arrive flagged aromatic; a
  // flagged bond outside any ring (biphenyl junction) is really a single
  // bond. After demotion every aromatic atom must still sit in an aromatic
  // ring bond, otherwise the lowercase input was malformed.
  static void demote_and_validate_aromatic(Molecule& m) {
    for (Bond& b : m.bonds_) {
      if (b.aromatic && !b.in_ring) {
        if (b.explicit_aromatic_input) throw SyntaxError("aromatic bond outside of a ring");
        b.aromatic = false;
        b.order = 1;
      }
    }
    for (int i = 0; i < m.atom_count(); ++i) {
      if (!m.atoms_[i].aromatic) continue;
      if (!aromatic_capable(m.atoms_[i].element))
        throw SyntaxError(std::string("element cannot be aromatic: ") + symbol(m.atoms_[i].element));
      bool has_arom_bond = false;
      for (int bi : m.adj_[i]) has_arom_bond |= m.bonds_[bi].aromatic;
      if (!has_arom_bond) throw SyntaxError("aromatic atom not inside an aromatic ring");
    }
    for (const Bond& b : m.bonds_)
      if (b.aromatic && (!m.atoms_[b.a].aromatic || !m.atoms_[b.b].aromatic))
        throw SyntaxError("aromatic bond between non-aromatic atoms");
  }

  // Assign kekulé orders to aromatic bonds: perfect matching over atoms that
  // must carry one double bond. Deterministic backtracking (ascending atom /
  // bond order) so equal inputs produce equal kekulé structures.
  static void kekulize(Molecule& m) {
    int n = m.atom_count();
    std::vector<detail::PiNeed> need(n, detail::PiNeed::Cannot);
    std::vector<int> arom_atoms;
    for (int i = 0; i < n; ++i) {
      if (!m.atoms_[i].aromatic) continue;
      bool in_arom_bond = false;
      for (int bi : m.adj_[i]) in_arom_bond |= m.bonds_[bi].aromatic;
      if (!in_arom_bond) continue;
      arom_atoms.push_back(i);
      const Atom& a = m.atoms_[i];
      int fixed = a.explicit_h_set ? a.explicit_h : 0;
      for (int bi : m.adj_[i]) fixed += m.bonds_[bi].aromatic ? 1 : m.bonds_[bi].order;
      auto allowed = allowed_valences(a.element, a.formal_charge);
      int target = -1;
      for (int v : allowed)
        if (v >= fixed) {
          target = v;
          break;
        }
      if (target < 0) throw ValenceError("aromatic atom exceeds allowed valence");
      if (a.element == Element::C && a.formal_charge != 0)
        need[i] = detail::PiNeed::May;
      else
        need[i] = fixed < target ? detail::PiNeed::Must : detail::PiNeed::Cannot;
    }
    if (arom_atoms.empty()) return;

    std::vector<bool> matched(n, false);
    std::vector<int> match_bond;  // bond indices chosen as double

    // Find the next unmatched Must atom; try pairing through each aromatic
    // bond in ascending index order.
    auto next_must = [&]() {
      for (int i : arom_atoms)
        if (need[i] == detail::PiNeed::Must && !matched[i]) return i;
      return -1;
    };
    std::vector<int> stack;  // chosen bonds, for backtracking
    struct Choice {
      int atom;
      std::size_t next_slot;
    };
    std::vector<Choice> choices;
    int cur = next_must();
    std::size_t slot = 0;
    while (cur != -1) {
      bool advanced = false;
      const auto& adj = m.adj_[cur];
      for (; slot < adj.size(); ++slot) {
        int bi = adj[slot];
        const Bond& b = m.bonds_[bi];
        if (!b.aromatic) continue;
        int o = b.other(cur);
        if (matched[o] || need[o] == detail::PiNeed::Cannot) continue;
        matched[cur] = matched[o] = true;
        stack.push_back(bi);
        choices.push_back({cur, slot + 1});
        cur = next_must();
        slot = 0;
        advanced = true;
        break;
      }
      if (!advanced) {
        if (choices.empty()) throw SyntaxError("aromatic ring system cannot be kekulized");
        int bi = stack.back();
        stack.pop_back();
        matched[m.bonds_[bi].a] = matched[m.bonds_[bi].b] = false;
        cur = choices.back().atom;
        slot = choices.back().next_slot;
        choices.pop_back();
      }
    }
    std::vector<bool> is_double(m.bond_count(), false);
    for (int bi : stack) is_double[bi] = true;
    for (int bi = 0; bi < m.bond_count(); ++bi)
      if (m.bonds_[bi].aromatic) m.bonds_[bi].order = is_double[bi] ? 2 : 1;
  }

  static void assign_hydrogens(Molecule& m) {
    for (int i = 0; i < m.atom_count(); ++i) {
      Atom& a = m.atoms_[i];
      int sum = m.bond_order_sum(i);
      auto allowed = allowed_valences(a.element, a.formal_charge);
      if (allowed.empty())
        throw ValenceError(std::string("no allowed valence for charged ") + symbol(a.element));
      if (a.explicit_h_set) {
        int total = sum + a.explicit_h;
        if (std::find(allowed.begin(), allowed.end(), total) == allowed.end())
          throw ValenceError(std::string("valence ") + std::to_string(total) + " not allowed for " +
                             symbol(a.element));
        a.implicit_h = a.explicit_h;
      } else {
        int target = -1;
        for (int v : allowed)
          if (v >= sum) {
            target = v;
            break;
          }
        if (target < 0)
          throw ValenceError(std::string("bond order sum ") + std::to_string(sum) +
                             " exceeds valence of " + symbol(a.element));
        a.implicit_h = target - sum;
      }
    }
  }

  // Conservative aromatic normalization so that kekulé input (or decoder and
  // mutation output) reaches the same canonical form as lowercase input.
  // A 6-ring is aromatic when every atom is C/N and carries exactly one ring
  // double bond (i.e. the ring doubles form a perfect matching). A 5-ring is
  // aromatic when exactly one pivot atom has no ring double and the pivot can
  // donate a lone pair (O, S, N/P with an H or three connections, C-).
  static void perceive_aromaticity(Molecule& m) {
    auto rings = detail::compute_sssr(m.atom_count(), m.bonds_, m.adj_);
    std::vector<int> mark_bonds;
    std::vector<int> mark_atoms;
    for (const auto& ring : rings) {
      std::size_t rs = ring.size();
      if (rs != 5 && rs != 6) continue;
      std::vector<int> ring_bonds;
      bool ok = true;
      for (std::size_t i = 0; i < rs && ok; ++i) {
        int u = ring[i], v = ring[(i + 1) % rs];
        const Bond* b = m.bond_between(u, v);
        if (!b) {
          ok = false;
          break;
        }
        ring_bonds.push_back(static_cast<int>(b - m.bonds_.data()));
      }
      if (!ok) continue;
      bool all_arom = true;
      for (int bi : ring_bonds) all_arom &= m.bonds_[bi].aromatic;
      if (all_arom) continue;  // already flagged (trusted input)

      // Doubles on any ring bond of the atom: in fused systems a bridgehead's
      // double may live in the neighbouring ring.
      auto ring_doubles = [&](int atom) {
        int d = 0;
        for (int bi : m.adj_[atom]) {
          const Bond& b = m.bonds_[bi];
          if (!b.in_ring) continue;
          if (b.order == 2) ++d;
          if (b.order >= 3) d += 9;  // triple in a ring: disqualify
        }
        return d;
      };

      int pivots = 0;
      ok = true;
      for (int atom : ring) {
        const Atom& a = m.atoms_[atom];
        int d = ring_doubles(atom);
        if (d == 1) {
          if (a.element != Element::C && a.element != Element::N) {
            // allow O+/S+ style pyrylium and aromatic P with a double
            if (!(a.formal_charge > 0 && (a.element == Element::O || a.element == Element::S)) &&
                a.element != Element::P) {
              ok = false;
              break;
            }
          }
          if (a.formal_charge < -1 || a.formal_charge > 1) {
            ok = false;
            break;
          }
        } else if (d == 0) {
          ++pivots;
          bool lone_pair_donor =
              (a.element == Element::O && a.formal_charge == 0) ||
              (a.element == Element::S && a.formal_charge == 0) ||
              ((a.element == Element::N || a.element == Element::P) &&
               (m.total_h(atom) >= 1 || m.degree(atom) >= 3) && a.formal_charge == 0) ||
              (a.element == Element::C && a.formal_charge == -1);
          if (!lone_pair_donor) {
            ok = false;
            break;
          }
        } else {
          ok = false;
          break;
        }
      }
      if (!ok) continue;
      if (rs == 6 && pivots != 0) continue;
      if (rs == 5 && pivots != 1) continue;
      for (int bi : ring_bonds) mark_bonds.push_back(bi);
      for (int atom : ring) mark_atoms.push_back(atom);
    }
    for (int bi : mark_bonds) m.bonds_[bi].aromatic = true;
    for (int atom : mark_atoms) m.atoms_[atom].aromatic = true;
  }
};

inline ElementCounts molecular_formula(const Molecule& m) {
  ElementCounts ec;
  for (int i = 0; i < m.atom_count(); ++i) {
    const Atom& a = m.atom(i);
    ec.counts[a.element] += 1;
    if (a.implicit_h > 0) ec.counts[Element::H] += a.implicit_h;
    ec.net_charge += a.formal_charge;
  }
  return ec;
}

inline Descriptors basic_descriptors(const Molecule& m) {
  Descriptors d;
  for (int i = 0; i < m.atom_count(); ++i) {
    const Atom& a = m.atom(i);
    d.mol_weight += atomic_mass(a.element) + a.implicit_h * atomic_mass(Element::H);
    if (a.element != Element::H) ++d.heavy_atom_count;
  }
  d.ring_count = m.bond_count() - m.atom_count() + 1;
  for (const auto& ring : m.sssr()) {
    bool arom = true;
    for (std::size_t i = 0; i < ring.size(); ++i) {
      const Bond* b = m.bond_between(ring[i], ring[(i + 1) % ring.size()]);
      arom &= b && b->aromatic;
    }
    if (arom) ++d.aromatic_ring_count;
  }
  for (const Bond& b : m.bonds()) {
    if (b.order != 1 || b.in_ring || b.aromatic) continue;
    if (m.atom(b.a).element == Element::H || m.atom(b.b).element == Element::H) continue;
    if (m.heavy_degree(b.a) >= 2 && m.heavy_degree(b.b) >= 2) ++d.rotatable_bond_count;
  }
  return d;
}

inline const std::vector<std::vector<int>>& sssr_rings(const Molecule& m) { return m.sssr(); }

}  // namespace molbench::chem
