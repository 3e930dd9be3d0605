#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "molbench/chem.hpp"
#include "molbench/fingerprint.hpp"
#include "molbench/metrics.hpp"
#include "molbench/oracle.hpp"
#include "molbench/smiles.hpp"
#include "molbench/strings.hpp"

namespace molbench::optimize {

using chem::Molecule;
using fingerprint::Fingerprint;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class SingularKernel : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Algorithm {
  Screening,
  Molpal,
  GraphGa,
  SmilesGa,
  Stoned,
  HillClimb,
  Reinvent,
  GraphMcts,
  GpBo,
};

inline const char* algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::Screening: return "screening";
    case Algorithm::Molpal: return "molpal";
    case Algorithm::GraphGa: return "graph_ga";
    case Algorithm::SmilesGa: return "smiles_ga";
    case Algorithm::Stoned: return "stoned";
    case Algorithm::HillClimb: return "hill_climb";
    case Algorithm::Reinvent: return "reinvent";
    case Algorithm::GraphMcts: return "graph_mcts";
    case Algorithm::GpBo: return "gp_bo";
  }
  return "?";
}

inline std::optional<Algorithm> algorithm_from_name(std::string_view s) {
  for (Algorithm a : {Algorithm::Screening, Algorithm::Molpal, Algorithm::GraphGa,
                      Algorithm::SmilesGa, Algorithm::Stoned, Algorithm::HillClimb,
                      Algorithm::Reinvent, Algorithm::GraphMcts, Algorithm::GpBo})
    if (s == algorithm_name(a)) return a;
  return std::nullopt;
}

struct OptimizerConfig {
  Algorithm algorithm = Algorithm::Screening;
  std::string name;  // defaults to algorithm_name

  int patience = 5;
  double improvement_eps = 1e-3;

  int screening_batch = 100;

  int molpal_init = 500;
  int molpal_batch = 100;
  double molpal_ridge_lambda = 1.0;
  fingerprint::FpConfig molpal_fp{2, 512};

  int ga_population = 120;
  int ga_offspring = 70;
  double ga_mutation_rate = 0.067;
  int ga_max_heavy = 80;

  int sga_population = 100;
  int sga_mutants = 300;
  int sga_max_len = 200;

  int stoned_population = 500;

  int kgram_order = 3;
  double kgram_alpha = 0.01;
  int max_seq_len = 100;
  double sample_temperature = 1.0;

  int hc_samples = 1024;
  int hc_keep = 512;
  double hc_mix_lambda = 0.5;
  bool hc_score_weighted = false;

  int reinvent_batch = 64;
  double reinvent_sigma = 500.0;
  double reinvent_lr = 0.05;

  double mcts_exploration = 4.3;
  int mcts_max_children = 5;
  int mcts_max_atoms = 60;
  int mcts_simulations = 22;
  double mcts_rollout_stop = 0.15;

  int gpbo_init = 340;
  int gpbo_batch = 8;
  int gpbo_inner_population = 820;
  int gpbo_inner_offspring = 150;
  double gpbo_inner_mutation = 0.01;
  int gpbo_inner_generations = 60;
  int gpbo_inner_patience = 10;
  int gpbo_max_train = 256;
  double gp_amplitude = 1.0;
  double gp_jitter = 1e-4;
  fingerprint::FpConfig gpbo_fp{2, 2048};

  std::string display_name() const { return name.empty() ? algorithm_name(algorithm) : name; }

  void validate() const {
    auto positive = [](int v, const char* what) {
      if (v <= 0) throw ConfigError(std::string(what) + " must be positive");
    };
    auto rate = [](double v, const char* what) {
      if (v < 0.0 || v > 1.0) throw ConfigError(std::string(what) + " must be in [0,1]");
    };
    positive(patience, "patience");
    positive(screening_batch, "screening_batch");
    positive(molpal_init, "molpal_init");
    positive(molpal_batch, "molpal_batch");
    positive(ga_population, "ga_population");
    positive(ga_offspring, "ga_offspring");
    positive(sga_population, "sga_population");
    positive(sga_mutants, "sga_mutants");
    positive(stoned_population, "stoned_population");
    positive(hc_samples, "hc_samples");
    positive(hc_keep, "hc_keep");
    positive(reinvent_batch, "reinvent_batch");
    positive(kgram_order, "kgram_order");
    positive(max_seq_len, "max_seq_len");
    positive(mcts_max_children, "mcts_max_children");
    positive(mcts_max_atoms, "mcts_max_atoms");
    positive(mcts_simulations, "mcts_simulations");
    positive(gpbo_init, "gpbo_init");
    positive(gpbo_batch, "gpbo_batch");
    positive(gpbo_inner_population, "gpbo_inner_population");
    positive(gpbo_inner_offspring, "gpbo_inner_offspring");
    positive(gpbo_inner_generations, "gpbo_inner_generations");
    positive(gpbo_max_train, "gpbo_max_train");
    rate(ga_mutation_rate, "ga_mutation_rate");
    rate(gpbo_inner_mutation, "gpbo_inner_mutation");
    rate(hc_mix_lambda, "hc_mix_lambda");
    rate(mcts_rollout_stop, "mcts_rollout_stop");
    if (improvement_eps < 0) throw ConfigError("improvement_eps must be >= 0");
    if (reinvent_sigma < 0) throw ConfigError("reinvent_sigma must be >= 0");
    if (reinvent_lr <= 0) throw ConfigError("reinvent_lr must be positive");
    if (mcts_exploration < 0) throw ConfigError("mcts_exploration must be >= 0");
    if (gp_jitter <= 0) throw ConfigError("gp_jitter must be positive");
    if (gp_amplitude <= 0) throw ConfigError("gp_amplitude must be positive");
  }
};

struct RunResult {
  std::string task;
  std::string optimizer;
  std::uint64_t seed = 0;
  oracle::Trace trace;
  double auc_top1 = 0, auc_top10 = 0, auc_top100 = 0;
  double top1 = 0, top10 = 0, top100 = 0;
  double diversity_top100 = 0;
  int generations = 0;
  double wall_seconds = 0;
};

// ---------------------------------------------------------------------------
// small deterministic rng helpers
// ---------------------------------------------------------------------------
namespace detail {

inline int rand_int(std::mt19937_64& rng, int n) {  // [0, n)
  return static_cast<int>(std::uniform_int_distribution<long long>(0, n - 1)(rng));
}

inline double rand_real(std::mt19937_64& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

// k distinct indices from [0, n), order randomized
inline std::vector<int> sample_indices(std::mt19937_64& rng, int n, int k) {
  k = std::min(k, n);
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  for (int i = 0; i < k; ++i) std::swap(idx[i], idx[i + rand_int(rng, n - i)]);
  idx.resize(k);
  return idx;
}

struct Member {
  Molecule mol;
  std::string canonical;
  double score = 0;
};

inline void sort_members(std::vector<Member>& ms) {
  std::sort(ms.begin(), ms.end(), [](const Member& a, const Member& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.canonical < b.canonical;
  });
}

inline void dedupe_sorted_members(std::vector<Member>& ms) {
  std::set<std::string> seen;
  std::vector<Member> out;
  for (auto& m : ms)
    if (seen.insert(m.canonical).second) out.push_back(std::move(m));
  ms = std::move(out);
}

// fitness-proportional index with +1e-6 shift against all-zero scores
inline int roulette(std::mt19937_64& rng, const std::vector<Member>& pop) {
  double total = 0;
  for (auto& m : pop) total += m.score + 1e-6;
  double u = rand_real(rng) * total;
  double acc = 0;
  for (std::size_t i = 0; i < pop.size(); ++i) {
    acc += pop[i].score + 1e-6;
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(pop.size()) - 1;
}

inline int heavy_atoms(const Molecule& m) {
  int h = 0;
  for (const auto& a : m.atoms()) h += a.element != chem::Element::H;
  return h;
}

inline int spare_valence(const Molecule& m, int atom) {
  int cap = chem::max_allowed_valence(m.atom(atom).element, m.atom(atom).formal_charge);
  return std::max(0, cap - m.bond_order_sum(atom) -
                         (m.atom(atom).explicit_h_set ? m.atom(atom).implicit_h : 0));
}

inline std::vector<int> bfs_distances(const Molecule& m, int from) {
  std::vector<int> dist(m.atom_count(), -1);
  std::vector<int> q{from};
  dist[from] = 0;
  for (std::size_t qi = 0; qi < q.size(); ++qi)
    for (int bi : m.bonds_of(q[qi])) {
      int to = m.bond(bi).other(q[qi]);
      if (dist[to] == -1) {
        dist[to] = dist[q[qi]] + 1;
        q.push_back(to);
      }
    }
  return dist;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Graph GA operators
// ---------------------------------------------------------------------------

namespace detail {

struct Fragment {
  std::vector<int> atoms;       // original atom indices
  std::vector<int> attach;      // attachment atoms (original indices)
};

// Split the molecule at the given bonds (removed); returns the connected
// components with their attachment points.
inline std::vector<Fragment> split_at(const Molecule& m, const std::vector<int>& cut_bonds) {
  std::vector<bool> cut(m.bond_count(), false);
  for (int bi : cut_bonds) cut[bi] = true;
  std::vector<int> comp(m.atom_count(), -1);
  int ncomp = 0;
  for (int s = 0; s < m.atom_count(); ++s) {
    if (comp[s] != -1) continue;
    comp[s] = ncomp;
    std::vector<int> q{s};
    for (std::size_t qi = 0; qi < q.size(); ++qi)
      for (int bi : m.bonds_of(q[qi])) {
        if (cut[bi]) continue;
        int to = m.bond(bi).other(q[qi]);
        if (comp[to] == -1) {
          comp[to] = ncomp;
          q.push_back(to);
        }
      }
    ++ncomp;
  }
  std::vector<Fragment> frags(ncomp);
  for (int i = 0; i < m.atom_count(); ++i) frags[comp[i]].atoms.push_back(i);
  for (int bi : cut_bonds) {
    const chem::Bond& b = m.bond(bi);
    frags[comp[b.a]].attach.push_back(b.a);
    frags[comp[b.b]].attach.push_back(b.b);
  }
  return frags;
}

// Copy a fragment into the builder; returns mapping old->new.
inline std::vector<int> copy_fragment(chem::MoleculeBuilder& b, const Molecule& m,
                                      const Fragment& f) {
  std::vector<int> map(m.atom_count(), -1);
  for (int old : f.atoms) {
    const chem::Atom& a = m.atom(old);
    map[old] = b.add_atom(a.element, a.formal_charge, false,
                          a.explicit_h_set ? std::optional<int>(a.implicit_h) : std::nullopt);
  }
  std::set<int> in_frag(f.atoms.begin(), f.atoms.end());
  std::set<std::pair<int, int>> added;
  for (int old : f.atoms)
    for (int bi : m.bonds_of(old)) {
      const chem::Bond& bd = m.bond(bi);
      if (!in_frag.count(bd.a) || !in_frag.count(bd.b)) continue;
      auto key = std::minmax(bd.a, bd.b);
      if (!added.insert({key.first, key.second}).second) continue;
      b.add_bond(map[bd.a], map[bd.b], bd.order);
    }
  return map;
}

// One fragment extraction: cut a random acyclic single bond (non-ring cut) or
// a random single-bond pair inside one ring (ring cut); pick one side.
inline std::optional<Fragment> extract_fragment(const Molecule& m, std::mt19937_64& rng,
                                                bool ring_cut, std::vector<int>& cut_bonds_out) {
  if (!ring_cut) {
    std::vector<int> eligible;
    for (int bi = 0; bi < m.bond_count(); ++bi) {
      const chem::Bond& b = m.bond(bi);
      if (!b.in_ring && b.order == 1 && !b.aromatic) eligible.push_back(bi);
    }
    if (eligible.empty()) return std::nullopt;
    int bi = eligible[rand_int(rng, static_cast<int>(eligible.size()))];
    auto frags = split_at(m, {bi});
    if (frags.size() != 2) return std::nullopt;
    cut_bonds_out = {bi};
    return frags[rand_int(rng, 2)];
  }
  // ring cut: two distinct non-aromatic single ring bonds from one SSSR ring
  const auto& rings = m.sssr();
  if (rings.empty()) return std::nullopt;
  std::vector<std::vector<int>> ring_bond_sets;
  for (const auto& ring : rings) {
    std::vector<int> bonds;
    for (std::size_t i = 0; i < ring.size(); ++i) {
      const chem::Bond* b = m.bond_between(ring[i], ring[(i + 1) % ring.size()]);
      if (b && b->order == 1 && !b->aromatic)
        bonds.push_back(static_cast<int>(b - m.bonds().data()));
    }
    if (bonds.size() >= 2) ring_bond_sets.push_back(std::move(bonds));
  }
  if (ring_bond_sets.empty()) return std::nullopt;
  const auto& bonds = ring_bond_sets[rand_int(rng, static_cast<int>(ring_bond_sets.size()))];
  int i = rand_int(rng, static_cast<int>(bonds.size()));
  int j = rand_int(rng, static_cast<int>(bonds.size()) - 1);
  if (j >= i) ++j;
  auto frags = split_at(m, {bonds[i], bonds[j]});
  if (frags.size() != 2) return std::nullopt;  // fused ring kept the graph connected
  cut_bonds_out = {bonds[i], bonds[j]};
  return frags[rand_int(rng, 2)];
}

}  // namespace detail

// Jensen-style crossover: cut one fragment out of each parent (ring or
// non-ring cut, 50/50 per parent) and rejoin the open valences with single
// bonds. Absent result after 20 attempts is a normal outcome.
inline std::optional<Molecule> ga_crossover(const Molecule& a, const Molecule& b,
                                            std::mt19937_64& rng, int max_heavy = 80) {
  for (int attempt = 0; attempt < 20; ++attempt) {
    bool ring_a = detail::rand_real(rng) < 0.5;
    bool ring_b = detail::rand_real(rng) < 0.5;
    std::vector<int> cuts_a, cuts_b;
    auto fa = detail::extract_fragment(a, rng, ring_a, cuts_a);
    auto fb = detail::extract_fragment(b, rng, ring_b, cuts_b);
    if (!fa || !fb) continue;
    try {
      chem::MoleculeBuilder builder;
      auto map_a = detail::copy_fragment(builder, a, *fa);
      auto map_b = detail::copy_fragment(builder, b, *fb);
      std::vector<int> attach_a, attach_b;
      for (int x : fa->attach) attach_a.push_back(map_a[x]);
      for (int x : fb->attach) attach_b.push_back(map_b[x]);
      if (attach_a.empty() || attach_b.empty()) continue;
      if (attach_a.size() == 2 && attach_b.size() == 2) {
        if (detail::rand_real(rng) < 0.5) std::swap(attach_b[0], attach_b[1]);
        builder.add_bond(attach_a[0], attach_b[0], 1);
        builder.add_bond(attach_a[1], attach_b[1], 1);
      } else {
        builder.add_bond(attach_a[0], attach_b[0], 1);
      }
      Molecule child = builder.finalize();
      if (detail::heavy_atoms(child) > max_heavy) continue;
      return child;
    } catch (const chem::ChemError&) {
      continue;
    }
  }
  return std::nullopt;
}

// One of seven structural mutations, applied with the given probability.
// Returns the input unchanged when the mutation does not fire and nullopt
// when it fires but no valid mutation is found in 20 attempts.
inline std::optional<Molecule> ga_mutate(const Molecule& mol, std::mt19937_64& rng, double rate) {
  if (detail::rand_real(rng) >= rate) return mol;

  static const chem::Element kElems[] = {chem::Element::C,  chem::Element::N, chem::Element::O,
                                         chem::Element::F,  chem::Element::S, chem::Element::Cl,
                                         chem::Element::Br};
  static const chem::Element kBridge[] = {chem::Element::C, chem::Element::N, chem::Element::O,
                                          chem::Element::S};

  for (int attempt = 0; attempt < 20; ++attempt) {
    int op = detail::rand_int(rng, 7);
    try {
      chem::MoleculeBuilder b = chem::MoleculeBuilder::from_kekule(mol);
      switch (op) {
        case 0: {  // insert atom into a bond
          if (mol.bond_count() == 0) continue;
          int bi = detail::rand_int(rng, mol.bond_count());
          chem::Element e = kBridge[detail::rand_int(rng, 4)];
          auto& bonds = b.bonds();
          int u = bonds[bi].a, v = bonds[bi].b;
          bonds.erase(bonds.begin() + bi);
          int x = b.add_atom(e);
          b.add_bond(u, x, 1);
          b.add_bond(x, v, 1);
          break;
        }
        case 1: {  // change bond order
          if (mol.bond_count() == 0) continue;
          int bi = detail::rand_int(rng, mol.bond_count());
          int cur = mol.bond(bi).order;
          int next = 1 + detail::rand_int(rng, 3);
          if (next == cur) continue;
          int delta = next - cur;
          if (delta > 0 &&
              (detail::spare_valence(mol, mol.bond(bi).a) < delta ||
               detail::spare_valence(mol, mol.bond(bi).b) < delta))
            continue;
          b.bonds()[bi].order = next;
          break;
        }
        case 2: {  // delete cyclic bond
          std::vector<int> ring_bonds;
          for (int bi = 0; bi < mol.bond_count(); ++bi)
            if (mol.bond(bi).in_ring) ring_bonds.push_back(bi);
          if (ring_bonds.empty()) continue;
          int bi = ring_bonds[detail::rand_int(rng, static_cast<int>(ring_bonds.size()))];
          b.bonds().erase(b.bonds().begin() + bi);
          break;
        }
        case 3: {  // add a 5- or 6-ring
          std::vector<std::pair<int, int>> pairs;
          for (int u = 0; u < mol.atom_count(); ++u) {
            if (detail::spare_valence(mol, u) < 1) continue;
            auto dist = detail::bfs_distances(mol, u);
            for (int v = u + 1; v < mol.atom_count(); ++v)
              if ((dist[v] == 4 || dist[v] == 5) && detail::spare_valence(mol, v) >= 1 &&
                  !mol.bond_between(u, v))
                pairs.push_back({u, v});
          }
          if (pairs.empty()) continue;
          auto [u, v] = pairs[detail::rand_int(rng, static_cast<int>(pairs.size()))];
          b.add_bond(u, v, 1);
          break;
        }
        case 4: {  // delete atom (degree <= 2, reconnect through)
          if (mol.atom_count() < 2) continue;
          std::vector<int> cands;
          for (int i = 0; i < mol.atom_count(); ++i)
            if (mol.degree(i) <= 2) cands.push_back(i);
          if (cands.empty()) continue;
          int victim = cands[detail::rand_int(rng, static_cast<int>(cands.size()))];
          std::vector<int> nbrs;
          for (int bi : mol.bonds_of(victim)) nbrs.push_back(mol.bond(bi).other(victim));
          chem::MoleculeBuilder nb;
          std::vector<int> map(mol.atom_count(), -1);
          for (int i = 0; i < mol.atom_count(); ++i) {
            if (i == victim) continue;
            const chem::Atom& at = mol.atom(i);
            map[i] = nb.add_atom(at.element, at.formal_charge, false,
                                 at.explicit_h_set ? std::optional<int>(at.implicit_h)
                                                   : std::nullopt);
          }
          for (const chem::Bond& bd : mol.bonds()) {
            if (bd.a == victim || bd.b == victim) continue;
            nb.add_bond(map[bd.a], map[bd.b], bd.order);
          }
          if (nbrs.size() == 2 && !mol.bond_between(nbrs[0], nbrs[1]))
            nb.add_bond(map[nbrs[0]], map[nbrs[1]], 1);
          return nb.finalize();
        }
        case 5: {  // change atom element
          int i = detail::rand_int(rng, mol.atom_count());
          chem::Element e = kElems[detail::rand_int(rng, 7)];
          if (e == mol.atom(i).element && mol.atom(i).formal_charge == 0) continue;
          if (chem::max_allowed_valence(e, 0) < mol.bond_order_sum(i)) continue;
          b.atoms()[i].element = e;
          b.atoms()[i].formal_charge = 0;
          b.atoms()[i].explicit_h_set = false;
          b.atoms()[i].explicit_h = 0;
          break;
        }
        default: {  // append atom
          std::vector<int> sites;
          for (int i = 0; i < mol.atom_count(); ++i)
            if (detail::spare_valence(mol, i) >= 1) sites.push_back(i);
          if (sites.empty()) continue;
          int site = sites[detail::rand_int(rng, static_cast<int>(sites.size()))];
          chem::Element e = kElems[detail::rand_int(rng, 7)];
          int x = b.add_atom(e);
          b.add_bond(site, x, 1);
          break;
        }
      }
      return b.finalize();
    } catch (const chem::ChemError&) {
      continue;
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Gaussian process with Tanimoto kernel, exact Cholesky posterior.
// ---------------------------------------------------------------------------

struct GPModel {
  std::vector<Fingerprint> x;
  std::vector<double> y;
  double amplitude = 1.0;  // sigma_f^2
  double jitter = 1e-4;
  double mean = 0.0;
  std::vector<double> chol;   // lower triangular, row-major n x n
  std::vector<double> alpha;  // (K + jitter I)^{-1} (y - mean)

  int size() const { return static_cast<int>(y.size()); }
};

namespace detail {

inline bool cholesky_inplace(std::vector<double>& a, int n) {
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = a[i * n + j];
      for (int k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
      if (i == j) {
        if (s <= 0) return false;
        a[i * n + i] = std::sqrt(s);
      } else {
        a[i * n + j] = s / a[j * n + j];
      }
    }
    for (int j = i + 1; j < n; ++j) a[i * n + j] = 0;
  }
  return true;
}

inline void solve_lower(const std::vector<double>& l, int n, std::vector<double>& b) {
  for (int i = 0; i < n; ++i) {
    double s = b[i];
    for (int k = 0; k < i; ++k) s -= l[i * n + k] * b[k];
    b[i] = s / l[i * n + i];
  }
}

inline void solve_upper_t(const std::vector<double>& l, int n, std::vector<double>& b) {
  for (int i = n - 1; i >= 0; --i) {
    double s = b[i];
    for (int k = i + 1; k < n; ++k) s -= l[k * n + i] * b[k];
    b[i] = s / l[i * n + i];
  }
}

}  // namespace detail

// Fit: factorize amplitude * Tanimoto(x, x') + jitter I, escalating jitter
// by x10 up to two retries before giving up.
inline GPModel gp_fit(std::vector<Fingerprint> x, std::vector<double> y, double amplitude = 1.0,
                      double jitter = 1e-4) {
  if (x.size() != y.size() || x.empty()) throw ConfigError("gp_fit needs |X| = |y| >= 1");
  GPModel m;
  m.x = std::move(x);
  m.y = std::move(y);
  m.amplitude = amplitude;
  int n = m.size();
  m.mean = 0;
  for (double v : m.y) m.mean += v;
  m.mean /= n;

  std::vector<double> base(n * n);
  for (int i = 0; i < n; ++i) {
    base[i * n + i] = amplitude;
    for (int j = 0; j < i; ++j) {
      double k = amplitude * fingerprint::tanimoto(m.x[i], m.x[j]);
      base[i * n + j] = k;
      base[j * n + i] = k;
    }
  }
  double j = jitter;
  for (int attempt = 0; attempt < 3; ++attempt, j *= 10) {
    std::vector<double> a = base;
    for (int i = 0; i < n; ++i) a[i * n + i] += j;
    if (detail::cholesky_inplace(a, n)) {
      m.jitter = j;
      m.chol = std::move(a);
      m.alpha.assign(n, 0.0);
      for (int i = 0; i < n; ++i) m.alpha[i] = m.y[i] - m.mean;
      detail::solve_lower(m.chol, n, m.alpha);
      detail::solve_upper_t(m.chol, n, m.alpha);
      return m;
    }
  }
  throw SingularKernel("kernel matrix not positive definite after jitter escalation");
}

// Exact posterior mean and variance at a candidate fingerprint.
inline std::pair<double, double> gp_posterior(const GPModel& m, const Fingerprint& fp) {
  int n = m.size();
  std::vector<double> k(n);
  for (int i = 0; i < n; ++i) k[i] = m.amplitude * fingerprint::tanimoto(fp, m.x[i]);
  double mu = m.mean;
  for (int i = 0; i < n; ++i) mu += k[i] * m.alpha[i];
  std::vector<double> v = k;
  detail::solve_lower(m.chol, n, v);
  double var = m.amplitude;
  for (int i = 0; i < n; ++i) var -= v[i] * v[i];
  return {mu, std::max(0.0, var)};
}

// Expected improvement with closed-form normal CDF/PDF; the sigma -> 0 limit
// is max(mu - best, 0).
inline double expected_improvement(double mu, double sigma, double best) {
  if (sigma < 1e-12) return std::max(mu - best, 0.0);
  double z = (mu - best) / sigma;
  double cdf = 0.5 * std::erfc(-z / std::sqrt(2.0));
  double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
  return (mu - best) * cdf + sigma * pdf;
}

inline double gp_acquire(const GPModel& m, const Fingerprint& fp, double best) {
  auto [mu, var] = gp_posterior(m, fp);
  return expected_improvement(mu, std::sqrt(var), best);
}

}  // namespace molbench::optimize

#include "molbench/optimize_algos.hpp"
