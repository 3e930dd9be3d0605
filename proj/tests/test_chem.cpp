#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>
#include <set>

#include "molbench/chem.hpp"
#include "molbench/smiles.hpp"
#include "support/graph_iso.hpp"

using namespace molbench;
using namespace molbench::chem;
using molbench::testsupport::graph_isomorphic;

namespace {

// SMILES from drug-like space used across round-trip and invariance checks.
const std::vector<std::string> kCorpus = {
    "CCO",
    "CC(=O)OC1=CC=CC=C1C(=O)O",
    "c1ccccc1",
    "c1ccc2ccccc2c1",
    "CC(C)Cc1ccc(cc1)C(C)C(=O)O",
    "CN1C=NC2=C1C(=O)N(C)C(=O)N2C",
    "Cc1ccc(cc1)S(=O)(=O)N",
    "C1CCNCC1",
    "c1cc[nH]c1",
    "c1ccoc1",
    "c1ccsc1",
    "c1ccncc1",
    "OC(=O)c1ccccc1O",
    "CC(C)(C)c1ccccc1",
    "[NH4+]",
    "[O-]C(=O)C",
    "ClC(Cl)(Cl)Cl",
    "N#Cc1ccccc1",
    "C1=CC2=CC=CC=C2C=C1",
    "CC1=CC=C(C=C1)C1=CC(=NN1C1=CC=C(C=C1)S(N)(=O)=O)C(F)(F)F",
    "O=C(Nc1ccc(cc1)O)C",
    "C1CC2CCC1CC2",
    "CC(N)C(=O)O",
    "c1ccc(cc1)-c1ccccc1",
    "C#C",
    "OCC(O)CO",
    "FC(F)(F)c1ccccc1",
    "S=C=S",
    "C1=CC=C2C(=C1)C=CC=C2O",
    "CCOP(=O)(OCC)OCC",
};

Molecule relabel(const Molecule& m, const std::vector<int>& perm) {
  // perm[i] = new index of old atom i
  MoleculeBuilder b;
  int n = m.atom_count();
  std::vector<int> inv(n);
  for (int i = 0; i < n; ++i) inv[perm[i]] = i;
  for (int ni = 0; ni < n; ++ni) {
    const Atom& a = m.atom(inv[ni]);
    std::optional<int> h;
    if (a.explicit_h_set) h = a.explicit_h;
    b.add_atom(a.element, a.formal_charge, a.aromatic, h);
  }
  for (const Bond& bd : m.bonds())
    b.add_bond(perm[bd.a], perm[bd.b], bd.order, bd.aromatic);
  return b.finalize();
}

// Brute-force enumeration of all simple cycles (test oracle for SSSR sizes).
void all_cycles_from(const Molecule& m, int start, std::vector<int>& path,
                     std::vector<bool>& on_path, std::set<std::vector<int>>& out) {
  int v = path.back();
  for (int bi : m.bonds_of(v)) {
    int to = m.bond(bi).other(v);
    if (to == start && path.size() >= 3) {
      std::vector<int> cyc = path;
      std::sort(cyc.begin(), cyc.end());
      out.insert(cyc);
    } else if (!on_path[to] && to > start) {
      on_path[to] = true;
      path.push_back(to);
      all_cycles_from(m, start, path, on_path, out);
      path.pop_back();
      on_path[to] = false;
    }
  }
}

std::set<std::vector<int>> all_simple_cycles(const Molecule& m) {
  std::set<std::vector<int>> out;
  for (int s = 0; s < m.atom_count(); ++s) {
    std::vector<int> path{s};
    std::vector<bool> on_path(m.atom_count(), false);
    on_path[s] = true;
    all_cycles_from(m, s, path, on_path, out);
  }
  return out;
}

}  // namespace

TEST_CASE("ethanol basics") {
  Molecule m = parse_smiles("CCO");
  REQUIRE(m.atom_count() == 3);
  auto f = molecular_formula(m);
  CHECK(f.count(Element::C) == 2);
  CHECK(f.count(Element::H) == 6);
  CHECK(f.count(Element::O) == 1);
  CHECK(f.net_charge == 0);
  CHECK(sssr_rings(m).empty());
}

TEST_CASE("cyclopropane ring flags") {
  Molecule m = parse_smiles("C1CC1");
  REQUIRE(m.atom_count() == 3);
  for (int i = 0; i < 3; ++i) CHECK(m.atom(i).in_ring);
  REQUIRE(sssr_rings(m).size() == 1);
  CHECK(sssr_rings(m)[0].size() == 3);
}

TEST_CASE("syntax errors") {
  CHECK_THROWS_AS(parse_smiles("C("), SyntaxError);
  CHECK_THROWS_AS(parse_smiles("C1CC"), SyntaxError);
  CHECK_THROWS_AS(parse_smiles("C)"), SyntaxError);
  CHECK_THROWS_AS(parse_smiles("C="), SyntaxError);
  CHECK_THROWS_AS(parse_smiles(""), SyntaxError);
  CHECK_THROWS_AS(parse_smiles("C?C"), SyntaxError);
  CHECK_THROWS_AS(parse_smiles("[NH4"), SyntaxError);
  CHECK_THROWS_AS(parse_smiles("C11"), SyntaxError);
  CHECK_THROWS_AS(parse_smiles("cc"), SyntaxError);
}

TEST_CASE("unsupported and multifragment") {
  CHECK_THROWS_AS(parse_smiles("[Se]C"), UnsupportedError);
  CHECK_THROWS_AS(parse_smiles("[Na+].[Cl-]"), UnsupportedError);
  CHECK_THROWS_AS(parse_smiles("CC.CC"), MultiFragmentError);
}

TEST_CASE("valence errors") {
  CHECK_THROWS_AS(parse_smiles("C(C)(C)(C)(C)C"), ValenceError);
  CHECK_THROWS_AS(parse_smiles("F=C"), ValenceError);
  CHECK_THROWS_AS(parse_smiles("O(C)(C)C"), ValenceError);
  CHECK_THROWS_AS(parse_smiles("[CH3]"), ValenceError);  // radical H count
  CHECK_THROWS_AS(parse_smiles("N(=O)=O"), ValenceError);
}

TEST_CASE("benzene kekulization") {
  Molecule m = parse_smiles("c1ccccc1");
  REQUIRE(m.atom_count() == 6);
  int doubles = 0;
  for (const Bond& b : m.bonds()) {
    CHECK(b.aromatic);
    CHECK(b.in_ring);
    doubles += b.order == 2;
  }
  CHECK(doubles == 3);
  for (int i = 0; i < 6; ++i) {
    CHECK(m.atom(i).aromatic);
    CHECK(m.atom(i).implicit_h == 1);
    CHECK(m.bond_order_sum(i) == 3);
  }
  auto f = molecular_formula(m);
  CHECK(f.count(Element::C) == 6);
  CHECK(f.count(Element::H) == 6);
}

TEST_CASE("both benzene kekule assignments satisfy valence") {
  // Construct the two alternating assignments directly.
  for (int phase : {0, 1}) {
    MoleculeBuilder b;
    for (int i = 0; i < 6; ++i) b.add_atom(Element::C, 0, true);
    for (int i = 0; i < 6; ++i) {
      int order = (i % 2 == phase) ? 2 : 1;
      b.add_bond(i, (i + 1) % 6, order, true);
    }
    // Skip kekulization by pre-assigning orders: finalize re-kekulizes from
    // aromatic flags, so instead check valence arithmetic by building the
    // kekule form without flags.
    MoleculeBuilder k;
    for (int i = 0; i < 6; ++i) k.add_atom(Element::C);
    for (int i = 0; i < 6; ++i) k.add_bond(i, (i + 1) % 6, (i % 2 == phase) ? 2 : 1);
    Molecule m = k.finalize();
    for (int i = 0; i < 6; ++i) CHECK(m.atom(i).implicit_h == 1);
  }
}

TEST_CASE("aromatic heterocycles") {
  Molecule pyrrole = parse_smiles("c1cc[nH]c1");
  auto f = molecular_formula(pyrrole);
  CHECK(f.count(Element::C) == 4);
  CHECK(f.count(Element::N) == 1);
  CHECK(f.count(Element::H) == 5);

  Molecule pyridine = parse_smiles("c1ccncc1");
  f = molecular_formula(pyridine);
  CHECK(f.count(Element::H) == 5);

  Molecule furan = parse_smiles("c1ccoc1");
  f = molecular_formula(furan);
  CHECK(f.count(Element::H) == 4);

  Molecule imidazole = parse_smiles("c1c[nH]cn1");
  f = molecular_formula(imidazole);
  CHECK(f.count(Element::H) == 4);
  CHECK(f.count(Element::N) == 2);
}

TEST_CASE("formula examples") {
  auto f = molecular_formula(parse_smiles("[NH4+]"));
  CHECK(f.count(Element::N) == 1);
  CHECK(f.count(Element::H) == 4);
  CHECK(f.net_charge == 1);

  f = molecular_formula(parse_smiles("[O-]C(=O)C"));
  CHECK(f.net_charge == -1);
}

TEST_CASE("descriptors") {
  auto d = basic_descriptors(parse_smiles("CCO"));
  CHECK(d.mol_weight == Catch::Approx(46.069).margin(0.01));
  CHECK(d.heavy_atom_count == 3);
  CHECK(d.ring_count == 0);

  d = basic_descriptors(parse_smiles("c1ccccc1"));
  CHECK(d.ring_count == 1);
  CHECK(d.aromatic_ring_count == 1);
  CHECK(d.rotatable_bond_count == 0);

  d = basic_descriptors(parse_smiles("c1ccc2ccccc2c1"));
  CHECK(d.ring_count == 2);  // |E|-|V|+1 = 11-10+1
  CHECK(d.aromatic_ring_count == 2);

  d = basic_descriptors(parse_smiles("CCOP(=O)(OCC)OCC"));
  CHECK(d.rotatable_bond_count == 6);
}

TEST_CASE("sssr basics") {
  CHECK(sssr_rings(parse_smiles("CCO")).empty());
  auto rings = sssr_rings(parse_smiles("c1ccccc1"));
  REQUIRE(rings.size() == 1);
  CHECK(rings[0].size() == 6);
}

TEST_CASE("naphthalene sssr vs brute force") {
  Molecule m = parse_smiles("c1ccc2ccccc2c1");
  auto rings = sssr_rings(m);
  REQUIRE(rings.size() == 2);
  CHECK(rings[0].size() == 6);
  CHECK(rings[1].size() == 6);
  // oracle: the two smallest simple cycles are the two 6-cycles
  auto cycles = all_simple_cycles(m);
  std::vector<std::size_t> sizes;
  for (auto& c : cycles) sizes.push_back(c.size());
  std::sort(sizes.begin(), sizes.end());
  REQUIRE(sizes.size() == 3);  // two hexagons + the 10-ring envelope
  CHECK(sizes[0] == 6);
  CHECK(sizes[1] == 6);
  CHECK(sizes[2] == 10);
}

TEST_CASE("canonical smiles equality") {
  CHECK(to_canonical_smiles(parse_smiles("OCC")) == to_canonical_smiles(parse_smiles("CCO")));
  CHECK(to_canonical_smiles(parse_smiles("C1=CC=CC=C1")) ==
        to_canonical_smiles(parse_smiles("c1ccccc1")));
  CHECK(graph_isomorphic(parse_smiles("C1=CC=CC=C1"), parse_smiles("c1ccccc1")));
}

TEST_CASE("canonical fixed point on corpus") {
  for (const auto& s : kCorpus) {
    Molecule m = parse_smiles(s);
    std::string c1 = to_canonical_smiles(m);
    Molecule m2 = parse_smiles(c1);
    std::string c2 = to_canonical_smiles(m2);
    INFO("input: " << s << " canonical: " << c1);
    CHECK(c1 == c2);
    CHECK(graph_isomorphic(m, m2));
  }
}

TEST_CASE("canonical permutation invariance") {
  std::mt19937_64 rng(12345);
  for (const auto& s : kCorpus) {
    Molecule m = parse_smiles(s);
    std::string expect = to_canonical_smiles(m);
    int n = m.atom_count();
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    int shuffles = n > 1 ? 100 : 1;
    for (int trial = 0; trial < shuffles; ++trial) {
      std::shuffle(perm.begin(), perm.end(), rng);
      Molecule r = relabel(m, perm);
      INFO("input: " << s << " trial " << trial);
      REQUIRE(to_canonical_smiles(r) == expect);
    }
  }
}

TEST_CASE("formula additivity") {
  for (const auto& s : kCorpus) {
    Molecule m = parse_smiles(s);
    ElementCounts f = molecular_formula(m);
    std::map<Element, int> manual;
    int charge = 0;
    for (int i = 0; i < m.atom_count(); ++i) {
      manual[m.atom(i).element] += 1;
      if (m.atom(i).implicit_h) manual[Element::H] += m.atom(i).implicit_h;
      charge += m.atom(i).formal_charge;
    }
    CHECK(f.counts == manual);
    CHECK(f.net_charge == charge);
  }
}

TEST_CASE("stereo and isotope dropped with warning") {
  Molecule m = parse_smiles("C[C@@H](O)F");
  CHECK(m.dropped_input_features());
  m = parse_smiles("[13CH4]");
  CHECK(m.dropped_input_features());
  m = parse_smiles("F/C=C/F");
  CHECK(m.dropped_input_features());
  CHECK_FALSE(parse_smiles("CCO").dropped_input_features());
}

TEST_CASE("biphenyl single bond between rings") {
  Molecule a = parse_smiles("c1ccc(cc1)-c1ccccc1");
  Molecule b = parse_smiles("c1ccccc1c1ccccc1");
  CHECK(to_canonical_smiles(a) == to_canonical_smiles(b));
  // the junction bond is single and non-aromatic
  int arom_bonds = 0;
  for (const Bond& bd : a.bonds()) arom_bonds += bd.aromatic;
  CHECK(arom_bonds == 12);
  CHECK(a.bond_count() == 13);
}

TEST_CASE("charged atoms round trip") {
  for (const char* s : {"[NH4+]", "C[N+](C)(C)C", "[O-]c1ccccc1", "CC(=O)[O-]"}) {
    Molecule m = parse_smiles(s);
    Molecule m2 = parse_smiles(to_canonical_smiles(m));
    CHECK(graph_isomorphic(m, m2));
  }
}

TEST_CASE("ring closure percent digits") {
  Molecule a = parse_smiles("C%12CC%12");
  Molecule b = parse_smiles("C1CC1");
  CHECK(to_canonical_smiles(a) == to_canonical_smiles(b));
}
