#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "molbench/patterns.hpp"
#include "molbench/smiles.hpp"

using namespace molbench;
using namespace molbench::patterns;
using chem::parse_smiles;

namespace {

// Independent oracle: enumerate every ordered injective mapping by brute
// force over atom tuples, then dedupe by sorted atom set.
int brute_force_count(const chem::Molecule& m, const Pattern& p) {
  int pn = p.atom_count();
  std::vector<int> assign(pn, -1);
  std::vector<bool> used(m.atom_count(), false);
  std::set<std::vector<int>> dedup;
  std::function<void(int)> rec = [&](int depth) {
    if (depth == pn) {
      std::vector<int> atoms(assign.begin(), assign.end());
      std::sort(atoms.begin(), atoms.end());
      dedup.insert(atoms);
      return;
    }
    for (int cand = 0; cand < m.atom_count(); ++cand) {
      if (used[cand]) continue;
      if (!p.atom_matches(m, depth, cand)) continue;
      bool ok = true;
      for (int bi : p.bonds_of(depth)) {
        const PatternBond& pb = p.bonds()[bi];
        int other = pb.other(depth);
        if (other > depth || assign[other] < 0) continue;
        const chem::Bond* mb = m.bond_between(cand, assign[other]);
        if (!mb || !Pattern::bond_matches(pb.pred, *mb)) {
          ok = false;
          break;
        }
      }
      // also verify no pattern bond to an unmapped earlier atom is skipped
      if (ok) {
        assign[depth] = cand;
        used[cand] = true;
        rec(depth + 1);
        assign[depth] = -1;
        used[cand] = false;
      }
    }
  };
  rec(0);
  // brute force above prunes partially; verify full bond set per match is
  // implied because every bond connects atoms with lower-or-equal indices
  // once depth reaches pn.
  return static_cast<int>(dedup.size());
}

}  // namespace

TEST_CASE("pattern parse basics") {
  Pattern p = parse_pattern("c1ccccc1");
  CHECK(p.atom_count() == 6);
  CHECK(p.bond_count() == 6);

  CHECK_THROWS_AS(parse_pattern("[$(CC)]"), PatternUnsupportedError);
  CHECK_THROWS_AS(parse_pattern(""), PatternSyntaxError);
  CHECK_THROWS_AS(parse_pattern("C1CC"), PatternSyntaxError);
  CHECK_THROWS_AS(parse_pattern("C.C"), PatternUnsupportedError);
  CHECK_THROWS_AS(parse_pattern("[C@H]"), PatternUnsupportedError);
}

TEST_CASE("negation and ring predicate") {
  // [!C;R]: not-aliphatic-carbon AND in-ring
  Pattern p = parse_pattern("[!C;R]");
  chem::Molecule pyridine = parse_smiles("c1ccncc1");
  // all six ring atoms are aromatic (not aliphatic C); six matches
  CHECK(match_count(pyridine, p) == 6);
  chem::Molecule hexane = parse_smiles("CCCCCC");
  CHECK_FALSE(has_match(hexane, p));
  chem::Molecule cyclohexane = parse_smiles("C1CCCCC1");
  CHECK_FALSE(has_match(cyclohexane, p));  // aliphatic carbons excluded by !C
  chem::Molecule thf = parse_smiles("C1CCOC1");
  CHECK(match_count(thf, p) == 1);  // only the ring oxygen
}

TEST_CASE("has_match basics") {
  CHECK(has_match(parse_smiles("CCO"), parse_pattern("O")));
  CHECK_FALSE(has_match(parse_smiles("CCO"), parse_pattern("N")));
  CHECK(has_match(parse_smiles("CC(=O)O"), parse_pattern("C=O")));
  CHECK_FALSE(has_match(parse_smiles("c1ccccc1"), parse_pattern("C1CCCCC1")));
  CHECK(has_match(parse_smiles("C1CCCCC1"), parse_pattern("C1CCCCC1")));
  CHECK(has_match(parse_smiles("c1ccccc1"), parse_pattern("c1ccccc1")));
}

TEST_CASE("match_count basics") {
  CHECK(match_count(parse_smiles("CCO"), parse_pattern("C")) == 2);
  CHECK(match_count(parse_smiles("CCO"), parse_pattern("[OH]")) == 1);
  CHECK(match_count(parse_smiles("c1ccccc1"), parse_pattern("cc")) == 6);
  CHECK(match_count(parse_smiles("CCO"), parse_pattern("N")) == 0);
}

TEST_CASE("benzene cc count vs brute force") {
  chem::Molecule benzene = parse_smiles("c1ccccc1");
  Pattern cc = parse_pattern("cc");
  CHECK(brute_force_count(benzene, cc) == 6);
  CHECK(match_count(benzene, cc) == brute_force_count(benzene, cc));
}

TEST_CASE("count equals brute force on varied cases") {
  struct Case {
    const char* mol;
    const char* pat;
  };
  const Case cases[] = {
      {"c1ccc2ccccc2c1", "cc"},
      {"c1ccc2ccccc2c1", "c1ccccc1"},
      {"CC(C)Cc1ccc(cc1)C(C)C(=O)O", "C(=O)O"},
      {"CC(C)Cc1ccc(cc1)C(C)C(=O)O", "[CH3]"},
      {"CCOCC", "COC"},
      {"C1CCCCC1", "CCC"},
      {"CC(=O)OC1=CC=CC=C1C(=O)O", "c1ccccc1"},
      {"CC(=O)OC1=CC=CC=C1C(=O)O", "[OH]"},
      {"CN1C=NC2=C1C(=O)N(C)C(=O)N2C", "[#7]"},
      {"OCC(O)CO", "[OX2H]"},
  };
  for (const auto& c : cases) {
    chem::Molecule m = parse_smiles(c.mol);
    Pattern p = parse_pattern(c.pat);
    INFO("mol " << c.mol << " pattern " << c.pat);
    CHECK(match_count(m, p) == brute_force_count(m, p));
  }
}

TEST_CASE("bond predicates") {
  chem::Molecule propene = parse_smiles("CC=C");
  CHECK(has_match(propene, parse_pattern("C=C")));
  CHECK(has_match(propene, parse_pattern("C~C")));
  CHECK_FALSE(has_match(propene, parse_pattern("C#C")));
  // '-' rejects the double bond, accepts the single one
  CHECK(match_count(propene, parse_pattern("C-C")) == 1);
  // aromatic bond predicate only matches aromatic-flagged bonds
  chem::Molecule benzene = parse_smiles("c1ccccc1");
  CHECK(has_match(benzene, parse_pattern("c:c")));
  CHECK_FALSE(has_match(parse_smiles("C=C"), parse_pattern("*:*")));
  // default bond is single-or-aromatic
  CHECK(has_match(benzene, parse_pattern("cc")));
  CHECK_FALSE(has_match(propene, parse_pattern("[CH2]C[CH3]")));
}

TEST_CASE("charge and H predicates") {
  chem::Molecule tma = parse_smiles("C[N+](C)(C)C");
  CHECK(has_match(tma, parse_pattern("[N+]")));
  CHECK_FALSE(has_match(tma, parse_pattern("[N+2]")));
  chem::Molecule acetate = parse_smiles("CC(=O)[O-]");
  CHECK(has_match(acetate, parse_pattern("[O-]")));
  CHECK(match_count(acetate, parse_pattern("[H3]")) == 1);  // the methyl carbon
  CHECK(has_match(acetate, parse_pattern("[CD3]")));        // carbonyl carbon, 3 connections
}

TEST_CASE("matching invariant under relabeling") {
  chem::Molecule m = parse_smiles("CC(C)Cc1ccc(cc1)C(C)C(=O)O");
  Pattern p = parse_pattern("c1ccc(cc1)");
  int expect = match_count(m, p);

  // reparse from canonical (different atom order) and compare
  chem::Molecule m2 = parse_smiles(chem::to_canonical_smiles(m));
  CHECK(match_count(m2, p) == expect);
}

TEST_CASE("canonical smiles of molecule matches itself as pattern") {
  for (const char* s : {"CCO", "C1CCCCC1", "CC(=O)O", "CCN"}) {
    chem::Molecule m = parse_smiles(s);
    Pattern p = parse_pattern(chem::to_canonical_smiles(m));
    INFO("smiles " << s);
    CHECK(has_match(m, p));
  }
}

TEST_CASE("match_count at least one iff has_match") {
  std::vector<const char*> mols = {"CCO", "c1ccccc1", "CC(=O)OC1=CC=CC=C1C(=O)O", "C1CCNCC1"};
  std::vector<const char*> pats = {"C", "N", "[R]", "[!C]", "O=C", "[NH]", "a", "[X4]"};
  for (const char* ms : mols)
    for (const char* ps : pats) {
      chem::Molecule m = parse_smiles(ms);
      Pattern p = parse_pattern(ps);
      INFO("mol " << ms << " pat " << ps);
      CHECK((match_count(m, p) >= 1) == has_match(m, p));
    }
}
