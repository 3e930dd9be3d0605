#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "molbench/chem.hpp"

namespace molbench::patterns {

using chem::Element;
using chem::Molecule;

class PatternError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class PatternSyntaxError : public PatternError {
 public:
  using PatternError::PatternError;
};
class PatternUnsupportedError : public PatternError {
 public:
  using PatternError::PatternError;
};

// Atom predicate tree. Nodes are stored in a flat arena inside Pattern;
// children reference arena indices.
struct AtomExpr {
  enum class Kind {
    True,              // wildcard *
    AliphaticElement,  // C
    AromaticElement,   // c
    AnyElement,        // #n
    AnyAromatic,       // a
    AnyAliphatic,      // A
    InRing,            // R
    Degree,            // D<n>  (explicit connections)
    TotalH,            // H<n>
    Connections,       // X<n>  (degree + total H)
    Charge,            // +n / -n
    Not,
    And,
    Or,
  };
  Kind kind = Kind::True;
  int value = 0;       // element index, count, or charge
  int lhs = -1;        // child indices for Not/And/Or
  int rhs = -1;
};

enum class BondPred : std::uint8_t {
  Default,  // single or aromatic (unwritten bond)
  Single,
  Double,
  Triple,
  Aromatic,
  Any,
};

struct PatternBond {
  int a = 0;
  int b = 0;
  BondPred pred = BondPred::Default;

  int other(int atom) const { return atom == a ? b : a; }
};

// Parsed SMARTS-subset pattern: predicate trees per atom plus a SMILES-like
// topology (branches and ring closures).
class Pattern {
 public:
  int atom_count() const { return static_cast<int>(roots_.size()); }
  int bond_count() const { return static_cast<int>(bonds_.size()); }
  const std::vector<PatternBond>& bonds() const { return bonds_; }
  const std::vector<int>& bonds_of(int atom) const { return adj_[atom]; }
  const std::string& text() const { return text_; }

  bool atom_matches(const Molecule& m, int pattern_atom, int mol_atom) const {
    return eval(roots_[pattern_atom], m, mol_atom);
  }

  static bool bond_matches(BondPred p, const chem::Bond& b) {
    switch (p) {
      case BondPred::Default:
        return (b.order == 1 && !b.aromatic) || b.aromatic;
      case BondPred::Single:
        return b.order == 1 && !b.aromatic;
      case BondPred::Double:
        return b.order == 2 && !b.aromatic;
      case BondPred::Triple:
        return b.order == 3;
      case BondPred::Aromatic:
        return b.aromatic;
      case BondPred::Any:
        return true;
    }
    return false;
  }

 private:
  friend Pattern parse_pattern(std::string_view);
  std::vector<AtomExpr> arena_;
  std::vector<int> roots_;  // arena index of each pattern atom's predicate
  std::vector<PatternBond> bonds_;
  std::vector<std::vector<int>> adj_;
  std::string text_;

  bool eval(int node, const Molecule& m, int i) const {
    const AtomExpr& e = arena_[node];
    const chem::Atom& a = m.atom(i);
    switch (e.kind) {
      case AtomExpr::Kind::True:
        return true;
      case AtomExpr::Kind::AliphaticElement:
        return static_cast<int>(a.element) == e.value && !a.aromatic;
      case AtomExpr::Kind::AromaticElement:
        return static_cast<int>(a.element) == e.value && a.aromatic;
      case AtomExpr::Kind::AnyElement:
        return chem::atomic_number(a.element) == e.value;
      case AtomExpr::Kind::AnyAromatic:
        return a.aromatic;
      case AtomExpr::Kind::AnyAliphatic:
        return !a.aromatic;
      case AtomExpr::Kind::InRing:
        return a.in_ring;
      case AtomExpr::Kind::Degree:
        return m.degree(i) == e.value;
      case AtomExpr::Kind::TotalH:
        return m.total_h(i) == e.value;
      case AtomExpr::Kind::Connections:
        return m.degree(i) + m.atom(i).implicit_h == e.value;
      case AtomExpr::Kind::Charge:
        return a.formal_charge == e.value;
      case AtomExpr::Kind::Not:
        return !eval(e.lhs, m, i);
      case AtomExpr::Kind::And:
        return eval(e.lhs, m, i) && eval(e.rhs, m, i);
      case AtomExpr::Kind::Or:
        return eval(e.lhs, m, i) || eval(e.rhs, m, i);
    }
    return false;
  }
};

namespace detail {

// Recursive-descent parser for bracket atom expressions.
// Precedence (loosest to tightest): ';' < ',' < '&'/juxtaposition < '!'.
class ExprParser {
 public:
  ExprParser(std::string_view s, std::vector<AtomExpr>& arena) : s_(s), arena_(arena) {}

  int parse() {
    int n = parse_semi();
    if (pos_ != s_.size())
      throw PatternSyntaxError("trailing characters in atom expression: " + std::string(s_));
    return n;
  }

 private:
  std::string_view s_;
  std::size_t pos_ = 0;
  std::vector<AtomExpr>& arena_;

  int add(AtomExpr e) {
    arena_.push_back(e);
    return static_cast<int>(arena_.size()) - 1;
  }

  bool done() const { return pos_ >= s_.size(); }
  char peek() const { return s_[pos_]; }

  int parse_semi() {
    int lhs = parse_comma();
    while (!done() && peek() == ';') {
      ++pos_;
      int rhs = parse_comma();
      lhs = add({AtomExpr::Kind::And, 0, lhs, rhs});
    }
    return lhs;
  }

  int parse_comma() {
    int lhs = parse_and();
    while (!done() && peek() == ',') {
      ++pos_;
      int rhs = parse_and();
      lhs = add({AtomExpr::Kind::Or, 0, lhs, rhs});
    }
    return lhs;
  }

  int parse_and() {
    int lhs = parse_unary();
    while (!done() && peek() != ';' && peek() != ',') {
      if (peek() == '&') ++pos_;
      int rhs = parse_unary();
      lhs = add({AtomExpr::Kind::And, 0, lhs, rhs});
    }
    return lhs;
  }

  int parse_unary() {
    if (done()) throw PatternSyntaxError("unexpected end of atom expression");
    if (peek() == '!') {
      ++pos_;
      int child = parse_unary();
      return add({AtomExpr::Kind::Not, 0, child, -1});
    }
    return parse_primitive();
  }

  int read_int(int fallback) {
    if (done() || !std::isdigit(static_cast<unsigned char>(peek()))) return fallback;
    int v = 0;
    while (!done() && std::isdigit(static_cast<unsigned char>(peek())))
      v = v * 10 + (s_[pos_++] - '0');
    return v;
  }

  int parse_primitive() {
    char c = peek();
    if (c == '$') throw PatternUnsupportedError("recursive SMARTS $() not supported");
    if (c == '@') throw PatternUnsupportedError("stereo SMARTS not supported");
    if (c == '*') {
      ++pos_;
      return add({AtomExpr::Kind::True, 0, -1, -1});
    }
    if (c == '#') {
      ++pos_;
      int z = read_int(-1);
      if (z < 0) throw PatternSyntaxError("'#' needs an atomic number");
      bool known = false;
      for (int e = 0; e < chem::kNumElements; ++e)
        known |= chem::atomic_number(static_cast<Element>(e)) == z;
      if (!known) throw PatternUnsupportedError("atomic number outside supported set");
      return add({AtomExpr::Kind::AnyElement, z, -1, -1});
    }
    if (c == 'a') {
      ++pos_;
      return add({AtomExpr::Kind::AnyAromatic, 0, -1, -1});
    }
    if (c == 'A') {
      ++pos_;
      return add({AtomExpr::Kind::AnyAliphatic, 0, -1, -1});
    }
    if (c == 'R') {
      ++pos_;
      int n = read_int(-1);
      if (n == 0) {
        int child = add({AtomExpr::Kind::InRing, 0, -1, -1});
        return add({AtomExpr::Kind::Not, 0, child, -1});
      }
      if (n > 1) throw PatternUnsupportedError("ring-count R<n> with n>1 not supported");
      return add({AtomExpr::Kind::InRing, 0, -1, -1});
    }
    if (c == 'D') {
      ++pos_;
      return add({AtomExpr::Kind::Degree, read_int(1), -1, -1});
    }
    if (c == 'H') {
      ++pos_;
      return add({AtomExpr::Kind::TotalH, read_int(1), -1, -1});
    }
    if (c == 'X') {
      ++pos_;
      return add({AtomExpr::Kind::Connections, read_int(1), -1, -1});
    }
    if (c == '+' || c == '-') {
      int sign = c == '+' ? 1 : -1;
      int mag = 0;
      while (!done() && peek() == c) {
        ++mag;
        ++pos_;
      }
      if (mag == 1) {
        int explicit_mag = read_int(-1);
        if (explicit_mag >= 0) mag = explicit_mag;
      }
      return add({AtomExpr::Kind::Charge, sign * mag, -1, -1});
    }
    if (std::islower(static_cast<unsigned char>(c))) {
      std::string sym(1, static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
      auto e = chem::element_from_symbol(sym);
      if (!e || !chem::aromatic_capable(*e))
        throw PatternUnsupportedError("unknown aromatic primitive in pattern: " + std::string(1, c));
      ++pos_;
      return add({AtomExpr::Kind::AromaticElement, static_cast<int>(*e), -1, -1});
    }
    if (std::isupper(static_cast<unsigned char>(c))) {
      std::string sym(1, c);
      if (pos_ + 1 < s_.size() && std::islower(static_cast<unsigned char>(s_[pos_ + 1]))) {
        std::string two = sym + s_[pos_ + 1];
        if (chem::element_from_symbol(two)) {
          pos_ += 2;
          return add({AtomExpr::Kind::AliphaticElement,
                      static_cast<int>(*chem::element_from_symbol(two)), -1, -1});
        }
      }
      auto e = chem::element_from_symbol(sym);
      if (!e) throw PatternUnsupportedError("element outside supported set: " + sym);
      ++pos_;
      return add({AtomExpr::Kind::AliphaticElement, static_cast<int>(*e), -1, -1});
    }
    throw PatternSyntaxError(std::string("unknown primitive '") + c + "'");
  }
};

}  // namespace detail

// SMARTS subset: elements (aromatic/aliphatic), wildcard *, a/A, ring flag R
// (R0 for acyclic), degree D<n>, total hydrogens H<n>, connections X<n>,
// charge, atomic number #n; operators ! & , ; inside brackets; bonds
// - = # : ~; branches and ring closures as in SMILES. Recursive and stereo
// SMARTS are rejected as unsupported.
inline Pattern parse_pattern(std::string_view input) {
  std::string_view text = trim(input);
  if (text.empty()) throw PatternSyntaxError("empty pattern");

  Pattern p;
  p.text_ = std::string(text);

  int prev = -1;
  std::vector<int> branch_stack;
  BondPred pending = BondPred::Default;
  bool pending_set = false;
  std::map<int, std::pair<int, BondPred>> ring_open;  // digit -> (atom, bond)

  auto add_atom_expr = [&](int root) {
    p.roots_.push_back(root);
    int idx = static_cast<int>(p.roots_.size()) - 1;
    if (prev >= 0) {
      p.bonds_.push_back({prev, idx, pending});
    } else if (pending_set) {
      throw PatternSyntaxError("bond symbol before any atom");
    }
    pending = BondPred::Default;
    pending_set = false;
    prev = idx;
  };

  auto handle_ring = [&](int digit) {
    if (prev < 0) throw PatternSyntaxError("ring closure before any atom");
    auto it = ring_open.find(digit);
    if (it == ring_open.end()) {
      ring_open[digit] = {prev, pending};
    } else {
      auto [atom, open_pred] = it->second;
      ring_open.erase(it);
      if (atom == prev) throw PatternSyntaxError("ring closure to same atom");
      BondPred pred = BondPred::Default;
      if (open_pred != BondPred::Default && pending != BondPred::Default &&
          open_pred != pending)
        throw PatternSyntaxError("conflicting ring closure bonds");
      if (open_pred != BondPred::Default)
        pred = open_pred;
      else if (pending != BondPred::Default)
        pred = pending;
      p.bonds_.push_back({atom, prev, pred});
    }
    pending = BondPred::Default;
    pending_set = false;
  };

  std::size_t i = 0;
  while (i < text.size()) {
    char c = text[i];
    switch (c) {
      case '[': {
        std::size_t close = text.find(']', i);
        if (close == std::string_view::npos) throw PatternSyntaxError("unterminated '['");
        std::string_view inner = text.substr(i + 1, close - i - 1);
        if (inner.empty()) throw PatternSyntaxError("empty bracket expression");
        detail::ExprParser ep(inner, p.arena_);
        add_atom_expr(ep.parse());
        i = close + 1;
        break;
      }
      case '(':
        if (prev < 0) throw PatternSyntaxError("branch before any atom");
        branch_stack.push_back(prev);
        ++i;
        break;
      case ')':
        if (branch_stack.empty()) throw PatternSyntaxError("unmatched ')'");
        prev = branch_stack.back();
        branch_stack.pop_back();
        ++i;
        break;
      case '-':
        pending = BondPred::Single;
        pending_set = true;
        ++i;
        break;
      case '=':
        pending = BondPred::Double;
        pending_set = true;
        ++i;
        break;
      case '#':
        pending = BondPred::Triple;
        pending_set = true;
        ++i;
        break;
      case ':':
        pending = BondPred::Aromatic;
        pending_set = true;
        ++i;
        break;
      case '~':
        pending = BondPred::Any;
        pending_set = true;
        ++i;
        break;
      case '/':
      case '\\':
      case '@':
        throw PatternUnsupportedError("stereo SMARTS not supported");
      case '$':
        throw PatternUnsupportedError("recursive SMARTS $() not supported");
      case '.':
        throw PatternUnsupportedError("component-level SMARTS not supported");
      case '%': {
        if (i + 2 >= text.size() || !std::isdigit(static_cast<unsigned char>(text[i + 1])) ||
            !std::isdigit(static_cast<unsigned char>(text[i + 2])))
          throw PatternSyntaxError("'%' needs two digits");
        int digit = (text[i + 1] - '0') * 10 + (text[i + 2] - '0');
        i += 3;
        handle_ring(digit);
        break;
      }
      default: {
        if (std::isdigit(static_cast<unsigned char>(c))) {
          ++i;
          handle_ring(c - '0');
          break;
        }
        if (c == '*') {
          p.arena_.push_back({AtomExpr::Kind::True, 0, -1, -1});
          add_atom_expr(static_cast<int>(p.arena_.size()) - 1);
          ++i;
          break;
        }
        if (c == 'a' || c == 'A') {
          p.arena_.push_back({c == 'a' ? AtomExpr::Kind::AnyAromatic : AtomExpr::Kind::AnyAliphatic,
                              0, -1, -1});
          add_atom_expr(static_cast<int>(p.arena_.size()) - 1);
          ++i;
          break;
        }
        // bare element atom, two-letter first
        if (std::isupper(static_cast<unsigned char>(c))) {
          std::string sym(1, c);
          if (i + 1 < text.size() && std::islower(static_cast<unsigned char>(text[i + 1]))) {
            std::string two = sym + text[i + 1];
            if (chem::element_from_symbol(two)) {
              p.arena_.push_back({AtomExpr::Kind::AliphaticElement,
                                  static_cast<int>(*chem::element_from_symbol(two)), -1, -1});
              add_atom_expr(static_cast<int>(p.arena_.size()) - 1);
              i += 2;
              break;
            }
          }
          auto e = chem::element_from_symbol(sym);
          if (!e) throw PatternUnsupportedError("element outside supported set: " + sym);
          p.arena_.push_back(
              {AtomExpr::Kind::AliphaticElement, static_cast<int>(*e), -1, -1});
          add_atom_expr(static_cast<int>(p.arena_.size()) - 1);
          ++i;
          break;
        }
        if (std::islower(static_cast<unsigned char>(c))) {
          std::string sym(1, static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
          auto e = chem::element_from_symbol(sym);
          if (!e || !chem::aromatic_capable(*e))
            throw PatternSyntaxError(std::string("unknown token '") + c + "'");
          p.arena_.push_back(
              {AtomExpr::Kind::AromaticElement, static_cast<int>(*e), -1, -1});
          add_atom_expr(static_cast<int>(p.arena_.size()) - 1);
          ++i;
          break;
        }
        throw PatternSyntaxError(std::string("unknown token '") + c + "'");
      }
    }
  }
  if (!branch_stack.empty()) throw PatternSyntaxError("unclosed branch");
  if (!ring_open.empty()) throw PatternSyntaxError("unclosed ring closure");
  if (pending_set) throw PatternSyntaxError("dangling bond symbol");
  if (p.roots_.empty()) throw PatternSyntaxError("pattern has no atoms");

  p.adj_.assign(p.roots_.size(), {});
  for (int bi = 0; bi < p.bond_count(); ++bi) {
    p.adj_[p.bonds_[bi].a].push_back(bi);
    p.adj_[p.bonds_[bi].b].push_back(bi);
  }
  // connectivity check
  std::vector<bool> vis(p.atom_count(), false);
  std::vector<int> q{0};
  vis[0] = true;
  int seen = 1;
  for (std::size_t qi = 0; qi < q.size(); ++qi)
    for (int bi : p.adj_[q[qi]]) {
      int to = p.bonds_[bi].other(q[qi]);
      if (!vis[to]) {
        vis[to] = true;
        ++seen;
        q.push_back(to);
      }
    }
  if (seen != p.atom_count()) throw PatternSyntaxError("pattern graph must be connected");
  return p;
}

namespace detail {

// Backtracking subgraph matcher. Pattern atoms are visited in a connected
// order starting from the atom with the fewest molecule candidates.
class Matcher {
 public:
  Matcher(const Molecule& m, const Pattern& p) : m_(m), p_(p) {}

  bool exists() {
    prepare();
    if (!feasible_) return false;
    found_ = false;
    count_all_ = false;
    backtrack(0);
    return found_;
  }

  int count() {
    prepare();
    if (!feasible_) return 0;
    found_ = false;
    count_all_ = true;
    matches_.clear();
    backtrack(0);
    return static_cast<int>(matches_.size());
  }

 private:
  const Molecule& m_;
  const Pattern& p_;
  std::vector<std::vector<int>> candidates_;
  std::vector<int> order_;        // pattern atoms in match order
  std::vector<int> anchor_bond_;  // pattern bond linking order_[k] to earlier atom
  std::vector<int> assign_;
  std::vector<bool> used_;
  bool feasible_ = true;
  bool found_ = false;
  bool count_all_ = false;
  std::set<std::vector<int>> matches_;  // sorted atom sets, dedup up to pattern automorphism

  void prepare() {
    int pn = p_.atom_count();
    candidates_.assign(pn, {});
    for (int pa = 0; pa < pn; ++pa)
      for (int i = 0; i < m_.atom_count(); ++i)
        if (p_.atom_matches(m_, pa, i)) candidates_[pa].push_back(i);
    feasible_ = true;
    for (int pa = 0; pa < pn; ++pa)
      if (candidates_[pa].empty()) feasible_ = false;
    if (!feasible_) return;

    int start = 0;
    for (int pa = 1; pa < pn; ++pa)
      if (candidates_[pa].size() < candidates_[start].size()) start = pa;

    order_.clear();
    anchor_bond_.assign(pn, -1);
    std::vector<bool> placed(pn, false);
    order_.push_back(start);
    placed[start] = true;
    while (static_cast<int>(order_.size()) < pn) {
      int best = -1;
      int best_bond = -1;
      for (int pa = 0; pa < pn; ++pa) {
        if (placed[pa]) continue;
        for (int bi : p_.bonds_of(pa)) {
          if (placed[p_.bonds()[bi].other(pa)]) {
            if (best == -1 || candidates_[pa].size() < candidates_[best].size()) {
              best = pa;
              best_bond = bi;
            }
            break;
          }
        }
      }
      order_.push_back(best);
      anchor_bond_[best] = best_bond;
      placed[best] = true;
    }
    assign_.assign(pn, -1);
    used_.assign(m_.atom_count(), false);
  }

  void backtrack(int depth) {
    if (!count_all_ && found_) return;
    if (depth == static_cast<int>(order_.size())) {
      if (count_all_) {
        std::vector<int> atoms(assign_.begin(), assign_.end());
        std::sort(atoms.begin(), atoms.end());
        matches_.insert(std::move(atoms));
      } else {
        found_ = true;
      }
      return;
    }
    int pa = order_[depth];
    for (int cand : candidates_[pa]) {
      if (used_[cand]) continue;
      bool ok = true;
      for (int bi : p_.bonds_of(pa)) {
        const PatternBond& pb = p_.bonds()[bi];
        int other = pb.other(pa);
        if (assign_[other] < 0) continue;
        const chem::Bond* mb = m_.bond_between(cand, assign_[other]);
        if (!mb || !Pattern::bond_matches(pb.pred, *mb)) {
          ok = false;
          break;
        }
      }
      if (!ok) continue;
      assign_[pa] = cand;
      used_[cand] = true;
      backtrack(depth + 1);
      assign_[pa] = -1;
      used_[cand] = false;
      if (!count_all_ && found_) return;
    }
  }
};

}  // namespace detail

// True iff an injective subgraph homomorphism exists with all atom and bond
// predicates satisfied.
inline bool has_match(const Molecule& m, const Pattern& p) {
  return detail::Matcher(m, p).exists();
}

// Number of distinct matches up to automorphisms of the pattern (deduplicated
// by the sorted set of matched molecule atoms).
inline int match_count(const Molecule& m, const Pattern& p) {
  return detail::Matcher(m, p).count();
}

}  // namespace molbench::patterns
