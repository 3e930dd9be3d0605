#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "molbench/chem.hpp"

namespace molbench::chem {

namespace detail {

struct RingOpen {
  int atom = -1;
  int bond_order = 0;       // 0 = unspecified
  bool bond_aromatic = false;
  bool bond_single = false;  // explicit '-'
};

inline bool is_aromatic_symbol(char c) {
  return c == 'b' || c == 'c' || c == 'n' || c == 'o' || c == 'p' || c == 's';
}

}  // namespace detail

// SMILES subset: organic-subset atoms, bracket atoms with charge and H count,
// ring closures (incl. %nn), branches, bond symbols - = # :. Stereo markers
// and isotopes are accepted and discarded (flagged on the molecule).
inline Molecule parse_smiles(std::string_view input) {
  std::string_view text = trim(input);
  if (text.size() > 10000) throw SyntaxError("SMILES longer than 10000 characters");
  if (text.empty()) throw SyntaxError("empty SMILES");

  MoleculeBuilder b;
  bool dropped = false;

  int prev = -1;                       // previous atom index
  std::vector<int> branch_stack;
  int pending_order = 0;               // 0 = default
  bool pending_aromatic = false;
  bool pending_single = false;         // explicit '-'
  bool pending_set = false;
  std::map<int, detail::RingOpen> ring_open;

  auto connect = [&](int from, int to, int order, bool arom_sym, bool single_sym) {
    bool both_arom = b.atoms()[from].aromatic && b.atoms()[to].aromatic;
    if (arom_sym) {
      if (!both_arom) throw SyntaxError("':' bond requires aromatic atoms on both sides");
      b.add_bond(from, to, 1, true, true);
      return;
    }
    if (order == 0 && !single_sym) {
      // Unmarked bond: candidate aromatic when both atoms are aromatic.
      if (both_arom)
        b.add_bond(from, to, 1, true, false);
      else
        b.add_bond(from, to, 1, false);
      return;
    }
    b.add_bond(from, to, order == 0 ? 1 : order, false);
  };

  auto attach_atom = [&](int idx) {
    if (prev >= 0) {
      connect(prev, idx, pending_order, pending_aromatic, pending_single);
    } else if (pending_set) {
      throw SyntaxError("bond symbol without preceding atom");
    }
    pending_order = 0;
    pending_aromatic = false;
    pending_single = false;
    pending_set = false;
    prev = idx;
  };

  auto handle_ring = [&](int digit) {
    if (prev < 0) throw SyntaxError("ring closure before any atom");
    auto it = ring_open.find(digit);
    if (it == ring_open.end()) {
      detail::RingOpen ro;
      ro.atom = prev;
      ro.bond_order = pending_order;
      ro.bond_aromatic = pending_aromatic;
      ro.bond_single = pending_single;
      ring_open[digit] = ro;
    } else {
      detail::RingOpen ro = it->second;
      ring_open.erase(it);
      if (ro.atom == prev) throw SyntaxError("ring closure to the same atom");
      int order = 0;
      bool arom = false, single = false;
      bool second_set = pending_set;
      bool first_set = ro.bond_order != 0 || ro.bond_aromatic || ro.bond_single;
      if (first_set && second_set) {
        if (ro.bond_order != pending_order || ro.bond_aromatic != pending_aromatic ||
            ro.bond_single != pending_single)
          throw SyntaxError("conflicting ring closure bond symbols");
      }
      if (first_set) {
        order = ro.bond_order;
        arom = ro.bond_aromatic;
        single = ro.bond_single;
      } else if (second_set) {
        order = pending_order;
        arom = pending_aromatic;
        single = pending_single;
      }
      connect(ro.atom, prev, order, arom, single);
    }
    pending_order = 0;
    pending_aromatic = false;
    pending_single = false;
    pending_set = false;
  };

  std::size_t i = 0;
  auto parse_bracket = [&]() {
    std::size_t start = i;  // at '['
    ++i;
    // isotope
    bool saw_isotope = false;
    while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) {
      ++i;
      saw_isotope = true;
    }
    if (saw_isotope) dropped = true;
    if (i >= text.size()) throw SyntaxError("unterminated bracket atom");
    // element symbol
    Element elem;
    bool aromatic = false;
    if (detail::is_aromatic_symbol(text[i])) {
      char up = static_cast<char>(std::toupper(static_cast<unsigned char>(text[i])));
      auto e = element_from_symbol(std::string(1, up));
      if (!e) throw UnsupportedError("unsupported aromatic element in bracket");
      elem = *e;
      aromatic = true;
      ++i;
    } else if (std::isupper(static_cast<unsigned char>(text[i]))) {
      std::string sym(1, text[i]);
      if (i + 1 < text.size() && std::islower(static_cast<unsigned char>(text[i + 1])) &&
          text[i + 1] != 'b' && text[i + 1] != 'c' && text[i + 1] != 'n' && text[i + 1] != 'o' &&
          text[i + 1] != 'p' && text[i + 1] != 's') {
        sym += text[i + 1];
      }
      // Prefer two-letter match (Cl, Br), fall back to one letter.
      std::optional<Element> e2;
      if (sym.size() == 2) e2 = element_from_symbol(sym);
      if (e2) {
        elem = *e2;
        i += 2;
      } else {
        auto e1 = element_from_symbol(sym.substr(0, 1));
        if (!e1) {
          if (sym.size() == 2 && std::islower(static_cast<unsigned char>(sym[1])))
            throw UnsupportedError("element outside supported set: " + sym);
          throw UnsupportedError("element outside supported set: " + sym.substr(0, 1));
        }
        if (sym.size() == 2) {
          // Could be e.g. "Na": one-letter element followed by stray lowercase
          // is only valid when the lowercase char starts a valid token (it
          // cannot inside a bracket) -> treat the pair as unsupported element.
          throw UnsupportedError("element outside supported set: " + sym);
        }
        elem = *e1;
        ++i;
      }
    } else {
      throw SyntaxError("expected element symbol in bracket at position " + std::to_string(i));
    }
    // chirality
    while (i < text.size() && text[i] == '@') {
      ++i;
      dropped = true;
    }
    // hydrogen count
    int hcount = 0;
    if (i < text.size() && text[i] == 'H') {
      ++i;
      hcount = 1;
      if (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) {
        hcount = 0;
        while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i])))
          hcount = hcount * 10 + (text[i++] - '0');
      }
    }
    // charge
    int charge = 0;
    if (i < text.size() && (text[i] == '+' || text[i] == '-')) {
      char sign = text[i];
      int mag = 0;
      while (i < text.size() && text[i] == sign) {
        ++mag;
        ++i;
      }
      if (mag == 1 && i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) {
        mag = 0;
        while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i])))
          mag = mag * 10 + (text[i++] - '0');
      }
      charge = sign == '+' ? mag : -mag;
    }
    if (i >= text.size() || text[i] != ']')
      throw SyntaxError("unterminated bracket atom starting at " + std::to_string(start));
    ++i;
    int idx = b.add_atom(elem, charge, aromatic, hcount);
    attach_atom(idx);
  };

  while (i < text.size()) {
    char c = text[i];
    if (static_cast<unsigned char>(c) >= 0x80) throw SyntaxError("non-ASCII character in SMILES");
    switch (c) {
      case '[':
        parse_bracket();
        break;
      case '(':
        if (prev < 0) throw SyntaxError("branch open before any atom");
        branch_stack.push_back(prev);
        ++i;
        break;
      case ')':
        if (branch_stack.empty()) throw SyntaxError("unmatched ')'");
        if (pending_set) throw SyntaxError("dangling bond symbol before ')'");
        prev = branch_stack.back();
        branch_stack.pop_back();
        ++i;
        break;
      case '-':
        pending_single = true;
        pending_set = true;
        ++i;
        break;
      case '=':
        pending_order = 2;
        pending_set = true;
        ++i;
        break;
      case '#':
        pending_order = 3;
        pending_set = true;
        ++i;
        break;
      case ':':
        pending_aromatic = true;
        pending_set = true;
        ++i;
        break;
      case '/':
      case '\\':
        pending_single = true;
        pending_set = true;
        dropped = true;
        ++i;
        break;
      case '.':
        throw MultiFragmentError("multi-fragment input ('.') rejected");
      case '%': {
        if (i + 2 >= text.size() || !std::isdigit(static_cast<unsigned char>(text[i + 1])) ||
            !std::isdigit(static_cast<unsigned char>(text[i + 2])))
          throw SyntaxError("'%' needs two digits");
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
        // organic subset atom
        if (c == 'C' && i + 1 < text.size() && text[i + 1] == 'l') {
          attach_atom(b.add_atom(Element::Cl));
          i += 2;
          break;
        }
        if (c == 'B' && i + 1 < text.size() && text[i + 1] == 'r') {
          attach_atom(b.add_atom(Element::Br));
          i += 2;
          break;
        }
        if (std::isupper(static_cast<unsigned char>(c))) {
          auto e = element_from_symbol(std::string(1, c));
          if (!e) throw UnsupportedError(std::string("element outside supported set: ") + c);
          if (*e == Element::H)
            throw SyntaxError("'H' outside brackets is not an atom");
          attach_atom(b.add_atom(*e));
          ++i;
          break;
        }
        if (detail::is_aromatic_symbol(c)) {
          char up = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
          auto e = element_from_symbol(std::string(1, up));
          attach_atom(b.add_atom(*e, 0, true));
          ++i;
          break;
        }
        throw SyntaxError(std::string("unknown token '") + c + "' at position " + std::to_string(i));
      }
    }
  }
  if (!branch_stack.empty()) throw SyntaxError("unclosed branch '('");
  if (!ring_open.empty()) throw SyntaxError("unclosed ring closure digit");
  if (pending_set) throw SyntaxError("dangling bond symbol at end of input");
  if (b.atom_count() == 0) throw SyntaxError("no atoms in SMILES");

  b.set_dropped_features(dropped);
  return b.finalize();
}

namespace detail {

// Invariant-refinement canonical ranks. Initial invariant: element, degree,
// charge, H count, ring flag, aromatic flag. Refined by sorted neighbour
// (bond class, rank) multisets; stalled partitions are broken by branching
// over every member of the first non-singleton cell, keeping the
// lexicographically smallest emitted SMILES.
class Canonicalizer {
 public:
  explicit Canonicalizer(const Molecule& m) : m_(m) {}

  std::string run() {
    int n = m_.atom_count();
    std::vector<long long> inv(n);
    for (int i = 0; i < n; ++i) {
      const Atom& a = m_.atom(i);
      inv[i] = ((long long)static_cast<int>(a.element) << 32) | ((long long)m_.degree(i) << 24) |
               ((long long)(a.formal_charge + 8) << 16) | ((long long)m_.total_h(i) << 8) |
               ((long long)a.in_ring << 1) | (long long)a.aromatic;
    }
    std::vector<int> ranks = ranks_from_keys(inv);
    best_.clear();
    search(refine(std::move(ranks)));
    return best_;
  }

 private:
  const Molecule& m_;
  std::string best_;

  static std::vector<int> ranks_from_keys(const std::vector<long long>& keys) {
    std::vector<int> idx(keys.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return keys[a] < keys[b]; });
    std::vector<int> ranks(keys.size());
    int r = 0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (k > 0 && keys[idx[k]] != keys[idx[k - 1]]) ++r;
      ranks[idx[k]] = r;
    }
    return ranks;
  }

  int bond_class(const Bond& b) const { return b.aromatic ? 0 : b.order; }

  std::vector<int> refine(std::vector<int> ranks) const {
    int n = m_.atom_count();
    while (true) {
      int classes = *std::max_element(ranks.begin(), ranks.end()) + 1;
      std::vector<std::pair<std::vector<long long>, int>> keyed(n);
      std::vector<long long> flat(n);
      for (int i = 0; i < n; ++i) {
        std::vector<long long> nb;
        for (int bi : m_.bonds_of(i)) {
          const Bond& b = m_.bond(bi);
          nb.push_back((long long)bond_class(b) * 1000000 + ranks[b.other(i)]);
        }
        std::sort(nb.begin(), nb.end());
        nb.insert(nb.begin(), ranks[i]);
        keyed[i] = {std::move(nb), i};
      }
      std::vector<int> order(n);
      for (int i = 0; i < n; ++i) order[i] = i;
      std::sort(order.begin(), order.end(),
                [&](int a, int b) { return keyed[a].first < keyed[b].first; });
      std::vector<int> next(n);
      int r = 0;
      for (int k = 0; k < n; ++k) {
        if (k > 0 && keyed[order[k]].first != keyed[order[k - 1]].first) ++r;
        next[order[k]] = r;
      }
      int next_classes = r + 1;
      if (next_classes == classes) return next;
      ranks = std::move(next);
    }
  }

  void search(std::vector<int> ranks) {
    int n = m_.atom_count();
    int classes = *std::max_element(ranks.begin(), ranks.end()) + 1;
    if (classes == n) {
      std::string s = write(ranks);
      if (best_.empty() || s < best_) best_ = s;
      return;
    }
    // first non-singleton class
    std::vector<int> count(classes, 0);
    for (int r : ranks) ++count[r];
    int cell = 0;
    while (count[cell] < 2) ++cell;
    for (int i = 0; i < n; ++i) {
      if (ranks[i] != cell) continue;
      std::vector<int> forced = ranks;
      for (int j = 0; j < n; ++j)
        forced[j] = forced[j] * 2 + (j == i ? 0 : 1);
      search(refine(std::move(forced)));
    }
  }

  struct Closure {
    int digit;
    int partner;
    int order;
    bool aromatic;
    bool write_symbol;
  };

  std::string write(const std::vector<int>& ranks) const {
    int n = m_.atom_count();
    // DFS from the rank-0 atom, visiting neighbours in rank order.
    int root = 0;
    for (int i = 0; i < n; ++i)
      if (ranks[i] < ranks[root]) root = i;

    std::vector<int> visit_order;
    std::vector<int> pos(n, -1);
    std::vector<int> parent(n, -1);
    std::vector<std::vector<int>> children(n);
    std::vector<std::pair<int, int>> back_edges;  // (later atom, earlier atom)
    std::vector<bool> edge_used(m_.bond_count(), false);

    struct F {
      int v;
      std::vector<int> nbrs;
      std::size_t k = 0;
    };
    auto sorted_nbrs = [&](int v) {
      std::vector<int> nb;
      for (int bi : m_.bonds_of(v)) nb.push_back(m_.bond(bi).other(v));
      std::sort(nb.begin(), nb.end(), [&](int a, int b) { return ranks[a] < ranks[b]; });
      return nb;
    };
    std::vector<F> stack{{root, sorted_nbrs(root)}};
    pos[root] = 0;
    visit_order.push_back(root);
    while (!stack.empty()) {
      F& f = stack.back();
      if (f.k < f.nbrs.size()) {
        int to = f.nbrs[f.k++];
        const Bond* b = m_.bond_between(f.v, to);
        int bi = static_cast<int>(b - m_.bonds().data());
        if (edge_used[bi]) continue;
        edge_used[bi] = true;
        if (pos[to] == -1) {
          pos[to] = static_cast<int>(visit_order.size());
          visit_order.push_back(to);
          parent[to] = f.v;
          children[f.v].push_back(to);
          stack.push_back({to, sorted_nbrs(to)});
        } else {
          back_edges.push_back({f.v, to});
        }
      } else {
        stack.pop_back();
      }
    }

    // Ring-closure digit assignment in output order, reusing freed digits.
    std::vector<std::vector<Closure>> closures(n);
    {
      // openings live at the earlier-visited endpoint, ordered by partner position
      std::vector<std::vector<std::pair<int, int>>> opens(n);  // atom -> (partner_pos, partner)
      for (auto [u, v] : back_edges) {
        int first = pos[u] < pos[v] ? u : v;
        int second = pos[u] < pos[v] ? v : u;
        opens[first].push_back({pos[second], second});
      }
      std::vector<int> free_digits;
      for (int d = 1; d <= 99; ++d) free_digits.push_back(d);
      std::vector<std::vector<std::pair<int, int>>> closing_at(n);  // atom -> (opener, digit)
      for (int vo : visit_order) {
        // digits whose ring closes at vo become free again
        for (auto [opener, digit] : closing_at[vo]) {
          (void)opener;
          free_digits.insert(std::lower_bound(free_digits.begin(), free_digits.end(), digit),
                             digit);
        }
        std::sort(opens[vo].begin(), opens[vo].end());
        for (auto [ppos, partner] : opens[vo]) {
          (void)ppos;
          int digit = free_digits.front();
          free_digits.erase(free_digits.begin());
          const Bond* b = m_.bond_between(vo, partner);
          closures[vo].push_back({digit, partner, b->order, b->aromatic, true});
          closures[partner].push_back({digit, vo, b->order, b->aromatic, false});
          closing_at[partner].push_back({vo, digit});
        }
      }
    }

    std::string out;
    emit(root, -1, ranks, children, closures, out);
    return out;
  }

  void emit(int v, int from, const std::vector<int>& ranks,
            const std::vector<std::vector<int>>& children,
            const std::vector<std::vector<Closure>>& closures, std::string& out) const {
    if (from >= 0) out += bond_token(*m_.bond_between(from, v), from, v);
    out += atom_token(v);
    for (const Closure& c : closures[v]) {
      if (c.write_symbol) out += closure_bond_token(c, v);
      if (c.digit >= 10) {
        out += '%';
        out += static_cast<char>('0' + c.digit / 10);
        out += static_cast<char>('0' + c.digit % 10);
      } else {
        out += static_cast<char>('0' + c.digit);
      }
    }
    const auto& ch = children[v];
    for (std::size_t k = 0; k < ch.size(); ++k) {
      if (k + 1 < ch.size()) {
        out += '(';
        emit(ch[k], v, ranks, children, closures, out);
        out += ')';
      } else {
        emit(ch[k], v, ranks, children, closures, out);
      }
    }
  }

  std::string bond_token(const Bond& b, int from, int to) const {
    if (b.aromatic) return "";  // default between aromatic atoms
    switch (b.order) {
      case 1:
        if (m_.atom(from).aromatic && m_.atom(to).aromatic) return "-";
        return "";
      case 2:
        return "=";
      case 3:
        return "#";
    }
    return "";
  }

  std::string closure_bond_token(const Closure& c, int at) const {
    if (c.aromatic) return "";
    if (c.order == 2) return "=";
    if (c.order == 3) return "#";
    // a single ring-closure bond between two aromatic atoms needs '-'
    if (m_.atom(at).aromatic && m_.atom(c.partner).aromatic) return "-";
    return "";
  }

  std::string atom_token(int v) const {
    const Atom& a = m_.atom(v);
    std::string sym = symbol(a.element);
    if (a.aromatic)
      for (auto& ch : sym) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));

    bool need_bracket = a.formal_charge != 0 || a.element == Element::H;
    if (!need_bracket && a.aromatic &&
        (a.element == Element::N || a.element == Element::P) && a.implicit_h > 0)
      need_bracket = true;
    if (!need_bracket) {
      // check that a bare atom re-parses to the same implicit H count
      int sum = m_.bond_order_sum(v);
      auto allowed = allowed_valences(a.element, 0);
      int target = -1;
      for (int t : allowed)
        if (t >= sum) {
          target = t;
          break;
        }
      if (target < 0 || target - sum != a.implicit_h) need_bracket = true;
    }
    if (!need_bracket) return sym;

    std::string out = "[" + sym;
    if (a.implicit_h == 1)
      out += "H";
    else if (a.implicit_h > 1)
      out += "H" + std::to_string(a.implicit_h);
    if (a.formal_charge != 0) {
      out += a.formal_charge > 0 ? '+' : '-';
      int mag = std::abs(a.formal_charge);
      if (mag > 1) out += std::to_string(mag);
    }
    out += ']';
    return out;
  }
};

}  // namespace detail

// Deterministic canonical SMILES: identical for any atom relabelling of the
// same graph; aromatic systems are written in lowercase form, so all kekulé
// assignments of one aromatic system share one canonical string.
inline std::string to_canonical_smiles(const Molecule& m) {
  return detail::Canonicalizer(m).run();
}

}  // namespace molbench::chem
