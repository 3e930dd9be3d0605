#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "molbench/chem.hpp"
#include "molbench/smiles.hpp"

namespace molbench::strings {

using chem::Element;
using chem::Molecule;

class StringError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class EncodingError : public StringError {
 public:
  using StringError::StringError;
};

enum class TokenKind { SmilesTokens, RobustTokens };

struct TokenSeq {
  std::vector<std::string> tokens;
  TokenKind kind = TokenKind::SmilesTokens;
};

// Multi-character SMILES constructs (bracket atoms, Cl/Br, %nn closures) are
// single tokens; detokenize(tokenize(t)) == t.
inline TokenSeq tokenize_smiles(std::string_view text) {
  TokenSeq out;
  out.kind = TokenKind::SmilesTokens;
  std::size_t i = 0;
  while (i < text.size()) {
    char c = text[i];
    if (c == '[') {
      std::size_t close = text.find(']', i);
      if (close == std::string_view::npos)
        throw chem::SyntaxError("unterminated bracket in SMILES");
      out.tokens.emplace_back(text.substr(i, close - i + 1));
      i = close + 1;
    } else if (c == '%') {
      if (i + 2 >= text.size()) throw chem::SyntaxError("'%' needs two digits");
      out.tokens.emplace_back(text.substr(i, 3));
      i += 3;
    } else if ((c == 'C' && i + 1 < text.size() && text[i + 1] == 'l') ||
               (c == 'B' && i + 1 < text.size() && text[i + 1] == 'r')) {
      out.tokens.emplace_back(text.substr(i, 2));
      i += 2;
    } else {
      out.tokens.emplace_back(1, c);
      ++i;
    }
  }
  return out;
}

inline std::string detokenize(const TokenSeq& seq) {
  std::string out;
  for (const auto& t : seq.tokens) out += t;
  return out;
}

// ---------------------------------------------------------------------------
// Robust token grammar. Every token string decodes to a valid molecule: the
// decoder keeps a remaining-valence budget per atom, reduces bond orders that
// would not fit, skips unusable ring/branch tokens and truncates the stream
// at the first atom token that arrives when the current atom is saturated.
//
//   atom    [C] [=C] [#C] [N+1] [=O] ...    (bond to current atom, element,
//                                            optional +1/-1 charge)
//   branch  [Branch1] [In]         next n tokens form a branch
//           [Branch2] [Ia] [Ib]    n = (a-1)*16 + b
//           [Branch3] [Ia] [Ib] [Ic]
//   ring    [Ring1] [In]           bond back to the atom placed n earlier
//           [=Ring1] [#Ring1] [Ring2] [=Ring2] [#Ring2] [Ring3] ...
//   index   [I1] .. [I16]
// ---------------------------------------------------------------------------

struct RobustAtomToken {
  int bond_order = 1;  // 1..3
  Element element = Element::C;
  int charge = 0;
};

namespace detail {

inline std::string atom_token_text(int bond_order, Element e, int charge) {
  std::string s = "[";
  if (bond_order == 2) s += '=';
  if (bond_order == 3) s += '#';
  s += chem::symbol(e);
  if (charge == 1) s += "+1";
  if (charge == -1) s += "-1";
  s += ']';
  return s;
}

inline std::optional<RobustAtomToken> parse_atom_token(const std::string& t) {
  if (t.size() < 3 || t.front() != '[' || t.back() != ']') return std::nullopt;
  std::string_view body(t.data() + 1, t.size() - 2);
  RobustAtomToken out;
  if (!body.empty() && body[0] == '=') {
    out.bond_order = 2;
    body.remove_prefix(1);
  } else if (!body.empty() && body[0] == '#') {
    out.bond_order = 3;
    body.remove_prefix(1);
  }
  if (body.size() >= 2 && (body.back() == '1') &&
      (body[body.size() - 2] == '+' || body[body.size() - 2] == '-')) {
    out.charge = body[body.size() - 2] == '+' ? 1 : -1;
    body.remove_suffix(2);
  }
  auto e = chem::element_from_symbol(body);
  if (!e) return std::nullopt;
  out.element = *e;
  return out;
}

inline std::optional<int> parse_index_token(const std::string& t) {
  if (t.size() < 4 || t.compare(0, 2, "[I") != 0 || t.back() != ']') return std::nullopt;
  int v = 0;
  for (std::size_t i = 2; i + 1 < t.size(); ++i) {
    if (!std::isdigit(static_cast<unsigned char>(t[i]))) return std::nullopt;
    v = v * 10 + (t[i] - '0');
  }
  return (v >= 1 && v <= 16) ? std::optional<int>(v) : std::nullopt;
}

// returns (arity, bond_order) for ring/branch structural tokens
inline std::optional<std::pair<int, int>> parse_branch_token(const std::string& t) {
  if (t == "[Branch1]") return {{1, 0}};
  if (t == "[Branch2]") return {{2, 0}};
  if (t == "[Branch3]") return {{3, 0}};
  return std::nullopt;
}

inline std::optional<std::pair<int, int>> parse_ring_token(const std::string& t) {
  for (int arity = 1; arity <= 3; ++arity) {
    std::string suffix = "Ring" + std::to_string(arity) + "]";
    if (t == "[" + suffix) return {{arity, 1}};
    if (t == "[=" + suffix) return {{arity, 2}};
    if (t == "[#" + suffix) return {{arity, 3}};
  }
  return std::nullopt;
}

}  // namespace detail

struct Vocab {
  std::vector<std::string> symbols;
  std::map<std::string, int> index;
  int bos = -1;
  int eos = -1;

  int size() const { return static_cast<int>(symbols.size()); }
  int id(const std::string& s) const {
    auto it = index.find(s);
    if (it == index.end()) throw StringError("token not in vocabulary: " + s);
    return it->second;
  }
  bool contains(const std::string& s) const { return index.count(s) > 0; }

  static Vocab from_symbols(std::vector<std::string> syms) {
    Vocab v;
    v.symbols = std::move(syms);
    for (int i = 0; i < v.size(); ++i) {
      if (!v.index.emplace(v.symbols[i], i).second)
        throw StringError("duplicate vocabulary symbol: " + v.symbols[i]);
    }
    auto it_b = v.index.find("[BOS]");
    auto it_e = v.index.find("[EOS]");
    if (it_b == v.index.end() || it_e == v.index.end())
      throw StringError("vocabulary must contain [BOS] and [EOS]");
    v.bos = it_b->second;
    v.eos = it_e->second;
    return v;
  }
};

// The fixed vocabulary of the robust grammar.
inline const Vocab& robust_vocab() {
  static const Vocab v = [] {
    std::vector<std::string> syms{"[BOS]", "[EOS]"};
    const Element all[] = {Element::B,  Element::C, Element::N,  Element::O, Element::P,
                           Element::S,  Element::F, Element::Cl, Element::Br, Element::I};
    const Element chargeable[] = {Element::B, Element::C, Element::N,
                                  Element::O, Element::P, Element::S};
    for (int bo = 1; bo <= 3; ++bo) {
      for (Element e : all) syms.push_back(detail::atom_token_text(bo, e, 0));
      for (Element e : chargeable) {
        syms.push_back(detail::atom_token_text(bo, e, +1));
        syms.push_back(detail::atom_token_text(bo, e, -1));
      }
    }
    for (int a = 1; a <= 3; ++a) syms.push_back("[Branch" + std::to_string(a) + "]");
    for (int a = 1; a <= 3; ++a) {
      syms.push_back("[Ring" + std::to_string(a) + "]");
      syms.push_back("[=Ring" + std::to_string(a) + "]");
      syms.push_back("[#Ring" + std::to_string(a) + "]");
    }
    for (int i = 1; i <= 16; ++i) syms.push_back("[I" + std::to_string(i) + "]");
    return Vocab::from_symbols(std::move(syms));
  }();
  return v;
}

// Vocabulary extracted from a tokenized corpus (sentinels first, then sorted).
inline Vocab vocab_from_corpus(const std::vector<TokenSeq>& corpus) {
  std::set<std::string> uniq;
  for (const auto& seq : corpus)
    for (const auto& t : seq.tokens) uniq.insert(t);
  uniq.erase("[BOS]");
  uniq.erase("[EOS]");
  std::vector<std::string> syms{"[BOS]", "[EOS]"};
  syms.insert(syms.end(), uniq.begin(), uniq.end());
  return Vocab::from_symbols(std::move(syms));
}

// Total decoder: any token string yields a valid molecule; the empty
// effective string yields methane.
inline Molecule robust_decode(const TokenSeq& seq) {
  chem::MoleculeBuilder b;
  std::vector<int> remaining;   // free valence per atom
  std::vector<int> placement;   // atom index by placement order
  std::vector<int> place_of;    // placement order by atom index

  struct Frame {
    std::size_t span_end;
    int saved_cur;
  };
  std::vector<Frame> frames;
  int cur = -1;
  bool truncated = false;

  const auto& toks = seq.tokens;
  std::size_t i = 0;

  auto read_operand = [&](std::size_t at, int arity) -> std::pair<std::optional<int>, std::size_t> {
    // returns (value, next position); missing/invalid operands consume what
    // is present and yield no value
    long long k = 0;
    for (int j = 0; j < arity; ++j) {
      if (at >= toks.size()) return {std::nullopt, at};
      auto v = detail::parse_index_token(toks[at]);
      if (!v) return {std::nullopt, at};
      k = k * 16 + (*v - 1);
      ++at;
    }
    return {static_cast<int>(k + 1), at};
  };

  while (i < toks.size() && !truncated) {
    while (!frames.empty() && i >= frames.back().span_end) {
      cur = frames.back().saved_cur;
      frames.pop_back();
    }
    const std::string& t = toks[i];

    if (auto at = detail::parse_atom_token(t)) {
      int cap = chem::max_allowed_valence(at->element, at->charge);
      if (cap < 1 && cur >= 0) {
        ++i;
        continue;
      }
      if (cur < 0) {
        int idx = b.add_atom(at->element, at->charge);
        remaining.push_back(std::max(cap, 0));
        place_of.push_back(static_cast<int>(placement.size()));
        placement.push_back(idx);
        cur = idx;
        ++i;
        continue;
      }
      if (remaining[cur] == 0) {
        truncated = true;  // saturation collapse: rest of the stream ignored
        break;
      }
      int order = std::min({at->bond_order, remaining[cur], cap});
      int idx = b.add_atom(at->element, at->charge);
      remaining.push_back(cap - order);
      place_of.push_back(static_cast<int>(placement.size()));
      placement.push_back(idx);
      b.add_bond(cur, idx, order);
      remaining[cur] -= order;
      cur = idx;
      ++i;
      continue;
    }
    if (auto br = detail::parse_branch_token(t)) {
      auto [k, next] = read_operand(i + 1, br->first);
      if (!k) {
        i = next == i + 1 ? i + 1 : next;
        continue;
      }
      std::size_t span_end = std::min(next + static_cast<std::size_t>(*k), toks.size());
      if (cur >= 0 && remaining[cur] >= 1 && span_end > next) {
        frames.push_back({span_end, cur});
        i = next;
      } else {
        i = span_end;  // unusable branch: contents ignored
      }
      continue;
    }
    if (auto ring = detail::parse_ring_token(t)) {
      auto [k, next] = read_operand(i + 1, ring->first);
      i = next == i + 1 && !k ? i + 1 : next;
      if (!k || cur < 0) continue;
      int back = *k;
      int cur_place = place_of[cur];
      int tgt_place = cur_place - back;
      if (tgt_place < 0) continue;
      int target = placement[tgt_place];
      if (target == cur) continue;
      bool exists = false;
      for (const chem::Bond& bd : b.bonds())
        if ((bd.a == cur && bd.b == target) || (bd.a == target && bd.b == cur)) exists = true;
      if (exists) continue;
      int order = std::min({ring->second, remaining[cur], remaining[target]});
      if (order < 1) continue;
      b.add_bond(cur, target, order);
      remaining[cur] -= order;
      remaining[target] -= order;
      continue;
    }
    ++i;  // sentinels and unknown tokens are ignored
  }

  if (b.atom_count() == 0) {
    b.add_atom(Element::C);
  }
  return b.finalize();
}

namespace detail {

struct EncodePlan {
  std::vector<int> place_of;                      // DFS pre-order position
  std::vector<std::vector<int>> children;         // tree children per atom
  std::vector<std::vector<int>> ring_partners;    // earlier endpoints, per later atom
};

inline void emit_operand(std::vector<std::string>& out, int k, int arity) {
  std::vector<int> digits(arity);
  int rem = k - 1;
  for (int j = arity - 1; j >= 0; --j) {
    digits[j] = rem % 16 + 1;
    rem /= 16;
  }
  for (int d : digits) out.push_back("[I" + std::to_string(d) + "]");
}

inline int operand_arity(int k) { return k <= 16 ? 1 : (k <= 256 ? 2 : 3); }

// Emit tokens for atom v (bond from parent included), its ring closures and
// subtrees; all-but-last children are wrapped in Branch tokens.
inline void encode_emit(const Molecule& m, const EncodePlan& plan, int v, int parent,
                        std::vector<std::string>& out) {
  const chem::Atom& a = m.atom(v);
  if (std::abs(a.formal_charge) > 1)
    throw EncodingError("robust grammar covers formal charges -1..+1 only");
  int bond_order = 1;
  if (parent >= 0) bond_order = m.bond_between(parent, v)->order;
  out.push_back(atom_token_text(bond_order, a.element, a.formal_charge));

  for (int partner : plan.ring_partners[v]) {
    int back = plan.place_of[v] - plan.place_of[partner];
    if (back > 4096) throw EncodingError("ring closure distance exceeds grammar range");
    int order = m.bond_between(v, partner)->order;
    std::string prefix = order == 2 ? "[=" : order == 3 ? "[#" : "[";
    int arity = operand_arity(back);
    out.push_back(prefix + "Ring" + std::to_string(arity) + "]");
    emit_operand(out, back, arity);
  }

  const auto& ch = plan.children[v];
  for (std::size_t c = 0; c < ch.size(); ++c) {
    if (c + 1 < ch.size()) {
      std::vector<std::string> sub;
      encode_emit(m, plan, ch[c], v, sub);
      int k = static_cast<int>(sub.size());
      if (k > 4096) throw EncodingError("branch exceeds grammar range");
      int arity = operand_arity(k);
      out.push_back("[Branch" + std::to_string(arity) + "]");
      emit_operand(out, k, arity);
      out.insert(out.end(), sub.begin(), sub.end());
    } else {
      encode_emit(m, plan, ch[c], v, out);
    }
  }
}

}  // namespace detail

// Inverse of robust_decode up to canonical SMILES (kekulé orders are encoded;
// aromatic flags are re-perceived on decode).
inline TokenSeq robust_encode(const Molecule& m) {
  int n = m.atom_count();
  detail::EncodePlan plan;
  plan.place_of.assign(n, -1);
  plan.children.assign(n, {});
  plan.ring_partners.assign(n, {});

  // DFS tree / back-edge classification, children in ascending atom index.
  std::vector<bool> edge_used(m.bond_count(), false);
  struct Frame {
    int v;
    std::vector<int> nbrs;
    std::size_t k = 0;
  };
  auto sorted_nbrs = [&](int v) {
    std::vector<int> nb;
    for (int bi : m.bonds_of(v)) nb.push_back(m.bond(bi).other(v));
    std::sort(nb.begin(), nb.end());
    return nb;
  };
  int next_place = 0;
  std::vector<Frame> stack{{0, sorted_nbrs(0)}};
  plan.place_of[0] = next_place++;
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.k < f.nbrs.size()) {
      int to = f.nbrs[f.k++];
      const chem::Bond* b = m.bond_between(f.v, to);
      int bi = static_cast<int>(b - m.bonds().data());
      if (edge_used[bi]) continue;
      edge_used[bi] = true;
      if (plan.place_of[to] == -1) {
        plan.place_of[to] = next_place++;
        plan.children[f.v].push_back(to);
        stack.push_back({to, sorted_nbrs(to)});
      } else {
        // back edge: record at the later-placed endpoint
        int later = plan.place_of[f.v] > plan.place_of[to] ? f.v : to;
        int earlier = later == f.v ? to : f.v;
        plan.ring_partners[later].push_back(earlier);
      }
    } else {
      stack.pop_back();
    }
  }
  for (auto& rp : plan.ring_partners)
    std::sort(rp.begin(), rp.end(),
              [&](int x, int y) { return plan.place_of[x] < plan.place_of[y]; });

  TokenSeq out;
  out.kind = TokenKind::RobustTokens;
  detail::encode_emit(m, plan, 0, -1, out.tokens);
  return out;
}

// ---------------------------------------------------------------------------
// Tabular autoregressive k-gram model with add-alpha smoothing and backoff.
// Rows are logits over the full vocabulary; probabilities are softmax rows,
// so every update (refit or gradient step) conserves probability exactly.
// ---------------------------------------------------------------------------

class KGramModel {
 public:
  using Context = std::vector<int>;
  struct Row {
    std::vector<double> logits;
  };
  using Table = std::map<Context, Row>;

  KGramModel() = default;
  KGramModel(int order, double alpha, Vocab vocab)
      : order_(order), alpha_(alpha), vocab_(std::move(vocab)), tables_(order) {}

  int order() const { return order_; }
  double alpha() const { return alpha_; }
  const Vocab& vocab() const { return vocab_; }
  std::vector<Table>& tables() { return tables_; }
  const std::vector<Table>& tables() const { return tables_; }

  // Longest-suffix row lookup; the unigram row always exists after a fit.
  const Row* lookup(const Context& ctx) const {
    for (int len = static_cast<int>(ctx.size()); len >= 0; --len) {
      Context key(ctx.end() - len, ctx.end());
      auto it = tables_[len].find(key);
      if (it != tables_[len].end()) return &it->second;
    }
    return nullptr;
  }

  Row* lookup_mut(const Context& ctx) {
    return const_cast<Row*>(static_cast<const KGramModel*>(this)->lookup(ctx));
  }

  static std::vector<double> softmax(const std::vector<double>& logits, double temperature = 1.0) {
    double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double z = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      p[i] = std::exp((logits[i] - mx) / temperature);
      z += p[i];
    }
    for (auto& x : p) x /= z;
    return p;
  }

  double row_log_prob(const Row& row, int token) const {
    double mx = *std::max_element(row.logits.begin(), row.logits.end());
    double z = 0;
    for (double l : row.logits) z += std::exp(l - mx);
    return row.logits[token] - mx - std::log(z);
  }

 private:
  int order_ = 3;
  double alpha_ = 0.01;
  Vocab vocab_;
  std::vector<Table> tables_;  // tables_[k]: contexts of length k
};

namespace detail {

inline std::vector<int> to_ids(const Vocab& v, const TokenSeq& seq) {
  std::vector<int> ids;
  ids.reserve(seq.tokens.size());
  for (const auto& t : seq.tokens) ids.push_back(v.id(t));
  return ids;
}

inline KGramModel::Context context_at(const std::vector<int>& ids, int t, int len, int bos) {
  KGramModel::Context ctx;
  for (int j = t - len; j < t; ++j) ctx.push_back(j < 0 ? bos : ids[j]);
  return ctx;
}

}  // namespace detail

// Maximum-likelihood fit with add-alpha smoothing:
//   p(tok | ctx) = (count + alpha) / (context_total + alpha * |V|)
// All context lengths 0..n-1 are fitted to serve as the backoff chain.
inline KGramModel kgram_fit(const std::vector<TokenSeq>& corpus, int order, double alpha,
                            const Vocab& vocab) {
  if (corpus.empty()) throw StringError("empty corpus");
  KGramModel model(order, alpha, vocab);
  int V = vocab.size();
  std::vector<std::map<KGramModel::Context, std::vector<double>>> counts(order);

  for (const auto& seq : corpus) {
    std::vector<int> ids = detail::to_ids(vocab, seq);
    int len = static_cast<int>(ids.size());
    for (int t = 0; t <= len; ++t) {
      int tok = t < len ? ids[t] : vocab.eos;
      for (int cl = 0; cl < order; ++cl) {
        auto ctx = detail::context_at(ids, t, cl, vocab.bos);
        auto& row = counts[cl][ctx];
        if (row.empty()) row.assign(V, 0.0);
        row[tok] += 1.0;
      }
    }
  }

  for (int cl = 0; cl < order; ++cl) {
    for (auto& [ctx, cnt] : counts[cl]) {
      double total = 0;
      for (double c : cnt) total += c;
      KGramModel::Row row;
      row.logits.resize(V);
      for (int k = 0; k < V; ++k)
        row.logits[k] = std::log((cnt[k] + alpha) / (total + alpha * V));
      model.tables()[cl].emplace(ctx, std::move(row));
    }
  }
  return model;
}

// Sum of log p(token | context) over the sequence including the closing EOS.
inline double kgram_log_prob(const KGramModel& model, const TokenSeq& seq) {
  std::vector<int> ids = detail::to_ids(model.vocab(), seq);
  int len = static_cast<int>(ids.size());
  double lp = 0;
  for (int t = 0; t <= len; ++t) {
    int tok = t < len ? ids[t] : model.vocab().eos;
    auto ctx = detail::context_at(ids, t, model.order() - 1, model.vocab().bos);
    const KGramModel::Row* row = model.lookup(ctx);
    if (!row) throw StringError("model has no unigram row (not fitted)");
    lp += model.row_log_prob(*row, tok);
  }
  return lp;
}

// Autoregressive sampling until EOS or max_len tokens. temperature 0 is
// argmax decoding. Deterministic for a fixed rng state.
inline TokenSeq kgram_sample(const KGramModel& model, std::mt19937_64& rng, int max_len,
                             double temperature, TokenKind kind) {
  if (max_len < 1) throw StringError("max_len must be >= 1");
  TokenSeq out;
  out.kind = kind;
  std::vector<int> ids;
  while (static_cast<int>(ids.size()) < max_len) {
    auto ctx = detail::context_at(ids, static_cast<int>(ids.size()), model.order() - 1,
                                  model.vocab().bos);
    const KGramModel::Row* row = model.lookup(ctx);
    if (!row) throw StringError("model has no unigram row (not fitted)");
    int tok;
    if (temperature < 1e-12) {
      tok = static_cast<int>(
          std::max_element(row->logits.begin(), row->logits.end()) - row->logits.begin());
    } else {
      auto p = KGramModel::softmax(row->logits, temperature);
      double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      double acc = 0;
      tok = static_cast<int>(p.size()) - 1;
      for (std::size_t k = 0; k < p.size(); ++k) {
        acc += p[k];
        if (u < acc) {
          tok = static_cast<int>(k);
          break;
        }
      }
    }
    if (tok == model.vocab().eos) break;
    ids.push_back(tok);
  }
  for (int id : ids) out.tokens.push_back(model.vocab().symbols[id]);
  return out;
}

// Cross-entropy style refit: per-context row distributions are mixed
// convexly, p_new = lambda * p_model + (1 - lambda) * p_elite, renormalized
// by the mass actually present on each side. Elite counts are raw weighted
// counts (no smoothing), so lambda = 0 yields the degenerate elite model.
inline KGramModel kgram_weighted_refit(const KGramModel& model,
                                       const std::vector<std::pair<TokenSeq, double>>& elite,
                                       double lambda) {
  if (lambda < 0.0 || lambda > 1.0) throw StringError("lambda must be in [0,1]");
  double wsum = 0;
  for (auto& [seq, w] : elite) {
    if (w < 0) throw StringError("elite weights must be >= 0");
    wsum += w;
  }
  if (!elite.empty() && wsum <= 0) throw StringError("elite weights must not all be zero");

  const Vocab& vocab = model.vocab();
  int V = vocab.size();
  int order = model.order();
  std::vector<std::map<KGramModel::Context, std::vector<double>>> ecounts(order);
  for (auto& [seq, w] : elite) {
    std::vector<int> ids = detail::to_ids(vocab, seq);
    int len = static_cast<int>(ids.size());
    for (int t = 0; t <= len; ++t) {
      int tok = t < len ? ids[t] : vocab.eos;
      for (int cl = 0; cl < order; ++cl) {
        auto ctx = detail::context_at(ids, t, cl, vocab.bos);
        auto& row = ecounts[cl][ctx];
        if (row.empty()) row.assign(V, 0.0);
        row[tok] += w;
      }
    }
  }

  KGramModel out(order, model.alpha(), vocab);
  for (int cl = 0; cl < order; ++cl) {
    std::set<KGramModel::Context> keys;
    for (auto& [ctx, row] : model.tables()[cl]) keys.insert(ctx);
    for (auto& [ctx, row] : ecounts[cl]) keys.insert(ctx);
    for (const auto& ctx : keys) {
      auto mit = model.tables()[cl].find(ctx);
      auto eit = ecounts[cl].find(ctx);
      double mass = lambda * (mit != model.tables()[cl].end() ? 1.0 : 0.0) +
                    (1.0 - lambda) * (eit != ecounts[cl].end() ? 1.0 : 0.0);
      if (mass <= 0) continue;  // row drops out entirely
      std::vector<double> mixed(V, 0.0);
      if (mit != model.tables()[cl].end()) {
        auto p = KGramModel::softmax(mit->second.logits);
        for (int k = 0; k < V; ++k) mixed[k] += lambda * p[k];
      }
      if (eit != ecounts[cl].end()) {
        double total = 0;
        for (double c : eit->second) total += c;
        if (total > 0)
          for (int k = 0; k < V; ++k) mixed[k] += (1.0 - lambda) * eit->second[k] / total;
      }
      KGramModel::Row nrow;
      nrow.logits.resize(V);
      for (int k = 0; k < V; ++k) {
        double p = mixed[k] / mass;
        nrow.logits[k] = p > 0 ? std::log(p) : -1e30;
      }
      out.tables()[cl].emplace(ctx, std::move(nrow));
    }
  }
  return out;
}

// Augmented-likelihood policy step. Per sequence s the target is
//   T(s) = log p_prior(s) + sigma * score(s)
// and the loss is mean (T(s) - log p_agent(s))^2. One analytic gradient
// descent step on the agent logits (through the softmax rows); the prior is
// untouched. Returns the mean loss at the pre-update parameters.
inline double reinvent_loss(const KGramModel& agent, const KGramModel& prior,
                            const std::vector<std::pair<TokenSeq, double>>& batch, double sigma) {
  if (sigma < 0) throw StringError("sigma must be >= 0");
  double loss = 0;
  for (auto& [seq, score] : batch) {
    double target = kgram_log_prob(prior, seq) + sigma * score;
    double la = kgram_log_prob(agent, seq);
    loss += (la - target) * (la - target);
  }
  return batch.empty() ? 0.0 : loss / batch.size();
}

inline double reinvent_grad_step(KGramModel& agent, const KGramModel& prior,
                                 const std::vector<std::pair<TokenSeq, double>>& batch,
                                 double sigma, double lr) {
  if (sigma < 0) throw StringError("sigma must be >= 0");
  if (batch.empty()) return 0.0;
  for (auto& [seq, score] : batch)
    if (score < 0.0 || score > 1.0) throw StringError("scores must lie in [0,1]");

  const Vocab& vocab = agent.vocab();
  int V = vocab.size();
  // gradient accumulator per touched row
  std::map<KGramModel::Row*, std::vector<double>> grads;
  double loss = 0;
  double inv_b = 1.0 / batch.size();

  for (auto& [seq, score] : batch) {
    std::vector<int> ids = detail::to_ids(vocab, seq);
    int len = static_cast<int>(ids.size());
    double la = 0;
    std::vector<std::pair<KGramModel::Row*, int>> touched;
    for (int t = 0; t <= len; ++t) {
      int tok = t < len ? ids[t] : vocab.eos;
      auto ctx = detail::context_at(ids, t, agent.order() - 1, vocab.bos);
      KGramModel::Row* row = agent.lookup_mut(ctx);
      if (!row) throw StringError("agent has no unigram row (not fitted)");
      la += agent.row_log_prob(*row, tok);
      touched.push_back({row, tok});
    }
    double target = kgram_log_prob(prior, seq) + sigma * score;
    double resid = la - target;
    loss += resid * resid * inv_b;
    double coef = 2.0 * resid * inv_b;
    for (auto& [row, tok] : touched) {
      auto& g = grads[row];
      if (g.empty()) g.assign(V, 0.0);
      auto p = KGramModel::softmax(row->logits);
      for (int k = 0; k < V; ++k) g[k] += coef * ((k == tok ? 1.0 : 0.0) - p[k]);
    }
  }
  for (auto& [row, g] : grads)
    for (int k = 0; k < V; ++k) row->logits[k] -= lr * g[k];
  return loss;
}

// Plain-text model table: header, vocabulary, then sorted (context, token,
// logit) triples. Diffable and reloadable.
inline void kgram_save(const KGramModel& model, std::ostream& os) {
  os << "kgram " << model.order() << " " << model.alpha() << "\n";
  os << "vocab " << model.vocab().size() << "\n";
  for (const auto& s : model.vocab().symbols) os << s << "\n";
  char buf[64];
  for (int cl = 0; cl < model.order(); ++cl) {
    for (const auto& [ctx, row] : model.tables()[cl]) {
      for (int k = 0; k < model.vocab().size(); ++k) {
        std::string ctx_txt;
        for (int id : ctx) ctx_txt += model.vocab().symbols[id];
        if (ctx_txt.empty()) ctx_txt = "-";
        std::snprintf(buf, sizeof buf, "%.17g", row.logits[k]);
        os << cl << "\t" << ctx_txt << "\t" << model.vocab().symbols[k] << "\t" << buf << "\n";
      }
    }
  }
}

inline KGramModel kgram_load(std::istream& is) {
  std::string tag;
  int order;
  double alpha;
  if (!(is >> tag >> order >> alpha) || tag != "kgram")
    throw StringError("bad kgram table header");
  int vsize;
  if (!(is >> tag >> vsize) || tag != "vocab") throw StringError("bad kgram vocab header");
  std::vector<std::string> syms(vsize);
  for (auto& s : syms)
    if (!(is >> s)) throw StringError("truncated kgram vocab");
  KGramModel model(order, alpha, Vocab::from_symbols(std::move(syms)));

  auto split_tokens = [](const std::string& s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
      if (s[i] != '[') throw StringError("malformed context text: " + s);
      std::size_t close = s.find(']', i);
      if (close == std::string::npos) throw StringError("malformed context text: " + s);
      out.push_back(s.substr(i, close - i + 1));
      i = close + 1;
    }
    return out;
  };

  std::string line;
  std::getline(is, line);  // consume end of vocab line
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    int cl;
    std::string ctx_txt, tok;
    double logit;
    if (!(ls >> cl >> ctx_txt >> tok >> logit)) throw StringError("malformed kgram table line");
    KGramModel::Context ctx;
    if (ctx_txt != "-")
      for (const auto& t : split_tokens(ctx_txt)) ctx.push_back(model.vocab().id(t));
    auto& row = model.tables()[cl][ctx];
    if (row.logits.empty()) row.logits.assign(model.vocab().size(), -1e30);
    row.logits[model.vocab().id(tok)] = logit;
  }
  return model;
}

}  // namespace molbench::strings
