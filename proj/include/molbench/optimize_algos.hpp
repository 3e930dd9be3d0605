#pragma once

// Algorithm implementations behind optimize::run(). Each optimizer exposes
// init() and generation(); the driver loops generations under the shared
// early-stopping rule and budget accounting.

#include "molbench/optimize.hpp"

namespace molbench::optimize {

namespace detail {

struct RunCtx {
  const OptimizerConfig& cfg;
  oracle::BudgetedOracle& oracle;
  const std::vector<Molecule>& pool;
  std::mt19937_64& rng;

  double evaluate(const Molecule& m) { return oracle.call(m); }
  double evaluate(const Molecule& m, const std::string& canonical) {
    return oracle.call_canonical(canonical, m);
  }
};

struct Optimizer {
  virtual ~Optimizer() = default;
  virtual void init(RunCtx& ctx) = 0;
  // One generation; false when the algorithm has nothing left to do.
  virtual bool generation(RunCtx& ctx) = 0;
  virtual oracle::Terminal natural_terminal() const { return oracle::Terminal::PoolExhausted; }
};

inline std::vector<Member> evaluate_pool_sample(RunCtx& ctx, int count) {
  if (ctx.pool.empty()) throw ConfigError("this optimizer needs a non-empty pool");
  std::vector<Member> out;
  for (int idx : sample_indices(ctx.rng, static_cast<int>(ctx.pool.size()), count)) {
    Member m;
    m.mol = ctx.pool[idx];
    m.canonical = chem::to_canonical_smiles(m.mol);
    m.score = ctx.evaluate(m.mol, m.canonical);
    out.push_back(std::move(m));
  }
  return out;
}

// ---------------------------------------------------------------------- //

class ScreeningOpt : public Optimizer {
 public:
  void init(RunCtx& ctx) override {
    if (ctx.pool.empty()) throw ConfigError("screening needs a non-empty pool");
    perm_ = sample_indices(ctx.rng, static_cast<int>(ctx.pool.size()),
                           static_cast<int>(ctx.pool.size()));
  }
  bool generation(RunCtx& ctx) override {
    if (cursor_ >= perm_.size()) return false;
    int n = 0;
    while (cursor_ < perm_.size() && n < ctx.cfg.screening_batch) {
      ctx.evaluate(ctx.pool[perm_[cursor_++]]);
      ++n;
    }
    return cursor_ < perm_.size();
  }

 private:
  std::vector<int> perm_;
  std::size_t cursor_ = 0;
};

// ---------------------------------------------------------------------- //

// Model-based screening: closed-form ridge regression on fingerprint bits,
// refit online, always evaluating the highest-predicted unseen pool members.
class MolpalOpt : public Optimizer {
 public:
  void init(RunCtx& ctx) override {
    if (ctx.pool.empty()) throw ConfigError("molpal needs a non-empty pool");
    int n = static_cast<int>(ctx.pool.size());
    d_ = ctx.cfg.molpal_fp.width;
    fps_.reserve(n);
    for (const auto& m : ctx.pool) fps_.push_back(fingerprint::morgan_fp(m, ctx.cfg.molpal_fp));
    evaluated_.assign(n, false);
    gram_.assign(d_ * d_, 0.0);
    xty_.assign(d_, 0.0);
    for (int idx : sample_indices(ctx.rng, n, ctx.cfg.molpal_init)) observe(ctx, idx);
  }

  bool generation(RunCtx& ctx) override {
    int n = static_cast<int>(ctx.pool.size());
    std::vector<double> w = ridge_solve(ctx.cfg.molpal_ridge_lambda);
    std::vector<std::pair<double, int>> pred;
    for (int i = 0; i < n; ++i) {
      if (evaluated_[i]) continue;
      double p = 0;
      for_each_bit(fps_[i], [&](int bit) { p += w[bit]; });
      pred.push_back({-p, i});  // ties break toward lower pool index
    }
    if (pred.empty()) return false;
    std::sort(pred.begin(), pred.end());
    int take = std::min<int>(ctx.cfg.molpal_batch, static_cast<int>(pred.size()));
    for (int k = 0; k < take; ++k) observe(ctx, pred[k].second);
    return static_cast<int>(pred.size()) > take;
  }

 private:
  int d_ = 0;
  std::vector<Fingerprint> fps_;
  std::vector<bool> evaluated_;
  std::vector<double> gram_;  // X^T X
  std::vector<double> xty_;   // X^T y

  template <class F>
  static void for_each_bit(const Fingerprint& fp, F&& f) {
    const auto& words = fp.words();
    for (std::size_t w = 0; w < words.size(); ++w) {
      std::uint64_t x = words[w];
      while (x) {
        int b = std::countr_zero(x);
        f(static_cast<int>(w * 64 + b));
        x &= x - 1;
      }
    }
  }

  void observe(RunCtx& ctx, int idx) {
    double y = ctx.evaluate(ctx.pool[idx]);
    evaluated_[idx] = true;
    std::vector<int> bits;
    for_each_bit(fps_[idx], [&](int b) { bits.push_back(b); });
    for (int a : bits) {
      xty_[a] += y;
      for (int b : bits) gram_[a * d_ + b] += 1.0;
    }
  }

  std::vector<double> ridge_solve(double lambda) const {
    std::vector<double> a = gram_;
    for (int i = 0; i < d_; ++i) a[i * d_ + i] += lambda;
    if (!cholesky_inplace(a, d_)) throw SingularKernel("ridge normal equations not SPD");
    std::vector<double> w = xty_;
    solve_lower(a, d_, w);
    solve_upper_t(a, d_, w);
    return w;
  }
};

// ---------------------------------------------------------------------- //

class GraphGaOpt : public Optimizer {
 public:
  void init(RunCtx& ctx) override { pop_ = evaluate_pool_sample(ctx, ctx.cfg.ga_population); }

  bool generation(RunCtx& ctx) override {
    std::vector<Member> offspring;
    int attempts = 0;
    int max_attempts = ctx.cfg.ga_offspring * 10;
    while (static_cast<int>(offspring.size()) < ctx.cfg.ga_offspring &&
           attempts++ < max_attempts) {
      const Member& pa = pop_[roulette(ctx.rng, pop_)];
      const Member& pb = pop_[roulette(ctx.rng, pop_)];
      auto child = ga_crossover(pa.mol, pb.mol, ctx.rng, ctx.cfg.ga_max_heavy);
      if (!child) continue;
      auto mutated = ga_mutate(*child, ctx.rng, ctx.cfg.ga_mutation_rate);
      Molecule final_mol = mutated ? std::move(*mutated) : std::move(*child);
      Member m;
      m.mol = std::move(final_mol);
      m.canonical = chem::to_canonical_smiles(m.mol);
      m.score = ctx.evaluate(m.mol, m.canonical);
      offspring.push_back(std::move(m));
    }
    for (auto& m : offspring) pop_.push_back(std::move(m));
    sort_members(pop_);
    dedupe_sorted_members(pop_);
    if (static_cast<int>(pop_.size()) > ctx.cfg.ga_population)
      pop_.resize(ctx.cfg.ga_population);
    return true;
  }

  oracle::Terminal natural_terminal() const override { return oracle::Terminal::EarlyStopped; }

 private:
  std::vector<Member> pop_;
};

// ---------------------------------------------------------------------- //

class SmilesGaOpt : public Optimizer {
 public:
  void init(RunCtx& ctx) override {
    pop_ = evaluate_pool_sample(ctx, ctx.cfg.sga_population);
    std::set<std::string> uniq;
    int budget = 0;
    for (const auto& m : ctx.pool) {
      for (auto& t : strings::tokenize_smiles(chem::to_canonical_smiles(m)).tokens)
        uniq.insert(t);
      if (++budget >= 2000) break;  // vocabulary saturates quickly
    }
    vocab_.assign(uniq.begin(), uniq.end());
  }

  bool generation(RunCtx& ctx) override {
    std::vector<Member> offspring;
    for (int k = 0; k < ctx.cfg.sga_mutants; ++k) {
      const Member& parent = pop_[rand_int(ctx.rng, static_cast<int>(pop_.size()))];
      auto tokens = strings::tokenize_smiles(parent.canonical).tokens;
      int op = rand_int(ctx.rng, 3);
      int len = static_cast<int>(tokens.size());
      if (op == 0 && len > 0) {  // substitute
        tokens[rand_int(ctx.rng, len)] = vocab_[rand_int(ctx.rng, (int)vocab_.size())];
      } else if (op == 1) {  // insert
        tokens.insert(tokens.begin() + rand_int(ctx.rng, len + 1),
                      vocab_[rand_int(ctx.rng, (int)vocab_.size())]);
      } else if (len > 1) {  // delete
        tokens.erase(tokens.begin() + rand_int(ctx.rng, len));
      } else {
        continue;
      }
      std::string smiles;
      for (auto& t : tokens) smiles += t;
      if (static_cast<int>(smiles.size()) > ctx.cfg.sga_max_len) continue;
      Molecule mol;
      try {
        mol = chem::parse_smiles(smiles);
      } catch (const chem::ChemError&) {
        continue;  // only mutants that parse reach the oracle
      }
      Member m;
      m.mol = std::move(mol);
      m.canonical = chem::to_canonical_smiles(m.mol);
      m.score = ctx.evaluate(m.mol, m.canonical);
      offspring.push_back(std::move(m));
    }
    for (auto& m : offspring) pop_.push_back(std::move(m));
    sort_members(pop_);
    dedupe_sorted_members(pop_);
    if (static_cast<int>(pop_.size()) > ctx.cfg.sga_population)
      pop_.resize(ctx.cfg.sga_population);
    return true;
  }

  oracle::Terminal natural_terminal() const override { return oracle::Terminal::EarlyStopped; }

 private:
  std::vector<Member> pop_;
  std::vector<std::string> vocab_;
};

// ---------------------------------------------------------------------- //

// Mutation-only GA over robust token strings; the total decoder guarantees
// every offspring is valid without filtering.
class StonedOpt : public Optimizer {
 public:
  void init(RunCtx& ctx) override {
    pop_ = evaluate_pool_sample(ctx, ctx.cfg.stoned_population);
  }

  bool generation(RunCtx& ctx) override {
    const auto& vocab = strings::robust_vocab();
    std::vector<Member> offspring;
    for (int k = 0; k < ctx.cfg.stoned_population; ++k) {
      const Member& parent = pop_[rand_int(ctx.rng, static_cast<int>(pop_.size()))];
      strings::TokenSeq seq;
      try {
        seq = strings::robust_encode(parent.mol);
      } catch (const strings::EncodingError&) {
        continue;
      }
      int len = static_cast<int>(seq.tokens.size());
      int op = rand_int(ctx.rng, 3);
      const std::string& tok = vocab.symbols[rand_int(ctx.rng, vocab.size())];
      if (op == 0 && len > 0)
        seq.tokens[rand_int(ctx.rng, len)] = tok;
      else if (op == 1)
        seq.tokens.insert(seq.tokens.begin() + rand_int(ctx.rng, len + 1), tok);
      else if (len > 1)
        seq.tokens.erase(seq.tokens.begin() + rand_int(ctx.rng, len));
      else
        continue;
      Member m;
      m.mol = strings::robust_decode(seq);
      m.canonical = chem::to_canonical_smiles(m.mol);
      m.score = ctx.evaluate(m.mol, m.canonical);
      offspring.push_back(std::move(m));
    }
    for (auto& m : offspring) pop_.push_back(std::move(m));
    sort_members(pop_);
    dedupe_sorted_members(pop_);
    if (static_cast<int>(pop_.size()) > ctx.cfg.stoned_population)
      pop_.resize(ctx.cfg.stoned_population);
    return true;
  }

  oracle::Terminal natural_terminal() const override { return oracle::Terminal::EarlyStopped; }

 private:
  std::vector<Member> pop_;
};

// ---------------------------------------------------------------------- //

inline strings::KGramModel fit_pool_model(RunCtx& ctx) {
  if (ctx.pool.empty()) throw ConfigError("k-gram pretraining needs a non-empty pool");
  std::vector<strings::TokenSeq> corpus;
  for (const auto& m : ctx.pool) {
    try {
      corpus.push_back(strings::robust_encode(m));
    } catch (const strings::EncodingError&) {
      // out-of-grammar pool member (exotic charge); skipped from pretraining
    }
  }
  if (corpus.empty()) throw ConfigError("no pool molecule is encodable in the robust grammar");
  return strings::kgram_fit(corpus, ctx.cfg.kgram_order, ctx.cfg.kgram_alpha,
                            strings::robust_vocab());
}

// Cross-entropy hill climbing: sample, evaluate the distinct decodes, refit
// the generator toward the elite set.
class HillClimbOpt : public Optimizer {
 public:
  void init(RunCtx& ctx) override { model_ = fit_pool_model(ctx); }

  bool generation(RunCtx& ctx) override {
    std::vector<Member> distinct;
    std::set<std::string> seen;
    for (int k = 0; k < ctx.cfg.hc_samples; ++k) {
      strings::TokenSeq seq = strings::kgram_sample(model_, ctx.rng, ctx.cfg.max_seq_len,
                                                    ctx.cfg.sample_temperature,
                                                    strings::TokenKind::RobustTokens);
      Molecule mol = strings::robust_decode(seq);
      std::string canonical = chem::to_canonical_smiles(mol);
      if (!seen.insert(canonical).second) continue;
      Member m;
      m.mol = std::move(mol);
      m.canonical = std::move(canonical);
      m.score = ctx.evaluate(m.mol, m.canonical);
      distinct.push_back(std::move(m));
    }
    if (distinct.empty()) return true;
    sort_members(distinct);
    int keep = std::min<int>(ctx.cfg.hc_keep, static_cast<int>(distinct.size()));
    std::vector<std::pair<strings::TokenSeq, double>> elite;
    for (int i = 0; i < keep; ++i) {
      try {
        elite.push_back({strings::robust_encode(distinct[i].mol),
                         ctx.cfg.hc_score_weighted ? distinct[i].score : 1.0});
      } catch (const strings::EncodingError&) {
      }
    }
    if (!elite.empty()) {
      bool all_zero = true;
      for (auto& [s, w] : elite) all_zero &= w <= 0;
      if (all_zero)
        for (auto& [s, w] : elite) w = 1.0;
      model_ = strings::kgram_weighted_refit(model_, elite, ctx.cfg.hc_mix_lambda);
    }
    return true;
  }

  oracle::Terminal natural_terminal() const override { return oracle::Terminal::EarlyStopped; }

 private:
  strings::KGramModel model_;
};

// ---------------------------------------------------------------------- //

// Augmented-likelihood policy optimization with a frozen pretrained prior.
class ReinventOpt : public Optimizer {
 public:
  void init(RunCtx& ctx) override {
    prior_ = fit_pool_model(ctx);
    agent_ = prior_;
  }

  bool generation(RunCtx& ctx) override {
    std::vector<std::pair<strings::TokenSeq, double>> batch;
    for (int k = 0; k < ctx.cfg.reinvent_batch; ++k) {
      strings::TokenSeq seq = strings::kgram_sample(agent_, ctx.rng, ctx.cfg.max_seq_len,
                                                    ctx.cfg.sample_temperature,
                                                    strings::TokenKind::RobustTokens);
      Molecule mol = strings::robust_decode(seq);
      double score = ctx.evaluate(mol);
      batch.push_back({std::move(seq), score});
    }
    strings::reinvent_grad_step(agent_, prior_, batch, ctx.cfg.reinvent_sigma,
                                ctx.cfg.reinvent_lr);
    return true;
  }

  oracle::Terminal natural_terminal() const override { return oracle::Terminal::EarlyStopped; }

 private:
  strings::KGramModel prior_;
  strings::KGramModel agent_;
};

// ---------------------------------------------------------------------- //

// Atom-level MCTS from ethane with UCB1 selection. One generation = one
// decision round (cfg.mcts_simulations rollouts, then descend to the best
// child); exhausted paths restart from the root state.
class GraphMctsOpt : public Optimizer {
 public:
  struct Node {
    Molecule state;
    int visits = 0;
    double total = 0;
    std::vector<std::unique_ptr<Node>> children;
    std::vector<Molecule> untried;
    bool expanded_actions = false;
  };

  void init(RunCtx& ctx) override {
    (void)ctx;
    reset_root();
  }

  bool generation(RunCtx& ctx) override {
    for (int s = 0; s < ctx.cfg.mcts_simulations; ++s) simulate(ctx, *root_);
    // descend to the best child by mean reward
    Node* best = nullptr;
    for (auto& ch : root_->children) {
      if (ch->visits == 0) continue;
      if (!best || ch->total / ch->visits > best->total / best->visits) best = ch.get();
    }
    if (!best) {
      reset_root();
      return true;
    }
    // adopt the child as the new root (keep its subtree)
    std::unique_ptr<Node> keep;
    for (auto& ch : root_->children)
      if (ch.get() == best) keep = std::move(ch);
    root_ = std::move(keep);
    if (heavy_atoms(root_->state) >= ctx.cfg.mcts_max_atoms) reset_root();
    return true;
  }

  oracle::Terminal natural_terminal() const override { return oracle::Terminal::EarlyStopped; }

  const Node* root() const { return root_.get(); }

  // Exposed for tests: legal single-step extensions of a state.
  static std::vector<Molecule> enumerate_actions(const Molecule& m, int max_atoms) {
    static const chem::Element kElems[] = {chem::Element::C, chem::Element::N, chem::Element::O,
                                           chem::Element::F, chem::Element::S, chem::Element::Cl};
    std::vector<Molecule> out;
    int heavy = heavy_atoms(m);
    // append an atom
    if (heavy < max_atoms) {
      for (int i = 0; i < m.atom_count(); ++i) {
        if (spare_valence(m, i) < 1) continue;
        for (chem::Element e : kElems) {
          try {
            chem::MoleculeBuilder b = chem::MoleculeBuilder::from_kekule(m);
            int x = b.add_atom(e);
            b.add_bond(i, x, 1);
            out.push_back(b.finalize());
          } catch (const chem::ChemError&) {
          }
        }
      }
    }
    // increase a bond order
    for (int bi = 0; bi < m.bond_count(); ++bi) {
      const chem::Bond& bd = m.bond(bi);
      if (bd.aromatic || bd.order >= 3) continue;
      if (spare_valence(m, bd.a) < 1 || spare_valence(m, bd.b) < 1) continue;
      try {
        chem::MoleculeBuilder b = chem::MoleculeBuilder::from_kekule(m);
        b.bonds()[bi].order += 1;
        out.push_back(b.finalize());
      } catch (const chem::ChemError&) {
      }
    }
    // close a 5- or 6-ring
    for (int u = 0; u < m.atom_count(); ++u) {
      if (spare_valence(m, u) < 1) continue;
      auto dist = bfs_distances(m, u);
      for (int v = u + 1; v < m.atom_count(); ++v) {
        if ((dist[v] != 4 && dist[v] != 5) || spare_valence(m, v) < 1) continue;
        if (m.bond_between(u, v)) continue;
        try {
          chem::MoleculeBuilder b = chem::MoleculeBuilder::from_kekule(m);
          b.add_bond(u, v, 1);
          out.push_back(b.finalize());
        } catch (const chem::ChemError&) {
        }
      }
    }
    return out;
  }

 private:
  std::unique_ptr<Node> root_;

  void reset_root() {
    root_ = std::make_unique<Node>();
    root_->state = chem::parse_smiles("CC");  // ethane start state
  }

  void ensure_actions(RunCtx& ctx, Node& node) {
    if (node.expanded_actions) return;
    node.expanded_actions = true;
    node.untried = enumerate_actions(node.state, ctx.cfg.mcts_max_atoms);
    // shuffle so the capped child set is a random subset
    for (std::size_t i = node.untried.size(); i > 1; --i)
      std::swap(node.untried[i - 1], node.untried[rand_int(ctx.rng, static_cast<int>(i))]);
  }

  double rollout(RunCtx& ctx, const Molecule& from) {
    Molecule cur = from;
    while (heavy_atoms(cur) < ctx.cfg.mcts_max_atoms) {
      if (rand_real(ctx.rng) < ctx.cfg.mcts_rollout_stop) break;
      auto actions = enumerate_actions(cur, ctx.cfg.mcts_max_atoms);
      if (actions.empty()) break;
      cur = std::move(actions[rand_int(ctx.rng, static_cast<int>(actions.size()))]);
    }
    return ctx.evaluate(cur);
  }

  double simulate(RunCtx& ctx, Node& node) {
    ensure_actions(ctx, node);
    double reward;
    if (static_cast<int>(node.children.size()) < ctx.cfg.mcts_max_children &&
        !node.untried.empty()) {
      auto child = std::make_unique<Node>();
      child->state = std::move(node.untried.back());
      node.untried.pop_back();
      reward = rollout(ctx, child->state);
      child->visits = 1;
      child->total = reward;
      node.children.push_back(std::move(child));
    } else if (!node.children.empty()) {
      // UCB1; unvisited children are forced (infinite score)
      Node* pick = nullptr;
      double best_ucb = -1;
      for (auto& ch : node.children) {
        double ucb = ch->visits == 0
                         ? std::numeric_limits<double>::infinity()
                         : ch->total / ch->visits +
                               ctx.cfg.mcts_exploration *
                                   std::sqrt(std::log(static_cast<double>(node.visits)) /
                                             ch->visits);
        if (!pick || ucb > best_ucb) {
          pick = ch.get();
          best_ucb = ucb;
        }
      }
      reward = simulate(ctx, *pick);
    } else {
      reward = rollout(ctx, node.state);  // terminal state
    }
    node.visits += 1;
    node.total += reward;
    return reward;
  }
};

// ---------------------------------------------------------------------- //

// GP-BO: exact GP surrogate on all evaluated molecules, expected-improvement
// acquisition maximized by an inner Graph GA that spends no oracle budget.
class GpBoOpt : public Optimizer {
 public:
  void init(RunCtx& ctx) override {
    auto members = evaluate_pool_sample(ctx, ctx.cfg.gpbo_init);
    for (auto& m : members) add_data(ctx, std::move(m));
  }

  bool generation(RunCtx& ctx) override {
    GPModel gp = fit_surrogate(ctx);
    double best = 0;
    for (auto& m : data_) best = std::max(best, m.score);

    struct Cand {
      Molecule mol;
      std::string canonical;
      Fingerprint fp;
      double ei;
    };
    auto make_cand = [&](Molecule mol) {
      Cand c;
      c.canonical = chem::to_canonical_smiles(mol);
      c.fp = fingerprint::morgan_fp(mol, ctx.cfg.gpbo_fp);
      c.ei = gp_acquire(gp, c.fp, best);
      c.mol = std::move(mol);
      return c;
    };
    auto cand_sorter = [](const Cand& a, const Cand& b) {
      if (a.ei != b.ei) return a.ei > b.ei;
      return a.canonical < b.canonical;
    };

    // seed the inner population from evaluated molecules plus a pool sample
    std::vector<Cand> pop;
    std::set<std::string> in_pop;
    for (auto& m : data_) {
      Cand c = make_cand(m.mol);
      if (in_pop.insert(c.canonical).second) pop.push_back(std::move(c));
    }
    for (int idx : sample_indices(ctx.rng, static_cast<int>(ctx.pool.size()),
                                  ctx.cfg.gpbo_inner_population)) {
      Cand c = make_cand(ctx.pool[idx]);
      if (in_pop.insert(c.canonical).second) pop.push_back(std::move(c));
    }
    std::sort(pop.begin(), pop.end(), cand_sorter);
    if (static_cast<int>(pop.size()) > ctx.cfg.gpbo_inner_population)
      pop.resize(ctx.cfg.gpbo_inner_population);

    auto roulette_ei = [&](const std::vector<Cand>& p) {
      double total = 0;
      for (auto& c : p) total += c.ei + 1e-9;
      double u = rand_real(ctx.rng) * total;
      double acc = 0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        acc += p[i].ei + 1e-9;
        if (u < acc) return static_cast<int>(i);
      }
      return static_cast<int>(p.size()) - 1;
    };

    double inner_best = pop.empty() ? 0 : pop.front().ei;
    int stale = 0;
    for (int g = 0; g < ctx.cfg.gpbo_inner_generations && !pop.empty(); ++g) {
      std::vector<Cand> offspring;
      int attempts = 0;
      while (static_cast<int>(offspring.size()) < ctx.cfg.gpbo_inner_offspring &&
             attempts++ < ctx.cfg.gpbo_inner_offspring * 5) {
        const Cand& pa = pop[roulette_ei(pop)];
        const Cand& pb = pop[roulette_ei(pop)];
        auto child = ga_crossover(pa.mol, pb.mol, ctx.rng, ctx.cfg.ga_max_heavy);
        if (!child) continue;
        auto mutated = ga_mutate(*child, ctx.rng, ctx.cfg.gpbo_inner_mutation);
        Cand c = make_cand(mutated ? std::move(*mutated) : std::move(*child));
        if (in_pop.insert(c.canonical).second) offspring.push_back(std::move(c));
      }
      for (auto& c : offspring) pop.push_back(std::move(c));
      std::sort(pop.begin(), pop.end(), cand_sorter);
      if (static_cast<int>(pop.size()) > ctx.cfg.gpbo_inner_population)
        pop.resize(ctx.cfg.gpbo_inner_population);
      if (pop.front().ei > inner_best + 1e-12) {
        inner_best = pop.front().ei;
        stale = 0;
      } else if (++stale >= ctx.cfg.gpbo_inner_patience) {
        break;
      }
    }

    // evaluate the acquisition winners that are genuinely new
    int taken = 0;
    for (auto& c : pop) {
      if (taken >= ctx.cfg.gpbo_batch) break;
      if (evaluated_.count(c.canonical)) continue;
      Member m;
      m.score = ctx.evaluate(c.mol, c.canonical);
      m.mol = std::move(c.mol);
      m.canonical = std::move(c.canonical);
      add_data(ctx, std::move(m));
      ++taken;
    }
    return taken > 0;
  }

  oracle::Terminal natural_terminal() const override { return oracle::Terminal::EarlyStopped; }

 private:
  std::vector<Member> data_;
  std::vector<Fingerprint> fps_;
  std::set<std::string> evaluated_;

  void add_data(RunCtx& ctx, Member m) {
    evaluated_.insert(m.canonical);
    fps_.push_back(fingerprint::morgan_fp(m.mol, ctx.cfg.gpbo_fp));
    data_.push_back(std::move(m));
  }

  // Cap the training set: best half by score plus the most recent half.
  GPModel fit_surrogate(RunCtx& ctx) const {
    int n = static_cast<int>(data_.size());
    int cap = ctx.cfg.gpbo_max_train;
    std::vector<int> take;
    if (n <= cap) {
      take.resize(n);
      for (int i = 0; i < n; ++i) take[i] = i;
    } else {
      std::vector<int> by_score(n);
      for (int i = 0; i < n; ++i) by_score[i] = i;
      std::sort(by_score.begin(), by_score.end(), [&](int a, int b) {
        if (data_[a].score != data_[b].score) return data_[a].score > data_[b].score;
        return a < b;
      });
      std::set<int> chosen;
      for (int i = 0; i < cap / 2; ++i) chosen.insert(by_score[i]);
      for (int i = n - 1; static_cast<int>(chosen.size()) < cap && i >= 0; --i)
        chosen.insert(i);
      take.assign(chosen.begin(), chosen.end());
    }
    std::vector<Fingerprint> x;
    std::vector<double> y;
    for (int i : take) {
      x.push_back(fps_[i]);
      y.push_back(data_[i].score);
    }
    return gp_fit(std::move(x), std::move(y), ctx.cfg.gp_amplitude, ctx.cfg.gp_jitter);
  }
};

inline std::unique_ptr<Optimizer> make_optimizer(Algorithm a) {
  switch (a) {
    case Algorithm::Screening: return std::make_unique<ScreeningOpt>();
    case Algorithm::Molpal: return std::make_unique<MolpalOpt>();
    case Algorithm::GraphGa: return std::make_unique<GraphGaOpt>();
    case Algorithm::SmilesGa: return std::make_unique<SmilesGaOpt>();
    case Algorithm::Stoned: return std::make_unique<StonedOpt>();
    case Algorithm::HillClimb: return std::make_unique<HillClimbOpt>();
    case Algorithm::Reinvent: return std::make_unique<ReinventOpt>();
    case Algorithm::GraphMcts: return std::make_unique<GraphMctsOpt>();
    case Algorithm::GpBo: return std::make_unique<GpBoOpt>();
  }
  throw ConfigError("unknown algorithm");
}

}  // namespace detail

// Uniform run driver: loops the algorithm's generations until the budget is
// exhausted, the pool runs dry, or the early-stopping rule fires (top-100
// mean improved by less than improvement_eps for `patience` consecutive
// generations).
inline RunResult run(const OptimizerConfig& cfg, oracle::BudgetedOracle& orc,
                     const std::vector<Molecule>& pool, std::mt19937_64& rng) {
  cfg.validate();
  auto t0 = std::chrono::steady_clock::now();

  detail::RunCtx ctx{cfg, orc, pool, rng};
  auto opt = detail::make_optimizer(cfg.algorithm);
  oracle::Terminal terminal = oracle::Terminal::EarlyStopped;
  int generations = 0;

  double best_stat = -std::numeric_limits<double>::infinity();
  int streak = 0;

  try {
    opt->init(ctx);
    while (true) {
      bool more = opt->generation(ctx);
      ++generations;
      double stat = metrics::topk_mean(orc.trace(), 100);
      if (stat > best_stat + cfg.improvement_eps) {
        best_stat = stat;
        streak = 0;
      } else {
        ++streak;
      }
      if (!more) {
        terminal = opt->natural_terminal();
        break;
      }
      if (streak >= cfg.patience) {
        terminal = oracle::Terminal::EarlyStopped;
        break;
      }
    }
  } catch (const oracle::BudgetExhausted&) {
    terminal = oracle::Terminal::BudgetExhausted;
  }

  RunResult r;
  r.optimizer = cfg.display_name();
  r.trace = orc.trace();
  r.trace.terminal = terminal;
  r.generations = generations;
  r.auc_top1 = metrics::auc_topk(r.trace, 1, orc.budget());
  r.auc_top10 = metrics::auc_topk(r.trace, 10, orc.budget());
  r.auc_top100 = metrics::auc_topk(r.trace, 100, orc.budget());
  r.top1 = metrics::topk_mean(r.trace, 1);
  r.top10 = metrics::topk_mean(r.trace, 10);
  r.top100 = metrics::topk_mean(r.trace, 100);

  // diversity of the final top-100 distinct molecules
  std::vector<const oracle::TraceRecord*> recs;
  for (const auto& rec : r.trace.records) recs.push_back(&rec);
  std::sort(recs.begin(), recs.end(), [](auto* a, auto* b) {
    if (a->score != b->score) return a->score > b->score;
    return a->canonical < b->canonical;
  });
  if (recs.size() >= 2) {
    std::vector<Molecule> top;
    for (std::size_t i = 0; i < recs.size() && i < 100; ++i)
      top.push_back(chem::parse_smiles(recs[i]->canonical));
    r.diversity_top100 = metrics::diversity(top);
  }

  r.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace molbench::optimize
