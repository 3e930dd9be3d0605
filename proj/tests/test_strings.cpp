#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <sstream>

#include "molbench/strings.hpp"
#include "support/graph_iso.hpp"

using namespace molbench;
using namespace molbench::strings;
using chem::parse_smiles;
using chem::to_canonical_smiles;

namespace {

const std::vector<std::string> kCorpus = {
    "CCO", "CC(=O)OC1=CC=CC=C1C(=O)O", "c1ccccc1", "c1ccc2ccccc2c1",
    "CC(C)Cc1ccc(cc1)C(C)C(=O)O", "CN1C=NC2=C1C(=O)N(C)C(=O)N2C",
    "Cc1ccc(cc1)S(=O)(=O)N", "C1CCNCC1", "c1cc[nH]c1", "c1ccncc1",
    "CC(N)C(=O)O", "C#N", "OCC(O)CO", "FC(F)(F)c1ccccc1", "CCOP(=O)(OCC)OCC",
    "C[N+](C)(C)C", "CC(=O)[O-]", "C1CC2CCC1CC2", "N#Cc1ccccc1Cl",
    "BrCCBr", "Ic1ccccc1", "CSC", "c1ccc(cc1)-c1ccccc1",
};

TokenSeq seq_of(std::initializer_list<const char*> toks) {
  TokenSeq s;
  s.kind = TokenKind::RobustTokens;
  for (auto t : toks) s.tokens.emplace_back(t);
  return s;
}

std::vector<TokenSeq> toy_corpus(std::initializer_list<const char*> strings,
                                 const Vocab& vocab) {
  (void)vocab;
  std::vector<TokenSeq> out;
  for (auto s : strings) {
    TokenSeq seq;
    for (const char* p = s; *p; ++p) seq.tokens.emplace_back(1, *p);
    out.push_back(seq);
  }
  return out;
}

Vocab toy_vocab(std::initializer_list<const char*> symbols) {
  std::vector<std::string> syms{"[BOS]", "[EOS]"};
  for (auto s : symbols) syms.emplace_back(s);
  return Vocab::from_symbols(std::move(syms));
}

}  // namespace

TEST_CASE("smiles tokenization") {
  auto t = tokenize_smiles("CCl");
  REQUIRE(t.tokens.size() == 2);
  CHECK(t.tokens[0] == "C");
  CHECK(t.tokens[1] == "Cl");

  // atoms and %nn closures are single tokens: C, %12, C, C, %12
  t = tokenize_smiles("C%12CC%12");
  CHECK(t.tokens.size() == 5);
  CHECK(t.tokens[1] == "%12");

  t = tokenize_smiles("[NH4+]");
  REQUIRE(t.tokens.size() == 1);
  CHECK(t.tokens[0] == "[NH4+]");

  for (const auto& s : kCorpus) CHECK(detokenize(tokenize_smiles(s)) == s);
}

TEST_CASE("robust decode basics") {
  // empty sequence -> methane
  Molecule m = robust_decode(TokenSeq{{}, TokenKind::RobustTokens});
  CHECK(to_canonical_smiles(m) == "C");

  m = robust_decode(seq_of({"[C]", "[C]", "[O]"}));
  CHECK(to_canonical_smiles(m) == to_canonical_smiles(parse_smiles("CCO")));

  m = robust_decode(seq_of({"[C]", "[#N]"}));
  CHECK(to_canonical_smiles(m) == to_canonical_smiles(parse_smiles("C#N")));
}

TEST_CASE("robust decode saturation collapse") {
  // F is saturated after one bond: 20 further bond-atom tokens are dropped.
  TokenSeq seq = seq_of({"[C]", "[F]"});
  for (int i = 0; i < 20; ++i) seq.tokens.push_back(i % 2 ? "[=C]" : "[O]");
  Molecule m = robust_decode(seq);
  CHECK(to_canonical_smiles(m) == to_canonical_smiles(parse_smiles("CF")));
}

TEST_CASE("robust decode reduces oversized bond orders") {
  // triple bond to oxygen cannot fit oxygen's valence 2
  Molecule m = robust_decode(seq_of({"[C]", "[#O]"}));
  // order reduced to 2: formaldehyde-like C=O
  CHECK(to_canonical_smiles(m) == to_canonical_smiles(parse_smiles("C=O")));
}

TEST_CASE("robust encode round trip on corpus") {
  for (const auto& s : kCorpus) {
    Molecule m = parse_smiles(s);
    TokenSeq enc = robust_encode(m);
    for (const auto& tok : enc.tokens) CHECK(robust_vocab().contains(tok));
    Molecule dec = robust_decode(enc);
    INFO("smiles " << s);
    CHECK(to_canonical_smiles(dec) == to_canonical_smiles(m));
  }
}

TEST_CASE("robust decode total on fuzz") {
  // moderate fuzz here; the acceptance suite runs the 1e6-string sweep
  std::mt19937_64 rng(99);
  const Vocab& v = robust_vocab();
  std::uniform_int_distribution<int> len_d(0, 60);
  std::uniform_int_distribution<int> tok_d(0, v.size() - 1);
  for (int trial = 0; trial < 20000; ++trial) {
    TokenSeq seq;
    seq.kind = TokenKind::RobustTokens;
    int len = len_d(rng);
    for (int i = 0; i < len; ++i) seq.tokens.push_back(v.symbols[tok_d(rng)]);
    Molecule m = robust_decode(seq);  // must not throw
    // validity: canonical string reparses
    Molecule m2 = parse_smiles(to_canonical_smiles(m));
    CHECK(m2.atom_count() == m.atom_count());
  }
}

TEST_CASE("kgram degenerate corpus") {
  Vocab v = toy_vocab({"C"});
  auto corpus = toy_corpus({"CC"}, v);
  KGramModel model = kgram_fit(corpus, 3, 0.0, v);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    TokenSeq s = kgram_sample(model, rng, 100, 1.0, TokenKind::SmilesTokens);
    CHECK(detokenize(s) == "CC");
  }
  CHECK(kgram_log_prob(model, corpus[0]) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("kgram rows are distributions") {
  Vocab v = toy_vocab({"a", "b", "c"});
  auto corpus = toy_corpus({"abc", "aab", "bca", "abacab"}, v);
  for (double alpha : {0.0, 0.01, 1.0}) {
    KGramModel model = kgram_fit(corpus, 3, alpha, v);
    for (const auto& table : model.tables()) {
      for (const auto& [ctx, row] : table) {
        auto p = KGramModel::softmax(row.logits);
        double sum = 0;
        for (double x : p) sum += x;
        CHECK(sum == Catch::Approx(1.0).margin(1e-9));
        if (alpha > 0)
          for (double x : p) CHECK(x > 0.0);
      }
    }
  }
}

TEST_CASE("kgram uniform log prob") {
  // alpha -> huge makes the unigram row uniform over |V| = 4 (with 2-symbol
  // toy vocab: [BOS],[EOS],x,y); uniform length-2 string -> 3 * log(1/4)
  // (two tokens + EOS).  Instead pin the spec's exact case with a hand model.
  Vocab v = toy_vocab({"x", "y"});
  KGramModel model(1, 0.0, v);
  KGramModel::Row row;
  row.logits.assign(4, std::log(0.25));
  model.tables()[0].emplace(KGramModel::Context{}, row);
  TokenSeq s;
  s.tokens = {"x", "y"};
  CHECK(kgram_log_prob(model, s) == Catch::Approx(3 * std::log(0.25)).margin(1e-12));
}

TEST_CASE("kgram sampling frequency matches probability") {
  Vocab v = toy_vocab({"a", "b"});
  auto corpus = toy_corpus({"a", "a", "a", "b"}, v);
  KGramModel model = kgram_fit(corpus, 2, 0.0, v);
  // p("a") = 3/4 as first token
  std::mt19937_64 rng(42);
  int n = 100000;
  int count_a = 0;
  for (int i = 0; i < n; ++i) {
    TokenSeq s = kgram_sample(model, rng, 5, 1.0, TokenKind::SmilesTokens);
    REQUIRE(!s.tokens.empty());
    count_a += s.tokens[0] == "a";
  }
  double p = 0.75;
  double sigma = std::sqrt(p * (1 - p) * n);
  CHECK(std::abs(count_a - p * n) < 3 * sigma);
}

TEST_CASE("kgram sample determinism and temperature") {
  KGramModel model = kgram_fit(
      [&] {
        std::vector<TokenSeq> c;
        for (const auto& s : kCorpus) c.push_back(robust_encode(parse_smiles(s)));
        return c;
      }(),
      3, 0.01, robust_vocab());
  std::mt19937_64 r1(7), r2(7);
  for (int i = 0; i < 10; ++i) {
    TokenSeq a = kgram_sample(model, r1, 100, 1.0, TokenKind::RobustTokens);
    TokenSeq b = kgram_sample(model, r2, 100, 1.0, TokenKind::RobustTokens);
    CHECK(a.tokens == b.tokens);
  }
  // temperature 0: argmax decoding, rng-independent
  std::mt19937_64 r3(1), r4(999);
  TokenSeq a = kgram_sample(model, r3, 100, 0.0, TokenKind::RobustTokens);
  TokenSeq b = kgram_sample(model, r4, 100, 0.0, TokenKind::RobustTokens);
  CHECK(a.tokens == b.tokens);
}

TEST_CASE("weighted refit convexity") {
  Vocab v = toy_vocab({"a", "b", "c"});
  auto corpus = toy_corpus({"abc", "bca", "aa"}, v);
  KGramModel model = kgram_fit(corpus, 3, 0.01, v);

  std::vector<std::pair<TokenSeq, double>> elite;
  for (auto& s : toy_corpus({"cc", "cb"}, v)) elite.push_back({s, 1.0});

  // lambda = 1: unchanged
  KGramModel same = kgram_weighted_refit(model, elite, 1.0);
  for (int cl = 0; cl < 3; ++cl) {
    for (auto& [ctx, row] : model.tables()[cl]) {
      auto it = same.tables()[cl].find(ctx);
      REQUIRE(it != same.tables()[cl].end());
      auto p0 = KGramModel::softmax(row.logits);
      auto p1 = KGramModel::softmax(it->second.logits);
      for (std::size_t k = 0; k < p0.size(); ++k)
        CHECK(p0[k] == Catch::Approx(p1[k]).margin(1e-12));
    }
  }

  // lambda = 0 with a degenerate elite: model samples only that string
  KGramModel degen =
      kgram_weighted_refit(model, {{toy_corpus({"cc"}, v)[0], 2.5}}, 0.0);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 10; ++i)
    CHECK(detokenize(kgram_sample(degen, rng, 10, 1.0, TokenKind::SmilesTokens)) == "cc");

  // intermediate lambda: rows are convex combinations
  double lambda = 0.3;
  KGramModel mid = kgram_weighted_refit(model, elite, lambda);
  // pick the unigram row; elite distribution over (a,b,c,EOS)
  auto& mid_row = mid.tables()[0].at({});
  auto& old_row = model.tables()[0].at({});
  auto pm = KGramModel::softmax(mid_row.logits);
  auto po = KGramModel::softmax(old_row.logits);
  // elite unigram counts: c:3,b:1,EOS:2 over 6 events
  std::vector<double> pe(v.size(), 0.0);
  pe[v.id("c")] = 3.0 / 6;
  pe[v.id("b")] = 1.0 / 6;
  pe[v.eos] = 2.0 / 6;
  for (int k = 0; k < v.size(); ++k)
    CHECK(pm[k] == Catch::Approx(lambda * po[k] + (1 - lambda) * pe[k]).margin(1e-12));
}

TEST_CASE("reinvent fixed point") {
  Vocab v = toy_vocab({"a", "b", "c"});
  auto corpus = toy_corpus({"abc", "bca", "aa", "cab"}, v);
  KGramModel prior = kgram_fit(corpus, 2, 0.1, v);
  KGramModel agent = prior;

  std::vector<std::pair<TokenSeq, double>> batch;
  for (auto& s : toy_corpus({"ab", "ca"}, v)) batch.push_back({s, 0.7});

  double loss = reinvent_grad_step(agent, prior, batch, 0.0, 0.05);
  CHECK(loss == Catch::Approx(0.0).margin(1e-18));
  // parameters unchanged
  for (int cl = 0; cl < 2; ++cl)
    for (auto& [ctx, row] : prior.tables()[cl]) {
      auto& arow = agent.tables()[cl].at(ctx);
      for (std::size_t k = 0; k < row.logits.size(); ++k)
        CHECK(arow.logits[k] == Catch::Approx(row.logits[k]).margin(1e-15));
    }
}

TEST_CASE("reinvent analytic gradient matches finite differences") {
  Vocab v = toy_vocab({"a", "b", "c"});  // 3-token vocab (+ sentinels)
  auto corpus = toy_corpus({"abc", "bca", "ab", "ac", "cb"}, v);
  KGramModel prior = kgram_fit(corpus, 2, 0.1, v);
  KGramModel agent = kgram_fit(toy_corpus({"aa", "bc", "cab"}, v), 2, 0.1, v);

  std::vector<std::pair<TokenSeq, double>> batch;
  batch.push_back({toy_corpus({"ab"}, v)[0], 0.9});
  batch.push_back({toy_corpus({"ca"}, v)[0], 0.2});
  double sigma = 5.0, lr = 0.01;

  // analytic step
  KGramModel stepped = agent;
  reinvent_grad_step(stepped, prior, batch, sigma, lr);

  // finite-difference gradient for every logit
  double eps = 1e-6;
  for (int cl = 0; cl < 2; ++cl) {
    for (auto& [ctx, row] : agent.tables()[cl]) {
      for (std::size_t k = 0; k < row.logits.size(); ++k) {
        KGramModel plus = agent, minus = agent;
        plus.tables()[cl].at(ctx).logits[k] += eps;
        minus.tables()[cl].at(ctx).logits[k] -= eps;
        double fd =
            (reinvent_loss(plus, prior, batch, sigma) - reinvent_loss(minus, prior, batch, sigma)) /
            (2 * eps);
        double analytic = (agent.tables()[cl].at(ctx).logits[k] -
                           stepped.tables()[cl].at(ctx).logits[k]) /
                          lr;
        INFO("cl " << cl << " k " << k);
        if (std::abs(fd) > 1e-9)
          CHECK(analytic == Catch::Approx(fd).epsilon(1e-5));
        else
          CHECK(std::abs(analytic - fd) < 1e-7);
      }
    }
  }
}

TEST_CASE("reinvent gradient norm linear in sigma") {
  Vocab v = toy_vocab({"a", "b"});
  auto corpus = toy_corpus({"ab", "ba", "aa"}, v);
  KGramModel prior = kgram_fit(corpus, 2, 0.1, v);
  std::vector<std::pair<TokenSeq, double>> batch{{toy_corpus({"ab"}, v)[0], 0.5},
                                                 {toy_corpus({"b"}, v)[0], 1.0}};
  auto grad_norm = [&](double sigma) {
    KGramModel agent = prior;
    reinvent_grad_step(agent, prior, batch, sigma, 1.0);
    double norm2 = 0;
    for (int cl = 0; cl < 2; ++cl)
      for (auto& [ctx, row] : agent.tables()[cl]) {
        auto& orig = prior.tables()[cl].at(ctx);
        for (std::size_t k = 0; k < row.logits.size(); ++k) {
          double d = row.logits[k] - orig.logits[k];
          norm2 += d * d;
        }
      }
    return std::sqrt(norm2);
  };
  double g1 = grad_norm(3.0), g2 = grad_norm(6.0);
  CHECK(g2 == Catch::Approx(2.0 * g1).epsilon(1e-9));
}

TEST_CASE("kgram save load round trip") {
  KGramModel model = kgram_fit(
      [&] {
        std::vector<TokenSeq> c;
        for (int i = 0; i < 6; ++i) c.push_back(robust_encode(parse_smiles(kCorpus[i])));
        return c;
      }(),
      3, 0.01, robust_vocab());
  std::stringstream ss;
  kgram_save(model, ss);
  KGramModel loaded = kgram_load(ss);
  CHECK(loaded.order() == model.order());
  std::mt19937_64 r1(5), r2(5);
  for (int i = 0; i < 5; ++i) {
    TokenSeq a = kgram_sample(model, r1, 60, 1.0, TokenKind::RobustTokens);
    TokenSeq b = kgram_sample(loaded, r2, 60, 1.0, TokenKind::RobustTokens);
    CHECK(a.tokens == b.tokens);
  }
}
