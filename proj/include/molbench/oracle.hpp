#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "molbench/chem.hpp"
#include "molbench/fingerprint.hpp"
#include "molbench/patterns.hpp"
#include "molbench/smiles.hpp"

namespace molbench::oracle {

using chem::Molecule;
using fingerprint::Fingerprint;
using fingerprint::FpConfig;

class OracleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class BudgetExhausted : public OracleError {
 public:
  using OracleError::OracleError;
};
class ExternalFailure : public OracleError {
 public:
  using OracleError::OracleError;
};
class DegenerateRange : public OracleError {
 public:
  using OracleError::OracleError;
};

// Score modifiers mapping a raw property value into [0,1].
struct Modifier {
  enum class Kind { Gaussian, MaxClip, MinClip, LinearClamp, Identity };
  Kind kind = Kind::Identity;
  double a = 0.0;  // mu or lo
  double b = 1.0;  // sigma or hi

  static Modifier gaussian(double mu, double sigma) {
    if (sigma <= 0) throw DegenerateRange("gaussian modifier needs sigma > 0");
    return {Kind::Gaussian, mu, sigma};
  }
  static Modifier max_clip(double mu, double sigma) {
    if (sigma <= 0) throw DegenerateRange("max_clip modifier needs sigma > 0");
    return {Kind::MaxClip, mu, sigma};
  }
  static Modifier min_clip(double mu, double sigma) {
    if (sigma <= 0) throw DegenerateRange("min_clip modifier needs sigma > 0");
    return {Kind::MinClip, mu, sigma};
  }
  static Modifier linear_clamp(double lo, double hi) {
    if (lo == hi) throw DegenerateRange("linear_clamp needs lo != hi");
    return {Kind::LinearClamp, lo, hi};
  }
  static Modifier identity() { return {Kind::Identity, 0, 1}; }

  double operator()(double x) const {
    switch (kind) {
      case Kind::Gaussian:
        return std::exp(-(x - a) * (x - a) / (2 * b * b));
      case Kind::MaxClip:
        return x >= a ? 1.0 : std::exp(-(x - a) * (x - a) / (2 * b * b));
      case Kind::MinClip:
        return x <= a ? 1.0 : std::exp(-(x - a) * (x - a) / (2 * b * b));
      case Kind::LinearClamp:
        return std::clamp((x - a) / (b - a), 0.0, 1.0);
      case Kind::Identity:
        return std::clamp(x, 0.0, 1.0);
    }
    return 0.0;
  }
};

inline double apply_modifier(const Modifier& m, double x) { return m(x); }

// Component value sources for multi-property objectives.
struct MpoComponent {
  enum class Source {
    Similarity,      // tanimoto to a target molecule
    MolWeight,
    HeavyAtoms,
    RingCount,
    AromaticRings,
    RotatableBonds,
    ElementCount,    // count of one element (including implicit H for H)
    TotalAtoms,      // all atoms including hydrogens
    PatternCount,    // substructure match count
  };
  Source source = Source::MolWeight;
  Modifier modifier = Modifier::identity();
  // per-source parameters:
  std::string target_smiles;                   // Similarity
  Fingerprint target_fp;                       // Similarity (precomputed)
  chem::Element element = chem::Element::C;    // ElementCount
  std::optional<patterns::Pattern> pattern;    // PatternCount
};

class ExternalProcess;  // defined below

// Raw oracle definition; parameters are validated at construction.
class OracleSpec {
 public:
  enum class Kind { Similarity, Median, Isomer, Mpo, Substructure, External };

  Kind kind() const { return kind_; }
  const std::string& name() const { return name_; }
  const FpConfig& fp_config() const { return fp_; }

  static OracleSpec similarity(std::string name, const std::string& target_smiles,
                               FpConfig fp = {}) {
    OracleSpec s(Kind::Similarity, std::move(name), fp);
    Molecule t = chem::parse_smiles(target_smiles);
    s.targets_.push_back(fingerprint::morgan_fp(t, fp));
    s.target_smiles_.push_back(chem::to_canonical_smiles(t));
    return s;
  }

  static OracleSpec median(std::string name, const std::string& t1, const std::string& t2,
                           FpConfig fp = {}) {
    OracleSpec s(Kind::Median, std::move(name), fp);
    for (const auto& t : {t1, t2}) {
      Molecule m = chem::parse_smiles(t);
      s.targets_.push_back(fingerprint::morgan_fp(m, fp));
      s.target_smiles_.push_back(chem::to_canonical_smiles(m));
    }
    return s;
  }

  static OracleSpec isomer(std::string name, const chem::ElementCounts& formula,
                           double sigma_elem = 1.0, double sigma_total = 2.0) {
    if (sigma_elem <= 0 || sigma_total <= 0)
      throw DegenerateRange("isomer oracle needs positive sigmas");
    OracleSpec s(Kind::Isomer, std::move(name), {});
    s.formula_ = formula;
    s.sigma_elem_ = sigma_elem;
    s.sigma_total_ = sigma_total;
    return s;
  }

  // Formula text like "C7H8N2O2".
  static OracleSpec isomer(std::string name, const std::string& formula_text,
                           double sigma_elem = 1.0, double sigma_total = 2.0) {
    return isomer(std::move(name), parse_formula(formula_text), sigma_elem, sigma_total);
  }

  static OracleSpec mpo(std::string name, std::vector<MpoComponent> components, FpConfig fp = {}) {
    if (components.empty()) throw OracleError("mpo oracle needs at least one component");
    OracleSpec s(Kind::Mpo, std::move(name), fp);
    s.components_ = std::move(components);
    return s;
  }

  static OracleSpec substructure(std::string name, const std::vector<std::string>& present,
                                 const std::vector<std::string>& absent) {
    if (present.empty() && absent.empty())
      throw OracleError("substructure oracle needs at least one pattern");
    OracleSpec s(Kind::Substructure, std::move(name), {});
    for (const auto& p : present) s.present_.push_back(patterns::parse_pattern(p));
    for (const auto& p : absent) s.absent_.push_back(patterns::parse_pattern(p));
    return s;
  }

  static OracleSpec external(std::string name, std::vector<std::string> command,
                             double timeout_seconds = 30.0);

  double score(const Molecule& m) const;

  static chem::ElementCounts parse_formula(const std::string& text) {
    chem::ElementCounts ec;
    std::size_t i = 0;
    while (i < text.size()) {
      if (!std::isupper(static_cast<unsigned char>(text[i])))
        throw OracleError("malformed formula: " + text);
      std::string sym(1, text[i++]);
      if (i < text.size() && std::islower(static_cast<unsigned char>(text[i]))) sym += text[i++];
      auto e = chem::element_from_symbol(sym);
      if (!e) throw OracleError("formula element outside supported set: " + sym);
      int count = 0;
      while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i])))
        count = count * 10 + (text[i++] - '0');
      if (count == 0) count = 1;
      ec.counts[*e] += count;
    }
    return ec;
  }

 private:
  OracleSpec(Kind k, std::string name, FpConfig fp) : kind_(k), name_(std::move(name)), fp_(fp) {}

  Kind kind_;
  std::string name_;
  FpConfig fp_;
  std::vector<Fingerprint> targets_;
  std::vector<std::string> target_smiles_;
  chem::ElementCounts formula_;
  double sigma_elem_ = 1.0;
  double sigma_total_ = 2.0;
  std::vector<MpoComponent> components_;
  std::vector<patterns::Pattern> present_;
  std::vector<patterns::Pattern> absent_;
  std::vector<std::string> command_;
  double timeout_seconds_ = 30.0;
  mutable std::shared_ptr<ExternalProcess> proc_;

  double component_value(const MpoComponent& c, const Molecule& m) const {
    using S = MpoComponent::Source;
    switch (c.source) {
      case S::Similarity:
        return fingerprint::tanimoto(fingerprint::morgan_fp(m, fp_), c.target_fp);
      case S::MolWeight:
        return chem::basic_descriptors(m).mol_weight;
      case S::HeavyAtoms:
        return chem::basic_descriptors(m).heavy_atom_count;
      case S::RingCount:
        return chem::basic_descriptors(m).ring_count;
      case S::AromaticRings:
        return chem::basic_descriptors(m).aromatic_ring_count;
      case S::RotatableBonds:
        return chem::basic_descriptors(m).rotatable_bond_count;
      case S::ElementCount:
        return chem::molecular_formula(m).count(c.element);
      case S::TotalAtoms:
        return chem::molecular_formula(m).total_atoms();
      case S::PatternCount:
        return patterns::match_count(m, *c.pattern);
    }
    return 0.0;
  }
};

// ---------------------------------------------------------------------------
// External oracle child process. Line protocol over the child's stdio:
// parent writes "N\n" then N SMILES lines; child replies with N lines, each a
// decimal in [0,1]; repeats until the parent closes the stream.
// ---------------------------------------------------------------------------

}  // namespace molbench::oracle

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

namespace molbench::oracle {

class ExternalProcess {
 public:
  ExternalProcess(std::vector<std::string> command, double timeout_seconds)
      : command_(std::move(command)), timeout_(timeout_seconds) {
    if (command_.empty()) throw OracleError("external oracle needs a command");
  }

  ~ExternalProcess() { shutdown(); }

  ExternalProcess(const ExternalProcess&) = delete;
  ExternalProcess& operator=(const ExternalProcess&) = delete;

  // One batch round trip; throws ExternalFailure on timeout/protocol errors.
  std::vector<double> score_batch(const std::vector<std::string>& smiles) {
    for (int attempt = 0; attempt < 2; ++attempt) {
      try {
        ensure_started();
        return round_trip(smiles);
      } catch (const ExternalFailure&) {
        shutdown();
        if (attempt == 1) throw;
      }
    }
    throw ExternalFailure("external oracle failed");
  }

 private:
  std::vector<std::string> command_;
  double timeout_;
  pid_t pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;

  void ensure_started() {
    if (pid_ > 0) return;
    int in_pipe[2], out_pipe[2];
    if (pipe(in_pipe) != 0 || pipe(out_pipe) != 0)
      throw ExternalFailure("cannot create pipes for external oracle");
    pid_t pid = fork();
    if (pid < 0) throw ExternalFailure("cannot fork external oracle");
    if (pid == 0) {
      dup2(in_pipe[0], 0);
      dup2(out_pipe[1], 1);
      close(in_pipe[0]);
      close(in_pipe[1]);
      close(out_pipe[0]);
      close(out_pipe[1]);
      std::vector<char*> argv;
      for (auto& a : command_) argv.push_back(const_cast<char*>(a.c_str()));
      argv.push_back(nullptr);
      execvp(argv[0], argv.data());
      _exit(127);
    }
    close(in_pipe[0]);
    close(out_pipe[1]);
    pid_ = pid;
    to_child_ = in_pipe[1];
    from_child_ = out_pipe[0];
    buffer_.clear();
  }

  void shutdown() {
    if (to_child_ >= 0) close(to_child_);
    if (from_child_ >= 0) close(from_child_);
    to_child_ = from_child_ = -1;
    if (pid_ > 0) {
      kill(pid_, SIGTERM);
      int status = 0;
      waitpid(pid_, &status, 0);
      pid_ = -1;
    }
  }

  void write_all(const std::string& data) {
    std::size_t off = 0;
    while (off < data.size()) {
      ssize_t n = write(to_child_, data.data() + off, data.size() - off);
      if (n <= 0) throw ExternalFailure("external oracle write failed");
      off += static_cast<std::size_t>(n);
    }
  }

  std::string read_line() {
    while (true) {
      auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      struct pollfd pfd{from_child_, POLLIN, 0};
      int pr = poll(&pfd, 1, static_cast<int>(timeout_ * 1000));
      if (pr <= 0) throw ExternalFailure("external oracle timed out");
      char chunk[4096];
      ssize_t n = read(from_child_, chunk, sizeof chunk);
      if (n <= 0) throw ExternalFailure("external oracle closed its output");
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  std::vector<double> round_trip(const std::vector<std::string>& smiles) {
    std::string msg = std::to_string(smiles.size());
    msg += '\n';
    for (const auto& s : smiles) {
      msg += s;
      msg += '\n';
    }
    write_all(msg);
    std::vector<double> out;
    out.reserve(smiles.size());
    for (std::size_t i = 0; i < smiles.size(); ++i) {
      std::string line = read_line();
      char* end = nullptr;
      double v = std::strtod(line.c_str(), &end);
      if (end == line.c_str() || (end && *end != '\0' && *end != '\r'))
        throw ExternalFailure("external oracle emitted a malformed score line: " + line);
      out.push_back(std::clamp(v, 0.0, 1.0));
    }
    return out;
  }
};

inline OracleSpec OracleSpec::external(std::string name, std::vector<std::string> command,
                                       double timeout_seconds) {
  OracleSpec s(Kind::External, std::move(name), {});
  if (command.empty()) throw OracleError("external oracle needs a command");
  s.command_ = std::move(command);
  s.timeout_seconds_ = timeout_seconds;
  s.proc_ = std::make_shared<ExternalProcess>(s.command_, s.timeout_seconds_);
  return s;
}

inline double OracleSpec::score(const Molecule& m) const {
  switch (kind_) {
    case Kind::Similarity:
      return fingerprint::tanimoto(fingerprint::morgan_fp(m, fp_), targets_[0]);
    case Kind::Median: {
      Fingerprint fp = fingerprint::morgan_fp(m, fp_);
      double s1 = fingerprint::tanimoto(fp, targets_[0]);
      double s2 = fingerprint::tanimoto(fp, targets_[1]);
      return std::sqrt(s1 * s2);
    }
    case Kind::Isomer: {
      // geometric mean of per-element gaussians plus a total-atom gaussian,
      // accumulated in log space
      chem::ElementCounts have = chem::molecular_formula(m);
      double log_sum = 0.0;
      int terms = 0;
      auto add_term = [&](double target, double actual, double sigma) {
        double d = actual - target;
        log_sum += -d * d / (2 * sigma * sigma);
        ++terms;
      };
      for (auto& [e, target] : formula_.counts) add_term(target, have.count(e), sigma_elem_);
      for (auto& [e, actual] : have.counts)
        if (!formula_.counts.count(e)) add_term(0, actual, sigma_elem_);
      add_term(formula_.total_atoms(), have.total_atoms(), sigma_total_);
      return std::exp(log_sum / terms);
    }
    case Kind::Mpo: {
      double log_sum = 0.0;
      for (const auto& c : components_) {
        double v = c.modifier(component_value(c, m));
        if (v <= 0.0) return 0.0;  // zero absorbs the geometric mean
        log_sum += std::log(v);
      }
      return std::exp(log_sum / components_.size());
    }
    case Kind::Substructure: {
      int satisfied = 0;
      int total = static_cast<int>(present_.size() + absent_.size());
      for (const auto& p : present_)
        if (patterns::has_match(m, p)) ++satisfied;
      for (const auto& p : absent_)
        if (!patterns::has_match(m, p)) ++satisfied;
      return static_cast<double>(satisfied) / total;
    }
    case Kind::External: {
      auto scores = proc_->score_batch({chem::to_canonical_smiles(m)});
      return scores.at(0);
    }
  }
  return 0.0;
}

inline double score_raw(const OracleSpec& spec, const Molecule& m) {
  double v = spec.score(m);
  return std::clamp(v, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Budget / cache / trace wrapper: the benchmark's accounting semantics.
// ---------------------------------------------------------------------------

enum class Terminal { BudgetExhausted, EarlyStopped, PoolExhausted };

struct TraceRecord {
  int index = 0;  // 1-based call index
  std::string canonical;
  double score = 0.0;
};

struct Trace {
  std::vector<TraceRecord> records;
  Terminal terminal = Terminal::BudgetExhausted;

  std::vector<double> scores() const {
    std::vector<double> out;
    out.reserve(records.size());
    for (auto& r : records) out.push_back(r.score);
    return out;
  }
};

// Wraps a raw oracle: enforces the call budget, caches by canonical SMILES
// and records the trace. Cache hits return the stored score without spending
// budget (unless count_duplicates is set, in which case they consume budget
// but are not re-appended to the trace).
class BudgetedOracle {
 public:
  BudgetedOracle(OracleSpec spec, int budget, bool count_duplicates = false)
      : spec_(std::move(spec)), budget_(budget), count_duplicates_(count_duplicates) {
    if (budget <= 0) throw OracleError("budget must be positive");
  }

  static constexpr int kDefaultBudget = 10000;

  const OracleSpec& spec() const { return spec_; }
  int budget() const { return budget_; }
  int calls_used() const { return calls_used_; }
  int remaining() const { return budget_ - calls_used_; }
  const Trace& trace() const { return trace_; }
  Trace& trace_mut() { return trace_; }

  bool cached(const std::string& canonical) const { return cache_.count(canonical) > 0; }

  double call(const Molecule& m) { return call_canonical(chem::to_canonical_smiles(m), m); }

  // Variant for callers that already computed the canonical key.
  double call_canonical(const std::string& canonical, const Molecule& m) {
    auto it = cache_.find(canonical);
    if (it != cache_.end()) {
      if (count_duplicates_) {
        if (calls_used_ >= budget_) throw BudgetExhausted("oracle budget exhausted");
        ++calls_used_;
      }
      return it->second;
    }
    if (calls_used_ >= budget_) throw BudgetExhausted("oracle budget exhausted");
    double s = score_raw(spec_, m);
    ++calls_used_;
    trace_.records.push_back({static_cast<int>(trace_.records.size()) + 1, canonical, s});
    cache_.emplace(canonical, s);
    return s;
  }

 private:
  OracleSpec spec_;
  int budget_;
  bool count_duplicates_;
  int calls_used_ = 0;
  std::unordered_map<std::string, double> cache_;
  Trace trace_;
};

}  // namespace molbench::oracle
