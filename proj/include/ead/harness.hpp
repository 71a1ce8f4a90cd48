#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ead/baselines.hpp"
#include "ead/calibrate.hpp"
#include "ead/decode.hpp"
#include "ead/lm.hpp"
#include "ead/types.hpp"

namespace ead::harness {

inline constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Model loading and data files
// ---------------------------------------------------------------------------

/// A model plus the tokenizer context needed to move between text and ids.
struct LoadedModel {
  std::unique_ptr<LanguageModel> model;
  std::optional<SymbolTable> symbols;
  TokenizerKind tokenizer = TokenizerKind::kByte;
  nlohmann::json spec;

  const LanguageModel& get() const { return *model; }
};

/// `spec` is either "host:port" for a remote logit server or a path to a
/// JSON model description: {"kind":"coin","p_heads":0.7},
/// {"kind":"markov","rows":[[...]],"initial":[...]}, or
/// {"kind":"ngram","order":2,"smoothing":0.1,"corpus_file":"...",
///  "tokenizer":"byte"|"whitespace"} (or "corpus_text" inline).
LoadedModel load_model(const std::string& spec, int timeout_ms = 5000);

LoadedModel model_from_json(const nlohmann::json& spec);

/// JSONL records {"tokens":[...]} or {"text":"..."}; text requires the
/// model to carry a symbol table.
std::vector<Prefix> load_jsonl_sequences(const std::string& path,
                                         const LoadedModel& model);

/// Tokenizes a prompt: either a comma-separated id list ("3,1,4") or, for
/// models with a symbol table, raw text.
Prefix parse_prompt(const std::string& prompt, const LoadedModel& model);

// ---------------------------------------------------------------------------
// Sampler specs
// ---------------------------------------------------------------------------

/// Parsed --config payload: {"sampler":"ead","alpha":...,"k":...} or
/// {"sampler":"top_p","p":0.9,...}.
struct SamplerSpec {
  bool is_ead = false;
  EadConfig ead;
  BaselineConfig baseline;
  std::string name;
};

SamplerSpec parse_sampler(const nlohmann::json& config,
                          const LanguageModel& model);

/// One generated trace row, shared between EAD and baseline samplers.
struct TraceRow {
  int step = 0;
  TokenId token = -1;
  double logprob = 0.0;
  double step_entropy = 0.0;  // model conditional entropy at this position
  int evals_used = 0;
};

struct SamplerRun {
  std::vector<TraceRow> rows;
  std::vector<TokenId> tokens;
  double mean_step_entropy = 0.0;
  double mean_logprob = 0.0;
  double mean_evals = 0.0;
};

SamplerRun run_sampler(const LanguageModel& model, const Prefix& prompt,
                       const SamplerSpec& spec, int max_tokens,
                       std::uint64_t seed,
                       const std::vector<TokenId>& stop_tokens = {});

// ---------------------------------------------------------------------------
// Run manifests
// ---------------------------------------------------------------------------

/// Everything needed to reproduce a command's outputs bit-for-bit (the
/// timestamp is informational; outputs are pure functions of the rest).
nlohmann::json make_manifest(const std::string& command, std::uint64_t seed,
                             const nlohmann::json& config,
                             const nlohmann::json& model_spec);

void write_text_file(const std::string& path, const std::string& content);
void ensure_directory(const std::string& path);

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateOptions {
  std::string model_spec;
  std::string prompt;
  nlohmann::json sampler = {{"sampler", "ead"}, {"alpha", 0.0}, {"k", 1}};
  int max_tokens = 128;
  std::vector<TokenId> stop_tokens;
  std::uint64_t seed = 0;
  std::string out_dir;
};

SamplerRun cmd_generate(const GenerateOptions& options);

// ---------------------------------------------------------------------------
// fit-alpha
// ---------------------------------------------------------------------------

struct FitAlphaOptions {
  std::string model_spec;
  std::string heldout_path;
  int lookahead = 2;
  int rollouts = 2;
  double tol = 1e-3;
  std::uint64_t seed = 0;
  std::string out_dir;
};

CalibrationResult cmd_fit_alpha(const FitAlphaOptions& options);

// ---------------------------------------------------------------------------
// calibration-curve
// ---------------------------------------------------------------------------

struct CurvePoint {
  std::string model;
  std::string method;
  std::string setting;
  double reference_ce = 0.0;       // nats/token on held-out data
  double mean_cond_entropy = 0.0;  // nats/token along generated text
  double calib_error = 0.0;
};

struct CurveReport {
  std::vector<CurvePoint> points;
  /// Best single-setting aggregate error per method; EAD refits alpha per
  /// model instead of sweeping a knob.
  std::vector<std::pair<std::string, double>> aggregate;
  std::string best_method;
};

struct CurveOptions {
  int lookahead = 2;
  int rollouts = 2;
  int gen_sequences = 24;
  int gen_length = 96;
  std::uint64_t seed = 0;
  std::string out_dir;
};

/// One toy model plus reference data drawn from its source distribution.
struct SuiteEntry {
  std::string name;
  std::shared_ptr<LanguageModel> model;
  std::vector<Prefix> heldout;
  Prefix prompt;
};

/// Built-in suite: byte-level n-gram models of differing entropy trained on
/// bundled public-domain snippets, plus Markov chains with known dynamics.
std::vector<SuiteEntry> build_toy_suite(std::uint64_t seed);

CurveReport cmd_calibration_curve(const CurveOptions& options);

// ---------------------------------------------------------------------------
// typical-set
// ---------------------------------------------------------------------------

struct TypicalSetReport {
  int n = 0;
  double p_heads = 0.0;
  double p_all_heads = 0.0;
  int band_lo = 0;
  int band_hi = 0;
  double band_mass = 0.0;
  std::vector<double> count_probs;  // P(#heads = j), j = 0..n
};

TypicalSetReport cmd_typical_set(int n, double p_heads, int band_lo = -1,
                                 int band_hi = -1,
                                 const std::string& out_dir = "");

// ---------------------------------------------------------------------------
// oracle-check
// ---------------------------------------------------------------------------

struct OracleCheckOptions {
  std::string model_spec;  // empty: built-in random V=8 chain
  int vocab = 8;
  double alpha = 0.2;
  int lookahead = 2;
  int rollouts = 2;
  int trials = 10000;
  int gof_trials = 20000;
  std::uint64_t seed = 0;
  std::string out_dir;
};

struct OracleCheckReport {
  long agreement_trials = 0;
  long disagreements = 0;
  std::uint64_t first_bad_seed = 0;
  double gof_p_value = 1.0;
  double mean_evals = 0.0;
  double eval_bound = 0.0;  // e^{2w}
  bool evals_within_bound = true;
  bool passed = false;
};

/// Coupled-noise exhaustive-vs-lazy agreement, fresh-seed GOF against the
/// tilted law, and the expected-evaluation bound. Throws InvariantError on
/// any disagreement (exit code 2 at the CLI).
OracleCheckReport cmd_oracle_check(const OracleCheckOptions& options);

// ---------------------------------------------------------------------------
// miscal-bound
// ---------------------------------------------------------------------------

struct MiscalOptions {
  int trials = 1000;
  int horizon = 8;        // T
  int vocab = 2;          // M
  std::vector<double> eps_grid = {1e-3, 1e-2, 0.125, 0.5};
  std::uint64_t seed = 0;
  std::string out_dir;
};

struct MiscalRow {
  double eps = 0.0;
  double kl_pq = 0.0;
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = true;
};

struct MiscalReport {
  std::vector<MiscalRow> rows;
  long violations = 0;
  /// rhs / (T log M) at eps = 1/T; a ratio >= 1 means the bound says
  /// nothing at that accuracy level.
  double vacuous_ratio = 0.0;
};

/// Random (p, q) pairs with KL(p||q) <= T*eps, exact mixture entropies, and
/// the miscalibration bound checked on every trial. A violation throws
/// InvariantError after writing the report.
MiscalReport cmd_miscal_bound(const MiscalOptions& options);

// ---------------------------------------------------------------------------
// serve
// ---------------------------------------------------------------------------

struct ServeOptions {
  std::string model_spec;
  std::string host = "127.0.0.1";
  int port = 0;     // 0: ephemeral
  bool stdio = false;
};

/// Serves the model over the logit wire protocol (TCP accept loop or
/// stdin/stdout). Blocks until the stream closes or the process is killed.
void cmd_serve(const ServeOptions& options);

}  // namespace ead::harness
