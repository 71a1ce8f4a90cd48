// Command-line driver: generation, alpha calibration, calibration-curve
// sweeps, the coin-flip typical-set table, decoding oracle checks, the
// miscalibration-bound sweep, and a logit server for the wire protocol.
//
// Exit codes: 0 success, 1 usage/config error, 2 oracle or invariant
// failure, 3 transport error.

#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ead/harness.hpp"

using nlohmann::json;

namespace {

json parse_json_arg(const std::string& text) {
  if (text.empty()) return json::object();
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    // Maybe a path to a JSON file.
    std::ifstream in(text);
    if (!in) throw ead::ConfigError("--config is neither JSON nor a file");
    json out;
    try {
      in >> out;
    } catch (const json::parse_error& e) {
      throw ead::ConfigError(std::string("bad config file: ") + e.what());
    }
    return out;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"entropy-aligned decoding toolkit"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  std::uint64_t seed = 0;
  std::string model_spec;
  std::string out_dir;
  std::string config_text;
  app.add_option("--seed", seed, "global RNG seed");
  app.add_option("--model", model_spec,
                 "model spec: JSON file path or host:port");
  app.add_option("--out-dir", out_dir, "directory for output files");
  app.add_option("--config", config_text, "sampler config (JSON or file path)");

  // generate
  auto* gen = app.add_subcommand("generate", "sample tokens from a model");
  std::string prompt;
  int max_tokens = 128;
  std::vector<ead::TokenId> stop_tokens;
  gen->add_option("--prompt", prompt, "token ids '3,1,4' or text");
  gen->add_option("--max-tokens", max_tokens, "tokens to generate");
  gen->add_option("--stop", stop_tokens, "stop token ids");

  // fit-alpha
  auto* fit = app.add_subcommand("fit-alpha", "fit the tilt by moment matching");
  std::string heldout_path;
  int k = 2, K = 2;
  double tol = 1e-3;
  fit->add_option("--heldout", heldout_path, "held-out JSONL")->required();
  fit->add_option("--k", k, "lookahead horizon");
  fit->add_option("--K", K, "rollouts per estimate");
  fit->add_option("--tol", tol, "moment-gap tolerance (nats)");

  // calibration-curve
  auto* curve = app.add_subcommand(
      "calibration-curve", "entropy-vs-reference sweep on the toy suite");
  int curve_k = 2, curve_K = 2, gen_sequences = 24, gen_length = 96;
  curve->add_option("--k", curve_k, "lookahead horizon");
  curve->add_option("--K", curve_K, "rollouts per estimate");
  curve->add_option("--sequences", gen_sequences, "generations per point");
  curve->add_option("--length", gen_length, "tokens per generation");

  // typical-set
  auto* typical = app.add_subcommand("typical-set",
                                     "exact biased-coin typical-set table");
  int coin_n = 20;
  double coin_p = 0.7;
  int band_lo = -1, band_hi = -1;
  typical->add_option("--n", coin_n, "number of flips (<= 64)");
  typical->add_option("--p", coin_p, "heads probability");
  typical->add_option("--band-lo", band_lo, "band lower count");
  typical->add_option("--band-hi", band_hi, "band upper count");

  // oracle-check
  auto* oracle = app.add_subcommand("oracle-check",
                                    "exhaustive-vs-lazy decoding checks");
  int oc_vocab = 8, oc_k = 2, oc_K = 2, oc_trials = 10000, oc_gof = 20000;
  double oc_alpha = 0.2;
  oracle->add_option("--vocab", oc_vocab, "built-in chain size");
  oracle->add_option("--alpha", oc_alpha, "tilt strength");
  oracle->add_option("--k", oc_k, "lookahead horizon");
  oracle->add_option("--K", oc_K, "rollouts per estimate");
  oracle->add_option("--trials", oc_trials, "coupled agreement trials");
  oracle->add_option("--gof-trials", oc_gof, "fresh-seed GOF draws");

  // miscal-bound
  auto* miscal = app.add_subcommand("miscal-bound",
                                    "entropy miscalibration bound sweep");
  int mb_trials = 1000, mb_T = 8, mb_V = 2;
  std::vector<double> mb_eps = {1e-3, 1e-2, 0.125, 0.5};
  miscal->add_option("--trials", mb_trials, "random (p,q) pairs");
  miscal->add_option("--T", mb_T, "sequence length (V^T enumerated)");
  miscal->add_option("--V", mb_V, "alphabet size");
  miscal->add_option("--eps", mb_eps, "epsilon grid");

  // serve
  auto* serve = app.add_subcommand("serve", "logit server (wire protocol)");
  std::string host = "127.0.0.1";
  int port = 0;
  bool stdio = false;
  serve->add_option("--host", host, "listen address");
  serve->add_option("--port", port, "listen port (0 = ephemeral)");
  serve->add_flag("--stdio", stdio, "serve over stdin/stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      ead::harness::GenerateOptions options;
      options.model_spec = model_spec;
      options.prompt = prompt;
      if (!config_text.empty()) options.sampler = parse_json_arg(config_text);
      options.max_tokens = max_tokens;
      options.stop_tokens = stop_tokens;
      options.seed = seed;
      options.out_dir = out_dir;
      ead::harness::SamplerRun run = ead::harness::cmd_generate(options);
      std::cout << "generated " << run.tokens.size()
                << " tokens; mean step entropy " << run.mean_step_entropy
                << " nats; mean evals " << run.mean_evals << "\n";
    } else if (fit->parsed()) {
      ead::harness::FitAlphaOptions options;
      options.model_spec = model_spec;
      options.heldout_path = heldout_path;
      options.lookahead = k;
      options.rollouts = K;
      options.tol = tol;
      options.seed = seed;
      options.out_dir = out_dir;
      ead::CalibrationResult result = ead::harness::cmd_fit_alpha(options);
      std::cout << "alpha* = " << result.alpha_star << " (mu_p = " << result.mu_p
                << ", iterations = " << result.iterations
                << (result.degenerate ? ", degenerate" : "") << ")\n";
    } else if (curve->parsed()) {
      ead::harness::CurveOptions options;
      options.lookahead = curve_k;
      options.rollouts = curve_K;
      options.gen_sequences = gen_sequences;
      options.gen_length = gen_length;
      options.seed = seed;
      options.out_dir = out_dir;
      ead::harness::CurveReport report =
          ead::harness::cmd_calibration_curve(options);
      for (auto& [method, err] : report.aggregate) {
        std::cout << method << " aggregate calibration error: " << err << "\n";
      }
      std::cout << "best method: " << report.best_method << "\n";
    } else if (typical->parsed()) {
      ead::harness::TypicalSetReport report =
          ead::harness::cmd_typical_set(coin_n, coin_p, band_lo, band_hi,
                                        out_dir);
      std::cout << "P(all heads) = " << report.p_all_heads << "\n"
                << "P(" << report.band_lo << ".." << report.band_hi
                << " heads) = " << report.band_mass << "\n";
    } else if (oracle->parsed()) {
      ead::harness::OracleCheckOptions options;
      options.model_spec = model_spec;
      options.vocab = oc_vocab;
      options.alpha = oc_alpha;
      options.lookahead = oc_k;
      options.rollouts = oc_K;
      options.trials = oc_trials;
      options.gof_trials = oc_gof;
      options.seed = seed;
      options.out_dir = out_dir;
      ead::harness::OracleCheckReport report =
          ead::harness::cmd_oracle_check(options);
      std::cout << "agreement: " << report.agreement_trials - report.disagreements
                << "/" << report.agreement_trials
                << ", GOF p = " << report.gof_p_value
                << ", mean evals = " << report.mean_evals << " (bound "
                << report.eval_bound << ")\n";
      if (!report.passed) return 2;
    } else if (miscal->parsed()) {
      ead::harness::MiscalOptions options;
      options.trials = mb_trials;
      options.horizon = mb_T;
      options.vocab = mb_V;
      if (!mb_eps.empty()) options.eps_grid = mb_eps;
      options.seed = seed;
      options.out_dir = out_dir;
      ead::harness::MiscalReport report =
          ead::harness::cmd_miscal_bound(options);
      std::cout << report.rows.size() << " trials, " << report.violations
                << " violations; rhs/(T log V) at eps=1/T: "
                << report.vacuous_ratio << "\n";
    } else if (serve->parsed()) {
      ead::harness::ServeOptions options;
      options.model_spec = model_spec;
      options.host = host;
      options.port = port;
      options.stdio = stdio;
      ead::harness::cmd_serve(options);
    }
  } catch (const ead::TransportError& e) {
    std::cerr << "transport error: " << e.what() << "\n";
    return 3;
  } catch (const ead::ProtocolError& e) {
    std::cerr << "protocol error: " << e.what() << "\n";
    return 3;
  } catch (const ead::InvariantError& e) {
    std::cerr << "invariant failure: " << e.what() << "\n";
    return 2;
  } catch (const ead::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
