// normlab: command-line front end for the weight-decay experiments.
//
//   normlab train --config configs/train_wn.json
//   normlab equiv-check --lambda 1e-4 --eta 0.1 --steps 500 --seed 7
//   normlab gradcheck --kinds wn,ws,cwn --trials 50
//
// Exit codes: 0 pass/completed, 1 usage or config error, 2 verdict failed,
// 3 a `train` run terminated on overflow.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "normlab/config.hpp"
#include "normlab/data.hpp"
#include "normlab/experiments.hpp"
#include "normlab/telemetry.hpp"
#include "normlab/train.hpp"

namespace fs = std::filesystem;
using namespace normlab;

namespace {

enum Exit { kPass = 0, kUsage = 1, kVerdictFail = 2, kOverflow = 3 };

/// --out beats NORMLAB_OUT, which beats the config file and the default.
fs::path resolve_out(const CLI::Option* flag, const std::string& flag_value,
                     const std::string& fallback) {
  if (flag && flag->count() > 0) return flag_value;
  if (const char* env = std::getenv("NORMLAB_OUT"); env && *env) return env;
  return fallback;
}

void print_digest(const nlohmann::json& resolved) {
  std::printf("config digest: %s\n", config_digest(resolved).c_str());
  std::fflush(stdout);
}

void write_report(const fs::path& dir, const std::string& name, const nlohmann::json& j) {
  const fs::path p = dir / name;
  write_text_file(p, j.dump(2) + "\n");
  std::printf("report: %s\n", p.string().c_str());
}

int verdict(bool pass, const char* what) {
  std::printf("%s: %s\n", what, pass ? "pass" : "FAIL");
  return pass ? kPass : kVerdictFail;
}

Batch reference_train_batch() { return materialize(BlobsSpec{}).train; }

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::size_t steps = 0;
  std::uint64_t seed = 0;
  double lambda = 0.0, epsilon = 0.0, eta = 0.0;
  std::string regularizer, optimizer, hidden, output, backward, format, run_id, out;
  std::size_t record_every = 1;
};

int cmd_train(const TrainArgs& a, const CLI::App& sub) {
  RunConfig cfg = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  auto given = [&](const char* name) { return sub.get_option(name)->count() > 0; };
  if (given("--steps")) cfg.steps = a.steps;
  if (given("--seed")) cfg.seed = a.seed;
  if (given("--lambda")) cfg.regularizer.lambda = a.lambda;
  if (given("--epsilon")) cfg.regularizer.epsilon = a.epsilon;
  if (given("--regularizer")) cfg.regularizer.type = detail::parse_regularizer_type(a.regularizer);
  if (given("--optimizer")) cfg.optimizer.kind = parse_optimizer_kind(a.optimizer);
  if (given("--eta")) cfg.optimizer.eta = a.eta;
  if (given("--hidden")) cfg.network.hidden = parse_reparam_kind(a.hidden);
  if (given("--output-kind")) cfg.network.output = parse_reparam_kind(a.output);
  if (given("--backward")) cfg.network.backward = parse_backward_variant(a.backward);
  if (given("--record-every")) cfg.record_every = a.record_every;
  if (given("--format")) cfg.telemetry_format = a.format;
  if (given("--run-id")) cfg.run_id = a.run_id;
  cfg.out = resolve_out(sub.get_option("--out"), a.out, cfg.out).string();
  const TelemetryFormat fmt = parse_telemetry_format(cfg.telemetry_format);
  if (cfg.record_every == 0) throw ConfigError("record_every must be >= 1");

  const std::string digest = run_config_digest(cfg);
  std::printf("config digest: %s\n", digest.c_str());
  std::fflush(stdout);

  const Dataset data = materialize(cfg.dataset);
  const TrainConfig tc = to_train_config(cfg);
  if (tc.layers.front().in_dim != data.train.inputs.cols) {
    throw ConfigError("network.dims[0] is " + std::to_string(tc.layers.front().in_dim) +
                      " but the dataset has " + std::to_string(data.train.inputs.cols) +
                      " features");
  }
  if (tc.layers.back().out_dim != data.num_classes) {
    throw ConfigError("last network width is " + std::to_string(tc.layers.back().out_dim) +
                      " but the dataset has " + std::to_string(data.num_classes) + " classes");
  }
  TrainResult res = train(tc, data.train, &data.validation);
  for (const auto& w : res.net.warnings()) std::fprintf(stderr, "warning: %s\n", w.c_str());

  const fs::path out = cfg.out;
  export_telemetry(res.telemetry.records(), fmt, telemetry_path(out, cfg.run_id, fmt));
  RunManifest manifest(cfg.run_id, cfg.seed, digest);
  manifest.set_outcome(res.outcome);
  manifest.extra()["config"] = to_json(cfg);
  manifest.extra()["steps_completed"] = res.steps_completed;
  manifest.extra()["train_accuracy"] = res.train_acc;
  manifest.extra()["validation_accuracy"] = res.validation_acc;
  manifest.extra()["label_names"] = data.label_names;
  manifest.extra()["warnings"] = res.net.warnings();
  if (!res.overflow_group.empty()) manifest.extra()["overflow_group"] = res.overflow_group;
  manifest.write(out);
  std::printf("telemetry: %s\n", telemetry_path(out, cfg.run_id, fmt).string().c_str());

  switch (res.outcome.status) {
    case RunStatus::Completed:
      std::printf("completed %zu steps, train acc %.4f, validation acc %.4f\n",
                  res.steps_completed, res.train_acc, res.validation_acc);
      return kPass;
    case RunStatus::Overflowed:
      std::printf("overflow at step %zu in group %s\n", res.outcome.step,
                  res.overflow_group.c_str());
      return kOverflow;
    case RunStatus::Diverged:
      std::printf("loss diverged at step %zu\n", res.outcome.step);
      return kVerdictFail;
  }
  return kVerdictFail;
}

// ---------------------------------------------------------------------------

int cmd_gradcheck(const std::vector<std::string>& kinds, std::size_t trials, std::uint64_t seed,
                  double tol, double reg_tol, const std::string& variant_name,
                  const fs::path& out) {
  const BackwardVariant variant = parse_backward_variant(variant_name);
  std::vector<ReparamKind> parsed;
  for (const auto& k : kinds) parsed.push_back(parse_reparam_kind(k));
  nlohmann::json resolved = {{"command", "gradcheck"}, {"kinds", kinds},   {"trials", trials},
                             {"seed", seed},           {"tolerance", tol}, {"reg_tolerance", reg_tol},
                             {"variant", variant_name}};
  print_digest(resolved);

  bool pass = true;
  auto rows = nlohmann::json::array();
  auto show = [&](const GradcheckSummary& s) {
    std::printf("  %-28s max rel err %.3e  failures %zu/%zu\n", s.label.c_str(), s.max_rel_error,
                s.failures, s.trials);
    pass = pass && s.pass();
    rows.push_back(s.to_json());
  };
  for (const auto& kind : parsed) {
    if (!variant_supported(kind, variant)) {
      throw UnsupportedVariantError(to_string(variant) + " backward is not defined for " +
                                    to_string(kind));
    }
    show(gradcheck_network(kind, variant, trials, seed, tol));
    show(gradcheck_regularizer(RegularizerSpec::l2(0.3), kind, trials, seed, reg_tol));
    if (kind.normalized()) {
      show(gradcheck_regularizer(RegularizerSpec::eps_shifted_for(kind, 0.3, 0.7), kind, trials,
                                 seed, reg_tol));
    }
  }
  write_report(out, "gradcheck.json", {{"config", resolved}, {"checks", rows}});
  return verdict(pass, "gradcheck");
}

int cmd_equiv(double lambda, double eta, std::size_t steps, std::uint64_t seed,
              const std::string& kind_name, double p0, const fs::path& out) {
  const ReparamKind kind = parse_reparam_kind(kind_name);
  nlohmann::json resolved = {{"command", "equiv-check"}, {"lambda", lambda}, {"eta", eta},
                             {"steps", steps},           {"seed", seed},     {"kind", kind_name},
                             {"p0", p0}};
  print_digest(resolved);
  EquivalenceConfig cfg;
  cfg.layers = mlp_layers({2, 32, 3}, kind, kind, false);
  cfg.lambda = lambda;
  cfg.eta = eta;
  cfg.steps = steps;
  cfg.seed = seed;
  cfg.p0 = p0;
  const EquivalenceReport rep = run_equivalence(cfg, reference_train_batch());
  std::printf("max direction deviation %.3e (tol %.0e), max scale deviation %.3e (tol %.0e)\n",
              rep.max_direction_deviation, rep.direction_tolerance, rep.max_scale_deviation,
              rep.scale_tolerance);
  if (!rep.failure.empty()) std::printf("%s\n", rep.failure.c_str());
  nlohmann::json j = rep.to_json();
  j["config"] = resolved;
  write_report(out, "equivalence.json", j);
  return verdict(rep.pass, "equiv-check");
}

int cmd_min_probe(double lambda, std::optional<double> epsilon, std::size_t dim,
                  std::size_t directions, double k_min, double k_max, std::size_t points,
                  std::uint64_t seed, const fs::path& out) {
  nlohmann::json resolved = {{"command", "min-probe"}, {"lambda", lambda},   {"dim", dim},
                             {"directions", directions}, {"k_min", k_min}, {"k_max", k_max},
                             {"points", points},       {"seed", seed}};
  resolved["epsilon"] = epsilon ? nlohmann::json(*epsilon) : nlohmann::json(nullptr);
  print_digest(resolved);
  const MinProbeReport rep = run_min_probe(quadratic_task(dim, seed), dim, lambda, epsilon,
                                           log_grid(k_min, k_max, points), directions, seed);
  std::printf("%s\n", rep.detail.c_str());
  nlohmann::json j = rep.to_json();
  j["config"] = resolved;
  write_report(out, "min_probe.json", j);
  return verdict(rep.pass, "min-probe");
}

int cmd_stress(std::size_t steps, double lambda, double epsilon, const fs::path& out) {
  StressConfig cfg = reference_stress_config();
  cfg.steps = steps;
  cfg.lambdas = {lambda};
  cfg.epsilon = epsilon;
  nlohmann::json resolved = {{"command", "stress"}, {"steps", steps}, {"lambda", lambda},
                             {"epsilon", epsilon},  {"seed", cfg.seed}};
  print_digest(resolved);
  const StressReport rep = run_stress(cfg, reference_train_batch());

  bool pass = true;
  const double bound = 2.0 / epsilon;
  for (const auto& r : rep.rows) {
    std::printf("  %-5s %-3s overflow %-6s  max 1/||w|| %.3e  growth %.3e\n", r.optimizer.c_str(),
                r.regularizer.c_str(),
                r.first_overflow_step ? std::to_string(*r.first_overflow_step).c_str() : "-",
                r.max_recip, r.recip_growth);
    if (r.regularizer == "l2") {
      pass = pass && r.recip_growth >= 10.0;
      if (r.optimizer == "adam") pass = pass && r.first_overflow_step.has_value();
    } else {
      pass = pass && !r.first_overflow_step && r.max_recip_after_burn_in <= bound;
    }
  }
  nlohmann::json j = rep.to_json();
  j["config"] = resolved;
  write_report(out, "stress.json", j);
  return verdict(pass, "stress");
}

int cmd_sweep(const std::vector<double>& lambdas, const std::vector<double>& epsilons,
              const std::string& optimizer, double eta, std::size_t steps, std::uint64_t seed,
              const fs::path& out) {
  nlohmann::json resolved = {{"command", "sweep"}, {"lambdas", lambdas},   {"epsilons", epsilons},
                             {"optimizer", optimizer}, {"eta", eta},       {"steps", steps},
                             {"seed", seed}};
  print_digest(resolved);
  const Dataset data = materialize(BlobsSpec{});
  SweepConfig cfg;
  cfg.layers = mlp_layers({2, 32, 3}, ReparamKind::wn(), ReparamKind::wn());
  OptimizerSpec opt;
  opt.kind = parse_optimizer_kind(optimizer);
  opt.eta = eta;
  cfg.optimizer = opt;
  cfg.lambdas = lambdas;
  cfg.epsilons = epsilons;
  cfg.steps = steps;
  cfg.seed = seed;
  const auto cells = run_sweep(cfg, data);
  const std::string csv = sweep_to_csv(cells);
  std::fputs(csv.c_str(), stdout);
  write_text_file(out / "sweep.csv", csv);
  std::printf("report: %s\n", (out / "sweep.csv").string().c_str());
  return kPass;
}

int cmd_cancel(double lambda, std::size_t restarts, const std::string& kind_name,
               std::uint64_t seed, const fs::path& out) {
  const ReparamKind kind = parse_reparam_kind(kind_name);
  nlohmann::json resolved = {{"command", "cancel-check"}, {"lambda", lambda},
                             {"restarts", restarts},      {"kind", kind_name},
                             {"seed", seed}};
  print_digest(resolved);
  const auto layers = mlp_layers({2, 32, 3}, kind, kind);
  const CancellationReport rep =
      run_cancellation_check(layers, reference_train_batch(), lambda, restarts, seed);
  std::printf("offset %.17g, max abs error %.3e\n", rep.expected_offset, rep.max_abs_error);
  nlohmann::json j = rep.to_json();
  j["config"] = resolved;
  write_report(out, "cancellation.json", j);
  return verdict(rep.pass, "cancel-check");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"normlab: weight decay on normalized weights"};
  app.require_subcommand(1);
  std::string out = "normlab-out";

  // train
  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train one network from a JSON config");
  train->add_option("--config", ta.config, "RunConfig JSON file");
  train->add_option("--steps", ta.steps);
  train->add_option("--seed", ta.seed);
  train->add_option("--lambda", ta.lambda);
  train->add_option("--epsilon", ta.epsilon);
  train->add_option("--regularizer", ta.regularizer, "none | l2 | eps");
  train->add_option("--optimizer", ta.optimizer, "sgd | momentum | adam");
  train->add_option("--eta", ta.eta);
  train->add_option("--hidden", ta.hidden, "identity | wn | cwn | ws | ws:<eps>");
  train->add_option("--output-kind", ta.output);
  train->add_option("--backward", ta.backward, "exact | diagonal");
  train->add_option("--record-every", ta.record_every);
  train->add_option("--format", ta.format, "csv | jsonl");
  train->add_option("--run-id", ta.run_id);
  train->add_option("--out", ta.out, "output directory");

  // gradcheck
  std::vector<std::string> kinds{"wn", "ws", "ws:1e-5", "cwn"};
  std::size_t trials = 50;
  std::uint64_t seed = 7;
  double tol = 1e-5, reg_tol = 1e-7;
  std::string variant = "exact";
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gc->add_option("--kinds", kinds)->delimiter(',');
  gc->add_option("--trials", trials);
  gc->add_option("--seed", seed);
  gc->add_option("--tol", tol);
  gc->add_option("--reg-tol", reg_tol);
  gc->add_option("--variant", variant, "exact | diagonal");
  auto* gc_out = gc->add_option("--out", out);

  // equiv-check
  double lambda = 1e-4, eta = 0.1, p0 = 1.0;
  std::size_t steps = 500;
  std::string kind = "wn";
  auto* eq = app.add_subcommand("equiv-check", "L2 decay vs rescaled learning rate");
  eq->add_option("--lambda", lambda);
  eq->add_option("--eta", eta);
  eq->add_option("--steps", steps);
  eq->add_option("--seed", seed);
  eq->add_option("--kind", kind, "wn | cwn | ws");
  eq->add_option("--p0", p0);
  auto* eq_out = eq->add_option("--out", out);

  // min-probe
  double mp_lambda = 0.1, k_min = 1e-3, k_max = 10.0;
  std::optional<double> mp_eps;
  std::size_t dim = 10, directions = 64, points = 41;
  auto* mp = app.add_subcommand("min-probe", "objective along k for fixed directions");
  mp->add_option("--lambda", mp_lambda);
  mp->add_option("--epsilon", mp_eps, "use the epsilon-shifted regularizer");
  mp->add_option("--dim", dim);
  mp->add_option("--directions", directions);
  mp->add_option("--k-min", k_min);
  mp->add_option("--k-max", k_max);
  mp->add_option("--points", points);
  mp->add_option("--seed", seed);
  auto* mp_out = mp->add_option("--out", out);

  // stress
  const StressConfig ref = reference_stress_config();
  std::size_t st_steps = ref.steps;
  double st_lambda = ref.lambdas.front(), st_eps = *ref.epsilon;
  auto* st = app.add_subcommand("stress", "drive norms toward zero, L2 vs epsilon shift");
  st->add_option("--steps", st_steps);
  st->add_option("--lambda", st_lambda);
  st->add_option("--epsilon", st_eps);
  auto* st_out = st->add_option("--out", out);

  // sweep
  std::vector<double> lambdas{1e-4, 1e-3, 1e-2}, epsilons{0.0, 0.5, 1.0};
  std::string sw_opt = "sgd";
  double sw_eta = 0.1;
  std::size_t sw_steps = 1000;
  auto* sw = app.add_subcommand("sweep", "lambda x epsilon accuracy grid");
  sw->add_option("--lambdas", lambdas)->delimiter(',');
  sw->add_option("--epsilons", epsilons, "0 means plain L2")->delimiter(',');
  sw->add_option("--optimizer", sw_opt);
  sw->add_option("--eta", sw_eta);
  sw->add_option("--steps", sw_steps);
  sw->add_option("--seed", seed);
  auto* sw_out = sw->add_option("--out", out);

  // cancel-check
  double cc_lambda = 1e-3;
  std::size_t restarts = 100;
  std::string cc_kind = "wn";
  auto* cc = app.add_subcommand("cancel-check", "L2 on normalized weights is a constant");
  cc->add_option("--lambda", cc_lambda);
  cc->add_option("--restarts", restarts);
  cc->add_option("--kind", cc_kind, "wn | cwn | ws");
  cc->add_option("--seed", seed);
  auto* cc_out = cc->add_option("--out", out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: %s\n\n", e.what());
    std::fputs(app.help().c_str(), stderr);
    return kUsage;
  }

  try {
    if (*train) return cmd_train(ta, *train);
    if (*gc) return cmd_gradcheck(kinds, trials, seed, tol, reg_tol, variant, resolve_out(gc_out, out, out));
    if (*eq) return cmd_equiv(lambda, eta, steps, seed, kind, p0, resolve_out(eq_out, out, out));
    if (*mp) {
      return cmd_min_probe(mp_lambda, mp_eps, dim, directions, k_min, k_max, points, seed,
                           resolve_out(mp_out, out, out));
    }
    if (*st) return cmd_stress(st_steps, st_lambda, st_eps, resolve_out(st_out, out, out));
    if (*sw) {
      return cmd_sweep(lambdas, epsilons, sw_opt, sw_eta, sw_steps, seed,
                       resolve_out(sw_out, out, out));
    }
    if (*cc) return cmd_cancel(cc_lambda, restarts, cc_kind, seed, resolve_out(cc_out, out, out));
  } catch (const normlab::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  }
  return kUsage;
}
