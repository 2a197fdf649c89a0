// qcertlab CLI: run protocols, verify module invariants, calibrate batch
// counts. Exit codes: 0 success, 1 invariant/construction failure,
// 2 resource limit, 3 configuration error.

#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "qcertlab/harness.hpp"

namespace {

using namespace qcertlab;

void print_summary(const RunResult& res) {
  const RunSummary& s = res.summary;
  std::printf("rows: %zu\n", res.rows.size());
  if (s.null_arm.rows > 0) {
    std::printf("null arm: %lld rows, %lld accepts, error rate %.4f, "
                "mean statistic %.6g (stderr %.3g)\n",
                s.null_arm.rows, s.null_arm.accepts, s.null_error_rate,
                s.null_arm.mean_statistic, s.null_arm.stderr_statistic);
  }
  if (s.alt_arm.rows > 0) {
    std::printf("alt arm: %lld rows, %lld accepts, error rate %.4f, "
                "mean statistic %.6g (stderr %.3g)\n",
                s.alt_arm.rows, s.alt_arm.accepts, s.alt_error_rate,
                s.alt_arm.mean_statistic, s.alt_arm.stderr_statistic);
  }
  std::printf("total copies: %lld\n", s.total_copies);
  if (!s.extra.empty()) {
    std::printf("extra: %s\n", s.extra.dump().c_str());
  }
}

int run_protocol(const ExperimentConfig& cfg) {
  const RunResult res = run(cfg);
  if (!cfg.out.empty()) write_reports(cfg.out, res);
  print_summary(res);
  // Trial verdicts are data; only broken invariants make the run fail.
  return res.summary.invariant_failure ? 1 : 0;
}

int run_verify(const std::string& scope, const std::string& fault,
               const std::string& out) {
  const VerifyReport rep = verify_suite(scope, fault);
  for (const VerifyCheck& c : rep.checks) {
    std::printf("%s %s (defect %.3g)%s%s\n", c.pass ? "PASS" : "FAIL",
                c.name.c_str(), c.defect, c.detail.empty() ? "" : " ",
                c.detail.c_str());
  }
  if (!out.empty()) {
    write_text_file(out, verify_report_to_json(rep).dump(2) + "\n");
  }
  std::printf("verify: %s\n", rep.all_pass() ? "all checks passed"
                                             : "FAILED checks present");
  return rep.all_pass() ? 0 : 1;
}

int run_calibrate(const std::string& grid_file, double target_override,
                  const std::string& out) {
  json grid = load_json_file(grid_file);
  CalibrationRequest req = calibration_request_from_json(grid);
  if (target_override > 0.0) req.target = target_override;
  const CalibrationProfile prof = calibrate(req);
  for (const OperatingPoint& op : prof.points) {
    std::printf("%s d=%d t=%d eps=%g -> n=%d (rate %.3f)\n",
                op.protocol.c_str(), op.d, op.t, op.eps, op.n,
                op.achieved_rate);
  }
  if (!out.empty()) {
    save_profile(out, prof);
    std::printf("profile written to %s\n", out.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qcertlab: state certification and purity-estimation testbed"};
  app.require_subcommand(1);

  ExperimentConfig cfg;
  std::string mode_str = "mc";
  std::uint64_t seed_arg = 1;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--d", cfg.d, "Hilbert space dimension");
    sub->add_option("--t", cfg.t, "copies measured jointly per sample");
    sub->add_option("--eps", cfg.eps, "distance parameter");
    sub->add_option("--n", cfg.n, "batch count (0 = profile lookup)");
    sub->add_option("--trials", cfg.trials, "trials per arm");
    sub->add_option("--seed", seed_arg, "master seed");
    sub->add_option("--mode", mode_str, "mc or exact");
    sub->add_option("--profile", cfg.profile,
                    "calibration profile name or path");
    sub->add_option("--out", cfg.out, "output stem for CSV and JSON reports");
    sub->add_option("--state", cfg.state_file, "JSON state override file");
    sub->add_option("--arm", cfg.arm, "both, null, or alt");
  };

  for (const auto& [proto, name] : protocol_table()) {
    CLI::App* sub = app.add_subcommand(name, "run the " + name + " protocol");
    add_common(sub);
    if (proto == Protocol::Chi2) {
      sub->add_option("--scenario", cfg.scenario, "chi2 scenario JSON file");
    }
    const Protocol p = proto;
    sub->callback([&cfg, &mode_str, &seed_arg, p]() {
      cfg.protocol = p;
      cfg.mode = parse_mode(mode_str);
      cfg.seed = seed_arg;
    });
  }

  std::string verify_scope = "all";
  std::string verify_fault;
  std::string verify_out;
  CLI::App* verify_cmd =
      app.add_subcommand("verify", "run the module verification suite");
  verify_cmd->add_option("--scope", verify_scope,
                         "all|qcore|schurweyl|estimators|testers|chi2lab");
  verify_cmd->add_option("--inject-fault", verify_fault,
                         "fault-injection self-test hook");
  verify_cmd->add_option("--out", verify_out, "JSON report path");

  std::string grid_file;
  double cal_target = -1.0;
  std::string cal_out = "profiles/calibrated.json";
  CLI::App* cal_cmd =
      app.add_subcommand("calibrate", "calibrate batch counts on a grid");
  cal_cmd->add_option("--grid", grid_file, "grid JSON file")->required();
  cal_cmd->add_option("--target", cal_target,
                      "target success probability (overrides the grid file)");
  cal_cmd->add_option("--out", cal_out, "profile output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 3;  // --help exits 0; parse errors are config errors
  }

  try {
    if (verify_cmd->parsed()) {
      return run_verify(verify_scope, verify_fault, verify_out);
    }
    if (cal_cmd->parsed()) {
      return run_calibrate(grid_file, cal_target, cal_out);
    }
    return run_protocol(cfg);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "unexpected error: %s\n", e.what());
    return 1;
  }
}
