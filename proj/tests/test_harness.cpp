#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "qcertlab/harness.hpp"

using namespace qcertlab;

namespace {

std::filesystem::path tmp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("qcertlab_" + name);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig mixedness_config() {
  ExperimentConfig cfg;
  cfg.protocol = Protocol::Mixedness;
  cfg.d = 2;
  cfg.t = 1;
  cfg.eps = 0.6;
  cfg.n = 20;
  cfg.trials = 5;
  cfg.seed = 42;
  return cfg;
}

int run_binary(const std::string& args) {
  const char* bin = std::getenv("QCERTLAB_BIN");
  REQUIRE(bin != nullptr);
  const std::string cmd = std::string(bin) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("doubles render with full round-trip precision") {
  REQUIRE(g17(0.1) == "0.10000000000000001");
  REQUIRE(g17(1.0) == "1");
  REQUIRE(g17(-2.5e-17) == "-2.4999999999999999e-17");
}

TEST_CASE("CSV quoting follows RFC 4180") {
  REQUIRE(csv_escape("plain") == "plain");
  REQUIRE(csv_escape("a,b") == "\"a,b\"");
  REQUIRE(csv_escape("say \"hi\"") == "\"say \"\"hi\"\"\"");
  REQUIRE(csv_escape("line\nbreak") == "\"line\nbreak\"");
}

TEST_CASE("trial rows serialize in the contract column order") {
  TrialReport r;
  r.trial_id = 3;
  r.protocol = "mixedness";
  r.d = 2;
  r.t = 1;
  r.eps = 0.5;
  r.n_batches = 10;
  r.copies_used = 10;
  r.statistic = 0.25;
  r.threshold = 0.0625;
  r.verdict = "reject";
  r.seed = 7;
  REQUIRE(std::string(csv_header()) ==
          "trial_id,protocol,d,t,eps,n_batches,copies_used,statistic,"
          "threshold,verdict,seed");
  REQUIRE(row_to_csv(r) == "3,mixedness,2,1,0.5,10,10,0.25,0.0625,reject,7");
  const json j = row_to_json(r);
  REQUIRE(j.at("statistic").get<double>() == 0.25);
  REQUIRE(!j.contains("wall_time_ms"));
}

TEST_CASE("run is deterministic and keeps the arm layout") {
  const ExperimentConfig cfg = mixedness_config();
  const RunResult a = run(cfg);
  const RunResult b = run(cfg);
  REQUIRE(rows_to_csv(a.rows) == rows_to_csv(b.rows));
  REQUIRE(a.rows.size() == 10);
  for (int i = 0; i < 5; ++i) {
    REQUIRE(a.rows[i].trial_id == i);                  // null arm
    REQUIRE(a.rows[5 + i].trial_id == 5 + i);          // alternative arm
    REQUIRE(a.rows[i].seed == 42);
    REQUIRE(a.rows[i].copies_used == 20);  // n * t with t_used = 1
    REQUIRE(a.rows[i].n_batches == 20);
  }
  REQUIRE(a.summary.total_copies == 200);
  REQUIRE(a.summary.null_arm.rows == 5);
  REQUIRE(a.summary.alt_arm.rows == 5);

  ExperimentConfig null_only = cfg;
  null_only.arm = "null";
  const RunResult c = run(null_only);
  REQUIRE(c.rows.size() == 5);
  REQUIRE(c.summary.alt_arm.rows == 0);

  ExperimentConfig alt_only = cfg;
  alt_only.arm = "alt";
  const RunResult d = run(alt_only);
  REQUIRE(d.rows.size() == 5);
  REQUIRE(d.rows[0].trial_id == 5);
}

TEST_CASE("exact mode produces the infinite-sample verdicts") {
  ExperimentConfig cfg = mixedness_config();
  cfg.mode = RunMode::Exact;
  cfg.trials = 2;
  const RunResult res = run(cfg);
  // Null arm: statistic tr(mm^2) - 1/d = 0, below the 0.09 threshold.
  REQUIRE(res.rows[0].statistic == Catch::Approx(0.0).margin(1e-15));
  REQUIRE(res.rows[0].verdict == "accept");
  REQUIRE(res.rows[0].threshold == Catch::Approx(0.09));
  // Alt arm: the default far state at (d=2, eps=0.6).
  const Mat alt = mixedness_default_alt(2, 0.6);
  const double p2 = (alt * alt).trace().real();
  REQUIRE(res.rows[2].statistic == Catch::Approx(p2 - 0.5).margin(1e-15));
  REQUIRE(res.rows[2].verdict == "reject");
  REQUIRE(res.summary.null_error_rate == 0.0);
  REQUIRE(res.summary.alt_error_rate == 0.0);

  ExperimentConfig closeness = cfg;
  closeness.protocol = Protocol::ClosenessUnif;
  closeness.eps = 0.5;
  const RunResult cres = run(closeness);
  const Mat delta = diag_state({0.25, 0.75}) - diag_state({0.75, 0.25});
  const double want = (delta * delta).trace().real() / 9.0;
  REQUIRE(cres.rows[2].statistic == Catch::Approx(want).margin(1e-15));
  REQUIRE(cres.rows[2].verdict == "reject");

  ExperimentConfig bow = cfg;
  bow.protocol = Protocol::Bow;
  bow.t = 2;
  bow.eps = 0.5;
  const RunResult bres = run(bow);
  REQUIRE(bres.rows[0].statistic == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(bres.rows[2].statistic ==
          Catch::Approx(0.25).margin(1e-12));  // |Delta|_2^2 = eps^2
  REQUIRE(bres.rows[2].verdict == "reject");

  ExperimentConfig certify = cfg;
  certify.protocol = Protocol::Certify;
  certify.d = 4;
  REQUIRE_THROWS_AS(run(certify), ConfigError);
}

TEST_CASE("config validation rejects malformed requests") {
  ExperimentConfig cfg = mixedness_config();
  cfg.d = 1;
  REQUIRE_THROWS_AS(run(cfg), ConfigError);
  cfg = mixedness_config();
  cfg.arm = "sideways";
  REQUIRE_THROWS_AS(run(cfg), ConfigError);
  cfg = mixedness_config();
  cfg.eps = -0.1;
  REQUIRE_THROWS_AS(run(cfg), ConfigError);
  cfg = mixedness_config();
  cfg.protocol = Protocol::Chi2;
  REQUIRE_THROWS_AS(run(cfg), ConfigError);  // missing scenario
  cfg = mixedness_config();
  cfg.protocol = Protocol::Purity;
  cfg.arm = "alt";
  REQUIRE_THROWS_AS(run(cfg), ConfigError);  // purity is single-arm
}

TEST_CASE("report files mirror the rows and stay timing-free") {
  ExperimentConfig cfg = mixedness_config();
  cfg.trials = 3;
  cfg.out = (tmp_path("report_stem")).string();
  const RunResult res = run(cfg);
  write_reports(cfg.out, res);
  const std::string csv = slurp(tmp_path("report_stem.csv"));
  REQUIRE(csv == rows_to_csv(res.rows));
  REQUIRE(csv.find("wall") == std::string::npos);
  const json mirror = json::parse(slurp(tmp_path("report_stem.json")));
  REQUIRE(mirror.at("rows").size() == res.rows.size());
  REQUIRE(mirror.at("rows")[0].at("protocol") == "mixedness");
  REQUIRE(!mirror.at("rows")[0].contains("wall_time_ms"));
  REQUIRE(mirror.at("summary").contains("null_error_rate"));
}

TEST_CASE("profiles round-trip and resolve batch counts") {
  CalibrationProfile prof;
  prof.name = "unit";
  prof.constants.c_sub = 5.0;
  prof.points.push_back({"mixedness", 2, 1, 0.6, 16, 0.8});
  prof.points.push_back({"mixedness", 2, 2, 0.6, 9, 0.81});
  const auto path = tmp_path("profile_unit.json");
  save_profile(path.string(), prof);
  const CalibrationProfile back = load_profile(path.string());
  REQUIRE(back.name == "unit");
  REQUIRE(back.constants.c_sub == 5.0);
  REQUIRE(back.points.size() == 2);
  REQUIRE(lookup_n(back, "mixedness", 2, 1, 0.6) == 16);
  REQUIRE(lookup_n(back, "mixedness", 2, 2, 0.6) == 9);
  REQUIRE(!lookup_n(back, "mixedness", 3, 1, 0.6).has_value());
  REQUIRE(!lookup_n(back, "bow", 2, 1, 0.6).has_value());

  REQUIRE(profile_path("default") == "profiles/default.json");
  REQUIRE(profile_path("sub/dir/x.json") == "sub/dir/x.json");
  REQUIRE_THROWS_AS(load_profile("no-such-profile-name"), ConfigError);

  // n = 0 resolves through the profile; a missing point is a config error.
  ExperimentConfig cfg = mixedness_config();
  cfg.n = 0;
  cfg.profile = path.string();
  cfg.trials = 2;
  const RunResult res = run(cfg);
  REQUIRE(res.rows[0].n_batches == 16);
  cfg.t = 4;  // no operating point for t=4 in the unit profile
  REQUIRE_THROWS_AS(run(cfg), ConfigError);
}

TEST_CASE("state override files change the tested states") {
  const auto path = tmp_path("state_override.json");
  write_text_file(path.string(), R"({"rho_diag": [0.9, 0.1]})");
  ExperimentConfig cfg = mixedness_config();
  cfg.mode = RunMode::Exact;
  cfg.trials = 1;
  cfg.state_file = path.string();
  const RunResult res = run(cfg);
  REQUIRE(res.rows[1].statistic == Catch::Approx(0.82 - 0.5).margin(1e-12));

  write_text_file(path.string(), R"({"rho_diag": [0.6, 0.5]})");
  REQUIRE_THROWS_AS(run(cfg), InvalidParameter);  // not a density matrix
}

TEST_CASE("verify suite passes clean and fails under injected faults") {
  const VerifyReport all = verify_suite();
  REQUIRE(all.all_pass());
  REQUIRE(all.checks.size() >= 10);

  const VerifyReport scoped = verify_suite("qcore");
  REQUIRE(scoped.all_pass());
  for (const VerifyCheck& c : scoped.checks) {
    REQUIRE(c.name.rfind("qcore/", 0) == 0);
  }

  const VerifyReport faulty = verify_suite("all", "perturbed-projector");
  REQUIRE(!faulty.all_pass());
  bool projector_failed = false;
  for (const VerifyCheck& c : faulty.checks) {
    if (c.name == "qcore/sym-projector-idempotent") {
      projector_failed = !c.pass;
    } else {
      REQUIRE(c.pass);  // the fault is surgical
    }
  }
  REQUIRE(projector_failed);

  const VerifyReport biased = verify_suite("estimators", "biased-moment");
  REQUIRE(!biased.all_pass());

  REQUIRE_THROWS_AS(verify_suite("nonsense"), ConfigError);
  REQUIRE_THROWS_AS(verify_suite("all", "nonsense-fault"), ConfigError);

  const json j = verify_report_to_json(all);
  REQUIRE(j.at("all_pass").get<bool>());
  REQUIRE(j.at("checks").size() == all.checks.size());
}

TEST_CASE("calibration finds a batch count and honors its failure modes") {
  CalibrationRequest req;
  req.protocol = Protocol::Mixedness;
  req.target = 2.0 / 3.0;
  req.points = {{2, 1, 0.6}};
  req.trials_per_eval = 60;
  req.seed = 11;
  const CalibrationProfile prof = calibrate(req);
  REQUIRE(prof.points.size() == 1);
  const OperatingPoint& op = prof.points[0];
  REQUIRE(op.n >= 2);
  REQUIRE(op.achieved_rate >= 2.0 / 3.0);
  // The calibrated count actually delivers the target at a fresh seed.
  ExperimentConfig cfg = mixedness_config();
  cfg.n = op.n;
  cfg.trials = 90;
  cfg.seed = 999;
  const RunResult check = run(cfg);
  REQUIRE(check.summary.null_error_rate <= 1.0 / 3.0);
  REQUIRE(check.summary.alt_error_rate <= 1.0 / 3.0);

  // Determinism of the search itself.
  const CalibrationProfile again = calibrate(req);
  REQUIRE(again.points[0].n == op.n);
  REQUIRE(again.points[0].achieved_rate == op.achieved_rate);

  CalibrationRequest impossible = req;
  impossible.target = 1.0;
  REQUIRE_THROWS_AS(calibrate(impossible), CalibrationFailure);

  CalibrationRequest capped = req;
  capped.points = {{2, 1, 0.05}};  // far too fine a separation
  capped.n_cap = 4;
  REQUIRE_THROWS_AS(calibrate(capped), CalibrationFailure);

  CalibrationRequest wrong = req;
  wrong.protocol = Protocol::Certify;
  REQUIRE_THROWS_AS(calibrate(wrong), ConfigError);

  CalibrationRequest empty = req;
  empty.points.clear();
  REQUIRE_THROWS_AS(calibrate(empty), ConfigError);
}

TEST_CASE("chi2 scenarios run end to end") {
  const auto path = tmp_path("scenario_random.json");
  write_text_file(path.string(), R"({
    "d": 2, "t": 1, "n": 2, "ell": 2, "eps": 0.3, "c": 1.0,
    "basis": "gellmann", "schedule": "random:3"
  })");
  ExperimentConfig cfg;
  cfg.protocol = Protocol::Chi2;
  cfg.scenario = path.string();
  cfg.seed = 21;
  const RunResult res = run(cfg);
  REQUIRE(res.rows.size() == 1);
  REQUIRE(res.rows[0].verdict == "accept");
  REQUIRE(res.rows[0].statistic <= res.rows[0].threshold + 1e-12);
  REQUIRE(!res.summary.invariant_failure);
  const json& extra = res.summary.extra;
  REQUIRE(extra.at("chi2_exact").get<double>() >= 0.0);
  REQUIRE(extra.at("is_bound").get<double>() >=
          extra.at("chi2_exact").get<double>() - 1e-12);
  const json& breakdown = extra.at("per_term_breakdown");
  REQUIRE(breakdown.contains("ll"));
  REQUIRE(breakdown.at("linear_fraction").get<double>() >= 0.0);
  REQUIRE(breakdown.at("linear_fraction").get<double>() <= 1.0);

  // Explicit schedule: the computational POVM, written vector by vector.
  json comp = json::array();
  json povm = json::array();
  povm.push_back(vec_to_json(Vec::Unit(2, 0)));
  povm.push_back(vec_to_json(Vec::Unit(2, 1)));
  comp.push_back(povm);
  const json explicit_scenario = {
      {"d", 2},   {"t", 1},           {"n", 2},
      {"ell", 2}, {"eps", 0.3},       {"c", 1.0},
      {"basis", "adversarial"},       {"schedule", comp}};
  const auto path2 = tmp_path("scenario_explicit.json");
  write_text_file(path2.string(), explicit_scenario.dump());
  cfg.scenario = path2.string();
  const RunResult res2 = run(cfg);
  REQUIRE(res2.rows[0].verdict == "accept");

  // Malformed scenario inputs are config errors.
  const auto path3 = tmp_path("scenario_bad.json");
  write_text_file(path3.string(), R"({"d": 2, "schedule": "haphazard"})");
  cfg.scenario = path3.string();
  REQUIRE_THROWS_AS(run(cfg), ConfigError);
  write_text_file(path3.string(), R"({"d": 2, "ell": 9})");
  REQUIRE_THROWS_AS(run(cfg), ConfigError);
}

TEST_CASE("the qcertlab binary honors the exit-code contract") {
  if (std::getenv("QCERTLAB_BIN") == nullptr) {
    SKIP("QCERTLAB_BIN not set; binary round-trip covered only under ctest");
  }
  const std::string out1 = tmp_path("cli_run1").string();
  const std::string out2 = tmp_path("cli_run2").string();
  const std::string common =
      "mixedness --d 2 --t 1 --eps 0.6 --n 8 --trials 3 --seed 5 --out ";
  REQUIRE(run_binary(common + out1) == 0);
  REQUIRE(run_binary(common + out2) == 0);
  REQUIRE(slurp(out1 + ".csv") == slurp(out2 + ".csv"));
  REQUIRE(slurp(out1 + ".json") == slurp(out2 + ".json"));

  REQUIRE(run_binary("verify --scope qcore") == 0);
  REQUIRE(run_binary("verify --inject-fault perturbed-projector") == 1);
  REQUIRE(run_binary("no-such-protocol") == 3);
  REQUIRE(run_binary("mixedness --d 2 --eps 0.6 --n 0 --profile missing") ==
          3);
  REQUIRE(run_binary("mixedness --d 40 --t 2 --eps 0.6 --n 4 --trials 1") ==
          2);

  const auto scen = tmp_path("cli_scenario.json");
  write_text_file(scen.string(), R"({
    "d": 2, "t": 1, "n": 1, "ell": 1, "eps": 0.2, "c": 1.0,
    "basis": "gellmann", "schedule": "random:2"
  })");
  REQUIRE(run_binary("chi2 --scenario " + scen.string()) == 0);
}
