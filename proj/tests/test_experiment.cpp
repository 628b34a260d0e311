#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mcsens/experiment.hpp"

using namespace mcsens;
namespace fs = std::filesystem;

namespace {

const std::string* find_output(const RunRecord& rec, const std::string& name) {
  for (const auto& o : rec.outputs)
    if (o.name == name) return &o.content;
  return nullptr;
}

std::vector<std::vector<std::string>> rows_of(const std::string& csv) {
  std::vector<std::vector<std::string>> out;
  std::istringstream is(csv);
  std::string line;
  while (std::getline(is, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    out.push_back(cells);
  }
  return out;
}

json two_state_model(double theta0, double q) {
  return json{{"family", "two-state"}, {"theta0", theta0}, {"q", q}, {"eps", 0.1}};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mcsens_test_" + name);
  fs::remove_all(p);
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MCSENS_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write_file(const fs::path& p, const std::string& body) {
  std::ofstream os(p);
  os << body;
}

}  // namespace

TEST(Run, NormOnIdentityPrintsOne) {
  const auto rec = run(json{{"kind", "norm"}, {"kernel", {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}}});
  ASSERT_FALSE(rec.summary.empty());
  EXPECT_EQ(rec.summary.front(), "operator_norm = 1");
}

TEST(Run, StationaryDerivativeOfTwoStateFamily) {
  const auto rec = run(json{{"kind", "stat-deriv"}, {"model", two_state_model(0.3, 0.3)}, {"f", {0, 1}}});
  const auto* csv = find_output(rec, "alpha.csv");
  ASSERT_NE(csv, nullptr);
  const auto rows = rows_of(*csv);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[2][0], "1");
  EXPECT_NEAR(std::stod(rows[2][1]), 0.3 / (0.6 * 0.6), 1e-12);
  EXPECT_NE(csv->find("0.8333333333333"), std::string::npos);
}

TEST(Run, StationarySweepIsMonotoneAndMatchesClosedForm) {
  const double q = 0.3;
  const auto rec = run(json{{"kind", "stat-deriv"},
                            {"model", two_state_model(0.3, q)},
                            {"f", {0, 1}},
                            {"sweep", {{"points", 15}}}});
  const auto* csv = find_output(rec, "sweep_alpha.csv");
  ASSERT_NE(csv, nullptr);
  const auto rows = rows_of(*csv);
  ASSERT_EQ(rows.size(), 16u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"theta", "alpha"}));
  double prev = -1.0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double t = std::stod(rows[i][0]), a = std::stod(rows[i][1]);
    EXPECT_NEAR(a, t / (q + t), 1e-12);
    EXPECT_GT(a, prev);
    prev = a;
  }
}

TEST(Run, HittingTimeDerivativeAndSweep) {
  const auto rec = run(json{{"kind", "rh-deriv"},
                            {"model", two_state_model(0.5, 0.5)},
                            {"interior", {0}},
                            {"reward", {1, 0}},
                            {"order", 2},
                            {"sweep", {{"points", 5}}}});
  const auto rows = rows_of(*find_output(rec, "derivatives.csv"));
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_NEAR(std::stod(rows[1][2]), 2.0, 1e-12);
  EXPECT_NEAR(std::stod(rows[2][2]), -4.0, 1e-10);
  EXPECT_NEAR(std::stod(rows[3][2]), 16.0, 1e-9);  // d^2/dt^2 (1/t) = 2/t^3
  const auto sweep = rows_of(*find_output(rec, "sweep_u_star.csv"));
  for (std::size_t i = 1; i < sweep.size(); ++i) {
    EXPECT_NEAR(std::stod(sweep[i][1]), 1.0 / std::stod(sweep[i][0]), 1e-12);
  }
}

TEST(Run, RandomHorizonSolveNeedsContraction) {
  json c{{"kind", "rh-solve"},
         {"model", {{"family", "constant"}, {"kernel", {{1.0, 0.0}, {0.0, 1.0}}}}},
         {"interior", {0, 1}},
         {"reward", {1, 1}},
         {"m_max", 8}};
  try {
    run(c);
    FAIL() << "expected refusal";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::refusal);
    EXPECT_NE(std::string(e.what()).find("< 1"), std::string::npos);
  }
}

TEST(Run, UnknownKeysAreRejectedEverywhere) {
  const json base{{"kind", "stat-deriv"}, {"model", two_state_model(0.3, 0.3)}, {"f", {0, 1}}};
  auto top = base;
  top["tolerance"] = 1;
  auto nested = base;
  nested["model"]["theta"] = 0.3;
  auto sweep = base;
  sweep["sweep"] = {{"points", 3}, {"lo", 0}};
  for (const auto& c : {top, nested, sweep}) {
    try {
      run(c);
      FAIL() << c.dump();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::schema) << e.what();
    }
  }
  EXPECT_THROW(run(json{{"kind", "fourier"}}), SchemaError);
  EXPECT_THROW(run(json::array()), SchemaError);
  EXPECT_THROW(run(json{{"kind", "stat-deriv"}, {"model", two_state_model(0.3, 0.3)}, {"f", "x"}}), SchemaError);
}

TEST(Run, MinorizationFailureIsARefusal) {
  // block-diagonal chain: the small set {0} never reaches state 1
  json c{{"kind", "minorization"},
         {"model", {{"family", "constant"}, {"kernel", {{0.5, 0.5, 0.0}, {0.5, 0.5, 0.0}, {0.0, 0.0, 1.0}}}}},
         {"small_set", {0, 2}},
         {"power_max", 4}};
  try {
    run(c);
    FAIL();
  } catch (const RefusalError& e) {
    EXPECT_NE(std::string(e.what()).find("A5"), std::string::npos);
  }
}

TEST(Run, MonteCarloEstimateAgreesWithExact) {
  const auto rec = run(json{{"kind", "mc-estimate"},
                            {"seed", 5},
                            {"model", two_state_model(0.5, 0.5)},
                            {"estimator", "u-star-derivative"},
                            {"interior", {0}},
                            {"reward", {1, 0}},
                            {"n_paths", 40000},
                            {"budgets", {1000, 4000}}});
  const auto rows = rows_of(*find_output(rec, "estimates.csv"));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"method", "point", "std_error", "n", "seed", "exact", "bias_diagnostic"}));
  const double point = std::stod(rows[1][1]), se = std::stod(rows[1][2]), exact = std::stod(rows[1][5]);
  EXPECT_NEAR(exact, -4.0, 1e-12);
  EXPECT_LT(std::abs(point - exact), 4.0 * se);
  EXPECT_EQ(rows[1][4], "5");
  EXPECT_EQ(rows_of(*find_output(rec, "se_vs_budget.csv")).size(), 3u);
}

TEST(Run, DeterministicBodiesAndSeedSensitivity) {
  json c{{"kind", "mc-estimate"},
         {"seed", 3},
         {"model", two_state_model(0.3, 0.3)},
         {"estimator", "stationary-mean"},
         {"f", {0, 1}},
         {"n_cycles", 5000}};
  const auto a = run(c), b = run(c);
  ASSERT_EQ(a.outputs.size(), b.outputs.size());
  for (std::size_t i = 0; i < a.outputs.size(); ++i) EXPECT_EQ(a.outputs[i].content, b.outputs[i].content);
  EXPECT_EQ(a.config_hash, b.config_hash);
  auto w = c;
  w["workers"] = 3;
  const auto d = run(w);
  EXPECT_EQ(find_output(d, "estimates.csv")->substr(0), *find_output(a, "estimates.csv"));
  const auto e = run(c, RunOverrides{7, std::nullopt});
  EXPECT_NE(*find_output(e, "estimates.csv"), *find_output(a, "estimates.csv"));
  EXPECT_NE(e.config_hash, a.config_hash);
}

TEST(DeltaCi, ArithmeticExample) {
  const auto ci = delta_ci(1.0, 2.0, 1.0, 100.0, 0.05);
  EXPECT_NEAR(ci.half_width, 1.959963984540054 * 0.2, 1e-12);
  EXPECT_NEAR(ci.lower, 0.608, 1e-3);
  EXPECT_NEAR(ci.upper, 1.392, 1e-3);
}

TEST(DeltaCi, WidthShrinksWithN) {
  EXPECT_LT(delta_ci(0.0, 1.0, 2.0, 1e6, 0.1).half_width, delta_ci(0.0, 1.0, 2.0, 1e2, 0.1).half_width);
  EXPECT_NEAR(delta_ci(0.0, 1.0, 2.0, 1e2, 0.1).half_width / delta_ci(0.0, 1.0, 2.0, 1e6, 0.1).half_width, 100.0, 1e-9);
}

TEST(DeltaCi, ZeroVarianceRefused) {
  try {
    delta_ci(1.0, 0.0, 1.0, 100.0, 0.05);
    FAIL();
  } catch (const RefusalError& e) {
    EXPECT_NE(std::string(e.what()).find("positive asymptotic variance"), std::string::npos);
  }
  EXPECT_THROW(delta_ci(1.0, 1.0, -1.0, 100.0, 0.05), SchemaError);
  EXPECT_THROW(delta_ci(1.0, 1.0, 1.0, 100.0, 1.5), SchemaError);
}

TEST(PlotData, EmptySweepGivesHeaderOnly) {
  EXPECT_EQ(plot_csv({"theta", "alpha"}, {{}, {}}), "theta,alpha\n");
  EXPECT_EQ(plot_csv({"x", "y"}, {}), "x,y\n");
  EXPECT_THROW(plot_csv({"x", "y"}, {{1.0}, {}}), DimensionError);
}

TEST(PlotData, SeventeenDigits) {
  EXPECT_EQ(plot_csv({"x"}, {{0.1}}), "x\n0.10000000000000001\n");
}

TEST(PlotData, Gg1DriftFileHasOneRowPerX) {
  const auto rec = run(json{{"kind", "gg1"},
                            {"model", {{"interarrival", {{"type", "exponential"}, {"rate", 1.0}}}}},
                            {"budget",
                             {{"n_outer", 2000},
                              {"pi_cycles", 2000},
                              {"fd_replications", 20},
                              {"fd_length", 2000},
                              {"fd_warmup", 100}}},
                            {"drift", {{"x", {0, 10, 20, 40, 80}}}}});
  const auto rows = rows_of(*find_output(rec, "drift_slack.csv"));
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"x", "drift_v0", "drift_v1"}));
  EXPECT_NE(find_output(rec, "derivative.csv"), nullptr);
  EXPECT_EQ(find_output(rec, "probe.csv"), nullptr);
}

TEST(EmitPlotData, WritesManifestAndSummary) {
  const auto dir = fresh_dir("emit");
  auto rec = run(json{{"kind", "delta-ci"}, {"alpha_hat", 1}, {"grad", 2}, {"C", 1}, {"n", 100}});
  rec.out_dir = dir.string();
  const auto written = emit_plot_data(rec);
  EXPECT_EQ(written.size(), 3u);
  EXPECT_TRUE(fs::exists(dir / "ci.csv"));
  EXPECT_TRUE(fs::exists(dir / "summary.txt"));
  std::ifstream is(dir / "run.json");
  const auto meta = json::parse(is);
  EXPECT_EQ(meta["config_hash"], rec.config_hash);
  EXPECT_EQ(meta["outputs"], json::array({"ci.csv"}));
  EXPECT_TRUE(meta.contains("wall_time_s"));
  fs::remove_all(dir);
}

TEST(Cli, ExitCodesAndNoOutputsOnError) {
  const auto dir = fresh_dir("cli");
  fs::create_directories(dir);
  write_file(dir / "bad.json", R"({"kind": "norm", "kernel": [[1]], "extra": 1})");
  write_file(dir / "broken.json", R"({"kind": "norm", )");
  write_file(dir / "refuse.json", R"({"kind": "delta-ci", "alpha_hat": 1, "grad": 0, "C": 1, "n": 10})");
  write_file(dir / "ok.json", R"({"kind": "norm", "kernel": [[0.5]]})");
  EXPECT_EQ(run_cli((dir / "bad.json").string() + " --out-dir " + (dir / "o1").string()), 2);
  EXPECT_FALSE(fs::exists(dir / "o1"));
  EXPECT_EQ(run_cli((dir / "broken.json").string() + " --out-dir " + (dir / "o2").string()), 2);
  EXPECT_FALSE(fs::exists(dir / "o2"));
  EXPECT_EQ(run_cli((dir / "refuse.json").string() + " --out-dir " + (dir / "o3").string()), 3);
  EXPECT_FALSE(fs::exists(dir / "o3"));
  EXPECT_EQ(run_cli((dir / "missing.json").string()), 2);
  EXPECT_EQ(run_cli("--seed"), 2);
  EXPECT_EQ(run_cli((dir / "ok.json").string() + " --out-dir " + (dir / "o4").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "o4" / "norm.csv"));
  fs::remove_all(dir);
}

TEST(Cli, OutDirPrecedence) {
  const auto dir = fresh_dir("prec");
  fs::create_directories(dir);
  write_file(dir / "c.json", R"({"kind": "norm", "kernel": [[0.5]], "out_dir": ")" + (dir / "cfg").string() + "\"}");
  const std::string cfg = (dir / "c.json").string();
  EXPECT_EQ(run_cli(cfg), 0);
  EXPECT_TRUE(fs::exists(dir / "cfg" / "norm.csv"));
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_file(dir / "c.json", R"({"kind": "norm", "kernel": [[0.5]], "out_dir": ")" + (dir / "cfg").string() + "\"}");
  const std::string env = "MCSENS_OUT_DIR=" + (dir / "env").string() + " ";
  ASSERT_EQ(std::system((env + MCSENS_CLI_PATH + " " + cfg + " >/dev/null").c_str()), 0);
  EXPECT_TRUE(fs::exists(dir / "env" / "norm.csv"));
  EXPECT_FALSE(fs::exists(dir / "cfg"));
  ASSERT_EQ(std::system((env + MCSENS_CLI_PATH + " " + cfg + " --out-dir " + (dir / "flag").string() + " >/dev/null").c_str()),
            0);
  EXPECT_TRUE(fs::exists(dir / "flag" / "norm.csv"));
  fs::remove_all(dir);
}
