#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "app.hpp"
#include "nlcr/constraints.hpp"
#include "nlcr/csv.hpp"
#include "nlcr/guarantee.hpp"
#include "nlcr/reconcile.hpp"

namespace fs = std::filesystem;
using namespace nlcr;

namespace {

const fs::path fixtures = NLCR_FIXTURE_DIR;

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "nlcr");
  std::ostringstream out, err;
  int code = app::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string fx(const char* name) { return (fixtures / name).string(); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("nlcr_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string file(const std::string& name, const std::string& content) const {
    auto p = dir_ / name;
    std::ofstream(p) << content;
    return p.string();
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, VersionListsSolverDefaults) {
  auto r = cli({"--version"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("eps_kkt"), std::string::npos);
  EXPECT_NE(r.out.find("max_iter"), std::string::npos);
  EXPECT_EQ(cli({"--bogus"}).code, 2);
  EXPECT_EQ(cli({}).code, 2);
}

TEST_F(Cli, CoherentRowsAreReturnedUnchanged) {
  auto f = file("f.csv", "a,b,c\n3,1,2\n10,4,6\n");
  auto g = file("g.txt", "a = b + c\n");
  auto r = cli({"reconcile", "--forecasts", f, "--constraints", g});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "a,b,c,lambda_1,status,iterations,max_abs_g\n3,1,2,0,converged,0,0\n10,4,6,0,converged,0,0\n");
}

TEST_F(Cli, ReconcileThenCheckOnToyHierarchies) {
  for (const char* sys : {"mortality", "unemployment"})
    for (const char* tag : {"ols", "wls", "shr"}) {
      std::string out = path(std::string(sys) + "_" + tag + ".csv");
      auto r = cli({"reconcile", "--forecasts", fx((std::string(sys) + "_forecasts.csv").c_str()), "--constraints",
                    fx((std::string(sys) + ".txt").c_str()), "--weights", tag, "--residuals",
                    fx((std::string(sys) + "_residuals.csv").c_str()), "--out", out});
      ASSERT_EQ(r.code, 0) << sys << ' ' << tag << ": " << r.err;
      auto c = cli({"check", "--forecasts", out, "--constraints", fx((std::string(sys) + ".txt").c_str())});
      EXPECT_EQ(c.code, 0) << sys << ' ' << tag << ": " << c.out;
      // The base forecasts themselves are not coherent.
      auto base = cli({"check", "--forecasts", fx((std::string(sys) + "_forecasts.csv").c_str()), "--constraints",
                       fx((std::string(sys) + ".txt").c_str())});
      EXPECT_EQ(base.code, 1);
    }
}

TEST_F(Cli, OutputIsIndependentOfJobs) {
  std::vector<std::string> args{"reconcile",      "--forecasts", fx("unemployment_forecasts.csv"),
                                "--constraints",  fx("unemployment.txt"), "--weights", "shr",
                                "--residuals",    fx("unemployment_residuals.csv")};
  auto one = cli(args);
  args.insert(args.end(), {"--jobs", "4"});
  auto four = cli(args);
  EXPECT_EQ(one.code, 0);
  EXPECT_EQ(one.out, four.out);
}

TEST_F(Cli, InputErrorsExitTwo) {
  auto f = fx("mortality_forecasts.csv"), g = fx("mortality.txt");
  auto r = cli({"reconcile", "--forecasts", f, "--constraints", g, "--weights", "shr"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--residuals"), std::string::npos);

  auto bad = file("g.txt", "D_USA = D_A + D_C\n");
  r = cli({"reconcile", "--forecasts", f, "--constraints", bad});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("D_C"), std::string::npos);

  EXPECT_EQ(cli({"reconcile", "--forecasts", path("missing.csv"), "--constraints", g}).code, 2);
  EXPECT_EQ(cli({"reconcile", "--forecasts", f, "--constraints", g, "--weights", "mint"}).code, 2);
  EXPECT_EQ(cli({"reconcile", "--forecasts", f, "--constraints", g, "--eps-kkt", "-1"}).code, 2);
  EXPECT_EQ(cli({"reconcile", "--forecasts", f, "--constraints", file("p.txt", "D_USA = (D_A +\n")}).code, 2);
}

TEST_F(Cli, SolverFailureExitsThreeWithPartialOutput) {
  auto out = path("o.csv");
  auto r = cli({"reconcile", "--forecasts", fx("quartic_forecasts.csv"), "--constraints", fx("quartic.txt"),
                "--max-iter", "1", "--out", out});
  EXPECT_EQ(r.code, 3);
  auto t = read_csv_file(out);
  EXPECT_EQ(t.rows.size(), 3u);
  EXPECT_NE(slurp(out).find("max-iterations"), std::string::npos);
}

TEST_F(Cli, EnvironmentOverridesAndFlagsWin) {
  ::setenv("NLCR_MAX_ITER", "1", 1);
  auto env = cli({"reconcile", "--forecasts", fx("quartic_forecasts.csv"), "--constraints", fx("quartic.txt")});
  auto flag = cli({"reconcile", "--forecasts", fx("quartic_forecasts.csv"), "--constraints", fx("quartic.txt"),
                   "--max-iter", "200"});
  ::setenv("NLCR_MAX_ITER", "many", 1);
  auto junk = cli({"reconcile", "--forecasts", fx("quartic_forecasts.csv"), "--constraints", fx("quartic.txt")});
  ::unsetenv("NLCR_MAX_ITER");
  EXPECT_EQ(env.code, 3);
  EXPECT_EQ(flag.code, 0) << flag.err;
  EXPECT_EQ(junk.code, 2);
}

TEST_F(Cli, BallReports) {
  auto lin_f = file("l.csv", "a,b,c\n4,1,2\n");
  auto lin_g = file("l.txt", "a = b + c\n");
  auto r = cli({"ball", "--forecasts", lin_f, "--constraints", lin_g});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("radius: infinite"), std::string::npos);

  auto coh = file("c.csv", "a,b,c\n3,1,2\n");
  r = cli({"ball", "--forecasts", coh, "--constraints", lin_g});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(r.err.empty());

  // Every quartic fixture row against the library.
  auto sys = ConstraintSystem({"y1", "y2"}, load_constraints(fx("quartic.txt")));
  auto t = read_csv_file(fx("quartic_forecasts.csv"));
  for (std::size_t row = 1; row <= t.rows.size(); ++row) {
    r = cli({"ball", "--forecasts", fx("quartic_forecasts.csv"), "--constraints", fx("quartic.txt"), "--row",
             std::to_string(row), "--curvature", "concave"});
    ASSERT_EQ(r.code, 0) << r.err;
    Eigen::VectorXd y(2);
    y << parse_number(t.rows[row - 1][0], 0), parse_number(t.rows[row - 1][1], 0);
    auto rec = reconcile(y, sys, WeightMatrix::identity(2));
    auto ball = guarantee_ball(y, rec.y_tilde, sys);
    std::string want = ball.finite() ? "radius: " + format_number(ball.radius) + "\n" : "radius: infinite\n";
    EXPECT_NE(r.out.find(want), std::string::npos) << r.out;
    bool hypo = sys.evaluate_g(y)[0] < 0;
    EXPECT_NE(r.out.find(std::string("hypograph_guarantee: ") + (hypo ? "true" : "false")), std::string::npos)
        << r.out;
  }
}

TEST_F(Cli, WhitenedBallAgreesWithWeightedReconcile) {
  auto rec = cli({"reconcile", "--forecasts", fx("ratio_forecasts.csv"), "--constraints", fx("ratio.txt"),
                  "--weights", "wls", "--residuals", file("res.csv", "y1,y2,y3\n1,2,-3\n-2,1,4\n0.5,-3,2\n1,1,1\n")});
  ASSERT_EQ(rec.code, 0) << rec.err;
  auto ball = cli({"ball", "--forecasts", fx("ratio_forecasts.csv"), "--constraints", fx("ratio.txt"), "--whiten",
                   "--weights", "wls", "--residuals", path("res.csv"), "--eps-kkt", "1e-11"});
  ASSERT_EQ(ball.code, 0) << ball.err;
  EXPECT_NE(ball.out.find("metric: whitened"), std::string::npos);
  auto line = rec.out.substr(rec.out.find('\n') + 1);
  std::vector<double> direct;
  for (int i = 0; i < 3; ++i) {
    auto comma = line.find(',');
    direct.push_back(std::stod(line.substr(0, comma)));
    line = line.substr(comma + 1);
  }
  auto yt = ball.out.substr(ball.out.find("y_tilde: ") + 9);
  yt = yt.substr(0, yt.find('\n'));
  std::istringstream is(yt);
  for (int i = 0; i < 3; ++i) {
    std::string tok;
    std::getline(is, tok, ',');
    EXPECT_NEAR(std::stod(tok), direct[i], 1e-6) << i;
  }
}

TEST_F(Cli, SimulateIsByteDeterministic) {
  auto a = cli({"simulate", "sim1", "--beta", "-0.3", "--reps", "200", "--seed", "1", "--jobs", "4"});
  auto b = cli({"simulate", "sim1", "--beta", "-0.3", "--reps", "200", "--seed", "1"});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(std::count(a.out.begin(), a.out.end(), '\n'), 302);
  EXPECT_EQ(cli({"simulate", "sim3"}).code, 2);
  EXPECT_EQ(cli({"simulate", "sim2", "--beta", "1"}).code, 2);
}

TEST_F(Cli, EvaluateReport) {
  std::string act = "series,horizon,origin,value\n", fc = act, good = act;
  for (const char* s : {"A", "B", "C"})
    for (int h = 1; h <= 2; ++h)
      for (int o = 0; o < 8; ++o) {
        double truth = 10 + h + o * 0.5;
        double noise = ((o * 7 + h * 3 + s[0]) % 5) - 2.0;
        auto key = std::string(s) + "," + std::to_string(h) + "," + std::to_string(o) + ",";
        act += key + format_number(truth) + "\n";
        fc += key + format_number(truth + noise + 0.5) + "\n";
        good += key + format_number(truth + 0.5 * noise) + "\n";
      }
  auto fa = file("act.csv", act), fb = file("base.csv", fc), fg = file("good.csv", good);
  auto r = cli({"evaluate", "--base", fb, "--actuals", fa, "--method", "base=" + fb, "--method", "good=" + fg});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("# gmrmse\nmethod,gmrmse\nbase,1\nbase,1\ngood,"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("# mcb"), std::string::npos);
  EXPECT_NE(r.out.find("friedman_p_value"), std::string::npos);

  auto broken = file("broken.csv", "series,horizon,origin,value\nA,1,0,1\nA,x,1,2\n");
  r = cli({"evaluate", "--base", broken, "--actuals", fa, "--method", "m=" + fb});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("line 3"), std::string::npos) << r.err;

  auto partial = file("partial.csv", "series,horizon,origin,value\nA,1,0,1\n");
  EXPECT_EQ(cli({"evaluate", "--base", fb, "--actuals", fa, "--method", "m=" + partial}).code, 2);
}

TEST_F(Cli, CheckReportsEachRow) {
  auto f = file("f.csv", "a,b,c,status\n3,1,2,converged\n3,1,1,converged\n");
  auto g = file("g.txt", "a = b + c\n");
  auto r = cli({"check", "--forecasts", f, "--constraints", g});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.out, "row,max_abs_g,coherent\n1,0,true\n2,1,false\n");
  EXPECT_EQ(cli({"check", "--forecasts", f, "--constraints", g, "--tol", "2"}).code, 0);
}
