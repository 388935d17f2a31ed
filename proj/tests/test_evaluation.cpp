#include "fixtures.hpp"
#include "kmatch/evaluation.hpp"
#include "kmatch/synth.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <fstream>

using namespace kmatch;

TEST_CASE("zero error for the truth") {
  const TriMesh m = icosphere(2);
  std::mt19937_64 rng(1);
  const Assignment gt = Assignment::from_targets(random_permutation(162, rng), 162);
  const VertexErrors e = geodesic_error(gt, GroundTruth::from_assignment(gt), m);
  CHECK(e.errors.size() == 162);
  CHECK(e.matched == 162);
  for (double x : e.errors) CHECK(x == 0.0);
  const ErrorCurve c = cumulative_curve(e.errors, default_thresholds());
  CHECK(c.mean_error == 0.0);
  for (std::size_t i = 1; i < c.fractions.size(); ++i) CHECK(c.fractions[i] == 1.0);
  CHECK(c.fractions[0] == 0.0);  // strict inequality at tau = 0
  check_curve(c);
}

TEST_CASE("one edge off") {
  const TriMesh g = fixture::grid(4, 3);  // unit edges along the axes
  const double diam = geodesic_diameter(g, g.num_vertices());
  Assignment corr = Assignment::identity(20);
  std::swap(corr.target_of[6], corr.target_of[7]);
  const VertexErrors e = geodesic_error(corr, GroundTruth::from_assignment(Assignment::identity(20)), g);
  CHECK(e.diameter == diam);
  CHECK(e.errors[6] == doctest::Approx(1.0 / diam));
  CHECK(e.errors[7] == doctest::Approx(1.0 / diam));
  CHECK(e.errors[0] == 0.0);
}

TEST_CASE("random correspondence against all-pairs oracle") {
  const TriMesh m = icosphere(2);
  std::mt19937_64 rng(2);
  const Assignment corr = Assignment::from_targets(random_permutation(162, rng), 162);
  const Assignment gt = Assignment::from_targets(random_permutation(162, rng), 162);
  const MatrixXd fw = oracle::floyd_warshall(m.edge_graph());
  const double diam = fw.maxCoeff();
  const VertexErrors e = geodesic_error(corr, GroundTruth::from_assignment(gt), m, diam);
  for (Index s = 0; s < 162; ++s) {
    const double expected = fw(corr.target_of[s], gt.target_of[s]) / diam;
    CHECK(std::abs(e.errors[s] - expected) <= 1e-15 * std::max(1.0, expected));
  }
  CHECK(geodesic_error(corr, GroundTruth::from_assignment(gt), m, diam, Exec::serial).errors == e.errors);
}

TEST_CASE("partial ground truth bookkeeping") {
  const TriMesh m = icosphere(1);
  GroundTruth gt = GroundTruth::from_assignment(Assignment::identity(42));
  gt.target_of[0] = kUnmatched;  // no counterpart
  gt.target_of[1] = kUnmatched;
  Assignment corr = Assignment::identity(42);
  corr.target_of[1] = kUnmatched;  // correctly rejected
  corr.target_of[2] = kUnmatched;  // wrongly rejected
  const VertexErrors e = geodesic_error(corr, gt, m);
  CHECK(e.false_matches == 1);
  CHECK(e.true_rejections == 1);
  CHECK(e.errors.size() == 40);
  CHECK(e.unmatched == 1);
  const ErrorCurve c = cumulative_curve(e.errors, default_thresholds());
  CHECK(c.matched_fraction == doctest::Approx(39.0 / 40.0));
  check_curve(c);

  gt.known[5] = 0;  // matched but unknown
  CHECK_THROWS_AS(geodesic_error(corr, gt, m), ValidationError);
}

TEST_CASE("curve counts") {
  const std::vector<double> errors{0.0, 0.0, 0.5, 0.5};
  const std::vector<double> tau{0.25, 0.75};
  const ErrorCurve c = cumulative_curve(errors, tau);
  CHECK(c.fractions == std::vector<double>{0.5, 1.0});
  CHECK(c.mean_error == 0.25);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> uniform(10000);
  for (double& x : uniform) x = u(rng);
  std::vector<double> grid;
  for (int i = 0; i <= 100; ++i) grid.push_back(0.01 * i);
  const ErrorCurve ui = cumulative_curve(uniform, grid);
  for (std::size_t i = 0; i < grid.size(); ++i) CHECK(std::abs(ui.fractions[i] - grid[i]) <= 0.02);
  check_curve(ui);

  const std::vector<double> empty;
  CHECK_THROWS_AS(cumulative_curve(empty, tau), ValidationError);
  const std::vector<double> decreasing{0.5, 0.25};
  CHECK_THROWS_AS(cumulative_curve(errors, decreasing), ValidationError);

  ErrorCurve broken = c;
  broken.fractions = {0.8, 0.6};
  broken.matched_fraction = 1.0;
  CHECK_THROWS_AS(check_curve(broken), NumericError);
}

TEST_CASE("relabeling both shapes leaves the curve unchanged") {
  const TriMesh m = icosphere(2);
  std::mt19937_64 rng(4);
  const Assignment corr = Assignment::from_targets(random_permutation(162, rng), 162);
  const Assignment gt = Assignment::identity(162);
  const ErrorCurve a = cumulative_curve(geodesic_error(corr, GroundTruth::from_assignment(gt), m).errors,
                                        default_thresholds());

  // New target labels: vertex order[i] becomes i. New source labels by sigma.
  const auto order = random_permutation(162, rng);
  const auto sigma = random_permutation(162, rng);
  std::vector<Index> new_label(162);
  for (Index i = 0; i < 162; ++i) new_label[order[i]] = i;
  Assignment c2, g2;
  c2.num_targets = g2.num_targets = 162;
  c2.target_of.assign(162, 0);
  g2.target_of.assign(162, 0);
  for (Index s = 0; s < 162; ++s) {
    c2.target_of[sigma[s]] = new_label[corr.target_of[s]];
    g2.target_of[sigma[s]] = new_label[gt.target_of[s]];
  }
  const TriMesh relabeled = m.relabeled(order);
  const double diam = geodesic_diameter(m, 162);
  const ErrorCurve b = cumulative_curve(
      geodesic_error(c2, GroundTruth::from_assignment(g2), relabeled, diam).errors, default_thresholds());
  const ErrorCurve a2 = cumulative_curve(
      geodesic_error(corr, GroundTruth::from_assignment(gt), m, diam).errors, default_thresholds());
  CHECK(b.fractions == a2.fractions);
  CHECK(b.mean_error == doctest::Approx(a2.mean_error).epsilon(1e-14));
  CHECK(a.fractions.size() == b.fractions.size());
}

TEST_CASE("ground truth file") {
  const auto dir = fixture::scratch_dir("gt");
  {
    std::ofstream f(dir / "gt.txt");
    f << "0 2\n1 -1\n2 0\n";
  }
  const GroundTruth gt = read_ground_truth(dir / "gt.txt", 4, 3);
  CHECK(gt.target_of[0] == 2);
  CHECK(gt.target_of[1] == kUnmatched);
  CHECK(gt.known[1] == 1);
  CHECK(gt.known[3] == 0);
  {
    std::ofstream f(dir / "dup.txt");
    f << "0 2\n0 1\n";
  }
  CHECK_THROWS_AS(read_ground_truth(dir / "dup.txt", 4, 3), ValidationError);
  CHECK_THROWS_AS(read_ground_truth(dir / "missing.txt", 4, 3), ValidationError);
}

TEST_CASE("curve output files") {
  const auto dir = fixture::scratch_dir("curve");
  const std::vector<double> errors{0.0, 0.01, 0.2};
  const ErrorCurve c = cumulative_curve(errors, default_thresholds());
  write_curve_csv(c, dir / "c.csv");
  write_curve_svg(c, dir / "c.svg");
  std::ifstream csv(dir / "c.csv");
  std::string line;
  std::getline(csv, line);
  CHECK(line == "threshold,fraction");
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 101);
  std::ifstream svg(dir / "c.svg");
  std::string text((std::istreambuf_iterator<char>(svg)), std::istreambuf_iterator<char>());
  CHECK(text.find("<svg") != std::string::npos);
  CHECK(text.find("geodesic error") != std::string::npos);
}

TEST_CASE("runtime report") {
  MatchConfig c;
  c.num_eigs = 30;
  c.time_schedule = {0.01};
  c.iters_per_time = 2;
  CHECK(runtime_report({}, c).empty());

  SynthOptions o;
  o.permute = true;
  o.noise_rho = 0.5;
  const SynthPair p = make_synthetic_pair({ShapeSpec::Kind::icosphere, 162}, o);
  const std::vector<RuntimePair> pairs{{"ico", p.source, p.target, p.init}};
  const auto rows = runtime_report(pairs, c);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].variant == "heat");
  CHECK(rows[1].variant == "gaussian");
  for (const auto& r : rows) {
    CHECK_FALSE(r.skipped);
    CHECK(r.steps > 0);
    CHECK(r.seconds_per_step > 0.0);
  }
  const auto capped = runtime_report(pairs, c, 100);
  CHECK(capped[1].skipped);

  const auto dir = fixture::scratch_dir("runtime");
  write_runtime_csv(rows, dir / "r.csv");
  CHECK(std::filesystem::file_size(dir / "r.csv") > 0);
}
