// End-to-end acceptance run: one PASS/FAIL line per criterion, exit code 1
// if any criterion fails.

#include "kmatch/cli.hpp"
#include "kmatch/descriptors.hpp"
#include "kmatch/evaluation.hpp"
#include "kmatch/kernels.hpp"
#include "kmatch/multiscale.hpp"
#include "kmatch/synth.hpp"
#include "oracles.hpp"

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <random>
#include <sstream>

using namespace kmatch;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

Index exact_count(const Assignment& a, const Assignment& gt) {
  Index ok = 0;
  for (Index i = 0; i < a.num_sources(); ++i) ok += a.target_of[i] != kUnmatched && a.target_of[i] == gt.target_of[i];
  return ok;
}

std::pair<PreparedShape, PreparedShape> prepare_pair(const SynthPair& pair, const MatchConfig& c) {
  return {prepare_shape(pair.source.normalized_to_unit_area(), c),
          prepare_shape(pair.target.normalized_to_unit_area(), c)};
}

DescriptorField none(Index n) { return DescriptorField{MatrixXd(n, 0)}; }

// 1. Auction against enumeration.
Verdict lap_exactness() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> value(-50, 50);
  auto random_payoff = [&](Index r, Index c) {
    Payoff q(r, c);
    for (Index i = 0; i < r; ++i)
      for (Index j = 0; j < c; ++j) q(i, j) = value(rng);
    return q;
  };
  int bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Index n = 2 + trial % 7;
    const Payoff q = random_payoff(n, n);
    const Assignment a = solve_lap(q);
    if (!a.is_injective() || a.num_matched() != n || assignment_score(q, a) != oracle::exhaustive_lap(q)) ++bad;
  }
  for (int trial = 0; trial < 100; ++trial) {
    const Index ny = 2 + trial % 3;
    const Index nx = 3 + (trial / 3) % 5;
    const Payoff q = random_payoff(ny, nx);
    const Assignment a = solve_lap_rectangular(q);
    if (!a.is_injective() || a.num_matched() != std::min(nx, ny) ||
        assignment_score(q, a) != oracle::exhaustive_lap(q))
      ++bad;
  }
  const double secs = since(t0);
  std::ostringstream d;
  d << bad << " mismatches in 1100 problems, " << std::fixed << std::setprecision(2) << secs << " s";
  return {bad == 0 && secs < 10.0, d.str()};
}

// 2. Traced objective never drops within a time and rises at every accepted step.
Verdict monotonicity() {
  int runs = 0, violations = 0;
  Index entries = 0;
  const std::vector<ShapeSpec> shapes = {{ShapeSpec::Kind::icosphere, 162},
                                         {ShapeSpec::Kind::cycle, 24},
                                         {ShapeSpec::Kind::hemisphere, 162}};
  for (int r = 0; r < 60; ++r) {
    const ShapeSpec spec = shapes[r % shapes.size()];
    SynthOptions o;
    o.permute = true;
    o.seed = 1000 + r;
    o.noise_rho = spec.kind == ShapeSpec::Kind::hemisphere ? std::nullopt : std::optional<double>(0.3 + 0.1 * (r % 7));
    const SynthPair pair = make_synthetic_pair(spec, o);
    MatchConfig c;
    c.num_eigs = 60;
    c.iters_per_time = 8;
    c.time_schedule = r % 2 ? std::vector<double>{0.02, 0.01, 0.005} : std::vector<double>{0.005, 0.001};
    c.alpha = r % 3 == 0 ? 0.0 : 1e-3;
    auto [sx, sy] = prepare_pair(pair, c);
    DescriptorField dx = xyz_descriptors(sx.mesh), dy = xyz_descriptors(sy.mesh);
    std::optional<Assignment> init = pair.init;
    if (spec.kind == ShapeSpec::Kind::hemisphere) {
      // Random partial start: a random injective map into the smaller target.
      std::mt19937_64 rng(o.seed);
      const auto perm = random_permutation(sx.mesh.num_vertices(), rng);
      Assignment a;
      a.num_targets = sy.mesh.num_vertices();
      a.target_of.assign(sx.mesh.num_vertices(), kUnmatched);
      for (Index i = 0; i < a.num_targets; ++i) a.target_of[perm[i]] = i;
      init = a;
    }
    const MatchState s = run(sx, sy, dx, dy, c, init);
    ++runs;
    for (std::size_t i = 1; i < s.trace.size(); ++i) {
      if (s.trace[i].time != s.trace[i - 1].time) continue;
      ++entries;
      const double prev = s.trace[i - 1].energy, cur = s.trace[i].energy;
      if (!(cur > prev) && !(std::abs(cur - prev) <= 1e-9 * std::abs(prev))) ++violations;
      if (cur < prev - 1e-9 * std::abs(prev)) ++violations;
    }
  }
  std::ostringstream d;
  d << runs << " runs, " << entries << " within-time steps, " << violations << " violations";
  return {runs >= 50 && violations == 0 && entries > 0, d.str()};
}

// f(P) = <K_Y P K_X, P> for an arbitrary real matrix P.
double quadratic_form(const MatrixXd& ky, const MatrixXd& kx, const MatrixXd& p) {
  return (ky * p * kx).cwiseProduct(p).sum();
}

// Random point of the bistochastic polytope: a convex mix of permutations.
MatrixXd random_bistochastic(Index n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  MatrixXd p = MatrixXd::Zero(n, n);
  double total = 0.0;
  for (int k = 0; k < 4; ++k) {
    const double w = u(rng) + 1e-3;
    const auto perm = random_permutation(n, rng);
    for (Index i = 0; i < n; ++i) p(perm[i], i) += w;
    total += w;
  }
  return p / total;
}

// Midpoint excess f((P+Q)/2) - (f(P)+f(Q))/2; positive means a violation.
double midpoint_excess(const MatrixXd& ky, const MatrixXd& kx, const MatrixXd& p, const MatrixXd& q) {
  return quadratic_form(ky, kx, 0.5 * (p + q)) - 0.5 * (quadratic_form(ky, kx, p) + quadratic_form(ky, kx, q));
}

// 3. Convexity of the quadratic term on bistochastic segments for SPD pairs,
// and a located violation for a distance pair.
Verdict convexity_certificate() {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  auto random_spd = [&](Index n) {
    MatrixXd a(n, n);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) a(i, j) = g(rng);
    return MatrixXd(a * a.transpose() + 1e-2 * MatrixXd::Identity(n, n));
  };
  int failures = 0;
  for (int s = 0; s < 200; ++s) {
    const Index n = 2 + s % 5;
    const MatrixXd ky = random_spd(n), kx = random_spd(n);
    const MatrixXd p = random_bistochastic(n, rng), q = random_bistochastic(n, rng);
    if (midpoint_excess(ky, kx, p, q) > 1e-12 * std::max(1.0, quadratic_form(ky, kx, p))) ++failures;
  }
  // Same check with heat kernels of a real mesh.
  const TriMesh m = icosphere(1).normalized_to_unit_area();  // 42 vertices
  const Index n = m.num_vertices();
  auto b = std::make_shared<SpectralBasis>(eigenbasis(cotan_laplacian(m), n));
  const MatrixXd k = heat_kernel(b, 0.01).symmetric();
  for (int s = 0; s < 200; ++s) {
    const MatrixXd p = random_bistochastic(n, rng), q = random_bistochastic(n, rng);
    if (midpoint_excess(k, k, p, q) > 1e-12 * std::max(1.0, quadratic_form(k, k, p))) ++failures;
  }

  // Distance pair. Any bistochastic segment has a direction with zero row and
  // column sums, so the search runs over products u v^T of eigenvectors of the
  // centered distance matrix, then scales the step to stay non-negative
  // around the barycenter.
  const MatrixXd d = all_pairs_geodesics(m.edge_graph());
  const double neg = Eigen::SelfAdjointEigenSolver<MatrixXd>(d).eigenvalues().minCoeff();
  const MatrixXd center = MatrixXd::Identity(n, n) - MatrixXd::Constant(n, n, 1.0 / n);
  Eigen::SelfAdjointEigenSolver<MatrixXd> ec(center * d * center);
  const MatrixXd bary = MatrixXd::Constant(n, n, 1.0 / n);
  double best = -std::numeric_limits<double>::infinity();
  bool feasible = true;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      const VectorXd u = center * ec.eigenvectors().col(i), v = center * ec.eigenvectors().col(j);
      if (u.norm() < 1e-6 || v.norm() < 1e-6) continue;  // the constant direction
      MatrixXd dir = u * v.transpose();
      dir *= 0.5 / (n * dir.cwiseAbs().maxCoeff());
      const MatrixXd p = bary + dir, q = bary - dir;
      const double excess = midpoint_excess(d, d, p, q);
      if (excess > best) {
        best = excess;
        feasible = p.minCoeff() >= 0.0 && q.minCoeff() >= 0.0 &&
                   (p.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12 &&
                   (p.colwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12;
      }
    }
  }
  std::ostringstream o;
  o << failures << "/400 SPD midpoint failures on bistochastic segments; distance pair min eigenvalue "
    << std::scientific << std::setprecision(2) << neg << ", best bistochastic midpoint excess " << best;
  return {failures == 0 && neg < 0.0 && best > 0.0 && feasible, o.str()};
}

// 4. Heat kernel identities.
Verdict kernel_properties() {
  const TriMesh m = icosphere(2).normalized_to_unit_area();  // 162 vertices
  auto full = std::make_shared<SpectralBasis>(eigenbasis(cotan_laplacian(m), m.num_vertices()));
  auto part = std::make_shared<SpectralBasis>(eigenbasis(cotan_laplacian(m), 100));
  const double t = 0.003, s = 0.002;
  double row_sum = 0.0;
  for (const auto& b : {full, part}) {
    const VectorXd ones = heat_kernel(b, t).stochastic() * VectorXd::Ones(m.num_vertices());
    row_sum = std::max(row_sum, (ones.array() - 1.0).abs().maxCoeff());
  }
  const double min_eig =
      Eigen::SelfAdjointEigenSolver<MatrixXd>(heat_kernel(part, t).symmetric()).eigenvalues().minCoeff();
  const MatrixXd ks = heat_kernel(full, s).stochastic();
  const MatrixXd kt = heat_kernel(full, t).stochastic();
  const MatrixXd kst = heat_kernel(full, s + t).stochastic();
  const double semigroup = (ks * kt - kst).cwiseAbs().maxCoeff();

  // Factorized payoff against the dense triple product, n = 300, k = 30.
  const TriMesh tx = torus(30, 10).normalized_to_unit_area();
  std::mt19937_64 rng(5);
  const auto order = random_permutation(300, rng);
  const TriMesh ty = tx.relabeled(order);
  auto bx = std::make_shared<SpectralBasis>(eigenbasis(cotan_laplacian(tx), 30));
  auto by = std::make_shared<SpectralBasis>(eigenbasis(cotan_laplacian(ty), 30));
  const auto perm = random_permutation(300, rng);
  const Assignment pi = Assignment::from_targets(std::vector<Index>(perm.begin(), perm.end()), 300);
  const DescriptorField fx = xyz_descriptors(tx), fy = xyz_descriptors(ty);
  const double alpha = 0.3, tt = 0.004;
  const Payoff fast = payoff(pi, fx.values, fy.values, KernelFamily::heat(bx).at(tt),
                             KernelFamily::heat(by).at(tt), alpha);
  const MatrixXd kx = heat_kernel(bx, tt).symmetric(), ky = heat_kernel(by, tt).symmetric();
  MatrixXd p = MatrixXd::Zero(300, 300);
  for (Index i = 0; i < 300; ++i) p(pi.target_of[i], i) = 1.0;
  const MatrixXd dense = ky * p * kx + alpha * fy.values * fx.values.transpose();
  const double factor_gap = (fast - dense).cwiseAbs().maxCoeff();

  std::ostringstream d;
  d << std::scientific << std::setprecision(2) << "|K1-1| " << row_sum << ", min eig " << min_eig << ", semigroup "
    << semigroup << ", factorized gap " << factor_gap;
  return {row_sum <= 1e-6 && min_eig >= -1e-8 && semigroup <= 1e-6 && factor_gap <= 1e-8, d.str()};
}

// 5. Swap repair on a ring and unmatched vertices after a partial match.
Verdict regressions() {
  SynthOptions o;
  o.swap = std::pair<Index, Index>{8, 16};
  const SynthPair cyc = make_synthetic_pair({ShapeSpec::Kind::cycle, 32}, o);
  MatchConfig c;
  auto [cx, cy] = prepare_pair(cyc, c);
  const MatchState cs = run(cx, cy, none(cx.mesh.num_vertices()), none(cy.mesh.num_vertices()), c, cyc.init);
  // Identity must be reached by the third accepted step of the first time.
  MatchConfig c3 = c;
  c3.time_schedule = {c.time_schedule.front()};
  c3.iters_per_time = 3;
  const MatchState c3s = run(cx, cy, none(cx.mesh.num_vertices()), none(cy.mesh.num_vertices()), c3, cyc.init);
  const bool ring_ok = cs.assignment.same_map(cyc.ground_truth) && c3s.assignment.same_map(cyc.ground_truth);

  SynthOptions ho;
  ho.permute = true;
  ho.seed = 4;
  const SynthPair hemi = make_synthetic_pair({ShapeSpec::Kind::hemisphere, 642}, ho);
  MatchConfig hc;
  const double scale = 1.0 / std::sqrt(hemi.source.total_area());
  const PreparedShape hx = prepare_shape(hemi.source.scaled(scale), hc);
  const PreparedShape hy = prepare_shape(hemi.target.scaled(scale), hc);
  // Sparse landmark start on the shared part.
  std::vector<Index> lx, ly;
  const SampleSet fps = euclidean_fps(hy.mesh, 12, 0);
  const auto src_of = hemi.ground_truth.source_of();
  for (Index v : fps.indices) {
    lx.push_back(src_of[v]);
    ly.push_back(v);
  }
  const DescriptorField dx = landmark_descriptors(*hx.basis, lx, hc.time_schedule.back());
  const DescriptorField dy = landmark_descriptors(*hy.basis, ly, hc.time_schedule.back());
  const MatchState hs = run(hx, hy, dx, dy, hc);
  Index unmatched = 0, in_missing = 0;
  for (Index v = 0; v < hx.mesh.num_vertices(); ++v) {
    if (hs.assignment.target_of[v] != kUnmatched) continue;
    ++unmatched;
    in_missing += hemi.ground_truth.target_of[v] == kUnmatched;
  }
  const double share = unmatched ? static_cast<double>(in_missing) / unmatched : 0.0;
  std::ostringstream d;
  d << "ring: " << cs.iterations_per_time.front() << " steps at t0, identity " << (ring_ok ? "yes" : "no")
    << "; hemisphere: " << in_missing << "/" << unmatched << " unmatched in missing part ("
    << std::fixed << std::setprecision(1) << 100.0 * share << "%)";
  return {ring_ok && cs.iterations_per_time.front() <= 3 && unmatched > 0 && share >= 0.9, d.str()};
}

// 6. Permuted icosphere from a 30% correct start.
Verdict isometric_recovery() {
  const auto t0 = Clock::now();
  SynthOptions o;
  o.permute = true;
  o.noise_rho = 0.7;
  o.seed = 6;
  const SynthPair pair = make_synthetic_pair({ShapeSpec::Kind::icosphere, 642}, o);
  MatchConfig c;
  auto [sx, sy] = prepare_pair(pair, c);
  const MatchState s = run(sx, sy, none(642), none(642), c, pair.init);
  const double secs = since(t0);
  const Index start = exact_count(*pair.init, pair.ground_truth);
  const Index ok = exact_count(s.assignment, pair.ground_truth);
  std::ostringstream d;
  d << "init " << start << "/642 exact, result " << ok << "/642 (" << std::fixed << std::setprecision(1)
    << 100.0 * ok / 642 << "%), " << std::setprecision(2) << secs << " s";
  return {ok >= 0.99 * 642 && secs < 60.0, d.str()};
}

// 7. Degenerate multiscale equals single scale; quality at 2562 vertices.
Verdict multiscale() {
  SynthOptions o;
  o.permute = true;
  o.noise_rho = 0.7;
  o.seed = 7;
  const SynthPair small = make_synthetic_pair({ShapeSpec::Kind::icosphere, 162}, o);
  MatchConfig c;
  auto [ax, ay] = prepare_pair(small, c);
  const DescriptorField dx = xyz_descriptors(ax.mesh), dy = xyz_descriptors(ay.mesh);
  const MatchState single = run(ax, ay, dx, dy, c, small.init);
  MultiscaleConfig one;
  one.n0 = 162;
  one.max_problem = 162;
  one.anchor_count = 0;
  const MultiscaleResult degenerate = run_multiscale(MultiscaleProblem{&ax, &ay, dx, dy}, c, one, small.init);
  // n0 = n with a small maxP goes through the coarse matcher with one cell.
  MultiscaleConfig seeds_only = one;
  seeds_only.max_problem = 100;
  const CoarseResult coarse = coarse_match(MultiscaleProblem{&ax, &ay, dx, dy}, c, seeds_only, small.init);
  const bool same = degenerate.assignment.same_map(single.assignment) &&
                    coarse.assignment.same_map(single.assignment) &&
                    coarse.match.trace.size() == single.trace.size() &&
                    std::equal(coarse.match.trace.begin(), coarse.match.trace.end(), single.trace.begin(),
                               [](const TraceEntry& a, const TraceEntry& b) { return a.energy == b.energy; });

  const auto t0 = Clock::now();
  o.seed = 8;
  const SynthPair big = make_synthetic_pair({ShapeSpec::Kind::icosphere, 2562}, o);
  auto [bx, by] = prepare_pair(big, c);
  MultiscaleConfig ms;
  ms.n0 = 256;
  ms.max_problem = 300;
  ms.branch = 3;
  ms.anchor_count = 256;
  const MultiscaleResult r =
      run_multiscale(MultiscaleProblem{&bx, &by, none(2562), none(2562)}, c, ms, big.init);
  const double secs = since(t0);
  const VertexErrors e = geodesic_error(r.assignment, GroundTruth::from_assignment(big.ground_truth), by.mesh);
  Index within = 0;
  for (double x : e.errors) within += x < 0.02;
  const double frac = static_cast<double>(within) / 2562.0;
  std::ostringstream d;
  d << "degenerate run identical: " << (same ? "yes" : "no") << "; 2562: " << std::fixed << std::setprecision(1)
    << 100.0 * frac << "% within 0.02 (" << r.levels.size() << " levels, " << r.exchange_rounds
    << " exchange rounds), " << std::setprecision(2) << secs << " s";
  return {same && frac >= 0.95 && secs < 300.0, d.str()};
}

// 8. Heat kernel step against the dense Gaussian step at n = 1000.
Verdict runtime() {
  const TriMesh m = torus(40, 25);
  std::mt19937_64 rng(9);
  const auto order = random_permutation(1000, rng);
  const TriMesh y = m.relabeled(order);
  std::vector<Index> gt(1000);
  for (Index i = 0; i < 1000; ++i) gt[order[i]] = i;
  std::mt19937_64 noise(10);
  const Assignment init = corrupt(Assignment::from_targets(gt, 1000), 0.5, noise);
  MatchConfig c;
  c.num_eigs = 100;
  c.time_schedule = {0.005, 0.0025};
  c.iters_per_time = 3;
  const auto rows = runtime_report({RuntimePair{"torus-1000", m, y, init}}, c);
  const RuntimeRow& h = rows.at(0);
  const RuntimeRow& g = rows.at(1);
  std::ostringstream d;
  d << std::fixed << std::setprecision(4) << "heat " << h.seconds_per_step << " s/step (" << h.steps
    << " steps), gaussian " << g.seconds_per_step << " s/step (" << g.steps << " steps)";
  return {!g.skipped && h.steps > 0 && g.steps > 0 && h.seconds_per_step < g.seconds_per_step, d.str()};
}

// 9. Geodesic errors against Floyd-Warshall; curve invariants.
Verdict evaluation() {
  const TriMesh m = icosphere(2);
  const Index n = m.num_vertices();
  std::mt19937_64 rng(12);
  const auto truth = random_permutation(n, rng);
  const auto guess = random_permutation(n, rng);
  const Assignment gt = Assignment::from_targets(std::vector<Index>(truth.begin(), truth.end()), n);
  const Assignment corr = Assignment::from_targets(std::vector<Index>(guess.begin(), guess.end()), n);
  const MatrixXd fw = oracle::floyd_warshall(m.edge_graph());
  const double diam = fw.maxCoeff();
  const VertexErrors e = geodesic_error(corr, GroundTruth::from_assignment(gt), m);
  // Both sides sum the same edge lengths in different association orders,
  // so agreement is to a few ulps rather than bit for bit.
  constexpr double kUlps = 1e-15;
  auto close = [](double a, double b) { return std::abs(a - b) <= kUlps * std::max(std::abs(a), std::abs(b)); };
  Index mismatches = 0;
  double worst = 0.0;
  for (std::size_t i = 0; i < e.errors.size(); ++i) {
    const Index s = e.sources[i];
    const double want = fw(gt.target_of[s], corr.target_of[s]) / diam;
    if (!close(e.errors[i], want)) ++mismatches;
    if (want > 0.0) worst = std::max(worst, std::abs(e.errors[i] - want) / want);
  }
  const bool diameter_ok = close(e.diameter, diam);

  bool curves_ok = true;
  for (int trial = 0; trial < 20 && curves_ok; ++trial) {
    std::vector<double> errs(200);
    std::uniform_real_distribution<double> u(0.0, 0.4);
    for (auto& x : errs) x = trial % 3 == 0 && u(rng) < 0.1 ? VertexErrors::kUnmatchedError : u(rng);
    const ErrorCurve c = cumulative_curve(errs, default_thresholds());
    try {
      check_curve(c);
    } catch (const std::exception&) {
      curves_ok = false;
    }
    for (std::size_t i = 1; i < c.fractions.size(); ++i) curves_ok = curves_ok && c.fractions[i] >= c.fractions[i - 1];
    for (double f : c.fractions) curves_ok = curves_ok && f >= 0.0 && f <= c.matched_fraction;
  }
  std::ostringstream d;
  d << mismatches << "/" << e.errors.size() << " errors differ from the all-pairs oracle (max rel "
    << std::scientific << std::setprecision(1) << worst << "), diameter "
    << (diameter_ok ? "equal" : "different") << ", curves " << (curves_ok ? "monotone and bounded" : "broken");
  return {mismatches == 0 && diameter_ok && curves_ok && e.errors.size() == static_cast<std::size_t>(n), d.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 10. Repeated CLI runs give byte-identical files (manifest minus wall clock).
Verdict determinism() {
  const auto dir = std::filesystem::temp_directory_path() / "kmatch_acceptance_determinism";
  std::filesystem::remove_all(dir);
  std::vector<std::string> files = {"pair/source.off", "pair/target.off", "pair/gt.txt", "pair/init.txt",
                                    "out/c.txt", "out/c.trace.csv", "out/ms.txt", "out/ms.trace.csv"};
  auto once = [&](std::map<std::string, std::string>& got) {
    std::ostringstream sink;
    const std::string d = dir.string();
    int rc = run_cli({"kmatch", "--quiet", "synth", "--shape", "icosphere:642", "--permute", "--noise-rho", "0.7",
                      "--seed", "7", "--out", d + "/pair"},
                     sink, sink);
    rc |= run_cli({"kmatch", "--quiet", "match", d + "/pair/source.off", d + "/pair/target.off", "--init",
                   d + "/pair/init.txt", "--out", d + "/out/c.txt"},
                  sink, sink);
    rc |= run_cli({"kmatch", "--quiet", "match", d + "/pair/source.off", d + "/pair/target.off", "--init",
                   d + "/pair/init.txt", "--multiscale", "--n0", "100", "--maxp", "150", "--anchors", "50",
                   "--out", d + "/out/ms.txt"},
                  sink, sink);
    for (const auto& f : files) got[f] = slurp(dir / f);
    for (const std::string m : {"out/c.manifest.json", "out/ms.manifest.json"}) {
      auto j = nlohmann::ordered_json::parse(slurp(dir / m));
      j.erase("wall_clock_seconds");
      got[m] = j.dump();
    }
    return rc;
  };
  std::map<std::string, std::string> a, b;
  const int rc = once(a) | once(b);
  int differing = 0;
  for (const auto& [k, v] : a) differing += v.empty() || b[k] != v;
  std::filesystem::remove_all(dir);
  std::ostringstream d;
  d << a.size() << " files compared, " << differing << " differ or are empty, exit codes " << (rc ? "nonzero" : "zero");
  return {rc == 0 && differing == 0, d.str()};
}

}  // namespace

int main() {
  set_quiet(true);
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"1 lap exactness", lap_exactness},      {"2 monotonicity", monotonicity},
      {"3 convexity certificate", convexity_certificate}, {"4 kernel properties", kernel_properties},
      {"5 swap and partial regressions", regressions},    {"6 isometric recovery", isometric_recovery},
      {"7 multiscale", multiscale},            {"8 kernel runtime", runtime},
      {"9 evaluation", evaluation},            {"10 determinism", determinism}};
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << "  " << name << ": " << v.detail << std::endl;
  }
  return failed ? 1 : 0;
}
