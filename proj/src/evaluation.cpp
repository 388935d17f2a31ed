#include "kmatch/evaluation.hpp"

#include "kmatch/descriptors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <queue>
#include <sstream>

namespace kmatch {

GroundTruth GroundTruth::from_assignment(const Assignment& a) {
  GroundTruth gt;
  gt.target_of = a.target_of;
  gt.known.assign(a.target_of.size(), 1);
  gt.num_targets = a.num_targets;
  return gt;
}

GroundTruth read_ground_truth(const std::filesystem::path& path, Index num_sources, Index num_targets) {
  GroundTruth gt;
  gt.num_targets = num_targets;
  gt.target_of.assign(num_sources, kUnmatched);
  gt.known.assign(num_sources, 0);
  for (auto [s, t] : read_pairs(path)) {
    if (s < 0 || s >= num_sources)
      throw ValidationError(path.string() + ": source index " + std::to_string(s) + " out of range");
    if (t != kUnmatched && (t < 0 || t >= num_targets))
      throw ValidationError(path.string() + ": target index " + std::to_string(t) + " out of range");
    if (gt.known[s]) throw ValidationError(path.string() + ": source " + std::to_string(s) + " listed twice");
    gt.known[s] = 1;
    gt.target_of[s] = t;
  }
  return gt;
}

namespace {

// Dijkstra from `from` that stops once `to` is settled. Same relaxation
// order as the full search, so the value is identical.
double geodesic_between(const EdgeGraph& graph, Index from, Index to, std::vector<double>& dist,
                        std::vector<Index>& touched) {
  using Item = std::pair<double, Index>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  for (Index v : touched) dist[v] = std::numeric_limits<double>::infinity();
  touched.clear();
  dist[from] = 0.0;
  touched.push_back(from);
  heap.emplace(0.0, from);
  while (!heap.empty()) {
    const auto [d, v] = heap.top();
    heap.pop();
    if (d > dist[v]) continue;
    if (v == to) return d;
    const auto nb = graph.neighbors(v);
    const auto len = graph.lengths(v);
    for (std::size_t e = 0; e < nb.size(); ++e) {
      const double nd = d + len[e];
      if (nd < dist[nb[e]]) {
        if (std::isinf(dist[nb[e]])) touched.push_back(nb[e]);
        dist[nb[e]] = nd;
        heap.emplace(nd, nb[e]);
      }
    }
  }
  return std::numeric_limits<double>::infinity();
}

}  // namespace

VertexErrors geodesic_error(const Assignment& corr, const GroundTruth& gt, const TriMesh& target,
                            std::optional<double> diameter, Exec exec) {
  const Index ns = corr.num_sources();
  const Index nt = target.num_vertices();
  if (gt.num_sources() != ns || static_cast<Index>(gt.known.size()) != ns)
    throw ValidationError("ground truth has " + std::to_string(gt.num_sources()) + " sources, correspondence has " +
                          std::to_string(ns));
  if (corr.num_targets != nt || gt.num_targets != nt)
    throw ValidationError("target vertex count does not match the target mesh");

  VertexErrors out;
  out.diameter = diameter ? *diameter : geodesic_diameter(target, std::min<Index>(nt, 512));
  if (!(out.diameter > 0.0)) throw ValidationError("target diameter must be positive");

  for (Index s = 0; s < ns; ++s) {
    const Index pred = corr.target_of[s];
    if (!gt.known[s]) {
      if (pred != kUnmatched)
        throw ValidationError("source " + std::to_string(s) + " is matched but has no ground truth entry");
      continue;
    }
    if (gt.target_of[s] == kUnmatched) {
      if (pred == kUnmatched)
        ++out.true_rejections;
      else
        ++out.false_matches;
      continue;
    }
    out.sources.push_back(s);
  }
  const auto m = static_cast<Index>(out.sources.size());
  out.errors.assign(m, VertexErrors::kUnmatchedError);
  const EdgeGraph& graph = target.edge_graph();
#pragma omp parallel if (exec == Exec::parallel)
  {
    std::vector<double> dist(nt, std::numeric_limits<double>::infinity());
    std::vector<Index> touched;
#pragma omp for schedule(dynamic, 16)
    for (Index i = 0; i < m; ++i) {
      const Index s = out.sources[i];
      const Index pred = corr.target_of[s];
      if (pred == kUnmatched) continue;
      out.errors[i] = geodesic_between(graph, gt.target_of[s], pred, dist, touched) / out.diameter;
    }
  }
  for (double e : out.errors) {
    if (std::isinf(e))
      ++out.unmatched;
    else
      ++out.matched;
  }
  return out;
}

std::vector<double> default_thresholds() {
  std::vector<double> t;
  for (int i = 0; i <= 100; ++i) t.push_back(0.0025 * i);
  return t;
}

ErrorCurve cumulative_curve(std::span<const double> errors, std::span<const double> thresholds) {
  if (errors.empty()) throw ValidationError("no evaluated correspondences");
  if (thresholds.empty()) throw ValidationError("no thresholds");
  for (std::size_t i = 1; i < thresholds.size(); ++i)
    if (!(thresholds[i] > thresholds[i - 1])) throw ValidationError("thresholds must increase");

  std::vector<double> finite;
  for (double e : errors) {
    if (std::isnan(e) || e < 0.0) throw ValidationError("errors must be non-negative");
    if (!std::isinf(e)) finite.push_back(e);
  }
  std::sort(finite.begin(), finite.end());
  const auto total = static_cast<double>(errors.size());

  ErrorCurve curve;
  curve.thresholds.assign(thresholds.begin(), thresholds.end());
  for (double tau : thresholds) {
    const auto below = std::lower_bound(finite.begin(), finite.end(), tau) - finite.begin();
    curve.fractions.push_back(static_cast<double>(below) / total);
  }
  curve.matched_fraction = static_cast<double>(finite.size()) / total;
  if (!finite.empty()) {
    double sum = 0.0;
    for (double e : finite) sum += e;
    curve.mean_error = sum / static_cast<double>(finite.size());
  }
  return curve;
}

void check_curve(const ErrorCurve& curve) {
  if (curve.thresholds.size() != curve.fractions.size())
    throw NumericError("curve has mismatched thresholds and fractions");
  for (std::size_t i = 0; i < curve.fractions.size(); ++i) {
    const double f = curve.fractions[i];
    if (!(f >= 0.0 && f <= 1.0)) throw NumericError("curve fraction outside [0, 1]");
    if (f > curve.matched_fraction) throw NumericError("curve exceeds the matched fraction");
    if (i > 0 && f < curve.fractions[i - 1]) throw NumericError("curve is not monotone");
  }
}

void write_curve_csv(const ErrorCurve& curve, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "threshold,fraction\n" << std::setprecision(17);
  for (std::size_t i = 0; i < curve.thresholds.size(); ++i)
    out << curve.thresholds[i] << ',' << curve.fractions[i] << '\n';
}

void write_curve_svg(const ErrorCurve& curve, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  constexpr double W = 640, H = 480, L = 70, R = 20, T = 20, B = 60;
  const double tmax = curve.thresholds.empty() ? 1.0 : std::max(curve.thresholds.back(), 1e-12);
  auto px = [&](double t) { return L + (W - L - R) * t / tmax; };
  auto py = [&](double f) { return H - B - (H - T - B) * f; };
  out << std::fixed << std::setprecision(2);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" viewBox=\"0 0 640 480\">\n";
  out << "<rect width=\"640\" height=\"480\" fill=\"white\"/>\n";
  out << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double f = 0.25 * i;
    out << "<text x=\"" << L - 8 << "\" y=\"" << py(f) + 4 << "\" font-size=\"12\" text-anchor=\"end\">"
        << std::setprecision(0) << 100 * f << std::setprecision(2) << "</text>\n";
    const double t = tmax * 0.25 * i;
    out << "<text x=\"" << px(t) << "\" y=\"" << H - B + 18 << "\" font-size=\"12\" text-anchor=\"middle\">"
        << std::setprecision(3) << t << std::setprecision(2) << "</text>\n";
  }
  out << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 15
      << "\" font-size=\"14\" text-anchor=\"middle\">geodesic error</text>\n";
  out << "<text x=\"18\" y=\"" << (T + H - B) / 2 << "\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
      << (T + H - B) / 2 << ")\">% correspondences</text>\n";
  out << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < curve.thresholds.size(); ++i)
    out << (i ? " " : "") << px(curve.thresholds[i]) << ',' << py(curve.fractions[i]);
  out << "\"/>\n</svg>\n";
}

std::vector<RuntimeRow> runtime_report(const std::vector<RuntimePair>& pairs, const MatchConfig& config,
                                       Index gaussian_cap) {
  using clock = std::chrono::steady_clock;
  auto seconds = [](clock::time_point a, clock::time_point b) {
    return std::chrono::duration<double>(b - a).count();
  };
  std::vector<RuntimeRow> rows;
  for (const auto& pair : pairs) {
    MatchConfig heat = config;
    heat.kernel_kind = KernelKind::heat;
    const TriMesh sx = pair.source.normalized_to_unit_area();
    const TriMesh sy = pair.target.normalized_to_unit_area();

    auto t0 = clock::now();
    const PreparedShape hx = prepare_shape(sx, heat);
    const PreparedShape hy = prepare_shape(sy, heat);
    auto t1 = clock::now();
    // Shared descriptors, outside both timings.
    const auto times_x = default_hks_times(*hx.basis);
    const DescriptorField dx = hks(*hx.basis, times_x, true);
    const DescriptorField dy = hks(*hy.basis, times_x, true);

    RuntimeRow h{pair.name, "heat", sx.num_vertices(), sy.num_vertices()};
    h.setup_seconds = seconds(t0, t1);
    auto t2 = clock::now();
    const MatchState hs = run(hx, hy, dx, dy, heat, pair.init);
    auto t3 = clock::now();
    h.match_seconds = seconds(t2, t3);
    h.steps = hs.steps;
    h.seconds_per_step = hs.steps > 0 ? h.match_seconds / hs.steps : 0.0;
    rows.push_back(h);

    RuntimeRow g{pair.name, "gaussian", sx.num_vertices(), sy.num_vertices()};
    if (std::max(sx.num_vertices(), sy.num_vertices()) > gaussian_cap) {
      g.skipped = true;
      rows.push_back(g);
      continue;
    }
    MatchConfig gauss = config;
    gauss.kernel_kind = KernelKind::gaussian_geodesic;
    auto t4 = clock::now();
    const PreparedShape gx = prepare_shape(sx, gauss, hx.basis);
    const PreparedShape gy = prepare_shape(sy, gauss, hy.basis);
    auto t5 = clock::now();
    g.setup_seconds = seconds(t4, t5);
    const MatchState gs = run(gx, gy, dx, dy, gauss, pair.init);
    auto t6 = clock::now();
    g.match_seconds = seconds(t5, t6);
    g.steps = gs.steps;
    g.seconds_per_step = gs.steps > 0 ? g.match_seconds / gs.steps : 0.0;
    rows.push_back(g);
  }
  return rows;
}

void write_runtime_csv(const std::vector<RuntimeRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "pair,variant,source_vertices,target_vertices,skipped,setup_seconds,match_seconds,steps,seconds_per_step\n";
  out << std::setprecision(6);
  for (const auto& r : rows)
    out << r.pair << ',' << r.variant << ',' << r.source_vertices << ',' << r.target_vertices << ','
        << (r.skipped ? 1 : 0) << ',' << r.setup_seconds << ',' << r.match_seconds << ',' << r.steps << ','
        << r.seconds_per_step << '\n';
}

}  // namespace kmatch
