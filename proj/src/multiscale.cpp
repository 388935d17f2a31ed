#include "kmatch/multiscale.hpp"

#include "kmatch/kernels.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>

namespace kmatch {

void MultiscaleConfig::validate() const {
  if (n0 < 1) throw ValidationError("n0 must be positive");
  if (max_problem < 2) throw ValidationError("maxp must be at least 2");
  if (branch < 2) throw ValidationError("branch must be at least 2");
  if (anchor_count < 0) throw ValidationError("anchor count must be non-negative");
  if (anchor_count > n0) throw ValidationError("anchor count must not exceed n0");
  if (sweeps < 0) throw ValidationError("sweeps must be non-negative");
}

std::pair<Index, Index> seed_counts(const TriMesh& source, const TriMesh& target, Index n0) {
  const double ax = source.total_area();
  const double ay = target.total_area();
  auto scaled = [&](double ratio, Index n) {
    const auto c = static_cast<Index>(std::llround(static_cast<double>(n0) * ratio));
    return std::clamp<Index>(c, 1, n);
  };
  Index cx = n0, cy = n0;
  if (ax >= ay)
    cy = scaled(ay / ax, target.num_vertices());
  else
    cx = scaled(ax / ay, source.num_vertices());
  if (cx > source.num_vertices() || cy > target.num_vertices())
    throw ValidationError("n0 = " + std::to_string(n0) + " exceeds the vertex count (" +
                          std::to_string(source.num_vertices()) + ", " +
                          std::to_string(target.num_vertices()) + ")");
  return {cx, cy};
}

namespace {

std::vector<Index> sorted_prefix(const std::vector<Index>& order, Index count) {
  std::vector<Index> rows(order.begin(), order.begin() + count);
  std::sort(rows.begin(), rows.end());
  return rows;
}

MatrixXd rows_of(const MatrixXd& m, const std::vector<Index>& rows) {
  if (m.cols() == 0) return MatrixXd(static_cast<Index>(rows.size()), 0);
  return m(rows, Eigen::all);
}

// (K_Y Pi K_X + alpha F_Y F_X^T) restricted to rows_y x rows_x, with Pi over
// the full vertex sets.
Payoff projected_payoff(const KernelFamily& fx, const KernelFamily& fy, double t,
                        const Assignment& pi, const std::vector<Index>& rows_x,
                        const std::vector<Index>& rows_y, const MatrixXd& dx, const MatrixXd& dy,
                        double alpha, Exec exec) {
  const KernelOperator kx = fx.at(t);
  const KernelOperator ky = fy.at(t);
  MatrixXd left, right;
  if (kx.is_low_rank() && ky.is_low_rank()) {
    const MatrixXd inner = transported_gram(ky.data(), kx.data(), pi.target_of);
    left = ky.data()(rows_y, Eigen::all) * inner;
    right = kx.data()(rows_x, Eigen::all);
  } else {
    const MatrixXd kyd = ky.materialize();
    left = gather_columns(kyd(rows_y, Eigen::all), pi.target_of, exec);
    right = kx.materialize()(rows_x, Eigen::all);
  }
  if (alpha > 0.0 && dx.cols() > 0) {
    MatrixXd l(left.rows(), left.cols() + dx.cols()), r(right.rows(), right.cols() + dx.cols());
    l << left, alpha * rows_of(dy, rows_y);
    r << right, rows_of(dx, rows_x);
    return lowrank_product(l, r, exec);
  }
  return lowrank_product(left, right, exec);
}

// Block K(rows, cols) of a kernel family at time t.
MatrixXd kernel_block(const KernelFamily& family, const std::vector<Index>& rows,
                      const std::vector<Index>& cols, double t) {
  const KernelOperator a = family.restricted(rows).at(t);
  if (a.is_low_rank()) {
    const KernelOperator b = family.restricted(cols).at(t);
    return a.data() * b.data().transpose();
  }
  std::vector<Index> all(rows);
  all.insert(all.end(), cols.begin(), cols.end());
  const MatrixXd k = family.restricted(all).at(t).materialize();
  return k.block(0, static_cast<Index>(rows.size()), static_cast<Index>(rows.size()),
                 static_cast<Index>(cols.size()));
}

constexpr double kAnchorWeight = 1e3;

double rms(const MatrixXd& m) {
  if (m.size() == 0) return 0.0;
  return std::sqrt(m.squaredNorm() / static_cast<double>(m.size()));
}

// Matched sampled source vertices in FPS order, with their partners.
void collect_seeds(CellDecomposition& s, const Assignment& pi) {
  s.seeds_x.clear();
  s.seeds_y.clear();
  for (Index r = 0; r < s.sampled_x; ++r) {
    const Index v = s.order_x[r];
    if (s.forbidden_x[v] || pi.target_of[v] == kUnmatched) continue;
    s.seeds_x.push_back(v);
    s.seeds_y.push_back(pi.target_of[v]);
  }
}

void dump_level(const MultiscaleConfig& ms, const CellDecomposition& s, const Assignment& pi, int level) {
  if (!ms.dump_dir) return;
  std::filesystem::create_directories(*ms.dump_dir);
  const std::string stem = "level_" + std::to_string(level);
  write_level_csv(s, pi, true, *ms.dump_dir / (stem + "_source.csv"));
  write_level_csv(s, pi, false, *ms.dump_dir / (stem + "_target.csv"));
}

}  // namespace

CoarseResult coarse_match(const MultiscaleProblem& problem, const MatchConfig& config,
                          const MultiscaleConfig& ms, const std::optional<Assignment>& init) {
  ms.validate();
  config.validate();
  const TriMesh& X = problem.source->mesh;
  const TriMesh& Y = problem.target->mesh;
  const Index nx = X.num_vertices();
  const Index ny = Y.num_vertices();
  const auto [cx, cy] = seed_counts(X, Y, ms.n0);

  CoarseResult out;
  CellDecomposition& s = out.state;
  s.order_x = euclidean_fps(X, nx, 0, config.exec).indices;
  s.order_y = euclidean_fps(Y, ny, 0, config.exec).indices;
  s.sampled_x = s.added_x = cx;
  s.sampled_y = s.added_y = cy;
  s.cell_x.assign(nx, kUnmatched);
  s.cell_y.assign(ny, kUnmatched);
  s.forbidden_x.assign(nx, 0);
  s.forbidden_y.assign(ny, 0);

  const std::vector<Index> rows_x = sorted_prefix(s.order_x, cx);
  const std::vector<Index> rows_y = sorted_prefix(s.order_y, cy);
  const KernelFamily fx = kernel_family(*problem.source, config);
  const KernelFamily fy = kernel_family(*problem.target, config);
  const bool full = cx == nx && cy == ny;

  MatchProblem local;
  local.source_kernel = full ? fx : fx.restricted(rows_x);
  local.target_kernel = full ? fy : fy.restricted(rows_y);
  local.source_descriptors = full ? problem.source_desc.values : rows_of(problem.source_desc.values, rows_x);
  local.target_descriptors = full ? problem.target_desc.values : rows_of(problem.target_desc.values, rows_y);

  std::optional<Assignment> local_init;
  if (init) {
    if (init->num_sources() != nx || init->num_targets != ny || !init->is_injective())
      throw ValidationError("initial assignment does not fit the shapes");
    if (full) {
      local_init = *init;
    } else {
      const Payoff q = projected_payoff(fx, fy, config.time_schedule.front(), *init, rows_x, rows_y,
                                        problem.source_desc.values, problem.target_desc.values,
                                        config.alpha, config.exec);
      local_init = assignment_step(q, config.slack, config.exec);
    }
  }
  out.match = run(local, config, local_init);

  out.assignment.num_targets = ny;
  out.assignment.target_of.assign(nx, kUnmatched);
  for (Index j = 0; j < cx; ++j) {
    const Index t = out.match.assignment.target_of[j];
    if (t != kUnmatched) out.assignment.target_of[rows_x[j]] = rows_y[t];
  }
  out.assignment.objective = out.match.assignment.objective;

  collect_seeds(s, out.assignment);
  if (ms.partial) {
    std::vector<char> hit(ny, 0);
    for (Index y : s.seeds_y) hit[y] = 1;
    for (Index v : rows_x)
      if (out.assignment.target_of[v] == kUnmatched) s.forbidden_x[v] = 1;
    for (Index v : rows_y)
      if (!hit[v]) s.forbidden_y[v] = 1;
  }
  const auto anchors = std::min<Index>(ms.anchor_count, static_cast<Index>(s.seeds_x.size()));
  for (Index a = 0; a < anchors; ++a) s.anchors.emplace_back(s.seeds_x[a], s.seeds_y[a]);
  for (Index v : rows_x) s.cell_x[v] = s.forbidden_x[v] ? kForbiddenCell : 0;
  for (Index v : rows_y) s.cell_y[v] = s.forbidden_y[v] ? kForbiddenCell : 0;
  s.num_cells = 1;
  return out;
}

void propagate_forbidden(CellDecomposition& state, const TriMesh& source, const TriMesh& target) {
  auto one_side = [](const EdgeGraph& graph, const std::vector<Index>& order, Index sampled,
                     const std::vector<Index>& seeds, std::vector<char>& forbidden,
                     std::vector<Index>& cell) {
    std::vector<Index> sources;
    std::vector<char> is_forbidden;
    for (Index r = 0; r < sampled; ++r) {
      if (forbidden[order[r]]) {
        sources.push_back(order[r]);
        is_forbidden.push_back(1);
      }
    }
    if (sources.empty()) return;
    for (Index v : seeds) {
      sources.push_back(v);
      is_forbidden.push_back(0);
    }
    const VoronoiLabels near = nearest_source(graph, sources);
    for (Index r = 0; r < sampled; ++r) {
      const Index v = order[r];
      if (forbidden[v] || near.label[v] < 0 || !is_forbidden[near.label[v]]) continue;
      forbidden[v] = 1;
      cell[v] = kForbiddenCell;
    }
  };
  one_side(source.edge_graph(), state.order_x, state.sampled_x, state.seeds_x, state.forbidden_x,
           state.cell_x);
  one_side(target.edge_graph(), state.order_y, state.sampled_y, state.seeds_y, state.forbidden_y,
           state.cell_y);
}

namespace {

struct CellInputs {
  const MultiscaleProblem* problem;
  const MatchConfig* config;
  const KernelFamily* fx;
  const KernelFamily* fy;
  const std::vector<KernelOperator>* kx_full;
  const std::vector<KernelOperator>* ky_full;
  const std::vector<Index>* anchor_x;
  const std::vector<Index>* anchor_y;
};

// One cell: sources rx against targets ry, started
// from the guide's matches inside the cell; matches outside are fixed.
Assignment solve_cell(const CellInputs& in, const std::vector<Index>& rx, const std::vector<Index>& ry,
                      const Assignment& guide, const std::vector<char>& forbidden_x,
                      const std::vector<char>& forbidden_y, const MatchConfig& cell_config) {
  const MatchConfig& config = *in.config;
  const Index nx = guide.num_sources();
  const Index ny = guide.num_targets;
  std::vector<Index> pos_y(ny, -1);
  for (std::size_t i = 0; i < ry.size(); ++i) pos_y[ry[i]] = static_cast<Index>(i);
  std::vector<char> in_x(nx, 0);
  for (Index v : rx) in_x[v] = 1;

  Assignment init;
  init.num_targets = static_cast<Index>(ry.size());
  init.target_of.assign(rx.size(), kUnmatched);
  for (std::size_t j = 0; j < rx.size(); ++j) {
    const Index t = guide.target_of[rx[j]];
    if (t != kUnmatched && pos_y[t] >= 0) init.target_of[j] = pos_y[t];
  }

  MatchProblem local;
  local.source_kernel = in.fx->restricted(rx);
  local.target_kernel = in.fy->restricted(ry);

  Assignment outside;
  outside.num_targets = ny;
  outside.target_of.assign(nx, kUnmatched);
  for (Index v = 0; v < nx; ++v) {
    const Index t = guide.target_of[v];
    if (t == kUnmatched || in_x[v] || pos_y[t] >= 0 || forbidden_x[v] || forbidden_y[t]) continue;
    outside.target_of[v] = t;
  }
  if (outside.num_matched() > 0) {
    local.linear_term = [&in, &rx, &ry, outside = std::move(outside)](double t) {
      const auto& times = in.config->time_schedule;
      const auto i = static_cast<std::size_t>(std::find(times.begin(), times.end(), t) - times.begin());
      const KernelOperator kx = i < times.size() ? (*in.kx_full)[i] : in.fx->at(t);
      const KernelOperator ky = i < times.size() ? (*in.ky_full)[i] : in.fy->at(t);
      LinearTerm term;
      if (kx.is_low_rank() && ky.is_low_rank()) {
        const MatrixXd inner = transported_gram(ky.data(), kx.data(), outside.target_of);
        term.target_side = ky.data()(ry, Eigen::all) * inner;
        term.source_side = kx.data()(rx, Eigen::all);
      } else {
        term.target_side = gather_columns(ky.materialize()(ry, Eigen::all), outside.target_of, Exec::serial);
        term.source_side = kx.materialize()(rx, Eigen::all);
      }
      return term;
    };
  }

  std::vector<MatrixXd> src_blocks, tgt_blocks;
  if (!in.anchor_x->empty()) {
    const double anchor_time = config.time_schedule.back();
    const MatrixXd bx = kernel_block(*in.fx, rx, *in.anchor_x, anchor_time);
    const MatrixXd by = kernel_block(*in.fy, ry, *in.anchor_y, anchor_time);
    const double sim_rms = rms(lowrank_product(by, bx, cell_config.exec));
    const double t0 = config.time_schedule.front();
    const Payoff quad = payoff(init, MatrixXd(rx.size(), 0), MatrixXd(ry.size(), 0),
                               local.source_kernel.at(t0), local.target_kernel.at(t0), 0.0,
                               cell_config.exec);
    const double quad_rms = rms(quad);
    if (sim_rms > 0.0) {
      const double w = std::sqrt(kAnchorWeight * (quad_rms > 0.0 ? quad_rms : 1.0) / sim_rms);
      src_blocks.push_back(w * bx);
      tgt_blocks.push_back(w * by);
    }
  }
  const auto& dx = in.problem->source_desc.values;
  const auto& dy = in.problem->target_desc.values;
  if (config.alpha > 0.0 && dx.cols() > 0) {
    const double scale = std::sqrt(config.alpha);
    src_blocks.push_back(scale * rows_of(dx, rx));
    tgt_blocks.push_back(scale * rows_of(dy, ry));
  }
  Index q = 0;
  for (const auto& b : src_blocks) q += b.cols();
  local.source_descriptors.resize(static_cast<Index>(rx.size()), q);
  local.target_descriptors.resize(static_cast<Index>(ry.size()), q);
  Index col = 0;
  for (std::size_t b = 0; b < src_blocks.size(); ++b) {
    local.source_descriptors.middleCols(col, src_blocks[b].cols()) = src_blocks[b];
    local.target_descriptors.middleCols(col, tgt_blocks[b].cols()) = tgt_blocks[b];
    col += src_blocks[b].cols();
  }
  MatchConfig cfg = cell_config;
  cfg.alpha = q > 0 ? 1.0 : 0.0;
  return run(local, cfg, init).assignment;
}

}  // namespace

std::pair<CellDecomposition, Assignment> refine_level(const CellDecomposition& state,
                                                      const Assignment& previous,
                                                      const MultiscaleProblem& problem,
                                                      const MatchConfig& config,
                                                      const MultiscaleConfig& ms, int level) {
  const TriMesh& X = problem.source->mesh;
  const TriMesh& Y = problem.target->mesh;
  const Index nx = X.num_vertices();
  const Index ny = Y.num_vertices();
  if (previous.num_sources() != nx || previous.num_targets != ny)
    throw ValidationError("previous assignment does not fit the shapes");

  CellDecomposition s = state;
  const Index old_x = s.sampled_x;
  const Index old_y = s.sampled_y;
  if (old_x == nx && old_y == ny) return {s, previous};
  s.added_x = std::min(nx - old_x, ms.branch * s.added_x);
  s.added_y = std::min(ny - old_y, ms.branch * s.added_y);
  s.sampled_x += s.added_x;
  s.sampled_y += s.added_y;

  // Cells of the previous level are discarded.
  for (Index r = 0; r < s.sampled_x; ++r)
    if (!s.forbidden_x[s.order_x[r]]) s.cell_x[s.order_x[r]] = kUnmatched;
  for (Index r = 0; r < s.sampled_y; ++r)
    if (!s.forbidden_y[s.order_y[r]]) s.cell_y[s.order_y[r]] = kUnmatched;

  collect_seeds(s, previous);
  if (s.seeds_x.empty()) throw NumericError("no matched seeds to refine from");
  if (ms.partial) propagate_forbidden(s, X, Y);

  const Index num_seeds = static_cast<Index>(s.seeds_x.size());
  const VoronoiLabels near_x = nearest_source(X.edge_graph(), s.seeds_x);
  const VoronoiLabels near_y = nearest_source(Y.edge_graph(), s.seeds_y);
  Index cells = std::max<Index>(1, (s.added_x + ms.branch * ms.max_problem - 1) /
                                       (ms.branch * ms.max_problem));
  std::vector<std::vector<Index>> rows_x, rows_y;
  while (true) {
    cells = std::min(cells, num_seeds);
    const std::vector<Index> centers(s.seeds_x.begin(), s.seeds_x.begin() + cells);
    const VoronoiLabels cen = nearest_source(X.edge_graph(), centers);
    std::vector<Index> seed_cell(num_seeds);
    for (Index i = 0; i < num_seeds; ++i) seed_cell[i] = cen.label[s.seeds_x[i]];
    for (Index r = 0; r < s.sampled_x; ++r) {
      const Index v = s.order_x[r];
      if (!s.forbidden_x[v]) s.cell_x[v] = seed_cell[near_x.label[v]];
    }
    for (Index r = 0; r < s.sampled_y; ++r) {
      const Index v = s.order_y[r];
      if (!s.forbidden_y[v]) s.cell_y[v] = seed_cell[near_y.label[v]];
    }
    rows_x.assign(cells, {});
    rows_y.assign(cells, {});
    for (Index v = 0; v < nx; ++v)
      if (s.cell_x[v] >= 0) rows_x[s.cell_x[v]].push_back(v);
    for (Index v = 0; v < ny; ++v)
      if (s.cell_y[v] >= 0) rows_y[s.cell_y[v]].push_back(v);
    Index largest = 0;
    for (Index c = 0; c < cells; ++c)
      largest = std::max<Index>(largest, std::max(rows_x[c].size(), rows_y[c].size()));
    if (largest <= ms.max_problem) break;
    if (cells == num_seeds)
      throw NumericError("cannot split cells below maxp = " + std::to_string(ms.max_problem));
    ++cells;
  }
  s.num_cells = cells;

  const KernelFamily fx = kernel_family(*problem.source, config);
  const KernelFamily fy = kernel_family(*problem.target, config);
  std::vector<KernelOperator> kx_full, ky_full;
  for (double t : config.time_schedule) {
    kx_full.push_back(fx.at(t));
    ky_full.push_back(fy.at(t));
  }
  std::vector<Index> anchor_x, anchor_y;
  for (auto [a, b] : s.anchors) {
    anchor_x.push_back(a);
    anchor_y.push_back(b);
  }
  const CellInputs inputs{&problem, &config, &fx, &fy, &kx_full, &ky_full, &anchor_x, &anchor_y};

  MatchConfig cell_config = config;
  const bool parallel_cells = config.exec == Exec::parallel && cells > 1;
  if (parallel_cells) cell_config.exec = Exec::serial;

  Assignment guide = previous;
  {
    std::vector<Assignment> results(cells);
    std::exception_ptr failure;
    std::mutex failure_mutex;
#pragma omp parallel for schedule(dynamic) if (parallel_cells)
    for (Index c = 0; c < cells; ++c) {
      try {
        if (rows_x[c].empty()) continue;
        if (rows_y[c].empty()) {
          log_warning("level " + std::to_string(level) + ": cell " + std::to_string(c) +
                      " has no target vertices; " + std::to_string(rows_x[c].size()) +
                      " sources stay unmatched");
          continue;
        }
        results[c] = solve_cell(inputs, rows_x[c], rows_y[c], guide, s.forbidden_x, s.forbidden_y,
                                cell_config);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);

    // Cells are disjoint on both sides, so the merge cannot collide.
    Assignment merged;
    merged.num_targets = ny;
    merged.target_of.assign(nx, kUnmatched);
    for (Index c = 0; c < cells; ++c) {
      if (results[c].target_of.empty()) continue;
      for (std::size_t j = 0; j < rows_x[c].size(); ++j) {
        const Index t = results[c].target_of[j];
        if (t != kUnmatched) merged.target_of[rows_x[c][j]] = rows_y[c][t];
      }
    }
    if (!merged.is_injective()) throw NumericError("merged multiscale assignment is not injective");
    guide = std::move(merged);
  }
  return {std::move(s), std::move(guide)};
}

namespace {

// Q = left * right^T for the payoff of the whole map pi at time t.
std::pair<MatrixXd, MatrixXd> context_factors(const KernelFamily& fx, const KernelFamily& fy, double t,
                                              const Assignment& pi, const MatrixXd& dx,
                                              const MatrixXd& dy, double alpha, Exec exec) {
  const KernelOperator kx = fx.at(t);
  const KernelOperator ky = fy.at(t);
  MatrixXd left, right;
  if (kx.is_low_rank() && ky.is_low_rank()) {
    left = ky.data() * transported_gram(ky.data(), kx.data(), pi.target_of);
    right = kx.data();
  } else {
    left = gather_columns(ky.materialize(), pi.target_of, exec);
    right = kx.materialize();
  }
  if (alpha > 0.0 && dx.cols() > 0) {
    MatrixXd l(left.rows(), left.cols() + dx.cols()), r(right.rows(), right.cols() + dx.cols());
    l << left, alpha * dy;
    r << right, dx;
    return {std::move(l), std::move(r)};
  }
  return {std::move(left), std::move(right)};
}

void complete_leftovers(Assignment& current, const MultiscaleProblem& problem, const MatchConfig& config) {
  const Index nx = current.num_sources();
  const Index ny = current.num_targets;
  std::vector<Index> free_x, free_y;
  const auto used = current.source_of();
  for (Index v = 0; v < nx; ++v)
    if (current.target_of[v] == kUnmatched) free_x.push_back(v);
  for (Index v = 0; v < ny; ++v)
    if (used[v] == kUnmatched) free_y.push_back(v);
  if (free_x.empty() || free_y.empty()) return;
  const KernelFamily fx = kernel_family(*problem.source, config);
  const KernelFamily fy = kernel_family(*problem.target, config);
  const Payoff q = projected_payoff(fx, fy, config.time_schedule.back(), current, free_x, free_y,
                                    problem.source_desc.values, problem.target_desc.values,
                                    config.alpha, config.exec);
  const Assignment extra = assignment_step(q, config.slack, config.exec);
  for (std::size_t j = 0; j < free_x.size(); ++j)
    if (extra.target_of[j] != kUnmatched) current.target_of[free_x[j]] = free_y[extra.target_of[j]];
  if (!current.is_injective()) throw NumericError("multiscale completion is not injective");
}

}  // namespace

int exchange_sweeps(Assignment& current, const MultiscaleProblem& problem, const MatchConfig& config,
                    const MultiscaleConfig& ms, const std::vector<char>& forbidden_x,
                    const std::vector<char>& forbidden_y) {
  const TriMesh& X = problem.source->mesh;
  const Index nx = X.num_vertices();
  const Index ny = problem.target->mesh.num_vertices();
  if (current.num_sources() != nx || current.num_targets != ny)
    throw ValidationError("assignment does not fit the shapes");
  if (static_cast<Index>(forbidden_x.size()) != nx || static_cast<Index>(forbidden_y.size()) != ny)
    throw ValidationError("forbidden flags do not fit the shapes");
  const KernelFamily fx = kernel_family(*problem.source, config);
  const KernelFamily fy = kernel_family(*problem.target, config);
  const double t = config.time_schedule.back();
  const Index half = std::max<Index>(1, ms.max_problem / 2);

  std::vector<Index> active_x, allowed_y;
  for (Index v = 0; v < nx; ++v)
    if (!forbidden_x[v]) active_x.push_back(v);
  for (Index v = 0; v < ny; ++v)
    if (!forbidden_y[v]) allowed_y.push_back(v);
  if (active_x.empty() || allowed_y.empty()) return 0;
  const std::vector<Index> starts = euclidean_fps(X, std::min<Index>(nx, ms.sweeps), 0, config.exec).indices;

  int rounds = 0;
  for (int round = 0; round < ms.sweeps; ++round) {
    const auto [left, right] = context_factors(fx, fy, t, current, problem.source_desc.values,
                                               problem.target_desc.values, config.alpha, config.exec);
    const MatrixXd left_allowed = left(allowed_y, Eigen::all);

    // Preferred target of every active source, a few hundred columns at a time.
    std::vector<Index> preferred(nx, kUnmatched);
    constexpr Index kChunk = 256;
    const auto num_active = static_cast<Index>(active_x.size());
    const Index num_chunks = (num_active + kChunk - 1) / kChunk;
#pragma omp parallel for schedule(dynamic) if (config.exec == Exec::parallel)
    for (Index b = 0; b < num_chunks; ++b) {
      const Index lo = b * kChunk;
      const Index hi = std::min(num_active, lo + kChunk);
      const std::vector<Index> cols(active_x.begin() + lo, active_x.begin() + hi);
      const MatrixXd block = left_allowed * right(cols, Eigen::all).transpose();
      for (Index j = 0; j < block.cols(); ++j) {
        Index r = 0;
        block.col(j).maxCoeff(&r);
        preferred[cols[j]] = allowed_y[r];
      }
    }

    Index cells = std::max<Index>(1, (num_active + half - 1) / half);
    std::vector<std::vector<Index>> rows_x, rows_y;
    while (true) {
      cells = std::min(cells, num_active);
      const std::vector<Index> centers =
          euclidean_fps(X, cells, starts[static_cast<std::size_t>(round) % starts.size()], config.exec).indices;
      const VoronoiLabels lab = nearest_source(X.edge_graph(), centers);
      rows_x.assign(cells, {});
      rows_y.assign(cells, {});
      for (Index v : active_x) rows_x[lab.label[v]].push_back(v);
      Index largest = 0;
      for (Index c = 0; c < cells; ++c) {
        auto& ry = rows_y[c];
        for (Index v : rows_x[c]) {
          ry.push_back(preferred[v]);
          const Index y = current.target_of[v];
          if (y != kUnmatched && !forbidden_y[y]) ry.push_back(y);
        }
        std::sort(ry.begin(), ry.end());
        ry.erase(std::unique(ry.begin(), ry.end()), ry.end());
        largest = std::max<Index>(largest, std::max(rows_x[c].size(), ry.size()));
      }
      if (largest <= ms.max_problem) break;
      if (cells == num_active)
        throw NumericError("cannot split exchange cells below maxp = " + std::to_string(ms.max_problem));
      cells = std::min(num_active, cells + std::max<Index>(1, cells / 4));
    }

    std::vector<Assignment> results(cells);
    std::vector<Payoff> blocks(cells);
    std::exception_ptr failure;
    std::mutex failure_mutex;
    const bool parallel_cells = config.exec == Exec::parallel && cells > 1;
#pragma omp parallel for schedule(dynamic) if (parallel_cells)
    for (Index c = 0; c < cells; ++c) {
      try {
        if (rows_x[c].empty()) continue;
        blocks[c] = left(rows_y[c], Eigen::all) * right(rows_x[c], Eigen::all).transpose();
        results[c] = assignment_step(blocks[c], config.slack, parallel_cells ? Exec::serial : config.exec);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);

    Assignment next;
    next.num_targets = ny;
    next.target_of.assign(nx, kUnmatched);
    std::vector<Index> owner(ny, kUnmatched);
    std::vector<double> best(ny, 0.0);
    std::vector<char> fixed(ny, 0);
    for (Index v = 0; v < nx; ++v) {
      const Index y = current.target_of[v];
      if (!forbidden_x[v] || y == kUnmatched) continue;
      next.target_of[v] = y;
      owner[y] = v;
      fixed[y] = 1;
    }
    for (Index c = 0; c < cells; ++c) {
      if (results[c].target_of.empty()) continue;
      for (std::size_t j = 0; j < rows_x[c].size(); ++j) {
        const Index a = results[c].target_of[j];
        if (a == kUnmatched) continue;
        const Index y = rows_y[c][a];
        const double value = blocks[c](a, static_cast<Index>(j));
        if (fixed[y]) continue;
        if (owner[y] != kUnmatched) {
          if (value <= best[y]) continue;
          next.target_of[owner[y]] = kUnmatched;
        }
        owner[y] = rows_x[c][j];
        best[y] = value;
        next.target_of[rows_x[c][j]] = y;
      }
    }
    for (Index v : active_x) {
      const Index y = current.target_of[v];
      if (next.target_of[v] == kUnmatched && y != kUnmatched && owner[y] == kUnmatched) {
        next.target_of[v] = y;
        owner[y] = v;
      }
    }
    if (!next.is_injective()) throw NumericError("exchange round produced a non-injective map");
    ++rounds;
    const bool changed = next.target_of != current.target_of;
    current = std::move(next);
    if (!changed) break;
  }
  return rounds;
}

MultiscaleResult run_multiscale(const MultiscaleProblem& problem, const MatchConfig& config,
                                const MultiscaleConfig& ms, const std::optional<Assignment>& init) {
  ms.validate();
  config.validate();
  if (!problem.source || !problem.target) throw ValidationError("multiscale problem needs both shapes");
  const Index nx = problem.source->mesh.num_vertices();
  const Index ny = problem.target->mesh.num_vertices();
  MultiscaleResult out;

  if (std::max(nx, ny) <= ms.max_problem) {
    out.single_scale = true;
    out.coarse = run(*problem.source, *problem.target, problem.source_desc, problem.target_desc,
                     config, init);
    out.assignment = out.coarse.assignment;
    out.levels.push_back({nx, ny, 1, out.assignment.num_matched(), 0});
    return out;
  }

  CoarseResult coarse = coarse_match(problem, config, ms, init);
  out.coarse = coarse.match;
  CellDecomposition state = std::move(coarse.state);
  Assignment current = std::move(coarse.assignment);
  auto summarize = [&](const CellDecomposition& s, const Assignment& a) {
    LevelSummary l{s.sampled_x, s.sampled_y, s.num_cells, a.num_matched(), 0};
    l.forbidden_x = std::count(s.forbidden_x.begin(), s.forbidden_x.end(), 1);
    out.levels.push_back(l);
    out.forbidden_history.push_back(s.forbidden_x);
  };
  summarize(state, current);
  dump_level(ms, state, current, 0);

  int level = 0;
  while (state.sampled_x < nx || state.sampled_y < ny) {
    ++level;
    auto [next_state, next] = refine_level(state, current, problem, config, ms, level);
    state = std::move(next_state);
    current = std::move(next);
    summarize(state, current);
    dump_level(ms, state, current, level);
  }

  if (!ms.partial) complete_leftovers(current, problem, config);
  if (ms.sweeps > 0) {
    out.exchange_rounds = exchange_sweeps(current, problem, config, ms, state.forbidden_x, state.forbidden_y);
    if (!ms.partial) complete_leftovers(current, problem, config);
  }
  out.levels.back().matched = current.num_matched();
  out.assignment = std::move(current);
  return out;
}

void write_level_csv(const CellDecomposition& state, const Assignment& assignment, bool source,
                     const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "vertex,cell,matched_to\n";
  const auto& order = source ? state.order_x : state.order_y;
  const Index sampled = source ? state.sampled_x : state.sampled_y;
  const auto& cell = source ? state.cell_x : state.cell_y;
  const std::vector<Index> partner = source ? assignment.target_of : assignment.source_of();
  std::vector<Index> rows(order.begin(), order.begin() + sampled);
  std::sort(rows.begin(), rows.end());
  for (Index v : rows) out << v << ',' << cell[v] << ',' << partner[v] << '\n';
}

}  // namespace kmatch
