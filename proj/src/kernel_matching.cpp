#include "kmatch/kernel_matching.hpp"

#include "kmatch/kernels.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace kmatch {

// ---------------------------------------------------------------------------
// KernelOperator / KernelFamily

KernelOperator KernelOperator::low_rank(MatrixXd factor) {
  KernelOperator k;
  k.low_rank_ = true;
  k.data_ = std::move(factor);
  return k;
}

KernelOperator KernelOperator::dense(MatrixXd matrix) {
  if (matrix.rows() != matrix.cols()) throw ValidationError("dense kernel must be square");
  KernelOperator k;
  k.low_rank_ = false;
  k.data_ = std::move(matrix);
  return k;
}

MatrixXd KernelOperator::materialize() const {
  return low_rank_ ? MatrixXd(data_ * data_.transpose()) : data_;
}

KernelFamily KernelFamily::heat(std::shared_ptr<const SpectralBasis> basis) {
  if (!basis) throw ValidationError("heat kernel family needs a basis");
  KernelFamily f;
  f.kind_ = KernelKind::heat;
  f.basis_ = std::move(basis);
  return f;
}

KernelFamily KernelFamily::gaussian(std::shared_ptr<const MatrixXd> distances,
                                    std::optional<double> sigma) {
  if (!distances) throw ValidationError("gaussian kernel family needs distances");
  if (sigma && !(*sigma > 0.0)) throw ValidationError("gaussian sigma must be positive");
  KernelFamily f;
  f.kind_ = KernelKind::gaussian_geodesic;
  f.distances_ = std::move(distances);
  f.sigma_ = sigma;
  return f;
}

Index KernelFamily::size() const {
  if (!rows_.empty()) return static_cast<Index>(rows_.size());
  return kind_ == KernelKind::heat ? basis_->num_vertices() : distances_->rows();
}

KernelOperator KernelFamily::at(double t) const {
  if (!(t > 0.0)) throw ValidationError("diffusion time must be positive");
  if (kind_ == KernelKind::heat) {
    const VectorXd half = (0.5 * t * basis_->eigenvalues.array()).exp();
    if (rows_.empty()) return KernelOperator::low_rank(basis_->eigenvectors * half.asDiagonal());
    return KernelOperator::low_rank(basis_->eigenvectors(rows_, Eigen::all) * half.asDiagonal());
  }
  const double sigma = sigma_.value_or(std::sqrt(2.0 * t));
  if (rows_.empty()) return KernelOperator::dense(gaussian_from_distances(*distances_, sigma));
  return KernelOperator::dense(gaussian_from_distances((*distances_)(rows_, rows_), sigma));
}

KernelFamily KernelFamily::restricted(std::span<const Index> rows) const {
  KernelFamily f = *this;
  const Index n = size();
  f.rows_.clear();
  f.rows_.reserve(rows.size());
  for (Index r : rows) {
    if (r < 0 || r >= n) throw ValidationError("kernel restriction index out of range");
    f.rows_.push_back(rows_.empty() ? r : rows_[r]);
  }
  return f;
}

// ---------------------------------------------------------------------------

void MatchConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ValidationError("alpha must be non-negative");
  if (time_schedule.empty()) throw ValidationError("time schedule is empty");
  for (double t : time_schedule)
    if (!(t > 0.0) || !std::isfinite(t)) throw ValidationError("times must be positive");
  for (std::size_t i = 1; i < time_schedule.size(); ++i) {
    if (time_schedule[i] > time_schedule[i - 1]) {
      log_warning("time schedule is not non-increasing");
      break;
    }
  }
  if (iters_per_time < 1) throw ValidationError("iters-per-time must be positive");
  if (num_eigs < 1) throw ValidationError("num-eigs must be positive");
  if (gaussian_sigma && !(*gaussian_sigma > 0.0)) throw ValidationError("gaussian sigma must be positive");
  if (slack && !std::isfinite(*slack)) throw ValidationError("slack must be finite");
  if (!(tolerance >= 0.0)) throw ValidationError("tolerance must be non-negative");
}

namespace {

void check_dims(const Assignment& pi, const MatrixXd& source_desc, const MatrixXd& target_desc,
                const KernelOperator& source_kernel, const KernelOperator& target_kernel) {
  if (pi.num_sources() != source_kernel.size() || pi.num_targets != target_kernel.size())
    throw ValidationError("assignment dimensions do not match the kernels");
  if (source_desc.cols() != target_desc.cols())
    throw ValidationError("descriptor dimensions differ between shapes");
  if (source_desc.cols() > 0 &&
      (source_desc.rows() != source_kernel.size() || target_desc.rows() != target_kernel.size()))
    throw ValidationError("descriptor row counts do not match the kernels");
  if (!pi.is_injective()) throw ValidationError("assignment is not injective");
}

double data_term(const Assignment& pi, const MatrixXd& source_desc, const MatrixXd& target_desc) {
  if (source_desc.cols() == 0) return 0.0;
  double total = 0.0;
  for (Index j = 0; j < pi.num_sources(); ++j)
    if (pi.target_of[j] != kUnmatched) total += target_desc.row(pi.target_of[j]).dot(source_desc.row(j));
  return total;
}

double quadratic_term(const Assignment& pi, const KernelOperator& source_kernel,
                      const KernelOperator& target_kernel) {
  if (source_kernel.is_low_rank() && target_kernel.is_low_rank())
    return transported_gram(target_kernel.data(), source_kernel.data(), pi.target_of).squaredNorm();
  const MatrixXd kx = source_kernel.materialize();
  const MatrixXd ky = target_kernel.materialize();
  double total = 0.0;
  for (Index j = 0; j < pi.num_sources(); ++j) {
    const Index tj = pi.target_of[j];
    if (tj == kUnmatched) continue;
    for (Index m = 0; m < pi.num_sources(); ++m) {
      const Index tm = pi.target_of[m];
      if (tm != kUnmatched) total += ky(tj, tm) * kx(m, j);
    }
  }
  return total;
}

}  // namespace

double energy(const Assignment& pi, const MatrixXd& source_desc, const MatrixXd& target_desc,
              const KernelOperator& source_kernel, const KernelOperator& target_kernel,
              double alpha) {
  check_dims(pi, source_desc, target_desc, source_kernel, target_kernel);
  return alpha * data_term(pi, source_desc, target_desc) +
         quadratic_term(pi, source_kernel, target_kernel);
}

double dc_objective(const Assignment& pi, const MatrixXd& source_desc, const MatrixXd& target_desc,
                    const KernelOperator& source_kernel, const KernelOperator& target_kernel,
                    double alpha) {
  check_dims(pi, source_desc, target_desc, source_kernel, target_kernel);
  return alpha * data_term(pi, source_desc, target_desc) +
         0.5 * quadratic_term(pi, source_kernel, target_kernel);
}

namespace {

Payoff payoff_with(const Assignment& pi, const MatrixXd& source_desc, const MatrixXd& target_desc,
                   const KernelOperator& source_kernel, const KernelOperator& target_kernel,
                   double alpha, const LinearTerm* extra, Exec exec) {
  check_dims(pi, source_desc, target_desc, source_kernel, target_kernel);
  const Index q = (alpha > 0.0) ? source_desc.cols() : 0;
  const Index r = extra ? extra->source_side.cols() : 0;

  MatrixXd left_kernel;   // n_Y x k
  MatrixXd right_kernel;  // n_X x k
  if (source_kernel.is_low_rank() && target_kernel.is_low_rank()) {
    const MatrixXd inner = transported_gram(target_kernel.data(), source_kernel.data(), pi.target_of);
    left_kernel = target_kernel.data() * inner;
    right_kernel = source_kernel.data();
  } else {
    left_kernel = gather_columns(target_kernel.materialize(), pi.target_of, exec);
    right_kernel = source_kernel.materialize();
  }
  if (q == 0 && r == 0) return lowrank_product(left_kernel, right_kernel, exec);

  const Index k = left_kernel.cols();
  MatrixXd left(left_kernel.rows(), k + q + r);
  MatrixXd right(right_kernel.rows(), k + q + r);
  left.leftCols(k) = left_kernel;
  right.leftCols(k) = right_kernel;
  if (q > 0) {
    left.middleCols(k, q) = alpha * target_desc;
    right.middleCols(k, q) = source_desc;
  }
  if (r > 0) {
    left.rightCols(r) = extra->target_side;
    right.rightCols(r) = extra->source_side;
  }
  return lowrank_product(left, right, exec);
}

double linear_value(const Assignment& pi, const LinearTerm* extra) {
  if (!extra) return 0.0;
  return data_term(pi, extra->source_side, extra->target_side);
}

}  // namespace

Payoff payoff(const Assignment& pi, const MatrixXd& source_desc, const MatrixXd& target_desc,
              const KernelOperator& source_kernel, const KernelOperator& target_kernel,
              double alpha, Exec exec) {
  return payoff_with(pi, source_desc, target_desc, source_kernel, target_kernel, alpha, nullptr, exec);
}

Assignment assignment_step(const Payoff& q, std::optional<double> slack, Exec exec) {
  LapOptions options;
  options.exec = exec;
  if (q.rows() == q.cols()) return solve_lap(q, 0.0, options);
  return solve_lap_rectangular(q, slack, options);
}

Assignment initialize(const MatrixXd& source_desc, const MatrixXd& target_desc,
                      std::optional<double> slack, const LapOptions& options) {
  if (source_desc.cols() != target_desc.cols())
    throw ValidationError("descriptor dimension mismatch (" + std::to_string(source_desc.cols()) +
                          " vs " + std::to_string(target_desc.cols()) + ")");
  if (source_desc.cols() == 0) throw ValidationError("initialization needs descriptors");
  const Payoff similarity = lowrank_product(target_desc, source_desc, options.exec);
  if (similarity.rows() == similarity.cols()) return solve_lap(similarity, 0.0, options);
  return solve_lap_rectangular(similarity, slack, options);
}

namespace {

bool is_feasible(const Assignment& pi) {
  return pi.num_matched() == std::min(pi.num_sources(), pi.num_targets);
}

// <Pi_new - Pi_old, Q>, accumulated per source column.
double payoff_gain(const Payoff& q, const Assignment& next, const Assignment& current) {
  double gain = 0.0;
  for (Index j = 0; j < next.num_sources(); ++j) {
    const Index a = next.target_of[j];
    const Index b = current.target_of[j];
    if (a == b) continue;
    gain += (a == kUnmatched ? 0.0 : q(a, j)) - (b == kUnmatched ? 0.0 : q(b, j));
  }
  return gain;
}

}  // namespace

MatchState run(const MatchProblem& problem, const MatchConfig& config, std::optional<Assignment> init) {
  config.validate();
  const Index nx = problem.source_kernel.size();
  const Index ny = problem.target_kernel.size();
  const MatrixXd& fx = problem.source_descriptors;
  const MatrixXd& fy = problem.target_descriptors;
  if (fx.cols() != fy.cols()) throw ValidationError("descriptor dimension mismatch");

  MatchState state;
  if (init) {
    if (init->num_sources() != nx || init->num_targets != ny)
      throw ValidationError("initial assignment has wrong dimensions");
    if (!init->is_injective()) throw ValidationError("initial assignment is not injective");
    state.assignment = std::move(*init);
  } else {
    LapOptions options;
    options.exec = config.exec;
    state.assignment = initialize(fx, fy, config.slack, options);
  }

  for (double t : config.time_schedule) {
    state.active_time = t;
    const KernelOperator kx = problem.source_kernel.at(t);
    const KernelOperator ky = problem.target_kernel.at(t);
    std::optional<LinearTerm> extra_term;
    if (problem.linear_term) {
      extra_term = problem.linear_term(t);
      if (extra_term->target_side.rows() != ny || extra_term->source_side.rows() != nx ||
          extra_term->target_side.cols() != extra_term->source_side.cols())
        throw ValidationError("linear term dimensions do not match the problem");
    }
    const LinearTerm* extra = extra_term ? &*extra_term : nullptr;
    auto step_payoff = [&](const Assignment& a) {
      return payoff_with(a, fx, fy, kx, ky, config.alpha, extra, config.exec);
    };
    auto objective = [&](const Assignment& a) {
      return dc_objective(a, fx, fy, kx, ky, config.alpha) + linear_value(a, extra);
    };
    int accepted = 0;
    if (!is_feasible(state.assignment)) {
      // A partial start is completed unconditionally before tracing.
      const Payoff q = step_payoff(state.assignment);
      state.assignment = assignment_step(q, config.slack, config.exec);
      ++state.steps;
      ++accepted;
      ++state.iterations;
    }
    double current = objective(state.assignment);
    state.trace.push_back({t, accepted, current});
    while (accepted < config.iters_per_time) {
      const Payoff q = step_payoff(state.assignment);
      Assignment next = assignment_step(q, config.slack, config.exec);
      ++state.steps;
      if (next.same_map(state.assignment)) break;
      const double gain = payoff_gain(q, next, state.assignment);
      const double base = std::abs(assignment_score(q, state.assignment));
      if (!(gain > config.tolerance * std::max(base, std::numeric_limits<double>::min()))) break;
      const double value = objective(next);
      if (value < current - 1e-9 * std::abs(current)) {
        std::ostringstream msg;
        msg << std::setprecision(17) << "objective decreased at t=" << t << ": " << current
            << " -> " << value;
        throw NumericError(msg.str());
      }
      state.assignment = std::move(next);
      current = value;
      ++accepted;
      ++state.iterations;
      state.trace.push_back({t, accepted, current});
    }
    state.iterations_per_time.push_back(accepted);
  }
  state.assignment.objective = state.trace.empty() ? 0.0 : state.trace.back().energy;
  return state;
}

PreparedShape prepare_shape(TriMesh mesh, const MatchConfig& config,
                            std::shared_ptr<const SpectralBasis> cached_basis) {
  PreparedShape shape;
  shape.mesh = std::move(mesh);
  const Index n = shape.mesh.num_vertices();
  if (cached_basis) {
    if (cached_basis->num_vertices() != n)
      throw ValidationError("cached basis has " + std::to_string(cached_basis->num_vertices()) +
                            " vertices, mesh has " + std::to_string(n));
    shape.basis = std::move(cached_basis);
  } else {
    const Index k = std::min(config.num_eigs, n);
    shape.basis = std::make_shared<SpectralBasis>(eigenbasis(cotan_laplacian(shape.mesh), k));
  }
  if (config.kernel_kind == KernelKind::gaussian_geodesic)
    shape.distances = std::make_shared<MatrixXd>(all_pairs_geodesics(shape.mesh.edge_graph(), config.exec));
  return shape;
}

KernelFamily kernel_family(const PreparedShape& shape, const MatchConfig& config) {
  if (config.kernel_kind == KernelKind::heat) return KernelFamily::heat(shape.basis);
  if (!shape.distances) throw ValidationError("gaussian kernel requested but distances are missing");
  return KernelFamily::gaussian(shape.distances, config.gaussian_sigma);
}

MatchState run(const PreparedShape& source, const PreparedShape& target,
               const DescriptorField& source_desc, const DescriptorField& target_desc,
               const MatchConfig& config, std::optional<Assignment> init) {
  MatchProblem problem;
  problem.source_descriptors = source_desc.values;
  problem.target_descriptors = target_desc.values;
  problem.source_kernel = kernel_family(source, config);
  problem.target_kernel = kernel_family(target, config);
  return run(problem, config, std::move(init));
}

FunctionalMapView functional_map_view(const Assignment& pi, const SpectralBasis& source,
                                      const SpectralBasis& target) {
  if (pi.num_sources() != source.num_vertices() || pi.num_targets != target.num_vertices())
    throw ValidationError("assignment dimensions do not match the bases");
  const MatrixXd weighted = target.mass.asDiagonal() * target.eigenvectors;
  FunctionalMapView view;
  view.coefficients = transported_gram(weighted, source.eigenvectors, pi.target_of);
  view.euclidean = transported_gram(target.eigenvectors, source.eigenvectors, pi.target_of);
  return view;
}

MatrixXd low_pass_payoff(const FunctionalMapView& view, const SpectralBasis& source,
                         const SpectralBasis& target, double t) {
  const VectorXd wy = (t * target.eigenvalues.array()).exp();
  const VectorXd wx = (t * source.eigenvalues.array()).exp();
  const MatrixXd filtered = wy.asDiagonal() * view.euclidean * wx.asDiagonal();
  return target.eigenvectors * filtered * source.eigenvectors.transpose();
}

void write_trace_csv(const MatchState& state, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "time,iter,energy\n" << std::setprecision(17);
  for (const auto& e : state.trace) out << e.time << ',' << e.iteration << ',' << e.energy << '\n';
}

}  // namespace kmatch
