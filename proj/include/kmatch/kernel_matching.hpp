#pragma once

#include "kmatch/assignment.hpp"
#include "kmatch/common.hpp"
#include "kmatch/descriptors.hpp"
#include "kmatch/mesh.hpp"
#include "kmatch/spectral.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace kmatch {

/// A symmetric pairwise kernel over a vertex set, either low rank
/// (K = F F^T) or stored densely.
class KernelOperator {
 public:
  static KernelOperator low_rank(MatrixXd factor);
  static KernelOperator dense(MatrixXd matrix);

  bool is_low_rank() const { return low_rank_; }
  Index size() const { return data_.rows(); }
  /// The factor F for low-rank kernels, the matrix itself otherwise.
  const MatrixXd& data() const { return data_; }
  MatrixXd materialize() const;

 private:
  bool low_rank_ = true;
  MatrixXd data_;
};

enum class KernelKind { heat, gaussian_geodesic };

/// Maps a diffusion time to the kernel of one shape, optionally restricted
/// to a subset of its vertices (rows and columns of the full kernel).
class KernelFamily {
 public:
  KernelFamily() = default;
  static KernelFamily heat(std::shared_ptr<const SpectralBasis> basis);
  /// Without a fixed sigma, the time maps to sigma = sqrt(2 t).
  static KernelFamily gaussian(std::shared_ptr<const MatrixXd> distances,
                               std::optional<double> sigma = std::nullopt);

  KernelKind kind() const { return kind_; }
  Index size() const;
  KernelOperator at(double t) const;
  /// Restriction composes: indices are relative to this family's vertex set.
  KernelFamily restricted(std::span<const Index> rows) const;
  /// Vertex indices of the underlying full shape, empty when unrestricted.
  const std::vector<Index>& rows() const { return rows_; }

 private:
  KernelKind kind_ = KernelKind::heat;
  std::shared_ptr<const SpectralBasis> basis_;
  std::shared_ptr<const MatrixXd> distances_;
  std::optional<double> sigma_;
  std::vector<Index> rows_;
};

struct MatchConfig {
  double alpha = 1e-3;
  /// Diffusion times for unit-area shapes, run in order with warm starts.
  std::vector<double> time_schedule{0.005, 0.0025, 0.001, 0.0005};
  int iters_per_time = 5;
  Index num_eigs = 100;
  KernelKind kernel_kind = KernelKind::heat;
  std::optional<double> gaussian_sigma;
  std::optional<double> slack;  // nullopt: min - spread
  /// An iterate replaces the current one only if its payoff gain exceeds
  /// tolerance * |current payoff score|.
  double tolerance = 1e-12;
  Exec exec = Exec::parallel;

  /// Throws ValidationError on non-positive times or counts; warns when the
  /// schedule increases.
  void validate() const;
};

struct TraceEntry {
  double time = 0.0;
  int iteration = 0;
  double energy = 0.0;
};

struct MatchState {
  Assignment assignment;
  std::vector<TraceEntry> trace;
  /// Accepted iterations per scheduled time.
  std::vector<int> iterations_per_time;
  int iterations = 0;
  int steps = 0;  // payoff + assignment solves, including rejected ones
  double active_time = 0.0;
};

/// A fixed payoff target_side * source_side^T added to every step at one
/// diffusion time, e.g. the pull of matches held fixed outside a sub-problem.
struct LinearTerm {
  MatrixXd target_side;  // n_Y x r
  MatrixXd source_side;  // n_X x r
};
using LinearTermFn = std::function<LinearTerm(double t)>;

/// Everything the iteration needs: descriptors (n x q, q may be 0), the
/// kernel family of each shape and an optional extra linear term.
struct MatchProblem {
  MatrixXd source_descriptors;
  MatrixXd target_descriptors;
  KernelFamily source_kernel;
  KernelFamily target_kernel;
  LinearTermFn linear_term;
};

/// E = alpha <Pi, F_Y F_X^T> + <Pi, K_Y Pi K_X>.
double energy(const Assignment& pi, const MatrixXd& source_desc, const MatrixXd& target_desc,
              const KernelOperator& source_kernel, const KernelOperator& target_kernel,
              double alpha);

/// alpha <Pi, F_Y F_X^T> + 1/2 <Pi, K_Y Pi K_X>: the convex function whose
/// gradient is the payoff below. This is the quantity recorded in traces;
/// it never decreases along the iteration.
double dc_objective(const Assignment& pi, const MatrixXd& source_desc, const MatrixXd& target_desc,
                    const KernelOperator& source_kernel, const KernelOperator& target_kernel,
                    double alpha);

/// alpha F_Y F_X^T + K_Y Pi K_X (n_Y x n_X). Low-rank kernels go through the
/// k x k inner matrix F_Y^T Pi F_X, costing O(n k^2 + n^2 k).
Payoff payoff(const Assignment& pi, const MatrixXd& source_desc, const MatrixXd& target_desc,
              const KernelOperator& source_kernel, const KernelOperator& target_kernel,
              double alpha, Exec exec = Exec::parallel);

/// Pi^0 = argmax <Pi, F_Y F_X^T>; rectangular when the vertex counts differ.
Assignment initialize(const MatrixXd& source_desc, const MatrixXd& target_desc,
                      std::optional<double> slack = std::nullopt,
                      const LapOptions& options = {});

/// Linear assignment step: square or slack-padded rectangular.
Assignment assignment_step(const Payoff& payoff, std::optional<double> slack, Exec exec);

/// Iterates Pi <- LAP(payoff(Pi)) over the time schedule. Without `init` the
/// descriptor LAP initializes. Throws NumericError if the traced objective
/// ever decreases within one time.
MatchState run(const MatchProblem& problem, const MatchConfig& config,
               std::optional<Assignment> init = std::nullopt);

/// A shape ready for matching: unit-area mesh plus its spectral basis.
struct PreparedShape {
  TriMesh mesh;
  std::shared_ptr<const SpectralBasis> basis;
  std::shared_ptr<const MatrixXd> distances;  // filled for gaussian kernels
};

PreparedShape prepare_shape(TriMesh mesh, const MatchConfig& config,
                            std::shared_ptr<const SpectralBasis> cached_basis = nullptr);
KernelFamily kernel_family(const PreparedShape& shape, const MatchConfig& config);

MatchState run(const PreparedShape& source, const PreparedShape& target,
               const DescriptorField& source_desc, const DescriptorField& target_desc,
               const MatchConfig& config, std::optional<Assignment> init = std::nullopt);

/// Spectral coefficients of a correspondence. `coefficients` is the
/// functional map Psi^T M_Y Pi Phi; `euclidean` is Psi^T Pi Phi, the inner
/// matrix of the factorized payoff.
struct FunctionalMapView {
  MatrixXd coefficients;
  MatrixXd euclidean;
};

FunctionalMapView functional_map_view(const Assignment& pi, const SpectralBasis& source,
                                      const SpectralBasis& target);

/// Psi exp(t Lambda_Y) C exp(t Lambda_X) Phi^T, the low-pass form of K_Y Pi K_X.
MatrixXd low_pass_payoff(const FunctionalMapView& view, const SpectralBasis& source,
                         const SpectralBasis& target, double t);

/// Energy trace CSV "time,iter,energy".
void write_trace_csv(const MatchState& state, const std::filesystem::path& path);

}  // namespace kmatch
