#pragma once

#include "kmatch/common.hpp"
#include "kmatch/mesh.hpp"

#include <Eigen/SparseCore>

#include <filesystem>
#include <memory>

namespace kmatch {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Cotangent stiffness W (symmetric, zero row sums, negative semi-definite)
/// and lumped barycentric masses. The Laplacian is M^-1 W.
struct Laplacian {
  SparseMatrix stiffness;
  VectorXd mass;
};

Laplacian cotan_laplacian(const TriMesh& mesh);

/// Truncated generalized eigenbasis of W phi = lambda M phi. Eigenvalues are
/// non-positive and sorted descending (lambda_1 = 0 first); eigenvectors are
/// M-orthonormal with the first entry of magnitude > 1e-8 made positive.
struct SpectralBasis {
  VectorXd eigenvalues;
  MatrixXd eigenvectors;
  VectorXd mass;

  Index num_vertices() const { return eigenvectors.rows(); }
  Index size() const { return eigenvectors.cols(); }
};

struct EigenOptions {
  // Above this vertex count the sparse shift-invert solver is used.
  Index dense_limit = 4000;
  int max_iterations = 300;
  double tolerance = 1e-10;
};

SpectralBasis eigenbasis(const Laplacian& laplacian, Index k, const EigenOptions& options = {});
SpectralBasis eigenbasis_dense(const Laplacian& laplacian, Index k);
SpectralBasis eigenbasis_shift_invert(const Laplacian& laplacian, Index k,
                                      const EigenOptions& options = {});

/// Heat kernel in low-rank form: factor = Phi * diag(exp(t*lambda/2)), so the
/// symmetric kernel is K_sym = factor * factor^T = Phi exp(t Lambda) Phi^T.
/// The row-stochastic variant is K_sto = K_sym * M.
class HeatKernelFactor {
 public:
  HeatKernelFactor(std::shared_ptr<const SpectralBasis> basis, double t);

  double time() const { return t_; }
  const VectorXd& weights() const { return weights_; }
  const MatrixXd& factor() const { return factor_; }
  const SpectralBasis& basis() const { return *basis_; }

  MatrixXd symmetric(double ridge = 0.0) const;
  MatrixXd stochastic() const;
  VectorXd apply(const VectorXd& u) const;           // K_sym u
  VectorXd apply_stochastic(const VectorXd& u) const;  // K_sym M u

 private:
  std::shared_ptr<const SpectralBasis> basis_;
  double t_;
  VectorXd weights_;
  MatrixXd factor_;
};

HeatKernelFactor heat_kernel(std::shared_ptr<const SpectralBasis> basis, double t);

/// G_ij = exp(-d_ij^2 / (2 sigma^2)) over graph geodesics. Refuses meshes
/// above `dense_cap` vertices.
MatrixXd gaussian_geodesic_kernel(const TriMesh& mesh, double sigma, Index dense_cap = 6000);
MatrixXd gaussian_from_distances(const MatrixXd& distances, double sigma);

/// Binary basis cache: "KMSB", u32 version, u64 n, u64 k, then f64 arrays of
/// eigenvalues, eigenvectors (column-major) and masses, all little-endian.
void save_basis(const SpectralBasis& basis, const std::filesystem::path& path);
SpectralBasis load_basis(const std::filesystem::path& path);

}  // namespace kmatch
