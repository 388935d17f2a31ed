#include "kmatch/spectral.hpp"

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <Eigen/SparseCholesky>
#include <lapacke.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

namespace kmatch {

namespace {
constexpr double kCotClamp = 1e5;
}

Laplacian cotan_laplacian(const TriMesh& mesh) {
  const Index n = mesh.num_vertices();
  const auto& v = mesh.vertices();
  const auto& t = mesh.triangles();
  const double mean_area = mesh.total_area() / std::max<Index>(1, mesh.num_triangles());

  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(12 * t.rows());
  Index degenerate = 0;
  for (Index f = 0; f < t.rows(); ++f) {
    const bool tiny = mesh.triangle_area(f) < 1e-12 * mean_area;
    if (tiny) ++degenerate;
    for (int c = 0; c < 3; ++c) {
      // Angle at corner c is opposite edge (a, b).
      const Index i = t(f, c), a = t(f, (c + 1) % 3), b = t(f, (c + 2) % 3);
      const Eigen::Vector3d ea = v.row(a) - v.row(i);
      const Eigen::Vector3d eb = v.row(b) - v.row(i);
      const double cross = ea.cross(eb).norm();
      double cot = ea.dot(eb) / std::max(cross, std::numeric_limits<double>::min());
      if (tiny || !std::isfinite(cot)) cot = std::clamp(cot, -kCotClamp, kCotClamp);
      const double w = 0.5 * cot;
      triplets.emplace_back(a, b, w);
      triplets.emplace_back(b, a, w);
      triplets.emplace_back(a, a, -w);
      triplets.emplace_back(b, b, -w);
    }
  }
  if (degenerate > 0)
    log_warning(std::to_string(degenerate) + " near-degenerate triangle(s); cotangent weights clamped");
  Laplacian out;
  out.stiffness.resize(n, n);
  out.stiffness.setFromTriplets(triplets.begin(), triplets.end());
  out.stiffness.makeCompressed();
  out.mass = mesh.vertex_areas();
  return out;
}

namespace {

void validate_k(const Laplacian& lap, Index k) {
  const Index n = lap.stiffness.rows();
  if (k < 1 || k > n)
    throw ValidationError("eigenpair count " + std::to_string(k) + " out of range [1, " +
                          std::to_string(n) + "]");
  if (lap.mass.size() != n || (lap.mass.array() <= 0.0).any())
    throw ValidationError("mass vector must be positive with one entry per vertex");
}

// Gershgorin bound on the spectral radius of M^-1/2 W M^-1/2.
double operator_bound(const Laplacian& lap) {
  VectorXd row_abs = VectorXd::Zero(lap.stiffness.rows());
  for (Index c = 0; c < lap.stiffness.outerSize(); ++c)
    for (SparseMatrix::InnerIterator it(lap.stiffness, c); it; ++it)
      row_abs[it.row()] += std::abs(it.value());
  return (row_abs.array() / lap.mass.array()).maxCoeff();
}

void finalize(SpectralBasis& basis, double bound) {
  for (Index j = 0; j < basis.eigenvalues.size(); ++j)
    if (basis.eigenvalues[j] > 0.0) basis.eigenvalues[j] = 0.0;
  if (std::abs(basis.eigenvalues[0]) <= std::max(1e-10 * bound, 1e-12)) basis.eigenvalues[0] = 0.0;
  for (Index j = 0; j < basis.eigenvectors.cols(); ++j) {
    auto col = basis.eigenvectors.col(j);
    for (Index i = 0; i < col.size(); ++i) {
      if (std::abs(col[i]) > 1e-8) {
        if (col[i] < 0.0) col *= -1.0;
        break;
      }
    }
  }
}

}  // namespace

SpectralBasis eigenbasis_dense(const Laplacian& lap, Index k) {
  validate_k(lap, k);
  const Index n = lap.stiffness.rows();
  const VectorXd inv_sqrt_mass = lap.mass.array().rsqrt();
  MatrixXd a = inv_sqrt_mass.asDiagonal() * MatrixXd(lap.stiffness) * inv_sqrt_mass.asDiagonal();

  VectorXd w(n);
  MatrixXd z(n, k);
  std::vector<lapack_int> support(2 * static_cast<std::size_t>(k));
  lapack_int found = 0;
  const lapack_int info = LAPACKE_dsyevr(
      LAPACK_COL_MAJOR, 'V', 'I', 'L', static_cast<lapack_int>(n), a.data(),
      static_cast<lapack_int>(n), 0.0, 0.0, static_cast<lapack_int>(n - k + 1),
      static_cast<lapack_int>(n), 0.0, &found, w.data(), z.data(), static_cast<lapack_int>(n),
      support.data());
  if (info != 0 || found != k)
    throw NumericError("dense eigensolver failed (info " + std::to_string(info) + ", found " +
                       std::to_string(found) + " of " + std::to_string(k) + ")");

  SpectralBasis basis;
  basis.eigenvalues.resize(k);
  basis.eigenvectors.resize(n, k);
  for (Index j = 0; j < k; ++j) {
    // dsyevr returns ascending order; the largest come last.
    basis.eigenvalues[j] = w[k - 1 - j];
    basis.eigenvectors.col(j) = inv_sqrt_mass.asDiagonal() * z.col(k - 1 - j);
  }
  basis.mass = lap.mass;
  finalize(basis, operator_bound(lap));
  return basis;
}

SpectralBasis eigenbasis_shift_invert(const Laplacian& lap, Index k, const EigenOptions& options) {
  validate_k(lap, k);
  const Index n = lap.stiffness.rows();
  const Index block = std::min(n, k + std::max<Index>(16, k / 2));
  const double bound = operator_bound(lap);
  const double shift = std::max(1e-8 * bound, 1e-12);

  // -W + shift*M is positive definite for a connected mesh.
  SparseMatrix system = -lap.stiffness;
  for (Index i = 0; i < n; ++i) system.coeffRef(i, i) += shift * lap.mass[i];
  Eigen::SimplicialLDLT<SparseMatrix> ldlt(system);
  if (ldlt.info() != Eigen::Success) throw NumericError("shift-invert factorization failed");

  std::mt19937_64 rng(0x5eed);
  std::normal_distribution<double> normal;
  MatrixXd q(n, block);
  for (Index j = 0; j < block; ++j)
    for (Index i = 0; i < n; ++i) q(i, j) = normal(rng);

  VectorXd eigenvalues;
  MatrixXd ritz;
  VectorXd residuals(k);
  const SparseMatrix& w = lap.stiffness;
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    MatrixXd z = ldlt.solve(lap.mass.asDiagonal() * q);
    MatrixXd wz = w * z;
    MatrixXd a_small = z.transpose() * wz;
    MatrixXd m_small = z.transpose() * lap.mass.asDiagonal() * z;
    a_small = 0.5 * (a_small + a_small.transpose()).eval();
    m_small = 0.5 * (m_small + m_small.transpose()).eval();
    Eigen::GeneralizedSelfAdjointEigenSolver<MatrixXd> small(a_small, m_small);
    if (small.info() != Eigen::Success) throw NumericError("Rayleigh-Ritz step failed");
    // Ascending eigenvalues; reverse to take the least negative first.
    MatrixXd v = small.eigenvectors().rowwise().reverse();
    eigenvalues = small.eigenvalues().reverse();
    q = z * v;
    ritz = q.leftCols(k);
    MatrixXd res = w * ritz - lap.mass.asDiagonal() * ritz * eigenvalues.head(k).asDiagonal();
    for (Index j = 0; j < k; ++j)
      residuals[j] = res.col(j).norm() / (bound * (lap.mass.asDiagonal() * ritz.col(j)).norm());
    if (residuals.maxCoeff() <= options.tolerance) {
      SpectralBasis basis;
      basis.eigenvalues = eigenvalues.head(k);
      basis.eigenvectors = ritz;
      basis.mass = lap.mass;
      finalize(basis, bound);
      return basis;
    }
  }
  std::ostringstream msg;
  msg << "shift-invert eigensolver did not converge in " << options.max_iterations
      << " iterations; max residual " << residuals.maxCoeff() << ", residuals:";
  for (Index j = 0; j < std::min<Index>(k, 8); ++j) msg << ' ' << residuals[j];
  if (k > 8) msg << " ...";
  throw NumericError(msg.str());
}

SpectralBasis eigenbasis(const Laplacian& lap, Index k, const EigenOptions& options) {
  if (lap.stiffness.rows() <= options.dense_limit) return eigenbasis_dense(lap, k);
  return eigenbasis_shift_invert(lap, k, options);
}

// ---------------------------------------------------------------------------

HeatKernelFactor::HeatKernelFactor(std::shared_ptr<const SpectralBasis> basis, double t)
    : basis_(std::move(basis)), t_(t) {
  if (!basis_) throw ValidationError("heat kernel needs a basis");
  if (!(t > 0.0) || !std::isfinite(t)) throw ValidationError("diffusion time must be positive");
  weights_ = (t * basis_->eigenvalues.array()).exp();
  factor_ = basis_->eigenvectors * (0.5 * t * basis_->eigenvalues.array()).exp().matrix().asDiagonal();
}

MatrixXd HeatKernelFactor::symmetric(double ridge) const {
  MatrixXd k = factor_ * factor_.transpose();
  if (ridge > 0.0) k.diagonal().array() += ridge;
  return k;
}

MatrixXd HeatKernelFactor::stochastic() const { return symmetric() * basis_->mass.asDiagonal(); }

VectorXd HeatKernelFactor::apply(const VectorXd& u) const {
  return factor_ * (factor_.transpose() * u);
}

VectorXd HeatKernelFactor::apply_stochastic(const VectorXd& u) const {
  return apply(basis_->mass.cwiseProduct(u));
}

HeatKernelFactor heat_kernel(std::shared_ptr<const SpectralBasis> basis, double t) {
  return HeatKernelFactor(std::move(basis), t);
}

MatrixXd gaussian_from_distances(const MatrixXd& distances, double sigma) {
  if (!(sigma > 0.0)) throw ValidationError("gaussian sigma must be positive");
  return (-distances.array().square() / (2.0 * sigma * sigma)).exp().matrix();
}

MatrixXd gaussian_geodesic_kernel(const TriMesh& mesh, double sigma, Index dense_cap) {
  if (mesh.num_vertices() > dense_cap)
    throw ValidationError("mesh has " + std::to_string(mesh.num_vertices()) +
                          " vertices; dense gaussian kernel cap is " + std::to_string(dense_cap));
  if (!(sigma > 0.0)) throw ValidationError("gaussian sigma must be positive");
  return gaussian_from_distances(all_pairs_geodesics(mesh.edge_graph()), sigma);
}

// ---------------------------------------------------------------------------
// Basis cache

namespace {

constexpr char kMagic[4] = {'K', 'M', 'S', 'B'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T)))
    throw ValidationError("basis cache truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace

void save_basis(const SpectralBasis& basis, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write basis cache " + path.string());
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, static_cast<std::uint64_t>(basis.num_vertices()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(basis.size()));
  for (Index j = 0; j < basis.size(); ++j) put<double>(out, basis.eigenvalues[j]);
  for (Index j = 0; j < basis.size(); ++j)
    for (Index i = 0; i < basis.num_vertices(); ++i) put<double>(out, basis.eigenvectors(i, j));
  for (Index i = 0; i < basis.num_vertices(); ++i) put<double>(out, basis.mass[i]);
  if (!out) throw ValidationError("failed writing basis cache " + path.string());
}

SpectralBasis load_basis(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open basis cache " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw ValidationError(path.string() + ": not a KMSB basis cache");
  const auto version = get<std::uint32_t>(in);
  if (version != kVersion)
    throw ValidationError(path.string() + ": unsupported cache version " + std::to_string(version));
  const auto n = static_cast<Index>(get<std::uint64_t>(in));
  const auto k = static_cast<Index>(get<std::uint64_t>(in));
  if (n < 1 || k < 1 || k > n) throw ValidationError(path.string() + ": invalid dimensions");
  SpectralBasis basis;
  basis.eigenvalues.resize(k);
  basis.eigenvectors.resize(n, k);
  basis.mass.resize(n);
  for (Index j = 0; j < k; ++j) basis.eigenvalues[j] = get<double>(in);
  for (Index j = 0; j < k; ++j)
    for (Index i = 0; i < n; ++i) basis.eigenvectors(i, j) = get<double>(in);
  for (Index i = 0; i < n; ++i) basis.mass[i] = get<double>(in);
  return basis;
}

}  // namespace kmatch
