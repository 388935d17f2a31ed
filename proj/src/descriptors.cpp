#include "kmatch/descriptors.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>

namespace kmatch {

DescriptorField hks(const SpectralBasis& basis, std::span<const double> times, bool log_scale) {
  if (times.empty()) throw ValidationError("hks needs at least one time");
  for (double t : times)
    if (!(t > 0.0)) throw ValidationError("hks times must be positive");
  const Index n = basis.num_vertices();
  const Index q = static_cast<Index>(times.size());
  const MatrixXd squared = basis.eigenvectors.array().square().matrix();
  MatrixXd weights(basis.size(), q);
  for (Index j = 0; j < q; ++j) weights.col(j) = (times[j] * basis.eigenvalues.array()).exp();
  DescriptorField out;
  out.kind = DescriptorKind::hks;
  out.values.resize(n, q);
#pragma omp parallel for schedule(static)
  for (Index j = 0; j < q; ++j) out.values.col(j) = squared * weights.col(j);
  if (log_scale) out.values = out.values.array().log().matrix();
  return out;
}

std::vector<double> default_hks_times(const SpectralBasis& basis, Index count) {
  if (basis.size() < 2) throw ValidationError("default hks times need at least two eigenpairs");
  const double lam2 = std::abs(basis.eigenvalues[1]);
  const double lamk = std::abs(basis.eigenvalues[basis.size() - 1]);
  if (!(lam2 > 0.0)) throw ValidationError("second eigenvalue is zero; mesh may be disconnected");
  const double tmin = 4.0 * std::log(10.0) / lamk;
  const double tmax = 4.0 * std::log(10.0) / lam2;
  std::vector<double> times(count);
  for (Index i = 0; i < count; ++i) {
    const double s = count == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(count - 1);
    times[i] = std::exp(std::log(tmin) + s * (std::log(tmax) - std::log(tmin)));
  }
  return times;
}

DescriptorField landmark_descriptors(const SpectralBasis& basis, std::span<const Index> landmarks,
                                     double t) {
  if (!(t > 0.0)) throw ValidationError("landmark diffusion time must be positive");
  if (landmarks.empty()) throw ValidationError("landmark list is empty");
  std::set<Index> seen;
  for (Index l : landmarks) {
    if (l < 0 || l >= basis.num_vertices()) throw ValidationError("landmark index out of range");
    if (!seen.insert(l).second) throw ValidationError("duplicate landmark " + std::to_string(l));
  }
  const VectorXd w = (t * basis.eigenvalues.array()).exp();
  const Index q = static_cast<Index>(landmarks.size());
  MatrixXd coeff(basis.size(), q);
  for (Index j = 0; j < q; ++j) coeff.col(j) = w.cwiseProduct(basis.eigenvectors.row(landmarks[j]).transpose());
  DescriptorField out;
  out.kind = DescriptorKind::landmark;
  out.values = basis.eigenvectors * coeff;
  return out;
}

DescriptorField xyz_descriptors(const TriMesh& mesh, bool centered) {
  DescriptorField out;
  out.kind = DescriptorKind::xyz;
  out.values = mesh.vertices();
  if (centered) out.values.rowwise() -= out.values.colwise().mean();
  return out;
}

DescriptorField stack(std::span<const DescriptorField> fields, std::span<const double> weights) {
  if (fields.empty()) throw ValidationError("nothing to stack");
  if (fields.size() != weights.size()) throw ValidationError("one weight per field required");
  const Index n = fields.front().num_vertices();
  Index q = 0;
  for (std::size_t f = 0; f < fields.size(); ++f) {
    if (fields[f].num_vertices() != n) throw ValidationError("stacked fields disagree on vertex count");
    if (!(weights[f] > 0.0)) throw ValidationError("stack weights must be positive");
    q += fields[f].dimension();
  }
  DescriptorField out;
  out.kind = DescriptorKind::stacked;
  out.values.resize(n, q);
  Index col = 0;
  for (std::size_t f = 0; f < fields.size(); ++f) {
    const auto& v = fields[f].values;
    for (Index j = 0; j < v.cols(); ++j) {
      const double rms = std::sqrt(v.col(j).squaredNorm() / static_cast<double>(n));
      out.values.col(col++) = (rms > 0.0 ? weights[f] / rms : 1.0) * v.col(j);
    }
  }
  return out;
}

void write_descriptor_csv(const DescriptorField& field, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << 'v';
  for (Index j = 0; j < field.dimension(); ++j) out << ",d" << j;
  out << '\n' << std::setprecision(17);
  for (Index i = 0; i < field.num_vertices(); ++i) {
    out << i;
    for (Index j = 0; j < field.dimension(); ++j) out << ',' << field.values(i, j);
    out << '\n';
  }
}

}  // namespace kmatch
