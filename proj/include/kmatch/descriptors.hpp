#pragma once

#include "kmatch/common.hpp"
#include "kmatch/mesh.hpp"
#include "kmatch/spectral.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace kmatch {

enum class DescriptorKind { hks, landmark, xyz, stacked };

/// Pointwise descriptors, one row per vertex.
struct DescriptorField {
  MatrixXd values;
  DescriptorKind kind = DescriptorKind::stacked;

  Index num_vertices() const { return values.rows(); }
  Index dimension() const { return values.cols(); }
};

/// Heat-kernel diagonal sum_i exp(lambda_i tau) phi_i(x)^2 at each time.
DescriptorField hks(const SpectralBasis& basis, std::span<const double> times,
                    bool log_scale = false);

/// `count` times spaced logarithmically over [4 ln10 / |lambda_k|, 4 ln10 / |lambda_2|].
std::vector<double> default_hks_times(const SpectralBasis& basis, Index count = 100);

/// Column j is the heat bump K_sym e_{landmark_j}.
DescriptorField landmark_descriptors(const SpectralBasis& basis, std::span<const Index> landmarks,
                                     double t);

DescriptorField xyz_descriptors(const TriMesh& mesh, bool centered = true);

/// Column-wise concatenation; each field is scaled by weight / column RMS.
DescriptorField stack(std::span<const DescriptorField> fields, std::span<const double> weights);

/// CSV with header "v,d0,...,d{q-1}".
void write_descriptor_csv(const DescriptorField& field, const std::filesystem::path& path);

}  // namespace kmatch
