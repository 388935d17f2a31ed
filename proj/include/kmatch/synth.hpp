#pragma once

// Synthetic shape pairs with known ground truth.

#include "kmatch/assignment.hpp"
#include "kmatch/mesh.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace kmatch {

/// Unit icosphere after `subdivisions` midpoint refinements
/// (10 * 4^s + 2 vertices).
TriMesh icosphere(int subdivisions);
/// Icosphere with exactly n vertices; n must be 10 * 4^s + 2.
TriMesh icosphere_with_vertices(Index n);

/// Torus with `major` segments around the axis and `minor` around the tube.
/// Vertices 0..major-1 run along the outer equator.
TriMesh torus(Index major, Index minor, double major_radius = 1.0, double minor_radius = 0.25);

/// Random permutation of 0..n-1 from a fixed-algorithm Fisher-Yates shuffle.
std::vector<Index> random_permutation(Index n, std::mt19937_64& rng);

struct ShapeSpec {
  enum class Kind { icosphere, cycle, hemisphere } kind = Kind::icosphere;
  Index n = 0;
};
/// Parses "icosphere:<n>", "cycle:<n>" or "hemisphere:<n>".
ShapeSpec parse_shape_spec(const std::string& text);

struct SynthOptions {
  bool permute = false;
  std::optional<std::pair<Index, Index>> swap;
  std::optional<double> noise_rho;
  std::uint64_t seed = 0;
};

struct SynthPair {
  TriMesh source;
  TriMesh target;
  Assignment ground_truth;  // kUnmatched where the source has no counterpart
  std::optional<Assignment> init;  // set when swap or noise_rho is given
};

/// cycle:n is a torus with n outer-equator vertices; hemisphere:n pairs the
/// n-vertex icosphere with its z >= 0 part.
SynthPair make_synthetic_pair(const ShapeSpec& spec, const SynthOptions& options);

/// Reassigns a fraction rho of the matched sources among themselves with a
/// random permutation; the rest keep their target.
Assignment corrupt(const Assignment& truth, double rho, std::mt19937_64& rng);

}  // namespace kmatch
