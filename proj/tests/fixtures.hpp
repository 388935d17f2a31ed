#pragma once

// Small hand-built meshes shared by the unit tests.

#include "kmatch/mesh.hpp"

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

namespace kmatch::fixture {

// Regular tetrahedron with unit edges.
inline TriMesh tetrahedron() {
  Points v(4, 3);
  const double s = 1.0 / std::sqrt(2.0);
  v << 1, 0, -s, -1, 0, -s, 0, 1, s, 0, -1, s;
  v *= 0.5;
  Triangles f(4, 3);
  f << 0, 1, 2, 0, 3, 1, 0, 2, 3, 1, 3, 2;
  return TriMesh::from_arrays(v, f);
}

// Unit square split along the 0-2 diagonal.
inline TriMesh unit_square() {
  Points v(4, 3);
  v << 0, 0, 0, 1, 0, 0, 1, 1, 0, 0, 1, 0;
  Triangles f(2, 3);
  f << 0, 1, 2, 0, 2, 3;
  return TriMesh::from_arrays(v, f);
}

// Triangulated strip of `cols` x 2 unit squares without any symmetry breaking.
inline TriMesh grid(Index cols, Index rows, double jitter = 0.0, unsigned seed = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-jitter, jitter);
  Points v((cols + 1) * (rows + 1), 3);
  for (Index r = 0; r <= rows; ++r)
    for (Index c = 0; c <= cols; ++c) v.row(r * (cols + 1) + c) << c + u(rng), r + u(rng), 0.0;
  Triangles f(2 * cols * rows, 3);
  Index k = 0;
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) {
      const Index a = r * (cols + 1) + c, b = a + 1, d = a + cols + 1, e = d + 1;
      f.row(k++) << a, b, e;
      f.row(k++) << a, e, d;
    }
  return TriMesh::from_arrays(v, f);
}

// Fresh scratch directory under the system temp path.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("kmatch_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace kmatch::fixture
