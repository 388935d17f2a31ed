#pragma once

#include "kmatch/common.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <span>
#include <utility>
#include <vector>

namespace kmatch {

using Points = Eigen::Matrix<double, Eigen::Dynamic, 3>;
using Triangles = Eigen::Matrix<Index, Eigen::Dynamic, 3>;

constexpr Index kUnmatched = -1;

/// Undirected weighted graph in CSR form. Built from mesh edges or from an
/// explicit edge list (path graphs, rings) for geodesic queries.
class EdgeGraph {
 public:
  EdgeGraph() = default;

  /// Edges are unordered pairs; duplicates are merged. Lengths must be > 0.
  static EdgeGraph from_edges(Index num_vertices,
                              std::span<const std::pair<Index, Index>> edges,
                              std::span<const double> lengths);
  static EdgeGraph from_points(const Points& points,
                               std::span<const std::pair<Index, Index>> edges);

  Index num_vertices() const { return static_cast<Index>(offsets_.size()) - 1; }
  Index num_edges() const { return static_cast<Index>(targets_.size()) / 2; }

  std::span<const Index> neighbors(Index v) const {
    return {targets_.data() + offsets_[v], targets_.data() + offsets_[v + 1]};
  }
  std::span<const double> lengths(Index v) const {
    return {lengths_.data() + offsets_[v], lengths_.data() + offsets_[v + 1]};
  }

  bool is_connected() const;

 private:
  std::vector<Index> offsets_{0};
  std::vector<Index> targets_;
  std::vector<double> lengths_;
};

/// Immutable triangle mesh with lumped vertex areas (one third of incident
/// triangle areas) and its edge graph. Construction validates.
class TriMesh {
 public:
  TriMesh() = default;

  /// Throws ValidationError on an out-of-range or repeated triangle index,
  /// a vertex with no positive area, or a disconnected edge graph.
  static TriMesh from_arrays(Points vertices, Triangles triangles);

  Index num_vertices() const { return vertices_.rows(); }
  Index num_triangles() const { return triangles_.rows(); }
  const Points& vertices() const { return vertices_; }
  const Triangles& triangles() const { return triangles_; }
  const VectorXd& vertex_areas() const { return vertex_areas_; }
  const EdgeGraph& edge_graph() const { return graph_; }
  double total_area() const { return total_area_; }
  double triangle_area(Index f) const;

  TriMesh scaled(double factor) const;
  TriMesh normalized_to_unit_area() const;
  /// Vertex i of the result is vertex `order[i]` of this mesh.
  TriMesh relabeled(std::span<const Index> order) const;
  /// Keeps the listed vertices (in that order) and the triangles spanned by them.
  TriMesh submesh(std::span<const Index> keep) const;

 private:
  Points vertices_;
  Triangles triangles_;
  VectorXd vertex_areas_;
  double total_area_ = 0.0;
  EdgeGraph graph_;
};

enum class MeshFormat { off, ply_ascii };

TriMesh load_mesh(const std::filesystem::path& path);
TriMesh load_mesh(const std::filesystem::path& path, MeshFormat format);
TriMesh parse_off(std::istream& in);
TriMesh parse_ply_ascii(std::istream& in);
void save_off(const TriMesh& mesh, const std::filesystem::path& path);
void write_off(const TriMesh& mesh, std::ostream& out);

/// Farthest-point samples; the first entry is the seed vertex.
struct SampleSet {
  std::vector<Index> indices;
  Index size() const { return static_cast<Index>(indices.size()); }
};

/// Greedy max-min selection under Euclidean distance. Ties go to the lowest
/// vertex index, so the result is deterministic and prefix-stable.
SampleSet euclidean_fps(const Points& points, Index count, Index seed_vertex,
                        Exec exec = Exec::parallel);
SampleSet euclidean_fps(const TriMesh& mesh, Index count, Index seed_vertex,
                        Exec exec = Exec::parallel);

/// Dijkstra on the edge graph with Euclidean edge lengths.
VectorXd graph_geodesics(const EdgeGraph& graph, Index source);
VectorXd graph_geodesics(const TriMesh& mesh, Index source);

/// Distances from several sources at once; row r holds distances from sources[r].
MatrixXd geodesics_from_sources(const EdgeGraph& graph, std::span<const Index> sources,
                                Exec exec = Exec::parallel);
MatrixXd all_pairs_geodesics(const EdgeGraph& graph, Exec exec = Exec::parallel);

/// Multi-source Dijkstra: distance to and index (into `sources`) of the
/// nearest source per vertex. Equal distances keep the lower source index.
struct VoronoiLabels {
  VectorXd distance;
  std::vector<Index> label;
};
VoronoiLabels nearest_source(const EdgeGraph& graph, std::span<const Index> sources);

/// Max graph distance from an FPS subset of `sample_count` sources to any
/// vertex. Exact when sample_count equals the vertex count.
double geodesic_diameter(const EdgeGraph& graph, const Points& points, Index sample_count);
double geodesic_diameter(const TriMesh& mesh, Index sample_count);

}  // namespace kmatch
