#include "kmatch/mesh.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <queue>
#include <sstream>
#include <tuple>

namespace kmatch {

// ---------------------------------------------------------------------------
// EdgeGraph

EdgeGraph EdgeGraph::from_edges(Index num_vertices,
                                std::span<const std::pair<Index, Index>> edges,
                                std::span<const double> lengths) {
  if (edges.size() != lengths.size())
    throw ValidationError("edge and length counts differ");
  std::map<std::pair<Index, Index>, double> unique;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    auto [a, b] = edges[e];
    if (a < 0 || b < 0 || a >= num_vertices || b >= num_vertices)
      throw ValidationError("edge " + std::to_string(e) + ": index out of range");
    if (a == b) throw ValidationError("edge " + std::to_string(e) + ": self loop");
    if (!(lengths[e] > 0.0))
      throw ValidationError("edge " + std::to_string(e) + ": non-positive length");
    unique.emplace(std::minmax(a, b), lengths[e]);
  }
  std::vector<Index> degree(num_vertices, 0);
  for (const auto& [key, len] : unique) {
    ++degree[key.first];
    ++degree[key.second];
  }
  EdgeGraph g;
  g.offsets_.assign(num_vertices + 1, 0);
  for (Index v = 0; v < num_vertices; ++v) g.offsets_[v + 1] = g.offsets_[v] + degree[v];
  g.targets_.resize(g.offsets_.back());
  g.lengths_.resize(g.offsets_.back());
  std::vector<Index> fill(g.offsets_.begin(), g.offsets_.end() - 1);
  // std::map iteration is ordered, so neighbor lists come out sorted.
  for (const auto& [key, len] : unique) {
    auto [a, b] = key;
    g.targets_[fill[a]] = b;
    g.lengths_[fill[a]++] = len;
    g.targets_[fill[b]] = a;
    g.lengths_[fill[b]++] = len;
  }
  return g;
}

EdgeGraph EdgeGraph::from_points(const Points& points,
                                 std::span<const std::pair<Index, Index>> edges) {
  std::vector<double> lengths;
  lengths.reserve(edges.size());
  for (auto [a, b] : edges) {
    if (a < 0 || b < 0 || a >= points.rows() || b >= points.rows())
      throw ValidationError("edge index out of range");
    lengths.push_back((points.row(a) - points.row(b)).norm());
  }
  return from_edges(points.rows(), edges, lengths);
}

bool EdgeGraph::is_connected() const {
  const Index n = num_vertices();
  if (n <= 1) return true;
  std::vector<char> seen(n, 0);
  std::vector<Index> stack{0};
  seen[0] = 1;
  Index count = 1;
  while (!stack.empty()) {
    Index v = stack.back();
    stack.pop_back();
    for (Index w : neighbors(v)) {
      if (!seen[w]) {
        seen[w] = 1;
        ++count;
        stack.push_back(w);
      }
    }
  }
  return count == n;
}

// ---------------------------------------------------------------------------
// TriMesh

namespace {

double area_of(const Points& v, Index a, Index b, Index c) {
  Eigen::Vector3d e1 = v.row(b) - v.row(a);
  Eigen::Vector3d e2 = v.row(c) - v.row(a);
  return 0.5 * e1.cross(e2).norm();
}

}  // namespace

TriMesh TriMesh::from_arrays(Points vertices, Triangles triangles) {
  const Index n = vertices.rows();
  if (n == 0) throw ValidationError("mesh has no vertices");
  if (!vertices.allFinite()) throw ValidationError("mesh has non-finite vertex coordinates");
  for (Index f = 0; f < triangles.rows(); ++f) {
    for (int c = 0; c < 3; ++c) {
      Index idx = triangles(f, c);
      if (idx < 0 || idx >= n)
        throw ValidationError("face " + std::to_string(f) + ": index out of range (" +
                              std::to_string(idx) + " not in [0, " + std::to_string(n) + "))");
    }
    if (triangles(f, 0) == triangles(f, 1) || triangles(f, 1) == triangles(f, 2) ||
        triangles(f, 0) == triangles(f, 2))
      throw ValidationError("face " + std::to_string(f) + ": degenerate triangle (repeated index)");
  }

  TriMesh mesh;
  mesh.vertex_areas_ = VectorXd::Zero(n);
  double total = 0.0;
  std::vector<std::pair<Index, Index>> edges;
  edges.reserve(3 * triangles.rows());
  std::map<std::pair<Index, Index>, int> edge_faces;
  for (Index f = 0; f < triangles.rows(); ++f) {
    const Index a = triangles(f, 0), b = triangles(f, 1), c = triangles(f, 2);
    const double area = area_of(vertices, a, b, c);
    total += area;
    mesh.vertex_areas_[a] += area / 3.0;
    mesh.vertex_areas_[b] += area / 3.0;
    mesh.vertex_areas_[c] += area / 3.0;
    for (auto e : {std::minmax(a, b), std::minmax(b, c), std::minmax(a, c)}) {
      edges.emplace_back(e);
      ++edge_faces[e];
    }
  }
  Index non_manifold = 0;
  for (const auto& [e, count] : edge_faces)
    if (count > 2) ++non_manifold;
  if (non_manifold > 0)
    log_warning(std::to_string(non_manifold) + " non-manifold edge(s) kept");
  for (Index v = 0; v < n; ++v)
    if (!(mesh.vertex_areas_[v] > 0.0))
      throw ValidationError("vertex " + std::to_string(v) + ": no incident area");

  mesh.graph_ = EdgeGraph::from_points(vertices, edges);
  if (!mesh.graph_.is_connected()) throw ValidationError("mesh edge graph is disconnected");
  mesh.vertices_ = std::move(vertices);
  mesh.triangles_ = std::move(triangles);
  mesh.total_area_ = total;
  return mesh;
}

double TriMesh::triangle_area(Index f) const {
  return area_of(vertices_, triangles_(f, 0), triangles_(f, 1), triangles_(f, 2));
}

TriMesh TriMesh::scaled(double factor) const {
  if (!(factor > 0.0)) throw ValidationError("scale factor must be positive");
  return from_arrays(vertices_ * factor, triangles_);
}

TriMesh TriMesh::normalized_to_unit_area() const { return scaled(1.0 / std::sqrt(total_area_)); }

TriMesh TriMesh::relabeled(std::span<const Index> order) const {
  const Index n = num_vertices();
  if (static_cast<Index>(order.size()) != n) throw ValidationError("relabel order has wrong size");
  std::vector<Index> new_index(n, -1);
  for (Index i = 0; i < n; ++i) {
    if (order[i] < 0 || order[i] >= n || new_index[order[i]] != -1)
      throw ValidationError("relabel order is not a permutation");
    new_index[order[i]] = i;
  }
  Points v(n, 3);
  for (Index i = 0; i < n; ++i) v.row(i) = vertices_.row(order[i]);
  Triangles t = triangles_;
  for (Index f = 0; f < t.rows(); ++f)
    for (int c = 0; c < 3; ++c) t(f, c) = new_index[t(f, c)];
  return from_arrays(std::move(v), std::move(t));
}

TriMesh TriMesh::submesh(std::span<const Index> keep) const {
  std::vector<Index> new_index(num_vertices(), -1);
  Points v(static_cast<Index>(keep.size()), 3);
  for (std::size_t i = 0; i < keep.size(); ++i) {
    new_index[keep[i]] = static_cast<Index>(i);
    v.row(static_cast<Index>(i)) = vertices_.row(keep[i]);
  }
  std::vector<Eigen::Matrix<Index, 1, 3>> faces;
  for (Index f = 0; f < num_triangles(); ++f) {
    Eigen::Matrix<Index, 1, 3> t;
    bool inside = true;
    for (int c = 0; c < 3; ++c) {
      t[c] = new_index[triangles_(f, c)];
      inside = inside && t[c] >= 0;
    }
    if (inside) faces.push_back(t);
  }
  Triangles t(static_cast<Index>(faces.size()), 3);
  for (std::size_t f = 0; f < faces.size(); ++f) t.row(static_cast<Index>(f)) = faces[f];
  return from_arrays(std::move(v), std::move(t));
}

// ---------------------------------------------------------------------------
// File formats

namespace {

// Reads lines, skipping blanks and '#' comments, tracking the line number.
class LineReader {
 public:
  explicit LineReader(std::istream& in) : in_(in) {}

  bool next(std::istringstream& out) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      out.clear();
      out.str(line);
      return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ValidationError("line " + std::to_string(line_no_) + ": " + what);
  }

  int line() const { return line_no_; }

 private:
  std::istream& in_;
  int line_no_ = 0;
};

void append_polygon(std::vector<Index>& poly, std::vector<Eigen::Matrix<Index, 1, 3>>& faces) {
  for (std::size_t i = 1; i + 1 < poly.size(); ++i)
    faces.emplace_back(poly[0], poly[i], poly[i + 1]);
}

TriMesh assemble(const std::vector<Eigen::Vector3d>& verts,
                 const std::vector<Eigen::Matrix<Index, 1, 3>>& faces) {
  Points v(static_cast<Index>(verts.size()), 3);
  for (std::size_t i = 0; i < verts.size(); ++i) v.row(static_cast<Index>(i)) = verts[i];
  Triangles t(static_cast<Index>(faces.size()), 3);
  for (std::size_t f = 0; f < faces.size(); ++f) t.row(static_cast<Index>(f)) = faces[f];
  return TriMesh::from_arrays(std::move(v), std::move(t));
}

}  // namespace

TriMesh parse_off(std::istream& in) {
  LineReader reader(in);
  std::istringstream ls;
  if (!reader.next(ls)) throw ValidationError("empty OFF file");
  std::string magic;
  ls >> magic;
  if (magic != "OFF") reader.fail("expected header 'OFF'");
  Index nv = -1, nf = -1, ne = 0;
  // Counts may share the header line.
  if (!(ls >> nv)) {
    if (!reader.next(ls) || !(ls >> nv)) reader.fail("malformed counts line");
  }
  if (!(ls >> nf)) reader.fail("malformed counts line");
  ls >> ne;
  if (nv < 0 || nf < 0) reader.fail("negative element counts");

  std::vector<Eigen::Vector3d> verts;
  verts.reserve(nv);
  for (Index i = 0; i < nv; ++i) {
    if (!reader.next(ls)) reader.fail("unexpected end of file in vertex " + std::to_string(i));
    Eigen::Vector3d p;
    if (!(ls >> p[0] >> p[1] >> p[2])) reader.fail("malformed vertex " + std::to_string(i));
    verts.push_back(p);
  }
  std::vector<Eigen::Matrix<Index, 1, 3>> faces;
  faces.reserve(nf);
  for (Index f = 0; f < nf; ++f) {
    if (!reader.next(ls)) reader.fail("unexpected end of file in face " + std::to_string(f));
    Index count = 0;
    if (!(ls >> count) || count < 3) reader.fail("malformed face " + std::to_string(f));
    std::vector<Index> poly(count);
    for (auto& idx : poly) {
      if (!(ls >> idx)) reader.fail("malformed face " + std::to_string(f));
      if (idx < 0 || idx >= nv)
        reader.fail("face " + std::to_string(f) + ": index out of range (" +
                    std::to_string(idx) + " not in [0, " + std::to_string(nv) + "))");
    }
    append_polygon(poly, faces);
  }
  return assemble(verts, faces);
}

TriMesh parse_ply_ascii(std::istream& in) {
  LineReader reader(in);
  std::istringstream ls;
  std::string token;
  if (!reader.next(ls) || !(ls >> token) || token != "ply") reader.fail("expected header 'ply'");
  if (!reader.next(ls)) reader.fail("missing format line");
  std::string format;
  ls >> token >> format;
  if (token != "format" || format != "ascii") reader.fail("only 'format ascii' PLY is supported");

  struct Element {
    std::string name;
    Index count = 0;
    std::vector<std::string> properties;  // "list" properties stored as "list:<name>"
  };
  std::vector<Element> elements;
  while (true) {
    if (!reader.next(ls)) reader.fail("missing end_header");
    ls >> token;
    if (token == "end_header") break;
    if (token == "element") {
      Element e;
      if (!(ls >> e.name >> e.count)) reader.fail("malformed element line");
      elements.push_back(e);
    } else if (token == "property") {
      if (elements.empty()) reader.fail("property before element");
      std::string type, name;
      ls >> type;
      if (type == "list") {
        std::string count_type, item_type;
        ls >> count_type >> item_type >> name;
        elements.back().properties.push_back("list:" + name);
      } else {
        ls >> name;
        elements.back().properties.push_back(name);
      }
    } else if (token != "comment" && token != "obj_info") {
      reader.fail("unknown header keyword '" + token + "'");
    }
  }

  std::vector<Eigen::Vector3d> verts;
  std::vector<Eigen::Matrix<Index, 1, 3>> faces;
  Index num_vertices = 0;
  for (const auto& e : elements) {
    if (e.name == "vertex") num_vertices = e.count;
  }
  for (const auto& e : elements) {
    for (Index i = 0; i < e.count; ++i) {
      if (!reader.next(ls)) reader.fail("unexpected end of file in element " + e.name);
      if (e.name == "vertex") {
        Eigen::Vector3d p = Eigen::Vector3d::Zero();
        int found = 0;
        for (const auto& prop : e.properties) {
          if (prop.rfind("list:", 0) == 0) {
            Index cnt;
            ls >> cnt;
            for (Index j = 0; j < cnt; ++j) ls >> token;
            continue;
          }
          double value;
          if (!(ls >> value)) reader.fail("malformed vertex " + std::to_string(i));
          if (prop == "x") p[0] = value, ++found;
          if (prop == "y") p[1] = value, ++found;
          if (prop == "z") p[2] = value, ++found;
        }
        if (found != 3) reader.fail("vertex element lacks x/y/z");
        verts.push_back(p);
      } else if (e.name == "face") {
        bool got = false;
        for (const auto& prop : e.properties) {
          if (prop == "list:vertex_indices" || prop == "list:vertex_index") {
            Index cnt;
            if (!(ls >> cnt) || cnt < 3) reader.fail("malformed face " + std::to_string(i));
            std::vector<Index> poly(cnt);
            for (auto& idx : poly) {
              if (!(ls >> idx)) reader.fail("malformed face " + std::to_string(i));
              if (idx < 0 || idx >= num_vertices)
                reader.fail("face " + std::to_string(i) + ": index out of range");
            }
            append_polygon(poly, faces);
            got = true;
          } else if (prop.rfind("list:", 0) == 0) {
            Index cnt;
            ls >> cnt;
            for (Index j = 0; j < cnt; ++j) ls >> token;
          } else {
            ls >> token;
          }
        }
        if (!got) reader.fail("face element lacks vertex_indices");
      }
    }
  }
  return assemble(verts, faces);
}

TriMesh load_mesh(const std::filesystem::path& path, MeshFormat format) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open mesh file " + path.string());
  try {
    return format == MeshFormat::off ? parse_off(in) : parse_ply_ascii(in);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

TriMesh load_mesh(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".ply") return load_mesh(path, MeshFormat::ply_ascii);
  return load_mesh(path, MeshFormat::off);
}

void write_off(const TriMesh& mesh, std::ostream& out) {
  out << "OFF\n" << mesh.num_vertices() << ' ' << mesh.num_triangles() << " 0\n";
  out << std::setprecision(17);
  const auto& v = mesh.vertices();
  for (Index i = 0; i < v.rows(); ++i) out << v(i, 0) << ' ' << v(i, 1) << ' ' << v(i, 2) << '\n';
  const auto& t = mesh.triangles();
  for (Index f = 0; f < t.rows(); ++f) out << "3 " << t(f, 0) << ' ' << t(f, 1) << ' ' << t(f, 2) << '\n';
}

void save_off(const TriMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  write_off(mesh, out);
}

// ---------------------------------------------------------------------------
// Sampling and geodesics

SampleSet euclidean_fps(const Points& points, Index count, Index seed_vertex, Exec exec) {
  const Index n = points.rows();
  if (count < 1 || count > n)
    throw ValidationError("sample count " + std::to_string(count) + " out of range [1, " +
                          std::to_string(n) + "]");
  if (seed_vertex < 0 || seed_vertex >= n) throw ValidationError("seed vertex out of range");

  std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
  SampleSet out;
  out.indices.reserve(count);
  Index current = seed_vertex;
  const bool par = exec == Exec::parallel;
  for (Index s = 0; s < count; ++s) {
    out.indices.push_back(current);
    min_dist[current] = -1.0;  // selected
    const Eigen::RowVector3d p = points.row(current);
    double best = -std::numeric_limits<double>::infinity();
    Index best_idx = -1;
#pragma omp parallel if (par)
    {
      double local_best = -std::numeric_limits<double>::infinity();
      Index local_idx = -1;
#pragma omp for schedule(static) nowait
      for (Index v = 0; v < n; ++v) {
        if (min_dist[v] < 0.0) continue;
        const double d = (points.row(v) - p).squaredNorm();
        if (d < min_dist[v]) min_dist[v] = d;
        if (min_dist[v] > local_best) {
          local_best = min_dist[v];
          local_idx = v;
        }
      }
#pragma omp critical
      {
        if (local_idx >= 0 &&
            (local_best > best || (local_best == best && local_idx < best_idx))) {
          best = local_best;
          best_idx = local_idx;
        }
      }
    }
    current = best_idx;
  }
  return out;
}

SampleSet euclidean_fps(const TriMesh& mesh, Index count, Index seed_vertex, Exec exec) {
  return euclidean_fps(mesh.vertices(), count, seed_vertex, exec);
}

namespace {

void dijkstra_into(const EdgeGraph& graph, Index source, double* dist) {
  const Index n = graph.num_vertices();
  std::fill(dist, dist + n, std::numeric_limits<double>::infinity());
  using Item = std::pair<double, Index>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  dist[source] = 0.0;
  heap.emplace(0.0, source);
  while (!heap.empty()) {
    auto [d, v] = heap.top();
    heap.pop();
    if (d > dist[v]) continue;
    auto nb = graph.neighbors(v);
    auto len = graph.lengths(v);
    for (std::size_t e = 0; e < nb.size(); ++e) {
      const double cand = d + len[e];
      if (cand < dist[nb[e]]) {
        dist[nb[e]] = cand;
        heap.emplace(cand, nb[e]);
      }
    }
  }
}

}  // namespace

VectorXd graph_geodesics(const EdgeGraph& graph, Index source) {
  if (source < 0 || source >= graph.num_vertices())
    throw ValidationError("geodesic source out of range");
  VectorXd dist(graph.num_vertices());
  dijkstra_into(graph, source, dist.data());
  return dist;
}

VectorXd graph_geodesics(const TriMesh& mesh, Index source) {
  return graph_geodesics(mesh.edge_graph(), source);
}

MatrixXd geodesics_from_sources(const EdgeGraph& graph, std::span<const Index> sources, Exec exec) {
  const Index n = graph.num_vertices();
  const Index s = static_cast<Index>(sources.size());
  for (Index src : sources)
    if (src < 0 || src >= n) throw ValidationError("geodesic source out of range");
  // Column-major storage: one column per source keeps each Dijkstra contiguous.
  MatrixXd cols(n, s);
#pragma omp parallel for schedule(dynamic, 4) if (exec == Exec::parallel)
  for (Index r = 0; r < s; ++r) dijkstra_into(graph, sources[r], cols.col(r).data());
  return cols.transpose();
}

MatrixXd all_pairs_geodesics(const EdgeGraph& graph, Exec exec) {
  std::vector<Index> all(graph.num_vertices());
  for (Index i = 0; i < graph.num_vertices(); ++i) all[i] = i;
  return geodesics_from_sources(graph, all, exec);
}

VoronoiLabels nearest_source(const EdgeGraph& graph, std::span<const Index> sources) {
  const Index n = graph.num_vertices();
  VoronoiLabels out;
  out.distance = VectorXd::Constant(n, std::numeric_limits<double>::infinity());
  out.label.assign(n, -1);
  using Item = std::tuple<double, Index, Index>;  // distance, label, vertex
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  for (std::size_t s = 0; s < sources.size(); ++s) {
    const Index v = sources[s];
    if (v < 0 || v >= n) throw ValidationError("voronoi source out of range");
    if (out.label[v] != -1) continue;
    out.distance[v] = 0.0;
    out.label[v] = static_cast<Index>(s);
    heap.emplace(0.0, static_cast<Index>(s), v);
  }
  while (!heap.empty()) {
    auto [d, lab, v] = heap.top();
    heap.pop();
    if (d > out.distance[v] || lab != out.label[v]) continue;
    auto nb = graph.neighbors(v);
    auto len = graph.lengths(v);
    for (std::size_t e = 0; e < nb.size(); ++e) {
      const Index w = nb[e];
      const double cand = d + len[e];
      if (cand < out.distance[w] || (cand == out.distance[w] && lab < out.label[w])) {
        out.distance[w] = cand;
        out.label[w] = lab;
        heap.emplace(cand, lab, w);
      }
    }
  }
  return out;
}

double geodesic_diameter(const EdgeGraph& graph, const Points& points, Index sample_count) {
  const Index n = graph.num_vertices();
  if (sample_count < 1 || sample_count > n)
    throw ValidationError("diameter sample count out of range");
  SampleSet samples = euclidean_fps(points, sample_count, 0);
  double diam = 0.0;
#pragma omp parallel
  {
    VectorXd dist(n);
    double local = 0.0;
#pragma omp for schedule(dynamic, 4)
    for (Index s = 0; s < sample_count; ++s) {
      dijkstra_into(graph, samples.indices[s], dist.data());
      local = std::max(local, dist.maxCoeff());
    }
#pragma omp critical
    diam = std::max(diam, local);
  }
  return diam;
}

double geodesic_diameter(const TriMesh& mesh, Index sample_count) {
  return geodesic_diameter(mesh.edge_graph(), mesh.vertices(), sample_count);
}

}  // namespace kmatch
