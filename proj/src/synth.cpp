#include "kmatch/synth.hpp"

#include <array>
#include <cmath>
#include <map>
#include <numbers>

namespace kmatch {

TriMesh icosphere(int subdivisions) {
  if (subdivisions < 0 || subdivisions > 8) throw ValidationError("icosphere subdivisions must be in [0, 8]");
  const double p = std::numbers::phi;
  std::vector<Eigen::RowVector3d> verts = {
      {-1, p, 0}, {1, p, 0}, {-1, -p, 0}, {1, -p, 0}, {0, -1, p}, {0, 1, p},
      {0, -1, -p}, {0, 1, -p}, {p, 0, -1}, {p, 0, 1}, {-p, 0, -1}, {-p, 0, 1}};
  for (auto& v : verts) v.normalize();
  std::vector<std::array<Index, 3>> faces = {
      {0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
      {11, 10, 2}, {10, 7, 6}, {7, 1, 8}, {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8},
      {3, 8, 9}, {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1}};

  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<Index, Index>, Index> midpoint;
    auto mid = [&](Index a, Index b) {
      auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      verts.push_back((verts[a] + verts[b]).normalized());
      const Index id = static_cast<Index>(verts.size()) - 1;
      midpoint.emplace(key, id);
      return id;
    };
    std::vector<std::array<Index, 3>> next;
    next.reserve(faces.size() * 4);
    for (const auto& f : faces) {
      const Index a = mid(f[0], f[1]);
      const Index b = mid(f[1], f[2]);
      const Index c = mid(f[2], f[0]);
      next.push_back({f[0], a, c});
      next.push_back({f[1], b, a});
      next.push_back({f[2], c, b});
      next.push_back({a, b, c});
    }
    faces = std::move(next);
  }

  Points points(static_cast<Index>(verts.size()), 3);
  for (std::size_t i = 0; i < verts.size(); ++i) points.row(static_cast<Index>(i)) = verts[i];
  Triangles tris(static_cast<Index>(faces.size()), 3);
  for (std::size_t f = 0; f < faces.size(); ++f)
    for (int c = 0; c < 3; ++c) tris(static_cast<Index>(f), c) = faces[f][c];
  return TriMesh::from_arrays(std::move(points), std::move(tris));
}

TriMesh icosphere_with_vertices(Index n) {
  Index count = 12;
  for (int s = 0; s <= 8; ++s, count = (count - 2) * 4 + 2) {
    if (count == n) return icosphere(s);
    if (count > n) break;
  }
  throw ValidationError("icosphere vertex count must be 10*4^s+2 (12, 42, 162, 642, 2562, ...), got " +
                        std::to_string(n));
}

TriMesh torus(Index major, Index minor, double major_radius, double minor_radius) {
  if (major < 3 || minor < 3) throw ValidationError("torus needs at least 3 segments each way");
  if (!(major_radius > minor_radius && minor_radius > 0.0))
    throw ValidationError("torus radii must satisfy R > r > 0");
  // Vertex j * major + i: angle i around the axis, angle j around the tube.
  Points points(major * minor, 3);
  for (Index j = 0; j < minor; ++j) {
    const double phi = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(minor);
    const double ring = major_radius + minor_radius * std::cos(phi);
    for (Index i = 0; i < major; ++i) {
      const double theta = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(major);
      points.row(j * major + i) << ring * std::cos(theta), ring * std::sin(theta),
          minor_radius * std::sin(phi);
    }
  }
  Triangles tris(2 * major * minor, 3);
  Index f = 0;
  for (Index j = 0; j < minor; ++j) {
    for (Index i = 0; i < major; ++i) {
      const Index a = j * major + i;
      const Index b = j * major + (i + 1) % major;
      const Index c = ((j + 1) % minor) * major + i;
      const Index d = ((j + 1) % minor) * major + (i + 1) % major;
      tris.row(f++) << a, b, d;
      tris.row(f++) << a, d, c;
    }
  }
  return TriMesh::from_arrays(std::move(points), std::move(tris));
}

std::vector<Index> random_permutation(Index n, std::mt19937_64& rng) {
  std::vector<Index> perm(n);
  for (Index i = 0; i < n; ++i) perm[i] = i;
  for (Index i = n - 1; i > 0; --i) {
    const Index j = static_cast<Index>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(perm[i], perm[j]);
  }
  return perm;
}

ShapeSpec parse_shape_spec(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw ValidationError("shape spec must be <kind>:<n>, got '" + text + "'");
  const std::string kind = text.substr(0, colon);
  const std::string count = text.substr(colon + 1);
  ShapeSpec spec;
  if (kind == "icosphere")
    spec.kind = ShapeSpec::Kind::icosphere;
  else if (kind == "cycle")
    spec.kind = ShapeSpec::Kind::cycle;
  else if (kind == "hemisphere")
    spec.kind = ShapeSpec::Kind::hemisphere;
  else
    throw ValidationError("unknown shape kind '" + kind + "' (icosphere, cycle, hemisphere)");
  std::size_t used = 0;
  try {
    spec.n = std::stoll(count, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != count.size() || spec.n < 1)
    throw ValidationError("invalid vertex count in shape spec '" + text + "'");
  return spec;
}

Assignment corrupt(const Assignment& truth, double rho, std::mt19937_64& rng) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw ValidationError("noise rho must be in [0, 1]");
  std::vector<Index> matched;
  for (Index s = 0; s < truth.num_sources(); ++s)
    if (truth.target_of[s] != kUnmatched) matched.push_back(s);
  const auto count = static_cast<Index>(std::floor(rho * static_cast<double>(matched.size()) + 0.5));
  Assignment out = truth;
  if (count < 2) return out;
  const auto order = random_permutation(static_cast<Index>(matched.size()), rng);
  std::vector<Index> chosen(order.begin(), order.begin() + count);
  const auto shuffle = random_permutation(count, rng);
  for (Index i = 0; i < count; ++i)
    out.target_of[matched[chosen[i]]] = truth.target_of[matched[chosen[shuffle[i]]]];
  return out;
}

SynthPair make_synthetic_pair(const ShapeSpec& spec, const SynthOptions& options) {
  SynthPair pair;
  switch (spec.kind) {
    case ShapeSpec::Kind::icosphere:
      pair.source = icosphere_with_vertices(spec.n);
      pair.target = pair.source;
      pair.ground_truth = Assignment::identity(spec.n);
      break;
    case ShapeSpec::Kind::cycle:
      if (spec.n < 8) throw ValidationError("cycle needs at least 8 vertices");
      pair.source = torus(spec.n, 4);
      pair.target = pair.source;
      pair.ground_truth = Assignment::identity(pair.source.num_vertices());
      break;
    case ShapeSpec::Kind::hemisphere: {
      pair.source = icosphere_with_vertices(spec.n);
      const auto& p = pair.source.vertices();
      const auto& tris = pair.source.triangles();
      std::vector<char> used(spec.n, 0);
      for (Index f = 0; f < tris.rows(); ++f) {
        bool upper = true;
        for (int c = 0; c < 3; ++c) upper = upper && p(tris(f, c), 2) >= -1e-9;
        if (upper)
          for (int c = 0; c < 3; ++c) used[tris(f, c)] = 1;
      }
      std::vector<Index> keep;
      pair.ground_truth.num_targets = 0;
      pair.ground_truth.target_of.assign(spec.n, kUnmatched);
      for (Index v = 0; v < spec.n; ++v) {
        if (!used[v]) continue;
        pair.ground_truth.target_of[v] = static_cast<Index>(keep.size());
        keep.push_back(v);
      }
      pair.ground_truth.num_targets = static_cast<Index>(keep.size());
      pair.target = pair.source.submesh(keep);
      break;
    }
  }

  std::mt19937_64 rng(options.seed);
  if (options.permute) {
    const Index nt = pair.target.num_vertices();
    const auto order = random_permutation(nt, rng);
    pair.target = pair.target.relabeled(order);
    std::vector<Index> new_index(nt);
    for (Index i = 0; i < nt; ++i) new_index[order[i]] = i;
    for (auto& t : pair.ground_truth.target_of)
      if (t != kUnmatched) t = new_index[t];
  }

  if (options.noise_rho && !(*options.noise_rho >= 0.0 && *options.noise_rho <= 1.0))
    throw ValidationError("noise rho must be in [0, 1]");
  if (options.swap || options.noise_rho) {
    Assignment init = pair.ground_truth;
    if (options.swap) {
      const auto [a, b] = *options.swap;
      const Index n = init.num_sources();
      if (a < 0 || b < 0 || a >= n || b >= n || a == b)
        throw ValidationError("swap indices must be distinct vertices in [0, " + std::to_string(n) + ")");
      std::swap(init.target_of[a], init.target_of[b]);
    }
    if (options.noise_rho) init = corrupt(init, *options.noise_rho, rng);
    pair.init = std::move(init);
  }
  return pair;
}

}  // namespace kmatch
