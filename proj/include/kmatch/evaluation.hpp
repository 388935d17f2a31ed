#pragma once

// Correspondence scoring by normalized graph-geodesic error, cumulative
// error curves and kernel runtime comparisons.

#include "kmatch/assignment.hpp"
#include "kmatch/kernel_matching.hpp"
#include "kmatch/mesh.hpp"

#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace kmatch {

/// Ground truth per source: a target, kUnmatched for "no counterpart", or
/// unknown (not listed in the file).
struct GroundTruth {
  std::vector<Index> target_of;
  std::vector<char> known;
  Index num_targets = 0;

  static GroundTruth from_assignment(const Assignment& a);  // every source known
  Index num_sources() const { return static_cast<Index>(target_of.size()); }
};

/// Reads the correspondence format; "src -1" marks a source without counterpart.
GroundTruth read_ground_truth(const std::filesystem::path& path, Index num_sources, Index num_targets);

struct VertexErrors {
  static constexpr double kUnmatchedError = std::numeric_limits<double>::infinity();
  // One entry per evaluated source (known, with a counterpart), in source
  // order; unmatched sources carry kUnmatchedError.
  std::vector<double> errors;
  std::vector<Index> sources;
  Index matched = 0;
  Index unmatched = 0;
  Index false_matches = 0;    // matched although the truth has no counterpart
  Index true_rejections = 0;  // unmatched and no counterpart
  double diameter = 0.0;
};

/// Errors d_Y(pred, truth) / diam(Y). The diameter defaults to the FPS
/// estimate with min(n, 512) sources. Throws ValidationError when a matched
/// source has no ground truth entry.
VertexErrors geodesic_error(const Assignment& corr, const GroundTruth& gt, const TriMesh& target,
                            std::optional<double> diameter = std::nullopt,
                            Exec exec = Exec::parallel);

struct ErrorCurve {
  std::vector<double> thresholds;
  std::vector<double> fractions;
  double mean_error = 0.0;  // over matched sources
  double matched_fraction = 0.0;
};

/// 0, 0.0025, ..., 0.25.
std::vector<double> default_thresholds();

/// fraction(tau) = |{e < tau}| / |errors|; infinite entries count as
/// unmatched. Throws on an empty error set or non-increasing thresholds.
ErrorCurve cumulative_curve(std::span<const double> errors, std::span<const double> thresholds);

/// Throws NumericError unless fractions are non-decreasing and in [0, 1]
/// and never exceed the matched fraction.
void check_curve(const ErrorCurve& curve);

/// CSV "threshold,fraction".
void write_curve_csv(const ErrorCurve& curve, const std::filesystem::path& path);
/// Polyline plot on a 640x480 viewBox.
void write_curve_svg(const ErrorCurve& curve, const std::filesystem::path& path);

struct RuntimePair {
  std::string name;
  TriMesh source;
  TriMesh target;
  std::optional<Assignment> init;
};

struct RuntimeRow {
  std::string pair;
  std::string variant;  // "heat" or "gaussian"
  Index source_vertices = 0;
  Index target_vertices = 0;
  bool skipped = false;
  double setup_seconds = 0.0;  // basis or distance matrix
  double match_seconds = 0.0;
  int steps = 0;
  double seconds_per_step = 0.0;
};

/// Times both kernel variants on each pair with the same descriptors and
/// schedule. Pairs above `gaussian_cap` vertices skip the Gaussian variant.
std::vector<RuntimeRow> runtime_report(const std::vector<RuntimePair>& pairs, const MatchConfig& config,
                                       Index gaussian_cap = 6000);
void write_runtime_csv(const std::vector<RuntimeRow>& rows, const std::filesystem::path& path);

}  // namespace kmatch
