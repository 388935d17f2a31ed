#pragma once

#include "kmatch/common.hpp"
#include "kmatch/mesh.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

namespace kmatch {

/// Dense score matrix; rows are target vertices, columns are source vertices.
using Payoff = MatrixXd;
using IntMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

/// Partial injective map from source indices to target indices.
struct Assignment {
  std::vector<Index> target_of;  // kUnmatched for unmatched sources
  Index num_targets = 0;
  double objective = 0.0;

  static Assignment identity(Index n);
  static Assignment from_targets(std::vector<Index> targets, Index num_targets);

  Index num_sources() const { return static_cast<Index>(target_of.size()); }
  Index num_matched() const;
  /// Inverse map: source per target, kUnmatched where no source maps there.
  std::vector<Index> source_of() const;
  bool is_injective() const;
  bool same_map(const Assignment& other) const { return target_of == other.target_of; }
};

/// Sum of payoff(target_of[j], j) over matched sources.
double assignment_score(const Payoff& payoff, const Assignment& assignment);

struct AuctionResult {
  std::vector<Index> row_of_col;
  // Final object prices in scaled units (benefit * (n + 1)); together with
  // row_of_col they satisfy 1-complementary slackness in those units.
  std::vector<std::int64_t> prices;
  Index phases = 0;
  Index rounds = 0;
  Index bids = 0;
};

/// Exact forward auction on a square integer benefit matrix. Objects are
/// rows and bidders are columns. Benefits are internally multiplied by
/// (n + 1) and epsilon is scaled from spread/2 down to 1 by `theta`, which
/// makes the result optimal for the integer problem. A bidder breaks ties
/// toward the lowest row; an object breaks ties toward the lowest column.
/// Bids within a round are computed independently (in parallel for
/// Exec::parallel) and resolved serially, so both paths agree exactly.
AuctionResult auction_square(const IntMatrix& benefit, Exec exec = Exec::parallel,
                             std::int64_t theta = 7);

struct LapOptions {
  // Quantum used to integerize payoffs, relative to the payoff spread.
  double resolution = 1e-9;
  Exec exec = Exec::parallel;
};

/// Max-payoff square assignment. `eps_final` is the final epsilon in payoff
/// units; zero selects resolution * spread / (n + 1), for which the result
/// is optimal at the integerization resolution.
Assignment solve_lap(const Payoff& payoff, double eps_final = 0.0, const LapOptions& options = {});

/// Rectangular problems are padded to square with the constant `slack`
/// (default: min - spread) and slack matches are discarded. With more
/// sources than targets every target is matched; with more targets than
/// sources every source is matched.
Assignment solve_lap_rectangular(const Payoff& payoff, std::optional<double> slack = std::nullopt,
                                 const LapOptions& options = {});

/// Frobenius projection onto permutations, argmax <Pi, P>.
Assignment project_to_permutation(const Payoff& payoff, const LapOptions& options = {});

/// Text lines "src tgt", 0-based; "src -1" for unmatched sources when
/// `write_unmatched` is set.
void write_assignment(const Assignment& a, const std::filesystem::path& path,
                      bool write_unmatched = true);
/// Raw "src tgt" pairs in file order (tgt may be -1).
std::vector<std::pair<Index, Index>> read_pairs(const std::filesystem::path& path);
/// Reads "src tgt" lines. `num_sources`/`num_targets` bound the indices;
/// sources not listed stay unmatched. Duplicate targets are rejected.
Assignment read_assignment(const std::filesystem::path& path, Index num_sources, Index num_targets);

}  // namespace kmatch
