#pragma once

// Coarse-to-fine matching for shapes too large for one dense assignment:
// match FPS seeds, then repeatedly add samples, group them in Voronoi cells
// carried across by the current map and solve one small problem per cell.

#include "kmatch/kernel_matching.hpp"

#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

namespace kmatch {

struct MultiscaleConfig {
  Index n0 = 1000;            // seeds on the larger shape
  Index max_problem = 1500;   // maxP
  Index branch = 3;
  Index anchor_count = 1000;
  int sweeps = 32;            // full-resolution exchange rounds after the last level
  bool partial = false;       // forbidden cells and no completion of leftovers
  std::optional<std::filesystem::path> dump_dir;  // per-level CSVs

  void validate() const;
};

constexpr Index kForbiddenCell = -2;

/// Per-level sampling and cell state. Cell labels are kUnmatched for
/// unsampled vertices and kForbiddenCell for forbidden ones.
struct CellDecomposition {
  std::vector<Index> order_x, order_y;  // full FPS orderings
  Index sampled_x = 0, sampled_y = 0;   // sampled prefix lengths
  Index added_x = 0, added_y = 0;       // samples added by the last level
  std::vector<Index> cell_x, cell_y;
  std::vector<Index> seeds_x, seeds_y;  // matched seed pairs, ordered by FPS rank on X
  std::vector<char> forbidden_x, forbidden_y;
  std::vector<std::pair<Index, Index>> anchors;  // fixed after the coarse level
  Index num_cells = 0;
};

/// What the driver needs about both shapes. Descriptors may have zero columns.
struct MultiscaleProblem {
  const PreparedShape* source = nullptr;
  const PreparedShape* target = nullptr;
  DescriptorField source_desc;
  DescriptorField target_desc;
};

/// Seed counts per shape, proportional to surface area; the larger shape gets n0.
std::pair<Index, Index> seed_counts(const TriMesh& source, const TriMesh& target, Index n0);

struct CoarseResult {
  CellDecomposition state;
  Assignment assignment;  // over full vertex indices, seeds only
  MatchState match;
};

/// Matches the FPS seeds with kernels restricted to seed rows. A full
/// resolution `init` is projected onto the seeds by one assignment step.
CoarseResult coarse_match(const MultiscaleProblem& problem, const MatchConfig& config,
                          const MultiscaleConfig& ms, const std::optional<Assignment>& init = std::nullopt);

/// Marks sampled, unlabeled vertices whose nearest seed is forbidden.
void propagate_forbidden(CellDecomposition& state, const TriMesh& source, const TriMesh& target);

/// One refinement level: sample branch * previous new points, build cells,
/// solve one problem per cell and merge.
std::pair<CellDecomposition, Assignment> refine_level(const CellDecomposition& state,
                                                      const Assignment& previous,
                                                      const MultiscaleProblem& problem,
                                                      const MatchConfig& config,
                                                      const MultiscaleConfig& ms, int level = 1);

/// Exchange rounds on the full vertex sets. Each round cuts the free source
/// vertices into staggered Voronoi cells of at most maxP/2 sources; a cell
/// is matched against the targets preferred by its payoff columns plus its
/// current targets, by one assignment on the payoff of the whole current
/// map at the last diffusion time. Collisions between cells go to the larger
/// payoff, losers keep their old target when it is still free. Stops after
/// a round without changes. Returns the number of rounds run.
int exchange_sweeps(Assignment& current, const MultiscaleProblem& problem, const MatchConfig& config,
                    const MultiscaleConfig& ms, const std::vector<char>& forbidden_x,
                    const std::vector<char>& forbidden_y);

struct LevelSummary {
  Index sampled_x = 0;
  Index sampled_y = 0;
  Index num_cells = 0;
  Index matched = 0;
  Index forbidden_x = 0;
};

struct MultiscaleResult {
  Assignment assignment;
  std::vector<LevelSummary> levels;
  std::vector<std::vector<char>> forbidden_history;  // source flags per level
  bool single_scale = false;
  int exchange_rounds = 0;
  MatchState coarse;
};

/// Runs levels until every vertex is sampled. Problems that already fit
/// into max_problem are solved directly by the single-scale engine.
MultiscaleResult run_multiscale(const MultiscaleProblem& problem, const MatchConfig& config,
                                const MultiscaleConfig& ms,
                                const std::optional<Assignment>& init = std::nullopt);

/// CSV "vertex,cell,matched_to" for the sampled vertices of one shape.
void write_level_csv(const CellDecomposition& state, const Assignment& assignment, bool source,
                     const std::filesystem::path& path);

}  // namespace kmatch
