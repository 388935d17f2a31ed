#include "kmatch/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace kmatch {

Assignment Assignment::identity(Index n) {
  Assignment a;
  a.num_targets = n;
  a.target_of.resize(n);
  for (Index i = 0; i < n; ++i) a.target_of[i] = i;
  return a;
}

Assignment Assignment::from_targets(std::vector<Index> targets, Index num_targets) {
  Assignment a;
  a.target_of = std::move(targets);
  a.num_targets = num_targets;
  return a;
}

Index Assignment::num_matched() const {
  return std::count_if(target_of.begin(), target_of.end(), [](Index t) { return t != kUnmatched; });
}

std::vector<Index> Assignment::source_of() const {
  std::vector<Index> inv(num_targets, kUnmatched);
  for (Index s = 0; s < num_sources(); ++s)
    if (target_of[s] != kUnmatched) inv[target_of[s]] = s;
  return inv;
}

bool Assignment::is_injective() const {
  std::vector<char> used(num_targets, 0);
  for (Index t : target_of) {
    if (t == kUnmatched) continue;
    if (t < 0 || t >= num_targets || used[t]) return false;
    used[t] = 1;
  }
  return true;
}

double assignment_score(const Payoff& payoff, const Assignment& a) {
  double total = 0.0;
  for (Index s = 0; s < a.num_sources(); ++s)
    if (a.target_of[s] != kUnmatched) total += payoff(a.target_of[s], s);
  return total;
}

// ---------------------------------------------------------------------------
// Auction

namespace {

struct Bid {
  Index row = -1;
  std::int64_t price = 0;
};

Bid compute_bid(const IntMatrix& scaled, const std::vector<std::int64_t>& prices, Index col,
                std::int64_t eps) {
  const Index n = scaled.rows();
  const std::int64_t* column = scaled.col(col).data();
  std::int64_t best = std::numeric_limits<std::int64_t>::min();
  std::int64_t second = std::numeric_limits<std::int64_t>::min();
  Index best_row = 0;
  for (Index r = 0; r < n; ++r) {
    const std::int64_t value = column[r] - prices[r];
    if (value > best) {
      second = best;
      best = value;
      best_row = r;
    } else if (value > second) {
      second = value;
    }
  }
  Bid bid;
  bid.row = best_row;
  bid.price = prices[best_row] + (best - second) + eps;
  return bid;
}

}  // namespace

AuctionResult auction_square(const IntMatrix& benefit, Exec exec, std::int64_t theta) {
  const Index n = benefit.rows();
  if (benefit.cols() != n) throw ValidationError("auction needs a square benefit matrix");
  if (theta < 2) throw ValidationError("epsilon scaling factor must be at least 2");
  AuctionResult result;
  result.row_of_col.assign(n, -1);
  result.prices.assign(n, 0);
  if (n == 0) return result;
  if (n == 1) {
    result.row_of_col[0] = 0;
    return result;
  }

  const std::int64_t scale = n + 1;
  const std::int64_t lo = benefit.minCoeff();
  const std::int64_t hi = benefit.maxCoeff();
  if (hi - lo > std::numeric_limits<std::int64_t>::max() / (4 * scale))
    throw ValidationError("integer benefit range too large for the auction");
  const IntMatrix scaled = (benefit.array() - lo).matrix() * scale;
  const std::int64_t spread = (hi - lo) * scale;

  std::vector<Index> owner(n, -1);
  std::vector<Bid> bids(n);
  std::vector<std::int64_t> best_price(n);
  std::vector<Index> best_bidder(n, -1);
  std::vector<Index> touched;
  touched.reserve(n);
  std::vector<Index> unassigned;
  std::vector<Index> next;
  unassigned.reserve(n);
  next.reserve(n);

  auto& prices = result.prices;
  auto& row_of_col = result.row_of_col;
  const bool par = exec == Exec::parallel;
  std::int64_t eps = std::max<std::int64_t>(1, spread / 2);
  while (true) {
    ++result.phases;
    std::fill(owner.begin(), owner.end(), -1);
    std::fill(row_of_col.begin(), row_of_col.end(), -1);
    unassigned.clear();
    for (Index c = 0; c < n; ++c) unassigned.push_back(c);

    while (!unassigned.empty()) {
      ++result.rounds;
      const Index count = static_cast<Index>(unassigned.size());
      result.bids += count;
#pragma omp parallel for schedule(static) if (par && count >= 64)
      for (Index i = 0; i < count; ++i) bids[i] = compute_bid(scaled, prices, unassigned[i], eps);

      // unassigned is ascending, so a strict comparison keeps the lowest column on ties.
      touched.clear();
      for (Index i = 0; i < count; ++i) {
        const Bid& b = bids[i];
        if (best_bidder[b.row] == -1) {
          touched.push_back(b.row);
          best_bidder[b.row] = unassigned[i];
          best_price[b.row] = b.price;
        } else if (b.price > best_price[b.row]) {
          best_bidder[b.row] = unassigned[i];
          best_price[b.row] = b.price;
        }
      }
      next.clear();
      for (Index i = 0; i < count; ++i) {
        const Bid& b = bids[i];
        if (best_bidder[b.row] != unassigned[i]) next.push_back(unassigned[i]);
      }
      for (Index r : touched) {
        const Index winner = best_bidder[r];
        if (owner[r] != -1) {
          row_of_col[owner[r]] = -1;
          next.push_back(owner[r]);
        }
        owner[r] = winner;
        row_of_col[winner] = r;
        prices[r] = best_price[r];
        best_bidder[r] = -1;
      }
      std::sort(next.begin(), next.end());
      std::swap(unassigned, next);
    }
    if (eps == 1) break;
    eps = std::max<std::int64_t>(1, eps / theta);
  }
  return result;
}

// ---------------------------------------------------------------------------

namespace {

void check_finite(const Payoff& payoff) {
  if (payoff.rows() < 1 || payoff.cols() < 1) throw ValidationError("payoff must be non-empty");
  if (!payoff.allFinite()) throw ValidationError("payoff has a non-finite entry");
}

std::int64_t quantize(double value, double origin, double quantum) {
  const double q = std::round((value - origin) / quantum);
  if (std::abs(q) > 1e15) throw ValidationError("payoff range too large for the integer auction");
  return static_cast<std::int64_t>(q);
}

}  // namespace

Assignment solve_lap(const Payoff& payoff, double eps_final, const LapOptions& options) {
  check_finite(payoff);
  const Index n = payoff.rows();
  if (payoff.cols() != n) throw ValidationError("solve_lap needs a square payoff");
  if (eps_final < 0.0) throw ValidationError("eps_final must be positive");
  const double lo = payoff.minCoeff();
  const double spread = payoff.maxCoeff() - lo;
  Assignment result = Assignment::identity(n);
  if (spread > 0.0) {
    const double quantum =
        eps_final > 0.0 ? eps_final * static_cast<double>(n + 1) : options.resolution * spread;
    IntMatrix benefit(n, n);
    for (Index c = 0; c < n; ++c)
      for (Index r = 0; r < n; ++r) benefit(r, c) = quantize(payoff(r, c), lo, quantum);
    const auto auction = auction_square(benefit, options.exec);
    result.target_of = auction.row_of_col;
  }
  result.objective = assignment_score(payoff, result);
  return result;
}

Assignment solve_lap_rectangular(const Payoff& payoff, std::optional<double> slack,
                                 const LapOptions& options) {
  check_finite(payoff);
  const Index rows = payoff.rows();
  const Index cols = payoff.cols();
  if (rows == cols) return solve_lap(payoff, 0.0, options);

  const double lo = payoff.minCoeff();
  const double spread = payoff.maxCoeff() - lo;
  const double span = spread > 0.0 ? spread : 1.0;
  const double c = slack.value_or(lo - span);
  if (!std::isfinite(c)) throw ValidationError("slack value must be finite");
  const double quantum = options.resolution * span;
  const Index n = std::max(rows, cols);
  const std::int64_t slack_int = quantize(c, lo, quantum);
  IntMatrix benefit = IntMatrix::Constant(n, n, slack_int);
  for (Index j = 0; j < cols; ++j)
    for (Index r = 0; r < rows; ++r) benefit(r, j) = quantize(payoff(r, j), lo, quantum);
  const auto auction = auction_square(benefit, options.exec);

  Assignment result;
  result.num_targets = rows;
  result.target_of.assign(cols, kUnmatched);
  for (Index j = 0; j < cols; ++j) {
    const Index r = auction.row_of_col[j];
    if (r < rows) result.target_of[j] = r;
  }
  result.objective = assignment_score(payoff, result);
  return result;
}

Assignment project_to_permutation(const Payoff& payoff, const LapOptions& options) {
  return solve_lap(payoff, 0.0, options);
}

// ---------------------------------------------------------------------------

void write_assignment(const Assignment& a, const std::filesystem::path& path, bool write_unmatched) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  for (Index s = 0; s < a.num_sources(); ++s) {
    if (a.target_of[s] == kUnmatched && !write_unmatched) continue;
    out << s << ' ' << a.target_of[s] << '\n';
  }
}

std::vector<std::pair<Index, Index>> read_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open correspondence file " + path.string());
  std::vector<std::pair<Index, Index>> pairs;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    Index s, t;
    if (!(ls >> s >> t))
      throw ValidationError(path.string() + ": line " + std::to_string(line_no) +
                            ": expected 'src tgt'");
    pairs.emplace_back(s, t);
  }
  return pairs;
}

Assignment read_assignment(const std::filesystem::path& path, Index num_sources, Index num_targets) {
  Assignment a;
  a.num_targets = num_targets;
  a.target_of.assign(num_sources, kUnmatched);
  std::vector<char> used(num_targets, 0);
  for (auto [s, t] : read_pairs(path)) {
    if (s < 0 || s >= num_sources)
      throw ValidationError(path.string() + ": source index " + std::to_string(s) + " out of range");
    if (t == kUnmatched) continue;
    if (t < 0 || t >= num_targets)
      throw ValidationError(path.string() + ": target index " + std::to_string(t) + " out of range");
    if (used[t]) throw ValidationError(path.string() + ": target " + std::to_string(t) + " used twice");
    used[t] = 1;
    a.target_of[s] = t;
  }
  return a;
}

}  // namespace kmatch
