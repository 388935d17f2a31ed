#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace kmatch {

using Index = std::int64_t;

using MatrixXd = Eigen::MatrixXd;
using VectorXd = Eigen::VectorXd;

// Selects between the OpenMP kernel and its single-threaded twin. Both
// produce bit-identical output; the serial path exists for testing and
// benchmarking.
enum class Exec { serial, parallel };

// Input that does not satisfy a precondition (bad file, bad flag, out of range).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A computation that failed numerically (non-convergence, invariant breach).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void log_warning(const std::string& message);
void set_quiet(bool quiet);

int max_threads();
void set_threads(int threads);

}  // namespace kmatch
