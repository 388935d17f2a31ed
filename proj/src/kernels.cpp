#include "kmatch/kernels.hpp"

#include "kmatch/mesh.hpp"

#include <Eigen/Dense>

namespace kmatch {

namespace {
constexpr Index kRowBlock = 64;
}

MatrixXd lowrank_product(const MatrixXd& left, const MatrixXd& right, Exec exec) {
  if (left.cols() != right.cols()) throw ValidationError("lowrank_product: inner dimensions differ");
  const Index rows = left.rows();
  MatrixXd out(rows, right.rows());
  const MatrixXd right_t = right.transpose();
  const Index blocks = (rows + kRowBlock - 1) / kRowBlock;
#pragma omp parallel for schedule(static) if (exec == Exec::parallel)
  for (Index b = 0; b < blocks; ++b) {
    const Index start = b * kRowBlock;
    const Index len = std::min(kRowBlock, rows - start);
    out.middleRows(start, len).noalias() = left.middleRows(start, len) * right_t;
  }
  return out;
}

MatrixXd transported_gram(const MatrixXd& target_factor, const MatrixXd& source_factor,
                          std::span<const Index> target_of) {
  if (static_cast<Index>(target_of.size()) != source_factor.rows())
    throw ValidationError("transported_gram: assignment size differs from source rows");
  MatrixXd gram = MatrixXd::Zero(target_factor.cols(), source_factor.cols());
  for (Index m = 0; m < source_factor.rows(); ++m) {
    const Index t = target_of[m];
    if (t == kUnmatched) continue;
    gram.noalias() += target_factor.row(t).transpose() * source_factor.row(m);
  }
  return gram;
}

MatrixXd gather_columns(const MatrixXd& kernel, std::span<const Index> target_of, Exec exec) {
  const Index n = static_cast<Index>(target_of.size());
  MatrixXd out(kernel.rows(), n);
#pragma omp parallel for schedule(static) if (exec == Exec::parallel)
  for (Index m = 0; m < n; ++m) {
    if (target_of[m] == kUnmatched)
      out.col(m).setZero();
    else
      out.col(m) = kernel.col(target_of[m]);
  }
  return out;
}

namespace reference {

MatrixXd lowrank_product(const MatrixXd& left, const MatrixXd& right) {
  MatrixXd out(left.rows(), right.rows());
  for (Index i = 0; i < left.rows(); ++i) {
    for (Index j = 0; j < right.rows(); ++j) {
      double s = 0.0;
      for (Index a = 0; a < left.cols(); ++a) s += left(i, a) * right(j, a);
      out(i, j) = s;
    }
  }
  return out;
}

}  // namespace reference

}  // namespace kmatch
