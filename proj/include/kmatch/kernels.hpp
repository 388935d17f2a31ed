#pragma once

// Data-parallel building blocks shared by the matching engine. Each OpenMP
// kernel takes an Exec policy; Exec::serial runs the identical code on one
// thread. The `reference` namespace holds plain loop versions used as test
// oracles and benchmark baselines.

#include "kmatch/common.hpp"

#include <span>

namespace kmatch {

/// out = left * right^T, computed in fixed row blocks so the result does
/// not depend on the thread count.
MatrixXd lowrank_product(const MatrixXd& left, const MatrixXd& right, Exec exec = Exec::parallel);

/// Sum over matched pairs of left.row(target)^T * right.row(source):
/// the k_Y x k_X inner matrix F_Y^T Pi F_X of a factorized kernel product.
MatrixXd transported_gram(const MatrixXd& target_factor, const MatrixXd& source_factor,
                          std::span<const Index> target_of);

/// Columns of `kernel` picked by target_of (zero column where unmatched):
/// the dense product K_Y Pi.
MatrixXd gather_columns(const MatrixXd& kernel, std::span<const Index> target_of,
                        Exec exec = Exec::parallel);

namespace reference {

MatrixXd lowrank_product(const MatrixXd& left, const MatrixXd& right);

}  // namespace reference

}  // namespace kmatch
