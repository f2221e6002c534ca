#pragma once

#include <cstddef>
#include <vector>

#include "spatialops/autodiff.hpp"
#include "spatialops/tensor.hpp"

// The operation bank M_op is a [C, N] matrix whose columns are the learned
// operations. Operation indices are the stable handles used by the sweep,
// interpolation and REPL tooling.
namespace spatialops {

// M_op d_op. Rejects a distribution whose length differs from N.
std::vector<double> op_vector(const Tensor<double>& bank, const std::vector<double>& d_op);

// Batched, differentiable form: d_op [B, N] -> v_op [B, C].
template <typename T>
ad::Var<T> op_vectors(ad::Var<T> bank, ad::Var<T> d_op);

std::vector<double> inject_one_hot(std::size_t k, std::size_t num_ops);

// alpha on k1 and 1 - alpha on k2.
std::vector<double> interpolate(std::size_t k1, std::size_t k2, double alpha, std::size_t num_ops);

}  // namespace spatialops
