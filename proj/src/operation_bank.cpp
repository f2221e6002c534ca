#include "spatialops/operation_bank.hpp"

#include <stdexcept>
#include <string>

namespace spatialops {

std::vector<double> op_vector(const Tensor<double>& bank, const std::vector<double>& d_op) {
  if (bank.rank() != 2 || bank.dim(1) != d_op.size()) {
    throw std::invalid_argument("op_vector: distribution of length " + std::to_string(d_op.size()) +
                                " for bank " + shape_string(bank.shape()));
  }
  const std::size_t c = bank.dim(0), n = bank.dim(1);
  std::vector<double> v(c, 0.0);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t k = 0; k < n; ++k) v[i] += bank[i * n + k] * d_op[k];
  return v;
}

template <typename T>
ad::Var<T> op_vectors(ad::Var<T> bank, ad::Var<T> d_op) {
  return ad::matmul(d_op, ad::transpose(bank));
}

template ad::Var<float> op_vectors(ad::Var<float>, ad::Var<float>);
template ad::Var<double> op_vectors(ad::Var<double>, ad::Var<double>);

std::vector<double> inject_one_hot(std::size_t k, std::size_t num_ops) {
  if (k >= num_ops) {
    throw std::out_of_range("operation " + std::to_string(k) + " out of range for " + std::to_string(num_ops) +
                            " operations");
  }
  std::vector<double> d(num_ops, 0.0);
  d[k] = 1.0;
  return d;
}

std::vector<double> interpolate(std::size_t k1, std::size_t k2, double alpha, std::size_t num_ops) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
  auto d = inject_one_hot(k1, num_ops);
  if (k2 >= num_ops) throw std::out_of_range("operation " + std::to_string(k2) + " out of range");
  d[k1] = alpha;
  d[k2] += 1.0 - alpha;
  return d;
}

}  // namespace spatialops
