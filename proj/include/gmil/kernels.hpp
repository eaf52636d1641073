#pragma once

// Dense kernels used by the forward and backward passes.
//
// Every kernel has two implementations with identical arithmetic order per
// output element: the OpenMP one in `gmil::kernels` and the plain loop in
// `gmil::kernels::serial`, which is kept as the test reference. Because each
// output element is reduced by a single thread in the same order, the two are
// bit-identical regardless of the thread count.

#include <cstddef>
#include <span>
#include <vector>

#include "gmil/linalg.hpp"

namespace gmil {

/// Compressed row view of a 0/1 adjacency matrix plus its row degrees.
struct NeighborLists {
  std::vector<std::size_t> offsets;  // size K+1
  std::vector<std::size_t> indices;  // sorted within each row
  std::vector<double> degrees;

  std::size_t num_nodes() const noexcept { return degrees.size(); }
  std::span<const std::size_t> of(std::size_t k) const noexcept {
    return {indices.data() + offsets[k], offsets[k + 1] - offsets[k]};
  }
};

namespace kernels {

/// Work (multiply-adds) below which kernels stay single-threaded.
inline constexpr std::size_t kParallelThreshold = std::size_t{1} << 15;

/// C = A B
Matrix matmul(const Matrix& a, const Matrix& b);
/// C = A^T B
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// C = A B^T
Matrix matmul_nt(const Matrix& a, const Matrix& b);
/// out_k = (sum_{j in N(k)} x_j) / d_k, i.e. D^-1 A X.
Matrix aggregate(const NeighborLists& g, const Matrix& x);
/// (D^-1 A)^T X for symmetric A: out_j = sum_{k in N(j)} x_k / d_k.
Matrix aggregate_transposed(const NeighborLists& g, const Matrix& x);

/// Variants writing into `out`, which is reshaped and reuses its storage.
void matmul_into(const Matrix& a, const Matrix& b, Matrix& out);
void matmul_tn_into(const Matrix& a, const Matrix& b, Matrix& out);

namespace serial {
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix aggregate(const NeighborLists& g, const Matrix& x);
Matrix aggregate_transposed(const NeighborLists& g, const Matrix& x);
}  // namespace serial

}  // namespace kernels
}  // namespace gmil
