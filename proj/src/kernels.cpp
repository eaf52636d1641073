#include "gmil/kernels.hpp"

#include <algorithm>
#include <string>
#include <utility>

#include "gmil/errors.hpp"

namespace gmil::kernels {
namespace {

void require(bool ok, const char* op, const Matrix& a, const Matrix& b) {
  if (!ok) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                     b.shape_str());
  }
}

void require_graph(const NeighborLists& g, const Matrix& x, const char* op) {
  if (g.num_nodes() != x.rows() || g.offsets.size() != g.num_nodes() + 1) {
    throw ShapeError(std::string(op) + ": graph has " + std::to_string(g.num_nodes()) +
                     " nodes, features are " + x.shape_str());
  }
}

// Block kernels. Each fills output rows [i0, i1); the serial and OpenMP
// drivers below share them, so every output element is reduced in the same
// order whichever driver runs.

inline constexpr std::size_t kBlock = 4;

// out rows i0..i1 of A B, where a_at(i, k) reads A(i, k) or A(k, i).
template <class At>
inline void axpy_block(std::size_t i0, std::size_t i1, std::size_t inner, const Matrix& b, At a_at,
                       Matrix& out) {
  const std::size_t n = b.cols();
  if (i1 - i0 == kBlock) {
    double* o0 = out.row(i0).data();
    double* o1 = out.row(i0 + 1).data();
    double* o2 = out.row(i0 + 2).data();
    double* o3 = out.row(i0 + 3).data();
    for (std::size_t k = 0; k < inner; ++k) {
      const double s0 = a_at(i0, k), s1 = a_at(i0 + 1, k);
      const double s2 = a_at(i0 + 2, k), s3 = a_at(i0 + 3, k);
      const double* brow = b.row(k).data();
      for (std::size_t j = 0; j < n; ++j) {
        const double bj = brow[j];
        o0[j] += s0 * bj;
        o1[j] += s1 * bj;
        o2[j] += s2 * bj;
        o3[j] += s3 * bj;
      }
    }
    return;
  }
  for (std::size_t i = i0; i < i1; ++i) {
    double* o = out.row(i).data();
    for (std::size_t k = 0; k < inner; ++k) {
      const double s = a_at(i, k);
      const double* brow = b.row(k).data();
      for (std::size_t j = 0; j < n; ++j) o[j] += s * brow[j];
    }
  }
}

inline void matmul_block(const Matrix& a, const Matrix& b, std::size_t i0, std::size_t i1,
                         Matrix& out) {
  axpy_block(i0, i1, a.cols(), b, [&](std::size_t i, std::size_t k) { return a(i, k); }, out);
}

inline void matmul_tn_block(const Matrix& a, const Matrix& b, std::size_t i0, std::size_t i1,
                            Matrix& out) {
  axpy_block(i0, i1, a.rows(), b, [&](std::size_t i, std::size_t k) { return a(k, i); }, out);
}

inline void aggregate_block(const NeighborLists& g, const Matrix& x, std::size_t i0,
                            std::size_t i1, Matrix& out) {
  const std::size_t n = x.cols();
  for (std::size_t k = i0; k < i1; ++k) {
    double* o = out.row(k).data();
    for (std::size_t j : g.of(k)) {
      const double* xrow = x.row(j).data();
      for (std::size_t c = 0; c < n; ++c) o[c] += xrow[c];
    }
    const double d = g.degrees[k];
    for (std::size_t c = 0; c < n; ++c) o[c] /= d;
  }
}

inline void aggregate_t_block(const NeighborLists& g, const Matrix& x, std::size_t i0,
                              std::size_t i1, Matrix& out) {
  const std::size_t n = x.cols();
  for (std::size_t j = i0; j < i1; ++j) {
    double* o = out.row(j).data();
    for (std::size_t k : g.of(j)) {
      const double inv = 1.0 / g.degrees[k];
      const double* xrow = x.row(k).data();
      for (std::size_t c = 0; c < n; ++c) o[c] += xrow[c] * inv;
    }
  }
}

template <class BlockFn>
void run_serial_into(Matrix& out, std::size_t rows, std::size_t cols, BlockFn&& fn) {
  out.assign_zero(rows, cols);
  for (std::size_t i = 0; i < rows; i += kBlock) fn(i, std::min(rows, i + kBlock), out);
}

template <class BlockFn>
void run_parallel_into(Matrix& out, std::size_t rows, std::size_t cols, std::size_t work,
                       BlockFn&& fn) {
  out.assign_zero(rows, cols);
  const auto blocks = static_cast<std::ptrdiff_t>((rows + kBlock - 1) / kBlock);
#pragma omp parallel for schedule(static) if (work >= kParallelThreshold)
  for (std::ptrdiff_t b = 0; b < blocks; ++b) {
    const std::size_t i = static_cast<std::size_t>(b) * kBlock;
    fn(i, std::min(rows, i + kBlock), out);
  }
}

template <bool Parallel, class BlockFn>
Matrix run(std::size_t rows, std::size_t cols, std::size_t work, BlockFn&& fn) {
  Matrix out;
  if constexpr (Parallel) {
    run_parallel_into(out, rows, cols, work, std::forward<BlockFn>(fn));
  } else {
    run_serial_into(out, rows, cols, std::forward<BlockFn>(fn));
  }
  return out;
}

template <bool Parallel>
Matrix matmul_impl(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), "matmul", a, b);
  return run<Parallel>(a.rows(), b.cols(), a.rows() * a.cols() * b.cols(),
                       [&](std::size_t i0, std::size_t i1, Matrix& o) { matmul_block(a, b, i0, i1, o); });
}

template <bool Parallel>
Matrix matmul_tn_impl(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows(), "matmul_tn", a, b);
  return run<Parallel>(a.cols(), b.cols(), a.rows() * a.cols() * b.cols(),
                       [&](std::size_t i0, std::size_t i1, Matrix& o) { matmul_tn_block(a, b, i0, i1, o); });
}

// A B^T as A (B^T): the right operand is small (a weight matrix) and the
// explicit transpose lets the inner loop vectorize.
template <bool Parallel>
Matrix matmul_nt_impl(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.cols(), "matmul_nt", a, b);
  return matmul_impl<Parallel>(a, b.transposed());
}

template <bool Parallel>
Matrix aggregate_impl(const NeighborLists& g, const Matrix& x) {
  require_graph(g, x, "aggregate");
  return run<Parallel>(x.rows(), x.cols(), g.indices.size() * x.cols(),
                       [&](std::size_t i0, std::size_t i1, Matrix& o) { aggregate_block(g, x, i0, i1, o); });
}

template <bool Parallel>
Matrix aggregate_t_impl(const NeighborLists& g, const Matrix& x) {
  require_graph(g, x, "aggregate_transposed");
  return run<Parallel>(x.rows(), x.cols(), g.indices.size() * x.cols(),
                       [&](std::size_t i0, std::size_t i1, Matrix& o) { aggregate_t_block(g, x, i0, i1, o); });
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) { return matmul_impl<true>(a, b); }
Matrix matmul_tn(const Matrix& a, const Matrix& b) { return matmul_tn_impl<true>(a, b); }
Matrix matmul_nt(const Matrix& a, const Matrix& b) { return matmul_nt_impl<true>(a, b); }
Matrix aggregate(const NeighborLists& g, const Matrix& x) { return aggregate_impl<true>(g, x); }
Matrix aggregate_transposed(const NeighborLists& g, const Matrix& x) {
  return aggregate_t_impl<true>(g, x);
}

void matmul_into(const Matrix& a, const Matrix& b, Matrix& out) {
  require(a.cols() == b.rows(), "matmul", a, b);
  run_parallel_into(out, a.rows(), b.cols(), a.rows() * a.cols() * b.cols(),
                    [&](std::size_t i0, std::size_t i1, Matrix& o) { matmul_block(a, b, i0, i1, o); });
}

void matmul_tn_into(const Matrix& a, const Matrix& b, Matrix& out) {
  require(a.rows() == b.rows(), "matmul_tn", a, b);
  run_parallel_into(out, a.cols(), b.cols(), a.rows() * a.cols() * b.cols(),
                    [&](std::size_t i0, std::size_t i1, Matrix& o) { matmul_tn_block(a, b, i0, i1, o); });
}

namespace serial {

Matrix matmul(const Matrix& a, const Matrix& b) { return matmul_impl<false>(a, b); }
Matrix matmul_tn(const Matrix& a, const Matrix& b) { return matmul_tn_impl<false>(a, b); }
Matrix matmul_nt(const Matrix& a, const Matrix& b) { return matmul_nt_impl<false>(a, b); }
Matrix aggregate(const NeighborLists& g, const Matrix& x) { return aggregate_impl<false>(g, x); }
Matrix aggregate_transposed(const NeighborLists& g, const Matrix& x) {
  return aggregate_t_impl<false>(g, x);
}

}  // namespace serial
}  // namespace gmil::kernels
