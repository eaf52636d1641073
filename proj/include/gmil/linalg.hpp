#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace gmil {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  Matrix transposed() const;
  void fill(double v);
  /// Reshapes to rows x cols filled with zeros, reusing the allocation.
  void assign_zero(std::size_t rows, std::size_t cols);

  /// "RxC", used in error messages.
  std::string shape_str() const;

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Seeded generator with a platform-independent draw sequence.
///
/// Built on mt19937_64 (whose output is fixed by the standard); the
/// distributions are implemented here because the standard library's are
/// implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n), rejection-sampled. n must be > 0.
  std::size_t below(std::size_t n);
  double normal();

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

/// Derives an independent stream seed from a base seed and a tuple of ids.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> ids);

Matrix matmul(const Matrix& a, const Matrix& b);

/// Xavier/Glorot uniform on [-sqrt(6/(rows+cols)), +sqrt(6/(rows+cols))].
Matrix xavier_init(std::size_t rows, std::size_t cols, Rng& rng);

/// Max-subtracted softmax.
Vector softmax(std::span<const double> scores);

double stable_sigmoid(double x);
double relu(double x);
double tanh_act(double x);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

bool all_finite(std::span<const double> v);

}  // namespace gmil
