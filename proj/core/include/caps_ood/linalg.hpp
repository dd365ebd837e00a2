#pragma once

// Dense matrices, a portable seeded RNG, the Adam optimizer and a small
// fixed-partition parallel loop. Everything here is deterministic: results
// never depend on the number of worker threads.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "caps_ood/error.hpp"

namespace caps_ood {

template <typename T>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> values)
      : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_) {
      throw Error(ErrorCode::ShapeMismatch, "matrix value count does not match rows*cols");
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return values_.size(); }

  T& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> values_;
};

// Row-major product with 64-bit accumulation. Throws ShapeMismatch when
// a.cols() != b.rows().
template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b);

extern template Matrix<float> matmul(const Matrix<float>&, const Matrix<float>&);
extern template Matrix<double> matmul(const Matrix<double>&, const Matrix<double>&);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);

// ---------------------------------------------------------------------------
// RNG
//
// xoshiro256** (Blackman & Vigna, 2018) seeded by expanding the 64-bit seed
// through splitmix64. Uniform doubles take the top 53 bits of each draw.
// Normals use Box-Muller without caching (two uniforms per normal), so the
// stream layout is fixed and easy to replicate in other languages.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  // Independent stream for (seed, stream, index); used to give each sample of
  // a generator its own sequence.
  static Rng substream(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

  std::uint64_t next_u64();
  // Uniform in [0, 1).
  double uniform();
  // Uniform integer in [0, n), unbiased by rejection. n must be > 0.
  std::uint64_t below(std::uint64_t n);
  double normal();
  // Gamma(shape=2, scale=1), drawn as the sum of two unit exponentials.
  double gamma2();

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const auto j = below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

 private:
  std::uint64_t s_[4];
};

std::uint64_t splitmix64(std::uint64_t& state);

// ---------------------------------------------------------------------------
// Adam

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamState() = default;
  AdamState(std::size_t rows, std::size_t cols, AdamHyper hyper = {})
      : m(rows, cols), v(rows, cols), hyper(hyper) {}

  Matrix<double> m;
  Matrix<double> v;
  std::uint64_t t = 0;
  AdamHyper hyper;
};

// Bias-corrected Adam update in place. Increments state.t by one.
template <typename T>
void adam_update(std::span<T> params, std::span<const double> grads, AdamState& state);

// Value-returning form over matrices.
template <typename T>
Matrix<T> adam_step(Matrix<T> params, const Matrix<double>& grads, AdamState& state) {
  if (params.rows() != grads.rows() || params.cols() != grads.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "adam_step: parameter and gradient shapes differ");
  }
  adam_update<T>(params.values(), grads.values(), state);
  return params;
}

extern template void adam_update<float>(std::span<float>, std::span<const double>, AdamState&);
extern template void adam_update<double>(std::span<double>, std::span<const double>, AdamState&);

// ---------------------------------------------------------------------------
// Threading

void set_num_threads(unsigned n);
unsigned num_threads();

// Runs fn(task) for task in [0, n_tasks) on up to num_threads() workers.
// Callers partition work into tasks whose boundaries do not depend on the
// thread count, so any reduction over task results stays deterministic.
void parallel_for(std::size_t n_tasks, const std::function<void(std::size_t)>& fn);

}  // namespace caps_ood
