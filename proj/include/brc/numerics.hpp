// Dense kernels, nonlinearities and seeded random generation shared by every
// other part of the library. Everything is templated on the scalar type; the
// library is exercised with double throughout.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace brc {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = Matrix<double>;
using VectorXd = Vector<double>;

/// Raised whenever a caller breaks an operation's shape or range contract.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractError(message);
}

inline std::string shape_str(Index rows, Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

template <typename A, typename B>
typename A::PlainObject matmul(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  require(a.cols() == b.rows(), "matmul: " + shape_str(a.rows(), a.cols()) + " times " +
                                    shape_str(b.rows(), b.cols()));
  return a * b;
}

template <typename A, typename B>
typename A::PlainObject hadamard(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          "hadamard: " + shape_str(a.rows(), a.cols()) + " vs " + shape_str(b.rows(), b.cols()));
  return a.cwiseProduct(b);
}

/// Elementwise tanh as sign(x) (1 - e) / (1 + e) with e = exp(-2|x|). Eigen
/// vectorizes exp but not tanh for double; absolute error stays below 1e-15.
template <typename Derived>
typename Derived::PlainObject tanh_array(const Eigen::ArrayBase<Derived>& x) {
  using S = typename Derived::Scalar;
  const typename Derived::PlainObject v = x;
  const typename Derived::PlainObject e = (S(-2) * v.abs()).exp();
  return v.sign() * (S(1) - e) / (S(1) + e);
}

template <typename Derived>
typename Derived::PlainObject tanh_map(const Eigen::MatrixBase<Derived>& v) {
  return tanh_array(v.array()).matrix();
}

// sigma(x) = 1/(1+exp(-x)) written as 0.5 + 0.5 tanh(x/2): identical in exact
// arithmetic and free of overflow for large |x|.
template <typename Derived>
typename Derived::PlainObject sigmoid_map(const Eigen::MatrixBase<Derived>& v) {
  using S = typename Derived::Scalar;
  return (S(0.5) + S(0.5) * tanh_array(S(0.5) * v.array())).matrix();
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  return Scalar(0.5) + Scalar(0.5) * std::tanh(Scalar(0.5) * x);
}

/// Deterministic random stream.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. Uniform reals take the top 53 bits of one draw; normals use the
/// Box-Muller transform on two uniforms and cache the second variate. No
/// std::*_distribution is involved, so streams are identical across standard
/// libraries and platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n), unbiased via rejection.
  std::uint64_t below(std::uint64_t n) {
    require(n > 0, "Rng::below: empty range");
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t draw = engine_();
    while (draw >= limit) draw = engine_();
    return draw % n;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * M_PI * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  /// Independent child stream, e.g. one per worker or per purpose.
  Rng split(std::uint64_t stream) const { return Rng(mix(seed_ ^ mix(stream + 0x51ed27))); }

  /// SplitMix64 finalizer.
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

template <typename Scalar>
Matrix<Scalar> uniform_matrix(Index rows, Index cols, Scalar lo, Scalar hi, Rng& rng) {
  Matrix<Scalar> m(rows, cols);
  // Row-major fill order so the stream does not depend on storage order.
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = Scalar(rng.uniform(double(lo), double(hi)));
  return m;
}

template <typename Scalar>
Vector<Scalar> uniform_vector(Index n, Scalar lo, Scalar hi, Rng& rng) {
  Vector<Scalar> v(n);
  for (Index i = 0; i < n; ++i) v(i) = Scalar(rng.uniform(double(lo), double(hi)));
  return v;
}

/// Glorot-uniform: entries uniform in +-sqrt(6 / (rows + cols)).
template <typename Scalar>
Matrix<Scalar> glorot_init(Index rows, Index cols, Rng& rng) {
  require(rows >= 1 && cols >= 1, "glorot_init: empty shape");
  const Scalar limit = std::sqrt(Scalar(6) / Scalar(rows + cols));
  return uniform_matrix<Scalar>(rows, cols, -limit, limit, rng);
}

template <typename Scalar>
Vector<Scalar> randn(Index n, Rng& rng) {
  require(n >= 1, "randn: n must be positive");
  Vector<Scalar> v(n);
  for (Index i = 0; i < n; ++i) v(i) = Scalar(rng.normal());
  return v;
}

}  // namespace brc
