// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mgmrn {

using Index = Eigen::Index;

template <class Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;
using VectorF = Vector<float>;
using VectorD = Vector<double>;
using VectorI = Eigen::VectorXi;

/// Dense rank-4 array in batch x height x width x channel order. Sites are
/// rows of a (batch*height*width) x channels matrix; site (b, i, j) lives in
/// row (b*height + i)*width + j, so the block of one batch item is contiguous
/// and already in spatial flatten order.
template <class Scalar>
struct Tensor4 {
  Index batch = 0;
  Index height = 0;
  Index width = 0;
  Index channels = 0;
  Matrix<Scalar> data;

  Tensor4() = default;
  Tensor4(Index b, Index h, Index w, Index c)
      : batch(b), height(h), width(w), channels(c), data(b * h * w, c) {}

  static Tensor4 zero(Index b, Index h, Index w, Index c) {
    Tensor4 t(b, h, w, c);
    t.data.setZero();
    return t;
  }

  Index sites() const { return height * width; }
  Index rows() const { return batch * height * width; }
  Index row_index(Index b, Index i, Index j) const { return (b * height + i) * width + j; }

  auto site(Index b, Index i, Index j) { return data.row(row_index(b, i, j)); }
  auto site(Index b, Index i, Index j) const { return data.row(row_index(b, i, j)); }

  Scalar& at(Index b, Index i, Index j, Index c) { return data(row_index(b, i, j), c); }
  Scalar at(Index b, Index i, Index j, Index c) const { return data(row_index(b, i, j), c); }

  /// Contiguous row block of one batch item (sites() rows).
  auto item(Index b) { return data.middleRows(b * sites(), sites()); }
  auto item(Index b) const { return data.middleRows(b * sites(), sites()); }

  bool same_shape(const Tensor4& o) const {
    return batch == o.batch && height == o.height && width == o.width && channels == o.channels;
  }
  bool all_finite() const { return data.allFinite(); }
};

using Tensor4F = Tensor4<float>;
using Tensor4D = Tensor4<double>;

/// Per-item token matrices stacked along rows: the tokens of batch item b are
/// rows [b*tokens, (b+1)*tokens).
template <class Scalar>
struct TokenMatrix {
  Index batch = 0;
  Index tokens = 0;
  Index channels = 0;
  Matrix<Scalar> data;

  TokenMatrix() = default;
  TokenMatrix(Index b, Index t, Index c)
      : batch(b), tokens(t), channels(c), data(b * t, c) {}

  auto item(Index b) { return data.middleRows(b * tokens, tokens); }
  auto item(Index b) const { return data.middleRows(b * tokens, tokens); }
  bool all_finite() const { return data.allFinite(); }
};

/// Named view of one learnable parameter and its gradient accumulator.
template <class Scalar>
struct ParamRef {
  std::string name;
  Matrix<Scalar>* value = nullptr;
  Matrix<Scalar>* grad = nullptr;

  Index size() const { return value->size(); }
};

template <class Scalar>
using ParamList = std::vector<ParamRef<Scalar>>;

/// Deterministic random source. Wraps mt19937_64 but derives uniforms and
/// normals itself so streams do not depend on the standard library's
/// distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t raw() { return engine_(); }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller.
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_int: n must be positive");
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[uniform_int(i)]);
    }
  }

  std::string state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }
  void restore(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
    if (is.fail()) throw std::runtime_error("Rng::restore: malformed state string");
  }

 private:
  std::mt19937_64 engine_;
};

/// Fill with i.i.d. Gaussian entries of the given standard deviation.
template <class Scalar>
void fill_normal(Matrix<Scalar>& m, double stddev, Rng& rng) {
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = static_cast<Scalar>(stddev * rng.normal());
}

/// Stable seed for a named component of a run. Components initialized from
/// their own derived stream keep identical weights across model variants that
/// share them.
inline std::uint64_t derive_seed(std::uint64_t seed, const std::string& name) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ull;
  }
  h ^= seed + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
  h ^= h >> 33;
  h *= 0xFF51AFD7ED558CCDull;
  h ^= h >> 33;
  return h;
}

template <class To, class From>
Matrix<To> cast_matrix(const Matrix<From>& m) {
  return m.template cast<To>();
}

template <class To, class From>
Tensor4<To> cast_tensor(const Tensor4<From>& t) {
  Tensor4<To> out(t.batch, t.height, t.width, t.channels);
  out.data = t.data.template cast<To>();
  return out;
}

inline void check(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace mgmrn
