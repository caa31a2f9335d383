#pragma once

#include <array>
#include <cmath>
#include <type_traits>
#include <vector>

#include <Eigen/Core>

namespace clfmpc {

/// Forward-mode dual number carrying a fixed-width gradient.
///
/// `T` is the value type. It is normally `double`, but may itself be a Dual,
/// which gives exact second derivatives through nesting. Only the primitives
/// defined in this header (+, -, *, /, sin, cos, exp, log, sqrt, pow) have
/// overloads, so any other function applied to a Dual fails to compile.
template <typename T, int Width>
struct Dual {
  static_assert(Width > 0, "Dual width must be positive");

  T value{};
  std::array<T, Width> partials{};

  Dual() = default;
  // Implicit so constants mix naturally into templated model code.
  Dual(double v) : value(v) {}  // NOLINT
  template <typename U = T, typename = std::enable_if_t<!std::is_same_v<U, double>>>
  Dual(const T& v) : value(v) {}  // NOLINT
  Dual(const T& v, const std::array<T, Width>& d) : value(v), partials(d) {}

  /// Independent variable `index` of the seed with value `v`.
  static Dual variable(const T& v, int index) {
    Dual out(v);
    out.partials[index] = T(1.0);
    return out;
  }

  Dual& operator+=(const Dual& o) {
    value += o.value;
    for (int i = 0; i < Width; ++i) partials[i] += o.partials[i];
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    value -= o.value;
    for (int i = 0; i < Width; ++i) partials[i] -= o.partials[i];
    return *this;
  }
  Dual& operator*=(const Dual& o) {
    for (int i = 0; i < Width; ++i) partials[i] = partials[i] * o.value + value * o.partials[i];
    value *= o.value;
    return *this;
  }
  Dual& operator/=(const Dual& o) {
    const T q = value / o.value;
    for (int i = 0; i < Width; ++i) partials[i] = (partials[i] - q * o.partials[i]) / o.value;
    value = q;
    return *this;
  }
  Dual& operator*=(double s) {
    value *= s;
    for (auto& p : partials) p *= s;
    return *this;
  }
  Dual& operator/=(double s) {
    value /= s;
    for (auto& p : partials) p /= s;
    return *this;
  }
};

template <typename T>
struct is_dual : std::false_type {};
template <typename T, int W>
struct is_dual<Dual<T, W>> : std::true_type {};
template <typename T>
inline constexpr bool is_dual_v = is_dual<T>::value;

namespace detail {

// f(x) with f'(x) given, applied through the chain rule.
template <typename T, int W>
Dual<T, W> chain(const Dual<T, W>& x, const T& fx, const T& dfx) {
  Dual<T, W> out(fx);
  for (int i = 0; i < W; ++i) out.partials[i] = dfx * x.partials[i];
  return out;
}

}  // namespace detail

template <typename T, int W>
Dual<T, W> operator-(const Dual<T, W>& a) {
  Dual<T, W> out(-a.value);
  for (int i = 0; i < W; ++i) out.partials[i] = -a.partials[i];
  return out;
}
template <typename T, int W>
Dual<T, W> operator+(const Dual<T, W>& a) {
  return a;
}

template <typename T, int W>
Dual<T, W> operator+(Dual<T, W> a, const Dual<T, W>& b) {
  return a += b;
}
template <typename T, int W>
Dual<T, W> operator-(Dual<T, W> a, const Dual<T, W>& b) {
  return a -= b;
}
template <typename T, int W>
Dual<T, W> operator*(Dual<T, W> a, const Dual<T, W>& b) {
  return a *= b;
}
template <typename T, int W>
Dual<T, W> operator/(Dual<T, W> a, const Dual<T, W>& b) {
  return a /= b;
}

template <typename T, int W>
Dual<T, W> operator+(Dual<T, W> a, double b) {
  a.value += b;
  return a;
}
template <typename T, int W>
Dual<T, W> operator+(double a, Dual<T, W> b) {
  b.value += a;
  return b;
}
template <typename T, int W>
Dual<T, W> operator-(Dual<T, W> a, double b) {
  a.value -= b;
  return a;
}
template <typename T, int W>
Dual<T, W> operator-(double a, const Dual<T, W>& b) {
  return a + (-b);
}
template <typename T, int W>
Dual<T, W> operator*(Dual<T, W> a, double b) {
  return a *= b;
}
template <typename T, int W>
Dual<T, W> operator*(double a, Dual<T, W> b) {
  return b *= a;
}
template <typename T, int W>
Dual<T, W> operator/(Dual<T, W> a, double b) {
  return a /= b;
}
template <typename T, int W>
Dual<T, W> operator/(double a, const Dual<T, W>& b) {
  return Dual<T, W>(a) / b;
}

template <typename T, int W>
bool operator<(const Dual<T, W>& a, const Dual<T, W>& b) {
  return a.value < b.value;
}
template <typename T, int W>
bool operator>(const Dual<T, W>& a, const Dual<T, W>& b) {
  return a.value > b.value;
}
template <typename T, int W>
bool operator<=(const Dual<T, W>& a, const Dual<T, W>& b) {
  return a.value <= b.value;
}
template <typename T, int W>
bool operator>=(const Dual<T, W>& a, const Dual<T, W>& b) {
  return a.value >= b.value;
}
template <typename T, int W>
bool operator==(const Dual<T, W>& a, const Dual<T, W>& b) {
  return a.value == b.value;
}
template <typename T, int W>
bool operator!=(const Dual<T, W>& a, const Dual<T, W>& b) {
  return a.value != b.value;
}

template <typename T, int W>
Dual<T, W> sin(const Dual<T, W>& x) {
  using std::cos;
  using std::sin;
  return detail::chain(x, T(sin(x.value)), T(cos(x.value)));
}
template <typename T, int W>
Dual<T, W> cos(const Dual<T, W>& x) {
  using std::cos;
  using std::sin;
  return detail::chain(x, T(cos(x.value)), T(-sin(x.value)));
}
template <typename T, int W>
Dual<T, W> exp(const Dual<T, W>& x) {
  using std::exp;
  const T e = exp(x.value);
  return detail::chain(x, e, e);
}
template <typename T, int W>
Dual<T, W> log(const Dual<T, W>& x) {
  using std::log;
  return detail::chain(x, T(log(x.value)), T(1.0 / x.value));
}
template <typename T, int W>
Dual<T, W> sqrt(const Dual<T, W>& x) {
  using std::sqrt;
  const T s = sqrt(x.value);
  return detail::chain(x, s, T(0.5 / s));
}
template <typename T, int W>
Dual<T, W> pow(const Dual<T, W>& x, double p) {
  using std::pow;
  return detail::chain(x, T(pow(x.value, p)), T(p * pow(x.value, p - 1.0)));
}

/// Innermost floating-point value of a (possibly nested) dual.
inline double value_of(double x) { return x; }
template <typename T, int W>
double value_of(const Dual<T, W>& x) {
  return value_of(x.value);
}

/// Seeds `w` as independent variables 0..In-1.
template <int In>
Eigen::Matrix<Dual<double, In>, In, 1> seed(const Eigen::Matrix<double, In, 1>& w) {
  Eigen::Matrix<Dual<double, In>, In, 1> out;
  for (int i = 0; i < In; ++i) out(i) = Dual<double, In>::variable(w(i), i);
  return out;
}

/// Exact Jacobian of `fn` at `w` by forward-mode propagation.
///
/// `fn` must be generic in its scalar type and return a fixed-size column
/// vector of that scalar.
template <int In, typename Fn>
auto jacobian(Fn&& fn, const Eigen::Matrix<double, In, 1>& w) {
  const auto out = fn(seed<In>(w));
  constexpr int Out = std::decay_t<decltype(out)>::RowsAtCompileTime;
  Eigen::Matrix<double, Out, In> jac(out.rows(), In);
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    for (int c = 0; c < In; ++c) jac(r, c) = out(r).partials[c];
  }
  return jac;
}

/// Value and Jacobian in one sweep.
template <int In, typename Fn>
auto value_and_jacobian(Fn&& fn, const Eigen::Matrix<double, In, 1>& w) {
  const auto out = fn(seed<In>(w));
  constexpr int Out = std::decay_t<decltype(out)>::RowsAtCompileTime;
  Eigen::Matrix<double, Out, 1> value(out.rows());
  Eigen::Matrix<double, Out, In> jac(out.rows(), In);
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    value(r) = out(r).value;
    for (int c = 0; c < In; ++c) jac(r, c) = out(r).partials[c];
  }
  return std::make_pair(value, jac);
}

/// Dense block of a sparse Jacobian: `values(i, j)` is d row[i] / d col[j].
struct JacobianBlock {
  std::vector<Eigen::Index> rows;
  std::vector<Eigen::Index> cols;
  Eigen::MatrixXd values;
};

}  // namespace clfmpc

namespace Eigen {

template <typename T, int W>
struct NumTraits<clfmpc::Dual<T, W>> : GenericNumTraits<double> {
  using Real = clfmpc::Dual<T, W>;
  using NonInteger = clfmpc::Dual<T, W>;
  using Nested = clfmpc::Dual<T, W>;
  using Literal = double;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 1 + W,
    AddCost = 1 + W,
    MulCost = 1 + 2 * W,
  };
};

template <typename T, int W, typename BinaryOp>
struct ScalarBinaryOpTraits<clfmpc::Dual<T, W>, double, BinaryOp> {
  using ReturnType = clfmpc::Dual<T, W>;
};
template <typename T, int W, typename BinaryOp>
struct ScalarBinaryOpTraits<double, clfmpc::Dual<T, W>, BinaryOp> {
  using ReturnType = clfmpc::Dual<T, W>;
};

}  // namespace Eigen
