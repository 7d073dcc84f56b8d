#pragma once

#include "clipmatrix/common.hpp"

#include <cmath>

namespace clipmatrix::body {

template <typename T>
Mat3<T> skew(const Vec3<T>& w) {
  Mat3<T> k;
  k << T(0), -w.z(), w.y(),  //
      w.z(), T(0), -w.x(),   //
      -w.y(), w.x(), T(0);
  return k;
}

// Below this angle the exponential map switches to its 2-term Taylor series.
inline constexpr double kSmallAngle = 1e-8;

namespace detail {

// R = I + a K + b K^2 with a = sin(t)/t, b = (1 - cos t)/t^2.
// Also returns a' / t and b' / t (derivatives w.r.t. t divided by t), which
// the adjoint needs; both use a series below t = 1e-2 to avoid cancellation.
template <typename T>
struct RodriguesCoefficients {
  T a, b, da_over_t, db_over_t;
};

template <typename T>
RodriguesCoefficients<T> rodrigues_coefficients(T angle) {
  using std::cos;
  using std::sin;
  RodriguesCoefficients<T> c{};
  if (angle < T(kSmallAngle)) {
    c.a = T(1);
    c.b = T(0.5);
    c.da_over_t = T(0);
    c.db_over_t = T(0);
    return c;
  }
  const T t2 = angle * angle;
  const T s = sin(angle);
  const T half = sin(angle / T(2));
  c.a = s / angle;
  c.b = T(2) * half * half / t2;
  if (angle < T(1e-2)) {
    c.da_over_t = T(-1) / T(3) + t2 / T(30) - t2 * t2 / T(840);
    c.db_over_t = T(-1) / T(12) + t2 / T(180) - t2 * t2 / T(6720);
  } else {
    const T co = cos(angle);
    c.da_over_t = (angle * co - s) / (t2 * angle);
    c.db_over_t = (angle * s - T(2) * (T(1) - co)) / (t2 * t2);
  }
  return c;
}

}  // namespace detail

/// Exponential map from an axis-angle vector to a rotation matrix.
template <typename T>
Mat3<T> rodrigues(const Vec3<T>& w) {
  const T angle = w.norm();
  const auto c = detail::rodrigues_coefficients(angle);
  const Mat3<T> k = skew(w);
  return Mat3<T>::Identity() + c.a * k + c.b * (k * k);
}

/// Vector-Jacobian product of rodrigues(): given dL/dR returns dL/dw.
template <typename T>
Vec3<T> rodrigues_vjp(const Vec3<T>& w, const Mat3<T>& grad_r) {
  const T angle = w.norm();
  const auto c = detail::rodrigues_coefficients(angle);
  const Mat3<T> k = skew(w);
  const Mat3<T> k2 = k * k;
  // Shared term: d/dw_i of (a K + b K^2) through the angle is
  // w_i * (a'/t K + b'/t K^2).
  const T radial = c.da_over_t * (grad_r.cwiseProduct(k)).sum() +
                   c.db_over_t * (grad_r.cwiseProduct(k2)).sum();
  Vec3<T> out;
  for (int i = 0; i < 3; ++i) {
    Vec3<T> e = Vec3<T>::Zero();
    e[i] = T(1);
    const Mat3<T> ei = skew(e);
    const Mat3<T> d = c.a * ei + c.b * (ei * k + k * ei);
    out[i] = (grad_r.cwiseProduct(d)).sum() + w[i] * radial;
  }
  return out;
}

/// A rigid transform x -> rotation * x + translation.
template <typename T>
struct RigidTransform {
  Mat3<T> rotation = Mat3<T>::Identity();
  Vec3<T> translation = Vec3<T>::Zero();

  Vec3<T> apply(const Vec3<T>& x) const { return rotation * x + translation; }
  RigidTransform compose(const RigidTransform& inner) const {
    return {rotation * inner.rotation, rotation * inner.translation + translation};
  }
};

}  // namespace clipmatrix::body
