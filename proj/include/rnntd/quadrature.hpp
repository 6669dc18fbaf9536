#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <queue>
#include <string>
#include <vector>

#include "rnntd/errors.hpp"

namespace rnntd {

struct QuadratureOptions {
  double rel_tol = 1e-10;
  double abs_tol = 0.0;
  int max_intervals = 4000;
};

namespace detail {

// 15-point Kronrod extension of the 7-point Gauss rule on [-1, 1].
inline constexpr std::array<double, 8> kKronrodNodes{
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
inline constexpr std::array<double, 8> kKronrodWeights{
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
inline constexpr std::array<double, 4> kGaussWeights{
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct Segment {
  double a, b, value, error;
  bool operator<(const Segment& other) const { return error < other.error; }
};

template <typename F>
Segment kronrod15(F& f, double a, double b) {
  const double center = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  const double fc = f(center);
  double kronrod = fc * kKronrodWeights[7];
  double gauss = fc * kGaussWeights[3];
  for (int j = 0; j < 7; ++j) {
    const double dx = half * kKronrodNodes[j];
    const double fsum = f(center - dx) + f(center + dx);
    kronrod += kKronrodWeights[j] * fsum;
    if (j % 2 == 1) gauss += kGaussWeights[j / 2] * fsum;
  }
  kronrod *= half;
  gauss *= half;
  if (!std::isfinite(kronrod)) throw NumericalError("quadrature: integrand is not finite");
  return {a, b, kronrod, std::abs(kronrod - gauss)};
}

template <typename F>
double integrate_finite(F& f, double a, double b, const QuadratureOptions& options) {
  std::priority_queue<detail::Segment> heap;
  const auto first = detail::kronrod15(f, a, b);
  double total = first.value;
  double error = first.error;
  heap.push(first);
  int intervals = 1;
  double frozen = 0.0;
  while (error > std::max(options.abs_tol, options.rel_tol * std::abs(total))) {
    if (intervals >= options.max_intervals)
      throw QuadratureError("quadrature did not converge (estimate " + std::to_string(total) +
                                ", error " + std::to_string(error) + ")",
                            total, error);
    const auto worst = heap.top();
    heap.pop();
    const double mid = 0.5 * (worst.a + worst.b);
    if (!(mid > worst.a && mid < worst.b)) {
      // Segment shrank to machine resolution; keep its value, drop its error.
      frozen += worst.value;
      error -= worst.error;
      if (heap.empty()) break;
      continue;
    }
    const auto left = detail::kronrod15(f, worst.a, mid);
    const auto right = detail::kronrod15(f, mid, worst.b);
    total += left.value + right.value - worst.value;
    error += left.error + right.error - worst.error;
    heap.push(left);
    heap.push(right);
    ++intervals;
  }
  // Re-sum from the leaves; the running total accumulates cancellation error.
  double resummed = frozen;
  while (!heap.empty()) {
    resummed += heap.top().value;
    heap.pop();
  }
  return resummed;
}

}  // namespace detail

/// Globally adaptive Gauss-Kronrod (7/15) integration of f over [a, b].
///
/// The per-segment error is |K15 - G7|, the gap between the 15-point rule and
/// the embedded 7-point rule. The segment with the largest error is bisected
/// until the summed error falls below max(abs_tol, rel_tol * |result|).
/// b may be +infinity; the tail is mapped onto [0, 1) by t = a + u / (1 - u).
/// Throws QuadratureError (carrying the best estimate) when max_intervals is hit.
template <typename F>
double integrate(F&& f, double a, double b, const QuadratureOptions& options = {}) {
  if (std::isinf(b) && b > 0) {
    if (!std::isfinite(a)) throw NumericalError("quadrature: unsupported interval");
    auto mapped = [&f, a](double u) {
      const double one_minus = 1.0 - u;
      return f(a + u / one_minus) / (one_minus * one_minus);
    };
    return detail::integrate_finite(mapped, 0.0, 1.0, options);
  }
  if (!(std::isfinite(a) && std::isfinite(b)))
    throw NumericalError("quadrature: unsupported interval");
  if (a == b) return 0.0;
  if (b < a) return -detail::integrate_finite(f, b, a, options);
  return detail::integrate_finite(f, a, b, options);
}

}  // namespace rnntd
