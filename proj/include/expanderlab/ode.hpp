#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

#include "expanderlab/types.hpp"

namespace expanderlab {

// Explicit Runge-Kutta integrator (Dormand-Prince 5(4)) with PI step control,
// continuous dense output, and root-located stopping events.

using OdeRhs = std::function<void(double t, const double* y, double* dydt)>;

struct OdeOptions {
  double rtol = 1e-12;
  double atol = 1e-12;
  double h_init = 1e-4;
  double h_max = 1.0;
  long max_steps = 2000000;
};

struct OdeEvent {
  std::function<double(double t, const double* y)> g;
  int direction = 0;  // +1 rising zero, -1 falling, 0 either
};

// One accepted step's quartic interpolant: per component i the coefficients
// cont[5*i+0..4], evaluated with u = (t-t0)/h_poly.  h_poly is the width of
// the step the polynomial was fitted on; t1 may be pulled back to an event
// time without touching it.
struct DenseSegment {
  double t0 = 0.0, t1 = 0.0;
  double h_poly = 0.0;
  std::vector<double> cont;

  void eval(double t, std::size_t dim, double* y) const {
    const double u = (t - t0) / h_poly;
    const double v = 1.0 - u;
    for (std::size_t i = 0; i < dim; ++i) {
      const double* c = &cont[5 * i];
      y[i] = c[0] + u * (c[1] + v * (c[2] + u * (c[3] + v * c[4])));
    }
  }
};

struct OdeSolution {
  std::size_t dim = 0;
  std::vector<DenseSegment> segments;
  long steps_accepted = 0;
  long steps_rejected = 0;

  double t_begin() const { return segments.front().t0; }
  double t_end() const { return segments.back().t1; }

  // Piecewise dense evaluation; t clamped to the covered range.
  void eval(double t, double* y) const {
    const auto& segs = segments;
    if (t <= segs.front().t0) return segs.front().eval(segs.front().t0, dim, y);
    if (t >= segs.back().t1) return segs.back().eval(segs.back().t1, dim, y);
    std::size_t lo = 0, hi = segs.size() - 1;
    while (lo < hi) {
      const std::size_t mid = (lo + hi) / 2;
      if (segs[mid].t1 < t)
        lo = mid + 1;
      else
        hi = mid;
    }
    segs[lo].eval(t, dim, y);
  }

  std::vector<double> at(double t) const {
    std::vector<double> y(dim);
    eval(t, y.data());
    return y;
  }
};

struct OdeResult {
  OdeSolution sol;
  int event_index = -1;  // -1 when t_end was reached without an event
  double stop_time = 0.0;
  std::vector<double> stop_state;
};

namespace detail {

struct Dopri5Coeffs {
  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5,
                          c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187,
                          a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33,
                          a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                          a65 = -5103.0 / 18656;
  static constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113,
                          a74 = 125.0 / 192, a75 = -2187.0 / 6784,
                          a76 = 11.0 / 84;
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695,
                          e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                          e6 = 22.0 / 525, e7 = -1.0 / 40;
  static constexpr double d1 = -12715105075.0 / 11282082432.0,
                          d3 = 87487479700.0 / 32700410799.0,
                          d4 = -10690763975.0 / 1880347072.0,
                          d5 = 701980252875.0 / 199316789632.0,
                          d6 = -1453857185.0 / 822651844.0,
                          d7 = 69997945.0 / 29380423.0;
};

}  // namespace detail

// Integrates y' = f(t, y) from t0 to t_end (t_end > t0), recording every
// accepted step's dense interpolant.  Stops early at the first event zero,
// located on the dense output to ~1e-13 in t.
inline OdeResult integrate(const OdeRhs& f, double t0,
                           std::vector<double> y, double t_end,
                           const std::vector<OdeEvent>& events = {},
                           const OdeOptions& opts = {}) {
  using C = detail::Dopri5Coeffs;
  const std::size_t dim = y.size();
  if (!(t_end > t0)) throw Error("integrate: empty time interval");

  OdeResult res;
  res.sol.dim = dim;

  std::vector<double> k1(dim), k2(dim), k3(dim), k4(dim), k5(dim), k6(dim),
      k7(dim), ytmp(dim), ynew(dim), yerr(dim);
  std::vector<double> gprev(events.size());

  double t = t0;
  double h = std::min(opts.h_init, opts.h_max);
  double facold = 1e-4;
  const double safe = 0.9, beta = 0.04;
  const double expo1 = 0.2 - beta * 0.75;
  const double facc1 = 1.0 / 0.2, facc2 = 1.0 / 10.0;

  f(t, y.data(), k1.data());
  for (std::size_t e = 0; e < events.size(); ++e) gprev[e] = events[e].g(t, y.data());

  for (long step = 0; step < opts.max_steps; ++step) {
    if (t >= t_end) break;
    h = std::min({h, opts.h_max, t_end - t});
    if (h < 4.0 * std::numeric_limits<double>::epsilon() * (std::abs(t) + 1.0))
      throw StiffFailure("step size underflow at t=" + std::to_string(t));

    for (std::size_t i = 0; i < dim; ++i)
      ytmp[i] = y[i] + h * C::a21 * k1[i];
    f(t + C::c2 * h, ytmp.data(), k2.data());
    for (std::size_t i = 0; i < dim; ++i)
      ytmp[i] = y[i] + h * (C::a31 * k1[i] + C::a32 * k2[i]);
    f(t + C::c3 * h, ytmp.data(), k3.data());
    for (std::size_t i = 0; i < dim; ++i)
      ytmp[i] = y[i] + h * (C::a41 * k1[i] + C::a42 * k2[i] + C::a43 * k3[i]);
    f(t + C::c4 * h, ytmp.data(), k4.data());
    for (std::size_t i = 0; i < dim; ++i)
      ytmp[i] = y[i] + h * (C::a51 * k1[i] + C::a52 * k2[i] + C::a53 * k3[i] +
                            C::a54 * k4[i]);
    f(t + C::c5 * h, ytmp.data(), k5.data());
    for (std::size_t i = 0; i < dim; ++i)
      ytmp[i] = y[i] + h * (C::a61 * k1[i] + C::a62 * k2[i] + C::a63 * k3[i] +
                            C::a64 * k4[i] + C::a65 * k5[i]);
    f(t + h, ytmp.data(), k6.data());
    for (std::size_t i = 0; i < dim; ++i)
      ynew[i] = y[i] + h * (C::a71 * k1[i] + C::a73 * k3[i] + C::a74 * k4[i] +
                            C::a75 * k5[i] + C::a76 * k6[i]);
    f(t + h, ynew.data(), k7.data());

    double err = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      yerr[i] = h * (C::e1 * k1[i] + C::e3 * k3[i] + C::e4 * k4[i] +
                     C::e5 * k5[i] + C::e6 * k6[i] + C::e7 * k7[i]);
      const double sk =
          opts.atol + opts.rtol * std::max(std::abs(y[i]), std::abs(ynew[i]));
      err += (yerr[i] / sk) * (yerr[i] / sk);
    }
    err = std::sqrt(err / static_cast<double>(dim));

    const double fac11 = std::pow(err, expo1);
    if (err <= 1.0) {
      // Accepted: record the dense interpolant for [t, t+h].
      DenseSegment seg;
      seg.t0 = t;
      seg.t1 = t + h;
      seg.h_poly = h;
      seg.cont.resize(5 * dim);
      for (std::size_t i = 0; i < dim; ++i) {
        const double ydiff = ynew[i] - y[i];
        const double bspl = h * k1[i] - ydiff;
        seg.cont[5 * i + 0] = y[i];
        seg.cont[5 * i + 1] = ydiff;
        seg.cont[5 * i + 2] = bspl;
        seg.cont[5 * i + 3] = ydiff - h * k7[i] - bspl;
        seg.cont[5 * i + 4] =
            h * (C::d1 * k1[i] + C::d3 * k3[i] + C::d4 * k4[i] +
                 C::d5 * k5[i] + C::d6 * k6[i] + C::d7 * k7[i]);
      }
      res.sol.segments.push_back(std::move(seg));
      ++res.sol.steps_accepted;

      const double t_new = t + h;
      // Event scan over the accepted step.
      int best_event = -1;
      double best_time = t_new;
      std::vector<double> ge(dim);
      for (std::size_t e = 0; e < events.size(); ++e) {
        const double g0 = gprev[e];
        const double g1 = events[e].g(t_new, ynew.data());
        const int dirn = events[e].direction;
        const bool hit = (dirn >= 0 && g0 < 0.0 && g1 >= 0.0) ||
                         (dirn <= 0 && g0 > 0.0 && g1 <= 0.0);
        gprev[e] = g1;
        if (!hit) continue;
        double lo = t, hi = t_new;
        double glo = g0;
        const DenseSegment& sg = res.sol.segments.back();
        for (int it = 0; it < 120 && hi - lo > 1e-15 * (std::abs(hi) + 1.0);
             ++it) {
          const double mid = 0.5 * (lo + hi);
          sg.eval(mid, dim, ge.data());
          const double gm = events[e].g(mid, ge.data());
          if ((glo < 0.0) == (gm < 0.0)) {
            lo = mid;
            glo = gm;
          } else {
            hi = mid;
          }
        }
        if (hi < best_time) {
          best_time = hi;
          best_event = static_cast<int>(e);
        }
      }
      if (best_event >= 0) {
        res.event_index = best_event;
        res.stop_time = best_time;
        res.stop_state.resize(dim);
        res.sol.segments.back().eval(best_time, dim, res.stop_state.data());
        res.sol.segments.back().t1 = best_time;
        return res;
      }

      t = t_new;
      std::swap(y, ynew);
      std::swap(k1, k7);  // FSAL
      double fac = fac11 / std::pow(facold, beta);
      fac = std::max(facc2, std::min(facc1, fac / safe));
      h = h / fac;
      facold = std::max(err, 1e-4);
    } else {
      ++res.sol.steps_rejected;
      h = h / std::min(facc1, fac11 / safe);
    }
  }
  if (t < t_end)
    throw StiffFailure("maximum step count exceeded at t=" +
                       std::to_string(t));
  res.stop_time = t;
  res.stop_state = y;
  return res;
}

}  // namespace expanderlab
