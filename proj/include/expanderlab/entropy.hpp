#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <vector>

#include "expanderlab/geometry.hpp"
#include "expanderlab/interpolate.hpp"
#include "expanderlab/numerics.hpp"
#include "expanderlab/shooting.hpp"
#include "expanderlab/types.hpp"

// Gaussian-weighted area of rotationally symmetric hypersurfaces and its
// supremum over all centers and scales.  A center is written relative to the
// symmetry axis as an axial offset y_a and a radial offset y_r; rotational
// symmetry of the surface makes the direction of the radial offset
// irrelevant, so the weighted area is an even function of y_r.

namespace expanderlab {

namespace detail {

// |S^k|.
inline double sphere_area(int k) {
  return 2.0 * std::pow(kPi, 0.5 * (k + 1)) / std::tgamma(0.5 * (k + 1));
}

// exp(-a) I_nu(a); safe for a <= ~700 where I_nu alone still fits a double.
inline double scaled_bessel_i(double nu, double a) {
  return std::exp(-a) * std::cyl_bessel_i(nu, a);
}

// Angular reduction of an off-axis Gaussian center,
//   A_n(a) = |S^{n-2}| int_0^pi exp(a (cos phi - 1)) sin^{n-2}(phi) dphi,
// so that the sphere-direction integral of exp(q w.e) over S^{n-1} equals
// exp(q) A_n(q).  A_n(0) = |S^{n-1}|; A_n decays like a^{-(n-1)/2}.
// Values and slopes are tabulated on a uniform grid and evaluated with a
// cubic Hermite patch, so the reported derivative is the exact derivative
// of the interpolated value.  Beyond the table a truncated large-argument
// expansion takes over.
struct AngularTable {
  int n = 2;
  double da = 0.01;
  double a_max = 400.0;
  std::vector<double> val, slope;
  std::array<double, 8> asym_coef{};
  std::array<double, 8> asym_pow{};

  void eval(double a, double& value, double& deriv) const {
    if (a >= a_max) {
      value = 0.0;
      deriv = 0.0;
      for (std::size_t k = 0; k < asym_coef.size(); ++k) {
        const double p = std::pow(a, asym_pow[k]);
        value += asym_coef[k] * p;
        deriv += asym_coef[k] * asym_pow[k] * p / a;
      }
      return;
    }
    const double t = a / da;
    std::size_t i = static_cast<std::size_t>(t);
    if (i + 2 > val.size()) i = val.size() - 2;
    const double u = t - static_cast<double>(i);
    const double v0 = val[i], v1 = val[i + 1];
    const double m0 = slope[i] * da, m1 = slope[i + 1] * da;
    const double u2 = u * u, u3 = u2 * u;
    value = (2 * u3 - 3 * u2 + 1) * v0 + (u3 - 2 * u2 + u) * m0 +
            (-2 * u3 + 3 * u2) * v1 + (u3 - u2) * m1;
    deriv = ((6 * u2 - 6 * u) * v0 + (3 * u2 - 4 * u + 1) * m0 +
             (-6 * u2 + 6 * u) * v1 + (3 * u2 - 2 * u) * m1) /
            da;
  }
};

inline AngularTable build_angular_table(int n) {
  AngularTable t;
  t.n = n;
  const double omega = sphere_area(n - 2);
  const double full = sphere_area(n - 1);
  const double nu = 0.5 * (n - 2);
  const std::size_t m = static_cast<std::size_t>(t.a_max / t.da) + 1;
  t.val.resize(m);
  t.slope.resize(m);
  const double c = omega * std::sqrt(kPi) * std::tgamma(0.5 * (n - 1));
  for (std::size_t i = 0; i < m; ++i) {
    const double a = t.da * static_cast<double>(i);
    if (a < 1e-4) {
      // Short series around a = 0, where the Bessel form degenerates.
      const double q = (n + 1.0) / n;
      t.val[i] = full * (1.0 - a + 0.5 * q * a * a);
      t.slope[i] = full * (-1.0 + q * a);
      continue;
    }
    if (n == 3) {
      const double e = std::exp(-2.0 * a);
      t.val[i] = 2.0 * kPi * (1.0 - e) / a;
      t.slope[i] = 2.0 * kPi * (2.0 * e / a - (1.0 - e) / (a * a));
      continue;
    }
    const double pref = c * std::pow(2.0 / a, nu);
    const double inu = scaled_bessel_i(nu, a);
    const double ilo =
        n == 2 ? scaled_bessel_i(1.0, a) : scaled_bessel_i(nu - 1.0, a);
    const double ihi = scaled_bessel_i(nu + 1.0, a);
    t.val[i] = pref * inu;
    // d/da of a^{-nu} exp(-a) I_nu(a), using I_nu' = (I_{nu-1}+I_{nu+1})/2.
    t.slope[i] =
        pref * (-nu / a * inu - inu + 0.5 * (ilo + ihi));
  }
  // Laplace expansion: substituting u = 1 - cos(phi) gives
  //   int_0^2 exp(-a u) (2u)^{(n-3)/2} (1 - u/2)^{(n-3)/2} du,
  // and expanding the last factor termwise yields the series below.
  double ck = 1.0;
  const double half = 0.5 * (n - 3);
  for (std::size_t k = 0; k < t.asym_coef.size(); ++k) {
    const double ek = 0.5 * (n - 1) + static_cast<double>(k);
    t.asym_coef[k] =
        omega * std::pow(2.0, half) * ck * std::tgamma(ek);
    t.asym_pow[k] = -ek;
    ck *= -0.5 * (half - static_cast<double>(k)) / (static_cast<double>(k) + 1.0);
  }
  return t;
}

inline const AngularTable& angular_table(int n) {
  static std::map<int, AngularTable> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, build_angular_table(n)).first;
  return it->second;
}

}  // namespace detail

inline double angular_factor(int n, double a) {
  if (n < 2) throw OutOfDomain("angular_factor requires n >= 2");
  if (a < 0.0) throw OutOfDomain("angular_factor requires a >= 0");
  double v, d;
  detail::angular_table(n).eval(a, v, d);
  return v;
}

inline double angular_factor_derivative(int n, double a) {
  if (n < 2) throw OutOfDomain("angular_factor requires n >= 2");
  if (a < 0.0) throw OutOfDomain("angular_factor requires a >= 0");
  double v, d;
  detail::angular_table(n).eval(a, v, d);
  return d;
}

// Gaussian center and scale, with the scale kept in log form so that
// optimization steps stay meaningful across decades.
struct GaussianCenter {
  double log_t0 = 0.0;
  double y_a = 0.0;
  double y_r = 0.0;
};

struct GaussianArea {
  double value = 0.0;
  std::array<double, 3> grad{};  // d/d(log_t0), d/d(y_a), d/d(y_r)
  double tail_value = 0.0;       // completed mass beyond the stored nodes
  double tail_model_err = 0.0;   // estimated error of the modeled tail mass
};

// Fixed quadrature context for one surface: the meridian is subsampled once,
// and every conical end is continued to infinity along its decaying offset
// model so that truncation of the stored curve does not bias the area.
class FSurface {
 public:
  explicit FSurface(const ProfileCurve& c, std::size_t max_segments = 2000)
      : n_(c.n), reflect_(c.symmetry == ProfileSymmetry::kReflectAcrossX0) {
    build_nodes(c, max_segments);
    if (!c.axis_start()) add_tail(c, 0);
    if (!c.axis_end()) add_tail(c, 1);
  }

  int n() const { return n_; }
  bool reflected() const { return reflect_; }
  const std::vector<EndFit>& end_fits() const { return fits_; }
  std::size_t quad_points() const { return main_.size(); }

  GaussianArea evaluate(const GaussianCenter& c) const {
    const double t0 = std::exp(c.log_t0);
    const double inv4t = 0.25 / t0;
    const double inv2t = 0.5 / t0;
    const double g = std::abs(c.y_r);
    const double sgn_yr = c.y_r > 0.0 ? 1.0 : (c.y_r < 0.0 ? -1.0 : 0.0);
    const auto& tab = detail::angular_table(n_);

    // Tail quadrature for this scale: rho = rho_end + 2 sqrt(t0) xi makes
    // the Gaussian decay O(1) wide in xi whatever t0 is.
    struct TNode {
      double x, r, rn1, w;   // offset-model point
      double xc, rc, rcn1, wc;  // straight-cone point, for the error probe
    };
    std::vector<TNode> tnodes;
    const double stretch = 2.0 * std::sqrt(t0);
    for (const auto& tl : tails_) {
      const double cphi = std::cos(tl.phi_ray), sphi = std::sin(tl.phi_ray);
      for (int panel = 0; panel < 40; ++panel) {
        for (int k = 0; k < 7; ++k) {
          const double xi =
              static_cast<double>(panel) + 0.5 * (1.0 + kGauss7X[k]);
          const double rho = tl.rho_end + stretch * xi;
          const double u = tl.sgn_u * cone_tail_offset(n_, tl.angle, rho);
          const double up =
              tl.sgn_u * (-tl.at / (rho * rho) -
                          3.0 * tl.bt / (rho * rho * rho * rho));
          TNode nd;
          nd.x = rho * cphi - u * sphi;
          nd.r = rho * sphi + u * cphi;
          nd.rn1 = std::pow(nd.r, n_ - 1);
          nd.w = 0.5 * kGauss7W[k] * stretch * std::sqrt(1.0 + up * up);
          nd.xc = rho * cphi;
          nd.rc = rho * sphi;
          nd.rcn1 = std::pow(nd.rc, n_ - 1);
          nd.wc = 0.5 * kGauss7W[k] * stretch;
          tnodes.push_back(nd);
        }
      }
    }

    struct Acc {
      double value = 0.0, d_lt = 0.0, d_ya = 0.0, d_g = 0.0;
    };
    Acc acc;          // surface with modeled tails: the reported area
    Acc cone_probe;   // tails continued as straight rays instead
    const auto add = [&](Acc& a_out, double x, double r, double rn1, double w,
                         double ya, double ya_sign) {
      const double dx = x - ya, dr = r - g;
      const double dist2 = dx * dx + dr * dr;
      const double e = std::exp(-dist2 * inv4t);
      if (e == 0.0) return;
      const double a = r * g * inv2t;
      double A, Ap;
      tab.eval(a, A, Ap);
      const double m = w * rn1 * e;
      a_out.value += m * A;
      a_out.d_ya += ya_sign * m * A * dx * inv2t;
      a_out.d_g += m * (A * dr + Ap * r) * inv2t;
      a_out.d_lt += m * (A * (dist2 * inv4t - 0.5 * n_) - Ap * a);
    };

    double tail_model = 0.0;
    const int passes = reflect_ ? 2 : 1;
    for (int pass = 0; pass < passes; ++pass) {
      const double ya = pass == 0 ? c.y_a : -c.y_a;
      const double ya_sign = pass == 0 ? 1.0 : -1.0;
      for (const auto& nd : main_)
        add(acc, nd.x, nd.r, nd.rn1, nd.w, ya, ya_sign);
      for (const auto& nd : tnodes) {
        const double before = acc.value;
        add(acc, nd.x, nd.r, nd.rn1, nd.w, ya, ya_sign);
        tail_model += acc.value - before;
        add(cone_probe, nd.xc, nd.rc, nd.rcn1, nd.wc, ya, ya_sign);
      }
    }

    const double norm = std::pow(4.0 * kPi * t0, -0.5 * n_);
    GaussianArea out;
    out.value = norm * acc.value;
    out.grad[0] = norm * acc.d_lt;
    out.grad[1] = norm * acc.d_ya;
    out.grad[2] = sgn_yr * norm * acc.d_g;
    out.tail_value = norm * tail_model;
    // The tail model corrects the straight ray at relative accuracy
    // rho^{-4}: the offset expansion carries two odd-power terms, so the
    // first neglected one is down by rho^{-4} against the leading one.
    // Scaling the size of the modeled correction by that factor estimates
    // the error of the model itself; the shortest tail dominates.
    double rho_ref = std::numeric_limits<double>::infinity();
    for (const auto& tl : tails_) rho_ref = std::min(rho_ref, tl.rho_end);
    rho_ref = std::max(1.0, rho_ref);
    out.tail_model_err = norm * std::abs(tail_model - cone_probe.value) /
                         (rho_ref * rho_ref * rho_ref * rho_ref);
    return out;
  }

 private:
  struct QNode {
    double x, r, rn1, w;
  };
  struct Tail {
    double phi_ray, rho_end, sgn_u, angle, at, bt;
  };

  static constexpr double kGauss7X[7] = {
      -0.9491079123427585, -0.7415311855993945, -0.4058451513773972, 0.0,
      0.4058451513773972,  0.7415311855993945,  0.9491079123427585};
  static constexpr double kGauss7W[7] = {
      0.1294849661688697, 0.2797053914892766, 0.3818300505051189,
      0.4179591836734694, 0.3818300505051189, 0.2797053914892766,
      0.1294849661688697};

  void build_nodes(const ProfileCurve& c, std::size_t max_segments) {
    const double g3x[3] = {-0.7745966692414834, 0.0, 0.7745966692414834};
    const double g3w[3] = {5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};
    const std::size_t segs = c.size() - 1;
    if (segs <= max_segments) {
      for (std::size_t i = 0; i < segs; ++i) {
        HermiteSegment seg(c.nodes[i], c.nodes[i + 1]);
        for (int k = 0; k < 3; ++k) {
          const double u = 0.5 * (1.0 + g3x[k]);
          const auto p = seg.position(u);
          push_node(p[0], p[1], 0.5 * g3w[k] * seg.ds);
        }
      }
    } else {
      CurveInterpolant interp(c);
      const double s0 = c.nodes.front().s, s1 = c.nodes.back().s;
      const double ds = (s1 - s0) / static_cast<double>(max_segments);
      for (std::size_t i = 0; i < max_segments; ++i) {
        const double sa = s0 + ds * static_cast<double>(i);
        for (int k = 0; k < 3; ++k) {
          const double s = sa + 0.5 * (1.0 + g3x[k]) * ds;
          const auto p = interp.at(s);
          push_node(p.x, p.r, 0.5 * g3w[k] * ds);
        }
      }
    }
  }

  void push_node(double x, double r, double w) {
    main_.push_back({x, r, std::pow(std::max(r, 0.0), n_ - 1), w});
  }

  void add_tail(const ProfileCurve& c, int which_end) {
    EndFit fit = fit_end(c, which_end);
    fits_.push_back(fit);
    Tail tl;
    tl.angle = fit.angle;
    tl.phi_ray = fit.side < 0 ? kPi - fit.angle : fit.angle;
    tl.sgn_u = fit.side < 0 ? -1.0 : 1.0;
    const auto& end_node =
        which_end == 0 ? c.nodes.front() : c.nodes.back();
    tl.rho_end = std::hypot(end_node.x, end_node.r);
    const double nm1 = static_cast<double>(n_) - 1.0;
    const double cot = 1.0 / std::tan(fit.angle);
    tl.at = -nm1 * cot;
    tl.bt = 0.5 * tl.at * (2.0 - nm1 + nm1 * cot * cot);
    tails_.push_back(tl);
  }

  int n_;
  bool reflect_;
  std::vector<QNode> main_;
  std::vector<Tail> tails_;
  std::vector<EndFit> fits_;
};

struct EntropyOptions {
  std::size_t max_segments = 2000;
  int bfgs_max_iter = 250;
  double grad_tol = 1e-8;
  double box_log_t0_lo = -6.0;
  double box_log_t0_hi = 2.0;
  double box_y_a = 4.0;
  double box_y_r = 3.0;
  // Budget for the estimated tail-model error at the maximizer, relative
  // to max(lambda, 1); beyond it the stored curve is too short to certify.
  double tail_err_budget = 1e-8;
  std::vector<GaussianCenter> starts;  // empty: a default spread
};

struct EntropyResult {
  double lambda = 0.0;
  GaussianCenter maximizer;
  bool interior = false;
  bool converged = false;
  double tail_fraction = 0.0;
  double tail_model_err = 0.0;
  double value_at_identity = 0.0;
  double cone_limit = 0.0;  // 0 when no asymptotic cone enters the problem
  bool cone_limit_attained = false;
};

namespace detail {

inline std::vector<GaussianCenter> default_entropy_starts() {
  return {{0.0, 0.0, 0.0},  {0.0, 1.5, 0.0}, {0.0, -1.5, 0.0},
          {0.0, 0.0, 1.5},  {-2.0, 0.0, 0.0}, {1.0, 0.0, 0.0}};
}

// Quadratic one-sided well outside [lo, hi]; value and derivative.
inline double box_penalty(double v, double lo, double hi, double& dv) {
  const double kp = 10.0;
  if (v > hi) {
    dv = 2.0 * kp * (v - hi);
    return kp * (v - hi) * (v - hi);
  }
  if (v < lo) {
    dv = 2.0 * kp * (v - lo);
    return kp * (v - lo) * (v - lo);
  }
  dv = 0.0;
  return 0.0;
}

// Integral of a Gaussian-localized profile along a ray from the origin.
// The optimizer box keeps the center within a few units of the vertex, so
// graded panels guarantee the coarse pass lands samples on the peak; a
// single span would see near-zero values at its first few probes and stop.
inline double ray_quadrature(const std::function<double(double)>& f) {
  static constexpr double knots[] = {0.0, 2.0, 4.0, 8.0, 24.0};
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < std::size(knots); ++i)
    acc += adaptive_simpson(f, knots[i], knots[i + 1], 3e-14);
  return acc;
}

}  // namespace detail

// Supremum of the Gaussian-weighted area over centers and scales, from a
// multistart quasi-Newton ascent boxed to a region where the quadrature
// stays resolved.  Throws TailTruncationError when the stored curve ends too
// early for the completed area to be trusted at the maximizer.
inline EntropyResult entropy(const ProfileCurve& c,
                             const EntropyOptions& opts = {}) {
  FSurface surf(c, opts.max_segments);
  const auto starts =
      opts.starts.empty() ? detail::default_entropy_starts() : opts.starts;

  const auto fg = [&](const std::vector<double>& v,
                      std::vector<double>& grad) {
    const GaussianArea fa = surf.evaluate({v[0], v[1], v[2]});
    grad.assign(fa.grad.begin(), fa.grad.end());
    double f = fa.value, dv = 0.0;
    f -= detail::box_penalty(v[0], opts.box_log_t0_lo, opts.box_log_t0_hi, dv);
    grad[0] -= dv;
    f -= detail::box_penalty(v[1], -opts.box_y_a, opts.box_y_a, dv);
    grad[1] -= dv;
    f -= detail::box_penalty(v[2], -opts.box_y_r, opts.box_y_r, dv);
    grad[2] -= dv;
    return f;
  };

  std::vector<double> best_x;
  double best_f = -1.0;
  bool best_conv = false;
  for (const auto& st : starts) {
    const auto res = maximize_bfgs(fg, {st.log_t0, st.y_a, st.y_r},
                                   opts.grad_tol, opts.bfgs_max_iter);
    const double raw = surf.evaluate({res.x[0], res.x[1], res.x[2]}).value;
    // Different starts often land on the same maximum up to roundoff; among
    // near-ties, keep the run that actually met the gradient tolerance.
    const double tie = 1e-12 * std::max(1.0, std::abs(best_f));
    if (raw > best_f + tie ||
        (raw > best_f - tie && res.converged && !best_conv)) {
      best_f = raw;
      best_x = res.x;
      best_conv = res.converged;
    }
  }

  const GaussianArea fa =
      surf.evaluate({best_x[0], best_x[1], best_x[2]});
  EntropyResult out;
  out.lambda = fa.value;
  out.maximizer = {best_x[0], best_x[1], best_x[2]};
  out.converged = best_conv;
  const double margin = 1e-3;
  out.interior = best_x[0] > opts.box_log_t0_lo + margin &&
                 best_x[0] < opts.box_log_t0_hi - margin &&
                 std::abs(best_x[1]) < opts.box_y_a - margin &&
                 std::abs(best_x[2]) < opts.box_y_r - margin;
  out.tail_fraction = fa.value > 0.0 ? fa.tail_value / fa.value : 0.0;
  out.tail_model_err = fa.tail_model_err;
  out.value_at_identity = surf.evaluate({0.0, 0.0, 0.0}).value;
  if (fa.tail_model_err > opts.tail_err_budget * std::max(fa.value, 1.0))
    throw TailTruncationError(
        "estimated tail model error " + format_g17(fa.tail_model_err) +
        " exceeds the budget at the maximizing center");
  return out;
}

// Weighted area of a cone at unit scale; scale invariance of cones makes
// every other scale equivalent to moving the center.
inline double cone_gaussian_area(const ConeSpec& cone, double y_a,
                                 double y_r) {
  cone.validate();
  const int n = cone.n;
  const double g = std::abs(y_r);
  const auto& tab = detail::angular_table(n);
  const auto ray_value = [&](double phi_ray) {
    const double cphi = std::cos(phi_ray), sphi = std::sin(phi_ray);
    const auto f = [&](double rho) {
      const double x = rho * cphi, r = rho * sphi;
      const double dx = x - y_a, dr = r - g;
      const double e = std::exp(-0.25 * (dx * dx + dr * dr));
      if (e == 0.0) return 0.0;
      double A, Ap;
      tab.eval(r * g * 0.5, A, Ap);
      return std::pow(r, n - 1) * e * A;
    };
    return detail::ray_quadrature(f);
  };
  double total = ray_value(cone.alpha_plus);
  if (cone.kind == ConeKind::kDouble)
    total += ray_value(kPi - cone.alpha_minus);
  return std::pow(4.0 * kPi, -0.5 * n) * total;
}

namespace detail {

// Value and center-gradient of the unit-scale cone area.
inline std::array<double, 3> cone_area_with_grad(const ConeSpec& cone,
                                                 double y_a, double y_r) {
  const int n = cone.n;
  const double g = std::abs(y_r);
  const double sgn_yr = y_r > 0.0 ? 1.0 : (y_r < 0.0 ? -1.0 : 0.0);
  const auto& tab = angular_table(n);
  double value = 0.0, d_ya = 0.0, d_g = 0.0;
  const auto add_ray = [&](double phi_ray) {
    const double cphi = std::cos(phi_ray), sphi = std::sin(phi_ray);
    const auto term = [&](double rho, int which) {
      const double x = rho * cphi, r = rho * sphi;
      const double dx = x - y_a, dr = r - g;
      const double e = std::exp(-0.25 * (dx * dx + dr * dr));
      if (e == 0.0) return 0.0;
      double A, Ap;
      tab.eval(r * g * 0.5, A, Ap);
      const double m = std::pow(r, n - 1) * e;
      if (which == 0) return m * A;
      if (which == 1) return m * A * 0.5 * dx;
      return m * 0.5 * (A * dr + Ap * r);
    };
    value += ray_quadrature([&](double rho) { return term(rho, 0); });
    d_ya += ray_quadrature([&](double rho) { return term(rho, 1); });
    d_g += ray_quadrature([&](double rho) { return term(rho, 2); });
  };
  add_ray(cone.alpha_plus);
  if (cone.kind == ConeKind::kDouble) add_ray(kPi - cone.alpha_minus);
  const double norm = std::pow(4.0 * kPi, -0.5 * n);
  return {norm * value, norm * d_ya, sgn_yr * norm * d_g};
}

}  // namespace detail

// Entropy of a cone: the scale degree of freedom is fixed at one, and only
// the center moves.
inline EntropyResult cone_entropy(const ConeSpec& cone,
                                  const EntropyOptions& opts = {}) {
  cone.validate();
  const auto fg = [&](const std::vector<double>& v,
                      std::vector<double>& grad) {
    const auto a = detail::cone_area_with_grad(cone, v[0], v[1]);
    grad = {a[1], a[2]};
    double f = a[0], dv = 0.0;
    f -= detail::box_penalty(v[0], -opts.box_y_a, opts.box_y_a, dv);
    grad[0] -= dv;
    f -= detail::box_penalty(v[1], -opts.box_y_r, opts.box_y_r, dv);
    grad[1] -= dv;
    return f;
  };
  const std::vector<std::array<double, 2>> starts = {
      {0.0, 0.0}, {1.2, 0.0}, {-1.2, 0.0}, {0.0, 1.0}, {2.0, 0.8}};
  std::vector<double> best_x;
  double best_f = -1.0;
  bool best_conv = false;
  for (const auto& st : starts) {
    const auto res =
        maximize_bfgs(fg, {st[0], st[1]}, opts.grad_tol, opts.bfgs_max_iter);
    const double raw =
        detail::cone_area_with_grad(cone, res.x[0], res.x[1])[0];
    const double tie = 1e-12 * std::max(1.0, std::abs(best_f));
    if (raw > best_f + tie ||
        (raw > best_f - tie && res.converged && !best_conv)) {
      best_f = raw;
      best_x = res.x;
      best_conv = res.converged;
    }
  }
  EntropyResult out;
  out.lambda = best_f;
  out.maximizer = {0.0, best_x[0], best_x[1]};
  out.converged = best_conv;
  const double margin = 1e-3;
  out.interior = std::abs(best_x[0]) < opts.box_y_a - margin &&
                 std::abs(best_x[1]) < opts.box_y_r - margin;
  out.value_at_identity = cone_gaussian_area(cone, 0.0, 0.0);
  return out;
}

// Entropy of a solved expander.  Zooming out along the expander recovers its
// asymptotic cone, so the supremum is the larger of the finite-center
// maximum over the surface and the cone's own entropy.
inline EntropyResult entropy(const ExpanderSolution& sol,
                             const EntropyOptions& opts = {}) {
  EntropyResult out = entropy(sol.profile, opts);
  const EntropyResult ce = cone_entropy(sol.cone, opts);
  out.cone_limit = ce.lambda;
  if (ce.lambda > out.lambda) {
    out.lambda = ce.lambda;
    out.cone_limit_attained = true;
  }
  return out;
}

}  // namespace expanderlab
