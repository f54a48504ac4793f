#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "expanderlab/numerics.hpp"
#include "expanderlab/types.hpp"

namespace expanderlab {

// Discrete geometry of a profile curve.  Conventions, fixed project-wide:
//   tangent T = (cos theta, sin theta), normal N = (-sin theta, cos theta),
//   kappa = d theta / d s,
//   H = kappa - (n-1) cos(theta) / r          (axis limit: n * kappa),
//   |A|^2 = kappa^2 + (n-1) cos^2(theta)/r^2  (axis limit: n * kappa^2),
//   residual = H - (pos . N) / 2.
// The residual vanishes identically on self-expanding profiles.

struct ProfileQuantities {
  std::vector<double> kappa;
  std::vector<double> mean_curvature;
  std::vector<double> second_fund_sq;  // |A|^2
  std::vector<double> residual;
  double residual_sup = 0.0;
  double max_second_fund_sq = 0.0;
};

namespace detail {

// Second-order first derivative of f(s) on a nonuniform grid.
inline double fd_central(double fm, double f0, double fp, double hm,
                         double hp) {
  return (-hp / (hm * (hm + hp))) * fm + ((hp - hm) / (hm * hp)) * f0 +
         (hm / (hp * (hm + hp))) * fp;
}

inline double fd_onesided(double f0, double f1, double f2, double h1,
                          double h2) {
  return -(2.0 * h1 + h2) / (h1 * (h1 + h2)) * f0 +
         (h1 + h2) / (h1 * h2) * f1 - h1 / (h2 * (h1 + h2)) * f2;
}

struct PhiSampleFit {
  double phi_inf = 0.0;
  double c2 = 0.0;
  double rms = 0.0;
};

// Weighted fit of position-angle samples against
//   phi(rho) = phi_inf + c2 / rho^2 + c4 / rho^4,
// with weights w = rho emphasising the far field.
inline PhiSampleFit fit_phi_samples(const std::vector<double>& rhos,
                                    const std::vector<double>& phis) {
  std::vector<std::vector<double>> rows;
  rows.reserve(rhos.size());
  for (const double rho : rhos) {
    const double ir2 = 1.0 / (rho * rho);
    rows.push_back({1.0, ir2, ir2 * ir2});
  }
  PhiSampleFit f;
  const auto beta = least_squares(rows, phis, rhos, &f.rms);
  f.phi_inf = beta[0];
  f.c2 = beta[1];
  return f;
}

}  // namespace detail

inline ProfileQuantities compute_quantities(const ProfileCurve& c) {
  const std::size_t m = c.size();
  const double nm1 = static_cast<double>(c.n - 1);
  ProfileQuantities q;
  q.kappa.resize(m);
  q.mean_curvature.resize(m);
  q.second_fund_sq.resize(m);
  q.residual.resize(m);
  const auto& nd = c.nodes;
  for (std::size_t i = 0; i < m; ++i) {
    double k;
    if (i == 0) {
      k = detail::fd_onesided(nd[0].theta, nd[1].theta, nd[2].theta,
                              nd[1].s - nd[0].s, nd[2].s - nd[1].s);
    } else if (i + 1 == m) {
      k = -detail::fd_onesided(nd[m - 1].theta, nd[m - 2].theta,
                               nd[m - 3].theta, nd[m - 1].s - nd[m - 2].s,
                               nd[m - 2].s - nd[m - 3].s);
    } else {
      k = detail::fd_central(nd[i - 1].theta, nd[i].theta, nd[i + 1].theta,
                             nd[i].s - nd[i - 1].s, nd[i + 1].s - nd[i].s);
    }
    q.kappa[i] = k;
    const double ct = std::cos(nd[i].theta), st = std::sin(nd[i].theta);
    double H, A2;
    if (nd[i].r == 0.0) {
      H = static_cast<double>(c.n) * k;
      A2 = static_cast<double>(c.n) * k * k;
    } else {
      H = k - nm1 * ct / nd[i].r;
      A2 = k * k + nm1 * ct * ct / (nd[i].r * nd[i].r);
    }
    q.mean_curvature[i] = H;
    q.second_fund_sq[i] = A2;
    const double pos_dot_n = -nd[i].x * st + nd[i].r * ct;
    q.residual[i] = H - 0.5 * pos_dot_n;
    q.residual_sup = std::max(q.residual_sup, std::abs(q.residual[i]));
    q.max_second_fund_sq = std::max(q.max_second_fund_sq, A2);
  }
  return q;
}

// Expansion pairing relative to a base point (x0, 0) on the axis and time t:
//   E = (pos - X0) . N - 2 (t - t0) H.
// At X0 = origin, t0 = 0, t = 1 this is exactly -2 * residual, so it vanishes
// on self-expanding profiles.
inline std::vector<double> expansion_quantity(const ProfileCurve& c,
                                              const ProfileQuantities& q,
                                              double x0, double t,
                                              double t0 = 0.0) {
  std::vector<double> e(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto& nd = c.nodes[i];
    const double st = std::sin(nd.theta), ct = std::cos(nd.theta);
    e[i] = -(nd.x - x0) * st + nd.r * ct -
           2.0 * (t - t0) * q.mean_curvature[i];
  }
  return e;
}

// ---------------------------------------------------------------------------
// Asymptotics: fitted cone ends.

// Fit of one open end of a profile against the angle model
//   phi(rho) = phi_inf + c2 / rho^2 + c4 / rho^4,
// where rho = |pos| and phi = atan2(r, x) in (0, pi).  The rho^-2 and rho^-4
// terms absorb the leading far-field corrections so phi_inf is unbiased to
// the fit window's rho^-6 tail.  `angle` is the cone half-angle measured from
// the axis ray the end approaches, `side` is +1 for the +x ray, -1 for the
// -x ray, 0 for a vertical (pi/2) end.
struct EndFit {
  double angle = 0.0;
  double coeff = 0.0;
  double rms = 0.0;
  double rho_min = 0.0, rho_max = 0.0;
  double decay_exponent = 0.0;  // slope of log dist-to-ray vs log rho
  int side = 0;
  std::size_t points = 0;
};

struct EndFitOptions {
  double window_fraction = 0.45;  // fit over rho >= (1-f) * rho_max
  double min_rho = 3.0;
  std::size_t min_points = 8;
  double max_rms = 1e-3;
};

// which_end: 0 fits around the first node, 1 around the last.
inline EndFit fit_end(const ProfileCurve& c, int which_end,
                      const EndFitOptions& opts = {}) {
  const auto& nd = c.nodes;
  const std::size_t m = nd.size();
  const auto node_at = [&](std::size_t j) -> const ProfileNode& {
    return which_end == 0 ? nd[j] : nd[m - 1 - j];
  };
  if (node_at(0).r == 0.0)
    throw NotConical("end touches the axis; no cone to fit");
  const double rho_end = std::hypot(node_at(0).x, node_at(0).r);
  if (rho_end < opts.min_rho)
    throw InsufficientTail("end reaches only |pos|=" + std::to_string(rho_end));
  const double rho_cut = std::max(opts.min_rho,
                                  (1.0 - opts.window_fraction) * rho_end);

  std::vector<double> phis, rhos;
  for (std::size_t j = 0; j < m; ++j) {
    const auto& p = node_at(j);
    const double rho = std::hypot(p.x, p.r);
    if (rho < rho_cut) break;  // nodes leave the window monotonically
    phis.push_back(std::atan2(p.r, p.x));
    rhos.push_back(rho);
  }
  if (rhos.size() < opts.min_points)
    throw InsufficientTail("only " + std::to_string(rhos.size()) +
                           " nodes in the cone-fit window");
  EndFit fit;
  fit.points = rhos.size();
  fit.rho_min = *std::min_element(rhos.begin(), rhos.end());
  fit.rho_max = *std::max_element(rhos.begin(), rhos.end());
  const auto pf = detail::fit_phi_samples(rhos, phis);
  fit.rms = pf.rms;
  const double phi_inf = pf.phi_inf;
  fit.coeff = pf.c2;
  if (pf.rms > opts.max_rms)
    throw NotConical("angle model misfit rms=" + std::to_string(pf.rms));
  if (!(phi_inf > 0.0 && phi_inf < kPi))
    throw NotConical("asymptotic angle outside (0, pi)");
  const double vertical_band = 1e-9;
  if (phi_inf < kPi / 2 - vertical_band) {
    fit.side = +1;
    fit.angle = phi_inf;
  } else if (phi_inf > kPi / 2 + vertical_band) {
    fit.side = -1;
    fit.angle = kPi - phi_inf;
  } else {
    fit.side = 0;
    fit.angle = kPi / 2;
  }

  // Decay exponent of the distance to the fitted asymptotic ray.
  const double ray_phi = phi_inf;
  std::vector<std::vector<double>> drows;
  std::vector<double> dvals, dw;
  for (std::size_t j = 0; j < rhos.size(); ++j) {
    const double d = rhos[j] * std::abs(std::sin(phis[j] - ray_phi));
    if (d > 1e-300) {
      drows.push_back({1.0, std::log(rhos[j])});
      dvals.push_back(std::log(d));
      dw.push_back(rhos[j]);
    }
  }
  if (dvals.size() >= 4) {
    const auto db = least_squares(drows, dvals, dw);
    fit.decay_exponent = db[1];
  } else {
    fit.decay_exponent = -1.0;  // distance below noise: treat as conical
  }
  return fit;
}

struct ConeInference {
  ConeSpec cone;
  std::vector<EndFit> fits;  // one per open end, curve order
};

// Infers the asymptotic cone of a profile from its open ends.
inline ConeInference infer_cone(const ProfileCurve& c,
                                const EndFitOptions& opts = {}) {
  const bool open0 = c.nodes.front().r > 0.0;
  const bool open1 = c.nodes.back().r > 0.0;
  if (!open0 && !open1)
    throw NotConical("profile is compact; both ends touch the axis");
  ConeInference out;
  if (open0 && open1) {
    EndFit f0 = fit_end(c, 0, opts);
    EndFit f1 = fit_end(c, 1, opts);
    if (f0.side == f1.side)
      throw NotConical("both ends approach the same axis ray");
    const EndFit& plus = f0.side >= 0 ? f0 : f1;
    const EndFit& minus = f0.side >= 0 ? f1 : f0;
    out.cone = make_double_cone(c.n, plus.angle, minus.angle);
    out.fits = {f0, f1};
  } else {
    EndFit f = fit_end(c, open0 ? 0 : 1, opts);
    out.cone = make_single_cone(c.n, f.angle);
    out.fits = {f};
  }
  return out;
}

// Checks that the profile's inferred cone matches `want` within tol.
inline ConeInference check_cone(const ProfileCurve& c, const ConeSpec& want,
                                double tol,
                                const EndFitOptions& opts = {}) {
  ConeInference inf = infer_cone(c, opts);
  if (!inf.cone.matches(want, tol))
    throw ConeMismatch("inferred cone (" + std::to_string(inf.cone.alpha_plus) +
                       ", " + std::to_string(inf.cone.alpha_minus) +
                       ") does not match the requested one");
  return inf;
}

// ---------------------------------------------------------------------------
// Universal far-field expansion.

// Leading normal offset of any self-expanding end relative to its cone ray,
//   u(rho) = a / rho + b / rho^3,
// with coefficients fixed by the cone alone.
inline double cone_tail_offset_a(std::size_t n, double alpha) {
  return -(static_cast<double>(n) - 1.0) / std::tan(alpha);
}

inline double cone_tail_offset(std::size_t n, double alpha, double rho) {
  const double nm1 = static_cast<double>(n) - 1.0;
  const double cot = 1.0 / std::tan(alpha);
  const double a = -nm1 * cot;
  const double b = 0.5 * a * (2.0 - nm1 + nm1 * cot * cot);
  return a / rho + b / (rho * rho * rho);
}

// Distance from a point of the half-plane {r >= 0} to a cone's profile rays.
inline double distance_to_cone(double x, double r, const ConeSpec& cone) {
  const auto ray_dist = [&](double dx, double dr) {
    const double t = x * dx + r * dr;  // projection onto the unit ray
    if (t <= 0.0) return std::hypot(x, r);
    return std::hypot(x - t * dx, r - t * dr);
  };
  double d = ray_dist(std::cos(cone.alpha_plus), std::sin(cone.alpha_plus));
  if (cone.kind == ConeKind::kDouble)
    d = std::min(d, ray_dist(-std::cos(cone.alpha_minus),
                             std::sin(cone.alpha_minus)));
  return d;
}

// ---------------------------------------------------------------------------
// Separation asymptotics between two nearby ends.

struct SeparationFit {
  double power = 0.0;          // exponent p in u ~ rho^-p * exp(-g rho^2)
  double gaussian_rate = 0.0;  // g
  double amplitude_log = 0.0;
  std::size_t points = 0;
};

// Fits log|u| = c - p log(rho) - g rho^2 over samples (rho_i, u_i).
inline SeparationFit fit_separation(const std::vector<double>& rho,
                                    const std::vector<double>& u) {
  std::vector<std::vector<double>> rows;
  std::vector<double> vals;
  for (std::size_t i = 0; i < rho.size(); ++i) {
    const double a = std::abs(u[i]);
    if (a < 1e-290 || !std::isfinite(a)) continue;
    rows.push_back({1.0, -std::log(rho[i]), -rho[i] * rho[i]});
    vals.push_back(std::log(a));
  }
  if (vals.size() < 6)
    throw NotSeparated("too few usable separation samples");
  const auto beta = least_squares(rows, vals, {});
  SeparationFit fit;
  fit.amplitude_log = beta[0];
  fit.power = beta[1];
  fit.gaussian_rate = beta[2];
  fit.points = vals.size();
  return fit;
}

}  // namespace expanderlab
