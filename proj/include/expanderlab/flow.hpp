#pragma once
// Rescaled mean curvature flow of meridian profiles.  The normal speed on
// the rescaled slice equals the stationarity defect of the profile, so
// certified expanders are fixed points of the discrete update as well.
//
// Monitored quantities per accepted step:
//   min_eo           minimum of the oriented expansion field on the slice,
//   psi_bound_margin slack of the mean-convexity lower bound c*psi_beta,
//   residual_sup     stationarity defect sup norm,
//   max_a            sup of |A|.
// A run started from one-signed initial data keeps that sign; the driver
// enforces this together with the lower bound when `certified` is set.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "expanderlab/entropy.hpp"
#include "expanderlab/geometry.hpp"
#include "expanderlab/interpolate.hpp"
#include "expanderlab/numerics.hpp"
#include "expanderlab/shooting.hpp"
#include "expanderlab/stability.hpp"
#include "expanderlab/types.hpp"

namespace expanderlab {

// --------------------------------------------------------------------------
// Comparison profile psi_beta(s) = s^-beta exp(-beta s) and its second
// derivative.  Positive, strictly decreasing, log-convex on s > 0.

inline double psi_beta(double beta, double s) {
  if (!(beta > 0.0)) throw OutOfDomain("psi_beta: beta must be positive");
  if (!(s > 0.0)) throw OutOfDomain("psi_beta: s must be positive");
  const double le = -beta * (std::log(s) + s);
  return le < -745.0 ? 0.0 : std::exp(le);
}

inline double psi_beta_pp(double beta, double s) {
  if (!(beta > 0.0)) throw OutOfDomain("psi_beta_pp: beta must be positive");
  if (!(s > 0.0)) throw OutOfDomain("psi_beta_pp: s must be positive");
  const double poly = beta * (beta + 1.0) + 2.0 * beta * beta * s +
                      beta * beta * s * s;
  const double le = -(beta + 2.0) * std::log(s) - beta * s;
  return le < -745.0 ? 0.0 : poly * std::exp(le);
}

// Shadow radius 1 + |x|^2 + 2n(t-1) of the unrescaled slice at time t,
// expressed through the rescaled squared radius |y|^2 = |x|^2 / t.
inline double varrho(int n, double rho_sq_rescaled, double t) {
  return 1.0 + t * rho_sq_rescaled + 2.0 * n * (t - 1.0);
}

// Gaussian density of the round k-sphere at its self-shrinking scale.
inline double round_sphere_entropy(int k) {
  if (k < 1) throw OutOfDomain("round_sphere_entropy needs k >= 1");
  return detail::sphere_area(k) *
         std::pow(k / (2.0 * kPi * std::exp(1.0)), 0.5 * k);
}

// --------------------------------------------------------------------------
// Mean-convexity certificate: the oriented expansion field E of the initial
// slice satisfies E >= c * psi_beta(varrho) with the stored orientation.

struct ConvexityCertificate {
  double c = 0.0;
  double beta = 0.0;
  int sigma = +1;  // oriented field is sigma * (expansion field with stored N)
  double verified_through = 1.0;  // unrescaled time the bound was checked to
};

namespace detail {

// First-derivative weights of a 5-point stencil at evaluation point z,
// exact for quartics on arbitrary node placements.
inline std::array<double, 5> d1_weights(double z, const double* x) {
  double C[5][2] = {};
  C[0][0] = 1.0;
  double c1 = 1.0, c4 = x[0] - z;
  for (int i = 1; i < 5; ++i) {
    double c2 = 1.0;
    const double c5 = c4;
    c4 = x[i] - z;
    for (int j = 0; j < i; ++j) {
      const double c3 = x[i] - x[j];
      c2 *= c3;
      if (j == i - 1) {
        C[i][1] = c1 * (C[i - 1][0] - c5 * C[i - 1][1]) / c2;
        C[i][0] = -c1 * c5 * C[i - 1][0] / c2;
      }
      C[j][1] = (c4 * C[j][1] - C[j][0]) / c3;
      C[j][0] = c4 * C[j][0] / c3;
    }
    c1 = c2;
  }
  return {C[0][1], C[1][1], C[2][1], C[3][1], C[4][1]};
}

// Arclength derivative of a nodal field through the 5-point stencils.
inline std::vector<double> d1_field(const std::vector<double>& s,
                                    const std::vector<double>& f) {
  const std::size_t m = s.size();
  if (m < 5) throw InsufficientResolution("d1_field needs 5 nodes");
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t lo = i < 2 ? 0 : std::min(i - 2, m - 5);
    const std::array<double, 5> w = d1_weights(s[i], s.data() + lo);
    double acc = 0.0;
    for (int k = 0; k < 5; ++k) acc += w[k] * f[lo + k];
    out[i] = acc;
  }
  return out;
}

// High-order counterpart of the profile quantities, used for the flow
// velocity and every monitor so the discrete equilibrium zeroes the same
// operator the monitors measure.
struct FlowQuantities {
  std::vector<double> kappa, mean_curvature, residual;
  double residual_sup = 0.0;
  double max_a2 = 0.0;
};

inline FlowQuantities flow_quantities(const ProfileCurve& c) {
  const std::size_t m = c.nodes.size();
  std::vector<double> s(m), th(m);
  for (std::size_t i = 0; i < m; ++i) {
    s[i] = c.nodes[i].s;
    th[i] = c.nodes[i].theta;
  }
  FlowQuantities q;
  q.kappa = d1_field(s, th);
  // Genuine axis caps get a reflection-symmetric stencil: the deviation of
  // theta from +-pi/2 is odd across the cap, so ghost values mirror the
  // interior ones.  The one-sided stencil has the same order but feeds an
  // asymmetric loop through the cap motion that amplifies slowly under the
  // flow.
  if (c.nodes.front().r == 0.0) {
    const double sc = s[0], tc = th[0];
    const std::array<double, 5> xs = {2.0 * sc - s[2], 2.0 * sc - s[1], sc,
                                      s[1], s[2]};
    const std::array<double, 5> fs = {2.0 * tc - th[2], 2.0 * tc - th[1], tc,
                                      th[1], th[2]};
    const std::array<double, 5> w = d1_weights(sc, xs.data());
    double acc = 0.0;
    for (int k = 0; k < 5; ++k) acc += w[k] * fs[k];
    q.kappa[0] = acc;
  }
  if (c.nodes.back().r == 0.0) {
    const double sc = s[m - 1], tc = th[m - 1];
    const std::array<double, 5> xs = {s[m - 3], s[m - 2], sc,
                                      2.0 * sc - s[m - 2], 2.0 * sc - s[m - 3]};
    const std::array<double, 5> fs = {th[m - 3], th[m - 2], tc,
                                      2.0 * tc - th[m - 2],
                                      2.0 * tc - th[m - 3]};
    const std::array<double, 5> w = d1_weights(sc, xs.data());
    double acc = 0.0;
    for (int k = 0; k < 5; ++k) acc += w[k] * fs[k];
    q.kappa[m - 1] = acc;
  }
  q.mean_curvature.resize(m);
  q.residual.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    const ProfileNode& nd = c.nodes[i];
    const bool ax = (i == 0 || i + 1 == m) && nd.r == 0.0;
    const double ct = std::cos(nd.theta), st = std::sin(nd.theta);
    double H, a2;
    if (ax) {
      H = c.n * q.kappa[i];
      a2 = c.n * q.kappa[i] * q.kappa[i];
    } else {
      H = q.kappa[i] - (c.n - 1) * ct / nd.r;
      a2 = q.kappa[i] * q.kappa[i] +
           (c.n - 1) * ct * ct / (nd.r * nd.r);
    }
    const double posn = -nd.x * st + nd.r * ct;
    q.mean_curvature[i] = H;
    q.residual[i] = H - 0.5 * posn;
    q.residual_sup = std::max(q.residual_sup, std::abs(q.residual[i]));
    q.max_a2 = std::max(q.max_a2, a2);
  }
  return q;
}

// Oriented expansion field on the rescaled slice: -2 * residual per node.
inline std::vector<double> expansion_field(const FlowQuantities& q) {
  std::vector<double> e(q.residual.size());
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = -2.0 * q.residual[i];
  return e;
}

}  // namespace detail

// Fits (sigma, c, beta) from the expansion field of a one-signed profile.
// The decay rate comes from a two-regressor fit that separates the power
// part from the Gaussian part; c is set with a 10 percent safety factor.
inline ConvexityCertificate fit_certificate(const ProfileCurve& c,
                                            double eo_floor = 1e-8,
                                            double fit_rho_min = 5.0) {
  c.validate();
  const detail::FlowQuantities q = detail::flow_quantities(c);
  const std::vector<double> et = detail::expansion_field(q);
  double peak = 0.0;
  std::size_t at = 0;
  for (std::size_t i = 0; i < et.size(); ++i)
    if (std::abs(et[i]) > peak) {
      peak = std::abs(et[i]);
      at = i;
    }
  if (!(peak > 10.0 * eo_floor))
    throw OutOfDomain("fit_certificate: expansion field is below the noise floor");
  ConvexityCertificate cert;
  cert.sigma = et[at] > 0.0 ? +1 : -1;
  std::vector<double> lu_all, le_all, u_all;
  std::vector<double> lu_tail, le_tail, u_tail;
  for (std::size_t i = 0; i < et.size(); ++i) {
    const double e = cert.sigma * et[i];
    if (e < -eo_floor)
      throw OutOfDomain("fit_certificate: expansion field changes sign");
    if (e <= std::max(eo_floor, 1e-12 * peak)) continue;
    const double rho2 = c.nodes[i].x * c.nodes[i].x + c.nodes[i].r * c.nodes[i].r;
    const double u = varrho(c.n, rho2, 1.0);
    u_all.push_back(u);
    lu_all.push_back(std::log(u));
    le_all.push_back(std::log(e));
    if (rho2 >= fit_rho_min * fit_rho_min) {
      u_tail.push_back(u);
      lu_tail.push_back(std::log(u));
      le_tail.push_back(std::log(e));
    }
  }
  if (u_all.size() < 8)
    throw OutOfDomain("fit_certificate: too few usable nodes");
  // The decay rate is a tail property, and the Gaussian factor of the field
  // is known exactly; removing it before the fit leaves the power part as
  // the single regressor.
  const bool tail = u_tail.size() >= 8;
  const std::vector<double>& lu = tail ? lu_tail : lu_all;
  const std::vector<double>& le = tail ? le_tail : le_all;
  const std::vector<double>& uf = tail ? u_tail : u_all;
  std::vector<std::vector<double>> rows;
  std::vector<double> ys;
  rows.reserve(lu.size());
  for (std::size_t k = 0; k < lu.size(); ++k) {
    rows.push_back({1.0, lu[k]});
    ys.push_back(le[k] + 0.25 * uf[k]);
  }
  const std::vector<double> coef = least_squares(rows, ys, {});
  // The envelope must decay no slower than the Gaussian weight in the far
  // field, which pins beta strictly above 1/4 regardless of the fitted slope.
  cert.beta = std::min(60.0, std::max(0.26, -coef[1]));
  double ratio = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < u_all.size(); ++k) {
    const double p = psi_beta(cert.beta, u_all[k]);
    if (p > 0.0) ratio = std::min(ratio, std::exp(le_all[k]) / p);
  }
  if (!std::isfinite(ratio))
    throw OutOfDomain("fit_certificate: comparison profile underflows everywhere");
  cert.c = 0.9 * ratio;
  cert.verified_through = 1.0;
  return cert;
}

// --------------------------------------------------------------------------
// Normal-offset construction.  The new tangent angle and arclength come
// from the exact first-order geometry of the offset curve; positions are
// displaced along the stored normal.

inline ProfileCurve offset_by_mode(const ProfileCurve& c,
                                   const EigenFunction& mode, double eps) {
  c.validate();
  if (eps == 0.0) return c;
  if (mode.s.size() < 3 || mode.s.size() != mode.u.size())
    throw OutOfDomain("offset_by_mode: malformed mode");
  const std::size_t mm = mode.s.size();
  const double hm = mode.s[1] - mode.s[0];
  std::vector<double> du(mm);
  du[0] = (-1.5 * mode.u[0] + 2.0 * mode.u[1] - 0.5 * mode.u[2]) / hm;
  for (std::size_t j = 1; j + 1 < mm; ++j)
    du[j] = (mode.u[j + 1] - mode.u[j - 1]) / (2.0 * hm);
  du[mm - 1] =
      (1.5 * mode.u[mm - 1] - 2.0 * mode.u[mm - 2] + 0.5 * mode.u[mm - 3]) /
      hm;
  const auto sample = [&](const std::vector<double>& f, double s) {
    double w = (s - mode.s.front()) / hm;
    w = std::max(0.0, std::min(w, double(mm - 1)));
    const std::size_t j = std::min(mm - 2, std::size_t(w));
    const double u = w - double(j);
    return (1.0 - u) * f[j] + u * f[j + 1];
  };

  const detail::FlowQuantities q = detail::flow_quantities(c);
  const std::size_t m = c.nodes.size();
  const bool axis0 = c.axis_start(), axis1 = c.axis_end();
  std::vector<double> uu(m), uup(m), kap(m);
  double worst = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    uu[i] = sample(mode.u, c.nodes[i].s);
    uup[i] = sample(du, c.nodes[i].s);
    const bool ax = (axis0 && i == 0) || (axis1 && i + 1 == m);
    // On a certified profile the stationarity relation recovers the exact
    // curvature from the FD one.
    kap[i] = q.kappa[i] - q.residual[i] * (ax ? 1.0 / c.n : 1.0);
    worst = std::max(worst, std::abs(eps * uu[i] * kap[i]));
  }
  if (worst >= 0.5)
    throw EpsTooLarge("offset amplitude reaches the focal scale, |eps u kappa| = " +
                      format_g17(worst));

  ProfileCurve out;
  out.n = c.n;
  out.symmetry = c.symmetry;
  out.provenance = c.provenance + " + mode offset eps=" + format_g17(eps);
  out.nodes.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    const ProfileNode& nd = c.nodes[i];
    const bool ax = (axis0 && i == 0) || (axis1 && i + 1 == m);
    const double nx = -std::sin(nd.theta), nr = std::cos(nd.theta);
    ProfileNode& o = out.nodes[i];
    o.x = nd.x + eps * uu[i] * nx;
    o.r = ax ? 0.0 : nd.r + eps * uu[i] * nr;
    if (!ax && o.r < 0.0)
      throw EpsTooLarge("offset crosses the axis at s = " + format_g17(nd.s));
    o.theta = ax ? nd.theta
                 : nd.theta + std::atan2(eps * uup[i],
                                         1.0 - eps * uu[i] * kap[i]);
  }
  out.nodes[0].s = 0.0;
  for (std::size_t i = 1; i < m; ++i)
    out.nodes[i].s = out.nodes[i - 1].s +
                     std::hypot(out.nodes[i].x - out.nodes[i - 1].x,
                                out.nodes[i].r - out.nodes[i - 1].r);
  out.validate();
  return out;
}

// Displaces an unstable expander along its lowest rotationally invariant
// mode.  The amplitude bound keeps the offset below a tenth of the focal
// radius of the surface.
inline ProfileCurve perturb_by_eigenfunction(const ExpanderSolution& sol,
                                             const SpectrumResult& sr,
                                             double eps) {
  if (sr.n != sol.profile.n)
    throw OutOfDomain("perturb_by_eigenfunction: dimension mismatch");
  if (!(sr.mu1 < 0.0))
    throw OutOfDomain("perturb_by_eigenfunction: needs an unstable surface");
  if (sr.ell_at_mu1 != 0)
    throw OutOfDomain("perturb_by_eigenfunction: lowest mode must be rotationally invariant");
  if (eps == 0.0) return sol.profile;
  const detail::FlowQuantities q = detail::flow_quantities(sol.profile);
  const double eps_bar = 0.1 / std::sqrt(q.max_a2);
  if (std::abs(eps) > eps_bar)
    throw EpsTooLarge("amplitude " + format_g17(std::abs(eps)) +
                      " exceeds the curvature-scale bound " +
                      format_g17(eps_bar));
  const EigenFunction mode = ground_mode(sol.profile, 0);
  return offset_by_mode(sol.profile, mode, eps);
}

// --------------------------------------------------------------------------
// Flow state and configuration.

struct FlowMonitors {
  double min_eo = 0.0;       // min of the oriented expansion field
  double max_abs_eo = 0.0;   // sup |field|; the bound is enforced while this
                             // stays above the certification tolerance
  double psi_bound_margin =  // min over nodes of sqrt(t) E - c psi_beta
      std::numeric_limits<double>::infinity();
  double residual_sup = 0.0;
  double max_a = 0.0;
  double max_drift = 0.0;  // sup |y . T| / 2, the tangential transport speed
};

struct FlowState {
  double s_time = 0.0;  // rescaled clock tau; unrescaled time is exp(tau)
  ProfileCurve profile;
  FlowMonitors monitors;
  std::string provenance;
  int sigma = +1;
  bool has_certificate = false;
  ConvexityCertificate certificate;
};

struct FlowConfig {
  double h_target = 0.01;   // arclength spacing the grid is kept near
  double dt_max = 0.05;
  double dt_factor = 0.2;   // dt = min(dt_max, dt_factor / (1 + sup |A|^2))
  double advect_factor = 3.2;  // ... and advect_factor / (1 + sup(|y.T|/2)^2);
                               // the transport of normal perturbations along the
                               // curve is explicit, so dt must stay below
                               // 4 / speed^2 or far-field wiggles amplify
  double dt_min = 1e-8;
  double tau_max = 80.0;
  long max_steps = 200000;
  double converge_residual = 1e-7;
  double converge_rate = 1e-8;  // sup displacement per unit time; branches
                                // with an axis cap floor near 4e-9
  int converge_streak = 50;
  double monitor_tol = 1e-6;
  double eo_floor = 1e-8;   // expansion-field magnitudes below this are noise
  double one_sided_floor = 1e-6;  // normal speeds below this do not count as motion
  double a2_blowup = 1e4;
  double r_min_collapse = 5e-3;
  bool certified = true;           // enforce sign, bound, and one-sidedness
  bool compute_entropy = true;
  bool enforce_entropy_bound = true;  // require lambda < round_sphere_entropy(n-1)
  int entropy_cadence = 400;          // accepted steps between entropy checks
  bool track_cone = false;
  ConeSpec tracked_cone{};
  SpectrumOptions spectrum_opts{};  // used to certify the limit
};

struct MonitorSample {
  double tau = 0.0;
  double min_eo = 0.0;
  double margin = 0.0;
  double residual_sup = 0.0;
  double max_a = 0.0;
  double n_tilde = std::numeric_limits<double>::quiet_NaN();
  double lambda = std::numeric_limits<double>::quiet_NaN();
};

struct ConvergenceReport {
  bool converged = false;
  double tau_end = 0.0;
  long steps = 0, rejected = 0, resamples = 0;
  double final_residual = 0.0, final_rate = 0.0;
  bool entropy_checked = false;
  bool entropy_bound_satisfied = false;
  bool entropy_enforced = false;
  double lambda_initial = std::numeric_limits<double>::quiet_NaN();
  double lambda_final = std::numeric_limits<double>::quiet_NaN();
  double entropy_bound = std::numeric_limits<double>::quiet_NaN();
  double entropy_worst_increase = 0.0;
  bool entropy_monotone_ok = true;
  int sigma = 0;
  int motion_sign = 0;      // sign of the oriented normal displacement
  bool one_sided_ok = true;
  double min_eo_seen = std::numeric_limits<double>::infinity();
  double min_margin_seen = std::numeric_limits<double>::infinity();
  // tau at which the field settled below the certification tolerance and the
  // envelope bound stopped being enforced; NaN if it stayed live throughout
  double cert_discharge_tau = std::numeric_limits<double>::quiet_NaN();
  // unrescaled time the envelope bound was checked through
  double cert_verified_through = std::numeric_limits<double>::quiet_NaN();
  double n_tilde_initial = std::numeric_limits<double>::quiet_NaN();
  double n_tilde_max = std::numeric_limits<double>::quiet_NaN();
  bool cone_inferred = false;
  ConeSpec cone_limit{};
  BranchLabel matched_branch = BranchLabel::kGraph;
  double limit_sup_distance = std::numeric_limits<double>::quiet_NaN();
  double mu1_limit = std::numeric_limits<double>::quiet_NaN();
  std::vector<MonitorSample> history;
};

struct TrackingReport {
  double n_tilde = 0.0;
  double rho_at_max = 0.0;
  double dist_at_max = 0.0;
};

// --------------------------------------------------------------------------
// Geometry helpers shared by the stepper and the matching stage.

namespace detail {

inline std::vector<std::array<double, 2>> full_meridian_points(
    const ProfileCurve& c) {
  std::vector<std::array<double, 2>> pts;
  pts.reserve(c.nodes.size() * 2);
  for (const ProfileNode& nd : c.nodes) pts.push_back({nd.x, nd.r});
  if (c.symmetry == ProfileSymmetry::kReflectAcrossX0)
    for (const ProfileNode& nd : c.nodes) pts.push_back({-nd.x, nd.r});
  return pts;
}

inline double point_segment_distance(double px, double pr, double ax,
                                     double ar, double bx, double br) {
  const double dx = bx - ax, dr = br - ar;
  const double len2 = dx * dx + dr * dr;
  double u = len2 > 0.0 ? ((px - ax) * dx + (pr - ar) * dr) / len2 : 0.0;
  u = std::max(0.0, std::min(1.0, u));
  return std::hypot(px - (ax + u * dx), pr - (ar + u * dr));
}

inline double point_curve_distance(double px, double pr,
                                   const ProfileCurve& c) {
  double best = std::numeric_limits<double>::infinity();
  const auto scan = [&](double sgn) {
    for (std::size_t i = 0; i + 1 < c.nodes.size(); ++i)
      best = std::min(best, point_segment_distance(
                                px, pr, sgn * c.nodes[i].x, c.nodes[i].r,
                                sgn * c.nodes[i + 1].x, c.nodes[i + 1].r));
  };
  scan(1.0);
  if (c.symmetry == ProfileSymmetry::kReflectAcrossX0) scan(-1.0);
  return best;
}

}  // namespace detail

// Largest distance from a node of `a` to the meridian trace of `b`,
// restricted to nodes with spherical radius at most rho_cap.
inline double sup_profile_distance(
    const ProfileCurve& a, const ProfileCurve& b,
    double rho_cap = std::numeric_limits<double>::infinity()) {
  double sup = 0.0;
  for (const auto& p : detail::full_meridian_points(a)) {
    if (std::hypot(p[0], p[1]) > rho_cap) continue;
    sup = std::max(sup, detail::point_curve_distance(p[0], p[1], b));
  }
  return sup;
}

// Worst-case tubularity gauge max_i min(rho_i, rho_i * dist_i) of a slice
// against a reference cone.
inline TrackingReport tubular_tracking(const FlowState& st,
                                       const ConeSpec& cone) {
  cone.validate();
  TrackingReport rep;
  for (const auto& p : detail::full_meridian_points(st.profile)) {
    const double rho = std::hypot(p[0], p[1]);
    const double d = distance_to_cone(p[0], p[1], cone);
    const double val = std::min(rho, rho * d);
    if (val > rep.n_tilde) {
      rep.n_tilde = val;
      rep.rho_at_max = rho;
      rep.dist_at_max = d;
    }
  }
  return rep;
}

// --------------------------------------------------------------------------
// Single step of the semi-implicit update.

namespace detail {

struct StepDiagnostics {
  double dis_rate = 0.0;  // sup displacement / dt
  int motion_sign = 0;
  bool one_sided = true;
  bool resampled = false;
};

inline void thomas_solve(std::vector<double>& a, std::vector<double>& b,
                         std::vector<double>& cc, std::vector<double>& rhs) {
  const std::size_t m = b.size();
  for (std::size_t i = 1; i < m; ++i) {
    if (std::abs(b[i - 1]) < 1e-300)
      throw StepRejected("implicit solve pivot vanished");
    const double w = a[i] / b[i - 1];
    b[i] -= w * cc[i - 1];
    rhs[i] -= w * rhs[i - 1];
  }
  if (std::abs(b[m - 1]) < 1e-300)
    throw StepRejected("implicit solve pivot vanished");
  rhs[m - 1] /= b[m - 1];
  for (std::size_t i = m - 1; i-- > 0;)
    rhs[i] = (rhs[i] - cc[i] * rhs[i + 1]) / b[i];
}

// Recomputes tangent angles from the node positions and re-measures
// arclength by chord accumulation.  The angle branch follows the previous
// angles continuously; genuine axis endpoints keep an exact +-pi/2.
inline void refresh_geometry(ProfileCurve& c) {
  const std::size_t m = c.nodes.size();
  std::vector<double> s(m);
  s[0] = 0.0;
  for (std::size_t i = 1; i < m; ++i) {
    const double ch = std::hypot(c.nodes[i].x - c.nodes[i - 1].x,
                                 c.nodes[i].r - c.nodes[i - 1].r);
    if (!(ch > 0.0)) throw SingularityDetected("node spacing collapsed");
    s[i] = s[i - 1] + ch;
  }
  const bool axis0 = c.nodes.front().r == 0.0;
  const bool axis1 = c.nodes.back().r == 0.0;
  std::vector<double> xs(m), rs(m);
  for (std::size_t i = 0; i < m; ++i) {
    xs[i] = c.nodes[i].x;
    rs[i] = c.nodes[i].r;
  }
  const std::vector<double> dx = d1_field(s, xs);
  const std::vector<double> dr = d1_field(s, rs);
  std::vector<double> th(m);
  for (std::size_t i = 0; i < m; ++i) th[i] = std::atan2(dr[i], dx[i]);
  const double twopi = 2.0 * kPi;
  th[0] += twopi * std::round((c.nodes[0].theta - th[0]) / twopi);
  for (std::size_t i = 1; i < m; ++i)
    th[i] += twopi * std::round((th[i - 1] - th[i]) / twopi);
  if (axis0) th[0] = std::copysign(0.5 * kPi, c.nodes.front().theta);
  if (axis1) th[m - 1] = std::copysign(0.5 * kPi, c.nodes.back().theta);
  for (std::size_t i = 0; i < m; ++i) {
    c.nodes[i].s = s[i];
    c.nodes[i].theta = th[i];
  }
}

inline void flow_monitors(FlowState& st, double eo_floor) {
  const FlowQuantities q = flow_quantities(st.profile);
  FlowMonitors& mo = st.monitors;
  mo.residual_sup = q.residual_sup;
  mo.max_a = std::sqrt(q.max_a2);
  mo.min_eo = std::numeric_limits<double>::infinity();
  mo.max_abs_eo = 0.0;
  mo.psi_bound_margin = std::numeric_limits<double>::infinity();
  mo.max_drift = 0.0;
  const double t = std::exp(st.s_time);
  const double rt = std::sqrt(t);
  for (std::size_t i = 0; i < st.profile.nodes.size(); ++i) {
    const double eo = st.sigma * -2.0 * q.residual[i];
    mo.min_eo = std::min(mo.min_eo, eo);
    mo.max_abs_eo = std::max(mo.max_abs_eo, std::abs(eo));
    {
      const ProfileNode& nd = st.profile.nodes[i];
      const double yt =
          nd.x * std::cos(nd.theta) + nd.r * std::sin(nd.theta);
      mo.max_drift = std::max(mo.max_drift, 0.5 * std::abs(yt));
    }
    if (!st.has_certificate) continue;
    const ProfileNode& nd = st.profile.nodes[i];
    const double u = varrho(st.profile.n, nd.x * nd.x + nd.r * nd.r, t);
    const double bound = st.certificate.c * psi_beta(st.certificate.beta, u);
    // Nodes where both the field and the bound sit below the noise floor
    // carry no information and are excluded from the margin.
    if (std::abs(eo) <= eo_floor && bound <= eo_floor * rt) continue;
    mo.psi_bound_margin = std::min(mo.psi_bound_margin, rt * eo - bound);
  }
}

inline FlowState advance(const FlowState& st, double dt, const FlowConfig& cfg,
                         StepDiagnostics* diag) {
  if (!(dt > 0.0)) throw OutOfDomain("advance: dt must be positive");
  const ProfileCurve& c = st.profile;
  const std::size_t m = c.nodes.size();
  const bool axis0 = c.axis_start(), axis1 = c.axis_end();
  const FlowQuantities q = flow_quantities(c);

  std::vector<double> dxv(m, 0.0), drv(m, 0.0);
  {
    std::vector<double> a(m, 0.0), b(m, 1.0), cc(m, 0.0);
    std::vector<double> rx(m, 0.0), rr(m, 0.0);
    for (std::size_t i = 1; i + 1 < m; ++i) {
      const double hm = c.nodes[i].s - c.nodes[i - 1].s;
      const double hp = c.nodes[i + 1].s - c.nodes[i].s;
      a[i] = -dt * 2.0 / (hm * (hm + hp));
      cc[i] = -dt * 2.0 / (hp * (hm + hp));
      b[i] = 1.0 + dt * 2.0 / (hm * hp);
      const double nx = -std::sin(c.nodes[i].theta);
      const double nr = std::cos(c.nodes[i].theta);
      rx[i] = dt * q.residual[i] * nx;
      rr[i] = dt * q.residual[i] * nr;
    }
    // Genuine axis endpoints move along the axis with an even extension in
    // x and a pinned r; open far ends hold their initial positions.
    std::vector<double> ax = a, bx = b, cx = cc;
    if (axis0) {
      const double h0 = c.nodes[1].s - c.nodes[0].s;
      bx[0] = 1.0 + dt * 2.0 / (h0 * h0);
      cx[0] = -dt * 2.0 / (h0 * h0);
      rx[0] = dt * q.residual[0] * -std::sin(c.nodes[0].theta);
    }
    if (axis1) {
      const double h1 = c.nodes[m - 1].s - c.nodes[m - 2].s;
      bx[m - 1] = 1.0 + dt * 2.0 / (h1 * h1);
      ax[m - 1] = -dt * 2.0 / (h1 * h1);
      rx[m - 1] = dt * q.residual[m - 1] * -std::sin(c.nodes[m - 1].theta);
    }
    thomas_solve(ax, bx, cx, rx);
    dxv = rx;
    thomas_solve(a, b, cc, rr);
    drv = rr;
  }

  if (diag) {
    diag->dis_rate = 0.0;
    diag->one_sided = true;
    diag->motion_sign = 0;
    diag->resampled = false;
    bool pos = false, neg = false;
    const double dead = dt * cfg.one_sided_floor;
    for (std::size_t i = 0; i < m; ++i) {
      const bool clamped = (!axis0 && i == 0) || (!axis1 && i + 1 == m);
      if (clamped) continue;
      diag->dis_rate =
          std::max(diag->dis_rate, std::hypot(dxv[i], drv[i]) / dt);
      const double proj = -dxv[i] * std::sin(c.nodes[i].theta) +
                          drv[i] * std::cos(c.nodes[i].theta);
      if (proj > dead) pos = true;
      if (proj < -dead) neg = true;
    }
    diag->one_sided = !(pos && neg);
    diag->motion_sign = pos == neg ? 0 : (pos ? +1 : -1);
  }

  FlowState next = st;
  next.s_time = st.s_time + dt;
  for (std::size_t i = 0; i < m; ++i) {
    next.profile.nodes[i].x += dxv[i];
    if (!((axis0 && i == 0) || (axis1 && i + 1 == m)))
      next.profile.nodes[i].r += drv[i];
  }
  refresh_geometry(next.profile);
  try {
    next.profile.validate();
  } catch (const InvalidProfile& e) {
    throw SingularityDetected(std::string("slice degenerated: ") + e.what());
  }

  double ch_min = std::numeric_limits<double>::infinity(), ch_max = 0.0;
  for (std::size_t i = 1; i < m; ++i) {
    const double ch = next.profile.nodes[i].s - next.profile.nodes[i - 1].s;
    ch_min = std::min(ch_min, ch);
    ch_max = std::max(ch_max, ch);
  }
  if (ch_min < 0.7 * cfg.h_target || ch_max > 1.5 * cfg.h_target) {
    const double L = next.profile.length();
    const std::size_t kcount =
        std::max<std::size_t>(8, std::size_t(std::round(L / cfg.h_target)));
    std::vector<double> sg(kcount + 1);
    for (std::size_t j = 0; j <= kcount; ++j)
      sg[j] = L * double(j) / double(kcount);
    next.profile = resample_profile(next.profile, sg);
    if (diag) diag->resampled = true;
  }
  flow_monitors(next, cfg.eo_floor);
  return next;
}

}  // namespace detail

// One accepted step of size dt; monitors refer to the returned slice.
inline FlowState rescaled_mcf_step(const FlowState& st, double dt,
                                   const FlowConfig& cfg = {}) {
  return detail::advance(st, dt, cfg, nullptr);
}

// --------------------------------------------------------------------------
// Consistency gauge for the shadow radius along one accepted step: the
// nodal transport identity holds up to O(dt + h^2).  Far clamped nodes do
// not follow the motion law and are excluded.  Both states must share the
// node count; the value is normalized by t (1 + |y|^2).

inline double flow_identity_residual(const FlowState& prev,
                                     const FlowState& next) {
  const std::size_t m = prev.profile.nodes.size();
  if (next.profile.nodes.size() != m)
    throw OutOfDomain("flow_identity_residual: node counts differ");
  const double dtau = next.s_time - prev.s_time;
  if (!(dtau > 0.0))
    throw OutOfDomain("flow_identity_residual: states are not ordered");
  const detail::FlowQuantities q = detail::flow_quantities(prev.profile);
  const double t0 = std::exp(prev.s_time), t1 = std::exp(next.s_time);
  const bool axis0 = prev.profile.axis_start(), axis1 = prev.profile.axis_end();
  const int n = prev.profile.n;
  double sup = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if ((!axis0 && i == 0) || (!axis1 && i + 1 == m)) continue;
    const ProfileNode& a = prev.profile.nodes[i];
    const ProfileNode& b = next.profile.nodes[i];
    const double ra2 = a.x * a.x + a.r * a.r;
    const double rb2 = b.x * b.x + b.r * b.r;
    const double lhs = (varrho(n, rb2, t1) - varrho(n, ra2, t0)) / dtau;
    const double ydn = -a.x * std::sin(a.theta) + a.r * std::cos(a.theta);
    const double ydt = a.x * std::cos(a.theta) + a.r * std::sin(a.theta);
    const double rhs =
        t0 * (2.0 * n + 2.0 * q.mean_curvature[i] * ydn + ydt * ydt);
    sup = std::max(sup, std::abs(lhs - rhs) / (t0 * (1.0 + ra2)));
  }
  return sup;
}

// --------------------------------------------------------------------------
// Driver: evolves initial data until the stationarity defect settles, then
// identifies the limit by re-solving for it and certifying its spectrum.

// Resamples onto the uniform arclength grid the flow runs on.  Certificates
// must be fitted on this grid, after settle_profile, so the monitors see the
// certified field.
inline ProfileCurve uniformize_profile(const ProfileCurve& c,
                                       double h_target) {
  const double L = c.length();
  const std::size_t kcount =
      std::max<std::size_t>(8, std::size_t(std::round(L / h_target)));
  std::vector<double> sg(kcount + 1);
  for (std::size_t j = 0; j <= kcount; ++j)
    sg[j] = L * double(j) / double(kcount);
  return resample_profile(c, sg);
}

// Scrubs grid-scale interpolation transients left by resampling: a few
// implicit steps at a tiny fixed dt damp wavelength-h content by orders of
// magnitude while the total pseudo-time stays far below every smooth-mode
// timescale, so the slice itself is unchanged to O(steps * dt * defect).
inline ProfileCurve settle_profile(const ProfileCurve& c,
                                   const FlowConfig& cfg = {}, int steps = 20,
                                   double dt = 1e-4) {
  FlowState st;
  st.profile = c;
  detail::flow_monitors(st, cfg.eo_floor);
  FlowConfig quiet = cfg;
  quiet.certified = false;
  quiet.compute_entropy = false;
  for (int k = 0; k < steps; ++k)
    st = detail::advance(st, dt, quiet, nullptr);
  return st.profile;
}

namespace detail {

inline std::vector<BranchLabel> candidate_branches(const ConeSpec& cone) {
  if (cone.kind == ConeKind::kSingle) return {BranchLabel::kGraph};
  return {BranchLabel::kDiskPair, BranchLabel::kAnnulusInner,
          BranchLabel::kAnnulusOuter};
}

}  // namespace detail

inline std::pair<ExpanderSolution, ConvergenceReport> flow_to_stable(
    const ProfileCurve& initial, const ConvexityCertificate* cert,
    const FlowConfig& cfg) {
  initial.validate();
  ConvergenceReport rep;
  FlowState st;
  st.profile = settle_profile(uniformize_profile(initial, cfg.h_target), cfg);
  st.provenance = initial.provenance;
  st.s_time = 0.0;
  if (cert) {
    st.has_certificate = true;
    st.certificate = *cert;
    st.sigma = cert->sigma;
  }
  rep.sigma = st.sigma;
  detail::flow_monitors(st, cfg.eo_floor);
  if (cert && cfg.certified) {
    if (st.monitors.min_eo < -cfg.monitor_tol ||
        st.monitors.psi_bound_margin < -cfg.monitor_tol)
      throw CertificateBroken(
          "initial slice violates its certificate: min field = " +
          format_g17(st.monitors.min_eo) + ", margin = " +
          format_g17(st.monitors.psi_bound_margin));
  }

  const double ent_bound = round_sphere_entropy(initial.n - 1);
  rep.entropy_bound = ent_bound;
  rep.entropy_enforced = cfg.enforce_entropy_bound;
  double lam_prev = std::numeric_limits<double>::quiet_NaN();
  if (cfg.compute_entropy) {
    rep.entropy_checked = true;
    rep.lambda_initial = entropy(st.profile).lambda;
    rep.lambda_final = rep.lambda_initial;
    lam_prev = rep.lambda_initial;
    rep.entropy_bound_satisfied = rep.lambda_initial < ent_bound;
    if (cfg.enforce_entropy_bound && !rep.entropy_bound_satisfied)
      throw OutOfDomain(
          "initial entropy " + format_g17(rep.lambda_initial) +
          " does not clear the cylinder threshold " + format_g17(ent_bound));
  }
  if (cfg.track_cone) {
    rep.n_tilde_initial = tubular_tracking(st, cfg.tracked_cone).n_tilde;
    rep.n_tilde_max = rep.n_tilde_initial;
  }

  int streak = 0;
  bool converged = false;
  detail::StepDiagnostics diag;
  while (rep.steps < cfg.max_steps && st.s_time < cfg.tau_max) {
    const double a2 = st.monitors.max_a * st.monitors.max_a;
    const double drift2 = st.monitors.max_drift * st.monitors.max_drift;
    double dt = std::min(cfg.dt_max, cfg.dt_factor / (1.0 + a2));
    dt = std::min(dt, cfg.advect_factor / (1.0 + drift2));
    dt = std::min(dt, cfg.tau_max - st.s_time);
    FlowState next;
    for (;;) {
      try {
        next = detail::advance(st, dt, cfg, &diag);
        break;
      } catch (const StepRejected&) {
        dt *= 0.5;
        ++rep.rejected;
        if (dt < cfg.dt_min) throw;
      }
    }
    ++rep.steps;
    if (diag.resampled) ++rep.resamples;
    st = std::move(next);

    const double a2_now = st.monitors.max_a * st.monitors.max_a;
    if (a2_now > cfg.a2_blowup)
      throw SingularityDetected("curvature blow-up at tau = " +
                                format_g17(st.s_time) + ", sup |A|^2 = " +
                                format_g17(a2_now));
    {
      const std::size_t mm = st.profile.nodes.size();
      const bool ax0 = st.profile.axis_start(), ax1 = st.profile.axis_end();
      for (std::size_t i = 0; i < mm; ++i) {
        const bool near_axis_end = (ax0 && i < 10) || (ax1 && i + 10 >= mm);
        if (near_axis_end || st.profile.nodes[i].r == 0.0) continue;
        if (st.profile.nodes[i].r < cfg.r_min_collapse)
          throw SingularityDetected(
              "neck collapse at tau = " + format_g17(st.s_time) + ", r = " +
              format_g17(st.profile.nodes[i].r));
      }
    }

    // Once the field settles below the certification tolerance everywhere,
    // margin and motion direction carry rounding noise only; the bound has
    // been verified through this time and stops being enforced.
    const bool field_live = st.monitors.max_abs_eo > cfg.monitor_tol;
    rep.min_eo_seen = std::min(rep.min_eo_seen, st.monitors.min_eo);
    if (field_live)
      rep.min_margin_seen =
          std::min(rep.min_margin_seen, st.monitors.psi_bound_margin);
    if (!diag.one_sided) rep.one_sided_ok = false;
    if (diag.motion_sign != 0) {
      if (rep.motion_sign == 0) rep.motion_sign = diag.motion_sign;
      if (diag.motion_sign != rep.motion_sign) rep.one_sided_ok = false;
    }
    if (cfg.certified && st.has_certificate) {
      if (st.monitors.min_eo < -cfg.monitor_tol)
        throw CertificateBroken("oriented expansion field turned negative, " +
                                format_g17(st.monitors.min_eo) + " at tau = " +
                                format_g17(st.s_time));
      if (field_live) {
        if (st.monitors.psi_bound_margin < -cfg.monitor_tol)
          throw CertificateBroken("mean-convexity bound failed, margin = " +
                                  format_g17(st.monitors.psi_bound_margin) +
                                  " at tau = " + format_g17(st.s_time));
        if (!diag.one_sided || (diag.motion_sign != 0 &&
                                diag.motion_sign != -st.sigma))
          throw CertificateBroken("motion stopped being one-sided at tau = " +
                                  format_g17(st.s_time));
        st.certificate.verified_through = std::exp(st.s_time);
        rep.cert_verified_through = st.certificate.verified_through;
      } else if (std::isnan(rep.cert_discharge_tau)) {
        rep.cert_discharge_tau = st.s_time;
      }
    }

    MonitorSample ms;
    ms.tau = st.s_time;
    ms.min_eo = st.monitors.min_eo;
    ms.margin = st.monitors.psi_bound_margin;
    ms.residual_sup = st.monitors.residual_sup;
    ms.max_a = st.monitors.max_a;
    if (cfg.track_cone) {
      ms.n_tilde = tubular_tracking(st, cfg.tracked_cone).n_tilde;
      rep.n_tilde_max = std::max(rep.n_tilde_max, ms.n_tilde);
    }
    if (cfg.compute_entropy && rep.steps % cfg.entropy_cadence == 0) {
      const double lam = entropy(st.profile).lambda;
      rep.lambda_final = lam;
      if (lam > lam_prev + 1e-4) {
        rep.entropy_monotone_ok = false;
        rep.entropy_worst_increase =
            std::max(rep.entropy_worst_increase, lam - lam_prev);
      }
      lam_prev = lam;
      ms.lambda = lam;
    }
    rep.history.push_back(ms);

    if (st.monitors.residual_sup < cfg.converge_residual &&
        diag.dis_rate < cfg.converge_rate)
      ++streak;
    else
      streak = 0;
    rep.final_residual = st.monitors.residual_sup;
    rep.final_rate = diag.dis_rate;
    if (streak >= cfg.converge_streak) {
      converged = true;
      break;
    }
  }
  rep.tau_end = st.s_time;
  rep.converged = converged;

  ExpanderSolution out;
  out.profile = st.profile;
  out.residual_sup = st.monitors.residual_sup;
  try {
    const ConeInference ci = infer_cone(st.profile);
    out.cone = ci.cone;
    rep.cone_limit = ci.cone;
    rep.cone_inferred = true;
  } catch (const Error&) {
    rep.cone_inferred = false;
  }
  if (!converged) return {out, rep};

  if (cfg.compute_entropy) {
    const double lam = entropy(st.profile).lambda;
    rep.lambda_final = lam;
    if (lam > lam_prev + 1e-4) rep.entropy_monotone_ok = false;
  }
  if (!rep.cone_inferred)
    throw NotConical("flow settled but the limit has no conical ends");

  double best = std::numeric_limits<double>::infinity();
  ExpanderSolution matched;
  bool have = false;
  for (BranchLabel br : detail::candidate_branches(rep.cone_limit)) {
    ExpanderSolution cand;
    try {
      cand = find_expander_for_cone(rep.cone_limit, br);
    } catch (const Error&) {
      continue;
    }
    const double d = sup_profile_distance(st.profile, cand.profile);
    if (d < best) {
      best = d;
      matched = cand;
      have = true;
    }
  }
  if (!have)
    throw NoSolutionInBracket("no shooting branch reproduces the flow limit");
  rep.matched_branch = matched.branch;
  rep.limit_sup_distance = best;

  const SpectrumResult sr = spectrum(matched.profile, cfg.spectrum_opts);
  rep.mu1_limit = sr.mu1;
  if (!(sr.mu1 >= -1e-6))
    throw CertificateBroken("flow limit is not stable, mu1 = " +
                            format_g17(sr.mu1));
  return {matched, rep};
}

inline std::pair<ExpanderSolution, ConvergenceReport> flow_to_stable(
    const ProfileCurve& initial, const ConvexityCertificate& cert,
    const FlowConfig& cfg = {}) {
  return flow_to_stable(initial, &cert, cfg);
}

inline std::pair<ExpanderSolution, ConvergenceReport> flow_to_stable(
    const ProfileCurve& initial, const FlowConfig& cfg_in = {}) {
  FlowConfig cfg = cfg_in;
  cfg.certified = false;
  return flow_to_stable(initial, nullptr, cfg);
}

}  // namespace expanderlab
