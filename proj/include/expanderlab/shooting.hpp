#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "expanderlab/geometry.hpp"
#include "expanderlab/ode.hpp"
#include "expanderlab/types.hpp"

namespace expanderlab {

// Construction of self-expanding profiles by shooting the reduced equation
//   x' = cos(theta), r' = sin(theta),
//   theta' = (n-1) cos(theta)/r + (r cos(theta) - x sin(theta)) / 2.
// Every trajectory is an exact expander arc; boundary-value solves pick the
// trajectory whose asymptotic angle matches a requested cone.

enum class ShotFamily { kCap, kNeck };

// kCap starts on the axis at (parameter, 0) perpendicular to it; kNeck starts
// horizontally at (neck_x, parameter).  neck_x stays 0 except while matching
// unequal cone angles.
struct ShotParams {
  ShotFamily family = ShotFamily::kCap;
  double parameter = 1.0;
  double neck_x = 0.0;
  int n = 2;
  double s_max = 40.0;
  double rho_max = 14.0;
  double rtol = 1e-12;
  double atol = 1e-12;

  void validate() const {
    if (n < 2) throw OutOfDomain("shot requires n >= 2");
    if (!(s_max >= 20.0)) throw OutOfDomain("s_max must be at least 20");
    if (!(rho_max > 3.0) || !(rho_max < 0.5 * s_max))
      throw OutOfDomain("rho_max must lie in (3, s_max/2)");
    if (!(rtol > 0.0 && rtol <= 1e-3) || !(atol > 0.0 && atol <= 1e-3))
      throw OutOfDomain("integration tolerances must lie in (0, 1e-3]");
    if (family == ShotFamily::kCap) {
      if (!(parameter >= 0.0)) throw OutOfDomain("cap shots require x0 >= 0");
      if (neck_x != 0.0) throw OutOfDomain("cap shots fix neck_x = 0");
    } else {
      if (!(parameter > 0.0)) throw OutOfDomain("neck shots require r0 > 0");
    }
  }
};

enum class ShotStop { kFarField, kAxis, kTurnedHigh, kTurnedLow };

inline const char* to_string(ShotStop s) {
  switch (s) {
    case ShotStop::kFarField: return "far_field";
    case ShotStop::kAxis: return "axis";
    case ShotStop::kTurnedHigh: return "turned_high";
    case ShotStop::kTurnedLow: return "turned_low";
  }
  return "?";
}

struct ShotTrace {
  ShotParams params;
  OdeResult ode;
  ShotStop stop = ShotStop::kFarField;
  double s_begin = 0.0;
  double s_end = 0.0;
};

namespace detail {

inline OdeRhs profile_rhs(int n) {
  const double nm1 = static_cast<double>(n) - 1.0;
  return [nm1](double, const double* y, double* d) {
    const double x = y[0];
    const double r = std::max(y[1], 1e-12);
    const double ct = std::cos(y[2]), st = std::sin(y[2]);
    d[0] = ct;
    d[1] = st;
    d[2] = nm1 * ct / r + 0.5 * (r * ct - x * st);
  };
}

// Series start of a cap shot a distance s0 from the axis; the tangent leans
// off the vertical at rate x0/(2n).
inline std::vector<double> cap_start(double x0, int n, double s0) {
  const double c1 = x0 / (2.0 * n);
  return {x0 + 0.5 * c1 * s0 * s0, s0, kPi / 2 - c1 * s0};
}

}  // namespace detail

inline ShotTrace raw_shot(const ShotParams& p) {
  p.validate();
  ShotTrace tr;
  tr.params = p;

  std::vector<double> y0;
  double s0 = 0.0;
  if (p.family == ShotFamily::kCap) {
    s0 = 1e-6;
    y0 = detail::cap_start(p.parameter, p.n, s0);
  } else {
    y0 = {p.neck_x, p.parameter, 0.0};
  }

  const double rho2_stop = p.rho_max * p.rho_max;
  std::vector<OdeEvent> events(4);
  events[0].g = [rho2_stop](double, const double* y) {
    return y[0] * y[0] + y[1] * y[1] - rho2_stop;
  };
  events[0].direction = +1;
  events[1].g = [](double, const double* y) { return y[1] - 1e-9; };
  events[1].direction = -1;
  events[2].g = [](double, const double* y) { return y[2] - 2.2; };
  events[2].direction = +1;
  events[3].g = [](double, const double* y) { return y[2] + 0.6; };
  events[3].direction = -1;

  OdeOptions opts;
  opts.rtol = p.rtol;
  opts.atol = p.atol;
  opts.h_init = 1e-6;
  opts.h_max = 0.25;
  tr.ode = integrate(detail::profile_rhs(p.n), s0, y0, p.s_max, events, opts);

  switch (tr.ode.event_index) {
    case 0: tr.stop = ShotStop::kFarField; break;
    case 1: tr.stop = ShotStop::kAxis; break;
    case 2: tr.stop = ShotStop::kTurnedHigh; break;
    case 3: tr.stop = ShotStop::kTurnedLow; break;
    default:
      throw StiffFailure("shot exhausted its arclength budget before any "
                         "termination surface");
  }
  tr.s_begin = s0;
  tr.s_end = tr.ode.stop_time;
  return tr;
}

namespace detail {

// Position angle of the far end, extracted from dense output over the outer
// fraction of the trace.  Requires a far-field stop.
inline double trace_phi(const ShotTrace& tr) {
  if (tr.stop == ShotStop::kAxis)
    throw AxisCollision("trace hit the axis; no asymptotic angle");
  if (tr.stop != ShotStop::kFarField)
    throw NotConical(std::string("trace stopped at ") + to_string(tr.stop));
  const auto rho_at = [&](double s) {
    const auto y = tr.ode.sol.at(s);
    return std::hypot(y[0], y[1]);
  };
  const double rho_end = rho_at(tr.s_end);
  const double rho_cut = std::max(3.0, 0.55 * rho_end);
  // rho is increasing along every far-field trace; bisect for the window edge.
  double lo = tr.s_begin, hi = tr.s_end;
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    (rho_at(mid) < rho_cut ? lo : hi) = mid;
  }
  std::vector<double> rhos, phis;
  const int m = 120;
  for (int i = 0; i <= m; ++i) {
    const double s = hi + (tr.s_end - hi) * i / m;
    const auto y = tr.ode.sol.at(s);
    rhos.push_back(std::hypot(y[0], y[1]));
    phis.push_back(std::atan2(y[1], y[0]));
  }
  return fit_phi_samples(rhos, phis).phi_inf;
}

// Third derivative of theta along the trace from dense samples; used to set
// the node density for a second-order finite-difference residual target.
inline double theta_third(const OdeSolution& sol, double s, double s_lo,
                          double s_hi) {
  const double d = 1e-3;
  double c = std::min(std::max(s, s_lo + 2 * d), s_hi - 2 * d);
  if (s_hi - s_lo < 4 * d) c = 0.5 * (s_lo + s_hi);
  const double dd = std::min(d, (s_hi - s_lo) / 4.01);
  double th[5];
  for (int k = -2; k <= 2; ++k) th[k + 2] = sol.at(c + k * dd)[2];
  return (th[4] - 2.0 * th[3] + 2.0 * th[1] - th[0]) / (2.0 * dd * dd * dd);
}

}  // namespace detail

// Builds the node grid for one trace, dense where theta bends.  The spacing
// target h = sqrt(6 * fd_target / |theta'''|) keeps the central-difference
// curvature error near fd_target; growth is limited so the grid stays
// quasi-uniform.
inline ProfileCurve build_profile(const ShotTrace& tr, double fd_target) {
  const double h_min = 1e-5, h_max = 0.05, growth = 1.25;
  const double s_lo = tr.s_begin, s_hi = tr.s_end;
  // One-sided differences at the first node carry twice the central error
  // constant, and an axis start multiplies the curvature error by n; the
  // first two spacings shrink by 1/sqrt(2n) to keep the same error target.
  const double end_shrink = 1.0 / std::sqrt(2.0 * tr.params.n);
  const auto spacing = [&](double s) {
    const double d3 =
        std::abs(detail::theta_third(tr.ode.sol, s, s_lo, s_hi));
    return std::clamp(std::sqrt(6.0 * fd_target / std::max(d3, 1e-10)), h_min,
                      h_max);
  };

  ProfileCurve c;
  c.n = tr.params.n;
  c.provenance =
      std::string(tr.params.family == ShotFamily::kCap ? "shot cap x0="
                                                       : "shot neck r0=") +
      format_g17(tr.params.parameter) + " n=" + std::to_string(tr.params.n) +
      " rho_max=" + format_g17(tr.params.rho_max) +
      " stop=" + to_string(tr.stop);

  std::vector<double> svals;
  double s = s_lo, h_prev = 0.0;
  int step = 0;
  svals.push_back(s);
  while (true) {
    double h = spacing(s);
    h = std::min(h, spacing(s + 0.5 * h));
    if (step < 2) h *= end_shrink;
    if (h_prev > 0.0) h = std::clamp(h, h_prev / growth, h_prev * growth);
    if (s + 1.5 * h >= s_hi) {
      svals.push_back(0.5 * (s + s_hi));
      svals.push_back(s_hi);
      break;
    }
    s += h;
    h_prev = h;
    ++step;
    svals.push_back(s);
  }

  const bool cap = tr.params.family == ShotFamily::kCap;
  if (cap) {
    ProfileNode axis;
    axis.s = 0.0;
    axis.x = tr.params.parameter;
    axis.r = 0.0;
    axis.theta = kPi / 2;
    c.nodes.push_back(axis);
  }
  for (std::size_t iv = 0; iv < svals.size(); ++iv) {
    const double sv = svals[iv];
    if (cap && iv == 0) continue;  // the exact axis node covers the start
    const auto y = tr.ode.sol.at(sv);
    ProfileNode nd;
    nd.s = sv;
    nd.x = y[0];
    nd.r = y[1];
    nd.theta = y[2];
    c.nodes.push_back(nd);
  }
  c.validate();
  return c;
}

// Integrates one shot and returns its profile, whatever the termination
// event was; the stop reason is recorded in the provenance string.
inline ProfileCurve integrate_profile(const ShotParams& p,
                                      double fd_target = 3e-7) {
  return build_profile(raw_shot(p), fd_target);
}

// Asymptotic position angle of one shot (atan2 convention, in (0, pi)).
inline double shot_phi(const ShotParams& p) {
  return detail::trace_phi(raw_shot(p));
}

// ---------------------------------------------------------------------------
// Boundary-value solves.

enum class BranchLabel { kDiskPair, kAnnulusInner, kAnnulusOuter, kGraph };

inline const char* to_string(BranchLabel b) {
  switch (b) {
    case BranchLabel::kDiskPair: return "disk_pair";
    case BranchLabel::kAnnulusInner: return "annulus_inner";
    case BranchLabel::kAnnulusOuter: return "annulus_outer";
    case BranchLabel::kGraph: return "graph";
  }
  return "?";
}

struct ExpanderSolution {
  ProfileCurve profile;
  ConeSpec cone;
  BranchLabel branch = BranchLabel::kGraph;
  ShotParams shot;
  double residual_sup = 0.0;
  ConeInference fit;
};

// Neck-branch fold: the interior minimum of the asymptotic angle over r0,
// separating the inner branch (smaller neck) from the outer one.
struct NeckFold {
  double r0 = 0.0;
  double phi_min = 0.0;
};

namespace detail {

// Effective angle used while bracketing: far-field stops report the fitted
// phi, misses are pushed to the appropriate extreme.
inline double bracket_phi(const ShotParams& p) {
  const ShotTrace tr = raw_shot(p);
  switch (tr.stop) {
    case ShotStop::kFarField: return trace_phi(tr);
    case ShotStop::kTurnedHigh: return 4.0;
    case ShotStop::kAxis:
    case ShotStop::kTurnedLow: return -1.0;
  }
  return -1.0;
}

inline ShotParams with_parameter(ShotParams p, double v) {
  p.parameter = v;
  return p;
}

// Bisection for phi(parameter) = target on a bracket where phi crosses the
// target exactly once.  `increasing` states the orientation of phi.
inline double bisect_parameter(const ShotParams& base, double lo, double hi,
                               double phi_lo, double phi_hi, double target,
                               bool increasing) {
  const double f_lo = phi_lo - target, f_hi = phi_hi - target;
  if (f_lo == 0.0) return lo;
  if (f_hi == 0.0) return hi;
  if ((f_lo > 0.0) == (f_hi > 0.0))
    throw NoSolutionInBracket(
        "target angle " + format_g17(target) + " not bracketed on [" +
        format_g17(lo) + ", " + format_g17(hi) + "]");
  (void)increasing;
  double a = lo, b = hi, fa = f_lo;
  while (b - a > 1e-13 * std::max(1.0, std::abs(b))) {
    const double m = 0.5 * (a + b);
    const double fm = bracket_phi(with_parameter(base, m)) - target;
    if (fm == 0.0) return m;
    if ((fm > 0.0) == (fa > 0.0)) {
      a = m;
      fa = fm;
    } else {
      b = m;
    }
  }
  return 0.5 * (a + b);
}

}  // namespace detail

// Locates the neck fold by golden-section search on log r0.  The angle map
// has a single interior minimum on realistic brackets; endpoints of the
// returned fold are meaningful only up to that assumption, which the sweep
// table lets callers inspect.
inline NeckFold neck_fold(const ShotParams& base, double r_lo = 0.05,
                          double r_hi = 6.0) {
  ShotParams p = base;
  p.family = ShotFamily::kNeck;
  const auto phi = [&](double u) {
    const ShotTrace tr = raw_shot(detail::with_parameter(p, std::exp(u)));
    return tr.stop == ShotStop::kFarField ? detail::trace_phi(tr)
                                          : 2.0 * kPi;
  };
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = std::log(r_lo), b = std::log(r_hi);
  double c1 = b - gr * (b - a), c2 = a + gr * (b - a);
  double f1 = phi(c1), f2 = phi(c2);
  for (int it = 0; it < 70; ++it) {
    if (f1 < f2) {
      b = c2;
      c2 = c1;
      f2 = f1;
      c1 = b - gr * (b - a);
      f1 = phi(c1);
    } else {
      a = c1;
      c1 = c2;
      f1 = f2;
      c2 = a + gr * (b - a);
      f2 = phi(c2);
    }
  }
  NeckFold fold;
  fold.r0 = std::exp(0.5 * (a + b));
  fold.phi_min = std::min(f1, f2);
  return fold;
}

namespace detail {

// Splices a mirrored left half onto a right half sharing the neck node.
inline ProfileCurve splice_halves(const ProfileCurve& left_forward,
                                  const ProfileCurve& right) {
  ProfileCurve full = mirror_profile(left_forward);
  const double s_junction = full.nodes.back().s;
  full.nodes.pop_back();
  for (const auto& nd : right.nodes) {
    ProfileNode q = nd;
    q.s += s_junction;
    full.nodes.push_back(q);
  }
  full.n = right.n;
  full.symmetry = ProfileSymmetry::kNone;
  full.provenance = right.provenance + " (spliced)";
  full.validate();
  return full;
}

}  // namespace detail

// Solves the boundary-value problem for one branch of expanders asymptotic
// to `cone`.  disk_pair requires a double cone with equal angles and stores
// the x>0 cap, completed by reflection; graph requires a single cone and is
// stored far-to-axis so the normal points to the +x side; annuli store the
// whole meridian, left far end to right far end.
inline ExpanderSolution find_expander_for_cone(
    const ConeSpec& cone, BranchLabel branch, const ShotParams& base = {},
    const Tolerances& tol = Tolerances::defaults(),
    double fd_target_override = 0.0) {
  cone.validate();
  const double fd_target =
      fd_target_override > 0.0 ? fd_target_override : tol.fd_target;
  ShotParams p = base;
  p.n = cone.n;
  p.neck_x = 0.0;

  const auto finish = [&](const ProfileCurve& prof,
                          const ShotParams& shot) -> ExpanderSolution {
    ExpanderSolution sol;
    sol.profile = prof;
    sol.cone = cone;
    sol.branch = branch;
    sol.shot = shot;
    const auto q = compute_quantities(prof);
    sol.residual_sup = q.residual_sup;
    if (q.residual_sup > tol.residual_sup)
      throw InsufficientResolution(
          "solved profile residual " + format_g17(q.residual_sup) +
          " exceeds the certificate bound " + format_g17(tol.residual_sup));
    sol.fit = infer_cone(prof);
    ConeSpec inferred = sol.fit.cone;
    if (prof.symmetry == ProfileSymmetry::kReflectAcrossX0 &&
        inferred.kind == ConeKind::kSingle) {
      // The stored arc covers one nappe; reflection supplies the other.
      inferred = make_double_cone(prof.n, inferred.alpha_plus);
    }
    if (!inferred.matches(cone, tol.cone_angle))
      throw ConeMismatch("solved profile locked onto half-angle " +
                         format_g17(inferred.alpha_plus) +
                         " instead of the requested " +
                         format_g17(cone.alpha_plus));
    return sol;
  };

  if (branch == BranchLabel::kGraph || branch == BranchLabel::kDiskPair) {
    if (branch == BranchLabel::kGraph && cone.kind != ConeKind::kSingle)
      throw OutOfDomain("graph branch requires a single cone");
    if (branch == BranchLabel::kDiskPair) {
      if (cone.kind != ConeKind::kDouble)
        throw OutOfDomain("disk_pair branch requires a double cone");
      if (std::abs(cone.alpha_plus - cone.alpha_minus) > 1e-12)
        throw OutOfDomain(
            "disk_pair reflection requires equal cone half-angles");
    }
    p.family = ShotFamily::kCap;
    const double target = cone.alpha_plus;
    double x0;
    if (std::abs(target - kPi / 2) <= 1e-9) {
      x0 = 0.0;  // the vertical line solves the flat case exactly
    } else {
      // phi(x0) falls from pi/2; expand the bracket until it dips below the
      // target, within the supported parameter range.
      double hi = 1.0, phi_hi = detail::bracket_phi(detail::with_parameter(p, hi));
      while (phi_hi > target && hi < 6.0) {
        hi = std::min(2.0 * hi, 6.0);
        phi_hi = detail::bracket_phi(detail::with_parameter(p, hi));
      }
      if (phi_hi > target)
        throw NoSolutionInBracket(
            "cap family stays above the target angle for x0 <= 6");
      x0 = detail::bisect_parameter(p, 0.0, hi, kPi / 2, phi_hi, target,
                                    false);
    }
    const ShotParams solved = detail::with_parameter(p, x0);
    ProfileCurve prof = build_profile(raw_shot(solved), fd_target);
    if (branch == BranchLabel::kDiskPair) {
      prof.symmetry = ProfileSymmetry::kReflectAcrossX0;
    } else {
      prof = reverse_profile(prof);
    }
    return finish(prof, solved);
  }

  // Annulus branches.
  if (cone.kind != ConeKind::kDouble)
    throw OutOfDomain("annulus branches require a double cone");
  p.family = ShotFamily::kNeck;
  const bool symmetric = std::abs(cone.alpha_plus - cone.alpha_minus) <= 1e-12;
  const bool inner = branch == BranchLabel::kAnnulusInner;

  const NeckFold fold = neck_fold(p);
  const double mean_target = 0.5 * (cone.alpha_plus + cone.alpha_minus);
  if (mean_target <= fold.phi_min + 1e-11)
    throw NoSolutionInBracket(
        "no annulus: target angle " + format_g17(mean_target) +
        " at or below the fold minimum " + format_g17(fold.phi_min));

  const double r_lo = inner ? 0.05 : fold.r0;
  const double r_hi = inner ? fold.r0 : 6.0;
  const double phi_lo = detail::bracket_phi(detail::with_parameter(p, r_lo));
  const double phi_hi = detail::bracket_phi(detail::with_parameter(p, r_hi));
  double r0 = detail::bisect_parameter(p, r_lo, r_hi, phi_lo, phi_hi,
                                       mean_target, !inner);

  ShotParams solved = detail::with_parameter(p, r0);
  if (symmetric) {
    const ProfileCurve half = build_profile(raw_shot(solved), fd_target);
    return finish(detail::splice_halves(half, half), solved);
  }

  // Unequal angles: Newton on (neck_x, r0) matching each end separately.
  double xc = 0.0;
  const auto ends = [&](double xcv, double r0v) {
    ShotParams right = solved;
    right.neck_x = xcv;
    right.parameter = r0v;
    ShotParams left = right;
    left.neck_x = -xcv;
    return std::array<double, 2>{detail::bracket_phi(right) - cone.alpha_plus,
                                 detail::bracket_phi(left) - cone.alpha_minus};
  };
  auto F = ends(xc, r0);
  double fnorm = std::hypot(F[0], F[1]);
  for (int it = 0; it < 25 && fnorm > 1e-12; ++it) {
    const double hx = 1e-7 * (1.0 + std::abs(xc));
    const double hr = 1e-7 * (1.0 + std::abs(r0));
    const auto Fx = ends(xc + hx, r0);
    const auto Fr = ends(xc, r0 + hr);
    const double j00 = (Fx[0] - F[0]) / hx, j01 = (Fr[0] - F[0]) / hr;
    const double j10 = (Fx[1] - F[1]) / hx, j11 = (Fr[1] - F[1]) / hr;
    const double det = j00 * j11 - j01 * j10;
    if (std::abs(det) < 1e-300)
      throw StiffFailure("degenerate Jacobian while matching unequal angles");
    double dx = -(j11 * F[0] - j01 * F[1]) / det;
    double dr = -(-j10 * F[0] + j00 * F[1]) / det;
    double scale = 1.0;
    for (int half = 0; half < 8; ++half) {
      const double xn = xc + scale * dx;
      const double rn = r0 + scale * dr;
      if (rn > 0.01) {
        const auto Fn = ends(xn, rn);
        const double nn = std::hypot(Fn[0], Fn[1]);
        if (nn < fnorm) {
          xc = xn;
          r0 = rn;
          F = Fn;
          fnorm = nn;
          break;
        }
      }
      scale *= 0.5;
      if (half == 7)
        throw NoSolutionInBracket(
            "unequal-angle annulus iteration stopped descending");
    }
  }
  if (fnorm > 1e-10)
    throw NoSolutionInBracket("unequal-angle annulus did not converge");

  solved.neck_x = xc;
  solved.parameter = r0;
  ShotParams left = solved;
  left.neck_x = -xc;
  const ProfileCurve right_half = build_profile(raw_shot(solved), fd_target);
  const ProfileCurve left_half = build_profile(raw_shot(left), fd_target);
  return finish(detail::splice_halves(left_half, right_half), solved);
}

}  // namespace expanderlab
