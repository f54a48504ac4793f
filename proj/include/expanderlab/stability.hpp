#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "expanderlab/interpolate.hpp"
#include "expanderlab/numerics.hpp"
#include "expanderlab/shooting.hpp"
#include "expanderlab/types.hpp"

// Stability spectra of rotationally symmetric expanders.  A normal
// perturbation u separates into spherical-harmonic sectors; in sector ell
// the second-variation quadratic form reduces to a weighted problem along
// the profile arc,
//
//   -(w u')' - w V u = mu w u,   w = r^{n-1} exp(rho^2/4),
//   V = |A|^2 - 1/2 - ell (ell + n - 2) / r^2,
//
// with natural (no-flux) behavior where the profile meets the axis in the
// rotationally invariant sector, and decay at conical ends.  Positive mu
// are stable directions.  The arc is discretized by finite volumes on a
// uniform grid; the exploding weight never appears on its own, only as
// ratios of neighboring values, so everything is assembled in log space.

namespace expanderlab {

// Number of independent degree-ell spherical harmonics on S^{n-1}.
inline int harmonic_multiplicity(int ell, int n) {
  if (ell < 0 || n < 2) throw OutOfDomain("harmonic_multiplicity needs ell >= 0, n >= 2");
  const auto binom = [](long long a, long long b) -> long long {
    if (b < 0 || b > a) return 0;
    b = std::min(b, a - b);
    long long v = 1;
    for (long long i = 1; i <= b; ++i) v = v * (a - b + i) / i;
    return v;
  };
  return static_cast<int>(binom(n - 1 + ell, ell) - binom(n - 3 + ell, ell - 2));
}

// Far-field exponent: an eigenfunction at eigenvalue mu decays along a
// conical end like rho^sigma exp(-rho^2/4) with sigma = 2 mu - n - 1.
inline double eigen_decay_exponent(int n, double mu) {
  return 2.0 * mu - n - 1.0;
}

struct SpectrumOptions {
  double h = 4e-3;       // target arclength spacing of the uniform grid
  int ell_max = 8;       // highest harmonic sector solved
  int per_sector = 6;    // eigenvalues reported per sector
  bool richardson = true;  // combine h and h/2 runs to cancel the h^2 term
};

struct SectorSpectrum {
  int ell = 0;
  int mult = 1;            // harmonic multiplicity, doubled for mirrored pairs
  std::vector<double> mu;  // ascending
};

struct SpectrumResult {
  int n = 2;
  std::vector<SectorSpectrum> sectors;
  double mu1 = 0.0;  // bottom of the whole spectrum
  int ell_at_mu1 = 0;
  int index = 0;      // unstable directions, multiplicities included
  double beta = 0.0;  // (n + 1 - 2 mu1) / 2, the decay rate of the bottom mode
  bool doubled = false;  // mirror symmetry doubles every multiplicity
};

// Ground mode of one sector on the spectral grid, sup-normalized.
struct EigenFunction {
  int ell = 0;
  double mu = 0.0;
  std::vector<double> s, rho, u;
};

namespace detail {

struct SpectralGrid {
  int n = 2;
  double h = 0.0;
  bool axis0 = false, axis1 = false;  // which ends touch the axis
  double lmass0 = 0.0, lmass1 = 0.0;  // log half-cell masses at axis ends
  std::vector<double> s, rho, r, lw, lwm, base_v;  // lwm: midpoint log weight
};

inline double log_weight(int n, double r, double rho2) {
  return (n - 1) * std::log(r) + 0.25 * rho2;
}

inline SpectralGrid build_spectral_grid(const ProfileCurve& c,
                                        double h_target) {
  c.validate();
  CurveInterpolant interp(c);
  const double s0 = c.nodes.front().s, s1 = c.nodes.back().s;
  const std::size_t m = std::max<std::size_t>(
      16, static_cast<std::size_t>(std::llround((s1 - s0) / h_target)));
  SpectralGrid g;
  g.n = c.n;
  g.h = (s1 - s0) / static_cast<double>(m);
  g.axis0 = c.axis_start();
  g.axis1 = c.axis_end();
  g.s.resize(m + 1);
  g.rho.resize(m + 1);
  g.r.resize(m + 1);
  g.lw.resize(m + 1);
  g.lwm.resize(m);
  g.base_v.resize(m + 1);
  const auto fill = [&](double s, double& rho, double& r, double& lw,
                        double& bv) {
    const ProfileNode nd = interp.at(s);
    const double rho2 = nd.x * nd.x + nd.r * nd.r;
    rho = std::sqrt(rho2);
    r = nd.r;
    const double ct = std::cos(nd.theta), st = std::sin(nd.theta);
    // Curvature through the defining relation of the surface; the stored
    // curves satisfy it to the residual certificate, which beats any
    // finite-difference estimate from the nodes.
    const double mean = 0.5 * (nd.r * ct - nd.x * st);
    double a2;
    if (nd.r < 1e-9) {
      const double kappa = mean / c.n;
      a2 = c.n * kappa * kappa;
      lw = -1e300;  // never used: axis rows carry the half-cell mass instead
    } else {
      const double kappa = mean + (c.n - 1) * ct / nd.r;
      a2 = kappa * kappa + (c.n - 1) * ct * ct / (nd.r * nd.r);
      lw = log_weight(c.n, nd.r, rho2);
    }
    bv = a2 - 0.5;
  };
  for (std::size_t i = 0; i <= m; ++i) {
    g.s[i] = s0 + g.h * static_cast<double>(i);
    fill(g.s[i], g.rho[i], g.r[i], g.lw[i], g.base_v[i]);
  }
  for (std::size_t i = 0; i < m; ++i) {
    double rho, r, lw, bv;
    fill(s0 + g.h * (static_cast<double>(i) + 0.5), rho, r, lw, bv);
    g.lwm[i] = lw;
  }
  // Half-cell mass at an axis end: r grows linearly with arclength there,
  // so the cell integrates to (h/2)^n / n times the Gaussian factor.
  const double lh2 = std::log(0.5 * g.h);
  if (g.axis0)
    g.lmass0 = c.n * lh2 - std::log(double(c.n)) +
               0.25 * g.rho.front() * g.rho.front();
  if (g.axis1)
    g.lmass1 = c.n * lh2 - std::log(double(c.n)) +
               0.25 * g.rho.back() * g.rho.back();
  return g;
}

struct SectorMatrix {
  SymTridiag B;
  std::size_t i_lo = 0;           // grid index of the first active node
  std::vector<double> lmass;      // log node masses, for similarity mapping
};

// Similarity-transformed finite-volume matrix for one harmonic sector.
inline SectorMatrix assemble_sector(const SpectralGrid& g, int ell) {
  const std::size_t m = g.lwm.size();
  const double lh = std::log(g.h);
  const bool nat0 = g.axis0 && ell == 0, nat1 = g.axis1 && ell == 0;
  const std::size_t i_lo = nat0 ? 0 : 1;
  const std::size_t i_hi = nat1 ? m : m - 1;
  if (i_hi < i_lo + 8)
    throw InsufficientResolution("spectral grid too small for a sector");
  const std::size_t cnt = i_hi - i_lo + 1;
  SectorMatrix sm;
  sm.i_lo = i_lo;
  sm.B.d.resize(cnt);
  sm.B.e.resize(cnt - 1);
  sm.lmass.resize(cnt);
  const double hh = ell * (ell + g.n - 2);
  for (std::size_t j = 0; j < cnt; ++j) {
    const std::size_t i = i_lo + j;
    const bool half0 = nat0 && i == 0, half1 = nat1 && i == m;
    const double lmass = half0 ? g.lmass0 : (half1 ? g.lmass1 : g.lw[i] + lh);
    sm.lmass[j] = lmass;
    const double v =
        g.base_v[i] - (half0 || half1 ? 0.0 : hh / (g.r[i] * g.r[i]));
    double d = -v;
    if (!half0) d += std::exp(g.lwm[i - 1] - lh - lmass);
    if (!half1) d += std::exp(g.lwm[i] - lh - lmass);
    sm.B.d[j] = d;
  }
  for (std::size_t j = 0; j + 1 < cnt; ++j) {
    const std::size_t i = i_lo + j;
    sm.B.e[j] =
        -std::exp(g.lwm[i] - lh - 0.5 * (sm.lmass[j] + sm.lmass[j + 1]));
  }
  return sm;
}

inline std::vector<double> sector_eigenvalues(const SpectralGrid& g, int ell,
                                              int count) {
  const SectorMatrix sm = assemble_sector(g, ell);
  const int have =
      std::min<int>(std::max(1, count), static_cast<int>(sm.B.d.size()));
  std::vector<double> mu(have);
  for (int k = 0; k < have; ++k) mu[k] = sym_tridiag_eigenvalue(sm.B, k);
  return mu;
}

}  // namespace detail

inline SpectrumResult spectrum(const ProfileCurve& c,
                               const SpectrumOptions& opts = {}) {
  const auto solve_all = [&](double h) {
    const detail::SpectralGrid g = detail::build_spectral_grid(c, h);
    std::vector<std::vector<double>> mus;
    for (int ell = 0; ell <= opts.ell_max; ++ell)
      mus.push_back(detail::sector_eigenvalues(g, ell, opts.per_sector));
    return mus;
  };
  auto mus = solve_all(opts.h);
  if (opts.richardson) {
    const auto fine = solve_all(0.5 * opts.h);
    for (std::size_t l = 0; l < mus.size(); ++l)
      for (std::size_t k = 0; k < mus[l].size(); ++k)
        mus[l][k] = (4.0 * fine[l][k] - mus[l][k]) / 3.0;
  }
  SpectrumResult out;
  out.n = c.n;
  out.doubled = c.symmetry == ProfileSymmetry::kReflectAcrossX0;
  const int factor = out.doubled ? 2 : 1;
  out.mu1 = std::numeric_limits<double>::infinity();
  for (int ell = 0; ell <= opts.ell_max; ++ell) {
    SectorSpectrum sec;
    sec.ell = ell;
    sec.mult = factor * harmonic_multiplicity(ell, c.n);
    sec.mu = mus[static_cast<std::size_t>(ell)];
    if (!sec.mu.empty() && sec.mu.front() < out.mu1) {
      out.mu1 = sec.mu.front();
      out.ell_at_mu1 = ell;
    }
    for (double m : sec.mu)
      if (m < 0.0) out.index += sec.mult;
    out.sectors.push_back(std::move(sec));
  }
  // Sector bottoms rise with ell, so once the last bottom is safely
  // positive no higher sector can contribute unstable directions.
  if (!out.sectors.empty() && out.sectors.back().mu.front() < 0.0)
    throw InsufficientResolution(
        "sector bottom still negative at ell_max " +
        std::to_string(opts.ell_max) + "; the index needs more sectors");
  out.beta = 0.5 * (c.n + 1.0 - 2.0 * out.mu1);
  return out;
}

inline SpectrumResult spectrum(const ExpanderSolution& sol,
                               const SpectrumOptions& opts = {}) {
  return spectrum(sol.profile, opts);
}

// Sup-normalized lowest mode of one sector, computed on the fine grid.
// The sign is fixed so the mode is positive at its largest magnitude.
inline EigenFunction ground_mode(const ProfileCurve& c, int ell,
                                 const SpectrumOptions& opts = {}) {
  const double h = opts.richardson ? 0.5 * opts.h : opts.h;
  const detail::SpectralGrid g = detail::build_spectral_grid(c, h);
  const detail::SectorMatrix sm = detail::assemble_sector(g, ell);
  const double mu = sym_tridiag_eigenvalue(sm.B, 0);
  const std::vector<double> v = sym_tridiag_eigenvector(sm.B, mu);
  EigenFunction ef;
  ef.ell = ell;
  ef.mu = mu;
  ef.s = g.s;
  ef.rho = g.rho;
  ef.u.assign(g.s.size(), 0.0);
  // Undo the similarity scaling; subtracting the largest log mass keeps
  // the exponentials tame before the final normalization.
  double lref = -1e300;
  for (double lm : sm.lmass) lref = std::max(lref, lm);
  for (std::size_t j = 0; j < v.size(); ++j)
    ef.u[sm.i_lo + j] = v[j] * std::exp(-0.5 * (sm.lmass[j] - lref));
  double peak = 0.0;
  std::size_t at = 0;
  for (std::size_t i = 0; i < ef.u.size(); ++i)
    if (std::abs(ef.u[i]) > peak) {
      peak = std::abs(ef.u[i]);
      at = i;
    }
  if (!(peak > 0.0)) throw InsufficientResolution("ground mode vanished");
  const double scale = (ef.u[at] > 0.0 ? 1.0 : -1.0) / peak;
  for (double& x : ef.u) x *= scale;
  return ef;
}

// Independent check of a computed pair: the quadratic-form quotient
// evaluated with nodal slopes and trapezoid masses, not the assembled
// matrix.  Agreement is to the scheme order, not roundoff.
inline double rayleigh_quotient(const ProfileCurve& c,
                                const EigenFunction& ef) {
  c.validate();
  CurveInterpolant interp(c);
  const std::size_t m = ef.s.size();
  if (m < 8 || ef.u.size() != m)
    throw InvalidProfile("eigenfunction grid mismatch");
  const double hh = static_cast<double>(ef.ell) * (ef.ell + c.n - 2);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const ProfileNode nd = interp.at(ef.s[i]);
    if (nd.r <= 0.0) continue;  // axis point: zero measure in the weight
    const double rho2 = nd.x * nd.x + nd.r * nd.r;
    const double w = std::pow(nd.r, c.n - 1) * std::exp(0.25 * rho2);
    const double ct = std::cos(nd.theta), st = std::sin(nd.theta);
    const double mean = 0.5 * (nd.r * ct - nd.x * st);
    const double kappa = mean + (c.n - 1) * ct / nd.r;
    const double v = kappa * kappa + (c.n - 1) * ct * ct / (nd.r * nd.r) -
                     0.5 - hh / (nd.r * nd.r);
    double du;
    if (i == 0)
      du = (-1.5 * ef.u[0] + 2.0 * ef.u[1] - 0.5 * ef.u[2]);
    else if (i + 1 == m)
      du = (1.5 * ef.u[m - 1] - 2.0 * ef.u[m - 2] + 0.5 * ef.u[m - 3]);
    else
      du = 0.5 * (ef.u[i + 1] - ef.u[i - 1]);
    du /= (ef.s[1] - ef.s[0]);
    const double cell = (i == 0 || i + 1 == m) ? 0.5 : 1.0;
    num += cell * w * (du * du - v * ef.u[i] * ef.u[i]);
    den += cell * w * ef.u[i] * ef.u[i];
  }
  if (!(den > 0.0)) throw InvalidProfile("degenerate eigenfunction norm");
  return num / den;
}

struct DecayFit {
  double fitted = 0.0;
  double predicted = 0.0;
  double rho_lo = 0.0, rho_hi = 0.0;
  std::size_t points = 0;
};

// Fits the power-law prefactor of the Gaussian decay along the farther
// conical end and compares with the exponent the eigenvalue dictates.
inline DecayFit decay_fit(const EigenFunction& ef, int n) {
  const std::size_t m = ef.rho.size();
  if (m < 16) throw InvalidProfile("eigenfunction too short for a decay fit");
  const bool far_first = ef.rho.front() > ef.rho.back();
  const std::size_t cut = m / 2;
  double rho_max = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const bool in_half = far_first ? i < cut : i >= cut;
    if (in_half) rho_max = std::max(rho_max, ef.rho[i]);
  }
  DecayFit out;
  out.predicted = eigen_decay_exponent(n, ef.mu);
  out.rho_lo = 0.55 * rho_max;
  out.rho_hi = 0.85 * rho_max;
  std::vector<std::vector<double>> rows;
  std::vector<double> rhs;
  for (std::size_t i = 0; i < m; ++i) {
    const bool in_half = far_first ? i < cut : i >= cut;
    const double rho = ef.rho[i];
    if (!in_half || rho < out.rho_lo || rho > out.rho_hi) continue;
    const double a = std::abs(ef.u[i]);
    if (a < 1e-250) continue;
    rows.push_back({std::log(rho), 1.0});
    rhs.push_back(std::log(a) + 0.25 * rho * rho);
  }
  out.points = rows.size();
  if (out.points < 8)
    throw InsufficientTail("too few points in the decay window");
  const auto coef = least_squares(rows, rhs, {});
  out.fitted = coef[0];
  return out;
}

}  // namespace expanderlab
