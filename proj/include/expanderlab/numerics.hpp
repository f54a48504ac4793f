#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "expanderlab/types.hpp"

namespace expanderlab {

// ---------------------------------------------------------------------------
// Compensated accumulation.

struct KahanSum {
  double sum = 0.0;
  double carry = 0.0;
  void add(double v) {
    const double y = v - carry;
    const double t = sum + y;
    carry = (t - sum) - y;
    sum = t;
  }
  double value() const { return sum; }
};

// ---------------------------------------------------------------------------
// Tridiagonal linear solve (partial pivoting, handles indefinite shifts).
// lower[i] multiplies x[i-1], diag[i] x[i], upper[i] x[i+1].

inline std::vector<double> solve_tridiagonal(std::vector<double> lower,
                                             std::vector<double> diag,
                                             std::vector<double> upper,
                                             std::vector<double> rhs) {
  const std::size_t m = diag.size();
  if (m == 0) return {};
  std::vector<double> extra(m, 0.0);  // fill-in created by row swaps
  for (std::size_t i = 0; i + 1 < m; ++i) {
    if (std::abs(lower[i + 1]) > std::abs(diag[i])) {
      std::swap(diag[i], lower[i + 1]);
      std::swap(upper[i], diag[i + 1]);
      if (i + 2 < m) std::swap(extra[i], upper[i + 1]);
      std::swap(rhs[i], rhs[i + 1]);
    }
    if (diag[i] == 0.0) throw Error("singular tridiagonal system");
    const double f = lower[i + 1] / diag[i];
    diag[i + 1] -= f * upper[i];
    if (i + 2 < m) upper[i + 1] -= f * extra[i];
    rhs[i + 1] -= f * rhs[i];
  }
  std::vector<double> x(m);
  for (std::size_t k = m; k-- > 0;) {
    double v = rhs[k];
    if (k + 1 < m) v -= upper[k] * x[k + 1];
    if (k + 2 < m) v -= extra[k] * x[k + 2];
    if (diag[k] == 0.0) throw Error("singular tridiagonal system");
    x[k] = v / diag[k];
  }
  return x;
}

// ---------------------------------------------------------------------------
// Symmetric tridiagonal eigenproblem: k lowest eigenvalues by bisection with
// Sturm counts, eigenvectors by shifted inverse iteration.

struct SymTridiag {
  std::vector<double> d;  // diagonal, size m
  std::vector<double> e;  // off-diagonal, size m-1
};

// Number of eigenvalues strictly below x.
inline int sturm_count(const SymTridiag& T, double x) {
  const std::size_t m = T.d.size();
  int count = 0;
  double q = 1.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double e2 = i == 0 ? 0.0 : T.e[i - 1] * T.e[i - 1];
    q = T.d[i] - x - e2 / q;
    // A vanishing pivot counts as negative; scaling by e2 keeps the next
    // division finite whatever the matrix scale.
    if (q == 0.0) q = -1e-300 * (1.0 + e2);
    if (q < 0.0) ++count;
  }
  return count;
}

inline std::pair<double, double> gershgorin_bounds(const SymTridiag& T) {
  const std::size_t m = T.d.size();
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t i = 0; i < m; ++i) {
    const double w = (i > 0 ? std::abs(T.e[i - 1]) : 0.0) +
                     (i + 1 < m ? std::abs(T.e[i]) : 0.0);
    lo = std::min(lo, T.d[i] - w);
    hi = std::max(hi, T.d[i] + w);
  }
  return {lo, hi};
}

// Eigenvalue of index k (0-based, ascending) by bisection.
inline double sym_tridiag_eigenvalue(const SymTridiag& T, int k) {
  auto [lo, hi] = gershgorin_bounds(T);
  const double scale = std::max(std::abs(lo), std::abs(hi)) + 1.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (sturm_count(T, mid) > k)
      hi = mid;
    else
      lo = mid;
    if (hi - lo < 1e-15 * scale) break;
  }
  return 0.5 * (lo + hi);
}

// Inverse iteration for the eigenvector at eigenvalue mu (unit 2-norm).
inline std::vector<double> sym_tridiag_eigenvector(const SymTridiag& T,
                                                   double mu) {
  const std::size_t m = T.d.size();
  std::vector<double> v(m);
  // Deterministic start vector with no special symmetry.
  for (std::size_t i = 0; i < m; ++i)
    v[i] = 1.0 + 0.5 * std::sin(1.0 + 7.3 * static_cast<double>(i));
  const double shift = mu + 1e-12 * (std::abs(mu) + 1.0);
  for (int it = 0; it < 6; ++it) {
    std::vector<double> lo(m, 0.0), di(m), up(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      di[i] = T.d[i] - shift;
      if (i > 0) lo[i] = T.e[i - 1];
      if (i + 1 < m) up[i] = T.e[i];
    }
    v = solve_tridiagonal(lo, di, up, v);
    double norm = 0.0;
    for (double c : v) norm += c * c;
    norm = std::sqrt(norm);
    if (!(norm > 0.0) || !std::isfinite(norm)) throw Error("inverse iteration broke down");
    for (double& c : v) c /= norm;
  }
  return v;
}

// ---------------------------------------------------------------------------
// Dense linear least squares for a handful of parameters (normal equations).

inline std::vector<double> solve_dense(std::vector<std::vector<double>> A,
                                       std::vector<double> b) {
  const std::size_t m = b.size();
  for (std::size_t col = 0; col < m; ++col) {
    std::size_t piv = col;
    for (std::size_t rr = col + 1; rr < m; ++rr)
      if (std::abs(A[rr][col]) > std::abs(A[piv][col])) piv = rr;
    std::swap(A[piv], A[col]);
    std::swap(b[piv], b[col]);
    if (A[col][col] == 0.0) throw Error("singular normal equations");
    for (std::size_t rr = col + 1; rr < m; ++rr) {
      const double f = A[rr][col] / A[col][col];
      for (std::size_t cc = col; cc < m; ++cc) A[rr][cc] -= f * A[col][cc];
      b[rr] -= f * b[col];
    }
  }
  std::vector<double> x(m);
  for (std::size_t k = m; k-- > 0;) {
    double v = b[k];
    for (std::size_t cc = k + 1; cc < m; ++cc) v -= A[k][cc] * x[cc];
    x[k] = v / A[k][k];
  }
  return x;
}

// Weighted least squares y ~ sum_j beta_j * basis_j; returns beta and fills
// rms (weighted root-mean-square residual) when non-null.
inline std::vector<double> least_squares(
    const std::vector<std::vector<double>>& basis_rows,
    const std::vector<double>& y, const std::vector<double>& w,
    double* rms = nullptr) {
  const std::size_t npts = y.size();
  if (npts == 0 || basis_rows.size() != npts)
    throw Error("least_squares: inconsistent sizes");
  const std::size_t k = basis_rows[0].size();
  std::vector<std::vector<double>> ata(k, std::vector<double>(k, 0.0));
  std::vector<double> atb(k, 0.0);
  for (std::size_t i = 0; i < npts; ++i) {
    const double wi = w.empty() ? 1.0 : w[i];
    for (std::size_t a = 0; a < k; ++a) {
      atb[a] += wi * basis_rows[i][a] * y[i];
      for (std::size_t b2 = 0; b2 <= a; ++b2)
        ata[a][b2] += wi * basis_rows[i][a] * basis_rows[i][b2];
    }
  }
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b2 = a + 1; b2 < k; ++b2) ata[a][b2] = ata[b2][a];
  auto beta = solve_dense(ata, atb);
  if (rms) {
    double ss = 0.0, wsum = 0.0;
    for (std::size_t i = 0; i < npts; ++i) {
      double fit = 0.0;
      for (std::size_t a = 0; a < k; ++a) fit += beta[a] * basis_rows[i][a];
      const double wi = w.empty() ? 1.0 : w[i];
      ss += wi * (y[i] - fit) * (y[i] - fit);
      wsum += wi;
    }
    *rms = wsum > 0.0 ? std::sqrt(ss / wsum) : 0.0;
  }
  return beta;
}

// ---------------------------------------------------------------------------
// Adaptive Simpson quadrature.

namespace detail {
inline double adaptive_simpson_rec(const std::function<double(double)>& f,
                                   double a, double b, double fa, double fm,
                                   double fb, double whole, double tol,
                                   int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol)
    return left + right + delta / 15.0;
  return adaptive_simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol,
                              depth - 1) +
         adaptive_simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol,
                              depth - 1);
}
}  // namespace detail

inline double adaptive_simpson(const std::function<double(double)>& f, double a,
                               double b, double tol, int max_depth = 40) {
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return detail::adaptive_simpson_rec(f, a, b, fa, fm, fb, whole, tol,
                                      max_depth);
}

// ---------------------------------------------------------------------------
// Bracketed scalar root finding (Brent).

inline double brent_root(const std::function<double(double)>& f, double a,
                         double b, double xtol, int max_iter = 200) {
  double fa = f(a), fb = f(b);
  if (fa == 0.0) return a;
  if (fb == 0.0) return b;
  if (fa * fb > 0.0) throw NoSolutionInBracket("no sign change in bracket");
  double c = a, fc = fa, d = b - a, e = d;
  for (int it = 0; it < max_iter; ++it) {
    if (std::abs(fc) < std::abs(fb)) {
      a = b; b = c; c = a;
      fa = fb; fb = fc; fc = fa;
    }
    const double tol1 = 2.0 * std::numeric_limits<double>::epsilon() *
                            std::abs(b) + 0.5 * xtol;
    const double xm = 0.5 * (c - b);
    if (std::abs(xm) <= tol1 || fb == 0.0) return b;
    if (std::abs(e) >= tol1 && std::abs(fa) > std::abs(fb)) {
      double p, q, r2;
      const double s = fb / fa;
      if (a == c) {
        p = 2.0 * xm * s;
        q = 1.0 - s;
      } else {
        q = fa / fc;
        r2 = fb / fc;
        p = s * (2.0 * xm * q * (q - r2) - (b - a) * (r2 - 1.0));
        q = (q - 1.0) * (r2 - 1.0) * (s - 1.0);
      }
      if (p > 0.0) q = -q;
      p = std::abs(p);
      if (2.0 * p < std::min(3.0 * xm * q - std::abs(tol1 * q),
                             std::abs(e * q))) {
        e = d;
        d = p / q;
      } else {
        d = xm;
        e = d;
      }
    } else {
      d = xm;
      e = d;
    }
    a = b;
    fa = fb;
    b += std::abs(d) > tol1 ? d : (xm > 0.0 ? tol1 : -tol1);
    fb = f(b);
    if ((fb > 0.0) == (fc > 0.0)) {
      c = a;
      fc = fa;
      d = b - a;
      e = d;
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Quasi-Newton maximization (BFGS with backtracking) in a few variables.

struct QuasiNewtonResult {
  std::vector<double> x;
  double f = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Maximizes f; fg returns the value and writes the gradient.
inline QuasiNewtonResult maximize_bfgs(
    const std::function<double(const std::vector<double>&,
                               std::vector<double>&)>& fg,
    std::vector<double> x0, double grad_tol, int max_iter) {
  const std::size_t dim = x0.size();
  std::vector<std::vector<double>> Hinv(dim, std::vector<double>(dim, 0.0));
  for (std::size_t i = 0; i < dim; ++i) Hinv[i][i] = 1.0;
  std::vector<double> g(dim), gn(dim), p(dim), xn(dim), sdiff(dim), ydiff(dim);
  double fx = fg(x0, g);
  QuasiNewtonResult res;
  res.x = x0;
  res.f = fx;
  for (int it = 0; it < max_iter; ++it) {
    double gnorm = 0.0;
    for (double v : g) gnorm = std::max(gnorm, std::abs(v));
    res.grad_norm = gnorm;
    res.iterations = it;
    if (gnorm < grad_tol) {
      res.converged = true;
      break;
    }
    // Ascent direction p = Hinv * g.
    for (std::size_t i = 0; i < dim; ++i) {
      double v = 0.0;
      for (std::size_t j = 0; j < dim; ++j) v += Hinv[i][j] * g[j];
      p[i] = v;
    }
    double dir = 0.0;
    for (std::size_t i = 0; i < dim; ++i) dir += p[i] * g[i];
    if (!(dir > 0.0)) {  // reset to steepest ascent
      for (std::size_t i = 0; i < dim; ++i) {
        for (std::size_t j = 0; j < dim; ++j) Hinv[i][j] = i == j ? 1.0 : 0.0;
        p[i] = g[i];
      }
      dir = 0.0;
      for (std::size_t i = 0; i < dim; ++i) dir += p[i] * g[i];
      if (!(dir > 0.0)) break;
    }
    double step = 1.0;
    double fn = fx;
    bool ok = false;
    for (int ls = 0; ls < 40; ++ls) {
      for (std::size_t i = 0; i < dim; ++i) xn[i] = res.x[i] + step * p[i];
      fn = fg(xn, gn);
      if (std::isfinite(fn) && fn >= fx + 1e-4 * step * dir) {
        ok = true;
        break;
      }
      step *= 0.5;
    }
    if (!ok) break;
    // Expand while doubling keeps strictly improving.  Objectives with
    // Gaussian-type tails are convex far out, so the curvature update below
    // never fires there and the unit-scale step would crawl.
    {
      std::vector<double> xbest = xn, gbest = gn;
      double fbest = fn;
      for (int ex = 0; ex < 60; ++ex) {
        const double wider = step * 2.0;
        for (std::size_t i = 0; i < dim; ++i)
          xn[i] = res.x[i] + wider * p[i];
        const double fw = fg(xn, gn);
        if (!std::isfinite(fw) || fw <= fbest) break;
        step = wider;
        fbest = fw;
        xbest = xn;
        gbest = gn;
      }
      xn = xbest;
      gn = gbest;
      fn = fbest;
    }
    for (std::size_t i = 0; i < dim; ++i) {
      sdiff[i] = xn[i] - res.x[i];
      ydiff[i] = g[i] - gn[i];  // gradient change of -f along the step
    }
    // BFGS update of the inverse Hessian of -f (so that Hinv stays SPD).
    double sy = 0.0;
    for (std::size_t i = 0; i < dim; ++i) sy += sdiff[i] * ydiff[i];
    if (sy > 1e-14) {
      std::vector<double> Hy(dim, 0.0);
      for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = 0; j < dim; ++j) Hy[i] += Hinv[i][j] * ydiff[j];
      double yHy = 0.0;
      for (std::size_t i = 0; i < dim; ++i) yHy += ydiff[i] * Hy[i];
      for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = 0; j < dim; ++j)
          Hinv[i][j] += (sy + yHy) * sdiff[i] * sdiff[j] / (sy * sy) -
                        (Hy[i] * sdiff[j] + sdiff[i] * Hy[j]) / sy;
    }
    res.x = xn;
    fx = fn;
    g = gn;
    res.f = fx;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Deterministic pseudo-random stream (splitmix64) for randomized checks.

struct SplitMix64 {
  std::uint64_t state;
  explicit SplitMix64(std::uint64_t seed) : state(seed) {}
  std::uint64_t next() {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
  double uniform() {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
};

// ---------------------------------------------------------------------------
// FNV-1a 64-bit content hash.

inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace expanderlab
