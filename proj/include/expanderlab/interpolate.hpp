#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "expanderlab/types.hpp"

namespace expanderlab {

// Cubic Hermite model of one profile segment, parameterized by u in [0,1].
// Endpoint tangents are the exact unit tangents (cos theta, sin theta)
// scaled by the arclength increment, so the interpolant is O(h^4) accurate
// in position and O(h^3) in tangent direction.
struct HermiteSegment {
  double s0 = 0.0, ds = 0.0;
  double x0 = 0.0, r0 = 0.0, x1 = 0.0, r1 = 0.0;
  double tx0 = 0.0, tr0 = 0.0, tx1 = 0.0, tr1 = 0.0;

  HermiteSegment() = default;
  HermiteSegment(const ProfileNode& a, const ProfileNode& b)
      : s0(a.s), ds(b.s - a.s), x0(a.x), r0(a.r), x1(b.x), r1(b.r),
        tx0(std::cos(a.theta)), tr0(std::sin(a.theta)),
        tx1(std::cos(b.theta)), tr1(std::sin(b.theta)) {}

  std::array<double, 2> position(double u) const {
    const double h00 = (1.0 + 2.0 * u) * (1.0 - u) * (1.0 - u);
    const double h10 = u * (1.0 - u) * (1.0 - u);
    const double h01 = u * u * (3.0 - 2.0 * u);
    const double h11 = u * u * (u - 1.0);
    return {h00 * x0 + ds * h10 * tx0 + h01 * x1 + ds * h11 * tx1,
            h00 * r0 + ds * h10 * tr0 + h01 * r1 + ds * h11 * tr1};
  }

  // d(position)/ds.
  std::array<double, 2> tangent(double u) const {
    const double g00 = 6.0 * u * (u - 1.0) / ds;
    const double g10 = (1.0 - u) * (1.0 - 3.0 * u);
    const double g01 = -g00;
    const double g11 = u * (3.0 * u - 2.0);
    return {g00 * x0 + g10 * tx0 + g01 * x1 + g11 * tx1,
            g00 * r0 + g10 * tr0 + g01 * r1 + g11 * tr1};
  }

  double theta(double u) const {
    const auto t = tangent(u);
    return std::atan2(t[1], t[0]);
  }
};

// Evaluates the piecewise Hermite model of a whole curve at arclength s
// (clamped to the curve's range).  Index lookup is O(log N).
struct CurveInterpolant {
  const ProfileCurve* curve;

  explicit CurveInterpolant(const ProfileCurve& c) : curve(&c) {}

  std::size_t segment_index(double s) const {
    const auto& nd = curve->nodes;
    std::size_t lo = 0, hi = nd.size() - 1;
    while (hi - lo > 1) {
      const std::size_t mid = (lo + hi) / 2;
      if (nd[mid].s <= s)
        lo = mid;
      else
        hi = mid;
    }
    return lo;
  }

  ProfileNode at(double s) const {
    const auto& nd = curve->nodes;
    if (s <= nd.front().s) return nd.front();
    if (s >= nd.back().s) return nd.back();
    const std::size_t i = segment_index(s);
    HermiteSegment seg(nd[i], nd[i + 1]);
    const double u = (s - seg.s0) / seg.ds;
    const auto p = seg.position(u);
    return ProfileNode{s, p[0], p[1], seg.theta(u)};
  }
};

// Rebuilds the curve on a new strictly increasing arclength grid.  The new
// parameter is re-measured from chord lengths of the interpolated points so
// it stays an arclength parameter to interpolation accuracy.
inline ProfileCurve resample_profile(const ProfileCurve& c,
                                     const std::vector<double>& new_s) {
  if (new_s.size() < 8) throw InsufficientResolution("resample grid too small");
  CurveInterpolant interp(c);
  ProfileCurve out;
  out.n = c.n;
  out.symmetry = c.symmetry;
  out.provenance = c.provenance;
  out.nodes.reserve(new_s.size());
  for (double s : new_s) out.nodes.push_back(interp.at(s));
  // Endpoints are preserved exactly.
  out.nodes.front() = c.nodes.front();
  out.nodes.back() = c.nodes.back();
  double acc = 0.0;
  double prev_x = out.nodes[0].x, prev_r = out.nodes[0].r;
  out.nodes[0].s = 0.0;
  for (std::size_t i = 1; i < out.nodes.size(); ++i) {
    const double dx = out.nodes[i].x - prev_x, dr = out.nodes[i].r - prev_r;
    prev_x = out.nodes[i].x;
    prev_r = out.nodes[i].r;
    acc += std::hypot(dx, dr);
    out.nodes[i].s = acc;
  }
  return out;
}

}  // namespace expanderlab
