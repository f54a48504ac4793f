#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "expanderlab/shooting.hpp"

using namespace expanderlab;

namespace {

const ExpanderSolution& graph_solution() {
  static const ExpanderSolution sol =
      find_expander_for_cone(make_single_cone(2, 0.9), BranchLabel::kGraph);
  return sol;
}

const ExpanderSolution& disk_pair_solution() {
  static const ExpanderSolution sol =
      find_expander_for_cone(make_double_cone(2, 0.7), BranchLabel::kDiskPair);
  return sol;
}

struct AnnulusFixture {
  NeckFold fold;
  double alpha = 0.0;
  ExpanderSolution inner;
  ExpanderSolution outer;
};

const AnnulusFixture& annulus_fixture() {
  static const AnnulusFixture fx = [] {
    AnnulusFixture f;
    ShotParams base;
    base.n = 2;
    base.family = ShotFamily::kNeck;
    f.fold = neck_fold(base);
    // A target angle comfortably inside the window where both neck branches
    // exist: between the fold minimum and pi/2.
    f.alpha = f.fold.phi_min + 0.6 * (kPi / 2 - f.fold.phi_min);
    const auto cone = make_double_cone(2, f.alpha);
    f.inner = find_expander_for_cone(cone, BranchLabel::kAnnulusInner);
    f.outer = find_expander_for_cone(cone, BranchLabel::kAnnulusOuter);
    return f;
  }();
  return fx;
}

double min_radius(const ProfileCurve& c) {
  double m = c.nodes.front().r;
  for (const auto& nd : c.nodes) m = std::min(m, nd.r);
  return m;
}

}  // namespace

TEST_CASE("raw shots integrate to certified expander arcs") {
  ShotParams cap3;
  cap3.family = ShotFamily::kCap;
  cap3.parameter = 1.2;
  cap3.n = 3;
  ShotParams neck3;
  neck3.family = ShotFamily::kNeck;
  neck3.parameter = 1.0;
  neck3.n = 3;
  ShotParams cap2;
  cap2.family = ShotFamily::kCap;
  cap2.parameter = 0.6;
  cap2.n = 2;
  for (const auto& p : {cap3, neck3, cap2}) {
    const auto prof = integrate_profile(p);
    const auto q = compute_quantities(prof);
    REQUIRE(q.residual_sup < 1e-6);
    const auto e = expansion_quantity(prof, q, 0.0, 1.0);
    for (std::size_t i = 0; i < prof.size(); ++i)
      REQUIRE(e[i] == Catch::Approx(-2.0 * q.residual[i]).margin(1e-12));
    REQUIRE(prof.provenance.find("stop=far_field") != std::string::npos);
  }

  // Axis curvature of a cap shot: theta leaves the vertical at rate x0/(2n).
  const auto prof = integrate_profile(cap3);
  REQUIRE(prof.axis_start());
  const auto q = compute_quantities(prof);
  REQUIRE(q.kappa[0] == Catch::Approx(-1.2 / (2.0 * 3.0)).margin(1e-5));
}

TEST_CASE("zero-height cap shot is the vertical hyperplane meridian") {
  ShotParams p;
  p.family = ShotFamily::kCap;
  p.parameter = 0.0;
  p.n = 2;
  REQUIRE(shot_phi(p) == Catch::Approx(kPi / 2).margin(1e-6));
}

TEST_CASE("cap asymptotic angle falls as the cap height grows") {
  ShotParams p;
  p.family = ShotFamily::kCap;
  p.n = 2;
  p.parameter = 0.5;
  const double phi_small = shot_phi(p);
  p.parameter = 1.5;
  const double phi_large = shot_phi(p);
  REQUIRE(phi_small < kPi / 2 - 1e-3);
  REQUIRE(phi_large < phi_small - 1e-2);
}

TEST_CASE("extreme neck radii flatten toward the plane") {
  // Both ends of the radius range are still conical; the asymptotic angle
  // climbs back toward pi/2, which is what makes the fold an interior
  // minimum.
  ShotParams p;
  p.family = ShotFamily::kNeck;
  p.n = 2;
  const auto phi_at = [&](double r0) {
    p.parameter = r0;
    return shot_phi(p);
  };
  const double phi_tight = phi_at(0.02);
  const double phi_mid = phi_at(0.05);
  REQUIRE(phi_tight < kPi / 2);
  REQUIRE(phi_tight > kPi / 2 - 0.06);
  REQUIRE(phi_mid < phi_tight);
  REQUIRE(phi_at(6.0) > phi_at(3.0));
}

TEST_CASE("shot parameter validation") {
  ShotParams p;
  p.family = ShotFamily::kCap;
  p.parameter = -1.0;
  REQUIRE_THROWS_AS(raw_shot(p), OutOfDomain);
  p.parameter = 1.0;
  p.s_max = 10.0;
  REQUIRE_THROWS_AS(raw_shot(p), OutOfDomain);
  p.s_max = 40.0;
  p.rho_max = 20.0;  // not strictly below s_max / 2
  REQUIRE_THROWS_AS(raw_shot(p), OutOfDomain);
  p.rho_max = 14.0;
  p.family = ShotFamily::kNeck;
  p.parameter = 0.0;
  REQUIRE_THROWS_AS(raw_shot(p), OutOfDomain);
}

TEST_CASE("graph solution: orientation, certificate, cone lock") {
  const auto& sol = graph_solution();
  REQUIRE(sol.residual_sup < 1e-6);
  REQUIRE(sol.branch == BranchLabel::kGraph);
  // Stored far end first, axis endpoint last.
  REQUIRE(sol.profile.nodes.front().r > 3.0);
  REQUIRE(sol.profile.axis_end());
  REQUIRE_FALSE(sol.profile.axis_start());
  // Reversed traversal: tangent angle sits below -pi/2, so the normal
  // (-sin theta, cos theta) points toward +x.
  const double th = sol.profile.nodes.front().theta;
  REQUIRE(th < -kPi / 2);
  REQUIRE(th > -kPi);
  REQUIRE(-std::sin(th) > 0.0);
  REQUIRE(sol.fit.cone.kind == ConeKind::kSingle);
  REQUIRE(sol.fit.cone.alpha_plus == Catch::Approx(0.9).margin(1e-4));
  REQUIRE(sol.shot.parameter > 0.0);
}

TEST_CASE("disk pair solution: reflection symmetry and universal tail") {
  const auto& sol = disk_pair_solution();
  REQUIRE(sol.residual_sup < 1e-6);
  REQUIRE(sol.profile.symmetry == ProfileSymmetry::kReflectAcrossX0);
  REQUIRE(sol.profile.axis_start());
  REQUIRE_FALSE(sol.profile.axis_end());
  REQUIRE(sol.shot.parameter > 0.0);
  REQUIRE(sol.fit.fits.size() == 1);
  REQUIRE(sol.fit.fits[0].side == +1);
  const double alpha = sol.fit.fits[0].angle;
  REQUIRE(alpha == Catch::Approx(0.7).margin(1e-4));

  // The far end's signed normal offset from its asymptotic ray follows the
  // cone-determined tail a/rho + b/rho^3.
  std::size_t checked = 0;
  for (const auto& nd : sol.profile.nodes) {
    const double rho = std::hypot(nd.x, nd.r);
    if (rho < 9.0 || rho > 12.5) continue;
    const double u = -nd.x * std::sin(alpha) + nd.r * std::cos(alpha);
    const double model = cone_tail_offset(2, alpha, rho);
    REQUIRE(u == Catch::Approx(model).margin(1e-3));
    ++checked;
  }
  REQUIRE(checked >= 10);
}

TEST_CASE("flat double cone is solved by the vertical meridian") {
  const auto sol =
      find_expander_for_cone(make_double_cone(2, kPi / 2),
                             BranchLabel::kDiskPair);
  REQUIRE(sol.shot.parameter == 0.0);
  REQUIRE(sol.residual_sup < 1e-9);
  for (const auto& nd : sol.profile.nodes) REQUIRE(std::abs(nd.x) < 1e-8);
}

TEST_CASE("neck fold separates two annulus branches") {
  const auto& fx = annulus_fixture();
  REQUIRE(fx.fold.r0 > 0.05);
  REQUIRE(fx.fold.r0 < 6.0);
  REQUIRE(fx.fold.phi_min > 0.0);
  REQUIRE(fx.fold.phi_min < kPi / 2);

  // The angle map turns upward on both sides of the fold.
  ShotParams p;
  p.n = 2;
  p.family = ShotFamily::kNeck;
  p.parameter = 0.8 * fx.fold.r0;
  REQUIRE(shot_phi(p) >= fx.fold.phi_min - 1e-6);
  p.parameter = 1.25 * fx.fold.r0;
  REQUIRE(shot_phi(p) >= fx.fold.phi_min - 1e-6);

  REQUIRE(fx.inner.shot.parameter < fx.fold.r0);
  REQUIRE(fx.outer.shot.parameter > fx.fold.r0);
  REQUIRE(fx.outer.shot.parameter - fx.inner.shot.parameter > 0.01);
  for (const auto* sol : {&fx.inner, &fx.outer}) {
    REQUIRE(sol->residual_sup < 1e-6);
    REQUIRE(sol->profile.symmetry == ProfileSymmetry::kNone);
    REQUIRE_FALSE(sol->profile.axis_start());
    REQUIRE_FALSE(sol->profile.axis_end());
    // Symmetric annulus: the waist sits on the reflection plane.
    REQUIRE(min_radius(sol->profile) ==
            Catch::Approx(sol->shot.parameter).margin(1e-9));
    REQUIRE(sol->fit.cone.kind == ConeKind::kDouble);
    REQUIRE(sol->fit.cone.alpha_plus == Catch::Approx(fx.alpha).margin(1e-4));
    REQUIRE(sol->fit.cone.alpha_minus == Catch::Approx(fx.alpha).margin(1e-4));
  }
}

TEST_CASE("no annulus exists below the fold minimum") {
  const auto& fx = annulus_fixture();
  const double alpha = fx.fold.phi_min - 0.05;
  REQUIRE(alpha > 0.1);
  REQUIRE_THROWS_AS(find_expander_for_cone(make_double_cone(2, alpha),
                                           BranchLabel::kAnnulusInner),
                    NoSolutionInBracket);
}

TEST_CASE("unequal cone angles shift the neck off the reflection plane") {
  const auto& fx = annulus_fixture();
  const auto cone = make_double_cone(2, fx.alpha + 0.04, fx.alpha - 0.03);
  const auto sol =
      find_expander_for_cone(cone, BranchLabel::kAnnulusInner);
  REQUIRE(sol.residual_sup < 1e-6);
  REQUIRE(std::abs(sol.shot.neck_x) > 1e-6);
  REQUIRE(sol.fit.fits.size() == 2);
  REQUIRE(sol.fit.fits[0].side == -1);
  REQUIRE(sol.fit.fits[1].side == +1);
  REQUIRE(sol.fit.cone.alpha_plus ==
          Catch::Approx(fx.alpha + 0.04).margin(2e-4));
  REQUIRE(sol.fit.cone.alpha_minus ==
          Catch::Approx(fx.alpha - 0.03).margin(2e-4));
}

TEST_CASE("branch and cone kinds must agree") {
  const auto dbl = make_double_cone(2, 0.8);
  const auto sgl = make_single_cone(2, 0.8);
  REQUIRE_THROWS_AS(find_expander_for_cone(dbl, BranchLabel::kGraph),
                    OutOfDomain);
  REQUIRE_THROWS_AS(find_expander_for_cone(sgl, BranchLabel::kDiskPair),
                    OutOfDomain);
  REQUIRE_THROWS_AS(find_expander_for_cone(sgl, BranchLabel::kAnnulusInner),
                    OutOfDomain);
  REQUIRE_THROWS_AS(
      find_expander_for_cone(make_double_cone(2, 0.8, 0.9),
                             BranchLabel::kDiskPair),
      OutOfDomain);
}

TEST_CASE("discrete weighted energy: first variation equals the residual") {
  // Arc of the meridian circle x^2 + r^2 = 2n, away from the axis: not an
  // expander, so its residual (identically 2 here) must show up as the
  // normal derivative of E = sum w(mid) |chord| with w = r^{n-1} e^{rho^2/4}.
  const int n = 2;
  const double R = std::sqrt(2.0 * n);
  ProfileCurve c;
  c.n = n;
  const std::size_t m = 160;
  for (std::size_t i = 0; i <= m; ++i) {
    const double psi = 0.3 * kPi + 0.4 * kPi * i / m;
    c.nodes.push_back({R * psi, R * std::cos(psi), R * std::sin(psi),
                       kPi / 2 + psi});
  }
  const auto q = compute_quantities(c);

  const auto weight = [n](double x, double r) {
    return std::pow(r, n - 1) * std::exp((x * x + r * r) / 4.0);
  };
  const auto energy = [&](const std::vector<ProfileNode>& nodes) {
    double e = 0.0;
    for (std::size_t i = 0; i + 1 < nodes.size(); ++i) {
      const double mx = 0.5 * (nodes[i].x + nodes[i + 1].x);
      const double mr = 0.5 * (nodes[i].r + nodes[i + 1].r);
      e += weight(mx, mr) *
           std::hypot(nodes[i + 1].x - nodes[i].x,
                      nodes[i + 1].r - nodes[i].r);
    }
    return e;
  };

  for (const std::size_t i : {m / 4, m / 2, 3 * m / 4}) {
    const double eps = 1e-5;
    const double nx = -std::sin(c.nodes[i].theta);
    const double nr = std::cos(c.nodes[i].theta);
    auto plus = c.nodes, minus = c.nodes;
    plus[i].x += eps * nx;
    plus[i].r += eps * nr;
    minus[i].x -= eps * nx;
    minus[i].r -= eps * nr;
    const double de = (energy(plus) - energy(minus)) / (2.0 * eps);
    const double ds = 0.5 * (c.nodes[i + 1].s - c.nodes[i - 1].s);
    const double predicted =
        -q.residual[i] * weight(c.nodes[i].x, c.nodes[i].r) * ds;
    REQUIRE(de == Catch::Approx(predicted).epsilon(1e-2));
  }
}

TEST_CASE("boundary-value solves are deterministic") {
  const auto a =
      find_expander_for_cone(make_single_cone(2, 0.9), BranchLabel::kGraph);
  const auto& b = graph_solution();
  REQUIRE(a.profile.provenance == b.profile.provenance);
  REQUIRE(a.profile.size() == b.profile.size());
  REQUIRE(a.shot.parameter == b.shot.parameter);
  for (std::size_t i = 0; i < a.profile.size(); i += 97) {
    REQUIRE(a.profile.nodes[i].x == b.profile.nodes[i].x);
    REQUIRE(a.profile.nodes[i].r == b.profile.nodes[i].r);
    REQUIRE(a.profile.nodes[i].theta == b.profile.nodes[i].theta);
  }
}
