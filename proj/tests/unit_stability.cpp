#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "expanderlab/shooting.hpp"
#include "expanderlab/stability.hpp"

using namespace expanderlab;

namespace {

ProfileCurve vertical_profile(double r_max, int n, double h = 0.01) {
  ProfileCurve c;
  c.n = n;
  c.provenance = "test plane";
  const std::size_t m = static_cast<std::size_t>(r_max / h);
  for (std::size_t i = 0; i <= m; ++i) {
    const double r = r_max * static_cast<double>(i) / m;
    c.nodes.push_back({r, 0.0, r, kPi / 2});
  }
  c.validate();
  return c;
}

struct WindowFixture {
  double alpha = 0.0;
  ExpanderSolution disk_pair, inner, outer;
};

const WindowFixture& window_fixture() {
  static const WindowFixture fx = [] {
    WindowFixture f;
    ShotParams base;
    base.n = 2;
    base.family = ShotFamily::kNeck;
    const NeckFold fold = neck_fold(base);
    f.alpha = fold.phi_min + 0.6 * (kPi / 2 - fold.phi_min);
    const auto cone = make_double_cone(2, f.alpha);
    f.disk_pair = find_expander_for_cone(cone, BranchLabel::kDiskPair);
    f.inner = find_expander_for_cone(cone, BranchLabel::kAnnulusInner);
    f.outer = find_expander_for_cone(cone, BranchLabel::kAnnulusOuter);
    return f;
  }();
  return fx;
}

const ExpanderSolution& graph_fixture() {
  static const ExpanderSolution sol = find_expander_for_cone(
      make_single_cone(2, 0.9), BranchLabel::kGraph);
  return sol;
}

ProfileCurve truncate_at_rho(const ProfileCurve& c, double rho_cut) {
  ProfileCurve out;
  out.n = c.n;
  out.symmetry = c.symmetry;
  out.provenance = c.provenance + " (truncated)";
  for (const auto& nd : c.nodes)
    if (std::hypot(nd.x, nd.r) <= rho_cut) out.nodes.push_back(nd);
  return out;
}

}  // namespace

TEST_CASE("harmonic multiplicities match the closed dimension counts") {
  const int n2[] = {1, 2, 2, 2, 2};
  const int n3[] = {1, 3, 5, 7, 9};
  const int n4[] = {1, 4, 9, 16, 25};
  for (int l = 0; l <= 4; ++l) {
    REQUIRE(harmonic_multiplicity(l, 2) == n2[l]);
    REQUIRE(harmonic_multiplicity(l, 3) == n3[l]);
    REQUIRE(harmonic_multiplicity(l, 4) == n4[l]);
  }
  REQUIRE(harmonic_multiplicity(2, 5) == 14);
  REQUIRE_THROWS_AS(harmonic_multiplicity(-1, 3), OutOfDomain);
}

TEST_CASE("hyperplane spectrum is an exact half-integer ladder") {
  // On the plane through the axis the sector-ell problem solves in closed
  // form: mu(ell, k) = (n + 1 + ell)/2 + k with polynomial-times-Gaussian
  // modes.
  for (int n : {2, 3}) {
    const ProfileCurve c = vertical_profile(14.0, n);
    SpectrumOptions o;
    o.ell_max = 3;
    const SpectrumResult sr = spectrum(c, o);
    REQUIRE(sr.n == n);
    REQUIRE_FALSE(sr.doubled);
    REQUIRE(sr.index == 0);
    for (int l = 0; l <= 3; ++l) {
      const auto& sec = sr.sectors[static_cast<std::size_t>(l)];
      REQUIRE(sec.mult == harmonic_multiplicity(l, n));
      for (int k = 0; k < 4; ++k) {
        const double want = 0.5 * (n + 1 + l) + k;
        INFO("n=" << n << " l=" << l << " k=" << k);
        REQUIRE(sec.mu[static_cast<std::size_t>(k)] ==
                Catch::Approx(want).margin(1e-6));
      }
    }
    REQUIRE(sr.mu1 == Catch::Approx(0.5 * (n + 1)).margin(1e-6));
    REQUIRE(sr.ell_at_mu1 == 0);
    REQUIRE(sr.beta == 0.5 * (n + 1.0 - 2.0 * sr.mu1));
  }
}

TEST_CASE("extrapolation cancels the leading grid error") {
  const ProfileCurve c = vertical_profile(14.0, 2);
  SpectrumOptions plain;
  plain.ell_max = 0;
  plain.richardson = false;
  SpectrumOptions rich = plain;
  rich.richardson = true;
  const double e_plain = std::abs(spectrum(c, plain).mu1 - 1.5);
  const double e_rich = std::abs(spectrum(c, rich).mu1 - 1.5);
  REQUIRE(e_rich < 1e-7);
  REQUIRE(e_plain > 10.0 * e_rich);
}

TEST_CASE("quadratic-form quotient agrees with the matrix eigenvalue") {
  const ProfileCurve c = vertical_profile(14.0, 3);
  SpectrumOptions o;
  o.ell_max = 1;
  for (int l : {0, 1}) {
    const EigenFunction ef = ground_mode(c, l, o);
    const double q = rayleigh_quotient(c, ef);
    INFO("l=" << l);
    REQUIRE(q == Catch::Approx(ef.mu).margin(1e-4 * std::max(1.0, ef.mu)));
  }
  const auto& g = graph_fixture();
  const EigenFunction ef = ground_mode(g.profile, 0, o);
  REQUIRE(rayleigh_quotient(g.profile, ef) ==
          Catch::Approx(ef.mu).margin(1e-4 * std::max(1.0, ef.mu)));
}

TEST_CASE("ground modes decay at the rate the eigenvalue dictates") {
  SpectrumOptions o;
  o.ell_max = 0;
  const ProfileCurve plane = vertical_profile(14.0, 2);
  const DecayFit pf = decay_fit(ground_mode(plane, 0, o), 2);
  REQUIRE(pf.predicted == Catch::Approx(0.0).margin(1e-5));
  REQUIRE(pf.fitted == Catch::Approx(pf.predicted).margin(0.02));

  const auto& g = graph_fixture();
  const DecayFit gf = decay_fit(ground_mode(g.profile, 0, o), 2);
  REQUIRE(gf.fitted == Catch::Approx(gf.predicted).margin(0.01));
  REQUIRE(gf.points >= 8);
}

TEST_CASE("the coexistence window shows the mountain-pass pattern") {
  // Three expanders share one cone: the two outer branches are stable and
  // the branch between them carries exactly one unstable direction, in the
  // rotationally invariant sector.
  const auto& fx = window_fixture();
  SpectrumOptions o;
  o.ell_max = 4;
  const SpectrumResult dp = spectrum(fx.disk_pair, o);
  const SpectrumResult in = spectrum(fx.inner, o);
  const SpectrumResult out = spectrum(fx.outer, o);
  REQUIRE(dp.mu1 > 0.0);
  REQUIRE(dp.index == 0);
  REQUIRE(out.mu1 > 0.0);
  REQUIRE(out.index == 0);
  REQUIRE(in.mu1 < 0.0);
  REQUIRE(in.index == 1);
  REQUIRE(in.ell_at_mu1 == 0);
  // The mirrored pair counts every direction twice.
  REQUIRE(dp.doubled);
  for (const auto& sec : dp.sectors)
    REQUIRE(sec.mult == 2 * harmonic_multiplicity(sec.ell, 2));
  REQUIRE_FALSE(in.doubled);
  // A thin neck pinches at the curvature scale of its waist.
  REQUIRE(in.mu1 < -10.0);
  REQUIRE(in.beta == 0.5 * (2 + 1.0 - 2.0 * in.mu1));
}

TEST_CASE("sector bottoms rise with the harmonic degree") {
  const auto& fx = window_fixture();
  SpectrumOptions o;
  o.ell_max = 4;
  for (const ExpanderSolution* sol : {&fx.inner, &fx.outer}) {
    const SpectrumResult sr = spectrum(*sol, o);
    for (std::size_t l = 1; l < sr.sectors.size(); ++l) {
      INFO("l=" << l);
      REQUIRE(sr.sectors[l].mu.front() > sr.sectors[l - 1].mu.front());
    }
  }
}

TEST_CASE("far truncation leaves the spectrum unchanged") {
  const auto& g = graph_fixture();
  SpectrumOptions o;
  o.ell_max = 1;
  const SpectrumResult full = spectrum(g.profile, o);
  const SpectrumResult cut = spectrum(truncate_at_rho(g.profile, 12.0), o);
  REQUIRE(cut.mu1 == Catch::Approx(full.mu1).margin(1e-7));
  REQUIRE(cut.sectors[1].mu.front() ==
          Catch::Approx(full.sectors[1].mu.front()).margin(1e-7));
}

TEST_CASE("stability flags an index that cannot be certified") {
  const auto& fx = window_fixture();
  SpectrumOptions o;
  o.ell_max = 0;  // bottom sector is negative, higher ones were not checked
  REQUIRE_THROWS_AS(spectrum(fx.inner, o), InsufficientResolution);
}

TEST_CASE("ground mode normalization and axis boundary") {
  const auto& g = graph_fixture();
  SpectrumOptions o;
  const EigenFunction e0 = ground_mode(g.profile, 0, o);
  const double top = *std::max_element(e0.u.begin(), e0.u.end());
  REQUIRE(top == 1.0);
  // Sectors that carry angular dependence vanish on the axis, while the
  // rotationally invariant one stays free there.  The graph branch stores
  // its axis point at the far parameter end.
  REQUIRE(g.profile.axis_end());
  const EigenFunction e1 = ground_mode(g.profile, 1, o);
  REQUIRE(e1.u.back() == 0.0);
  REQUIRE(std::abs(e0.u.back()) > 0.0);
  REQUIRE(std::abs(e1.u[e1.u.size() / 2]) > 0.0);
}

TEST_CASE("unstable mode concentrates at the waist") {
  const auto& fx = window_fixture();
  SpectrumOptions o;
  const EigenFunction ef = ground_mode(fx.inner.profile, 0, o);
  REQUIRE(ef.mu < -10.0);
  // Quadratic-form consistency holds to the waist resolution.
  const double q = rayleigh_quotient(fx.inner.profile, ef);
  REQUIRE(q == Catch::Approx(ef.mu).epsilon(5e-4));
  // The mode peaks where the radius bottoms out.
  std::size_t at = 0;
  for (std::size_t i = 0; i < ef.u.size(); ++i)
    if (ef.u[i] > ef.u[at]) at = i;
  double r_min = 1e300;
  double s_at_min = 0.0;
  for (const auto& nd : fx.inner.profile.nodes)
    if (nd.r < r_min) {
      r_min = nd.r;
      s_at_min = nd.s;
    }
  REQUIRE(std::abs(ef.s[at] - s_at_min) < 0.2);
}

TEST_CASE("spectra are deterministic") {
  const auto& g = graph_fixture();
  SpectrumOptions o;
  o.ell_max = 1;
  const SpectrumResult a = spectrum(g.profile, o);
  const SpectrumResult b = spectrum(g.profile, o);
  REQUIRE(a.mu1 == b.mu1);
  for (std::size_t l = 0; l < a.sectors.size(); ++l)
    for (std::size_t k = 0; k < a.sectors[l].mu.size(); ++k)
      REQUIRE(a.sectors[l].mu[k] == b.sectors[l].mu[k]);
}
