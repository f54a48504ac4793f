#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace expanderlab {

inline constexpr double kPi = 3.14159265358979323846;

// Shortest decimal form that round-trips a double exactly; used everywhere a
// number enters a file or a provenance string so reruns stay byte-identical.
inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return std::string(buf);
}

// Every failure raised by the library derives from Error so callers can map
// failures to process exit codes in one place.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define EXPANDERLAB_DEFINE_ERROR(Name)                                      \
  struct Name : Error {                                                     \
    explicit Name(const std::string& msg)                                   \
        : Error(std::string(#Name) + ": " + msg) {}                         \
  }

EXPANDERLAB_DEFINE_ERROR(InvalidProfile);
EXPANDERLAB_DEFINE_ERROR(InsufficientResolution);
EXPANDERLAB_DEFINE_ERROR(UnsupportedBasePoint);
EXPANDERLAB_DEFINE_ERROR(InsufficientTail);
EXPANDERLAB_DEFINE_ERROR(NotConical);
EXPANDERLAB_DEFINE_ERROR(NotSeparated);
EXPANDERLAB_DEFINE_ERROR(ConeMismatch);
EXPANDERLAB_DEFINE_ERROR(StiffFailure);
EXPANDERLAB_DEFINE_ERROR(AxisCollision);
EXPANDERLAB_DEFINE_ERROR(NoSolutionInBracket);
EXPANDERLAB_DEFINE_ERROR(TailTruncationError);
EXPANDERLAB_DEFINE_ERROR(EpsTooLarge);
EXPANDERLAB_DEFINE_ERROR(StepRejected);
EXPANDERLAB_DEFINE_ERROR(SingularityDetected);
EXPANDERLAB_DEFINE_ERROR(CertificateBroken);
EXPANDERLAB_DEFINE_ERROR(IncompleteFamily);
EXPANDERLAB_DEFINE_ERROR(OutOfDomain);
EXPANDERLAB_DEFINE_ERROR(IoError);

#undef EXPANDERLAB_DEFINE_ERROR

enum class ConeKind { kSingle, kDouble };

// Rotationally symmetric cone in R^{n+1} with vertex at the origin.
// Half-angles are measured from the rotation axis, in (0, pi/2]; the x>0
// nappe opens at alpha_plus.  kSingle uses alpha_plus only.
struct ConeSpec {
  int n = 2;
  ConeKind kind = ConeKind::kDouble;
  double alpha_plus = 0.0;
  double alpha_minus = 0.0;

  void validate() const {
    if (n < 2) throw OutOfDomain("ConeSpec requires n >= 2");
    auto check = [](double a, const char* which) {
      if (!(a > 0.0) || !(a <= kPi / 2 + 1e-12))
        throw OutOfDomain(std::string("cone half-angle ") + which +
                          " outside (0, pi/2]");
    };
    check(alpha_plus, "alpha_plus");
    if (kind == ConeKind::kDouble) check(alpha_minus, "alpha_minus");
  }

  bool matches(const ConeSpec& o, double tol) const {
    if (n != o.n || kind != o.kind) return false;
    if (std::abs(alpha_plus - o.alpha_plus) > tol) return false;
    if (kind == ConeKind::kDouble &&
        std::abs(alpha_minus - o.alpha_minus) > tol)
      return false;
    return true;
  }
};

inline ConeSpec make_double_cone(int n, double alpha_plus,
                                 double alpha_minus) {
  ConeSpec c;
  c.n = n;
  c.kind = ConeKind::kDouble;
  c.alpha_plus = alpha_plus;
  c.alpha_minus = alpha_minus;
  c.validate();
  return c;
}

inline ConeSpec make_double_cone(int n, double alpha) {
  return make_double_cone(n, alpha, alpha);
}

inline ConeSpec make_single_cone(int n, double alpha) {
  ConeSpec c;
  c.n = n;
  c.kind = ConeKind::kSingle;
  c.alpha_plus = alpha;
  c.alpha_minus = 0.0;
  c.validate();
  return c;
}

// Stored meridians are single arcs.  kReflectAcrossX0 marks profiles whose
// full meridian is the stored arc together with its mirror image under
// x -> -x as a second, disjoint component.
enum class ProfileSymmetry { kNone, kReflectAcrossX0 };

struct ProfileNode {
  double s = 0.0;      // arclength parameter, strictly increasing
  double x = 0.0;      // axial coordinate
  double r = 0.0;      // radial coordinate, >= 0
  double theta = 0.0;  // tangent angle: dx/ds = cos(theta), dr/ds = sin(theta)
};

// Meridian curve of a rotationally symmetric hypersurface in R^{n+1}.
// r == 0 is allowed only at the first or last node (axis endpoint), where the
// curve must meet the axis perpendicularly (|cos theta| ~ 0).
struct ProfileCurve {
  int n = 2;
  ProfileSymmetry symmetry = ProfileSymmetry::kNone;
  std::vector<ProfileNode> nodes;
  std::string provenance;

  std::size_t size() const { return nodes.size(); }
  bool axis_start() const { return !nodes.empty() && nodes.front().r == 0.0; }
  bool axis_end() const { return !nodes.empty() && nodes.back().r == 0.0; }

  double length() const {
    return nodes.empty() ? 0.0 : nodes.back().s - nodes.front().s;
  }

  double extent() const {
    double m = 0.0;
    for (const auto& p : nodes) m = std::max(m, std::hypot(p.x, p.r));
    return m;
  }

  void validate() const {
    if (n < 2) throw InvalidProfile("ambient dimension must satisfy n >= 2");
    if (nodes.size() < 8)
      throw InsufficientResolution("profile has fewer than 8 nodes");
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto& p = nodes[i];
      if (!std::isfinite(p.s) || !std::isfinite(p.x) || !std::isfinite(p.r) ||
          !std::isfinite(p.theta))
        throw InvalidProfile("non-finite node data");
      if (p.r < 0.0) throw InvalidProfile("negative radius");
      if (p.r == 0.0 && i != 0 && i + 1 != nodes.size())
        throw InvalidProfile("interior node on the axis");
      if (p.r == 0.0 && std::abs(std::cos(p.theta)) > 1e-6)
        throw InvalidProfile("axis endpoint not perpendicular to the axis");
    }
    for (std::size_t i = 0; i + 1 < nodes.size(); ++i) {
      const auto& a = nodes[i];
      const auto& b = nodes[i + 1];
      const double h = b.s - a.s;
      if (!(h > 0.0)) throw InvalidProfile("arclength not strictly increasing");
      const double chord = std::hypot(b.x - a.x, b.r - a.r);
      const double dtheta = b.theta - a.theta;
      if (std::abs(dtheta) > kPi / 2)
        throw InvalidProfile("tangent angle jump exceeds pi/2 between nodes");
      // A chord subtending a turn dtheta satisfies chord ~ h*(1 - dtheta^2/24).
      // The slack absorbs dense-output position noise over short spacings.
      if (chord > h * (1.0 + 1e-7) ||
          chord < h * (1.0 - dtheta * dtheta - 1e-7))
        throw InvalidProfile("chord length inconsistent with arclength");
    }
    // Quasi-uniform spacing: adjacent spacing ratio below 10.
    for (std::size_t i = 0; i + 2 < nodes.size(); ++i) {
      const double h0 = nodes[i + 1].s - nodes[i].s;
      const double h1 = nodes[i + 2].s - nodes[i + 1].s;
      const double ratio = h1 > h0 ? h1 / h0 : h0 / h1;
      if (ratio > 10.0)
        throw InsufficientResolution("adjacent node spacing ratio exceeds 10");
    }
  }
};

// Mirror image under x -> -x, traversed so that arclength still increases
// and the normal (-sin theta, cos theta) ends up on the opposite meridian
// side from the source curve's normal.
inline ProfileCurve mirror_profile(const ProfileCurve& c) {
  ProfileCurve m;
  m.n = c.n;
  m.symmetry = ProfileSymmetry::kNone;
  m.provenance = c.provenance + " (mirrored)";
  m.nodes.resize(c.nodes.size());
  const double s_total = c.nodes.back().s;
  for (std::size_t i = 0; i < c.nodes.size(); ++i) {
    const auto& p = c.nodes[c.nodes.size() - 1 - i];
    ProfileNode q;
    q.s = s_total - p.s;
    q.x = -p.x;
    q.r = p.r;
    q.theta = -p.theta;
    m.nodes[i] = q;
  }
  return m;
}

// Reversed traversal of the same arc.  Arclength is re-based, theta is
// shifted by pi so the tangent flips; the normal moves to the opposite side.
// Keeps theta continuous, so it may leave (-pi, pi]; nothing downstream
// requires the principal branch.
inline ProfileCurve reverse_profile(const ProfileCurve& c) {
  ProfileCurve m;
  m.n = c.n;
  m.symmetry = c.symmetry;
  m.provenance = c.provenance + " (reversed)";
  m.nodes.resize(c.nodes.size());
  const double s0 = c.nodes.front().s, s1 = c.nodes.back().s;
  for (std::size_t i = 0; i < c.nodes.size(); ++i) {
    const auto& p = c.nodes[c.nodes.size() - 1 - i];
    ProfileNode q;
    q.s = s0 + (s1 - p.s);
    q.x = p.x;
    q.r = p.r;
    q.theta = p.theta - kPi;
    m.nodes[i] = q;
  }
  return m;
}

// Tolerance bundle shared across modules.  strict() tightens the residual
// certificate and the cone-angle fit.
struct Tolerances {
  double residual_sup = 1e-6;      // sup of the expander residual certificate
  double fd_target = 3e-7;         // node-density target for that certificate
  double cone_angle = 1e-4;        // cone-angle agreement between fits
  double stationarity = 1e-8;      // first-order stationarity of entropy argmax
  double nullity_band = 1e-6;      // |mu| below this counts into the nullity
  double order_equal = 1e-8;       // sup-distance treated as profile equality
  double registry_distinct = 1e-6; // minimal pairwise distance in a registry

  static Tolerances defaults() { return Tolerances{}; }
  static Tolerances strict() {
    Tolerances t;
    t.residual_sup = 2.5e-7;
    t.fd_target = 8e-8;
    t.cone_angle = 1e-5;
    return t;
  }
};

}  // namespace expanderlab
