#include "posefuse/geometry.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <utility>

#include "posefuse/error.hpp"

namespace posefuse {

namespace {

constexpr std::size_t kMaxViewsphereCount = 1'000'000;
constexpr double kUpperHemisphereEps = 1e-9;

struct Icosphere {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<std::array<int, 3>> faces;
};

// Icosahedron with one vertex on +z, so the top-pole view is always vertex 0.
Icosphere pole_icosahedron() {
  Icosphere ico;
  const double z0 = 1.0 / std::sqrt(5.0);
  const double r = 2.0 / std::sqrt(5.0);
  ico.vertices.emplace_back(0.0, 0.0, 1.0);
  for (int k = 0; k < 5; ++k) {
    const double a = 2.0 * std::numbers::pi * k / 5.0;
    ico.vertices.emplace_back(r * std::cos(a), r * std::sin(a), z0);
  }
  for (int k = 0; k < 5; ++k) {
    const double a = 2.0 * std::numbers::pi * k / 5.0 + std::numbers::pi / 5.0;
    ico.vertices.emplace_back(r * std::cos(a), r * std::sin(a), -z0);
  }
  ico.vertices.emplace_back(0.0, 0.0, -1.0);

  const auto upper = [](int k) { return 1 + (k % 5); };
  const auto lower = [](int k) { return 6 + (k % 5); };
  for (int k = 0; k < 5; ++k) {
    ico.faces.push_back({0, upper(k), upper(k + 1)});
    ico.faces.push_back({upper(k), lower(k), upper(k + 1)});
    ico.faces.push_back({upper(k + 1), lower(k), lower(k + 1)});
    ico.faces.push_back({11, lower(k + 1), lower(k)});
  }
  return ico;
}

Icosphere subdivide(const Icosphere& in) {
  Icosphere out;
  out.vertices = in.vertices;
  std::map<std::pair<int, int>, int> midpoints;
  const auto midpoint = [&](int a, int b) {
    const auto key = std::minmax(a, b);
    if (auto it = midpoints.find(key); it != midpoints.end()) return it->second;
    Eigen::Vector3d m = (out.vertices[a] + out.vertices[b]).normalized();
    out.vertices.push_back(m);
    const int idx = static_cast<int>(out.vertices.size()) - 1;
    midpoints.emplace(key, idx);
    return idx;
  };
  out.faces.reserve(in.faces.size() * 4);
  for (const auto& [a, b, c] : in.faces) {
    const int ab = midpoint(a, b);
    const int bc = midpoint(b, c);
    const int ca = midpoint(c, a);
    out.faces.push_back({a, ab, ca});
    out.faces.push_back({b, bc, ab});
    out.faces.push_back({c, ca, bc});
    out.faces.push_back({ab, bc, ca});
  }
  return out;
}

std::vector<Eigen::Vector3d> viewpoints_at(int level, bool upper_only) {
  if (level < 0) return {Eigen::Vector3d::UnitZ()};
  Icosphere ico = pole_icosahedron();
  for (int i = 0; i < level; ++i) ico = subdivide(ico);
  if (!upper_only) return ico.vertices;
  std::vector<Eigen::Vector3d> kept;
  for (const auto& v : ico.vertices) {
    if (v.z() > kUpperHemisphereEps) kept.push_back(v);
  }
  return kept;
}

// Full sphere: 10·4^L + 2 vertices. Upper hemisphere (strict z>0) follows from the
// equator count 10·2^(L-1) for L ≥ 1 (none at level 0).
std::size_t closed_form_size(int level, bool upper_only) {
  if (level < 0) return 1;
  const std::size_t full = 10 * (std::size_t{1} << (2 * level)) + 2;
  if (!upper_only) return full;
  const std::size_t equator = level == 0 ? 0 : 10 * (std::size_t{1} << (level - 1));
  return (full - equator) / 2;
}

}  // namespace

Rotation3 Rotation3::from_matrix(const Eigen::Matrix3d& m) {
  if (!m.allFinite()) throw InvalidArgument("rotation matrix has non-finite entries");
  const Eigen::Matrix3d gram = m * m.transpose();
  if ((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > kTolerance) {
    throw InvalidArgument("rotation matrix is not orthonormal");
  }
  if (std::abs(m.determinant() - 1.0) > kTolerance) {
    throw InvalidArgument("rotation matrix determinant is not +1");
  }
  return Rotation3(m, Trusted{});
}

Rotation3 Rotation3::from_row_major(std::span<const double> values) {
  if (values.size() != 9) throw InvalidArgument("rotation needs 9 row-major values");
  Eigen::Matrix3d m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = values[r * 3 + c];
  return from_matrix(m);
}

std::array<double, 9> Rotation3::row_major() const noexcept {
  std::array<double, 9> out{};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out[r * 3 + c] = m_(r, c);
  return out;
}

Rotation3 compose(const Rotation3& a, const Rotation3& b) {
  return Rotation3(a.m_ * b.m_, Rotation3::Trusted{});
}

Rotation3 inverse(const Rotation3& r) {
  return Rotation3(r.m_.transpose(), Rotation3::Trusted{});
}

Rotation3 from_axis_angle(const Eigen::Vector3d& axis, double angle_rad) {
  if (!axis.allFinite() || std::abs(axis.norm() - 1.0) > 1e-6) {
    throw InvalidArgument("rotation axis must be a unit vector");
  }
  return Rotation3(Eigen::AngleAxisd(angle_rad, axis).toRotationMatrix(), Rotation3::Trusted{});
}

Rotation3 random_rotation(std::uint64_t seed) {
  // Shoemake's subgroup algorithm: a uniform unit quaternion from three uniforms.
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u1 = unit(rng);
  const double u2 = 2.0 * std::numbers::pi * unit(rng);
  const double u3 = 2.0 * std::numbers::pi * unit(rng);
  const double a = std::sqrt(1.0 - u1);
  const double b = std::sqrt(u1);
  Eigen::Quaterniond q(b * std::cos(u3), a * std::sin(u2), a * std::cos(u2), b * std::sin(u3));
  return Rotation3(q.normalized().toRotationMatrix(), Rotation3::Trusted{});
}

Rotation3 look_at_rotation(const Eigen::Vector3d& viewpoint, double inplane_rad) {
  const Eigen::Vector3d forward = -viewpoint.normalized();
  Eigen::Vector3d up = Eigen::Vector3d::UnitZ();
  if (up.cross(forward).norm() < 1e-9) up = Eigen::Vector3d::UnitY();
  const Eigen::Vector3d x_axis = up.cross(forward).normalized();
  const Eigen::Vector3d y_axis = forward.cross(x_axis);
  Eigen::Matrix3d m;
  m.row(0) = x_axis.transpose();
  m.row(1) = y_axis.transpose();
  m.row(2) = forward.transpose();
  if (inplane_rad != 0.0) {
    m = Eigen::AngleAxisd(inplane_rad, Eigen::Vector3d::UnitZ()).toRotationMatrix() * m;
  }
  return Rotation3(m, Rotation3::Trusted{});
}

double geodesic_distance(const Rotation3& r1, const Rotation3& r2) {
  // m = r1ᵀ·r2. Swapping the arguments transposes m term by term, so the result is
  // exactly symmetric.
  double m[3][3];
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      m[i][j] = r1(0, i) * r2(0, j) + r1(1, i) * r2(1, j) + r1(2, i) * r2(2, j);
    }
  }
  const double cos_angle = std::clamp((m[0][0] + m[1][1] + m[2][2] - 1.0) / 2.0, -1.0, 1.0);
  // |sin θ| from the skew part; atan2 equals the clamped arccos but stays accurate near 0.
  const double sx = m[2][1] - m[1][2], sy = m[0][2] - m[2][0], sz = m[1][0] - m[0][1];
  const double sin_angle = 0.5 * std::sqrt(sx * sx + sy * sy + sz * sz);
  return std::atan2(sin_angle, cos_angle) / std::numbers::pi;
}

int acc_at_threshold(const ClassLabel& pred_class, const Rotation3& pred_rot,
                     const ClassLabel& gt_class, const Rotation3& gt_rot, double lambda_deg) {
  if (!(lambda_deg > 0.0 && lambda_deg <= 180.0)) {
    throw InvalidArgument("lambda_deg must lie in (0, 180]");
  }
  if (pred_class.id != gt_class.id) return 0;
  return geodesic_distance(pred_rot, gt_rot) < lambda_deg / 180.0 ? 1 : 0;
}

std::size_t viewsphere_size(int level, bool upper_hemisphere_only) {
  return closed_form_size(level, upper_hemisphere_only);
}

ViewsphereSample sample_viewsphere(std::size_t count_hint, bool upper_hemisphere_only,
                                   int inplane_steps) {
  if (count_hint < 1) throw InvalidArgument("count_hint must be >= 1");
  if (count_hint > kMaxViewsphereCount) throw InvalidArgument("count_hint exceeds 10^6");
  if (inplane_steps < 1) throw InvalidArgument("inplane_steps must be >= 1");

  const auto steps = static_cast<std::size_t>(inplane_steps);
  const auto gap = [&](int level) {
    const std::size_t n = closed_form_size(level, upper_hemisphere_only) * steps;
    return n > count_hint ? n - count_hint : count_hint - n;
  };
  int best = -1;
  for (int level = 0;; ++level) {
    if (gap(level) < gap(best)) best = level;
    if (closed_form_size(level, upper_hemisphere_only) * steps >= count_hint) break;
  }

  ViewsphereSample out;
  out.level = best;
  out.inplane_steps = inplane_steps;
  const auto views = viewpoints_at(best, upper_hemisphere_only);
  out.viewpoints = views.size();
  out.rotations.reserve(views.size() * steps);
  for (const auto& v : views) {
    for (int s = 0; s < inplane_steps; ++s) {
      out.rotations.push_back(look_at_rotation(v, 2.0 * std::numbers::pi * s / inplane_steps));
    }
  }
  return out;
}

double PixelRect::diagonal() const noexcept { return std::hypot(width, height); }

Eigen::Vector3d estimate_translation(const PixelRect& query_bbox, const PixelRect& template_bbox,
                                     double template_tz, const Eigen::Matrix3d& intrinsics) {
  if (!(query_bbox.width > 0 && query_bbox.height > 0 && template_bbox.width > 0 &&
        template_bbox.height > 0)) {
    throw InvalidArgument("bounding boxes must have positive area");
  }
  const double q_diag = query_bbox.diagonal();
  const double t_diag = template_bbox.diagonal();
  if (!(q_diag > 0.0) || !(t_diag > 0.0)) throw InvalidArgument("degenerate bounding box");
  if (!(template_tz > 0.0)) throw InvalidArgument("template_tz must be positive");

  const double tz = template_tz * (t_diag / q_diag);
  const Eigen::Vector2d c = query_bbox.center();
  const double tx = (c.x() - intrinsics(0, 2)) * tz / intrinsics(0, 0);
  const double ty = (c.y() - intrinsics(1, 2)) * tz / intrinsics(1, 1);
  return {tx, ty, tz};
}

}  // namespace posefuse
