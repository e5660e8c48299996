#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace posefuse {

/// Proper rotation stored as a 3×3 orthonormal matrix with determinant +1.
class Rotation3 {
 public:
  static constexpr double kTolerance = 1e-6;

  Rotation3() : m_(Eigen::Matrix3d::Identity()) {}

  /// Validates orthonormality and det = +1 within kTolerance.
  static Rotation3 from_matrix(const Eigen::Matrix3d& m);
  static Rotation3 from_row_major(std::span<const double> values);
  static Rotation3 identity() { return {}; }

  const Eigen::Matrix3d& matrix() const noexcept { return m_; }
  double operator()(int r, int c) const noexcept { return m_(r, c); }
  std::array<double, 9> row_major() const noexcept;

  bool operator==(const Rotation3& other) const noexcept { return m_ == other.m_; }

 private:
  struct Trusted {};
  Rotation3(const Eigen::Matrix3d& m, Trusted) : m_(m) {}

  friend Rotation3 compose(const Rotation3&, const Rotation3&);
  friend Rotation3 inverse(const Rotation3&);
  friend Rotation3 from_axis_angle(const Eigen::Vector3d&, double);
  friend Rotation3 random_rotation(std::uint64_t);
  friend Rotation3 look_at_rotation(const Eigen::Vector3d&, double);

  Eigen::Matrix3d m_;
};

struct Pose {
  Rotation3 rotation;
  std::optional<Eigen::Vector3d> translation;  // meters
};

struct ClassLabel {
  int id = 0;
  std::string name;

  bool operator==(const ClassLabel& other) const { return id == other.id && name == other.name; }
};

Rotation3 compose(const Rotation3& a, const Rotation3& b);
Rotation3 inverse(const Rotation3& r);
/// Rejects axes whose norm deviates from 1 by more than 1e-6.
Rotation3 from_axis_angle(const Eigen::Vector3d& axis, double angle_rad);
/// Uniform on SO(3); deterministic per seed.
Rotation3 random_rotation(std::uint64_t seed);

/// Object-to-camera rotation for a camera on the unit sphere at `viewpoint`
/// looking at the origin, rotated in-plane by `inplane_rad` about the optical axis.
Rotation3 look_at_rotation(const Eigen::Vector3d& viewpoint, double inplane_rad = 0.0);

/// arccos((tr(r1ᵀ r2) − 1) / 2) / π, in [0, 1], with the argument clamped. Evaluated as
/// atan2(|sin θ|, cos θ) so near-identical rotations stay accurate to ~1e-16.
double geodesic_distance(const Rotation3& r1, const Rotation3& r2);

/// 1 iff geodesic_distance < lambda_deg / 180 and the class ids agree.
int acc_at_threshold(const ClassLabel& pred_class, const Rotation3& pred_rot,
                     const ClassLabel& gt_class, const Rotation3& gt_rot, double lambda_deg = 15.0);

struct ViewsphereSample {
  std::vector<Rotation3> rotations;
  /// Icosahedron subdivision level used; -1 when only the top-pole view was emitted.
  int level = 0;
  std::size_t viewpoints = 0;
  int inplane_steps = 1;
};

/// Approximately uniform viewpoints from a recursively subdivided icosahedron with a
/// vertex at +z. The level is the one whose (filtered) vertex count times
/// `inplane_steps` is nearest `count_hint`; ties go to the coarser level. With
/// `upper_hemisphere_only`, vertices with z <= 0 are dropped (level 3 yields 301).
ViewsphereSample sample_viewsphere(std::size_t count_hint, bool upper_hemisphere_only,
                                   int inplane_steps);

/// Number of viewpoints produced at a subdivision level (-1 meaning pole only).
std::size_t viewsphere_size(int level, bool upper_hemisphere_only);

struct PixelRect {
  double x = 0.0;  // left
  double y = 0.0;  // top
  double width = 0.0;
  double height = 0.0;

  double diagonal() const noexcept;
  Eigen::Vector2d center() const noexcept { return {x + 0.5 * width, y + 0.5 * height}; }
};

/// Projective translation estimate: depth scales with the ratio of bbox diagonals and
/// x/y come from back-projecting the query bbox center through `intrinsics`.
Eigen::Vector3d estimate_translation(const PixelRect& query_bbox, const PixelRect& template_bbox,
                                     double template_tz, const Eigen::Matrix3d& intrinsics);

}  // namespace posefuse
