#ifndef HEADSTAB_GEOMETRY_HPP
#define HEADSTAB_GEOMETRY_HPP

#include <Eigen/Dense>

#include "headstab/rng.hpp"

namespace headstab {

/// Homogeneous point block: 4 x N, fourth row identically 1. Units are
/// millimeters throughout the library.
using VertexBlock = Eigen::Matrix4Xd;

/// First two columns of a rotation matrix, stacked column-major.
using Rotation6d = Eigen::Matrix<double, 6, 1>;

/// Rigid map (rotation + translation, no scale). Serialized as a row-major
/// 4x4 homogeneous matrix with bottom row (0,0,0,1).
struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static RigidTransform identity() { return {}; }
  static RigidTransform translate(const Eigen::Vector3d& t) {
    return {Eigen::Matrix3d::Identity(), t};
  }
  static RigidTransform rotate_about(const Eigen::Matrix3d& r,
                                     const Eigen::Vector3d& pivot) {
    return {r, pivot - r * pivot};
  }

  /// Builds from a 4x4 homogeneous matrix; throws if the matrix is not rigid.
  static RigidTransform from_matrix(const Eigen::Matrix4d& m, double tol = 1e-6);

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }

  Eigen::Vector3d operator*(const Eigen::Vector3d& p) const {
    return rotation * p + translation;
  }

  /// Orthonormality / determinant check at the given tolerance.
  bool is_rigid(double tol = 1e-6) const;
};

RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
RigidTransform invert(const RigidTransform& s);
VertexBlock apply(const RigidTransform& s, const VertexBlock& v);

/// Rotation by `alpha` radians about `axis` (normalized internally).
/// Throws on a zero axis.
Eigen::Matrix3d angle_axis_to_matrix(double alpha, const Eigen::Vector3d& axis);

/// Random rigid transform: angle ~ N(0, eps_r), axis components ~ U(-1, 1)
/// (resampled if all zero), translation components ~ N(0, eps_t).
/// eps_r in radians, eps_t in millimeters; (0, 0) yields the identity.
RigidTransform sample_random_rigid(double eps_r, double eps_t, Rng& rng);

/// Gram-Schmidt decode of the 6D rotation representation. Throws if the
/// first column is near zero or the columns are near parallel.
Eigen::Matrix3d rot6d_decode(const Rotation6d& r);
Rotation6d rot6d_encode(const Eigen::Matrix3d& rotation);

/// Least-squares rigid alignment of x onto y over corresponded columns
/// (cross-covariance SVD with reflection correction). Requires >= 3
/// non-collinear points; throws otherwise.
RigidTransform procrustes_transform(const VertexBlock& x, const VertexBlock& y);

/// apply(procrustes_transform(x, y), x).
VertexBlock procrustes_align(const VertexBlock& x, const VertexBlock& y);

/// Rigid fit minimizing ||S (W o us) - (W o ut)||_F where W replicates the
/// per-vertex weights over all four homogeneous coordinates. Expanding the
/// homogeneous product, this is the weighted least-squares fit with
/// per-point weights w^2. Throws if all weights are zero.
RigidTransform weighted_procrustes(const VertexBlock& us, const VertexBlock& ut,
                                   const Eigen::VectorXd& w);

/// Homogeneous helpers.
VertexBlock to_homogeneous(const Eigen::Matrix3Xd& points);
inline Eigen::Matrix3Xd cartesian(const VertexBlock& v) { return v.topRows<3>(); }

/// Columns of `v` selected by `indices`, in order.
VertexBlock select_columns(const VertexBlock& v, const std::vector<int>& indices);

}  // namespace headstab

#endif  // HEADSTAB_GEOMETRY_HPP
