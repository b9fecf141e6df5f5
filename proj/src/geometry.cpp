#include "headstab/geometry.hpp"

#include <stdexcept>

namespace headstab {

bool RigidTransform::is_rigid(double tol) const {
  const Eigen::Matrix3d gram = rotation.transpose() * rotation;
  if ((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(rotation.determinant() - 1.0) <= tol;
}

RigidTransform RigidTransform::from_matrix(const Eigen::Matrix4d& m, double tol) {
  if ((m.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 0.0) {
    throw std::invalid_argument("RigidTransform: bottom row must be (0,0,0,1)");
  }
  RigidTransform s{m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
  if (!s.is_rigid(tol)) {
    throw std::invalid_argument("RigidTransform: rotation block is not orthonormal with det +1");
  }
  return s;
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

RigidTransform invert(const RigidTransform& s) {
  Eigen::Matrix3d rt = s.rotation.transpose();
  return {rt, -(rt * s.translation)};
}

VertexBlock apply(const RigidTransform& s, const VertexBlock& v) {
  VertexBlock out(4, v.cols());
  out.topRows<3>().noalias() = s.rotation * v.topRows<3>();
  out.topRows<3>().colwise() += s.translation;
  out.row(3).setOnes();
  return out;
}

Eigen::Matrix3d angle_axis_to_matrix(double alpha, const Eigen::Vector3d& axis) {
  const double n = axis.norm();
  if (n == 0.0) throw std::invalid_argument("angle_axis_to_matrix: zero axis");
  return Eigen::AngleAxisd(alpha, axis / n).toRotationMatrix();
}

RigidTransform sample_random_rigid(double eps_r, double eps_t, Rng& rng) {
  if (eps_r < 0.0 || eps_t < 0.0) {
    throw std::invalid_argument("sample_random_rigid: negative noise scale");
  }
  const double alpha = rng.normal(0.0, eps_r);
  Eigen::Vector3d axis;
  do {
    axis = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
  } while (axis.norm() == 0.0);
  Eigen::Vector3d t{rng.normal(0.0, eps_t), rng.normal(0.0, eps_t), rng.normal(0.0, eps_t)};
  return {angle_axis_to_matrix(alpha, axis), t};
}

Eigen::Matrix3d rot6d_decode(const Rotation6d& r) {
  const Eigen::Vector3d a1 = r.head<3>();
  const Eigen::Vector3d a2 = r.tail<3>();
  const double n1 = a1.norm();
  if (n1 < 1e-12) throw std::invalid_argument("rot6d_decode: first column is zero");
  const Eigen::Vector3d b1 = a1 / n1;
  const Eigen::Vector3d u2 = a2 - b1.dot(a2) * b1;
  const double n2 = u2.norm();
  if (n2 < 1e-12 * std::max(1.0, a2.norm())) {
    throw std::invalid_argument("rot6d_decode: columns are parallel");
  }
  const Eigen::Vector3d b2 = u2 / n2;
  Eigen::Matrix3d out;
  out.col(0) = b1;
  out.col(1) = b2;
  out.col(2) = b1.cross(b2);
  return out;
}

Rotation6d rot6d_encode(const Eigen::Matrix3d& rotation) {
  Rotation6d r;
  r.head<3>() = rotation.col(0);
  r.tail<3>() = rotation.col(1);
  return r;
}

namespace {

RigidTransform kabsch(const Eigen::Matrix3Xd& x, const Eigen::Matrix3Xd& y,
                      const Eigen::VectorXd& w) {
  const double wsum = w.sum();
  const Eigen::Vector3d cx = (x * w) / wsum;
  const Eigen::Vector3d cy = (y * w) / wsum;
  Eigen::Matrix3Xd xc = x.colwise() - cx;
  Eigen::Matrix3Xd yc = y.colwise() - cy;
  const Eigen::Matrix3d h = xc * w.asDiagonal() * yc.transpose();

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d sv = svd.singularValues();
  if (sv(1) <= 1e-12 * std::max(1.0, sv(0))) {
    throw std::invalid_argument("procrustes: rank-deficient cross-covariance (collinear points?)");
  }
  Eigen::Matrix3d u = svd.matrixU();
  Eigen::Matrix3d v = svd.matrixV();
  Eigen::Vector3d d = Eigen::Vector3d::Ones();
  // Flip the smallest singular direction when the fit would be a reflection.
  d(2) = ((v * u.transpose()).determinant() < 0.0) ? -1.0 : 1.0;
  const Eigen::Matrix3d rot = v * d.asDiagonal() * u.transpose();
  return {rot, cy - rot * cx};
}

}  // namespace

RigidTransform procrustes_transform(const VertexBlock& x, const VertexBlock& y) {
  if (x.cols() != y.cols()) throw std::invalid_argument("procrustes: point count mismatch");
  if (x.cols() < 3) throw std::invalid_argument("procrustes: need at least 3 points");
  return kabsch(x.topRows<3>(), y.topRows<3>(), Eigen::VectorXd::Ones(x.cols()));
}

VertexBlock procrustes_align(const VertexBlock& x, const VertexBlock& y) {
  return apply(procrustes_transform(x, y), x);
}

RigidTransform weighted_procrustes(const VertexBlock& us, const VertexBlock& ut,
                                   const Eigen::VectorXd& w) {
  if (us.cols() != ut.cols() || w.size() != us.cols()) {
    throw std::invalid_argument("weighted_procrustes: size mismatch");
  }
  // S acts on homogeneous columns w_j * (x, y, z, 1), so the translation is
  // scaled by w_j per point and the residual is w_j * ||R x + t - y||. The
  // effective per-point least-squares weight is therefore w_j^2.
  const Eigen::VectorXd w2 = w.array().square();
  if (w2.sum() <= 0.0) throw std::invalid_argument("weighted_procrustes: all weights zero");
  return kabsch(us.topRows<3>(), ut.topRows<3>(), w2);
}

VertexBlock to_homogeneous(const Eigen::Matrix3Xd& points) {
  VertexBlock v(4, points.cols());
  v.topRows<3>() = points;
  v.row(3).setOnes();
  return v;
}

VertexBlock select_columns(const VertexBlock& v, const std::vector<int>& indices) {
  VertexBlock out(4, static_cast<Eigen::Index>(indices.size()));
  for (std::size_t i = 0; i < indices.size(); ++i) out.col(i) = v.col(indices[i]);
  return out;
}

}  // namespace headstab
