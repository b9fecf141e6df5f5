#include "headstab/model.hpp"

#include <stdexcept>

namespace headstab {

ModelParams ModelData::zero_params() const {
  ModelParams p;
  p.identity = Eigen::VectorXd::Zero(identity_count());
  p.expression = Eigen::VectorXd::Zero(expression_count());
  p.joint_rotations = Eigen::Matrix3Xd::Zero(3, kNumJoints);
  p.translation.setZero();
  return p;
}

void ModelData::validate() const {
  const int n = vertex_count();
  const int k = kNumJoints;
  auto fail = [](const std::string& what) { throw std::runtime_error("ModelData: " + what); };

  if (n < 4) fail("too few vertices");
  if ((template_vertices.row(3).array() != 1.0).any()) fail("template homogeneous row != 1");
  if (joints.cols() != k || (joints.row(3).array() != 1.0).any()) fail("bad joint block");
  if (static_cast<int>(parents.size()) != k) fail("bad hierarchy length");
  if (parents[0] != -1) fail("joint 0 must be the root");
  for (int j = 1; j < k; ++j) {
    if (parents[j] < 0 || parents[j] >= j) fail("parent index must precede child");
  }
  for (const auto& row : identity_basis) {
    if (row.cols() != n || row.row(3).cwiseAbs().maxCoeff() != 0.0) fail("bad identity basis row");
  }
  for (const auto& row : expression_basis) {
    if (row.cols() != n || row.row(3).cwiseAbs().maxCoeff() != 0.0) fail("bad expression basis row");
  }
  if (static_cast<int>(joint_basis.size()) != identity_count()) fail("joint basis count mismatch");
  for (const auto& row : joint_basis) {
    if (row.cols() != k || row.row(3).cwiseAbs().maxCoeff() != 0.0) fail("bad joint basis row");
  }
  if (skin_weights.rows() != k || skin_weights.cols() != n) fail("bad skinning weight shape");
  if (skin_weights.minCoeff() < 0.0) fail("negative skinning weight");
  if (((skin_weights.colwise().sum().array() - 1.0).abs() > 1e-9).any()) {
    fail("skinning weight columns must sum to 1");
  }
  if (skull_points.cols() < 3 || (skull_points.row(3).array() != 1.0).any()) fail("bad skull block");

  for (const char* name : {"full", "head", "face", "frontal", "upper", "face_and_neck",
                           "superhero", "cranium"}) {
    auto it = masks.find(name);
    if (it == masks.end() || it->second.indices.empty()) fail(std::string("missing mask ") + name);
    const auto& idx = it->second.indices;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] < 0 || idx[i] >= n) fail("mask index out of range");
      if (i > 0 && idx[i] <= idx[i - 1]) fail("mask indices must be sorted unique");
    }
  }

  // The stable-skull guarantee: expression rows vanish on the cranium.
  const auto& cranium = masks.at("cranium").indices;
  for (const auto& row : expression_basis) {
    for (int v : cranium) {
      if (row.col(v).cwiseAbs().maxCoeff() != 0.0) fail("expression basis touches the cranium");
    }
  }
  for (int v : cranium) {
    if (skin_weights(kHead, v) != 1.0) fail("cranium vertex not fully head-bound");
  }
}

std::pair<VertexBlock, Eigen::Matrix4Xd> bind_pose(const ModelData& psi,
                                                   const Eigen::VectorXd& beta,
                                                   const Eigen::VectorXd& phi) {
  if (beta.size() != psi.identity_count() || phi.size() != psi.expression_count()) {
    throw std::invalid_argument("bind_pose: parameter size mismatch");
  }
  VertexBlock v = psi.template_vertices;
  for (int i = 0; i < beta.size(); ++i) {
    if (beta[i] != 0.0) v.noalias() += beta[i] * psi.identity_basis[i];
  }
  for (int i = 0; i < phi.size(); ++i) {
    if (phi[i] != 0.0) v.noalias() += phi[i] * psi.expression_basis[i];
  }
  Eigen::Matrix4Xd j = psi.joints;
  for (int i = 0; i < beta.size(); ++i) {
    if (beta[i] != 0.0) j.noalias() += beta[i] * psi.joint_basis[i];
  }
  return {std::move(v), std::move(j)};
}

std::vector<RigidTransform> skinning_transforms(const Eigen::Matrix4Xd& j_bind,
                                                const Eigen::Matrix3Xd& theta,
                                                const Eigen::Vector3d& tau,
                                                const std::vector<int>& parents) {
  const int k = static_cast<int>(parents.size());
  if (j_bind.cols() != k || theta.cols() != k) {
    throw std::invalid_argument("skinning_transforms: joint count mismatch");
  }
  if (!parents.empty() && parents[0] != -1) {
    throw std::invalid_argument("skinning_transforms: joint 0 must be the root");
  }
  std::vector<RigidTransform> out(k);
  for (int j = 0; j < k; ++j) {
    if (j > 0 && (parents[j] < 0 || parents[j] >= j)) {
      throw std::invalid_argument("skinning_transforms: hierarchy is not a forward tree");
    }
    const Eigen::Vector3d pivot = j_bind.col(j).head<3>();
    const double angle = theta.col(j).norm();
    RigidTransform local =
        angle == 0.0 ? RigidTransform::identity()
                     : RigidTransform::rotate_about(
                           angle_axis_to_matrix(angle, theta.col(j)), pivot);
    if (j == 0) {
      out[j] = compose(RigidTransform::translate(tau), local);
    } else {
      out[j] = compose(out[parents[j]], local);
    }
  }
  return out;
}

VertexBlock lbs(const VertexBlock& v_bind, const std::vector<RigidTransform>& transforms,
                const Eigen::MatrixXd& weights) {
  const int k = static_cast<int>(transforms.size());
  if (weights.rows() != k || weights.cols() != v_bind.cols()) {
    throw std::invalid_argument("lbs: weight shape mismatch");
  }
  Eigen::Matrix3Xd acc = Eigen::Matrix3Xd::Zero(3, v_bind.cols());
  for (int j = 0; j < k; ++j) {
    Eigen::Matrix3Xd moved = transforms[j].rotation * v_bind.topRows<3>();
    moved.colwise() += transforms[j].translation;
    acc.noalias() += moved * weights.row(j).asDiagonal();
  }
  VertexBlock out(4, v_bind.cols());
  out.topRows<3>() = acc;
  out.row(3).setOnes();
  return out;
}

std::vector<RigidTransform> pose_transforms(const ModelData& psi, const ModelParams& params) {
  auto [v_bind, j_bind] = bind_pose(psi, params.identity, params.expression);
  (void)v_bind;
  return skinning_transforms(j_bind, params.joint_rotations, params.translation, psi.parents);
}

VertexBlock model_forward(const ModelData& psi, const ModelParams& params) {
  auto [v_bind, j_bind] = bind_pose(psi, params.identity, params.expression);
  auto transforms =
      skinning_transforms(j_bind, params.joint_rotations, params.translation, psi.parents);
  return lbs(v_bind, transforms, psi.skin_weights);
}

VertexBlock skull_forward(const ModelData& psi, const ModelParams& params) {
  // The skull ignores expression entirely; only the head-joint transform
  // (which depends on beta through the bind joints) moves it.
  if (params.identity.size() != psi.identity_count()) {
    throw std::invalid_argument("skull_forward: identity size mismatch");
  }
  auto j_bind = psi.joints;
  for (int i = 0; i < params.identity.size(); ++i) {
    if (params.identity[i] != 0.0) j_bind.noalias() += params.identity[i] * psi.joint_basis[i];
  }
  auto transforms =
      skinning_transforms(j_bind, params.joint_rotations, params.translation, psi.parents);
  return apply(transforms[ModelData::kHead], psi.skull_points);
}

const RegionMask& region_mask(const ModelData& psi, const std::string& name) {
  auto it = psi.masks.find(name);
  if (it == psi.masks.end()) {
    throw std::invalid_argument("region_mask: unknown mask '" + name + "'");
  }
  return it->second;
}

}  // namespace headstab
