#ifndef HEADSTAB_MODEL_HPP
#define HEADSTAB_MODEL_HPP

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "headstab/geometry.hpp"

namespace headstab {

/// Named set of vertex indices, sorted and unique.
struct RegionMask {
  std::string name;
  std::vector<int> indices;
};

/// Pose and shape parameters for one generated head.
struct ModelParams {
  Eigen::VectorXd identity;              ///< beta
  Eigen::VectorXd expression;            ///< phi
  Eigen::Matrix3Xd joint_rotations;      ///< theta, 3 x K angle-axis, radians
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();  ///< tau, mm
};

/// Linear head model: template and joints in bind pose, identity and
/// expression bases, per-joint identity corrections, skinning weights,
/// kinematic hierarchy, synthetic skull points and named region masks.
///
/// Basis entries are 4 x N displacement blocks with a zero fourth row, so
/// that adding them to a homogeneous block preserves the homogeneous row.
struct ModelData {
  // Joint order is fixed: root, neck, head, jaw.
  static constexpr int kRoot = 0;
  static constexpr int kNeck = 1;
  static constexpr int kHead = 2;
  static constexpr int kJaw = 3;
  static constexpr int kNumJoints = 4;

  VertexBlock template_vertices;                    ///< T, 4 x N_V
  Eigen::Matrix4Xd joints;                          ///< J, 4 x K
  std::vector<Eigen::Matrix4Xd> identity_basis;     ///< I
  std::vector<Eigen::Matrix4Xd> expression_basis;   ///< E
  std::vector<Eigen::Matrix4Xd> joint_basis;        ///< Q, 4 x K per identity coeff
  Eigen::MatrixXd skin_weights;                     ///< W, K x N_V, columns sum to 1
  std::vector<int> parents;                         ///< P, parent index < child, root = -1
  VertexBlock skull_points;                         ///< 4 x N_W, template frame
  std::map<std::string, RegionMask> masks;
  std::vector<std::array<int, 3>> faces;            ///< triangle topology
  std::uint64_t seed = 0;

  int vertex_count() const { return static_cast<int>(template_vertices.cols()); }
  int identity_count() const { return static_cast<int>(identity_basis.size()); }
  int expression_count() const { return static_cast<int>(expression_basis.size()); }
  int skull_count() const { return static_cast<int>(skull_points.cols()); }

  ModelParams zero_params() const;

  /// Throws std::runtime_error if any structural invariant is violated.
  void validate() const;
};

/// Bind-pose vertices and joints from the linear bases:
/// V = T + sum(beta_i * I_i) + sum(phi_i * E_i), J_bind = J + sum(beta_i * Q_i).
std::pair<VertexBlock, Eigen::Matrix4Xd> bind_pose(const ModelData& psi,
                                                   const Eigen::VectorXd& beta,
                                                   const Eigen::VectorXd& phi);

/// Per-joint bind-relative skinning transforms: rotations propagate down the
/// kinematic tree, each joint rotating about its bind-pose location, the root
/// additionally translated by tau.
std::vector<RigidTransform> skinning_transforms(const Eigen::Matrix4Xd& j_bind,
                                                const Eigen::Matrix3Xd& theta,
                                                const Eigen::Vector3d& tau,
                                                const std::vector<int>& parents);

/// Linear blend skinning: each vertex is the weight-blended image of its
/// bind position under the joint transforms.
VertexBlock lbs(const VertexBlock& v_bind, const std::vector<RigidTransform>& transforms,
                const Eigen::MatrixXd& weights);

/// Full generator M(theta): bind pose, skinning transforms, LBS.
VertexBlock model_forward(const ModelData& psi, const ModelParams& params);

/// Skull points rigidly following the head joint. Independent of expression
/// by construction.
VertexBlock skull_forward(const ModelData& psi, const ModelParams& params);

/// Skinning transforms for the given parameters (bind joints from beta).
std::vector<RigidTransform> pose_transforms(const ModelData& psi, const ModelParams& params);

/// Stored mask lookup; throws on unknown name. Known names: full, head,
/// face, frontal, upper, face_and_neck, superhero, cranium.
const RegionMask& region_mask(const ModelData& psi, const std::string& name);

/// Procedural model builder. Deterministic per seed; n_vertices_target >= 500
/// is rounded up to the nearest subdivided-icosahedron size.
ModelData synth_model(std::uint64_t seed, int n_vertices_target, int n_identity,
                      int n_expression);

/// Binary model container (float64 tensors + JSON header). Atomic write.
void save_model(const ModelData& psi, const std::string& path);
ModelData load_model(const std::string& path);

/// Stable content fingerprint of the model, echoed by downstream artifacts
/// so that incompatible inputs are rejected.
std::string model_fingerprint(const ModelData& psi);

}  // namespace headstab

#endif  // HEADSTAB_MODEL_HPP
