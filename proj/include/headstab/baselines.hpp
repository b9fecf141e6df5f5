#ifndef HEADSTAB_BASELINES_HPP
#define HEADSTAB_BASELINES_HPP

#include <string>
#include <vector>

#include "headstab/synthesis.hpp"

namespace headstab {

/// Procrustes alignment of source onto target restricted to a named region,
/// returned in the world frame of the inputs.
RigidTransform proc_baseline(const VertexBlock& vs_full, const VertexBlock& vt_full,
                             const ModelData& psi, const std::string& region);

/// Unposing baseline: the rigid map carrying the source's posed head frame
/// onto the target's, fully determined by the pose parameters. Aligns the
/// skulls exactly when the parameters are exact.
RigidTransform unpose_baseline(const ModelParams& params_s, const ModelParams& params_t,
                               const ModelData& psi);

// ---------------------------------------------------------------------------
// Learned confidence map
// ---------------------------------------------------------------------------

/// Per-vertex alignment confidence over a named region.
struct ConfidenceMap {
  std::string region = "face";
  Eigen::VectorXd weights;  // clamped to [0, 1]
};

enum class CmapVariant { kOriginal, kContrast, kContrastConsistent };

std::string to_string(CmapVariant v);
CmapVariant cmap_variant_from_string(const std::string& s);

struct CmapConfig {
  CmapVariant variant = CmapVariant::kContrastConsistent;
  std::string region = "face";
  double alpha_data = 100.0;
  double alpha_reg = 0.01;
  double alpha_sigma = 100.0;
  double alpha_neighborhood = 100.0;
  double rho = 0.4;       ///< regularizer fraction, 0 < rho < 1
  int k_neighbors = 10;
  int steps = 400;
  double step_size = 1e-2;
  int batch_pairs = 8;
  std::uint64_t seed = 11;
};

void to_json(nlohmann::json& j, const CmapConfig& c);
void from_json(const nlohmann::json& j, CmapConfig& c);

/// k nearest region vertices (Euclidean on the bind-pose template) per
/// region vertex, self excluded.
std::vector<std::vector<int>> template_knn(const ModelData& psi, const std::string& region,
                                           int k);

struct CmapLosses {
  double data = 0;          ///< ||P(~Us, ~Ut) - ~Ut||_F^2, >= 0
  double reg = 0;           ///< max(0, rho * N - ||w||^2), >= 0
  double sigma = 0;         ///< -std(w), <= 0
  double neighborhood = 0;  ///< mean local std of w over k-NN, >= 0
};

/// The four energy terms for one pair of region blocks. `neighbors` must
/// come from template_knn on the same region.
CmapLosses cmap_losses(const Eigen::VectorXd& w, const VertexBlock& us, const VertexBlock& ut,
                       const CmapConfig& cfg, const std::vector<std::vector<int>>& neighbors);

/// Convenience overload computing the neighbor table from the model.
CmapLosses cmap_losses(const Eigen::VectorXd& w, const VertexBlock& us, const VertexBlock& ut,
                       const ModelData& psi, const CmapConfig& cfg);

/// Gradient-descent fit of the confidence weights over training pairs
/// (region blocks are taken from the full meshes). w starts at 0.5 and is
/// clamped to [0,1] after every step. The data term treats the inner
/// alignment as fixed per step (alternation). Deterministic per seed.
ConfidenceMap cmap_train(const std::vector<SampleDetail>& pairs, const ModelData& psi,
                         const CmapConfig& cfg);

/// Runs cmap_train over the step-size grid {1e-3, 1e-2, 1e-1} and keeps the
/// map with the best mean vertex distance on the validation pairs.
/// `chosen_step` (optional) receives the winning step size.
ConfidenceMap cmap_train_grid(const std::vector<SampleDetail>& train_pairs,
                              const std::vector<SampleDetail>& val_pairs, const ModelData& psi,
                              CmapConfig cfg, double* chosen_step = nullptr);

/// Weighted Procrustes stabilization with the trained map, world frame.
RigidTransform cmap_stabilize(const ConfidenceMap& map, const VertexBlock& vs_full,
                              const VertexBlock& vt_full, const ModelData& psi);

void save_cmap(const ConfidenceMap& map, const CmapConfig& cfg, const std::string& path);
ConfidenceMap load_cmap(const std::string& path);

}  // namespace headstab

#endif  // HEADSTAB_BASELINES_HPP
