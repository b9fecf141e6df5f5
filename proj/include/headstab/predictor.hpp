#ifndef HEADSTAB_PREDICTOR_HPP
#define HEADSTAB_PREDICTOR_HPP

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "headstab/synthesis.hpp"

namespace headstab {

struct PredictorConfig {
  std::vector<int> extractor_sizes = {1024, 512, 512};
  int latent = 256;
  std::vector<int> regressor_sizes = {512, 512, 512};
  double learning_rate = 5e-5;
  std::int64_t iterations = 20000;
  int batch_size = 32;
  double alpha_t = 1.0;
  std::uint64_t seed = 7;
  std::int64_t log_every = 500;
  std::string precision = "f32";  ///< f32 (default) or f64
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
};

void to_json(nlohmann::json& j, const PredictorConfig& c);
void from_json(const nlohmann::json& j, PredictorConfig& c);

/// One dense layer plus its optimizer moments, in float64 master form.
struct LayerState {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
  Eigen::MatrixXd moment1_w, moment2_w;
  Eigen::VectorXd moment1_b, moment2_b;
};

/// Full predictor state: feature extractor F, regressor R, optimizer
/// moments and the provenance needed to validate inputs at load time.
struct PredictorWeights {
  PredictorConfig config;
  int point_count = 0;  ///< N_C; the input dimension is 3 * N_C
  std::string mask = "frontal";
  std::string model_hash;
  std::int64_t iteration = 0;
  std::vector<LayerState> extractor;
  std::vector<LayerState> regressor;

  int input_dim() const { return 3 * point_count; }
};

/// Fresh weights for the given config and input size (He-style uniform init
/// seeded from config.seed).
PredictorWeights init_predictor(const PredictorConfig& config, int point_count,
                                const std::string& mask, const std::string& model_hash);

struct TrainLogEntry {
  std::int64_t iteration = 0;
  double loss = 0, loss_rotation = 0, loss_translation = 0;
  double validation_md = 0;
};

struct TrainResult {
  PredictorWeights weights;
  std::vector<TrainLogEntry> log;
  bool diverged = false;
};

/// Supervised training with adaptive-moment updates. Deterministic given the
/// config seed and a fixed thread count. When `resume` is set, continues
/// from its iteration counter with the same per-iteration seed stream, so a
/// resumed run matches an uninterrupted one. Divergence (non-finite loss)
/// aborts and returns the last logged checkpoint with `diverged` set.
/// If `log_path` is non-empty, writes line-delimited JSON log records.
TrainResult train(const PredictorConfig& config, const Dataset& training,
                  const Dataset& validation, const ModelData& psi,
                  const PredictorWeights* resume = nullptr, const std::string& log_path = "");

/// Inference engine holding weights in their working precision.
class Predictor {
 public:
  explicit Predictor(PredictorWeights weights);
  ~Predictor();
  Predictor(Predictor&&) noexcept;
  Predictor& operator=(Predictor&&) noexcept;

  const PredictorWeights& weights() const;

  /// Latent code of one preprocessed block (F).
  Eigen::VectorXd feature(const VertexBlock& block) const;

  /// Rigid transform for one preprocessed pair. Throws with diagnostics if
  /// the raw 6D output cannot be decoded.
  RigidTransform predict(const VertexBlock& source, const VertexBlock& target) const;

  /// Full-mesh stabilization: preprocess, predict, then conjugate the
  /// prediction back into the world frame of the inputs. Returns the world
  /// transform and the stabilized source mesh.
  std::pair<RigidTransform, VertexBlock> stabilize(const VertexBlock& vs_full,
                                                   const VertexBlock& vt_full,
                                                   const ModelData& psi) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Scalar value of the supervision loss on decoded transforms:
/// ||R_gt - R||_F + alpha_t * ||t_gt - t||.
double transform_loss_value(const RigidTransform& predicted, const RigidTransform& gt,
                            double alpha_t);

/// Checkpoint container round trip (float64 tensors, JSON header).
void save_checkpoint(const PredictorWeights& weights, const std::string& path);
PredictorWeights load_checkpoint(const std::string& path);

/// Flattens the cartesian rows of a block column-major (x1,y1,z1,x2,...).
Eigen::VectorXd flatten_block(const VertexBlock& block);

}  // namespace headstab

#endif  // HEADSTAB_PREDICTOR_HPP
