#ifndef HEADSTAB_SYNTHESIS_HPP
#define HEADSTAB_SYNTHESIS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "headstab/model.hpp"

namespace headstab {

/// Per-coordinate normal fit over a set of identity vectors.
struct IdentityDistribution {
  Eigen::VectorXd mean;
  Eigen::VectorXd stddev;  ///< population convention (divide by N)
};

/// Pool of expression vectors to draw training expressions from.
struct ExpressionLibrary {
  std::vector<Eigen::VectorXd> entries;

  /// Pooled standard deviation over all coefficients of all entries.
  double pooled_std() const;
};

/// Knobs for the sample generator. The recipe for the identity set and the
/// expression library is carried here too, so a dataset is reproducible from
/// the config echo in its header plus the model file.
struct SynthesisConfig {
  int count = 8000;
  std::uint64_t seed = 1;
  std::string mask = "frontal";

  double eps_r = 0.05235987755982988;  ///< alignment rotation noise std, rad (3 deg)
  double eps_t = 3.0;                  ///< alignment translation noise std, mm
  double eps_expr = -1.0;              ///< expression noise std; < 0 = 0.05 * library std

  // Identity set stand-in (fit target for the identity distribution).
  std::uint64_t identity_set_seed = 101;
  int identity_set_size = 512;

  // Expression library stand-in.
  std::uint64_t library_seed = 202;
  int library_size = 256;
  int library_sparsity = 4;
  double library_mag_lo = 0.4;
  double library_mag_hi = 1.1;
  double library_jaw_boost = 0.0;  ///< probability of force-adding a strong jaw-opener

  // Optional pose noise (radians) for stress test sets. Zero keeps the
  // generator exactly at the baseline algorithm (no pose sampling).
  double pose_eps_neck = 0.0;
  double pose_eps_head = 0.0;
  double pose_eps_jaw = 0.0;
};

void to_json(nlohmann::json& j, const SynthesisConfig& c);
void from_json(const nlohmann::json& j, SynthesisConfig& c);

/// One preprocessed training pair with its ground-truth transform.
struct TrainingSample {
  VertexBlock source;  ///< masked, pre-aligned, N_C points
  VertexBlock target;
  RigidTransform gt;
  std::uint64_t seed = 0;
};

/// Everything the generator knows about a sample; used by oracle checks,
/// baselines and evaluation. Full blocks live in the same noisy pre-aligned
/// frames as the stored sample blocks.
struct SampleDetail {
  TrainingSample sample;
  VertexBlock source_full;
  VertexBlock target_full;
  VertexBlock source_skull;
  VertexBlock target_skull;
  ModelParams params_source;  ///< frame-equivalent parameters (for unposing)
  ModelParams params_target;
};

/// Per-coordinate mean/std fit. Throws on an empty set.
IdentityDistribution fit_identity_distribution(const std::vector<Eigen::VectorXd>& identity_set);

/// Stand-in for a registered identity set: draws vectors from a decaying
/// per-coordinate normal prior. Deterministic per seed.
std::vector<Eigen::VectorXd> synth_identity_set(std::uint64_t seed, int count, int dim);

/// Stand-in for registered-scan expressions: each entry activates at most
/// `sparsity` bases with magnitudes in [mag_lo, mag_hi] and random sign.
/// `jaw_boost` adds a strong jaw-opening coefficient with that probability.
ExpressionLibrary synth_expression_library(std::uint64_t seed, int count, int sparsity,
                                           int n_expression, double mag_lo = 0.4,
                                           double mag_hi = 1.1, double jaw_boost = 0.0);

/// Convenience: the distribution/library described by `cfg`.
IdentityDistribution make_distribution(const SynthesisConfig& cfg, const ModelData& psi);
ExpressionLibrary make_library(const SynthesisConfig& cfg, const ModelData& psi);

/// Mask + pre-align a raw mesh pair: target aligned to the centered masked
/// neutral template, source aligned to the processed target.
std::pair<VertexBlock, VertexBlock> preprocess_pair(const VertexBlock& vs_full,
                                                    const VertexBlock& vt_full,
                                                    const ModelData& psi,
                                                    const std::string& mask);

/// Centered masked neutral template used as the pre-alignment anchor.
VertexBlock masked_template(const ModelData& psi, const std::string& mask);

/// Rigid transforms that preprocess_pair applies to the masked source and
/// target (source alignment computed against the already-processed target).
std::pair<RigidTransform, RigidTransform> preprocess_transforms(const VertexBlock& vs_full,
                                                                const VertexBlock& vt_full,
                                                                const ModelData& psi,
                                                                const std::string& mask);

/// Generates one sample with the given stream seed (use derive_seed for
/// dataset workers). Follows the sampling algorithm line by line; the
/// optional pose noise is only active when the config enables it.
SampleDetail generate_sample_detail(const SynthesisConfig& cfg, const ModelData& psi,
                                    const IdentityDistribution& dist,
                                    const ExpressionLibrary& library, std::uint64_t sample_seed);

TrainingSample generate_sample(const SynthesisConfig& cfg, const ModelData& psi,
                               const IdentityDistribution& dist,
                               const ExpressionLibrary& library, std::uint64_t sample_seed);

/// In-memory dataset with its provenance.
struct Dataset {
  SynthesisConfig config;
  std::string mask;
  int point_count = 0;
  std::string model_hash;
  std::vector<TrainingSample> samples;
};

/// Generates cfg.count samples (parallel across workers, content independent
/// of worker count) and writes the dataset file. Returns the dataset.
Dataset generate_dataset(const SynthesisConfig& cfg, const ModelData& psi,
                         const IdentityDistribution& dist, const ExpressionLibrary& library,
                         const std::string& path, int workers = 0);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

/// Re-creates the full-mesh views of dataset samples from their seeds.
std::vector<SampleDetail> replay_details(const Dataset& ds, const ModelData& psi,
                                         int workers = 0);

}  // namespace headstab

#endif  // HEADSTAB_SYNTHESIS_HPP
