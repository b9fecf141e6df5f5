#include "headstab/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "headstab/container.hpp"
#include "headstab/rng.hpp"

namespace headstab {

RigidTransform proc_baseline(const VertexBlock& vs_full, const VertexBlock& vt_full,
                             const ModelData& psi, const std::string& region) {
  const auto& idx = region_mask(psi, region).indices;
  return procrustes_transform(select_columns(vs_full, idx), select_columns(vt_full, idx));
}

RigidTransform unpose_baseline(const ModelParams& params_s, const ModelParams& params_t,
                               const ModelData& psi) {
  const RigidTransform head_s = pose_transforms(psi, params_s)[ModelData::kHead];
  const RigidTransform head_t = pose_transforms(psi, params_t)[ModelData::kHead];
  return compose(head_t, invert(head_s));
}

// ---------------------------------------------------------------------------
// Confidence map
// ---------------------------------------------------------------------------

std::string to_string(CmapVariant v) {
  switch (v) {
    case CmapVariant::kOriginal: return "original";
    case CmapVariant::kContrast: return "contrast";
    case CmapVariant::kContrastConsistent: return "contrast_consistent";
  }
  return "original";
}

CmapVariant cmap_variant_from_string(const std::string& s) {
  if (s == "original") return CmapVariant::kOriginal;
  if (s == "contrast") return CmapVariant::kContrast;
  if (s == "contrast_consistent") return CmapVariant::kContrastConsistent;
  throw std::invalid_argument("unknown cmap variant: " + s);
}

void to_json(nlohmann::json& j, const CmapConfig& c) {
  j = {{"variant", to_string(c.variant)},
       {"region", c.region},
       {"alpha_data", c.alpha_data},
       {"alpha_reg", c.alpha_reg},
       {"alpha_sigma", c.alpha_sigma},
       {"alpha_neighborhood", c.alpha_neighborhood},
       {"rho", c.rho},
       {"k_neighbors", c.k_neighbors},
       {"steps", c.steps},
       {"step_size", c.step_size},
       {"batch_pairs", c.batch_pairs},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, CmapConfig& c) {
  CmapConfig d;
  c.variant = cmap_variant_from_string(j.value("variant", to_string(d.variant)));
  c.region = j.value("region", d.region);
  c.alpha_data = j.value("alpha_data", d.alpha_data);
  c.alpha_reg = j.value("alpha_reg", d.alpha_reg);
  c.alpha_sigma = j.value("alpha_sigma", d.alpha_sigma);
  c.alpha_neighborhood = j.value("alpha_neighborhood", d.alpha_neighborhood);
  c.rho = j.value("rho", d.rho);
  c.k_neighbors = j.value("k_neighbors", d.k_neighbors);
  c.steps = j.value("steps", d.steps);
  c.step_size = j.value("step_size", d.step_size);
  c.batch_pairs = j.value("batch_pairs", d.batch_pairs);
  c.seed = j.value("seed", d.seed);
}

namespace {

void check_cmap_config(const CmapConfig& c) {
  if (c.alpha_data < 0 || c.alpha_reg < 0 || c.alpha_sigma < 0 || c.alpha_neighborhood < 0) {
    throw std::invalid_argument("cmap: loss weights must be >= 0");
  }
  if (!(c.rho > 0.0 && c.rho < 1.0)) throw std::invalid_argument("cmap: rho must be in (0,1)");
  if (c.k_neighbors < 1) throw std::invalid_argument("cmap: k must be >= 1");
}

double population_std(const Eigen::VectorXd& v) {
  const double mean = v.mean();
  return std::sqrt(std::max(0.0, v.array().square().mean() - mean * mean));
}

}  // namespace

std::vector<std::vector<int>> template_knn(const ModelData& psi, const std::string& region,
                                           int k) {
  const auto& idx = region_mask(psi, region).indices;
  const int m = static_cast<int>(idx.size());
  const int kk = std::min(k, m - 1);
  Eigen::Matrix3Xd pts(3, m);
  for (int i = 0; i < m; ++i) pts.col(i) = psi.template_vertices.col(idx[i]).head<3>();

  std::vector<std::vector<int>> nn(m);
  std::vector<std::pair<double, int>> dist(m);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) dist[j] = {(pts.col(j) - pts.col(i)).squaredNorm(), j};
    dist[i].first = std::numeric_limits<double>::infinity();  // exclude self
    std::partial_sort(dist.begin(), dist.begin() + kk, dist.end());
    nn[i].resize(kk);
    for (int j = 0; j < kk; ++j) nn[i][j] = dist[j].second;
  }
  return nn;
}

CmapLosses cmap_losses(const Eigen::VectorXd& w, const VertexBlock& us, const VertexBlock& ut,
                       const CmapConfig& cfg, const std::vector<std::vector<int>>& neighbors) {
  const int m = static_cast<int>(w.size());
  if (us.cols() != m || ut.cols() != m) throw std::invalid_argument("cmap_losses: size mismatch");
  CmapLosses out;

  const RigidTransform s = weighted_procrustes(us, ut, w);
  const Eigen::Matrix3Xd residual = (apply(s, us) - ut).topRows<3>();
  out.data = (residual.colwise().squaredNorm().array() * w.array().square().transpose()).sum();

  out.reg = std::max(0.0, cfg.rho * m - w.squaredNorm());
  out.sigma = -population_std(w);

  double acc = 0.0;
  for (int i = 0; i < m; ++i) {
    const auto& nb = neighbors[i];
    Eigen::VectorXd vals(nb.size());
    for (std::size_t j = 0; j < nb.size(); ++j) vals[j] = w[nb[j]];
    acc += population_std(vals);
  }
  out.neighborhood = acc / m;
  return out;
}

CmapLosses cmap_losses(const Eigen::VectorXd& w, const VertexBlock& us, const VertexBlock& ut,
                       const ModelData& psi, const CmapConfig& cfg) {
  return cmap_losses(w, us, ut, cfg, template_knn(psi, cfg.region, cfg.k_neighbors));
}

ConfidenceMap cmap_train(const std::vector<SampleDetail>& pairs, const ModelData& psi,
                         const CmapConfig& cfg) {
  check_cmap_config(cfg);
  if (pairs.empty()) throw std::invalid_argument("cmap_train: no pairs");
  const auto& idx = region_mask(psi, cfg.region).indices;
  const int m = static_cast<int>(idx.size());
  const auto neighbors = template_knn(psi, cfg.region, cfg.k_neighbors);

  // Region blocks per pair, extracted once.
  std::vector<VertexBlock> us(pairs.size()), ut(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    us[i] = select_columns(pairs[i].source_full, idx);
    ut[i] = select_columns(pairs[i].target_full, idx);
  }

  const bool use_sigma = cfg.variant != CmapVariant::kOriginal;
  const bool use_neighborhood = cfg.variant == CmapVariant::kContrastConsistent;

  Eigen::VectorXd w = Eigen::VectorXd::Constant(m, 0.5);
  Rng rng(derive_seed(cfg.seed, 0xc3));
  const int batch = std::min<int>(cfg.batch_pairs, static_cast<int>(pairs.size()));

  for (int step = 0; step < cfg.steps; ++step) {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(m);

    // Data term, alignment held fixed at its current value per step.
    for (int b = 0; b < batch; ++b) {
      const std::size_t p = rng.index(pairs.size());
      const RigidTransform s = weighted_procrustes(us[p], ut[p], w);
      const Eigen::Matrix3Xd residual = (apply(s, us[p]) - ut[p]).topRows<3>();
      grad += (2.0 / batch) * cfg.alpha_data *
              (w.array() * residual.colwise().squaredNorm().array().transpose()).matrix();
    }

    if (cfg.rho * m - w.squaredNorm() > 0.0) {
      grad -= cfg.alpha_reg * 2.0 * w;
    }

    if (use_sigma) {
      const double sd = population_std(w);
      if (sd > 1e-12) {
        grad -= cfg.alpha_sigma * (w.array() - w.mean()).matrix() / (m * sd);
      }
    }

    if (use_neighborhood) {
      for (int i = 0; i < m; ++i) {
        const auto& nb = neighbors[i];
        const double k = static_cast<double>(nb.size());
        double mean = 0.0;
        for (int j : nb) mean += w[j];
        mean /= k;
        double var = 0.0;
        for (int j : nb) var += (w[j] - mean) * (w[j] - mean);
        var /= k;
        const double sd = std::sqrt(var);
        if (sd > 1e-12) {
          for (int j : nb) {
            grad[j] += cfg.alpha_neighborhood * (w[j] - mean) / (k * sd * m);
          }
        }
      }
    }

    if (!grad.allFinite()) {
      throw std::runtime_error("cmap_train: divergence at step " + std::to_string(step));
    }
    w -= cfg.step_size * grad;
    w = w.cwiseMax(0.0).cwiseMin(1.0);
  }

  return {cfg.region, w};
}

ConfidenceMap cmap_train_grid(const std::vector<SampleDetail>& train_pairs,
                              const std::vector<SampleDetail>& val_pairs, const ModelData& psi,
                              CmapConfig cfg, double* chosen_step) {
  const auto& region_idx = region_mask(psi, cfg.region).indices;
  double best_md = std::numeric_limits<double>::infinity();
  ConfidenceMap best;
  for (double step : {1e-3, 1e-2, 1e-1}) {
    cfg.step_size = step;
    ConfidenceMap map = cmap_train(train_pairs, psi, cfg);
    double err = 0.0;
    std::int64_t count = 0;
    for (const auto& d : val_pairs) {
      const RigidTransform s = cmap_stabilize(map, d.source_full, d.target_full, psi);
      const VertexBlock pred = apply(s, select_columns(d.source_full, region_idx));
      const VertexBlock gt = apply(d.sample.gt, select_columns(d.source_full, region_idx));
      err += (pred - gt).topRows<3>().colwise().norm().sum();
      count += pred.cols();
    }
    const double md = err / static_cast<double>(count);
    if (md < best_md) {
      best_md = md;
      best = map;
      if (chosen_step) *chosen_step = step;
    }
  }
  return best;
}

RigidTransform cmap_stabilize(const ConfidenceMap& map, const VertexBlock& vs_full,
                              const VertexBlock& vt_full, const ModelData& psi) {
  const auto& idx = region_mask(psi, map.region).indices;
  if (static_cast<int>(idx.size()) != map.weights.size()) {
    throw std::invalid_argument("cmap_stabilize: map size does not match region");
  }
  return weighted_procrustes(select_columns(vs_full, idx), select_columns(vt_full, idx),
                             map.weights);
}

void save_cmap(const ConfidenceMap& map, const CmapConfig& cfg, const std::string& path) {
  Container c;
  c.meta["kind"] = "headstab-cmap";
  c.meta["region"] = map.region;
  c.meta["config"] = cfg;
  Eigen::MatrixXf w32 = map.weights.cast<float>();
  c.add(Tensor::from_matrix_f32("weights", w32));
  c.write(path);
}

ConfidenceMap load_cmap(const std::string& path) {
  Container c = Container::read(path);
  if (c.meta.value("kind", "") != "headstab-cmap") {
    throw std::runtime_error("not a confidence map file: " + path);
  }
  ConfidenceMap map;
  map.region = c.meta.value("region", "face");
  map.weights = c.at("weights").to_matrix_f32().cast<double>();
  return map;
}

}  // namespace headstab
