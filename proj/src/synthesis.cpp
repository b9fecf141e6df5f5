#include "headstab/synthesis.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "headstab/container.hpp"
#include "headstab/parallel.hpp"
#include "headstab/rng.hpp"

namespace headstab {

double ExpressionLibrary::pooled_std() const {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto& e : entries) {
    sum += e.sum();
    sq += e.squaredNorm();
    n += e.size();
  }
  if (n == 0) return 0.0;
  const double mean = sum / static_cast<double>(n);
  return std::sqrt(std::max(0.0, sq / static_cast<double>(n) - mean * mean));
}

void to_json(nlohmann::json& j, const SynthesisConfig& c) {
  j = {{"count", c.count},
       {"seed", c.seed},
       {"mask", c.mask},
       {"eps_r", c.eps_r},
       {"eps_t", c.eps_t},
       {"eps_expr", c.eps_expr},
       {"identity_set_seed", c.identity_set_seed},
       {"identity_set_size", c.identity_set_size},
       {"library_seed", c.library_seed},
       {"library_size", c.library_size},
       {"library_sparsity", c.library_sparsity},
       {"library_mag_lo", c.library_mag_lo},
       {"library_mag_hi", c.library_mag_hi},
       {"library_jaw_boost", c.library_jaw_boost},
       {"pose_eps_neck", c.pose_eps_neck},
       {"pose_eps_head", c.pose_eps_head},
       {"pose_eps_jaw", c.pose_eps_jaw}};
}

void from_json(const nlohmann::json& j, SynthesisConfig& c) {
  SynthesisConfig d;
  c.count = j.value("count", d.count);
  c.seed = j.value("seed", d.seed);
  c.mask = j.value("mask", d.mask);
  c.eps_r = j.value("eps_r", d.eps_r);
  c.eps_t = j.value("eps_t", d.eps_t);
  c.eps_expr = j.value("eps_expr", d.eps_expr);
  c.identity_set_seed = j.value("identity_set_seed", d.identity_set_seed);
  c.identity_set_size = j.value("identity_set_size", d.identity_set_size);
  c.library_seed = j.value("library_seed", d.library_seed);
  c.library_size = j.value("library_size", d.library_size);
  c.library_sparsity = j.value("library_sparsity", d.library_sparsity);
  c.library_mag_lo = j.value("library_mag_lo", d.library_mag_lo);
  c.library_mag_hi = j.value("library_mag_hi", d.library_mag_hi);
  c.library_jaw_boost = j.value("library_jaw_boost", d.library_jaw_boost);
  c.pose_eps_neck = j.value("pose_eps_neck", d.pose_eps_neck);
  c.pose_eps_head = j.value("pose_eps_head", d.pose_eps_head);
  c.pose_eps_jaw = j.value("pose_eps_jaw", d.pose_eps_jaw);
}

IdentityDistribution fit_identity_distribution(const std::vector<Eigen::VectorXd>& identity_set) {
  if (identity_set.empty()) {
    throw std::invalid_argument("fit_identity_distribution: empty identity set");
  }
  const Eigen::Index dim = identity_set[0].size();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
  for (const auto& b : identity_set) {
    if (b.size() != dim) throw std::invalid_argument("fit_identity_distribution: ragged set");
    mean += b;
  }
  mean /= static_cast<double>(identity_set.size());
  Eigen::VectorXd var = Eigen::VectorXd::Zero(dim);
  for (const auto& b : identity_set) var += (b - mean).array().square().matrix();
  var /= static_cast<double>(identity_set.size());
  return {mean, var.array().sqrt()};
}

std::vector<Eigen::VectorXd> synth_identity_set(std::uint64_t seed, int count, int dim) {
  if (count < 1 || dim < 1) throw std::invalid_argument("synth_identity_set: bad sizes");
  Rng rng(derive_seed(seed, 0xa1));
  std::vector<Eigen::VectorXd> out(count);
  for (auto& b : out) {
    b.resize(dim);
    for (int i = 0; i < dim; ++i) {
      // Decaying spectrum, PCA-like: leading coordinates vary the most.
      const double scale = 1.0 / (1.0 + 0.15 * i);
      b[i] = scale * rng.normal();
    }
  }
  return out;
}

ExpressionLibrary synth_expression_library(std::uint64_t seed, int count, int sparsity,
                                           int n_expression, double mag_lo, double mag_hi,
                                           double jaw_boost) {
  if (count < 1) throw std::invalid_argument("synth_expression_library: count must be >= 1");
  if (sparsity < 0 || n_expression < 1) {
    throw std::invalid_argument("synth_expression_library: bad sizes");
  }
  Rng rng(derive_seed(seed, 0xe2));
  ExpressionLibrary lib;
  lib.entries.resize(count);
  for (auto& e : lib.entries) {
    e = Eigen::VectorXd::Zero(n_expression);
    if (sparsity > 0) {
      const int active = 1 + static_cast<int>(rng.index(sparsity));
      for (int a = 0; a < active; ++a) {
        const int idx = static_cast<int>(rng.index(n_expression));
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        e[idx] = sign * rng.uniform(mag_lo, mag_hi);
      }
      if (jaw_boost > 0.0 && rng.uniform() < jaw_boost) {
        // Expression row 0 is the jaw opener by construction of the model.
        e[0] = rng.uniform(std::max(mag_lo, 0.8), mag_hi * 1.5);
      }
    }
  }
  return lib;
}

IdentityDistribution make_distribution(const SynthesisConfig& cfg, const ModelData& psi) {
  return fit_identity_distribution(
      synth_identity_set(cfg.identity_set_seed, cfg.identity_set_size, psi.identity_count()));
}

ExpressionLibrary make_library(const SynthesisConfig& cfg, const ModelData& psi) {
  return synth_expression_library(cfg.library_seed, cfg.library_size, cfg.library_sparsity,
                                  psi.expression_count(), cfg.library_mag_lo, cfg.library_mag_hi,
                                  cfg.library_jaw_boost);
}

VertexBlock masked_template(const ModelData& psi, const std::string& mask) {
  VertexBlock t = select_columns(psi.template_vertices, region_mask(psi, mask).indices);
  const Eigen::Vector3d c = t.topRows<3>().rowwise().mean();
  t.topRows<3>().colwise() -= c;
  return t;
}

std::pair<RigidTransform, RigidTransform> preprocess_transforms(const VertexBlock& vs_full,
                                                                const VertexBlock& vt_full,
                                                                const ModelData& psi,
                                                                const std::string& mask) {
  const auto& idx = region_mask(psi, mask).indices;
  const VertexBlock anchor = masked_template(psi, mask);
  const VertexBlock vs = select_columns(vs_full, idx);
  const VertexBlock vt = select_columns(vt_full, idx);
  const RigidTransform a_t = procrustes_transform(vt, anchor);
  const RigidTransform a_s = procrustes_transform(vs, apply(a_t, vt));
  return {a_s, a_t};
}

std::pair<VertexBlock, VertexBlock> preprocess_pair(const VertexBlock& vs_full,
                                                    const VertexBlock& vt_full,
                                                    const ModelData& psi,
                                                    const std::string& mask) {
  const auto& idx = region_mask(psi, mask).indices;
  auto [a_s, a_t] = preprocess_transforms(vs_full, vt_full, psi, mask);
  return {apply(a_s, select_columns(vs_full, idx)), apply(a_t, select_columns(vt_full, idx))};
}

SampleDetail generate_sample_detail(const SynthesisConfig& cfg, const ModelData& psi,
                                    const IdentityDistribution& dist,
                                    const ExpressionLibrary& library,
                                    std::uint64_t sample_seed) {
  if (library.entries.empty()) throw std::invalid_argument("generate_sample: empty library");
  if (cfg.eps_r < 0 || cfg.eps_t < 0) throw std::invalid_argument("generate_sample: bad noise");
  Rng rng(sample_seed);

  // Identity inside the +-3 sigma box.
  Eigen::VectorXd beta(dist.mean.size());
  for (Eigen::Index i = 0; i < beta.size(); ++i) {
    beta[i] = rng.uniform(dist.mean[i] - 3.0 * dist.stddev[i], dist.mean[i] + 3.0 * dist.stddev[i]);
  }

  // Two expressions from the library plus isotropic noise.
  const double eps_expr = cfg.eps_expr >= 0.0 ? cfg.eps_expr : 0.05 * library.pooled_std();
  Eigen::VectorXd phi_s = library.entries[rng.index(library.entries.size())];
  Eigen::VectorXd phi_t = library.entries[rng.index(library.entries.size())];
  if (eps_expr > 0.0) {
    for (Eigen::Index i = 0; i < phi_s.size(); ++i) phi_s[i] += rng.normal(0.0, eps_expr);
    for (Eigen::Index i = 0; i < phi_t.size(); ++i) phi_t[i] += rng.normal(0.0, eps_expr);
  }

  // Alignment noise.
  const RigidTransform eps_s = sample_random_rigid(cfg.eps_r, cfg.eps_t, rng);
  const RigidTransform eps_t = sample_random_rigid(cfg.eps_r, cfg.eps_t, rng);

  // Optional pose noise; draws nothing when disabled, so the default stream
  // is exactly the baseline algorithm.
  ModelParams ps = psi.zero_params();
  ModelParams pt = psi.zero_params();
  ps.identity = beta;
  pt.identity = beta;
  ps.expression = phi_s;
  pt.expression = phi_t;
  auto sample_pose = [&](ModelParams& p) {
    auto draw = [&](int joint, double eps) {
      if (eps <= 0.0) return;
      for (int a = 0; a < 3; ++a) p.joint_rotations(a, joint) = rng.normal(0.0, eps);
    };
    draw(ModelData::kNeck, cfg.pose_eps_neck);
    draw(ModelData::kHead, cfg.pose_eps_head);
    draw(ModelData::kJaw, cfg.pose_eps_jaw);
  };
  sample_pose(ps);
  sample_pose(pt);

  const auto& idx = region_mask(psi, cfg.mask).indices;
  const VertexBlock anchor = masked_template(psi, cfg.mask);

  const VertexBlock full_s = model_forward(psi, ps);
  const VertexBlock full_t = model_forward(psi, pt);
  const VertexBlock masked_s = select_columns(full_s, idx);
  const VertexBlock masked_t = select_columns(full_t, idx);

  // Noisily align target to the template, then source to the target.
  const RigidTransform to_template = procrustes_transform(masked_t, anchor);
  const RigidTransform a_t = compose(eps_t, to_template);
  const VertexBlock target = apply(a_t, masked_t);
  const RigidTransform to_target = procrustes_transform(masked_s, target);
  const RigidTransform a_s = compose(eps_s, to_target);
  const VertexBlock source = apply(a_s, masked_s);

  // Ground truth: maps the source-frame skull onto the target-frame skull.
  // Without pose noise both skulls coincide in generation space and this is
  // exactly eps_t * Q(t->template) * Q(s->target)^-1 * eps_s^-1.
  const RigidTransform head_s = pose_transforms(psi, ps)[ModelData::kHead];
  const RigidTransform head_t = pose_transforms(psi, pt)[ModelData::kHead];
  const RigidTransform gt =
      compose(compose(a_t, head_t), invert(compose(a_s, head_s)));

  SampleDetail d;
  d.sample = {source, target, gt, sample_seed};
  // Stored blocks are float32 in the dataset file; quantize now so training
  // sees identical inputs whether the dataset came from memory or from disk.
  d.sample.source = d.sample.source.cast<float>().cast<double>();
  d.sample.target = d.sample.target.cast<float>().cast<double>();
  d.source_full = apply(a_s, full_s);
  d.target_full = apply(a_t, full_t);
  d.source_skull = apply(a_s, skull_forward(psi, ps));
  d.target_skull = apply(a_t, skull_forward(psi, pt));

  // Frame-equivalent parameters: fold the alignment transform into the root.
  auto world_params = [&](const ModelParams& p, const RigidTransform& a) {
    ModelParams w = p;
    const Eigen::AngleAxisd aa(a.rotation);
    w.joint_rotations.col(ModelData::kRoot) = aa.angle() * aa.axis();
    const Eigen::Vector3d pivot =
        (psi.joints.col(ModelData::kRoot) +
         [&] {
           Eigen::Vector4d acc = Eigen::Vector4d::Zero();
           for (int i = 0; i < p.identity.size(); ++i) {
             acc += p.identity[i] * psi.joint_basis[i].col(ModelData::kRoot);
           }
           return acc;
         }())
            .head<3>();
    w.translation = a.translation - (pivot - a.rotation * pivot);
    return w;
  };
  d.params_source = world_params(ps, a_s);
  d.params_target = world_params(pt, a_t);
  return d;
}

TrainingSample generate_sample(const SynthesisConfig& cfg, const ModelData& psi,
                               const IdentityDistribution& dist,
                               const ExpressionLibrary& library, std::uint64_t sample_seed) {
  return generate_sample_detail(cfg, psi, dist, library, sample_seed).sample;
}

// ---------------------------------------------------------------------------
// Dataset file: JSON header, then per record
//   f32 source[3 * n], f32 target[3 * n], f64 gt[16] row-major, u64 seed.
// ---------------------------------------------------------------------------

namespace {

constexpr char kDatasetMagic[4] = {'H', 'S', 'T', 'D'};
constexpr std::uint32_t kDatasetVersion = 1;

void append_block_f32(std::string& out, const VertexBlock& v) {
  std::vector<float> buf(3 * v.cols());
  for (int r = 0; r < 3; ++r) {
    for (Eigen::Index c = 0; c < v.cols(); ++c) {
      buf[r * v.cols() + c] = static_cast<float>(v(r, c));
    }
  }
  out.append(reinterpret_cast<const char*>(buf.data()), buf.size() * sizeof(float));
}

VertexBlock read_block_f32(const char*& p, int n) {
  VertexBlock v(4, n);
  std::vector<float> buf(3 * n);
  std::memcpy(buf.data(), p, buf.size() * sizeof(float));
  p += buf.size() * sizeof(float);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < n; ++c) v(r, c) = buf[r * n + c];
  }
  v.row(3).setOnes();
  return v;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
  nlohmann::json header;
  header["kind"] = "headstab-dataset";
  header["format_version"] = kDatasetVersion;
  header["units"] = "mm";
  header["count"] = ds.samples.size();
  header["point_count"] = ds.point_count;
  header["mask"] = ds.mask;
  header["model_hash"] = ds.model_hash;
  header["config"] = ds.config;
  const std::string hjson = header.dump();

  std::string bytes;
  const std::size_t record = 2 * 3 * ds.point_count * 4 + 16 * 8 + 8;
  bytes.reserve(16 + hjson.size() + record * ds.samples.size());
  bytes.append(kDatasetMagic, 4);
  const std::uint32_t ver = kDatasetVersion;
  bytes.append(reinterpret_cast<const char*>(&ver), 4);
  const std::uint64_t hlen = hjson.size();
  bytes.append(reinterpret_cast<const char*>(&hlen), 8);
  bytes.append(hjson);
  for (const auto& s : ds.samples) {
    append_block_f32(bytes, s.source);
    append_block_f32(bytes, s.target);
    Eigen::Matrix<double, 4, 4, Eigen::RowMajor> gt = s.gt.matrix();
    bytes.append(reinterpret_cast<const char*>(gt.data()), 16 * sizeof(double));
    bytes.append(reinterpret_cast<const char*>(&s.seed), sizeof(s.seed));
  }
  atomic_write_file(path, bytes);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_dataset: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kDatasetMagic, 4) != 0) {
    throw std::runtime_error("load_dataset: bad magic in " + path);
  }
  std::uint32_t ver;
  std::memcpy(&ver, bytes.data() + 4, 4);
  if (ver != kDatasetVersion) throw std::runtime_error("load_dataset: unsupported version");
  std::uint64_t hlen;
  std::memcpy(&hlen, bytes.data() + 8, 8);
  nlohmann::json header = nlohmann::json::parse(bytes.substr(16, hlen));

  Dataset ds;
  ds.mask = header.at("mask").get<std::string>();
  ds.point_count = header.at("point_count").get<int>();
  ds.model_hash = header.value("model_hash", "");
  ds.config = header.at("config").get<SynthesisConfig>();
  const std::size_t count = header.at("count").get<std::size_t>();

  const int n = ds.point_count;
  const std::size_t record = 2 * 3 * static_cast<std::size_t>(n) * 4 + 16 * 8 + 8;
  if (bytes.size() != 16 + hlen + record * count) {
    throw std::runtime_error("load_dataset: truncated file " + path);
  }
  const char* p = bytes.data() + 16 + hlen;
  ds.samples.resize(count);
  for (auto& s : ds.samples) {
    s.source = read_block_f32(p, n);
    s.target = read_block_f32(p, n);
    Eigen::Matrix<double, 4, 4, Eigen::RowMajor> gt;
    std::memcpy(gt.data(), p, 16 * sizeof(double));
    p += 16 * sizeof(double);
    s.gt = RigidTransform::from_matrix(gt);
    std::memcpy(&s.seed, p, 8);
    p += 8;
  }
  return ds;
}

Dataset generate_dataset(const SynthesisConfig& cfg, const ModelData& psi,
                         const IdentityDistribution& dist, const ExpressionLibrary& library,
                         const std::string& path, int workers) {
  if (cfg.count < 1) throw std::invalid_argument("generate_dataset: count must be >= 1");
  Dataset ds;
  ds.config = cfg;
  ds.mask = cfg.mask;
  ds.point_count = static_cast<int>(region_mask(psi, cfg.mask).indices.size());
  ds.model_hash = model_fingerprint(psi);
  ds.samples.resize(cfg.count);
  parallel_for(cfg.count, workers, [&](std::size_t i) {
    ds.samples[i] = generate_sample(cfg, psi, dist, library, derive_seed(cfg.seed, i));
  });
  if (!path.empty()) save_dataset(ds, path);
  return ds;
}

std::vector<SampleDetail> replay_details(const Dataset& ds, const ModelData& psi, int workers) {
  const IdentityDistribution dist = make_distribution(ds.config, psi);
  const ExpressionLibrary library = make_library(ds.config, psi);
  std::vector<SampleDetail> out(ds.samples.size());
  parallel_for(out.size(), workers, [&](std::size_t i) {
    out[i] = generate_sample_detail(ds.config, psi, dist, library, ds.samples[i].seed);
  });
  return out;
}

}  // namespace headstab
