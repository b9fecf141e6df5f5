#include "headstab/predictor.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <variant>

#include "headstab/container.hpp"
#include "headstab/mlp.hpp"

namespace headstab {

void to_json(nlohmann::json& j, const PredictorConfig& c) {
  j = {{"extractor_sizes", c.extractor_sizes},
       {"latent", c.latent},
       {"regressor_sizes", c.regressor_sizes},
       {"learning_rate", c.learning_rate},
       {"iterations", c.iterations},
       {"batch_size", c.batch_size},
       {"alpha_t", c.alpha_t},
       {"seed", c.seed},
       {"log_every", c.log_every},
       {"precision", c.precision},
       {"adam_beta1", c.adam_beta1},
       {"adam_beta2", c.adam_beta2},
       {"adam_eps", c.adam_eps}};
}

void from_json(const nlohmann::json& j, PredictorConfig& c) {
  PredictorConfig d;
  c.extractor_sizes = j.value("extractor_sizes", d.extractor_sizes);
  c.latent = j.value("latent", d.latent);
  c.regressor_sizes = j.value("regressor_sizes", d.regressor_sizes);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.iterations = j.value("iterations", d.iterations);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.alpha_t = j.value("alpha_t", d.alpha_t);
  c.seed = j.value("seed", d.seed);
  c.log_every = j.value("log_every", d.log_every);
  c.precision = j.value("precision", d.precision);
  c.adam_beta1 = j.value("adam_beta1", d.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", d.adam_beta2);
  c.adam_eps = j.value("adam_eps", d.adam_eps);
}

namespace {

std::vector<int> extractor_dims(const PredictorConfig& c, int input_dim) {
  std::vector<int> dims = {input_dim};
  dims.insert(dims.end(), c.extractor_sizes.begin(), c.extractor_sizes.end());
  dims.push_back(c.latent);
  return dims;
}

std::vector<int> regressor_dims(const PredictorConfig& c) {
  std::vector<int> dims = {2 * c.latent};
  dims.insert(dims.end(), c.regressor_sizes.begin(), c.regressor_sizes.end());
  dims.push_back(9);
  return dims;
}

void check_config(const PredictorConfig& c) {
  for (int s : c.extractor_sizes) {
    if (s <= 0) throw std::invalid_argument("predictor: non-positive layer size");
  }
  for (int s : c.regressor_sizes) {
    if (s <= 0) throw std::invalid_argument("predictor: non-positive layer size");
  }
  if (c.latent <= 0 || c.batch_size <= 0 || c.alpha_t < 0) {
    throw std::invalid_argument("predictor: invalid config");
  }
  if (c.precision != "f32" && c.precision != "f64") {
    throw std::invalid_argument("predictor: precision must be f32 or f64");
  }
}

// Conversions between the float64 master state and a typed network.
template <typename S>
void to_net(const std::vector<LayerState>& src, Mlp<S>& net, std::vector<AdamSlot<S>>& slots) {
  net.layers.resize(src.size());
  slots.resize(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    net.layers[i].weight = src[i].weight.cast<S>();
    net.layers[i].bias = src[i].bias.cast<S>();
    slots[i].mw = src[i].moment1_w.cast<S>();
    slots[i].vw = src[i].moment2_w.cast<S>();
    slots[i].mb = src[i].moment1_b.cast<S>();
    slots[i].vb = src[i].moment2_b.cast<S>();
  }
}

template <typename S>
std::vector<LayerState> from_net(const Mlp<S>& net, const std::vector<AdamSlot<S>>& slots) {
  std::vector<LayerState> out(net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    out[i].weight = net.layers[i].weight.template cast<double>();
    out[i].bias = net.layers[i].bias.template cast<double>();
    out[i].moment1_w = slots[i].mw.template cast<double>();
    out[i].moment2_w = slots[i].vw.template cast<double>();
    out[i].moment1_b = slots[i].mb.template cast<double>();
    out[i].moment2_b = slots[i].vb.template cast<double>();
  }
  return out;
}

RigidTransform decode_raw(const Eigen::Matrix<double, 9, 1>& raw) {
  Rotation6d r6 = raw.head<6>();
  Eigen::Matrix3d rot;
  try {
    rot = rot6d_decode(r6);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("predict: degenerate 6D output (") + e.what() +
                             "); raw = [" + std::to_string(raw(0)) + ", " + std::to_string(raw(1)) +
                             ", " + std::to_string(raw(2)) + ", " + std::to_string(raw(3)) + ", " +
                             std::to_string(raw(4)) + ", " + std::to_string(raw(5)) + "]");
  }
  return {rot, raw.tail<3>()};
}

}  // namespace

Eigen::VectorXd flatten_block(const VertexBlock& block) {
  Eigen::VectorXd x(3 * block.cols());
  for (Eigen::Index c = 0; c < block.cols(); ++c) {
    x.segment<3>(3 * c) = block.col(c).head<3>();
  }
  return x;
}

PredictorWeights init_predictor(const PredictorConfig& config, int point_count,
                                const std::string& mask, const std::string& model_hash) {
  check_config(config);
  if (point_count < 1) throw std::invalid_argument("init_predictor: empty input");
  PredictorWeights w;
  w.config = config;
  w.point_count = point_count;
  w.mask = mask;
  w.model_hash = model_hash;
  w.iteration = 0;

  Rng ext_rng(derive_seed(config.seed, 0xf0));
  Rng reg_rng(derive_seed(config.seed, 0xf1));
  Mlp<double> ext = Mlp<double>::make(extractor_dims(config, 3 * point_count), ext_rng);
  Mlp<double> reg = Mlp<double>::make(regressor_dims(config), reg_rng);
  std::vector<AdamSlot<double>> ext_slots(ext.layers.size()), reg_slots(reg.layers.size());
  for (std::size_t i = 0; i < ext_slots.size(); ++i) {
    ext_slots[i].mw = MatX<double>::Zero(ext.layers[i].weight.rows(), ext.layers[i].weight.cols());
    ext_slots[i].vw = ext_slots[i].mw;
    ext_slots[i].mb = VecX<double>::Zero(ext.layers[i].bias.size());
    ext_slots[i].vb = ext_slots[i].mb;
  }
  for (std::size_t i = 0; i < reg_slots.size(); ++i) {
    reg_slots[i].mw = MatX<double>::Zero(reg.layers[i].weight.rows(), reg.layers[i].weight.cols());
    reg_slots[i].vw = reg_slots[i].mw;
    reg_slots[i].mb = VecX<double>::Zero(reg.layers[i].bias.size());
    reg_slots[i].vb = reg_slots[i].mb;
  }
  w.extractor = from_net(ext, ext_slots);
  w.regressor = from_net(reg, reg_slots);
  return w;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

template <typename S>
struct TypedState {
  PairNet<S> net;
  std::vector<AdamSlot<S>> ext_slots, reg_slots;

  static TypedState from_weights(const PredictorWeights& w) {
    TypedState st;
    to_net(w.extractor, st.net.extractor, st.ext_slots);
    to_net(w.regressor, st.net.regressor, st.reg_slots);
    return st;
  }

  PredictorWeights to_weights(const PredictorWeights& proto, std::int64_t iteration) const {
    PredictorWeights out = proto;
    out.iteration = iteration;
    out.extractor = from_net(net.extractor, ext_slots);
    out.regressor = from_net(net.regressor, reg_slots);
    return out;
  }
};

/// Dataset columns in working precision plus ground-truth transforms.
template <typename S>
struct TrainTensors {
  MatX<S> xs, xt;
  std::vector<Eigen::Matrix3d> gt_rot;
  Eigen::Matrix3Xd gt_t;

  static TrainTensors build(const Dataset& ds) {
    const int n = static_cast<int>(ds.samples.size());
    const int dim = 3 * ds.point_count;
    TrainTensors t;
    t.xs.resize(dim, n);
    t.xt.resize(dim, n);
    t.gt_rot.resize(n);
    t.gt_t.resize(3, n);
    for (int i = 0; i < n; ++i) {
      t.xs.col(i) = flatten_block(ds.samples[i].source).cast<S>();
      t.xt.col(i) = flatten_block(ds.samples[i].target).cast<S>();
      t.gt_rot[i] = ds.samples[i].gt.rotation;
      t.gt_t.col(i) = ds.samples[i].gt.translation;
    }
    return t;
  }
};

/// Mean vertex distance of batch predictions against ground truth on the
/// preprocessed source blocks.
template <typename S>
double validation_md(const PairNet<S>& net, const TrainTensors<S>& val, const Dataset& ds) {
  const int n = static_cast<int>(ds.samples.size());
  if (n == 0) return 0.0;
  double err_sum = 0.0;
  std::int64_t err_count = 0;
  const int chunk = 256;
  for (int begin = 0; begin < n; begin += chunk) {
    const int b = std::min(chunk, n - begin);
    const MatX<S> raw = net.forward(val.xs.middleCols(begin, b), val.xt.middleCols(begin, b));
    for (int i = 0; i < b; ++i) {
      const Eigen::Matrix<double, 9, 1> raw_d = raw.col(i).template cast<double>();
      RigidTransform pred;
      try {
        pred = decode_raw(raw_d);
      } catch (const std::exception&) {
        return std::numeric_limits<double>::quiet_NaN();
      }
      const auto& s = ds.samples[begin + i];
      const Eigen::Matrix3Xd diff =
          (apply(pred, s.source) - apply(s.gt, s.source)).topRows<3>();
      err_sum += diff.colwise().norm().sum();
      err_count += diff.cols();
    }
  }
  return err_sum / static_cast<double>(err_count);
}

template <typename S>
TrainResult train_impl(const PredictorConfig& config, const Dataset& training,
                       const Dataset& validation, const ModelData& psi,
                       const PredictorWeights* resume, const std::string& log_path) {
  if (training.samples.empty()) throw std::invalid_argument("train: empty dataset");

  PredictorWeights start;
  if (resume) {
    start = *resume;
    if (start.point_count != training.point_count) {
      throw std::invalid_argument("train: resume checkpoint has mismatched point count");
    }
  } else {
    start = init_predictor(config, training.point_count, training.mask,
                           model_fingerprint(psi));
  }
  if (training.model_hash != start.model_hash && !training.model_hash.empty()) {
    if (resume) throw std::invalid_argument("train: dataset was built from a different model");
  }

  TypedState<S> state = TypedState<S>::from_weights(start);
  const auto tensors = TrainTensors<S>::build(training);
  const auto val_tensors = TrainTensors<S>::build(validation);

  std::ofstream log_stream;
  if (!log_path.empty()) {
    log_stream.open(log_path, std::ios::trunc);
    if (!log_stream) throw std::runtime_error("train: cannot open log " + log_path);
  }

  TrainResult result;
  const int n = static_cast<int>(training.samples.size());
  const int batch = std::min(config.batch_size, n);
  const S alpha_t = static_cast<S>(config.alpha_t);

  TypedState<S> last_good = state;
  std::int64_t last_good_iter = start.iteration;

  auto grads = state.net.zero_grads();
  typename PairNet<S>::Cache cache;
  MatX<S> batch_s(tensors.xs.rows(), batch), batch_t(tensors.xt.rows(), batch);
  std::vector<int> indices(batch);

  for (std::int64_t iter = start.iteration; iter < config.iterations; ++iter) {
    Rng batch_rng(derive_seed(config.seed ^ 0x5eedb47cULL, static_cast<std::uint64_t>(iter)));
    for (int i = 0; i < batch; ++i) {
      indices[i] = static_cast<int>(batch_rng.index(n));
      batch_s.col(i) = tensors.xs.col(indices[i]);
      batch_t.col(i) = tensors.xt.col(indices[i]);
    }

    const MatX<S> raw = state.net.forward(batch_s, batch_t, &cache);
    MatX<S> grad_raw(9, batch);
    double loss_sum = 0, loss_r_sum = 0, loss_t_sum = 0;
    bool bad = false;
    for (int i = 0; i < batch && !bad; ++i) {
      const Eigen::Matrix<S, 9, 1> raw_i = raw.col(i);
      const auto res = transform_loss<S>(raw_i, tensors.gt_rot[indices[i]].cast<S>(),
                                         tensors.gt_t.col(indices[i]).template cast<S>(), alpha_t);
      bad = !res.ok || !std::isfinite(static_cast<double>(res.total));
      grad_raw.col(i) = res.grad / static_cast<S>(batch);
      loss_sum += res.total;
      loss_r_sum += res.rotation;
      loss_t_sum += res.translation;
    }
    if (bad) {
      result.diverged = true;
      state = last_good;
      result.weights = state.to_weights(start, last_good_iter);
      if (log_stream.is_open()) {
        log_stream << nlohmann::json({{"iteration", iter}, {"event", "divergence"}}).dump()
                   << "\n";
      }
      result.log.push_back({iter, std::numeric_limits<double>::quiet_NaN(), 0, 0, 0});
      return result;
    }

    for (auto& g : grads.extractor) {
      g.weight.setZero();
      g.bias.setZero();
    }
    for (auto& g : grads.regressor) {
      g.weight.setZero();
      g.bias.setZero();
    }
    state.net.backward(cache, grad_raw, grads);

    const std::int64_t t = iter + 1;
    for (std::size_t l = 0; l < state.net.extractor.layers.size(); ++l) {
      adam_update(state.net.extractor.layers[l], grads.extractor[l], state.ext_slots[l],
                  config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps, t);
    }
    for (std::size_t l = 0; l < state.net.regressor.layers.size(); ++l) {
      adam_update(state.net.regressor.layers[l], grads.regressor[l], state.reg_slots[l],
                  config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps, t);
    }

    if (t % config.log_every == 0 || t == config.iterations) {
      TrainLogEntry entry;
      entry.iteration = t;
      entry.loss = loss_sum / batch;
      entry.loss_rotation = loss_r_sum / batch;
      entry.loss_translation = loss_t_sum / batch;
      entry.validation_md = validation_md(state.net, val_tensors, validation);
      result.log.push_back(entry);
      if (log_stream.is_open()) {
        log_stream << nlohmann::json({{"iteration", entry.iteration},
                                      {"loss", entry.loss},
                                      {"loss_rotation", entry.loss_rotation},
                                      {"loss_translation", entry.loss_translation},
                                      {"validation_md", entry.validation_md}})
                          .dump()
                   << "\n";
      }
      last_good = state;
      last_good_iter = t;
    }
  }

  result.weights = state.to_weights(start, config.iterations);
  return result;
}

}  // namespace

TrainResult train(const PredictorConfig& config, const Dataset& training,
                  const Dataset& validation, const ModelData& psi, const PredictorWeights* resume,
                  const std::string& log_path) {
  check_config(config);
  if (config.precision == "f64") {
    return train_impl<double>(config, training, validation, psi, resume, log_path);
  }
  return train_impl<float>(config, training, validation, psi, resume, log_path);
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

struct Predictor::Impl {
  PredictorWeights weights;
  std::variant<PairNet<float>, PairNet<double>> net;

  template <typename S>
  const PairNet<S>& typed() const {
    return std::get<PairNet<S>>(net);
  }

  Eigen::Matrix<double, 9, 1> raw_pair(const VertexBlock& vs, const VertexBlock& vt) const {
    if (3 * vs.cols() != weights.input_dim() || 3 * vt.cols() != weights.input_dim()) {
      throw std::invalid_argument("predict: input block size does not match the checkpoint");
    }
    const Eigen::VectorXd xs = flatten_block(vs);
    const Eigen::VectorXd xt = flatten_block(vt);
    if (std::holds_alternative<PairNet<float>>(net)) {
      return typed<float>()
          .forward(xs.cast<float>(), xt.cast<float>())
          .col(0)
          .cast<double>();
    }
    return typed<double>().forward(xs, xt).col(0);
  }
};

Predictor::Predictor(PredictorWeights weights) : impl_(new Impl) {
  check_config(weights.config);
  impl_->weights = std::move(weights);
  const auto& w = impl_->weights;
  if (w.config.precision == "f64") {
    PairNet<double> net;
    std::vector<AdamSlot<double>> unused_e, unused_r;
    to_net(w.extractor, net.extractor, unused_e);
    to_net(w.regressor, net.regressor, unused_r);
    impl_->net = std::move(net);
  } else {
    PairNet<float> net;
    std::vector<AdamSlot<float>> unused_e, unused_r;
    to_net(w.extractor, net.extractor, unused_e);
    to_net(w.regressor, net.regressor, unused_r);
    impl_->net = std::move(net);
  }
}

Predictor::~Predictor() = default;
Predictor::Predictor(Predictor&&) noexcept = default;
Predictor& Predictor::operator=(Predictor&&) noexcept = default;

const PredictorWeights& Predictor::weights() const { return impl_->weights; }

Eigen::VectorXd Predictor::feature(const VertexBlock& block) const {
  if (3 * block.cols() != impl_->weights.input_dim()) {
    throw std::invalid_argument("feature: input block size does not match the checkpoint");
  }
  const Eigen::VectorXd x = flatten_block(block);
  if (std::holds_alternative<PairNet<float>>(impl_->net)) {
    return impl_->typed<float>().extractor.forward(x.cast<float>()).col(0).cast<double>();
  }
  return impl_->typed<double>().extractor.forward(x).col(0);
}

RigidTransform Predictor::predict(const VertexBlock& source, const VertexBlock& target) const {
  return decode_raw(impl_->raw_pair(source, target));
}

std::pair<RigidTransform, VertexBlock> Predictor::stabilize(const VertexBlock& vs_full,
                                                            const VertexBlock& vt_full,
                                                            const ModelData& psi) const {
  const auto& w = impl_->weights;
  const std::string hash = model_fingerprint(psi);
  if (!w.model_hash.empty() && w.model_hash != hash) {
    throw std::invalid_argument("stabilize: checkpoint was trained for a different model");
  }
  const auto& idx = region_mask(psi, w.mask).indices;
  if (static_cast<int>(idx.size()) != w.point_count) {
    throw std::invalid_argument("stabilize: mask size does not match the checkpoint");
  }
  if (vs_full.cols() != psi.template_vertices.cols() ||
      vt_full.cols() != psi.template_vertices.cols()) {
    throw std::invalid_argument("stabilize: mesh vertex count does not match the model");
  }
  auto [a_s, a_t] = preprocess_transforms(vs_full, vt_full, psi, w.mask);
  const VertexBlock vs = apply(a_s, select_columns(vs_full, idx));
  const VertexBlock vt = apply(a_t, select_columns(vt_full, idx));
  const RigidTransform pred = predict(vs, vt);
  const RigidTransform world = compose(invert(a_t), compose(pred, a_s));
  return {world, apply(world, vs_full)};
}

double transform_loss_value(const RigidTransform& predicted, const RigidTransform& gt,
                            double alpha_t) {
  return (gt.rotation - predicted.rotation).norm() +
         alpha_t * (gt.translation - predicted.translation).norm();
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

void add_layers(Container& c, const std::string& prefix, const std::vector<LayerState>& layers) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string base = prefix + "/" + std::to_string(i) + "/";
    c.add(Tensor::from_matrix(base + "weight", layers[i].weight));
    c.add(Tensor::from_matrix(base + "bias", layers[i].bias));
    c.add(Tensor::from_matrix(base + "moment1_w", layers[i].moment1_w));
    c.add(Tensor::from_matrix(base + "moment2_w", layers[i].moment2_w));
    c.add(Tensor::from_matrix(base + "moment1_b", layers[i].moment1_b));
    c.add(Tensor::from_matrix(base + "moment2_b", layers[i].moment2_b));
  }
}

std::vector<LayerState> read_layers(const Container& c, const std::string& prefix, int count) {
  std::vector<LayerState> layers(count);
  for (int i = 0; i < count; ++i) {
    const std::string base = prefix + "/" + std::to_string(i) + "/";
    layers[i].weight = c.at(base + "weight").to_matrix();
    layers[i].bias = c.at(base + "bias").to_matrix();
    layers[i].moment1_w = c.at(base + "moment1_w").to_matrix();
    layers[i].moment2_w = c.at(base + "moment2_w").to_matrix();
    layers[i].moment1_b = c.at(base + "moment1_b").to_matrix();
    layers[i].moment2_b = c.at(base + "moment2_b").to_matrix();
  }
  return layers;
}

}  // namespace

void save_checkpoint(const PredictorWeights& weights, const std::string& path) {
  Container c;
  c.meta["kind"] = "headstab-checkpoint";
  c.meta["config"] = weights.config;
  c.meta["point_count"] = weights.point_count;
  c.meta["mask"] = weights.mask;
  c.meta["model_hash"] = weights.model_hash;
  c.meta["iteration"] = weights.iteration;
  c.meta["extractor_layers"] = weights.extractor.size();
  c.meta["regressor_layers"] = weights.regressor.size();
  add_layers(c, "extractor", weights.extractor);
  add_layers(c, "regressor", weights.regressor);
  c.write(path);
}

PredictorWeights load_checkpoint(const std::string& path) {
  Container c = Container::read(path);
  if (c.meta.value("kind", "") != "headstab-checkpoint") {
    throw std::runtime_error("not a checkpoint file: " + path);
  }
  PredictorWeights w;
  w.config = c.meta.at("config").get<PredictorConfig>();
  w.point_count = c.meta.at("point_count").get<int>();
  w.mask = c.meta.value("mask", "frontal");
  w.model_hash = c.meta.value("model_hash", "");
  w.iteration = c.meta.at("iteration").get<std::int64_t>();
  w.extractor = read_layers(c, "extractor", c.meta.at("extractor_layers").get<int>());
  w.regressor = read_layers(c, "regressor", c.meta.at("regressor_layers").get<int>());

  // Shape sanity: rebuild the expected dimensions from the config echo.
  const auto ext_dims = extractor_dims(w.config, w.input_dim());
  const auto reg_dims = regressor_dims(w.config);
  auto check = [](const std::vector<LayerState>& layers, const std::vector<int>& dims,
                  const std::string& which) {
    if (layers.size() + 1 != dims.size()) {
      throw std::runtime_error("checkpoint: wrong layer count in " + which);
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].weight.rows() != dims[i + 1] || layers[i].weight.cols() != dims[i]) {
        throw std::runtime_error("checkpoint: layer shape mismatch in " + which);
      }
    }
  };
  check(w.extractor, ext_dims, "extractor");
  check(w.regressor, reg_dims, "regressor");
  return w;
}

}  // namespace headstab
