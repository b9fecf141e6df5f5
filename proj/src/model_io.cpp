#include <cstring>
#include <stdexcept>

#include "headstab/container.hpp"
#include "headstab/model.hpp"

namespace headstab {

namespace {

Tensor basis_tensor(const std::string& name, const std::vector<Eigen::Matrix4Xd>& rows) {
  Tensor t;
  t.name = name;
  t.dtype = "f64";
  const std::uint64_t count = rows.size();
  const std::uint64_t cols = rows.empty() ? 0 : static_cast<std::uint64_t>(rows[0].cols());
  t.shape = {count, 4, cols};
  t.data.resize(sizeof(double) * count * 4 * cols);
  auto* out = reinterpret_cast<double*>(t.data.data());
  for (const auto& row : rows) {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = row;
    std::memcpy(out, rm.data(), sizeof(double) * rm.size());
    out += rm.size();
  }
  return t;
}

std::vector<Eigen::Matrix4Xd> basis_from_tensor(const Tensor& t) {
  if (t.dtype != "f64" || t.shape.size() != 3 || t.shape[1] != 4) {
    throw std::runtime_error("model file: bad basis tensor " + t.name);
  }
  std::vector<Eigen::Matrix4Xd> rows(t.shape[0]);
  const auto* in = reinterpret_cast<const double*>(t.data.data());
  for (auto& row : rows) {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(4, t.shape[2]);
    std::memcpy(rm.data(), in, sizeof(double) * rm.size());
    in += rm.size();
    row = rm;
  }
  return rows;
}

}  // namespace

void save_model(const ModelData& psi, const std::string& path) {
  Container c;
  c.meta["kind"] = "headstab-model";
  c.meta["units"] = "mm";
  c.meta["seed"] = psi.seed;
  c.meta["vertex_count"] = psi.vertex_count();
  c.meta["joint_count"] = ModelData::kNumJoints;
  c.meta["parents"] = psi.parents;
  nlohmann::json masks = nlohmann::json::object();
  for (const auto& [name, mask] : psi.masks) masks[name] = mask.indices;
  c.meta["masks"] = masks;

  c.add(Tensor::from_matrix("template", psi.template_vertices));
  c.add(Tensor::from_matrix("joints", psi.joints));
  c.add(basis_tensor("identity_basis", psi.identity_basis));
  c.add(basis_tensor("expression_basis", psi.expression_basis));
  c.add(basis_tensor("joint_basis", psi.joint_basis));
  c.add(Tensor::from_matrix("skin_weights", psi.skin_weights));
  c.add(Tensor::from_matrix("skull_points", psi.skull_points));
  std::vector<std::int64_t> flat_faces;
  flat_faces.reserve(psi.faces.size() * 3);
  for (const auto& f : psi.faces) {
    flat_faces.push_back(f[0]);
    flat_faces.push_back(f[1]);
    flat_faces.push_back(f[2]);
  }
  c.add(Tensor::from_ints("faces", flat_faces));
  c.write(path);
}

ModelData load_model(const std::string& path) {
  Container c = Container::read(path);
  if (c.meta.value("kind", "") != "headstab-model") {
    throw std::runtime_error("not a model file: " + path);
  }
  ModelData psi;
  psi.seed = c.meta.value("seed", 0ULL);
  psi.parents = c.meta.at("parents").get<std::vector<int>>();
  psi.template_vertices = c.at("template").to_matrix();
  psi.joints = c.at("joints").to_matrix();
  psi.identity_basis = basis_from_tensor(c.at("identity_basis"));
  psi.expression_basis = basis_from_tensor(c.at("expression_basis"));
  psi.joint_basis = basis_from_tensor(c.at("joint_basis"));
  psi.skin_weights = c.at("skin_weights").to_matrix();
  psi.skull_points = c.at("skull_points").to_matrix();
  const auto flat = c.at("faces").to_ints();
  psi.faces.resize(flat.size() / 3);
  for (std::size_t i = 0; i < psi.faces.size(); ++i) {
    psi.faces[i] = {static_cast<int>(flat[3 * i]), static_cast<int>(flat[3 * i + 1]),
                    static_cast<int>(flat[3 * i + 2])};
  }
  for (auto it = c.meta.at("masks").begin(); it != c.meta.at("masks").end(); ++it) {
    psi.masks[it.key()] = {it.key(), it.value().get<std::vector<int>>()};
  }
  psi.validate();
  return psi;
}

std::string model_fingerprint(const ModelData& psi) {
  std::string bytes;
  bytes.reserve(sizeof(double) * psi.template_vertices.size() + 64);
  auto add_matrix = [&](const Eigen::MatrixXd& m) {
    bytes.append(reinterpret_cast<const char*>(m.data()), sizeof(double) * m.size());
  };
  add_matrix(psi.template_vertices);
  add_matrix(psi.joints);
  add_matrix(psi.skin_weights);
  add_matrix(psi.skull_points);
  bytes.append(reinterpret_cast<const char*>(&psi.seed), sizeof(psi.seed));
  const std::uint64_t dims[3] = {static_cast<std::uint64_t>(psi.vertex_count()),
                                 static_cast<std::uint64_t>(psi.identity_count()),
                                 static_cast<std::uint64_t>(psi.expression_count())};
  bytes.append(reinterpret_cast<const char*>(dims), sizeof(dims));
  return content_hash(bytes);
}

}  // namespace headstab
