#ifndef HEADSTAB_CONTAINER_HPP
#define HEADSTAB_CONTAINER_HPP

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace headstab {

/// One named tensor inside a container file. Data is row-major (C order),
/// little-endian, dtype one of f64, f32, i64, i32.
struct Tensor {
  std::string name;
  std::string dtype;
  std::vector<std::uint64_t> shape;
  std::vector<char> data;

  std::uint64_t element_count() const;
  std::size_t element_size() const;

  static Tensor from_matrix(const std::string& name, const Eigen::MatrixXd& m);
  static Tensor from_matrix_f32(const std::string& name, const Eigen::MatrixXf& m);
  static Tensor from_ints(const std::string& name, const std::vector<std::int64_t>& v);

  Eigen::MatrixXd to_matrix() const;      // rank-2 f64
  Eigen::MatrixXf to_matrix_f32() const;  // rank-2 f32
  std::vector<std::int64_t> to_ints() const;
};

/// Binary container: magic, format version, JSON header (metadata plus the
/// tensor directory) followed by packed tensor data.
struct Container {
  nlohmann::json meta;
  std::vector<Tensor> tensors;

  void add(Tensor t) { tensors.push_back(std::move(t)); }
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const;

  /// Writes atomically (temp file + rename).
  void write(const std::string& path) const;
  static Container read(const std::string& path);
};

/// Writes `bytes` to `path` via a temp file and rename, so partial outputs
/// are never left behind.
void atomic_write_file(const std::string& path, const std::string& bytes);

/// SHA-256-free stable content hash (FNV-1a over bytes), hex string.
/// Used to fingerprint inputs in output manifests.
std::string content_hash(const std::string& bytes);
std::string file_hash(const std::string& path);

}  // namespace headstab

#endif  // HEADSTAB_CONTAINER_HPP
