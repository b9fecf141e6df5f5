#include "headstab/container.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace headstab {

namespace {

constexpr char kMagic[4] = {'H', 'S', 'T', 'B'};
constexpr std::uint32_t kFormatVersion = 1;

std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "f64" || dtype == "i64") return 8;
  if (dtype == "f32" || dtype == "i32") return 4;
  throw std::runtime_error("container: unknown dtype " + dtype);
}

}  // namespace

std::uint64_t Tensor::element_count() const {
  std::uint64_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

std::size_t Tensor::element_size() const { return dtype_size(dtype); }

Tensor Tensor::from_matrix(const std::string& name, const Eigen::MatrixXd& m) {
  Tensor t;
  t.name = name;
  t.dtype = "f64";
  t.shape = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
  t.data.resize(sizeof(double) * rm.size());
  std::memcpy(t.data.data(), rm.data(), t.data.size());
  return t;
}

Tensor Tensor::from_matrix_f32(const std::string& name, const Eigen::MatrixXf& m) {
  Tensor t;
  t.name = name;
  t.dtype = "f32";
  t.shape = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
  t.data.resize(sizeof(float) * rm.size());
  std::memcpy(t.data.data(), rm.data(), t.data.size());
  return t;
}

Tensor Tensor::from_ints(const std::string& name, const std::vector<std::int64_t>& v) {
  Tensor t;
  t.name = name;
  t.dtype = "i64";
  t.shape = {v.size()};
  t.data.resize(sizeof(std::int64_t) * v.size());
  std::memcpy(t.data.data(), v.data(), t.data.size());
  return t;
}

Eigen::MatrixXd Tensor::to_matrix() const {
  if (dtype != "f64" || shape.size() != 2) throw std::runtime_error("tensor " + name + ": not a f64 matrix");
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(shape[0], shape[1]);
  std::memcpy(rm.data(), data.data(), data.size());
  return rm;
}

Eigen::MatrixXf Tensor::to_matrix_f32() const {
  if (dtype != "f32" || shape.size() != 2) throw std::runtime_error("tensor " + name + ": not a f32 matrix");
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(shape[0], shape[1]);
  std::memcpy(rm.data(), data.data(), data.size());
  return rm;
}

std::vector<std::int64_t> Tensor::to_ints() const {
  if (dtype != "i64") throw std::runtime_error("tensor " + name + ": not i64");
  std::vector<std::int64_t> v(element_count());
  std::memcpy(v.data(), data.data(), data.size());
  return v;
}

const Tensor& Container::at(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw std::runtime_error("container: missing tensor " + name);
}

bool Container::has(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

void Container::write(const std::string& path) const {
  nlohmann::json header;
  header["format_version"] = kFormatVersion;
  header["meta"] = meta;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : tensors) {
    header["tensors"].push_back({{"name", t.name},
                                 {"dtype", t.dtype},
                                 {"shape", t.shape},
                                 {"offset", offset},
                                 {"bytes", t.data.size()}});
    offset += t.data.size();
  }
  const std::string hjson = header.dump();

  std::string bytes;
  bytes.reserve(16 + hjson.size() + offset);
  bytes.append(kMagic, 4);
  const std::uint32_t ver = kFormatVersion;
  bytes.append(reinterpret_cast<const char*>(&ver), 4);
  const std::uint64_t hlen = hjson.size();
  bytes.append(reinterpret_cast<const char*>(&hlen), 8);
  bytes.append(hjson);
  for (const auto& t : tensors) bytes.append(t.data.data(), t.data.size());
  atomic_write_file(path, bytes);
}

Container Container::read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("container: cannot open " + path);
  char magic[4];
  std::uint32_t version = 0;
  std::uint64_t hlen = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&hlen), 8);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("container: bad magic in " + path);
  }
  if (version != kFormatVersion) {
    throw std::runtime_error("container: unsupported format version in " + path);
  }
  std::string hjson(hlen, '\0');
  in.read(hjson.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw std::runtime_error("container: truncated header in " + path);
  nlohmann::json header = nlohmann::json::parse(hjson);

  Container c;
  c.meta = header.value("meta", nlohmann::json::object());
  for (const auto& e : header["tensors"]) {
    Tensor t;
    t.name = e.at("name").get<std::string>();
    t.dtype = e.at("dtype").get<std::string>();
    t.shape = e.at("shape").get<std::vector<std::uint64_t>>();
    const std::uint64_t nbytes = e.at("bytes").get<std::uint64_t>();
    if (nbytes != t.element_count() * t.element_size()) {
      throw std::runtime_error("container: inconsistent tensor size for " + t.name);
    }
    t.data.resize(nbytes);
    in.read(t.data.data(), static_cast<std::streamsize>(nbytes));
    if (!in) throw std::runtime_error("container: truncated data in " + path);
    c.tensors.push_back(std::move(t));
  }
  return c;
}

void atomic_write_file(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw std::runtime_error("cannot rename " + tmp + " to " + path);
  }
}

std::string content_hash(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("file_hash: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return content_hash(bytes);
}

}  // namespace headstab
