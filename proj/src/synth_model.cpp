#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "headstab/model.hpp"
#include "headstab/rng.hpp"

namespace headstab {

namespace {

constexpr double kPi = 3.14159265358979323846;

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

/// Raised cosine profile: 1 at 0, exactly 0 for t >= 1.
double raised_cosine(double t) {
  if (t >= 1.0) return 0.0;
  return 0.5 * (1.0 + std::cos(kPi * t));
}

double geodesic(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  return std::acos(std::clamp(a.dot(b), -1.0, 1.0));
}

// ---------------------------------------------------------------------------
// Icosphere
// ---------------------------------------------------------------------------

struct IcoMesh {
  std::vector<Eigen::Vector3d> vertices;  // unit sphere
  std::vector<std::array<int, 3>> faces;
};

IcoMesh icosahedron() {
  const double p = (1.0 + std::sqrt(5.0)) / 2.0;
  IcoMesh m;
  m.vertices = {{-1, p, 0}, {1, p, 0},   {-1, -p, 0}, {1, -p, 0},
                {0, -1, p}, {0, 1, p},   {0, -1, -p}, {0, 1, -p},
                {p, 0, -1}, {p, 0, 1},   {-p, 0, -1}, {-p, 0, 1}};
  for (auto& v : m.vertices) v.normalize();
  m.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
             {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
             {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
             {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  return m;
}

IcoMesh subdivide(const IcoMesh& in) {
  IcoMesh out;
  out.vertices = in.vertices;
  std::map<std::pair<int, int>, int> midpoint;
  auto mid = [&](int a, int b) {
    auto key = std::minmax(a, b);
    auto it = midpoint.find(key);
    if (it != midpoint.end()) return it->second;
    Eigen::Vector3d v = (out.vertices[a] + out.vertices[b]).normalized();
    out.vertices.push_back(v);
    int idx = static_cast<int>(out.vertices.size()) - 1;
    midpoint.emplace(key, idx);
    return idx;
  };
  for (const auto& f : in.faces) {
    int ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
    out.faces.push_back({f[0], ab, ca});
    out.faces.push_back({f[1], bc, ab});
    out.faces.push_back({f[2], ca, bc});
    out.faces.push_back({ab, bc, ca});
  }
  return out;
}

IcoMesh icosphere(int level) {
  IcoMesh m = icosahedron();
  for (int i = 0; i < level; ++i) m = subdivide(m);
  return m;
}

std::vector<std::vector<int>> vertex_neighbors(int n, const std::vector<std::array<int, 3>>& faces) {
  std::vector<std::vector<int>> nb(n);
  auto link = [&](int a, int b) {
    if (std::find(nb[a].begin(), nb[a].end(), b) == nb[a].end()) nb[a].push_back(b);
  };
  for (const auto& f : faces) {
    link(f[0], f[1]); link(f[1], f[0]);
    link(f[1], f[2]); link(f[2], f[1]);
    link(f[2], f[0]); link(f[0], f[2]);
  }
  return nb;
}

// ---------------------------------------------------------------------------
// Head shaping. Coordinates: x right, y up, z toward the face. Millimeters.
// ---------------------------------------------------------------------------

// Ellipsoid semi-axes of the braincase.
constexpr double kAxisX = 72.0, kAxisY = 92.0, kAxisZ = 80.0;
// Neck: below this unit-sphere height the shape tapers into a column.
constexpr double kNeckStart = -0.60;
constexpr double kNeckRadiusScale = 0.55;
constexpr double kNeckDrop = 55.0;

struct Bump {
  Eigen::Vector3d dir;  // unit direction on the sphere
  double radius;        // geodesic support, radians
  double height;        // mm, along the radial direction
};

const std::vector<Bump>& shape_bumps() {
  static const std::vector<Bump> bumps = {
      {Eigen::Vector3d(0, -0.08, 1).normalized(), 0.30, 14.0},   // nose
      {Eigen::Vector3d(0, 0.35, 0.93).normalized(), 0.45, 5.0},  // brow ridge
      {Eigen::Vector3d(0, -0.52, 0.85).normalized(), 0.35, 7.0}, // chin
      {Eigen::Vector3d(0.55, -0.45, 0.60).normalized(), 0.35, 3.0},
      {Eigen::Vector3d(-0.55, -0.45, 0.60).normalized(), 0.35, 3.0},
      {Eigen::Vector3d(0, 0.10, -1).normalized(), 0.50, 4.0},    // occiput
  };
  return bumps;
}

Eigen::Vector3d shape_vertex(const Eigen::Vector3d& u) {
  double r = 1.0;
  for (const auto& b : shape_bumps()) {
    r += b.height / kAxisZ * raised_cosine(geodesic(u, b.dir) / b.radius);
  }
  Eigen::Vector3d p(kAxisX * u.x() * r, kAxisY * u.y() * r, kAxisZ * u.z() * r);
  // Taper the lower cap into a neck column and stretch it downward.
  const double t = smoothstep(kNeckStart, -1.0, u.y());
  if (t > 0.0) {
    const double s = 1.0 + (kNeckRadiusScale - 1.0) * t;
    p.x() *= s;
    p.z() *= s;
    p.y() -= kNeckDrop * t;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Skinning weights
// ---------------------------------------------------------------------------

// Joint pivots in template coordinates (mm).
const Eigen::Vector3d kJointRoot(0, -125, 0);
const Eigen::Vector3d kJointNeck(0, -85, 0);
const Eigen::Vector3d kJointHead(0, -25, 5);
const Eigen::Vector3d kJointJaw(0, -20, 12);

const Eigen::Vector3d kJawWindowDir = Eigen::Vector3d(0, -0.45, 0.72).normalized();
constexpr double kJawSkinRadius = 0.55;

/// Raw (unnormalized) per-joint influences for one vertex. The head carries
/// the remainder, so every vertex outside the other supports is exactly
/// head-bound; the cranium mask and the stable-skull guarantee rely on that.
Eigen::Vector4d raw_influences(const Eigen::Vector3d& u, const Eigen::Vector3d& p) {
  const double y = p.y();
  const double root = 1.0 - smoothstep(-135.0, -112.0, y);

  // Neck influence fades out higher up at the back of the head than at the
  // front: skin near the nape follows the neck well above the chin line.
  const double back = smoothstep(-0.2, 0.6, -u.z());
  const double fade_lo = -75.0 + back * 30.0;   // -75 front, -45 back
  const double fade_hi = -48.0 + back * 43.0;   // -48 front, -5 back
  const double neck = smoothstep(-132.0, -102.0, y) * (1.0 - smoothstep(fade_lo, fade_hi, y));

  const double window = raised_cosine(geodesic(u, kJawWindowDir) / kJawSkinRadius);
  const double jaw = 0.95 * window * (1.0 - smoothstep(-35.0, -15.0, y));

  const double head = std::max(0.12, 1.0 - 0.9 * window) * (1.0 - root) ;
  return {root, neck, head, jaw};
}

// ---------------------------------------------------------------------------
// Expression windows
// ---------------------------------------------------------------------------

struct ExprSite {
  Eigen::Vector3d dir;
  double radius;
  Eigen::Vector3d move;  // unit displacement direction; zero => jaw swing field
  double magnitude;      // mm
};

const std::vector<ExprSite>& expression_sites() {
  auto n = [](double x, double y, double z) { return Eigen::Vector3d(x, y, z).normalized(); };
  static const std::vector<ExprSite> sites = {
      {n(0, -0.50, 0.82), 0.50, Eigen::Vector3d::Zero(), 9.0},      // jaw open (swing field)
      {n(0, -0.35, 0.95), 0.25, n(0, 0, 1), 4.0},                   // lips forward
      {n(0.45, -0.30, 0.80), 0.30, n(0.5, 0.5, 0.2), 5.0},          // smile left
      {n(-0.45, -0.30, 0.80), 0.30, n(-0.5, 0.5, 0.2), 5.0},        // smile right
      {n(0.25, 0.40, 0.88), 0.28, n(0, 1, 0.2), 4.0},               // brow raise left
      {n(-0.25, 0.40, 0.88), 0.28, n(0, 1, 0.2), 4.0},              // brow raise right
      {n(0, 0.35, 0.95), 0.25, n(0, -0.6, 0.4), 3.0},               // brow furrow
      {n(0.60, -0.15, 0.72), 0.30, n(0.8, 0, 0.6), 5.0},            // cheek puff left
      {n(-0.60, -0.15, 0.72), 0.30, n(-0.8, 0, 0.6), 5.0},          // cheek puff right
      {n(0, 0.08, 1.0), 0.20, n(0, 0.5, -0.3), 2.5},                // nose wrinkle
      {n(0, -0.60, 0.75), 0.25, n(0, 0.7, 0.3), 3.0},               // chin raise
      {n(0, -0.75, 0.50), 0.42, n(0, -0.7, 0.55), 5.0},             // under-jaw stretch
      {n(0.35, -0.42, 0.80), 0.22, n(0, -1, 0), 3.5},               // lip corner down left
      {n(-0.35, -0.42, 0.80), 0.22, n(0, -1, 0), 3.5},              // lip corner down right
  };
  return sites;
}

/// Random unit vector roughly orthogonal-jittered around `dir`.
Eigen::Vector3d jitter_direction(const Eigen::Vector3d& dir, double sigma, Rng& rng) {
  Eigen::Vector3d d = dir + sigma * Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
  const double n = d.norm();
  return n > 1e-9 ? Eigen::Vector3d(d / n) : dir;
}

std::vector<int> sorted_mask(std::vector<int> idx) {
  std::sort(idx.begin(), idx.end());
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  return idx;
}

}  // namespace

ModelData synth_model(std::uint64_t seed, int n_vertices_target, int n_identity,
                      int n_expression) {
  if (n_vertices_target < 500) {
    throw std::invalid_argument("synth_model: n_vertices_target must be >= 500");
  }
  if (n_identity < 1 || n_expression < 1) {
    throw std::invalid_argument("synth_model: basis counts must be positive");
  }

  // Smallest subdivided icosahedron with at least the requested vertex count.
  int level = 1;
  while (10 * (1 << (2 * level)) + 2 < n_vertices_target && level < 7) ++level;
  IcoMesh sphere = icosphere(level);
  const int n = static_cast<int>(sphere.vertices.size());

  ModelData psi;
  psi.seed = seed;
  psi.faces = sphere.faces;

  // Template geometry.
  Eigen::Matrix3Xd positions(3, n);
  for (int v = 0; v < n; ++v) positions.col(v) = shape_vertex(sphere.vertices[v]);
  psi.template_vertices = to_homogeneous(positions);

  // Joints and hierarchy: root -> neck -> head -> jaw.
  psi.joints.resize(4, ModelData::kNumJoints);
  psi.joints.col(ModelData::kRoot) << kJointRoot, 1.0;
  psi.joints.col(ModelData::kNeck) << kJointNeck, 1.0;
  psi.joints.col(ModelData::kHead) << kJointHead, 1.0;
  psi.joints.col(ModelData::kJaw) << kJointJaw, 1.0;
  psi.parents = {-1, 0, 1, 2};

  // Skinning weights, normalized per vertex.
  psi.skin_weights.resize(ModelData::kNumJoints, n);
  for (int v = 0; v < n; ++v) {
    Eigen::Vector4d raw = raw_influences(sphere.vertices[v], positions.col(v));
    psi.skin_weights.col(v) = raw / raw.sum();
  }

  // Region masks from the unit-sphere parameterization.
  const Eigen::Vector3d face_dir = Eigen::Vector3d(0, -0.10, 1).normalized();
  const Eigen::Vector3d nose_dir = Eigen::Vector3d(0, -0.08, 1).normalized();
  const double face_cone = 95.0 * kPi / 180.0;
  std::vector<int> full_idx(n), head_idx, face_idx, upper_idx, superhero_idx, neck_idx;
  std::iota(full_idx.begin(), full_idx.end(), 0);
  std::vector<double> frontness(n);
  for (int v = 0; v < n; ++v) {
    const Eigen::Vector3d& u = sphere.vertices[v];
    frontness[v] = u.dot(face_dir);
    const bool in_head = u.y() >= kNeckStart;
    const bool in_face = in_head && geodesic(u, face_dir) < face_cone;
    if (in_head) head_idx.push_back(v); else neck_idx.push_back(v);
    if (in_face) {
      face_idx.push_back(v);
      const bool nose = geodesic(u, nose_dir) < 0.28;
      if (u.y() > 0.18 || nose) upper_idx.push_back(v);
      if (u.y() > -0.08) superhero_idx.push_back(v);
    }
  }

  // Frontal mask: the most front-facing ~37% of all vertices, within the face.
  const int frontal_count = static_cast<int>(std::lround(0.37 * n));
  if (static_cast<int>(face_idx.size()) <= frontal_count) {
    throw std::runtime_error("synth_model: face region too small for the frontal mask");
  }
  std::vector<int> by_frontness = face_idx;
  std::sort(by_frontness.begin(), by_frontness.end(),
            [&](int a, int b) { return frontness[a] > frontness[b]; });
  std::vector<int> frontal_idx(by_frontness.begin(), by_frontness.begin() + frontal_count);

  std::vector<int> face_and_neck_idx = face_idx;
  face_and_neck_idx.insert(face_and_neck_idx.end(), neck_idx.begin(), neck_idx.end());

  // Identity basis: smooth random fields (diffused vertex noise), plus the
  // W-weighted per-joint means as the joint identity basis.
  Rng rng(derive_seed(seed, 0x1d));
  const auto neighbors = vertex_neighbors(n, psi.faces);
  constexpr int kDiffusionRounds = 20;
  constexpr double kIdentityRms = 3.0;  // mm per unit coefficient
  for (int i = 0; i < n_identity; ++i) {
    Eigen::Matrix3Xd field(3, n);
    for (int v = 0; v < n; ++v) {
      field.col(v) = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
    }
    for (int round = 0; round < kDiffusionRounds; ++round) {
      Eigen::Matrix3Xd next(3, n);
      for (int v = 0; v < n; ++v) {
        Eigen::Vector3d acc = field.col(v);
        for (int w : neighbors[v]) acc += field.col(w);
        next.col(v) = acc / (1.0 + static_cast<double>(neighbors[v].size()));
      }
      field = std::move(next);
    }
    const double rms = std::sqrt(field.squaredNorm() / n);
    field *= kIdentityRms / rms;
    Eigen::Matrix4Xd row = Eigen::Matrix4Xd::Zero(4, n);
    row.topRows<3>() = field;
    psi.identity_basis.push_back(std::move(row));
  }

  // Expression basis: one raised-cosine window per row, cycling through the
  // facial sites with per-row jitter. The jaw-open site uses a swing field
  // about the jaw pivot instead of a constant direction.
  const auto& sites = expression_sites();
  for (int i = 0; i < n_expression; ++i) {
    const ExprSite& site = sites[i % sites.size()];
    const Eigen::Vector3d center = jitter_direction(site.dir, 0.05, rng);
    const double radius = site.radius * rng.uniform(0.85, 1.2);
    const double magnitude = site.magnitude * rng.uniform(0.7, 1.3);
    const bool swing = site.move.isZero();
    const Eigen::Vector3d move = swing ? Eigen::Vector3d::Zero()
                                       : jitter_direction(site.move, 0.15, rng);
    Eigen::Matrix4Xd row = Eigen::Matrix4Xd::Zero(4, n);
    for (int v = 0; v < n; ++v) {
      const double w = raised_cosine(geodesic(sphere.vertices[v], center) / radius);
      if (w == 0.0) continue;
      if (swing) {
        // Linearized rotation about the lateral axis through the jaw pivot.
        const Eigen::Vector3d arm = positions.col(v) - kJointJaw;
        Eigen::Vector3d d = Eigen::Vector3d::UnitX().cross(arm);
        const double len = d.norm();
        if (len < 1e-9) continue;
        row.col(v).head<3>() = -w * magnitude * (arm.norm() / 60.0) * (d / len);
      } else {
        row.col(v).head<3>() = w * magnitude * move;
      }
    }
    psi.expression_basis.push_back(std::move(row));
  }

  // Cranium: fully head-bound vertices never touched by any expression row.
  std::vector<char> touched(n, 0);
  for (const auto& row : psi.expression_basis) {
    for (int v = 0; v < n; ++v) {
      if (row.col(v).cwiseAbs().maxCoeff() != 0.0) touched[v] = 1;
    }
  }
  std::vector<int> cranium_idx;
  for (int v = 0; v < n; ++v) {
    bool margin_clear = true;
    for (int w : neighbors[v]) margin_clear = margin_clear && !touched[w];
    if (psi.skin_weights(ModelData::kHead, v) == 1.0 && !touched[v] && margin_clear &&
        sphere.vertices[v].y() > -0.25) {
      cranium_idx.push_back(v);
    }
  }
  if (cranium_idx.size() < 32) throw std::runtime_error("synth_model: cranium mask too small");

  // Joint identity basis: W-weighted mean of each identity row per joint.
  const Eigen::Vector4d weight_sums = psi.skin_weights.rowwise().sum();
  for (const auto& row : psi.identity_basis) {
    Eigen::Matrix4Xd q = Eigen::Matrix4Xd::Zero(4, ModelData::kNumJoints);
    q.topRows<3>() = (row.topRows<3>() * psi.skin_weights.transpose()) *
                     weight_sums.cwiseInverse().asDiagonal();
    psi.joint_basis.push_back(std::move(q));
  }

  // Skull: inward offset of the cranium surface, subsampled, rigidly bound
  // to the head joint.
  std::vector<Eigen::Vector3d> normals(n, Eigen::Vector3d::Zero());
  for (const auto& f : psi.faces) {
    const Eigen::Vector3d a = positions.col(f[0]);
    const Eigen::Vector3d fn =
        (positions.col(f[1]) - a).cross(positions.col(f[2]) - a);
    for (int c : f) normals[c] += fn;
  }
  constexpr double kSkullOffset = 6.0;  // mm inward
  constexpr int kSkullMax = 500;
  const int stride =
      (static_cast<int>(cranium_idx.size()) + kSkullMax - 1) / kSkullMax;
  std::vector<Eigen::Vector3d> skull;
  for (std::size_t i = 0; i < cranium_idx.size(); i += stride) {
    const int v = cranium_idx[i];
    skull.push_back(positions.col(v) - kSkullOffset * normals[v].normalized());
  }
  Eigen::Matrix3Xd skull_mat(3, skull.size());
  for (std::size_t i = 0; i < skull.size(); ++i) skull_mat.col(i) = skull[i];
  psi.skull_points = to_homogeneous(skull_mat);

  psi.masks["full"] = {"full", sorted_mask(full_idx)};
  psi.masks["head"] = {"head", sorted_mask(head_idx)};
  psi.masks["face"] = {"face", sorted_mask(face_idx)};
  psi.masks["frontal"] = {"frontal", sorted_mask(frontal_idx)};
  psi.masks["upper"] = {"upper", sorted_mask(upper_idx)};
  psi.masks["face_and_neck"] = {"face_and_neck", sorted_mask(face_and_neck_idx)};
  psi.masks["superhero"] = {"superhero", sorted_mask(superhero_idx)};
  psi.masks["cranium"] = {"cranium", sorted_mask(cranium_idx)};

  psi.validate();
  return psi;
}

}  // namespace headstab
