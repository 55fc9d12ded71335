#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vmark/common.hpp"

namespace vmark {

using FaceMatrix = Eigen::Matrix<std::uint32_t, Eigen::Dynamic, 3>;

struct MeshSample {
  Eigen::MatrixX3d vertices;  // M x 3, millimetres
};

// A corpus of same-topology meshes. The template is the rest-pose mesh used
// for symmetry analysis; by the file-format convention it equals samples[0].
struct MeshDataset {
  std::vector<MeshSample> samples;
  FaceMatrix faces;
  MeshSample template_mesh;
  std::optional<Eigen::MatrixXd> joint_regressor;  // M x J, columns sum to 1

  int n_samples() const { return static_cast<int>(samples.size()); }
  int n_vertices() const { return static_cast<int>(template_mesh.vertices.rows()); }
  int n_faces() const { return static_cast<int>(faces.rows()); }
  int n_joints() const {
    return joint_regressor ? static_cast<int>(joint_regressor->cols()) : 0;
  }

  void validate() const {
    if (samples.empty()) throw param_error("dataset: no samples");
    const Eigen::Index m = template_mesh.vertices.rows();
    if (m < 1) throw param_error("dataset: empty template");
    for (std::size_t n = 0; n < samples.size(); ++n) {
      if (samples[n].vertices.rows() != m)
        throw param_error("dataset: sample " + std::to_string(n) + " has wrong vertex count");
      if (!samples[n].vertices.allFinite())
        throw param_error("dataset: sample " + std::to_string(n) + " has non-finite vertices");
    }
    for (Eigen::Index f = 0; f < faces.rows(); ++f) {
      const std::uint32_t a = faces(f, 0), b = faces(f, 1), c = faces(f, 2);
      if (a >= static_cast<std::uint32_t>(m) || b >= static_cast<std::uint32_t>(m) ||
          c >= static_cast<std::uint32_t>(m))
        throw param_error("dataset: face " + std::to_string(f) + " references missing vertex");
      if (a == b || b == c || a == c)
        throw param_error("dataset: face " + std::to_string(f) + " is degenerate");
    }
    if (joint_regressor) {
      if (joint_regressor->rows() != m) throw param_error("dataset: regressor row count != M");
      if (joint_regressor->cols() < 1) throw param_error("dataset: regressor has no joints");
      for (Eigen::Index j = 0; j < joint_regressor->cols(); ++j) {
        if (joint_regressor->col(j).minCoeff() < 0.0)
          throw param_error("dataset: regressor column " + std::to_string(j) + " has negative weight");
        if (std::abs(joint_regressor->col(j).sum() - 1.0) > 1e-6)
          throw param_error("dataset: regressor column " + std::to_string(j) + " does not sum to 1");
      }
    }
  }
};

// Vertex trajectories as columns: X[3n + c, i] = samples[n].vertices(i, c).
// Column i stacks vertex i's positions over all samples.
struct DataMatrix {
  Eigen::MatrixXd X;  // 3N x M
  int n_samples = 0;
  int n_vertices = 0;
};

inline DataMatrix assemble_data_matrix(const MeshDataset& d) {
  d.validate();
  const int N = d.n_samples();
  const int M = d.n_vertices();
  DataMatrix out;
  out.n_samples = N;
  out.n_vertices = M;
  out.X.resize(3 * N, M);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < 3; ++c) out.X.row(3 * n + c) = d.samples[static_cast<std::size_t>(n)].vertices.col(c).transpose();
  return out;
}

// Mirror structure of the template about the sagittal plane x = 0.
// pairs hold (positive-x vertex, negative-x vertex); vertices with
// |x| <= tolerance are midline; non-midline vertices without an acceptable
// partner are recorded as warnings and treated as midline.
struct SymmetricPairing {
  std::vector<std::pair<int, int>> pairs;
  std::vector<int> midline;
  std::vector<int> unmatched_warnings;

  std::vector<int> partner_map;    // -1 when no partner
  std::vector<std::uint8_t> midline_mask;

  int partner_of(int v) const { return partner_map[static_cast<std::size_t>(v)]; }
  bool is_midline(int v) const { return midline_mask[static_cast<std::size_t>(v)] != 0; }
};

inline SymmetricPairing compute_symmetric_pairs(const MeshSample& tmpl, double tolerance_mm = 1.0) {
  if (tolerance_mm <= 0.0) throw param_error("compute_symmetric_pairs: tolerance must be positive");
  const Eigen::Index m = tmpl.vertices.rows();
  if (m < 1) throw param_error("compute_symmetric_pairs: empty template");

  SymmetricPairing out;
  out.partner_map.assign(static_cast<std::size_t>(m), -1);
  out.midline_mask.assign(static_cast<std::size_t>(m), 0);

  std::vector<std::uint8_t> matched(static_cast<std::size_t>(m), 0);
  for (Eigen::Index i = 0; i < m; ++i) {
    if (std::abs(tmpl.vertices(i, 0)) <= tolerance_mm) {
      out.midline.push_back(static_cast<int>(i));
      out.midline_mask[static_cast<std::size_t>(i)] = 1;
      matched[static_cast<std::size_t>(i)] = 1;
    }
  }

  // mirror-match cost: |x_i + x_j| + |y_i - y_j| + |z_i - z_j|
  for (Eigen::Index i = 0; i < m; ++i) {
    if (matched[static_cast<std::size_t>(i)]) continue;
    Eigen::Index best = -1;
    double best_cost = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < m; ++j) {
      if (j == i || matched[static_cast<std::size_t>(j)]) continue;
      if (out.midline_mask[static_cast<std::size_t>(j)]) continue;
      const double cost = std::abs(tmpl.vertices(i, 0) + tmpl.vertices(j, 0)) +
                          std::abs(tmpl.vertices(i, 1) - tmpl.vertices(j, 1)) +
                          std::abs(tmpl.vertices(i, 2) - tmpl.vertices(j, 2));
      if (cost < best_cost) {
        best_cost = cost;
        best = j;
      }
    }
    if (best >= 0 && best_cost <= 3.0 * tolerance_mm) {
      matched[static_cast<std::size_t>(i)] = 1;
      matched[static_cast<std::size_t>(best)] = 1;
      const int pos = tmpl.vertices(i, 0) >= tmpl.vertices(best, 0) ? static_cast<int>(i) : static_cast<int>(best);
      const int neg = pos == static_cast<int>(i) ? static_cast<int>(best) : static_cast<int>(i);
      out.pairs.emplace_back(pos, neg);
      out.partner_map[static_cast<std::size_t>(pos)] = neg;
      out.partner_map[static_cast<std::size_t>(neg)] = pos;
    } else {
      matched[static_cast<std::size_t>(i)] = 1;
      out.midline.push_back(static_cast<int>(i));
      out.midline_mask[static_cast<std::size_t>(i)] = 1;
      out.unmatched_warnings.push_back(static_cast<int>(i));
    }
  }
  std::sort(out.midline.begin(), out.midline.end());
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic articulated figure. Ten capped-tube parts on a stick armature;
// deformation is exactly linear in the latents (a global scale field plus
// per-part small-angle rotation fields about the part pivots), which keeps
// the assembled data matrix at numerical rank <= 3p + 3.
// ---------------------------------------------------------------------------

struct SynthConfig {
  int m_target = 500;   // approximate vertex budget, >= 50
  int n_samples = 200;  // includes the rest-pose sample 0
  int latent_dim = 16;  // deformation fields used, in [1, 27]
  double noise_mm = 0.5;
  // correlation between the coefficients of a left field and its mirror,
  // in [0, 1]; paired limbs mostly move together, like real motion
  double bilateral_rho = 0.8;
};

namespace synth {

struct DeformationModel {
  MeshSample rest;
  FaceMatrix faces;
  std::vector<Eigen::MatrixX3d> fields;  // per-latent displacement, amplitude folded in
  Eigen::MatrixX3d joints;               // armature joints, J x 3
  // latent indices (left, right) of field pairs that are exact mirror images;
  // only pairs with both halves inside latent_dim appear here
  std::vector<std::pair<int, int>> mirror_pairs;
};

namespace detail {

struct TubeSpec {
  Eigen::Vector3d p0, p1;
  double radius;
  Eigen::Vector3d pivot;
  bool mirrored;  // built as the x-mirror of the previous spec
  double length() const { return (p1 - p0).norm(); }
};

inline std::vector<TubeSpec> armature() {
  const Eigen::Vector3d none(0, 0, 0);
  std::vector<TubeSpec> parts;
  auto add = [&](Eigen::Vector3d p0, Eigen::Vector3d p1, double r, Eigen::Vector3d pivot) {
    parts.push_back({p0, p1, r, pivot, false});
  };
  auto mirror_last = [&]() {
    TubeSpec t = parts.back();
    t.p0.x() = -t.p0.x();
    t.p1.x() = -t.p1.x();
    t.pivot.x() = -t.pivot.x();
    t.mirrored = true;
    parts.push_back(t);
  };
  add({0, -60, 0}, {0, 450, 0}, 140, {0, 0, 0});        // torso
  add({0, 600, 0}, {0, 830, 0}, 80, {0, 600, 0});       // head
  add({180, 560, 0}, {460, 560, 0}, 45, {180, 560, 0}); // upper arm L
  mirror_last();
  add({90, -40, 0}, {100, -480, 0}, 70, {90, -40, 0});  // thigh L
  mirror_last();
  add({460, 560, 0}, {740, 560, 0}, 35, {460, 560, 0}); // forearm L
  mirror_last();
  add({100, -480, 0}, {110, -920, 0}, 45, {100, -480, 0}); // shin L
  mirror_last();
  return parts;
}

// rotation-field table: (part index, axis before mirroring, amplitude in rad)
struct FieldSpec {
  int part;
  Eigen::Vector3d axis;
  double amp;
};

inline std::vector<FieldSpec> field_table() {
  const Eigen::Vector3d ex(1, 0, 0), ey(0, 1, 0), ez(0, 0, 1);
  std::vector<FieldSpec> f;
  auto lr = [&](int left_part, Eigen::Vector3d axis, double amp) {
    f.push_back({left_part, axis, amp});
    // axial vectors mirror as (x, -y, -z) so the right field is the exact
    // mirror image of the left one
    f.push_back({left_part + 1, {axis.x(), -axis.y(), -axis.z()}, amp});
  };
  f.push_back({0, ex, 0.12});  // torso lean
  f.push_back({1, ex, 0.15});  // head nod
  lr(2, ez, 0.30);             // arm swing
  lr(4, ex, 0.30);             // leg kick
  lr(6, ez, 0.25);             // forearm
  lr(8, ex, 0.25);             // shin
  f.push_back({0, ey, 0.10});  // torso twist
  f.push_back({1, ey, 0.15});  // head turn
  lr(2, ey, 0.20);
  lr(4, ez, 0.18);
  lr(6, ey, 0.18);
  lr(8, ez, 0.15);
  f.push_back({0, ez, 0.10});  // torso side lean
  f.push_back({1, ez, 0.12});
  lr(2, ex, 0.15);
  lr(4, ey, 0.12);
  return f;  // 26 rotation fields; field 0 overall is the scale field
}

inline void append_tube(const TubeSpec& spec, int rings, int ring_verts,
                        std::vector<Eigen::Vector3d>& verts,
                        std::vector<std::array<std::uint32_t, 3>>& faces) {
  const Eigen::Vector3d axis = (spec.p1 - spec.p0).normalized();
  Eigen::Vector3d ref = std::abs(axis.y()) < 0.9 ? Eigen::Vector3d(0, 1, 0) : Eigen::Vector3d(0, 0, 1);
  Eigen::Vector3d u = ref.cross(axis).normalized();
  Eigen::Vector3d v = axis.cross(u);
  // parts whose axis lies in the sagittal plane get rings aligned so their
  // lateral extremes sit exactly on x = 0, where markers need no mirror twin;
  // lateral parts keep the half-step offset that avoids the plane
  const bool on_midline = spec.p0.x() == 0.0 && spec.p1.x() == 0.0;
  const double phase0 = on_midline ? 0.0 : 0.5;
  const std::uint32_t base = static_cast<std::uint32_t>(verts.size());
  for (int r = 0; r < rings; ++r) {
    const double t = (r + 0.5) / rings;
    const Eigen::Vector3d c = spec.p0 + t * (spec.p1 - spec.p0);
    // real limbs are neither round nor straight: an elliptic, tapering cross
    // section gives each ring a few well-separated extreme vertices instead
    // of a rotational near-tie, so data extremes land on mirror-matching
    // sites on the two sides. Midline parts are flattened laterally so their
    // major extremes are the on-plane vertices; either scaling keeps them
    // exactly mirror symmetric.
    constexpr double flatten = 0.6;
    const double fl_u = on_midline ? flatten : 1.0;
    const double fl_v = on_midline ? 1.0 : flatten;
    const double rad = spec.radius * (1.15 - 0.3 * t);
    for (int k = 0; k < ring_verts; ++k) {
      constexpr double two_pi = 6.283185307179586476925286766559;
      const double phi = two_pi * (k + phase0) / ring_verts;
      verts.push_back(c + rad * (fl_u * std::cos(phi) * u + fl_v * std::sin(phi) * v));
    }
  }
  const std::uint32_t cap0 = static_cast<std::uint32_t>(verts.size());
  verts.push_back(spec.p0);
  const std::uint32_t cap1 = static_cast<std::uint32_t>(verts.size());
  verts.push_back(spec.p1);

  auto ring_vertex = [&](int r, int k) {
    return base + static_cast<std::uint32_t>(r * ring_verts + (k % ring_verts));
  };
  for (int r = 0; r + 1 < rings; ++r) {
    for (int k = 0; k < ring_verts; ++k) {
      faces.push_back({ring_vertex(r, k), ring_vertex(r, k + 1), ring_vertex(r + 1, k + 1)});
      faces.push_back({ring_vertex(r, k), ring_vertex(r + 1, k + 1), ring_vertex(r + 1, k)});
    }
  }
  for (int k = 0; k < ring_verts; ++k) {
    faces.push_back({cap0, ring_vertex(0, k + 1), ring_vertex(0, k)});
    faces.push_back({cap1, ring_vertex(rings - 1, k), ring_vertex(rings - 1, k + 1)});
  }
}

}  // namespace detail

inline DeformationModel build_model(int m_target, int latent_dim) {
  if (m_target < 50) throw param_error("synthetic dataset: m_target must be >= 50");
  const auto table = detail::field_table();
  const int max_latents = 1 + static_cast<int>(table.size());
  if (latent_dim < 1 || latent_dim > max_latents)
    throw param_error("synthetic dataset: latent_dim must be in [1, " + std::to_string(max_latents) + "]");

  auto parts = detail::armature();
  const int P = static_cast<int>(parts.size());

  // ring tessellation: multiples of 4 keep every ring vertex off x = 0
  int ring_verts = 4;
  if (m_target >= 260) ring_verts = 8;
  if (m_target >= 1600) ring_verts = 12;
  if (m_target >= 4200) ring_verts = 16;
  const int total_rings = std::max(P, (m_target - 2 * P) / ring_verts);

  double total_len = 0.0;
  for (const auto& p : parts) total_len += p.length();
  std::vector<int> rings(static_cast<std::size_t>(P), 1);
  int assigned = P;
  std::vector<double> frac(static_cast<std::size_t>(P));
  for (int p = 0; p < P; ++p) {
    const double want = total_rings * parts[static_cast<std::size_t>(p)].length() / total_len;
    const int extra = std::max(0, static_cast<int>(want) - 1);
    rings[static_cast<std::size_t>(p)] += extra;
    assigned += extra;
    frac[static_cast<std::size_t>(p)] = want - static_cast<int>(want);
  }
  while (assigned < total_rings) {
    int best = 0;
    for (int p = 1; p < P; ++p)
      if (frac[static_cast<std::size_t>(p)] > frac[static_cast<std::size_t>(best)]) best = p;
    rings[static_cast<std::size_t>(best)] += 1;
    frac[static_cast<std::size_t>(best)] = -1.0;
    ++assigned;
  }

  std::vector<Eigen::Vector3d> verts;
  std::vector<std::array<std::uint32_t, 3>> faces;
  std::vector<int> part_of;  // per-vertex part id
  for (int p = 0; p < P; ++p) {
    const auto& spec = parts[static_cast<std::size_t>(p)];
    const std::size_t before = verts.size();
    if (spec.mirrored) {
      // rebuild the previous (left) part and reflect it so the two sides are
      // exact mirror images with matching topology
      std::vector<Eigen::Vector3d> lv;
      std::vector<std::array<std::uint32_t, 3>> lf;
      detail::TubeSpec left = spec;
      left.p0.x() = -left.p0.x();
      left.p1.x() = -left.p1.x();
      detail::append_tube(left, rings[static_cast<std::size_t>(p)], ring_verts, lv, lf);
      const std::uint32_t base = static_cast<std::uint32_t>(verts.size());
      for (auto& q : lv) verts.emplace_back(-q.x(), q.y(), q.z());
      for (auto& f : lf) faces.push_back({base + f[0], base + f[2], base + f[1]});
    } else {
      detail::append_tube(spec, rings[static_cast<std::size_t>(p)], ring_verts, verts, faces);
    }
    part_of.resize(verts.size(), p);
    (void)before;
  }

  DeformationModel model;
  const int M = static_cast<int>(verts.size());
  model.rest.vertices.resize(M, 3);
  for (int i = 0; i < M; ++i) model.rest.vertices.row(i) = verts[static_cast<std::size_t>(i)].transpose();
  model.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
  for (std::size_t f = 0; f < faces.size(); ++f)
    for (int c = 0; c < 3; ++c) model.faces(static_cast<Eigen::Index>(f), c) = faces[f][static_cast<std::size_t>(c)];

  // field 0: uniform scale about the root (displacement equals position)
  model.fields.reserve(static_cast<std::size_t>(latent_dim));
  {
    Eigen::MatrixX3d f = 0.06 * model.rest.vertices;
    model.fields.push_back(std::move(f));
  }
  for (int k = 1; k < latent_dim; ++k) {
    const auto& fs = table[static_cast<std::size_t>(k - 1)];
    const auto& spec = parts[static_cast<std::size_t>(fs.part)];
    Eigen::MatrixX3d f = Eigen::MatrixX3d::Zero(M, 3);
    for (int i = 0; i < M; ++i) {
      if (part_of[static_cast<std::size_t>(i)] != fs.part) continue;
      const Eigen::Vector3d r = verts[static_cast<std::size_t>(i)] - spec.pivot;
      f.row(i) = (fs.amp * fs.axis.cross(r)).transpose();
    }
    model.fields.push_back(std::move(f));
  }

  // a table entry followed by the same field on the mirrored partner part is
  // the left half of a mirror pair; the table builds them adjacently
  for (int j = 0; j + 2 < latent_dim; ++j) {
    const auto& a = table[static_cast<std::size_t>(j)];
    const auto& b = table[static_cast<std::size_t>(j + 1)];
    if (b.part == a.part + 1 && parts[static_cast<std::size_t>(b.part)].mirrored &&
        !parts[static_cast<std::size_t>(a.part)].mirrored)
      model.mirror_pairs.emplace_back(j + 1, j + 2);
  }

  // armature joints for the regressor: part endpoints, deduplicated
  std::vector<Eigen::Vector3d> joints;
  auto add_joint = [&](const Eigen::Vector3d& j) {
    for (const auto& q : joints)
      if ((q - j).norm() < 1e-9) return;
    joints.push_back(j);
  };
  for (const auto& p : parts) {
    add_joint(p.p0);
    add_joint(p.p1);
  }
  model.joints.resize(static_cast<Eigen::Index>(joints.size()), 3);
  for (std::size_t j = 0; j < joints.size(); ++j) model.joints.row(static_cast<Eigen::Index>(j)) = joints[j].transpose();
  return model;
}

inline Eigen::MatrixX3d pose(const DeformationModel& model, const Eigen::VectorXd& latent) {
  if (latent.size() != static_cast<Eigen::Index>(model.fields.size()))
    throw param_error("pose: latent dimension mismatch");
  Eigen::MatrixX3d v = model.rest.vertices;
  for (Eigen::Index k = 0; k < latent.size(); ++k)
    v += latent[k] * model.fields[static_cast<std::size_t>(k)];
  return v;
}

inline Eigen::MatrixXd nearest_ring_regressor(const DeformationModel& model, int per_joint) {
  const int M = static_cast<int>(model.rest.vertices.rows());
  const int J = static_cast<int>(model.joints.rows());
  Eigen::MatrixXd reg = Eigen::MatrixXd::Zero(M, J);
  for (int j = 0; j < J; ++j) {
    std::vector<std::pair<double, int>> dist(static_cast<std::size_t>(M));
    for (int i = 0; i < M; ++i)
      dist[static_cast<std::size_t>(i)] = {
          (model.rest.vertices.row(i).transpose() - model.joints.row(j).transpose()).norm(), i};
    std::sort(dist.begin(), dist.end());
    const int k = std::min(per_joint, M);
    for (int a = 0; a < k; ++a) reg(dist[static_cast<std::size_t>(a)].second, j) = 1.0 / k;
  }
  return reg;
}

}  // namespace synth

namespace detail {
inline double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }
}

namespace detail {

template <class T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is, const char* record) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw format_error(std::string("vmds: truncated while reading ") + record);
  return v;
}

}  // namespace detail

// VMDS container: "VMDS" magic, u32 version/N/M/F/J header, float32 vertex
// payload (sample-major, vertex-major, xyz), u32 face triples, float64
// joint-regressor rows. Little-endian throughout; this code assumes a
// little-endian host.
inline void save_dataset(const MeshDataset& d, const std::string& path) {
  d.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("vmds: cannot open for writing: " + path);
  os.write("VMDS", 4);
  detail::write_pod<std::uint32_t>(os, 1u);
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(d.n_samples()));
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(d.n_vertices()));
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(d.n_faces()));
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(d.n_joints()));
  for (const auto& s : d.samples)
    for (Eigen::Index i = 0; i < s.vertices.rows(); ++i)
      for (int c = 0; c < 3; ++c) detail::write_pod<float>(os, static_cast<float>(s.vertices(i, c)));
  for (Eigen::Index f = 0; f < d.faces.rows(); ++f)
    for (int c = 0; c < 3; ++c) detail::write_pod<std::uint32_t>(os, d.faces(f, c));
  if (d.joint_regressor)
    for (Eigen::Index i = 0; i < d.joint_regressor->rows(); ++i)
      for (Eigen::Index j = 0; j < d.joint_regressor->cols(); ++j)
        detail::write_pod<double>(os, (*d.joint_regressor)(i, j));
  if (!os) throw io_error("vmds: write failed: " + path);
}

inline MeshDataset load_dataset_vmds(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("vmds: cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "VMDS") throw format_error("vmds: bad magic in " + path);
  const auto version = detail::read_pod<std::uint32_t>(is, "version");
  if (version != 1) throw format_error("vmds: unsupported version " + std::to_string(version));
  const auto N = detail::read_pod<std::uint32_t>(is, "sample count");
  const auto M = detail::read_pod<std::uint32_t>(is, "vertex count");
  const auto F = detail::read_pod<std::uint32_t>(is, "face count");
  const auto J = detail::read_pod<std::uint32_t>(is, "joint count");
  if (N == 0 || M == 0) throw format_error("vmds: empty dataset in header");

  MeshDataset d;
  d.samples.resize(N);
  for (std::uint32_t n = 0; n < N; ++n) {
    auto& v = d.samples[n].vertices;
    v.resize(M, 3);
    std::vector<float> buf(static_cast<std::size_t>(M) * 3);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!is) throw format_error("vmds: truncated vertex payload at sample " + std::to_string(n));
    for (std::uint32_t i = 0; i < M; ++i)
      for (int c = 0; c < 3; ++c) v(i, c) = buf[static_cast<std::size_t>(i) * 3 + static_cast<std::size_t>(c)];
  }
  d.faces.resize(F, 3);
  for (std::uint32_t f = 0; f < F; ++f)
    for (int c = 0; c < 3; ++c) d.faces(f, c) = detail::read_pod<std::uint32_t>(is, "face payload");
  if (J > 0) {
    Eigen::MatrixXd reg(M, J);
    for (std::uint32_t i = 0; i < M; ++i)
      for (std::uint32_t j = 0; j < J; ++j) reg(i, j) = detail::read_pod<double>(is, "joint regressor");
    d.joint_regressor = std::move(reg);
  }
  is.peek();
  if (!is.eof()) throw format_error("vmds: trailing bytes after payload in " + path);
  d.template_mesh = d.samples[0];
  d.validate();
  return d;
}

// Minimal OBJ support: v records and triangular f records (1-based, optional
// /-suffixes); other records are ignored.
inline MeshSample load_obj(const std::string& path, FaceMatrix* faces_out = nullptr) {
  std::ifstream is(path);
  if (!is) throw io_error("obj: cannot open: " + path);
  std::vector<Eigen::Vector3d> verts;
  std::vector<std::array<std::uint32_t, 3>> faces;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) continue;
    if (tag == "v") {
      double x, y, z;
      if (!(ls >> x >> y >> z))
        throw format_error("obj: bad vertex at " + path + ":" + std::to_string(lineno));
      verts.emplace_back(x, y, z);
    } else if (tag == "f") {
      std::vector<long> idx;
      std::string tok;
      while (ls >> tok) {
        const std::size_t slash = tok.find('/');
        idx.push_back(std::stol(tok.substr(0, slash)));
      }
      if (idx.size() != 3)
        throw format_error("obj: non-triangular face at " + path + ":" + std::to_string(lineno));
      std::array<std::uint32_t, 3> f{};
      for (int c = 0; c < 3; ++c) {
        if (idx[static_cast<std::size_t>(c)] < 1)
          throw format_error("obj: non-positive index at " + path + ":" + std::to_string(lineno));
        f[static_cast<std::size_t>(c)] = static_cast<std::uint32_t>(idx[static_cast<std::size_t>(c)] - 1);
      }
      faces.push_back(f);
    }
  }
  if (verts.empty()) throw format_error("obj: no vertices in " + path);
  MeshSample s;
  s.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
  for (std::size_t i = 0; i < verts.size(); ++i) s.vertices.row(static_cast<Eigen::Index>(i)) = verts[i].transpose();
  if (faces_out) {
    faces_out->resize(static_cast<Eigen::Index>(faces.size()), 3);
    for (std::size_t f = 0; f < faces.size(); ++f)
      for (int c = 0; c < 3; ++c) (*faces_out)(static_cast<Eigen::Index>(f), c) = faces[f][static_cast<std::size_t>(c)];
  }
  return s;
}

inline void save_obj(const MeshSample& mesh, const FaceMatrix& faces, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw io_error("obj: cannot open for writing: " + path);
  char buf[128];
  for (Eigen::Index i = 0; i < mesh.vertices.rows(); ++i) {
    std::snprintf(buf, sizeof(buf), "v %.6f %.6f %.6f\n", mesh.vertices(i, 0), mesh.vertices(i, 1),
                  mesh.vertices(i, 2));
    os << buf;
  }
  for (Eigen::Index f = 0; f < faces.rows(); ++f)
    os << "f " << faces(f, 0) + 1 << ' ' << faces(f, 1) + 1 << ' ' << faces(f, 2) + 1 << '\n';
  if (!os) throw io_error("obj: write failed: " + path);
}

// Directory of OBJ files, lexicographic order, shared topology; the first
// mesh provides the faces and the template.
inline MeshDataset load_dataset_obj_dir(const std::string& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".obj") files.push_back(e.path());
  if (files.empty()) throw io_error("obj dir: no .obj files in " + dir);
  std::sort(files.begin(), files.end());

  MeshDataset d;
  for (std::size_t n = 0; n < files.size(); ++n) {
    FaceMatrix faces;
    MeshSample s = load_obj(files[n].string(), n == 0 ? &d.faces : &faces);
    if (n > 0) {
      if (s.vertices.rows() != d.samples[0].vertices.rows())
        throw format_error("obj dir: vertex count mismatch in " + files[n].string());
      if (faces.rows() != d.faces.rows() || (faces.rows() > 0 && !(faces.array() == d.faces.array()).all()))
        throw format_error("obj dir: face topology mismatch in " + files[n].string());
    }
    d.samples.push_back(std::move(s));
  }
  d.template_mesh = d.samples[0];
  d.validate();
  return d;
}

inline MeshDataset load_dataset(const std::string& path) {
  if (std::filesystem::is_directory(path)) return load_dataset_obj_dir(path);
  return load_dataset_vmds(path);
}

// Sample 0 is the exact rest pose (zero latents, zero noise) and doubles as
// the template. Coordinates are rounded through float so the binary format
// round-trips bit-exactly.
inline MeshDataset generate_synthetic_dataset(const SynthConfig& cfg, std::uint64_t seed) {
  if (cfg.n_samples < 1) throw param_error("synthetic dataset: n_samples must be >= 1");
  if (cfg.noise_mm < 0.0) throw param_error("synthetic dataset: noise_mm must be >= 0");
  if (cfg.bilateral_rho < 0.0 || cfg.bilateral_rho > 1.0)
    throw param_error("synthetic dataset: bilateral_rho must be in [0, 1]");
  const synth::DeformationModel model = synth::build_model(cfg.m_target, cfg.latent_dim);
  const int M = static_cast<int>(model.rest.vertices.rows());
  const double rho = cfg.bilateral_rho;
  const double spread = std::sqrt(std::max(0.0, 1.0 - rho * rho));

  MeshDataset d;
  d.faces = model.faces;
  d.samples.resize(static_cast<std::size_t>(cfg.n_samples));

  parallel_for(cfg.n_samples, [&](std::ptrdiff_t n) {
    Eigen::MatrixX3d v;
    if (n == 0) {
      v = model.rest.vertices;
    } else {
      Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(n)));
      Eigen::VectorXd latent(cfg.latent_dim);
      for (int k = 0; k < cfg.latent_dim; ++k) latent[k] = rng.gaussian();
      // couple mirrored field pairs; the mix keeps the marginal unit normal
      for (const auto& [l, r] : model.mirror_pairs)
        latent[r] = rho * latent[l] + spread * latent[r];
      v = synth::pose(model, latent);
      if (cfg.noise_mm > 0.0)
        for (int i = 0; i < M; ++i)
          for (int c = 0; c < 3; ++c) v(i, c) += cfg.noise_mm * rng.gaussian();
    }
    for (int i = 0; i < M; ++i)
      for (int c = 0; c < 3; ++c) v(i, c) = detail::to_f32(v(i, c));
    d.samples[static_cast<std::size_t>(n)].vertices = std::move(v);
  });

  d.template_mesh = d.samples[0];
  d.joint_regressor = synth::nearest_ring_regressor(model, 9);
  d.validate();
  return d;
}

}  // namespace vmark
