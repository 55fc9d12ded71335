#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <array>
#include <cmath>
#include <vector>

#include "vmark/common.hpp"
#include "vmark/dataset.hpp"
#include "vmark/heatmap.hpp"

namespace vmark {

struct LossWeights {
  double lambda_vm = 1.0;
  double lambda_c = 1.0;
  double lambda_m = 1.0;
  double lambda_e = 20.0;

  void validate() const {
    if (!(lambda_vm >= 0.0 && lambda_c >= 0.0 && lambda_m >= 0.0 && lambda_e >= 0.0))
      throw param_error("loss weights must be >= 0");
  }
};

// Degeneracies tolerated by loss_normal: zero-area ground-truth faces drop
// their whole face term, zero-length predicted edges drop that edge.
struct MeshLossStats {
  int degenerate_faces = 0;
  int zero_length_edges = 0;
};

namespace detail {

inline void require_same_shape(const Eigen::MatrixX3d& a, const Eigen::MatrixX3d& b, const char* what) {
  if (a.rows() != b.rows()) throw param_error(std::string(what) + ": row count mismatch");
}

inline void require_faces(const FaceMatrix& faces, Eigen::Index n_vertices, const char* what) {
  for (Eigen::Index f = 0; f < faces.rows(); ++f)
    for (int c = 0; c < 3; ++c)
      if (static_cast<Eigen::Index>(faces(f, c)) >= n_vertices)
        throw param_error(std::string(what) + ": face index out of range");
}

}  // namespace detail

// Mean absolute coordinate difference between marker positions.
inline double loss_vm(const Eigen::MatrixX3d& P, const Eigen::MatrixX3d& P_gt) {
  detail::require_same_shape(P, P_gt, "loss_vm");
  if (P.rows() == 0) throw param_error("loss_vm: empty");
  return (P - P_gt).cwiseAbs().sum() / static_cast<double>(3 * P.rows());
}

// Negative log-likelihood of the voxel containing each ground-truth marker.
inline double loss_conf(const VoxelHeatmapSet& hm, const Eigen::MatrixX3d& P_gt) {
  hm.grid.validate();
  if (P_gt.rows() != hm.n_markers()) throw param_error("loss_conf: marker count mismatch");
  double total = 0.0;
  for (int z = 0; z < hm.n_markers(); ++z) {
    int idx[3];
    for (int c = 0; c < 3; ++c) {
      const int n = hm.grid.dims[static_cast<std::size_t>(c)];
      const double u = (P_gt(z, c) - hm.grid.origin[c]) / hm.grid.voxel_size[c];
      idx[c] = std::min(std::max(static_cast<int>(std::floor(u)), 0), n - 1);
    }
    total -= std::log(hm.values[static_cast<std::size_t>(z)][hm.grid.flat_index(idx[0], idx[1], idx[2])] + 1e-12);
  }
  return total;
}

// Mean absolute coordinate difference over all vertices.
inline double loss_vertex(const MeshSample& m_hat, const MeshSample& m_gt) {
  detail::require_same_shape(m_hat.vertices, m_gt.vertices, "loss_vertex");
  if (m_hat.vertices.rows() == 0) throw param_error("loss_vertex: empty");
  return (m_hat.vertices - m_gt.vertices).cwiseAbs().sum() / static_cast<double>(3 * m_hat.vertices.rows());
}

inline Eigen::MatrixX3d grad_loss_vertex(const MeshSample& m_hat, const MeshSample& m_gt) {
  detail::require_same_shape(m_hat.vertices, m_gt.vertices, "loss_vertex");
  const double scale = 1.0 / static_cast<double>(3 * m_hat.vertices.rows());
  return (m_hat.vertices - m_gt.vertices).array().sign().matrix() * scale;
}

// joint j = sum_i regressor(i, j) * vertex_i
inline Eigen::MatrixX3d regress_joints(const MeshSample& mesh, const Eigen::MatrixXd& regressor) {
  if (regressor.rows() != mesh.vertices.rows()) throw param_error("regress_joints: regressor rows != vertices");
  if (regressor.cols() < 1) throw param_error("regress_joints: no joints");
  return regressor.transpose() * mesh.vertices;
}

// Mean absolute coordinate difference between regressed and target joints.
inline double loss_pose(const MeshSample& m_hat, const Eigen::MatrixX3d& J_gt,
                        const Eigen::MatrixXd& regressor) {
  const Eigen::MatrixX3d J = regress_joints(m_hat, regressor);
  detail::require_same_shape(J, J_gt, "loss_pose");
  return (J - J_gt).cwiseAbs().sum() / static_cast<double>(3 * J.rows());
}

inline Eigen::MatrixX3d grad_loss_pose(const MeshSample& m_hat, const Eigen::MatrixX3d& J_gt,
                                       const Eigen::MatrixXd& regressor) {
  const Eigen::MatrixX3d J = regress_joints(m_hat, regressor);
  detail::require_same_shape(J, J_gt, "loss_pose");
  const double scale = 1.0 / static_cast<double>(3 * J.rows());
  return regressor * ((J - J_gt).array().sign().matrix() * scale);
}

// Sum over faces and their three edges of |<unit predicted edge, gt unit
// face normal>|.
inline double loss_normal(const MeshSample& m_hat, const MeshSample& m_gt, const FaceMatrix& faces,
                          MeshLossStats* stats = nullptr) {
  detail::require_same_shape(m_hat.vertices, m_gt.vertices, "loss_normal");
  detail::require_faces(faces, m_hat.vertices.rows(), "loss_normal");
  MeshLossStats local;
  double total = 0.0;
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    const Eigen::Index a = faces(f, 0), b = faces(f, 1), c = faces(f, 2);
    const Eigen::Vector3d ab = (m_gt.vertices.row(b) - m_gt.vertices.row(a)).transpose();
    const Eigen::Vector3d ac = (m_gt.vertices.row(c) - m_gt.vertices.row(a)).transpose();
    const Eigen::Vector3d n = ab.cross(ac);
    const double nn = n.norm();
    if (!(nn > 0.0)) {
      ++local.degenerate_faces;
      continue;
    }
    const Eigen::Vector3d unit_n = n / nn;
    const Eigen::Index vi[4] = {a, b, c, a};
    for (int e = 0; e < 3; ++e) {
      const Eigen::Vector3d edge = (m_hat.vertices.row(vi[e]) - m_hat.vertices.row(vi[e + 1])).transpose();
      const double len = edge.norm();
      if (!(len > 0.0)) {
        ++local.zero_length_edges;
        continue;
      }
      total += std::abs(edge.dot(unit_n) / len);
    }
  }
  if (stats != nullptr) *stats = local;
  return total;
}

inline Eigen::MatrixX3d grad_loss_normal(const MeshSample& m_hat, const MeshSample& m_gt,
                                         const FaceMatrix& faces) {
  detail::require_same_shape(m_hat.vertices, m_gt.vertices, "loss_normal");
  detail::require_faces(faces, m_hat.vertices.rows(), "loss_normal");
  Eigen::MatrixX3d g = Eigen::MatrixX3d::Zero(m_hat.vertices.rows(), 3);
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    const Eigen::Index a = faces(f, 0), b = faces(f, 1), c = faces(f, 2);
    const Eigen::Vector3d ab = (m_gt.vertices.row(b) - m_gt.vertices.row(a)).transpose();
    const Eigen::Vector3d ac = (m_gt.vertices.row(c) - m_gt.vertices.row(a)).transpose();
    const Eigen::Vector3d n = ab.cross(ac);
    const double nn = n.norm();
    if (!(nn > 0.0)) continue;
    const Eigen::Vector3d unit_n = n / nn;
    const Eigen::Index vi[4] = {a, b, c, a};
    for (int e = 0; e < 3; ++e) {
      const Eigen::Vector3d edge = (m_hat.vertices.row(vi[e]) - m_hat.vertices.row(vi[e + 1])).transpose();
      const double len = edge.norm();
      if (!(len > 0.0)) continue;
      const double d = edge.dot(unit_n) / len;
      const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
      const Eigen::Vector3d de = (s / len) * (unit_n - d * (edge / len));
      g.row(vi[e]) += de.transpose();
      g.row(vi[e + 1]) -= de.transpose();
    }
  }
  return g;
}

// Sum over face edges of the absolute length difference.
inline double loss_edge(const MeshSample& m_hat, const MeshSample& m_gt, const FaceMatrix& faces) {
  detail::require_same_shape(m_hat.vertices, m_gt.vertices, "loss_edge");
  detail::require_faces(faces, m_hat.vertices.rows(), "loss_edge");
  double total = 0.0;
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    const Eigen::Index vi[4] = {faces(f, 0), faces(f, 1), faces(f, 2), faces(f, 0)};
    for (int e = 0; e < 3; ++e) {
      const double lh = (m_hat.vertices.row(vi[e]) - m_hat.vertices.row(vi[e + 1])).norm();
      const double lg = (m_gt.vertices.row(vi[e]) - m_gt.vertices.row(vi[e + 1])).norm();
      total += std::abs(lh - lg);
    }
  }
  return total;
}

inline Eigen::MatrixX3d grad_loss_edge(const MeshSample& m_hat, const MeshSample& m_gt,
                                       const FaceMatrix& faces) {
  detail::require_same_shape(m_hat.vertices, m_gt.vertices, "loss_edge");
  detail::require_faces(faces, m_hat.vertices.rows(), "loss_edge");
  Eigen::MatrixX3d g = Eigen::MatrixX3d::Zero(m_hat.vertices.rows(), 3);
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    const Eigen::Index vi[4] = {faces(f, 0), faces(f, 1), faces(f, 2), faces(f, 0)};
    for (int e = 0; e < 3; ++e) {
      const Eigen::Vector3d edge = (m_hat.vertices.row(vi[e]) - m_hat.vertices.row(vi[e + 1])).transpose();
      const double lh = edge.norm();
      if (!(lh > 0.0)) continue;
      const double lg = (m_gt.vertices.row(vi[e]) - m_gt.vertices.row(vi[e + 1])).norm();
      const double s = lh > lg ? 1.0 : (lh < lg ? -1.0 : 0.0);
      const Eigen::Vector3d de = (s / lh) * edge;
      g.row(vi[e]) += de.transpose();
      g.row(vi[e + 1]) -= de.transpose();
    }
  }
  return g;
}

inline double loss_mesh(const MeshSample& m_hat, const MeshSample& m_gt, const Eigen::MatrixX3d& J_gt,
                        const Eigen::MatrixXd& regressor, const FaceMatrix& faces,
                        const LossWeights& weights = {}, MeshLossStats* stats = nullptr) {
  weights.validate();
  return loss_vertex(m_hat, m_gt) + loss_pose(m_hat, J_gt, regressor) +
         loss_normal(m_hat, m_gt, faces, stats) + weights.lambda_e * loss_edge(m_hat, m_gt, faces);
}

inline Eigen::MatrixX3d grad_loss_mesh(const MeshSample& m_hat, const MeshSample& m_gt,
                                       const Eigen::MatrixX3d& J_gt, const Eigen::MatrixXd& regressor,
                                       const FaceMatrix& faces, const LossWeights& weights = {}) {
  weights.validate();
  return grad_loss_vertex(m_hat, m_gt) + grad_loss_pose(m_hat, J_gt, regressor) +
         grad_loss_normal(m_hat, m_gt, faces) + weights.lambda_e * grad_loss_edge(m_hat, m_gt, faces);
}

inline double total_loss(const Eigen::MatrixX3d& P, const Eigen::MatrixX3d& P_gt,
                         const VoxelHeatmapSet& hm, const MeshSample& m_hat, const MeshSample& m_gt,
                         const Eigen::MatrixX3d& J_gt, const Eigen::MatrixXd& regressor,
                         const FaceMatrix& faces, const LossWeights& weights = {}) {
  weights.validate();
  return weights.lambda_vm * loss_vm(P, P_gt) + weights.lambda_c * loss_conf(hm, P_gt) +
         weights.lambda_m * loss_mesh(m_hat, m_gt, J_gt, regressor, faces, weights);
}

inline double mpve(const MeshSample& m_hat, const MeshSample& m_gt) {
  detail::require_same_shape(m_hat.vertices, m_gt.vertices, "mpve");
  if (m_hat.vertices.rows() == 0) throw param_error("mpve: empty");
  return (m_hat.vertices - m_gt.vertices).rowwise().norm().mean();
}

inline double mpjpe(const Eigen::MatrixX3d& J_hat, const Eigen::MatrixX3d& J_gt) {
  detail::require_same_shape(J_hat, J_gt, "mpjpe");
  if (J_hat.rows() == 0) throw param_error("mpjpe: empty");
  return (J_hat - J_gt).rowwise().norm().mean();
}

// MPJPE after the best proper similarity alignment of predictions onto the
// target (scale, rotation with det +1, translation).
inline double pa_mpjpe(const Eigen::MatrixX3d& J_hat, const Eigen::MatrixX3d& J_gt) {
  detail::require_same_shape(J_hat, J_gt, "pa_mpjpe");
  const Eigen::Index n = J_hat.rows();
  if (n < 3) throw param_error("pa_mpjpe: needs at least 3 points");

  const Eigen::RowVector3d mu_x = J_hat.colwise().mean();
  const Eigen::RowVector3d mu_y = J_gt.colwise().mean();
  const Eigen::MatrixX3d Xc = J_hat.rowwise() - mu_x;
  const Eigen::MatrixX3d Yc = J_gt.rowwise() - mu_y;

  const double var_x = Xc.squaredNorm();
  if (!(var_x > 0.0)) throw param_error("pa_mpjpe: degenerate point set");

  const Eigen::Matrix3d H = Xc.transpose() * Yc;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d d = svd.singularValues();
  const Eigen::Matrix3d U = svd.matrixU(), V = svd.matrixV();
  Eigen::Matrix3d S = Eigen::Matrix3d::Identity();
  if ((V * U.transpose()).determinant() < 0.0) {
    S(2, 2) = -1.0;
    d[2] = -d[2];
  }
  const Eigen::Matrix3d R = V * S * U.transpose();
  const double s = d.sum() / var_x;
  return ((s * (Xc * R.transpose())) - Yc).rowwise().norm().mean();
}

struct MetricReport {
  double mpve = 0.0;
  double mpjpe = 0.0;
  double pa_mpjpe = 0.0;
  std::vector<std::array<double, 3>> per_sample;  // (mpve, mpjpe, pa_mpjpe)
};

// Per-sample metrics with joints regressed from both meshes; aggregates are
// plain means in sample order.
inline MetricReport evaluate_meshes(const std::vector<MeshSample>& hats,
                                    const std::vector<MeshSample>& gts,
                                    const Eigen::MatrixXd& regressor) {
  if (hats.size() != gts.size()) throw param_error("evaluate_meshes: sample count mismatch");
  if (hats.empty()) throw param_error("evaluate_meshes: no samples");
  MetricReport rep;
  rep.per_sample.resize(hats.size());
  parallel_for(static_cast<std::ptrdiff_t>(hats.size()), [&](std::ptrdiff_t i) {
    const auto& h = hats[static_cast<std::size_t>(i)];
    const auto& g = gts[static_cast<std::size_t>(i)];
    const Eigen::MatrixX3d Jh = regress_joints(h, regressor);
    const Eigen::MatrixX3d Jg = regress_joints(g, regressor);
    rep.per_sample[static_cast<std::size_t>(i)] = {mpve(h, g), mpjpe(Jh, Jg), pa_mpjpe(Jh, Jg)};
  });
  for (const auto& row : rep.per_sample) {
    rep.mpve += row[0];
    rep.mpjpe += row[1];
    rep.pa_mpjpe += row[2];
  }
  const double inv = 1.0 / static_cast<double>(rep.per_sample.size());
  rep.mpve *= inv;
  rep.mpjpe *= inv;
  rep.pa_mpjpe *= inv;
  return rep;
}

}  // namespace vmark
