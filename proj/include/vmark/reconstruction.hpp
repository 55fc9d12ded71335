#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "vmark/common.hpp"
#include "vmark/dataset.hpp"
#include "vmark/evaluation.hpp"
#include "vmark/heatmap.hpp"
#include "vmark/markers.hpp"

namespace vmark {

// Affine correction of the coefficient matrix driven by per-marker
// confidences: A_hat(C) = base + reshape(W C + b). Zero parameters make
// every forward pass return base exactly.
struct CoefficientAdapter {
  Eigen::MatrixXd base;  // K x M
  Eigen::MatrixXd W;     // (K*M) x K
  Eigen::VectorXd b;     // K*M

  int n_markers() const { return static_cast<int>(base.rows()); }
  Eigen::Index n_vertices() const { return base.cols(); }

  static CoefficientAdapter zero_initialized(const Eigen::MatrixXd& A_sym) {
    if (A_sym.rows() < 1 || A_sym.cols() < 1) throw param_error("adapter: empty base");
    CoefficientAdapter a;
    a.base = A_sym;
    a.W = Eigen::MatrixXd::Zero(A_sym.size(), A_sym.rows());
    a.b = Eigen::VectorXd::Zero(A_sym.size());
    return a;
  }

  void validate() const {
    if (base.rows() < 1 || base.cols() < 1) throw param_error("adapter: empty base");
    if (W.rows() != base.size() || W.cols() != base.rows())
      throw param_error("adapter: W shape mismatch");
    if (b.size() != base.size()) throw param_error("adapter: b size mismatch");
    if (!base.allFinite() || !W.allFinite() || !b.allFinite())
      throw param_error("adapter: non-finite parameters");
  }
};

struct AdapterTrainConfig {
  double learning_rate = 1e-5;
  int epochs = 200;
  int batch_size = 1;
  LossWeights loss_weights;
  std::uint64_t seed = 0;  // reserved; training itself draws no randomness

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
      throw param_error("train config: learning_rate must be > 0");
    if (epochs < 0) throw param_error("train config: epochs must be >= 0");
    if (batch_size < 1) throw param_error("train config: batch_size must be >= 1");
    loss_weights.validate();
  }
};

struct TrainingSample {
  MarkerEstimate estimate;
  MeshSample gt;
};

// vertex i = sum_j A(j, i) * P(j)
inline MeshSample reconstruct_fixed(const Eigen::MatrixX3d& P, const Eigen::MatrixXd& A) {
  if (A.rows() != P.rows()) throw param_error("reconstruct_fixed: marker count mismatch");
  if (A.rows() < 1 || A.cols() < 1) throw param_error("reconstruct_fixed: empty coefficients");
  MeshSample m;
  m.vertices = A.transpose() * P;
  return m;
}

inline Eigen::MatrixXd adapter_forward(const CoefficientAdapter& adapter, const Eigen::VectorXd& C) {
  adapter.validate();
  if (C.size() != adapter.base.rows()) throw param_error("adapter_forward: confidence size mismatch");
  if (!C.allFinite()) throw param_error("adapter_forward: non-finite confidences");
  const Eigen::VectorXd lin = adapter.W * C + adapter.b;
  return adapter.base +
         Eigen::Map<const Eigen::MatrixXd>(lin.data(), adapter.base.rows(), adapter.base.cols());
}

inline MeshSample reconstruct_adaptive(const Eigen::MatrixX3d& P, const Eigen::VectorXd& C,
                                       const CoefficientAdapter& adapter) {
  return reconstruct_fixed(P, adapter_forward(adapter, C));
}

inline std::vector<MeshSample> reconstruct_all_fixed(const std::vector<MarkerEstimate>& estimates,
                                                     const Eigen::MatrixXd& A) {
  std::vector<MeshSample> out(estimates.size());
  parallel_for(static_cast<std::ptrdiff_t>(estimates.size()), [&](std::ptrdiff_t i) {
    out[static_cast<std::size_t>(i)] = reconstruct_fixed(estimates[static_cast<std::size_t>(i)].P, A);
  });
  return out;
}

inline std::vector<MeshSample> reconstruct_all_adaptive(const std::vector<MarkerEstimate>& estimates,
                                                        const CoefficientAdapter& adapter) {
  std::vector<MeshSample> out(estimates.size());
  parallel_for(static_cast<std::ptrdiff_t>(estimates.size()), [&](std::ptrdiff_t i) {
    const auto& e = estimates[static_cast<std::size_t>(i)];
    out[static_cast<std::size_t>(i)] = reconstruct_adaptive(e.P, e.C, adapter);
  });
  return out;
}

inline Eigen::MatrixX3d gt_marker_positions(const MeshSample& mesh, const MarkerSet& ms) {
  Eigen::MatrixX3d P(ms.n_markers(), 3);
  for (int k = 0; k < ms.n_markers(); ++k) {
    const int v = ms.vertex_indices[static_cast<std::size_t>(k)];
    if (v < 0 || v >= mesh.vertices.rows()) throw param_error("gt_marker_positions: index out of range");
    P.row(k) = mesh.vertices.row(v);
  }
  return P;
}

namespace detail {

// d(loss)/dA for M_hat = A^T P given d(loss)/dM_hat
inline Eigen::MatrixXd adapter_coeff_gradient(const Eigen::MatrixX3d& P, const Eigen::MatrixX3d& mesh_grad) {
  return P * mesh_grad.transpose();
}

}  // namespace detail

struct AdapterGradients {
  Eigen::MatrixXd dW;
  Eigen::VectorXd db;
};

// Chain rule through A_hat = base + reshape(W C + b): column-major vec of the
// coefficient gradient times the confidence row.
inline AdapterGradients adapter_parameter_gradients(const Eigen::MatrixXd& coeff_grad,
                                                    const Eigen::VectorXd& C) {
  AdapterGradients g;
  const Eigen::Map<const Eigen::VectorXd> v(coeff_grad.data(), coeff_grad.size());
  g.dW = v * C.transpose();
  g.db = v;
  return g;
}

struct TrainResult {
  CoefficientAdapter adapter;
  std::vector<double> epoch_loss;  // entry 0 is the pre-training loss
  double final_learning_rate = 0.0;
  int reverted_epochs = 0;
};

namespace detail {

inline double adapter_set_loss(const std::vector<TrainingSample>& samples,
                               const CoefficientAdapter& adapter, const Eigen::MatrixXd& regressor,
                               const FaceMatrix& faces, const LossWeights& weights) {
  std::vector<double> per(samples.size());
  parallel_for(static_cast<std::ptrdiff_t>(samples.size()), [&](std::ptrdiff_t i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    const MeshSample m_hat = reconstruct_adaptive(s.estimate.P, s.estimate.C, adapter);
    const Eigen::MatrixX3d J_gt = regress_joints(s.gt, regressor);
    per[static_cast<std::size_t>(i)] = loss_mesh(m_hat, s.gt, J_gt, regressor, faces, weights);
  });
  double total = 0.0;
  for (const double v : per) total += v;
  return total / static_cast<double>(samples.size());
}

}  // namespace detail

// Mini-batch gradient descent on the adapter against the mesh loss, stepping
// in a confidence-centered basis (see the accumulation loop). Batches run in
// fixed sample order; an epoch that raises the full-set loss is reverted and
// the learning rate halved, so the recorded history never increases.
inline TrainResult train_adapter(const std::vector<TrainingSample>& train_set, const MeshDataset& dataset,
                                 const AdapterTrainConfig& config, const MarkerSet& marker_set) {
  config.validate();
  if (train_set.empty()) throw param_error("train_adapter: empty training set");
  if (!dataset.joint_regressor.has_value()) throw param_error("train_adapter: dataset has no joint regressor");
  const Eigen::MatrixXd& regressor = *dataset.joint_regressor;
  const FaceMatrix& faces = dataset.faces;
  const int K = marker_set.n_markers();
  for (const auto& s : train_set) {
    s.estimate.validate();
    if (s.estimate.P.rows() != K) throw param_error("train_adapter: estimate marker count mismatch");
    if (s.gt.vertices.rows() != marker_set.A_sym.cols())
      throw param_error("train_adapter: ground-truth vertex count mismatch");
  }

  TrainResult result;
  result.adapter = CoefficientAdapter::zero_initialized(marker_set.A_sym);
  CoefficientAdapter& adapter = result.adapter;

  const auto set_loss = [&]() {
    return detail::adapter_set_loss(train_set, adapter, regressor, faces, config.loss_weights);
  };

  double loss = set_loss();
  if (!std::isfinite(loss)) throw error("train_adapter: non-finite loss; lower the learning rate");
  result.epoch_loss.push_back(loss);

  const Eigen::Index n = static_cast<Eigen::Index>(train_set.size());
  std::vector<Eigen::MatrixXd> batch_coeff_grads(static_cast<std::size_t>(config.batch_size));

  double lr = config.learning_rate;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const Eigen::MatrixXd W_before = adapter.W;
    const Eigen::VectorXd b_before = adapter.b;

    for (Eigen::Index start = 0; start < n; start += config.batch_size) {
      const Eigen::Index count = std::min<Eigen::Index>(config.batch_size, n - start);
      parallel_for(count, [&](std::ptrdiff_t i) {
        const auto& s = train_set[static_cast<std::size_t>(start + i)];
        const MeshSample m_hat = reconstruct_adaptive(s.estimate.P, s.estimate.C, adapter);
        const Eigen::MatrixX3d J_gt = regress_joints(s.gt, regressor);
        const Eigen::MatrixX3d mg =
            grad_loss_mesh(m_hat, s.gt, J_gt, regressor, faces, config.loss_weights);
        batch_coeff_grads[static_cast<std::size_t>(i)] = detail::adapter_coeff_gradient(s.estimate.P, mg);
      });
      // accumulate in sample order so results do not depend on thread count.
      // The step descends in the shifted basis (C - 1): confidences cluster
      // near one, so the raw W gradient is nearly a copy of the b gradient and
      // the per-marker contrast signal is buried. Both updates are expressed
      // in stored coordinates, leaving the forward map unchanged.
      Eigen::MatrixXd dW = Eigen::MatrixXd::Zero(adapter.W.rows(), adapter.W.cols());
      Eigen::VectorXd db = Eigen::VectorXd::Zero(adapter.b.size());
      for (Eigen::Index i = 0; i < count; ++i) {
        const auto& C = train_set[static_cast<std::size_t>(start + i)].estimate.C;
        const auto& cg = batch_coeff_grads[static_cast<std::size_t>(i)];
        const Eigen::Map<const Eigen::VectorXd> v(cg.data(), cg.size());
        dW.noalias() += v * (C.array() - 1.0).matrix().transpose();
        db.noalias() += v * (1.0 + static_cast<double>(K) - C.sum());
      }
      const double scale = lr / static_cast<double>(count);
      adapter.W -= scale * dW;
      adapter.b -= scale * db;
    }

    loss = set_loss();
    if (!std::isfinite(loss)) throw error("train_adapter: non-finite loss; lower the learning rate");
    if (loss > result.epoch_loss.back()) {
      adapter.W = W_before;
      adapter.b = b_before;
      lr *= 0.5;
      ++result.reverted_epochs;
      result.epoch_loss.push_back(result.epoch_loss.back());
      if (lr < 1e-18) break;
    } else {
      result.epoch_loss.push_back(loss);
    }
  }
  result.final_learning_rate = lr;
  return result;
}

// Per-sample corrupted marker estimates: each sample gets a cubic voxel grid
// fitted around its ground-truth markers, a Gaussian heatmap per marker, and
// the decoded (position, confidence) pair.
struct EstimateSynthConfig {
  int grid_dim = 32;
  double margin_mm = 150.0;
  double sigma_voxels = 2.0;
  double fraction = 0.0;       // corrupted marker share per sample
  double offset_voxels = 0.0;  // displacement magnitude for corrupted markers
  double lambda_flat = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (grid_dim < 2) throw param_error("estimate synth: grid_dim must be >= 2");
    if (!(margin_mm > 0.0)) throw param_error("estimate synth: margin must be > 0");
    if (!(sigma_voxels > 0.0)) throw param_error("estimate synth: sigma must be > 0");
    CorruptionSpec probe;
    probe.fraction = fraction;
    probe.offset_magnitude = std::max(offset_voxels, 0.0);
    probe.lambda_flat = lambda_flat;
    probe.validate();
    if (offset_voxels < 0.0) throw param_error("corruption: offset magnitude must be >= 0");
  }
};

inline VoxelGrid fit_cubic_grid(const Eigen::MatrixX3d& points, int dim, double margin_mm) {
  if (points.rows() < 1) throw param_error("fit_cubic_grid: no points");
  const Eigen::RowVector3d lo = points.colwise().minCoeff();
  const Eigen::RowVector3d hi = points.colwise().maxCoeff();
  const Eigen::RowVector3d mid = 0.5 * (lo + hi);
  const double side = (hi - lo).maxCoeff() + 2.0 * margin_mm;
  VoxelGrid g;
  g.dims = {dim, dim, dim};
  const double edge = side / static_cast<double>(dim);
  g.voxel_size = Eigen::Vector3d(edge, edge, edge);
  g.origin = (mid.transpose().array() - 0.5 * side).matrix();
  return g;
}

inline std::vector<MarkerEstimate> synthesize_marker_estimates(const MeshDataset& dataset,
                                                               const MarkerSet& marker_set,
                                                               const EstimateSynthConfig& cfg) {
  cfg.validate();
  std::vector<MarkerEstimate> out;
  out.reserve(dataset.samples.size());
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const Eigen::MatrixX3d P_gt = gt_marker_positions(dataset.samples[i], marker_set);
    const VoxelGrid grid = fit_cubic_grid(P_gt, cfg.grid_dim, cfg.margin_mm);
    const double edge = grid.voxel_size[0];
    CorruptionSpec spec;
    spec.fraction = cfg.fraction;
    spec.offset_magnitude = cfg.offset_voxels * edge;
    spec.lambda_flat = cfg.lambda_flat;
    const auto hm = synthesize_heatmap(P_gt, grid, cfg.sigma_voxels * edge, spec,
                                       Rng::mix(cfg.seed, static_cast<std::uint64_t>(i)));
    out.push_back(decode(hm));
  }
  return out;
}

}  // namespace vmark
