#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "vmark/common.hpp"

namespace vmark {

// Axis order is (depth, height, width); axis c of a metric point maps to
// grid axis c. Voxel (d,h,w) is centered at origin + (idx + 0.5) * voxel_size.
struct VoxelGrid {
  std::array<int, 3> dims{64, 64, 64};
  Eigen::Vector3d origin{0.0, 0.0, 0.0};
  Eigen::Vector3d voxel_size{1.0, 1.0, 1.0};

  void validate() const {
    for (int c = 0; c < 3; ++c) {
      if (dims[static_cast<std::size_t>(c)] < 2) throw param_error("voxel grid: dims must be >= 2 per axis");
      if (!(voxel_size[c] > 0.0) || !std::isfinite(voxel_size[c]))
        throw param_error("voxel grid: voxel_size must be positive");
      if (!std::isfinite(origin[c])) throw param_error("voxel grid: origin must be finite");
    }
  }

  Eigen::Index n_voxels() const {
    return static_cast<Eigen::Index>(dims[0]) * dims[1] * dims[2];
  }

  Eigen::Index flat_index(int d, int h, int w) const {
    return (static_cast<Eigen::Index>(d) * dims[1] + h) * dims[2] + w;
  }

  Eigen::Vector3d center(int d, int h, int w) const {
    Eigen::Vector3d c;
    c[0] = origin[0] + (d + 0.5) * voxel_size[0];
    c[1] = origin[1] + (h + 0.5) * voxel_size[1];
    c[2] = origin[2] + (w + 0.5) * voxel_size[2];
    return c;
  }

  Eigen::Vector3d lower_bound() const { return origin; }

  Eigen::Vector3d upper_bound() const {
    Eigen::Vector3d u;
    for (int c = 0; c < 3; ++c) u[c] = origin[c] + dims[static_cast<std::size_t>(c)] * voxel_size[c];
    return u;
  }
};

// Per-marker voxel likelihoods, each flattened in (d,h,w) order and summing
// to one.
struct VoxelHeatmapSet {
  VoxelGrid grid;
  std::vector<Eigen::VectorXd> values;
  int n_clamped = 0;  // synthesis centers that had to be moved onto the grid

  int n_markers() const { return static_cast<int>(values.size()); }

  void validate() const {
    grid.validate();
    const Eigen::Index V = grid.n_voxels();
    for (const auto& v : values) {
      if (v.size() != V) throw param_error("heatmap: voxel count mismatch");
      if (!v.allFinite() || v.minCoeff() < 0.0) throw param_error("heatmap: entries must be finite and >= 0");
      if (std::abs(v.sum() - 1.0) > 1e-6) throw param_error("heatmap: marker mass must sum to 1");
    }
  }
};

struct MarkerEstimate {
  Eigen::Matrix<double, Eigen::Dynamic, 3> P;  // mm
  Eigen::VectorXd C;                           // in [0, 1]

  int n_markers() const { return static_cast<int>(P.rows()); }

  void validate() const {
    if (C.size() != P.rows()) throw param_error("marker estimate: P/C size mismatch");
    if (!P.allFinite()) throw param_error("marker estimate: non-finite position");
    for (Eigen::Index k = 0; k < C.size(); ++k)
      if (!(C[k] >= 0.0 && C[k] <= 1.0)) throw param_error("marker estimate: confidence outside [0,1]");
  }
};

// One seeded marker subset of size ceil(fraction * K) receives both a random
// offset of the given magnitude and the uniform blend.
struct CorruptionSpec {
  double fraction = 0.0;
  double offset_magnitude = 0.0;  // mm
  double lambda_flat = 0.0;

  void validate() const {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw param_error("corruption: fraction outside [0,1]");
    if (!(offset_magnitude >= 0.0) || !std::isfinite(offset_magnitude))
      throw param_error("corruption: offset magnitude must be >= 0");
    if (!(lambda_flat >= 0.0 && lambda_flat <= 1.0)) throw param_error("corruption: lambda_flat outside [0,1]");
  }

  bool active() const { return fraction > 0.0 && (offset_magnitude > 0.0 || lambda_flat > 0.0); }
};

namespace detail {

// Continuous voxel coordinate of a metric point: u = d exactly at the center
// of voxel d. Clamped to [0, dims-1] per axis.
inline Eigen::Vector3d voxel_coordinate(const VoxelGrid& grid, const Eigen::Vector3d& p) {
  Eigen::Vector3d u;
  for (int c = 0; c < 3; ++c) {
    u[c] = (p[c] - grid.origin[c]) / grid.voxel_size[c] - 0.5;
    const double hi = static_cast<double>(grid.dims[static_cast<std::size_t>(c)] - 1);
    u[c] = std::min(std::max(u[c], 0.0), hi);
  }
  return u;
}

inline double trilinear(const VoxelGrid& grid, const Eigen::VectorXd& vals, const Eigen::Vector3d& p) {
  const Eigen::Vector3d u = voxel_coordinate(grid, p);
  int i0[3];
  double f[3];
  for (int c = 0; c < 3; ++c) {
    const int hi = grid.dims[static_cast<std::size_t>(c)] - 2;
    i0[c] = std::min(static_cast<int>(std::floor(u[c])), hi);
    f[c] = u[c] - i0[c];
  }
  double acc = 0.0;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int cc = 0; cc < 2; ++cc) {
        const double w = (a ? f[0] : 1.0 - f[0]) * (b ? f[1] : 1.0 - f[1]) * (cc ? f[2] : 1.0 - f[2]);
        acc += w * vals[grid.flat_index(i0[0] + a, i0[1] + b, i0[2] + cc)];
      }
  return acc;
}

}  // namespace detail

inline VoxelHeatmapSet synthesize_heatmap(const Eigen::Matrix<double, Eigen::Dynamic, 3>& gt_positions,
                                          const VoxelGrid& grid, double sigma,
                                          const CorruptionSpec& corruption = {}, std::uint64_t seed = 0) {
  grid.validate();
  corruption.validate();
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw param_error("synthesize_heatmap: sigma must be > 0");
  if (!gt_positions.allFinite()) throw param_error("synthesize_heatmap: non-finite position");

  const int K = static_cast<int>(gt_positions.rows());
  const Eigen::Index V = grid.n_voxels();

  std::vector<char> corrupted(static_cast<std::size_t>(K), 0);
  Eigen::MatrixX3d centers = gt_positions;
  if (corruption.active() && K > 0) {
    Rng rng(seed);
    const int n_corrupt = std::min<int>(K, static_cast<int>(std::ceil(corruption.fraction * K)));
    const auto subset = rng.sample_without_replacement(K, n_corrupt);
    // offsets drawn sequentially in subset order so parallel fill stays
    // reproducible
    for (int idx : subset) {
      corrupted[static_cast<std::size_t>(idx)] = 1;
      if (corruption.offset_magnitude > 0.0) {
        Eigen::Vector3d dir;
        do {
          dir << rng.gaussian(), rng.gaussian(), rng.gaussian();
        } while (dir.norm() < 1e-12);
        centers.row(idx) += (corruption.offset_magnitude / dir.norm()) * dir.transpose();
      }
    }
  }

  VoxelHeatmapSet hm;
  hm.grid = grid;
  hm.values.assign(static_cast<std::size_t>(K), Eigen::VectorXd());

  const Eigen::Vector3d lo = grid.lower_bound(), hi = grid.upper_bound();
  int n_clamped = 0;
  for (int z = 0; z < K; ++z) {
    bool moved = false;
    for (int c = 0; c < 3; ++c) {
      const double clamped = std::min(std::max(centers(z, c), lo[c]), hi[c]);
      if (clamped != centers(z, c)) moved = true;
      centers(z, c) = clamped;
    }
    if (moved) ++n_clamped;
  }
  hm.n_clamped = n_clamped;

  parallel_for(K, [&](std::ptrdiff_t z) {
    Eigen::VectorXd& v = hm.values[static_cast<std::size_t>(z)];
    v.resize(V);
    const Eigen::Vector3d mu = centers.row(z).transpose();
    std::array<Eigen::VectorXd, 3> axis;
    for (int c = 0; c < 3; ++c) {
      const int n = grid.dims[static_cast<std::size_t>(c)];
      axis[static_cast<std::size_t>(c)].resize(n);
      for (int i = 0; i < n; ++i) {
        // (x/sigma)^2 form stays NaN-free even when sigma^2 underflows
        const double t = (grid.origin[c] + (i + 0.5) * grid.voxel_size[c] - mu[c]) / sigma;
        axis[static_cast<std::size_t>(c)][i] = std::exp(-0.5 * t * t);
      }
    }
    Eigen::Index idx = 0;
    for (int d = 0; d < grid.dims[0]; ++d)
      for (int h = 0; h < grid.dims[1]; ++h) {
        const double dh = axis[0][d] * axis[1][h];
        for (int w = 0; w < grid.dims[2]; ++w) v[idx++] = dh * axis[2][w];
      }
    const double s = v.sum();
    if (s > 0.0) {
      v /= s;
    } else {
      // sigma far below voxel size can underflow every sample; collapse to
      // the voxel nearest the center, which is the correct limit
      int nearest[3];
      for (int c = 0; c < 3; ++c) {
        const int n = grid.dims[static_cast<std::size_t>(c)];
        const double u = (mu[c] - grid.origin[c]) / grid.voxel_size[c] - 0.5;
        nearest[c] = std::min(std::max(static_cast<int>(std::lround(u)), 0), n - 1);
      }
      v.setZero();
      v[grid.flat_index(nearest[0], nearest[1], nearest[2])] = 1.0;
    }
    if (corrupted[static_cast<std::size_t>(z)] && corruption.lambda_flat > 0.0) {
      v *= (1.0 - corruption.lambda_flat);
      v.array() += corruption.lambda_flat / static_cast<double>(V);
    }
  });
  return hm;
}

// Center of mass of each marker's likelihood. Computed as origin plus a
// weighted index sum so shifting the origin shifts the output bitwise.
inline Eigen::Matrix<double, Eigen::Dynamic, 3> soft_argmax(const VoxelHeatmapSet& hm) {
  hm.grid.validate();
  const int K = hm.n_markers();
  Eigen::Matrix<double, Eigen::Dynamic, 3> P(K, 3);
  parallel_for(K, [&](std::ptrdiff_t z) {
    const Eigen::VectorXd& v = hm.values[static_cast<std::size_t>(z)];
    Eigen::VectorXd md = Eigen::VectorXd::Zero(hm.grid.dims[0]);
    Eigen::VectorXd mh = Eigen::VectorXd::Zero(hm.grid.dims[1]);
    Eigen::VectorXd mw = Eigen::VectorXd::Zero(hm.grid.dims[2]);
    Eigen::Index idx = 0;
    for (int d = 0; d < hm.grid.dims[0]; ++d)
      for (int h = 0; h < hm.grid.dims[1]; ++h)
        for (int w = 0; w < hm.grid.dims[2]; ++w) {
          const double x = v[idx++];
          md[d] += x;
          mh[h] += x;
          mw[w] += x;
        }
    const Eigen::VectorXd* marg[3] = {&md, &mh, &mw};
    for (int c = 0; c < 3; ++c) {
      double num = 0.0, den = 0.0;
      for (Eigen::Index i = 0; i < marg[c]->size(); ++i) {
        num += (*marg[c])[i] * (static_cast<double>(i) + 0.5);
        den += (*marg[c])[i];
      }
      if (den <= 0.0) throw param_error("soft_argmax: empty heatmap");
      P(z, c) = hm.grid.origin[c] + hm.grid.voxel_size[c] * (num / den);
    }
  });
  return P;
}

// Trilinear heatmap score at each position, rescaled by the marker's max
// voxel value. Positions outside the grid read the clamped boundary value.
inline Eigen::VectorXd sample_confidence(const VoxelHeatmapSet& hm,
                                         const Eigen::Matrix<double, Eigen::Dynamic, 3>& P) {
  hm.grid.validate();
  if (P.rows() != hm.n_markers()) throw param_error("sample_confidence: position count mismatch");
  const int K = hm.n_markers();
  Eigen::VectorXd C(K);
  parallel_for(K, [&](std::ptrdiff_t z) {
    const Eigen::VectorXd& v = hm.values[static_cast<std::size_t>(z)];
    const double m = v.maxCoeff();
    if (m <= 0.0) throw param_error("sample_confidence: empty heatmap");
    const double raw = detail::trilinear(hm.grid, v, P.row(z).transpose());
    // interpolation of values <= m stays <= m up to roundoff
    C[z] = std::min(std::max(raw / m, 0.0), 1.0);
  });
  return C;
}

inline MarkerEstimate decode(const VoxelHeatmapSet& hm) {
  MarkerEstimate est;
  est.P = soft_argmax(hm);
  est.C = sample_confidence(hm, est.P);
  est.validate();
  return est;
}

}  // namespace vmark
