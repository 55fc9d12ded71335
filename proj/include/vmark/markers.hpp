#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include "vmark/archetypal.hpp"
#include "vmark/common.hpp"
#include "vmark/dataset.hpp"
#include "vmark/simplex.hpp"

namespace vmark {

// K mesh vertices acting as markers, with simplex-constrained coefficients
// mapping marker positions to all M vertices.
struct MarkerSet {
  std::vector<int> vertex_indices;       // K distinct vertex ids
  Eigen::MatrixXd A_sym;                 // K x M
  std::vector<int> midline_markers;      // subset of vertex_indices on the midline
  Eigen::MatrixX3d template_positions;   // K x 3, rest-pose marker positions

  int n_markers() const { return static_cast<int>(vertex_indices.size()); }

  Eigen::MatrixXd indicator_B(int n_vertices) const {
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(n_vertices, n_markers());
    for (int k = 0; k < n_markers(); ++k) B(vertex_indices[static_cast<std::size_t>(k)], k) = 1.0;
    return B;
  }

  void validate(const SymmetricPairing* pairing = nullptr) const {
    const int K = n_markers();
    if (K < 1) throw param_error("marker set: empty");
    if (A_sym.rows() != K) throw param_error("marker set: A rows != K");
    if (template_positions.rows() != K) throw param_error("marker set: template positions != K");
    std::vector<int> sorted = vertex_indices;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw param_error("marker set: duplicate vertex indices");
    if (sorted.front() < 0) throw param_error("marker set: negative vertex index");
    for (Eigen::Index i = 0; i < A_sym.cols(); ++i) {
      if (A_sym.col(i).minCoeff() < 0.0) throw param_error("marker set: negative coefficient");
      if (std::abs(A_sym.col(i).sum() - 1.0) > 1e-6)
        throw param_error("marker set: coefficient column does not sum to 1");
    }
    if (pairing) {
      std::vector<std::uint8_t> present;
      int maxv = 0;
      for (int v : vertex_indices) maxv = std::max(maxv, v);
      present.assign(static_cast<std::size_t>(maxv + 1), 0);
      for (int v : vertex_indices) present[static_cast<std::size_t>(v)] = 1;
      for (int v : vertex_indices) {
        if (pairing->is_midline(v)) continue;
        const int p = pairing->partner_of(v);
        if (p < 0 || p > maxv || !present[static_cast<std::size_t>(p)])
          throw param_error("marker set: not mirror-closed at vertex " + std::to_string(v));
      }
    }
  }
};

// Nearest data column to each archetype in trajectory space; clashes resolve
// in archetype order, each later archetype taking its nearest unclaimed
// vertex.
inline std::vector<int> snap_to_vertices(const ArchetypeModel& model, const DataMatrix& data) {
  const Eigen::Index M = data.X.cols();
  const int K = model.n_markers;
  if (model.Z.rows() != data.X.rows()) throw param_error("snap_to_vertices: model/data mismatch");
  if (static_cast<Eigen::Index>(K) > M) throw param_error("snap_to_vertices: K > M");

  const Eigen::VectorXd col_norms2 = data.X.colwise().squaredNorm();
  const Eigen::MatrixXd cross = model.Z.transpose() * data.X;  // K x M
  std::vector<std::uint8_t> claimed(static_cast<std::size_t>(M), 0);
  std::vector<int> out(static_cast<std::size_t>(K));
  for (int j = 0; j < K; ++j) {
    const double zj2 = model.Z.col(j).squaredNorm();
    Eigen::Index best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < M; ++i) {
      if (claimed[static_cast<std::size_t>(i)]) continue;
      const double d = std::max(0.0, zj2 + col_norms2[i] - 2.0 * cross(j, i));
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    claimed[static_cast<std::size_t>(best)] = 1;
    out[static_cast<std::size_t>(j)] = static_cast<int>(best);
  }
  return out;
}

// Mirror-closes a marker vertex set. Midline markers stay; positive-side
// markers stay; negative-side markers are replaced by partners of unused
// positive-side markers, committing the globally cheapest replacement first
// (template distance, so a marker keeps a nearby site whenever one exists).
// Whatever the matching cannot close, because the sides are unbalanced, is
// repaired by the same cheapest-first rule over the remaining legal moves:
// rewrite one open marker to the partner of another, or move an open marker
// to a free midline vertex.
inline std::vector<int> symmetrize_markers(const std::vector<int>& indices,
                                           const SymmetricPairing& pairing,
                                           const MeshSample& tmpl) {
  const int K = static_cast<int>(indices.size());
  if (K < 1) throw param_error("symmetrize_markers: empty marker list");
  const int M = static_cast<int>(tmpl.vertices.rows());
  for (int v : indices)
    if (v < 0 || v >= M) throw param_error("symmetrize_markers: marker index out of range");

  std::vector<int> side(static_cast<std::size_t>(M), 0);
  for (const auto& [pos, neg] : pairing.pairs) {
    side[static_cast<std::size_t>(pos)] = 1;
    side[static_cast<std::size_t>(neg)] = -1;
  }

  std::vector<int> out = indices;
  std::vector<std::uint8_t> in_out(static_cast<std::size_t>(M), 0);
  for (int v : out) in_out[static_cast<std::size_t>(v)] = 1;

  const auto dist = [&](int a, int b) {
    return (tmpl.vertices.row(a) - tmpl.vertices.row(b)).norm();
  };

  std::vector<int> left_slots, right_slots;
  for (int s = 0; s < K; ++s) {
    const int sd = side[static_cast<std::size_t>(out[static_cast<std::size_t>(s)])];
    if (sd > 0) left_slots.push_back(s);
    if (sd < 0) right_slots.push_back(s);
  }
  std::vector<std::uint8_t> left_used(left_slots.size(), 0);
  std::vector<std::uint8_t> right_done(right_slots.size(), 0);

  // matching: commit the cheapest legal (right marker, left partner) move
  // until none is left; an occupied partner vertex can free up once the
  // marker sitting on it is itself replaced, hence the rescan per commit
  for (;;) {
    double best_d = std::numeric_limits<double>::infinity();
    std::size_t best_li = 0, best_ri = 0;
    int best_pv = -1;
    for (std::size_t li = 0; li < left_slots.size(); ++li) {
      if (left_used[li]) continue;
      const int lv = out[static_cast<std::size_t>(left_slots[li])];
      const int pv = pairing.partner_of(lv);
      for (std::size_t ri = 0; ri < right_slots.size(); ++ri) {
        if (right_done[ri]) continue;
        const int rv = out[static_cast<std::size_t>(right_slots[ri])];
        if (in_out[static_cast<std::size_t>(pv)] && pv != rv) continue;
        const double d = dist(pv, rv);
        if (d < best_d || (d == best_d && best_pv >= 0 &&
                           std::pair(lv, rv) < std::pair(out[static_cast<std::size_t>(left_slots[best_li])],
                                                         out[static_cast<std::size_t>(right_slots[best_ri])]))) {
          best_d = d;
          best_li = li;
          best_ri = ri;
          best_pv = pv;
        }
      }
    }
    if (best_pv < 0) break;
    left_used[best_li] = 1;
    right_done[best_ri] = 1;
    const int slot = right_slots[best_ri];
    in_out[static_cast<std::size_t>(out[static_cast<std::size_t>(slot)])] = 0;
    in_out[static_cast<std::size_t>(best_pv)] = 1;
    out[static_cast<std::size_t>(slot)] = best_pv;
  }

  // repair: close the leftovers, cheapest move first
  auto unpaired_slots = [&]() {
    std::vector<int> open;
    for (int s = 0; s < K; ++s) {
      const int v = out[static_cast<std::size_t>(s)];
      if (pairing.is_midline(v)) continue;
      const int p = pairing.partner_of(v);
      if (p < 0 || !in_out[static_cast<std::size_t>(p)]) open.push_back(s);
    }
    return open;
  };

  const auto commit = [&](int slot, int nv) {
    in_out[static_cast<std::size_t>(out[static_cast<std::size_t>(slot)])] = 0;
    in_out[static_cast<std::size_t>(nv)] = 1;
    out[static_cast<std::size_t>(slot)] = nv;
  };

  std::vector<int> open = unpaired_slots();
  if (open.size() % 2 == 1) {
    // an odd leftover count means exactly one marker must land on the
    // midline; spend the move on the cheapest relocation
    double best_d = std::numeric_limits<double>::infinity();
    int best_slot = -1, best_mv = -1;
    for (int slot : open) {
      const int v = out[static_cast<std::size_t>(slot)];
      for (int mv : pairing.midline) {
        if (in_out[static_cast<std::size_t>(mv)]) continue;
        const double d = dist(mv, v);
        if (d < best_d || (d == best_d && best_slot >= 0 && std::pair(mv, v) < std::pair(best_mv, out[static_cast<std::size_t>(best_slot)]))) {
          best_d = d;
          best_slot = slot;
          best_mv = mv;
        }
      }
    }
    if (best_slot < 0) throw error("symmetrize_markers: cannot mirror-close the marker set");
    commit(best_slot, best_mv);
    open = unpaired_slots();
  }

  while (!open.empty()) {
    // rewrite one open marker to the partner of another, cheapest move first
    double best_d = std::numeric_limits<double>::infinity();
    int best_slot = -1, best_new = -1;
    for (std::size_t i = 0; i < open.size(); ++i) {
      const int anchor = out[static_cast<std::size_t>(open[i])];
      // an open marker's partner vertex is never occupied: were it in the
      // set, the marker would be closed already
      const int target = pairing.partner_of(anchor);
      for (std::size_t j = 0; j < open.size(); ++j) {
        if (j == i) continue;
        const int v = out[static_cast<std::size_t>(open[j])];
        const double d = dist(target, v);
        if (d < best_d || (d == best_d && best_slot >= 0 && std::pair(target, v) < std::pair(best_new, out[static_cast<std::size_t>(best_slot)]))) {
          best_d = d;
          best_slot = open[j];
          best_new = target;
        }
      }
    }
    if (best_slot < 0) throw error("symmetrize_markers: cannot mirror-close the marker set");
    commit(best_slot, best_new);
    open = unpaired_slots();
  }
  return out;
}

// Simplex regression of every vertex trajectory onto the marker trajectories.
inline Eigen::MatrixXd refit_coefficients(const DataMatrix& data, const std::vector<int>& indices,
                                          const SimplexLsOptions& opts = {}) {
  const int K = static_cast<int>(indices.size());
  if (K < 1) throw param_error("refit_coefficients: no markers");
  Eigen::MatrixXd Zt(data.X.rows(), K);
  for (int k = 0; k < K; ++k) {
    const int v = indices[static_cast<std::size_t>(k)];
    if (v < 0 || v >= data.n_vertices) throw param_error("refit_coefficients: index out of range");
    Zt.col(k) = data.X.col(v);
  }
  const Eigen::MatrixXd G = Zt.transpose() * Zt;
  const Eigen::MatrixXd H = Zt.transpose() * data.X;
  Eigen::MatrixXd A(K, data.X.cols());
  const Eigen::VectorXd col_norms2 = data.X.colwise().squaredNorm();
  std::vector<int> slot_of(static_cast<std::size_t>(data.n_vertices), -1);
  for (int k = 0; k < K; ++k) slot_of[static_cast<std::size_t>(indices[static_cast<std::size_t>(k)])] = k;
  parallel_for(data.X.cols(), [&](std::ptrdiff_t i) {
    const int slot = slot_of[static_cast<std::size_t>(i)];
    if (slot >= 0) {
      // a marker column equals its own trajectory, so the unit vector attains
      // objective zero, the global minimum
      A.col(i).setZero();
      A(slot, i) = 1.0;
    } else {
      A.col(i) = simplex_ls_gram(G, H.col(i), col_norms2[i], nullptr, opts).w;
    }
  });
  return A;
}

// (Frobenius-squared, mean per-vertex mm) of reconstructing every sample from
// its own marker vertex positions through A_sym.
inline std::pair<double, double> marker_reconstruction_error(const DataMatrix& data,
                                                             const MarkerSet& ms) {
  Eigen::MatrixXd Zt(data.X.rows(), ms.n_markers());
  for (int k = 0; k < ms.n_markers(); ++k) Zt.col(k) = data.X.col(ms.vertex_indices[static_cast<std::size_t>(k)]);
  const Eigen::MatrixXd R = data.X - Zt * ms.A_sym;
  double mm = 0.0;
  for (int n = 0; n < data.n_samples; ++n)
    for (int i = 0; i < data.n_vertices; ++i) mm += R.block<3, 1>(3 * n, i).norm();
  mm /= static_cast<double>(data.n_samples) * static_cast<double>(data.n_vertices);
  return {R.squaredNorm(), mm};
}

inline MarkerSet build_marker_set(const ArchetypeModel& model, const DataMatrix& data,
                                  const SymmetricPairing& pairing, const MeshSample& tmpl,
                                  const SimplexLsOptions& refit_opts = {}) {
  MarkerSet ms;
  const std::vector<int> snapped = snap_to_vertices(model, data);
  ms.vertex_indices = symmetrize_markers(snapped, pairing, tmpl);
  ms.A_sym = refit_coefficients(data, ms.vertex_indices, refit_opts);
  ms.template_positions.resize(ms.n_markers(), 3);
  for (int k = 0; k < ms.n_markers(); ++k) {
    const int v = ms.vertex_indices[static_cast<std::size_t>(k)];
    ms.template_positions.row(k) = tmpl.vertices.row(v);
    if (pairing.is_midline(v)) ms.midline_markers.push_back(v);
  }
  ms.validate(&pairing);
  return ms;
}

// Ablation baseline: K uniformly random distinct vertices, coefficients refit,
// no symmetrization.
inline MarkerSet baseline_random_markers(const DataMatrix& data, int K, std::uint64_t seed) {
  if (K < 1 || K > data.n_vertices) throw param_error("baseline_random_markers: bad K");
  Rng rng(seed);
  MarkerSet ms;
  ms.vertex_indices = rng.sample_without_replacement(data.n_vertices, K);
  ms.A_sym = refit_coefficients(data, ms.vertex_indices);
  ms.template_positions.resize(K, 3);
  for (int k = 0; k < K; ++k) {
    const int v = ms.vertex_indices[static_cast<std::size_t>(k)];
    // sample 0 is the template by the dataset convention
    for (int c = 0; c < 3; ++c) ms.template_positions(k, c) = data.X(c, v);
  }
  ms.validate();
  return ms;
}

// Best rank-K Frobenius-squared reconstruction error of the mean-centered
// data matrix: sum of squared singular values beyond the first K. Lower
// bound for any K-archetype factorization because simplex-weighted columns
// lie in an affine set of dimension K - 1.
inline double baseline_pca_error(const DataMatrix& data, int K) {
  if (K < 0) throw param_error("baseline_pca_error: K must be >= 0");
  const Eigen::MatrixXd centered = data.X.colwise() - data.X.rowwise().mean().eval();
  const Eigen::BDCSVD<Eigen::MatrixXd> svd(centered);
  const auto& sv = svd.singularValues();
  double err = 0.0;
  for (Eigen::Index r = K; r < sv.size(); ++r) err += sv[r] * sv[r];
  return err;
}

}  // namespace vmark
