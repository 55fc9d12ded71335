#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "vmark/common.hpp"
#include "vmark/dataset.hpp"
#include "vmark/simplex.hpp"

namespace vmark {

struct FitOptions {
  int n_markers = 32;
  enum class Init { furthest_sum, random_vertices };
  Init init = Init::furthest_sum;
  std::uint64_t seed = 0;
  double outer_tol = 1e-6;   // relative objective decrease per sweep
  int max_outer_iters = 200;
  int restarts = 5;
  SimplexLsOptions inner;
};

struct FitHistory {
  std::vector<double> objective_per_iter;  // ||X - Z A||_F^2 after each sweep
  bool converged = false;
  bool degenerate_warning = false;  // all data columns identical
};

// X ~ Z A with Z = X B; columns of B (M x K) and A (K x M) live on the
// probability simplex, so archetypes are convex blends of data columns and
// every column is reconstructed as a convex blend of archetypes.
struct ArchetypeModel {
  Eigen::MatrixXd B;
  Eigen::MatrixXd A;
  Eigen::MatrixXd Z;
  int n_markers = 0;
};

namespace detail {

inline std::vector<int> furthest_sum_indices(const Eigen::MatrixXd& X, int K, Rng& rng) {
  const Eigen::Index M = X.cols();
  const Eigen::VectorXd norms2 = X.colwise().squaredNorm();
  const auto dist_to = [&](Eigen::Index v) {
    // Euclidean distances from every column to column v
    Eigen::VectorXd d = (norms2.array() + norms2[v] - 2.0 * (X.transpose() * X.col(v)).array())
                            .max(0.0)
                            .sqrt();
    return d;
  };

  std::vector<int> selected;
  std::vector<std::uint8_t> in_set(static_cast<std::size_t>(M), 0);
  Eigen::VectorXd cum = Eigen::VectorXd::Zero(M);

  const Eigen::Index first = static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::uint64_t>(M)));
  selected.push_back(static_cast<int>(first));
  in_set[static_cast<std::size_t>(first)] = 1;
  cum += dist_to(first);

  auto pick_next = [&]() {
    Eigen::Index best = -1;
    double best_val = -1.0;
    for (Eigen::Index j = 0; j < M; ++j) {
      if (in_set[static_cast<std::size_t>(j)]) continue;
      if (cum[j] > best_val) {
        best_val = cum[j];
        best = j;
      }
    }
    return best;
  };

  while (static_cast<int>(selected.size()) < K) {
    const Eigen::Index nxt = pick_next();
    selected.push_back(static_cast<int>(nxt));
    in_set[static_cast<std::size_t>(nxt)] = 1;
    cum += dist_to(nxt);
  }

  // one drop-and-reselect pass; the initial random pick is revisited first
  for (std::size_t s = 0; s < selected.size(); ++s) {
    const Eigen::Index old = selected[s];
    cum -= dist_to(old);
    in_set[static_cast<std::size_t>(old)] = 0;
    const Eigen::Index repl = pick_next();
    selected[s] = static_cast<int>(repl);
    in_set[static_cast<std::size_t>(repl)] = 1;
    cum += dist_to(repl);
  }
  return selected;
}

}  // namespace detail

inline Eigen::MatrixXd initialize_archetypes(const Eigen::MatrixXd& X, const FitOptions& opts) {
  const Eigen::Index M = X.cols();
  const int K = opts.n_markers;
  if (K < 1 || K > M) throw param_error("initialize_archetypes: K must be in [1, M]");
  std::vector<int> idx;
  Rng rng(opts.seed);
  if (K == static_cast<int>(M)) {
    idx.resize(static_cast<std::size_t>(M));
    for (int i = 0; i < M; ++i) idx[static_cast<std::size_t>(i)] = i;
  } else if (opts.init == FitOptions::Init::random_vertices) {
    idx = rng.sample_without_replacement(static_cast<int>(M), K);
  } else {
    idx = detail::furthest_sum_indices(X, K, rng);
  }
  Eigen::MatrixXd B0 = Eigen::MatrixXd::Zero(M, K);
  for (int k = 0; k < K; ++k) B0(idx[static_cast<std::size_t>(k)], k) = 1.0;
  return B0;
}

namespace detail {

inline std::pair<ArchetypeModel, FitHistory> fit_archetypes_single(const Eigen::MatrixXd& X,
                                                                   const FitOptions& opts) {
  const Eigen::Index M = X.cols();
  const int K = opts.n_markers;

  ArchetypeModel model;
  model.n_markers = K;
  model.B = initialize_archetypes(X, opts);
  model.Z.resize(X.rows(), K);
  for (int k = 0; k < K; ++k) {
    Eigen::Index idx = 0;
    model.B.col(k).maxCoeff(&idx);
    model.Z.col(k) = X.col(idx);
  }
  model.A = Eigen::MatrixXd::Zero(K, M);

  FitHistory hist;
  {
    double spread = 0.0;
    for (Eigen::Index i = 1; i < M; ++i)
      spread = std::max(spread, (X.col(i) - X.col(0)).lpNorm<Eigen::Infinity>());
    hist.degenerate_warning = spread == 0.0;
  }

  const Eigen::VectorXd col_norms2 = X.colwise().squaredNorm();
  const Eigen::MatrixXd Gx = X.transpose() * X;
  Eigen::MatrixXd R(X.rows(), M);
  double prev_obj = std::numeric_limits<double>::infinity();
  bool have_A = false;

  for (int sweep = 0; sweep < opts.max_outer_iters; ++sweep) {
    // A-step: per-column simplex regression onto the current archetypes
    const Eigen::MatrixXd Gz = model.Z.transpose() * model.Z;
    const Eigen::MatrixXd Hz = model.Z.transpose() * X;
    const bool warm = have_A;
    parallel_for(M, [&](std::ptrdiff_t i) {
      const Eigen::VectorXd w0 = model.A.col(i);
      const auto res = simplex_ls_gram(Gz, Hz.col(i), col_norms2[i], warm ? &w0 : nullptr, opts.inner);
      model.A.col(i) = res.w;
    });
    have_A = true;

    R.noalias() = X - model.Z * model.A;

    // B-step: per archetype, the objective restricted to z_j is a simplex
    // regression onto the data columns with target R a_j' / |a_j|^2 + z_j
    for (int j = 0; j < K; ++j) {
      const Eigen::VectorXd a = model.A.row(j).transpose();
      const double na2 = a.squaredNorm();
      if (na2 < 1e-10) {
        // unused archetype: restart it at the worst-reconstructed column
        Eigen::Index worst = 0;
        double worst_norm = -1.0;
        for (Eigen::Index i = 0; i < M; ++i) {
          const double rn = R.col(i).squaredNorm();
          if (rn > worst_norm) {
            worst_norm = rn;
            worst = i;
          }
        }
        model.B.col(j).setZero();
        model.B(worst, j) = 1.0;
        model.Z.col(j) = X.col(worst);
        continue;
      }
      const Eigen::VectorXd t = R * (a / na2) + model.Z.col(j);
      const Eigen::VectorXd h = X.transpose() * t;
      const Eigen::VectorXd b0 = model.B.col(j);
      const auto res = simplex_ls_gram(Gx, h, t.squaredNorm(), &b0, opts.inner);
      const Eigen::VectorXd z_old = model.Z.col(j);
      model.B.col(j) = res.w;
      Eigen::VectorXd z_new = Eigen::VectorXd::Zero(X.rows());
      for (Eigen::Index i = 0; i < M; ++i)
        if (res.w[i] != 0.0) z_new += res.w[i] * X.col(i);
      model.Z.col(j) = z_new;
      // rank-one residual refresh restricted to the columns that use j
      const Eigen::VectorXd dz = z_old - z_new;
      for (Eigen::Index i = 0; i < M; ++i)
        if (a[i] != 0.0) R.col(i) += dz * a[i];
    }

    const double obj = R.squaredNorm();
    hist.objective_per_iter.push_back(obj);
    if (std::isfinite(prev_obj)) {
      const double rel = (prev_obj - obj) / std::max(prev_obj, 1e-300);
      if (rel < opts.outer_tol) {
        hist.converged = true;
        break;
      }
    }
    if (obj == 0.0) {
      hist.converged = true;
      break;
    }
    prev_obj = obj;
  }

  model.Z.noalias() = X * model.B;  // canonical form: Z recomputable from B
  return {std::move(model), std::move(hist)};
}

}  // namespace detail

inline std::pair<ArchetypeModel, FitHistory> fit_archetypes(const Eigen::MatrixXd& X,
                                                            const FitOptions& opts) {
  if (X.rows() < 1 || X.cols() < 1) throw param_error("fit_archetypes: empty data");
  if (opts.n_markers < 1 || opts.n_markers > X.cols())
    throw param_error("fit_archetypes: K must be in [1, M]");
  if (opts.restarts < 1) throw param_error("fit_archetypes: restarts must be >= 1");
  if (opts.outer_tol <= 0.0 || opts.max_outer_iters < 1)
    throw param_error("fit_archetypes: bad outer loop options");

  std::pair<ArchetypeModel, FitHistory> best;
  double best_obj = std::numeric_limits<double>::infinity();
  for (int r = 0; r < opts.restarts; ++r) {
    FitOptions o = opts;
    o.seed = opts.seed + static_cast<std::uint64_t>(r);
    auto cand = detail::fit_archetypes_single(X, o);
    const double obj = cand.second.objective_per_iter.empty()
                           ? std::numeric_limits<double>::infinity()
                           : cand.second.objective_per_iter.back();
    if (obj < best_obj) {
      best_obj = obj;
      best = std::move(cand);
    }
  }
  return best;
}

inline std::pair<ArchetypeModel, FitHistory> fit_archetypes(const DataMatrix& data,
                                                            const FitOptions& opts) {
  return fit_archetypes(data.X, opts);
}

// (Frobenius-squared error, mean per-vertex distance in mm)
inline std::pair<double, double> reconstruction_error(const DataMatrix& data,
                                                      const ArchetypeModel& model) {
  if (model.Z.rows() != data.X.rows() || model.A.cols() != data.X.cols())
    throw param_error("reconstruction_error: model does not match data matrix");
  const Eigen::MatrixXd R = data.X - model.Z * model.A;
  const double frob2 = R.squaredNorm();
  double mm = 0.0;
  for (int n = 0; n < data.n_samples; ++n)
    for (int i = 0; i < data.n_vertices; ++i)
      mm += R.block<3, 1>(3 * n, i).norm();
  mm /= static_cast<double>(data.n_samples) * static_cast<double>(data.n_vertices);
  return {frob2, mm};
}

}  // namespace vmark
