#pragma once

#include <Eigen/Dense>
#include <cassert>
#include <cmath>
#include <limits>
#include <vector>

#include "vmark/common.hpp"

namespace vmark {

struct SimplexLsOptions {
  double tol = 1e-8;  // KKT residual threshold
  int max_iter = 500;
};

struct SimplexLsResult {
  Eigen::VectorXd w;
  double objective = 0.0;  // ||t - D w||^2
  double kkt_residual = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Euclidean projection onto the probability simplex (sort and threshold).
inline Eigen::VectorXd project_to_simplex(const Eigen::VectorXd& v) {
  const Eigen::Index d = v.size();
  if (d == 0) throw param_error("project_to_simplex: empty vector");
  std::vector<double> u(v.data(), v.data() + d);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double cum = 0.0;
  double tau = 0.0;
  int support = 0;
  for (Eigen::Index k = 0; k < d; ++k) {
    cum += u[static_cast<std::size_t>(k)];
    const double cand = (cum - 1.0) / static_cast<double>(k + 1);
    if (u[static_cast<std::size_t>(k)] - cand > 0.0) {
      tau = cand;
      support = static_cast<int>(k + 1);
    }
  }
  (void)support;
  Eigen::VectorXd w = (v.array() - tau).max(0.0);
  const double s = w.sum();
  if (s > 0.0) w /= s;  // counters rounding drift; exact inputs are unchanged
  return w;
}

namespace detail {

// G w for a w with small support, column by column
inline Eigen::VectorXd gram_times_sparse(const Eigen::MatrixXd& G, const Eigen::VectorXd& w) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(G.rows());
  for (Eigen::Index i = 0; i < w.size(); ++i)
    if (w[i] != 0.0) out.noalias() += w[i] * G.col(i);
  return out;
}

// KKT residual for min ||t - D w||^2 over the simplex, stated on the gradient
// g = 2 (G w - h): mu is the minimum of g over the support; stationarity asks
// |g_i - mu| ~ 0 on the support and g_i >= mu off it.
inline double simplex_kkt_residual(const Eigen::VectorXd& g, const Eigen::VectorXd& w) {
  double mu = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < w.size(); ++i)
    if (w[i] > 0.0) mu = std::min(mu, g[i]);
  double r = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (w[i] > 0.0)
      r = std::max(r, std::abs(g[i] - mu));
    else
      r = std::max(r, std::max(0.0, mu - g[i]));
  }
  return r;
}

}  // namespace detail

// Active-set least squares over the simplex, Gram form: minimizes
// w' G w - 2 h' w + tt with G = D'D, h = D't, tt = t't. Returned objective is
// never above the starting point's; ties in pivoting break toward the lowest
// index so the iterate sequence is deterministic.
inline SimplexLsResult simplex_ls_gram(const Eigen::MatrixXd& G, const Eigen::VectorXd& h,
                                       double tt, const Eigen::VectorXd* w0,
                                       const SimplexLsOptions& opts = {}) {
  const Eigen::Index d = G.rows();
  if (d == 0 || G.cols() != d || h.size() != d)
    throw param_error("simplex_ls: inconsistent Gram dimensions");
  if (opts.tol <= 0.0 || opts.max_iter < 1) throw param_error("simplex_ls: bad options");

  SimplexLsResult res;
  if (d == 1) {
    res.w = Eigen::VectorXd::Ones(1);
    res.objective = std::max(0.0, G(0, 0) - 2.0 * h[0] + tt);
    res.kkt_residual = 0.0;
    res.converged = true;
    return res;
  }

  Eigen::VectorXd w;
  if (w0 != nullptr) {
    if (w0->size() != d) throw param_error("simplex_ls: warm start has wrong size");
    w = project_to_simplex(*w0);
  } else {
    w = Eigen::VectorXd::Constant(d, 1.0 / static_cast<double>(d));
  }

  const auto objective = [&](const Eigen::VectorXd& x) {
    return x.dot(detail::gram_times_sparse(G, x)) - 2.0 * h.dot(x) + tt;
  };

  std::vector<Eigen::Index> support;
  support.reserve(static_cast<std::size_t>(d));
  for (Eigen::Index i = 0; i < d; ++i)
    if (w[i] > 0.0) support.push_back(i);

  const double ridge = 1e-12 * (1.0 + G.diagonal().cwiseAbs().maxCoeff());
#ifndef NDEBUG
  double f_prev = objective(w);
  // the Gram form of the objective carries cancellation noise proportional to
  // the data scale, so the monotonicity slack must scale with it too
  const double f_slack = 1e-10 * (1.0 + std::abs(tt) + G.diagonal().cwiseAbs().maxCoeff());
#endif

  Eigen::VectorXd g(d);
  for (int iter = 1; iter <= opts.max_iter; ++iter) {
    res.iterations = iter;
    const Eigen::Index s = static_cast<Eigen::Index>(support.size());

    // equality-constrained subproblem on the support via a bordered system
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(s + 1, s + 1);
    Eigen::VectorXd rhs(s + 1);
    for (Eigen::Index a = 0; a < s; ++a) {
      for (Eigen::Index b = 0; b < s; ++b) kkt(a, b) = 2.0 * G(support[a], support[b]);
      kkt(a, a) += 2.0 * ridge;
      kkt(a, s) = 1.0;
      kkt(s, a) = 1.0;
      rhs[a] = 2.0 * h[support[a]];
    }
    rhs[s] = 1.0;
    Eigen::VectorXd sol = kkt.partialPivLu().solve(rhs);
    if (!sol.allFinite()) {
      // retry with a stronger ridge before giving up on this subproblem
      for (Eigen::Index a = 0; a < s; ++a) kkt(a, a) += 1e-6 * (1.0 + G.diagonal().cwiseAbs().maxCoeff());
      sol = kkt.partialPivLu().solve(rhs);
      if (!sol.allFinite()) break;
    }

    double umin = std::numeric_limits<double>::infinity();
    for (Eigen::Index a = 0; a < s; ++a) umin = std::min(umin, sol[a]);

    if (umin >= -1e-12) {
      // feasible: accept, then test optimality over the full index set
      w.setZero();
      for (Eigen::Index a = 0; a < s; ++a) w[support[a]] = std::max(0.0, sol[a]);
      w /= w.sum();
      g = 2.0 * (detail::gram_times_sparse(G, w) - h);
      const double r = detail::simplex_kkt_residual(g, w);
      if (r <= opts.tol) {
        res.converged = true;
        res.kkt_residual = r;
        break;
      }
      double mu = std::numeric_limits<double>::infinity();
      for (Eigen::Index i = 0; i < d; ++i)
        if (w[i] > 0.0) mu = std::min(mu, g[i]);
      Eigen::Index enter = -1;
      double worst = 0.0;
      for (Eigen::Index i = 0; i < d; ++i) {
        if (w[i] > 0.0) continue;
        const double viol = mu - g[i];
        if (viol > worst) {
          worst = viol;
          enter = i;
        }
      }
      if (enter < 0) {
        // support gradients disagree beyond tol yet no entering index exists;
        // the subproblem solve is as good as the conditioning allows
        res.kkt_residual = r;
        break;
      }
      support.clear();
      for (Eigen::Index i = 0; i < d; ++i)
        if (w[i] > 0.0) support.push_back(i);
      support.push_back(enter);
      std::sort(support.begin(), support.end());
    } else {
      // infeasible target: step to the first blocking bound, shrink support
      double alpha = 1.0;
      for (Eigen::Index a = 0; a < s; ++a) {
        if (sol[a] < 0.0) {
          const double wa = w[support[a]];
          alpha = std::min(alpha, wa / (wa - sol[a]));
        }
      }
      std::vector<Eigen::Index> kept;
      kept.reserve(support.size());
      for (Eigen::Index a = 0; a < s; ++a) {
        const double nv = w[support[a]] + alpha * (sol[a] - w[support[a]]);
        w[support[a]] = nv;
        if (nv > 1e-14)
          kept.push_back(support[a]);
        else
          w[support[a]] = 0.0;
      }
      if (kept.empty()) kept.push_back(support[0]);
      const double ssum = w.sum();
      if (ssum > 0.0) w /= ssum;
      support = std::move(kept);
    }

#ifndef NDEBUG
    const double f_now = objective(w);
    assert(f_now <= f_prev + f_slack + 1e-9 * std::abs(f_prev));
    f_prev = f_now;
#endif
  }

  g = 2.0 * (detail::gram_times_sparse(G, w) - h);
  res.kkt_residual = detail::simplex_kkt_residual(g, w);
  if (res.kkt_residual <= opts.tol) res.converged = true;
  res.w = w;
  res.objective = std::max(0.0, objective(w));
  return res;
}

// min over the simplex of ||t - D w||^2 for explicit D (3N x d) and t.
inline SimplexLsResult simplex_ls(const Eigen::MatrixXd& D, const Eigen::VectorXd& t,
                                  const Eigen::VectorXd* w0 = nullptr,
                                  const SimplexLsOptions& opts = {}) {
  if (D.rows() != t.size()) throw param_error("simplex_ls: D and t disagree on rows");
  if (D.cols() == 0) throw param_error("simplex_ls: no columns");
  const Eigen::MatrixXd G = D.transpose() * D;
  const Eigen::VectorXd h = D.transpose() * t;
  SimplexLsResult res = simplex_ls_gram(G, h, t.squaredNorm(), w0, opts);
  res.objective = std::max(0.0, (t - D * res.w).squaredNorm());
  return res;
}

// Exhaustive oracle for d <= 4: barycentric grid search followed by projected
// gradient refinement. Independent of the active-set path by construction.
inline SimplexLsResult brute_force_simplex_ls(const Eigen::MatrixXd& D, const Eigen::VectorXd& t,
                                              double grid_step = 1e-2) {
  const Eigen::Index d = D.cols();
  if (d < 1 || d > 4) throw param_error("brute_force_simplex_ls: d must be in [1,4]");
  if (grid_step <= 0.0 || grid_step > 1e-2)
    throw param_error("brute_force_simplex_ls: grid_step must be in (0, 1e-2]");
  if (D.rows() != t.size()) throw param_error("brute_force_simplex_ls: D and t disagree on rows");

  const Eigen::MatrixXd G = D.transpose() * D;
  const Eigen::VectorXd h = D.transpose() * t;
  const double tt = t.squaredNorm();
  const auto objective = [&](const Eigen::VectorXd& x) {
    return x.dot(G * x) - 2.0 * h.dot(x) + tt;
  };

  SimplexLsResult res;
  if (d == 1) {
    res.w = Eigen::VectorXd::Ones(1);
    res.objective = std::max(0.0, objective(res.w));
    res.converged = true;
    return res;
  }

  const int m = std::max(1, static_cast<int>(std::lround(1.0 / grid_step)));
  Eigen::VectorXd best;
  double fbest = std::numeric_limits<double>::infinity();
  Eigen::VectorXd x(d);
  // compositions of m into d nonnegative parts
  if (d == 2) {
    for (int a = 0; a <= m; ++a) {
      x << static_cast<double>(a) / m, static_cast<double>(m - a) / m;
      const double f = objective(x);
      if (f < fbest) {
        fbest = f;
        best = x;
      }
    }
  } else if (d == 3) {
    for (int a = 0; a <= m; ++a)
      for (int b = 0; b <= m - a; ++b) {
        x << static_cast<double>(a) / m, static_cast<double>(b) / m,
            static_cast<double>(m - a - b) / m;
        const double f = objective(x);
        if (f < fbest) {
          fbest = f;
          best = x;
        }
      }
  } else {
    for (int a = 0; a <= m; ++a)
      for (int b = 0; b <= m - a; ++b)
        for (int c = 0; c <= m - a - b; ++c) {
          x << static_cast<double>(a) / m, static_cast<double>(b) / m,
              static_cast<double>(c) / m, static_cast<double>(m - a - b - c) / m;
          const double f = objective(x);
          if (f < fbest) {
            fbest = f;
            best = x;
          }
        }
  }

  // accelerated projected gradient from the best grid point; the O(1/k^2)
  // guarantee reaches ~1e-8 objective accuracy even on singular G
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
  const double lmax = es.eigenvalues().maxCoeff();
  if (lmax > 0.0) {
    const double step = 1.0 / (2.0 * lmax);
    Eigen::VectorXd wk = best, yk = best;
    double tk = 1.0;
    for (int it = 0; it < 50000; ++it) {
      const Eigen::VectorXd grad = 2.0 * (G * yk - h);
      const Eigen::VectorXd wn = project_to_simplex(yk - step * grad);
      const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
      yk = wn + ((tk - 1.0) / tn) * (wn - wk);
      const double move = (wn - wk).lpNorm<Eigen::Infinity>();
      wk = wn;
      tk = tn;
      res.iterations = it + 1;
      const double f = objective(wk);
      if (f < fbest) {
        fbest = f;
        best = wk;
      }
      if (move < 1e-16) break;
    }
  }

  // exact polish: equality-constrained solve on the detected support, kept
  // only if feasible and globally optimal by the KKT test
  {
    std::vector<Eigen::Index> supp;
    for (Eigen::Index i = 0; i < d; ++i)
      if (best[i] > 1e-9) supp.push_back(i);
    const Eigen::Index s = static_cast<Eigen::Index>(supp.size());
    if (s > 0) {
      Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(s + 1, s + 1);
      Eigen::VectorXd rhs(s + 1);
      for (Eigen::Index a = 0; a < s; ++a) {
        for (Eigen::Index b = 0; b < s; ++b) kkt(a, b) = 2.0 * G(supp[a], supp[b]);
        kkt(a, s) = 1.0;
        kkt(s, a) = 1.0;
        rhs[a] = 2.0 * h[supp[a]];
      }
      rhs[s] = 1.0;
      const Eigen::VectorXd sol = kkt.fullPivLu().solve(rhs);
      if (sol.allFinite()) {
        Eigen::VectorXd cand = Eigen::VectorXd::Zero(d);
        bool feasible = true;
        for (Eigen::Index a = 0; a < s; ++a) {
          if (sol[a] < -1e-12) feasible = false;
          cand[supp[a]] = std::max(0.0, sol[a]);
        }
        if (feasible && std::abs(cand.sum() - 1.0) < 1e-9) {
          cand /= cand.sum();
          const Eigen::VectorXd g = 2.0 * (G * cand - h);
          if (detail::simplex_kkt_residual(g, cand) <= 1e-9 && objective(cand) <= fbest) {
            fbest = objective(cand);
            best = cand;
          }
        }
      }
    }
  }

  res.w = best;
  res.objective = std::max(0.0, (t - D * best).squaredNorm());
  const Eigen::VectorXd g = 2.0 * (G * best - h);
  res.kkt_residual = detail::simplex_kkt_residual(g, best);
  res.converged = true;
  return res;
}

}  // namespace vmark
