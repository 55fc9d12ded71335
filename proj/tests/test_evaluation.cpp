#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <cmath>

#include "procrustes_oracle.hpp"
#include "vmark/evaluation.hpp"

using Catch::Approx;

namespace {

vmark::MeshSample mesh_from(const Eigen::MatrixX3d& v) {
  vmark::MeshSample m;
  m.vertices = v;
  return m;
}

Eigen::MatrixX3d random_points(vmark::Rng& rng, int n, double scale) {
  Eigen::MatrixX3d p(n, 3);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) p(i, c) = rng.uniform(-scale, scale);
  return p;
}

Eigen::Matrix3d random_rotation(vmark::Rng& rng) {
  const Eigen::Vector3d axis = Eigen::Vector3d(rng.gaussian(), rng.gaussian(), rng.gaussian()).normalized();
  return Eigen::AngleAxisd(rng.uniform(0.0, 6.28318), axis).toRotationMatrix();
}

// column-stochastic regressor with a few nonzeros per joint
Eigen::MatrixXd random_regressor(vmark::Rng& rng, int m, int j) {
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(m, j);
  for (int q = 0; q < j; ++q) {
    double sum = 0.0;
    for (int i = 0; i < m; ++i) {
      const double v = rng.uniform();
      G(i, q) = v;
      sum += v;
    }
    G.col(q) /= sum;
  }
  return G;
}

vmark::FaceMatrix two_triangles() {
  vmark::FaceMatrix f(2, 3);
  f << 0, 1, 2, 1, 3, 2;
  return f;
}

}  // namespace

TEST_CASE("marker loss is the mean absolute coordinate gap") {
  vmark::Rng rng(1);
  const auto P = random_points(rng, 7, 100.0);
  CHECK(vmark::loss_vm(P, P) == 0.0);

  Eigen::MatrixX3d Q(1, 3), G(1, 3);
  G << 10.0, -4.0, 7.0;
  Q = G;
  Q(0, 1) += 3.0;
  CHECK(vmark::loss_vm(Q, G) == Approx(1.0));

  const auto R = random_points(rng, 7, 100.0);
  double naive = 0.0;
  for (int i = 0; i < 7; ++i)
    for (int c = 0; c < 3; ++c) naive += std::abs(P(i, c) - R(i, c));
  naive /= 21.0;
  CHECK(vmark::loss_vm(P, R) == Approx(naive).epsilon(1e-12));

  CHECK_THROWS_AS(vmark::loss_vm(P, Q), vmark::param_error);
}

TEST_CASE("confidence loss reads the voxel containing the target") {
  vmark::VoxelGrid g;
  g.dims = {8, 8, 8};
  g.voxel_size = Eigen::Vector3d(10.0, 10.0, 10.0);

  Eigen::MatrixX3d gt(1, 3);
  gt << g.center(2, 3, 4).transpose();

  vmark::VoxelHeatmapSet delta;
  delta.grid = g;
  delta.values.emplace_back(Eigen::VectorXd::Zero(g.n_voxels()));
  delta.values[0][g.flat_index(2, 3, 4)] = 1.0;
  CHECK(vmark::loss_conf(delta, gt) == Approx(0.0).margin(1e-9));

  // anywhere inside the same voxel reads the same score
  Eigen::MatrixX3d off = gt;
  off(0, 0) += 4.9;
  off(0, 2) -= 4.9;
  CHECK(vmark::loss_conf(delta, off) == Approx(0.0).margin(1e-9));

  vmark::VoxelHeatmapSet uni;
  uni.grid = g;
  uni.values.emplace_back(Eigen::VectorXd::Constant(g.n_voxels(), 1.0 / 512.0));
  uni.values.emplace_back(Eigen::VectorXd::Constant(g.n_voxels(), 1.0 / 512.0));
  Eigen::MatrixX3d gt2(2, 3);
  gt2 << gt, gt;
  CHECK(vmark::loss_conf(uni, gt2) == Approx(2.0 * std::log(512.0)).epsilon(1e-9));

  // centered mass is cheaper than mass one voxel away
  const auto hm = vmark::synthesize_heatmap(gt, g, 15.0);
  Eigen::MatrixX3d shifted = gt;
  shifted(0, 0) += 10.0;
  CHECK(vmark::loss_conf(hm, gt) < vmark::loss_conf(hm, shifted));

  CHECK_THROWS_AS(vmark::loss_conf(delta, gt2), vmark::param_error);
}

TEST_CASE("vertex loss and its gradient") {
  vmark::Rng rng(2);
  const auto V = random_points(rng, 9, 50.0);
  const auto gt = mesh_from(V);
  CHECK(vmark::loss_vertex(gt, gt) == 0.0);

  Eigen::MatrixX3d shifted = V;
  shifted.col(0).array() += 2.0;
  CHECK(vmark::loss_vertex(mesh_from(shifted), gt) == Approx(2.0 / 3.0).epsilon(1e-12));

  const auto W = random_points(rng, 9, 50.0);
  double naive = 0.0;
  for (int i = 0; i < 9; ++i)
    for (int c = 0; c < 3; ++c) naive += std::abs(V(i, c) - W(i, c));
  CHECK(vmark::loss_vertex(mesh_from(V), mesh_from(W)) == Approx(naive / 27.0).epsilon(1e-12));

  const auto g = vmark::grad_loss_vertex(mesh_from(V), mesh_from(W));
  for (int i = 0; i < 9; ++i)
    for (int c = 0; c < 3; ++c) {
      const double expect = (V(i, c) > W(i, c) ? 1.0 : -1.0) / 27.0;
      CHECK(g(i, c) == Approx(expect));
    }
}

TEST_CASE("pose loss regresses joints and compares L1") {
  vmark::Rng rng(3);
  const auto V = random_points(rng, 12, 80.0);
  const auto G = random_regressor(rng, 12, 4);
  const auto mesh = mesh_from(V);

  const Eigen::MatrixX3d J = vmark::regress_joints(mesh, G);
  CHECK(vmark::loss_pose(mesh, J, G) == 0.0);

  // indicator regressor makes joints copies of chosen vertices
  Eigen::MatrixXd ind = Eigen::MatrixXd::Zero(12, 2);
  ind(5, 0) = 1.0;
  ind(9, 1) = 1.0;
  const Eigen::MatrixX3d Ji = vmark::regress_joints(mesh, ind);
  CHECK((Ji.row(0) - V.row(5)).norm() == 0.0);
  CHECK((Ji.row(1) - V.row(9)).norm() == 0.0);

  const auto J_target = random_points(rng, 4, 80.0);
  double naive = 0.0;
  Eigen::MatrixX3d JR = Eigen::MatrixX3d::Zero(4, 3);
  for (int q = 0; q < 4; ++q)
    for (int i = 0; i < 12; ++i) JR.row(q) += G(i, q) * V.row(i);
  for (int q = 0; q < 4; ++q)
    for (int c = 0; c < 3; ++c) naive += std::abs(JR(q, c) - J_target(q, c));
  CHECK(vmark::loss_pose(mesh, J_target, G) == Approx(naive / 12.0).epsilon(1e-12));
}

TEST_CASE("normal loss on a single lifted triangle matches the closed form") {
  Eigen::MatrixX3d gt(3, 3);
  gt << 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.5, std::sqrt(3.0) / 2.0, 0.0;
  vmark::FaceMatrix f(1, 3);
  f << 0, 1, 2;

  CHECK(vmark::loss_normal(mesh_from(gt), mesh_from(gt), f) == Approx(0.0).margin(1e-12));

  // translating both meshes jointly changes nothing
  Eigen::MatrixX3d moved = gt;
  moved.rowwise() += Eigen::RowVector3d(4.0, -2.0, 9.0);
  CHECK(vmark::loss_normal(mesh_from(moved), mesh_from(moved), f) == Approx(0.0).margin(1e-12));

  const double h = 0.3;
  Eigen::MatrixX3d lifted = gt;
  lifted(0, 2) += h;  // along the gt normal (+z by winding)
  const double L = std::sqrt(1.0 + h * h);
  CHECK(vmark::loss_normal(mesh_from(lifted), mesh_from(gt), f) == Approx(2.0 * h / L).epsilon(1e-12));

  // degenerate gt face is skipped and counted
  Eigen::MatrixX3d line(3, 3);
  line << 0, 0, 0, 1, 0, 0, 2, 0, 0;
  vmark::MeshLossStats stats;
  CHECK(vmark::loss_normal(mesh_from(gt), mesh_from(line), f, &stats) == 0.0);
  CHECK(stats.degenerate_faces == 1);

  // zero-length predicted edge is skipped and counted
  Eigen::MatrixX3d collapsed = gt;
  collapsed.row(1) = collapsed.row(0);
  stats = {};
  vmark::loss_normal(mesh_from(collapsed), mesh_from(gt), f, &stats);
  CHECK(stats.zero_length_edges == 1);
}

TEST_CASE("edge loss sums per-face absolute length gaps") {
  vmark::Rng rng(4);
  const auto V = random_points(rng, 4, 30.0);
  const auto faces = two_triangles();
  const auto gt = mesh_from(V);
  CHECK(vmark::loss_edge(gt, gt, faces) == 0.0);

  // doubling scales every edge by 2, so the loss is the gt edge-length sum
  double edge_sum = 0.0;
  for (int fi = 0; fi < 2; ++fi) {
    const Eigen::Index vi[4] = {faces(fi, 0), faces(fi, 1), faces(fi, 2), faces(fi, 0)};
    for (int e = 0; e < 3; ++e) edge_sum += (V.row(vi[e]) - V.row(vi[e + 1])).norm();
  }
  CHECK(vmark::loss_edge(mesh_from((2.0 * V).eval()), gt, faces) == Approx(edge_sum).epsilon(1e-12));

  // rigid motion of the prediction alone leaves the loss unchanged
  vmark::Rng rng2(5);
  const Eigen::Matrix3d R = random_rotation(rng2);
  Eigen::MatrixX3d moved = (2.0 * V) * R.transpose();
  moved.rowwise() += Eigen::RowVector3d(7.0, 1.0, -3.0);
  CHECK(vmark::loss_edge(mesh_from(moved), gt, faces) == Approx(edge_sum).epsilon(1e-9));
}

TEST_CASE("rigid invariance of normal and edge losses applied jointly") {
  vmark::Rng rng(6);
  const auto V = random_points(rng, 4, 40.0);
  const auto W = random_points(rng, 4, 40.0);
  const auto faces = two_triangles();

  const double n0 = vmark::loss_normal(mesh_from(V), mesh_from(W), faces);
  const double e0 = vmark::loss_edge(mesh_from(V), mesh_from(W), faces);

  const Eigen::Matrix3d R = random_rotation(rng);
  const Eigen::RowVector3d t(11.0, -6.0, 2.5);
  Eigen::MatrixX3d Vr = V * R.transpose();
  Vr.rowwise() += t;
  Eigen::MatrixX3d Wr = W * R.transpose();
  Wr.rowwise() += t;

  CHECK(vmark::loss_normal(mesh_from(Vr), mesh_from(Wr), faces) == Approx(n0).epsilon(1e-9));
  CHECK(vmark::loss_edge(mesh_from(Vr), mesh_from(Wr), faces) == Approx(e0).epsilon(1e-9));
}

TEST_CASE("mesh loss composes its terms with the edge weight") {
  vmark::Rng rng(7);
  const auto V = random_points(rng, 6, 25.0);
  const auto W = random_points(rng, 6, 25.0);
  vmark::FaceMatrix faces(3, 3);
  faces << 0, 1, 2, 2, 3, 4, 4, 5, 0;
  const auto G = random_regressor(rng, 6, 3);
  const auto J = vmark::regress_joints(mesh_from(W), G);

  vmark::LossWeights wts;
  wts.lambda_e = 20.0;
  const double direct = vmark::loss_mesh(mesh_from(V), mesh_from(W), J, G, faces, wts);
  const double parts = vmark::loss_vertex(mesh_from(V), mesh_from(W)) +
                       vmark::loss_pose(mesh_from(V), J, G) +
                       vmark::loss_normal(mesh_from(V), mesh_from(W), faces) +
                       20.0 * vmark::loss_edge(mesh_from(V), mesh_from(W), faces);
  CHECK(direct == Approx(parts).epsilon(1e-15));

  wts.lambda_e = 0.0;
  CHECK(vmark::loss_mesh(mesh_from(V), mesh_from(W), J, G, faces, wts) ==
        Approx(parts - 20.0 * vmark::loss_edge(mesh_from(V), mesh_from(W), faces)).epsilon(1e-12));

  wts.lambda_e = -1.0;
  CHECK_THROWS_AS(vmark::loss_mesh(mesh_from(V), mesh_from(W), J, G, faces, wts), vmark::param_error);
}

TEST_CASE("total loss is zero for perfect predictions and respects weights") {
  vmark::Rng rng(8);
  const auto V = random_points(rng, 5, 20.0);
  vmark::FaceMatrix faces(1, 3);
  faces << 0, 1, 2;
  const auto G = random_regressor(rng, 5, 3);
  const auto mesh = mesh_from(V);
  const auto J = vmark::regress_joints(mesh, G);

  vmark::VoxelGrid grid;
  grid.dims = {8, 8, 8};
  grid.origin = Eigen::Vector3d(-40.0, -40.0, -40.0);
  grid.voxel_size = Eigen::Vector3d(10.0, 10.0, 10.0);
  Eigen::MatrixX3d P(2, 3);
  P << grid.center(1, 2, 3).transpose(), grid.center(5, 5, 5).transpose();

  vmark::VoxelHeatmapSet delta;
  delta.grid = grid;
  for (int z = 0; z < 2; ++z) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(grid.n_voxels());
    v[grid.flat_index(z == 0 ? 1 : 5, z == 0 ? 2 : 5, z == 0 ? 3 : 5)] = 1.0;
    delta.values.push_back(std::move(v));
  }

  const double zero = vmark::total_loss(P, P, delta, mesh, mesh, J, G, faces);
  CHECK(zero == Approx(0.0).margin(1e-9));

  const auto Q = random_points(rng, 2, 30.0);
  vmark::LossWeights only_vm;
  only_vm.lambda_vm = 1.0;
  only_vm.lambda_c = 0.0;
  only_vm.lambda_m = 0.0;
  CHECK(vmark::total_loss(Q, P, delta, mesh, mesh, J, G, faces, only_vm) ==
        Approx(vmark::loss_vm(Q, P)).epsilon(1e-15));

  vmark::LossWeights wts;
  const double total = vmark::total_loss(Q, P, delta, mesh, mesh, J, G, faces, wts);
  const double parts = wts.lambda_vm * vmark::loss_vm(Q, P) + wts.lambda_c * vmark::loss_conf(delta, P) +
                       wts.lambda_m * vmark::loss_mesh(mesh, mesh, J, G, faces, wts);
  CHECK(total == Approx(parts).epsilon(1e-15));
}

TEST_CASE("mesh loss gradients match central finite differences") {
  vmark::Rng rng(9);
  const auto V = random_points(rng, 5, 15.0);
  const auto W = random_points(rng, 5, 15.0);
  const auto faces = two_triangles();
  const auto G = random_regressor(rng, 5, 3);
  const auto J = random_points(rng, 3, 15.0);
  vmark::LossWeights wts;

  const auto check_grad = [&](auto loss, const Eigen::MatrixX3d& analytic) {
    const double step = 1e-5;
    for (int i = 0; i < 5; ++i)
      for (int c = 0; c < 3; ++c) {
        Eigen::MatrixX3d plus = V, minus = V;
        plus(i, c) += step;
        minus(i, c) -= step;
        const double fd = (loss(plus) - loss(minus)) / (2.0 * step);
        const double tol = std::max(1e-6, 1e-4 * std::abs(fd));
        CHECK(std::abs(analytic(i, c) - fd) <= tol);
      }
  };

  check_grad([&](const Eigen::MatrixX3d& v) { return vmark::loss_vertex(mesh_from(v), mesh_from(W)); },
             vmark::grad_loss_vertex(mesh_from(V), mesh_from(W)));
  check_grad([&](const Eigen::MatrixX3d& v) { return vmark::loss_pose(mesh_from(v), J, G); },
             vmark::grad_loss_pose(mesh_from(V), J, G));
  check_grad([&](const Eigen::MatrixX3d& v) { return vmark::loss_normal(mesh_from(v), mesh_from(W), faces); },
             vmark::grad_loss_normal(mesh_from(V), mesh_from(W), faces));
  check_grad([&](const Eigen::MatrixX3d& v) { return vmark::loss_edge(mesh_from(v), mesh_from(W), faces); },
             vmark::grad_loss_edge(mesh_from(V), mesh_from(W), faces));
  check_grad(
      [&](const Eigen::MatrixX3d& v) { return vmark::loss_mesh(mesh_from(v), mesh_from(W), J, G, faces, wts); },
      vmark::grad_loss_mesh(mesh_from(V), mesh_from(W), J, G, faces, wts));
}

TEST_CASE("point-set metrics") {
  vmark::Rng rng(10);
  const auto V = random_points(rng, 8, 60.0);
  CHECK(vmark::mpve(mesh_from(V), mesh_from(V)) == 0.0);
  CHECK(vmark::mpjpe(V, V) == 0.0);

  Eigen::MatrixX3d off = V;
  off.rowwise() += Eigen::RowVector3d(3.0, 4.0, 0.0);
  CHECK(vmark::mpve(mesh_from(off), mesh_from(V)) == Approx(5.0).epsilon(1e-12));
  CHECK(vmark::mpjpe(off, V) == Approx(5.0).epsilon(1e-12));

  const auto W = random_points(rng, 8, 60.0);
  double naive = 0.0;
  for (int i = 0; i < 8; ++i) naive += (V.row(i) - W.row(i)).norm();
  CHECK(vmark::mpjpe(V, W) == Approx(naive / 8.0).epsilon(1e-12));
}

TEST_CASE("procrustes alignment removes similarity transforms") {
  vmark::Rng rng(11);
  for (int rep = 0; rep < 25; ++rep) {
    const auto J = random_points(rng, 9, 70.0);
    const Eigen::Matrix3d R = random_rotation(rng);
    const double s = rng.uniform(0.2, 3.0);
    const Eigen::RowVector3d t(rng.uniform(-50.0, 50.0), rng.uniform(-50.0, 50.0), rng.uniform(-50.0, 50.0));
    Eigen::MatrixX3d moved = s * (J * R.transpose());
    moved.rowwise() += t;
    CHECK(vmark::pa_mpjpe(moved, J) <= 1e-9);
    CHECK(vmark::pa_mpjpe(J, J) == Approx(0.0).margin(1e-12));
    // alignment never hurts
    const auto noisy = random_points(rng, 9, 70.0);
    CHECK(vmark::pa_mpjpe(noisy, J) <= vmark::mpjpe(noisy, J) + 1e-12);
  }

  Eigen::MatrixX3d coincident = Eigen::MatrixX3d::Zero(5, 3);
  coincident.rowwise() += Eigen::RowVector3d(1.0, 2.0, 3.0);
  CHECK_THROWS_AS(vmark::pa_mpjpe(coincident, coincident), vmark::param_error);
  Eigen::MatrixX3d two(2, 3);
  two.setZero();
  CHECK_THROWS_AS(vmark::pa_mpjpe(two, two), vmark::param_error);
}

TEST_CASE("procrustes matches the rotation grid oracle and rejects reflections") {
  vmark::Rng rng(12);
  const auto J = random_points(rng, 10, 50.0);
  Eigen::MatrixX3d reflected = J;
  reflected.col(0) *= -1.0;

  const double pa = vmark::pa_mpjpe(reflected, J);
  CHECK(pa > 1.0);  // generic cloud cannot be rotated onto its mirror

  const double grid = oracle::pa_mpjpe_grid(reflected, J, 2.0);
  CHECK(pa == Approx(grid).margin(0.5));
}

TEST_CASE("evaluate_meshes aggregates per-sample metrics deterministically") {
  vmark::Rng rng(13);
  const int n = 6, m = 10, j = 4;
  const auto G = random_regressor(rng, m, j);
  std::vector<vmark::MeshSample> hats, gts;
  for (int i = 0; i < n; ++i) {
    gts.push_back(mesh_from(random_points(rng, m, 90.0)));
    Eigen::MatrixX3d noisy = gts.back().vertices;
    for (int v = 0; v < m; ++v)
      for (int c = 0; c < 3; ++c) noisy(v, c) += rng.gaussian() * 5.0;
    hats.push_back(mesh_from(noisy));
  }

  const auto rep = vmark::evaluate_meshes(hats, gts, G);
  REQUIRE(rep.per_sample.size() == static_cast<std::size_t>(n));

  double s0 = 0.0, s1 = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto Jh = vmark::regress_joints(hats[static_cast<std::size_t>(i)], G);
    const auto Jg = vmark::regress_joints(gts[static_cast<std::size_t>(i)], G);
    CHECK(rep.per_sample[static_cast<std::size_t>(i)][0] ==
          Approx(vmark::mpve(hats[static_cast<std::size_t>(i)], gts[static_cast<std::size_t>(i)])).epsilon(1e-15));
    CHECK(rep.per_sample[static_cast<std::size_t>(i)][1] == Approx(vmark::mpjpe(Jh, Jg)).epsilon(1e-15));
    CHECK(rep.per_sample[static_cast<std::size_t>(i)][2] == Approx(vmark::pa_mpjpe(Jh, Jg)).epsilon(1e-12));
    s0 += rep.per_sample[static_cast<std::size_t>(i)][0];
    s1 += rep.per_sample[static_cast<std::size_t>(i)][1];
    s2 += rep.per_sample[static_cast<std::size_t>(i)][2];
  }
  CHECK(rep.mpve == Approx(s0 / n).epsilon(1e-15));
  CHECK(rep.mpjpe == Approx(s1 / n).epsilon(1e-15));
  CHECK(rep.pa_mpjpe == Approx(s2 / n).epsilon(1e-15));

  vmark::set_max_threads(1);
  const auto rep1 = vmark::evaluate_meshes(hats, gts, G);
  vmark::set_max_threads(4);
  const auto rep4 = vmark::evaluate_meshes(hats, gts, G);
  vmark::set_max_threads(0);
  CHECK(rep1.mpve == rep4.mpve);
  CHECK(rep1.mpjpe == rep4.mpjpe);
  CHECK(rep1.pa_mpjpe == rep4.pa_mpjpe);
}
