// Walks the whole pipeline once on a small synthetic body: learn markers,
// mirror-close them, decode noisy heatmap estimates, reconstruct meshes with
// fixed coefficients, then train the confidence adapter and compare. Artifacts
// land in the directory given as argv[1] (default demo_out).

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "vmark/archetypal.hpp"
#include "vmark/io.hpp"
#include "vmark/reconstruction.hpp"

int main(int argc, char** argv) {
  const std::string out_dir = argc > 1 ? argv[1] : "demo_out";
  std::filesystem::create_directories(out_dir);

  vmark::SynthConfig cfg;
  cfg.m_target = 150;
  cfg.n_samples = 40;
  cfg.latent_dim = 6;
  cfg.noise_mm = 0.3;
  const auto dataset = vmark::generate_synthetic_dataset(cfg, 19);
  const auto dm = vmark::assemble_data_matrix(dataset);
  std::printf("dataset: %d meshes, %d vertices, %d faces, %d joints\n", dataset.n_samples(),
              dataset.n_vertices(), dataset.n_faces(), dataset.n_joints());

  const auto pairing = vmark::compute_symmetric_pairs(dataset.template_mesh, 1.0);
  std::printf("template symmetry: %zu mirror pairs, %zu midline vertices\n",
              pairing.pairs.size(), pairing.midline.size());

  vmark::FitOptions fit;
  fit.n_markers = 8;
  fit.restarts = 2;
  const auto [model, history] = vmark::fit_archetypes(dm, fit);
  std::printf("archetype fit: objective %.3e after %zu iterations (best of %d restarts)\n",
              history.objective_per_iter.back(), history.objective_per_iter.size(), fit.restarts);

  const auto markers = vmark::build_marker_set(model, dm, pairing, dataset.template_mesh);
  const auto [frob2, refit_mm] = vmark::marker_reconstruction_error(dm, markers);
  std::printf("marker set: %d vertices (%zu on the midline), refit error %.2f mm per vertex\n",
              markers.n_markers(), markers.midline_markers.size(), refit_mm);

  double random_mm = 0.0;
  const int random_draws = 5;
  for (int r = 0; r < random_draws; ++r) {
    const auto rnd = vmark::baseline_random_markers(dm, markers.n_markers(), 100 + r);
    random_mm += vmark::marker_reconstruction_error(dm, rnd).second;
  }
  std::printf("random-marker baseline: %.2f mm (mean of %d draws)\n", random_mm / random_draws,
              random_draws);

  // noisy heatmap estimates with a quarter of the markers knocked off target
  vmark::EstimateSynthConfig est_cfg;
  est_cfg.grid_dim = 24;
  est_cfg.margin_mm = 600.0;
  est_cfg.sigma_voxels = 2.0;
  est_cfg.fraction = 0.25;
  est_cfg.offset_voxels = 2.0;
  est_cfg.lambda_flat = 0.5;
  est_cfg.seed = 5;
  const auto estimates = vmark::synthesize_marker_estimates(dataset, markers, est_cfg);

  std::vector<vmark::TrainingSample> train;
  std::vector<vmark::MarkerEstimate> eval_est;
  std::vector<vmark::MeshSample> eval_gt;
  for (std::size_t i = 0; i < estimates.size(); ++i) {
    if (i % 5 == 0) {
      eval_est.push_back(estimates[i]);
      eval_gt.push_back(dataset.samples[i]);
    } else {
      train.push_back({estimates[i], dataset.samples[i]});
    }
  }
  std::printf("estimates: %zu synthesized, %zu train / %zu eval\n", estimates.size(),
              train.size(), eval_est.size());

  vmark::AdapterTrainConfig train_cfg;
  train_cfg.epochs = 60;
  train_cfg.loss_weights.lambda_e = 0.0;
  const auto result = vmark::train_adapter(train, dataset, train_cfg, markers);
  std::printf("adapter training: loss %.4e -> %.4e over %zu epochs (%d reverted)\n",
              result.epoch_loss.front(), result.epoch_loss.back(), result.epoch_loss.size() - 1,
              result.reverted_epochs);

  const auto fixed = vmark::reconstruct_all_fixed(eval_est, markers.A_sym);
  const auto adaptive = vmark::reconstruct_all_adaptive(eval_est, result.adapter);
  const auto fixed_rep = vmark::evaluate_meshes(fixed, eval_gt, *dataset.joint_regressor);
  const auto adaptive_rep = vmark::evaluate_meshes(adaptive, eval_gt, *dataset.joint_regressor);
  std::printf("held-out, fixed coefficients: mpve %.2f, mpjpe %.2f, pa-mpjpe %.2f mm\n",
              fixed_rep.mpve, fixed_rep.mpjpe, fixed_rep.pa_mpjpe);
  std::printf("held-out, trained adapter:    mpve %.2f, mpjpe %.2f, pa-mpjpe %.2f mm\n",
              adaptive_rep.mpve, adaptive_rep.mpjpe, adaptive_rep.pa_mpjpe);

  vmark::save_dataset(dataset, out_dir + "/dataset.vmds");
  vmark::save_marker_set(markers, out_dir + "/markers.json");
  vmark::save_marker_estimates(eval_est, out_dir + "/estimates.json");
  vmark::save_adapter(result.adapter, out_dir + "/adapter.json", "markers.json");
  std::printf("artifacts written to %s\n", out_dir.c_str());
  return 0;
}
