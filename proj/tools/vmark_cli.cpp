#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "vmark/vmark.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Config file support: --config supplies defaults, flags given on the command
// line win. Every binding doubles as the whitelist of accepted config keys.
struct ConfigBindings {
  struct Entry {
    std::string key;
    CLI::Option* opt;
    std::function<void(const json&)> apply;
  };
  std::vector<Entry> entries;

  template <class T>
  CLI::Option* bind(CLI::App* cmd, const std::string& key, const std::string& flag, T& value,
                    const std::string& desc) {
    return track(cmd->add_option(flag, value, desc), key, value);
  }

  CLI::Option* bind_flag(CLI::App* cmd, const std::string& key, const std::string& flag,
                         bool& value, const std::string& desc) {
    return track(cmd->add_flag(flag, value, desc), key, value);
  }

  template <class T>
  CLI::Option* track(CLI::Option* opt, const std::string& key, T& value) {
    entries.push_back({key, opt, [&value, key](const json& v) {
                         try {
                           value = v.get<T>();
                         } catch (const json::exception&) {
                           throw vmark::param_error("config: bad value for '" + key + "'");
                         }
                       }});
    return opt;
  }

  void apply(const std::string& config_path) const {
    if (config_path.empty()) return;
    const json j = vmark::detail::parse_json_file(config_path);
    if (!j.is_object()) throw vmark::param_error("config: expected a JSON object");
    std::set<std::string> known;
    for (const auto& e : entries) {
      known.insert(e.key);
      if (j.contains(e.key) && e.opt->count() == 0) e.apply(j.at(e.key));
    }
    for (const auto& [k, v] : j.items())
      if (!known.count(k)) throw vmark::param_error("config: unknown key '" + k + "'");
  }
};

std::string join_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

// manifests reference sibling files relatively when possible so output
// directories stay relocatable
std::string reference_to(const std::string& target, const std::string& from_dir) {
  std::error_code ec;
  const fs::path rel = fs::relative(target, from_dir, ec);
  if (ec || rel.empty()) return fs::absolute(target).string();
  return rel.string();
}

double mean_mpve(const std::vector<vmark::MeshSample>& hats,
                 const std::vector<const vmark::MeshSample*>& gts) {
  double total = 0.0;
  for (std::size_t i = 0; i < hats.size(); ++i) total += vmark::mpve(hats[i], *gts[i]);
  return total / static_cast<double>(hats.size());
}

// Joint metrics require a regressor; without one the report carries MPVE only
// and omits the joint keys.
json build_report_json(const std::vector<vmark::MeshSample>& hats,
                       const std::vector<vmark::MeshSample>& gts,
                       const Eigen::MatrixXd* regressor) {
  json j;
  j["version"] = 1;
  if (regressor != nullptr) {
    const auto rep = vmark::evaluate_meshes(hats, gts, *regressor);
    j["aggregate"] = {{"mpve", rep.mpve}, {"mpjpe", rep.mpjpe}, {"pa_mpjpe", rep.pa_mpjpe}};
    json rows = json::array();
    for (const auto& s : rep.per_sample)
      rows.push_back({{"mpve", s[0]}, {"mpjpe", s[1]}, {"pa_mpjpe", s[2]}});
    j["per_sample"] = rows;
    return j;
  }
  double total = 0.0;
  json rows = json::array();
  for (std::size_t i = 0; i < hats.size(); ++i) {
    const double v = vmark::mpve(hats[i], gts[i]);
    total += v;
    rows.push_back({{"mpve", v}});
  }
  j["aggregate"] = {{"mpve", total / static_cast<double>(hats.size())}};
  j["per_sample"] = rows;
  return j;
}

struct SynthArgs {
  vmark::SynthConfig cfg;
  std::uint64_t seed = 0;
  std::string out = ".";
};

void cmd_synth(const SynthArgs& a) {
  const auto d = vmark::generate_synthetic_dataset(a.cfg, a.seed);
  fs::create_directories(a.out);
  const std::string path = join_path(a.out, "dataset.vmds");
  vmark::save_dataset(d, path);

  // noise floors the singular spectrum well above machine precision, so the
  // structural rank needs a coarse relative cutoff
  const auto dm = vmark::assemble_data_matrix(d);
  const Eigen::BDCSVD<Eigen::MatrixXd> svd(dm.X);
  const auto& sv = svd.singularValues();
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv[i] > sv[0] * 1e-3) ++rank;
  std::printf("dataset: N=%d M=%d F=%d rank~%d -> %s\n", d.n_samples(), d.n_vertices(),
              d.n_faces(), rank, path.c_str());
}

struct LearnArgs {
  std::string dataset;
  int k = 16;
  int restarts = 5;
  int max_outer = 200;
  double outer_tol = 1e-6;
  std::string init = "furthest";
  double pair_tol = 1.0;
  std::uint64_t seed = 0;
  std::string out = ".";
};

void cmd_learn(const LearnArgs& a) {
  const auto d = vmark::load_dataset(a.dataset);
  const auto dm = vmark::assemble_data_matrix(d);
  const auto pairing = vmark::compute_symmetric_pairs(d.template_mesh, a.pair_tol);

  vmark::FitOptions fo;
  fo.n_markers = a.k;
  fo.restarts = a.restarts;
  fo.max_outer_iters = a.max_outer;
  fo.outer_tol = a.outer_tol;
  fo.seed = a.seed;
  if (a.init == "random")
    fo.init = vmark::FitOptions::Init::random_vertices;
  else if (a.init != "furthest")
    throw vmark::param_error("learn: --init must be 'furthest' or 'random'");

  const auto [model, hist] = vmark::fit_archetypes(dm, fo);
  const double objective =
      hist.objective_per_iter.empty() ? 0.0 : hist.objective_per_iter.back();

  vmark::MarkerSet snapped;
  snapped.vertex_indices = vmark::snap_to_vertices(model, dm);
  snapped.A_sym = vmark::refit_coefficients(dm, snapped.vertex_indices);
  const auto pre = vmark::marker_reconstruction_error(dm, snapped);

  const auto ms = vmark::build_marker_set(model, dm, pairing, d.template_mesh);
  const auto post = vmark::marker_reconstruction_error(dm, ms);
  const double pca = vmark::baseline_pca_error(dm, a.k);

  fs::create_directories(a.out);
  vmark::save_marker_set(ms, join_path(a.out, "markers.json"));
  vmark::save_archetype_model(model, join_path(a.out, "model.json"), a.seed, objective);

  json rep;
  rep["version"] = 1;
  rep["K"] = a.k;
  rep["seed"] = a.seed;
  rep["objective_history"] = hist.objective_per_iter;
  rep["converged"] = hist.converged;
  rep["snapped_error"] = {{"frob2", pre.first}, {"mean_mm", pre.second}};
  rep["symmetric_error"] = {{"frob2", post.first}, {"mean_mm", post.second}};
  rep["pca_bound_frob2"] = pca;
  vmark::detail::write_json_file(rep, join_path(a.out, "learn_report.json"));

  std::printf("learn: K=%d objective=%.6e snapped=%.3fmm symmetric=%.3fmm pca_bound=%.6e\n", a.k,
              objective, pre.second, post.second, pca);
}

struct AblateArgs {
  std::string dataset;
  std::vector<int> k_list{8, 16, 32, 64};
  int restarts = 5;
  int baseline_seeds = 5;
  double pair_tol = 1.0;
  std::uint64_t seed = 0;
  std::string out = ".";
};

void cmd_ablate_k(const AblateArgs& a) {
  if (a.k_list.empty()) throw vmark::param_error("ablate-k: empty K list");
  if (a.baseline_seeds < 1) throw vmark::param_error("ablate-k: baseline_seeds must be >= 1");
  const auto d = vmark::load_dataset(a.dataset);
  const auto dm = vmark::assemble_data_matrix(d);
  const auto pairing = vmark::compute_symmetric_pairs(d.template_mesh, a.pair_tol);

  std::vector<std::vector<std::string>> rows;
  for (const int k : a.k_list) {
    vmark::FitOptions fo;
    fo.n_markers = k;
    fo.restarts = a.restarts;
    fo.seed = a.seed;
    const auto [model, hist] = vmark::fit_archetypes(dm, fo);
    const auto ms = vmark::build_marker_set(model, dm, pairing, d.template_mesh);
    const double learned = vmark::marker_reconstruction_error(dm, ms).second;

    double rsum = 0.0, rsum2 = 0.0;
    for (int s = 0; s < a.baseline_seeds; ++s) {
      const auto rms = vmark::baseline_random_markers(dm, k, a.seed + 1000 + static_cast<std::uint64_t>(s));
      const double err = vmark::marker_reconstruction_error(dm, rms).second;
      rsum += err;
      rsum2 += err * err;
    }
    const double rmean = rsum / a.baseline_seeds;
    const double rvar = a.baseline_seeds > 1
                            ? std::max(0.0, (rsum2 - rsum * rsum / a.baseline_seeds) /
                                                (a.baseline_seeds - 1))
                            : 0.0;
    const double pca = vmark::baseline_pca_error(dm, k);

    rows.push_back({std::to_string(k), vmark::csv_number(learned), vmark::csv_number(rmean),
                    vmark::csv_number(std::sqrt(rvar)), vmark::csv_number(pca)});
    std::printf("ablate-k: K=%d learned=%.3fmm random=%.3f+-%.3fmm pca_bound=%.6e\n", k, learned,
                rmean, std::sqrt(rvar), pca);
  }

  fs::create_directories(a.out);
  const std::string path = join_path(a.out, "ablate_k.csv");
  vmark::write_csv(path, {"K", "learned_err", "random_err_mean", "random_err_std", "pca_bound"},
                   rows);
  std::printf("ablate-k: wrote %s\n", path.c_str());
}

struct ReconArgs {
  std::string markers;
  std::string estimates;
  std::string adapter;
  std::string gt;
  bool gt_markers = false;
  std::string out = ".";
};

void cmd_recon(const ReconArgs& a) {
  if (a.estimates.empty() == !a.gt_markers)
    throw vmark::param_error("recon: pass exactly one of --estimates or --gt-markers");
  const auto ms = vmark::load_marker_set(a.markers);
  const auto d = vmark::load_dataset(a.gt);
  if (d.n_vertices() != ms.A_sym.cols())
    throw vmark::format_error("recon: " + a.gt + " has M=" + std::to_string(d.n_vertices()) +
                              " vertices but " + a.markers + " expects M=" +
                              std::to_string(ms.A_sym.cols()));

  std::vector<vmark::MarkerEstimate> est;
  if (a.gt_markers) {
    est.resize(d.samples.size());
    for (std::size_t i = 0; i < d.samples.size(); ++i) {
      est[i].P = vmark::gt_marker_positions(d.samples[i], ms);
      est[i].C = Eigen::VectorXd::Ones(ms.n_markers());
    }
  } else {
    est = vmark::load_marker_estimates(a.estimates);
    for (const auto& e : est)
      if (e.n_markers() != ms.n_markers())
        throw vmark::format_error("recon: " + a.estimates + " has K=" +
                                  std::to_string(e.n_markers()) + " markers but " + a.markers +
                                  " expects K=" + std::to_string(ms.n_markers()));
  }
  if (est.empty()) throw vmark::format_error("recon: no estimates in " + a.estimates);
  if (est.size() != d.samples.size())
    throw vmark::format_error("recon: sample count mismatch between estimates (" +
                              std::to_string(est.size()) + ") and " + a.gt + " (" +
                              std::to_string(d.samples.size()) + ")");

  std::vector<vmark::MeshSample> hats;
  if (!a.adapter.empty()) {
    const auto ad = vmark::load_adapter(a.adapter);
    if (ad.base.rows() != ms.A_sym.rows() || ad.base.cols() != ms.A_sym.cols())
      throw vmark::format_error("recon: adapter " + a.adapter + " was trained for K=" +
                                std::to_string(ad.base.rows()) + ", M=" +
                                std::to_string(ad.base.cols()) + " but " + a.markers +
                                " has K=" + std::to_string(ms.A_sym.rows()) + ", M=" +
                                std::to_string(ms.A_sym.cols()));
    hats = vmark::reconstruct_all_adaptive(est, ad);
  } else {
    hats = vmark::reconstruct_all_fixed(est, ms.A_sym);
  }

  fs::create_directories(a.out);
  char name[32];
  for (std::size_t i = 0; i < hats.size(); ++i) {
    std::snprintf(name, sizeof(name), "sample_%04zu.obj", i);
    vmark::save_obj(hats[i], d.faces, join_path(a.out, name));
  }

  const Eigen::MatrixXd* reg =
      d.joint_regressor.has_value() ? &d.joint_regressor.value() : nullptr;
  const json rep = build_report_json(hats, d.samples, reg);
  vmark::detail::write_json_file(rep, join_path(a.out, "recon_report.json"));
  std::printf("recon: %zu meshes, mpve=%.6fmm (%s) -> %s\n", hats.size(),
              rep.at("aggregate").at("mpve").get<double>(),
              a.adapter.empty() ? "fixed" : "adaptive", a.out.c_str());
}

struct TrainAdapterArgs {
  std::string dataset;
  std::string markers;
  int grid_dim = 32;
  double margin_mm = 600.0;
  double sigma_voxels = 2.0;
  double fraction = 0.25;
  double offset_voxels = 2.0;
  double lambda_flat = 0.5;
  std::uint64_t seed = 9;
  double learning_rate = 1e-5;
  int epochs = 200;
  int batch_size = 1;
  double lambda_e = 0.0;
  std::string out = ".";
};

void cmd_train_adapter(const TrainAdapterArgs& a) {
  const auto d = vmark::load_dataset(a.dataset);
  const auto ms = vmark::load_marker_set(a.markers);
  if (d.n_vertices() != ms.A_sym.cols())
    throw vmark::format_error("train-adapter: " + a.dataset + " has M=" +
                              std::to_string(d.n_vertices()) + " vertices but " + a.markers +
                              " expects M=" + std::to_string(ms.A_sym.cols()));
  if (!d.joint_regressor.has_value())
    throw vmark::param_error("train-adapter: dataset has no joint regressor");

  vmark::EstimateSynthConfig ec;
  ec.grid_dim = a.grid_dim;
  ec.margin_mm = a.margin_mm;
  ec.sigma_voxels = a.sigma_voxels;
  ec.fraction = a.fraction;
  ec.offset_voxels = a.offset_voxels;
  ec.lambda_flat = a.lambda_flat;
  ec.seed = a.seed;
  const auto est = vmark::synthesize_marker_estimates(d, ms, ec);

  // held-out split by sample index: every fifth sample evaluates, the rest train
  std::vector<vmark::TrainingSample> train;
  std::vector<vmark::MarkerEstimate> eval_est;
  std::vector<const vmark::MeshSample*> eval_gt;
  for (std::size_t i = 0; i < est.size(); ++i) {
    if (i % 5 == 0) {
      eval_est.push_back(est[i]);
      eval_gt.push_back(&d.samples[i]);
    } else {
      train.push_back({est[i], d.samples[i]});
    }
  }
  if (train.empty() || eval_est.empty())
    throw vmark::param_error("train-adapter: dataset too small to split");

  vmark::AdapterTrainConfig tc;
  tc.learning_rate = a.learning_rate;
  tc.epochs = a.epochs;
  tc.batch_size = a.batch_size;
  tc.loss_weights.lambda_e = a.lambda_e;
  const auto res = vmark::train_adapter(train, d, tc, ms);

  const double fixed = mean_mpve(vmark::reconstruct_all_fixed(eval_est, ms.A_sym), eval_gt);
  const double adaptive = mean_mpve(vmark::reconstruct_all_adaptive(eval_est, res.adapter), eval_gt);
  const double improvement = 100.0 * (fixed - adaptive) / fixed;

  fs::create_directories(a.out);
  vmark::save_marker_estimates(est, join_path(a.out, "estimates.json"));
  vmark::save_adapter(res.adapter, join_path(a.out, "adapter.json"),
                      reference_to(a.markers, a.out));

  json log;
  log["version"] = 1;
  log["epoch_loss"] = res.epoch_loss;
  log["reverted_epochs"] = res.reverted_epochs;
  log["final_learning_rate"] = res.final_learning_rate;
  log["train_size"] = train.size();
  log["eval_size"] = eval_est.size();
  log["eval"] = {{"fixed_mpve", fixed},
                 {"adaptive_mpve", adaptive},
                 {"improvement_percent", improvement}};
  vmark::detail::write_json_file(log, join_path(a.out, "train_log.json"));

  std::printf("train-adapter: fixed=%.4fmm adaptive=%.4fmm (%+.2f%%) epochs=%zu reverted=%d\n",
              fixed, adaptive, improvement, res.epoch_loss.size() - 1, res.reverted_epochs);
}

struct EvalArgs {
  std::string pred;
  std::string gt;
  std::string regressor;
  std::string out = ".";
};

void cmd_eval(const EvalArgs& a) {
  const auto dp = vmark::load_dataset(a.pred);
  const auto dg = vmark::load_dataset(a.gt);
  if (dp.n_samples() != dg.n_samples())
    throw vmark::format_error("eval: sample count mismatch between " + a.pred + " (" +
                              std::to_string(dp.n_samples()) + ") and " + a.gt + " (" +
                              std::to_string(dg.n_samples()) + ")");
  if (dp.n_vertices() != dg.n_vertices())
    throw vmark::format_error("eval: topology mismatch between " + a.pred + " (M=" +
                              std::to_string(dp.n_vertices()) + ") and " + a.gt + " (M=" +
                              std::to_string(dg.n_vertices()) + ")");

  Eigen::MatrixXd reg_storage;
  const Eigen::MatrixXd* reg = nullptr;
  if (!a.regressor.empty()) {
    reg_storage = vmark::load_vmat(a.regressor);
    if (reg_storage.rows() != dg.n_vertices())
      throw vmark::format_error("eval: regressor " + a.regressor + " has " +
                                std::to_string(reg_storage.rows()) + " rows but meshes have M=" +
                                std::to_string(dg.n_vertices()));
    reg = &reg_storage;
  } else if (dg.joint_regressor.has_value()) {
    reg = &dg.joint_regressor.value();
  }

  const json rep = build_report_json(dp.samples, dg.samples, reg);
  fs::create_directories(a.out);
  vmark::detail::write_json_file(rep, join_path(a.out, "eval_report.json"));

  const auto& agg = rep.at("aggregate");
  if (agg.contains("mpjpe"))
    std::printf("eval: mpve=%.6fmm mpjpe=%.6fmm pa_mpjpe=%.6fmm\n",
                agg.at("mpve").get<double>(), agg.at("mpjpe").get<double>(),
                agg.at("pa_mpjpe").get<double>());
  else
    std::printf("eval: mpve=%.6fmm (no joint regressor)\n", agg.at("mpve").get<double>());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"virtual-marker mesh pipeline"};
  app.require_subcommand(1);
  app.fallthrough();

  int threads = 0;
  app.add_option("--threads", threads, "cap worker threads (0 = hardware limit)");

  SynthArgs sy;
  ConfigBindings syb;
  std::string sy_config;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic mesh dataset");
  synth->add_option("--config", sy_config, "JSON config file; flags override");
  syb.bind(synth, "m_target", "--m-target", sy.cfg.m_target, "approximate vertex count");
  syb.bind(synth, "n_samples", "--n-samples", sy.cfg.n_samples, "number of posed samples");
  syb.bind(synth, "latent_dim", "--latent-dim", sy.cfg.latent_dim, "deformation fields used");
  syb.bind(synth, "noise_mm", "--noise-mm", sy.cfg.noise_mm, "per-vertex noise, mm");
  syb.bind(synth, "bilateral_rho", "--bilateral-rho", sy.cfg.bilateral_rho,
           "left/right pose coupling in [0, 1]");
  syb.bind(synth, "seed", "--seed", sy.seed, "dataset seed");
  syb.bind(synth, "out", "--out", sy.out, "output directory");

  LearnArgs le;
  ConfigBindings leb;
  std::string le_config;
  CLI::App* learn = app.add_subcommand("learn", "learn a marker set from a dataset");
  learn->add_option("--config", le_config, "JSON config file; flags override");
  leb.bind(learn, "dataset", "--dataset", le.dataset, "VMDS file or OBJ directory")->required();
  leb.bind(learn, "k", "--k", le.k, "number of markers");
  leb.bind(learn, "restarts", "--restarts", le.restarts, "fit restarts");
  leb.bind(learn, "max_outer", "--max-outer", le.max_outer, "outer iteration cap");
  leb.bind(learn, "outer_tol", "--outer-tol", le.outer_tol, "relative objective tolerance");
  leb.bind(learn, "init", "--init", le.init, "'furthest' or 'random'");
  leb.bind(learn, "pair_tol", "--pair-tol", le.pair_tol, "midline tolerance, mm");
  leb.bind(learn, "seed", "--seed", le.seed, "fit seed");
  leb.bind(learn, "out", "--out", le.out, "output directory");

  AblateArgs ab;
  ConfigBindings abb;
  std::string ab_config;
  CLI::App* ablate = app.add_subcommand("ablate-k", "marker-count ablation table");
  ablate->add_option("--config", ab_config, "JSON config file; flags override");
  abb.bind(ablate, "dataset", "--dataset", ab.dataset, "VMDS file or OBJ directory")->required();
  abb.bind(ablate, "k_list", "--k-list", ab.k_list, "marker counts to evaluate");
  abb.bind(ablate, "restarts", "--restarts", ab.restarts, "fit restarts per K");
  abb.bind(ablate, "baseline_seeds", "--baseline-seeds", ab.baseline_seeds,
           "random-marker baselines per K");
  abb.bind(ablate, "pair_tol", "--pair-tol", ab.pair_tol, "midline tolerance, mm");
  abb.bind(ablate, "seed", "--seed", ab.seed, "base seed");
  abb.bind(ablate, "out", "--out", ab.out, "output directory");

  ReconArgs re;
  ConfigBindings reb;
  std::string re_config;
  CLI::App* recon = app.add_subcommand("recon", "reconstruct meshes from marker estimates");
  recon->add_option("--config", re_config, "JSON config file; flags override");
  reb.bind(recon, "markers", "--markers", re.markers, "marker-set JSON")->required();
  reb.bind(recon, "estimates", "--estimates", re.estimates, "estimates JSON");
  reb.bind(recon, "adapter", "--adapter", re.adapter, "adapter JSON for adaptive coefficients");
  reb.bind(recon, "gt", "--gt", re.gt, "ground-truth dataset (faces and metrics)")->required();
  reb.bind_flag(recon, "gt_markers", "--gt-markers", re.gt_markers,
                "take exact marker positions from the ground truth instead of --estimates");
  reb.bind(recon, "out", "--out", re.out, "output directory");

  TrainAdapterArgs tr;
  ConfigBindings trb;
  std::string tr_config;
  CLI::App* train = app.add_subcommand("train-adapter", "train confidence-aware coefficients");
  train->add_option("--config", tr_config, "JSON config file; flags override");
  trb.bind(train, "dataset", "--dataset", tr.dataset, "VMDS file or OBJ directory")->required();
  trb.bind(train, "markers", "--markers", tr.markers, "marker-set JSON")->required();
  trb.bind(train, "grid_dim", "--grid-dim", tr.grid_dim, "heatmap grid resolution");
  trb.bind(train, "margin_mm", "--margin-mm", tr.margin_mm, "grid margin around markers, mm");
  trb.bind(train, "sigma_voxels", "--sigma-voxels", tr.sigma_voxels, "heatmap blob width");
  trb.bind(train, "fraction", "--fraction", tr.fraction, "corrupted marker share");
  trb.bind(train, "offset_voxels", "--offset-voxels", tr.offset_voxels,
           "corruption displacement, voxels");
  trb.bind(train, "lambda_flat", "--lambda-flat", tr.lambda_flat, "flat-blend corruption weight");
  trb.bind(train, "seed", "--seed", tr.seed, "estimate synthesis seed");
  trb.bind(train, "learning_rate", "--learning-rate", tr.learning_rate, "initial step size");
  trb.bind(train, "epochs", "--epochs", tr.epochs, "training epochs");
  trb.bind(train, "batch_size", "--batch-size", tr.batch_size, "samples per batch");
  trb.bind(train, "lambda_e", "--lambda-e", tr.lambda_e,
           "edge-length weight in the training loss");
  trb.bind(train, "out", "--out", tr.out, "output directory");

  EvalArgs ev;
  ConfigBindings evb;
  std::string ev_config;
  CLI::App* eval_cmd = app.add_subcommand("eval", "compare predicted meshes against ground truth");
  eval_cmd->add_option("--config", ev_config, "JSON config file; flags override");
  evb.bind(eval_cmd, "pred", "--pred", ev.pred, "predicted VMDS file or OBJ directory")->required();
  evb.bind(eval_cmd, "gt", "--gt", ev.gt, "ground-truth VMDS file or OBJ directory")->required();
  evb.bind(eval_cmd, "regressor", "--regressor", ev.regressor,
           "joint regressor VMAT (defaults to the one embedded in --gt)");
  evb.bind(eval_cmd, "out", "--out", ev.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (threads < 0) throw vmark::param_error("--threads must be >= 0");
    if (threads > 0) vmark::set_max_threads(threads);
    if (synth->parsed()) {
      syb.apply(sy_config);
      cmd_synth(sy);
    } else if (learn->parsed()) {
      leb.apply(le_config);
      cmd_learn(le);
    } else if (ablate->parsed()) {
      abb.apply(ab_config);
      cmd_ablate_k(ab);
    } else if (recon->parsed()) {
      reb.apply(re_config);
      cmd_recon(re);
    } else if (train->parsed()) {
      trb.apply(tr_config);
      cmd_train_adapter(tr);
    } else if (eval_cmd->parsed()) {
      evb.apply(ev_config);
      cmd_eval(ev);
    }
    return 0;
  } catch (const vmark::param_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
