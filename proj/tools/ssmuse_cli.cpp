// Command-line driver for the SS-MuSE pipeline.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "ssmuse/config.hpp"
#include "ssmuse/experiment.hpp"
#include "ssmuse/io.hpp"

namespace fs = std::filesystem;
using namespace ssmuse;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
};

ExperimentConfig load_config(const Globals& g) {
  ExperimentConfig cfg = g.config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(g.config_path);
  if (g.seed) cfg.seed = *g.seed;
  if (!g.out.empty()) cfg.output_dir = g.out;
  cfg.validate();
  return cfg;
}

fs::path or_default(const std::string& given, const fs::path& fallback) {
  return given.empty() ? fallback : fs::path(given);
}

void log(const std::string& msg) { std::cerr << "ssmuse: " << msg << '\n'; }

void cmd_simulate(const ExperimentConfig& cfg) {
  const fs::path dir = cfg.output_dir;
  const Acquisition acq = build_acquisition(cfg);
  const Phantom ph = make_phantom(cfg.dims, cfg.tissues);
  const Synthesis syn =
      synthesize_kspace(ph, acq.seq, acq.reference_traj, acq.coils, cfg.noise_sigma, cfg.noise_seed_value());
  save_volume(dir / "t1_true.ssma", ph.t1_map);
  save_volume(dir / "pd_true.ssma", ph.proton_density);
  save_mask(dir / "mask.ssma", ph.support_mask);
  save_factor(dir / "coils.ssma", acq.coils);
  save_trajectory(dir / "trajectory_reference.ssma", acq.reference_traj);
  save_trajectory(dir / "trajectory_accelerated.ssma", acq.accelerated_traj);
  save_kspace(dir / "kspace_reference.ssma", syn.data);
  save_kspace(dir / "kspace_accelerated.ssma", subsample_spokes(syn.data, acq.reference_traj, cfg.accelerated_spokes));
  save_factor(dir / "truth_u.ssma", syn.truth.factor(acq.basis));
  write_image(dir / "t1_true", ph.t1_map);
  write_text(dir / "config.ini", cfg.to_ini());
  log("wrote phantom, coils, trajectories and k-space to " + dir.string());
}

void cmd_basis(const ExperimentConfig& cfg) {
  const fs::path dir = cfg.output_dir;
  const Acquisition acq = build_acquisition(cfg);
  save_matrix(dir / "dictionary.ssma", acq.dict.signals);
  write_array(dir / "t1_grid.ssma", {acq.dict.t1_grid.size()}, std::span<const double>(acq.dict.t1_grid));
  save_basis(dir / "basis.ssma", acq.basis);
  write_array(dir / "singular_values.ssma", {acq.basis.singular_values.size()},
              std::span<const double>(acq.basis.singular_values));
  char buf[128];
  std::snprintf(buf, sizeof buf, "rank %zu basis captures %.6f of the dictionary energy", acq.basis.rank(),
                acq.basis.captured_energy());
  log(buf);
}

void cmd_train(const ExperimentConfig& cfg) {
  const fs::path dir = cfg.output_dir;
  const Acquisition acq = build_acquisition(cfg);
  const TrainResult tr = train_model(cfg, acq, [](const EpochLog& e) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "epoch %zu loss %.6g (%.1f s)", e.epoch, e.mean_loss, e.wall_seconds);
    log(buf);
  });
  save_model(dir / "model", tr.params);
  write_text(dir / "training_log.csv", training_log_csv(tr.log, true));
}

void cmd_recon(const ExperimentConfig& cfg, const std::string& method_name, const std::string& kspace,
               const std::string& model_stem, bool reference_budget) {
  const fs::path dir = cfg.output_dir;
  const Method method = method_from_string(method_name);
  const Acquisition acq = build_acquisition(cfg);
  const Trajectory& traj = reference_budget ? acq.reference_traj : acq.accelerated_traj;
  const KSpaceData b = load_kspace(
      or_default(kspace, dir / (reference_budget ? "kspace_reference.ssma" : "kspace_accelerated.ssma")));
  if (b.frames != traj.n_frames() || b.samples != traj.samples_per_frame() || b.coils != acq.coils.count)
    throw DomainError("recon: k-space file does not match the configured acquisition");
  std::optional<EnergyModelParams> params;
  if (method == Method::ssmuse)
    params = load_model(or_default(model_stem, cfg.model_path.empty() ? dir / "model" : fs::path(cfg.model_path)));
  const SubspaceModel model(traj, acq.coils, acq.basis);
  const ReconOutcome out = reconstruct(method, model, b, cfg, params ? &*params : nullptr);
  save_factor(dir / "u.ssma", out.u);
  write_text(dir / "trace.csv", trace_csv(out.trace, cfg.record_wall_time));
  char buf[96];
  std::snprintf(buf, sizeof buf, "%s reconstruction finished in %.1f s", method_name.c_str(), out.wall_seconds);
  log(buf);
}

void cmd_fit(const ExperimentConfig& cfg, const std::string& u_path, const std::string& mask_path) {
  const fs::path dir = cfg.output_dir;
  const Acquisition acq = build_acquisition(cfg);
  const SpatialFactor u = load_factor(or_default(u_path, dir / "u.ssma"));
  const Mask mask = load_mask(or_default(mask_path, dir / "mask.ssma"));
  const T1Map map = fit_t1_dictionary(u, acq.basis, acq.dict, mask);
  save_volume(dir / "t1.ssma", map.t1);
  save_volume(dir / "t1_amplitude.ssma", map.amplitude);
  save_volume(dir / "t1_residual.ssma", map.match_residual);
  write_image(dir / "t1", map.t1);
}

void cmd_eval(const ExperimentConfig& cfg, const std::string& name, const std::string& u_path,
              const std::string& t1_path) {
  const fs::path dir = cfg.output_dir;
  const Acquisition acq = build_acquisition(cfg);
  const Phantom ph = make_phantom(cfg.dims, cfg.tissues);
  const GroundTruth gt = ground_truth(ph, acq.seq);
  const SpatialFactor u = load_factor(or_default(u_path, dir / "u.ssma"));
  const RealVolume t1 = load_volume(or_default(t1_path, dir / "t1.ssma"));
  std::vector<ComplexVolume> est, truth;
  for (auto f : cfg.contrast_frames) {
    est.push_back(synthesize_contrast(u, acq.basis, f));
    truth.push_back(gt.frame(f));
  }
  const MetricsRow row = compare(name, t1, est, ph.t1_map, truth, ph.support_mask, 0.0);
  write_text(dir / "metrics.csv", metrics_csv({row}, cfg.contrast_frames));
  const RealVolume err = error_map(t1, ph.t1_map, ph.support_mask);
  save_volume(dir / "t1_error.ssma", err);
  write_image(dir / "t1_error", err);
  for (std::size_t k = 0; k < est.size(); ++k)
    write_image(dir / ("contrast_frame" + std::to_string(cfg.contrast_frames[k])), magnitude(est[k]));
  std::cout << metrics_csv({row}, cfg.contrast_frames);
}

void cmd_run(const ExperimentConfig& cfg) {
  const ExperimentReport rep = run_experiment(cfg, [](const std::string& stage) {
    if (!stage.empty()) log("stage " + stage);
  });
  render_outputs(rep, cfg.output_dir);
  std::cout << metrics_csv(rep.metrics, cfg.contrast_frames);
}

}  // namespace

int main(int argc, char** argv) {
  configure_allocator();
  CLI::App app{"Subspace MR reconstruction with a learned energy prior"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "INI configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Base seed (overrides [seeds] base)");
  app.add_option("--out", g.out, "Output directory (overrides [output] dir)");

  auto* simulate = app.add_subcommand("simulate", "Phantom, trajectories, coils and k-space");
  auto* basis = app.add_subcommand("basis", "Signal dictionary and temporal basis");
  auto* train = app.add_subcommand("train", "Train the energy model");
  auto* recon = app.add_subcommand("recon", "Reconstruct the spatial factor");
  std::string method = "ssmuse", kspace, model, u_path, mask_path, t1_path, name = "estimate";
  bool reference_budget = false;
  recon->add_option("--method", method, "ssmuse | quadratic | wavelet")
      ->check(CLI::IsMember({"ssmuse", "quadratic", "wavelet"}));
  recon->add_option("--kspace", kspace, "k-space file (default <out>/kspace_accelerated.ssma)");
  recon->add_option("--model", model, "Model checkpoint stem (default <out>/model)");
  recon->add_flag("--reference-budget", reference_budget, "Use the full-spoke trajectory");
  auto* fit = app.add_subcommand("fit-t1", "Dictionary-matched T1 map");
  fit->add_option("--u", u_path, "Spatial factor (default <out>/u.ssma)");
  fit->add_option("--mask", mask_path, "Support mask (default <out>/mask.ssma)");
  auto* eval = app.add_subcommand("eval", "Metrics against the configured phantom");
  eval->add_option("--name", name, "Row label in metrics.csv");
  eval->add_option("--u", u_path, "Spatial factor (default <out>/u.ssma)");
  eval->add_option("--t1", t1_path, "T1 map (default <out>/t1.ssma)");
  auto* run = app.add_subcommand("run", "Full experiment");
  auto* show = app.add_subcommand("config", "Print the effective configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  ExperimentConfig cfg;
  try {
    cfg = load_config(g);
  } catch (const ConfigError& e) {
    std::cerr << "ssmuse: " << e.what() << '\n';
    return 1;
  }

  try {
    if (*simulate) cmd_simulate(cfg);
    else if (*basis) cmd_basis(cfg);
    else if (*train) cmd_train(cfg);
    else if (*recon) cmd_recon(cfg, method, kspace, model, reference_budget);
    else if (*fit) cmd_fit(cfg, u_path, mask_path);
    else if (*eval) cmd_eval(cfg, name, u_path, t1_path);
    else if (*run) cmd_run(cfg);
    else if (*show) std::cout << cfg.to_ini();
  } catch (const ConfigError& e) {
    std::cerr << "ssmuse: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "ssmuse: error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
