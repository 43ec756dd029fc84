#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "ssmuse/experiment.hpp"
#include "ssmuse/io.hpp"

namespace ssmuse {

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

Acquisition build_acquisition(const ExperimentConfig& cfg) {
  cfg.validate();
  Acquisition acq;
  acq.seq = cfg.sequence();
  acq.dict = build_dictionary(log_t1_grid(cfg.dictionary_size, cfg.t1_min, cfg.t1_max), acq.seq);
  acq.basis = compute_temporal_basis(acq.dict, cfg.rank);
  const Trajectory radial = make_radial_trajectory(cfg.echoes, cfg.spokes_per_frame, cfg.readout,
                                                   std::max(cfg.dims.nx, cfg.dims.ny), cfg.trajectory_seed_value());
  acq.reference_traj = stack_of_stars(radial, cfg.dims.nz);
  acq.accelerated_traj = subsample_spokes(acq.reference_traj, cfg.accelerated_spokes);
  acq.coils = make_coil_maps(cfg.dims, cfg.coils);
  return acq;
}

TrainResult train_model(const ExperimentConfig& cfg, const Acquisition& acq,
                        const std::function<void(const EpochLog&)>& on_epoch) {
  std::vector<SpatialFactor> factors;
  for (std::size_t p = 0; p < cfg.train_phantoms; ++p) {
    const Phantom ph = make_phantom(cfg.dims, jitter_tissues(cfg.tissues, cfg.train_phantom_seed_value() + p));
    factors.push_back(ground_truth(ph, acq.seq).factor(acq.basis));
  }
  const TrainingSlices data = extract_training_slices(factors, cfg.snr_floor);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.train_seed_value();
  return train_score_matching(init_network(cfg.arch, cfg.init_seed_value()), data.slices, tc, on_epoch);
}

ReconOutcome reconstruct(Method method, const SubspaceModel& model, const KSpaceData& b, const ExperimentConfig& cfg,
                         const EnergyModelParams* params) {
  const auto t0 = Clock::now();
  ReconOutcome out;
  switch (method) {
    case Method::ssmuse: {
      if (!params) throw DomainError("reconstruct: the ssmuse method needs a trained energy model");
      ReconResult r = map_reconstruct(model, b, *params, cfg.recon);
      out.u = std::move(r.u);
      out.trace = std::move(r.trace);
      break;
    }
    case Method::quadratic: {
      ReconResult r = baseline_quadratic(model, b, cfg.quadratic_mu, cfg.recon);
      out.u = std::move(r.u);
      out.trace = std::move(r.trace);
      break;
    }
    case Method::wavelet: {
      WaveletResult r = baseline_wavelet(model, b, cfg.wavelet_gamma, cfg.wavelet_iters, cfg.recon);
      out.u = std::move(r.u);
      for (std::size_t k = 0; k < r.objective.size(); ++k) {
        TraceRecord rec;
        rec.iteration = k;
        rec.objective = r.objective[k];
        out.trace.records.push_back(rec);
      }
      break;
    }
  }
  out.wall_seconds = since(t0);
  return out;
}

MetricsRow compare(const std::string& name, const RealVolume& t1, const std::vector<ComplexVolume>& contrasts,
                   const RealVolume& ref_t1, const std::vector<ComplexVolume>& ref_contrasts, const Mask& mask,
                   double wall_seconds) {
  if (contrasts.size() != ref_contrasts.size()) throw DomainError("compare: contrast count mismatch");
  MetricsRow row;
  row.method = name;
  row.psnr_t1_db = psnr(t1, ref_t1, mask);
  const RealVolume err = error_map(t1, ref_t1, mask);
  double sum = 0.0;
  for (std::size_t i = 0; i < err.data.size(); ++i) sum += err.data[i];
  row.mean_abs_t1_err_s = sum / static_cast<double>(mask_count(mask));
  for (std::size_t k = 0; k < contrasts.size(); ++k)
    row.psnr_contrast_db.push_back(psnr(magnitude(contrasts[k]), magnitude(ref_contrasts[k]), mask));
  row.wall_seconds = wall_seconds;
  return row;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows, const std::vector<std::size_t>& frames) {
  std::ostringstream os;
  os << "method,psnr_t1_db,mean_abs_t1_err_s";
  for (auto f : frames) os << ",psnr_contrast_db_frame" << f;
  os << ",wall_seconds\n";
  for (const auto& r : rows) {
    if (r.psnr_contrast_db.size() != frames.size()) throw DomainError("metrics_csv: contrast column mismatch");
    os << r.method << ',' << num(r.psnr_t1_db) << ',' << num(r.mean_abs_t1_err_s);
    for (double p : r.psnr_contrast_db) os << ',' << num(p);
    os << ',' << num(r.wall_seconds) << '\n';
  }
  return os.str();
}

std::string trace_csv(const SolverTrace& trace, bool with_wall_time) {
  std::ostringstream os;
  os << "iteration,beta,data_term,coupling_term,prior_term,objective,cg_iterations,prox_accepted,wall_seconds\n";
  for (const auto& r : trace.records)
    os << r.iteration << ',' << num(r.beta) << ',' << num(r.data_term) << ',' << num(r.coupling_term) << ','
       << num(r.prior_term) << ',' << num(r.objective) << ',' << r.cg_iterations << ',' << (r.prox_accepted ? 1 : 0)
       << ',' << num(with_wall_time ? r.wall_seconds : 0.0) << '\n';
  return os.str();
}

std::string training_log_csv(const std::vector<EpochLog>& log, bool with_wall_time) {
  std::ostringstream os;
  os << "epoch,mean_loss,wall_seconds\n";
  for (const auto& e : log)
    os << e.epoch << ',' << num(e.mean_loss) << ',' << num(with_wall_time ? e.wall_seconds : 0.0) << '\n';
  return os.str();
}

ExperimentReport run_experiment(const ExperimentConfig& cfg, const ProgressFn& progress) {
  ExperimentReport rep;
  rep.config = cfg;
  std::string stage;
  auto t_stage = Clock::now();
  auto enter = [&](const std::string& name) {
    if (!stage.empty()) rep.timings.push_back({stage, since(t_stage)});
    stage = name;
    t_stage = Clock::now();
    if (progress) progress(name);
  };

  try {
    enter("setup");
    cfg.validate();
    const Acquisition acq = build_acquisition(cfg);

    enter("simulate");
    rep.phantom = make_phantom(cfg.dims, cfg.tissues);
    const Synthesis syn = synthesize_kspace(rep.phantom, acq.seq, acq.reference_traj, acq.coils, cfg.noise_sigma,
                                            cfg.noise_seed_value());
    const KSpaceData accelerated = subsample_spokes(syn.data, acq.reference_traj, cfg.accelerated_spokes);
    rep.truth_factor = syn.truth.factor(acq.basis);
    for (auto f : cfg.contrast_frames) rep.truth_contrasts.push_back(syn.truth.frame(f));

    const bool needs_model = cfg.method == Method::ssmuse || cfg.reference_method == Method::ssmuse;
    if (needs_model) {
      enter("train");
      if (!cfg.model_path.empty()) {
        rep.model = load_model(cfg.model_path);
      } else {
        TrainResult tr = train_model(cfg, acq);
        rep.training_log = std::move(tr.log);
        rep.model = std::move(tr.params);
      }
    }
    const EnergyModelParams* params = rep.model ? &*rep.model : nullptr;

    enter("reconstruct");
    const SubspaceModel acc_model(acq.accelerated_traj, acq.coils, acq.basis);
    ReconOutcome main = reconstruct(cfg.method, acc_model, accelerated, cfg, params);
    rep.u = std::move(main.u);
    rep.trace = std::move(main.trace);

    enter("reference");
    double ref_wall = 0.0;
    {
      const SubspaceModel ref_model(acq.reference_traj, acq.coils, acq.basis);
      ReconOutcome ref = reconstruct(cfg.reference_method, ref_model, syn.data, cfg, params);
      rep.reference_u = std::move(ref.u);
      ref_wall = ref.wall_seconds;
    }

    enter("fit");
    const Mask& mask = rep.phantom.support_mask;
    rep.t1 = fit_t1_dictionary(rep.u, acq.basis, acq.dict, mask);
    rep.reference_t1 = fit_t1_dictionary(rep.reference_u, acq.basis, acq.dict, mask);
    rep.t1_error = error_map(rep.t1.t1, rep.phantom.t1_map, mask);
    for (auto f : cfg.contrast_frames) {
      rep.contrasts.push_back(synthesize_contrast(rep.u, acq.basis, f));
      rep.reference_contrasts.push_back(synthesize_contrast(rep.reference_u, acq.basis, f));
    }

    enter("metrics");
    const std::string name = to_string(cfg.method);
    const double wall = cfg.record_wall_time ? main.wall_seconds : 0.0;
    rep.metrics.push_back(
        compare(name, rep.t1.t1, rep.contrasts, rep.phantom.t1_map, rep.truth_contrasts, mask, wall));
    rep.metrics.push_back(compare("reference_" + to_string(cfg.reference_method), rep.reference_t1.t1,
                                  rep.reference_contrasts, rep.phantom.t1_map, rep.truth_contrasts, mask,
                                  cfg.record_wall_time ? ref_wall : 0.0));
    rep.metrics.push_back(compare(name + "_vs_reference", rep.t1.t1, rep.contrasts, rep.reference_t1.t1,
                                  rep.reference_contrasts, mask, wall));
    enter("");
  } catch (const std::exception& e) {
    throw ExperimentError(stage, e.what());
  }
  rep.timings.erase(std::remove_if(rep.timings.begin(), rep.timings.end(),
                                   [](const StageTime& s) { return s.stage.empty(); }),
                    rep.timings.end());
  return rep;
}

}  // namespace ssmuse
