#include "ssmuse/solver.hpp"

#include <chrono>
#include <cmath>
#include <random>
#include <string>

namespace ssmuse {

namespace {

void require_same(const SpatialFactor& a, const SpatialFactor& b, const char* where) {
  if (!a.same_shape(b)) throw DomainError(std::string(where) + ": spatial factor shapes differ");
}

double diff_norm2(const SpatialFactor& a, const SpatialFactor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += std::norm(a.data[i] - b.data[i]);
  return s;
}

double max_abs(const SpatialFactor& u) {
  double m = 0.0;
  for (const auto& v : u.data) m = std::max(m, std::abs(v));
  return m;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

double ReconConfig::beta_at(std::size_t iteration) const {
  double beta = beta_schedule.empty() ? 0.0 : beta_schedule.front().beta;
  for (const auto& s : beta_schedule)
    if (s.from_iteration <= iteration) beta = s.beta;
  return beta;
}

void ReconConfig::validate() const {
  if (!(lambda >= 0.0)) throw DomainError("ReconConfig: lambda must be >= 0");
  if (beta_schedule.empty()) throw DomainError("ReconConfig: empty beta schedule");
  for (std::size_t i = 0; i < beta_schedule.size(); ++i) {
    if (!(beta_schedule[i].beta >= 0.0)) throw DomainError("ReconConfig: beta must be >= 0");
    if (i > 0 && beta_schedule[i].from_iteration <= beta_schedule[i - 1].from_iteration)
      throw DomainError("ReconConfig: beta schedule iterations must increase");
  }
  if (!(prox_step_size > 0.0)) throw DomainError("ReconConfig: prox_step_size must be positive");
  if (!(cg_residual_tol >= 0.0)) throw DomainError("ReconConfig: cg_residual_tol must be >= 0");
}

// ---------------------------------------------------------------------------

DataTerm::DataTerm(const SubspaceModel& model, KSpaceData b, double gain)
    : model_(&model), b_(std::move(b)), gain_(gain), rhs_(model.adjoint(b_)) {
  for (auto& v : rhs_.data) v *= gain_;
}

SpatialFactor DataTerm::normal(const SpatialFactor& u) const {
  SpatialFactor out = model_->normal.apply(u);
  const double g2 = gain_ * gain_;
  for (auto& v : out.data) v *= g2;
  return out;
}

double DataTerm::value(const SpatialFactor& u) const {
  const KSpaceData ax = model_->forward(u);
  double s = 0.0;
  for (std::size_t i = 0; i < ax.data.size(); ++i) s += std::norm(gain_ * ax.data[i] - b_.data[i]);
  return 0.5 * s;
}

CgResult conjugate_gradient(const std::function<SpatialFactor(const SpatialFactor&)>& apply,
                            const SpatialFactor& rhs, SpatialFactor x0, std::size_t max_iters, double tol) {
  require_same(rhs, x0, "conjugate_gradient");
  CgResult res{std::move(x0), 0, 0.0};
  SpatialFactor r = rhs;
  {
    const SpatialFactor ax = apply(res.x);
    for (std::size_t i = 0; i < r.data.size(); ++i) r.data[i] -= ax.data[i];
  }
  const double r0 = std::sqrt(norm2(r.data));
  if (r0 == 0.0 || max_iters == 0) {
    res.relative_residual = r0 == 0.0 ? 0.0 : 1.0;
    return res;
  }
  SpatialFactor p = r;
  double rr = r0 * r0;
  while (true) {
    const SpatialFactor ap = apply(p);
    const double pap = real_inner(p.data, ap.data);
    if (!(pap > 0.0) || !std::isfinite(pap))
      throw SolverError("conjugate_gradient: non-positive curvature at iteration " + std::to_string(res.iterations));
    const double alpha = rr / pap;
    axpy(alpha, p.data, res.x.data);
    axpy(-alpha, ap.data, r.data);
    ++res.iterations;
    const double rr_new = norm2(r.data);
    res.relative_residual = std::sqrt(rr_new) / r0;
    if (res.relative_residual <= tol || res.iterations >= max_iters) break;
    const double beta = rr_new / rr;
    for (std::size_t i = 0; i < p.data.size(); ++i) p.data[i] = r.data[i] + beta * p.data[i];
    rr = rr_new;
  }
  return res;
}

double estimate_normal_norm(const DataTerm& dt, std::size_t iters) {
  const SpatialFactor& shape = dt.rhs();
  SpatialFactor x(shape.dims, shape.count);
  std::mt19937_64 rng(0x5eed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : x.data) v = {normal(rng), normal(rng)};
  double lambda = 0.0;
  for (std::size_t k = 0; k < std::max<std::size_t>(iters, 1); ++k) {
    const double nx = std::sqrt(norm2(x.data));
    for (auto& v : x.data) v /= nx;
    SpatialFactor y = dt.normal(x);
    lambda = real_inner(x.data, y.data);
    x = std::move(y);
  }
  if (!std::isfinite(lambda) || !(lambda > 0.0))
    throw SolverError("estimate_normal_norm: power iteration did not produce a positive finite estimate");
  return lambda;
}

// ---------------------------------------------------------------------------

double prox_objective(const SpatialFactor& z, const SpatialFactor& u, const EnergyModelParams& params,
                      double lambda, double beta) {
  require_same(z, u, "prox_objective");
  if (!(beta > 0.0)) throw DomainError("prox_objective: beta must be positive");
  double obj = diff_norm2(u, z);
  if (lambda != 0.0)
    obj += lambda / (2.0 * beta) *
           (energy_orientation(params, z, Orientation::x) + energy_orientation(params, z, Orientation::y));
  return obj;
}

SpatialFactor z_update(const SpatialFactor& u, const EnergyModelParams& params, const ReconConfig& cfg,
                       double beta) {
  if (!(beta > 0.0)) throw DomainError("z_update: beta must be positive");
  SpatialFactor z = u;
  if (cfg.lambda == 0.0) return z;
  const double w = cfg.lambda / (2.0 * beta);
  SpatialFactor grad(u.dims, u.count);
  for (std::size_t step = 0; step < cfg.prox_steps; ++step) {
    const SpatialFactor sx = score_orientation(params, z, Orientation::x);
    const SpatialFactor sy = score_orientation(params, z, Orientation::y);
    for (std::size_t i = 0; i < z.data.size(); ++i)
      grad.data[i] = 2.0 * (z.data[i] - u.data[i]) + w * (sx.data[i] + sy.data[i]);
    if (cfg.prox_grad_tol > 0.0 && std::sqrt(norm2(grad.data)) <= cfg.prox_grad_tol) break;
    axpy(-cfg.prox_step_size, grad.data, z.data);
    if (!all_finite(z.data)) throw SolverError("z_update: non-finite iterate at step " + std::to_string(step));
  }
  return z;
}

double dc_objective(const DataTerm& dt, const SpatialFactor& u, const SpatialFactor& z, double beta) {
  require_same(u, z, "dc_objective");
  return dt.value(u) + beta * diff_norm2(u, z);
}

CgResult u_update(const DataTerm& dt, const SpatialFactor& z, const ReconConfig& cfg, double beta,
                  const SpatialFactor& warm_start) {
  require_same(z, dt.rhs(), "u_update");
  require_same(warm_start, dt.rhs(), "u_update");
  if (!(beta >= 0.0)) throw DomainError("u_update: beta must be >= 0");
  SpatialFactor rhs = dt.rhs();
  axpy(2.0 * beta, z.data, rhs.data);
  auto apply = [&](const SpatialFactor& x) {
    SpatialFactor y = dt.normal(x);
    axpy(2.0 * beta, x.data, y.data);
    return y;
  };
  return conjugate_gradient(apply, rhs, warm_start, cfg.cg_max_iters, cfg.cg_residual_tol);
}

SplitTerms split_objective(const DataTerm& dt, const SpatialFactor& u, const SpatialFactor& z,
                           const EnergyModelParams& params, double lambda, double beta) {
  require_same(u, z, "split_objective");
  SplitTerms t;
  t.data = dt.value(u);
  t.coupling = beta * diff_norm2(u, z);
  t.prior = lambda == 0.0 ? 0.0 : lambda * energy_4d(params, z);
  t.total = t.data + t.coupling + t.prior;
  return t;
}

// ---------------------------------------------------------------------------

PreparedProblem prepare_problem(const SubspaceModel& model, const KSpaceData& b, const ReconConfig& cfg) {
  cfg.validate();
  const DataTerm raw(model, b, 1.0);
  ProblemScaling scaling;
  if (cfg.normalize) scaling.gain = 1.0 / std::sqrt(estimate_normal_norm(raw, cfg.power_iters));

  // Adjoint reconstruction scaled by the least-squares optimal factor.
  SpatialFactor init = raw.rhs();
  const SpatialFactor g_init = raw.normal(init);
  const double den = real_inner(init.data, g_init.data);
  const double alpha = den > 0.0 ? real_inner(init.data, raw.rhs().data) / den : 0.0;
  for (auto& v : init.data) v *= alpha;
  if (cfg.normalize) {
    const double peak = max_abs(init);
    if (peak > 0.0) scaling.data_scale = 1.0 / peak;
  }

  KSpaceData scaled = b;
  for (auto& v : scaled.data) v *= scaling.data_scale * scaling.gain;
  if (cfg.init == InitMode::zero) {
    std::fill(init.data.begin(), init.data.end(), cplx{});
  } else {
    for (auto& v : init.data) v *= scaling.data_scale;
  }
  return {scaling, DataTerm(model, std::move(scaled), scaling.gain), std::move(init)};
}

namespace {

SpatialFactor unscale(SpatialFactor u, const ProblemScaling& s) {
  for (auto& v : u.data) v /= s.data_scale;
  return u;
}

}  // namespace

ReconResult map_reconstruct(const SubspaceModel& model, const KSpaceData& b, const EnergyModelParams& params,
                            const ReconConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  PreparedProblem prob = prepare_problem(model, b, cfg);
  const DataTerm& dt = prob.data_term;
  const double lambda = cfg.lambda;

  SpatialFactor u = std::move(prob.initial);
  SpatialFactor z = u;
  double prior_z = lambda == 0.0 ? 0.0 : lambda * energy_4d(params, z);

  SolverTrace trace;
  auto record = [&](std::size_t it, double beta, std::size_t cg, bool accepted) {
    TraceRecord rec;
    rec.iteration = it;
    rec.beta = beta;
    rec.data_term = dt.value(u);
    rec.coupling_term = beta * diff_norm2(u, z);
    rec.prior_term = prior_z;
    rec.objective = rec.data_term + rec.coupling_term + rec.prior_term;
    rec.cg_iterations = cg;
    rec.prox_accepted = accepted;
    rec.wall_seconds = seconds_since(t0);
    trace.records.push_back(rec);
    if (!std::isfinite(rec.objective))
      throw ReconError("map_reconstruct: non-finite objective at iteration " + std::to_string(it), trace);
  };
  record(0, cfg.beta_at(0), 0, true);

  for (std::size_t n = 0; n < cfg.outer_iters; ++n) {
    const double beta = cfg.beta_at(n);
    bool accepted = true;
    try {
      SpatialFactor cand = z_update(u, params, cfg, beta);
      const double prior_cand = lambda == 0.0 ? 0.0 : lambda * energy_4d(params, cand);
      if (cfg.safeguard_prox && lambda != 0.0) {
        const double f_cand = beta * diff_norm2(u, cand) + prior_cand;
        const double f_prev = beta * diff_norm2(u, z) + prior_z;
        accepted = f_cand <= f_prev;
      }
      if (accepted) {
        z = std::move(cand);
        prior_z = prior_cand;
      }
      CgResult cg = u_update(dt, z, cfg, beta, u);
      u = std::move(cg.x);
      record(n + 1, beta, cg.iterations, accepted);
    } catch (const ReconError&) {
      throw;
    } catch (const SolverError& e) {
      throw ReconError(std::string(e.what()) + " (outer iteration " + std::to_string(n) + ")", trace);
    }
  }
  return {unscale(std::move(u), prob.scaling), std::move(trace), prob.scaling};
}

ReconResult baseline_quadratic(const SubspaceModel& model, const KSpaceData& b, double mu, const ReconConfig& cfg) {
  if (!(mu > 0.0)) throw DomainError("baseline_quadratic: mu must be positive");
  PreparedProblem prob = prepare_problem(model, b, cfg);
  const SpatialFactor zero(prob.initial.dims, prob.initial.count);
  CgResult cg = u_update(prob.data_term, zero, cfg, mu, zero);
  ReconResult res;
  TraceRecord rec;
  rec.iteration = 1;
  rec.beta = mu;
  rec.data_term = prob.data_term.value(cg.x);
  rec.coupling_term = mu * norm2(cg.x.data);
  rec.objective = rec.data_term + rec.coupling_term;
  rec.cg_iterations = cg.iterations;
  res.trace.records.push_back(rec);
  res.scaling = prob.scaling;
  res.u = unscale(std::move(cg.x), prob.scaling);
  return res;
}

}  // namespace ssmuse
