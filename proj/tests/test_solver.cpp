#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "ssmuse/solver.hpp"

using namespace ssmuse;
using testutil::rel_diff;

namespace {

TemporalBasis small_basis(std::size_t frames, std::size_t rank) {
  const auto dict = build_dictionary(log_t1_grid(30), testutil::short_sequence(frames));
  return compute_temporal_basis(dict, rank);
}

// Undersampled radial instance with smooth coils.
SubspaceModel radial_model(Dims3 d, std::size_t frames, std::size_t rank, std::uint64_t seed) {
  auto traj = stack_of_stars(make_radial_trajectory(frames, 1, d.nx, d.nx, seed), d.nz);
  return SubspaceModel(std::move(traj), make_coil_maps(d, 4), small_basis(frames, rank));
}

// Every frame fully sampled on the Cartesian grid.
SubspaceModel cartesian_model(Dims3 d, std::size_t frames, std::size_t rank) {
  return SubspaceModel(testutil::cartesian_trajectory(frames, d), make_coil_maps(d, 4), small_basis(frames, rank));
}

ReconConfig raw_config() {
  ReconConfig c;
  c.normalize = false;
  return c;
}

EnergyModelParams identity_params() {
  EnergyModelParams p;
  p.arch = testutil::small_arch(true);
  p.weights.assign(p.arch.weight_count(), 0.0);
  return p;
}

double rel_norm(const SpatialFactor& a, const SpatialFactor& b) { return rel_diff(a.data, b.data); }

}  // namespace

TEST_SUITE("solver") {

TEST_CASE("defaults and schedule lookup") {
  const ReconConfig c;
  CHECK(c.lambda == 2e-4);
  CHECK(c.outer_iters == 30);
  CHECK(c.prox_steps == 2);
  CHECK(c.prox_step_size == 0.1);
  CHECK(c.cg_max_iters == 30);
  CHECK(c.cg_residual_tol == 0.05);
  CHECK(c.beta_at(0) == 1e-4);
  CHECK(c.beta_at(27) == 1e-4);
  CHECK(c.beta_at(28) == 4e-4);
  CHECK(c.beta_at(29) == 8e-4);
  ReconConfig bad;
  bad.beta_schedule = {{0, 1e-4}, {0, 2e-4}};
  CHECK_THROWS_AS(bad.validate(), DomainError);
  bad.beta_schedule.clear();
  CHECK_THROWS_AS(bad.validate(), DomainError);
}

TEST_CASE("conjugate gradients") {
  std::mt19937_64 rng(1);
  const Dims3 d{3, 3, 2};
  // Diagonal SPD operator.
  std::vector<double> diag(d.voxels() * 2);
  std::uniform_real_distribution<double> u(0.5, 3.0);
  for (auto& x : diag) x = u(rng);
  auto apply = [&](const SpatialFactor& x) {
    SpatialFactor y = x;
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] *= diag[i];
    return y;
  };
  const auto rhs = testutil::random_factor(d, 2, rng);
  const auto res = conjugate_gradient(apply, rhs, SpatialFactor(d, 2), 100, 1e-14);
  SpatialFactor exact = rhs;
  for (std::size_t i = 0; i < exact.data.size(); ++i) exact.data[i] /= diag[i];
  CHECK(rel_norm(res.x, exact) < 1e-12);
  CHECK(res.relative_residual <= 1e-14);

  const auto capped = conjugate_gradient(apply, rhs, SpatialFactor(d, 2), 3, 0.0);
  CHECK(capped.iterations == 3);

  auto negative = [](const SpatialFactor& x) {
    SpatialFactor y = x;
    for (auto& v : y.data) v = -v;
    return y;
  };
  CHECK_THROWS_AS(conjugate_gradient(negative, rhs, SpatialFactor(d, 2), 10, 1e-6), SolverError);
}

TEST_CASE("z update") {
  const Dims3 d{6, 6, 4};
  std::mt19937_64 rng(2);
  const auto u = testutil::random_factor(d, 2, rng, 0.3);
  const auto p = testutil::random_params(testutil::small_arch(), 3, 0.2);

  ReconConfig c;
  c.lambda = 0.0;
  CHECK(z_update(u, p, c, 1e-4).data == u.data);

  c = ReconConfig{};
  CHECK(z_update(u, identity_params(), c, 1e-4).data == u.data);

  c.prox_steps = 50;
  c.lambda = 1e-4;
  c.prox_step_size = 0.02;
  const auto z = z_update(u, p, c, 1e-4);
  CHECK(prox_objective(z, u, p, c.lambda, 1e-4) < prox_objective(u, u, p, c.lambda, 1e-4));
  CHECK_THROWS_AS(z_update(u, p, c, 0.0), DomainError);
}

TEST_CASE("u update") {
  const Dims3 d{8, 8, 4};
  std::mt19937_64 rng(4);
  SubspaceModel m = radial_model(d, 8, 2, 5);
  const auto truth = testutil::random_factor(d, 2, rng);
  KSpaceData b = m.forward(truth);
  const DataTerm dt(m, b);
  const auto z = testutil::random_factor(d, 2, rng);
  const auto warm = testutil::random_factor(d, 2, rng);
  ReconConfig c = raw_config();

  SUBCASE("large beta pins U to Z") {
    const double big = 1e6 * estimate_normal_norm(dt, 20);
    const auto res = u_update(dt, z, c, big, warm);
    CHECK(rel_norm(res.x, z) < 1e-3);
  }
  SUBCASE("CG never increases the subproblem objective") {
    for (double beta : {1e-4, 1e-1, 10.0}) {
      const auto res = u_update(dt, z, c, beta, warm);
      CHECK(dc_objective(dt, res.x, z, beta) <= dc_objective(dt, warm, z, beta));
      CHECK(res.iterations <= c.cg_max_iters);
    }
  }
  SUBCASE("system is Hermitian positive definite") {
    const double beta = 1e-3;
    auto apply = [&](const SpatialFactor& x) {
      SpatialFactor y = dt.normal(x);
      axpy(2.0 * beta, x.data, y.data);
      return y;
    };
    for (int t = 0; t < 5; ++t) {
      const auto x = testutil::random_factor(d, 2, rng), y = testutil::random_factor(d, 2, rng);
      const auto mx = apply(x), my = apply(y);
      CHECK(real_inner(mx.data, x.data) > 0.0);
      const cplx a = inner(y.data, mx.data), bb = std::conj(inner(x.data, my.data));
      CHECK(std::abs(a - bb) < 1e-10 * std::abs(a));
    }
  }
  SUBCASE("beta zero recovers the factor from fully sampled data") {
    SubspaceModel full = cartesian_model(d, 8, 2);
    const DataTerm exact(full, full.forward(truth));
    ReconConfig tight = raw_config();
    tight.cg_max_iters = 500;
    tight.cg_residual_tol = 1e-13;
    const auto res = u_update(exact, SpatialFactor(d, 2), tight, 0.0, SpatialFactor(d, 2));
    CHECK(rel_norm(res.x, truth) < 1e-6);
  }
}

TEST_CASE("split objective") {
  const Dims3 d{8, 8, 4};
  std::mt19937_64 rng(6);
  SubspaceModel m = radial_model(d, 8, 2, 7);
  const auto u = testutil::random_factor(d, 2, rng, 0.3);
  const DataTerm exact(m, m.forward(u));
  const auto id = identity_params();
  CHECK(split_objective(exact, u, u, id, 2e-4, 1e-4).total < 1e-20);

  const auto z = testutil::random_factor(d, 2, rng, 0.3);
  const auto p = testutil::random_params(testutil::small_arch(), 8, 0.2);
  KSpaceData b(m.traj.n_frames(), m.traj.samples_per_frame(), 4);
  b.data = testutil::random_complex(b.data.size(), rng);
  const DataTerm dt(m, b);
  const auto t = split_objective(dt, u, z, p, 2e-4, 1e-3);
  double coupling = 0.0;
  for (std::size_t i = 0; i < u.data.size(); ++i) coupling += std::norm(u.data[i] - z.data[i]);
  CHECK(t.data == doctest::Approx(dt.value(u)).epsilon(1e-14));
  CHECK(t.coupling == doctest::Approx(1e-3 * coupling).epsilon(1e-14));
  CHECK(t.prior == doctest::Approx(2e-4 * energy_4d(p, z)).epsilon(1e-14));
  CHECK(t.total == doctest::Approx(t.data + t.coupling + t.prior).epsilon(1e-14));
  CHECK(split_objective(dt, u, z, p, 0.0, 0.0).total == doctest::Approx(dt.value(u)).epsilon(1e-14));
  CHECK_THROWS_AS(split_objective(dt, u, SpatialFactor(d, 3), p, 0.0, 0.0), DomainError);
}

TEST_CASE("normalisation of the problem") {
  const Dims3 d{8, 8, 4};
  std::mt19937_64 rng(9);
  SubspaceModel m = radial_model(d, 8, 2, 10);
  const auto u = testutil::random_factor(d, 2, rng);
  const KSpaceData b = m.forward(u);
  const auto prob = prepare_problem(m, b, ReconConfig{});
  CHECK(estimate_normal_norm(prob.data_term, 50) == doctest::Approx(1.0).epsilon(0.05));
  double peak = 0.0;
  for (const auto& v : prob.initial.data) peak = std::max(peak, std::abs(v));
  CHECK(peak == doctest::Approx(1.0).epsilon(1e-12));
  // The scaled problem is the original one up to the data scale.
  SpatialFactor scaled = u;
  for (auto& v : scaled.data) v *= prob.scaling.data_scale;
  CHECK(prob.data_term.value(scaled) < 1e-20 * norm2(prob.data_term.data().data) + 1e-24);
}

TEST_CASE("map reconstruction") {
  const Dims3 d{8, 8, 4};
  std::mt19937_64 rng(11);
  const auto truth = testutil::random_factor(d, 2, rng);

  SUBCASE("noiseless fully determined instance") {
    SubspaceModel m = cartesian_model(d, 8, 2);
    ReconConfig c;
    c.lambda = 0.0;
    c.cg_residual_tol = 1e-10;
    c.cg_max_iters = 200;
    c.outer_iters = 3;
    const auto res = map_reconstruct(m, m.forward(truth), identity_params(), c);
    for (std::size_t tau : {0, 3, 5}) {
      const auto x = [&](const SpatialFactor& f) {
        std::vector<cplx> out(d.voxels());
        for (std::size_t r = 0; r < 2; ++r)
          for (std::size_t i = 0; i < d.voxels(); ++i)
            out[i] += f.volume(r)[i] * m.basis.v(Eigen::Index(r), Eigen::Index(tau));
        return out;
      };
      CHECK(rel_diff(x(res.u), x(truth)) < 1e-3);
    }
  }

  SUBCASE("lambda zero agrees with the quadratic baseline") {
    SubspaceModel m = cartesian_model(d, 8, 2);
    KSpaceData b = m.forward(truth);
    for (auto& v : b.data) v += cplx{0.01, -0.02};
    ReconConfig c;
    c.lambda = 0.0;
    c.beta_schedule = {{0, 1e-4}};
    c.cg_residual_tol = 1e-10;
    c.cg_max_iters = 200;
    c.outer_iters = 5;
    const auto map = map_reconstruct(m, b, identity_params(), c);
    const auto quad = baseline_quadratic(m, b, 1e-12, c);
    CHECK(rel_norm(map.u, quad.u) < 1e-6);
  }

  SUBCASE("split objective descends at fixed beta on an undersampled instance") {
    SubspaceModel m = radial_model(d, 8, 2, 12);
    KSpaceData b = m.forward(truth);
    const auto p = testutil::random_params(testutil::small_arch(), 13, 0.2);
    ReconConfig c;
    c.outer_iters = 8;
    c.lambda = 1e-3;
    c.beta_schedule = {{0, 1e-3}, {6, 4e-3}};
    const auto res = map_reconstruct(m, b, p, c);
    const auto& r = res.trace.records;
    REQUIRE(r.size() == 9);
    CHECK(r[0].iteration == 0);
    for (std::size_t n = 1; n < r.size(); ++n) {
      CHECK(r[n].cg_iterations <= c.cg_max_iters);
      if (r[n].beta == r[n - 1].beta) CHECK(r[n].objective <= r[n - 1].objective * (1.0 + 1e-8));
    }
    CHECK(r[5].objective <= r[0].objective);
    // Deterministic.
    CHECK(map_reconstruct(m, b, p, c).u.data == res.u.data);
  }
}

TEST_CASE("quadratic baseline") {
  const Dims3 d{8, 8, 4};
  std::mt19937_64 rng(14);
  SubspaceModel m = radial_model(d, 8, 2, 15);
  const auto truth = testutil::random_factor(d, 2, rng);
  KSpaceData b = m.forward(truth);
  ReconConfig c;
  c.cg_residual_tol = 1e-8;
  c.cg_max_iters = 200;

  const auto huge = baseline_quadratic(m, b, 1e9, c);
  CHECK(std::sqrt(norm2(huge.u.data)) < 1e-6 * std::sqrt(norm2(truth.data)));

  const auto reg = baseline_quadratic(m, b, 1e-3, c);
  const auto ls = baseline_quadratic(m, b, 1e-12, c);
  const DataTerm dt(m, b);
  CHECK(dt.value(reg.u) > dt.value(ls.u));
  CHECK(norm2(reg.u.data) < norm2(ls.u.data));

  KSpaceData zero(b.frames, b.samples, b.coils);
  for (const auto& v : baseline_quadratic(m, zero, 1e-3, c).u.data) CHECK(v == cplx{});
  CHECK_THROWS_AS(baseline_quadratic(m, b, 0.0, c), DomainError);
}

TEST_CASE("Haar transform and soft threshold") {
  const Dims3 d{8, 6, 4};
  std::mt19937_64 rng(16);
  const auto x = testutil::random_complex(d.voxels(), rng);
  auto w = x;
  haar3d_forward(w, d);
  CHECK(std::abs(norm2(w) - norm2(x)) < 1e-12 * norm2(x));
  haar3d_inverse(w, d);
  CHECK(rel_diff(w, x) < 1e-12);

  // W^T W = I column by column.
  const Dims3 s{4, 2, 2};
  double worst = 0.0;
  std::vector<std::vector<cplx>> cols;
  for (std::size_t i = 0; i < s.voxels(); ++i) {
    std::vector<cplx> e(s.voxels());
    e[i] = 1.0;
    haar3d_forward(e, s);
    cols.push_back(e);
  }
  for (std::size_t i = 0; i < cols.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j)
      worst = std::max(worst, std::abs(inner(cols[i], cols[j]) - cplx(i == j ? 1.0 : 0.0)));
  CHECK(worst <= 1e-12);

  std::vector<cplx> odd(3 * 4 * 2);
  CHECK_THROWS_AS(haar3d_forward(odd, Dims3{3, 4, 2}), DomainError);

  // Scalar prox closed form: argmin_x 1/2 |x - c|^2 + t |x|.
  std::uniform_real_distribution<double> uu(-2.0, 2.0);
  for (int k = 0; k < 50; ++k) {
    const cplx c{uu(rng), uu(rng)};
    const double t = std::abs(uu(rng));
    const cplx p = soft_threshold(c, t);
    auto f = [&](cplx x) { return 0.5 * std::norm(x - c) + t * std::abs(x); };
    for (int j = 0; j < 20; ++j) CHECK(f(p) <= f(p + cplx{uu(rng), uu(rng)} * 0.1) + 1e-15);
    if (std::abs(c) <= t) CHECK(p == cplx{});
    else CHECK(std::abs(std::abs(p) - (std::abs(c) - t)) < 1e-14);
  }
}

TEST_CASE("wavelet baseline") {
  const Dims3 d{8, 8, 4};
  std::mt19937_64 rng(17);
  SubspaceModel m = radial_model(d, 8, 2, 18);
  const auto truth = testutil::random_factor(d, 2, rng);
  KSpaceData b = m.forward(truth);
  ReconConfig c;

  for (double gamma : {0.0, 2e-4, 1e-2}) {
    for (bool momentum : {false}) {
      const auto res = baseline_wavelet(m, b, gamma, 25, c, momentum);
      REQUIRE(res.objective.size() == 26);
      for (std::size_t k = 1; k < res.objective.size(); ++k)
        CHECK(res.objective[k] <= res.objective[k - 1] + 1e-10 * std::abs(res.objective[k - 1]));
    }
  }
  const auto killed = baseline_wavelet(m, b, 1e9, 3, c);
  for (const auto& v : killed.u.data) CHECK(v == cplx{});
  CHECK_THROWS_AS(baseline_wavelet(m, b, -1.0, 3, c), DomainError);
  CHECK(baseline_wavelet(m, b, 2e-4, 5, c, true).u.data.size() == truth.data.size());
}

}  // TEST_SUITE
