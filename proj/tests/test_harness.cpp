#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "helpers.hpp"
#include "ssmuse/experiment.hpp"
#include "ssmuse/io.hpp"

using namespace ssmuse;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ssmuse_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string small_config_text() {
  return "[phantom]\nsize = 16\n"
         "[recon]\nmethod = quadratic\nreference_method = quadratic\n"
         "[eval]\ncontrast_frames = 8 40\n";
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SSMUSE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("phantom construction") {
  const Dims3 d{32, 32, 32};
  SUBCASE("single tissue filling the volume") {
    const auto ph = make_phantom(d, {{1.2, 0.9, {0.0, 0.0, 0.0}, {2.0, 2.0, 2.0}}});
    for (std::size_t i = 0; i < d.voxels(); ++i) {
      CHECK(ph.support_mask.data[i] == 1);
      CHECK(ph.t1_map.data[i] == 1.2);
    }
  }
  SUBCASE("disjoint ellipsoids match their analytic volumes") {
    const std::vector<Tissue> ts{{1.0, 1.0, {-0.2, 0.0, 0.0}, {0.15, 0.25, 0.2}},
                                 {2.0, 1.0, {0.22, 0.05, -0.05}, {0.18, 0.12, 0.3}}};
    const auto ph = make_phantom(d, ts);
    for (std::size_t t = 0; t < 2; ++t) {
      std::size_t n = 0;
      for (double v : ph.t1_map.data) n += v == ts[t].t1;
      const double vol = 4.0 / 3.0 * std::numbers::pi * ts[t].radii[0] * ts[t].radii[1] * ts[t].radii[2] * 32768.0;
      CHECK(std::abs(double(n) - vol) <= 0.05 * vol);
    }
  }
  SUBCASE("default phantom keeps a margin and consistent maps") {
    const auto ph = make_phantom(d, ExperimentConfig::default_tissues());
    for (std::size_t x = 0; x < 32; ++x)
      for (std::size_t y = 0; y < 32; ++y)
        for (std::size_t z = 0; z < 32; ++z) {
          const std::size_t i = d.index(x, y, z);
          const bool edge = x == 0 || y == 0 || z == 0 || x == 31 || y == 31 || z == 31;
          if (edge) CHECK(ph.support_mask.data[i] == 0);
          if (ph.support_mask.data[i]) {
            CHECK(ph.t1_map.data[i] > 0.0);
            CHECK(ph.proton_density.data[i] >= 0.0);
          } else {
            CHECK(ph.t1_map.data[i] == 0.0);
            CHECK(ph.proton_density.data[i] == 0.0);
          }
        }
    std::size_t csf = 0;
    for (double v : ph.t1_map.data) csf += v == 4.0;
    CHECK(csf > 0);
  }
  CHECK_THROWS_AS(make_phantom(Dims3{4, 8, 8}, ExperimentConfig::default_tissues()), DomainError);
  CHECK_THROWS_AS(make_phantom(d, {}), DomainError);
  CHECK_THROWS_AS(make_phantom(d, {{1.0, 1.0, {0, 0, 0}, {0.0, 0.2, 0.2}}}), DomainError);
  CHECK_THROWS_AS(make_phantom(d, {{1.0, 1.0, {3, 3, 3}, {0.1, 0.1, 0.1}}}), DomainError);
}

TEST_CASE("k-space synthesis") {
  const Dims3 d{8, 8, 8};
  const auto seq = testutil::short_sequence(16);
  const auto traj = stack_of_stars(make_radial_trajectory(16, 2, 8, 8, 1), 8);
  const auto coils = make_coil_maps(d, 2);
  const std::vector<Tissue> ts{{0.9, 1.0, {0, 0, 0}, {0.4, 0.4, 0.4}}, {2.0, 0.7, {0.1, 0, 0}, {0.15, 0.2, 0.2}}};
  const auto ph = make_phantom(d, ts);

  const auto zero_pd = make_phantom(d, {{0.9, 0.0, {0, 0, 0}, {0.4, 0.4, 0.4}}});
  for (const auto& v : synthesize_kspace(zero_pd, seq, traj, coils, 0.0, 1).data.data) CHECK(v == cplx{});

  const auto a = synthesize_kspace(ph, seq, traj, coils, 0.0, 1);
  CHECK(a.data.data == synthesize_kspace(ph, seq, traj, coils, 0.0, 1).data.data);

  // Exact against the materialised image series.
  for (std::size_t tau : {0, 7, 15}) {
    const auto ref = nudft_forward(a.truth.frame(tau), traj.frames[tau], coils);
    CHECK(testutil::rel_diff(a.clean.frame(tau), ref) < 1e-12);
    const auto x = a.truth.frame(tau);
    const auto sig = simulate_ir_signal(2.0, seq);  // the origin lies in the second tissue
    CHECK(std::abs(x(4, 4, 4) - cplx(0.7 * sig(Eigen::Index(tau)), 0.0)) < 1e-12);
  }

  // Noise statistics: E|n|^2 = sigma^2.
  const auto big = stack_of_stars(make_radial_trajectory(16, 32, 16, 8, 2), 8);
  const auto n = synthesize_kspace(ph, seq, big, coils, 0.01, 7);
  REQUIRE(n.data.data.size() >= 100000);
  double acc = 0.0, re = 0.0, im = 0.0;
  for (std::size_t i = 0; i < n.data.data.size(); ++i) {
    const cplx e = n.data.data[i] - n.clean.data[i];
    acc += std::norm(e);
    re += e.real() * e.real();
    im += e.imag() * e.imag();
  }
  const double count = double(n.data.data.size());
  CHECK(std::abs(acc / count - 1e-4) <= 0.05e-4);
  CHECK(std::abs(re / count - 0.5e-4) <= 0.05 * 0.5e-4);
  CHECK(std::abs(im / count - 0.5e-4) <= 0.05 * 0.5e-4);
  CHECK(synthesize_kspace(ph, seq, big, coils, 0.01, 8).data.data != n.data.data);
  CHECK_THROWS_AS(synthesize_kspace(ph, seq, big, coils, -1.0, 8), DomainError);
}

TEST_CASE("ground truth factor reproduces the projected series") {
  const Dims3 d{8, 8, 8};
  const auto seq = testutil::short_sequence(32);
  const auto dict = build_dictionary(log_t1_grid(50), seq);
  const auto basis = compute_temporal_basis(dict, 4);
  const auto ph = make_phantom(d, ExperimentConfig::default_tissues());
  const auto gt = ground_truth(ph, seq);
  const auto u = gt.factor(basis);
  for (std::size_t tau : {0, 16, 31}) {
    const auto img = synthesize_contrast(u, basis, tau), ref = gt.frame(tau);
    CHECK(testutil::rel_diff(img.data, ref.data) < 0.01);
  }
}

TEST_CASE("training slice extraction") {
  ExperimentConfig cfg;
  cfg.dims = {16, 16, 16};
  const auto acq = build_acquisition(cfg);
  const auto ph = make_phantom(cfg.dims, cfg.tissues);
  const auto u = ground_truth(ph, acq.seq).factor(acq.basis);

  const auto all = extract_training_slices({u, u}, 0.0);
  CHECK(all.slices.size() == 2 * 4 * (16 + 16 + 16));
  CHECK_THROWS_AS(extract_training_slices({u}, 1.0 + 1e-9), DomainError);
  CHECK_THROWS_AS(extract_training_slices({}, 0.05), DomainError);

  const auto kept = extract_training_slices({u}, 0.05);
  CHECK(kept.slices.size() < all.slices.size() / 2);
  CHECK(!kept.slices.empty());
  for (const auto& s : kept.slices) {
    double peak = 0.0;
    for (const auto& v : s.data) peak = std::max(peak, std::abs(v));
    CHECK(peak == doctest::Approx(1.0).epsilon(1e-15));
  }
  // Jittered phantoms differ but stay valid.
  const auto j = jitter_tissues(cfg.tissues, 3);
  CHECK(j[0].t1 != cfg.tissues[0].t1);
  CHECK(jitter_tissues(cfg.tissues, 3)[1].radii == j[1].radii);
  CHECK_NOTHROW(make_phantom(cfg.dims, j));
}

TEST_CASE("accelerated spokes are a strict subset of the reference spokes") {
  ExperimentConfig cfg;
  cfg.dims = {16, 16, 8};
  const auto acq = build_acquisition(cfg);
  const auto& ref = acq.reference_traj;
  const auto& acc = acq.accelerated_traj;
  CHECK(acc.samples_per_frame() * 2 == ref.samples_per_frame());
  for (std::size_t f = 0; f < ref.n_frames(); ++f)
    for (const auto& k : acc.frames[f]) CHECK(std::find(ref.frames[f].begin(), ref.frames[f].end(), k) != ref.frames[f].end());

  KSpaceData b(ref.n_frames(), ref.samples_per_frame(), 2);
  std::mt19937_64 rng(1);
  b.data = testutil::random_complex(b.data.size(), rng);
  const auto sub = subsample_spokes(b, ref, 1);
  CHECK(sub.samples == acc.samples_per_frame());
  CHECK(sub.at(3, 5, 1) == b.at(3, 5, 1));
}

TEST_CASE("array files round-trip bitwise") {
  const fs::path dir = scratch("io");
  std::mt19937_64 rng(2);
  const Dims3 d{3, 4, 5};

  const auto u = testutil::random_factor(d, 2, rng);
  save_factor(dir / "u.ssma", u);
  const auto u2 = load_factor(dir / "u.ssma");
  CHECK(u2.dims == d);
  CHECK(u2.data == u.data);

  RealVolume v(d);
  std::normal_distribution<double> g;
  for (auto& x : v.data) x = g(rng);
  v.data[0] = -0.0;
  v.data[1] = std::numeric_limits<double>::denorm_min();
  save_volume(dir / "v.ssma", v);
  const auto v2 = load_volume(dir / "v.ssma");
  CHECK(std::memcmp(v2.data.data(), v.data.data(), v.data.size() * sizeof(double)) == 0);

  Mask m(d);
  m.data[5] = 1;
  save_mask(dir / "m.ssma", m);
  CHECK(load_mask(dir / "m.ssma").data == m.data);

  const auto t = stack_of_stars(make_radial_trajectory(4, 2, 8, 8, 3), 4);
  save_trajectory(dir / "t.ssma", t);
  const auto t2 = load_trajectory(dir / "t.ssma", 8);
  CHECK(t2.frames == t.frames);
  CHECK(t2.spokes_per_frame == t.spokes_per_frame);
  CHECK(t2.samples_per_spoke == t.samples_per_spoke);

  KSpaceData k(3, 7, 2);
  k.data = testutil::random_complex(k.data.size(), rng);
  save_kspace(dir / "k.ssma", k);
  CHECK(load_kspace(dir / "k.ssma").data == k.data);

  const auto basis = testutil::random_basis(2, 9, rng);
  save_basis(dir / "b.ssma", basis);
  CHECK(load_basis(dir / "b.ssma").v == basis.v);

  // Header layout.
  const std::string bytes = slurp(dir / "v.ssma");
  CHECK(bytes.substr(0, 4) == "SSMA");
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
  CHECK(bytes[6] == 0);  // dtype f64
  CHECK(bytes[7] == 3);  // ndim
  CHECK(bytes.size() == 8 + 3 * 8 + d.voxels() * 8);

  // Corrupt files.
  write_text(dir / "bad.ssma", "SSMB" + bytes.substr(4));
  CHECK_THROWS_AS(read_array(dir / "bad.ssma"), IoError);
  write_text(dir / "short.ssma", bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(read_array(dir / "short.ssma"), IoError);
  write_text(dir / "long.ssma", bytes + "x");
  CHECK_THROWS_AS(read_array(dir / "long.ssma"), IoError);
  CHECK_THROWS_AS(read_array(dir / "missing.ssma"), IoError);
  CHECK_THROWS_AS(load_factor(dir / "v.ssma"), IoError);
}

TEST_CASE("model checkpoints") {
  const fs::path dir = scratch("model");
  const auto p = testutil::random_params(NetworkArch::desk_default(), 5);
  save_model(dir / "model", p);
  const auto q = load_model(dir / "model");
  CHECK(q.arch == p.arch);
  CHECK(q.seed == p.seed);
  CHECK(q.weights == p.weights);
  const std::string arch = read_text(dir / "model.arch");
  CHECK(arch.find("version = 1") != std::string::npos);

  std::string bumped = arch;
  bumped.replace(bumped.find("version = 1"), 11, "version = 9");
  write_text(dir / "model.arch", bumped);
  CHECK_THROWS_AS(load_model(dir / "model"), IoError);

  save_model(dir / "small", testutil::random_params(testutil::small_arch(), 1));
  fs::copy_file(dir / "small.weights.ssma", dir / "model.weights.ssma", fs::copy_options::overwrite_existing);
  write_text(dir / "model.arch", arch);
  CHECK_THROWS_AS(load_model(dir / "model"), IoError);
}

TEST_CASE("configuration files") {
  SUBCASE("defaults") {
    const ExperimentConfig c;
    CHECK(c.dims == Dims3{32, 32, 32});
    CHECK(c.tissues.size() == 3);
    CHECK(c.rank == 4);
    CHECK(c.echoes == 96);
    CHECK(c.coils == 4);
    CHECK(c.spokes_per_frame == 2);
    CHECK(c.accelerated_spokes == 1);
    CHECK(c.train.epochs == 10);
    CHECK_NOTHROW(c.validate());
  }
  SUBCASE("parse and round trip") {
    const std::string text =
        "# comment\n[phantom]\nsize = 16 16 8\ntissue = 1.0 0.9 0 0 0 0.4 0.4 0.4  # outer\n"
        "tissue = 2.0 1.0 0.1 0 0 0.1 0.1 0.1\n"
        "[recon]\nmethod = wavelet\nlambda = 3e-4\nbeta_schedule = 0:1e-4 5:2e-4\n"
        "[seeds]\nbase = 7\nnoise = 99\n[output]\ndir = /tmp/x\n";
    const auto c = ExperimentConfig::from_ini(IniFile::parse(text));
    CHECK(c.dims == Dims3{16, 16, 8});
    CHECK(c.tissues.size() == 2);
    CHECK(c.tissues[1].center[0] == 0.1);
    CHECK(c.method == Method::wavelet);
    CHECK(c.recon.lambda == 3e-4);
    CHECK(c.recon.beta_at(6) == 2e-4);
    CHECK(c.seed == 7);
    CHECK(c.trajectory_seed_value() == 7);
    CHECK(c.noise_seed_value() == 99);
    CHECK(c.output_dir == fs::path("/tmp/x"));
    const auto back = ExperimentConfig::from_ini(IniFile::parse(c.to_ini()));
    CHECK(back.to_ini() == c.to_ini());
  }
  SUBCASE("errors") {
    auto parse = [](const std::string& t) { return ExperimentConfig::from_ini(IniFile::parse(t)); };
    CHECK_THROWS_AS(parse("size = 3\n"), ConfigError);
    CHECK_THROWS_AS(parse("[phantom\nsize = 3\n"), ConfigError);
    CHECK_THROWS_AS(parse("[phantom]\nsize 3\n"), ConfigError);
    CHECK_THROWS_AS(parse("[phantom]\nsize = abc\n"), ConfigError);
    CHECK_THROWS_AS(parse("[phantom]\ncolour = 3\n"), ConfigError);
    CHECK_THROWS_AS(parse("[nowhere]\nx = 3\n"), ConfigError);
    CHECK_THROWS_AS(parse("[recon]\nmethod = magic\n"), ConfigError);
    CHECK_THROWS_AS(parse("[sequence]\nrank = 50\n"), ConfigError);
    CHECK_THROWS_AS(parse("[acquisition]\naccelerated_spokes = 3\n"), ConfigError);
    CHECK_THROWS_AS(parse("[eval]\ncontrast_frames = 500\n"), ConfigError);
    CHECK_THROWS_AS(parse("[phantom]\ntissue = 1 1 0 0 0\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::load("/nonexistent/config.ini"), ConfigError);
  }
}

TEST_CASE("images") {
  const Dims3 d{4, 6, 3};
  const RealVolume flat(d, 2.5);
  const std::string pgm = render_pgm(flat, 2.5, 2.5);
  const std::string header = "P5\n6 4\n255\n";
  REQUIRE(pgm.size() == header.size() + 24);
  CHECK(pgm.substr(0, header.size()) == header);
  for (std::size_t i = header.size(); i < pgm.size(); ++i) CHECK(pgm[i] == 0);

  RealVolume ramp(d);
  for (std::size_t x = 0; x < 4; ++x)
    for (std::size_t y = 0; y < 6; ++y)
      for (std::size_t z = 0; z < 3; ++z) ramp(x, y, z) = double(x * 6 + y);
  const std::string r = render_pgm(ramp, 0.0, 23.0);
  CHECK(static_cast<unsigned char>(r[header.size()]) == 0);
  CHECK(static_cast<unsigned char>(r.back()) == 255);

  const fs::path dir = scratch("img");
  write_image(dir / "ramp", ramp);
  const std::string side = read_text(dir / "ramp.pgm.txt");
  CHECK(side.find("window_min = 0") != std::string::npos);
  CHECK(side.find("window_max = 23") != std::string::npos);
  CHECK(slurp(dir / "ramp.pgm") == r);
}

TEST_CASE("end-to-end quadratic run is complete and reproducible") {
  const fs::path dir = scratch("run");
  auto cfg = ExperimentConfig::from_ini(IniFile::parse(small_config_text()));
  const auto rep = run_experiment(cfg);
  REQUIRE(rep.metrics.size() == 3);
  CHECK(rep.metrics[0].method == "quadratic");
  CHECK(rep.metrics[1].method == "reference_quadratic");
  CHECK(rep.metrics[2].method == "quadratic_vs_reference");
  // The full-spoke reference beats the accelerated reconstruction.
  CHECK(rep.metrics[1].psnr_contrast_db[1] > rep.metrics[0].psnr_contrast_db[1]);

  render_outputs(rep, dir / "a");
  render_outputs(rep, dir / "b");
  for (const auto& e : fs::directory_iterator(dir / "a")) {
    const auto other = dir / "b" / e.path().filename();
    REQUIRE(fs::exists(other));
    CHECK(slurp(e.path()) == slurp(other));
  }
  for (const char* f : {"metrics.csv", "trace.csv", "config.ini", "u.ssma", "reference_u.ssma", "t1.ssma",
                        "t1_error.ssma", "t1.pgm", "t1.pgm.txt", "t1_error.pgm", "contrast_frame8.pgm",
                        "contrast_frame40.pgm.txt"})
    CHECK_MESSAGE(fs::exists(dir / "a" / f), f);
  CHECK(!fs::exists(dir / "a" / "timings.csv"));

  const std::string csv = read_text(dir / "a" / "metrics.csv");
  CHECK(csv.rfind("method,psnr_t1_db,mean_abs_t1_err_s,psnr_contrast_db_frame8,psnr_contrast_db_frame40,wall_seconds\n", 0) == 0);

  const auto again = run_experiment(cfg);
  CHECK(metrics_csv(again.metrics, cfg.contrast_frames) == csv);
  for (std::size_t i = 0; i < again.u.data.size(); ++i) REQUIRE(again.u.data[i] == rep.u.data[i]);

  // Round trip of every written array.
  CHECK(load_factor(dir / "a" / "u.ssma").data == rep.u.data);
  CHECK(load_volume(dir / "a" / "t1.ssma").data == rep.t1.t1.data);
  const auto cfg_back = ExperimentConfig::load(dir / "a" / "config.ini");
  CHECK(cfg_back.to_ini() == cfg.to_ini());
}

TEST_CASE("stage errors are tagged") {
  ExperimentConfig cfg = ExperimentConfig::from_ini(IniFile::parse(small_config_text()));
  cfg.method = Method::ssmuse;
  cfg.model_path = "/nonexistent/model";
  try {
    run_experiment(cfg);
    FAIL("expected an ExperimentError");
  } catch (const ExperimentError& e) {
    CHECK(e.stage == "train");
  }
}

TEST_CASE("command line") {
  const fs::path dir = scratch("cli");
  write_text(dir / "cfg.ini", small_config_text());
  write_text(dir / "broken.ini", "[phantom]\nsize = banana\n");
  const std::string cfg = "--config " + (dir / "cfg.ini").string() + " --out " + (dir / "out").string();

  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("") == 1);
  CHECK(run_cli("frobnicate") == 1);
  CHECK(run_cli("--config " + (dir / "broken.ini").string() + " config") == 1);
  CHECK(run_cli("--config " + (dir / "missing.ini").string() + " config") == 1);
  CHECK(run_cli(cfg + " recon --method magic") == 1);
  CHECK(run_cli(cfg + " config") == 0);
  CHECK(run_cli(cfg + " fit-t1 --u " + (dir / "nothing.ssma").string()) == 2);

  CHECK(run_cli(cfg + " simulate") == 0);
  CHECK(run_cli(cfg + " basis") == 0);
  CHECK(run_cli(cfg + " recon --method quadratic") == 0);
  CHECK(run_cli(cfg + " fit-t1") == 0);
  CHECK(run_cli(cfg + " eval --name quadratic") == 0);
  for (const char* f : {"kspace_accelerated.ssma", "kspace_reference.ssma", "trajectory_reference.ssma", "basis.ssma",
                        "dictionary.ssma", "u.ssma", "t1.ssma", "metrics.csv", "trace.csv"})
    CHECK_MESSAGE(fs::exists(dir / "out" / f), f);
  const auto k = load_kspace(dir / "out" / "kspace_accelerated.ssma");
  CHECK(k.frames == 96);
}

}  // TEST_SUITE
