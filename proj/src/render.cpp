#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "ssmuse/experiment.hpp"
#include "ssmuse/io.hpp"

namespace ssmuse {

namespace fs = std::filesystem;

std::string render_pgm(const RealVolume& v, double lo, double hi) {
  const Dims3 d = v.dims;
  if (d.voxels() == 0) throw DomainError("render_pgm: empty volume");
  std::ostringstream os;
  os << "P5\n" << d.ny << ' ' << d.nx << "\n255\n";
  const std::size_t z = d.nz / 2;
  const double span = hi - lo;
  for (std::size_t x = 0; x < d.nx; ++x)
    for (std::size_t y = 0; y < d.ny; ++y) {
      double g = span > 0.0 ? (v(x, y, z) - lo) / span * 255.0 : 0.0;
      g = std::clamp(std::round(g), 0.0, 255.0);
      os.put(static_cast<char>(static_cast<unsigned char>(g)));
    }
  return os.str();
}

void write_image(const fs::path& stem, const RealVolume& v) {
  const auto [lo, hi] = std::minmax_element(v.data.begin(), v.data.end());
  char buf[160];
  std::snprintf(buf, sizeof buf, "window_min = %.10g\nwindow_max = %.10g\nslice_z = %zu\n", *lo, *hi, v.dims.nz / 2);
  write_text(fs::path(stem.string() + ".pgm"), render_pgm(v, *lo, *hi));
  write_text(fs::path(stem.string() + ".pgm.txt"), buf);
}

void render_outputs(const ExperimentReport& rep, const fs::path& dir) {
  fs::create_directories(dir);
  const auto& cfg = rep.config;
  const bool wall = cfg.record_wall_time;
  write_text(dir / "config.ini", cfg.to_ini());
  write_text(dir / "metrics.csv", metrics_csv(rep.metrics, cfg.contrast_frames));
  write_text(dir / "trace.csv", trace_csv(rep.trace, wall));
  if (!rep.training_log.empty()) write_text(dir / "training_log.csv", training_log_csv(rep.training_log, wall));
  if (wall) {
    std::ostringstream os;
    os << "stage,wall_seconds\n";
    for (const auto& t : rep.timings) os << t.stage << ',' << t.seconds << '\n';
    write_text(dir / "timings.csv", os.str());
  }
  if (rep.model) save_model(dir / "model", *rep.model);

  save_factor(dir / "u.ssma", rep.u);
  save_factor(dir / "reference_u.ssma", rep.reference_u);
  save_factor(dir / "truth_u.ssma", rep.truth_factor);
  save_mask(dir / "mask.ssma", rep.phantom.support_mask);
  save_volume(dir / "t1.ssma", rep.t1.t1);
  save_volume(dir / "t1_amplitude.ssma", rep.t1.amplitude);
  save_volume(dir / "t1_residual.ssma", rep.t1.match_residual);
  save_volume(dir / "reference_t1.ssma", rep.reference_t1.t1);
  save_volume(dir / "t1_true.ssma", rep.phantom.t1_map);
  save_volume(dir / "t1_error.ssma", rep.t1_error);

  write_image(dir / "t1", rep.t1.t1);
  write_image(dir / "reference_t1", rep.reference_t1.t1);
  write_image(dir / "t1_true", rep.phantom.t1_map);
  write_image(dir / "t1_error", rep.t1_error);
  for (std::size_t k = 0; k < cfg.contrast_frames.size(); ++k) {
    const std::string tag = "frame" + std::to_string(cfg.contrast_frames[k]);
    save_volume(dir / ("contrast_" + tag + ".ssma"), rep.contrasts[k]);
    write_image(dir / ("contrast_" + tag), magnitude(rep.contrasts[k]));
    write_image(dir / ("reference_contrast_" + tag), magnitude(rep.reference_contrasts[k]));
    write_image(dir / ("truth_contrast_" + tag), magnitude(rep.truth_contrasts[k]));
  }
}

}  // namespace ssmuse
