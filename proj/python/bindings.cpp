#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "ssmuse/experiment.hpp"
#include "ssmuse/io.hpp"

namespace py = pybind11;
using namespace ssmuse;

namespace {

using ComplexArray = py::array_t<cplx, py::array::c_style | py::array::forcecast>;
using RealArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Slice2D to_slice(const ComplexArray& a) {
  if (a.ndim() != 2) throw DomainError("expected a 2D complex array");
  Slice2D s(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), s.data.begin());
  return s;
}

ComplexArray from_slice(const Slice2D& s) {
  ComplexArray out({s.rows, s.cols});
  std::copy(s.data.begin(), s.data.end(), out.mutable_data());
  return out;
}

SpatialFactor to_factor(const ComplexArray& a) {
  if (a.ndim() != 4) throw DomainError("expected a (R, nx, ny, nz) complex array");
  SpatialFactor u(Dims3{std::size_t(a.shape(1)), std::size_t(a.shape(2)), std::size_t(a.shape(3))},
                  std::size_t(a.shape(0)));
  std::copy(a.data(), a.data() + a.size(), u.data.begin());
  return u;
}

ComplexArray from_factor(const SpatialFactor& u) {
  ComplexArray out({u.count, u.dims.nx, u.dims.ny, u.dims.nz});
  std::copy(u.data.begin(), u.data.end(), out.mutable_data());
  return out;
}

RealArray from_volume(const RealVolume& v) {
  RealArray out({v.dims.nx, v.dims.ny, v.dims.nz});
  std::copy(v.data.begin(), v.data.end(), out.mutable_data());
  return out;
}

py::dict metrics_dict(const MetricsRow& r) {
  py::dict d;
  d["method"] = r.method;
  d["psnr_t1_db"] = r.psnr_t1_db;
  d["mean_abs_t1_err_s"] = r.mean_abs_t1_err_s;
  d["psnr_contrast_db"] = r.psnr_contrast_db;
  d["wall_seconds"] = r.wall_seconds;
  return d;
}

}  // namespace

PYBIND11_MODULE(_ssmuse, m) {
  configure_allocator();
  m.doc() = "Subspace MR reconstruction with a learned energy prior";

  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<SolverError>(m, "SolverError", PyExc_RuntimeError);

  m.def("log_t1_grid", &log_t1_grid, py::arg("count") = 100, py::arg("lo") = 0.1, py::arg("hi") = 5.0);

  m.def(
      "simulate_ir_signal",
      [](double t1, std::size_t echoes) {
        const auto seq = echoes == 385 ? SequenceParams::mpnrage_defaults() : SequenceParams::desk_scale(echoes);
        return Eigen::VectorXd(simulate_ir_signal(t1, seq));
      },
      py::arg("t1"), py::arg("echoes") = 96, "Steady-state inversion-recovery signal for one block.");

  m.def(
      "temporal_basis",
      [](std::size_t echoes, std::size_t rank, std::size_t dictionary_size) {
        const auto seq = echoes == 385 ? SequenceParams::mpnrage_defaults() : SequenceParams::desk_scale(echoes);
        const auto dict = build_dictionary(log_t1_grid(dictionary_size), seq);
        const auto b = compute_temporal_basis(dict, rank);
        return py::make_tuple(Eigen::MatrixXd(dict.signals), Eigen::MatrixXd(b.v), b.singular_values);
      },
      py::arg("echoes") = 96, py::arg("rank") = 4, py::arg("dictionary_size") = 100,
      "Returns (dictionary, basis, singular_values).");

  m.def("default_config", [] { return ExperimentConfig{}.to_ini(); }, "Default configuration as INI text.");
  m.def(
      "parse_config", [](const std::string& text) { return ExperimentConfig::from_ini(IniFile::parse(text)).to_ini(); },
      py::arg("text"), "Validates INI text and returns the complete effective configuration.");

  m.def(
      "run_experiment",
      [](const std::string& config_text, const std::string& out_dir) {
        const ExperimentConfig cfg = ExperimentConfig::from_ini(IniFile::parse(config_text));
        ExperimentReport rep;
        {
          py::gil_scoped_release release;
          rep = run_experiment(cfg);
          if (!out_dir.empty()) render_outputs(rep, out_dir);
        }
        py::dict out;
        py::list rows;
        for (const auto& r : rep.metrics) rows.append(metrics_dict(r));
        out["metrics"] = rows;
        out["metrics_csv"] = metrics_csv(rep.metrics, cfg.contrast_frames);
        out["u"] = from_factor(rep.u);
        out["t1"] = from_volume(rep.t1.t1);
        out["t1_true"] = from_volume(rep.phantom.t1_map);
        return out;
      },
      py::arg("config_text") = "", py::arg("out_dir") = "",
      "Runs the full experiment; writes the usual files when out_dir is given.");

  m.def(
      "read_array",
      [](const std::string& path) -> py::object {
        const Array a = read_array(path);
        std::vector<py::ssize_t> shape(a.shape.begin(), a.shape.end());
        if (a.dtype == Dtype::f64) {
          py::array_t<double> out(shape);
          std::copy(a.real.begin(), a.real.end(), out.mutable_data());
          return std::move(out);
        }
        py::array_t<cplx> out(shape);
        std::copy(a.complex.begin(), a.complex.end(), out.mutable_data());
        return std::move(out);
      },
      py::arg("path"), "Reads an SSMA file into a float64 or complex128 array.");

  m.def(
      "write_array",
      [](const std::string& path, const py::array& a) {
        std::vector<std::uint64_t> shape(a.shape(), a.shape() + a.ndim());
        if (a.dtype().kind() == 'c') {
          const ComplexArray c = ComplexArray::ensure(a);
          write_array(path, shape, std::span<const cplx>(c.data(), std::size_t(c.size())));
        } else {
          const RealArray r = RealArray::ensure(a);
          write_array(path, shape, std::span<const double>(r.data(), std::size_t(r.size())));
        }
      },
      py::arg("path"), py::arg("array"), "Writes a real array as float64 or a complex array as complex128.");

  py::class_<EnergyModelParams>(m, "EnergyModel")
      .def_static("load", &load_model, py::arg("stem"))
      .def_static("init_default", [](std::uint64_t seed) { return init_network(NetworkArch::desk_default(), seed); },
                  py::arg("seed") = 0)
      .def("save", [](const EnergyModelParams& p, const std::string& stem) { save_model(stem, p); }, py::arg("stem"))
      .def_property_readonly("weight_count", [](const EnergyModelParams& p) { return p.weights.size(); })
      .def("psi", [](const EnergyModelParams& p, const ComplexArray& s) { return from_slice(psi_apply(p, to_slice(s))); })
      .def("energy_2d", [](const EnergyModelParams& p, const ComplexArray& s) { return energy_2d(p, to_slice(s)); })
      .def("score_2d", [](const EnergyModelParams& p, const ComplexArray& s) { return from_slice(score_2d(p, to_slice(s))); })
      .def("energy_4d", [](const EnergyModelParams& p, const ComplexArray& u) { return energy_4d(p, to_factor(u)); })
      .def("score_4d", [](const EnergyModelParams& p, const ComplexArray& u) { return from_factor(score_4d(p, to_factor(u))); });
}
