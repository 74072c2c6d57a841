#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mvlab/bsde.hpp"
#include "mvlab/coupling.hpp"
#include "mvlab/ebsde.hpp"
#include "mvlab/model.hpp"
#include "mvlab/sde.hpp"

namespace py = pybind11;
using namespace mvlab;

namespace {

EmpiricalMeasure start_law(const std::vector<double>& x0) { return EmpiricalMeasure::dirac(std::span<const double>(x0)); }

py::dict audit_dict(const std::string& name, std::size_t n, std::uint64_t seed) {
  const auto rep = audit(preset(name), n, seed);
  py::dict checks;
  for (const auto& c : rep.checks) {
    checks[py::str(c.name)] = py::dict(py::arg("verdict") = to_string(c.verdict), py::arg("measured") = c.measured,
                                       py::arg("threshold") = c.threshold);
  }
  return py::dict(py::arg("spec") = rep.spec_name, py::arg("passed") = rep.passed(), py::arg("checks") = checks,
                  py::arg("lambda") = rep.lambda, py::arg("driver_growth") = rep.driver_growth);
}

}  // namespace

PYBIND11_MODULE(_mvlab, m) {
  m.attr("__version__") = MVLAB_VERSION;

  py::register_exception<UnknownPresetError>(m, "UnknownPresetError", PyExc_ValueError);

  m.def("preset_names", &preset_names);
  m.def("nominal_rate", [](const std::string& name) { return preset(name).nominal_rate(); });
  m.def("audit", &audit_dict, py::arg("preset"), py::arg("n_samples") = 1000, py::arg("seed") = 42);

  py::class_<ContractionResult>(m, "ContractionResult")
      .def_readonly("times", &ContractionResult::times)
      .def_readonly("distances", &ContractionResult::distances)
      .def_readonly("rate", &ContractionResult::rate)
      .def_readonly("note", &ContractionResult::note);

  m.def(
      "contraction_rate",
      [](const std::string& name, std::vector<double> x0, std::vector<double> x1, double dt, double horizon,
         std::size_t particles, std::uint64_t seed) {
        py::gil_scoped_release nogil;
        return contraction_rate(preset(name), start_law(x0), start_law(x1), dt, horizon, particles, seed);
      },
      py::arg("preset"), py::arg("x0"), py::arg("x1"), py::arg("dt") = 0.01, py::arg("horizon") = 2.0,
      py::arg("particles") = 2000, py::arg("seed") = 42);

  m.def(
      "simulate",
      [](const std::string& name, std::vector<double> x0, double dt, double horizon, std::size_t particles,
         std::uint64_t seed) {
        MvOptions opts;
        opts.keep_paths = false;
        MvRun run;
        {
          py::gil_scoped_release nogil;
          run = simulate_mv(preset(name), start_law(x0), dt, horizon, particles, seed, opts);
        }
        return run.final_state.states;
      },
      py::arg("preset"), py::arg("x0"), py::arg("dt") = 0.01, py::arg("horizon") = 1.0,
      py::arg("particles") = 1000, py::arg("seed") = 42);

  py::class_<BsdeSolution>(m, "BsdeSolution")
      .def_readonly("y0", &BsdeSolution::y0)
      .def_readonly("y0_stderr", &BsdeSolution::y0_stderr)
      .def_readonly("z0", &BsdeSolution::z0)
      .def_readonly("horizon", &BsdeSolution::horizon)
      .def_readonly("picard_history", &BsdeSolution::picard_history);

  // Flow from the interacting system started at x0, then the decoupled BSDE on it.
  m.def(
      "solve_bsde",
      [](const std::string& name, std::vector<double> x0, double horizon, double dt, std::size_t paths,
         std::uint64_t seed, int degree) {
        py::gil_scoped_release nogil;
        const auto spec = preset(name);
        MvOptions mo;
        mo.keep_paths = false;
        mo.keep_all_atoms = true;
        const auto run = simulate_mv(spec, start_law(x0), dt, horizon, paths, seed, mo);
        BsdeOptions bo;
        bo.degree = degree;
        return solve_finite_bsde(spec, run.flow, x0, horizon, dt, paths, seed, bo);
      },
      py::arg("preset"), py::arg("x0"), py::arg("horizon") = 1.0, py::arg("dt") = 0.01, py::arg("paths") = 10000,
      py::arg("seed") = 42, py::arg("degree") = 0);

  py::class_<ErgodicOptions>(m, "ErgodicOptions")
      .def(py::init<>())
      .def_readwrite("n_particles", &ErgodicOptions::n_particles)
      .def_readwrite("n_mu_star", &ErgodicOptions::n_mu_star)
      .def_readwrite("dt", &ErgodicOptions::dt)
      .def_readwrite("degree", &ErgodicOptions::degree)
      .def_readwrite("alphas", &ErgodicOptions::alphas)
      .def_readwrite("t_burn", &ErgodicOptions::t_burn);

  py::class_<ErgodicSolution>(m, "ErgodicSolution")
      .def_readonly("lambda_", &ErgodicSolution::lambda)
      .def_readonly("lambda_stderr", &ErgodicSolution::lambda_stderr)
      .def_readonly("lambda_second_anchor", &ErgodicSolution::lambda_second_anchor)
      .def_readonly("self_consistency", &ErgodicSolution::self_consistency)
      .def_readonly("unstable", &ErgodicSolution::unstable)
      .def("u_bar", [](const ErgodicSolution& s, std::vector<double> x) { return s.u_bar_at(x); })
      .def("zeta", [](const ErgodicSolution& s, std::vector<double> x) { return s.zeta_at(x); });

  m.def(
      "extract_ergodic",
      [](const std::string& name, const ErgodicOptions& opts, std::uint64_t seed) {
        py::gil_scoped_release nogil;
        return extract_ergodic(preset(name), opts, seed);
      },
      py::arg("preset"), py::arg("options") = ErgodicOptions{}, py::arg("seed") = 42);

  m.def("mollifier_pi1", &mollifier_pi1);
  m.def("mollifier_pi2", &mollifier_pi2);
}
