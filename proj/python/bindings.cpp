#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "sirsa/experiment.hpp"

namespace py = pybind11;
using namespace sirsa;

namespace {

RunConfig parse_config(const std::string& text) { return config_from_json(nlohmann::json::parse(text)); }

std::string train_json(const std::string& config, std::uint64_t seed) {
  const auto c = parse_config(config);
  TrainedRun run;
  {
    py::gil_scoped_release release;
    run = train_run(c, build_suite(c), seed);
  }
  return checkpoint_to_json(run.model, config_hash(c), run.stats.iterations, nullptr).dump();
}

std::string evaluate_json(const std::string& config, const std::string& checkpoint, std::uint64_t seed) {
  const auto c = parse_config(config);
  const auto model = agent_from_checkpoint(nlohmann::json::parse(checkpoint));
  std::vector<EvalReport> reports;
  {
    py::gil_scoped_release release;
    reports = evaluate_model(c, model, build_suite(c), seed, c.jobs);
  }
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : reports) out.push_back(to_json(r));
  return out.dump();
}

}  // namespace

PYBIND11_MODULE(_sirsa, m) {
  m.doc() = "Point-mass robust RL core";

  m.def("empirical_var", [](const std::vector<double>& v, double a) { return empirical_var(v, a); },
        py::arg("values"), py::arg("alpha"));
  m.def("empirical_cvar", [](const std::vector<double>& v, double a) { return empirical_cvar(v, a); },
        py::arg("values"), py::arg("alpha"));
  m.def("gaussian_cvar", [](double mean, double var, double a) { return gaussian_cvar_closed_form(mean, var, a); },
        py::arg("mean"), py::arg("variance"), py::arg("alpha"));
  m.def("std_normal_cdf", &std_normal_cdf);
  m.def("std_normal_inverse_cdf", &std_normal_inverse_cdf);

  py::class_<PointMassEnv>(m, "PointMassEnv")
      .def(py::init([](const std::string& variant) {
             PointMassConfig cfg;
             cfg.variant = variant_from_string(variant);
             return PointMassEnv(cfg);
           }),
           py::arg("variant") = "combined")
      .def_property_readonly("context_dim", &PointMassEnv::context_dim)
      .def("context_bounds",
           [](const PointMassEnv& e) {
             const auto s = e.context_space();
             return py::make_tuple(Vec(s.lower), Vec(s.upper));
           })
      .def("physical",
           [](const PointMassEnv& e, const Vec& c) {
             const auto p = e.physical(c);
             return py::make_tuple(p.obstacle_radius, p.velocity);
           })
      .def(
          "rollout",
          [](const PointMassEnv& e, const Vec& c, const std::vector<double>& actions) {
            const auto ctx = e.physical(c);
            auto st = e.reset(ctx);
            std::vector<double> rewards;
            for (double a : actions) rewards.push_back(e.step(st, a, ctx).reward);
            return rewards;
          },
          py::arg("context"), py::arg("actions"), "Per-step rewards of an open-loop action sequence.");

  m.def(
      "misspecified_contexts",
      [](const std::string& variant, const Vec& center, const Vec& width, double r) {
        PointMassConfig cfg;
        cfg.variant = variant_from_string(variant);
        const PointMassEnv env(cfg);
        return make_misspecified_contexts(UncertaintySet(center, width), r, env.simulator_bounds());
      },
      py::arg("variant"), py::arg("center"), py::arg("width"), py::arg("r_level"));

  m.def("config_hash", [](const std::string& config) { return config_hash(parse_config(config)); });
  m.def("normalize_config", [](const std::string& config) { return to_json(parse_config(config)).dump(); });
  m.def("train", &train_json, py::arg("config"), py::arg("seed"),
        "Train one seed; returns the checkpoint as a JSON string.");
  m.def("evaluate", &evaluate_json, py::arg("config"), py::arg("checkpoint"), py::arg("seed"),
        "Test-suite evaluation; returns a JSON list of reports.");

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
}
