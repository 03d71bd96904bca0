#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "rlconn/attack_defense.hpp"
#include "rlconn/cli.hpp"
#include "rlconn/errors.hpp"
#include "rlconn/landscape.hpp"
#include "rlconn/mdp.hpp"

namespace py = pybind11;

namespace {

rlconn::ScalarField2D field_by_name(const std::string& name) {
  if (name == "f") return rlconn::field_f();
  if (name == "g") return rlconn::field_g();
  throw rlconn::InvalidInput("unknown field '" + name + "', expected 'f' or 'g'");
}

rlconn::AttackSpec make_spec(const rlconn::Mdp& mdp, std::vector<int> target, double margin) {
  rlconn::AttackSpec spec;
  spec.target = std::move(target);
  spec.margin = margin;
  spec.reward_bound = mdp.reward_bound();
  return spec;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bindings for the rlconn C++ library. Structured results are JSON strings.";

  py::register_exception<rlconn::Error>(m, "RlconnError", PyExc_RuntimeError);

  py::class_<rlconn::Mdp>(m, "Mdp")
      .def(py::init<int, int, rlconn::Matrix, rlconn::Matrix, double>(), py::arg("n_states"),
           py::arg("n_actions"), py::arg("kernel"), py::arg("reward"), py::arg("reward_bound") = 1.0)
      .def_property_readonly("n_states", &rlconn::Mdp::n_states)
      .def_property_readonly("n_actions", &rlconn::Mdp::n_actions)
      .def_property_readonly("kernel", &rlconn::Mdp::kernel)
      .def_property_readonly("reward", &rlconn::Mdp::reward)
      .def_property_readonly("reward_bound", &rlconn::Mdp::reward_bound)
      .def("to_json", [](const rlconn::Mdp& mdp) { return rlconn::to_json(mdp).dump(); })
      .def_static("from_json", [](const std::string& s) { return rlconn::mdp_from_json(rlconn::Json::parse(s)); });

  m.def("random_ergodic_mdp", &rlconn::random_ergodic_mdp, py::arg("seed"), py::arg("n_states"),
        py::arg("n_actions"), py::arg("concentration") = 1.0);

  m.def(
      "average_reward",
      [](const rlconn::Mdp& mdp, const rlconn::Matrix& policy) {
        return rlconn::average_reward(mdp, rlconn::Policy(policy));
      },
      py::arg("mdp"), py::arg("policy"));

  m.def(
      "occupancy",
      [](const rlconn::Mdp& mdp, const rlconn::Matrix& policy) {
        return rlconn::occupancy(mdp, rlconn::Policy(policy)).table;
      },
      py::arg("mdp"), py::arg("policy"));

  m.def(
      "attack",
      [](const rlconn::Mdp& mdp, std::vector<int> target, double margin) {
        return rlconn::to_json(rlconn::attack(mdp, make_spec(mdp, std::move(target), margin))).dump();
      },
      py::arg("mdp"), py::arg("target"), py::arg("margin") = 0.1);

  m.def(
      "minimax_gap",
      [](const rlconn::Mdp& mdp, std::vector<int> target, double margin) {
        return rlconn::to_json(rlconn::minimax_gap(mdp, make_spec(mdp, std::move(target), margin))).dump();
      },
      py::arg("mdp"), py::arg("target"), py::arg("margin") = 0.1);

  m.def("f_value", &rlconn::f_value, py::arg("x"), py::arg("y"));
  m.def("g_value", &rlconn::g_value, py::arg("x"), py::arg("y"));

  m.def(
      "stationary_points",
      [](const std::string& field) {
        py::list out;
        for (const auto& p : rlconn::find_stationary_points(field_by_name(field))) {
          py::dict d;
          d["x"] = p.x;
          d["y"] = p.y;
          d["value"] = p.value;
          d["grad_norm"] = p.grad_norm;
          d["class"] = rlconn::to_string(p.kind);
          out.append(d);
        }
        return out;
      },
      py::arg("field"));

  m.def(
      "superlevel_components",
      [](const std::string& field, double level, int resolution) {
        const auto scan = rlconn::superlevel_components(field_by_name(field), level, resolution);
        return py::make_tuple(scan.count, scan.ambiguous);
      },
      py::arg("field"), py::arg("level"), py::arg("resolution") = 512);

  m.def(
      "run_command",
      [](const std::string& command, const std::string& overrides, int jobs) {
        auto config = rlconn::RunConfig::defaults(command);
        if (!overrides.empty()) config.merge(rlconn::Json::parse(overrides));
        config.validate();
        rlconn::RunOutcome outcome;
        {
          py::gil_scoped_release release;
          outcome = rlconn::run_command(config, jobs);
        }
        return py::make_tuple(outcome.exit_code, outcome.files);
      },
      py::arg("command"), py::arg("config") = "", py::arg("jobs") = 1);
}
