#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "vonctl/error.hpp"
#include "vonctl/eval.hpp"
#include "vonctl/io.hpp"
#include "vonctl/server.hpp"
#include "vonctl/session.hpp"

namespace py = pybind11;
using namespace vonctl;

namespace {

using ImageIn = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::array_t<double> image(const Observation& o, int height, int width) {
  if (o.size() != static_cast<Eigen::Index>(height) * width) throw ContractViolation("image size mismatch");
  py::array_t<double> a({height, width});
  std::copy(o.data(), o.data() + o.size(), a.mutable_data());
  return a;
}

Observation flat(const ImageIn& a, int height, int width) {
  if (a.size() != static_cast<py::ssize_t>(height) * width)
    throw ContractViolation("expected " + std::to_string(height) + "x" + std::to_string(width) + " pixels, got " +
                            std::to_string(a.size()));
  return Eigen::Map<const Vec>(a.data(), a.size());
}

py::array_t<double> pressures(const std::vector<Pressure>& u) {
  py::array_t<double> a({static_cast<py::ssize_t>(u.size()), py::ssize_t{4}});
  auto m = a.mutable_unchecked<2>();
  for (std::size_t i = 0; i < u.size(); ++i)
    for (int c = 0; c < 4; ++c) m(i, c) = u[i][c];
  return a;
}

ControlSequence pressures_in(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2 || a.shape(1) != 4) throw ContractViolation("expected an (N, 4) pressure array");
  auto m = a.unchecked<2>();
  ControlSequence u(static_cast<std::size_t>(a.shape(0)));
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = Pressure(m(i, 0), m(i, 1), m(i, 2), m(i, 3));
  return u;
}

ExcitationProfile profile(const std::string& kind) {
  if (kind == "sinusoidal") return ExcitationProfile::sinusoidal;
  if (kind == "step") return ExcitationProfile::step;
  throw ContractViolation("excitation kind must be sinusoidal or step, got '" + kind + "'");
}

py::dict result_dict(const TrajectoryResult& r) {
  py::dict d;
  d["suite"] = r.suite;
  d["model"] = r.model;
  d["index"] = r.index;
  d["mse"] = r.mse;
  d["initial_mse"] = r.initial_mse;
  d["predicted_cost"] = r.predicted_cost;
  d["final_command"] = Vec(r.final_command);
  d["target_pressure"] = Vec(r.target_pressure);
  return d;
}

py::dict frame_dict(const Frame& f, const Checkpoint& ck) {
  py::dict d;
  d["tick"] = f.tick;
  d["image"] = image(f.observation, ck.height, ck.width);
  d["z"] = f.state.z;
  d["zdot"] = f.state.zdot;
  d["u"] = Vec(f.u);
  return d;
}

std::vector<StaticTarget> step_targets(const Dataset& step_data, int count) { return static_targets(step_data, count); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Latent dynamics models of a soft arm and open-loop control through them";

  static py::exception<FormatError> format_error(m, "FormatError", PyExc_ValueError);
  static py::exception<VersionMismatch> version_error(m, "VersionMismatch", format_error.ptr());
  static py::exception<DivergenceError> divergence_error(m, "DivergenceError", PyExc_RuntimeError);
  static py::exception<TrainingDivergence> training_error(m, "TrainingDivergence", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const VersionMismatch& e) {
      py::set_error(version_error, e.what());
    } catch (const FormatError& e) {
      py::set_error(format_error, e.what());
    } catch (const DivergenceError& e) {
      py::set_error(divergence_error, e.what());
    } catch (const TrainingDivergence& e) {
      py::set_error(training_error, e.what());
    } catch (const ContractViolation& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    }
  });

  m.attr("CONTROL_DT") = kControlDt;
  m.attr("DATASET_PRESSURE_MAX") = kDatasetPressureMax;

  // Plant ---------------------------------------------------------------------
  py::class_<PlantParams>(m, "PlantParams")
      .def(py::init<>())
      .def_readwrite("stiffness", &PlantParams::stiffness)
      .def_readwrite("damping", &PlantParams::damping)
      .def_readwrite("inertia", &PlantParams::inertia)
      .def_readwrite("gain", &PlantParams::gain)
      .def_readwrite("coupling", &PlantParams::coupling)
      .def_readwrite("bias_torque", &PlantParams::bias_torque)
      .def_readwrite("lag", &PlantParams::lag)
      .def_readwrite("p_max", &PlantParams::p_max)
      .def_readwrite("substeps", &PlantParams::substeps)
      .def_readonly("height", &PlantParams::height)
      .def_readonly("width", &PlantParams::width);

  py::class_<PlantState>(m, "PlantState")
      .def(py::init<>())
      .def_readwrite("q", &PlantState::q)
      .def_readwrite("qdot", &PlantState::qdot)
      .def_readwrite("p_act", &PlantState::p_act)
      .def_static("rest", &PlantState::rest)
      .def_static("at_equilibrium", &PlantState::at_equilibrium, py::arg("pressure"),
                  py::arg("params") = PlantParams{});

  m.def("rest_pressure", [] { return Vec(rest_pressure()); });
  m.def("plant_step", &plant_step, py::arg("state"), py::arg("command"), py::arg("params") = PlantParams{},
        py::arg("dt") = kControlDt);
  m.def(
      "render", [](const PlantState& s, const PlantParams& p) { return image(render(s, p), p.height, p.width); },
      py::arg("state"), py::arg("params") = PlantParams{});
  m.def(
      "execute_open_loop",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& u, const PlantState& initial,
         const PlantParams& p) { return execute_open_loop(pressures_in(u), initial, p); },
      py::arg("commands"), py::arg("initial") = PlantState{}, py::arg("params") = PlantParams{});

  // Datasets ------------------------------------------------------------------
  py::class_<Dataset>(m, "Dataset")
      .def("__len__", &Dataset::size)
      .def_readonly("height", &Dataset::height)
      .def_readonly("width", &Dataset::width)
      .def_readonly("rate", &Dataset::rate)
      .def_property_readonly("time", [](const Dataset& d) { return py::array(py::cast(d.time)); })
      .def_property_readonly("u_cmd", [](const Dataset& d) { return pressures(d.u_cmd); })
      .def_property_readonly("p_act", [](const Dataset& d) { return pressures(d.p_act); })
      .def_property_readonly("frames",
                             [](const Dataset& d) {
                               py::array_t<float> a({static_cast<py::ssize_t>(d.size()),
                                                     static_cast<py::ssize_t>(d.height),
                                                     static_cast<py::ssize_t>(d.width)});
                               float* out = a.mutable_data();
                               for (std::size_t i = 0; i < d.size(); ++i) {
                                 const auto f = d.frame(i);
                                 std::copy(f.begin(), f.end(), out + i * f.size());
                               }
                               return a;
                             })
      .def("observation", [](const Dataset& d, std::size_t i) { return image(d.observation(i), d.height, d.width); })
      .def("static_frames", [](const Dataset& d, double hold) { return static_frames(d, hold); },
           py::arg("min_hold_s") = 2.0)
      .def("__eq__", [](const Dataset& a, const Dataset& b) { return a == b; });

  m.def(
      "generate_dataset",
      [](const std::string& kind, double duration, std::uint64_t seed, const PlantParams& p) {
        return generate_dataset(profile(kind), duration, seed, p);
      },
      py::arg("kind"), py::arg("duration"), py::arg("seed"), py::arg("params") = PlantParams{},
      py::call_guard<py::gil_scoped_release>());
  m.def(
      "generate_linear_latent_dataset",
      [](int pairs, std::uint64_t plant_seed, double duration, std::uint64_t seed) {
        return generate_linear_latent_dataset(make_linear_latent_plant(pairs, plant_seed), duration, seed);
      },
      py::arg("pairs"), py::arg("plant_seed"), py::arg("duration"), py::arg("seed"),
      py::call_guard<py::gil_scoped_release>());
  m.def("save_dataset", &save_dataset, py::arg("path"), py::arg("dataset"));
  m.def("load_dataset", &load_dataset, py::arg("path"));

  // Configs and training --------------------------------------------------------
  m.def(
      "default_config",
      [](const std::string& family, const std::string& decoder) {
        return config_to_json(default_config(model_family_from_string(family), decoder_kind_from_string(decoder)));
      },
      py::arg("family") = "oscillator", py::arg("decoder") = "keypoint");
  m.def(
      "normalize_config", [](const std::string& text) { return config_to_json(config_from_json(text)); },
      py::arg("config_json"));
  m.def(
      "ablation_configs",
      [](const std::string& base) {
        std::vector<std::string> out;
        for (const auto& c : ablation_configs(config_from_json(base))) out.push_back(config_to_json(c));
        return out;
      },
      py::arg("base_json"));

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_property_readonly("config_json", [](const Checkpoint& c) { return config_to_json(c.config); })
      .def_property_readonly("name", [](const Checkpoint& c) { return c.config.name; })
      .def_property_readonly("family", [](const Checkpoint& c) { return to_string(c.config.family); })
      .def_property_readonly("latent_dim", [](const Checkpoint& c) { return latent_dim(c.model.dynamics); })
      .def_readonly("latent_scale", &Checkpoint::latent_scale)
      .def_readonly("reconstruction_floor", &Checkpoint::reconstruction_floor)
      .def_readonly("height", &Checkpoint::height)
      .def_readonly("width", &Checkpoint::width)
      .def_property_readonly("u_rest", [](const Checkpoint& c) { return Vec(c.u_rest); })
      .def_property_readonly("o_rest", [](const Checkpoint& c) { return image(c.o_rest, c.height, c.width); })
      .def_property_readonly("z0", [](const Checkpoint& c) { return c.z0(); })
      .def_property_readonly("history",
                             [](const Checkpoint& c) {
                               py::list out;
                               for (const auto& r : c.history) {
                                 py::dict d;
                                 d["epoch"] = r.epoch;
                                 d["horizon"] = r.horizon;
                                 d["lr"] = r.lr;
                                 d["loss"] = r.loss.total;
                                 out.append(d);
                               }
                               return out;
                             })
      .def(
          "encode",
          [](const Checkpoint& c, const ImageIn& img) { return c.model.encoder.mean(flat(img, c.height, c.width)); },
          py::arg("image"))
      .def(
          "decode", [](const Checkpoint& c, const Vec& z) { return image(c.model.decoder.decode(z), c.height, c.width); },
          py::arg("z"))
      .def(
          "step",
          [](const Checkpoint& c, const Vec& z, const Vec& zdot, const Pressure& u) {
            const LatentState s = step(c.model.dynamics, {z, zdot}, u);
            return py::make_tuple(s.z, s.zdot);
          },
          py::arg("z"), py::arg("zdot"), py::arg("u"))
      .def(
          "rollout",
          [](const Checkpoint& c, const Vec& z, const Vec& zdot,
             const py::array_t<double, py::array::c_style | py::array::forcecast>& u) {
            const ControlSequence useq = pressures_in(u);
            const Rollout r = rollout(c.model.dynamics, {z, zdot}, useq);
            const Eigen::Index n = z.size();
            Mat zs(static_cast<Eigen::Index>(r.states.size()), n), zds(zs.rows(), n);
            for (std::size_t i = 0; i < r.states.size(); ++i) {
              zs.row(static_cast<Eigen::Index>(i)) = r.states[i].z.transpose();
              zds.row(static_cast<Eigen::Index>(i)) = r.states[i].zdot.transpose();
            }
            return py::make_tuple(zs, zds);
          },
          py::arg("z"), py::arg("zdot"), py::arg("u"))
      .def("to_json", [](const Checkpoint& c) { return checkpoint_to_json(c); })
      .def_static("from_json", &checkpoint_from_json, py::arg("text"));

  m.def("save_checkpoint", &save_checkpoint, py::arg("path"), py::arg("checkpoint"));
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));
  m.def(
      "train",
      [](const std::string& config, const Dataset& train_set, const Dataset& val_set, const py::object& progress) {
        ProgressCallback cb;
        if (!progress.is_none())
          cb = [&progress](const EpochRecord& r) {
            py::gil_scoped_acquire gil;
            progress(r.epoch, r.horizon, r.loss.total);
          };
        py::gil_scoped_release release;
        return train(config_from_json(config), train_set, val_set, cb);
      },
      py::arg("config_json"), py::arg("train_set"), py::arg("validation_set"), py::arg("progress") = py::none());

  // Control -------------------------------------------------------------------
  m.def("schedule_waypoints", &schedule_waypoints, py::arg("count"), py::arg("horizon"));
  m.def("suite_names", [] {
    std::vector<std::string> names;
    for (const auto& s : trajectory_suites()) names.push_back(s.name);
    return names;
  });
  m.def("suite_info", [](const std::string& name) {
    const TrajectorySuite& s = trajectory_suite(name);
    py::dict d;
    d["name"] = s.name;
    d["n"] = s.n;
    d["T"] = s.T;
    d["K"] = s.K;
    return d;
  });

  m.def(
      "optimize_waypoints",
      [](const Checkpoint& ck, const std::string& waypoints_json, const std::string& suite, int horizon,
         int iterations, double p_max, std::uint64_t seed) {
        const WaypointExport w = waypoints_from_json(waypoints_json);
        const TrajectorySuite& preset = trajectory_suite(suite);
        bool all_static = true;
        for (const auto& s : w.waypoints) all_static = all_static && s.is_static;
        const TrajectoryTask task = waypoint_task(w, all_static ? "Setp. custom" : "Dyn. custom", p_max);
        OptimizerSettings opt;
        opt.iterations = iterations;
        opt.seed = seed;
        py::gil_scoped_release release;
        return solution_to_json(solve_task(ck, task, horizon > 0 ? horizon : w.horizon, preset.weights(), opt, p_max,
                                           w.model_id.empty() ? ck.config.name : w.model_id));
      },
      py::arg("checkpoint"), py::arg("waypoints_json"), py::arg("weights_from") = "Setp. Normal",
      py::arg("horizon") = 0, py::arg("iterations") = 500, py::arg("p_max") = kDatasetPressureMax,
      py::arg("seed") = 0);
  m.def(
      "execute_solution",
      [](const std::string& solution_json, const PlantParams& p) {
        return execute_solution(solution_from_json(solution_json), p);
      },
      py::arg("solution_json"), py::arg("params") = PlantParams{});
  m.def(
      "score_solution",
      [](const std::string& solution_json, const Dataset& recording) {
        return result_dict(score_solution(solution_from_json(solution_json), recording));
      },
      py::arg("solution_json"), py::arg("recording"));
  m.def(
      "run_suite",
      [](const Checkpoint& ck, const std::string& name, const Dataset& step_data, std::uint64_t seed, int iterations,
         const std::string& model_id) {
        const TrajectorySuite& suite = trajectory_suite(name);
        const PlantParams plant;
        std::vector<TrajectoryResult> results;
        {
          py::gil_scoped_release release;
          const SuiteTasks st = suite_tasks(suite, ck, step_data, plant, seed);
          for (const auto& t : st.tasks)
            results.push_back(run_task(ck, t, plant, suite, st.p_max, iterations, model_id).result);
        }
        py::list out;
        for (const auto& r : results) out.append(result_dict(r));
        return out;
      },
      py::arg("checkpoint"), py::arg("suite"), py::arg("step_data"), py::arg("seed") = 7, py::arg("iterations") = 500,
      py::arg("model_id") = "");

  // Stress tests ----------------------------------------------------------------
  m.def(
      "stress_static_hold",
      [](const Checkpoint& ck, const Dataset& step_data, int states, int steps) {
        py::gil_scoped_release release;
        return stress_static_hold(ck, step_targets(step_data, states), steps).drift;
      },
      py::arg("checkpoint"), py::arg("step_data"), py::arg("states") = 50, py::arg("steps") = 500);
  m.def(
      "stress_release",
      [](const Checkpoint& ck) { return stress_release(ck, release_profile(), 250).mse_to_rest; },
      py::arg("checkpoint"));
  m.def(
      "stress_ramp",
      [](const Checkpoint& ck, const Pressure& target) {
        PlantParams plant;
        plant.p_max = std::max(plant.p_max, target.maxCoeff());
        const RampResult r =
            stress_ramp_extrapolate(ck, target, render(PlantState::at_equilibrium(target, plant), plant));
        return py::make_tuple(r.mse, r.force_residual);
      },
      py::arg("checkpoint"), py::arg("target"));

  // Live sessions -------------------------------------------------------------
  py::class_<SimSession>(m, "SimSession")
      .def(py::init([](const Checkpoint& ck, const std::string& id) {
             return SimSession(std::make_shared<const Checkpoint>(ck), id);
           }),
           py::arg("checkpoint"), py::arg("model_id") = "model")
      .def("set_pressures", &SimSession::set_pressures, py::arg("u"))
      .def_property_readonly("pressures", [](const SimSession& s) { return Vec(s.pressures()); })
      .def("tick", [](SimSession& s) { return frame_dict(s.tick(), s.checkpoint()); })
      .def("current", [](const SimSession& s) { return frame_dict(s.current(), s.checkpoint()); })
      .def_property_readonly("paused", &SimSession::paused)
      .def_property_readonly("ticks", &SimSession::ticks)
      .def(
          "save_state", [](SimSession& s, bool is_static) { s.save_state(is_static); }, py::arg("is_static") = true)
      .def_property_readonly("saved_count", [](const SimSession& s) { return s.saved().size(); })
      .def(
          "export_waypoints", [](const SimSession& s, int horizon) { return waypoints_to_json(s.export_waypoints(horizon)); },
          py::arg("horizon") = 100)
      .def("reset", &SimSession::reset);

  py::class_<Server>(m, "Server")
      .def(py::init([](const std::string& dir, const std::string& host, int port, double tick_hz) {
             auto registry = std::make_shared<ModelRegistry>(ModelRegistry::from_directory(dir));
             return std::make_unique<Server>(registry, ServerOptions{host, port, tick_hz});
           }),
           py::arg("checkpoint_dir"), py::arg("host") = "127.0.0.1", py::arg("port") = 0, py::arg("tick_hz") = 50.0)
      .def("start", &Server::start, py::call_guard<py::gil_scoped_release>())
      .def("stop", &Server::stop, py::call_guard<py::gil_scoped_release>());
}
