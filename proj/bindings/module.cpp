#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "urbanverse/common.hpp"
#include "urbanverse/diffusion/schedule.hpp"
#include "urbanverse/io/synthetic.hpp"
#include "urbanverse/metrics/kde.hpp"
#include "urbanverse/metrics/metrics.hpp"
#include "urbanverse/pipeline/config.hpp"
#include "urbanverse/pipeline/stages.hpp"

namespace py = pybind11;
using namespace uv;

namespace {

// Keyword arguments overlay the stock configuration through its JSON form,
// so the accepted keys are exactly the config.json keys.
pipe::RunConfig configFromKwargs(const py::kwargs& kw) {
    auto j = nlohmann::json::parse(pipe::RunConfig{}.toJson());
    for (auto item : kw) {
        std::string key = py::str(item.first);
        if (!j.contains(key)) {
            throw ConfigError("unknown config key '" + key + "'");
        }
        auto& slot = j[key];
        py::handle v = item.second;
        if (slot.is_boolean()) {
            slot = v.cast<bool>();
        } else if (slot.is_number_float()) {
            slot = v.cast<double>();
        } else if (slot.is_number_unsigned()) {
            slot = v.cast<uint64_t>();
        } else if (slot.is_number_integer()) {
            slot = v.cast<int64_t>();
        } else {
            slot = v.cast<std::string>();
        }
    }
    return pipe::RunConfig::fromJson(j.dump());
}

pipe::Logger loggerFor(bool verbose) {
    if (!verbose) return {};
    return [](const std::string& m) { py::print(m); };
}

// Stage wrappers hold the GIL only around optional logging.
template <class F>
void runStage(bool verbose, F&& f) {
    if (verbose) {
        f(loggerFor(true));
    } else {
        py::gil_scoped_release release;
        f(pipe::Logger{});
    }
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "hex-grid city embeddings with a retrieval-conditioned diffusion regressor";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    m.def("default_config", [] {
        return py::module_::import("json").attr("loads")(pipe::RunConfig{}.toJson());
    }, "Stock configuration as a dict; stage kwargs accept the same keys.");

    m.def("synth",
          [](const std::string& out, double width, double height, double edge, int latent_classes,
             int smooth_iters, int regions_x, int regions_y, int num_tasks, double sigma_scale,
             uint64_t seed, bool verbose) {
              io::SyntheticSpec spec;
              spec.width = width;
              spec.height = height;
              spec.edge = edge;
              spec.latentClasses = latent_classes;
              spec.smoothIters = smooth_iters;
              spec.regionsX = regions_x;
              spec.regionsY = regions_y;
              spec.numTasks = num_tasks;
              spec.sigmaScale = sigma_scale;
              spec.seed = seed;
              pipe::RunConfig cfg;
              cfg.edgeM = edge;
              cfg.seed = seed;
              runStage(verbose, [&](const pipe::Logger& log) { pipe::runSynth(out, spec, cfg, log); });
          },
          py::arg("out"), py::arg("width") = 6000.0, py::arg("height") = 6000.0,
          py::arg("edge") = 150.0, py::arg("latent_classes") = 4, py::arg("smooth_iters") = 10,
          py::arg("regions_x") = 20, py::arg("regions_y") = 20, py::arg("num_tasks") = 3,
          py::arg("sigma_scale") = 0.05, py::arg("seed") = 0, py::arg("verbose") = false,
          "Generate a synthetic city with known ground truth into a directory.");

    m.def("walks",
          [](const std::string& out, const std::string& city, bool verbose, const py::kwargs& kw) {
              auto cfg = configFromKwargs(kw);
              runStage(verbose, [&](const pipe::Logger& log) { pipe::runWalks(out, city, cfg, log); });
          },
          py::arg("out"), py::arg("city"), py::arg("verbose") = false,
          "Sample biased walks over the lattice and write walks.csv.");

    m.def("pretrain",
          [](const std::string& out, const std::string& city, bool verbose, const py::kwargs& kw) {
              auto cfg = configFromKwargs(kw);
              runStage(verbose,
                       [&](const pipe::Logger& log) { pipe::runPretrain(out, city, cfg, log); });
          },
          py::arg("out"), py::arg("city"), py::arg("verbose") = false,
          "Train the masked walk reconstruction encoder.");

    m.def("embed",
          [](const std::string& out, const std::string& city, const std::string& encoder,
             uint64_t seed, bool verbose) {
              pipe::RunConfig cfg;
              cfg.seed = seed;
              runStage(verbose,
                       [&](const pipe::Logger& log) { pipe::runEmbed(out, city, encoder, cfg, log); });
          },
          py::arg("out"), py::arg("city"), py::arg("encoder"), py::arg("seed") = 0,
          py::arg("verbose") = false, "Extract one embedding per lattice cell.");

    m.def("aggregate",
          [](const std::string& out, const std::string& city, const std::string& embed,
             bool verbose) {
              pipe::RunConfig cfg;
              runStage(verbose, [&](const pipe::Logger& log) {
                  pipe::runAggregate(out, city, embed, cfg, log);
              });
          },
          py::arg("out"), py::arg("city"), py::arg("embed"), py::arg("verbose") = false,
          "Combine cell embeddings into overlap-weighted region embeddings.");

    m.def("train",
          [](const std::string& out, const std::string& city, const std::string& embeddings,
             int limit_tasks, bool verbose, const py::kwargs& kw) {
              auto cfg = configFromKwargs(kw);
              pipe::TrainArgs args{city, embeddings, limit_tasks};
              runStage(verbose,
                       [&](const pipe::Logger& log) { pipe::runTrain(out, args, cfg, log); });
          },
          py::arg("out"), py::arg("city"), py::arg("embeddings"), py::arg("limit_tasks") = 0,
          py::arg("verbose") = false, "Fit the regression head on region targets.");

    m.def("predict",
          [](const std::string& out, const std::string& model, const std::string& embeddings,
             const std::string& regions, std::optional<int> samples, std::optional<uint64_t> seed,
             std::optional<bool> median_point, bool verbose) {
              pipe::PredictArgs args;
              args.modelDir = model;
              args.embeddings = embeddings;
              args.regions = regions;
              args.samples = samples;
              args.seed = seed;
              args.medianPoint = median_point;
              runStage(verbose, [&](const pipe::Logger& log) { pipe::runPredict(out, args, log); });
          },
          py::arg("out"), py::arg("model"), py::arg("embeddings"), py::arg("regions") = "test",
          py::arg("samples") = py::none(), py::arg("seed") = py::none(),
          py::arg("median_point") = py::none(), py::arg("verbose") = false,
          "Sample predictions from a trained model into predictions.csv.");

    m.def("evaluate",
          [](const std::string& out, const std::string& predictions, const std::string& city,
             bool svg, bool verbose) {
              pipe::EvalArgs args{predictions, city, svg};
              runStage(verbose, [&](const pipe::Logger& log) { pipe::runEval(out, args, log); });
          },
          py::arg("out"), py::arg("predictions"), py::arg("city"), py::arg("svg") = false,
          py::arg("verbose") = false, "Score predictions against city targets.");

    m.def("ablate",
          [](const std::string& out, const std::string& city, const std::string& embeddings,
             int limit_tasks, bool verbose, const py::kwargs& kw) {
              auto cfg = configFromKwargs(kw);
              pipe::TrainArgs args{city, embeddings, limit_tasks};
              runStage(verbose,
                       [&](const pipe::Logger& log) { pipe::runAblate(out, args, cfg, log); });
          },
          py::arg("out"), py::arg("city"), py::arg("embeddings"), py::arg("limit_tasks") = 0,
          py::arg("verbose") = false, "Train every ablation variant on a shared split.");

    m.def("finetune",
          [](const std::string& out, const std::string& model, const std::string& city,
             const std::string& embeddings, int new_task, std::optional<int> epochs,
             std::optional<double> lr, std::optional<uint64_t> seed, bool verbose) {
              pipe::FinetuneArgs args;
              args.modelDir = model;
              args.cityDir = city;
              args.embeddings = embeddings;
              args.newTask = new_task;
              args.epochs = epochs;
              args.learningRate = lr;
              args.seed = seed;
              runStage(verbose, [&](const pipe::Logger& log) { pipe::runFinetune(out, args, log); });
          },
          py::arg("out"), py::arg("model"), py::arg("city"), py::arg("embeddings"),
          py::arg("new_task") = -1, py::arg("epochs") = py::none(), py::arg("lr") = py::none(),
          py::arg("seed") = py::none(), py::arg("verbose") = false,
          "Adapt a trained diffusion model to a new task id.");

    m.def("read_predictions",
          [](const std::string& path) {
              py::list rows;
              for (const auto& r : pipe::readPredictionsCsv(path)) {
                  py::dict d;
                  d["region_id"] = r.regionId;
                  d["task_id"] = r.task;
                  d["point"] = r.point;
                  d["samples"] = r.samples;
                  rows.append(std::move(d));
              }
              return rows;
          },
          py::arg("path"), "Parse a predictions.csv into one dict per row.");

    m.def("posterior_coeffs",
          [](int steps, double beta1, double beta_t, int t) {
              auto s = diff::makeSchedule(steps, beta1, beta_t);
              auto c = diff::posteriorCoeffs(s, t);
              return py::make_tuple(c.g0, c.g1, c.g2, c.betaTilde);
          },
          py::arg("steps"), py::arg("beta1"), py::arg("beta_t"), py::arg("t"),
          "Reverse-step mixing coefficients (g0, g1, g2, beta_tilde) at step t.");

    m.def("compute_metrics",
          [](const std::vector<double>& pred, const std::vector<double>& truth) {
              auto r = metrics::computeMetrics(pred, truth);
              py::dict d;
              d["mae"] = r.mae;
              d["rmse"] = r.rmse;
              d["r2"] = r.degenerateTruth ? py::object(py::none()) : py::object(py::float_(r.r2));
              d["n"] = r.n;
              return d;
          },
          py::arg("pred"), py::arg("truth"), "MAE, RMSE and R^2 over paired values.");

    m.def("kde",
          [](const std::vector<double>& samples, std::optional<double> bandwidth, size_t points) {
              double b = bandwidth ? *bandwidth : metrics::defaultBandwidth(samples);
              auto grid = metrics::coveringGrid(samples, b, points);
              auto curve = metrics::kde(samples, b, grid);
              return py::make_tuple(curve.grid, curve.density, b);
          },
          py::arg("samples"), py::arg("bandwidth") = py::none(), py::arg("points") = 256,
          "Epanechnikov density estimate; returns (grid, density, bandwidth).");

    m.attr("__version__") = "0.1.0";
}
