#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fecil/checkpoint.hpp"
#include "fecil/config.hpp"
#include "fecil/gradcheck.hpp"
#include "fecil/memory.hpp"
#include "fecil/mixaug.hpp"
#include "fecil/protocol.hpp"
#include "fecil/trainer.hpp"

namespace py = pybind11;
using namespace fecil;

namespace {

template <typename T>
BasicTensor<T> from_numpy(const py::array_t<T, py::array::c_style | py::array::forcecast>& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return BasicTensor<T>(std::move(shape), std::vector<T>(a.data(), a.data() + a.size()));
}

template <typename T>
py::array_t<T> to_numpy(const BasicTensor<T>& t) {
  py::array_t<T> out(t.shape());
  std::copy_n(t.data(), t.size(), out.mutable_data());
  return out;
}

py::dict summary_dict(const RunSummary& s) {
  py::dict d;
  d["seed"] = s.seed;
  d["compress_aug"] = s.compress_aug;
  d["top1_big"] = s.top1_big;
  d["top5_big"] = s.top5_big;
  d["top1_compact"] = s.top1_compact;
  d["top5_compact"] = s.top5_compact;
  d["avg_big"] = s.avg_big;
  d["avg_compact"] = s.avg_compact;
  d["last_big"] = s.last_big;
  d["last_compact"] = s.last_compact;
  d["params_compact_extractor"] = s.params_compact_extractor;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Expansion/compression class-incremental training core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);

  m.def(
      "gradcheck",
      [](std::size_t trials, std::uint64_t seed) {
        const auto r = run_gradcheck(trials, seed);
        py::dict d;
        d["cases"] = r.cases.size();
        d["worst"] = r.worst();
        d["tolerance"] = r.tolerance;
        d["passed"] = r.passed();
        return d;
      },
      py::arg("trials") = 10, py::arg("seed") = 0);

  m.def(
      "sample_lambda",
      [](double alpha, std::uint64_t seed, std::size_t n) {
        Rng rng(seed);
        std::vector<double> out(n);
        for (auto& v : out) v = sample_lambda(alpha, rng);
        return out;
      },
      py::arg("alpha"), py::arg("seed"), py::arg("n"));

  m.def(
      "cutmix",
      [](py::array_t<float, py::array::c_style | py::array::forcecast> xi,
         py::array_t<float, py::array::c_style | py::array::forcecast> xj, double lam, std::uint64_t seed) {
        const Tensor a = from_numpy(xi), b = from_numpy(xj);
        if (a.rank() != 3) throw ShapeError("cutmix: expected [C,H,W] images");
        Rng rng(seed);
        const Box box = sample_box(static_cast<int>(a.shape()[2]), static_cast<int>(a.shape()[1]), lam, rng);
        auto r = cutmix_apply(a, b, box);
        return py::make_tuple(to_numpy(r.image), r.lambda_eff);
      },
      py::arg("x_i"), py::arg("x_j"), py::arg("lam"), py::arg("seed"),
      "Paste a random box of x_j into x_i; returns (image, lambda_eff).");

  m.def(
      "herding_select",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> features, std::size_t m) {
        return herding_select(from_numpy(features), m);
      },
      py::arg("features"), py::arg("m"));

  m.def(
      "task_sequence",
      [](std::size_t classes, const std::string& protocol, std::size_t steps, std::uint64_t seed) {
        return make_task_sequence(classes, parse_protocol(protocol), steps, seed).tasks;
      },
      py::arg("classes"), py::arg("protocol"), py::arg("steps"), py::arg("seed"));

  m.def(
      "run",
      [](const std::string& config_text, const std::filesystem::path& out_dir) {
        const RunConfig rc = RunConfig::from(Config::parse(config_text, "<python>"));
        RunResult r;
        {
          py::gil_scoped_release release;
          r = run_incremental(rc, out_dir);
        }
        return summary_dict(r.summary);
      },
      py::arg("config_text"), py::arg("out_dir"), "Train every step; writes the usual run directory.");

  m.def(
      "evaluate_checkpoint",
      [](const std::filesystem::path& path, const std::string& config_text) {
        ModelCheckpoint ck = load_model(path);
        const RunConfig rc = RunConfig::from(Config::parse(config_text, "<python>"));
        const DataBundle data = load_data(rc.dataset);
        const auto res = evaluate_compact(ck.net, data.test, ck.norm);
        return py::make_tuple(res.top1.value() * 100.0, res.top5.value() * 100.0);
      },
      py::arg("path"), py::arg("config_text"), "Returns (top1, top5) percent on the dataset's test split.");
}
