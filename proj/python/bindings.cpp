#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dhi/depth_weighting.hpp"
#include "dhi/detector.hpp"
#include "dhi/error.hpp"
#include "dhi/gradcheck.hpp"
#include "dhi/metrics.hpp"
#include "dhi/operators.hpp"
#include "dhi/profiler.hpp"
#include "dhi/synth.hpp"
#include "dhi/train.hpp"

namespace py = pybind11;
using namespace dhi;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

OperatorKind parse_operator(const std::string& name) {
  for (auto k : {OperatorKind::Convolution, OperatorKind::Involution, OperatorKind::HyperInvolution,
                 OperatorKind::DepthAwareHyperInvolution})
    if (to_string(k) == name) return k;
  throw InvalidArgument("unknown operator '" + name + "'");
}

WeightingSpec weighting(const std::string& kind, double gamma, bool literal) {
  WeightingSpec s{parse_weighting_kind(kind), gamma, literal};
  s.validate();
  return s;
}

py::dict profile_dict(const ModelProfile& p) {
  py::list layers;
  for (const auto& l : p.layers) {
    py::dict d;
    d["name"] = l.name;
    d["kind"] = l.kind;
    d["output"] = l.output;
    d["params"] = l.params;
    d["flops"] = l.flops;
    layers.append(d);
  }
  py::dict out;
  out["layers"] = layers;
  out["params"] = p.total_params();
  out["gflops"] = p.gflops();
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Depth-aware hyper-involution operators and an RGB-D detector";

  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_IOError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  m.def("count_params", [](const std::string& op, std::size_t in_channels, std::size_t filters, std::size_t kernel,
                           std::size_t groups) {
          return count_params(OperatorConfig{parse_operator(op), in_channels, filters, kernel, groups});
        },
        py::arg("op"), py::arg("in_channels") = 3, py::arg("filters") = 8, py::arg("kernel_size") = 3,
        py::arg("groups") = 1);
  m.def("count_stored_params", [](const std::string& op, std::size_t in_channels, std::size_t filters,
                                  std::size_t kernel, std::size_t groups) {
          return count_stored_params(OperatorConfig{parse_operator(op), in_channels, filters, kernel, groups});
        },
        py::arg("op"), py::arg("in_channels") = 3, py::arg("filters") = 8, py::arg("kernel_size") = 3,
        py::arg("groups") = 1);

  m.def("depth_weight", [](double d1, double d2, const std::string& kind, double gamma, bool literal) {
          return depth_weight(weighting(kind, gamma, literal), d1, d2);
        },
        py::arg("d1"), py::arg("d2"), py::arg("kind") = "imq", py::arg("gamma") = 9.5, py::arg("literal") = false);
  m.def("weight_field", [](const Array& depth, std::size_t kernel, const std::string& kind, double gamma) {
          if (depth.ndim() != 4) throw InvalidArgument("depth must be (N, H, W, 1)");
          return to_array(weight_field(to_tensor(depth), kernel, weighting(kind, gamma, false)));
        },
        py::arg("depth"), py::arg("kernel_size") = 3, py::arg("kind") = "imq", py::arg("gamma") = 9.5);

  m.def("involution", [](const Array& x, const Array& kernels, std::size_t kernel, std::size_t groups) {
          return to_array(involution(to_tensor(x), KernelField{to_tensor(kernels), kernel, groups}));
        },
        py::arg("x"), py::arg("kernels"), py::arg("kernel_size"), py::arg("groups") = 1);
  m.def("depth_aware_hyper_involution", [](const Array& x, const Array& depth, std::size_t kernel,
                                           std::uint64_t seed, const std::string& kind, double gamma) {
          Tensor input = to_tensor(x);
          if (input.rank() != 4) throw InvalidArgument("x must be (N, H, W, C)");
          HyperNetwork net(input.dim(3));
          Rng rng(seed);
          net.init(rng);
          return to_array(depth_aware_hyper_involution_forward(input, to_tensor(depth), net,
                                                               weighting(kind, gamma, false), kernel,
                                                               GroupSpec{1, input.dim(3)}, Mode::Eval));
        },
        py::arg("x"), py::arg("depth"), py::arg("kernel_size") = 3, py::arg("seed") = 0, py::arg("kind") = "imq",
        py::arg("gamma") = 9.5);

  m.def("iou", [](std::array<double, 4> a, std::array<double, 4> b) {
          return iou(Box{a[0], a[1], a[2], a[3]}, Box{b[0], b[1], b[2], b[3]});
        },
        py::arg("a"), py::arg("b"));
  m.def("average_precision",
        [](const std::vector<std::tuple<std::size_t, double, std::array<double, 4>>>& detections,
           const std::vector<std::tuple<std::size_t, std::array<double, 4>>>& truths, double iou_threshold) {
          std::vector<ScoredDetection> d;
          for (const auto& [img, conf, b] : detections) d.push_back({img, Detection{0, conf, {b[0], b[1], b[2], b[3]}}});
          std::vector<GroundTruth> g;
          for (const auto& [img, b] : truths) g.push_back({img, 0, {b[0], b[1], b[2], b[3]}});
          return average_precision(d, g, iou_threshold).ap;
        },
        py::arg("detections"), py::arg("truths"), py::arg("iou_threshold") = 0.5,
        "detections: (image, confidence, (cx, cy, w, h)); truths: (image, (cx, cy, w, h)); single class");

  m.def("conv_flops", &conv_flops, py::arg("out_h"), py::arg("out_w"), py::arg("out_channels"),
        py::arg("in_channels"), py::arg("kernel_size"));
  m.def("profile_model", [](const std::map<std::string, std::string>& config) {
          ModelConfig cfg;
          const auto rest = apply_model_keys(cfg, config);
          if (!rest.empty()) throw InvalidArgument("unknown model key '" + rest.begin()->first + "'");
          cfg.validate();
          return profile_dict(profile_model(Detector(cfg, default_anchors(cfg.anchors))));
        },
        py::arg("config") = std::map<std::string, std::string>{});

  m.def("gradient_suite", [](std::size_t seeds, bool inject_fault) {
          GradCheckOptions o;
          o.seeds = seeds;
          o.inject_fault = inject_fault;
          py::list out;
          for (const auto& r : run_gradient_suite(o)) {
            py::dict d;
            d["op"] = r.op;
            d["seed"] = r.seed;
            d["rel_error"] = r.rel_error;
            d["passed"] = r.passed;
            out.append(d);
          }
          return out;
        },
        py::arg("seeds") = 5, py::arg("inject_fault") = false);

  m.def("generate_dataset", [](const std::filesystem::path& out, std::size_t count, std::size_t classes,
                               std::uint64_t seed, std::size_t image_size, std::optional<std::size_t> test_count) {
          DatasetOptions o;
          o.count = count;
          o.classes = classes;
          o.seed = seed;
          o.image_size = image_size;
          o.test_count = test_count;
          const auto mf = generate_dataset(out, o);
          py::dict d;
          d["train"] = mf.train.size();
          d["test"] = mf.test.size();
          d["classes"] = mf.classes;
          d["image_size"] = mf.image_size;
          return d;
        },
        py::arg("out"), py::arg("count"), py::arg("classes") = 3, py::arg("seed") = 0, py::arg("image_size") = 128,
        py::arg("test_count") = py::none());

  py::class_<Detector>(m, "Detector")
      .def(py::init([](const std::map<std::string, std::string>& config, std::uint64_t seed) {
             ModelConfig cfg;
             const auto rest = apply_model_keys(cfg, config);
             if (!rest.empty()) throw InvalidArgument("unknown model key '" + rest.begin()->first + "'");
             cfg.validate();
             auto d = std::make_unique<Detector>(cfg, default_anchors(cfg.anchors));
             d->init(seed);
             return d;
           }),
           py::arg("config") = std::map<std::string, std::string>{}, py::arg("seed") = 0)
      .def("forward", [](Detector& d, const Array& rgb, const Array& depth) {
             NoGradGuard guard;
             return to_array(d.forward(to_tensor(rgb), to_tensor(depth), Mode::Eval));
           },
           py::arg("rgb"), py::arg("depth"), "Raw head output (N, S, S, A * (5 + K)) in eval mode.")
      .def("detect", [](Detector& d, const Array& rgb, const Array& depth, double min_confidence, double nms) {
             NoGradGuard guard;
             py::list out;
             for (const auto& det : d.detect(to_tensor(rgb), to_tensor(depth), min_confidence, nms))
               out.append(py::make_tuple(det.class_id, det.confidence,
                                         py::make_tuple(det.box.cx, det.box.cy, det.box.w, det.box.h)));
             return out;
           },
           py::arg("rgb"), py::arg("depth"), py::arg("min_confidence") = 0.005, py::arg("nms_threshold") = 0.5)
      .def("save", &Detector::save, py::arg("path"))
      .def("load", &Detector::load, py::arg("path"))
      .def_property_readonly("config", [](const Detector& d) { return model_key_values(d.config()); })
      .def_property_readonly("grid_size", [](const Detector& d) { return d.config().grid_size(); })
      .def_property_readonly("param_count", [](const Detector& d) { return d.params().trainable_count(); });
}
