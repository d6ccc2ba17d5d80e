#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dsn/config.hpp"
#include "dsn/error.hpp"
#include "dsn/losses.hpp"
#include "dsn/membank.hpp"
#include "dsn/pipeline.hpp"
#include "dsn/retrieval.hpp"

namespace py = pybind11;
using namespace dsn;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw Error(ErrorCode::kDimensionMismatch, "expected a 2-d array");
  const auto r = static_cast<std::size_t>(a.shape(0)), c = static_cast<std::size_t>(a.shape(1));
  return Matrix(r, c, std::vector<double>(a.data(), a.data() + r * c));
}

Array to_array(const Matrix& m) {
  Array out({m.rows(), m.cols()});
  std::copy(m.values().begin(), m.values().end(), out.mutable_data());
  return out;
}

py::tuple loss_pair(const LossGrad& g) { return py::make_tuple(g.loss, to_array(g.grad)); }

KeyValues overrides(const py::dict& d) {
  KeyValues kv;
  for (const auto& [k, v] : d) kv.emplace_back(py::str(k), py::str(v));
  return kv;
}

py::dict itq_dict(const ItqModel& m) {
  py::dict d;
  d["mean"] = m.mean;
  d["pca"] = to_array(m.pca);
  d["rotation"] = to_array(m.rotation);
  d["bits"] = m.bits;
  d["loss_trace"] = m.loss_trace;
  d["orthogonality_trace"] = m.orthogonality_trace;
  return d;
}

ItqModel itq_from(const py::dict& d) {
  ItqModel m;
  m.mean = d["mean"].cast<std::vector<double>>();
  m.pca = to_matrix(d["pca"].cast<Array>());
  m.rotation = to_matrix(d["rotation"].cast<Array>());
  m.bits = d["bits"].cast<std::size_t>();
  return m;
}

py::array_t<std::uint8_t> bits_array(const BitCodes& codes) {
  py::array_t<std::uint8_t> out({codes.rows, codes.bits});
  auto v = out.mutable_unchecked<2>();
  for (std::size_t r = 0; r < codes.rows; ++r)
    for (std::size_t j = 0; j < codes.bits; ++j) v(r, j) = codes.bit(r, j) ? 1 : 0;
  return out;
}

}  // namespace

PYBIND11_MODULE(_dsn, m) {
  m.doc() = "Domain-smoothing network on feature vectors";

  static py::exception<Error> error(m, "DsnError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error, (std::string(to_string(e.code())) + ": " + e.what()).c_str());
    }
  });

  m.def(
      "synth",
      [](const py::dict& over) {
        const RunConfig cfg = load_config(KeyValues{}, overrides(over));
        SynthConfig sc = cfg.bench.synth;
        sc.seed = cfg.seed();
        const SyntheticData d = generate_synthetic(sc);
        py::dict out;
        out["image"] = to_array(d.image.features);
        out["image_labels"] = d.image.labels;
        out["sketch"] = to_array(d.sketch.features);
        out["sketch_labels"] = d.sketch.labels;
        return out;
      },
      py::arg("overrides") = py::dict(), "Synthetic image/sketch features; keys as in the config file.");

  m.def(
      "cmcm_loss",
      [](const Array& v, const std::vector<Label>& labels, double tau) {
        return loss_pair(cmcm_loss({to_matrix(v), labels, tau}));
      },
      py::arg("vectors"), py::arg("labels"), py::arg("tau") = 0.07);
  m.def(
      "memory_loss",
      [](const Array& f, const std::vector<std::optional<std::vector<double>>>& protos) {
        return loss_pair(memory_loss(to_matrix(f), protos));
      },
      py::arg("features"), py::arg("prototypes"));
  m.def(
      "cls_loss", [](const Array& logits, const std::vector<std::size_t>& y) { return loss_pair(cls_loss(to_matrix(logits), y)); },
      py::arg("logits"), py::arg("labels"));
  m.def(
      "ask_loss",
      [](const Array& logits, const Array& teacher) { return loss_pair(ask_loss(to_matrix(logits), to_matrix(teacher))); },
      py::arg("logits"), py::arg("teacher_probs"));

  m.def(
      "average_precision",
      [](const std::vector<std::uint8_t>& rel, std::size_t total) { return average_precision(rel, total); },
      py::arg("relevance"), py::arg("total_relevant"));
  m.def(
      "precision_at_k", [](const std::vector<std::uint8_t>& rel, std::size_t k) { return precision_at_k(rel, k); },
      py::arg("relevance"), py::arg("k") = kPrecisionCutoff);

  m.def(
      "itq_fit",
      [](const Array& x, std::size_t bits, std::uint64_t seed, std::size_t iterations) {
        Rng rng(seed);
        return itq_dict(itq_fit(to_matrix(x), bits, rng, iterations));
      },
      py::arg("features"), py::arg("bits"), py::arg("seed") = 0, py::arg("iterations") = kItqIterations);
  m.def(
      "itq_encode", [](const py::dict& model, const Array& x) { return bits_array(itq_encode(itq_from(model), to_matrix(x))); },
      py::arg("model"), py::arg("features"));

  py::class_<MemoryBank>(m, "MemoryBank")
      .def(py::init<std::size_t>(), py::arg("capacity") = MemoryBank::kDefaultCapacity)
      .def(
          "update",
          [](MemoryBank& b, const std::vector<double>& sketch, Label label, const Array& images,
             const std::vector<Label>& image_labels) { b.update(sketch, label, to_matrix(images), image_labels); },
          py::arg("sketch"), py::arg("label"), py::arg("images"), py::arg("image_labels"))
      .def("prototype", &MemoryBank::prototype, py::arg("category"))
      .def("size", [](const MemoryBank& b, Label c) { return b.entries(c).size(); }, py::arg("category"))
      .def("export_csv", &MemoryBank::export_csv);

  m.def(
      "default_metadata", [](const py::dict& over) { return load_config(KeyValues{}, overrides(over)).metadata(); },
      py::arg("overrides") = py::dict());

  m.def(
      "ablate",
      [](const py::dict& over) {
        const RunConfig cfg = load_config(KeyValues{}, overrides(over));
        std::vector<std::uint64_t> seeds;
        for (std::size_t i = 0; i < cfg.seeds; ++i) seeds.push_back(cfg.seed() + i);
        std::vector<RetrievalReport> reports;
        {
          py::gil_scoped_release release;
          reports = run_ablation(cfg.bench, seeds);
        }
        py::dict maps;
        for (std::size_t i = 0; i < reports.size(); ++i) maps[to_string(kAblationVariants[i])] = reports[i].map;
        return py::make_tuple(maps, emit_ablation_table(reports));
      },
      py::arg("overrides") = py::dict(), "Trains the four ablation variants; returns (mAP by variant, table).");
}
