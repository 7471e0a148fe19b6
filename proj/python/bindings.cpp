#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cal/adversary.hpp"
#include "cal/checkpoint.hpp"
#include "cal/errors.hpp"
#include "cal/evaluate.hpp"
#include "cal/metrics.hpp"
#include "cal/objectives.hpp"
#include "cal/run_config.hpp"
#include "cal/selfcheck.hpp"
#include "cal/synthetic.hpp"
#include "cal/trainer.hpp"

namespace py = pybind11;
using namespace cal;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor::from_data(shape, std::vector<float>(a.data(), a.data() + a.size()));
}

FloatArray to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  FloatArray out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

// A trained or freshly initialised encoder plus the vocabulary it reads.
struct Model {
  EncoderParams params;
  Vocab vocab;
};

Model load_model(const std::filesystem::path& path) {
  Checkpoint ckpt = load_checkpoint(path);
  auto it = ckpt.meta.find("vocab");
  if (it == ckpt.meta.end()) throw CheckpointError(CheckpointErrc::malformed, "checkpoint has no vocabulary");
  std::vector<std::string> tokens;
  std::istringstream in(it->second);
  for (std::string t; in >> t;) tokens.push_back(t);
  return {params_from_checkpoint(ckpt), Vocab::from_tokens(tokens)};
}

std::vector<SupervisedExample> to_rows(const std::vector<std::string>& sentences, const std::vector<int>& labels) {
  if (sentences.size() != labels.size()) throw DataError("sentences and labels differ in length");
  std::vector<SupervisedExample> rows;
  for (std::size_t i = 0; i < sentences.size(); ++i) rows.push_back({labels[i], sentences[i], std::nullopt});
  return rows;
}

}  // namespace

PYBIND11_MODULE(_calab, m) {
  m.doc() = "Contrastive adversarial text encoder training";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<MetricError>(m, "MetricError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_IOError);
  py::register_exception<NonFiniteError>(m, "NonFiniteError", PyExc_ArithmeticError);

  m.def("tokenize", [](const std::string& s) { return tokenize(s); });

  py::class_<Vocab>(m, "Vocab")
      .def_static("build", [](const std::vector<std::string>& lines,
                              std::size_t min_freq) { return Vocab::build(lines, min_freq); },
                  py::arg("lines"), py::arg("min_freq") = 1)
      .def_static("load", &Vocab::load)
      .def("save", &Vocab::save)
      .def("ids", [](const Vocab& v, const std::vector<std::string>& tokens) { return v.ids(tokens); })
      .def("id", [](const Vocab& v, const std::string& t) { return v.id(t); })
      .def("__len__", &Vocab::size)
      .def("__contains__", [](const Vocab& v, const std::string& t) { return v.contains(t); });

  using Ints = const std::vector<int>&;
  using Doubles = const std::vector<double>&;
  m.def("accuracy", [](Ints p, Ints l) { return accuracy(p, l); });
  m.def("f1_binary", [](Ints p, Ints l, int positive) { return f1_binary(p, l, positive); }, py::arg("preds"),
        py::arg("labels"), py::arg("positive_class") = 1);
  m.def("mcc", [](Ints p, Ints l) { return mcc(p, l); });
  m.def("spearman", [](Doubles x, Doubles y) { return spearman(x, y); });

  m.def(
      "info_nce",
      [](const FloatArray& anchors, const FloatArray& keys, float temperature, const std::string& mode) {
        NoGradScope ng;
        return double(info_nce(to_tensor(anchors), to_tensor(keys), temperature, negative_mode_from_string(mode)).item());
      },
      py::arg("anchors"), py::arg("keys"), py::arg("temperature") = 0.05f, py::arg("mode") = "adv-keys");

  m.def(
      "attack_delta",
      [](const FloatArray& grad, const std::string& kind, float epsilon) {
        AttackConfig a{attack_kind_from_string(kind), epsilon};
        a.validate();
        return to_array(attack_delta(to_tensor(grad), a));
      },
      py::arg("grad"), py::arg("kind") = "fgm", py::arg("epsilon") = 0.3f);

  m.def("motif_task", [](std::size_t train_size, std::size_t dev_size, std::uint64_t seed) {
    MotifTaskConfig c;
    c.train_size = train_size;
    c.dev_size = dev_size;
    c.seed = seed;
    MotifTask t = make_motif_task(c);
    auto split = [](const std::vector<SupervisedExample>& rows) {
      py::list out;
      for (auto& r : rows) out.append(py::make_tuple(r.sentence1, r.label));
      return out;
    };
    return py::make_tuple(split(t.train), split(t.dev));
  }, py::arg("train_size") = 2000, py::arg("dev_size") = 500, py::arg("seed") = 7);

  m.def("selfcheck", [](std::uint64_t seed) {
    py::list out;
    for (auto& r : run_selfcheck({.seed = seed})) out.append(py::make_tuple(r.name, r.passed, r.detail));
    return out;
  }, py::arg("seed") = 1234);

  py::class_<Model>(m, "Model")
      .def_static("load", &load_model)
      .def_static(
          "train",
          [](const std::string& config_text, const std::vector<std::string>& sentences, const std::vector<int>& labels) {
            RunConfig rc = RunConfig::parse(config_text);
            Model model{EncoderParams{}, Vocab::build(sentences, rc.min_freq)};
            rc.encoder.vocab_size = model.vocab.size();
            rc.validate();
            if (!is_supervised(rc.objective)) throw ConfigError("mode", "supervised training needs a labeled objective");
            auto rows = to_rows(sentences, labels);
            model.params = EncoderParams::init(rc.encoder, rc.train.seed);
            py::gil_scoped_release release;
            train_loop(model.params, supervised_data(rows, model.vocab, rc.encoder.max_len), rc.objective, rc.train,
                       rc.loss, rc.attack,
                       [&](const EncoderParams& p) { return evaluate_classification(p, rows, model.vocab).value; });
            return model;
          },
          py::arg("config"), py::arg("sentences"), py::arg("labels"))
      .def("accuracy",
           [](const Model& md, const std::vector<std::string>& sentences, const std::vector<int>& labels) {
             return evaluate_classification(md.params, to_rows(sentences, labels), md.vocab).value;
           })
      .def("robust_accuracy",
           [](const Model& md, const std::vector<std::string>& sentences, const std::vector<int>& labels,
              float epsilon, const std::string& kind) {
             AttackConfig a{attack_kind_from_string(kind), epsilon};
             auto r = evaluate_under_attack(md.params, to_rows(sentences, labels), md.vocab, a);
             return py::make_tuple(r.clean.value, r.robust.value);
           },
           py::arg("sentences"), py::arg("labels"), py::arg("epsilon") = 0.5f, py::arg("kind") = "fgm")
      .def("embed",
           [](const Model& md, const std::vector<std::string>& sentences) {
             auto rows = embed_sentences(md.params, sentences, md.vocab);
             const py::ssize_t h = static_cast<py::ssize_t>(md.params.config().hidden);
             FloatArray out({static_cast<py::ssize_t>(rows.size()), h});
             for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), out.mutable_data() + i * h);
             return out;
           })
      .def_property_readonly("hidden", [](const Model& md) { return md.params.config().hidden; })
      .def_property_readonly("checksum", [](const Model& md) { return md.params.checksum(); });
}
