// Python bindings for the covergen core.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "covergen/alignment.h"
#include "covergen/beat_align.h"
#include "covergen/dataset.h"
#include "covergen/error.h"
#include "covergen/features.h"
#include "covergen/io.h"
#include "covergen/metrics.h"
#include "covergen/midi_file.h"
#include "covergen/model.h"
#include "covergen/remi.h"
#include "covergen/stats.h"

namespace py = pybind11;
using namespace covergen;

namespace {

FeatureMatrix to_features(const py::array_t<float, py::array::c_style | py::array::forcecast>& a, double frame_rate) {
  if (a.ndim() != 2) throw Error(ErrorCode::kShapeMismatch, "features must be a 2-d array (frames, dims)");
  FeatureMatrix f;
  f.frames = static_cast<int>(a.shape(0));
  f.dims = static_cast<int>(a.shape(1));
  f.frame_rate = frame_rate;
  f.source = FeatureSource::kExternal;
  f.data.assign(a.data(), a.data() + a.size());
  return f;
}

py::array_t<float> to_array(const FeatureMatrix& f) {
  py::array_t<float> out({f.frames, f.dims});
  std::copy(f.data.begin(), f.data.end(), out.mutable_data());
  return out;
}

MelodyContour to_contour(const std::vector<std::optional<double>>& pitches, double frame_rate) {
  return MelodyContour{pitches, frame_rate};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Piano cover generation core";
  m.attr("__version__") = COVERGEN_VERSION;

  static py::exception<Error> exc(m, "CovergenError", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      exc((std::string(error_code_name(e.code())) + ": " + e.what()).c_str());
    }
  });

  py::class_<Vocabulary>(m, "Vocabulary")
      .def(py::init<>())
      .def("__len__", &Vocabulary::size)
      .def_property_readonly("size", &Vocabulary::size)
      .def("name", &Vocabulary::name, py::arg("id"))
      .def(
          "id", [](const Vocabulary& v, const std::string& name) {
            const auto id = v.find_name(name);
            if (!id) throw Error(ErrorCode::kInvalidArgument, "unknown token '" + name + "'");
            return *id;
          },
          py::arg("name"))
      .def("names", [](const Vocabulary& v) {
        std::vector<std::string> out;
        for (int i = 0; i < v.size(); ++i) out.push_back(v.name(i));
        return out;
      });

  m.def(
      "tokenize",
      [](const std::filesystem::path& midi, const std::filesystem::path& beats) {
        const Vocabulary vocab;
        return encode(read_midi(midi).performance, read_beats(beats), vocab).ids;
      },
      py::arg("midi"), py::arg("beats"), "Encode a MIDI file on a beat grid to token ids.");
  m.def(
      "detokenize",
      [](const std::vector<int>& ids, const std::filesystem::path& beats, const std::filesystem::path& out) {
        const Vocabulary vocab;
        TokenSequence seq;
        seq.ids = ids;
        seq.bar_spans = scan_bar_spans(ids, vocab);
        const auto perf = decode(seq, read_beats(beats), vocab);
        write_midi(out, perf);
        return perf.notes.size();
      },
      py::arg("ids"), py::arg("beats"), py::arg("out"), "Decode token ids to a MIDI file; returns the note count.");

  m.def(
      "chromagram",
      [](const std::vector<float>& pcm, int sample_rate) { return to_array(chromagram(pcm, sample_rate)); },
      py::arg("pcm"), py::arg("sample_rate"), "Chroma features of mono PCM at 10 frames/s.");
  m.def(
      "dtw",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>& a,
         const py::array_t<float, py::array::c_style | py::array::forcecast>& b) {
        const auto p = dtw_path(to_features(a, 10.0), to_features(b, 10.0));
        std::vector<std::pair<int, int>> path;
        for (const auto& s : p.points) path.emplace_back(s.i, s.j);
        return py::make_tuple(p.cost, path);
      },
      py::arg("a"), py::arg("b"), "Optimal warping path; returns (cost, [(i, j), ...]).");

  m.def(
      "mca",
      [](const std::vector<std::optional<double>>& ref, const std::vector<std::optional<double>>& est,
         double frame_rate) { return mca(to_contour(ref, frame_rate), to_contour(est, frame_rate)); },
      py::arg("reference"), py::arg("estimate"), py::arg("frame_rate") = 100.0);
  m.def(
      "grooving_similarity",
      [](const std::vector<bool>& a, const std::vector<bool>& b) {
        GrooveVector x{}, y{};
        if (a.size() != x.size() || b.size() != y.size()) {
          throw Error(ErrorCode::kShapeMismatch, "groove vectors have 16 entries");
        }
        std::copy(a.begin(), a.end(), x.begin());
        std::copy(b.begin(), b.end(), y.begin());
        return grooving_similarity(x, y);
      },
      py::arg("a"), py::arg("b"));
  m.def("pitch_class_entropy", &pitch_class_entropy, py::arg("counts"));
  m.def("duration_deviation", &duration_deviation, py::arg("len_a"), py::arg("len_b"));
  m.def("tempo_deviation", &tempo_deviation, py::arg("bpm_a"), py::arg("bpm_b"));
  m.def("finetune_loss", &finetune_loss, py::arg("l1"), py::arg("l2"), py::arg("alpha"));
  m.def(
      "filter_pair",
      [](double mca_value, double length_deviation) {
        const auto d = filter_pair(mca_value, length_deviation);
        return py::make_tuple(d.keep, d.reason);
      },
      py::arg("mca"), py::arg("length_deviation"), "Returns (keep, reason).");
}
