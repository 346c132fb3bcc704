#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "melodyforge/error.hpp"
#include "melodyforge/generator.hpp"
#include "melodyforge/model.hpp"
#include "melodyforge/pianoroll.hpp"
#include "melodyforge/smf.hpp"
#include "melodyforge/trainer.hpp"

namespace py = pybind11;
namespace mf = melodyforge;

namespace {

std::span<const std::uint8_t> as_span(const py::bytes& b) {
  std::string_view v = b;
  return {reinterpret_cast<const std::uint8_t*>(v.data()), v.size()};
}

py::bytes to_bytes(const mf::smf::Bytes& b) { return {reinterpret_cast<const char*>(b.data()), b.size()}; }

mf::roll::TokenSequence sequence(std::vector<int> tokens, int spq) {
  mf::roll::TokenSequence s{std::move(tokens), spq};
  mf::roll::validate(s);
  return s;
}

mf::gen::GenerationRequest request(std::vector<int> seed, double seconds, double temperature, double tempo_bpm,
                                   std::uint64_t rng_seed) {
  mf::gen::GenerationRequest r;
  r.seed_tokens = seed.empty() ? std::vector<int>{mf::gen::random_seed_note(rng_seed)} : std::move(seed);
  r.target_seconds = seconds;
  r.temperature = temperature;
  r.tempo_bpm = tempo_bpm;
  r.rng_seed = rng_seed;
  return r;
}

}  // namespace

PYBIND11_MODULE(_melodyforge, m) {
  m.doc() = "melodyforge native core";

  static py::handle exc = py::exception<mf::Error>(m, "MelodyforgeError", PyExc_ValueError).release();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const mf::Error& e) {
      py::object err = exc(e.what());
      err.attr("code") = std::string(mf::errc_name(e.code()));
      PyErr_SetObject(exc.ptr(), err.ptr());
    }
  });

  m.attr("REST") = mf::roll::kRest;
  m.attr("END") = mf::roll::kEnd;
  m.attr("VOCAB_SIZE") = mf::roll::kVocabSize;

  // smf
  m.def("write_vlq", [](std::uint32_t v) { return to_bytes(mf::smf::write_vlq(v)); });
  m.def("read_vlq", [](const py::bytes& b) {
    auto r = mf::smf::read_vlq(as_span(b));
    return py::make_tuple(r.value, r.consumed);
  }, "Returns (value, bytes consumed).");
  m.def("roundtrip_midi", [](const py::bytes& b) { return to_bytes(mf::smf::serialize_smf(mf::smf::parse_smf(as_span(b)))); },
        "Parse then re-serialize a Standard MIDI File.");

  py::class_<mf::smf::NoteEvent>(m, "NoteEvent")
      .def_readonly("pitch", &mf::smf::NoteEvent::pitch)
      .def_readonly("onset_tick", &mf::smf::NoteEvent::onset_tick)
      .def_readonly("duration_tick", &mf::smf::NoteEvent::duration_tick)
      .def_readonly("velocity", &mf::smf::NoteEvent::velocity)
      .def_readonly("channel", &mf::smf::NoteEvent::channel)
      .def("__repr__", [](const mf::smf::NoteEvent& n) {
        return "NoteEvent(pitch=" + std::to_string(n.pitch) + ", onset_tick=" + std::to_string(n.onset_tick) +
               ", duration_tick=" + std::to_string(n.duration_tick) + ")";
      });

  m.def("extract_notes", [](const py::bytes& b) { return mf::smf::extract_notes(mf::smf::parse_smf(as_span(b))); });
  m.def("midi_info", [](const py::bytes& b) {
    auto f = mf::smf::parse_smf(as_span(b));
    py::dict d;
    d["format"] = f.format;
    d["division"] = f.division;
    d["tracks"] = f.tracks.size();
    d["notes"] = mf::smf::extract_notes(f).size();
    d["duration_seconds"] = mf::smf::duration_seconds(f);
    return d;
  });

  // tokens
  m.def("encode_tokens", [](const py::bytes& b, int spq) {
    auto f = mf::smf::parse_smf(as_span(b));
    return mf::roll::to_token_sequence(mf::smf::extract_notes(f), f.division, spq).tokens;
  }, py::arg("midi"), py::arg("steps_per_quarter") = mf::roll::kDefaultStepsPerQuarter);
  m.def("decode_tokens", [](std::vector<int> tokens, double tempo_bpm, int spq) {
    return to_bytes(mf::smf::serialize_smf(mf::roll::decode_tokens(sequence(std::move(tokens), spq), tempo_bpm)));
  }, py::arg("tokens"), py::arg("tempo_bpm") = mf::roll::kDefaultTempoBpm, py::arg("steps_per_quarter") = mf::roll::kDefaultStepsPerQuarter);
  m.def("pitch_to_name", &mf::roll::pitch_to_name);
  m.def("name_to_token", &mf::roll::name_to_token);
  m.def("pitch_to_frequency", &mf::roll::pitch_to_frequency);
  m.def("parse_note_list", &mf::roll::parse_note_list);
  m.def("token_name", &mf::roll::token_name);

  // model
  py::class_<mf::nn::ModelParams>(m, "Model")
      .def_static("initialize", [](int hidden, std::uint64_t seed, int vocab) {
        return mf::nn::ModelParams::initialize({vocab, hidden}, seed);
      }, py::arg("hidden") = 128, py::arg("seed") = 0, py::arg("vocab") = mf::roll::kVocabSize)
      .def_property_readonly("hidden", [](const mf::nn::ModelParams& p) { return p.dims.hidden; })
      .def_property_readonly("vocab", [](const mf::nn::ModelParams& p) { return p.dims.vocab; })
      .def_property_readonly("parameter_count", &mf::nn::ModelParams::parameter_count)
      .def("fingerprint", [](const mf::nn::ModelParams& p) { return mf::nn::fingerprint(p); })
      .def("flatten", &mf::nn::ModelParams::flatten)
      .def("unflatten", &mf::nn::ModelParams::unflatten)
      .def("loss", [](const mf::nn::ModelParams& p, std::vector<int> input, std::vector<int> target) {
        return mf::nn::forward_teacher_forced(input, target, p).loss;
      })
      .def("loss_and_gradient", [](const mf::nn::ModelParams& p, std::vector<int> input, std::vector<int> target) {
        auto g = mf::nn::ModelParams::zeros(p.dims);
        double loss = mf::nn::loss_and_gradients(input, target, p, g).loss;
        return py::make_tuple(loss, g.flatten());
      }, "Returns (mean cross-entropy, flat gradient in flatten() order).")
      .def("save", [](const mf::nn::ModelParams& p, const std::string& path) {
        mf::smf::write_file(path, mf::train::save_checkpoint({p, {}}));
      })
      .def_static("load", [](const std::string& path) { return mf::train::load_checkpoint(mf::smf::read_file(path)).params; });

  m.def("train", [](std::vector<std::vector<int>> sequences, int hidden, int window_len, int stride, int epochs_max,
                    double accuracy_stop, bool early_stopping, double learning_rate, int batch_size, std::uint64_t rng_seed,
                    const std::function<void(int, double, double)>& on_epoch) {
    std::vector<mf::roll::TokenSequence> corpus;
    for (auto& s : sequences) corpus.push_back(sequence(std::move(s), mf::roll::kDefaultStepsPerQuarter));
    mf::train::TrainingConfig c;
    c.dims.hidden = hidden;
    c.window_len = window_len;
    c.stride = stride;
    c.epochs_max = epochs_max;
    c.accuracy_stop = accuracy_stop;
    c.early_stopping = early_stopping;
    c.learning_rate = learning_rate;
    c.batch_size = batch_size;
    c.rng_seed = rng_seed;
    mf::train::EpochCallback cb;
    if (on_epoch) cb = [&](const mf::train::EpochMetrics& e) {
      py::gil_scoped_acquire gil;
      on_epoch(e.epoch, e.loss, e.accuracy);
    };
    mf::train::TrainingResult r;
    {
      py::gil_scoped_release release;
      r = mf::train::train(corpus, c, cb);
    }
    py::list metrics;
    for (const auto& e : r.metrics) metrics.append(py::dict(py::arg("epoch") = e.epoch, py::arg("loss") = e.loss, py::arg("accuracy") = e.accuracy));
    return py::make_tuple(std::move(r.checkpoint.params), metrics);
  }, py::arg("sequences"), py::arg("hidden") = 128, py::arg("window_len") = 64, py::arg("stride") = 32,
     py::arg("epochs_max") = 200, py::arg("accuracy_stop") = 0.93, py::arg("early_stopping") = true,
     py::arg("learning_rate") = 1e-3, py::arg("batch_size") = 32, py::arg("rng_seed") = 0,
     py::arg("on_epoch") = nullptr, "Returns (Model, list of per-epoch metric dicts).");

  m.def("generate", [](const mf::nn::ModelParams& p, std::vector<int> seed, double seconds, double temperature,
                       double tempo_bpm, std::uint64_t rng_seed) {
    auto r = request(std::move(seed), seconds, temperature, tempo_bpm, rng_seed);
    py::gil_scoped_release release;
    return mf::gen::generate(r, p).tokens;
  }, py::arg("model"), py::arg("seed_tokens") = std::vector<int>{}, py::arg("seconds") = mf::gen::kDefaultSeconds,
     py::arg("temperature") = mf::gen::kDefaultTemperature, py::arg("tempo_bpm") = mf::roll::kDefaultTempoBpm,
     py::arg("rng_seed") = 0);
  m.def("generate_midi", [](const mf::nn::ModelParams& p, std::vector<int> seed, double seconds, double temperature,
                            double tempo_bpm, std::uint64_t rng_seed) {
    auto r = request(std::move(seed), seconds, temperature, tempo_bpm, rng_seed);
    mf::smf::Bytes out;
    {
      py::gil_scoped_release release;
      out = mf::gen::generate_to_midi(r, p);
    }
    return to_bytes(out);
  }, py::arg("model"), py::arg("seed_tokens") = std::vector<int>{}, py::arg("seconds") = mf::gen::kDefaultSeconds,
     py::arg("temperature") = mf::gen::kDefaultTemperature, py::arg("tempo_bpm") = mf::roll::kDefaultTempoBpm,
     py::arg("rng_seed") = 0);
}
