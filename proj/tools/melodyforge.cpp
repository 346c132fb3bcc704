// melodyforge command line: train, generate, inspect, serve.

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "melodyforge/error.hpp"
#include "melodyforge/generator.hpp"
#include "melodyforge/pianoroll.hpp"
#include "melodyforge/service.hpp"
#include "melodyforge/smf.hpp"
#include "melodyforge/trainer.hpp"

namespace mf = melodyforge;

namespace {

constexpr int kExitBadInput = 2;
constexpr int kExitBadSeed = 3;

std::string model_path_override(const std::string& flag) {
  if (const char* env = std::getenv("MELODYFORGE_MODEL"); env != nullptr && *env != '\0') return env;
  return flag;
}

struct TrainArgs {
  std::string data, out, metrics;
  int epochs = 200, window = 64, stride = 32, hidden = 128, batch = 32;
  double lr = 1e-3, stop_acc = 0.93;
  std::uint64_t seed = 0;
};

int cmd_train(const TrainArgs& a) {
  auto files = mf::train::list_midi_files(a.data);
  if (files.empty()) {
    std::cerr << "error: no MIDI files found in " << a.data << "\n";
    return kExitBadInput;
  }
  auto corpus = mf::train::load_corpus(files);
  for (const auto& f : corpus.failures) std::cerr << "warning: skipped " << f << "\n";

  std::vector<mf::roll::TokenSequence> usable;
  for (std::size_t i = 0; i < corpus.sequences.size(); ++i) {
    if (corpus.sequences[i].tokens.size() < static_cast<std::size_t>(a.window) + 1) {
      std::cerr << "warning: skipped " << corpus.loaded[i] << ": " << corpus.sequences[i].tokens.size() << " tokens, shorter than one window\n";
      continue;
    }
    usable.push_back(std::move(corpus.sequences[i]));
  }
  std::cout << "loaded " << usable.size() << " of " << files.size() << " files (" << files.size() - usable.size() << " skipped)\n";
  if (usable.empty()) {
    std::cerr << "error: no usable MIDI files in " << a.data << "\n";
    return kExitBadInput;
  }

  mf::train::TrainingConfig cfg;
  cfg.dims.hidden = a.hidden;
  cfg.window_len = a.window;
  cfg.stride = a.stride;
  cfg.epochs_max = a.epochs;
  cfg.batch_size = a.batch;
  cfg.learning_rate = a.lr;
  cfg.accuracy_stop = a.stop_acc;
  cfg.rng_seed = a.seed;

  auto result = mf::train::train(usable, cfg, [](const mf::train::EpochMetrics& m) {
    std::cout << "epoch " << std::setw(4) << m.epoch << "  loss " << std::fixed << std::setprecision(4) << m.loss << "  accuracy " << m.accuracy
              << "  (" << std::setprecision(2) << m.seconds << " s)" << std::endl;
  });
  mf::smf::write_file(a.out, mf::train::save_checkpoint(result.checkpoint));
  const std::string metrics = a.metrics.empty() ? a.out + ".metrics.csv" : a.metrics;
  std::ofstream(metrics) << mf::train::metrics_csv(result.metrics);
  std::cout << "wrote " << a.out << " and " << metrics << " after " << result.metrics.size() << " epochs\n";
  return 0;
}

struct GenerateArgs {
  std::string model, out, seed_notes, tokens_out;
  double seconds = mf::gen::kDefaultSeconds, temperature = mf::gen::kDefaultTemperature, tempo = mf::roll::kDefaultTempoBpm;
  std::uint64_t rng_seed = 0;
  bool rng_seed_set = false;
};

int cmd_generate(const GenerateArgs& a) {
  const std::string path = model_path_override(a.model);
  mf::train::ModelCheckpoint ck;
  try {
    ck = mf::train::load_checkpoint(mf::smf::read_file(path));
  } catch (const std::exception& e) {
    std::cerr << "error: cannot load checkpoint " << path << ": " << e.what() << "\n";
    return kExitBadInput;
  }

  mf::gen::GenerationRequest req;
  req.rng_seed = a.rng_seed_set ? a.rng_seed : (static_cast<std::uint64_t>(std::random_device{}()) << 32 | std::random_device{}());
  try {
    req.seed_tokens = mf::roll::parse_note_list(a.seed_notes);
  } catch (const mf::Error& e) {
    std::cerr << "error: bad --seed-notes: " << e.what() << "\n";
    return kExitBadSeed;
  }
  if (req.seed_tokens.empty()) req.seed_tokens = {mf::gen::random_seed_note(req.rng_seed)};
  req.target_seconds = a.seconds;
  req.temperature = a.temperature;
  req.tempo_bpm = a.tempo;
  req.steps_per_quarter = ck.meta.steps_per_quarter;

  mf::roll::TokenSequence seq;
  try {
    seq = mf::gen::generate(req, ck.params);
  } catch (const mf::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == mf::Errc::InvalidSeedToken ? kExitBadSeed : kExitBadInput;
  }
  auto file = mf::roll::decode_tokens(seq, req.tempo_bpm, mf::gen::kOutputDivision);
  mf::smf::write_file(a.out, mf::smf::serialize_smf(file));
  if (!a.tokens_out.empty()) std::ofstream(a.tokens_out) << mf::roll::tokens_to_text(seq);
  std::cout << "wrote " << a.out << ": " << mf::smf::extract_notes(file).size() << " notes, " << std::fixed << std::setprecision(1)
            << mf::smf::duration_seconds(file) << " s nominal (rng seed " << req.rng_seed << ")\n";
  return 0;
}

int cmd_inspect(const std::string& path, bool show_tokens) {
  mf::smf::MidiFile file;
  try {
    file = mf::smf::parse_smf(mf::smf::read_file(path));
  } catch (const std::exception& e) {
    std::cerr << "error: " << path << ": " << e.what() << "\n";
    return kExitBadInput;
  }
  std::size_t events = 0;
  for (const auto& t : file.tracks) events += t.size();
  const auto notes = mf::smf::extract_notes(file);
  const auto tempos = mf::smf::tempo_map(file);
  const double seconds = mf::smf::duration_seconds(file);

  std::cout << "file: " << path << "\n"
            << "format: " << file.format << "\n"
            << "division: " << file.division << " ticks/quarter\n"
            << "tracks: " << file.tracks.size() << "\n"
            << "events: " << events << "\n"
            << "notes: " << notes.size() << "\n";
  std::cout << "tempo map:";
  if (tempos.empty()) std::cout << " (none, default 120 bpm)";
  for (const auto& t : tempos) std::cout << " " << t.tick << ":" << std::fixed << std::setprecision(2) << 60e6 / t.us_per_quarter << "bpm";
  std::cout << "\n" << std::fixed << std::setprecision(3) << "duration: " << seconds << " s\n";
  std::cout << "summary: " << notes.size() << " notes, " << std::setprecision(1) << seconds << " s\n";
  if (!notes.empty()) {
    std::cout << "first notes:\n  " << std::left << std::setw(10) << "onset" << std::setw(10) << "duration" << std::setw(7) << "pitch" << std::setw(6)
              << "name" << "freq_hz\n";
    for (std::size_t i = 0; i < std::min<std::size_t>(16, notes.size()); ++i) {
      const auto& n = notes[i];
      std::cout << "  " << std::setw(10) << n.onset_tick << std::setw(10) << n.duration_tick << std::setw(7) << int{n.pitch} << std::setw(6)
                << mf::roll::pitch_to_name(n.pitch) << std::setprecision(3) << mf::roll::pitch_to_frequency(n.pitch) << "\n";
    }
    std::cout << std::right;
  }
  if (show_tokens && !notes.empty()) std::cout << "tokens:\n" << mf::roll::tokens_to_text(mf::roll::to_token_sequence(notes, file.division));
  return 0;
}

mf::service::GenerationService* g_service = nullptr;

void on_signal(int) {
  if (g_service != nullptr) g_service->stop();
}

int cmd_serve(mf::service::ServiceConfig cfg) {
  cfg.checkpoint_path = model_path_override(cfg.checkpoint_path);
  if (cfg.checkpoint_path.empty()) {
    std::cerr << "error: --model or MELODYFORGE_MODEL is required\n";
    return kExitBadInput;
  }
  mf::service::GenerationService service(cfg);
  service.load_model_async();
  g_service = &service;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cout << "serving on http://" << cfg.host << ":" << cfg.port << " (model " << cfg.checkpoint_path << ")" << std::endl;
  service.run();
  g_service = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"melodyforge: train a seq2seq melody model on MIDI files and generate new pieces"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train a model on a directory of MIDI files");
  train->add_option("--data", ta.data, "directory containing .mid files")->required();
  train->add_option("--out", ta.out, "checkpoint to write")->required();
  train->add_option("--metrics", ta.metrics, "metrics CSV (default: <out>.metrics.csv)");
  train->add_option("--epochs", ta.epochs, "maximum epochs")->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--window", ta.window, "window length in tokens")->capture_default_str()->check(CLI::Range(2, 100000));
  train->add_option("--stride", ta.stride, "window stride")->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--hidden", ta.hidden, "encoder hidden units per direction")->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--batch", ta.batch, "windows per optimizer step")->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--lr", ta.lr, "Adam learning rate")->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--seed", ta.seed, "rng seed")->capture_default_str();
  train->add_option("--stop-acc", ta.stop_acc, "stop once epoch accuracy reaches this")->capture_default_str()->check(CLI::Range(0.0, 1.0));

  GenerateArgs ga;
  auto* generate = app.add_subcommand("generate", "generate a MIDI file from a trained checkpoint");
  generate->add_option("--model", ga.model, "checkpoint (MELODYFORGE_MODEL overrides)");
  generate->add_option("--out", ga.out, "output .mid")->required();
  generate->add_option("--seed-notes", ga.seed_notes, "seed notes, e.g. \"A4,C5\" (default: one random note)");
  generate->add_option("--seconds", ga.seconds, "target length")->capture_default_str()->check(CLI::PositiveNumber);
  generate->add_option("--temperature", ga.temperature, "sampling temperature, 0 = greedy")->capture_default_str()->check(CLI::NonNegativeNumber);
  generate->add_option("--tempo", ga.tempo, "output tempo in BPM")->capture_default_str()->check(CLI::PositiveNumber);
  generate->add_option("--rng-seed", ga.rng_seed, "rng seed (default: random)");
  generate->add_option("--tokens", ga.tokens_out, "also write the token sequence as text");

  std::string inspect_path;
  bool inspect_tokens = false;
  auto* inspect = app.add_subcommand("inspect", "print a summary of a MIDI file");
  inspect->add_option("file", inspect_path, "MIDI file")->required();
  inspect->add_flag("--tokens", inspect_tokens, "also print the token grid");

  mf::service::ServiceConfig sc;
  auto* serve = app.add_subcommand("serve", "run the HTTP generation service");
  serve->add_option("--model", sc.checkpoint_path, "checkpoint (MELODYFORGE_MODEL overrides)");
  serve->add_option("--host", sc.host, "bind address")->capture_default_str();
  serve->add_option("--port", sc.port, "port")->capture_default_str();
  serve->add_option("--max-concurrent", sc.max_concurrent, "concurrent generations")->capture_default_str()->check(CLI::PositiveNumber);
  serve->add_option("--max-seconds", sc.max_seconds, "largest accepted target length")->capture_default_str()->check(CLI::PositiveNumber);
  serve->add_option("--static", sc.static_dir, "directory of studio UI assets served at /");

  CLI11_PARSE(app, argc, argv);
  ga.rng_seed_set = generate->count("--rng-seed") > 0;

  try {
    if (*train) return cmd_train(ta);
    if (*generate) {
      if (model_path_override(ga.model).empty()) {
        std::cerr << "error: --model or MELODYFORGE_MODEL is required\n";
        return kExitBadInput;
      }
      return cmd_generate(ga);
    }
    if (*inspect) return cmd_inspect(inspect_path, inspect_tokens);
    if (*serve) return cmd_serve(sc);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
