#include "melodyforge/trainer.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <sstream>

#include "melodyforge/error.hpp"
#include "melodyforge/rng.hpp"

namespace melodyforge::train {

namespace {

constexpr char kMagic[4] = {'M', 'F', 'C', 'K'};
constexpr std::uint64_t kShuffleStream = 0x9E3779B97F4A7C15ull;

void config_check(bool ok, const std::string& what) {
  if (!ok) throw Error(Errc::InvalidConfig, what);
}

void put_u16le(smf::Bytes& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32le(smf::Bytes& out, std::uint32_t v) {
  for (int shift = 0; shift < 32; shift += 8) out.push_back(static_cast<std::uint8_t>(v >> shift & 0xFF));
}

std::uint32_t get_u32le(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | static_cast<std::uint32_t>(b[at + 1]) << 8 | static_cast<std::uint32_t>(b[at + 2]) << 16 |
         static_cast<std::uint32_t>(b[at + 3]) << 24;
}

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

std::string param_order(const nn::ModelParams& p) {
  std::string names;
  p.for_each([&](std::string_view name, const nn::Matrix&) {
    if (!names.empty()) names += ',';
    names += name;
  });
  return names;
}

int meta_int(const std::map<std::string, std::string>& meta, const std::string& key) {
  auto it = meta.find(key);
  if (it == meta.end()) throw Error(Errc::DimensionMismatch, "checkpoint metadata lacks '" + key + "'");
  try {
    std::size_t used = 0;
    long v = std::stol(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return static_cast<int>(v);
  } catch (const std::logic_error&) {
    throw Error(Errc::DimensionMismatch, "checkpoint metadata '" + key + "' is not an integer");
  }
}

double meta_double(const std::map<std::string, std::string>& meta, const std::string& key, double fallback) {
  auto it = meta.find(key);
  if (it == meta.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (const std::logic_error&) {
    return fallback;
  }
}

}  // namespace

void TrainingConfig::validate() const {
  config_check(dims.vocab > 0 && dims.hidden > 0, "model dimensions must be positive");
  config_check(window_len >= 2, "window_len must be at least 2");
  config_check(stride >= 1, "stride must be at least 1");
  config_check(epochs_max >= 1, "epochs_max must be at least 1");
  config_check(accuracy_stop >= 0.0 && accuracy_stop <= 1.0, "accuracy_stop must lie in [0, 1]");
  config_check(learning_rate > 0.0, "learning_rate must be positive");
  config_check(batch_size >= 1, "batch_size must be at least 1");
  config_check(clip_norm > 0.0, "clip_norm must be positive");
}

std::vector<Window> make_windows(std::span<const int> tokens, int window_len, int stride) {
  if (window_len < 1 || stride < 1) throw Error(Errc::InvalidConfig, "window_len and stride must be positive");
  const auto w = static_cast<std::size_t>(window_len);
  if (tokens.size() < w + 1)
    throw Error(Errc::SequenceTooShort,
                "sequence of " + std::to_string(tokens.size()) + " tokens cannot fill a window of " + std::to_string(window_len) + " plus one");
  std::vector<Window> windows;
  for (std::size_t k = 0; k + w + 1 <= tokens.size(); k += static_cast<std::size_t>(stride)) {
    windows.push_back({{tokens.begin() + static_cast<std::ptrdiff_t>(k), tokens.begin() + static_cast<std::ptrdiff_t>(k + w)},
                       {tokens.begin() + static_cast<std::ptrdiff_t>(k + 1), tokens.begin() + static_cast<std::ptrdiff_t>(k + w + 1)}});
  }
  return windows;
}

double token_accuracy(std::span<const nn::Vector> distributions, std::span<const int> targets) {
  if (distributions.size() != targets.size())
    throw Error(Errc::LengthMismatch, std::to_string(distributions.size()) + " distributions vs " + std::to_string(targets.size()) + " targets");
  if (targets.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t t = 0; t < targets.size(); ++t) hits += nn::argmax(distributions[t]) == targets[t] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(targets.size());
}

void quantize_to_storage_precision(nn::ModelParams& params) {
  params.for_each([](std::string_view, nn::Matrix& m) { m = m.cast<float>().cast<double>(); });
}

smf::Bytes save_checkpoint(const ModelCheckpoint& ck) {
  ck.params.check_shapes();
  const auto& dims = ck.params.dims;
  std::ostringstream meta;
  meta << "format=melodyforge-checkpoint\n"
       << "vocab=" << dims.vocab << "\n"
       << "hidden=" << dims.hidden << "\n"
       << "dec_hidden=" << dims.dec_hidden() << "\n"
       << "steps_per_quarter=" << ck.meta.steps_per_quarter << "\n"
       << "gate_order=i,f,o,g\n"
       << "param_order=" << param_order(ck.params) << "\n"
       << "param_count=" << ck.params.parameter_count() << "\n"
       << "epochs_run=" << ck.meta.epochs_run << "\n"
       << "final_loss=" << format_double(ck.meta.final_loss) << "\n"
       << "final_accuracy=" << format_double(ck.meta.final_accuracy) << "\n";
  const std::string text = meta.str();

  smf::Bytes out(kMagic, kMagic + 4);
  put_u16le(out, kCheckpointVersion);
  put_u32le(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + static_cast<std::size_t>(ck.params.parameter_count()) * 4);
  ck.params.for_each([&](std::string_view, const nn::Matrix& m) {
    for (Eigen::Index k = 0; k < m.size(); ++k) put_u32le(out, std::bit_cast<std::uint32_t>(static_cast<float>(m.data()[k])));
  });
  return out;
}

ModelCheckpoint load_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin())) throw Error(Errc::BadMagic, "not a melodyforge checkpoint");
  if (bytes.size() < 10) throw Error(Errc::TruncatedFile, "checkpoint header incomplete");
  const std::uint16_t version = static_cast<std::uint16_t>(bytes[4] | bytes[5] << 8);
  if (version != kCheckpointVersion) throw Error(Errc::VersionUnsupported, "checkpoint version " + std::to_string(version));
  const std::uint32_t meta_len = get_u32le(bytes, 6);
  if (bytes.size() - 10 < meta_len) throw Error(Errc::TruncatedFile, "metadata block runs past end of file");

  std::map<std::string, std::string> meta;
  std::istringstream lines(std::string(bytes.begin() + 10, bytes.begin() + 10 + meta_len));
  for (std::string line; std::getline(lines, line);) {
    auto eq = line.find('=');
    if (eq != std::string::npos) meta[line.substr(0, eq)] = line.substr(eq + 1);
  }

  nn::ModelDims dims{meta_int(meta, "vocab"), meta_int(meta, "hidden")};
  if (dims.vocab <= 0 || dims.hidden <= 0 || dims.hidden > 1 << 14 || dims.vocab > 1 << 16)
    throw Error(Errc::DimensionMismatch, "implausible dimensions");
  if (meta_int(meta, "dec_hidden") != dims.dec_hidden()) throw Error(Errc::DimensionMismatch, "dec_hidden must be twice hidden");

  ModelCheckpoint ck;
  ck.params = nn::ModelParams::zeros(dims);
  if (meta.count("param_count") && meta_int(meta, "param_count") != ck.params.parameter_count())
    throw Error(Errc::DimensionMismatch, "param_count disagrees with declared dimensions");
  if (meta.count("param_order") && meta.at("param_order") != param_order(ck.params))
    throw Error(Errc::DimensionMismatch, "unknown parameter layout");

  const std::size_t payload_at = 10 + meta_len;
  const std::size_t expected = static_cast<std::size_t>(ck.params.parameter_count()) * 4;
  const std::size_t available = bytes.size() - payload_at;
  if (available < expected)
    throw Error(Errc::TruncatedFile, "payload holds " + std::to_string(available) + " bytes, dimensions require " + std::to_string(expected));
  if (available > expected) throw Error(Errc::DimensionMismatch, "payload larger than declared dimensions");

  std::size_t at = payload_at;
  ck.params.for_each([&](std::string_view, nn::Matrix& m) {
    for (Eigen::Index k = 0; k < m.size(); ++k, at += 4) m.data()[k] = std::bit_cast<float>(get_u32le(bytes, at));
  });
  ck.meta.steps_per_quarter = meta.count("steps_per_quarter") ? meta_int(meta, "steps_per_quarter") : roll::kDefaultStepsPerQuarter;
  ck.meta.epochs_run = meta.count("epochs_run") ? meta_int(meta, "epochs_run") : 0;
  ck.meta.final_loss = meta_double(meta, "final_loss", 0.0);
  ck.meta.final_accuracy = meta_double(meta, "final_accuracy", 0.0);
  return ck;
}

double clip_gradients(nn::ModelParams& grads, double max_norm) {
  double sq = 0.0;
  grads.for_each([&](std::string_view, const nn::Matrix& m) { sq += m.squaredNorm(); });
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    grads.for_each([&](std::string_view, nn::Matrix& m) { m *= scale; });
  }
  return norm;
}

Adam::Adam(const nn::ModelParams& like, double learning_rate, double beta1, double beta2, double eps)
    : m_(nn::ModelParams::zeros(like.dims)), v_(nn::ModelParams::zeros(like.dims)), lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(nn::ModelParams& params, const nn::ModelParams& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  std::vector<nn::Matrix*> p, m, v;
  std::vector<const nn::Matrix*> g;
  params.for_each([&](std::string_view, nn::Matrix& x) { p.push_back(&x); });
  m_.for_each([&](std::string_view, nn::Matrix& x) { m.push_back(&x); });
  v_.for_each([&](std::string_view, nn::Matrix& x) { v.push_back(&x); });
  grads.for_each([&](std::string_view, const nn::Matrix& x) { g.push_back(&x); });
  for (std::size_t k = 0; k < p.size(); ++k) {
    auto ga = g[k]->array();
    m[k]->array() = beta1_ * m[k]->array() + (1.0 - beta1_) * ga;
    v[k]->array() = beta2_ * v[k]->array() + (1.0 - beta2_) * ga.square();
    p[k]->array() -= lr_ * (m[k]->array() / c1) / ((v[k]->array() / c2).sqrt() + eps_);
  }
}

TrainingResult train(std::span<const roll::TokenSequence> corpus, const TrainingConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (corpus.empty()) throw Error(Errc::EmptyCorpus, "no training sequences");

  std::vector<Window> windows;
  for (const auto& seq : corpus) {
    for (int t : seq.tokens)
      if (t < 0 || t >= config.dims.vocab) throw Error(Errc::TokenOutOfRange, "corpus token " + std::to_string(t) + " outside vocabulary");
    auto w = make_windows(seq.tokens, config.window_len, config.stride);
    windows.insert(windows.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
  }

  TrainingResult result;
  nn::ModelParams params = nn::ModelParams::initialize(config.dims, config.rng_seed);
  nn::ModelParams grads = nn::ModelParams::zeros(config.dims);
  Adam adam(params, config.learning_rate);
  Rng shuffle_rng(config.rng_seed ^ kShuffleStream);
  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 1; epoch <= config.epochs_max; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    double loss_sum = 0.0;
    std::size_t hits = 0, predictions = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(config.batch_size));
      grads.set_zero();
      for (std::size_t k = b; k < end; ++k) {
        const Window& w = windows[order[k]];
        nn::SequenceLoss out = nn::loss_and_gradients(w.input, w.target, params, grads);
        loss_sum += out.loss;
        for (std::size_t t = 0; t < w.target.size(); ++t) hits += nn::argmax(out.distributions[t]) == w.target[t] ? 1 : 0;
        predictions += w.target.size();
      }
      const double scale = 1.0 / static_cast<double>(end - b);
      grads.for_each([&](std::string_view, nn::Matrix& m) { m *= scale; });
      if (!grads.all_finite()) continue;  // skip the update rather than poison the parameters
      clip_gradients(grads, config.clip_norm);
      adam.step(params, grads);
      if (!params.all_finite()) throw std::runtime_error("non-finite parameters after optimizer step");
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.loss = loss_sum / static_cast<double>(windows.size());
    m.accuracy = static_cast<double>(hits) / static_cast<double>(predictions);
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.metrics.push_back(m);
    if (on_epoch) on_epoch(m);
    if (config.early_stopping && m.accuracy >= config.accuracy_stop) break;
  }

  quantize_to_storage_precision(params);
  result.checkpoint.params = std::move(params);
  result.checkpoint.meta.epochs_run = static_cast<int>(result.metrics.size());
  result.checkpoint.meta.final_loss = result.metrics.back().loss;
  result.checkpoint.meta.final_accuracy = result.metrics.back().accuracy;
  result.checkpoint.meta.steps_per_quarter = corpus.front().steps_per_quarter;
  return result;
}

std::string metrics_csv(std::span<const EpochMetrics> metrics) {
  std::ostringstream out;
  out << "epoch,loss,accuracy,seconds\n";
  out.precision(10);
  for (const auto& m : metrics) out << m.epoch << ',' << m.loss << ',' << m.accuracy << ',' << m.seconds << '\n';
  return out.str();
}

CorpusLoad load_corpus(std::span<const std::string> paths, int steps_per_quarter) {
  CorpusLoad load;
  for (const auto& path : paths) {
    try {
      auto file = smf::parse_smf(smf::read_file(path));
      auto notes = smf::extract_notes(file);
      if (notes.empty()) {
        load.failures.push_back(path + ": no notes");
        continue;
      }
      load.sequences.push_back(roll::to_token_sequence(notes, file.division, steps_per_quarter));
      load.loaded.push_back(path);
    } catch (const std::exception& e) {
      load.failures.push_back(path + ": " + e.what());
    }
  }
  return load;
}

std::vector<std::string> list_midi_files(const std::string& dir) {
  namespace fs = std::filesystem;
  std::vector<std::string> files;
  if (!fs::is_directory(dir)) return files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".mid" || ext == ".midi") files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace melodyforge::train
