#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "melodyforge/model.hpp"
#include "melodyforge/pianoroll.hpp"
#include "melodyforge/smf.hpp"

namespace melodyforge::train {

struct TrainingConfig {
  nn::ModelDims dims{};
  int window_len = 64;
  int stride = 32;
  int epochs_max = 200;
  double accuracy_stop = 0.93;
  bool early_stopping = true;
  double learning_rate = 1e-3;
  int batch_size = 32;  // windows per optimizer step
  double clip_norm = 5.0;
  std::uint64_t rng_seed = 0;

  /// Throws InvalidConfig.
  void validate() const;
};

struct EpochMetrics {
  int epoch = 0;  // 1-based
  double loss = 0.0;
  double accuracy = 0.0;
  double seconds = 0.0;
  bool operator==(const EpochMetrics&) const = default;
};

struct Window {
  std::vector<int> input;
  std::vector<int> target;
  bool operator==(const Window&) const = default;
};

std::vector<Window> make_windows(std::span<const int> tokens, int window_len, int stride);

/// Fraction of steps whose argmax equals the target.
double token_accuracy(std::span<const nn::Vector> distributions, std::span<const int> targets);

struct TrainingMetadata {
  int epochs_run = 0;
  double final_loss = 0.0;
  double final_accuracy = 0.0;
  int steps_per_quarter = roll::kDefaultStepsPerQuarter;
};

struct ModelCheckpoint {
  nn::ModelParams params;
  TrainingMetadata meta;
};

/// Rounds every parameter to float32, the precision checkpoints store.
void quantize_to_storage_precision(nn::ModelParams& params);

inline constexpr std::uint16_t kCheckpointVersion = 1;

smf::Bytes save_checkpoint(const ModelCheckpoint& checkpoint);
ModelCheckpoint load_checkpoint(std::span<const std::uint8_t> bytes);

/// Global-norm clipping; returns the norm before clipping.
double clip_gradients(nn::ModelParams& grads, double max_norm);

class Adam {
 public:
  explicit Adam(const nn::ModelParams& like, double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(nn::ModelParams& params, const nn::ModelParams& grads);
  long steps() const { return t_; }

 private:
  nn::ModelParams m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

struct TrainingResult {
  ModelCheckpoint checkpoint;
  std::vector<EpochMetrics> metrics;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Mini-batch Adam over windows shuffled each epoch. Stops at epochs_max or,
/// when early_stopping is set, after the first epoch whose accuracy reaches
/// accuracy_stop. Returned parameters are rounded to storage precision.
TrainingResult train(std::span<const roll::TokenSequence> corpus, const TrainingConfig& config, const EpochCallback& on_epoch = {});

std::string metrics_csv(std::span<const EpochMetrics> metrics);

/// Parses every file, logging and skipping the ones that fail. Files that
/// decode to no notes are skipped too.
struct CorpusLoad {
  std::vector<roll::TokenSequence> sequences;
  std::vector<std::string> loaded;
  std::vector<std::string> failures;  // "path: reason"
};
CorpusLoad load_corpus(std::span<const std::string> paths, int steps_per_quarter = roll::kDefaultStepsPerQuarter);

/// Sorted *.mid / *.midi files directly inside `dir`.
std::vector<std::string> list_midi_files(const std::string& dir);

}  // namespace melodyforge::train
