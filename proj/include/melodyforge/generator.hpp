#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "melodyforge/model.hpp"
#include "melodyforge/pianoroll.hpp"
#include "melodyforge/rng.hpp"
#include "melodyforge/smf.hpp"

namespace melodyforge::gen {

inline constexpr double kDefaultSeconds = 120.0;
inline constexpr double kDefaultTemperature = 1.0;
inline constexpr std::uint16_t kOutputDivision = 480;

struct GenerationRequest {
  std::vector<int> seed_tokens;
  double target_seconds = kDefaultSeconds;
  double temperature = kDefaultTemperature;  // 0 selects greedy decoding
  double tempo_bpm = roll::kDefaultTempoBpm;
  std::uint64_t rng_seed = 0;
  int steps_per_quarter = roll::kDefaultStepsPerQuarter;

  /// Throws InvalidSeedToken / InvalidRequest.
  void validate(int vocab = roll::kVocabSize) const;
};

/// Temperature 0 returns the argmax (lowest index on ties); otherwise samples
/// from softmax(log p / temperature).
int sample_token(std::span<const double> distribution, double temperature, Rng& rng);

/// Grid steps needed to cover `seconds` at the given tempo.
std::size_t steps_for_duration(double seconds, double tempo_bpm, int steps_per_quarter);

/// A single seed pitch drawn uniformly from C3..B5 (MIDI 48..83).
int random_seed_note(std::uint64_t rng_seed);

/// Seed followed by sampled tokens until the grid covers target_seconds,
/// then END. END is masked out of every sampling step.
roll::TokenSequence generate(const GenerationRequest& request, const nn::ModelParams& params);

smf::Bytes generate_to_midi(const GenerationRequest& request, const nn::ModelParams& params);

}  // namespace melodyforge::gen
