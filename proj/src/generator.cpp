#include "melodyforge/generator.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "melodyforge/error.hpp"

namespace melodyforge::gen {

void GenerationRequest::validate(int vocab) const {
  if (seed_tokens.empty()) throw Error(Errc::InvalidSeedToken, "seed is empty");
  for (int t : seed_tokens) {
    if (t < 0 || t >= vocab || t == roll::kEnd) throw Error(Errc::InvalidSeedToken, "seed token " + std::to_string(t));
  }
  if (!(target_seconds > 0.0) || !std::isfinite(target_seconds)) throw Error(Errc::InvalidRequest, "target_seconds must be positive");
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) throw Error(Errc::InvalidRequest, "temperature must be >= 0");
  if (!(tempo_bpm > 0.0) || !std::isfinite(tempo_bpm)) throw Error(Errc::InvalidRequest, "tempo must be positive");
  if (steps_per_quarter <= 0) throw Error(Errc::InvalidRequest, "grid must be positive");
}

int sample_token(std::span<const double> distribution, double temperature, Rng& rng) {
  if (distribution.empty()) throw Error(Errc::DegenerateDistribution, "empty distribution");
  if (temperature < 0.0) throw Error(Errc::InvalidRequest, "negative temperature");
  double total = 0.0;
  int best = -1;
  for (std::size_t i = 0; i < distribution.size(); ++i) {
    const double p = distribution[i];
    if (!(p >= 0.0) || !std::isfinite(p)) throw Error(Errc::DegenerateDistribution, "invalid probability at " + std::to_string(i));
    total += p;
    if (p > 0.0 && (best < 0 || p > distribution[static_cast<std::size_t>(best)])) best = static_cast<int>(i);
  }
  if (!(total > 0.0)) throw Error(Errc::DegenerateDistribution, "all probabilities are zero");
  if (temperature == 0.0) return best;

  // w_i = exp((log p_i - log p_max) / T), renormalized by the cumulative draw.
  const double log_max = std::log(distribution[static_cast<std::size_t>(best)]);
  std::vector<double> weights(distribution.size(), 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < distribution.size(); ++i) {
    if (distribution[i] > 0.0) weights[i] = std::exp((std::log(distribution[i]) - log_max) / temperature);
    sum += weights[i];
  }
  const double u = rng.uniform() * sum;
  double acc = 0.0;
  int last_positive = best;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    acc += weights[i];
    last_positive = static_cast<int>(i);
    if (u < acc) return static_cast<int>(i);
  }
  return last_positive;  // u landed on the rounding tail
}

std::size_t steps_for_duration(double seconds, double tempo_bpm, int steps_per_quarter) {
  const double steps = seconds / roll::seconds_per_step(tempo_bpm, steps_per_quarter);
  return static_cast<std::size_t>(std::ceil(steps - 1e-9));
}

int random_seed_note(std::uint64_t rng_seed) {
  Rng rng(rng_seed ^ 0xD1B54A32D192ED03ull);
  return 48 + static_cast<int>(rng.below(36));
}

roll::TokenSequence generate(const GenerationRequest& request, const nn::ModelParams& params) {
  request.validate(params.dims.vocab);
  const std::size_t total = steps_for_duration(request.target_seconds, request.tempo_bpm, request.steps_per_quarter);

  roll::TokenSequence out{request.seed_tokens, request.steps_per_quarter};
  out.tokens.reserve(std::max(total, out.tokens.size()) + 1);
  Rng rng(request.rng_seed);
  const nn::EncoderStates enc = nn::encode_bidirectional(request.seed_tokens, params);
  nn::DecoderState state = nn::initial_decoder_state(enc);
  int prev = request.seed_tokens.back();
  while (out.tokens.size() < total) {
    nn::DecoderOutput step = nn::decoder_step(prev, state, enc, params);
    if (roll::kEnd < step.distribution.size()) step.distribution[roll::kEnd] = 0.0;
    const double mass = step.distribution.sum();
    if (!(mass > 0.0)) throw Error(Errc::DegenerateDistribution, "no probability mass left after masking END");
    step.distribution /= mass;
    prev = sample_token(std::span<const double>(step.distribution.data(), static_cast<std::size_t>(step.distribution.size())),
                        request.temperature, rng);
    out.tokens.push_back(prev);
    state = std::move(step.state);
  }
  out.tokens.push_back(roll::kEnd);
  return out;
}

smf::Bytes generate_to_midi(const GenerationRequest& request, const nn::ModelParams& params) {
  return smf::serialize_smf(roll::decode_tokens(generate(request, params), request.tempo_bpm, kOutputDivision));
}

}  // namespace melodyforge::gen
