#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "melodyforge/error.hpp"
#include "melodyforge/generator.hpp"
#include "melodyforge/trainer.hpp"

using namespace melodyforge;
using namespace melodyforge::train;

namespace {

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error raised");
  return Errc::InvariantViolation;
}

ModelCheckpoint sample_checkpoint(nn::ModelDims dims = {7, 3}) {
  ModelCheckpoint ck{nn::ModelParams::initialize(dims, 42), {12, 0.25, 0.875, 4}};
  quantize_to_storage_precision(ck.params);
  return ck;
}

std::uint32_t u32le(const smf::Bytes& b, std::size_t at) {
  return b[at] | b[at + 1] << 8 | b[at + 2] << 16 | static_cast<std::uint32_t>(b[at + 3]) << 24;
}

roll::TokenSequence cycle(int length, std::vector<int> pattern) {
  roll::TokenSequence seq;
  for (int i = 0; i < length; ++i) seq.tokens.push_back(pattern[static_cast<std::size_t>(i) % pattern.size()]);
  return seq;
}

}  // namespace

TEST_CASE("windows slide by stride and shift targets by one") {
  std::vector<int> t{0, 1, 2, 3, 4, 5, 6};
  auto w = make_windows(t, 3, 2);
  REQUIRE(w.size() == 2);
  CHECK(w[0] == Window{{0, 1, 2}, {1, 2, 3}});
  CHECK(w[1] == Window{{2, 3, 4}, {3, 4, 5}});
  CHECK(make_windows(t, 6, 1).size() == 1);
  CHECK(code_of([&] { make_windows(t, 7, 1); }) == Errc::SequenceTooShort);
}

TEST_CASE("property: every window target is its input shifted") {
  std::vector<int> t(200);
  for (int i = 0; i < 200; ++i) t[static_cast<std::size_t>(i)] = (i * 37) % 130;
  for (int len : {2, 5, 64}) {
    for (int stride : {1, 3, 32}) {
      auto ws = make_windows(t, len, stride);
      CHECK(ws.size() == static_cast<std::size_t>((200 - len - 1) / stride + 1));
      for (const auto& w : ws) {
        CHECK(w.input.size() == static_cast<std::size_t>(len));
        CHECK(std::equal(w.input.begin() + 1, w.input.end(), w.target.begin()));
      }
    }
  }
}

TEST_CASE("token accuracy") {
  std::vector<nn::Vector> d(2, nn::Vector::Zero(3));
  d[0][2] = 1.0;
  d[1][0] = 1.0;
  std::vector<int> t{2, 1};
  CHECK(token_accuracy(d, t) == 0.5);
  std::vector<int> short_t{2};
  CHECK(code_of([&] { token_accuracy(d, short_t); }) == Errc::LengthMismatch);
}

TEST_CASE("config validation") {
  TrainingConfig c;
  CHECK_NOTHROW(c.validate());
  c.accuracy_stop = 0.0;
  CHECK_NOTHROW(c.validate());
  c.accuracy_stop = 1.5;
  CHECK(code_of([&] { c.validate(); }) == Errc::InvalidConfig);
  c = {};
  c.window_len = 1;
  CHECK(code_of([&] { c.validate(); }) == Errc::InvalidConfig);
  c = {};
  c.learning_rate = 0;
  CHECK(code_of([&] { c.validate(); }) == Errc::InvalidConfig);
}

TEST_CASE("adam first steps match the textbook update") {
  nn::ModelDims dims{2, 1};
  auto params = nn::ModelParams::zeros(dims);
  auto grads = nn::ModelParams::zeros(dims);
  grads.b_out(0, 0) = 0.5;
  grads.b_out(1, 0) = -2e-3;
  Adam adam(params, 0.01);
  adam.step(params, grads);
  // bias-corrected first step is lr * g / (|g| + eps)
  CHECK(params.b_out(0, 0) == doctest::Approx(-0.01 * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));
  CHECK(params.b_out(1, 0) == doctest::Approx(0.01 * 2e-3 / (2e-3 + 1e-8)).epsilon(1e-12));
  CHECK(params.W_a(0, 0) == 0.0);

  // second step with a different gradient, against a scalar loop
  double m = 0.1 * 0.5, v = 0.001 * 0.25, theta = params.b_out(0, 0);
  grads.b_out(0, 0) = 0.1;
  adam.step(params, grads);
  m = 0.9 * m + 0.1 * 0.1;
  v = 0.999 * v + 0.001 * 0.01;
  theta -= 0.01 * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
  CHECK(params.b_out(0, 0) == doctest::Approx(theta).epsilon(1e-12));
  CHECK(adam.steps() == 2);
}

TEST_CASE("global norm clipping") {
  auto g = nn::ModelParams::zeros({2, 1});
  g.b_out(0, 0) = 3.0;
  g.W_a(0, 0) = 4.0;
  CHECK(clip_gradients(g, 10.0) == doctest::Approx(5.0));
  CHECK(g.b_out(0, 0) == 3.0);
  CHECK(clip_gradients(g, 1.0) == doctest::Approx(5.0));
  CHECK(g.b_out(0, 0) == doctest::Approx(0.6));
  CHECK(g.W_a(0, 0) == doctest::Approx(0.8));
}

TEST_CASE("checkpoint layout") {
  auto ck = sample_checkpoint();
  auto bytes = save_checkpoint(ck);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "MFCK");
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
  const std::uint32_t meta_len = u32le(bytes, 6);
  std::string meta(bytes.begin() + 10, bytes.begin() + 10 + meta_len);
  CHECK(meta.find("vocab=7\n") != std::string::npos);
  CHECK(meta.find("hidden=3\n") != std::string::npos);
  CHECK(meta.find("dec_hidden=6\n") != std::string::npos);
  CHECK(meta.find("gate_order=i,f,o,g\n") != std::string::npos);
  const std::size_t payload = 10 + meta_len;
  CHECK(bytes.size() == payload + 4 * static_cast<std::size_t>(ck.params.parameter_count()));
  CHECK(std::bit_cast<float>(u32le(bytes, payload)) == static_cast<float>(ck.params.enc_fwd.W(0, 0)));
  CHECK(std::bit_cast<float>(u32le(bytes, payload + 4)) == static_cast<float>(ck.params.enc_fwd.W(0, 1)));
  CHECK(std::bit_cast<float>(u32le(bytes, bytes.size() - 4)) == static_cast<float>(ck.params.b_out(6, 0)));
}

TEST_CASE("checkpoint round trip is bit exact") {
  for (int hidden : {1, 3, 8}) {
    auto ck = sample_checkpoint({11, hidden});
    auto back = load_checkpoint(save_checkpoint(ck));
    CHECK(back.params.dims == ck.params.dims);
    CHECK(back.params.flatten() == ck.params.flatten());
    CHECK(nn::fingerprint(back.params) == nn::fingerprint(ck.params));
    CHECK(back.meta.epochs_run == 12);
    CHECK(back.meta.final_loss == 0.25);
    CHECK(back.meta.final_accuracy == 0.875);
    CHECK(save_checkpoint(back) == save_checkpoint(ck));
  }
}

TEST_CASE("checkpoint errors") {
  auto bytes = save_checkpoint(sample_checkpoint());
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK(code_of([&] { load_checkpoint(bad_magic); }) == Errc::BadMagic);
  auto v2 = bytes;
  v2[4] = 2;
  CHECK(code_of([&] { load_checkpoint(v2); }) == Errc::VersionUnsupported);
  smf::Bytes cut(bytes.begin(), bytes.end() - 4);
  CHECK(code_of([&] { load_checkpoint(cut); }) == Errc::TruncatedFile);
  smf::Bytes header_only(bytes.begin(), bytes.begin() + 8);
  CHECK(code_of([&] { load_checkpoint(header_only); }) == Errc::TruncatedFile);
  auto extra = bytes;
  extra.insert(extra.end(), {0, 0, 0, 0});
  CHECK(code_of([&] { load_checkpoint(extra); }) == Errc::DimensionMismatch);

  // metadata claims a different width than the payload holds
  std::string text(bytes.begin() + 10, bytes.begin() + 10 + u32le(bytes, 6));
  auto pos = text.find("hidden=3");
  text.replace(pos, 8, "hidden=4");
  smf::Bytes edited(bytes.begin(), bytes.begin() + 10);
  edited.insert(edited.end(), text.begin(), text.end());
  edited.insert(edited.end(), bytes.begin() + 10 + static_cast<std::ptrdiff_t>(u32le(bytes, 6)), bytes.end());
  CHECK(code_of([&] { load_checkpoint(edited); }) == Errc::DimensionMismatch);
}

TEST_CASE("training learns a short cycle and is deterministic") {
  std::vector<roll::TokenSequence> corpus{cycle(60, {1, 2, 3, 4})};
  TrainingConfig c;
  c.dims = {6, 6};
  c.window_len = 8;
  c.stride = 4;
  c.batch_size = 4;
  c.learning_rate = 0.02;
  c.epochs_max = 150;
  c.accuracy_stop = 1.0;
  c.rng_seed = 3;
  std::vector<EpochMetrics> seen;
  auto r = train::train(corpus, c, [&](const EpochMetrics& m) { seen.push_back(m); });
  CHECK(seen.size() == r.metrics.size());
  CHECK(r.metrics.back().accuracy == 1.0);
  CHECK(r.metrics.back().loss < r.metrics.front().loss);
  CHECK(r.checkpoint.meta.epochs_run == static_cast<int>(r.metrics.size()));
  CHECK(r.checkpoint.params.all_finite());

  auto again = train::train(corpus, c);
  CHECK(again.checkpoint.params.flatten() == r.checkpoint.params.flatten());
  REQUIRE(again.metrics.size() == r.metrics.size());
  for (std::size_t i = 0; i < r.metrics.size(); ++i) CHECK(again.metrics[i].loss == r.metrics[i].loss);

  // stored precision: save/load is the identity on the trained parameters
  CHECK(load_checkpoint(save_checkpoint(r.checkpoint)).params.flatten() == r.checkpoint.params.flatten());
}

TEST_CASE("early stopping") {
  std::vector<roll::TokenSequence> corpus{cycle(30, {1, 2})};
  TrainingConfig c;
  c.dims = {4, 2};
  c.window_len = 4;
  c.stride = 4;
  c.epochs_max = 5;
  c.accuracy_stop = 0.0;
  CHECK(train::train(corpus, c).metrics.size() == 1);
  c.early_stopping = false;
  CHECK(train::train(corpus, c).metrics.size() == 5);
}

TEST_CASE("training input errors") {
  TrainingConfig c;
  c.dims = {4, 2};
  c.window_len = 4;
  std::vector<roll::TokenSequence> none;
  CHECK(code_of([&] { train::train(none, c); }) == Errc::EmptyCorpus);
  std::vector<roll::TokenSequence> out_of_vocab{cycle(10, {1, 9})};
  CHECK(code_of([&] { train::train(out_of_vocab, c); }) == Errc::TokenOutOfRange);
  std::vector<roll::TokenSequence> too_short{cycle(4, {1, 2})};
  CHECK(code_of([&] { train::train(too_short, c); }) == Errc::SequenceTooShort);
}

TEST_CASE("metrics csv") {
  std::vector<EpochMetrics> m{{1, 2.5, 0.25, 0.5}, {2, 1.25, 0.5, 0.5}};
  CHECK(metrics_csv(m) == "epoch,loss,accuracy,seconds\n1,2.5,0.25,0.5\n2,1.25,0.5,0.5\n");
}

TEST_CASE("corpus loading skips bad files") {
  auto files = list_midi_files(MF_CORPUS_DIR);
  REQUIRE(files.size() >= 20);
  CHECK(std::is_sorted(files.begin(), files.end()));
  auto tmp = std::filesystem::temp_directory_path() / "mf_bad.mid";
  std::ofstream(tmp) << "not a midi file";
  std::vector<std::string> paths{files[0], tmp.string(), files[1]};
  auto load = load_corpus(paths);
  CHECK(load.sequences.size() == 2);
  REQUIRE(load.failures.size() == 1);
  CHECK(load.failures[0].find("BadMagic") != std::string::npos);
  for (const auto& s : load.sequences) CHECK(s.tokens.back() == roll::kEnd);
  std::filesystem::remove(tmp);
  CHECK(list_midi_files("/nonexistent/dir").empty());
}

TEST_CASE("window examples") {
  std::vector<int> abcde{0, 1, 2, 3, 4};
  auto w = make_windows(abcde, 2, 2);
  REQUIRE(w.size() == 2);
  CHECK(w[0] == Window{{0, 1}, {1, 2}});
  CHECK(w[1] == Window{{2, 3}, {3, 4}});
  std::vector<int> five(5, 1);
  CHECK(code_of([&] { make_windows(std::span<const int>(five.data(), 2), 2, 1); }) == Errc::SequenceTooShort);
  for (int L = 3; L < 40; ++L) {
    std::vector<int> t(static_cast<std::size_t>(L), 0);
    CHECK(make_windows(t, 2, 1).size() == static_cast<std::size_t>(L - 2));
  }
}

TEST_CASE("token accuracy examples") {
  auto hot = [](int k) {
    nn::Vector v = nn::Vector::Zero(4);
    v[k] = 1.0;
    return v;
  };
  std::vector<nn::Vector> d{hot(0), hot(1), hot(2), hot(3)};
  CHECK(token_accuracy(d, std::vector<int>{0, 1, 2, 3}) == 1.0);
  CHECK(token_accuracy(d, std::vector<int>{1, 2, 3, 0}) == 0.0);
  CHECK(token_accuracy(d, std::vector<int>{0, 1, 2, 0}) == 0.75);
  // ties resolve to the lowest index
  std::vector<nn::Vector> tie{nn::Vector::Constant(4, 0.25)};
  CHECK(token_accuracy(tie, std::vector<int>{0}) == 1.0);
}

TEST_CASE("generation from a reloaded checkpoint is bitwise identical") {
  std::vector<roll::TokenSequence> corpus{cycle(40, {60, 62, 64, 128})};
  TrainingConfig c;
  c.dims = {130, 4};
  c.window_len = 8;
  c.stride = 8;
  c.epochs_max = 3;
  c.early_stopping = false;
  auto r = train::train(corpus, c);
  auto back = load_checkpoint(save_checkpoint(r.checkpoint));
  gen::GenerationRequest req;
  req.seed_tokens = {62};
  req.target_seconds = 6;
  req.rng_seed = 19;
  CHECK(gen::generate_to_midi(req, back.params) == gen::generate_to_midi(req, r.checkpoint.params));
}

TEST_CASE("overfit fixture: full run ends with perfect accuracy and small loss") {
  roll::TokenSequence seq;
  for (int i = 0; i < 200; ++i) seq.tokens.push_back(std::array{60, 64, 67, 72}[static_cast<std::size_t>(i % 4)]);
  std::vector<roll::TokenSequence> corpus{seq};
  TrainingConfig c;  // default dims and hyperparameters
  c.early_stopping = false;
  auto r = train::train(corpus, c);
  REQUIRE(r.metrics.size() == 200);
  const auto& last = r.metrics.back();
  CHECK(last.accuracy == 1.0);
  CHECK(last.loss < 0.1);
  for (const auto& m : r.metrics) {
    CHECK(m.loss >= 0.0);
    CHECK(m.accuracy >= 0.0);
    CHECK(m.accuracy <= 1.0);
  }
}
