#pragma once

// Bi-directional LSTM encoder, Luong ("general") attention and an
// input-feeding LSTM decoder with a softmax over the token vocabulary.
//
// Shapes (V = vocab, H = encoder hidden per direction, D = 2H):
//   encoder LSTM:  W 4H x V,      U 4H x H, b 4H x 1   (gate rows i, f, o, g)
//   decoder LSTM:  W 4D x (V+D),  U 4D x D, b 4D x 1   (input = token one-hot | previous attentional vector)
//   W_a D x D, W_c D x 2D, W_out V x D, b_out V x 1

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "melodyforge/tensor.hpp"

namespace melodyforge::nn {

struct ModelDims {
  int vocab = 130;
  int hidden = 128;  // per encoder direction

  int dec_hidden() const { return 2 * hidden; }
  bool operator==(const ModelDims&) const = default;
};

struct LstmParams {
  Matrix W;  // 4h x input
  Matrix U;  // 4h x h
  Matrix b;  // 4h x 1

  int hidden() const { return static_cast<int>(U.cols()); }
  int input() const { return static_cast<int>(W.cols()); }

  static LstmParams zeros(int input, int hidden);
};

struct ModelParams {
  ModelDims dims;
  LstmParams enc_fwd, enc_bwd, dec;
  Matrix W_a, W_c, W_out, b_out;

  static ModelParams zeros(const ModelDims& dims);
  /// Glorot-uniform weights, zero biases except forget gates at +1.
  static ModelParams initialize(const ModelDims& dims, std::uint64_t seed);

  /// Visits every parameter matrix in the fixed serialization order.
  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f("enc_fwd.W", self.enc_fwd.W);
    f("enc_fwd.U", self.enc_fwd.U);
    f("enc_fwd.b", self.enc_fwd.b);
    f("enc_bwd.W", self.enc_bwd.W);
    f("enc_bwd.U", self.enc_bwd.U);
    f("enc_bwd.b", self.enc_bwd.b);
    f("dec.W", self.dec.W);
    f("dec.U", self.dec.U);
    f("dec.b", self.dec.b);
    f("W_a", self.W_a);
    f("W_c", self.W_c);
    f("W_out", self.W_out);
    f("b_out", self.b_out);
  }
  template <class F>
  void for_each(F&& f) { visit(*this, std::forward<F>(f)); }
  template <class F>
  void for_each(F&& f) const { visit(*this, std::forward<F>(f)); }

  Eigen::Index parameter_count() const;
  Vector flatten() const;
  void unflatten(const Vector& flat);
  void set_zero();
  bool all_finite() const;
  /// Throws ShapeMismatch if any matrix disagrees with `dims`.
  void check_shapes() const;
};

struct LstmState {
  Vector h, c;
};

/// One LSTM step on a dense input.
LstmState lstm_cell_step(const Vector& x, const Vector& h, const Vector& c, const LstmParams& p);

struct LstmGrads {
  Matrix dW, dU, db;
  Vector dx, dh, dc;  // w.r.t. the step's inputs
};

/// Backward pass of lstm_cell_step given upstream gradients on (h', c').
LstmGrads lstm_cell_backward(const Vector& x, const Vector& h, const Vector& c, const LstmParams& p, const Vector& dh_next,
                             const Vector& dc_next);

struct EncoderStates {
  Matrix states;  // S x 2H, row s = [h_fwd_s | h_bwd_s]
  Vector final_h, final_c;  // [last forward | last backward]
};

EncoderStates encode_bidirectional(std::span<const int> tokens, const ModelParams& params);

struct Attention {
  Vector context;
  Vector weights;
};

Attention luong_attention(const Vector& h_t, const EncoderStates& enc, const Matrix& W_a);

struct DecoderState {
  Vector h, c;
  Vector attentional;  // previous h~, zero before the first step
};

DecoderState initial_decoder_state(const EncoderStates& enc);

struct DecoderOutput {
  Vector distribution;
  DecoderState state;
};

DecoderOutput decoder_step(int prev_token, const DecoderState& state, const EncoderStates& enc, const ModelParams& params);

struct SequenceLoss {
  double loss = 0.0;  // mean cross-entropy per target step
  std::vector<Vector> distributions;
};

/// Teacher-forced pass: the decoder starts from the last input token and then
/// consumes target[t-1].
SequenceLoss forward_teacher_forced(std::span<const int> input, std::span<const int> target, const ModelParams& params);

/// Same loss as forward_teacher_forced; adds d(loss)/d(params) into `grads`.
SequenceLoss loss_and_gradients(std::span<const int> input, std::span<const int> target, const ModelParams& params,
                                ModelParams& grads);

/// FNV-1a over the raw parameter bytes; used to detect mutation.
std::uint64_t fingerprint(const ModelParams& params);

}  // namespace melodyforge::nn
