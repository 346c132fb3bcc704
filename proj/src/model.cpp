#include "melodyforge/model.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "melodyforge/error.hpp"
#include "melodyforge/rng.hpp"

namespace melodyforge::nn {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(Errc::ShapeMismatch, what);
}

// Cached activations of one LSTM step. `token` selects a one-hot column of W
// (-1 for none); `dense` feeds the trailing dense columns of W.
struct LstmCache {
  int token = -1;
  Vector dense;
  Vector h_prev, c_prev;
  Vector i, f, o, g;
  Vector c, tanh_c, h;
};

LstmCache finish_step(Vector z, const Vector& h, const Vector& c) {
  const Eigen::Index n = h.size();
  LstmCache s;
  s.h_prev = h;
  s.c_prev = c;
  s.i = sigmoid(Vector(z.segment(0, n)));
  s.f = sigmoid(Vector(z.segment(n, n)));
  s.o = sigmoid(Vector(z.segment(2 * n, n)));
  s.g = nn::tanh(Vector(z.segment(3 * n, n)));
  s.c = s.f.cwiseProduct(c) + s.i.cwiseProduct(s.g);
  s.tanh_c = nn::tanh(s.c);
  s.h = s.o.cwiseProduct(s.tanh_c);
  return s;
}

LstmCache lstm_forward(const LstmParams& p, int token, const Vector* dense, const Vector& h, const Vector& c) {
  Vector z = p.b.col(0) + p.U * h;
  if (token >= 0) z += p.W.col(token);
  if (dense != nullptr) z.noalias() += p.W.rightCols(dense->size()) * *dense;
  LstmCache s = finish_step(std::move(z), h, c);
  s.token = token;
  if (dense != nullptr) s.dense = *dense;
  return s;
}

struct LstmBackward {
  Vector da;  // gradient w.r.t. the stacked pre-activations [i f o g]
  Vector dc_prev;
};

LstmBackward lstm_backward(const LstmCache& s, const Vector& dh, const Vector& dc) {
  const Eigen::Index n = dh.size();
  Vector dc_total = dc + dh.cwiseProduct(s.o).cwiseProduct((1.0 - s.tanh_c.array().square()).matrix());
  LstmBackward out;
  out.da.resize(4 * n);
  out.da.segment(0, n) = sigmoid_backward(s.i, dc_total.cwiseProduct(s.g));
  out.da.segment(n, n) = sigmoid_backward(s.f, dc_total.cwiseProduct(s.c_prev));
  out.da.segment(2 * n, n) = sigmoid_backward(s.o, dh.cwiseProduct(s.tanh_c));
  out.da.segment(3 * n, n) = tanh_backward(s.g, dc_total.cwiseProduct(s.i));
  out.dc_prev = dc_total.cwiseProduct(s.f);
  return out;
}

struct EncoderPass {
  std::vector<LstmCache> fwd;  // by position
  std::vector<LstmCache> bwd;  // by processing order: position S-1-k
  EncoderStates states;
};

EncoderPass encoder_forward(std::span<const int> tokens, const ModelParams& p) {
  if (tokens.empty()) throw Error(Errc::EmptySequence, "encoder input is empty");
  const int V = p.dims.vocab, H = p.dims.hidden;
  const auto S = static_cast<Eigen::Index>(tokens.size());
  for (int t : tokens)
    if (t < 0 || t >= V) throw Error(Errc::TokenOutOfRange, "token " + std::to_string(t) + " outside vocabulary of " + std::to_string(V));

  EncoderPass pass;
  pass.fwd.reserve(tokens.size());
  pass.bwd.reserve(tokens.size());
  Vector h = Vector::Zero(H), c = Vector::Zero(H);
  for (Eigen::Index s = 0; s < S; ++s) {
    pass.fwd.push_back(lstm_forward(p.enc_fwd, tokens[static_cast<std::size_t>(s)], nullptr, h, c));
    h = pass.fwd.back().h;
    c = pass.fwd.back().c;
  }
  h.setZero();
  c.setZero();
  for (Eigen::Index s = S - 1; s >= 0; --s) {
    pass.bwd.push_back(lstm_forward(p.enc_bwd, tokens[static_cast<std::size_t>(s)], nullptr, h, c));
    h = pass.bwd.back().h;
    c = pass.bwd.back().c;
  }

  auto& st = pass.states;
  st.states.resize(S, 2 * H);
  for (Eigen::Index s = 0; s < S; ++s) {
    st.states.row(s).head(H) = pass.fwd[static_cast<std::size_t>(s)].h.transpose();
    st.states.row(s).tail(H) = pass.bwd[static_cast<std::size_t>(S - 1 - s)].h.transpose();
  }
  st.final_h.resize(2 * H);
  st.final_c.resize(2 * H);
  st.final_h << pass.fwd.back().h, pass.bwd.back().h;
  st.final_c << pass.fwd.back().c, pass.bwd.back().c;
  return pass;
}

struct DecoderCache {
  LstmCache lstm;
  Vector q;  // W_a^T h
  Attention attention;
  Vector combined;  // [context | h]
  Vector attentional;
  Vector distribution;
};

DecoderCache decoder_forward(int prev_token, const DecoderState& state, const EncoderStates& enc, const ModelParams& p) {
  const int V = p.dims.vocab, D = p.dims.dec_hidden();
  if (prev_token < 0 || prev_token >= V) throw Error(Errc::TokenOutOfRange, "decoder input token " + std::to_string(prev_token));
  require(state.h.size() == D && state.c.size() == D && state.attentional.size() == D, "decoder state width");
  require(enc.states.cols() == D, "encoder state width");

  DecoderCache d;
  d.lstm = lstm_forward(p.dec, prev_token, &state.attentional, state.h, state.c);
  d.q.noalias() = p.W_a.transpose() * d.lstm.h;
  Vector scores = enc.states * d.q;
  d.attention.weights = softmax(scores);
  d.attention.context.noalias() = enc.states.transpose() * d.attention.weights;
  d.combined.resize(2 * D);
  d.combined << d.attention.context, d.lstm.h;
  d.attentional = nn::tanh(Vector(p.W_c * d.combined));
  Vector logits = p.W_out * d.attentional + p.b_out.col(0);
  d.distribution = softmax(logits);
  return d;
}

void check_window(std::span<const int> input, std::span<const int> target, int vocab) {
  if (input.size() != target.size())
    throw Error(Errc::ShapeMismatch, "input length " + std::to_string(input.size()) + " != target length " + std::to_string(target.size()));
  for (int t : target)
    if (t < 0 || t >= vocab) throw Error(Errc::TargetOutOfRange, "target token " + std::to_string(t));
}

}  // namespace

LstmParams LstmParams::zeros(int input, int hidden) {
  return {Matrix::Zero(4 * hidden, input), Matrix::Zero(4 * hidden, hidden), Matrix::Zero(4 * hidden, 1)};
}

ModelParams ModelParams::zeros(const ModelDims& dims) {
  if (dims.vocab <= 0 || dims.hidden <= 0) throw Error(Errc::DimensionMismatch, "dimensions must be positive");
  const int V = dims.vocab, H = dims.hidden, D = dims.dec_hidden();
  ModelParams p;
  p.dims = dims;
  p.enc_fwd = LstmParams::zeros(V, H);
  p.enc_bwd = LstmParams::zeros(V, H);
  p.dec = LstmParams::zeros(V + D, D);
  p.W_a = Matrix::Zero(D, D);
  p.W_c = Matrix::Zero(D, 2 * D);
  p.W_out = Matrix::Zero(V, D);
  p.b_out = Matrix::Zero(V, 1);
  return p;
}

ModelParams ModelParams::initialize(const ModelDims& dims, std::uint64_t seed) {
  ModelParams p = zeros(dims);
  Rng rng(seed);
  auto glorot = [&](Matrix& m, double fan_in, double fan_out) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.uniform(-limit, limit);
  };
  for (LstmParams* lstm : {&p.enc_fwd, &p.enc_bwd, &p.dec}) {
    const int h = lstm->hidden();
    glorot(lstm->W, lstm->input(), h);
    glorot(lstm->U, h, h);
    lstm->b.block(h, 0, h, 1).setOnes();  // forget gate
  }
  const int D = dims.dec_hidden();
  glorot(p.W_a, D, D);
  glorot(p.W_c, 2 * D, D);
  glorot(p.W_out, D, dims.vocab);
  return p;
}

Eigen::Index ModelParams::parameter_count() const {
  Eigen::Index n = 0;
  for_each([&](std::string_view, const Matrix& m) { n += m.size(); });
  return n;
}

Vector ModelParams::flatten() const {
  Vector flat(parameter_count());
  Eigen::Index at = 0;
  for_each([&](std::string_view, const Matrix& m) {
    flat.segment(at, m.size()) = m.reshaped<Eigen::RowMajor>();
    at += m.size();
  });
  return flat;
}

void ModelParams::unflatten(const Vector& flat) {
  if (flat.size() != parameter_count()) throw Error(Errc::ShapeMismatch, "flat parameter vector has wrong length");
  Eigen::Index at = 0;
  for_each([&](std::string_view, Matrix& m) {
    m.reshaped<Eigen::RowMajor>() = flat.segment(at, m.size());
    at += m.size();
  });
}

void ModelParams::set_zero() {
  for_each([](std::string_view, Matrix& m) { m.setZero(); });
}

bool ModelParams::all_finite() const {
  bool ok = true;
  for_each([&](std::string_view, const Matrix& m) { ok = ok && m.allFinite(); });
  return ok;
}

void ModelParams::check_shapes() const {
  ModelParams expected = zeros(dims);
  std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes;
  expected.for_each([&](std::string_view, const Matrix& m) { shapes.emplace_back(m.rows(), m.cols()); });
  std::size_t k = 0;
  for_each([&](std::string_view name, const Matrix& m) {
    const auto [r, c] = shapes[k++];
    require(m.rows() == r && m.cols() == c, std::string(name) + " has shape " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                                                ", expected " + std::to_string(r) + "x" + std::to_string(c));
  });
}

LstmState lstm_cell_step(const Vector& x, const Vector& h, const Vector& c, const LstmParams& p) {
  const int n = p.hidden();
  require(x.size() == p.input(), "lstm input width " + std::to_string(x.size()) + " != " + std::to_string(p.input()));
  require(h.size() == n && c.size() == n, "lstm state width");
  require(p.W.rows() == 4 * n && p.b.rows() == 4 * n, "lstm parameter rows");
  Vector z = p.W * x + p.U * h + p.b.col(0);
  LstmCache s = finish_step(std::move(z), h, c);
  return {s.h, s.c};
}

LstmGrads lstm_cell_backward(const Vector& x, const Vector& h, const Vector& c, const LstmParams& p, const Vector& dh_next,
                             const Vector& dc_next) {
  require(x.size() == p.input() && h.size() == p.hidden() && c.size() == p.hidden(), "lstm input shapes");
  require(dh_next.size() == p.hidden() && dc_next.size() == p.hidden(), "lstm upstream gradient shapes");
  LstmCache s = lstm_forward(p, -1, &x, h, c);
  LstmBackward lb = lstm_backward(s, dh_next, dc_next);
  return {lb.da * x.transpose(), lb.da * h.transpose(), lb.da, p.W.transpose() * lb.da, p.U.transpose() * lb.da, lb.dc_prev};
}

EncoderStates encode_bidirectional(std::span<const int> tokens, const ModelParams& params) {
  return encoder_forward(tokens, params).states;
}

Attention luong_attention(const Vector& h_t, const EncoderStates& enc, const Matrix& W_a) {
  require(W_a.rows() == h_t.size() && W_a.cols() == enc.states.cols(), "attention weight shape");
  require(enc.states.rows() > 0, "no encoder states");
  Vector q = W_a.transpose() * h_t;
  Attention a;
  a.weights = softmax(Vector(enc.states * q));
  a.context = enc.states.transpose() * a.weights;
  return a;
}

DecoderState initial_decoder_state(const EncoderStates& enc) {
  return {enc.final_h, enc.final_c, Vector::Zero(enc.final_h.size())};
}

DecoderOutput decoder_step(int prev_token, const DecoderState& state, const EncoderStates& enc, const ModelParams& params) {
  DecoderCache d = decoder_forward(prev_token, state, enc, params);
  return {std::move(d.distribution), {std::move(d.lstm.h), std::move(d.lstm.c), std::move(d.attentional)}};
}

SequenceLoss forward_teacher_forced(std::span<const int> input, std::span<const int> target, const ModelParams& params) {
  check_window(input, target, params.dims.vocab);
  const EncoderStates enc = encode_bidirectional(input, params);
  DecoderState state = initial_decoder_state(enc);
  SequenceLoss out;
  out.distributions.reserve(target.size());
  int prev = input.back();
  for (int y : target) {
    DecoderOutput step = decoder_step(prev, state, enc, params);
    out.loss += cross_entropy(step.distribution, y);
    out.distributions.push_back(std::move(step.distribution));
    state = std::move(step.state);
    prev = y;
  }
  out.loss /= static_cast<double>(target.size());
  return out;
}

SequenceLoss loss_and_gradients(std::span<const int> input, std::span<const int> target, const ModelParams& p, ModelParams& grads) {
  check_window(input, target, p.dims.vocab);
  require(grads.dims == p.dims, "gradient buffer dimensions");
  const int V = p.dims.vocab, H = p.dims.hidden, D = p.dims.dec_hidden();
  const auto T = static_cast<Eigen::Index>(target.size());

  // Forward, keeping every intermediate.
  const EncoderPass enc = encoder_forward(input, p);
  const Matrix& E = enc.states.states;
  const Eigen::Index S = E.rows();
  std::vector<DecoderCache> steps;
  steps.reserve(target.size());
  SequenceLoss out;
  DecoderState state = initial_decoder_state(enc.states);
  int prev = input.back();
  for (Eigen::Index t = 0; t < T; ++t) {
    steps.push_back(decoder_forward(prev, state, enc.states, p));
    const auto& d = steps.back();
    out.loss += cross_entropy(d.distribution, target[static_cast<std::size_t>(t)]);
    out.distributions.push_back(d.distribution);
    state = {d.lstm.h, d.lstm.c, d.attentional};
    prev = target[static_cast<std::size_t>(t)];
  }
  out.loss /= static_cast<double>(T);

  // Backward through the decoder. Per-step row vectors are collected so the
  // weight gradients become a handful of matrix products at the end.
  Matrix DA(T, 4 * D), Hprev(T, D), Feed(T, D), DL(T, V), Htil(T, D), DZ(T, D), Comb(T, 2 * D), Hdec(T, D), DQ(T, D), Q(T, D);
  Matrix A(T, S), DS(T, S), DCTX(T, D);
  Vector dh_rec = Vector::Zero(D), dc_rec = Vector::Zero(D), dfeed = Vector::Zero(D);
  const double inv_t = 1.0 / static_cast<double>(T);
  for (Eigen::Index t = T - 1; t >= 0; --t) {
    const auto& d = steps[static_cast<std::size_t>(t)];
    Vector dl = softmax_cross_entropy_backward(d.distribution, target[static_cast<std::size_t>(t)]) * inv_t;
    Vector dhtil = p.W_out.transpose() * dl + dfeed;
    Vector dz = tanh_backward(d.attentional, dhtil);
    Vector dcomb = p.W_c.transpose() * dz;
    Vector dctx = dcomb.head(D);
    Vector dav = E * dctx;
    const Vector& a = d.attention.weights;
    Vector ds = softmax_backward(a, dav);
    Vector dq = E.transpose() * ds;
    Vector dh = p.W_a * dq + dcomb.tail(D) + dh_rec;
    LstmBackward lb = lstm_backward(d.lstm, dh, dc_rec);

    grads.dec.W.col(d.lstm.token) += lb.da;
    dfeed.noalias() = p.dec.W.rightCols(D).transpose() * lb.da;
    dh_rec.noalias() = p.dec.U.transpose() * lb.da;
    dc_rec = lb.dc_prev;

    DA.row(t) = lb.da.transpose();
    Hprev.row(t) = d.lstm.h_prev.transpose();
    Feed.row(t) = d.lstm.dense.transpose();
    DL.row(t) = dl.transpose();
    Htil.row(t) = d.attentional.transpose();
    DZ.row(t) = dz.transpose();
    Comb.row(t) = d.combined.transpose();
    Hdec.row(t) = d.lstm.h.transpose();
    DQ.row(t) = dq.transpose();
    Q.row(t) = d.q.transpose();
    A.row(t) = a.transpose();
    DS.row(t) = ds.transpose();
    DCTX.row(t) = dctx.transpose();
  }
  grads.dec.U.noalias() += DA.transpose() * Hprev;
  grads.dec.W.rightCols(D).noalias() += DA.transpose() * Feed;
  grads.dec.b.col(0) += DA.colwise().sum().transpose();
  grads.W_out.noalias() += DL.transpose() * Htil;
  grads.b_out.col(0) += DL.colwise().sum().transpose();
  grads.W_c.noalias() += DZ.transpose() * Comb;
  grads.W_a.noalias() += Hdec.transpose() * DQ;
  Matrix dE = A.transpose() * DCTX;
  dE.noalias() += DS.transpose() * Q;

  // Backward through both encoder directions; the decoder's initial state
  // feeds each direction's final step.
  auto encoder_direction = [&](const std::vector<LstmCache>& caches, const LstmParams& lp, LstmParams& g, Eigen::Index col0,
                               Vector dh_next, Vector dc_next, bool reversed) {
    const auto n = static_cast<Eigen::Index>(caches.size());
    Matrix DAe(n, 4 * H), Hp(n, H);
    for (Eigen::Index k = n - 1; k >= 0; --k) {
      const auto& s = caches[static_cast<std::size_t>(k)];
      const Eigen::Index pos = reversed ? n - 1 - k : k;
      Vector dh = dE.row(pos).segment(col0, H).transpose() + dh_next;
      LstmBackward lb = lstm_backward(s, dh, dc_next);
      g.W.col(s.token) += lb.da;
      dh_next.noalias() = lp.U.transpose() * lb.da;
      dc_next = lb.dc_prev;
      DAe.row(k) = lb.da.transpose();
      Hp.row(k) = s.h_prev.transpose();
    }
    g.U.noalias() += DAe.transpose() * Hp;
    g.b.col(0) += DAe.colwise().sum().transpose();
  };
  encoder_direction(enc.fwd, p.enc_fwd, grads.enc_fwd, 0, dh_rec.head(H), dc_rec.head(H), false);
  encoder_direction(enc.bwd, p.enc_bwd, grads.enc_bwd, H, dh_rec.tail(H), dc_rec.tail(H), true);
  return out;
}

std::uint64_t fingerprint(const ModelParams& params) {
  std::uint64_t hash = 1469598103934665603ull;
  params.for_each([&](std::string_view, const Matrix& m) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(m.data());
    for (std::size_t i = 0; i < static_cast<std::size_t>(m.size()) * sizeof(double); ++i) {
      hash ^= bytes[i];
      hash *= 1099511628211ull;
    }
  });
  return hash;
}

}  // namespace melodyforge::nn
