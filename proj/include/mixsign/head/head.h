#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mixsign/backbone/grid.h"
#include "mixsign/tensor/param_io.h"
#include "mixsign/util/rng.h"

namespace mixsign {

// Per-frame mean over nodes: [T * N, D] -> [T, D].
Tensor pool_nodes(const GridSeq& seq);

// LSTM with gate layout [input, forget, cell, output] along the 4H axis:
//   z = x_t Wx + h_{t-1} Wh + b
//   c_t = sigmoid(z_f) * c_{t-1} + sigmoid(z_i) * tanh(z_g)
//   h_t = sigmoid(z_o) * tanh(c_t)
struct LstmWeights {
    Tensor wx;  // [in, 4H]
    Tensor wh;  // [H, 4H]
    Tensor b;   // [4H]
    std::size_t hidden() const { return wh.dim(0); }
};

LstmWeights init_lstm(std::size_t in, std::size_t hidden, Rng& rng);
void collect(ParamList& out, const std::string& prefix, const LstmWeights& w);

// Runs over the rows of x [T, in] from zero state; `reverse` walks from the
// last row to the first and returns outputs in input order. -> [T, H]
Tensor lstm_run(const Tensor& x, const LstmWeights& w, bool reverse);

struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]
};
Linear init_linear(std::size_t in, std::size_t out, Rng& rng);
Tensor apply(const Linear& l, const Tensor& x);
void collect(ParamList& out, const std::string& prefix, const Linear& l);

struct HeadConfig {
    std::size_t hidden = 64;
    std::size_t conv_kernel = 5;
    std::size_t layers = 2;
};

struct HeadWeights {
    Tensor conv1_w, conv1_b;  // [k, D, H], [H]
    Tensor conv2_w, conv2_b;  // [k, H, H], [H]
    Linear aux;               // [H, V+1], supervises the conv output
    std::vector<LstmWeights> fwd, bwd;
    Linear classifier;        // [2H, V+1]
};

HeadWeights init_head(std::size_t in_dim, std::size_t classes, const HeadConfig& cfg, Rng& rng);
void collect(ParamList& out, const std::string& prefix, const HeadWeights& w);

struct HeadOutput {
    Tensor logits;      // [T', V+1]
    Tensor aux_logits;  // [T', V+1]
    Tensor encoder;     // [T', 2H] recurrent features
};

// Reduced length after the two pool-by-2 blocks.
constexpr std::size_t reduced_length(std::size_t t) { return t / 2 / 2; }
constexpr std::size_t kMinHeadFrames = 4;

// seq [T, D] with T >= 4.
HeadOutput temporal_head(const Tensor& seq, const HeadWeights& w);

// Token ids of the translation vocabulary's reserved entries.
inline constexpr std::size_t kEos = 0;
inline constexpr std::size_t kBos = 1;
inline constexpr std::size_t kUnk = 2;
inline constexpr std::size_t kTextSpecials = 3;

// Single-layer LSTM decoder with dot-product attention:
//   h_t = LSTM(embed(y_{t-1}), h_{t-1})
//   a_t = softmax(enc (h_t Wa)^T),  ctx_t = a_t enc
//   log p(y_t) = log_softmax([h_t, ctx_t] Wout + bout)
struct DecoderWeights {
    Tensor embed;  // [V_text, E]
    LstmWeights cell;
    Tensor attn;   // [H, D_enc]
    Linear out;    // [H + D_enc, V_text]
    std::size_t vocab() const { return embed.dim(0); }
};

DecoderWeights init_decoder(std::size_t vocab, std::size_t enc_dim, std::size_t embed_dim, std::size_t hidden,
                            Rng& rng);
void collect(ParamList& out, const std::string& prefix, const DecoderWeights& w);

struct DecoderOutput {
    Tensor log_probs;                 // teacher forcing: [L-1, V_text] predicting target[1..]
    std::vector<std::size_t> tokens;  // greedy: emitted ids, EOS excluded
};

// Teacher forcing: target = [BOS, ..., EOS] with at least two entries.
// Greedy: target is ignored; decoding stops at EOS or after max_len tokens.
DecoderOutput translation_decoder(const Tensor& encoder, const std::vector<std::size_t>& target,
                                  const DecoderWeights& w, bool teacher_forcing, std::size_t max_len = 32);

// Mean negative log-likelihood of target[1..] under teacher-forced log_probs.
Tensor decoder_nll(const Tensor& log_probs, const std::vector<std::size_t>& target);

}  // namespace mixsign
