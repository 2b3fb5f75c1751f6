#include "mixsign/head/head.h"

#include <cmath>
#include <stdexcept>

#include "mixsign/tensor/ops.h"

namespace mixsign {

namespace {

Tensor param(Shape shape, double sd, Rng& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.mutable_data()) v = sd * rng.normal();
    t.set_requires_grad(true);
    return t;
}

Tensor zeros_param(Shape shape) {
    Tensor t(std::move(shape), 0.0);
    t.set_requires_grad(true);
    return t;
}

Tensor pool2(const Tensor& x) {
    const std::size_t t2 = x.dim(0) / 2, c = x.dim(1);
    Tensor even = x.dim(0) == 2 * t2 ? x : ops::slice(x, 0, 0, 2 * t2);
    return ops::max_over_axis(ops::reshape(even, {t2, 2, c}), 1);
}

// One LSTM step from a precomputed input projection row xw [1, 4H].
void lstm_step(const Tensor& xw, const LstmWeights& w, Tensor& h, Tensor& c) {
    const std::size_t hd = w.hidden();
    Tensor z = ops::add(ops::add(xw, ops::matmul(h, w.wh)), w.b);
    Tensor i = ops::sigmoid(ops::slice(z, 1, 0, hd));
    Tensor f = ops::sigmoid(ops::slice(z, 1, hd, 2 * hd));
    Tensor g = ops::tanh(ops::slice(z, 1, 2 * hd, 3 * hd));
    Tensor o = ops::sigmoid(ops::slice(z, 1, 3 * hd, 4 * hd));
    c = ops::add(ops::mul(f, c), ops::mul(i, g));
    h = ops::mul(o, ops::tanh(c));
}

}  // namespace

Tensor pool_nodes(const GridSeq& seq) {
    validate(seq);
    if (seq.frames == 0) throw std::invalid_argument("pool_nodes: empty sequence");
    return ops::mean_over_axis(ops::reshape(seq.features, {seq.frames, seq.nodes_per_frame(), seq.dim()}), 1);
}

LstmWeights init_lstm(std::size_t in, std::size_t hidden, Rng& rng) {
    const double k = 1.0 / std::sqrt(static_cast<double>(hidden));
    LstmWeights w{Tensor({in, 4 * hidden}), Tensor({hidden, 4 * hidden}), Tensor({4 * hidden}, 0.0)};
    for (double& v : w.wx.mutable_data()) v = rng.uniform(-k, k);
    for (double& v : w.wh.mutable_data()) v = rng.uniform(-k, k);
    for (std::size_t i = hidden; i < 2 * hidden; ++i) w.b.mutable_data()[i] = 1.0;  // forget gate
    w.wx.set_requires_grad(true);
    w.wh.set_requires_grad(true);
    w.b.set_requires_grad(true);
    return w;
}

void collect(ParamList& out, const std::string& prefix, const LstmWeights& w) {
    out.push_back({prefix + ".wx", w.wx});
    out.push_back({prefix + ".wh", w.wh});
    out.push_back({prefix + ".b", w.b});
}

Tensor lstm_run(const Tensor& x, const LstmWeights& w, bool reverse) {
    if (x.rank() != 2 || x.dim(1) != w.wx.dim(0)) {
        throw std::invalid_argument("lstm_run: input " + shape_str(x.shape()) + " does not fit " +
                                    shape_str(w.wx.shape()));
    }
    const std::size_t t_len = x.dim(0), hd = w.hidden();
    Tensor xw = ops::matmul(x, w.wx);
    Tensor h({1, hd}, 0.0), c({1, hd}, 0.0);
    std::vector<Tensor> out(t_len);
    for (std::size_t s = 0; s < t_len; ++s) {
        const std::size_t t = reverse ? t_len - 1 - s : s;
        lstm_step(ops::slice(xw, 0, t, t + 1), w, h, c);
        out[t] = h;
    }
    return ops::concat(out, 0);
}

Linear init_linear(std::size_t in, std::size_t out, Rng& rng) {
    return Linear{param({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng), zeros_param({out})};
}

Tensor apply(const Linear& l, const Tensor& x) { return ops::add(ops::matmul(x, l.weight), l.bias); }

void collect(ParamList& out, const std::string& prefix, const Linear& l) {
    out.push_back({prefix + ".weight", l.weight});
    out.push_back({prefix + ".bias", l.bias});
}

HeadWeights init_head(std::size_t in_dim, std::size_t classes, const HeadConfig& cfg, Rng& rng) {
    const std::size_t k = cfg.conv_kernel, h = cfg.hidden;
    HeadWeights w;
    w.conv1_w = param({k, in_dim, h}, std::sqrt(2.0 / static_cast<double>(k * in_dim)), rng);
    w.conv1_b = zeros_param({h});
    w.conv2_w = param({k, h, h}, std::sqrt(2.0 / static_cast<double>(k * h)), rng);
    w.conv2_b = zeros_param({h});
    w.aux = init_linear(h, classes, rng);
    std::size_t in = h;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        w.fwd.push_back(init_lstm(in, h, rng));
        w.bwd.push_back(init_lstm(in, h, rng));
        in = 2 * h;
    }
    w.classifier = init_linear(in, classes, rng);
    return w;
}

void collect(ParamList& out, const std::string& prefix, const HeadWeights& w) {
    out.push_back({prefix + ".conv1.weight", w.conv1_w});
    out.push_back({prefix + ".conv1.bias", w.conv1_b});
    out.push_back({prefix + ".conv2.weight", w.conv2_w});
    out.push_back({prefix + ".conv2.bias", w.conv2_b});
    collect(out, prefix + ".aux", w.aux);
    for (std::size_t l = 0; l < w.fwd.size(); ++l) {
        collect(out, prefix + ".lstm" + std::to_string(l) + ".fwd", w.fwd[l]);
        collect(out, prefix + ".lstm" + std::to_string(l) + ".bwd", w.bwd[l]);
    }
    collect(out, prefix + ".classifier", w.classifier);
}

HeadOutput temporal_head(const Tensor& seq, const HeadWeights& w) {
    if (seq.rank() != 2) throw std::invalid_argument("temporal_head: input must be [T, D], got " + shape_str(seq.shape()));
    if (seq.dim(0) < kMinHeadFrames) {
        throw std::invalid_argument("temporal_head: needs at least " + std::to_string(kMinHeadFrames) +
                                    " frames, got " + std::to_string(seq.dim(0)));
    }
    const std::size_t pad = w.conv1_w.dim(0) / 2;
    Tensor x = pool2(ops::relu(ops::conv1d(seq, w.conv1_w, w.conv1_b, pad)));
    x = pool2(ops::relu(ops::conv1d(x, w.conv2_w, w.conv2_b, pad)));
    HeadOutput out;
    out.aux_logits = apply(w.aux, x);
    for (std::size_t l = 0; l < w.fwd.size(); ++l) {
        x = ops::concat({lstm_run(x, w.fwd[l], false), lstm_run(x, w.bwd[l], true)}, 1);
    }
    out.encoder = x;
    out.logits = apply(w.classifier, x);
    return out;
}

DecoderWeights init_decoder(std::size_t vocab, std::size_t enc_dim, std::size_t embed_dim, std::size_t hidden,
                            Rng& rng) {
    DecoderWeights w;
    w.embed = param({vocab, embed_dim}, 0.3, rng);
    w.cell = init_lstm(embed_dim, hidden, rng);
    w.attn = param({hidden, enc_dim}, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
    w.out = init_linear(hidden + enc_dim, vocab, rng);
    return w;
}

void collect(ParamList& out, const std::string& prefix, const DecoderWeights& w) {
    out.push_back({prefix + ".embed", w.embed});
    collect(out, prefix + ".cell", w.cell);
    out.push_back({prefix + ".attn", w.attn});
    collect(out, prefix + ".out", w.out);
}

namespace {

// Log-probabilities of the next token given the new hidden state.
Tensor decoder_readout(const Tensor& h, const Tensor& encoder, const Tensor& encoder_t, const DecoderWeights& w) {
    Tensor scores = ops::matmul(ops::matmul(h, w.attn), encoder_t);  // [1, T']
    Tensor alpha = ops::exp(ops::log_softmax(scores));
    Tensor ctx = ops::matmul(alpha, encoder);                         // [1, D_enc]
    return ops::log_softmax(apply(w.out, ops::concat({h, ctx}, 1)));
}

}  // namespace

DecoderOutput translation_decoder(const Tensor& encoder, const std::vector<std::size_t>& target,
                                  const DecoderWeights& w, bool teacher_forcing, std::size_t max_len) {
    if (encoder.rank() != 2 || encoder.dim(1) != w.attn.dim(1)) {
        throw std::invalid_argument("translation_decoder: encoder " + shape_str(encoder.shape()) +
                                    " does not fit attention " + shape_str(w.attn.shape()));
    }
    const std::size_t hd = w.cell.hidden();
    Tensor encoder_t = ops::transpose(encoder);
    Tensor h({1, hd}, 0.0), c({1, hd}, 0.0);
    DecoderOutput out;

    if (teacher_forcing) {
        if (target.size() < 2) throw std::invalid_argument("translation_decoder: teacher forcing needs a non-empty target");
        if (target.front() != kBos) throw std::invalid_argument("translation_decoder: target must begin with BOS");
        for (std::size_t id : target) {
            if (id >= w.vocab()) throw std::invalid_argument("translation_decoder: token id " + std::to_string(id) + " out of vocabulary");
        }
        const std::vector<std::size_t> inputs(target.begin(), target.end() - 1);
        Tensor xw = ops::matmul(ops::gather_rows(w.embed, inputs), w.cell.wx);
        std::vector<Tensor> rows;
        for (std::size_t t = 0; t < inputs.size(); ++t) {
            lstm_step(ops::slice(xw, 0, t, t + 1), w.cell, h, c);
            rows.push_back(decoder_readout(h, encoder, encoder_t, w));
        }
        out.log_probs = ops::concat(rows, 0);
        return out;
    }

    std::size_t prev = kBos;
    for (std::size_t step = 0; step < max_len; ++step) {
        const std::vector<std::size_t> id{prev};
        lstm_step(ops::matmul(ops::gather_rows(w.embed, id), w.cell.wx), w.cell, h, c);
        const Tensor step_lp = decoder_readout(h, encoder, encoder_t, w);
        auto lp = step_lp.data();
        std::size_t best = 0;
        for (std::size_t v = 1; v < lp.size(); ++v) {
            if (lp[v] > lp[best]) best = v;
        }
        if (best == kEos) break;
        out.tokens.push_back(best);
        prev = best;
    }
    return out;
}

Tensor decoder_nll(const Tensor& log_probs, const std::vector<std::size_t>& target) {
    if (target.size() != log_probs.dim(0) + 1) {
        throw std::invalid_argument("decoder_nll: " + std::to_string(log_probs.dim(0)) + " steps for a target of " +
                                    std::to_string(target.size()));
    }
    const std::size_t steps = log_probs.dim(0), v = log_probs.dim(1);
    Tensor pick({steps, v}, 0.0);
    for (std::size_t t = 0; t < steps; ++t) pick.mutable_data()[t * v + target[t + 1]] = 1.0;
    return ops::scale(ops::sum(ops::mul(log_probs, pick)), -1.0 / static_cast<double>(steps));
}

}  // namespace mixsign
