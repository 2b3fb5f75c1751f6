#include <gtest/gtest.h>

#include <cmath>

#include "mixsign/head/head.h"
#include "mixsign/tensor/grad_check.h"
#include "mixsign/tensor/ops.h"
#include "mixsign/train/adam.h"

using namespace mixsign;

namespace {

Tensor randn(Shape s, Rng& rng, double sd = 1.0) {
    Tensor t(std::move(s));
    for (double& v : t.mutable_data()) v = sd * rng.normal();
    return t;
}

void zero_all(const ParamList& ps) {
    for (auto p : ps)
        for (double& v : p.value.mutable_data()) v = 0.0;
}

std::vector<Tensor> values(const ParamList& ps) {
    std::vector<Tensor> out;
    for (const auto& p : ps) out.push_back(p.value);
    return out;
}

Tensor reverse_rows(const Tensor& x) {
    const std::size_t t = x.dim(0), d = x.dim(1);
    std::vector<double> v(x.numel());
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t k = 0; k < d; ++k) v[i * d + k] = x.at((t - 1 - i) * d + k);
    return Tensor({t, d}, v);
}

}  // namespace

TEST(PoolNodes, Examples) {
    GridSeq one{3, 1, 1, Tensor({3, 2}, {1, 2, 3, 4, 5, 6}), 1};
    auto p = pool_nodes(one);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(p.at(i), one.features.at(i));
    GridSeq eq{1, 2, 2, Tensor({4, 1}, 7.0), 1};
    EXPECT_DOUBLE_EQ(pool_nodes(eq).item(), 7.0);
    GridSeq pair{1, 1, 2, Tensor({2, 1}, {1.0, 3.0}), 1};
    EXPECT_DOUBLE_EQ(pool_nodes(pair).item(), 2.0);
}

TEST(TemporalHead, ReducedLengths) {
    Rng rng = Rng::stream(1);
    HeadConfig cfg{4, 5, 2};
    auto w = init_head(3, 6, cfg, rng);
    auto out = temporal_head(randn({40, 3}, rng), w);
    EXPECT_EQ(out.logits.shape(), (Shape{10, 6}));
    EXPECT_EQ(out.aux_logits.shape(), (Shape{10, 6}));
    EXPECT_EQ(out.encoder.shape(), (Shape{10, 8}));
    EXPECT_EQ(temporal_head(randn({8, 3}, rng), w).logits.shape(), (Shape{2, 6}));  // T=8, hidden 4, V=5
    EXPECT_EQ(temporal_head(randn({7, 3}, rng), w).logits.dim(0), reduced_length(7));
}

TEST(TemporalHead, TooShortRejectedWithMinimum) {
    Rng rng = Rng::stream(2);
    auto w = init_head(3, 4, HeadConfig{4, 5, 2}, rng);
    try {
        temporal_head(randn({3, 3}, rng), w);
        FAIL();
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("at least 4"), std::string::npos);
    }
}

TEST(TemporalHead, ZeroWeightsGiveZeroLogits) {
    Rng rng = Rng::stream(3);
    auto w = init_head(3, 4, HeadConfig{4, 5, 2}, rng);
    ParamList ps;
    collect(ps, "head", w);
    zero_all(ps);
    auto out = temporal_head(randn({12, 3}, rng), w);
    for (double v : out.logits.data()) EXPECT_EQ(v, 0.0);
    for (double v : out.aux_logits.data()) EXPECT_EQ(v, 0.0);
}

TEST(Lstm, BackwardDirectionEqualsReversedForward) {
    Rng rng = Rng::stream(4);
    auto w = init_lstm(3, 5, rng);
    Tensor x = randn({7, 3}, rng);
    Tensor back = lstm_run(x, w, true);
    Tensor fwd_rev = reverse_rows(lstm_run(reverse_rows(x), w, false));
    for (std::size_t i = 0; i < back.numel(); ++i) EXPECT_EQ(back.at(i), fwd_rev.at(i));
}

TEST(TemporalHead, GradCheckThroughRecurrence) {
    Rng rng = Rng::stream(5);
    auto w = init_head(3, 4, HeadConfig{3, 5, 2}, rng);
    // T'=4 so every recurrent weight sees at least three steps of history;
    // at T'=2 some Wh coordinates have gradients near 1e-8, below what a
    // central difference can resolve.
    Tensor x = randn({16, 3}, rng);
    Tensor r1 = randn({4, 4}, rng), r2 = randn({4, 4}, rng);
    ParamList ps;
    collect(ps, "head", w);
    auto params = values(ps);
    params.push_back(x);
    auto f = [&] {
        auto out = temporal_head(x, w);
        return ops::add(ops::sum(ops::mul(out.logits, r1)), ops::sum(ops::mul(out.aux_logits, r2)));
    };
    auto rep = grad_check_params(f, params, 1e-5, 1e-4);
    EXPECT_TRUE(rep.passed) << rep.max_rel_error << " param " << rep.worst_param << " idx " << rep.worst_index;
}

TEST(TemporalHead, Deterministic) {
    Rng rng = Rng::stream(6);
    auto w = init_head(3, 4, HeadConfig{4, 5, 2}, rng);
    Tensor x = randn({9, 3}, rng);
    auto a = temporal_head(x, w).logits, b = temporal_head(x, w).logits;
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a.at(i), b.at(i));
}

TEST(Decoder, ZeroWeightsGreedyIsEmpty) {
    Rng rng = Rng::stream(7);
    auto w = init_decoder(kTextSpecials + 1, 4, 3, 3, rng);
    ParamList ps;
    collect(ps, "dec", w);
    zero_all(ps);
    auto out = translation_decoder(randn({3, 4}, rng), {}, w, false, 10);
    EXPECT_TRUE(out.tokens.empty());
}

TEST(Decoder, UniformTeacherForcedLogProb) {
    Rng rng = Rng::stream(8);
    const std::size_t v = 9;
    auto w = init_decoder(v, 4, 3, 3, rng);
    ParamList ps;
    collect(ps, "dec", w);
    zero_all(ps);
    std::vector<std::size_t> target{kBos, 5, 3, 7, kEos};
    auto out = translation_decoder(randn({3, 4}, rng), target, w, true);
    double total = 0;
    for (std::size_t t = 0; t + 1 < target.size(); ++t) total += out.log_probs.at(t * v + target[t + 1]);
    EXPECT_NEAR(total, -4.0 * std::log(9.0), 1e-12);
    EXPECT_NEAR(decoder_nll(out.log_probs, target).item(), std::log(9.0), 1e-12);
}

TEST(Decoder, EqualScoresAttendToTheMean) {
    Rng rng = Rng::stream(9);
    auto w = init_decoder(6, 2, 3, 3, rng);
    for (double& v : w.attn.mutable_data()) v = 0.0;
    Tensor enc({3, 2}, {1.0, -2.0, 4.0, 0.5, -0.5, 3.0});
    Tensor mean({1, 2}, {(1.0 + 4.0 - 0.5) / 3, (-2.0 + 0.5 + 3.0) / 3});
    std::vector<std::size_t> target{kBos, 4, 5, kEos};
    auto a = translation_decoder(enc, target, w, true).log_probs;
    auto b = translation_decoder(mean, target, w, true).log_probs;
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.at(i), b.at(i), 1e-12);
}

TEST(Decoder, EmptyTargetRejected) {
    Rng rng = Rng::stream(10);
    auto w = init_decoder(6, 2, 3, 3, rng);
    EXPECT_THROW(translation_decoder(randn({2, 2}, rng), {}, w, true), std::invalid_argument);
    EXPECT_THROW(translation_decoder(randn({2, 2}, rng), {kBos}, w, true), std::invalid_argument);
}

TEST(Decoder, GradCheck) {
    Rng rng = Rng::stream(11);
    auto w = init_decoder(6, 4, 3, 3, rng);
    Tensor enc = randn({3, 4}, rng);
    std::vector<std::size_t> target{kBos, 4, 3, 5, kEos};
    ParamList ps;
    collect(ps, "dec", w);
    auto params = values(ps);
    params.push_back(enc);
    auto f = [&] { return decoder_nll(translation_decoder(enc, target, w, true).log_probs, target); };
    auto rep = grad_check_params(f, params, 1e-5, 1e-4);
    EXPECT_TRUE(rep.passed) << rep.max_rel_error << " param " << rep.worst_param << " idx " << rep.worst_index;
}

TEST(Decoder, MemorisesSinglePair) {
    Rng rng = Rng::stream(12);
    auto w = init_decoder(10, 4, 8, 16, rng);
    Tensor enc = randn({4, 4}, rng);
    std::vector<std::size_t> target{kBos, 4, 7, 3, 9, kEos};
    ParamList ps;
    collect(ps, "dec", w);
    Adam opt(ps, AdamConfig{0.02, 0.9, 0.999, 1e-8, 0.0});
    double first = 0, last = 0;
    bool monotone = true;
    for (int step = 0; step < 50; ++step) {
        Tape tape;
        Tape::Scope scope(tape);
        opt.zero_grad();
        Tensor loss = decoder_nll(translation_decoder(enc, target, w, true).log_probs, target);
        if (step == 0) first = loss.item();
        if (step > 0 && loss.item() >= last) monotone = false;
        last = loss.item();
        tape.backward(loss);
        opt.step();
    }
    EXPECT_TRUE(monotone);
    EXPECT_LT(last, 0.1 * first) << "initial " << first << " final " << last;
}
