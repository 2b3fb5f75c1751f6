#include "mixsign/ctc/ctc.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "mixsign/tensor/ops.h"

namespace mixsign {

GlossVocab::GlossVocab(std::vector<std::string> tokens) {
    for (auto& t : tokens) {
        if (find(t)) throw std::invalid_argument("vocabulary token '" + t + "' listed twice");
        add(t);
    }
}

std::size_t GlossVocab::add(const std::string& token) {
    if (auto id = find(token)) return *id;
    tokens_.push_back(token);
    index_.emplace(token, tokens_.size());
    return tokens_.size();
}

std::optional<std::size_t> GlossVocab::find(const std::string& token) const {
    auto it = index_.find(token);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

std::size_t GlossVocab::id(const std::string& token) const {
    if (auto i = find(token)) return *i;
    throw std::out_of_range("token '" + token + "' not in vocabulary");
}

const std::string& GlossVocab::token(std::size_t id) const {
    if (id == kBlank || id > tokens_.size()) throw std::out_of_range("id " + std::to_string(id) + " has no token");
    return tokens_[id - 1];
}

std::size_t ctc_min_frames(const std::vector<std::size_t>& target) {
    std::size_t n = target.size();
    for (std::size_t i = 1; i < target.size(); ++i) n += target[i] == target[i - 1];
    return n;
}

namespace {

// Stand-in for log(0); sums of a few sentinels stay finite.
constexpr double kLogZero = -1e300;

double lse(double a, double b) {
    if (a < b) std::swap(a, b);
    if (b <= kLogZero) return a;
    return a + std::log1p(std::exp(b - a));
}

}  // namespace

Tensor ctc_loss(const Tensor& log_probs, const std::vector<std::size_t>& target) {
    if (log_probs.rank() != 2) throw std::invalid_argument("ctc_loss: log_probs must be [T, V+1], got " + shape_str(log_probs.shape()));
    require_finite(log_probs, "ctc_loss");
    const std::size_t T = log_probs.dim(0), C = log_probs.dim(1), L = target.size();
    for (std::size_t id : target) {
        if (id == kBlank || id >= C) {
            throw std::invalid_argument("ctc_loss: target id " + std::to_string(id) + " outside [1, " + std::to_string(C - 1) + "]");
        }
    }
    if (ctc_min_frames(target) > T) {
        throw std::invalid_argument("ctc_loss: target of length " + std::to_string(L) + " needs " +
                                    std::to_string(ctc_min_frames(target)) + " frames, only " + std::to_string(T) +
                                    " available");
    }
    const std::size_t S = 2 * L + 1;
    std::vector<std::size_t> ext(S, kBlank);
    for (std::size_t i = 0; i < L; ++i) ext[2 * i + 1] = target[i];
    auto lp = log_probs.data();
    auto at = [&](std::size_t t, std::size_t s) { return lp[t * C + ext[s]]; };
    auto skip_ok = [&](std::size_t s) { return s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2]; };

    std::vector<double> alpha(T * S, kLogZero), beta(T * S, kLogZero);
    alpha[0] = at(0, 0);
    if (S > 1) alpha[1] = at(0, 1);
    for (std::size_t t = 1; t < T; ++t) {
        for (std::size_t s = 0; s < S; ++s) {
            double a = alpha[(t - 1) * S + s];
            if (s >= 1) a = lse(a, alpha[(t - 1) * S + s - 1]);
            if (skip_ok(s)) a = lse(a, alpha[(t - 1) * S + s - 2]);
            alpha[t * S + s] = a <= kLogZero ? kLogZero : a + at(t, s);
        }
    }
    beta[(T - 1) * S + S - 1] = at(T - 1, S - 1);
    if (S > 1) beta[(T - 1) * S + S - 2] = at(T - 1, S - 2);
    for (std::size_t t = T - 1; t-- > 0;) {
        for (std::size_t s = 0; s < S; ++s) {
            double b = beta[(t + 1) * S + s];
            if (s + 1 < S) b = lse(b, beta[(t + 1) * S + s + 1]);
            if (s + 2 < S && skip_ok(s + 2)) b = lse(b, beta[(t + 1) * S + s + 2]);
            beta[t * S + s] = b <= kLogZero ? kLogZero : b + at(t, s);
        }
    }
    double log_p = alpha[(T - 1) * S + S - 1];
    if (S > 1) log_p = lse(log_p, alpha[(T - 1) * S + S - 2]);

    std::vector<double> grad(T * C, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t s = 0; s < S; ++s) {
            const double ab = alpha[t * S + s] + beta[t * S + s];
            if (ab <= kLogZero) continue;
            grad[t * C + ext[s]] -= std::exp(ab - at(t, s) - log_p);
        }
    }
    auto g = std::make_shared<std::vector<double>>(std::move(grad));
    return ops::custom("ctc_loss", {log_probs}, {1}, {-log_p}, [g](std::span<const double> out_grad) {
        std::vector<double> d(*g);
        for (double& v : d) v *= out_grad[0];
        return std::vector<std::vector<double>>{std::move(d)};
    });
}

std::vector<std::size_t> ctc_collapse(const std::vector<std::size_t>& path) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < path.size(); ++i) {
        if (i > 0 && path[i] == path[i - 1]) continue;
        if (path[i] != kBlank) out.push_back(path[i]);
    }
    return out;
}

BruteForceCtc ctc_loss_bruteforce(const Tensor& probs, const std::vector<std::size_t>& target) {
    if (probs.rank() != 2) throw std::invalid_argument("ctc_loss_bruteforce: probs must be [T, V+1]");
    const std::size_t T = probs.dim(0), C = probs.dim(1);
    double paths = 1;
    for (std::size_t t = 0; t < T; ++t) paths *= static_cast<double>(C);
    if (paths > 1e6) {
        throw std::invalid_argument("ctc_loss_bruteforce: " + std::to_string(C) + "^" + std::to_string(T) +
                                    " paths exceed the 1e6 limit");
    }
    auto p = probs.data();
    std::vector<std::size_t> path(T, 0);
    BruteForceCtc r;
    while (true) {
        if (ctc_collapse(path) == target) {
            double q = 1;
            for (std::size_t t = 0; t < T; ++t) q *= p[t * C + path[t]];
            r.probability += q;
        }
        std::size_t t = 0;
        while (t < T && ++path[t] == C) path[t++] = 0;
        if (t == T) break;
    }
    r.loss = r.probability > 0 ? -std::log(r.probability) : std::numeric_limits<double>::infinity();
    return r;
}

std::vector<std::size_t> greedy_decode(const Tensor& log_probs) {
    const std::size_t T = log_probs.dim(0), C = log_probs.dim(1);
    auto lp = log_probs.data();
    std::vector<std::size_t> path(T);
    for (std::size_t t = 0; t < T; ++t) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < C; ++k) {
            if (lp[t * C + k] > lp[t * C + best]) best = k;
        }
        path[t] = best;
    }
    return ctc_collapse(path);
}

WerReport wer(const std::vector<std::size_t>& hyp, const std::vector<std::size_t>& ref) {
    if (ref.empty()) throw std::invalid_argument("wer: reference must be non-empty");
    const std::size_t R = ref.size(), H = hyp.size();
    // Cost = (edits, -substitutions), compared lexicographically.
    using Cost = std::pair<std::size_t, long>;
    auto plus = [](Cost c, std::size_t e, long s) { return Cost{c.first + e, c.second - s}; };
    std::vector<Cost> d((R + 1) * (H + 1));
    auto D = [&](std::size_t i, std::size_t j) -> Cost& { return d[i * (H + 1) + j]; };
    for (std::size_t i = 0; i <= R; ++i) D(i, 0) = {i, 0};
    for (std::size_t j = 0; j <= H; ++j) D(0, j) = {j, 0};
    auto diag = [&](std::size_t i, std::size_t j) {
        const bool same = ref[i - 1] == hyp[j - 1];
        return plus(D(i - 1, j - 1), same ? 0 : 1, same ? 0 : 1);
    };
    for (std::size_t i = 1; i <= R; ++i) {
        for (std::size_t j = 1; j <= H; ++j) {
            D(i, j) = std::min({diag(i, j), plus(D(i - 1, j), 1, 0), plus(D(i, j - 1), 1, 0)});
        }
    }
    WerReport rep;
    rep.ref_len = R;
    std::size_t i = R, j = H;
    while (i > 0 || j > 0) {
        if (i > 0 && j > 0 && diag(i, j) == D(i, j)) {
            rep.sub += ref[i - 1] != hyp[j - 1];
            --i;
            --j;
        } else if (i > 0 && plus(D(i - 1, j), 1, 0) == D(i, j)) {
            ++rep.del;
            --i;
        } else {
            ++rep.ins;
            --j;
        }
    }
    rep.wer = static_cast<double>(rep.errors()) / static_cast<double>(R);
    return rep;
}

}  // namespace mixsign
