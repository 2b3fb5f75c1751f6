#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mixsign/tensor/tensor.h"

namespace mixsign {

inline constexpr std::size_t kBlank = 0;

// Token <-> id table with the CTC blank fixed at id 0; real tokens take ids
// 1..V in insertion order.
class GlossVocab {
public:
    GlossVocab() = default;
    explicit GlossVocab(std::vector<std::string> tokens);

    std::size_t add(const std::string& token);  // returns the (possibly existing) id
    std::optional<std::size_t> find(const std::string& token) const;
    std::size_t id(const std::string& token) const;  // throws if absent
    const std::string& token(std::size_t id) const;  // id in [1, V]
    std::size_t size() const { return tokens_.size() + 1; }  // V + 1
    const std::vector<std::string>& tokens() const { return tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Minimum number of frames that can emit `target`: one per label plus one
// separating blank between equal neighbours.
std::size_t ctc_min_frames(const std::vector<std::size_t>& target);

// -log sum over alignments collapsing to target, by the log-space forward
// recursion over the blank-extended label sequence. log_probs [T', V+1] are
// used as given (normally log-softmax output); the gradient flows back to
// them through the tape. An empty target is the all-blank path.
Tensor ctc_loss(const Tensor& log_probs, const std::vector<std::size_t>& target);

// Enumerates all (V+1)^T' label paths (at most 1e6). probs: [T', V+1].
struct BruteForceCtc {
    double probability = 0.0;
    double loss = 0.0;  // +inf when no path collapses to the target
};
BruteForceCtc ctc_loss_bruteforce(const Tensor& probs, const std::vector<std::size_t>& target);

// Per-step argmax (ties to the lowest id), merge repeats, drop blanks.
std::vector<std::size_t> greedy_decode(const Tensor& log_probs);
// Collapse rule applied to an explicit path.
std::vector<std::size_t> ctc_collapse(const std::vector<std::size_t>& path);

struct WerReport {
    double wer = 0.0;
    std::size_t del = 0, ins = 0, sub = 0, ref_len = 0;
    std::size_t errors() const { return del + ins + sub; }
};

// Unit-cost edit distance. Among minimal scripts the one with the most
// substitutions is reported (backtrace preference sub > del > ins); with
// the edit count fixed this makes del and ins unique, so swapping hyp and
// ref swaps them exactly.
WerReport wer(const std::vector<std::size_t>& hyp, const std::vector<std::size_t>& ref);

}  // namespace mixsign
