#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "mixsign/ctc/ctc.h"
#include "mixsign/tensor/tensor.h"

namespace mixsign {

using Lemmatizer = std::function<std::string(const std::string&)>;

std::string identity_lemmatizer(const std::string& w);
// Strips the synthetic inflections {ing, ed, s} repeatedly while at least two
// characters of stem remain, so repeated application is a no-op.
std::string suffix_lemmatizer(const std::string& w);

// Punctuation is Unicode general category P*; the frozen code point list is
// in tcp.cpp. Lowercasing covers ASCII and Latin-1 letters.
struct NormalizerConfig {
    bool lowercase = true;
    Lemmatizer lemmatizer = identity_lemmatizer;
    std::set<std::string> drop_words;  // applied after lemmatization
};

bool is_punctuation(char32_t cp);

// Strip punctuation, optionally lowercase, split on whitespace, lemmatize.
std::vector<std::string> make_pseudo_gloss(std::string_view text, const NormalizerConfig& cfg = {});

// Ids by descending frequency, then lexicographic; id 0 stays the blank.
GlossVocab build_vocab(const std::vector<std::vector<std::string>>& corpus);

// Tokens missing from the vocabulary are dropped and counted.
std::vector<std::size_t> to_ids(const std::vector<std::string>& tokens, const GlossVocab& vocab,
                                std::size_t* unknown = nullptr);

// {"version":1,"lowercase":bool,"tokens":[...]} with position i holding id i+1.
std::string vocab_json(const GlossVocab& vocab, bool lowercase);
void save_vocab(const GlossVocab& vocab, bool lowercase, const std::filesystem::path& path);
GlossVocab load_vocab(const std::filesystem::path& path, bool* lowercase = nullptr);

// Mean cosine similarity of consecutive rows of seq [T', D], T' >= 2. A zero
// row has similarity 0 with anything.
double feature_dispersion(const Tensor& seq);

}  // namespace mixsign
