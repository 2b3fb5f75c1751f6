#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "mixsign/tcp/tcp.h"
#include "mixsign/util/rng.h"

using namespace mixsign;
using Words = std::vector<std::string>;

namespace {

std::string join(const Words& w) {
    std::string s;
    for (const auto& t : w) s += (s.empty() ? "" : " ") + t;
    return s;
}

}  // namespace

TEST(PseudoGloss, Examples) {
    EXPECT_EQ(make_pseudo_gloss("There are results pending for 20 other tests"),
              (Words{"there", "are", "results", "pending", "for", "20", "other", "tests"}));
    EXPECT_TRUE(make_pseudo_gloss("").empty());
    EXPECT_EQ(make_pseudo_gloss("Hello, hello!"), (Words{"hello", "hello"}));
}

TEST(PseudoGloss, UnicodePunctuationAndCase) {
    EXPECT_EQ(make_pseudo_gloss("\xC2\xBF" "Qu\xC3\x89? \xE2\x80\x9Csi\xE2\x80\x9D \xE2\x80\x94 ok\xE3\x80\x82"),
              (Words{"qu\xC3\xA9", "si", "ok"}));
    NormalizerConfig keep;
    keep.lowercase = false;
    EXPECT_EQ(make_pseudo_gloss("HAUS, morgen", keep), (Words{"HAUS", "morgen"}));
    EXPECT_THROW(make_pseudo_gloss("\xC3"), std::invalid_argument);
}

TEST(PseudoGloss, SuffixLemmatizerAndFunctionWords) {
    NormalizerConfig cfg;
    cfg.lemmatizer = suffix_lemmatizer;
    EXPECT_EQ(make_pseudo_gloss("Houses gived eating is go.", cfg), (Words{"house", "giv", "eat", "is", "go"}));
    cfg.drop_words = {"the", "is"};
    EXPECT_EQ(make_pseudo_gloss("The book is here", cfg), (Words{"book", "here"}));
}

TEST(PseudoGloss, IdempotentAndNeverLonger) {
    Rng rng = Rng::stream(1);
    const std::string alphabet = "abcAB  ,.!?-'s";
    for (int trial = 0; trial < 500; ++trial) {
        std::string text;
        for (std::size_t i = 0, n = rng.below(30); i < n; ++i) text += alphabet[rng.below(alphabet.size())];
        for (auto lem : {Lemmatizer(identity_lemmatizer), Lemmatizer(suffix_lemmatizer)}) {
            NormalizerConfig cfg;
            cfg.lemmatizer = lem;
            auto once = make_pseudo_gloss(text, cfg);
            EXPECT_EQ(make_pseudo_gloss(join(once), cfg), once) << text;
            std::size_t raw = 0;
            for (std::size_t i = 0; i < text.size(); ++i) raw += text[i] != ' ' && (i == 0 || text[i - 1] == ' ');
            EXPECT_LE(once.size(), raw);
        }
    }
}

TEST(BuildVocab, FrequencyThenLexicographic) {
    auto v = build_vocab({{"a", "b"}, {"a"}});
    EXPECT_EQ(v.id("a"), 1u);
    EXPECT_EQ(v.id("b"), 2u);
    auto w = build_vocab({{"z", "y", "x", "y"}});
    EXPECT_EQ(w.tokens(), (Words{"y", "x", "z"}));
    EXPECT_EQ(build_vocab({{"p", "q", "r"}}).size(), 4u);
}

TEST(BuildVocab, StableUnderReorderingAndSerialization) {
    std::vector<Words> c{{"eat", "go"}, {"go", "see", "eat"}, {"rain"}};
    std::vector<Words> r{c[2], c[0], c[1]};
    EXPECT_EQ(build_vocab(c).tokens(), build_vocab(r).tokens());
    EXPECT_EQ(vocab_json(build_vocab(c), true), vocab_json(build_vocab(r), true));
    auto dir = std::filesystem::temp_directory_path() / "mixsign_tcp_test";
    std::filesystem::create_directories(dir);
    save_vocab(build_vocab(c), true, dir / "vocab.json");
    bool lower = false;
    auto back = load_vocab(dir / "vocab.json", &lower);
    EXPECT_TRUE(lower);
    EXPECT_EQ(back.tokens(), build_vocab(c).tokens());
    std::filesystem::remove_all(dir);
}

TEST(ToIds, UnknownTokensDroppedAndCounted) {
    auto v = build_vocab({{"a", "b"}});
    std::size_t unk = 0;
    EXPECT_EQ(to_ids({"a", "zz", "b", "qq"}, v, &unk), (std::vector<std::size_t>{1, 2}));
    EXPECT_EQ(unk, 2u);
}

TEST(Dispersion, Examples) {
    EXPECT_DOUBLE_EQ(feature_dispersion(Tensor({4, 3}, 0.7)), 1.0);
    EXPECT_DOUBLE_EQ(feature_dispersion(Tensor({4, 2}, {1, 0, 0, 1, 1, 0, 0, 1})), 0.0);
    EXPECT_NEAR(feature_dispersion(Tensor({2, 2}, {1, 0, 1, 1})), 1.0 / std::sqrt(2.0), 1e-15);
    EXPECT_THROW(feature_dispersion(Tensor({1, 2}, 1.0)), std::invalid_argument);
}
