#include "mixsign/tcp/tcp.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>
#include <utility>

#include "json.hpp"

namespace mixsign {

namespace {

// Category P* code points, frozen: ASCII, Latin-1, General Punctuation,
// CJK Symbols and Punctuation, and the fullwidth ASCII forms.
constexpr std::array<std::pair<char32_t, char32_t>, 28> kPunctuation{{
    {0x21, 0x23},     {0x25, 0x2A},     {0x2C, 0x2F},     {0x3A, 0x3B},     {0x3F, 0x40},
    {0x5B, 0x5D},     {0x5F, 0x5F},     {0x7B, 0x7B},     {0x7D, 0x7D},     {0xA1, 0xA1},
    {0xA7, 0xA7},     {0xAB, 0xAB},     {0xB6, 0xB7},     {0xBB, 0xBB},     {0xBF, 0xBF},
    {0x2010, 0x2027}, {0x2030, 0x2043}, {0x2045, 0x2051}, {0x2053, 0x205E}, {0x3001, 0x3003},
    {0x3008, 0x3011}, {0x3014, 0x301F}, {0xFF01, 0xFF03}, {0xFF05, 0xFF0A}, {0xFF0C, 0xFF0F},
    {0xFF1A, 0xFF1B}, {0xFF1F, 0xFF20}, {0xFF3B, 0xFF3D},
}};

std::u32string decode_utf8(std::string_view s) {
    std::u32string out;
    for (std::size_t i = 0; i < s.size();) {
        const auto c = static_cast<unsigned char>(s[i]);
        int extra = c < 0x80 ? 0 : (c >> 5) == 0x6 ? 1 : (c >> 4) == 0xE ? 2 : (c >> 3) == 0x1E ? 3 : -1;
        if (extra < 0 || i + static_cast<std::size_t>(extra) >= s.size()) {
            throw std::invalid_argument("make_pseudo_gloss: invalid UTF-8 at byte " + std::to_string(i));
        }
        char32_t cp = extra == 0 ? c : c & (0x3F >> extra);
        for (int k = 1; k <= extra; ++k) {
            const auto cc = static_cast<unsigned char>(s[i + static_cast<std::size_t>(k)]);
            if ((cc & 0xC0) != 0x80) throw std::invalid_argument("make_pseudo_gloss: invalid UTF-8 at byte " + std::to_string(i));
            cp = (cp << 6) | (cc & 0x3F);
        }
        out.push_back(cp);
        i += 1 + static_cast<std::size_t>(extra);
    }
    return out;
}

void append_utf8(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

char32_t to_lower(char32_t cp) {
    if (cp >= 'A' && cp <= 'Z') return cp + 32;
    if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 32;
    return cp;
}

bool is_space(char32_t cp) { return cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r' || cp == '\f' || cp == '\v'; }

bool ends_with(const std::string& s, std::string_view suf) {
    return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

}  // namespace

bool is_punctuation(char32_t cp) {
    return std::any_of(kPunctuation.begin(), kPunctuation.end(),
                       [cp](const auto& r) { return cp >= r.first && cp <= r.second; });
}

std::string identity_lemmatizer(const std::string& w) { return w; }

std::string suffix_lemmatizer(const std::string& w) {
    std::string s = w;
    for (bool changed = true; changed;) {
        changed = false;
        for (std::string_view suf : {"ing", "ed", "s"}) {
            if (ends_with(s, suf) && s.size() >= suf.size() + 2) {
                s.resize(s.size() - suf.size());
                changed = true;
                break;
            }
        }
    }
    return s;
}

std::vector<std::string> make_pseudo_gloss(std::string_view text, const NormalizerConfig& cfg) {
    std::vector<std::string> words;
    std::string cur;
    auto flush = [&] {
        if (cur.empty()) return;
        std::string w = cfg.lemmatizer ? cfg.lemmatizer(cur) : cur;
        if (!w.empty() && !cfg.drop_words.count(w)) words.push_back(std::move(w));
        cur.clear();
    };
    for (char32_t cp : decode_utf8(text)) {
        if (is_punctuation(cp)) continue;
        if (is_space(cp)) {
            flush();
            continue;
        }
        append_utf8(cur, cfg.lowercase ? to_lower(cp) : cp);
    }
    flush();
    return words;
}

GlossVocab build_vocab(const std::vector<std::vector<std::string>>& corpus) {
    std::map<std::string, std::size_t> freq;
    for (const auto& s : corpus)
        for (const auto& t : s) ++freq[t];
    std::vector<std::pair<std::string, std::size_t>> items(freq.begin(), freq.end());
    std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> tokens;
    for (auto& [t, n] : items) tokens.push_back(t);
    return GlossVocab(std::move(tokens));
}

std::vector<std::size_t> to_ids(const std::vector<std::string>& tokens, const GlossVocab& vocab, std::size_t* unknown) {
    std::vector<std::size_t> ids;
    for (const auto& t : tokens) {
        if (auto id = vocab.find(t)) {
            ids.push_back(*id);
        } else if (unknown) {
            ++*unknown;
        }
    }
    return ids;
}

std::string vocab_json(const GlossVocab& vocab, bool lowercase) {
    nlohmann::ordered_json j;
    j["version"] = 1;
    j["lowercase"] = lowercase;
    j["tokens"] = vocab.tokens();
    return j.dump(2) + "\n";
}

void save_vocab(const GlossVocab& vocab, bool lowercase, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write vocabulary file " + path.string());
    f << vocab_json(vocab, lowercase);
}

GlossVocab load_vocab(const std::filesystem::path& path, bool* lowercase) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read vocabulary file " + path.string());
    auto j = nlohmann::json::parse(f);
    if (j.at("version").get<int>() != 1) throw std::runtime_error("unsupported vocabulary version in " + path.string());
    if (lowercase) *lowercase = j.value("lowercase", true);
    return GlossVocab(j.at("tokens").get<std::vector<std::string>>());
}

double feature_dispersion(const Tensor& seq) {
    if (seq.rank() != 2 || seq.dim(0) < 2) {
        throw std::invalid_argument("feature_dispersion: needs at least 2 time steps, got " + shape_str(seq.shape()));
    }
    const std::size_t t_len = seq.dim(0), d = seq.dim(1);
    auto x = seq.data();
    double total = 0;
    for (std::size_t t = 0; t + 1 < t_len; ++t) {
        double dot = 0, na = 0, nb = 0;
        for (std::size_t k = 0; k < d; ++k) {
            const double a = x[t * d + k], b = x[(t + 1) * d + k];
            dot += a * b;
            na += a * a;
            nb += b * b;
        }
        total += (na == 0 || nb == 0) ? 0.0 : dot / std::sqrt(na * nb);
    }
    return total / static_cast<double>(t_len - 1);
}

}  // namespace mixsign
