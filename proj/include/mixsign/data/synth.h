#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "mixsign/tensor/tensor.h"
#include "mixsign/util/rng.h"

namespace mixsign {

// Synthetic signing corpus. Every gloss is a clip in which two "hand" blobs
// circle below a static "face" blob. Gloss g starts its circle at angle
// 2*pi*g/G (jittered by at most a quarter of that spacing, so the start
// angle ranges of different glosses never overlap) and draws both hands
// with shape g mod 3. A fixed colour-gradient background, pixel noise and a
// random distractor blob complete each frame.
struct SynthSpec {
    std::vector<std::string> glosses{"house", "give", "friend", "tomorrow", "rain", "book",
                                     "eat",   "go",   "see",    "happy",    "work", "school"};
    std::size_t frames_min = 4, frames_max = 8;  // per gloss clip
    std::size_t glosses_min = 1, glosses_max = 5;  // per sample
    std::size_t height = 64, width = 64;
    double hand_radius = 5.0;
    double orbit_radius = 14.0;
    double sweep = 1.5707963267948966;  // radians covered by one clip
    double noise = 0.08;
    double angle_jitter = 0.25;  // fraction of the gloss angle spacing
    bool distractor = true;
    std::size_t train = 200, dev = 30, test = 30;
    // Text derivation.
    double p_swap = 0.5;
    double p_inflect = 0.3;
    double p_insert = 0.3;
    std::vector<std::string> inflections{"s", "ed", "ing"};
    std::vector<std::string> function_words{"the", "a", "to", "of", "and"};

    std::size_t num_glosses() const { return glosses.size(); }
    void validate() const;
    nlohmann::json to_json() const;
    static SynthSpec from_json(const nlohmann::json& j);  // unknown keys rejected
};

// Frames [n, H, W, 3] in [0, 1], all values exactly representable as float32.
Tensor render_gloss_clip(std::size_t gloss_id, const SynthSpec& spec, Rng& rng);

// Gloss words with local swaps, synthetic inflections and inserted function
// words, joined with spaces and ending in ".".
std::string derive_text(const std::vector<std::string>& gloss_tokens, const SynthSpec& spec, Rng& rng);

struct SynthSample {
    std::string id;
    std::vector<std::size_t> gloss_ids;  // 0-based gloss indices
    std::string text;
    Tensor frames;  // [T, H, W, 3]
};

// Gloss sequence of a sample without rendering; no gloss repeats back to back.
std::vector<std::size_t> sample_gloss_ids(const SynthSpec& spec, std::uint64_t seed, const std::string& split,
                                          std::size_t index);

// Pure function of (spec, seed, split, index).
SynthSample make_sample(const SynthSpec& spec, std::uint64_t seed, const std::string& split, std::size_t index);

// MSGF: "MSGF", four uint32 LE extents (T, H, W, C), then float32 LE values.
void write_msgf(const std::filesystem::path& path, const Tensor& frames);
Tensor read_msgf(const std::filesystem::path& path);
std::vector<unsigned char> msgf_bytes(const Tensor& frames);

struct SampleMeta {
    std::string id;
    std::vector<std::size_t> gloss_ids;
    std::string text;
    std::string frames_file;
    std::size_t frames = 0;
};

struct Dataset {
    std::filesystem::path root;
    std::vector<std::string> glosses;
    std::map<std::string, std::vector<SampleMeta>> splits;

    const std::vector<SampleMeta>& split(const std::string& name) const;  // throws on unknown split
    const SampleMeta& find(const std::string& id) const;
    Tensor load_frames(const SampleMeta& s) const;
};

// Writes manifest.json and one MSGF file per sample under out_dir; returns
// the sample count per split.
std::map<std::string, std::size_t> gen_corpus(const SynthSpec& spec, std::uint64_t seed,
                                              const std::filesystem::path& out_dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace mixsign
