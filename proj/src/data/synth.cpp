#include "mixsign/data/synth.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace mixsign {

void SynthSpec::validate() const {
    if (glosses.size() < 2) throw std::invalid_argument("synth spec needs at least two glosses");
    if (frames_min < 1 || frames_max < frames_min) throw std::invalid_argument("synth spec frames range is empty");
    if (glosses_min < 1 || glosses_max < glosses_min) throw std::invalid_argument("synth spec glosses range is empty");
    if (height < 8 || width < 8) throw std::invalid_argument("synth spec frame size too small");
    if (train < 1 || dev < 1 || test < 1) throw std::invalid_argument("synth spec split sizes must be >= 1");
    if (angle_jitter < 0 || angle_jitter >= 0.5) throw std::invalid_argument("synth spec angle_jitter must be in [0, 0.5)");
    for (double p : {p_swap, p_inflect, p_insert}) {
        if (p < 0 || p > 1) throw std::invalid_argument("synth spec probabilities must be in [0, 1]");
    }
    if (inflections.empty() || function_words.empty()) throw std::invalid_argument("synth spec word tables must be non-empty");
}

nlohmann::json SynthSpec::to_json() const {
    return nlohmann::json{{"glosses", glosses},
                          {"frames_min", frames_min},
                          {"frames_max", frames_max},
                          {"glosses_min", glosses_min},
                          {"glosses_max", glosses_max},
                          {"height", height},
                          {"width", width},
                          {"hand_radius", hand_radius},
                          {"orbit_radius", orbit_radius},
                          {"sweep", sweep},
                          {"noise", noise},
                          {"angle_jitter", angle_jitter},
                          {"distractor", distractor},
                          {"train", train},
                          {"dev", dev},
                          {"test", test},
                          {"p_swap", p_swap},
                          {"p_inflect", p_inflect},
                          {"p_insert", p_insert},
                          {"inflections", inflections},
                          {"function_words", function_words}};
}

SynthSpec SynthSpec::from_json(const nlohmann::json& j) {
    SynthSpec s;
    const nlohmann::json defaults = s.to_json();
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!defaults.contains(it.key())) throw std::invalid_argument("unknown synth spec key '" + it.key() + "'");
    }
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    get("glosses", s.glosses);
    get("frames_min", s.frames_min);
    get("frames_max", s.frames_max);
    get("glosses_min", s.glosses_min);
    get("glosses_max", s.glosses_max);
    get("height", s.height);
    get("width", s.width);
    get("hand_radius", s.hand_radius);
    get("orbit_radius", s.orbit_radius);
    get("sweep", s.sweep);
    get("noise", s.noise);
    get("angle_jitter", s.angle_jitter);
    get("distractor", s.distractor);
    get("train", s.train);
    get("dev", s.dev);
    get("test", s.test);
    get("p_swap", s.p_swap);
    get("p_inflect", s.p_inflect);
    get("p_insert", s.p_insert);
    get("inflections", s.inflections);
    get("function_words", s.function_words);
    s.validate();
    return s;
}

namespace {

struct Blob {
    double x, y, r;
    int shape;  // 0 disk, 1 square, 2 diamond
    double color[3];
};

void paint(std::vector<double>& img, std::size_t h, std::size_t w, const Blob& b) {
    const auto y0 = static_cast<long>(std::floor(b.y - b.r - 2)), y1 = static_cast<long>(std::ceil(b.y + b.r + 2));
    const auto x0 = static_cast<long>(std::floor(b.x - b.r - 2)), x1 = static_cast<long>(std::ceil(b.x + b.r + 2));
    for (long y = std::max(0L, y0); y <= std::min<long>(static_cast<long>(h) - 1, y1); ++y) {
        for (long x = std::max(0L, x0); x <= std::min<long>(static_cast<long>(w) - 1, x1); ++x) {
            const double dx = std::abs(x + 0.5 - b.x), dy = std::abs(y + 0.5 - b.y);
            const double d = b.shape == 0 ? std::hypot(dx, dy) : b.shape == 1 ? std::max(dx, dy) : (dx + dy) / 1.3;
            const double alpha = std::clamp(b.r + 0.5 - d, 0.0, 1.0);
            if (alpha <= 0) continue;
            double* px = &img[(static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)) * 3];
            for (int c = 0; c < 3; ++c) px[c] = (1 - alpha) * px[c] + alpha * b.color[c];
        }
    }
}

}  // namespace

Tensor render_gloss_clip(std::size_t gloss_id, const SynthSpec& spec, Rng& rng) {
    if (gloss_id >= spec.num_glosses()) {
        throw std::invalid_argument("render_gloss_clip: gloss id " + std::to_string(gloss_id) + " >= " +
                                    std::to_string(spec.num_glosses()));
    }
    const std::size_t h = spec.height, w = spec.width;
    const auto n = static_cast<std::size_t>(rng.range(static_cast<int>(spec.frames_min), static_cast<int>(spec.frames_max)));
    const double two_pi = 2 * std::numbers::pi;
    const double spacing = two_pi / static_cast<double>(spec.num_glosses());
    const double start = spacing * static_cast<double>(gloss_id) + rng.uniform(-1, 1) * spec.angle_jitter * spacing;
    const double fx = w * 0.5 + rng.uniform(-1.5, 1.5), fy = h * 0.2 + rng.uniform(-1.5, 1.5);
    const double cx = w * 0.5 + rng.uniform(-1.5, 1.5), cy = h * 0.62 + rng.uniform(-1.5, 1.5);
    const int shape = static_cast<int>(gloss_id % 3);
    double dx = rng.uniform(0, static_cast<double>(w)), dy = rng.uniform(0, static_cast<double>(h));
    const double vx = rng.uniform(-3, 3), vy = rng.uniform(-3, 3);

    std::vector<double> data(n * h * w * 3);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> img(h * w * 3);
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                double* px = &img[(y * w + x) * 3];
                px[0] = 0.25 + 0.5 * static_cast<double>(x) / static_cast<double>(w);
                px[1] = 0.25 + 0.5 * static_cast<double>(y) / static_cast<double>(h);
                px[2] = 0.45;
            }
        }
        const double u = n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;
        const double a = start + spec.sweep * u;
        const double rx = cx + spec.orbit_radius * std::cos(a), ry = cy + spec.orbit_radius * std::sin(a) * 0.8;
        paint(img, h, w, Blob{fx, fy, 7.0, 0, {0.9, 0.75, 0.6}});
        if (spec.distractor) {
            paint(img, h, w, Blob{dx + vx * static_cast<double>(i), dy + vy * static_cast<double>(i), 3.0, 0, {0.5, 0.5, 0.5}});
        }
        paint(img, h, w, Blob{static_cast<double>(w) - rx, ry, spec.hand_radius, shape, {0.85, 0.2, 0.15}});
        paint(img, h, w, Blob{rx, ry, spec.hand_radius, shape, {0.15, 0.25, 0.85}});
        for (std::size_t k = 0; k < img.size(); ++k) {
            const double v = std::clamp(img[k] + spec.noise * rng.normal(), 0.0, 1.0);
            data[i * h * w * 3 + k] = static_cast<double>(static_cast<float>(v));
        }
    }
    return Tensor({n, h, w, 3}, std::move(data));
}

std::string derive_text(const std::vector<std::string>& gloss_tokens, const SynthSpec& spec, Rng& rng) {
    if (gloss_tokens.empty()) throw std::invalid_argument("derive_text: empty gloss sequence");
    std::vector<std::string> words = gloss_tokens;
    for (std::size_t i = 0; i + 1 < words.size();) {
        if (rng.bernoulli(spec.p_swap)) {
            std::swap(words[i], words[i + 1]);
            i += 2;
        } else {
            i += 1;
        }
    }
    for (auto& word : words) {
        if (rng.bernoulli(spec.p_inflect)) word += spec.inflections[rng.below(spec.inflections.size())];
    }
    if (rng.bernoulli(spec.p_insert)) {
        const auto pos = static_cast<std::ptrdiff_t>(rng.below(words.size() + 1));
        words.insert(words.begin() + pos, spec.function_words[rng.below(spec.function_words.size())]);
    }
    std::string text;
    for (const auto& word : words) text += (text.empty() ? "" : " ") + word;
    return text + ".";
}

namespace {

Rng sample_root(std::uint64_t seed, const std::string& split, std::size_t index) {
    return Rng::stream(seed, {hash_name(split.c_str()), index});
}

}  // namespace

std::vector<std::size_t> sample_gloss_ids(const SynthSpec& spec, std::uint64_t seed, const std::string& split,
                                          std::size_t index) {
    Rng pick = sample_root(seed, split, index).substream({0});
    const auto len = static_cast<std::size_t>(pick.range(static_cast<int>(spec.glosses_min), static_cast<int>(spec.glosses_max)));
    const std::size_t g = spec.num_glosses();
    std::vector<std::size_t> ids;
    for (std::size_t k = 0; k < len; ++k) ids.push_back(k == 0 ? pick.below(g) : (ids.back() + 1 + pick.below(g - 1)) % g);
    return ids;
}

SynthSample make_sample(const SynthSpec& spec, std::uint64_t seed, const std::string& split, std::size_t index) {
    Rng root = sample_root(seed, split, index);
    SynthSample s;
    std::ostringstream id;
    id << split << '_' << std::setw(4) << std::setfill('0') << index;
    s.id = id.str();
    s.gloss_ids = sample_gloss_ids(spec, seed, split, index);
    const std::size_t len = s.gloss_ids.size();
    std::vector<Tensor> clips;
    std::size_t total = 0;
    for (std::size_t k = 0; k < len; ++k) {
        Rng clip_rng = root.substream({1, k});
        clips.push_back(render_gloss_clip(s.gloss_ids[k], spec, clip_rng));
        total += clips.back().dim(0);
    }
    std::vector<double> frames;
    frames.reserve(total * spec.height * spec.width * 3);
    for (const auto& c : clips) frames.insert(frames.end(), c.data().begin(), c.data().end());
    s.frames = Tensor({total, spec.height, spec.width, 3}, std::move(frames));
    std::vector<std::string> words;
    for (std::size_t gid : s.gloss_ids) words.push_back(spec.glosses[gid]);
    Rng text_rng = root.substream({2});
    s.text = derive_text(words, spec, text_rng);
    return s;
}

std::vector<unsigned char> msgf_bytes(const Tensor& frames) {
    if (frames.rank() != 4) throw std::invalid_argument("MSGF frames must be [T, H, W, C], got " + shape_str(frames.shape()));
    std::vector<unsigned char> out{'M', 'S', 'G', 'F'};
    auto put32 = [&](std::uint32_t v) {
        for (int k = 0; k < 4; ++k) out.push_back(static_cast<unsigned char>(v >> (8 * k)));
    };
    for (std::size_t d : frames.shape()) put32(static_cast<std::uint32_t>(d));
    for (double v : frames.data()) put32(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    return out;
}

void write_msgf(const std::filesystem::path& path, const Tensor& frames) {
    auto bytes = msgf_bytes(frames);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("failed writing " + path.string());
}

Tensor read_msgf(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path.string());
    std::vector<unsigned char> b((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (b.size() < 20 || std::memcmp(b.data(), "MSGF", 4) != 0) throw std::runtime_error(path.string() + " is not an MSGF file");
    auto get32 = [&](std::size_t off) {
        std::uint32_t v = 0;
        for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(b[off + static_cast<std::size_t>(k)]) << (8 * k);
        return v;
    };
    Shape shape;
    for (std::size_t k = 0; k < 4; ++k) shape.push_back(get32(4 + 4 * k));
    const std::size_t n = shape_numel(shape);
    if (b.size() != 20 + 4 * n) {
        throw std::runtime_error(path.string() + ": expected " + std::to_string(20 + 4 * n) + " bytes, found " +
                                 std::to_string(b.size()));
    }
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<double>(std::bit_cast<float>(get32(20 + 4 * i)));
    return Tensor(shape, std::move(data));
}

const std::vector<SampleMeta>& Dataset::split(const std::string& name) const {
    auto it = splits.find(name);
    if (it == splits.end()) throw std::invalid_argument("dataset has no split '" + name + "'");
    return it->second;
}

const SampleMeta& Dataset::find(const std::string& id) const {
    for (const auto& [name, samples] : splits) {
        for (const auto& s : samples) {
            if (s.id == id) return s;
        }
    }
    throw std::invalid_argument("dataset has no sample '" + id + "'");
}

Tensor Dataset::load_frames(const SampleMeta& s) const { return read_msgf(root / s.frames_file); }

std::map<std::string, std::size_t> gen_corpus(const SynthSpec& spec, std::uint64_t seed,
                                              const std::filesystem::path& out_dir) {
    spec.validate();
    std::error_code ec;
    std::filesystem::create_directories(out_dir / "frames", ec);
    if (ec) throw std::runtime_error("cannot create dataset directory " + (out_dir / "frames").string() + ": " + ec.message());
    nlohmann::ordered_json manifest;
    manifest["version"] = 1;
    manifest["frame_format"] = "MSGF";
    manifest["seed"] = seed;
    manifest["spec"] = spec.to_json();
    manifest["glosses"] = spec.glosses;
    manifest["splits"] = nlohmann::ordered_json::object();
    manifest["samples"] = nlohmann::ordered_json::array();
    std::map<std::string, std::size_t> counts;
    for (auto [name, n] : {std::pair<const char*, std::size_t>{"train", spec.train}, {"dev", spec.dev}, {"test", spec.test}}) {
        auto ids = nlohmann::ordered_json::array();
        for (std::size_t i = 0; i < n; ++i) {
            SynthSample s = make_sample(spec, seed, name, i);
            const std::string file = "frames/" + s.id + ".msgf";
            write_msgf(out_dir / file, s.frames);
            ids.push_back(s.id);
            manifest["samples"].push_back(
                {{"id", s.id}, {"gloss_ids", s.gloss_ids}, {"text", s.text}, {"frames_file", file}, {"T", s.frames.dim(0)}});
        }
        manifest["splits"][name] = std::move(ids);
        counts[name] = n;
    }
    std::ofstream f(out_dir / "manifest.json", std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + (out_dir / "manifest.json").string());
    f << manifest.dump(2) << "\n";
    return counts;
}

Dataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream f(dir / "manifest.json", std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + (dir / "manifest.json").string());
    auto j = nlohmann::json::parse(f);
    if (j.at("version").get<int>() != 1 || j.at("frame_format").get<std::string>() != "MSGF") {
        throw std::runtime_error("unsupported dataset manifest in " + dir.string());
    }
    Dataset d;
    d.root = dir;
    d.glosses = j.at("glosses").get<std::vector<std::string>>();
    std::map<std::string, SampleMeta> by_id;
    for (const auto& s : j.at("samples")) {
        SampleMeta m{s.at("id"), s.at("gloss_ids").get<std::vector<std::size_t>>(), s.at("text"), s.at("frames_file"), s.at("T")};
        by_id.emplace(m.id, std::move(m));
    }
    for (auto it = j.at("splits").begin(); it != j.at("splits").end(); ++it) {
        auto& out = d.splits[it.key()];
        for (const auto& id : it.value()) {
            auto m = by_id.find(id.get<std::string>());
            if (m == by_id.end()) throw std::runtime_error("manifest split lists unknown sample " + id.get<std::string>());
            out.push_back(m->second);
        }
    }
    return d;
}

}  // namespace mixsign
