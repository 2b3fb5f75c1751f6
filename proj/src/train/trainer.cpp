#include "mixsign/train/trainer.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "mixsign/tcp/tcp.h"
#include "mixsign/tensor/ops.h"
#include "mixsign/tensor/param_io.h"
#include "mixsign/train/adam.h"

namespace mixsign {

namespace fs = std::filesystem;

std::string_view to_string(Task t) {
    switch (t) {
        case Task::cslr: return "cslr";
        case Task::tcp_pretrain: return "tcp_pretrain";
        case Task::finetune_gloss: return "finetune_gloss";
        case Task::finetune_glossfree: return "finetune_glossfree";
    }
    return "?";
}

Task parse_task(std::string_view s) {
    for (Task t : {Task::cslr, Task::tcp_pretrain, Task::finetune_gloss, Task::finetune_glossfree}) {
        if (to_string(t) == s) return t;
    }
    throw std::invalid_argument("unknown task '" + std::string(s) + "'");
}

// ---------------------------------------------------------------- config

void TrainConfig::validate() const {
    model.validate();
    if (!(lr > 0) || !(decoder_lr > 0)) throw std::invalid_argument("learning rates must be > 0");
    if (weight_decay < 0) throw std::invalid_argument("weight_decay must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (!(decay_factor > 0 && decay_factor <= 1)) throw std::invalid_argument("decay_factor must be in (0, 1]");
    if (temporal_scale < 0 || temporal_scale >= 1) throw std::invalid_argument("temporal_scale must be in [0, 1)");
    if (lemmatizer != "suffix" && lemmatizer != "identity") {
        throw std::invalid_argument("lemmatizer must be 'suffix' or 'identity'");
    }
    if (decay_epochs) {
        for (std::size_t i = 1; i < decay_epochs->size(); ++i) {
            if ((*decay_epochs)[i] <= (*decay_epochs)[i - 1]) {
                throw std::invalid_argument("decay_epochs must be strictly increasing");
            }
        }
    }
}

std::vector<std::size_t> TrainConfig::resolved_decay_epochs() const {
    if (decay_epochs) return *decay_epochs;
    std::vector<std::size_t> out;
    for (double frac : {20.0 / 50.0, 30.0 / 50.0}) {
        const auto e = static_cast<std::size_t>(std::lround(frac * static_cast<double>(epochs)));
        if (e >= 1 && (out.empty() || e > out.back())) out.push_back(e);
    }
    return out;
}

double TrainConfig::lr_at(std::size_t epoch, double base) const {
    double lr_now = base;
    for (std::size_t d : resolved_decay_epochs()) {
        if (epoch > d) lr_now *= decay_factor;
    }
    return lr_now;
}

nlohmann::ordered_json TrainConfig::to_json() const {
    nlohmann::ordered_json j;
    j["dataset"] = dataset;
    j["task"] = std::string(to_string(task));
    j["model"] = nlohmann::ordered_json::parse(model.to_json().dump());
    j["lr"] = lr;
    j["decoder_lr"] = decoder_lr;
    j["weight_decay"] = weight_decay;
    j["epochs"] = epochs;
    j["decay_epochs"] = decay_epochs ? nlohmann::ordered_json(*decay_epochs) : nlohmann::ordered_json();
    j["decay_factor"] = decay_factor;
    j["batch_size"] = batch_size;
    j["seed"] = seed;
    j["temporal_scale"] = temporal_scale;
    j["lemmatizer"] = lemmatizer;
    j["drop_function_words"] = drop_function_words;
    j["init"] = init;
    j["max_train"] = max_train;
    return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("train config must be a JSON object");
    TrainConfig c;
    const auto known = c.to_json();
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!known.contains(it.key())) throw std::invalid_argument("unknown train config key '" + it.key() + "'");
    }
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    get("dataset", c.dataset);
    if (j.contains("task")) c.task = parse_task(j.at("task").get<std::string>());
    if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
    get("lr", c.lr);
    get("decoder_lr", c.decoder_lr);
    get("weight_decay", c.weight_decay);
    get("epochs", c.epochs);
    if (j.contains("decay_epochs") && !j.at("decay_epochs").is_null()) {
        c.decay_epochs = j.at("decay_epochs").get<std::vector<std::size_t>>();
    }
    get("decay_factor", c.decay_factor);
    get("batch_size", c.batch_size);
    get("seed", c.seed);
    get("temporal_scale", c.temporal_scale);
    get("lemmatizer", c.lemmatizer);
    get("drop_function_words", c.drop_function_words);
    get("init", c.init);
    get("max_train", c.max_train);
    c.validate();
    return c;
}

TrainConfig load_train_config(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::invalid_argument("cannot read config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return TrainConfig::from_json(j);
}

// ---------------------------------------------------------------- metrics

namespace {

std::string fmt(double v) {
    std::ostringstream o;
    o << std::setprecision(17) << v;
    return o.str();
}

}  // namespace

std::string metrics_row(const MetricsRecord& r) {
    std::ostringstream o;
    o << r.epoch << ',' << r.split << ',' << fmt(r.loss) << ',';
    if (r.wer) o << fmt(r.wer->wer) << ',' << r.wer->del << ',' << r.wer->ins << ',' << r.wer->sub;
    else o << ",,,";
    o << ',';
    if (r.dispersion) o << fmt(*r.dispersion);
    return o.str();
}

void TokenAccuracy::add(const std::vector<std::size_t>& hyp, const std::vector<std::size_t>& ref) {
    for (std::size_t i = 0; i < std::min(hyp.size(), ref.size()); ++i) correct += hyp[i] == ref[i] ? 1 : 0;
    total += std::max(hyp.size(), ref.size());
}

std::vector<std::string> TextVocab::tokenize(const std::string& text) const {
    return make_pseudo_gloss(text, NormalizerConfig{true, identity_lemmatizer, {}});
}

std::vector<std::size_t> TextVocab::encode(const std::string& text) const {
    std::vector<std::size_t> ids{kBos};
    for (const auto& w : tokenize(text)) {
        auto id = words.find(w);
        ids.push_back(id ? *id - 1 + kTextSpecials : kUnk);
    }
    ids.push_back(kEos);
    return ids;
}

Tensor resample_frames(const Tensor& frames, double factor) {
    const std::size_t t = frames.dim(0);
    const auto t2 = static_cast<std::size_t>(std::max(1L, std::lround(static_cast<double>(t) * factor)));
    const std::size_t frame = frames.numel() / t;
    std::vector<double> out(t2 * frame);
    for (std::size_t i = 0; i < t2; ++i) {
        const auto src = std::min(t - 1, static_cast<std::size_t>((static_cast<double>(i) + 0.5) *
                                                                  static_cast<double>(t) / static_cast<double>(t2)));
        std::copy_n(frames.data().begin() + static_cast<std::ptrdiff_t>(src * frame), frame,
                    out.begin() + static_cast<std::ptrdiff_t>(i * frame));
    }
    Shape shape = frames.shape();
    shape[0] = t2;
    return Tensor(shape, std::move(out));
}

// ---------------------------------------------------------------- checkpoints

namespace {

void write_text(const fs::path& p, const std::string& s) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + p.string());
    f << s;
}

nlohmann::json read_json(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + p.string());
    return nlohmann::json::parse(f);
}

// Copies values by name; every target must be present with the same shape.
void assign_parameters(const ParamList& target, const ParamList& source, const std::string& what) {
    std::map<std::string, const Tensor*> by_name;
    for (const auto& p : source) by_name[p.name] = &p.value;
    std::vector<std::string> bad;
    for (const auto& p : target) {
        auto it = by_name.find(p.name);
        if (it == by_name.end() || it->second->shape() != p.value.shape()) {
            bad.push_back(p.name + (it == by_name.end() ? " (missing)"
                                                        : " (" + shape_str(it->second->shape()) + " vs " +
                                                              shape_str(p.value.shape()) + ")"));
        }
    }
    if (!bad.empty()) {
        std::string msg = what + " does not match the model:";
        for (const auto& b : bad) msg += " " + b;
        throw std::invalid_argument(msg);
    }
    for (const auto& p : target) {
        const Tensor& src = *by_name.at(p.name);
        Tensor dst = p.value;
        std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
    }
}

}  // namespace

void save_checkpoint(const fs::path& dir, const ModelBundle& m, const ParamList& optimizer_state,
                     const CheckpointState& st) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
    write_text(dir / "config.json", m.config.to_json().dump(2) + "\n");
    save_parameters(m.parameters(), dir / "params.json", dir / "params.bin");
    save_parameters(optimizer_state, dir / "optimizer.json", dir / "optimizer.bin");
    nlohmann::ordered_json s;
    s["epoch"] = st.epoch;
    s["steps"] = st.steps;
    s["decoder_steps"] = st.decoder_steps;
    s["best_epoch"] = st.best_epoch;
    s["best_metric"] = fmt(st.best_metric);  // text keeps every bit
    s["seed"] = m.config.seed;
    write_text(dir / "state.json", s.dump(2) + "\n");
    save_vocab(m.vocab, true, dir / "vocab.json");
    if (m.text) save_vocab(m.text->words, true, dir / "text_vocab.json");
}

ModelBundle load_checkpoint(const fs::path& dir, CheckpointState* st, ParamList* optimizer_state) {
    if (!fs::is_directory(dir)) throw std::runtime_error("checkpoint " + dir.string() + " does not exist");
    ModelBundle m;
    m.config = TrainConfig::from_json(read_json(dir / "config.json"));
    m.vocab = load_vocab(dir / "vocab.json");
    Rng rng = Rng::stream(m.config.seed, {hash_name("init")});
    m.weights = init_model(m.config.model, m.vocab.size(), rng);
    if (fs::exists(dir / "text_vocab.json")) {
        m.text = TextVocab{load_vocab(dir / "text_vocab.json")};
        add_decoder(m.weights, m.config.model, m.text->size(), rng);
    }
    assign_parameters(m.parameters(), load_parameters(dir / "params.json", dir / "params.bin"),
                      "checkpoint " + dir.string());
    if (st) {
        auto s = read_json(dir / "state.json");
        st->epoch = s.at("epoch");
        st->steps = s.at("steps");
        st->decoder_steps = s.at("decoder_steps");
        st->best_epoch = s.at("best_epoch");
        st->best_metric = std::stod(s.at("best_metric").get<std::string>());
    }
    if (optimizer_state) *optimizer_state = load_parameters(dir / "optimizer.json", dir / "optimizer.bin");
    return m;
}

// ---------------------------------------------------------------- samples

namespace {

NormalizerConfig pseudo_normalizer(const TrainConfig& cfg, const SynthSpec& spec) {
    NormalizerConfig n;
    n.lemmatizer = cfg.lemmatizer == "suffix" ? Lemmatizer(suffix_lemmatizer) : Lemmatizer(identity_lemmatizer);
    if (cfg.drop_function_words) n.drop_words.insert(spec.function_words.begin(), spec.function_words.end());
    return n;
}

SynthSpec dataset_spec(const Dataset& data) {
    auto j = read_json(data.root / "manifest.json");
    return j.contains("spec") ? SynthSpec::from_json(j.at("spec")) : SynthSpec{};
}

struct Prepared {
    const SampleMeta* meta;
    std::vector<std::size_t> target;  // CTC target
    std::vector<std::size_t> text;    // decoder target, empty without a decoder
    bool feasible;
};

std::vector<Prepared> prepare(const ModelBundle& m, const Dataset& data, const std::string& split,
                              std::size_t limit, std::size_t* unknown_tokens) {
    const auto& metas = data.split(split);
    const std::size_t n = limit == 0 ? metas.size() : std::min(limit, metas.size());
    const SynthSpec spec = dataset_spec(data);
    const NormalizerConfig norm = pseudo_normalizer(m.config, spec);
    std::vector<Prepared> out;
    for (std::size_t i = 0; i < n; ++i) {
        const SampleMeta& s = metas[i];
        Prepared p{&s, {}, {}, true};
        if (uses_pseudo_gloss(m.config.task)) {
            std::size_t unk = 0;
            p.target = to_ids(make_pseudo_gloss(s.text, norm), m.vocab, &unk);
            if (unknown_tokens) *unknown_tokens += unk;
        } else {
            for (std::size_t g : s.gloss_ids) p.target.push_back(m.vocab.id(data.glosses.at(g)));
        }
        if (m.text) p.text = m.text->encode(s.text);
        p.feasible = s.frames >= kMinHeadFrames && ctc_min_frames(p.target) <= reduced_length(s.frames);
        out.push_back(std::move(p));
    }
    return out;
}

struct SampleLoss {
    Tensor total;
    double ctc = 0.0, ce = 0.0;
};

SampleLoss sample_loss(const ModelBundle& m, const Tensor& frames, const Prepared& p,
                       std::optional<std::uint64_t> drop_seed, ModelForward* fwd_out = nullptr) {
    ModelForward f = model_forward(frames, m.config.model, m.weights, drop_seed);
    Tensor ctc = ops::add(ctc_loss(ops::log_softmax(f.head.logits), p.target),
                          ctc_loss(ops::log_softmax(f.head.aux_logits), p.target));
    SampleLoss out{ctc, ctc.item(), 0.0};
    if (m.text) {
        Tensor ce = decoder_nll(translation_decoder(f.head.encoder, p.text, *m.weights.decoder, true).log_probs, p.text);
        out.ce = ce.item();
        out.total = ops::add(ctc, ce);
    }
    if (fwd_out) *fwd_out = std::move(f);
    return out;
}

std::vector<std::size_t> strip_text(const std::vector<std::size_t>& ids) {
    // Drop BOS/EOS around a reference sequence.
    return std::vector<std::size_t>(ids.begin() + 1, ids.end() - 1);
}

}  // namespace

MetricsRecord evaluate(const ModelBundle& m, const Dataset& data, const std::string& split, std::size_t epoch) {
    const auto samples = prepare(m, data, split, 0, nullptr);
    MetricsRecord r;
    r.epoch = epoch;
    r.split = split;
    WerReport total;
    double loss = 0, ce = 0, disp = 0;
    std::size_t n_loss = 0, n_disp = 0;
    TokenAccuracy acc;
    for (const auto& p : samples) {
        const Tensor frames = data.load_frames(*p.meta);
        if (frames.dim(0) < kMinHeadFrames) continue;
        ModelForward f = model_forward(frames, m.config.model, m.weights);
        const auto hyp = greedy_decode(ops::log_softmax(f.head.logits));
        const WerReport w = wer(hyp, p.target);
        total.del += w.del;
        total.ins += w.ins;
        total.sub += w.sub;
        total.ref_len += w.ref_len;
        if (p.feasible) {
            loss += ops::add(ctc_loss(ops::log_softmax(f.head.logits), p.target),
                             ctc_loss(ops::log_softmax(f.head.aux_logits), p.target))
                        .item();
            ++n_loss;
        }
        if (f.head.encoder.dim(0) >= 2) {
            disp += feature_dispersion(f.head.encoder);
            ++n_disp;
        }
        if (m.text) {
            const auto lp = translation_decoder(f.head.encoder, p.text, *m.weights.decoder, true).log_probs;
            ce += decoder_nll(lp, p.text).item();
            const auto out = translation_decoder(f.head.encoder, {}, *m.weights.decoder, false,
                                                 std::max<std::size_t>(32, 2 * p.text.size()));
            acc.add(out.tokens, strip_text(p.text));
        }
    }
    total.wer = total.ref_len == 0 ? 0.0 : static_cast<double>(total.errors()) / static_cast<double>(total.ref_len);
    r.wer = total;
    if (n_disp > 0) r.dispersion = disp / static_cast<double>(n_disp);
    const double mean_ctc = n_loss ? loss / static_cast<double>(n_loss) : 0.0;
    if (m.text) {
        r.ce_loss = samples.empty() ? 0.0 : ce / static_cast<double>(samples.size());
        r.token_accuracy = acc.value();
        r.loss = mean_ctc + *r.ce_loss;
    } else {
        r.loss = mean_ctc;
    }
    return r;
}

MetricsRecord evaluate(const fs::path& checkpoint, const std::string& split,
                       const std::optional<fs::path>& dataset_override) {
    const ModelBundle m = load_checkpoint(checkpoint);
    const Dataset data = load_dataset(dataset_override ? *dataset_override : fs::path(m.config.dataset));
    data.split(split);  // rejects unknown names before any work
    return evaluate(m, data, split);
}

// ---------------------------------------------------------------- training

namespace {

ParamList decoder_params(const ModelBundle& m) {
    ParamList ps;
    if (m.weights.decoder) collect(ps, "decoder", *m.weights.decoder);
    return ps;
}

ParamList recognition_params(const ModelBundle& m) {
    ParamList all = m.parameters(), out;
    for (auto& p : all) {
        if (p.name.rfind("decoder.", 0) != 0) out.push_back(p);
    }
    return out;
}

GlossVocab pseudo_vocab(const TrainConfig& cfg, const Dataset& data) {
    const NormalizerConfig norm = pseudo_normalizer(cfg, dataset_spec(data));
    std::vector<std::vector<std::string>> corpus;
    for (const auto& s : data.split("train")) corpus.push_back(make_pseudo_gloss(s.text, norm));
    return build_vocab(corpus);
}

TextVocab text_vocab(const Dataset& data) {
    TextVocab tv;
    std::vector<std::vector<std::string>> corpus;
    for (const auto& s : data.split("train")) corpus.push_back(tv.tokenize(s.text));
    tv.words = build_vocab(corpus);
    return tv;
}

// Fresh model for cfg; fine-tuning copies every recognition parameter from
// cfg.init and keeps a freshly initialised decoder.
ModelBundle build_model(const TrainConfig& cfg, const Dataset& data) {
    ModelBundle m;
    m.config = cfg;
    m.vocab = uses_pseudo_gloss(cfg.task) ? pseudo_vocab(cfg, data) : GlossVocab(data.glosses);
    Rng rng = Rng::stream(cfg.seed, {hash_name("init")});
    m.weights = init_model(cfg.model, m.vocab.size(), rng);
    if (has_decoder(cfg.task)) {
        m.text = text_vocab(data);
        Rng drng = Rng::stream(cfg.seed, {hash_name("decoder-init")});
        add_decoder(m.weights, cfg.model, m.text->size(), drng);
    }
    if (!cfg.init.empty()) {
        const ModelBundle init = load_checkpoint(cfg.init);
        if (init.vocab.tokens() != m.vocab.tokens()) {
            throw std::invalid_argument("init checkpoint " + cfg.init + " has a different CTC vocabulary (" +
                                        std::to_string(init.vocab.size()) + " vs " + std::to_string(m.vocab.size()) +
                                        " classes)");
        }
        assign_parameters(recognition_params(m), init.parameters(), "init checkpoint " + cfg.init);
    }
    return m;
}

class CsvAppender {
public:
    CsvAppender(const fs::path& path, const std::string& header, bool append) : path_(path) {
        if (!append || !fs::exists(path)) {
            std::ofstream f(path, std::ios::binary);
            if (!f) throw std::runtime_error("cannot write " + path.string());
            f << header << "\n";
        }
    }
    void row(const std::string& line) {
        std::ofstream f(path_, std::ios::binary | std::ios::app);
        if (!f) throw std::runtime_error("cannot append to " + path_.string());
        f << line << "\n";
    }

private:
    fs::path path_;
};

// Drops rows after `epoch` so a resumed run rewrites them exactly.
void truncate_csv(const fs::path& path, std::size_t epoch) {
    if (!fs::exists(path)) return;
    std::ifstream in(path, std::ios::binary);
    std::string line, kept;
    bool header = true;
    while (std::getline(in, line)) {
        if (!header) {
            const auto e = std::stoull(line.substr(0, line.find(',')));
            if (e > epoch) continue;
        }
        header = false;
        kept += line + "\n";
    }
    in.close();
    write_text(path, kept);
}

bool better(Task task, double candidate, double best) {
    return has_decoder(task) ? candidate > best : candidate < best;
}

double selection_metric(Task task, const MetricsRecord& dev) {
    return has_decoder(task) ? dev.token_accuracy.value_or(0.0) : dev.wer->wer;
}

ParamList optimizer_state(const Adam& rec, const std::optional<Adam>& dec) {
    ParamList s = rec.state();
    if (dec) {
        for (auto& e : dec->state()) s.push_back(e);
    }
    return s;
}

}  // namespace

RunResult run_training(const TrainConfig& cfg_in, const fs::path& out, const std::optional<fs::path>& resume,
                       std::ostream* log, std::size_t stop_after) {
    cfg_in.validate();
    if (has_decoder(cfg_in.task) == false && !cfg_in.init.empty()) {
        throw std::invalid_argument("init is only used by fine-tuning tasks");
    }
    ModelBundle m;
    CheckpointState st;
    ParamList opt_state;
    const Dataset data = load_dataset(cfg_in.dataset);
    if (resume) {
        m = load_checkpoint(*resume, &st, &opt_state);
        if (m.config.to_json() != cfg_in.to_json()) {
            // Only the epoch budget may change on resume.
            TrainConfig a = m.config, b = cfg_in;
            a.epochs = b.epochs = 0;
            if (a.to_json() != b.to_json()) throw std::invalid_argument("resume config differs from the checkpoint");
            m.config.epochs = cfg_in.epochs;
        }
    } else {
        m = build_model(cfg_in, data);
    }
    const TrainConfig& cfg = m.config;

    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + out.string() + ": " + ec.message());

    std::size_t unknown = 0;
    auto train = prepare(m, data, "train", cfg.max_train, nullptr);
    prepare(m, data, "dev", 0, &unknown);
    if (log && unknown > 0) *log << "dev: " << unknown << " pseudo-gloss tokens not in the train vocabulary\n";
    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < train.size(); ++i) {
        if (train[i].feasible) usable.push_back(i);
    }
    RunResult result;
    result.skipped_train = train.size() - usable.size();
    if (usable.empty()) {
        throw std::runtime_error("no CTC-feasible training samples (" + std::to_string(train.size()) + " skipped)");
    }
    if (log && result.skipped_train > 0) {
        *log << "train: skipped " << result.skipped_train << " CTC-infeasible samples\n";
    }

    Adam rec(recognition_params(m), AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
    std::optional<Adam> dec;
    if (m.text) dec.emplace(decoder_params(m), AdamConfig{cfg.decoder_lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
    if (resume) {
        const std::size_t n_rec = rec.state().size();
        rec.load_state(ParamList(opt_state.begin(), opt_state.begin() + static_cast<std::ptrdiff_t>(n_rec)), st.steps);
        if (dec) dec->load_state(ParamList(opt_state.begin() + static_cast<std::ptrdiff_t>(n_rec), opt_state.end()),
                                 st.decoder_steps);
    }

    const fs::path metrics_path = out / "metrics.csv", translation_path = out / "translation.csv";
    if (resume) {
        truncate_csv(metrics_path, st.epoch);
        truncate_csv(translation_path, st.epoch);
    }
    CsvAppender metrics(metrics_path, kMetricsHeader, resume.has_value());
    std::optional<CsvAppender> translation;
    if (m.text) translation.emplace(translation_path, "epoch,split,ce_loss,token_accuracy", resume.has_value());

    result.best = out / "best";
    result.last = out / "last";
    auto emit = [&](const MetricsRecord& train_row, const MetricsRecord& dev_row) {
        metrics.row(metrics_row(train_row));
        metrics.row(metrics_row(dev_row));
        if (translation) {
            translation->row(std::to_string(dev_row.epoch) + ",dev," + fmt(*dev_row.ce_loss) + "," +
                             fmt(*dev_row.token_accuracy));
        }
        result.metrics.push_back(train_row);
        result.metrics.push_back(dev_row);
    };
    auto log_epoch = [&](std::size_t epoch, const MetricsRecord& train_row, const MetricsRecord& dev_row,
                         std::optional<double> secs) {
        if (!log) return;
        *log << "epoch " << epoch << " train_loss " << train_row.loss << " dev_wer " << dev_row.wer->wer;
        if (dev_row.token_accuracy) *log << " dev_token_acc " << *dev_row.token_accuracy;
        if (dev_row.dispersion) *log << " dev_dispersion " << *dev_row.dispersion;
        if (secs) {
            std::ostringstream t;
            t << std::fixed << std::setprecision(1) << *secs;
            *log << " (" << t.str() << "s)";
        }
        *log << "\n";
    };

    if (!resume) {
        // Epoch 0: the initial model, before any update.
        MetricsRecord train_row;
        train_row.split = "train";
        double total = 0;
        for (std::size_t i : usable) total += sample_loss(m, data.load_frames(*train[i].meta), train[i], std::nullopt).total.item();
        train_row.loss = total / static_cast<double>(usable.size());
        const MetricsRecord dev_row = evaluate(m, data, "dev", 0);
        emit(train_row, dev_row);
        st = CheckpointState{0, 0, 0, 0, selection_metric(cfg.task, dev_row)};
        save_checkpoint(result.best, m, optimizer_state(rec, dec), st);
        save_checkpoint(result.last, m, optimizer_state(rec, dec), st);
        log_epoch(0, train_row, dev_row, std::nullopt);
    }

    const std::size_t final_epoch = stop_after > 0 ? std::min(stop_after, cfg.epochs) : cfg.epochs;
    for (std::size_t epoch = st.epoch + 1; epoch <= final_epoch; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        rec.set_lr(cfg.lr_at(epoch, cfg.lr));
        if (dec) dec->set_lr(cfg.lr_at(epoch, cfg.decoder_lr));
        std::vector<std::size_t> order = usable;
        Rng order_rng = Rng::stream(cfg.seed, {hash_name("order"), epoch});
        order_rng.shuffle(order);
        double total = 0;
        for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
            const std::size_t e = std::min(order.size(), b + cfg.batch_size);
            rec.zero_grad();
            if (dec) dec->zero_grad();
            for (std::size_t k = b; k < e; ++k) {
                const Prepared& p = train[order[k]];
                Tensor frames = data.load_frames(*p.meta);
                Rng aug = Rng::stream(cfg.seed, {hash_name("augment"), epoch, order[k]});
                if (cfg.temporal_scale > 0) {
                    Tensor scaled = resample_frames(frames, 1.0 + aug.uniform(-cfg.temporal_scale, cfg.temporal_scale));
                    // Keep the original clip when scaling would break CTC feasibility.
                    if (scaled.dim(0) >= kMinHeadFrames && ctc_min_frames(p.target) <= reduced_length(scaled.dim(0))) {
                        frames = scaled;
                    }
                }
                Tape tape;
                Tape::Scope scope(tape);
                SampleLoss l = sample_loss(m, frames, p, aug.next_u64());
                if (!std::isfinite(l.total.item())) {
                    throw std::runtime_error("non-finite loss on sample " + p.meta->id + " in epoch " +
                                             std::to_string(epoch));
                }
                total += l.total.item();
                tape.backward(ops::scale(l.total, 1.0 / static_cast<double>(e - b)));
            }
            rec.step();
            if (dec) dec->step();
        }
        MetricsRecord train_row;
        train_row.epoch = epoch;
        train_row.split = "train";
        train_row.loss = total / static_cast<double>(order.size());
        const MetricsRecord dev_row = evaluate(m, data, "dev", epoch);
        emit(train_row, dev_row);
        st.epoch = epoch;
        st.steps = rec.steps();
        st.decoder_steps = dec ? dec->steps() : 0;
        const double metric = selection_metric(cfg.task, dev_row);
        if (better(cfg.task, metric, st.best_metric)) {
            st.best_metric = metric;
            st.best_epoch = epoch;
            save_checkpoint(result.best, m, optimizer_state(rec, dec), st);
        }
        save_checkpoint(result.last, m, optimizer_state(rec, dec), st);
        log_epoch(epoch, train_row, dev_row, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    result.best_epoch = st.best_epoch;
    return result;
}

RunResult train_cslr(TrainConfig cfg, const fs::path& out, std::ostream* log) {
    cfg.task = Task::cslr;
    return run_training(cfg, out, std::nullopt, log);
}

RunResult pretrain_tcp(TrainConfig cfg, const fs::path& out, std::ostream* log) {
    cfg.task = Task::tcp_pretrain;
    return run_training(cfg, out, std::nullopt, log);
}

RunResult finetune_translation(TrainConfig cfg, const std::string& init, const fs::path& out, std::ostream* log) {
    if (!has_decoder(cfg.task)) cfg.task = Task::finetune_glossfree;
    cfg.init = init;
    return run_training(cfg, out, std::nullopt, log);
}

// ---------------------------------------------------------------- graph export

std::vector<fs::path> export_graphs(const fs::path& checkpoint, const std::string& sample_id, const std::string& format,
                                    const fs::path& out_dir, const std::optional<fs::path>& dataset_override) {
    if (format != "dot" && format != "json") throw std::invalid_argument("format must be dot or json, got " + format);
    const ModelBundle m = load_checkpoint(checkpoint);
    const Dataset data = load_dataset(dataset_override ? *dataset_override : fs::path(m.config.dataset));
    const SampleMeta& s = data.find(sample_id);
    const ModelForward f = model_forward(data.load_frames(s), m.config.model, m.weights);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw std::runtime_error("cannot create " + out_dir.string() + ": " + ec.message());
    std::vector<fs::path> written;
    for (std::size_t i = 0; i < f.graphs.size(); ++i) {
        for (GraphModule kind : m.config.model.order) {
            const auto& g = f.graphs[i].at(kind);
            if (!g) continue;
            const fs::path p = out_dir / ("stage" + std::to_string(i + 1) + "_" + std::string(to_string(kind)) + "." + format);
            write_text(p, format == "dot" ? to_dot(*g) : to_json(*g));
            written.push_back(p);
        }
    }
    return written;
}

}  // namespace mixsign
