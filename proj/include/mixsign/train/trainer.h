#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mixsign/ctc/ctc.h"
#include "mixsign/data/synth.h"
#include "mixsign/train/model.h"

namespace mixsign {

enum class Task { cslr, tcp_pretrain, finetune_gloss, finetune_glossfree };
std::string_view to_string(Task t);
Task parse_task(std::string_view s);
inline bool has_decoder(Task t) { return t == Task::finetune_gloss || t == Task::finetune_glossfree; }
// Tasks whose CTC targets are pseudo glosses derived from the text.
inline bool uses_pseudo_gloss(Task t) { return t == Task::tcp_pretrain || t == Task::finetune_glossfree; }

struct TrainConfig {
    std::string dataset;
    ModelConfig model;
    Task task = Task::cslr;
    double lr = 3e-3;
    double decoder_lr = 1e-3;
    double weight_decay = 1e-4;
    std::size_t epochs = 30;
    // Unset means the 50-epoch schedule (20, 30) scaled to `epochs`.
    std::optional<std::vector<std::size_t>> decay_epochs;
    double decay_factor = 0.5;
    std::size_t batch_size = 4;
    std::uint64_t seed = 0;
    double temporal_scale = 0.2;  // +-20% length jitter on training clips; 0 disables
    std::string lemmatizer = "suffix";  // "suffix" or "identity", for pseudo glosses
    bool drop_function_words = false;
    std::string init;  // fine-tuning start point (checkpoint directory); empty = random
    std::size_t max_train = 0;  // use only the first n training samples; 0 = all

    void validate() const;
    std::vector<std::size_t> resolved_decay_epochs() const;
    double lr_at(std::size_t epoch, double base) const;  // epoch is 1-based
    nlohmann::ordered_json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);  // unknown keys rejected
};

TrainConfig load_train_config(const std::filesystem::path& path);

struct MetricsRecord {
    std::size_t epoch = 0;
    std::string split;
    double loss = 0.0;
    std::optional<WerReport> wer;  // totals over the split; wer.wer is corpus level
    std::optional<double> dispersion;
    std::optional<double> token_accuracy;  // tasks with a decoder
    std::optional<double> ce_loss;
};

// Header of metrics.csv and the row format; optional fields print empty.
inline constexpr const char* kMetricsHeader = "epoch,split,loss,wer,del,ins,sub,dispersion";
std::string metrics_row(const MetricsRecord& r);

// Vocabulary of the translation decoder: EOS/BOS/UNK then words by frequency.
struct TextVocab {
    GlossVocab words;  // word id w maps to decoder id w - 1 + kTextSpecials
    std::size_t size() const { return words.size() - 1 + kTextSpecials; }
    std::vector<std::size_t> encode(const std::string& text) const;  // BOS ... EOS
    std::vector<std::string> tokenize(const std::string& text) const;
};

// Everything needed to run the network on a sample.
struct ModelBundle {
    TrainConfig config;
    GlossVocab vocab;  // CTC classes
    std::optional<TextVocab> text;
    ModelWeights weights;

    ParamList parameters() const { return model_parameters(config.model, weights); }
};

struct CheckpointState {
    std::size_t epoch = 0;
    std::size_t steps = 0, decoder_steps = 0;
    std::size_t best_epoch = 0;
    double best_metric = 0.0;
};

// Directory with config.json, params.json/.bin, optimizer.json/.bin,
// state.json, vocab.json and (with a decoder) text_vocab.json.
void save_checkpoint(const std::filesystem::path& dir, const ModelBundle& m, const ParamList& optimizer_state,
                     const CheckpointState& st);
ModelBundle load_checkpoint(const std::filesystem::path& dir, CheckpointState* st = nullptr,
                            ParamList* optimizer_state = nullptr);

struct RunResult {
    std::filesystem::path best, last;
    std::vector<MetricsRecord> metrics;  // rows written during this call
    std::size_t skipped_train = 0;
    std::size_t best_epoch = 0;
};

// Shared loop for every task. Writes out/metrics.csv (and translation.csv
// for decoder tasks), out/best and out/last. With resume set, continues
// from that checkpoint and appends to the existing CSV files. stop_after > 0
// ends the run after that epoch as if interrupted.
RunResult run_training(const TrainConfig& cfg, const std::filesystem::path& out,
                       const std::optional<std::filesystem::path>& resume = std::nullopt,
                       std::ostream* log = nullptr, std::size_t stop_after = 0);

RunResult train_cslr(TrainConfig cfg, const std::filesystem::path& out, std::ostream* log = nullptr);
RunResult pretrain_tcp(TrainConfig cfg, const std::filesystem::path& out, std::ostream* log = nullptr);
// init empty means random initialisation (the no-pretraining baseline).
RunResult finetune_translation(TrainConfig cfg, const std::string& init, const std::filesystem::path& out,
                               std::ostream* log = nullptr);

// dataset_override replaces the path stored in the checkpoint config.
MetricsRecord evaluate(const std::filesystem::path& checkpoint, const std::string& split,
                       const std::optional<std::filesystem::path>& dataset_override = std::nullopt);
MetricsRecord evaluate(const ModelBundle& m, const Dataset& data, const std::string& split, std::size_t epoch = 0);

// One file per (stage, graph kind) named stage<i>_<kind>.<dot|json>.
std::vector<std::filesystem::path> export_graphs(const std::filesystem::path& checkpoint, const std::string& sample_id,
                                                 const std::string& format, const std::filesystem::path& out_dir,
                                                 const std::optional<std::filesystem::path>& dataset_override = std::nullopt);

// Positionwise matches over max(|hyp|, |ref|), summed over a corpus.
struct TokenAccuracy {
    std::size_t correct = 0, total = 0;
    void add(const std::vector<std::size_t>& hyp, const std::vector<std::size_t>& ref);
    double value() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
};

// Nearest-frame resampling to round(T * factor) frames.
Tensor resample_frames(const Tensor& frames, double factor);

}  // namespace mixsign
