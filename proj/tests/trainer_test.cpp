#include <gtest/gtest.h>

#include <fstream>
#include <iterator>
#include <regex>
#include <sstream>

#include <unistd.h>

#include "mixsign/cli/cli.h"
#include "mixsign/tcp/tcp.h"
#include "mixsign/train/trainer.h"

using namespace mixsign;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("mixsign_trainer_test_" + std::to_string(::getpid()) + "_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

SynthSpec tiny_spec() {
    SynthSpec s;
    s.height = s.width = 32;
    s.hand_radius = 3;
    s.orbit_radius = 7;
    s.glosses = {"house", "give", "friend", "rain"};
    s.glosses_max = 3;
    s.train = 5;
    s.dev = 3;
    s.test = 2;
    return s;
}

// One shared tiny corpus for the whole file.
const fs::path& tiny_dataset() {
    static const fs::path dir = [] {
        fs::path d = scratch("dataset");
        gen_corpus(tiny_spec(), 3, d);
        return d;
    }();
    return dir;
}

TrainConfig tiny_config(std::size_t epochs = 2) {
    TrainConfig c;
    c.dataset = tiny_dataset().string();
    c.model.dim = 8;
    c.model.hidden = 8;
    c.model.k_t = {8, 4};
    c.model.embed_dim = 4;
    c.model.decoder_hidden = 8;
    c.epochs = epochs;
    c.batch_size = 2;
    c.lr = 3e-3;
    c.seed = 5;
    return c;
}

std::vector<std::string> csv_lines(const fs::path& p) {
    std::istringstream in(slurp(p));
    std::vector<std::string> out;
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

std::vector<std::string> fields(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream s(line);
    for (std::string f; std::getline(s, f, ',');) out.push_back(f);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

void expect_same_tree(const fs::path& a, const fs::path& b) {
    std::size_t n = 0;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), a);
        ASSERT_TRUE(fs::exists(b / rel)) << rel;
        EXPECT_TRUE(slurp(e.path()) == slurp(b / rel)) << "differs: " << rel;
        ++n;
    }
    EXPECT_GT(n, 0u);
}

int cli(std::vector<std::string> args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
    args.insert(args.begin(), "mixsign");
    std::vector<const char*> argv;
    for (auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int rc = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    if (out_text) *out_text = out.str();
    if (err_text) *err_text = err.str();
    return rc;
}

}  // namespace

TEST(TrainConfig, JsonRoundTripAndValidation) {
    TrainConfig c = tiny_config();
    c.decay_epochs = std::vector<std::size_t>{3, 5};
    const TrainConfig back = TrainConfig::from_json(nlohmann::json::parse(c.to_json().dump()));
    EXPECT_EQ(back.to_json(), c.to_json());
    auto j = nlohmann::json::parse(c.to_json().dump());
    j["learning_rate"] = 1;
    EXPECT_THROW(TrainConfig::from_json(j), std::invalid_argument);
    j.erase("learning_rate");
    j["decay_epochs"] = {5, 5};
    EXPECT_THROW(TrainConfig::from_json(j), std::invalid_argument);
    j["decay_epochs"] = nullptr;
    j["model"]["k_l"] = {0, 4};
    EXPECT_THROW(TrainConfig::from_json(j), std::invalid_argument);
    j["model"]["k_l"] = {4, 4};
    j["model"]["width"] = 3;
    EXPECT_THROW(TrainConfig::from_json(j), std::invalid_argument);
}

TEST(TrainConfig, DecayScheduleScalesWithEpochs) {
    TrainConfig c;
    c.epochs = 50;
    EXPECT_EQ(c.resolved_decay_epochs(), (std::vector<std::size_t>{20, 30}));
    c.epochs = 30;
    EXPECT_EQ(c.resolved_decay_epochs(), (std::vector<std::size_t>{12, 18}));
    EXPECT_DOUBLE_EQ(c.lr_at(12, 1.0), 1.0);
    EXPECT_DOUBLE_EQ(c.lr_at(13, 1.0), 0.5);
    EXPECT_DOUBLE_EQ(c.lr_at(19, 1.0), 0.25);
    c.decay_epochs = std::vector<std::size_t>{1};
    EXPECT_DOUBLE_EQ(c.lr_at(2, 2.0), 1.0);
}

TEST(TrainConfig, ModelStageDims) {
    ModelConfig m;
    EXPECT_EQ(m.stem().channels, (std::vector<std::size_t>{8, 16, 32}));
    EXPECT_EQ(m.stage_dim(1), 64u);
    m.stages = 3;
    EXPECT_THROW(m.validate(), std::invalid_argument);  // k lists still have two entries
}

TEST(Resample, LengthAndNearestFrames) {
    Tensor f({5, 1, 1, 1}, {0, 1, 2, 3, 4});
    EXPECT_EQ(resample_frames(f, 1.0).data()[3], 3.0);
    Tensor up = resample_frames(f, 1.2);
    EXPECT_EQ(up.dim(0), 6u);
    Tensor down = resample_frames(f, 0.8);
    EXPECT_EQ(down.dim(0), 4u);
    EXPECT_EQ(down.data()[0], 0.0);
    EXPECT_EQ(down.data()[3], 4.0);
}

TEST(TokenAccuracy, Positionwise) {
    TokenAccuracy a;
    a.add({3, 4, 5}, {3, 5, 5, 6});
    EXPECT_EQ(a.correct, 2u);
    EXPECT_EQ(a.total, 4u);
    a.add({}, {7});
    EXPECT_DOUBLE_EQ(a.value(), 2.0 / 5.0);
}

TEST(Training, SmokeLossDecreasesAndCsvSchema) {
    const fs::path out = scratch("smoke");
    auto r = train_cslr(tiny_config(2), out);
    const auto lines = csv_lines(out / "metrics.csv");
    ASSERT_EQ(lines.size(), 1u + 2 * 3);
    EXPECT_EQ(lines[0], "epoch,split,loss,wer,del,ins,sub,dispersion");
    EXPECT_EQ(fields(lines[1])[1], "train");
    EXPECT_EQ(fields(lines[2])[1], "dev");
    EXPECT_EQ(fields(lines[6])[0], "2");
    EXPECT_EQ(fields(lines[2]).size(), 8u);
    const double first = std::stod(fields(lines[1])[2]), last = std::stod(fields(lines[5])[2]);
    EXPECT_LT(last, first);
    EXPECT_TRUE(fs::exists(out / "best" / "params.bin"));
    EXPECT_TRUE(fs::exists(out / "last" / "state.json"));
    fs::remove_all(out);
}

TEST(Training, SameSeedGivesIdenticalBytes) {
    const fs::path a = scratch("det_a"), b = scratch("det_b");
    TrainConfig c = tiny_config(1);
    c.model.drop_rate = 0.2;
    train_cslr(c, a);
    train_cslr(c, b);
    expect_same_tree(a, b);
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(Training, ResumeMatchesUninterrupted) {
    const fs::path full = scratch("resume_full"), part = scratch("resume_part");
    train_cslr(tiny_config(2), full);
    run_training(tiny_config(2), part, std::nullopt, nullptr, 1);
    EXPECT_EQ(csv_lines(part / "metrics.csv").size(), 5u);
    run_training(tiny_config(2), part, part / "last");
    EXPECT_EQ(slurp(full / "metrics.csv"), slurp(part / "metrics.csv"));
    expect_same_tree(full / "last", part / "last");
    expect_same_tree(full / "best", part / "best");
    fs::remove_all(full);
    fs::remove_all(part);
}

TEST(Checkpoint, SaveLoadSaveIsByteStable) {
    const fs::path out = scratch("ckpt");
    train_cslr(tiny_config(1), out);
    CheckpointState st;
    ParamList opt;
    const ModelBundle m = load_checkpoint(out / "last", &st, &opt);
    save_checkpoint(out / "again", m, opt, st);
    expect_same_tree(out / "last", out / "again");
    EXPECT_THROW(load_checkpoint(out / "missing"), std::runtime_error);
    fs::remove_all(out);
}

TEST(Training, StemOnlyAblationRuns) {
    const fs::path out = scratch("stem_only");
    TrainConfig c = tiny_config(1);
    c.model.order.clear();
    auto r = train_cslr(c, out);
    ASSERT_EQ(r.metrics.size(), 4u);
    ASSERT_TRUE(r.metrics[3].wer.has_value());
    const ModelBundle m = load_checkpoint(out / "best");
    for (const auto& p : m.parameters()) EXPECT_EQ(p.name.find(".lsg"), std::string::npos) << p.name;
    fs::remove_all(out);
}

TEST(Evaluate, BestCheckpointReproducesLoggedWer) {
    const fs::path out = scratch("eval");
    auto r = train_cslr(tiny_config(2), out);
    const MetricsRecord again = evaluate(out / "best", "dev");
    const MetricsRecord twice = evaluate(out / "best", "dev");
    const MetricsRecord& logged = r.metrics[2 * r.best_epoch + 1];
    ASSERT_EQ(logged.split, "dev");
    EXPECT_EQ(again.wer->wer, logged.wer->wer);
    EXPECT_EQ(again.loss, logged.loss);
    EXPECT_EQ(metrics_row(again), metrics_row(twice));
    EXPECT_THROW(evaluate(out / "best", "validation"), std::invalid_argument);
    fs::remove_all(out);
}

TEST(Evaluate, EmptyHypothesesGiveFullDeletion) {
    TrainConfig c = tiny_config();
    const Dataset data = load_dataset(tiny_dataset());
    ModelBundle m;
    m.config = c;
    m.vocab = GlossVocab(data.glosses);
    Rng rng = Rng::stream(1);
    m.weights = init_model(c.model, m.vocab.size(), rng);
    for (double& v : m.weights.head.classifier.weight.mutable_data()) v = 0.0;
    for (double& v : m.weights.head.classifier.bias.mutable_data()) v = 0.0;
    m.weights.head.classifier.bias.mutable_data()[kBlank] = 5.0;
    const MetricsRecord r = evaluate(m, data, "dev");
    std::size_t ref = 0;
    for (const auto& s : data.split("dev")) ref += s.gloss_ids.size();
    EXPECT_EQ(r.wer->wer, 1.0);
    EXPECT_EQ(r.wer->del, ref);
    EXPECT_EQ(r.wer->ins + r.wer->sub, 0u);
}

TEST(Tcp, VocabFromTrainSplitAndFiniteLoss) {
    const fs::path out = scratch("tcp");
    auto r = pretrain_tcp(tiny_config(1), out);
    const ModelBundle m = load_checkpoint(out / "best");
    EXPECT_EQ(m.config.task, Task::tcp_pretrain);
    const Dataset data = load_dataset(tiny_dataset());
    NormalizerConfig norm{true, suffix_lemmatizer, {}};
    std::vector<std::vector<std::string>> corpus;
    for (const auto& s : data.split("train")) corpus.push_back(make_pseudo_gloss(s.text, norm));
    EXPECT_EQ(m.vocab.tokens(), build_vocab(corpus).tokens());
    for (const auto& rec : r.metrics) EXPECT_TRUE(std::isfinite(rec.loss));
    fs::remove_all(out);
}

TEST(Finetune, ZeroEpochsKeepsInitAndWritesTranslationCsv) {
    const fs::path pre = scratch("ft_pre"), ft = scratch("ft");
    pretrain_tcp(tiny_config(1), pre);
    TrainConfig c = tiny_config(0);
    c.task = Task::finetune_glossfree;
    auto r = finetune_translation(c, (pre / "best").string(), ft);
    const ModelBundle init = load_checkpoint(pre / "best"), tuned = load_checkpoint(ft / "best");
    ASSERT_TRUE(tuned.text.has_value());
    const ParamList a = init.parameters(), b = tuned.parameters();
    std::size_t compared = 0;
    for (const auto& p : a) {
        for (const auto& q : b) {
            if (p.name != q.name) continue;
            ++compared;
            EXPECT_TRUE(std::equal(p.value.data().begin(), p.value.data().end(), q.value.data().begin())) << p.name;
        }
    }
    EXPECT_EQ(compared, a.size());
    EXPECT_EQ(csv_lines(ft / "translation.csv")[0], "epoch,split,ce_loss,token_accuracy");
    ASSERT_TRUE(r.metrics[1].token_accuracy.has_value());
    fs::remove_all(pre);
    fs::remove_all(ft);
}

TEST(Finetune, TrainsJointObjective) {
    const fs::path ft = scratch("ft_joint");
    TrainConfig c = tiny_config(2);
    c.task = Task::finetune_gloss;
    auto r = finetune_translation(c, "", ft);
    EXPECT_LT(r.metrics[4].loss, r.metrics[0].loss);
    EXPECT_EQ(csv_lines(ft / "translation.csv").size(), 4u);
    fs::remove_all(ft);
}

TEST(Finetune, MismatchedInitListsNames) {
    const fs::path pre = scratch("ft_bad_pre"), ft = scratch("ft_bad");
    TrainConfig small = tiny_config(0);
    pretrain_tcp(small, pre);
    TrainConfig c = tiny_config(0);
    c.model.hidden = 12;
    c.task = Task::finetune_glossfree;
    try {
        finetune_translation(c, (pre / "best").string(), ft);
        FAIL();
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("head.classifier.weight"), std::string::npos) << e.what();
    }
    fs::remove_all(pre);
    fs::remove_all(ft);
}

TEST(ExportGraphs, CountsAndDotGrammar) {
    const fs::path out = scratch("export");
    train_cslr(tiny_config(0), out);
    const ModelBundle m = load_checkpoint(out / "best");
    const Dataset data = load_dataset(tiny_dataset());
    const SampleMeta& s = data.split("dev")[0];
    const auto files = export_graphs(out / "best", s.id, "dot", out / "graphs");
    ASSERT_EQ(files.size(), 6u);
    const std::regex head(R"(graph \w+ \{)"), line(R"(  [A-Za-z0-9_]+( -- [A-Za-z0-9_]+)?;)"), tail(R"(\})");
    auto edges_of = [&](const fs::path& p) {
        std::istringstream in(slurp(p));
        std::vector<std::string> lines;
        for (std::string l; std::getline(in, l);) lines.push_back(l);
        EXPECT_TRUE(std::regex_match(lines.front(), head)) << p;
        EXPECT_TRUE(std::regex_match(lines.back(), tail)) << p;
        std::size_t edges = 0;
        for (std::size_t i = 1; i + 1 < lines.size(); ++i) {
            EXPECT_TRUE(std::regex_match(lines[i], line)) << p << ": " << lines[i];
            if (lines[i].find(" -- ") != std::string::npos) ++edges;
        }
        return edges;
    };
    const std::size_t t = s.frames;
    // Stage 1 runs on a 4x4 grid fed by an 8x8 tap; stage 2 on 2x2 fed by 4x4.
    EXPECT_EQ(edges_of(out / "graphs" / "stage1_hsg.dot"), t * 64);
    EXPECT_EQ(edges_of(out / "graphs" / "stage2_hsg.dot"), t * 16);
    EXPECT_EQ(edges_of(out / "graphs" / "stage1_tsg.dot"), (t - 1) * std::min<std::size_t>(8, 16 * 16));
    EXPECT_EQ(edges_of(out / "graphs" / "stage2_tsg.dot"), (t - 1) * std::min<std::size_t>(4, 4 * 4));
    EXPECT_GE(edges_of(out / "graphs" / "stage1_lsg.dot"), t * 16 * 4 / 2);
    const auto json_files = export_graphs(out / "best", s.id, "json", out / "graphs");
    const auto j = nlohmann::json::parse(slurp(json_files[0]));
    EXPECT_EQ(j.at("edges").size(), t * 64);
    EXPECT_THROW(export_graphs(out / "best", "dev_9999", "dot", out / "graphs"), std::invalid_argument);
    fs::remove_all(out);
}

TEST(Cli, ExitCodes) {
    std::string out, err;
    EXPECT_EQ(cli({"train", "--config", "/nonexistent/missing.json", "--out", "/tmp/x"}, &out, &err), 1);
    EXPECT_NE(err.find("missing.json"), std::string::npos);
    EXPECT_EQ(cli({"frobnicate"}, &out, &err), 1);
    EXPECT_FALSE(err.empty());
    EXPECT_EQ(cli({"train", "--bogus"}, &out, &err), 1);
    EXPECT_EQ(cli({"eval", "--checkpoint", "/nonexistent/ckpt"}, &out, &err), 2);
    EXPECT_EQ(cli({}, &out, &err), 1);
}

TEST(Cli, GenTrainEvalRoundTrip) {
    const fs::path root = scratch("cli");
    fs::create_directories(root);
    std::ofstream(root / "spec.json") << tiny_spec().to_json().dump();
    std::string out, err;
    ASSERT_EQ(cli({"gen-data", "--config", (root / "spec.json").string(), "--seed", "3", "--out", (root / "data").string()},
                  &out, &err),
              0)
        << err;
    EXPECT_NE(out.find("train 5"), std::string::npos);
    auto cj = nlohmann::json::parse(tiny_config(1).to_json().dump());
    cj["dataset"] = (root / "data").string();
    std::ofstream(root / "train.json") << cj.dump();
    ASSERT_EQ(cli({"train", "--config", (root / "train.json").string(), "--out", (root / "run").string()}, &out, &err), 0)
        << err;
    ASSERT_EQ(cli({"eval", "--checkpoint", (root / "run" / "best").string(), "--split", "test"}, &out, &err), 0) << err;
    EXPECT_EQ(out.substr(0, out.find('\n')), kMetricsHeader);
    EXPECT_NE(out.find("\n0,test,"), std::string::npos);
    ASSERT_EQ(cli({"export-graphs", "--checkpoint", (root / "run" / "best").string(), "--sample", "test_0000", "--format",
                   "json", "--out", (root / "graphs").string()},
                  &out, &err),
              0)
        << err;
    EXPECT_TRUE(fs::exists(root / "graphs" / "stage1_tsg.json"));
    EXPECT_EQ(cli({"export-graphs", "--checkpoint", (root / "run" / "best").string(), "--sample", "test_0000", "--format",
                   "svg", "--out", (root / "graphs").string()},
                  &out, &err),
              1);
    fs::remove_all(root);
}

TEST(Cli, FinetuneUsesConfigInitWithoutCheckpointFlag) {
    const fs::path root = scratch("cli_ft");
    fs::create_directories(root);
    pretrain_tcp(tiny_config(1), root / "pre");
    auto cj = nlohmann::json::parse(tiny_config(0).to_json().dump());
    cj["task"] = "finetune_glossfree";
    cj["init"] = (root / "pre" / "best").string();
    std::ofstream(root / "ft.json") << cj.dump();
    std::string out, err;
    ASSERT_EQ(cli({"finetune", "--config", (root / "ft.json").string(), "--out", (root / "ft").string()}, &out, &err), 0)
        << err;
    const ModelBundle init = load_checkpoint(root / "pre" / "best"), tuned = load_checkpoint(root / "ft" / "best");
    const Tensor a = init.weights.head.classifier.weight, b = tuned.weights.head.classifier.weight;
    EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
    fs::remove_all(root);
}

TEST(Cli, GradcheckPrintsTable) {
    std::string out, err;
    EXPECT_EQ(cli({"gradcheck"}, &out, &err), 0) << out;
    EXPECT_NE(out.find("op:matmul"), std::string::npos);
    EXPECT_NE(out.find("ctc_loss"), std::string::npos);
    EXPECT_EQ(out.find("FAIL"), std::string::npos);
}
