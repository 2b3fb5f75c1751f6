#include "mixsign/cli/cli.h"

#include <fstream>
#include <iomanip>
#include <ostream>

#include "CLI11.hpp"
#include "mixsign/diagnostics/gradient_suite.h"
#include "mixsign/train/trainer.h"

namespace mixsign {

namespace fs = std::filesystem;

namespace {

struct Usage : std::runtime_error {
    using std::runtime_error::runtime_error;
};

TrainConfig train_config(const std::string& path, const std::optional<std::uint64_t>& seed) {
    if (path.empty()) throw Usage("--config is required");
    TrainConfig c;
    try {
        c = load_train_config(path);
    } catch (const std::exception& e) {
        throw Usage(e.what());
    }
    if (seed) c.seed = *seed;
    return c;
}

void print_record(std::ostream& out, const MetricsRecord& r) {
    out << kMetricsHeader << (r.token_accuracy ? ",token_accuracy" : "") << "\n" << metrics_row(r);
    if (r.token_accuracy) out << "," << std::setprecision(17) << *r.token_accuracy;
    out << "\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"MixSignGraph desk-scale trainer"};
    app.require_subcommand(1);
    std::string config, out_dir, checkpoint, split = "dev", format = "dot", sample;
    std::uint64_t seed_value = 0;
    auto add_seed = [&](CLI::App* sc) { return sc->add_option("--seed", seed_value, "Random seed"); };

    auto* gen = app.add_subcommand("gen-data", "Generate the synthetic corpus");
    gen->add_option("--config", config, "SynthSpec JSON (defaults when omitted)");
    auto* gen_seed = add_seed(gen);
    gen->add_option("--out", out_dir, "Dataset directory")->required();

    auto* train = app.add_subcommand("train", "Recognition training with CTC");
    auto* tcp = app.add_subcommand("pretrain-tcp", "Text-driven CTC pre-training");
    auto* fine = app.add_subcommand("finetune", "Translation fine-tuning");
    std::vector<CLI::Option*> seeds;
    for (auto* sc : {train, tcp, fine}) {
        sc->add_option("--config", config, "TrainConfig JSON");
        seeds.push_back(add_seed(sc));
        sc->add_option("--out", out_dir, "Run directory")->required();
    }
    train->add_option("--checkpoint", checkpoint, "Resume from this checkpoint directory");
    tcp->add_option("--checkpoint", checkpoint, "Resume from this checkpoint directory");
    fine->add_option("--checkpoint", checkpoint, "Initial checkpoint (random init when omitted)");

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    eval->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
    eval->add_option("--split", split, "Split name");

    auto* exp = app.add_subcommand("export-graphs", "Write the graphs built for one sample");
    exp->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
    exp->add_option("--sample", sample, "Sample id")->required();
    exp->add_option("--format", format, "dot or json")->check(CLI::IsMember({"dot", "json"}));
    exp->add_option("--out", out_dir, "Output directory")->required();

    auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
    auto* grad_seed = add_seed(grad);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << e.what() << "\n" << app.help();
        return 1;
    }

    auto seed_given = [&](CLI::Option* o) { return o->count() > 0 ? std::optional<std::uint64_t>(seed_value) : std::nullopt; };
    try {
        if (gen->parsed()) {
            SynthSpec spec;
            if (!config.empty()) {
                std::ifstream f(config, std::ios::binary);
                if (!f) throw Usage("cannot read " + config);
                try {
                    spec = SynthSpec::from_json(nlohmann::json::parse(f));
                } catch (const std::exception& e) {
                    throw Usage(config + ": " + e.what());
                }
            }
            const auto counts = gen_corpus(spec, gen_seed->count() ? seed_value : 0, out_dir);
            for (const auto& [name, n] : counts) out << name << " " << n << "\n";
            return 0;
        }
        if (train->parsed() || tcp->parsed()) {
            CLI::App* sc = train->parsed() ? train : tcp;
            TrainConfig c = train_config(config, seed_given(seeds[sc == train ? 0 : 1]));
            if (tcp->parsed()) c.task = Task::tcp_pretrain;
            if (c.task != Task::cslr && c.task != Task::tcp_pretrain) {
                throw Usage("task " + std::string(to_string(c.task)) + " belongs to the finetune command");
            }
            const auto r = run_training(c, out_dir, checkpoint.empty() ? std::nullopt : std::optional<fs::path>(checkpoint), &err);
            out << "best epoch " << r.best_epoch << " -> " << r.best.string() << "\n";
            return 0;
        }
        if (fine->parsed()) {
            TrainConfig c = train_config(config, seed_given(seeds[2]));
            if (!has_decoder(c.task)) c.task = Task::finetune_glossfree;
            if (!checkpoint.empty()) c.init = checkpoint;
            const auto r = run_training(c, out_dir, std::nullopt, &err);
            out << "best epoch " << r.best_epoch << " -> " << r.best.string() << "\n";
            return 0;
        }
        if (eval->parsed()) {
            print_record(out, evaluate(checkpoint, split));
            return 0;
        }
        if (exp->parsed()) {
            for (const auto& p : export_graphs(checkpoint, sample, format, out_dir)) out << p.string() << "\n";
            return 0;
        }
        if (grad->parsed()) {
            bool all = true;
            out << std::left << std::setw(34) << "check" << "cases  worst_rel_err  result\n";
            for (const auto& row : run_gradient_suite(grad_seed->count() ? seed_value : 7)) {
                all = all && row.ok();
                out << std::left << std::setw(34) << row.name << std::setw(7)
                    << (std::to_string(row.passed) + "/" + std::to_string(row.cases)) << std::setw(15) << std::scientific
                    << std::setprecision(2) << row.worst_rel_error << std::defaultfloat << (row.ok() ? "PASS" : "FAIL")
                    << "\n";
            }
            return all ? 0 : 2;
        }
    } catch (const Usage& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

}  // namespace mixsign
