// meer: dataset synthesis, training, evaluation, mask removal and plot-data export.
//
// Errors go to stderr as "error: <category>: <message>" with a category-specific exit code.

#include <CLI11.hpp>

#include <torch/torch.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "meer/config.hpp"
#include "meer/errors.hpp"
#include "meer/evaluation.hpp"
#include "meer/face_data.hpp"
#include "meer/training.hpp"

namespace fs = std::filesystem;
using namespace meer;

namespace {

struct CliError : std::runtime_error {
    CliError(std::string category, int code, const std::string& message)
        : std::runtime_error(message), category(std::move(category)), code(code) {}
    std::string category;
    int code;
};

CliError usage_error(const std::string& m) { return {"usage", 2, m}; }

RunConfig read_config(const fs::path& path) {
    try {
        return load_config(path);
    } catch (const IoError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw CliError("config", 3, path.string() + ": " + e.what());
    }
}

train::Checkpoint read_checkpoint(const std::string& path) {
    if (path.empty()) throw usage_error("--from-checkpoint is required");
    return train::load_checkpoint(path);
}

// ---------------------------------------------------------------------------------------------

struct SynthArgs {
    data::SynthOptions opt;
    std::string style = "surgical";
    std::size_t max_pairs = 500;
    std::string out;
};

int cmd_synth(const SynthArgs& a) {
    auto opt = a.opt;
    if (a.style == "lower_half")
        opt.mask_style = data::MaskStyle::lower_half;
    else if (a.style != "surgical")
        throw usage_error("--mask-style must be surgical or lower_half");
    const fs::path root = a.out;
    auto manifest = data::write_synthetic_dataset(root, opt);
    auto pairs = eval::make_balanced_pairs(manifest, a.max_pairs, opt.seed);
    eval::write_pairs(root / "pairs.tsv", pairs);
    std::size_t masked = 0;
    for (const auto& r : manifest.records) masked += r.mask_flag == data::MaskFlag::simulated_masked;
    std::cout << "images = " << manifest.records.size() << "\nmasked = " << masked
              << "\nidentities = " << manifest.num_identities << "\npairs = " << pairs.size() << "\nmanifest = "
              << (root / "manifest.tsv").string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------------------------

struct TrainArgs {
    std::string config;
    int stage = 1;
    std::string from_checkpoint;
    bool resume = false;
    std::optional<std::uint64_t> seed;
    std::string out;
};

int cmd_train(const TrainArgs& a) {
    RunConfig cfg = read_config(a.config);
    if (a.seed) cfg.train.seed = *a.seed;
    if (!a.out.empty()) cfg.out_dir = a.out;
    if (cfg.manifest.empty()) throw CliError("config", 3, "data.manifest is not set");
    if (a.stage == 2 && a.from_checkpoint.empty()) throw usage_error("stage 2 needs --from-checkpoint with a stage-1 checkpoint");
    if (a.resume && a.from_checkpoint.empty()) throw usage_error("--resume needs --from-checkpoint");

    std::optional<train::Checkpoint> start;
    if (!a.from_checkpoint.empty()) {
        start = train::load_checkpoint(a.from_checkpoint);
        if (a.resume && start->stage != a.stage)
            throw usage_error("--resume needs a checkpoint from stage " + std::to_string(a.stage));
        if (!a.resume && start->stage != 1)
            throw usage_error("expected a stage-1 checkpoint (pass --resume to continue a stage-2 run)");
        if (a.stage == 1 && !a.resume) throw usage_error("stage 1 only accepts a checkpoint together with --resume");
    }

    const auto manifest = data::read_manifest(cfg.manifest);
    const fs::path out = cfg.out_dir;
    fs::create_directories(out);
    {
        std::ofstream echo(out / "config.txt", std::ios::binary);
        echo << echo_config(cfg);
    }

    const auto csv_path = out / ("losses_stage" + std::to_string(a.stage) + ".csv");
    const bool append = a.resume && fs::exists(csv_path);
    std::ofstream csv(csv_path, append ? std::ios::app : std::ios::trunc);
    if (!csv) throw IoError("cannot write " + csv_path.string());
    if (!append) train::write_loss_csv_header(csv);

    train::TrainHooks hooks;
    hooks.workers = data::workers_from_env();
    train::StepLosses last{};
    hooks.on_step = [&](const train::StepLosses& l) {
        train::write_loss_csv_row(csv, l);
        last = l;
    };

    train::Checkpoint ck = a.stage == 1 ? train::train_stage1(manifest, cfg, start ? &*start : nullptr, hooks)
                                        : train::train_stage2(*start, manifest, cfg, hooks);
    const auto ckpt_path = out / ("stage" + std::to_string(a.stage) + ".ckpt");
    train::save_checkpoint(ckpt_path, ck);

    std::cout << "checkpoint = " << ckpt_path.string() << "\nsteps = " << ck.step << "\nfinal_total_loss = " << last.total
              << "\n";
    if (a.stage == 1) {
        auto acc = train::training_accuracy(ck.net, manifest, 32, hooks.workers);
        std::cout << "train_identity_accuracy = " << acc.identity << "\ntrain_pattern_accuracy = " << acc.pattern << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint;
    std::string pairs;
    std::string out;
};

int cmd_eval(const EvalArgs& a) {
    auto ck = read_checkpoint(a.checkpoint);
    const std::string pairs_path = a.pairs.empty() ? ck.config.pairs : a.pairs;
    if (pairs_path.empty()) throw usage_error("no pairs file given");
    auto pairs = eval::read_pairs(pairs_path);
    if (pairs.empty()) throw CliError("data", 5, "pairs file " + pairs_path + " holds no pairs");

    auto sims = eval::verify_pairs(ck.net, pairs, fs::path(pairs_path).parent_path(), 64, data::workers_from_env());
    std::vector<int> labels;
    for (const auto& p : pairs) labels.push_back(p.same_identity ? 1 : 0);
    const int folds = static_cast<int>(std::min<std::size_t>(10, pairs.size()));
    if (folds < 2) throw CliError("data", 5, "need at least two pairs");
    const auto report = eval::format_report(eval::evaluate_scores(sims, labels, folds));
    std::cout << report;
    if (!a.out.empty()) {
        std::ofstream f(a.out, std::ios::binary);
        if (!f) throw IoError("cannot write " + a.out);
        f << report;
    }
    return 0;
}

// ---------------------------------------------------------------------------------------------

struct RemoveArgs {
    std::string checkpoint;
    std::string in;
    std::string out;
    int size = 112;
};

int cmd_removemask(const RemoveArgs& a) {
    auto ck = read_checkpoint(a.checkpoint);
    if (a.size < 1) throw usage_error("--size must be positive");
    torch::NoGradGuard guard;
    ck.net->eval();
    auto image = data::load_image(a.in, ck.net->config().image_size).unsqueeze(0);
    auto restored = ck.net->restore(image);
    if (restored.size(2) != a.size)
        restored = torch::nn::functional::interpolate(
            restored, torch::nn::functional::InterpolateFuncOptions()
                          .size(std::vector<int64_t>{a.size, a.size})
                          .mode(torch::kBilinear)
                          .align_corners(false));
    data::save_image(a.out, restored[0].clamp(-1.0, 1.0));
    std::cout << "restored = " << a.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------------------------

struct PlotArgs {
    std::string checkpoint;
    std::string manifest;
    std::string out;
    int bins = 20;
    double lo = -1.0;
    double hi = 1.0;
};

int cmd_plot_data(const PlotArgs& a) {
    auto ck = read_checkpoint(a.checkpoint);
    const std::string manifest_path = a.manifest.empty() ? ck.config.manifest : a.manifest;
    if (manifest_path.empty()) throw usage_error("no manifest given");
    const auto manifest = data::read_manifest(manifest_path);
    auto hist = eval::similarity_distribution(ck.net, manifest, eval::uniform_edges(a.bins, a.lo, a.hi),
                                              data::workers_from_env());
    if (a.out.empty()) {
        eval::write_histogram_csv(std::cout, hist);
    } else {
        std::ofstream f(a.out, std::ios::binary);
        if (!f) throw IoError("cannot write " + a.out);
        eval::write_histogram_csv(f, hist);
        std::cout << "identities = " << hist.identity_means.size() << "\nmean = " << hist.mean() << "\n";
    }
    return 0;
}

int report(const std::string& category, const std::string& message, int code) {
    std::cerr << "error: " << category << ": " << message << "\n";
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Masked-face recognition with mask decoupling and restoration"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth-data", "Write a synthetic paired dataset, manifest and pairs file");
    s->add_option("--ids", synth.opt.identities, "Number of identities")->check(CLI::PositiveNumber);
    s->add_option("--per-id", synth.opt.images_per_identity, "Manifest rows per identity")->check(CLI::PositiveNumber);
    s->add_option("--masked-ratio", synth.opt.masked_ratio, "Share of masked rows")->check(CLI::Range(0.0, 1.0));
    s->add_option("--size", synth.opt.size, "Image side in pixels")->check(CLI::Range(16, 4096));
    s->add_option("--seed", synth.opt.seed, "Random seed");
    s->add_option("--mask-style", synth.style, "surgical or lower_half");
    s->add_option("--pattern-threshold", synth.opt.pattern_threshold, "Cell occupancy threshold")->check(CLI::Range(1e-9, 1.0));
    s->add_option("--max-pairs", synth.max_pairs, "Pairs of each kind at most");
    s->add_option("--out", synth.out, "Output directory")->required();

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train stage 1 or stage 2");
    t->add_option("--config", tr.config, "Config file")->required();
    t->add_option("--stage", tr.stage, "1 or 2")->check(CLI::IsMember({1, 2}));
    t->add_option("--from-checkpoint", tr.from_checkpoint, "Stage-1 checkpoint, or the checkpoint to resume");
    t->add_flag("--resume", tr.resume, "Continue the given checkpoint in the same stage");
    t->add_option("--seed", tr.seed, "Overrides train.seed");
    t->add_option("--out", tr.out, "Overrides output.dir");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Verification metrics on a pairs file");
    e->add_option("--from-checkpoint", ev.checkpoint, "Checkpoint")->required();
    e->add_option("pairs,--pairs", ev.pairs, "Pairs file (defaults to data.pairs of the checkpoint)");
    e->add_option("--out", ev.out, "Also write the report here");

    RemoveArgs rm;
    auto* r = app.add_subcommand("removemask", "Restore an unmasked face");
    r->add_option("--from-checkpoint", rm.checkpoint, "Stage-2 checkpoint")->required();
    r->add_option("--in", rm.in, "Masked input image")->required();
    r->add_option("--out", rm.out, "Restored output image")->required();
    r->add_option("--size", rm.size, "Output side in pixels");

    PlotArgs pl;
    auto* p = app.add_subcommand("plot-data", "Masked/unmasked similarity histogram as CSV");
    p->add_option("--from-checkpoint", pl.checkpoint, "Checkpoint")->required();
    p->add_option("--manifest", pl.manifest, "Paired manifest (defaults to data.manifest of the checkpoint)");
    p->add_option("--out", pl.out, "CSV path (stdout when omitted)");
    p->add_option("--bins", pl.bins, "Number of bins")->check(CLI::PositiveNumber);
    p->add_option("--lo", pl.lo, "Lowest edge");
    p->add_option("--hi", pl.hi, "Highest edge");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::CallForAllHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::ParseError& ex) {
        return report("usage", ex.what(), 2);
    }

    try {
        if (*s) return cmd_synth(synth);
        if (*t) return cmd_train(tr);
        if (*e) return cmd_eval(ev);
        if (*r) return cmd_removemask(rm);
        if (*p) return cmd_plot_data(pl);
    } catch (const CliError& ex) {
        return report(ex.category, ex.what(), ex.code);
    } catch (const IoError& ex) {
        return report("io", ex.what(), 4);
    } catch (const ShapeError& ex) {
        return report("shape", ex.what(), 5);
    } catch (const DivergenceError& ex) {
        std::string records;
        for (long i : ex.batch_records()) records += (records.empty() ? "" : ",") + std::to_string(i);
        return report("divergence", std::string(ex.what()) + " (batch records " + records + ")", 6);
    } catch (const std::invalid_argument& ex) {
        return report("data", ex.what(), 5);
    } catch (const std::exception& ex) {
        return report("internal", ex.what(), 1);
    }
    return 1;
}
