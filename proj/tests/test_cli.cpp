#include "unit.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include <opencv2/imgcodecs.hpp>

#include "meer/evaluation.hpp"
#include "meer/training.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace meer;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

Run run(const fs::path& dir, const std::string& args) {
    const auto o = dir / "stdout.txt", e = dir / "stderr.txt";
    const std::string cmd = std::string(MEER_CLI) + " " + args + " >" + o.string() + " 2>" + e.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(o), slurp(e)};
}

std::string value_of(const std::string& text, const std::string& key) {
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line))
        if (line.rfind(key + " = ", 0) == 0) return line.substr(key.size() + 3);
    return {};
}

void write_config(const fs::path& path, const fs::path& data) {
    std::ofstream(path) << "model.image_size = 16\n"
                           "model.channels = 8,8,16,16\n"
                           "model.id_dim = 16\n"
                           "model.mask_hidden = 16\n"
                           "train.batch_size = 4\n"
                           "train.epochs = 1\n"
                           "train.lr = 0.001\n"
                           "data.manifest = " << (data / "manifest.tsv").string() << "\n"
                        << "data.pairs = " << (data / "pairs.tsv").string() << "\n";
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors") {
    oracle::TempDir tmp("cli_usage");
    CHECK(run(tmp.path(), "").code == 2);
    CHECK(run(tmp.path(), "--help").code == 0);
    CHECK(run(tmp.path(), "frobnicate").code == 2);
    std::ofstream(tmp.path() / "bad.conf") << "model.nonsense = 1\n";
    auto r = run(tmp.path(), "train --config " + (tmp.path() / "bad.conf").string());
    CHECK(r.code == 3);
    CHECK(r.err.rfind("error: config:", 0) == 0);
    CHECK(run(tmp.path(), "eval --from-checkpoint " + (tmp.path() / "none.ckpt").string()).code == 4);
}

TEST_CASE("end to end") {
    oracle::TempDir tmp("cli_e2e");
    const auto data = tmp.path() / "data";
    auto r = run(tmp.path(), "synth-data --ids 4 --per-id 2 --masked-ratio 0.5 --size 16 --out " + data.string());
    REQUIRE(r.code == 0);
    CHECK(value_of(r.out, "images") == "8");
    CHECK(value_of(r.out, "masked") == "4");
    auto manifest = data::read_manifest(data / "manifest.tsv");
    CHECK(manifest.records.size() == 8);
    auto pairs = eval::read_pairs(data / "pairs.tsv");
    long pos = 0;
    for (const auto& p : pairs) pos += p.same_identity;
    CHECK(pos * 2 == static_cast<long>(pairs.size()));

    const auto conf = tmp.path() / "run.conf";
    write_config(conf, data);
    const auto out = tmp.path() / "out";

    r = run(tmp.path(), "train --config " + conf.string() + " --stage 2 --out " + out.string());
    CHECK(r.code == 2);

    r = run(tmp.path(), "train --config " + conf.string() + " --stage 1 --out " + out.string());
    REQUIRE(r.code == 0);
    CHECK(value_of(r.out, "steps") == "2");
    CHECK(slurp(out / "config.txt") == [&] {
        auto cfg = load_config(conf);
        cfg.out_dir = out.string();
        return echo_config(cfg);
    }());
    const auto ckpt = out / "stage1.ckpt";
    REQUIRE(fs::exists(ckpt));

    // Resume continues the step counter and appends to the loss log.
    std::ofstream(tmp.path() / "run2.conf") << slurp(conf) << "train.epochs = 2\n";
    r = run(tmp.path(), "train --config " + (tmp.path() / "run2.conf").string() + " --stage 1 --resume --from-checkpoint " +
                            ckpt.string() + " --out " + out.string());
    REQUIRE(r.code == 0);
    CHECK(value_of(r.out, "steps") == "4");
    {
        std::istringstream csv(slurp(out / "losses_stage1.csv"));
        std::string line;
        int rows = 0;
        while (std::getline(csv, line)) ++rows;
        CHECK(rows == 5);  // header + 4 steps
    }

    r = run(tmp.path(), "train --config " + conf.string() + " --stage 2 --from-checkpoint " + ckpt.string() + " --out " +
                            (tmp.path() / "s2").string());
    REQUIRE(r.code == 0);
    CHECK(fs::exists(tmp.path() / "s2" / "stage2.ckpt"));

    // Evaluation report matches the library on the same checkpoint.
    r = run(tmp.path(), "eval --from-checkpoint " + ckpt.string() + " --out " + (tmp.path() / "report.txt").string());
    REQUIRE(r.code == 0);
    auto ck = train::load_checkpoint(ckpt);
    auto sims = eval::verify_pairs(ck.net, pairs, data);
    std::vector<int> labels;
    for (const auto& p : pairs) labels.push_back(p.same_identity);
    const auto expect =
        eval::format_report(eval::evaluate_scores(sims, labels, static_cast<int>(std::min<std::size_t>(10, pairs.size()))));
    CHECK(r.out == expect);
    CHECK(slurp(tmp.path() / "report.txt") == expect);
    for (const char* key : {"ACC", "AUC", "TPR@FAR=1%"}) CHECK_FALSE(value_of(r.out, key).empty());

    std::ofstream(tmp.path() / "empty.tsv").flush();
    r = run(tmp.path(), "eval --from-checkpoint " + ckpt.string() + " " + (tmp.path() / "empty.tsv").string());
    CHECK(r.code == 5);

    // Mask removal: fixed output size, deterministic.
    const std::string masked = manifest.records[manifest.paired_records().front()].path;
    const auto masked_path = (data / masked).string();
    auto a = tmp.path() / "a.png", b = tmp.path() / "b.png";
    REQUIRE(run(tmp.path(), "removemask --from-checkpoint " + ckpt.string() + " --in " + masked_path + " --out " + a.string()).code == 0);
    REQUIRE(run(tmp.path(), "removemask --from-checkpoint " + ckpt.string() + " --in " + masked_path + " --out " + b.string()).code == 0);
    auto img = cv::imread(a.string(), cv::IMREAD_COLOR);
    CHECK(img.rows == 112);
    CHECK(img.cols == 112);
    CHECK(slurp(a) == slurp(b));

    // Histogram agrees with the library.
    const auto csv = tmp.path() / "hist.csv";
    r = run(tmp.path(), "plot-data --from-checkpoint " + ckpt.string() + " --bins 8 --out " + csv.string());
    REQUIRE(r.code == 0);
    auto hist = eval::similarity_distribution(ck.net, manifest, eval::uniform_edges(8));
    std::ostringstream lib;
    eval::write_histogram_csv(lib, hist);
    CHECK(slurp(csv) == lib.str());
    CHECK(value_of(r.out, "identities") == "4");
}

}
