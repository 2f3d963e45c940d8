#include "unit.hpp"

#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "meer/evaluation.hpp"
#include "meer/training.hpp"
#include "oracles.hpp"

using namespace meer;
using namespace meer::eval;

namespace {

struct Instance {
    std::vector<double> s;
    std::vector<int> l;
};

Instance random_instance(std::mt19937_64& rng, std::size_t n, bool coarse) {
    Instance in;
    std::uniform_real_distribution<double> u(-1, 1);
    std::bernoulli_distribution coin(0.5);
    for (std::size_t i = 0; i < n; ++i) {
        const int label = coin(rng);
        double v = u(rng) + (label ? 0.4 : 0.0);
        if (coarse) v = std::round(v * 10) / 10;  // many ties
        in.s.push_back(v);
        in.l.push_back(label);
    }
    in.l[0] = 1;
    in.l[1] = 0;
    return in;
}

RunConfig tiny_config() {
    RunConfig cfg;
    cfg.model = ModelConfig::toy(16);
    cfg.model.channels = {8, 8, 16, 16};
    cfg.model.id_dim = 16;
    cfg.model.mask_hidden = 16;
    cfg.train.batch_size = 4;
    cfg.train.max_steps = 3;
    cfg.train.lr = 0.001;
    return cfg;
}

}  // namespace

TEST_SUITE("evaluation") {

TEST_CASE("metric closed forms") {
    std::vector<double> s{0.9, 0.9, 0.9, 0.1, 0.1, 0.1, 0.9, 0.1, 0.9, 0.1};
    std::vector<int> l{1, 1, 1, 0, 0, 0, 1, 0, 1, 0};
    CHECK(fold_accuracy(s, l, 10) == 1.0);
    CHECK(roc_auc(s, l) == 1.0);
    CHECK(tpr_at_far(s, l, 0.01) == 1.0);
    CHECK(tpr_at_far(s, l, 0.5) == 1.0);

    std::vector<double> flat(10, 0.3);
    std::vector<int> prior{1, 1, 1, 0, 1, 1, 0, 1, 1, 0};  // 70 % positive
    CHECK(roc_auc(flat, prior) == 0.5);
    // Constant scores: each held-out fold gets whichever constant answer the training folds prefer.
    CHECK(fold_accuracy(flat, prior, 10) == doctest::Approx(oracle::scan_fold_accuracy(flat, prior, 10)));

    std::vector<double> inverted{0.1, 0.2, 0.9, 0.8};
    std::vector<int> il{1, 1, 0, 0};
    CHECK(tpr_at_far(inverted, il, 0.01) == 0.0);
    CHECK(roc_auc(inverted, il) == 0.0);
}

TEST_CASE("constant similarities give the majority prior") {
    std::vector<double> flat(20, 0.5);
    std::vector<int> l(20, 0);
    for (int i = 0; i < 20; i += 4) l[static_cast<std::size_t>(i)] = 1;  // 25 % positive
    CHECK(fold_accuracy(flat, l, 10) == doctest::Approx(0.75));
}

TEST_CASE("metrics equal brute-force oracles") {
    std::mt19937_64 rng(11);
    for (int rep = 0; rep < 30; ++rep) {
        const bool coarse = rep % 2 == 1;
        auto in = random_instance(rng, 200, coarse);
        CHECK(std::abs(roc_auc(in.s, in.l) - oracle::concordance_auc(in.s, in.l)) < 1e-9);
        CHECK(std::abs(fold_accuracy(in.s, in.l, 10) - oracle::scan_fold_accuracy(in.s, in.l, 10)) < 1e-9);
        for (double far : {0.0, 0.01, 0.1, 0.5})
            CHECK(tpr_at_far(in.s, in.l, far) == oracle::scan_tpr_at_far(in.s, in.l, far));
    }
}

TEST_CASE("metrics are invariant under monotone transforms") {
    std::mt19937_64 rng(12);
    auto in = random_instance(rng, 150, false);
    std::vector<double> t;
    for (double v : in.s) t.push_back(std::exp(3 * v) - 5);
    CHECK(roc_auc(t, in.l) == roc_auc(in.s, in.l));
    CHECK(fold_accuracy(t, in.l) == fold_accuracy(in.s, in.l));
    CHECK(tpr_at_far(t, in.l) == tpr_at_far(in.s, in.l));
}

TEST_CASE("metric preconditions") {
    std::vector<double> s{0.1, 0.2};
    std::vector<int> l{1, 0};
    CHECK_THROWS_AS(fold_accuracy(s, l, 10), std::invalid_argument);
    CHECK_THROWS_AS(roc_auc(s, std::vector<int>{1, 1}), std::invalid_argument);
    CHECK_THROWS_AS(roc_auc(s, std::vector<int>{1}), std::invalid_argument);
    CHECK_THROWS_AS(roc_auc(s, std::vector<int>{1, 2}), std::invalid_argument);
}

TEST_CASE("report format") {
    MetricReport r;
    r.pairs = 4;
    r.positives = 2;
    r.negatives = 2;
    r.acc = 0.75;
    r.auc = 0.5;
    r.tpr_at_far = 0.25;
    const auto text = format_report(r);
    CHECK(text.find("pairs = 4\n") != std::string::npos);
    CHECK(text.find("ACC = 0.750000\n") != std::string::npos);
    CHECK(text.find("AUC = 0.500000\n") != std::string::npos);
    CHECK(text.find("TPR@FAR=1% = 0.250000\n") != std::string::npos);
}

TEST_CASE("histogram") {
    auto edges = uniform_edges(4, -1, 1);
    CHECK(edges == std::vector<double>{-1, -0.5, 0, 0.5, 1});
    auto h = histogram_of_means({-2.0, -1.0, -0.5, 0.2, 1.0, 3.0}, edges);
    CHECK(h.counts == std::vector<long>{2, 1, 1, 2});
    long total = 0;
    for (long c : h.counts) total += c;
    CHECK(total == 6);
    std::ostringstream os;
    write_histogram_csv(os, h);
    std::string line;
    std::istringstream is(os.str());
    int rows = -1;
    while (std::getline(is, line)) ++rows;
    CHECK(rows == 4);
    CHECK(os.str().rfind("bin_lo,bin_hi,count\n", 0) == 0);
    CHECK_THROWS_AS(histogram_of_means({}, {0.0, 0.0}), std::invalid_argument);
}

TEST_CASE("pairs file round trip") {
    oracle::TempDir tmp("pairs");
    std::vector<VerificationPair> p{{"a.png", "b.png", true, std::nullopt}, {"c.png", "d.png", false, std::nullopt}};
    write_pairs(tmp.path() / "p.tsv", p);
    auto back = read_pairs(tmp.path() / "p.tsv");
    REQUIRE(back.size() == 2);
    CHECK(back[0].path_a == "a.png");
    CHECK(back[1].same_identity == false);
    std::ofstream(tmp.path() / "bad.tsv") << "a\tb\t2\n";
    CHECK_THROWS(read_pairs(tmp.path() / "bad.tsv"));
}

TEST_CASE("verification with a network") {
    oracle::TempDir tmp("verify");
    data::SynthOptions opt;
    opt.identities = 3;
    opt.images_per_identity = 4;
    opt.masked_ratio = 0.5;
    opt.size = 16;
    auto m = data::write_synthetic_dataset(tmp.path(), opt);
    auto ck = train::train_stage1(m, tiny_config());
    auto& net = ck.net;

    auto pairs = make_balanced_pairs(m, 100, 3);
    long pos = 0;
    for (const auto& p : pairs) pos += p.same_identity;
    CHECK(pos * 2 == static_cast<long>(pairs.size()));
    CHECK(pos == 18);  // 3 identities x C(4, 2)

    std::vector<VerificationPair> probe{{m.records[0].path, m.records[0].path, true, std::nullopt},
                                        {m.records[0].path, m.records[5].path, false, std::nullopt},
                                        {m.records[5].path, m.records[0].path, false, std::nullopt}};
    auto before = net->parameters()[0].clone();
    auto sims = verify_pairs(net, probe, tmp.path());
    CHECK(std::abs(sims[0] - 1.0) < 1e-6);
    CHECK(sims[1] == doctest::Approx(sims[2]).epsilon(1e-6));
    CHECK(torch::equal(before, net->parameters()[0]));

    // Batched embedding equals one-at-a-time embedding.
    std::vector<std::size_t> all(m.records.size());
    std::iota(all.begin(), all.end(), 0);
    auto imgs = data::load_batch(m, all, 16);
    auto batched = embed_images(net, imgs, 64);
    for (int64_t i = 0; i < imgs.size(0); ++i)
        CHECK((embed_images(net, imgs.narrow(0, i, 1), 1)[0] - batched[i]).abs().max().item<double>() < 1e-6);

    auto hist = similarity_distribution(net, m, uniform_edges(10));
    long total = 0;
    for (long c : hist.counts) total += c;
    CHECK(total == 3);
    CHECK(hist.identity_means.size() == 3);

    CHECK(std::isfinite(restored_identity_similarity(net, m, m.paired_records())));
    CHECK(mask_region_error(net, m, m.paired_records()) >= 0.0);
}

TEST_CASE("identical pair puts all mass in the top bin") {
    oracle::TempDir tmp("top");
    data::SynthOptions opt;
    opt.identities = 2;
    opt.images_per_identity = 2;
    opt.masked_ratio = 0.5;
    opt.size = 16;
    auto m = data::write_synthetic_dataset(tmp.path(), opt);
    auto ck = train::train_stage1(m, tiny_config());
    // Point every masked record at itself: each pair is (image, same image).
    data::DatasetManifest single = m;
    single.records.clear();
    for (const auto& r : m.records)
        if (r.paired_path && r.identity_label == 0) {
            auto self = r;
            self.paired_path = r.path;
            single.records.push_back(self);
        }
    single.num_identities = 1;
    auto hist = similarity_distribution(ck.net, single, uniform_edges(10));
    CHECK(hist.counts.back() == 1);
}

}
