#include "unit.hpp"

#include <cmath>

#include "meer/losses.hpp"
#include "oracles.hpp"

using namespace meer;
using namespace meer::losses;

namespace {

torch::Tensor scores(double v) { return torch::full({2, 1, 4, 4}, v, torch::kFloat64); }

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("arcface degenerates to cosine softmax") {
    torch::manual_seed(0);
    auto z = torch::randn({8, 16}, torch::kFloat64);
    auto w = torch::randn({5, 16}, torch::kFloat64);
    auto y = torch::randint(0, 5, {8}, torch::kLong);
    auto cos = torch::matmul(z / z.norm(2, 1, true), (w / w.norm(2, 1, true)).t());
    auto expect = torch::nn::functional::cross_entropy(cos, y).item<double>();
    CHECK(arcface_loss(z, w, y, 1.0, 0.0).item<double>() == doctest::Approx(expect).epsilon(1e-12));
    CHECK(std::abs(arcface_loss(z, w, y, 1.0, 0.0).item<double>() - expect) < 1e-7);
}

TEST_CASE("arcface margin on the target logit only") {
    auto z = torch::tensor({{1.0, 0.0}}, torch::kFloat64);
    auto w = torch::tensor({{std::cos(0.3), std::sin(0.3)}, {0.0, 1.0}}, torch::kFloat64);
    auto y = torch::tensor({0}, torch::kLong);
    const double s = 2.0, m = 0.5;
    const double t = s * std::cos(0.3 + m), o = s * std::cos(M_PI / 2);
    const double expect = -t + std::log(std::exp(t) + std::exp(o));
    CHECK(arcface_loss(z, w, y, s, m).item<double>() == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("arcface single class and label checks") {
    auto z = torch::randn({3, 4});
    auto w = torch::randn({1, 4});
    CHECK(arcface_loss(z, w, torch::zeros({3}, torch::kLong), 64, 0.5).item<double>() == doctest::Approx(0.0));
    CHECK_THROWS_AS(arcface_loss(z, torch::randn({2, 4}), torch::tensor({0, 2, 1}), 64, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(arcface_loss(z, torch::randn({2, 4}), torch::tensor({0, -1, 1}), 64, 0.5), std::invalid_argument);
}

TEST_CASE("arcface is finite at the arccos boundary") {
    auto w = torch::tensor({{1.0, 0.0}, {0.0, 1.0}}, torch::kFloat64);
    auto z = torch::tensor({{1.0, 0.0}, {-1.0, 0.0}}, torch::kFloat64).set_requires_grad(true);
    auto l = arcface_loss(z, w, torch::tensor({0, 0}), 64, 0.5);
    l.backward();
    CHECK(std::isfinite(l.item<double>()));
    CHECK(torch::isfinite(z.grad()).all().item<bool>());
}

TEST_CASE("mask pattern loss") {
    auto y = torch::tensor({3, 100}, torch::kLong);
    auto uniform = torch::zeros({2, 101}, torch::kFloat64);
    CHECK(std::abs(mask_pattern_loss(uniform, y).item<double>() - std::log(101.0)) < 1e-6);
    auto peaked = torch::zeros({2, 101}, torch::kFloat64);
    peaked[0][3] = 50;
    peaked[1][100] = 50;
    CHECK(mask_pattern_loss(peaked, y).item<double>() < 1e-8);
    CHECK_THROWS_AS(mask_pattern_loss(uniform, torch::tensor({3, 101})), std::invalid_argument);

    torch::manual_seed(1);
    auto logits = torch::randn({6, 101}, torch::kFloat64);
    auto labels = torch::randint(0, 101, {6}, torch::kLong);
    double mean = 0;
    for (int i = 0; i < 6; ++i) {
        const auto row = logits[i];
        double lse = 0;
        for (int k = 0; k < 101; ++k) lse += std::exp(row[k].item<double>());
        mean += std::log(lse) - row[labels[i].item<long>()].item<double>();
    }
    CHECK(mask_pattern_loss(logits, labels).item<double>() == doctest::Approx(mean / 6).epsilon(1e-12));
}

TEST_CASE("stage-1 composite") {
    CHECK(stage1_loss(2.0, 10.0, 0.01) == doctest::Approx(2.1));
    CHECK(stage1_loss(0.0, 0.0, 0.7) == 0.0);
    CHECK(stage1_loss(1.234, 99.0, 0.0) == 1.234);
    // Linear in each term.
    CHECK(stage1_loss(2 * 3.0, 2 * 5.0, 0.01) == doctest::Approx(2 * stage1_loss(3.0, 5.0, 0.01)));
}

TEST_CASE("LSGAN closed forms") {
    CHECK(gan_generator_loss(scores(1.0)).item<double>() == 0.0);
    CHECK(gan_generator_loss(scores(0.5)).item<double>() == doctest::Approx(0.125));
    CHECK(gan_generator_loss(scores(0.0)).item<double>() == doctest::Approx(0.5));
    CHECK(gan_discriminator_loss(scores(1.0), scores(0.0)).item<double>() == 0.0);
    CHECK(gan_discriminator_loss(scores(0.5), scores(0.5)).item<double>() == doctest::Approx(0.25));
    CHECK(gan_discriminator_loss(scores(0.0), scores(1.0)).item<double>() == doctest::Approx(1.0));
}

TEST_CASE("reconstruction loss") {
    auto a = torch::rand({2, 3, 8, 8}, torch::kFloat64);
    CHECK(reconstruction_loss(a, a).item<double>() == 0.0);
    CHECK(reconstruction_loss(a + 0.1, a).item<double>() == doctest::Approx(0.01).epsilon(1e-9));
    auto b = torch::rand({2, 3, 8, 8}, torch::kFloat64);
    double acc = 0;
    auto fa = a.flatten(), fb = b.flatten();
    for (int64_t i = 0; i < fa.numel(); ++i) {
        const double d = fa[i].item<double>() - fb[i].item<double>();
        acc += d * d;
    }
    CHECK(std::abs(reconstruction_loss(a, b).item<double>() - acc / static_cast<double>(fa.numel())) < 1e-7);
}

TEST_CASE("id-preserving loss") {
    auto z = torch::tensor({{1.0, 2.0, 3.0}}, torch::kFloat64);
    CHECK(id_preserving_loss(z, z).item<double>() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(id_preserving_loss(torch::tensor({{1.0, 0.0}}), torch::tensor({{0.0, 3.0}})).item<double>() == doctest::Approx(1.0));
    CHECK(id_preserving_loss(z, -z).item<double>() == doctest::Approx(2.0));
    CHECK_THROWS_AS(id_preserving_loss(torch::zeros({1, 3}), z), std::invalid_argument);

    // The real embedding is a constant target.
    auto fake = torch::randn({2, 4}, torch::kFloat64).set_requires_grad(true);
    auto real = torch::randn({2, 4}, torch::kFloat64).set_requires_grad(true);
    id_preserving_loss(fake, real).backward();
    CHECK(fake.grad().defined());
    CHECK_FALSE(real.grad().defined());
}

TEST_CASE("stage-2 composite") {
    LossWeights w;
    Stage2Terms<double> zero{0, 0, 0, 0, 0};
    CHECK(stage2_loss(zero, w) == 0.0);
    Stage2Terms<double> unit{1, 1, 1, 1, 1};
    CHECK(stage2_loss(unit, w) == doctest::Approx(13.1));
    CHECK(discriminator_objective(1.0, w) == 1.0);
    for (double gamma : {1.0, 5.0, 10.0, 20.0}) {
        w.gamma = gamma;
        CHECK(stage2_loss(Stage2Terms<double>{0, 0, 0, 1, 0}, w) == gamma);
    }
    // Linear in each term.
    LossWeights d;
    Stage2Terms<double> t{0.3, 0.7, 1.1, 0.2, 0.9};
    Stage2Terms<double> t2{0.6, 1.4, 2.2, 0.4, 1.8};
    CHECK(stage2_loss(t2, d) == doctest::Approx(2 * stage2_loss(t, d)));
}

TEST_CASE("losses are non-negative") {
    torch::manual_seed(2);
    for (int i = 0; i < 20; ++i) {
        auto z = torch::randn({4, 8});
        auto w = torch::randn({3, 8});
        auto y = torch::randint(0, 3, {4}, torch::kLong);
        CHECK(arcface_loss(z, w, y, 64, 0.5).item<double>() >= 0);
        CHECK(mask_pattern_loss(torch::randn({4, 101}), torch::randint(0, 101, {4}, torch::kLong)).item<double>() >= 0);
        CHECK(gan_generator_loss(torch::randn({4, 1, 2, 2})).item<double>() >= 0);
        CHECK(gan_discriminator_loss(torch::randn({4, 1, 2, 2}), torch::randn({4, 1, 2, 2})).item<double>() >= 0);
        CHECK(id_preserving_loss(z, torch::randn({4, 8})).item<double>() >= 0);
    }
}

TEST_CASE("finite-difference gradients") {
    torch::manual_seed(3);
    auto w = torch::randn({5, 6}, torch::kFloat64);
    auto y = torch::tensor({0, 3, 4, 1}, torch::kLong);
    auto z = torch::randn({4, 6}, torch::kFloat64);
    CHECK(oracle::gradient_error([&](const torch::Tensor& x) { return arcface_loss(x, w, y, 64.0, 0.5); }, z) < 1e-4);
    CHECK(oracle::gradient_error([&](const torch::Tensor& x) { return arcface_loss(z, x, y, 64.0, 0.5); }, w) < 1e-4);
    auto real = torch::rand({1, 3, 4, 4}, torch::kFloat64);
    CHECK(oracle::gradient_error([&](const torch::Tensor& x) { return reconstruction_loss(x, real); },
                                 torch::rand({1, 3, 4, 4}, torch::kFloat64)) < 1e-4);
    auto zr = torch::randn({3, 6}, torch::kFloat64);
    CHECK(oracle::gradient_error([&](const torch::Tensor& x) { return id_preserving_loss(x, zr); },
                                 torch::randn({3, 6}, torch::kFloat64)) < 1e-4);
    auto fake = torch::randn({2, 1, 3, 3}, torch::kFloat64);
    CHECK(oracle::gradient_error([&](const torch::Tensor& x) { return gan_generator_loss(x); }, fake) < 1e-4);
    CHECK(oracle::gradient_error([&](const torch::Tensor& x) { return gan_discriminator_loss(x, fake); },
                                 torch::randn({2, 1, 3, 3}, torch::kFloat64)) < 1e-4);
}

}
