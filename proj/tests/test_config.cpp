#include "unit.hpp"

#include "meer/config.hpp"

using namespace meer;

TEST_SUITE("config") {

TEST_CASE("defaults") {
    RunConfig c;
    CHECK(c.loss.lambda == 0.01);
    CHECK(c.loss.alpha == 1.0);
    CHECK(c.loss.beta == 1.0);
    CHECK(c.loss.gamma == 10.0);
    CHECK(c.loss.eta == 0.1);
    CHECK(c.loss.arc_scale == 64.0);
    CHECK(c.loss.arc_margin == 0.5);
    CHECK(c.train.lr == 0.01);
    CHECK(c.train.weight_decay == 5e-4);
    CHECK(c.model.grid_size == 4);
    CHECK(c.model.num_patterns() == 101);
    CHECK(c.model.sc_count == 3);
    CHECK(c.model.mdm);
    CHECK(c.model.mis);
    CHECK(c.train.effective_milestones() == std::vector<int>{15, 22});
}

TEST_CASE("parse and echo round trip") {
    auto c = parse_config(
        "# comment\n"
        "model.image_size = 32\n"
        "model.channels = 8, 8, 16, 16\n"
        "model.mis = false\n"
        "loss.eta = 0   # inline\n"
        "train.milestones = 3,7\n"
        "train.lr = 0.001\n"
        "data.manifest = some/dir/manifest.tsv\n");
    CHECK(c.model.image_size == 32);
    CHECK(c.model.channels == std::array<int, 4>{8, 8, 16, 16});
    CHECK_FALSE(c.model.mis);
    CHECK(c.loss.eta == 0.0);
    CHECK(c.train.milestones == std::vector<int>{3, 7});
    CHECK(c.manifest == "some/dir/manifest.tsv");

    const auto echo = echo_config(c);
    CHECK(parse_config(echo) == c);
    CHECK(echo_config(parse_config(echo)) == echo);
}

TEST_CASE("rejections") {
    CHECK_THROWS_AS(parse_config("model.imagesize = 32\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config("train.lr = fast\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config("model.mis = maybe\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config("model.channels = 8,8,16\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config("just some words\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config("model.sc_count = 2\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config("model.image_size = 40\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config("loss.gamma = -1\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config("train.milestones = 5,5\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config("data.pattern_threshold = 0\n"), std::invalid_argument);
}

TEST_CASE("milestones default to half and three quarters") {
    TrainConfig t;
    t.epochs = 4;
    CHECK(t.effective_milestones() == std::vector<int>{2, 3});
    t.milestones = {1};
    CHECK(t.effective_milestones() == std::vector<int>{1});
}

}
