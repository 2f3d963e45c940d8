#include "unit.hpp"

#include <fstream>
#include <sstream>

#include "meer/mask_patterns.hpp"
#include "oracles.hpp"

using namespace meer::patterns;

TEST_SUITE("mask_patterns") {

TEST_CASE("vocabulary sizes") {
    CHECK(enumerate_patterns(4).size() == 101);
    CHECK(enumerate_patterns(1).size() == 2);
    CHECK(enumerate_patterns(3).size() == 37);
    CHECK_THROWS_AS(enumerate_patterns(0), std::invalid_argument);
}

TEST_CASE("vocabulary matches a brute-force rectangle enumeration") {
    for (int g : {1, 2, 3, 4, 5}) {
        const auto vocab = enumerate_patterns(g);
        const auto expected = oracle::brute_force_rectangles(g);
        REQUIRE(vocab.size() == static_cast<int>(expected.size()) + 1);
        CHECK_FALSE(vocab.rect(0).has_value());
        for (std::size_t k = 0; k < expected.size(); ++k) {
            const auto r = vocab.rect(static_cast<int>(k) + 1);
            REQUIRE(r.has_value());
            CHECK(r->r0 == expected[k].r0);
            CHECK(r->c0 == expected[k].c0);
            CHECK(r->r1 == expected[k].r1);
            CHECK(r->c1 == expected[k].c1);
            CHECK(vocab.class_of(*r) == static_cast<int>(k) + 1);
        }
    }
}

TEST_CASE("vocabulary dump matches the golden file") {
    std::ifstream f(std::string(MEER_TEST_DATA) + "/vocabulary_g4.txt");
    REQUIRE(f);
    std::stringstream ss;
    ss << f.rdbuf();
    CHECK(vocabulary_text(enumerate_patterns(4)) == ss.str());
}

TEST_CASE("cell occupancy") {
    BinaryMask ones(112, 112, 1), zeros(112, 112, 0);
    auto full = compute_cell_occupancy(ones);
    auto empty = compute_cell_occupancy(zeros);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
            CHECK(full.cell(r, c));
            CHECK_FALSE(empty.cell(r, c));
        }

    BinaryMask lower(112, 112, 0);
    for (int y = 56; y < 112; ++y)
        for (int x = 0; x < 112; ++x) lower.at(y, x) = 1;
    auto occ = compute_cell_occupancy(lower, 4, 0.25);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
            // Direct pixel count over the 28 x 28 cell.
            int covered = 0;
            for (int y = r * 28; y < (r + 1) * 28; ++y)
                for (int x = c * 28; x < (c + 1) * 28; ++x) covered += lower.at(y, x);
            CHECK(occ.cell(r, c) == (covered / 784.0 >= 0.25));
            CHECK(occ.cell(r, c) == (r >= 2));
        }

    CHECK_THROWS_AS(compute_cell_occupancy(ones, 4, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(compute_cell_occupancy(ones, 4, 1.5), std::invalid_argument);
    CHECK_NOTHROW(compute_cell_occupancy(ones, 4, 1.0));
}

TEST_CASE("threshold is inclusive") {
    // Cells are 2 x 2 pixels; one pixel covers exactly a quarter of cell (0,0).
    BinaryMask m(8, 8, 0);
    m.at(0, 0) = 1;
    auto occ = compute_cell_occupancy(m, 4, 0.25);
    CHECK(occ.coverage[0] == doctest::Approx(0.25));
    CHECK(occ.cell(0, 0));
}

TEST_CASE("non-divisible sizes pad by replication") {
    BinaryMask m(10, 10, 0);
    for (int x = 0; x < 10; ++x) m.at(9, x) = 1;  // last row only
    auto occ = compute_cell_occupancy(m, 4, 0.25);
    // Cells are 3 x 3 on a 12 x 12 padded grid; rows 9..11 are all covered after replication.
    for (int c = 0; c < 4; ++c) CHECK(occ.cell(3, c));
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c) CHECK_FALSE(occ.cell(r, c));
}

TEST_CASE("occupancy to pattern") {
    const auto vocab = enumerate_patterns(4);
    GridOccupancy occ;
    occ.grid_size = 4;
    occ.occupied.assign(16, false);
    occ.coverage.assign(16, 0.0);
    CHECK(occupancy_to_pattern(occ, vocab) == 0);

    occ.occupied.assign(16, true);
    const auto all = oracle::brute_force_rectangles(4);
    auto index_of = [&](oracle::Rect r) {
        return static_cast<int>(std::find(all.begin(), all.end(), r) - all.begin()) + 1;
    };
    CHECK(occupancy_to_pattern(occ, vocab) == index_of({0, 0, 3, 3}));

    occ.occupied.assign(16, false);
    occ.occupied[2 * 4 + 1] = true;
    CHECK(occupancy_to_pattern(occ, vocab) == index_of({2, 1, 2, 1}));

    // Non-rectangular occupancy maps to its minimal cover.
    occ.occupied.assign(16, false);
    occ.occupied[1 * 4 + 0] = true;
    occ.occupied[3 * 4 + 2] = true;
    CHECK(occupancy_to_pattern(occ, vocab) == index_of({1, 0, 3, 2}));
}

TEST_CASE("every rectangle survives a pixel raster round trip") {
    const auto vocab = enumerate_patterns(4);
    for (int size : {112, 32, 30}) {
        for (int k = 1; k < vocab.size(); ++k) {
            const auto raster = rasterize_rect(*vocab.rect(k), 4, size, size);
            CHECK(pattern_of_region(raster, vocab) == k);
        }
    }
}

TEST_CASE("class ids are stable") {
    CHECK(vocabulary_text(enumerate_patterns(4)) == vocabulary_text(enumerate_patterns(4)));
}

}
