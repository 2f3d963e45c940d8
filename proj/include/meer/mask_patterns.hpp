#pragma once

// Mask-location vocabulary: a face is split into a G x G grid and every
// occlusion is labelled by the axis-aligned block of cells it covers.
// G = 4 gives 100 rectangles plus the unoccluded class, 101 in total.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace meer::patterns {

inline constexpr int kDefaultGridSize = 4;
inline constexpr double kDefaultOccupancyThreshold = 0.25;

// Row-major binary image, 1 = covered by the mask.
struct BinaryMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> data;

    BinaryMask() = default;
    BinaryMask(int h, int w, std::uint8_t fill = 0);

    std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
    std::size_t count() const;

    friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

// Inclusive cell rectangle [r0, r1] x [c0, c1].
struct GridRect {
    int r0 = 0;
    int c0 = 0;
    int r1 = 0;
    int c1 = 0;

    friend auto operator<=>(const GridRect&, const GridRect&) = default;
};

struct GridOccupancy {
    int grid_size = kDefaultGridSize;
    double threshold = kDefaultOccupancyThreshold;
    std::vector<double> coverage;  // fraction of covered pixels per cell, row-major
    std::vector<bool> occupied;    // coverage >= threshold

    bool cell(int r, int c) const { return occupied[static_cast<std::size_t>(r) * grid_size + c]; }
};

class PatternVocabulary {
public:
    explicit PatternVocabulary(int grid_size);

    int grid_size() const noexcept { return grid_size_; }
    int size() const noexcept { return static_cast<int>(rects_.size()) + 1; }

    // Class 0 is the unoccluded pattern and has no rectangle.
    std::optional<GridRect> rect(int class_id) const;
    int class_of(const GridRect& r) const;

    const std::vector<GridRect>& rectangles() const noexcept { return rects_; }

private:
    int grid_size_;
    std::vector<GridRect> rects_;  // class k <-> rects_[k - 1], lexicographic
};

// All sub-rectangles of a G x G grid plus the empty pattern; throws for G < 1.
PatternVocabulary enumerate_patterns(int grid_size = kDefaultGridSize);

// Per-cell covered fraction against threshold in (0, 1]. Regions whose size is not a
// multiple of the grid are padded by replicating the last row/column.
GridOccupancy compute_cell_occupancy(const BinaryMask& region, int grid_size = kDefaultGridSize,
                                     double threshold = kDefaultOccupancyThreshold);

// 0 for an empty occupancy, otherwise the class of the minimal rectangle covering every occupied cell.
int occupancy_to_pattern(const GridOccupancy& occ, const PatternVocabulary& vocab);

int pattern_of_region(const BinaryMask& region, const PatternVocabulary& vocab,
                      double threshold = kDefaultOccupancyThreshold);

// Pixel-level rasterization of a grid rectangle on an h x w image. Cells are ceil(h/G) x ceil(w/G)
// pixels, the same partition compute_cell_occupancy uses after padding.
BinaryMask rasterize_rect(const GridRect& rect, int grid_size, int height, int width);

// One line per class: "<class>\t<r0>\t<c0>\t<r1>\t<c1>", with "-" fields for class 0.
void write_vocabulary(std::ostream& os, const PatternVocabulary& vocab);
std::string vocabulary_text(const PatternVocabulary& vocab);

}  // namespace meer::patterns
