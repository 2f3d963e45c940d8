#include "meer/mask_patterns.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace meer::patterns {

BinaryMask::BinaryMask(int h, int w, std::uint8_t fill)
    : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {
    if (h < 0 || w < 0) throw std::invalid_argument("BinaryMask: negative size");
}

std::size_t BinaryMask::count() const {
    return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](auto v) { return v != 0; }));
}

PatternVocabulary::PatternVocabulary(int grid_size) : grid_size_(grid_size) {
    if (grid_size < 1) throw std::invalid_argument("pattern grid size must be >= 1");
    for (int r0 = 0; r0 < grid_size; ++r0)
        for (int c0 = 0; c0 < grid_size; ++c0)
            for (int r1 = r0; r1 < grid_size; ++r1)
                for (int c1 = c0; c1 < grid_size; ++c1) rects_.push_back({r0, c0, r1, c1});
}

std::optional<GridRect> PatternVocabulary::rect(int class_id) const {
    if (class_id < 0 || class_id >= size()) throw std::out_of_range("pattern class out of range");
    if (class_id == 0) return std::nullopt;
    return rects_[static_cast<std::size_t>(class_id) - 1];
}

int PatternVocabulary::class_of(const GridRect& r) const {
    auto it = std::lower_bound(rects_.begin(), rects_.end(), r);
    if (it == rects_.end() || *it != r) throw std::invalid_argument("rectangle is not part of the vocabulary");
    return static_cast<int>(it - rects_.begin()) + 1;
}

PatternVocabulary enumerate_patterns(int grid_size) { return PatternVocabulary(grid_size); }

namespace {

int cell_extent(int pixels, int grid_size) { return (pixels + grid_size - 1) / grid_size; }

}  // namespace

GridOccupancy compute_cell_occupancy(const BinaryMask& region, int grid_size, double threshold) {
    if (!(threshold > 0.0 && threshold <= 1.0))
        throw std::invalid_argument("occupancy threshold must lie in (0, 1]");
    if (grid_size < 1) throw std::invalid_argument("pattern grid size must be >= 1");
    if (region.height < 1 || region.width < 1) throw std::invalid_argument("empty region");

    const int ch = cell_extent(region.height, grid_size);
    const int cw = cell_extent(region.width, grid_size);
    GridOccupancy occ;
    occ.grid_size = grid_size;
    occ.threshold = threshold;
    occ.coverage.assign(static_cast<std::size_t>(grid_size) * grid_size, 0.0);
    occ.occupied.assign(occ.coverage.size(), false);

    for (int r = 0; r < grid_size; ++r) {
        for (int c = 0; c < grid_size; ++c) {
            std::size_t covered = 0;
            for (int y = r * ch; y < (r + 1) * ch; ++y) {
                const int sy = std::min(y, region.height - 1);  // replication padding
                for (int x = c * cw; x < (c + 1) * cw; ++x) {
                    const int sx = std::min(x, region.width - 1);
                    covered += region.at(sy, sx) != 0;
                }
            }
            const auto idx = static_cast<std::size_t>(r) * grid_size + c;
            occ.coverage[idx] = static_cast<double>(covered) / (static_cast<double>(ch) * cw);
            occ.occupied[idx] = occ.coverage[idx] >= threshold;
        }
    }
    return occ;
}

int occupancy_to_pattern(const GridOccupancy& occ, const PatternVocabulary& vocab) {
    if (occ.grid_size != vocab.grid_size()) throw std::invalid_argument("occupancy and vocabulary grid sizes differ");
    GridRect cover{occ.grid_size, occ.grid_size, -1, -1};
    bool any = false;
    for (int r = 0; r < occ.grid_size; ++r) {
        for (int c = 0; c < occ.grid_size; ++c) {
            if (!occ.cell(r, c)) continue;
            any = true;
            cover.r0 = std::min(cover.r0, r);
            cover.c0 = std::min(cover.c0, c);
            cover.r1 = std::max(cover.r1, r);
            cover.c1 = std::max(cover.c1, c);
        }
    }
    return any ? vocab.class_of(cover) : 0;
}

int pattern_of_region(const BinaryMask& region, const PatternVocabulary& vocab, double threshold) {
    return occupancy_to_pattern(compute_cell_occupancy(region, vocab.grid_size(), threshold), vocab);
}

BinaryMask rasterize_rect(const GridRect& rect, int grid_size, int height, int width) {
    BinaryMask out(height, width);
    const int ch = cell_extent(height, grid_size);
    const int cw = cell_extent(width, grid_size);
    const int y1 = std::min(height, (rect.r1 + 1) * ch);
    const int x1 = std::min(width, (rect.c1 + 1) * cw);
    for (int y = rect.r0 * ch; y < y1; ++y)
        for (int x = rect.c0 * cw; x < x1; ++x) out.at(y, x) = 1;
    return out;
}

void write_vocabulary(std::ostream& os, const PatternVocabulary& vocab) {
    os << "0\t-\t-\t-\t-\n";
    for (int k = 1; k < vocab.size(); ++k) {
        const auto r = *vocab.rect(k);
        os << k << '\t' << r.r0 << '\t' << r.c0 << '\t' << r.r1 << '\t' << r.c1 << '\n';
    }
}

std::string vocabulary_text(const PatternVocabulary& vocab) {
    std::ostringstream os;
    write_vocabulary(os, vocab);
    return os.str();
}

}  // namespace meer::patterns
