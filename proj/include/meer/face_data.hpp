#pragma once

// Face images, procedural identities, mask overlays and dataset manifests.
//
// Pixels are float tensors of shape 3 x H x W in [-1, 1]. On disk they are 8-bit RGB files,
// converted as v / 127.5 - 1.

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "meer/mask_patterns.hpp"

namespace meer::data {

enum class MaskFlag { real_unmasked, simulated_masked, fake_unmasked };

std::string to_string(MaskFlag flag);
MaskFlag parse_mask_flag(const std::string& s);

struct AlignedFace {
    torch::Tensor pixels;  // 3 x H x W, float32
    long identity_label = 0;
    MaskFlag mask_flag = MaskFlag::real_unmasked;
    int pattern_class = 0;
    std::optional<std::string> paired_unmasked_path;

    // Throws std::invalid_argument when the range or flag/pattern invariants are broken.
    void validate() const;
};

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

struct FillTexture {
    enum class Kind { solid_color, noise };
    Kind kind = Kind::solid_color;
    std::array<float, 3> color{0.6f, 0.8f, 0.9f};
    std::uint64_t noise_seed = 0;
    float noise_amplitude = 0.15f;

    // Fill value of channel `ch` at pixel (x, y); deterministic.
    float value(int ch, int y, int x) const;
};

// A polygon overlay together with its exact pixel coverage.
class MaskSpec {
public:
    // Throws std::invalid_argument for fewer than three vertices, vertices outside
    // [0, width] x [0, height], or colours outside [-1, 1].
    MaskSpec(std::vector<Point2> polygon, FillTexture texture, int height, int width);

    const std::vector<Point2>& polygon() const noexcept { return polygon_; }
    const FillTexture& texture() const noexcept { return texture_; }
    const patterns::BinaryMask& coverage_region() const noexcept { return region_; }

private:
    std::vector<Point2> polygon_;
    FillTexture texture_;
    patterns::BinaryMask region_;
};

// A pixel is covered when its centre lies inside the polygon (even-odd rule).
patterns::BinaryMask rasterize_polygon(const std::vector<Point2>& polygon, int height, int width);

// Deterministic cartoon face. Geometry and colours depend only on id_seed; pose, lighting,
// background and sensor noise depend on variation_seed as well. size >= 16.
AlignedFace synth_identity_face(std::uint64_t id_seed, std::uint64_t variation_seed, int size = 112);

// Surgical-mask-like trapezoid over the lower face; top edge in rows [0.45H, 0.65H].
MaskSpec sample_mask_spec(std::uint64_t seed, int size);

// Full-width rectangle over rows [size/2, size); every lower-face cell is covered.
MaskSpec lower_half_mask_spec(std::uint64_t seed, int size);

struct OverlayResult {
    AlignedFace face;
    patterns::BinaryMask region;
};

// Paints the fill texture over the covered pixels of an unmasked face and labels the
// result with the pattern class of the covered region.
OverlayResult overlay_mask(const AlignedFace& face, const MaskSpec& spec,
                           const patterns::PatternVocabulary& vocab = patterns::enumerate_patterns(),
                           double threshold = patterns::kDefaultOccupancyThreshold);

// ---------------------------------------------------------------------------------------------
// Image files

torch::Tensor load_image(const std::filesystem::path& path, int size);
void save_image(const std::filesystem::path& path, const torch::Tensor& pixels);
patterns::BinaryMask load_region(const std::filesystem::path& path);
void save_region(const std::filesystem::path& path, const patterns::BinaryMask& region);

torch::Tensor region_to_tensor(const patterns::BinaryMask& region);  // H x W float {0, 1}

// ---------------------------------------------------------------------------------------------
// Manifests
//
// Text, UTF-8, one record per line, tab separated:
//   path  identity_label  mask_flag  pattern_class  paired_path-or-dash
// Lines starting with '#' are comments; the writer emits "# schema_version <n>" first.
// Relative paths are resolved against the directory holding the manifest file.

inline constexpr int kManifestSchemaVersion = 1;

struct ManifestRecord {
    std::string path;
    long identity_label = 0;
    MaskFlag mask_flag = MaskFlag::real_unmasked;
    int pattern_class = 0;
    std::optional<std::string> paired_path;

    friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

struct DatasetManifest {
    std::vector<ManifestRecord> records;
    long num_identities = 0;
    int schema_version = kManifestSchemaVersion;
    std::filesystem::path base_dir;

    std::filesystem::path resolve(const std::string& path) const;
    std::vector<std::size_t> paired_records() const;
    // Contiguous labels and per-record invariants; with check_files also file existence.
    void validate(bool check_files) const;
};

std::string manifest_text(const DatasetManifest& manifest);
DatasetManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir = {});
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path, bool check_files = true);

enum class Pairing { none, masked_unmasked };

struct BuildResult {
    DatasetManifest manifest;
    int skipped_identities = 0;  // identity directories without images
    int unlabeled_masked = 0;    // masked images without a region sidecar (pattern 0)
};

// Scans root_dir/<identity>/<image> (identities relabelled 0..n-1 in sorted order).
// "<stem>_mask<k>.png" is a simulated-masked copy of "<stem>.png" and may carry a coverage
// sidecar "<stem>_mask<k>.region.png" from which its pattern class is computed.
// Throws IoError listing every unreadable image.
BuildResult build_manifest(const std::filesystem::path& root_dir, Pairing pairing,
                           const patterns::PatternVocabulary& vocab = patterns::enumerate_patterns(),
                           double threshold = patterns::kDefaultOccupancyThreshold);

// ---------------------------------------------------------------------------------------------
// Synthetic datasets

enum class MaskStyle { surgical, lower_half };

struct SynthOptions {
    int identities = 16;
    int images_per_identity = 8;  // manifest rows per identity, masked copies included
    double masked_ratio = 0.25;   // share of each identity's rows that are masked copies
    int size = 112;
    std::uint64_t seed = 0;
    MaskStyle mask_style = MaskStyle::surgical;
    double pattern_threshold = patterns::kDefaultOccupancyThreshold;
};

// Masked rows per identity: round(ratio * n), keeping at least one unmasked source when n >= 2.
int masked_rows_per_identity(const SynthOptions& opt);

// Writes root/<id>/<n>.png, masked copies "<n>_mask<k>.png" with their region sidecars and a
// paired manifest at root/manifest.tsv, which is also returned.
DatasetManifest write_synthetic_dataset(const std::filesystem::path& root, const SynthOptions& opt);

// Loads and stacks images for the given records: B x 3 x size x size. Uses up to `workers` threads.
torch::Tensor load_batch(const DatasetManifest& manifest, const std::vector<std::size_t>& records, int size,
                         int workers = 1);
torch::Tensor load_paired_batch(const DatasetManifest& manifest, const std::vector<std::size_t>& records, int size,
                                int workers = 1);

// MEER_NUM_WORKERS, defaulting to 1.
int workers_from_env();

}  // namespace meer::data
