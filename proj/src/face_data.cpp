#include "meer/face_data.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <random>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include "meer/errors.hpp"

namespace meer::data {

namespace fs = std::filesystem;
using patterns::BinaryMask;

std::string to_string(MaskFlag flag) {
    switch (flag) {
        case MaskFlag::real_unmasked: return "real_unmasked";
        case MaskFlag::simulated_masked: return "simulated_masked";
        case MaskFlag::fake_unmasked: return "fake_unmasked";
    }
    return "?";
}

MaskFlag parse_mask_flag(const std::string& s) {
    if (s == "real_unmasked") return MaskFlag::real_unmasked;
    if (s == "simulated_masked") return MaskFlag::simulated_masked;
    if (s == "fake_unmasked") return MaskFlag::fake_unmasked;
    throw std::invalid_argument("unknown mask flag '" + s + "'");
}

void AlignedFace::validate() const {
    if (!pixels.defined() || pixels.dim() != 3 || pixels.size(0) != 3)
        throw std::invalid_argument("face pixels must be a 3 x H x W tensor");
    if (pixels.numel() > 0 && (pixels.min().item<float>() < -1.0f || pixels.max().item<float>() > 1.0f))
        throw std::invalid_argument("face pixels outside [-1, 1]");
    if (identity_label < 0) throw std::invalid_argument("negative identity label");
    if (pattern_class < 0) throw std::invalid_argument("negative pattern class");
    if (mask_flag == MaskFlag::real_unmasked && pattern_class != 0)
        throw std::invalid_argument("real unmasked face must carry pattern class 0");
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Uniform draws from a fixed engine; avoids the implementation-defined std distributions.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    std::uint64_t bits() { return engine_(); }

private:
    std::mt19937_64 engine_;
};

}  // namespace

float FillTexture::value(int ch, int y, int x) const {
    const float base = color[static_cast<std::size_t>(ch)];
    if (kind == Kind::solid_color) return base;
    auto h = splitmix64(noise_seed ^ splitmix64((static_cast<std::uint64_t>(y) << 32) ^ static_cast<std::uint64_t>(x)));
    h = splitmix64(h + static_cast<std::uint64_t>(ch));
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    return std::clamp(base + noise_amplitude * static_cast<float>(2.0 * u - 1.0), -1.0f, 1.0f);
}

BinaryMask rasterize_polygon(const std::vector<Point2>& polygon, int height, int width) {
    BinaryMask out(height, width);
    const std::size_t n = polygon.size();
    if (n < 3) return out;
    for (int y = 0; y < height; ++y) {
        const double py = y + 0.5;
        for (int x = 0; x < width; ++x) {
            const double px = x + 0.5;
            bool inside = false;
            for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
                const auto& a = polygon[i];
                const auto& b = polygon[j];
                if ((a.y > py) != (b.y > py) && px < (b.x - a.x) * (py - a.y) / (b.y - a.y) + a.x) inside = !inside;
            }
            out.at(y, x) = inside ? 1 : 0;
        }
    }
    return out;
}

MaskSpec::MaskSpec(std::vector<Point2> polygon, FillTexture texture, int height, int width)
    : polygon_(std::move(polygon)), texture_(texture) {
    if (polygon_.size() < 3) throw std::invalid_argument("mask polygon needs at least three vertices");
    if (height < 1 || width < 1) throw std::invalid_argument("mask image size must be positive");
    for (const auto& p : polygon_)
        if (!(p.x >= 0.0 && p.x <= width && p.y >= 0.0 && p.y <= height))
            throw std::invalid_argument("mask polygon vertex outside the image");
    for (float c : texture_.color)
        if (!(c >= -1.0f && c <= 1.0f)) throw std::invalid_argument("mask colour outside [-1, 1]");
    region_ = rasterize_polygon(polygon_, height, width);
}

namespace {

struct Rgb {
    float r, g, b;
};

Rgb mix(const Rgb& a, const Rgb& b, float t) {
    return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

struct IdentityGeometry {
    Rgb skin, hair, iris, lips, brow;
    double face_rx, face_ry, face_cy;
    double hairline, hair_width;
    double eye_y, eye_dx, eye_r;
    double brow_gap, brow_thick, brow_tilt, brow_len;
    double nose_len, nose_w;
    double mouth_y, mouth_w, mouth_h;
    bool has_mark;
    double mark_x, mark_y, mark_r;
};

IdentityGeometry identity_geometry(std::uint64_t id_seed) {
    Rng rng(id_seed * 2 + 1);
    IdentityGeometry g{};
    const double tone = rng.uniform(-0.2, 0.85);
    g.skin = {static_cast<float>(tone), static_cast<float>(tone - rng.uniform(0.15, 0.45)),
              static_cast<float>(tone - rng.uniform(0.3, 0.7))};
    const double hair_level = rng.uniform(-0.95, 0.5);
    g.hair = {static_cast<float>(hair_level + rng.uniform(0.0, 0.4)), static_cast<float>(hair_level + rng.uniform(-0.1, 0.2)),
              static_cast<float>(hair_level - rng.uniform(0.0, 0.3))};
    g.iris = {static_cast<float>(rng.uniform(-0.9, 0.6)), static_cast<float>(rng.uniform(-0.9, 0.6)),
              static_cast<float>(rng.uniform(-0.9, 0.6))};
    g.lips = {static_cast<float>(rng.uniform(0.2, 0.8)), static_cast<float>(rng.uniform(-0.7, -0.1)),
              static_cast<float>(rng.uniform(-0.6, 0.0))};
    g.brow = mix(g.hair, {-1.f, -1.f, -1.f}, static_cast<float>(rng.uniform(0.1, 0.6)));
    g.face_rx = rng.uniform(0.28, 0.38);
    g.face_ry = rng.uniform(0.37, 0.46);
    g.face_cy = rng.uniform(0.5, 0.56);
    g.hairline = rng.uniform(0.12, 0.3);
    g.hair_width = rng.uniform(1.02, 1.25);
    g.eye_y = rng.uniform(0.36, 0.46);
    g.eye_dx = rng.uniform(0.11, 0.18);
    g.eye_r = rng.uniform(0.035, 0.06);
    g.brow_gap = rng.uniform(0.05, 0.09);
    g.brow_thick = rng.uniform(0.015, 0.035);
    g.brow_tilt = rng.uniform(-0.35, 0.35);
    g.brow_len = rng.uniform(0.06, 0.1);
    g.nose_len = rng.uniform(0.12, 0.2);
    g.nose_w = rng.uniform(0.025, 0.05);
    g.mouth_y = rng.uniform(0.7, 0.79);
    g.mouth_w = rng.uniform(0.07, 0.14);
    g.mouth_h = rng.uniform(0.015, 0.035);
    g.has_mark = rng.uniform() < 0.5;
    g.mark_x = rng.uniform(0.3, 0.7);
    g.mark_y = rng.uniform(0.25, 0.35);
    g.mark_r = rng.uniform(0.02, 0.04);
    return g;
}

double sq(double v) { return v * v; }

}  // namespace

AlignedFace synth_identity_face(std::uint64_t id_seed, std::uint64_t variation_seed, int size) {
    if (size < 16) throw std::invalid_argument("synthetic face size must be >= 16");
    const auto g = identity_geometry(id_seed);
    Rng var(splitmix64(id_seed) ^ (variation_seed * 0xD1B54A32D192ED03ull + 7));
    const double shift_x = var.uniform(-0.035, 0.035);
    const double shift_y = var.uniform(-0.035, 0.035);
    const double scale = var.uniform(0.95, 1.05);
    const float light = static_cast<float>(var.uniform(-0.1, 0.1));
    const Rgb background{static_cast<float>(var.uniform(-0.9, 0.9)), static_cast<float>(var.uniform(-0.9, 0.9)),
                         static_cast<float>(var.uniform(-0.9, 0.9))};
    const std::uint64_t noise_seed = var.bits();

    auto pixels = torch::empty({3, size, size}, torch::kFloat32);
    auto acc = pixels.accessor<float, 3>();
    const Rgb white{0.9f, 0.9f, 0.9f};
    const Rgb nostril = mix(g.skin, {-1.f, -1.f, -1.f}, 0.35f);
    const Rgb mark_col = mix(g.skin, {-1.f, -1.f, -1.f}, 0.6f);

    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            // Normalised face coordinates after undoing the per-image pose jitter.
            const double u = (((x + 0.5) / size) - 0.5 - shift_x) / scale + 0.5;
            const double v = (((y + 0.5) / size) - 0.5 - shift_y) / scale + 0.5;
            Rgb c = background;

            const double face = sq((u - 0.5) / g.face_rx) + sq((v - g.face_cy) / g.face_ry);
            const double hair = sq((u - 0.5) / (g.face_rx * g.hair_width)) + sq((v - g.face_cy) / (g.face_ry * 1.08));
            if (hair <= 1.0 && v < g.face_cy) c = g.hair;
            if (face <= 1.0) {
                c = g.skin;
                if (v < g.hairline + 0.03 * std::cos((u - 0.5) * 6.0)) c = g.hair;
            }
            if (face <= 1.0) {
                for (int side : {-1, 1}) {
                    const double ex = 0.5 + side * g.eye_dx;
                    const double d = sq((u - ex) / (1.6 * g.eye_r)) + sq((v - g.eye_y) / g.eye_r);
                    if (d <= 1.0) c = white;
                    if (sq(u - ex) + sq(v - g.eye_y) <= sq(0.6 * g.eye_r)) c = g.iris;
                    // brow: tilted bar above each eye
                    const double bx = (u - ex) * side;
                    const double by = v - (g.eye_y - g.eye_r - g.brow_gap) - g.brow_tilt * bx;
                    if (std::abs(bx) <= g.brow_len && std::abs(by) <= g.brow_thick) c = g.brow;
                }
                const double nose_top = g.eye_y + 0.03;
                if (v >= nose_top && v <= nose_top + g.nose_len &&
                    std::abs(u - 0.5) <= g.nose_w * (v - nose_top) / g.nose_len + 0.006)
                    c = mix(c, nostril, 0.5f);
                if (sq((u - 0.5) / g.mouth_w) + sq((v - g.mouth_y) / g.mouth_h) <= 1.0) c = g.lips;
                if (g.has_mark && sq(u - g.mark_x) + sq(v - g.mark_y) <= sq(g.mark_r)) c = mark_col;
            }

            const float vals[3] = {c.r, c.g, c.b};
            for (int ch = 0; ch < 3; ++ch) {
                auto h = splitmix64(noise_seed ^ ((static_cast<std::uint64_t>(ch) << 40) | (static_cast<std::uint64_t>(y) << 20) |
                                                  static_cast<std::uint64_t>(x)));
                const float noise = 0.04f * static_cast<float>(static_cast<double>(h >> 11) * 0x1.0p-53 - 0.5);
                acc[ch][y][x] = std::clamp(vals[ch] + light + noise, -1.0f, 1.0f);
            }
        }
    }

    AlignedFace out;
    out.pixels = pixels;
    out.identity_label = static_cast<long>(id_seed);
    out.mask_flag = MaskFlag::real_unmasked;
    out.pattern_class = 0;
    return out;
}

MaskSpec sample_mask_spec(std::uint64_t seed, int size) {
    Rng rng(seed ^ 0xA5A5A5A55A5A5A5Aull);
    const double s = size;
    const double top = rng.uniform(0.45, 0.65) * s;
    const double top_half = rng.uniform(0.2, 0.32) * s;
    const double bottom_half = rng.uniform(0.34, 0.5) * s;
    const double cx = s * (0.5 + rng.uniform(-0.03, 0.03));
    auto clampx = [&](double x) { return std::clamp(x, 0.0, s); };
    std::vector<Point2> poly{{clampx(cx - top_half), top},
                             {clampx(cx + top_half), top},
                             {clampx(cx + bottom_half), s},
                             {clampx(cx - bottom_half), s}};
    static constexpr std::array<std::array<float, 3>, 5> palette{{{0.55f, 0.8f, 0.95f},
                                                                  {0.95f, 0.95f, 0.95f},
                                                                  {-0.85f, -0.85f, -0.85f},
                                                                  {0.3f, 0.3f, 0.35f},
                                                                  {0.3f, 0.85f, 0.75f}}};
    FillTexture tex;
    tex.color = palette[rng.bits() % palette.size()];
    for (auto& c : tex.color) c = std::clamp(c + static_cast<float>(rng.uniform(-0.05, 0.05)), -1.0f, 1.0f);
    tex.kind = rng.uniform() < 0.3 ? FillTexture::Kind::noise : FillTexture::Kind::solid_color;
    tex.noise_seed = rng.bits();
    return MaskSpec(std::move(poly), tex, size, size);
}

MaskSpec lower_half_mask_spec(std::uint64_t seed, int size) {
    Rng rng(seed ^ 0x5A5A5A5AA5A5A5A5ull);
    const double s = size;
    FillTexture tex;
    for (auto& c : tex.color) c = static_cast<float>(rng.uniform(-0.9, 0.9));
    return MaskSpec({{0.0, s / 2}, {s, s / 2}, {s, s}, {0.0, s}}, tex, size, size);
}

OverlayResult overlay_mask(const AlignedFace& face, const MaskSpec& spec, const patterns::PatternVocabulary& vocab,
                           double threshold) {
    if (face.mask_flag != MaskFlag::real_unmasked) throw std::invalid_argument("overlay_mask expects a real unmasked face");
    const auto& region = spec.coverage_region();
    if (face.pixels.size(1) != region.height || face.pixels.size(2) != region.width)
        throw ShapeError("mask region does not match the face size");

    OverlayResult out;
    out.face = face;
    out.face.pixels = face.pixels.contiguous().clone();
    auto acc = out.face.pixels.accessor<float, 3>();
    for (int y = 0; y < region.height; ++y)
        for (int x = 0; x < region.width; ++x)
            if (region.at(y, x))
                for (int ch = 0; ch < 3; ++ch) acc[ch][y][x] = spec.texture().value(ch, y, x);
    out.face.mask_flag = MaskFlag::simulated_masked;
    out.face.pattern_class = patterns::pattern_of_region(region, vocab, threshold);
    out.region = region;
    return out;
}

// ---------------------------------------------------------------------------------------------

torch::Tensor load_image(const fs::path& path, int size) {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) throw IoError("cannot read image " + path.string());
    if (bgr.rows != size || bgr.cols != size) cv::resize(bgr, bgr, cv::Size(size, size), 0, 0, cv::INTER_AREA);
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    auto hwc = torch::from_blob(rgb.data, {size, size, 3}, torch::kUInt8).clone();
    return hwc.permute({2, 0, 1}).to(torch::kFloat32).div(127.5).sub(1.0).contiguous();
}

void save_image(const fs::path& path, const torch::Tensor& pixels) {
    if (pixels.dim() != 3 || pixels.size(0) != 3) throw ShapeError("save_image expects a 3 x H x W tensor");
    auto u8 = pixels.detach().to(torch::kCPU, torch::kFloat32).clamp(-1.0, 1.0).add(1.0).mul(127.5).round()
                  .to(torch::kUInt8).permute({1, 2, 0}).contiguous();
    cv::Mat rgb(static_cast<int>(u8.size(0)), static_cast<int>(u8.size(1)), CV_8UC3, u8.data_ptr<std::uint8_t>());
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), bgr)) throw IoError("cannot write image " + path.string());
}

BinaryMask load_region(const fs::path& path) {
    cv::Mat g = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
    if (g.empty()) throw IoError("cannot read region " + path.string());
    BinaryMask m(g.rows, g.cols);
    for (int y = 0; y < g.rows; ++y)
        for (int x = 0; x < g.cols; ++x) m.at(y, x) = g.at<std::uint8_t>(y, x) >= 128 ? 1 : 0;
    return m;
}

void save_region(const fs::path& path, const BinaryMask& region) {
    cv::Mat g(region.height, region.width, CV_8UC1);
    for (int y = 0; y < region.height; ++y)
        for (int x = 0; x < region.width; ++x) g.at<std::uint8_t>(y, x) = region.at(y, x) ? 255 : 0;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), g)) throw IoError("cannot write region " + path.string());
}

torch::Tensor region_to_tensor(const BinaryMask& region) {
    auto t = torch::empty({region.height, region.width}, torch::kFloat32);
    auto acc = t.accessor<float, 2>();
    for (int y = 0; y < region.height; ++y)
        for (int x = 0; x < region.width; ++x) acc[y][x] = region.at(y, x) ? 1.0f : 0.0f;
    return t;
}

// ---------------------------------------------------------------------------------------------

fs::path DatasetManifest::resolve(const std::string& path) const {
    fs::path p(path);
    return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
}

std::vector<std::size_t> DatasetManifest::paired_records() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records.size(); ++i)
        if (records[i].mask_flag == MaskFlag::simulated_masked && records[i].paired_path) out.push_back(i);
    return out;
}

void DatasetManifest::validate(bool check_files) const {
    std::vector<bool> seen(static_cast<std::size_t>(std::max(0L, num_identities)), false);
    for (const auto& r : records) {
        if (r.identity_label < 0 || r.identity_label >= num_identities)
            throw std::invalid_argument("manifest label " + std::to_string(r.identity_label) + " outside [0, num_identities)");
        seen[static_cast<std::size_t>(r.identity_label)] = true;
        if (r.mask_flag == MaskFlag::real_unmasked && r.pattern_class != 0)
            throw std::invalid_argument("real unmasked record with non-zero pattern: " + r.path);
        if (r.pattern_class < 0) throw std::invalid_argument("negative pattern class: " + r.path);
    }
    if (std::find(seen.begin(), seen.end(), false) != seen.end())
        throw std::invalid_argument("manifest identity labels are not contiguous");
    if (!check_files) return;
    std::string missing;
    for (const auto& r : records) {
        if (!fs::exists(resolve(r.path))) missing += "\n  " + resolve(r.path).string();
        if (r.paired_path && !fs::exists(resolve(*r.paired_path))) missing += "\n  " + resolve(*r.paired_path).string();
    }
    if (!missing.empty()) throw IoError("manifest references missing files:" + missing);
}

std::string manifest_text(const DatasetManifest& m) {
    std::ostringstream os;
    os << "# schema_version " << m.schema_version << '\n';
    for (const auto& r : m.records)
        os << r.path << '\t' << r.identity_label << '\t' << to_string(r.mask_flag) << '\t' << r.pattern_class << '\t'
           << (r.paired_path ? *r.paired_path : std::string("-")) << '\n';
    return os.str();
}

DatasetManifest parse_manifest(const std::string& text, const fs::path& base_dir) {
    DatasetManifest m;
    m.base_dir = base_dir;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    long max_label = -1;
    std::set<long> seen;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream h(line.substr(1));
            std::string key;
            int v = 0;
            if (h >> key >> v && key == "schema_version") m.schema_version = v;
            continue;
        }
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, '\t')) cols.push_back(col);
        if (cols.size() != 5) throw IoError("manifest line " + std::to_string(lineno) + ": expected 5 tab-separated fields");
        ManifestRecord r;
        try {
            r.path = cols[0];
            r.identity_label = std::stol(cols[1]);
            r.mask_flag = parse_mask_flag(cols[2]);
            r.pattern_class = std::stoi(cols[3]);
        } catch (const std::exception& e) {
            throw IoError("manifest line " + std::to_string(lineno) + ": " + e.what());
        }
        if (cols[4] != "-") r.paired_path = cols[4];
        const auto where = "manifest line " + std::to_string(lineno) + ": ";
        if (r.identity_label < 0 || r.pattern_class < 0) throw IoError(where + "negative label");
        if (r.mask_flag == MaskFlag::real_unmasked && r.pattern_class != 0)
            throw IoError(where + "real_unmasked record with pattern class " + cols[3]);
        max_label = std::max(max_label, r.identity_label);
        seen.insert(r.identity_label);
        m.records.push_back(std::move(r));
    }
    if (m.schema_version != kManifestSchemaVersion)
        throw IoError("unsupported manifest schema version " + std::to_string(m.schema_version));
    if (static_cast<long>(seen.size()) != max_label + 1)
        throw IoError("manifest identity labels are not contiguous from 0");
    m.num_identities = max_label + 1;
    return m;
}

void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write manifest " + path.string());
    f << manifest_text(manifest);
}

DatasetManifest read_manifest(const fs::path& path, bool check_files) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read manifest " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    auto m = parse_manifest(ss.str(), path.parent_path());
    m.validate(check_files);
    return m;
}

namespace {

bool is_image(const fs::path& p) {
    static const std::vector<std::string> exts{".png", ".jpg", ".jpeg", ".bmp", ".ppm"};
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (std::find(exts.begin(), exts.end(), ext) == exts.end()) return false;
    return p.stem().extension() != ".region";
}

}  // namespace

BuildResult build_manifest(const fs::path& root_dir, Pairing pairing, const patterns::PatternVocabulary& vocab,
                           double threshold) {
    if (!fs::is_directory(root_dir)) throw IoError("dataset root is not a directory: " + root_dir.string());
    BuildResult result;
    result.manifest.base_dir = root_dir;

    std::vector<fs::path> identity_dirs;
    for (const auto& e : fs::directory_iterator(root_dir))
        if (e.is_directory()) identity_dirs.push_back(e.path());
    std::sort(identity_dirs.begin(), identity_dirs.end());

    static const std::regex masked_name(R"((.*)_mask\d+$)");
    std::string unreadable;
    long label = 0;
    for (const auto& dir : identity_dirs) {
        std::vector<fs::path> images;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.is_regular_file() && is_image(e.path())) images.push_back(e.path());
        if (images.empty()) {
            ++result.skipped_identities;
            continue;
        }
        std::sort(images.begin(), images.end());
        for (const auto& img : images) {
            if (cv::imread(img.string(), cv::IMREAD_UNCHANGED).empty()) {
                unreadable += "\n  " + img.string();
                continue;
            }
            ManifestRecord r;
            r.path = fs::relative(img, root_dir).generic_string();
            r.identity_label = label;
            std::smatch match;
            const std::string stem = img.stem().string();
            if (std::regex_match(stem, match, masked_name)) {
                r.mask_flag = MaskFlag::simulated_masked;
                const auto sidecar = img.parent_path() / (stem + ".region.png");
                if (fs::exists(sidecar)) {
                    r.pattern_class = patterns::pattern_of_region(load_region(sidecar), vocab, threshold);
                } else {
                    ++result.unlabeled_masked;
                }
                if (pairing == Pairing::masked_unmasked) {
                    const auto source = img.parent_path() / (match[1].str() + img.extension().string());
                    if (!fs::exists(source)) throw IoError("masked image without its unmasked source: " + img.string());
                    r.paired_path = fs::relative(source, root_dir).generic_string();
                }
            }
            result.manifest.records.push_back(std::move(r));
        }
        ++label;
    }
    if (!unreadable.empty()) throw IoError("unreadable images:" + unreadable);
    result.manifest.num_identities = label;
    return result;
}

int masked_rows_per_identity(const SynthOptions& opt) {
    const int n = opt.images_per_identity;
    const int masked = static_cast<int>(std::lround(opt.masked_ratio * n));
    return n >= 2 ? std::clamp(masked, 0, n - 1) : 0;
}

DatasetManifest write_synthetic_dataset(const fs::path& root, const SynthOptions& opt) {
    if (opt.identities < 1 || opt.images_per_identity < 1) throw std::invalid_argument("need at least one identity and image");
    if (!(opt.masked_ratio >= 0.0 && opt.masked_ratio <= 1.0)) throw std::invalid_argument("masked_ratio must lie in [0, 1]");
    const int masked = masked_rows_per_identity(opt);
    const int unmasked = opt.images_per_identity - masked;
    const auto vocab = patterns::enumerate_patterns();
    fs::create_directories(root);
    char name[32];
    for (int id = 0; id < opt.identities; ++id) {
        std::snprintf(name, sizeof name, "%04d", id);
        const fs::path dir = root / name;
        fs::create_directories(dir);
        const std::uint64_t id_seed = splitmix64(opt.seed * 0x100000001B3ull + static_cast<std::uint64_t>(id));
        std::vector<AlignedFace> sources;
        for (int j = 0; j < unmasked; ++j) {
            sources.push_back(synth_identity_face(id_seed, static_cast<std::uint64_t>(j), opt.size));
            std::snprintf(name, sizeof name, "%02d.png", j);
            save_image(dir / name, sources.back().pixels);
        }
        for (int j = 0; j < masked; ++j) {
            const int src = j % unmasked;
            const std::uint64_t mask_seed = splitmix64(id_seed ^ (static_cast<std::uint64_t>(j) + 1) * 0x9E3779B97F4A7C15ull);
            const auto spec = opt.mask_style == MaskStyle::lower_half ? lower_half_mask_spec(mask_seed, opt.size)
                                                                      : sample_mask_spec(mask_seed, opt.size);
            const auto ov = overlay_mask(sources[static_cast<std::size_t>(src)], spec, vocab, opt.pattern_threshold);
            std::snprintf(name, sizeof name, "%02d_mask%d", src, j / unmasked);
            save_image(dir / (std::string(name) + ".png"), ov.face.pixels);
            save_region(dir / (std::string(name) + ".region.png"), ov.region);
        }
    }
    auto manifest = build_manifest(root, Pairing::masked_unmasked, vocab, opt.pattern_threshold).manifest;
    write_manifest(root / "manifest.tsv", manifest);
    return manifest;
}

namespace {

torch::Tensor load_paths(const std::vector<fs::path>& paths, int size, int workers) {
    auto out = torch::empty({static_cast<long>(paths.size()), 3, size, size}, torch::kFloat32);
    const int n = static_cast<int>(paths.size());
    workers = std::clamp(workers, 1, std::max(1, n));
    auto job = [&](int w) {
        for (int i = w; i < n; i += workers) out[i].copy_(load_image(paths[static_cast<std::size_t>(i)], size));
    };
    if (workers == 1) {
        job(0);
        return out;
    }
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                job(w);
            } catch (...) {
                errors[static_cast<std::size_t>(w)] = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

}  // namespace

torch::Tensor load_batch(const DatasetManifest& manifest, const std::vector<std::size_t>& records, int size, int workers) {
    std::vector<fs::path> paths;
    paths.reserve(records.size());
    for (auto i : records) paths.push_back(manifest.resolve(manifest.records.at(i).path));
    return load_paths(paths, size, workers);
}

torch::Tensor load_paired_batch(const DatasetManifest& manifest, const std::vector<std::size_t>& records, int size,
                                int workers) {
    std::vector<fs::path> paths;
    paths.reserve(records.size());
    for (auto i : records) {
        const auto& r = manifest.records.at(i);
        if (!r.paired_path) throw std::invalid_argument("record has no paired unmasked image: " + r.path);
        paths.push_back(manifest.resolve(*r.paired_path));
    }
    return load_paths(paths, size, workers);
}

int workers_from_env() {
    if (const char* v = std::getenv("MEER_NUM_WORKERS")) {
        try {
            return std::max(1, std::stoi(v));
        } catch (...) {
        }
    }
    return 1;
}

}  // namespace meer::data
