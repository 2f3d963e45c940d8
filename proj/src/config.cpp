#include "meer/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

#include "meer/errors.hpp"

namespace meer {

ModelConfig ModelConfig::toy(int image_size) {
    ModelConfig c;
    c.image_size = image_size;
    return c;
}

ModelConfig ModelConfig::full(int image_size) {
    ModelConfig c;
    c.image_size = image_size;
    c.channels = {64, 128, 256, 512};
    c.blocks = {3, 4, 14, 3};
    return c;
}

void ModelConfig::validate() const {
    if (image_size < 16 || image_size % 16 != 0)
        throw std::invalid_argument("model.image_size must be a positive multiple of 16");
    for (int c : channels)
        if (c < 2 || c % 2 != 0) throw std::invalid_argument("model.channels must be even and >= 2");
    for (int b : blocks)
        if (b < 1) throw std::invalid_argument("model.blocks must be >= 1");
    if (id_dim < 1 || mask_hidden < 1) throw std::invalid_argument("head widths must be >= 1");
    if (grid_size < 1) throw std::invalid_argument("model.grid_size must be >= 1");
    if (attention_reduction < 1) throw std::invalid_argument("model.attention_reduction must be >= 1");
    if (num_identities < 1) throw std::invalid_argument("model.num_identities must be >= 1");
    if (sc_count != 0 && sc_count != 1 && sc_count != 3)
        throw std::invalid_argument("model.sc_count must be 0, 1 or 3");
}

void LossWeights::validate() const {
    for (double w : {lambda, alpha, beta, gamma, eta, arc_scale, arc_margin})
        if (!(w >= 0.0)) throw std::invalid_argument("loss weights must be non-negative");
}

std::vector<int> TrainConfig::effective_milestones() const {
    if (!milestones.empty()) return milestones;
    std::vector<int> m;
    for (int e : {epochs / 2, (3 * epochs) / 4})
        if (e > 0 && (m.empty() || e > m.back())) m.push_back(e);
    return m;
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw std::invalid_argument("train.batch_size must be >= 1");
    if (epochs < 1) throw std::invalid_argument("train.epochs must be >= 1");
    if (!(lr > 0.0) || !(lr_floor > 0.0) || lr_floor > lr)
        throw std::invalid_argument("train.lr and train.lr_floor must satisfy 0 < lr_floor <= lr");
    for (std::size_t i = 1; i < milestones.size(); ++i)
        if (milestones[i] <= milestones[i - 1]) throw std::invalid_argument("train.milestones must be strictly increasing");
    if (!milestones.empty() && milestones.front() < 1) throw std::invalid_argument("train.milestones must be >= 1");
    if (weight_decay < 0.0) throw std::invalid_argument("train.weight_decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw std::invalid_argument("Adam decays must lie in [0, 1)");
    if (!(masked_ratio >= 0.0 && masked_ratio <= 1.0)) throw std::invalid_argument("train.masked_ratio must lie in [0, 1]");
    if (max_steps < 0) throw std::invalid_argument("train.max_steps must be >= 0");
}

void RunConfig::validate() const {
    model.validate();
    loss.validate();
    train.validate();
    if (!(pattern_threshold > 0.0 && pattern_threshold <= 1.0))
        throw std::invalid_argument("data.pattern_threshold must lie in (0, 1]");
}

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::string fmt_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

double to_double(const std::string& key, const std::string& v) {
    double out{};
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) throw std::invalid_argument(key + ": expected a number, got '" + v + "'");
    return out;
}

long long to_int(const std::string& key, const std::string& v) {
    long long out{};
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) throw std::invalid_argument(key + ": expected an integer, got '" + v + "'");
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw std::invalid_argument(key + ": expected true/false, got '" + v + "'");
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        out.push_back(static_cast<int>(to_int(key, item)));
    }
    return out;
}

template <std::size_t N>
std::array<int, N> to_int_array(const std::string& key, const std::string& v) {
    auto list = to_int_list(key, v);
    if (list.size() != N) throw std::invalid_argument(key + ": expected " + std::to_string(N) + " comma-separated integers");
    std::array<int, N> out{};
    std::copy(list.begin(), list.end(), out.begin());
    return out;
}

template <class Range>
std::string join(const Range& r) {
    std::string s;
    for (auto v : r) {
        if (!s.empty()) s += ",";
        s += std::to_string(v);
    }
    return s;
}

struct Field {
    std::function<void(RunConfig&, const std::string& key, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define MEER_DOUBLE(name, member)                                                                        \
    {name, {[](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_double(k, v); }, \
            [](const RunConfig& c) { return fmt_double(c.member); }}}
#define MEER_INT(name, member)                                                                                          \
    {name, {[](RunConfig& c, const std::string& k, const std::string& v) { c.member = static_cast<decltype(c.member)>(to_int(k, v)); }, \
            [](const RunConfig& c) { return std::to_string(c.member); }}}
#define MEER_BOOL(name, member)                                                                        \
    {name, {[](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_bool(k, v); }, \
            [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); }}}
#define MEER_STRING(name, member)                                                           \
    {name, {[](RunConfig& c, const std::string&, const std::string& v) { c.member = v; }, \
            [](const RunConfig& c) { return c.member; }}}

const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> table{
        MEER_INT("model.image_size", model.image_size),
        {"model.channels", {[](RunConfig& c, const std::string& k, const std::string& v) { c.model.channels = to_int_array<4>(k, v); },
                            [](const RunConfig& c) { return join(c.model.channels); }}},
        {"model.blocks", {[](RunConfig& c, const std::string& k, const std::string& v) { c.model.blocks = to_int_array<4>(k, v); },
                          [](const RunConfig& c) { return join(c.model.blocks); }}},
        MEER_INT("model.id_dim", model.id_dim),
        MEER_INT("model.mask_hidden", model.mask_hidden),
        MEER_INT("model.grid_size", model.grid_size),
        MEER_INT("model.attention_reduction", model.attention_reduction),
        MEER_INT("model.num_identities", model.num_identities),
        MEER_BOOL("model.mdm", model.mdm),
        MEER_INT("model.sc_count", model.sc_count),
        MEER_BOOL("model.mis", model.mis),
        MEER_DOUBLE("loss.lambda", loss.lambda),
        MEER_DOUBLE("loss.alpha", loss.alpha),
        MEER_DOUBLE("loss.beta", loss.beta),
        MEER_DOUBLE("loss.gamma", loss.gamma),
        MEER_DOUBLE("loss.eta", loss.eta),
        MEER_DOUBLE("loss.arc_scale", loss.arc_scale),
        MEER_DOUBLE("loss.arc_margin", loss.arc_margin),
        MEER_BOOL("loss.stage2_pattern_loss", loss.stage2_pattern_loss),
        MEER_INT("train.batch_size", train.batch_size),
        MEER_INT("train.epochs", train.epochs),
        MEER_DOUBLE("train.lr", train.lr),
        MEER_DOUBLE("train.lr_floor", train.lr_floor),
        {"train.milestones", {[](RunConfig& c, const std::string& k, const std::string& v) { c.train.milestones = to_int_list(k, v); },
                              [](const RunConfig& c) { return join(c.train.milestones); }}},
        MEER_DOUBLE("train.weight_decay", train.weight_decay),
        MEER_DOUBLE("train.beta1", train.beta1),
        MEER_DOUBLE("train.beta2", train.beta2),
        MEER_INT("train.seed", train.seed),
        MEER_DOUBLE("train.masked_ratio", train.masked_ratio),
        MEER_INT("train.max_steps", train.max_steps),
        MEER_BOOL("train.debug_checks", train.debug_checks),
        MEER_DOUBLE("data.pattern_threshold", pattern_threshold),
        MEER_STRING("data.manifest", manifest),
        MEER_STRING("data.pairs", pairs),
        MEER_STRING("output.dir", out_dir),
    };
    return table;
}

#undef MEER_DOUBLE
#undef MEER_INT
#undef MEER_BOOL
#undef MEER_STRING

}  // namespace

RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected 'key = value'");
        const auto key = trim(std::string_view(line).substr(0, eq));
        const auto value = trim(std::string_view(line).substr(eq + 1));
        auto it = fields().find(key);
        if (it == fields().end()) throw std::invalid_argument("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        it->second.set(cfg, key, value);
    }
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

std::string echo_config(const RunConfig& cfg) {
    std::string out;
    for (const auto& [key, field] : fields()) out += key + " = " + field.get(cfg) + "\n";
    return out;
}

}  // namespace meer
