#include "meer/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "meer/errors.hpp"

namespace meer::eval {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

namespace {

void check_inputs(std::span<const double> s, std::span<const int> l) {
    if (s.size() != l.size()) throw std::invalid_argument("similarities and labels differ in length");
    for (int v : l)
        if (v != 0 && v != 1) throw std::invalid_argument("labels must be 0 or 1");
}

struct Counts {
    std::size_t pos = 0;
    std::size_t neg = 0;
};

Counts count_labels(std::span<const int> labels) {
    Counts c;
    for (int v : labels) (v ? c.pos : c.neg)++;
    return c;
}

// Best threshold on a set of (score, label) pairs, scanning the midpoint candidates in ascending order.
double best_threshold(std::vector<std::pair<double, int>> items) {
    std::sort(items.begin(), items.end());
    std::vector<double> values;
    std::vector<std::size_t> pos_le, neg_le;  // cumulative counts up to each distinct value
    std::size_t pos = 0, neg = 0;
    for (std::size_t i = 0; i < items.size(); ++i) {
        (items[i].second ? pos : neg)++;
        if (i + 1 == items.size() || items[i + 1].first != items[i].first) {
            values.push_back(items[i].first);
            pos_le.push_back(pos);
            neg_le.push_back(neg);
        }
    }
    const std::size_t total_pos = pos;
    const std::size_t m = values.size();
    // Candidate j (0..m) accepts values v_{j+1}..v_m (1-based): correct = positives above + negatives at/below.
    std::size_t best_correct = 0;
    std::size_t best_j = 0;
    for (std::size_t j = 0; j <= m; ++j) {
        const std::size_t neg_below = j == 0 ? 0 : neg_le[j - 1];
        const std::size_t pos_below = j == 0 ? 0 : pos_le[j - 1];
        const std::size_t correct = (total_pos - pos_below) + neg_below;
        if (j == 0 || correct > best_correct) {
            best_correct = correct;
            best_j = j;
        }
    }
    if (best_j == 0) return values.front() - 1.0;
    if (best_j == m) return values.back() + 1.0;
    return 0.5 * (values[best_j - 1] + values[best_j]);
}

}  // namespace

double fold_accuracy(std::span<const double> similarities, std::span<const int> labels, int folds) {
    check_inputs(similarities, labels);
    if (folds < 2) throw std::invalid_argument("fold_accuracy needs at least two folds");
    const std::size_t n = similarities.size();
    if (n < static_cast<std::size_t>(folds)) throw std::invalid_argument("fewer pairs than folds");

    double sum = 0.0;
    for (int f = 0; f < folds; ++f) {
        const std::size_t lo = n * static_cast<std::size_t>(f) / static_cast<std::size_t>(folds);
        const std::size_t hi = n * static_cast<std::size_t>(f + 1) / static_cast<std::size_t>(folds);
        std::vector<std::pair<double, int>> train;
        train.reserve(n - (hi - lo));
        for (std::size_t i = 0; i < n; ++i)
            if (i < lo || i >= hi) train.emplace_back(similarities[i], labels[i]);
        const double t = best_threshold(std::move(train));
        std::size_t correct = 0;
        for (std::size_t i = lo; i < hi; ++i) correct += ((similarities[i] >= t) == (labels[i] == 1));
        sum += static_cast<double>(correct) / static_cast<double>(hi - lo);
    }
    return sum / folds;
}

double roc_auc(std::span<const double> similarities, std::span<const int> labels) {
    check_inputs(similarities, labels);
    const auto c = count_labels(labels);
    if (c.pos == 0 || c.neg == 0) throw std::invalid_argument("roc_auc needs positive and negative pairs");
    std::vector<std::size_t> order(similarities.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return similarities[a] > similarities[b]; });

    double area = 0.0;
    double tp = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        double dtp = 0.0, dfp = 0.0;
        std::size_t j = i;
        while (j < order.size() && similarities[order[j]] == similarities[order[i]]) {
            (labels[order[j]] ? dtp : dfp) += 1.0;
            ++j;
        }
        area += dfp * (tp + 0.5 * dtp);
        tp += dtp;
        i = j;
    }
    return area / (static_cast<double>(c.pos) * static_cast<double>(c.neg));
}

double tpr_at_far(std::span<const double> similarities, std::span<const int> labels, double far) {
    check_inputs(similarities, labels);
    const auto c = count_labels(labels);
    if (c.pos == 0 || c.neg == 0) throw std::invalid_argument("tpr_at_far needs positive and negative pairs");
    std::vector<double> negs, poss, candidates(similarities.begin(), similarities.end());
    for (std::size_t i = 0; i < similarities.size(); ++i) (labels[i] ? poss : negs).push_back(similarities[i]);
    std::sort(negs.begin(), negs.end());
    std::sort(poss.begin(), poss.end());
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

    auto at_or_above = [](const std::vector<double>& v, double t) {
        return static_cast<std::size_t>(v.end() - std::lower_bound(v.begin(), v.end(), t));
    };
    for (double t : candidates) {
        const double rate = static_cast<double>(at_or_above(negs, t)) / static_cast<double>(c.neg);
        if (rate <= far) return static_cast<double>(at_or_above(poss, t)) / static_cast<double>(c.pos);
    }
    return 0.0;  // only an infinite threshold keeps the FAR
}

MetricReport evaluate_scores(std::span<const double> similarities, std::span<const int> labels, int folds, double far) {
    check_inputs(similarities, labels);
    if (similarities.empty()) throw std::invalid_argument("no pairs to evaluate");
    MetricReport r;
    const auto c = count_labels(labels);
    r.pairs = similarities.size();
    r.positives = c.pos;
    r.negatives = c.neg;
    r.far = far;
    r.acc = fold_accuracy(similarities, labels, folds);
    r.auc = roc_auc(similarities, labels);
    r.tpr_at_far = tpr_at_far(similarities, labels, far);
    return r;
}

std::string format_report(const MetricReport& r) {
    char pct[32];
    auto [end, ec] = std::to_chars(pct, pct + sizeof pct, r.far * 100.0);
    std::ostringstream os;
    os.precision(6);
    os << std::fixed;
    os << "pairs = " << r.pairs << '\n'
       << "positives = " << r.positives << '\n'
       << "negatives = " << r.negatives << '\n'
       << "ACC = " << r.acc << '\n'
       << "AUC = " << r.auc << '\n'
       << "TPR@FAR=" << std::string(pct, end) << "% = " << r.tpr_at_far << '\n';
    return os.str();
}

// ---------------------------------------------------------------------------------------------

std::vector<VerificationPair> read_pairs(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read pairs file " + path.string());
    std::vector<VerificationPair> pairs;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, '\t')) cols.push_back(col);
        if (cols.size() != 3 || (cols[2] != "0" && cols[2] != "1"))
            throw IoError("pairs line " + std::to_string(lineno) + ": expected path_a<TAB>path_b<TAB>{0,1}");
        pairs.push_back({cols[0], cols[1], cols[2] == "1", std::nullopt});
    }
    return pairs;
}

void write_pairs(const fs::path& path, const std::vector<VerificationPair>& pairs) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write pairs file " + path.string());
    for (const auto& p : pairs) f << p.path_a << '\t' << p.path_b << '\t' << (p.same_identity ? 1 : 0) << '\n';
}

std::vector<VerificationPair> make_balanced_pairs(const data::DatasetManifest& m, std::size_t max_per_class,
                                                  std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const std::size_t n = m.records.size();
    std::vector<std::pair<std::size_t, std::size_t>> same;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (m.records[i].identity_label == m.records[j].identity_label) same.emplace_back(i, j);
    const std::size_t different_total = n * (n - 1) / 2 - same.size();
    const std::size_t k = std::min({same.size(), different_total, max_per_class});
    std::shuffle(same.begin(), same.end(), rng);
    same.resize(k);

    std::vector<std::pair<std::size_t, std::size_t>> different;
    if (different_total <= 4 * k + 1024) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j)
                if (m.records[i].identity_label != m.records[j].identity_label) different.emplace_back(i, j);
        std::shuffle(different.begin(), different.end(), rng);
        different.resize(k);
    } else {
        std::set<std::pair<std::size_t, std::size_t>> seen;
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        while (different.size() < k) {
            auto a = pick(rng), b = pick(rng);
            if (a > b) std::swap(a, b);
            if (m.records[a].identity_label == m.records[b].identity_label || !seen.emplace(a, b).second) continue;
            different.emplace_back(a, b);
        }
    }

    std::vector<VerificationPair> pairs;
    for (const auto& [a, b] : same) pairs.push_back({m.records[a].path, m.records[b].path, true, std::nullopt});
    for (const auto& [a, b] : different) pairs.push_back({m.records[a].path, m.records[b].path, false, std::nullopt});
    std::shuffle(pairs.begin(), pairs.end(), rng);
    return pairs;
}

torch::Tensor embed_images(MeerNetwork& net, const torch::Tensor& images, int batch_size) {
    torch::NoGradGuard guard;
    const bool was_training = net->is_training();
    net->eval();
    std::vector<torch::Tensor> parts;
    for (int64_t begin = 0; begin < images.size(0); begin += batch_size) {
        auto chunk = images.narrow(0, begin, std::min<int64_t>(batch_size, images.size(0) - begin));
        parts.push_back(F::normalize(net->embed(chunk), F::NormalizeFuncOptions().dim(1)));
    }
    net->train(was_training);
    if (parts.empty()) return torch::empty({0, net->config().id_dim});
    return torch::cat(parts);
}

std::vector<double> verify_pairs(MeerNetwork& net, const std::vector<VerificationPair>& pairs, const fs::path& base_dir,
                                 int batch_size, int workers) {
    std::map<std::string, long> index;
    data::DatasetManifest paths;
    paths.base_dir = base_dir;
    for (const auto& p : pairs)
        for (const auto* s : {&p.path_a, &p.path_b})
            if (index.emplace(*s, static_cast<long>(paths.records.size())).second) {
                data::ManifestRecord r;
                r.path = *s;
                paths.records.push_back(std::move(r));
            }
    std::vector<std::size_t> all(paths.records.size());
    std::iota(all.begin(), all.end(), 0);
    auto emb = embed_images(net, data::load_batch(paths, all, net->config().image_size, workers), batch_size);

    std::vector<double> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
        auto s = (emb[index[p.path_a]] * emb[index[p.path_b]]).sum().item<double>();
        out.push_back(std::clamp(s, -1.0, 1.0));
    }
    return out;
}

// ---------------------------------------------------------------------------------------------

double SimilarityHistogram::mean() const {
    if (identity_means.empty()) return 0.0;
    return std::accumulate(identity_means.begin(), identity_means.end(), 0.0) / static_cast<double>(identity_means.size());
}

std::vector<double> uniform_edges(int bins, double lo, double hi) {
    if (bins < 1 || !(hi > lo)) throw std::invalid_argument("histogram needs >= 1 bin over a non-empty range");
    std::vector<double> e(static_cast<std::size_t>(bins) + 1);
    for (int i = 0; i <= bins; ++i) e[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / bins;
    return e;
}

SimilarityHistogram histogram_of_means(std::vector<double> identity_means, std::vector<double> edges) {
    if (edges.size() < 2) throw std::invalid_argument("histogram needs at least two edges");
    for (std::size_t i = 1; i < edges.size(); ++i)
        if (!(edges[i] > edges[i - 1])) throw std::invalid_argument("histogram edges must be strictly ascending");
    SimilarityHistogram h;
    h.bin_edges = std::move(edges);
    h.counts.assign(h.bin_edges.size() - 1, 0);
    for (double v : identity_means) {
        auto it = std::upper_bound(h.bin_edges.begin(), h.bin_edges.end(), v);
        long bin = static_cast<long>(it - h.bin_edges.begin()) - 1;
        bin = std::clamp(bin, 0L, static_cast<long>(h.counts.size()) - 1);
        ++h.counts[static_cast<std::size_t>(bin)];
    }
    h.identity_means = std::move(identity_means);
    return h;
}

namespace {

struct PairedEmbeddings {
    torch::Tensor masked;  // normalised
    torch::Tensor real;
    torch::Tensor fake_images;
    torch::Tensor real_images;
};

PairedEmbeddings paired_embeddings(MeerNetwork& net, const data::DatasetManifest& m, const std::vector<std::size_t>& records,
                                   int workers, bool restore) {
    PairedEmbeddings e;
    const int size = net->config().image_size;
    auto masked = data::load_batch(m, records, size, workers);
    e.real_images = data::load_paired_batch(m, records, size, workers);
    e.masked = embed_images(net, masked);
    e.real = embed_images(net, e.real_images);
    if (restore) {
        torch::NoGradGuard guard;
        const bool was_training = net->is_training();
        net->eval();
        std::vector<torch::Tensor> parts;
        for (int64_t b = 0; b < masked.size(0); b += 64) parts.push_back(net->restore(masked.narrow(0, b, std::min<int64_t>(64, masked.size(0) - b))));
        net->train(was_training);
        e.fake_images = torch::cat(parts);
    }
    return e;
}

}  // namespace

SimilarityHistogram similarity_distribution(MeerNetwork& net, const data::DatasetManifest& manifest, std::vector<double> edges,
                                            int workers) {
    const auto records = manifest.paired_records();
    if (records.empty()) throw std::invalid_argument("similarity distribution needs masked/unmasked pairs");
    auto e = paired_embeddings(net, manifest, records, workers, false);
    auto sims = (e.masked * e.real).sum(1);
    std::map<long, std::pair<double, long>> per_identity;
    for (std::size_t k = 0; k < records.size(); ++k) {
        auto& acc = per_identity[manifest.records[records[k]].identity_label];
        acc.first += sims[static_cast<long>(k)].item<double>();
        acc.second += 1;
    }
    std::vector<double> means;
    for (const auto& [id, acc] : per_identity) means.push_back(acc.first / static_cast<double>(acc.second));
    return histogram_of_means(std::move(means), std::move(edges));
}

void write_histogram_csv(std::ostream& os, const SimilarityHistogram& h) {
    os << "bin_lo,bin_hi,count\n";
    os.precision(17);
    for (std::size_t i = 0; i < h.counts.size(); ++i) os << h.bin_edges[i] << ',' << h.bin_edges[i + 1] << ',' << h.counts[i] << '\n';
}

double restored_identity_similarity(MeerNetwork& net, const data::DatasetManifest& manifest,
                                    const std::vector<std::size_t>& records, int workers) {
    if (records.empty()) throw std::invalid_argument("no records");
    auto e = paired_embeddings(net, manifest, records, workers, true);
    auto fake = embed_images(net, e.fake_images);
    return (fake * e.real).sum(1).mean().item<double>();
}

double mask_region_error(MeerNetwork& net, const data::DatasetManifest& manifest, const std::vector<std::size_t>& records,
                         int workers) {
    if (records.empty()) throw std::invalid_argument("no records");
    auto e = paired_embeddings(net, manifest, records, workers, true);
    double err = 0.0, count = 0.0;
    for (std::size_t k = 0; k < records.size(); ++k) {
        auto sidecar = manifest.resolve(manifest.records[records[k]].path);
        sidecar.replace_extension(".region.png");
        auto region = data::region_to_tensor(data::load_region(sidecar));
        auto diff = (e.fake_images[static_cast<long>(k)] - e.real_images[static_cast<long>(k)]).abs() * region.unsqueeze(0);
        err += diff.sum().item<double>();
        count += 3.0 * region.sum().item<double>();
    }
    return count > 0.0 ? err / count : 0.0;
}

}  // namespace meer::eval
