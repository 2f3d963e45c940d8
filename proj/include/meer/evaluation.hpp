#pragma once

// 1:1 verification: cosine similarities of identity embeddings, LFW-style fold accuracy,
// ROC AUC, TPR at a fixed FAR, and masked/unmasked similarity histograms.

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "meer/face_data.hpp"
#include "meer/network.hpp"

namespace meer::eval {

// ---------------------------------------------------------------------------------------------
// Metrics over (similarity, same-identity label) lists. Labels are 1 for same identity, 0 otherwise.
// A pair is accepted as "same" when similarity >= threshold.

// Splits the pairs into `folds` contiguous folds; for each, picks the threshold with the best
// accuracy on the remaining folds and scores the held-out fold. Returns the mean fold accuracy.
// Candidate thresholds are the midpoints between consecutive distinct training similarities plus
// one below the minimum and one above the maximum; ties go to the lowest threshold.
double fold_accuracy(std::span<const double> similarities, std::span<const int> labels, int folds = 10);

// Trapezoidal area under the ROC curve; tied scores contribute one half.
double roc_auc(std::span<const double> similarities, std::span<const int> labels);

// TPR at the smallest threshold whose false-accept rate is <= far (no interpolation).
double tpr_at_far(std::span<const double> similarities, std::span<const int> labels, double far = 0.01);

struct MetricReport {
    std::size_t pairs = 0;
    std::size_t positives = 0;
    std::size_t negatives = 0;
    double acc = 0.0;
    double auc = 0.0;
    double tpr_at_far = 0.0;
    double far = 0.01;
};

MetricReport evaluate_scores(std::span<const double> similarities, std::span<const int> labels, int folds = 10,
                             double far = 0.01);

// "key = value" lines: pairs, positives, negatives, ACC, AUC, TPR@FAR=1%.
std::string format_report(const MetricReport& report);

// ---------------------------------------------------------------------------------------------
// Pairs files: one pair per line, "path_a<TAB>path_b<TAB>{0,1}". Relative paths resolve against
// the file's directory.

struct VerificationPair {
    std::string path_a;
    std::string path_b;
    bool same_identity = false;
    std::optional<double> similarity;
};

std::vector<VerificationPair> read_pairs(const std::filesystem::path& path);
void write_pairs(const std::filesystem::path& path, const std::vector<VerificationPair>& pairs);

// min(same-identity pairs, different-identity pairs, max_per_class) pairs of each kind over the
// manifest's records, drawn and shuffled deterministically from `seed`.
std::vector<VerificationPair> make_balanced_pairs(const data::DatasetManifest& manifest, std::size_t max_per_class,
                                                  std::uint64_t seed);

// L2-normalised identity embeddings in evaluation mode, computed in chunks of batch_size.
torch::Tensor embed_images(MeerNetwork& net, const torch::Tensor& images, int batch_size = 64);

// Cosine similarity of every pair. Each distinct image is embedded once.
std::vector<double> verify_pairs(MeerNetwork& net, const std::vector<VerificationPair>& pairs,
                                 const std::filesystem::path& base_dir, int batch_size = 64, int workers = 1);

// ---------------------------------------------------------------------------------------------
// Intra-class masked/unmasked similarity distribution.

struct SimilarityHistogram {
    std::vector<double> bin_edges;     // ascending, size = bins + 1
    std::vector<long> counts;          // per bin
    std::vector<double> identity_means;  // per identity with at least one pair

    double mean() const;
};

std::vector<double> uniform_edges(int bins, double lo = -1.0, double hi = 1.0);

// Values below the first edge land in the first bin, values at or above the last edge in the last.
SimilarityHistogram histogram_of_means(std::vector<double> identity_means, std::vector<double> edges);

// Per identity: mean cosine between each simulated-masked face and its paired unmasked source.
SimilarityHistogram similarity_distribution(MeerNetwork& net, const data::DatasetManifest& paired_manifest,
                                            std::vector<double> edges, int workers = 1);

// "bin_lo,bin_hi,count" header followed by one row per bin.
void write_histogram_csv(std::ostream& os, const SimilarityHistogram& h);

// ---------------------------------------------------------------------------------------------
// Restoration diagnostics on paired records.

// Mean cosine between Z_id of each restored face and Z_id of its paired unmasked source.
double restored_identity_similarity(MeerNetwork& net, const data::DatasetManifest& manifest,
                                    const std::vector<std::size_t>& records, int workers = 1);

// Mean absolute pixel difference between restored and paired unmasked faces inside the mask region
// ("<image>.region.png" sidecar of every masked record).
double mask_region_error(MeerNetwork& net, const data::DatasetManifest& manifest,
                         const std::vector<std::size_t>& records, int workers = 1);

}  // namespace meer::eval
