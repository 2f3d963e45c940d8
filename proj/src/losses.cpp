#include "meer/losses.hpp"

#include <stdexcept>

#include "meer/errors.hpp"

namespace meer::losses {

namespace F = torch::nn::functional;

namespace {

void check_labels(const torch::Tensor& labels, int64_t num_classes, const char* what) {
    if (labels.dim() != 1) throw ShapeError(std::string(what) + ": labels must be a 1-d tensor");
    if (labels.numel() == 0) return;
    const auto lo = labels.min().item<int64_t>();
    const auto hi = labels.max().item<int64_t>();
    if (lo < 0 || hi >= num_classes)
        throw std::invalid_argument(std::string(what) + ": label outside [0, " + std::to_string(num_classes) + ")");
}

}  // namespace

torch::Tensor cosine_logits(const torch::Tensor& embeddings, const torch::Tensor& class_weights) {
    auto z = F::normalize(embeddings, F::NormalizeFuncOptions().dim(1));
    auto w = F::normalize(class_weights, F::NormalizeFuncOptions().dim(1));
    return z.matmul(w.t());
}

torch::Tensor arcface_loss(const torch::Tensor& embeddings, const torch::Tensor& class_weights,
                           const torch::Tensor& labels, double scale, double margin) {
    if (embeddings.dim() != 2 || class_weights.dim() != 2 || embeddings.size(1) != class_weights.size(1))
        throw ShapeError("arcface_loss: embeddings B x d and class weights K x d required");
    if (labels.size(0) != embeddings.size(0)) throw ShapeError("arcface_loss: one label per embedding required");
    check_labels(labels, class_weights.size(0), "arcface_loss");

    auto cos = cosine_logits(embeddings, class_weights).clamp(-1.0 + 1e-7, 1.0 - 1e-7);
    auto onehot = F::one_hot(labels, class_weights.size(0)).to(cos.dtype());
    auto target_cos = (cos * onehot).sum(1, true);
    auto margin_cos = torch::cos(torch::acos(target_cos) + margin);
    auto logits = scale * (cos + onehot * (margin_cos - target_cos));
    return F::cross_entropy(logits, labels);
}

torch::Tensor mask_pattern_loss(const torch::Tensor& logits, const torch::Tensor& labels) {
    if (logits.dim() != 2 || labels.size(0) != logits.size(0)) throw ShapeError("mask_pattern_loss: B x P logits required");
    check_labels(labels, logits.size(1), "mask_pattern_loss");
    return F::cross_entropy(logits, labels);
}

torch::Tensor gan_generator_loss(const torch::Tensor& fake_scores) { return 0.5 * (fake_scores - 1.0).pow(2).mean(); }

torch::Tensor gan_discriminator_loss(const torch::Tensor& real_scores, const torch::Tensor& fake_scores) {
    return 0.5 * (real_scores - 1.0).pow(2).mean() + 0.5 * fake_scores.pow(2).mean();
}

torch::Tensor reconstruction_loss(const torch::Tensor& fake, const torch::Tensor& real) {
    if (!fake.sizes().equals(real.sizes())) throw ShapeError("reconstruction_loss: image shapes differ");
    return (fake - real).pow(2).mean();
}

torch::Tensor id_preserving_loss(const torch::Tensor& z_fake, const torch::Tensor& z_real) {
    if (!z_fake.sizes().equals(z_real.sizes()) || z_fake.dim() != 2)
        throw ShapeError("id_preserving_loss: matching B x d embeddings required");
    auto target = z_real.detach();
    {
        torch::NoGradGuard guard;
        if ((z_fake.norm(2, 1) == 0).any().item<bool>() || (target.norm(2, 1) == 0).any().item<bool>())
            throw std::invalid_argument("id_preserving_loss: zero-norm embedding");
    }
    auto cos = (z_fake * target).sum(1) / (z_fake.norm(2, 1) * target.norm(2, 1));
    return (1.0 - cos).mean();
}

}  // namespace meer::losses
