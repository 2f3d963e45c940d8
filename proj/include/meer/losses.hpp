#pragma once

// Objective terms for both training stages. Tensor losses return 0-dim tensors so they can be
// differentiated; composites are templated to accept tensors or plain doubles.

#include <torch/torch.h>

#include "meer/config.hpp"

namespace meer::losses {

// Additive angular margin softmax. Embeddings (B x d) and class weights (K x d) are L2-normalised;
// the target logit is s*cos(theta_y + m), the others s*cos(theta). cos(theta) is clamped to
// [-1 + 1e-7, 1 - 1e-7] before arccos. Throws std::invalid_argument for labels outside [0, K).
torch::Tensor arcface_loss(const torch::Tensor& embeddings, const torch::Tensor& class_weights,
                           const torch::Tensor& labels, double scale, double margin);

// Cosine logits normalize(Z) * normalize(W)^T, B x K.
torch::Tensor cosine_logits(const torch::Tensor& embeddings, const torch::Tensor& class_weights);

// Softmax cross-entropy over pattern logits; labels must lie in [0, num_patterns).
torch::Tensor mask_pattern_loss(const torch::Tensor& logits, const torch::Tensor& labels);

// Generator side of LSGAN: 1/2 mean((D(fake) - 1)^2).
torch::Tensor gan_generator_loss(const torch::Tensor& fake_scores);

// Discriminator side: 1/2 mean((D(real) - 1)^2) + 1/2 mean(D(fake)^2).
torch::Tensor gan_discriminator_loss(const torch::Tensor& real_scores, const torch::Tensor& fake_scores);

// Mean over all elements of (fake - real)^2.
torch::Tensor reconstruction_loss(const torch::Tensor& fake, const torch::Tensor& real);

// Batch mean of 1 - cos(z_fake, z_real). z_real is detached. Throws for zero-norm embeddings.
torch::Tensor id_preserving_loss(const torch::Tensor& z_fake, const torch::Tensor& z_real);

template <class T>
T stage1_loss(const T& l_sm, const T& l_arc, double lambda) {
    return l_sm + lambda * l_arc;
}

template <class T>
struct Stage2Terms {
    T gen_adv;       // L_D
    T id;            // ArcFace over real unmasked and simulated masked faces
    T id_fake;       // ArcFace over restored faces with the real labels
    T rec;           // pixel reconstruction
    T id_preserving;
};

// Generator / encoder objective: L_D + beta (L_id + L_id') + gamma L_rec + eta L_idp.
template <class T>
T stage2_loss(const Stage2Terms<T>& t, const LossWeights& w) {
    return t.gen_adv + w.beta * (t.id + t.id_fake) + w.gamma * t.rec + w.eta * t.id_preserving;
}

// Discriminator objective: alpha L_Dadv.
template <class T>
T discriminator_objective(const T& l_dadv, const LossWeights& w) {
    return w.alpha * l_dadv;
}

}  // namespace meer::losses
