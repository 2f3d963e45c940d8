#pragma once

// The full recognition / restoration network: encoder, decoupling (MDM or channel split),
// identity and mask heads, ArcFace class weights and the decoder.

#include <torch/torch.h>

#include "meer/config.hpp"
#include "meer/generator_gan.hpp"
#include "meer/model_core.hpp"

namespace meer {

struct ForwardResult {
    model::EncoderOutput enc;
    model::DecoupledFeatures feat;
    torch::Tensor z_id;
    torch::Tensor mask_logits;
};

class MeerNetworkImpl : public torch::nn::Module {
public:
    explicit MeerNetworkImpl(const ModelConfig& cfg);

    const ModelConfig& config() const noexcept { return cfg_; }

    model::EncoderOutput encode(const torch::Tensor& images);
    torch::Tensor attention(const torch::Tensor& x);
    model::DecoupledFeatures decouple(const torch::Tensor& x);

    // Encoder, decoupling and both heads.
    ForwardResult forward(const torch::Tensor& images);

    // Identity embeddings Z_id (un-normalised).
    torch::Tensor embed(const torch::Tensor& images);

    // Skips handed to the decoder for this configuration (MIS-weighted or plain).
    gan::SuppressedSkips skips(const model::EncoderOutput& enc, const torch::Tensor& attention);

    // Decodes a fake unmasked face from an already computed forward pass.
    torch::Tensor restore(const ForwardResult& fwd);
    torch::Tensor restore(const torch::Tensor& images);

    // Parameters trained by the generator/encoder optimiser (everything in this module).
    std::vector<torch::Tensor> generator_parameters() { return parameters(); }

    model::Encoder encoder{nullptr};
    model::MaskDecoupling mdm{nullptr};
    model::IdentityHead id_head{nullptr};
    model::MaskHead mask_head{nullptr};
    gan::Decoder decoder{nullptr};
    torch::Tensor class_weights;  // K x d_id

private:
    ModelConfig cfg_;
};
TORCH_MODULE(MeerNetwork);

}  // namespace meer
