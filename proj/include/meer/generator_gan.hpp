#pragma once

// Decoder D restoring an unmasked face from X_id and the encoder skips, and the patch
// discriminator used for least-squares adversarial training.

#include <torch/torch.h>

#include "meer/config.hpp"
#include "meer/model_core.hpp"

namespace meer::gan {

struct SuppressedSkips {
    torch::Tensor f1;
    torch::Tensor f2;
    torch::Tensor f3;
};

// Channel-mean of Phi, bilinearly resized to height x width: B x 1 x height x width.
torch::Tensor upsample_attention(const torch::Tensor& attention, int64_t height, int64_t width);

// f_l' = f_l * U_l(Phi) for the three encoder levels.
SuppressedSkips suppress_skips(const model::EncoderOutput& enc, const torch::Tensor& attention);

// Skips taken as-is (MIS disabled).
SuppressedSkips plain_skips(const model::EncoderOutput& enc);

// Adaptive instance normalisation: per-channel scale (1 + gamma) and shift beta from a style vector.
class AdaptiveNormImpl : public torch::nn::Module {
public:
    AdaptiveNormImpl(int channels, int style_dim);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& style);

    torch::nn::Linear affine{nullptr};
    int channels;
};
TORCH_MODULE(AdaptiveNorm);

// x2 nearest upsampling, optional skip concatenation, two style-modulated 3x3 convolutions and a
// 1x1 residual projection.
class UpBlockImpl : public torch::nn::Module {
public:
    UpBlockImpl(int in_channels, int skip_channels, int out_channels, int style_dim);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& skip, const torch::Tensor& style);

    int skip_channels;
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, project{nullptr};
    AdaptiveNorm norm1{nullptr}, norm2{nullptr};
};
TORCH_MODULE(UpBlock);

// Four up blocks from the X_id resolution back to the image, concatenating f3', f2', f1' at
// 1/8, 1/4 and 1/2 resolution (sc_count = 3), only f1' (sc_count = 1) or nothing (sc_count = 0).
// Output passes through tanh, so pixels lie in [-1, 1].
class DecoderImpl : public torch::nn::Module {
public:
    explicit DecoderImpl(const ModelConfig& cfg);

    // Global average of X_id: B x C.
    torch::Tensor style_vector(const torch::Tensor& x_id) const;
    torch::Tensor forward(const SuppressedSkips& skips, const torch::Tensor& x_id);
    torch::Tensor forward(const SuppressedSkips& skips, const torch::Tensor& x_id, const torch::Tensor& style);

    int sc_count() const noexcept { return sc_count_; }

private:
    int sc_count_;
    std::array<int, 4> channels_;
    int image_size_;
    UpBlock up1{nullptr}, up2{nullptr}, up3{nullptr}, up4{nullptr};
    torch::nn::Conv2d to_rgb{nullptr};
};
TORCH_MODULE(Decoder);

// Three stride-2 4x4 convolutions and a 3x3 scoring convolution: an S x S image gives S/8 x S/8
// raw scores (no squashing).
class PatchDiscriminatorImpl : public torch::nn::Module {
public:
    explicit PatchDiscriminatorImpl(int base_channels = 64);
    torch::Tensor forward(const torch::Tensor& image);

private:
    torch::nn::Sequential net{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

}  // namespace meer::gan
