#pragma once

// Encoder E, the mask decoupling module and the identity / mask-pattern heads.

#include <torch/torch.h>

#include "meer/config.hpp"

namespace meer::model {

// Multi-level encoder features. For a 112 x 112 input: f1 56x56, f2 28x28, f3 14x14, x 7x7.
struct EncoderOutput {
    torch::Tensor f1;
    torch::Tensor f2;
    torch::Tensor f3;
    torch::Tensor x;  // hybrid feature X
};

struct DecoupledFeatures {
    torch::Tensor attention;  // Phi(X), same shape as X
    torch::Tensor x_id;       // X * Phi
    torch::Tensor x_mask;     // X * (1 - Phi)
};

// Pre-activation residual unit in the IResNet layout: BN-conv-BN-PReLU-conv(stride)-BN plus a
// projected shortcut when the shape changes.
class ResidualUnitImpl : public torch::nn::Module {
public:
    ResidualUnitImpl(int in_channels, int out_channels, int stride);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr}, bn3{nullptr};
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
    torch::nn::PReLU prelu{nullptr};
    torch::nn::Sequential shortcut{nullptr};
};
TORCH_MODULE(ResidualUnit);

class EncoderImpl : public torch::nn::Module {
public:
    explicit EncoderImpl(const ModelConfig& cfg);

    // images: B x 3 x S x S with S = cfg.image_size; throws ShapeError otherwise.
    EncoderOutput forward(const torch::Tensor& images);

    int image_size() const noexcept { return image_size_; }

private:
    int image_size_;
    torch::nn::Sequential stem{nullptr};
    torch::nn::Sequential stage1{nullptr}, stage2{nullptr}, stage3{nullptr}, stage4{nullptr};
};
TORCH_MODULE(Encoder);

// Residual attention Phi(X): a squeeze-excitation channel gate (B x C x 1 x 1) times a CBAM-style
// spatial gate (B x 1 x h x w) computed from the channel-mean and channel-max maps. Each gate is
// clamped to [1e-6, 1 - 1e-6], so Phi stays strictly inside (0, 1) even when a sigmoid saturates.
class MaskDecouplingImpl : public torch::nn::Module {
public:
    MaskDecouplingImpl(int channels, int reduction, int spatial_kernel = 3);

    torch::Tensor channel_attention(const torch::Tensor& x);
    torch::Tensor spatial_attention(const torch::Tensor& x);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Linear squeeze{nullptr}, excite{nullptr};
    torch::nn::Conv2d spatial{nullptr};
};
TORCH_MODULE(MaskDecoupling);

inline constexpr double kAttentionEps = 1e-6;

// x_id = X * Phi, x_mask = X * (1 - Phi). Throws ShapeError when the shapes differ.
DecoupledFeatures decouple(const torch::Tensor& x, const torch::Tensor& attention);

// "Without MDM" ablation: a binary selector sending the first half of the channels to the identity
// branch and the second half to the mask branch, expressed as an attention map so both variants
// share the decouple() interface.
torch::Tensor channel_split_selector(const torch::Tensor& x);

// max |x_id + x_mask - X| / max(|X|, tiny), over all entries.
double decomposition_error(const torch::Tensor& x, const DecoupledFeatures& d);

// M1: flatten -> linear(d_id) -> batch normalisation.
class IdentityHeadImpl : public torch::nn::Module {
public:
    IdentityHeadImpl(int in_features, int id_dim);
    torch::Tensor pre_norm(const torch::Tensor& x_id);
    torch::Tensor forward(const torch::Tensor& x_id);

    torch::nn::Linear fc{nullptr};
    torch::nn::BatchNorm1d bn{nullptr};
};
TORCH_MODULE(IdentityHead);

// M2: flatten -> linear -> PReLU -> linear(num_patterns).
class MaskHeadImpl : public torch::nn::Module {
public:
    MaskHeadImpl(int in_features, int hidden, int num_patterns);
    torch::Tensor forward(const torch::Tensor& x_mask);

    torch::nn::Linear fc1{nullptr}, fc2{nullptr};
    torch::nn::PReLU act{nullptr};
};
TORCH_MODULE(MaskHead);

}  // namespace meer::model
