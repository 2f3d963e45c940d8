#include "meer/generator_gan.hpp"

#include "meer/errors.hpp"

namespace meer::gan {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

torch::Tensor upsample_attention(const torch::Tensor& attention, int64_t height, int64_t width) {
    auto reduced = attention.mean(1, true);
    return F::interpolate(reduced, F::InterpolateFuncOptions()
                                       .size(std::vector<int64_t>{height, width})
                                       .mode(torch::kBilinear)
                                       .align_corners(false));
}

SuppressedSkips suppress_skips(const model::EncoderOutput& enc, const torch::Tensor& attention) {
    auto weigh = [&](const torch::Tensor& f) { return f * upsample_attention(attention, f.size(2), f.size(3)); };
    return {weigh(enc.f1), weigh(enc.f2), weigh(enc.f3)};
}

SuppressedSkips plain_skips(const model::EncoderOutput& enc) { return {enc.f1, enc.f2, enc.f3}; }

AdaptiveNormImpl::AdaptiveNormImpl(int channels_, int style_dim) : channels(channels_) {
    affine = register_module("affine", nn::Linear(style_dim, 2 * channels_));
}

torch::Tensor AdaptiveNormImpl::forward(const torch::Tensor& x, const torch::Tensor& style) {
    auto normed = F::instance_norm(x, F::InstanceNormFuncOptions().eps(1e-5));
    auto params = affine(style).unsqueeze(-1).unsqueeze(-1);
    auto gamma = params.narrow(1, 0, channels);
    auto beta = params.narrow(1, channels, channels);
    return normed * (1.0 + gamma) + beta;
}

UpBlockImpl::UpBlockImpl(int in_channels, int skip_channels_, int out_channels, int style_dim)
    : skip_channels(skip_channels_) {
    conv1 = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(in_channels + skip_channels_, out_channels, 3).padding(1)));
    conv2 = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(out_channels, out_channels, 3).padding(1)));
    project = register_module("project", nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 1)));
    norm1 = register_module("norm1", AdaptiveNorm(out_channels, style_dim));
    norm2 = register_module("norm2", AdaptiveNorm(out_channels, style_dim));
}

torch::Tensor UpBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& skip, const torch::Tensor& style) {
    auto up = F::interpolate(x, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
    auto h = up;
    if (skip_channels > 0) {
        if (!skip.defined() || skip.size(1) != skip_channels || skip.size(2) != up.size(2) || skip.size(3) != up.size(3))
            throw ShapeError("decoder skip expected " + std::to_string(skip_channels) + " x " + std::to_string(up.size(2)) +
                             " x " + std::to_string(up.size(3)));
        h = torch::cat({up, skip}, 1);
    }
    h = F::leaky_relu(norm1(conv1(h), style), F::LeakyReLUFuncOptions().negative_slope(0.2));
    h = F::leaky_relu(norm2(conv2(h), style), F::LeakyReLUFuncOptions().negative_slope(0.2));
    return h + project(up);
}

DecoderImpl::DecoderImpl(const ModelConfig& cfg)
    : sc_count_(cfg.sc_count), channels_(cfg.channels), image_size_(cfg.image_size) {
    const auto& c = cfg.channels;
    const int style = c[3];
    const bool deep = sc_count_ == 3;
    const bool shallow = sc_count_ >= 1;
    up1 = register_module("up1", UpBlock(c[3], deep ? c[2] : 0, c[2], style));
    up2 = register_module("up2", UpBlock(c[2], deep ? c[1] : 0, c[1], style));
    up3 = register_module("up3", UpBlock(c[1], shallow ? c[0] : 0, c[0], style));
    up4 = register_module("up4", UpBlock(c[0], 0, c[0], style));
    to_rgb = register_module("to_rgb", nn::Conv2d(nn::Conv2dOptions(c[0], 3, 3).padding(1)));
}

torch::Tensor DecoderImpl::style_vector(const torch::Tensor& x_id) const { return x_id.mean({2, 3}); }

torch::Tensor DecoderImpl::forward(const SuppressedSkips& skips, const torch::Tensor& x_id) {
    return forward(skips, x_id, style_vector(x_id));
}

torch::Tensor DecoderImpl::forward(const SuppressedSkips& skips, const torch::Tensor& x_id, const torch::Tensor& style) {
    const int fs = image_size_ / 16;
    if (x_id.dim() != 4 || x_id.size(1) != channels_[3] || x_id.size(2) != fs || x_id.size(3) != fs)
        throw ShapeError("decoder expects X_id of shape B x " + std::to_string(channels_[3]) + " x " + std::to_string(fs) +
                         " x " + std::to_string(fs));
    const torch::Tensor none;
    auto h = up1(x_id, sc_count_ == 3 ? skips.f3 : none, style);
    h = up2(h, sc_count_ == 3 ? skips.f2 : none, style);
    h = up3(h, sc_count_ >= 1 ? skips.f1 : none, style);
    h = up4(h, none, style);
    return torch::tanh(to_rgb(h));
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(int base_channels) {
    const int c = base_channels;
    auto lrelu = [] { return nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)); };
    net = register_module(
        "net", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(3, c, 4).stride(2).padding(1)), lrelu(),
                              nn::Conv2d(nn::Conv2dOptions(c, 2 * c, 4).stride(2).padding(1)),
                              nn::InstanceNorm2d(nn::InstanceNorm2dOptions(2 * c)), lrelu(),
                              nn::Conv2d(nn::Conv2dOptions(2 * c, 4 * c, 4).stride(2).padding(1)),
                              nn::InstanceNorm2d(nn::InstanceNorm2dOptions(4 * c)), lrelu(),
                              nn::Conv2d(nn::Conv2dOptions(4 * c, 1, 3).padding(1))));
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& image) { return net->forward(image); }

}  // namespace meer::gan
