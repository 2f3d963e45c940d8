#include "meer/model_core.hpp"

#include "meer/errors.hpp"

namespace meer::model {

namespace nn = torch::nn;

namespace {

nn::Conv2d conv3x3(int in, int out, int stride = 1) {
    return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1).bias(false));
}

std::string shape_str(const torch::Tensor& t) {
    std::string s = "[";
    for (int i = 0; i < t.dim(); ++i) s += (i ? " x " : "") + std::to_string(t.size(i));
    return s + "]";
}

}  // namespace

ResidualUnitImpl::ResidualUnitImpl(int in_channels, int out_channels, int stride) {
    bn1 = register_module("bn1", nn::BatchNorm2d(in_channels));
    conv1 = register_module("conv1", conv3x3(in_channels, out_channels));
    bn2 = register_module("bn2", nn::BatchNorm2d(out_channels));
    prelu = register_module("prelu", nn::PReLU(nn::PReLUOptions().num_parameters(out_channels)));
    conv2 = register_module("conv2", conv3x3(out_channels, out_channels, stride));
    bn3 = register_module("bn3", nn::BatchNorm2d(out_channels));
    if (stride != 1 || in_channels != out_channels) {
        shortcut = register_module(
            "shortcut", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 1).stride(stride).bias(false)),
                                       nn::BatchNorm2d(out_channels)));
    }
}

torch::Tensor ResidualUnitImpl::forward(const torch::Tensor& x) {
    auto y = bn3(conv2(prelu(bn2(conv1(bn1(x))))));
    return y + (shortcut ? shortcut->forward(x) : x);
}

EncoderImpl::EncoderImpl(const ModelConfig& cfg) : image_size_(cfg.image_size) {
    const auto& ch = cfg.channels;
    stem = register_module("stem", nn::Sequential(conv3x3(3, ch[0]), nn::BatchNorm2d(ch[0]),
                                                  nn::PReLU(nn::PReLUOptions().num_parameters(ch[0]))));
    auto make_stage = [&](int in, int out, int units) {
        nn::Sequential s;
        s->push_back(ResidualUnit(in, out, 2));
        for (int i = 1; i < units; ++i) s->push_back(ResidualUnit(out, out, 1));
        return s;
    };
    stage1 = register_module("stage1", make_stage(ch[0], ch[0], cfg.blocks[0]));
    stage2 = register_module("stage2", make_stage(ch[0], ch[1], cfg.blocks[1]));
    stage3 = register_module("stage3", make_stage(ch[1], ch[2], cfg.blocks[2]));
    stage4 = register_module("stage4", make_stage(ch[2], ch[3], cfg.blocks[3]));
}

EncoderOutput EncoderImpl::forward(const torch::Tensor& images) {
    if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != image_size_ || images.size(3) != image_size_)
        throw ShapeError("encoder expects B x 3 x " + std::to_string(image_size_) + " x " + std::to_string(image_size_) +
                         " images, got " + shape_str(images));
    EncoderOutput out;
    out.f1 = stage1->forward(stem->forward(images));
    out.f2 = stage2->forward(out.f1);
    out.f3 = stage3->forward(out.f2);
    out.x = stage4->forward(out.f3);
    return out;
}

MaskDecouplingImpl::MaskDecouplingImpl(int channels, int reduction, int spatial_kernel) {
    const int hidden = std::max(1, channels / reduction);
    squeeze = register_module("squeeze", nn::Linear(channels, hidden));
    excite = register_module("excite", nn::Linear(hidden, channels));
    spatial = register_module("spatial",
                              nn::Conv2d(nn::Conv2dOptions(2, 1, spatial_kernel).padding(spatial_kernel / 2)));
}

torch::Tensor MaskDecouplingImpl::channel_attention(const torch::Tensor& x) {
    auto pooled = x.mean({2, 3});
    auto gate = torch::sigmoid(excite(torch::relu(squeeze(pooled))));
    return gate.clamp(kAttentionEps, 1.0 - kAttentionEps).unsqueeze(-1).unsqueeze(-1);
}

torch::Tensor MaskDecouplingImpl::spatial_attention(const torch::Tensor& x) {
    auto desc = torch::cat({x.mean(1, true), std::get<0>(x.max(1, true))}, 1);
    return torch::sigmoid(spatial(desc)).clamp(kAttentionEps, 1.0 - kAttentionEps);
}

torch::Tensor MaskDecouplingImpl::forward(const torch::Tensor& x) { return channel_attention(x) * spatial_attention(x); }

DecoupledFeatures decouple(const torch::Tensor& x, const torch::Tensor& attention) {
    if (!x.sizes().equals(attention.sizes()))
        throw ShapeError("decouple: feature " + shape_str(x) + " and attention " + shape_str(attention) + " differ");
    return {attention, x * attention, x * (1.0 - attention)};
}

torch::Tensor channel_split_selector(const torch::Tensor& x) {
    if (x.dim() != 4) throw ShapeError("channel split expects B x C x h x w features");
    const auto c = x.size(1);
    auto sel = torch::zeros({1, c, 1, 1}, x.options());
    sel.narrow(1, 0, c / 2).fill_(1.0);
    return sel.expand_as(x).contiguous();
}

double decomposition_error(const torch::Tensor& x, const DecoupledFeatures& d) {
    torch::NoGradGuard guard;
    auto xd = x.to(torch::kDouble);
    auto diff = (d.x_id.to(torch::kDouble) + d.x_mask.to(torch::kDouble) - xd).abs().max().item<double>();
    auto scale = std::max(xd.abs().max().item<double>(), 1e-30);
    return diff / scale;
}

IdentityHeadImpl::IdentityHeadImpl(int in_features, int id_dim) {
    fc = register_module("fc", nn::Linear(in_features, id_dim));
    nn::init::zeros_(fc->bias);
    bn = register_module("bn", nn::BatchNorm1d(id_dim));
}

torch::Tensor IdentityHeadImpl::pre_norm(const torch::Tensor& x_id) { return fc(x_id.flatten(1)); }

torch::Tensor IdentityHeadImpl::forward(const torch::Tensor& x_id) { return bn(pre_norm(x_id)); }

MaskHeadImpl::MaskHeadImpl(int in_features, int hidden, int num_patterns) {
    fc1 = register_module("fc1", nn::Linear(in_features, hidden));
    act = register_module("act", nn::PReLU());
    fc2 = register_module("fc2", nn::Linear(hidden, num_patterns));
}

torch::Tensor MaskHeadImpl::forward(const torch::Tensor& x_mask) { return fc2(act(fc1(x_mask.flatten(1)))); }

}  // namespace meer::model
