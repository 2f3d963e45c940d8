#include "meer/network.hpp"

namespace meer {

MeerNetworkImpl::MeerNetworkImpl(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const int fs = cfg.feature_size();
    const int flat = cfg.channels[3] * fs * fs;
    encoder = register_module("encoder", model::Encoder(cfg));
    // The channel-split ablation keeps the module so checkpoints share one layout.
    mdm = register_module("mdm", model::MaskDecoupling(cfg.channels[3], cfg.attention_reduction));
    id_head = register_module("id_head", model::IdentityHead(flat, cfg.id_dim));
    mask_head = register_module("mask_head", model::MaskHead(flat, cfg.mask_hidden, cfg.num_patterns()));
    decoder = register_module("decoder", gan::Decoder(cfg));
    class_weights = register_parameter("class_weights", torch::randn({cfg.num_identities, cfg.id_dim}) * 0.01);
}

model::EncoderOutput MeerNetworkImpl::encode(const torch::Tensor& images) { return encoder(images); }

torch::Tensor MeerNetworkImpl::attention(const torch::Tensor& x) {
    return cfg_.mdm ? mdm(x) : model::channel_split_selector(x);
}

model::DecoupledFeatures MeerNetworkImpl::decouple(const torch::Tensor& x) { return model::decouple(x, attention(x)); }

ForwardResult MeerNetworkImpl::forward(const torch::Tensor& images) {
    ForwardResult r;
    r.enc = encode(images);
    r.feat = decouple(r.enc.x);
    r.z_id = id_head(r.feat.x_id);
    r.mask_logits = mask_head(r.feat.x_mask);
    return r;
}

torch::Tensor MeerNetworkImpl::embed(const torch::Tensor& images) {
    auto enc = encode(images);
    return id_head(decouple(enc.x).x_id);
}

gan::SuppressedSkips MeerNetworkImpl::skips(const model::EncoderOutput& enc, const torch::Tensor& att) {
    return cfg_.mis ? gan::suppress_skips(enc, att) : gan::plain_skips(enc);
}

torch::Tensor MeerNetworkImpl::restore(const ForwardResult& fwd) {
    return decoder->forward(skips(fwd.enc, fwd.feat.attention), fwd.feat.x_id);
}

torch::Tensor MeerNetworkImpl::restore(const torch::Tensor& images) {
    auto enc = encode(images);
    auto feat = decouple(enc.x);
    return decoder->forward(skips(enc, feat.attention), feat.x_id);
}

}  // namespace meer
