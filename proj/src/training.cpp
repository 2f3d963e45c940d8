#include "meer/training.hpp"

#include <torch/script.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "meer/errors.hpp"
#include "meer/losses.hpp"

namespace meer::train {

namespace fs = std::filesystem;
using data::DatasetManifest;
using data::MaskFlag;

// ---------------------------------------------------------------------------------------------

LrSchedule make_schedule(const TrainConfig& cfg, long steps_per_epoch) {
    LrSchedule s;
    s.initial = cfg.lr;
    s.floor = cfg.lr_floor;
    for (int e : cfg.effective_milestones()) s.milestone_steps.push_back(static_cast<long>(e) * steps_per_epoch);
    return s;
}

double lr_at(long step, const LrSchedule& schedule) {
    double lr = schedule.initial;
    for (long m : schedule.milestone_steps)
        if (step >= m) lr /= 10.0;
    return std::max(lr, schedule.floor);
}

// ---------------------------------------------------------------------------------------------

BatchSampler::BatchSampler(std::vector<std::size_t> masked, std::vector<std::size_t> unmasked, int batch_size,
                           double masked_ratio, std::uint64_t seed)
    : batch_size_(batch_size), rng_(seed) {
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    masked_.items = std::move(masked);
    unmasked_.items = std::move(unmasked);
    const auto total = masked_.items.size() + unmasked_.items.size();
    if (total == 0) throw std::invalid_argument("cannot sample batches from an empty record set");
    if (masked_.items.empty()) {
        masked_per_batch_ = 0;
    } else if (unmasked_.items.empty()) {
        masked_per_batch_ = batch_size;
    } else {
        masked_per_batch_ = static_cast<int>(std::lround(masked_ratio * batch_size));
    }
    steps_per_epoch_ = static_cast<long>((total + static_cast<std::size_t>(batch_size) - 1) / batch_size);
    // Force a shuffle on first use.
    masked_.cursor = masked_.items.size();
    unmasked_.cursor = unmasked_.items.size();
}

BatchSampler BatchSampler::for_stage1(const DatasetManifest& manifest, const TrainConfig& cfg) {
    std::vector<std::size_t> masked, unmasked;
    for (std::size_t i = 0; i < manifest.records.size(); ++i)
        (manifest.records[i].mask_flag == MaskFlag::simulated_masked ? masked : unmasked).push_back(i);
    return BatchSampler(std::move(masked), std::move(unmasked), cfg.batch_size, cfg.masked_ratio, cfg.seed);
}

BatchSampler BatchSampler::for_stage2(const DatasetManifest& manifest, const TrainConfig& cfg) {
    return BatchSampler(manifest.paired_records(), {}, cfg.batch_size, 1.0, cfg.seed);
}

std::size_t BatchSampler::draw(Pool& pool) {
    if (pool.cursor >= pool.items.size()) {
        std::sort(pool.items.begin(), pool.items.end());
        for (std::size_t i = pool.items.size(); i > 1; --i) std::swap(pool.items[i - 1], pool.items[rng_() % i]);
        pool.cursor = 0;
    }
    return pool.items[pool.cursor++];
}

std::vector<std::size_t> BatchSampler::next() {
    std::vector<std::size_t> batch;
    batch.reserve(static_cast<std::size_t>(batch_size_));
    for (int i = 0; i < masked_per_batch_; ++i) batch.push_back(draw(masked_));
    for (int i = masked_per_batch_; i < batch_size_; ++i) batch.push_back(draw(unmasked_));
    return batch;
}

// ---------------------------------------------------------------------------------------------

void write_loss_csv_header(std::ostream& os) { os << "step,l_sm,l_arc,L_D,L_Dadv,L_rec,L_idp,total\n"; }

void write_loss_csv_row(std::ostream& os, const StepLosses& l) {
    os << l.step << std::setprecision(9) << ',' << l.l_sm << ',' << l.l_arc << ',' << l.gen_adv << ',' << l.disc_adv
       << ',' << l.rec << ',' << l.id_preserving << ',' << l.total << '\n';
}

// ---------------------------------------------------------------------------------------------

namespace {

c10::Dict<std::string, at::Tensor> state_dict(const torch::nn::Module& m) {
    c10::Dict<std::string, at::Tensor> d;
    for (const auto& p : m.named_parameters(true)) d.insert(p.key(), p.value().detach().clone());
    for (const auto& b : m.named_buffers(true)) d.insert(b.key(), b.value().detach().clone());
    return d;
}

void load_state_dict(torch::nn::Module& m, const c10::Dict<std::string, at::Tensor>& d, const std::string& optional_prefix) {
    torch::NoGradGuard guard;
    auto assign = [&](const std::string& name, torch::Tensor& target) {
        auto it = d.find(name);
        const bool optional = !optional_prefix.empty() && name.rfind(optional_prefix, 0) == 0;
        if (it == d.end()) {
            if (optional) return;
            throw IoError("checkpoint lacks tensor '" + name + "'");
        }
        const auto& src = it->value();
        if (!src.sizes().equals(target.sizes())) {
            if (optional) return;
            throw IoError("checkpoint tensor '" + name + "' has a different shape");
        }
        target.copy_(src);
    };
    for (auto& p : m.named_parameters(true)) assign(p.key(), p.value());
    for (auto& b : m.named_buffers(true)) assign(b.key(), b.value());
}

at::Tensor optimizer_bytes(torch::optim::Optimizer& opt) {
    torch::serialize::OutputArchive archive;
    opt.save(archive);
    std::ostringstream os;
    archive.save_to(os);
    const auto s = os.str();
    auto t = torch::empty({static_cast<long>(s.size())}, torch::kUInt8);
    std::memcpy(t.data_ptr<std::uint8_t>(), s.data(), s.size());
    return t;
}

void restore_optimizer(torch::optim::Optimizer& opt, const at::Tensor& bytes) {
    std::string s(reinterpret_cast<const char*>(bytes.data_ptr<std::uint8_t>()), static_cast<std::size_t>(bytes.numel()));
    std::istringstream is(s);
    torch::serialize::InputArchive archive;
    archive.load_from(is);
    opt.load(archive);
}

torch::optim::AdamWOptions adam_options(const TrainConfig& cfg) {
    return torch::optim::AdamWOptions(cfg.lr).betas({cfg.beta1, cfg.beta2}).weight_decay(cfg.weight_decay);
}

void set_lr(torch::optim::Optimizer& opt, double lr) {
    for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);
}

}  // namespace

void copy_parameters(torch::nn::Module& target, const torch::nn::Module& source, const std::string& optional_prefix) {
    load_state_dict(target, state_dict(source), optional_prefix);
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
    if (!ckpt.net) throw std::invalid_argument("checkpoint without a network");
    c10::impl::GenericDict root(c10::StringType::get(), c10::AnyType::get());
    root.insert("format", std::string("meer-checkpoint"));
    root.insert("version", static_cast<int64_t>(kCheckpointVersion));
    root.insert("stage", static_cast<int64_t>(ckpt.stage));
    root.insert("step", static_cast<int64_t>(ckpt.step));
    root.insert("config", echo_config(ckpt.config));
    root.insert("network", state_dict(*ckpt.net));
    if (ckpt.disc) root.insert("discriminator", state_dict(*ckpt.disc));
    if (ckpt.opt_g) root.insert("optimizer_g", optimizer_bytes(*ckpt.opt_g));
    if (ckpt.opt_d) root.insert("optimizer_d", optimizer_bytes(*ckpt.opt_d));

    const auto bytes = torch::pickle_save(c10::IValue(root));
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const auto tmp = fs::path(path.string() + ".tmp");
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw IoError("cannot write checkpoint " + path.string());
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw IoError("short write on checkpoint " + path.string());
    }
    fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read checkpoint " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    c10::IValue value;
    try {
        value = torch::pickle_load(bytes);
    } catch (const c10::Error& e) {
        throw IoError("corrupt checkpoint " + path.string());
    }
    if (!value.isGenericDict()) throw IoError("not a checkpoint: " + path.string());
    auto root = value.toGenericDict();
    auto get = [&](const std::string& key) -> c10::IValue {
        auto it = root.find(key);
        if (it == root.end()) throw IoError("checkpoint " + path.string() + " lacks '" + key + "'");
        return it->value();
    };
    if (get("format").toStringRef() != "meer-checkpoint") throw IoError("not a checkpoint: " + path.string());
    if (get("version").toInt() != kCheckpointVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(get("version").toInt()));

    auto tensors = [](const c10::IValue& v) {
        c10::Dict<std::string, at::Tensor> d;
        for (const auto& e : v.toGenericDict()) d.insert(e.key().toStringRef(), e.value().toTensor());
        return d;
    };

    Checkpoint ckpt;
    ckpt.stage = static_cast<int>(get("stage").toInt());
    ckpt.step = get("step").toInt();
    ckpt.config = parse_config(get("config").toStringRef());
    ckpt.net = MeerNetwork(ckpt.config.model);
    load_state_dict(*ckpt.net, tensors(get("network")), "");
    if (root.contains("discriminator")) {
        ckpt.disc = gan::PatchDiscriminator(ckpt.config.model.channels[0]);
        load_state_dict(*ckpt.disc, tensors(root.at("discriminator")), "");
    }
    if (root.contains("optimizer_g")) {
        ckpt.opt_g = std::make_shared<torch::optim::AdamW>(ckpt.net->parameters(), adam_options(ckpt.config.train));
        restore_optimizer(*ckpt.opt_g, root.at("optimizer_g").toTensor());
    }
    if (root.contains("optimizer_d") && ckpt.disc) {
        ckpt.opt_d = std::make_shared<torch::optim::AdamW>(ckpt.disc->parameters(), adam_options(ckpt.config.train));
        restore_optimizer(*ckpt.opt_d, root.at("optimizer_d").toTensor());
    }
    return ckpt;
}

// ---------------------------------------------------------------------------------------------

ImageStore::ImageStore(const DatasetManifest& manifest, int size, int workers) {
    std::vector<std::size_t> all(manifest.records.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    images_ = data::load_batch(manifest, all, size, workers);
    const auto paired = manifest.paired_records();
    paired_index_.assign(manifest.records.size(), -1);
    for (std::size_t k = 0; k < paired.size(); ++k) paired_index_[paired[k]] = static_cast<long>(k);
    if (!paired.empty()) paired_ = data::load_paired_batch(manifest, paired, size, workers);
}

torch::Tensor ImageStore::images(const std::vector<std::size_t>& records) const {
    std::vector<long> idx(records.begin(), records.end());
    return images_.index_select(0, torch::tensor(idx, torch::kLong));
}

torch::Tensor ImageStore::paired(const std::vector<std::size_t>& records) const {
    std::vector<long> idx;
    for (auto r : records) {
        if (paired_index_.at(r) < 0) throw std::invalid_argument("record has no paired unmasked image");
        idx.push_back(paired_index_[r]);
    }
    return paired_.index_select(0, torch::tensor(idx, torch::kLong));
}

namespace {

torch::Tensor labels_of(const DatasetManifest& m, const std::vector<std::size_t>& batch, bool pattern) {
    std::vector<long> out;
    out.reserve(batch.size());
    for (auto i : batch) out.push_back(pattern ? m.records[i].pattern_class : m.records[i].identity_label);
    return torch::tensor(out, torch::kLong);
}

void check_finite(const torch::Tensor& loss, const std::vector<std::size_t>& batch, long step) {
    if (std::isfinite(loss.item<double>())) return;
    std::vector<long> idx(batch.begin(), batch.end());
    std::string list;
    for (auto i : idx) list += (list.empty() ? "" : ",") + std::to_string(i);
    throw DivergenceError("non-finite loss at step " + std::to_string(step) + "; batch records: " + list, idx);
}

RunConfig with_identities(RunConfig cfg, const DatasetManifest& manifest) {
    cfg.model.num_identities = static_cast<int>(std::max(1L, manifest.num_identities));
    cfg.validate();
    return cfg;
}

long total_steps(const TrainConfig& t, long steps_per_epoch) {
    return t.max_steps > 0 ? static_cast<long>(t.max_steps) : static_cast<long>(t.epochs) * steps_per_epoch;
}

}  // namespace

Checkpoint train_stage1(const DatasetManifest& manifest, const RunConfig& run_cfg, const Checkpoint* resume,
                        const TrainHooks& hooks) {
    if (manifest.records.empty()) throw std::invalid_argument("stage 1 needs a non-empty manifest");
    const RunConfig cfg = with_identities(run_cfg, manifest);
    for (const auto& r : manifest.records)
        if (r.pattern_class >= cfg.model.num_patterns())
            throw std::invalid_argument("pattern class " + std::to_string(r.pattern_class) + " outside the vocabulary");

    torch::manual_seed(cfg.train.seed);
    Checkpoint ck;
    ck.stage = 1;
    ck.config = cfg;
    ck.net = MeerNetwork(cfg.model);
    ck.opt_g = std::make_shared<torch::optim::AdamW>(ck.net->parameters(), adam_options(cfg.train));
    if (resume) {
        if (resume->stage != 1) throw std::invalid_argument("can only resume stage 1 from a stage-1 checkpoint");
        copy_parameters(*ck.net, *resume->net);
        if (resume->opt_g) restore_optimizer(*ck.opt_g, optimizer_bytes(*resume->opt_g));
        ck.step = resume->step;
    }

    ImageStore store(manifest, cfg.model.image_size, hooks.workers);
    auto sampler = BatchSampler::for_stage1(manifest, cfg.train);
    for (long s = 0; s < ck.step; ++s) sampler.next();
    const auto schedule = make_schedule(cfg.train, sampler.steps_per_epoch());
    const long last = total_steps(cfg.train, sampler.steps_per_epoch());

    auto& net = ck.net;
    net->train();
    for (; ck.step < last; ++ck.step) {
        const auto batch = sampler.next();
        auto images = store.images(batch);
        auto y_id = labels_of(manifest, batch, false);
        auto y_mask = labels_of(manifest, batch, true);

        set_lr(*ck.opt_g, lr_at(ck.step, schedule));
        ck.opt_g->zero_grad();
        auto fwd = net->forward(images);
        if (cfg.train.debug_checks) {
            const double err = model::decomposition_error(fwd.enc.x, fwd.feat);
            if (err > 1e-6) throw std::logic_error("X != X_id + X_mask (relative error " + std::to_string(err) + ")");
        }
        auto l_arc = losses::arcface_loss(fwd.z_id, net->class_weights, y_id, cfg.loss.arc_scale, cfg.loss.arc_margin);
        auto l_sm = losses::mask_pattern_loss(fwd.mask_logits, y_mask);
        auto total = losses::stage1_loss(l_sm, l_arc, cfg.loss.lambda);
        check_finite(total, batch, ck.step);
        total.backward();
        ck.opt_g->step();

        if (hooks.on_step) {
            StepLosses l;
            l.step = ck.step;
            l.l_sm = l_sm.item<double>();
            l.l_arc = l_arc.item<double>();
            l.total = total.item<double>();
            hooks.on_step(l);
        }
    }
    net->eval();
    return ck;
}

Checkpoint train_stage2(const Checkpoint& start, const DatasetManifest& manifest, const RunConfig& run_cfg,
                        const TrainHooks& hooks) {
    if (!start.net) throw std::invalid_argument("stage 2 needs a starting checkpoint");
    if (manifest.paired_records().empty())
        throw std::invalid_argument("stage 2 needs a manifest with masked/unmasked pairs");
    const RunConfig cfg = with_identities(run_cfg, manifest);
    if (cfg.model.num_identities != start.config.model.num_identities)
        throw std::invalid_argument("manifest identity count differs from the stage-1 checkpoint");
    const bool resuming = start.stage == 2;

    torch::manual_seed(cfg.train.seed);
    Checkpoint ck;
    ck.stage = 2;
    ck.config = cfg;
    ck.net = MeerNetwork(cfg.model);
    ck.disc = gan::PatchDiscriminator(cfg.model.channels[0]);
    // The stage-1 decoder was never trained and may have a different skip layout.
    copy_parameters(*ck.net, *start.net, resuming ? "" : "decoder.");
    ck.opt_g = std::make_shared<torch::optim::AdamW>(ck.net->parameters(), adam_options(cfg.train));
    ck.opt_d = std::make_shared<torch::optim::AdamW>(ck.disc->parameters(), adam_options(cfg.train));
    if (resuming) {
        if (!start.disc) throw std::invalid_argument("stage-2 checkpoint without a discriminator");
        copy_parameters(*ck.disc, *start.disc);
        if (start.opt_g) restore_optimizer(*ck.opt_g, optimizer_bytes(*start.opt_g));
        if (start.opt_d) restore_optimizer(*ck.opt_d, optimizer_bytes(*start.opt_d));
        ck.step = start.step;
    }

    ImageStore store(manifest, cfg.model.image_size, hooks.workers);
    auto sampler = BatchSampler::for_stage2(manifest, cfg.train);
    for (long s = 0; s < ck.step; ++s) sampler.next();
    const auto schedule = make_schedule(cfg.train, sampler.steps_per_epoch());
    const long last = total_steps(cfg.train, sampler.steps_per_epoch());
    const auto& w = cfg.loss;

    auto& net = ck.net;
    auto& disc = ck.disc;
    net->train();
    disc->train();
    for (; ck.step < last; ++ck.step) {
        const auto batch = sampler.next();
        auto masked = store.images(batch);
        auto real = store.paired(batch);
        auto y_id = labels_of(manifest, batch, false);
        const double lr = lr_at(ck.step, schedule);
        set_lr(*ck.opt_g, lr);
        set_lr(*ck.opt_d, lr);

        auto fwd = net->forward(masked);
        auto fake = net->restore(fwd);

        // Discriminator update on detached fakes.
        ck.opt_d->zero_grad();
        for (auto& p : disc->parameters()) p.set_requires_grad(true);
        auto l_dadv = losses::gan_discriminator_loss(disc(real), disc(fake.detach()));
        check_finite(l_dadv, batch, ck.step);
        losses::discriminator_objective(l_dadv, w).backward();
        ck.opt_d->step();

        // Generator / encoder update; the discriminator only routes gradients.
        for (auto& p : disc->parameters()) p.set_requires_grad(false);
        ck.opt_g->zero_grad();
        losses::Stage2Terms<torch::Tensor> t;
        t.gen_adv = losses::gan_generator_loss(disc(fake));
        auto z_real = net->embed(real);
        t.id = losses::arcface_loss(torch::cat({z_real, fwd.z_id}), net->class_weights, torch::cat({y_id, y_id}),
                                    w.arc_scale, w.arc_margin);
        auto z_fake = net->embed(fake);
        t.id_fake = losses::arcface_loss(z_fake, net->class_weights, y_id, w.arc_scale, w.arc_margin);
        t.rec = losses::reconstruction_loss(fake, real);
        t.id_preserving = losses::id_preserving_loss(z_fake, z_real);
        auto total = losses::stage2_loss(t, w);
        torch::Tensor l_sm;
        if (w.stage2_pattern_loss) {
            l_sm = losses::mask_pattern_loss(fwd.mask_logits, labels_of(manifest, batch, true));
            total = total + l_sm;
        }
        check_finite(total, batch, ck.step);
        total.backward();
        ck.opt_g->step();

        if (hooks.on_step) {
            StepLosses l;
            l.step = ck.step;
            l.l_sm = l_sm.defined() ? l_sm.item<double>() : 0.0;
            l.l_arc = (t.id + t.id_fake).item<double>();
            l.gen_adv = t.gen_adv.item<double>();
            l.disc_adv = l_dadv.item<double>();
            l.rec = t.rec.item<double>();
            l.id_preserving = t.id_preserving.item<double>();
            l.total = total.item<double>();
            hooks.on_step(l);
        }
    }
    for (auto& p : disc->parameters()) p.set_requires_grad(true);
    net->eval();
    disc->eval();
    return ck;
}

TrainAccuracy training_accuracy(MeerNetwork& net, const DatasetManifest& manifest, int batch_size, int workers) {
    torch::NoGradGuard guard;
    const bool was_training = net->is_training();
    net->eval();
    long id_hits = 0, pattern_hits = 0;
    const auto n = manifest.records.size();
    for (std::size_t begin = 0; begin < n; begin += static_cast<std::size_t>(batch_size)) {
        std::vector<std::size_t> batch;
        for (std::size_t i = begin; i < std::min(n, begin + static_cast<std::size_t>(batch_size)); ++i) batch.push_back(i);
        auto fwd = net->forward(data::load_batch(manifest, batch, net->config().image_size, workers));
        auto id_pred = losses::cosine_logits(fwd.z_id, net->class_weights).argmax(1);
        auto pattern_pred = fwd.mask_logits.argmax(1);
        id_hits += id_pred.eq(labels_of(manifest, batch, false)).sum().item<long>();
        pattern_hits += pattern_pred.eq(labels_of(manifest, batch, true)).sum().item<long>();
    }
    net->train(was_training);
    TrainAccuracy acc;
    if (n > 0) {
        acc.identity = static_cast<double>(id_hits) / static_cast<double>(n);
        acc.pattern = static_cast<double>(pattern_hits) / static_cast<double>(n);
    }
    return acc;
}

}  // namespace meer::train
