#include "coconet/fusion_net.hpp"

#include "coconet/error.hpp"

#include <fmt/format.h>

#include <cmath>

namespace coconet {

ConvBlock::ConvBlock(const std::string& name, int in, int out)
    : conv1_(name + ".conv1", in, out, 3), bn1_(name + ".bn1", out),
      conv2_(name + ".conv2", out, out, 3), bn2_(name + ".bn2", out) {}

void ConvBlock::init(std::mt19937_64& rng) {
    conv1_.init(rng);
    conv2_.init(rng);
}

Tensor ConvBlock::forward(const Tensor& x, bool training) {
    Tensor y = act1_.forward(bn1_.forward(conv1_.forward(x), training));
    return act2_.forward(bn2_.forward(conv2_.forward(y), training));
}

Tensor ConvBlock::backward(const Tensor& dy) {
    Tensor g = conv2_.backward(bn2_.backward(act2_.backward(dy)));
    return conv1_.backward(bn1_.backward(act1_.backward(g)));
}

void ConvBlock::collect(std::vector<Param*>& params, std::vector<Buffer*>& buffers) {
    conv1_.collect(params);
    bn1_.collect(params);
    conv2_.collect(params);
    bn2_.collect(params);
    bn1_.collect_buffers(buffers);
    bn2_.collect_buffers(buffers);
}

DecoderBlock::DecoderBlock(const std::string& name, int in, int out)
    : conv_(name + ".conv", in, out, 3), bn_(name + ".bn", out) {}

void DecoderBlock::init(std::mt19937_64& rng) { conv_.init(rng); }

Tensor DecoderBlock::forward(const Tensor& x, bool training) {
    return act_.forward(bn_.forward(conv_.forward(x), training));
}

Tensor DecoderBlock::backward(const Tensor& dy) { return conv_.backward(bn_.backward(act_.backward(dy))); }

void DecoderBlock::collect(std::vector<Param*>& params, std::vector<Buffer*>& buffers) {
    conv_.collect(params);
    bn_.collect(params);
    bn_.collect_buffers(buffers);
}

FusionNet::FusionNet(FusionConfig config, std::uint64_t seed)
    : config_(config), seed_(seed), head_("decoder.head", 2 * kEncoderWidths[0], 1, 3) {
    int in = 2;
    for (std::size_t i = 0; i < kEncoderWidths.size(); ++i) {
        encoder_.emplace_back(fmt::format("encoder.block{}", i), in, kEncoderWidths[i]);
        in = kEncoderWidths[i];
    }
    const char* streams[] = {"u", "r", "v"};
    for (int s = 0; s < 3; ++s)
        for (int l = 0; l < 3; ++l)
            attention_.emplace_back(fmt::format("mam.ca_{}{}", streams[s], l + 1), kMamWidths[static_cast<std::size_t>(l)]);
    for (int l = 0; l < 3; ++l) {
        const int w = kMamWidths[static_cast<std::size_t>(l)];
        mam_conv_.emplace_back(fmt::format("mam.fuse{}", l + 1), 3 * w, w, 3);
    }
    decoder_.emplace_back("decoder.block3", kEncoderWidths[3], kEncoderWidths[2]);     // 256 -> 128
    decoder_.emplace_back("decoder.block2", 2 * kEncoderWidths[2], kEncoderWidths[1]); // 256 -> 64
    decoder_.emplace_back("decoder.block1", 2 * kEncoderWidths[1], kEncoderWidths[0]); // 128 -> 32

    std::mt19937_64 rng(seed);
    for (auto& b : encoder_) b.init(rng);
    for (auto& a : attention_) a.init(rng);
    for (auto& c : mam_conv_) c.init(rng);
    for (auto& d : decoder_) d.init(rng);
    head_.init(rng, 1.0); // feeds tanh
}

FeaturePyramid FusionNet::encode(const Tensor& input, bool training) {
    if (input.c() != 2) throw DataError("encoder expects a 2-channel (infrared, visible) stack");
    if (input.h() < kMinExtent || input.w() < kMinExtent) {
        throw DataError(fmt::format("input {}x{} is below the {}-pixel minimum", input.h(), input.w(), kMinExtent));
    }
    FeaturePyramid out;
    Tensor x = input;
    for (std::size_t i = 0; i < encoder_.size(); ++i) {
        x = encoder_[i].forward(x, training);
        out.tap_names.push_back(fmt::format("f_U{}", i));
        out.levels.push_back(x);
    }
    return out;
}

FeaturePyramid FusionNet::mam_fuse(const FeaturePyramid& f_u, const FeaturePyramid& f_r, const FeaturePyramid& f_v) {
    if (f_u.size() != 4 || f_r.size() != 3 || f_v.size() != 3) {
        throw DataError("attention fusion expects 4 encoder levels and 3 backbone levels per source");
    }
    FeaturePyramid out;
    for (int l = 0; l < 3; ++l) {
        const Tensor& u = f_u[static_cast<std::size_t>(l + 1)];
        const Tensor& r = f_r[static_cast<std::size_t>(l)];
        const Tensor& v = f_v[static_cast<std::size_t>(l)];
        const int width = kMamWidths[static_cast<std::size_t>(l)];
        for (const Tensor* t : {&u, &r, &v}) {
            if (t->c() != width) throw DataError(fmt::format("attention level {}: expected {} channels, got {}", l + 1, width, t->c()));
            if (t->h() != u.h() || t->w() != u.w() || t->n() != u.n()) {
                throw DataError(fmt::format("attention level {}: spatial mismatch {} vs {}", l + 1, t->shape().str(), u.shape().str()));
            }
        }
        Tensor cu = config_.disable_ca ? u : attention(0, l).forward(u);
        Tensor cr = config_.disable_ca ? r : attention(1, l).forward(r);
        Tensor cv = config_.disable_ca ? v : attention(2, l).forward(v);
        const Tensor* parts[] = {&cu, &cr, &cv};
        out.tap_names.push_back(fmt::format("f_A{}", l + 1));
        out.levels.push_back(mam_conv_[static_cast<std::size_t>(l)].forward(concat_channels(parts)));
    }
    return out;
}

Tensor FusionNet::decode(const FeaturePyramid& fused, const Tensor& f_u0, bool training) {
    if (fused.size() != 3) throw DataError("decoder expects three fused levels");
    Tensor x = decoder_[0].forward(fused[2], training);
    {
        const Tensor* parts[] = {&x, &fused[1]};
        x = decoder_[1].forward(concat_channels(parts), training);
    }
    {
        const Tensor* parts[] = {&x, &fused[0]};
        x = decoder_[2].forward(concat_channels(parts), training);
    }
    const Tensor* parts[] = {&x, &f_u0};
    Tensor y = head_.forward(concat_channels(parts));
    for (double& v : y.values()) v = std::tanh(v);
    head_out_ = y;
    return y;
}

FeaturePyramid FusionNet::source_taps(const Backbone& backbone, const Tensor& img) const {
    if (!config_.disable_backbone_taps) return backbone.extract_mam_taps(img);
    FeaturePyramid zeros;
    for (int l = 0; l < 3; ++l) {
        zeros.tap_names.push_back(fmt::format("zero{}", l + 1));
        zeros.levels.emplace_back(Shape{img.n(), kMamWidths[static_cast<std::size_t>(l)], img.h(), img.w()});
    }
    return zeros;
}

Tensor FusionNet::forward(const Backbone& backbone, const Tensor& ir, const Tensor& vis, bool training) {
    if (!(ir.shape() == vis.shape()) || ir.c() != 1) {
        throw DataError("infrared " + ir.shape().str() + " and visible " + vis.shape().str() + " inputs must be equal single-channel stacks");
    }
    const Tensor* parts[] = {&ir, &vis};
    const FeaturePyramid f_u = encode(concat_channels(parts), training);
    const FeaturePyramid f_r = source_taps(backbone, ir);
    const FeaturePyramid f_v = source_taps(backbone, vis);
    const FeaturePyramid fused = mam_fuse(f_u, f_r, f_v);
    return decode(fused, f_u[0], training);
}

void FusionNet::backward(const Tensor& d_fused) {
    // tanh
    Tensor g = d_fused;
    for (std::size_t i = 0; i < g.numel(); ++i) {
        const double y = head_out_.values()[i];
        g.values()[i] *= 1.0 - y * y;
    }
    const int w0 = kEncoderWidths[0];
    const int w1 = kEncoderWidths[1];
    const int w2 = kEncoderWidths[2];

    Tensor d_cat = head_.backward(g);
    const int split_head[] = {w0, w0};
    auto parts = split_channels(d_cat, split_head);
    Tensor d_fu0 = std::move(parts[1]);

    std::array<Tensor, 3> d_fa;
    d_cat = decoder_[2].backward(parts[0]);
    const int split1[] = {w1, w1};
    parts = split_channels(d_cat, split1);
    d_fa[0] = std::move(parts[1]);

    d_cat = decoder_[1].backward(parts[0]);
    const int split2[] = {w2, w2};
    parts = split_channels(d_cat, split2);
    d_fa[1] = std::move(parts[1]);

    d_fa[2] = decoder_[0].backward(parts[0]);

    std::array<Tensor, 3> d_fu;
    for (int l = 0; l < 3; ++l) {
        const int width = kMamWidths[static_cast<std::size_t>(l)];
        Tensor d_concat = mam_conv_[static_cast<std::size_t>(l)].backward(d_fa[static_cast<std::size_t>(l)]);
        const int split3[] = {width, width, width};
        auto streams = split_channels(d_concat, split3);
        if (config_.disable_ca) {
            d_fu[static_cast<std::size_t>(l)] = std::move(streams[0]);
        } else {
            d_fu[static_cast<std::size_t>(l)] = attention(0, l).backward(streams[0]);
            // The source streams only need their parameter gradients.
            attention(1, l).backward(streams[1]);
            attention(2, l).backward(streams[2]);
        }
    }

    Tensor d = encoder_[3].backward(d_fu[2]);
    d.add(d_fu[1]);
    d = encoder_[2].backward(d);
    d.add(d_fu[0]);
    d = encoder_[1].backward(d);
    d.add(d_fu0);
    encoder_[0].backward(d);
}

ImagePlane FusionNet::forward_fuse(const Backbone& backbone, const ImagePlane& ir, const ImagePlane& vis) const {
    if (!ir.same_shape(vis)) {
        throw DataError(fmt::format("source extents differ: infrared {}x{}, visible {}x{}", ir.rows(), ir.cols(), vis.rows(), vis.cols()));
    }
    const int h = ir.rows();
    const int w = ir.cols();
    if (h < kMinExtent || w < kMinExtent) {
        throw DataError(fmt::format("input {}x{} is below the {}-pixel minimum", h, w, kMinExtent));
    }
    const int ph = (kPadMultiple - h % kPadMultiple) % kPadMultiple;
    const int pw = (kPadMultiple - w % kPadMultiple) % kPadMultiple;
    const auto to_tensor = [&](const ImagePlane& p) {
        const auto s = normalize(p, RangeTag::Signed);
        return pad_reflect(Tensor(Shape{1, 1, h, w}, s.data()), ph, pw);
    };
    FusionNet snapshot = *this; // activations are cached per instance
    Tensor out = snapshot.forward(backbone, to_tensor(ir), to_tensor(vis), false);
    out = crop_top_left(out, h, w);
    return clamp_to_plane(h, w, out.values(), RangeTag::Signed);
}

std::vector<Param*> FusionNet::params() {
    std::vector<Param*> p;
    std::vector<Buffer*> b;
    for (auto& e : encoder_) e.collect(p, b);
    for (auto& a : attention_) a.collect(p);
    for (auto& c : mam_conv_) c.collect(p);
    for (auto& d : decoder_) d.collect(p, b);
    head_.collect(p);
    return p;
}

std::vector<Buffer*> FusionNet::buffers() {
    std::vector<Param*> p;
    std::vector<Buffer*> b;
    for (auto& e : encoder_) e.collect(p, b);
    for (auto& d : decoder_) d.collect(p, b);
    return b;
}

std::size_t FusionNet::parameter_count() {
    std::size_t n = 0;
    for (const Param* p : params()) n += p->value.numel();
    return n;
}

void FusionNet::zero_grad() {
    for (Param* p : params()) p->zero_grad();
}

std::vector<ArchiveArray> FusionNet::state_arrays() {
    std::vector<ArchiveArray> out;
    const auto add = [&](const std::string& name, const Tensor& t) {
        const auto& s = t.shape();
        out.push_back({name, {s.n, s.c, s.h, s.w}, t.values()});
    };
    for (const Param* p : params()) add(p->name, p->value);
    for (const Buffer* b : buffers()) add(b->name, b->value);
    return out;
}

void FusionNet::load_state_arrays(const Archive& archive) {
    const auto load = [&](const std::string& name, Tensor& t) {
        const auto* a = archive.find(name);
        const auto& s = t.shape();
        const std::vector<std::int64_t> want = {s.n, s.c, s.h, s.w};
        if (!a || a->shape != want) throw DataError("checkpoint array '" + name + "' missing or mis-shaped");
        t.values() = a->data;
    };
    for (Param* p : params()) load(p->name, p->value);
    for (Buffer* b : buffers()) load(b->name, b->value);
}

} // namespace coconet
