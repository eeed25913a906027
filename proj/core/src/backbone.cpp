#include "coconet/backbone.hpp"

#include "coconet/error.hpp"

#include <fmt/format.h>

#include <array>
#include <cmath>
#include <random>

namespace coconet {

namespace {

constexpr std::array<double, 3> kMean = {0.485, 0.456, 0.406};
constexpr std::array<double, 3> kStd = {0.229, 0.224, 0.225};

std::vector<Backbone::LayerSpec> make_layout() {
    const std::array<std::pair<int, int>, 5> stages = {{{2, 64}, {2, 128}, {4, 256}, {4, 512}, {4, 512}}};
    std::vector<Backbone::LayerSpec> out;
    int in = 3;
    for (int s = 0; s < 5; ++s) {
        for (int i = 0; i < stages[s].first; ++i) {
            out.push_back({fmt::format("conv{}_{}", s + 1, i + 1), in, stages[s].second, s + 1});
            in = stages[s].second;
        }
    }
    return out;
}

bool is_stage_start(const std::vector<Backbone::LayerSpec>& layout, std::size_t idx) {
    return idx > 0 && layout[idx].stage != layout[idx - 1].stage;
}

bool is_tap(const std::vector<Backbone::LayerSpec>& layout, std::size_t idx) {
    // second convolution of each stage
    return idx >= 1 && layout[idx].stage == layout[idx - 1].stage && (idx < 2 || layout[idx - 2].stage != layout[idx].stage);
}

} // namespace

const std::vector<Backbone::LayerSpec>& Backbone::layout() {
    static const std::vector<LayerSpec> specs = make_layout();
    return specs;
}

Backbone::Backbone() : counter_(std::make_shared<std::atomic<std::size_t>>(0)) {}

Backbone Backbone::deterministic(std::uint64_t seed) {
    Backbone b;
    std::mt19937_64 rng(seed);
    for (const auto& spec : layout()) {
        const double stddev = std::sqrt(2.0 / (spec.in_channels * 9.0));
        std::normal_distribution<double> dist(0.0, stddev);
        std::vector<double> w(static_cast<std::size_t>(spec.out_channels) * spec.in_channels * 9);
        for (double& v : w) v = dist(rng);
        b.weights_.push_back(std::move(w));
        b.biases_.emplace_back(static_cast<std::size_t>(spec.out_channels), 0.0);
    }
    return b;
}

Backbone Backbone::load(const std::filesystem::path& weights) {
    const Archive archive = read_archive(weights);
    if (archive.kind != "vgg19") throw DataError("weights file is of kind '" + archive.kind + "', expected 'vgg19'");
    if (archive.version > 1) throw DataError("unsupported backbone weights version " + std::to_string(archive.version));
    Backbone b;
    for (const auto& spec : layout()) {
        const auto* w = archive.find(spec.name + ".weight");
        const auto* bias = archive.find(spec.name + ".bias");
        const std::vector<std::int64_t> want_w = {spec.out_channels, spec.in_channels, 3, 3};
        const std::vector<std::int64_t> want_b = {spec.out_channels};
        if (!w || w->shape != want_w) {
            throw DataError(fmt::format("backbone layer {}: weight missing or not shaped [{}, {}, 3, 3]", spec.name,
                                        spec.out_channels, spec.in_channels));
        }
        if (!bias || bias->shape != want_b) {
            throw DataError(fmt::format("backbone layer {}: bias missing or not shaped [{}]", spec.name, spec.out_channels));
        }
        b.weights_.push_back(w->data);
        b.biases_.push_back(bias->data);
    }
    return b;
}

Backbone Backbone::from_spec(const std::string& spec) {
    if (spec == "deterministic") return deterministic(0);
    if (spec.rfind("deterministic:", 0) == 0) {
        try {
            return deterministic(std::stoull(spec.substr(14)));
        } catch (const std::exception&) {
            throw ConfigError("bad deterministic backbone seed in '" + spec + "'");
        }
    }
    return load(spec);
}

Archive Backbone::to_archive() const {
    Archive a;
    a.kind = "vgg19";
    a.version = 1;
    const auto& specs = layout();
    for (std::size_t i = 0; i < specs.size(); ++i) {
        a.arrays.push_back({specs[i].name + ".weight", {specs[i].out_channels, specs[i].in_channels, 3, 3}, weights_[i]});
        a.arrays.push_back({specs[i].name + ".bias", {specs[i].out_channels}, biases_[i]});
    }
    return a;
}

Tensor Backbone::preprocess(const Tensor& img) const {
    if (img.c() != 1) throw DataError("backbone expects single-channel input");
    Tensor x(Shape{img.n(), 3, img.h(), img.w()});
    for (int i = 0; i < img.n(); ++i) {
        const auto src = img.channel(i, 0);
        for (int ch = 0; ch < 3; ++ch) {
            auto dst = x.channel(i, ch);
            for (std::size_t p = 0; p < src.size(); ++p) dst[p] = ((src[p] + 1.0) * 0.5 - kMean[ch]) / kStd[ch];
        }
    }
    return x;
}

FeaturePyramid Backbone::run(const Tensor& img, int last_stage, Trace* trace) const {
    const auto& specs = layout();
    Tensor x = preprocess(img);
    if (trace) {
        *trace = Trace{};
        trace->input_shape = img.shape();
    }
    FeaturePyramid out;
    for (std::size_t l = 0; l < specs.size() && specs[l].stage <= last_stage; ++l) {
        if (is_stage_start(specs, l)) {
            std::vector<std::size_t> argmax;
            const Shape before = x.shape();
            x = maxpool2x2(x, trace ? &argmax : nullptr);
            if (trace) {
                trace->pool_argmax.push_back(std::move(argmax));
                trace->pool_input_shapes.push_back(before);
            }
        }
        Tensor y;
        conv2d_forward(x, weights_[l], biases_[l], specs[l].out_channels, 3, y);
        for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
        if (trace) {
            trace->conv_inputs.push_back(std::move(x));
            trace->relu_outputs.push_back(y);
        }
        if (is_tap(specs, l)) {
            out.tap_names.push_back("relu" + specs[l].name.substr(4));
            out.levels.push_back(y);
            if (specs[l].stage == last_stage) break;
        }
        x = std::move(y);
    }
    return out;
}

FeaturePyramid Backbone::extract_mam_taps(const Tensor& img) const {
    if (img.h() < kMamMinExtent || img.w() < kMamMinExtent) {
        throw DataError(fmt::format("input {}x{} is below the {}-pixel minimum for attention taps", img.h(), img.w(), kMamMinExtent));
    }
    FeaturePyramid p = run(img, 3, nullptr);
    for (auto& level : p.levels) level = resize_bilinear(level, img.h(), img.w());
    return p;
}

FeaturePyramid Backbone::extract_mam_taps(const ImagePlane& img) const {
    const auto s = normalize(img, RangeTag::Signed);
    return extract_mam_taps(Tensor(Shape{1, 1, s.rows(), s.cols()}, s.data()));
}

FeaturePyramid Backbone::extract_contrastive_taps(const Tensor& img, Trace* trace) const {
    if (img.h() < kContrastiveMinExtent || img.w() < kContrastiveMinExtent) {
        throw DataError(fmt::format("input {}x{} is below the {}-pixel minimum for contrastive taps", img.h(), img.w(),
                                    kContrastiveMinExtent));
    }
    counter_->fetch_add(1);
    return run(img, 5, trace);
}

FeaturePyramid Backbone::extract_contrastive_taps(const ImagePlane& img) const {
    const auto s = normalize(img, RangeTag::Signed);
    return extract_contrastive_taps(Tensor(Shape{1, 1, s.rows(), s.cols()}, s.data()));
}

Tensor Backbone::contrastive_backward(const Trace& trace, const std::vector<Tensor>& tap_grads) const {
    const auto& specs = layout();
    const std::size_t executed = trace.conv_inputs.size();
    if (executed == 0) throw DataError("empty backbone trace");
    std::vector<std::size_t> tap_layers;
    for (std::size_t l = 0; l < executed; ++l)
        if (is_tap(specs, l)) tap_layers.push_back(l);
    if (tap_grads.size() != tap_layers.size()) throw DataError("tap gradient count does not match the trace");

    Tensor g;
    std::size_t tap = tap_layers.size();
    std::size_t pool = trace.pool_argmax.size();
    for (std::size_t l = executed; l-- > 0;) {
        if (tap > 0 && tap_layers[tap - 1] == l) {
            --tap;
            if (g.empty()) {
                g = tap_grads[tap];
            } else {
                g.add(tap_grads[tap]);
            }
        }
        if (g.empty()) continue;
        const auto& relu = trace.relu_outputs[l];
        for (std::size_t i = 0; i < g.numel(); ++i)
            if (relu.values()[i] <= 0.0) g.values()[i] = 0.0;
        Tensor dx;
        conv2d_backward(trace.conv_inputs[l], weights_[l], specs[l].out_channels, 3, g, &dx, {}, {});
        g = std::move(dx);
        if (is_stage_start(specs, l)) {
            --pool;
            g = maxpool2x2_backward(g, trace.pool_input_shapes[pool], trace.pool_argmax[pool]);
        }
    }
    // Undo the replication and normalisation.
    Tensor out(trace.input_shape);
    for (int i = 0; i < out.n(); ++i) {
        auto dst = out.channel(i, 0);
        for (int ch = 0; ch < 3; ++ch) {
            const auto src = g.channel(i, ch);
            for (std::size_t p = 0; p < dst.size(); ++p) dst[p] += src[p] * 0.5 / kStd[ch];
        }
    }
    return out;
}

std::uint32_t Backbone::parameter_hash() const {
    std::uint32_t h = 0;
    std::vector<std::uint32_t> parts;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        parts.push_back(crc32_of(weights_[i].data(), weights_[i].size() * sizeof(double)));
        parts.push_back(crc32_of(biases_[i].data(), biases_[i].size() * sizeof(double)));
    }
    h = crc32_of(parts.data(), parts.size() * sizeof(std::uint32_t));
    return h;
}

} // namespace coconet
