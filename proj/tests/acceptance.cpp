// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include "support/metric_oracles.hpp"
#include "support/synthetic.hpp"

#include <coconet/adaptive_weights.hpp>
#include <coconet/backbone.hpp>
#include <coconet/fusion_net.hpp>
#include <coconet/image.hpp>
#include <coconet/losses.hpp>
#include <coconet/medical.hpp>
#include <coconet/metrics.hpp>
#include <coconet/nn.hpp>
#include <coconet/trainer.hpp>

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

using namespace coconet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok && pass) detail = what;
        pass = pass && ok;
    }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

const Backbone& backbone() {
    static const Backbone b = Backbone::deterministic();
    return b;
}

ImagePlane random_u8(std::mt19937_64& rng, int rows, int cols) {
    std::uniform_int_distribution<int> d(0, 255);
    std::vector<double> v(static_cast<std::size_t>(rows) * cols);
    for (double& x : v) x = d(rng);
    return ImagePlane(rows, cols, std::move(v), RangeTag::Unit8);
}

std::vector<double> flat_params(FusionNet& net) {
    std::vector<double> out;
    for (Param* p : net.params()) out.insert(out.end(), p->value.values().begin(), p->value.values().end());
    return out;
}

ImagePlane composite(const ImagePlane& on, const ImagePlane& off, const SaliencyMask& m) {
    std::vector<double> px(on.size());
    for (int r = 0; r < on.rows(); ++r)
        for (int c = 0; c < on.cols(); ++c)
            px[static_cast<std::size_t>(r) * on.cols() + c] = m(r, c) ? on(r, c) : off(r, c);
    return ImagePlane(on.rows(), on.cols(), std::move(px), on.range());
}

Tensor stack(const std::vector<const ImagePlane*>& planes) {
    const int h = planes[0]->rows(), w = planes[0]->cols();
    Tensor t(Shape{static_cast<int>(planes.size()), 1, h, w});
    for (std::size_t i = 0; i < planes.size(); ++i) {
        const ImagePlane s = normalize(*planes[i], RangeTag::Signed);
        std::copy(s.data().begin(), s.data().end(), t.sample(static_cast<int>(i)).begin());
    }
    return t;
}

// 1 -----------------------------------------------------------------------

Outcome metric_oracles() {
    Outcome o;
    const auto t0 = Clock::now();
    std::mt19937_64 rng(101);
    double worst[7] = {};
    for (int i = 0; i < 50; ++i) {
        const ImagePlane v = random_u8(rng, 16, 16);
        const ImagePlane r = random_u8(rng, 16, 16);
        const ImagePlane f = random_u8(rng, 16, 16);
        const double diffs[7] = {
            std::abs(entropy(f) - oracle::entropy(f, 256)),
            std::abs(average_gradient(f) - oracle::average_gradient(f)),
            std::abs(spatial_frequency(f) - oracle::spatial_frequency(f)),
            std::abs(standard_deviation(f) - oracle::standard_deviation(f)),
            std::abs(scd(v, r, f) - oracle::scd(v, r, f)),
            std::abs(ssim(v, f) - oracle::ssim(v, f, 11, 1.5)),
            std::abs(vif_fusion(v, r, f) - oracle::vif(v, r, f)),
        };
        for (int k = 0; k < 7; ++k) worst[k] = std::max(worst[k], diffs[k]);
    }
    const char* names[7] = {"EN", "AG", "SF", "SD", "SCD", "SSIM", "VIF"};
    const double tol[7] = {1e-10, 1e-10, 1e-10, 1e-10, 1e-10, 1e-8, 1e-6};
    for (int k = 0; k < 7; ++k) o.require(worst[k] <= tol[k], fmt::format("{} off by {:.3g}", names[k], worst[k]));
    const double t = seconds_since(t0);
    o.require(t < 30.0, fmt::format("took {:.1f} s", t));
    if (o.pass) o.detail = fmt::format("50 triples, worst VIF diff {:.2g}, {:.2f} s", worst[6], t);
    return o;
}

// 2 -----------------------------------------------------------------------

Outcome closed_forms() {
    Outcome o;
    const auto unit = [](std::vector<double> v) { return ImagePlane(2, 2, std::move(v), RangeTag::Unit); };
    o.require(std::abs(entropy(ImagePlane(2, 2, {0, 0, 255, 255}, RangeTag::Unit8)) - 1.0) <= 1e-12, "entropy");
    o.require(std::abs(average_gradient(unit({0, 1, 0, 1})) - 0.5) <= 1e-12, "AG");
    o.require(std::abs(spatial_frequency(unit({0, 1, 0, 1})) - std::sqrt(0.5)) <= 1e-12, "SF");
    o.require(std::abs(standard_deviation(unit({0, 0, 1, 1})) - 0.25) <= 1e-12, "SD");
    std::mt19937_64 rng(102);
    std::normal_distribution<double> g(0.0, 0.2);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> v(64), r(64), f(64);
        for (auto* x : {&v, &r}) {
            for (double& e : *x) e = g(rng);
            const double m = std::accumulate(x->begin(), x->end(), 0.0) / 64.0;
            for (double& e : *x) e -= m;
        }
        for (std::size_t i = 0; i < 64; ++i) f[i] = v[i] + r[i];
        const ImagePlane pv(8, 8, v, RangeTag::Signed), pr(8, 8, r, RangeTag::Signed), pf(8, 8, f, RangeTag::Signed);
        worst = std::max(worst, std::abs(scd(pv, pr, pf) - 2.0));
    }
    o.require(worst <= 1e-12, fmt::format("SCD(v, r, v+r) off by {:.3g}", worst));
    if (o.pass) o.detail = fmt::format("EN, AG, SF, SD exact; SCD worst {:.2g}", worst);
    return o;
}

// 3 -----------------------------------------------------------------------

Outcome adaptive_weights() {
    Outcome o;
    const auto [a, b] = softmax2(1.0, 2.0);
    o.require(std::abs(a - 0.26894) <= 1e-5 && std::abs(b - 0.73106) <= 1e-5, fmt::format("softmax(1,2) = ({}, {})", a, b));
    std::mt19937_64 rng(103);
    const double eps = std::numeric_limits<double>::epsilon();
    for (int i = 0; i < 100; ++i) {
        const ImagePlane v = random_u8(rng, 16, 16);
        ImagePlane r = random_u8(rng, 16, 16);
        if (i % 2) r = fixtures::make_toy_pair(static_cast<std::uint64_t>(i), 16).ir;
        const AdaptiveWeights w = compute_adaptive_weights(v, r);
        o.require(std::abs(w.sigma_a + w.sigma_b - 1.0) <= eps && std::abs(w.gamma_a + w.gamma_b - 1.0) <= eps,
                  fmt::format("simplex sum off at pair {}", i));
        const AdaptiveWeights s = compute_adaptive_weights(r, v);
        o.require(s.sigma_a == w.sigma_b && s.sigma_b == w.sigma_a && s.gamma_a == w.gamma_b && s.gamma_b == w.gamma_a,
                  fmt::format("swap asymmetry at pair {}", i));
        const double agv = average_gradient(v), agr = average_gradient(r);
        const double env = entropy(v), enr = entropy(r);
        if (agv != agr) o.require((w.sigma_a > w.sigma_b) == (agv > agr), fmt::format("sigma argmax at pair {}", i));
        if (env != enr) o.require((w.gamma_a > w.gamma_b) == (env > enr), fmt::format("gamma argmax at pair {}", i));
    }
    if (o.pass) o.detail = fmt::format("softmax(1,2) = ({:.5f}, {:.5f}); 100 pairs", a, b);
    return o;
}

// 4 -----------------------------------------------------------------------

FeaturePyramid scalar_pyramid(double v) {
    FeaturePyramid p;
    p.levels.emplace_back(Shape{1, 1, 1, 1}, v);
    return p;
}

Outcome contrastive_suite() {
    Outcome o;
    ContrastiveBatch b;
    b.anchor_taps = scalar_pyramid(0.0);
    b.positive_taps = scalar_pyramid(0.0);
    b.negative_taps = {scalar_pyramid(2.0), scalar_pyramid(3.0)};
    b.layer_weights = {1.0};
    o.require(contrastive_term(b).value == 0.0, "anchor = positive is not 0");
    b.positive_taps = scalar_pyramid(1.0);
    o.require(contrastive_term(b).value == 1.0 / (2.0 + 3.0), "scalar example is not 0.2");

    std::mt19937_64 rng(104);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_real_distribution<double> grow(0.05, 0.5);
    const auto random_pyramid = [&] {
        FeaturePyramid p;
        for (int c : {3, 5}) {
            Tensor t(Shape{1, c, 4, 4});
            for (double& x : t.values()) x = u(rng);
            p.levels.push_back(std::move(t));
        }
        return p;
    };
    // moves every element of `x` further from `ref` by a factor (1 + s)
    const auto push_away = [](const FeaturePyramid& x, const FeaturePyramid& ref, double s) {
        FeaturePyramid out = x;
        for (std::size_t l = 0; l < out.size(); ++l)
            for (std::size_t i = 0; i < out[l].numel(); ++i)
                out.levels[l].values()[i] = ref[l].values()[i] + (1.0 + s) * (x[l].values()[i] - ref[l].values()[i]);
        return out;
    };
    int checked = 0;
    for (int trial = 0; trial < 100; ++trial) {
        ContrastiveBatch c;
        c.anchor_taps = random_pyramid();
        c.positive_taps = random_pyramid();
        c.negative_taps = {random_pyramid(), random_pyramid(), random_pyramid()};
        c.layer_weights = {0.5, 1.0};
        const double base = contrastive_term(c).value;
        ContrastiveBatch farther_pos = c;
        farther_pos.positive_taps = push_away(c.positive_taps, c.anchor_taps, grow(rng));
        ContrastiveBatch farther_neg = c;
        const std::size_t m = static_cast<std::size_t>(trial % 3);
        farther_neg.negative_taps[m] = push_away(c.negative_taps[m], c.anchor_taps, grow(rng));
        o.require(contrastive_term(farther_pos).value > base, fmt::format("positive monotonicity, trial {}", trial));
        o.require(contrastive_term(farther_neg).value < base, fmt::format("negative monotonicity, trial {}", trial));
        ++checked;
    }
    if (o.pass) o.detail = fmt::format("0 and 0.2 exact; {} perturbations monotone", checked);
    return o;
}

// 5 -----------------------------------------------------------------------

Outcome gradient_check() {
    Outcome o;
    const auto t0 = Clock::now();
    std::mt19937_64 rng(105);
    std::uniform_real_distribution<double> u(-0.9, 0.9);
    const auto rt = [&] {
        Tensor t(Shape{1, 1, 8, 8});
        for (double& x : t.values()) x = u(rng);
        return t;
    };
    const Tensor v = rt(), r = rt();
    Tensor f = rt();
    const std::vector<AdaptiveWeights> w{{0.4, 0.6, 0.7, 0.3}};
    ContrastiveInputs ci;
    ci.first = r;
    ci.second = v;
    ci.mask = Tensor(f.shape());
    std::bernoulli_distribution bit(0.5);
    for (double& x : ci.mask.values()) x = bit(rng) ? 1.0 : 0.0;
    ci.first_negatives = {v, rt(), rt()};
    ci.second_negatives = {r, rt(), rt()};
    LossOptions opt;
    opt.stage1 = false;
    const auto e = total_loss(&backbone(), v, r, f, w, &ci, opt, true);

    std::vector<std::size_t> idx(f.numel());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(50);
    const double h = 1e-3;
    int bad = 0;
    double worst = 0.0;
    for (std::size_t i : idx) {
        const double keep = f.values()[i];
        f.values()[i] = keep + h;
        const double up = total_loss(&backbone(), v, r, f, w, &ci, opt, false).breakdown.l_total;
        f.values()[i] = keep - h;
        const double down = total_loss(&backbone(), v, r, f, w, &ci, opt, false).breakdown.l_total;
        f.values()[i] = keep;
        const double fd = (up - down) / (2 * h);
        const double a = e.grad_f.values()[i];
        const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-300});
        worst = std::max(worst, rel);
        if (rel > 1e-3) ++bad;
    }
    const double t = seconds_since(t0);
    o.require(bad == 0, fmt::format("{} of 50 coordinates exceed 1e-3 relative (worst {:.3g})", bad, worst));
    o.require(t < 120.0, fmt::format("took {:.1f} s", t));
    if (o.pass) o.detail = fmt::format("worst relative error {:.2g}, {:.1f} s", worst, t);
    else o.detail += fmt::format(", {:.1f} s", t);
    return o;
}

// 6 -----------------------------------------------------------------------

Outcome architecture_shapes() {
    Outcome o;
    FusionNet net({}, 106);
    std::mt19937_64 rng(106);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Tensor x(Shape{1, 2, 32, 32});
    for (double& e : x.values()) e = u(rng);
    const auto pyr = net.encode(x, false);
    const int enc[] = {32, 64, 128, 256};
    o.require(pyr.size() == 4, "encoder depth");
    for (std::size_t i = 0; i < 4 && i < pyr.size(); ++i)
        o.require(pyr[i].shape() == Shape{1, enc[i], 32, 32}, fmt::format("encoder level {} width {}", i, pyr[i].c()));

    Tensor img(Shape{1, 1, 32, 32});
    for (double& e : img.values()) e = u(rng);
    const auto taps = backbone().extract_mam_taps(img);
    const auto fused = net.mam_fuse(pyr, taps, taps);
    const int concat[] = {192, 384, 768};
    for (std::size_t i = 0; i < 3; ++i) {
        o.require(pyr[i + 1].c() + 2 * taps[i].c() == concat[i], fmt::format("MAM concat {} width", i + 1));
        o.require(fused[i].c() == FusionNet::kMamWidths[i], fmt::format("MAM output {} width", i + 1));
    }
    for (Param* p : net.params()) {
        for (std::size_t i = 0; i < 3; ++i) {
            if (p->name == fmt::format("mam.fuse{}.weight", i + 1)) {
                o.require(p->value.shape().c == concat[i] && p->value.shape().n == FusionNet::kMamWidths[i],
                          p->name + " kernel shape");
            }
        }
    }

    ChannelAttention ca("ca", 6);
    std::mt19937_64 init(7);
    ca.init(init);
    Tensor f(Shape{2, 6, 5, 7});
    for (double& e : f.values()) e = u(rng);
    const Tensor out = ca.forward(f);
    o.require(out.shape() == f.shape(), "attention changes shape");
    double row_err = 0.0;
    for (const auto& a : ca.last_attention())
        for (int i = 0; i < 6; ++i) {
            double s = 0.0;
            for (int j = 0; j < 6; ++j) s += a[static_cast<std::size_t>(i * 6 + j)];
            row_err = std::max(row_err, std::abs(s - 1.0));
        }
    o.require(row_err <= 1e-12, fmt::format("attention row sum off by {:.3g}", row_err));

    for (int n : {64, 65, 100, 127}) {
        const ImagePlane ir = fixtures::random_plane(rng, n, n);
        const ImagePlane vis = fixtures::random_plane(rng, n, n);
        const ImagePlane fz = net.forward_fuse(backbone(), ir, vis);
        o.require(fz.rows() == n && fz.cols() == n, fmt::format("forward_fuse {0}x{0} gives {1}x{2}", n, fz.rows(), fz.cols()));
    }
    if (o.pass) o.detail = "encoder, MAM, attention and forward_fuse extents";
    return o;
}

// 7 -----------------------------------------------------------------------

TrainConfig small_config() {
    TrainConfig cfg;
    cfg.patch_size = 16;
    cfg.patch_count = 6;
    cfg.batch_size = 2;
    cfg.stage2_batch_size = 2;
    cfg.stage1_epochs = 1;
    cfg.stage2_epochs = 1;
    cfg.seed = 107;
    return cfg;
}

Outcome algorithm_fidelity() {
    Outcome o;
    const auto corpus = fixtures::make_toy_corpus(3, 107, 32);
    {
        const Backbone b = Backbone::deterministic();
        b.reset_call_counter();
        FusionNet net({}, 1);
        Trainer t(net, b, small_config());
        t.train_stage1(corpus);
        o.require(b.contrastive_calls() == 0, fmt::format("stage 1 made {} contrastive calls", b.contrastive_calls()));
    }
    {
        TrainConfig cfg = small_config();
        cfg.layer_weights.assign(5, 0.0);
        FusionNet a({}, 2), b({}, 2);
        Trainer ta(a, backbone(), cfg), tb(b, backbone(), cfg);
        ta.train_stage1(corpus);
        tb.finetune_stage2(corpus);
        o.require(flat_params(a) == flat_params(b), "stage 2 with zero weights differs from stage 1");
    }
    {
        const fs::path dir = fs::temp_directory_path() / "coconet_acceptance_ckpt";
        fs::create_directories(dir);
        FusionNet net({}, 3);
        Trainer t(net, backbone(), small_config());
        t.train_stage1(corpus);
        t.save_checkpoint(dir / "c.ckpt");
        FusionNet back = load_model(dir / "c.ckpt");
        o.require(flat_params(back) == flat_params(net), "checkpoint round trip is lossy");
        fs::remove_all(dir);
    }
    if (o.pass) o.detail = "zero calls in stage 1; bitwise equal updates; lossless checkpoint";
    return o;
}

// 8 -----------------------------------------------------------------------

struct Probe {
    Tensor ir, vis;
    std::vector<AdaptiveWeights> weights;
    ContrastiveInputs contrastive;
};

// Fixed patches from the training pairs; negatives are the co-located patch
// and two patches of other pairs.
Probe make_probe(const std::vector<SourcePair>& corpus, int patch) {
    const PatchSet ps = crop_patches(corpus, patch, static_cast<int>(corpus.size()), 999);
    Probe p;
    std::vector<const ImagePlane*> ir, vis;
    for (const auto& q : ps.patches) {
        ir.push_back(&q.ir);
        vis.push_back(&q.vis);
        const auto& src = corpus[static_cast<std::size_t>(q.pair_index)];
        p.weights.push_back(compute_patch_weights(q.vis, q.ir, src.vis, src.ir));
    }
    p.ir = stack(ir);
    p.vis = stack(vis);
    p.contrastive.first = p.ir;
    p.contrastive.second = p.vis;
    p.contrastive.mask = Tensor(p.ir.shape());
    const int n = static_cast<int>(ps.patches.size());
    for (int i = 0; i < n; ++i) {
        const auto bits = ps.patches[static_cast<std::size_t>(i)].mask->bits();
        std::copy(bits.begin(), bits.end(), p.contrastive.mask.sample(i).begin());
    }
    for (int m = 0; m < 3; ++m) {
        std::vector<const ImagePlane*> nir, nvis;
        for (int i = 0; i < n; ++i) {
            const auto& q = ps.patches[static_cast<std::size_t>((i + m) % n)];
            nir.push_back(&q.ir);
            nvis.push_back(&q.vis);
        }
        p.contrastive.first_negatives.push_back(stack(nvis));
        p.contrastive.second_negatives.push_back(stack(nir));
    }
    return p;
}

double probe_loss(const FusionNet& model, const Probe& p) {
    FusionNet copy = model; // keeps the running statistics of the trained model untouched
    const Tensor f = copy.forward(backbone(), p.ir, p.vis, true);
    LossOptions opt;
    opt.stage1 = false;
    return total_loss(&backbone(), p.vis, p.ir, f, p.weights, &p.contrastive, opt, false).breakdown.l_total;
}

ImagePlane average_fusion(const ImagePlane& a, const ImagePlane& b) {
    const ImagePlane ua = normalize(a, RangeTag::Unit), ub = normalize(b, RangeTag::Unit);
    std::vector<double> px(ua.size());
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = 0.5 * (ua.data()[i] + ub.data()[i]);
    return ImagePlane(a.rows(), a.cols(), std::move(px), RangeTag::Unit);
}

std::array<double, 6> metric_vector(const ImagePlane& v, const ImagePlane& r, const ImagePlane& f) {
    const ImagePlane fu = normalize(f, RangeTag::Unit8);
    const ImagePlane vu = normalize(v, RangeTag::Unit8);
    const ImagePlane ru = normalize(r, RangeTag::Unit8);
    const MetricReport m = evaluate_triple(vu, ru, fu);
    return {m.en, m.ag, m.sf, m.sd, m.scd, m.vif};
}

Outcome toy_training() {
    Outcome o;
    const auto t0 = Clock::now();
    const auto all = fixtures::make_toy_corpus(10, 108, 64);
    const std::vector<SourcePair> train(all.begin(), all.begin() + 8);
    const std::vector<SourcePair> held(all.begin() + 8, all.end());

    TrainConfig cfg;
    cfg.patch_size = 16;
    cfg.batch_size = 1;
    cfg.stage2_batch_size = 1;
    cfg.stage1_epochs = 1;
    cfg.stage2_epochs = 1;
    cfg.learning_rate = 1e-3;
    cfg.seed = 108;
    cfg.patch_count = 200;
    cfg.stage1_max_steps = 200;
    cfg.stage2_max_steps = 50;

    const Probe probe = make_probe(train, cfg.patch_size);
    FusionNet model({}, cfg.seed);
    double at5 = 0.0;
    Trainer trainer(model, backbone(), cfg);
    trainer.set_step_callback([&](const LogRow& row) {
        if (row.step == 5) at5 = probe_loss(model, probe);
    });
    trainer.run(train);
    const std::size_t steps = trainer.step();
    const double final_loss = probe_loss(model, probe);
    const double drop = 1.0 - final_loss / at5;
    o.require(steps == 250, fmt::format("{} optimizer steps", steps));
    o.require(drop >= 0.30, fmt::format("probe loss {:.4g} -> {:.4g} ({:.1f}% drop)", at5, final_loss, 100 * drop));

    std::array<double, 6> net{}, avg{};
    for (const auto& p : held) {
        const ImagePlane fused = model.forward_fuse(backbone(), p.ir, p.vis);
        const auto a = metric_vector(p.vis, p.ir, fused);
        const auto b = metric_vector(p.vis, p.ir, average_fusion(p.ir, p.vis));
        for (int k = 0; k < 6; ++k) {
            net[static_cast<std::size_t>(k)] += a[static_cast<std::size_t>(k)] / static_cast<double>(held.size());
            avg[static_cast<std::size_t>(k)] += b[static_cast<std::size_t>(k)] / static_cast<double>(held.size());
        }
    }
    const char* names[6] = {"EN", "AG", "SF", "SD", "SCD", "VIF"};
    int wins = 0;
    std::string won;
    for (int k = 0; k < 6; ++k) {
        if (net[static_cast<std::size_t>(k)] > avg[static_cast<std::size_t>(k)]) {
            ++wins;
            won += std::string(won.empty() ? "" : " ") + names[k];
        }
    }
    o.require(wins >= 4, fmt::format("beats averaging on {} of 6 ({})", wins, won));
    const double t = seconds_since(t0);
    o.require(t < 600.0, fmt::format("took {:.0f} s", t));
    if (o.pass) {
        o.detail = fmt::format("probe loss -{:.1f}%, wins {}/6 ({}), {:.0f} s", 100 * drop, wins, won, t);
    } else {
        o.detail += fmt::format("; probe -{:.1f}%, wins {}/6, {:.0f} s", 100 * drop, wins, t);
    }
    return o;
}

// 9 -----------------------------------------------------------------------

Outcome directionality() {
    Outcome o;
    const auto corpus = fixtures::make_toy_corpus(8, 108, 64);
    const auto weights = default_layer_weights();
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto& p = corpus[i];
        std::vector<ImagePlane> vis_neg{p.vis}, ir_neg{p.ir};
        for (std::size_t k = 1; k <= 2; ++k) {
            vis_neg.push_back(corpus[(i + k) % corpus.size()].vis);
            ir_neg.push_back(corpus[(i + k) % corpus.size()].ir);
        }
        const ImagePlane ideal = composite(p.ir, p.vis, *p.mask);
        const auto at_ideal = coupled_contrastive(backbone(), ideal, p.ir, p.vis, *p.mask, vis_neg, ir_neg, weights);
        const auto at_vis = coupled_contrastive(backbone(), p.vis, p.ir, p.vis, *p.mask, vis_neg, ir_neg, weights);
        const auto at_ir = coupled_contrastive(backbone(), p.ir, p.ir, p.vis, *p.mask, vis_neg, ir_neg, weights);
        o.require(at_ideal.first < at_vis.first, fmt::format("{}: L_ir(F*) {} >= L_ir(I_V) {}", p.id, at_ideal.first, at_vis.first));
        o.require(at_ideal.second < at_ir.second,
                  fmt::format("{}: L_vis(F*) {} >= L_vis(I_R) {}", p.id, at_ideal.second, at_ir.second));
    }
    if (o.pass) o.detail = fmt::format("{} toy pairs", corpus.size());
    return o;
}

// 10 ----------------------------------------------------------------------

Outcome medical_path() {
    Outcome o;
    const auto pair = fixtures::make_toy_pair(110, 48);
    ColorImage pet{48, 48, {}, {}, {}};
    const ImagePlane lum = normalize(pair.ir, RangeTag::Unit);
    for (double v : lum.pixels()) {
        // quantised like a decoded 8-bit scan
        pet.r.push_back(std::round(255 * std::min(1.0, 1.3 * v)) / 255);
        pet.g.push_back(std::round(255 * 0.7 * v * v) / 255);
        pet.b.push_back(std::round(255 * (0.2 + 0.6 * (1.0 - v))) / 255);
    }
    const FusionNet model({}, 110);
    const MedicalFusion out = fuse_medical(model, backbone(), pair.vis, pet);
    const YCbCrImage original = rgb_to_ycbcr(pet);
    o.require(out.ycbcr.cb == original.cb && out.ycbcr.cr == original.cr, "fused chroma differs from the functional input");
    o.require(out.rgb.rows == 48 && out.rgb.cols == 48, "colour output shape");

    double rt = 0.0;
    const ColorImage back = ycbcr_to_rgb(original);
    for (std::size_t i = 0; i < pet.r.size(); ++i)
        rt = std::max({rt, std::abs(back.r[i] - pet.r[i]), std::abs(back.g[i] - pet.g[i]), std::abs(back.b[i] - pet.b[i])});
    o.require(rt <= 1.0 / 255.0, fmt::format("YCbCr round trip error {:.3g}", rt));

    TrainConfig cfg = small_config();
    cfg.mode = FusionMode::Medical;
    FusionNet net({}, 111);
    Trainer t(net, backbone(), cfg);
    const auto log = t.run(fixtures::make_toy_corpus(3, 111, 32)).to_csv();
    const std::string header = log.substr(0, log.find('\n'));
    o.require(header.find(",l_mri,l_fun,") != std::string::npos && header.find("l_ir") == std::string::npos,
              "medical log header: " + header);
    if (o.pass) o.detail = fmt::format("chroma bit-exact, round trip {:.2g}, columns l_mri/l_fun", rt);
    return o;
}

} // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
        {"metric oracle suite", metric_oracles},
        {"closed-form metric spot checks", closed_forms},
        {"adaptive-weight suite", adaptive_weights},
        {"contrastive-term suite", contrastive_suite},
        {"loss gradient check", gradient_check},
        {"architecture shape suite", architecture_shapes},
        {"two-stage training fidelity", algorithm_fidelity},
        {"toy training smoke", toy_training},
        {"contrastive directionality", directionality},
        {"medical path", medical_path},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        if (!o.pass) ++failed;
        std::printf("%s criterion %zu (%s): %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
