#include "support/metric_oracles.hpp"
#include "support/synthetic.hpp"

#include <coconet/backbone.hpp>
#include <coconet/error.hpp>
#include <coconet/losses.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

using namespace coconet;

namespace {

const Backbone& backbone() {
    static const Backbone b = Backbone::deterministic();
    return b;
}

ImagePlane constant(int n, double v) { return ImagePlane(n, n, RangeTag::Unit, v); }

SaliencyMask random_mask(std::mt19937_64& rng, int rows, int cols, double p = 0.5) {
    std::bernoulli_distribution d(p);
    std::vector<std::uint8_t> bits(static_cast<std::size_t>(rows) * cols);
    for (auto& b : bits) b = d(rng) ? 1 : 0;
    return SaliencyMask(rows, cols, std::move(bits));
}

// I⊙M computed in [0,1] and returned in [-1,1] as a tensor.
Tensor masked_signed(const ImagePlane& img, const SaliencyMask& m, bool invert) {
    const ImagePlane u = normalize(img, RangeTag::Unit);
    Tensor t(Shape{1, 1, img.rows(), img.cols()});
    for (int r = 0; r < img.rows(); ++r)
        for (int c = 0; c < img.cols(); ++c) {
            const bool on = m(r, c) != invert;
            t.at(0, 0, r, c) = 2.0 * (on ? u(r, c) : 0.0) - 1.0;
        }
    return t;
}

double mean_abs(const Tensor& a, const Tensor& b) {
    long double s = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += std::fabs(a.values()[i] - b.values()[i]);
    return static_cast<double>(s / a.numel());
}

// Σᵢ wᵢ · mean|a−p| / Σₘ mean|a−nᵐ|, taps recomputed from scratch.
double oracle_term(const ImagePlane& f, const ImagePlane& pos, const std::vector<ImagePlane>& negs,
                   const SaliencyMask& m, bool invert, const std::vector<double>& w) {
    const auto a = backbone().extract_contrastive_taps(masked_signed(f, m, invert));
    const auto p = backbone().extract_contrastive_taps(masked_signed(pos, m, invert));
    std::vector<FeaturePyramid> n;
    for (const auto& x : negs) n.push_back(backbone().extract_contrastive_taps(masked_signed(x, m, invert)));
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double den = 0.0;
        for (const auto& nm : n) den += mean_abs(a[i], nm[i]);
        total += w[i] * mean_abs(a[i], p[i]) / std::max(den, 1e-12);
    }
    return total;
}

FeaturePyramid scalar_pyramid(std::initializer_list<double> values) {
    FeaturePyramid p;
    for (double v : values) p.levels.emplace_back(Shape{1, 1, 1, 1}, v);
    return p;
}

ContrastiveBatch scalar_batch(double anchor, double positive, std::initializer_list<double> negatives) {
    ContrastiveBatch b;
    b.anchor_taps = scalar_pyramid({anchor});
    b.positive_taps = scalar_pyramid({positive});
    for (double n : negatives) b.negative_taps.push_back(scalar_pyramid({n}));
    b.layer_weights = {1.0};
    return b;
}

ImagePlane composite(const ImagePlane& on, const ImagePlane& off, const SaliencyMask& m) {
    std::vector<double> px(on.size());
    for (int r = 0; r < on.rows(); ++r)
        for (int c = 0; c < on.cols(); ++c) px[static_cast<std::size_t>(r) * on.cols() + c] = m(r, c) ? on(r, c) : off(r, c);
    return ImagePlane(on.rows(), on.cols(), std::move(px), on.range());
}

Tensor stack(const std::vector<ImagePlane>& planes) {
    const int h = planes[0].rows(), w = planes[0].cols();
    Tensor t(Shape{static_cast<int>(planes.size()), 1, h, w});
    for (std::size_t i = 0; i < planes.size(); ++i) {
        const ImagePlane s = normalize(planes[i], RangeTag::Signed);
        std::copy(s.data().begin(), s.data().end(), t.sample(static_cast<int>(i)).begin());
    }
    return t;
}

} // namespace

TEST(StructureLoss, Examples) {
    std::mt19937_64 rng(1);
    const ImagePlane v = fixtures::random_plane(rng, 16, 16);
    const ImagePlane r = fixtures::random_plane(rng, 16, 16);
    EXPECT_NEAR(structure_loss(v, v, v, {}), 0.0, 1e-12);
    EXPECT_NEAR(structure_loss(v, r, v, {1.0, 0.0, 0.5, 0.5}), 0.0, 1e-12);
    EXPECT_GT(structure_loss(v, r, v, {0.0, 1.0, 0.5, 0.5}), 0.0);
}

TEST(StructureLoss, MatchesSsimOracle) {
    std::mt19937_64 rng(2);
    for (int n : {32, 12, 8, 5}) {
        const ImagePlane v = fixtures::random_plane(rng, n, n);
        const ImagePlane r = fixtures::random_plane(rng, n, n);
        const ImagePlane f = fixtures::random_plane(rng, n, n);
        const int win = n >= 11 ? 11 : (n % 2 ? n : n - 1);
        EXPECT_EQ(loss_ssim_window(n, n), win);
        const double expected = 0.3 * (1.0 - oracle::ssim(v, f, win, 1.5)) + 0.7 * (1.0 - oracle::ssim(r, f, win, 1.5));
        EXPECT_NEAR(structure_loss(v, r, f, {0.3, 0.7, 0.5, 0.5}), expected, 1e-8) << n;
    }
    EXPECT_EQ(loss_ssim_window(8, 40), 7);
    EXPECT_EQ(loss_ssim_window(40, 9), 9);
}

TEST(IntensityLoss, Examples) {
    EXPECT_DOUBLE_EQ(intensity_loss(constant(4, 0.0), constant(4, 1.0), constant(4, 0.5), {0.5, 0.5, 0.5, 0.5}), 0.25);
    std::mt19937_64 rng(3);
    const ImagePlane v = fixtures::random_plane(rng, 9, 7);
    EXPECT_EQ(intensity_loss(v, v, v, {}), 0.0);
}

TEST(IntensityLoss, MatchesLoopOracle) {
    std::mt19937_64 rng(4);
    const ImagePlane v = fixtures::random_plane(rng, 13, 17, RangeTag::Unit8);
    const ImagePlane r = fixtures::random_plane(rng, 13, 17, RangeTag::Unit8);
    const ImagePlane f = fixtures::random_plane(rng, 13, 17, RangeTag::Unit8);
    double a = 0.0, b = 0.0;
    for (int y = 0; y < 13; ++y)
        for (int x = 0; x < 17; ++x) {
            a += std::pow((f(y, x) - v(y, x)) / 255.0, 2);
            b += std::pow((f(y, x) - r(y, x)) / 255.0, 2);
        }
    EXPECT_NEAR(intensity_loss(v, r, f, {0.5, 0.5, 0.2, 0.8}), (0.2 * a + 0.8 * b) / (13 * 17), 1e-10);
    EXPECT_THROW(intensity_loss(v, r, fixtures::random_plane(rng, 13, 16), {}), DataError);
}

TEST(PixelLoss, CombinationAndSymmetry) {
    EXPECT_EQ(kDefaultAlpha, 20.0);
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 5; ++trial) {
        const ImagePlane v = fixtures::random_plane(rng, 16, 16);
        const ImagePlane r = fixtures::random_plane(rng, 16, 16);
        const ImagePlane f = fixtures::random_plane(rng, 16, 16);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const double s = u(rng), g = u(rng);
        const AdaptiveWeights w{s, 1 - s, g, 1 - g};
        EXPECT_EQ(pixel_loss(v, v, v, w), 0.0);
        EXPECT_NEAR(pixel_loss(v, r, f, w, 0.0), intensity_loss(v, r, f, w), 1e-15);
        const double lp = pixel_loss(v, r, f, w);
        EXPECT_NEAR(lp, 20.0 * structure_loss(v, r, f, w) + intensity_loss(v, r, f, w), 1e-12);
        EXPECT_NEAR(pixel_loss(r, v, f, w.swapped()), lp, 1e-12 * lp);
        EXPECT_GE(lp, 0.0);
    }
}

TEST(PixelLoss, TensorBatchMatchesPlanes) {
    std::mt19937_64 rng(6);
    std::vector<ImagePlane> vs, rs, fs;
    std::vector<AdaptiveWeights> ws{{0.2, 0.8, 0.6, 0.4}, {0.9, 0.1, 0.3, 0.7}};
    for (int i = 0; i < 2; ++i) {
        vs.push_back(fixtures::random_plane(rng, 12, 12));
        rs.push_back(fixtures::random_plane(rng, 12, 12));
        fs.push_back(fixtures::random_plane(rng, 12, 12));
    }
    const PixelTerms t = pixel_terms(stack(vs), stack(rs), stack(fs), ws, 20.0);
    double ls = 0, ln = 0;
    for (int i = 0; i < 2; ++i) {
        ls += structure_loss(vs[i], rs[i], fs[i], ws[i]) / 2;
        ln += intensity_loss(vs[i], rs[i], fs[i], ws[i]) / 2;
    }
    EXPECT_NEAR(t.l_s, ls, 1e-12);
    EXPECT_NEAR(t.l_n, ln, 1e-12);
    EXPECT_NEAR(t.l_p, 20 * ls + ln, 1e-12);
}

TEST(ContrastiveTerm, Examples) {
    EXPECT_EQ(contrastive_term(scalar_batch(0.5, 0.5, {2.0})).value, 0.0);
    EXPECT_NEAR(contrastive_term(scalar_batch(0.0, 1.0, {2.0, 3.0})).value, 0.2, 1e-15);
    ContrastiveBatch two;
    two.anchor_taps = scalar_pyramid({0.0, 1.0});
    two.positive_taps = scalar_pyramid({1.0, 3.0});
    two.negative_taps = {scalar_pyramid({4.0, 9.0})};
    two.layer_weights = {0.5, 0.5};
    EXPECT_NEAR(contrastive_term(two).value, 0.25, 1e-15);
}

TEST(ContrastiveTerm, MeanAbsoluteDifferencePerTap) {
    ContrastiveBatch b;
    b.anchor_taps.levels = {Tensor(Shape{1, 2, 1, 2}, std::vector<double>{0, 0, 0, 0})};
    b.positive_taps.levels = {Tensor(Shape{1, 2, 1, 2}, std::vector<double>{1, -1, 2, 0})};
    b.negative_taps = {FeaturePyramid{{}, {Tensor(Shape{1, 2, 1, 2}, std::vector<double>{4, 4, 4, 4})}}};
    b.layer_weights = {1.0};
    EXPECT_NEAR(contrastive_term(b).value, 1.0 / 4.0, 1e-15);
}

TEST(ContrastiveTerm, Monotonicity) {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const double a = nd(rng), p = nd(rng);
        const double n1 = nd(rng), n2 = nd(rng);
        const double base = contrastive_term(scalar_batch(a, p, {n1, n2})).value;
        if (a == p) continue;
        EXPECT_GT(contrastive_term(scalar_batch(a, a + 2 * (p - a), {n1, n2})).value, base);
        const double farther = n1 + (n1 >= a ? 1.0 : -1.0);
        EXPECT_LT(contrastive_term(scalar_batch(a, p, {farther, n2})).value, base);
    }
}

TEST(ContrastiveTerm, SamplesAreAveraged) {
    ContrastiveBatch b;
    b.anchor_taps.levels = {Tensor(Shape{2, 1, 1, 1}, std::vector<double>{0, 0})};
    b.positive_taps.levels = {Tensor(Shape{2, 1, 1, 1}, std::vector<double>{1, 1})};
    b.negative_taps = {FeaturePyramid{{}, {Tensor(Shape{2, 1, 1, 1}, std::vector<double>{2, 4})}}};
    b.layer_weights = {1.0};
    EXPECT_NEAR(contrastive_term(b).value, (0.5 + 0.25) / 2, 1e-15);
}

TEST(ContrastiveTerm, DegenerateDenominatorIsFlagged) {
    const auto t = contrastive_term(scalar_batch(1.0, 1.0, {1.0, 1.0}));
    EXPECT_TRUE(t.degenerate);
    EXPECT_EQ(t.value, 0.0);
    const auto u = contrastive_term(scalar_batch(1.0, 2.0, {1.0}));
    EXPECT_TRUE(u.degenerate);
    EXPECT_TRUE(std::isfinite(u.value));
    EXPECT_FALSE(contrastive_term(scalar_batch(1.0, 2.0, {3.0})).degenerate);
}

TEST(ContrastiveTerm, InputValidation) {
    auto b = scalar_batch(0, 1, {2});
    b.layer_weights = {-1.0};
    EXPECT_THROW(contrastive_term(b), ConfigError);
    b.layer_weights = {0.0};
    EXPECT_EQ(contrastive_term(b).value, 0.0);
    b.layer_weights = {1.0, 1.0};
    EXPECT_THROW(contrastive_term(b), DataError);
    auto c = scalar_batch(0, 1, {});
    EXPECT_THROW(contrastive_term(c), DataError);
    auto d = scalar_batch(0, 1, {2});
    d.positive_taps.levels[0] = Tensor(Shape{1, 1, 1, 2});
    EXPECT_THROW(contrastive_term(d), DataError);
}

TEST(ContrastiveTerm, AnchorGradient) {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> nd(0.0, 1.0);
    ContrastiveBatch b;
    auto rand_pyr = [&] {
        FeaturePyramid p;
        for (int c : {3, 2}) {
            Tensor t(Shape{2, c, 2, 3});
            for (double& v : t.values()) v = nd(rng);
            p.levels.push_back(t);
        }
        return p;
    };
    b.anchor_taps = rand_pyr();
    b.positive_taps = rand_pyr();
    b.negative_taps = {rand_pyr(), rand_pyr(), rand_pyr()};
    b.layer_weights = {0.3, 1.2};
    const auto t = contrastive_term(b, true);
    for (std::size_t l = 0; l < 2; ++l)
        for (std::size_t i = 0; i < b.anchor_taps[l].numel(); ++i) {
            const double h = 1e-7;
            auto up = b, down = b;
            up.anchor_taps.levels[l].values()[i] += h;
            down.anchor_taps.levels[l].values()[i] -= h;
            const double fd = (contrastive_term(up).value - contrastive_term(down).value) / (2 * h);
            EXPECT_NEAR(t.anchor_grads[l].values()[i], fd, 1e-6);
        }
}

TEST(CoupledContrastive, PerfectCompositeIsZero) {
    const SourcePair pair = fixtures::make_toy_pair(11, 32);
    ASSERT_TRUE(pair.mask.has_value());
    const ImagePlane f = composite(pair.ir, pair.vis, *pair.mask);
    const SourcePair other = fixtures::make_toy_pair(12, 32);
    const std::vector<ImagePlane> vn{pair.vis, other.vis}, rn{pair.ir, other.ir};
    const auto c = coupled_contrastive(backbone(), f, pair.ir, pair.vis, *pair.mask, vn, rn, default_layer_weights());
    EXPECT_EQ(c.first, 0.0);
    EXPECT_EQ(c.second, 0.0);
    EXPECT_FALSE(c.first_degenerate);
    EXPECT_FALSE(c.second_degenerate);
}

TEST(CoupledContrastive, AllOnesMaskDegeneratesBackgroundTerm) {
    std::mt19937_64 rng(13);
    const ImagePlane ir = fixtures::random_plane(rng, 16, 16);
    const ImagePlane vis = fixtures::random_plane(rng, 16, 16);
    const ImagePlane f = fixtures::random_plane(rng, 16, 16);
    const auto m = SaliencyMask::filled(16, 16, true);
    const std::vector<ImagePlane> vn{vis}, rn{ir};
    const auto c = coupled_contrastive(backbone(), f, ir, vis, m, vn, rn, default_layer_weights());
    EXPECT_TRUE(c.second_degenerate);
    EXPECT_EQ(c.second, 0.0);
    EXPECT_FALSE(c.first_degenerate);
    EXPECT_GT(c.first, 0.0);
}

TEST(CoupledContrastive, MatchesRecomputationOracle) {
    std::mt19937_64 rng(14);
    const int n = 24;
    const ImagePlane ir = fixtures::random_plane(rng, n, n);
    const ImagePlane vis = fixtures::random_plane(rng, n, n);
    const ImagePlane f = fixtures::random_plane(rng, n, n);
    const SaliencyMask m = random_mask(rng, n, n);
    std::vector<ImagePlane> vn{vis}, rn{ir};
    for (int i = 0; i < 2; ++i) {
        vn.push_back(fixtures::random_plane(rng, n, n));
        rn.push_back(fixtures::random_plane(rng, n, n));
    }
    const auto w = default_layer_weights();
    const auto c = coupled_contrastive(backbone(), f, ir, vis, m, vn, rn, w);
    const double l_ir = oracle_term(f, ir, vn, m, false, w);
    const double l_vis = oracle_term(f, vis, rn, m, true, w);
    EXPECT_NEAR(c.first, l_ir, 1e-6 * std::max(1.0, l_ir));
    EXPECT_NEAR(c.second, l_vis, 1e-6 * std::max(1.0, l_vis));
    EXPECT_GT(c.first, 0.0);
    EXPECT_GT(c.second, 0.0);
}

TEST(CoupledContrastive, ShapeErrors) {
    std::mt19937_64 rng(15);
    const ImagePlane a = fixtures::random_plane(rng, 16, 16);
    const ImagePlane b = fixtures::random_plane(rng, 16, 12);
    const auto m = SaliencyMask::filled(16, 16, true);
    const std::vector<ImagePlane> ok{a}, bad{b}, none;
    const auto w = default_layer_weights();
    EXPECT_THROW(coupled_contrastive(backbone(), a, a, b, m, ok, ok, w), DataError);
    EXPECT_THROW(coupled_contrastive(backbone(), a, a, a, m, bad, ok, w), DataError);
    EXPECT_THROW(coupled_contrastive(backbone(), a, a, a, SaliencyMask::filled(8, 8, true), ok, ok, w), DataError);
    EXPECT_THROW(coupled_contrastive(backbone(), a, a, a, m, none, ok, w), DataError);
}

TEST(MedicalContrastive, CompositeZeroAndDegenerate) {
    std::mt19937_64 rng(16);
    const int n = 16;
    const ImagePlane mri = fixtures::random_plane(rng, n, n);
    const ImagePlane fun = fixtures::random_plane(rng, n, n);
    const SaliencyMask m = random_mask(rng, n, n, 0.4);
    const std::vector<ImagePlane> fn{fun}, mn{mri};
    const auto c = medical_contrastive(backbone(), composite(mri, fun, m), mri, fun, m, fn, mn, default_layer_weights());
    EXPECT_EQ(c.first, 0.0);
    EXPECT_EQ(c.second, 0.0);
    const auto z = medical_contrastive(backbone(), fixtures::random_plane(rng, n, n), mri, fun, SaliencyMask::filled(n, n, false),
                                       fn, mn, default_layer_weights());
    EXPECT_TRUE(z.first_degenerate);
    EXPECT_FALSE(z.second_degenerate);
}

TEST(MedicalContrastive, MatchesRecomputationOracle) {
    std::mt19937_64 rng(17);
    const int n = 20;
    // bright compact functional blob, textured anatomical image
    std::vector<double> fpx(n * n), mpx(n * n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            fpx[y * n + x] = std::exp(-((y - 8) * (y - 8) + (x - 11) * (x - 11)) / 18.0);
            mpx[y * n + x] = 0.5 + 0.4 * std::sin(x * 0.9) * std::cos(y * 0.7);
        }
    const ImagePlane fun(n, n, fpx, RangeTag::Unit);
    const ImagePlane mri(n, n, mpx, RangeTag::Unit);
    const ImagePlane f = fixtures::random_plane(rng, n, n);
    const SaliencyMask m_m = threshold_saliency_mask(mri, 0.5).mask;
    const std::vector<ImagePlane> fn{fun, fixtures::random_plane(rng, n, n)}, mn{mri, fixtures::random_plane(rng, n, n)};
    const std::vector<double> w{0.1, 0.2, 0.3, 0.4, 0.5};
    const auto c = medical_contrastive(backbone(), f, mri, fun, m_m, fn, mn, w);
    EXPECT_NEAR(c.first, oracle_term(f, mri, fn, m_m, false, w), 1e-6);
    EXPECT_NEAR(c.second, oracle_term(f, fun, mn, m_m, true, w), 1e-6);
}

namespace {

struct Instance {
    Tensor v, r, f;
    std::vector<AdaptiveWeights> w;
    ContrastiveInputs c;
};

Instance random_instance(std::uint64_t seed, int n, int batch) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-0.9, 0.9);
    auto rt = [&] {
        Tensor t(Shape{batch, 1, n, n});
        for (double& x : t.values()) x = u(rng);
        return t;
    };
    Instance in{rt(), rt(), rt(), {}, {}};
    std::uniform_real_distribution<double> p(0.0, 1.0);
    for (int i = 0; i < batch; ++i) {
        const double s = p(rng), g = p(rng);
        in.w.push_back({s, 1 - s, g, 1 - g});
    }
    in.c.first = in.r;
    in.c.second = in.v;
    in.c.mask = Tensor(in.f.shape());
    std::bernoulli_distribution bit(0.5);
    for (double& x : in.c.mask.values()) x = bit(rng) ? 1.0 : 0.0;
    in.c.first_negatives = {in.v, rt(), rt()};
    in.c.second_negatives = {in.r, rt(), rt()};
    return in;
}

} // namespace

TEST(TotalLoss, StageOneIgnoresContrastiveTerms) {
    const Instance in = random_instance(20, 16, 2);
    const Backbone b = Backbone::deterministic();
    b.reset_call_counter();
    const auto e = total_loss(&b, in.v, in.r, in.f, in.w, &in.c, LossOptions{}, true);
    EXPECT_EQ(b.contrastive_calls(), 0u);
    EXPECT_EQ(e.breakdown.l_ir, 0.0);
    EXPECT_EQ(e.breakdown.l_vis, 0.0);
    EXPECT_EQ(e.breakdown.l_total, e.breakdown.l_p);
    const auto bare = total_loss(nullptr, in.v, in.r, in.f, in.w, nullptr, LossOptions{}, true);
    EXPECT_EQ(bare.grad_f.values(), e.grad_f.values());
}

TEST(TotalLoss, StageTwoComposition) {
    const Instance in = random_instance(21, 16, 2);
    LossOptions opt;
    opt.stage1 = false;
    const auto e = total_loss(&backbone(), in.v, in.r, in.f, in.w, &in.c, opt, false);
    const auto& b = e.breakdown;
    EXPECT_TRUE(e.grad_f.empty());
    EXPECT_NEAR(b.l_p, b.alpha * b.l_s + b.l_n, 1e-6 * b.l_p);
    EXPECT_NEAR(b.l_total, b.l_p + b.l_ir + b.l_vis, 1e-6 * b.l_total);
    EXPECT_GT(b.l_ir, 0.0);
    EXPECT_GT(b.l_vis, 0.0);
    for (double x : {b.l_s, b.l_n, b.l_p, b.l_ir, b.l_vis, b.l_total}) {
        EXPECT_GE(x, 0.0);
        EXPECT_TRUE(std::isfinite(x));
    }
    EXPECT_THROW(total_loss(nullptr, in.v, in.r, in.f, in.w, &in.c, opt, false), DataError);
    opt.layer_weights.assign(5, 0.0);
    const auto z = total_loss(&backbone(), in.v, in.r, in.f, in.w, &in.c, opt, false);
    EXPECT_EQ(z.breakdown.l_total, z.breakdown.l_p);
}

TEST(TotalLoss, ContrastiveTermsAreBatchMeans) {
    const Instance in = random_instance(22, 16, 2);
    LossOptions opt;
    opt.stage1 = false;
    const auto both = total_loss(&backbone(), in.v, in.r, in.f, in.w, &in.c, opt, false).breakdown;
    double ir = 0, vis = 0;
    for (int s = 0; s < 2; ++s) {
        auto take = [&](const Tensor& t) {
            Tensor o(Shape{1, 1, 16, 16});
            std::copy(t.sample(s).begin(), t.sample(s).end(), o.values().begin());
            return o;
        };
        ContrastiveInputs c{take(in.c.first), take(in.c.second), take(in.c.mask), {}, {}};
        for (const auto& n : in.c.first_negatives) c.first_negatives.push_back(take(n));
        for (const auto& n : in.c.second_negatives) c.second_negatives.push_back(take(n));
        const std::vector<AdaptiveWeights> w{in.w[static_cast<std::size_t>(s)]};
        const auto one = total_loss(&backbone(), take(in.v), take(in.r), take(in.f), w, &c, opt, false).breakdown;
        ir += one.l_ir / 2;
        vis += one.l_vis / 2;
    }
    EXPECT_NEAR(both.l_ir, ir, 1e-12);
    EXPECT_NEAR(both.l_vis, vis, 1e-12);
}

namespace {

// ∂L_total/∂f against central differences at 50 pixels of an 8×8 instance.
void total_loss_gradient_check(bool stage1, double h) {
    Instance in = random_instance(23, 8, 1);
    LossOptions opt;
    opt.stage1 = stage1;
    const auto e = total_loss(&backbone(), in.v, in.r, in.f, in.w, &in.c, opt, true);
    std::vector<std::size_t> idx(in.f.numel());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(23);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(50);
    for (std::size_t i : idx) {
        const double keep = in.f.values()[i];
        in.f.values()[i] = keep + h;
        const double up = total_loss(&backbone(), in.v, in.r, in.f, in.w, &in.c, opt, false).breakdown.l_total;
        in.f.values()[i] = keep - h;
        const double down = total_loss(&backbone(), in.v, in.r, in.f, in.w, &in.c, opt, false).breakdown.l_total;
        in.f.values()[i] = keep;
        const double fd = (up - down) / (2 * h);
        const double a = e.grad_f.values()[i];
        EXPECT_LE(std::abs(a - fd), 1e-3 * std::max(std::abs(a), std::abs(fd)) + 1e-9)
            << "pixel " << i << " analytic " << a << " fd " << fd;
    }
}

} // namespace

TEST(TotalLoss, GradientMatchesFiniteDifferences) { total_loss_gradient_check(false, 1e-3); }
TEST(TotalLoss, PixelGradientMatchesFiniteDifferences) { total_loss_gradient_check(true, 1e-3); }
// clear of the backbone's ReLU / max-pool switches
TEST(TotalLoss, GradientMatchesFiniteDifferencesSmallStep) { total_loss_gradient_check(false, 1e-5); }

TEST(TotalLoss, NonNegativeAndFiniteOnRandomInputs) {
    LossOptions opt;
    opt.stage1 = false;
    for (std::uint64_t seed = 30; seed < 36; ++seed) {
        const Instance in = random_instance(seed, 12, 1);
        const auto b = total_loss(&backbone(), in.v, in.r, in.f, in.w, &in.c, opt, false).breakdown;
        for (double x : {b.l_s, b.l_n, b.l_p, b.l_ir, b.l_vis, b.l_total}) {
            EXPECT_GE(x, 0.0);
            EXPECT_TRUE(std::isfinite(x));
        }
    }
}

TEST(LossCsv, HeaderAndRow) {
    EXPECT_EQ(loss_csv_header(FusionMode::Ivif), "step,l_s,l_n,l_p,l_ir,l_vis,l_total,sigma_a,sigma_b,gamma_a,gamma_b");
    EXPECT_EQ(loss_csv_header(FusionMode::Medical), "step,l_s,l_n,l_p,l_mri,l_fun,l_total,sigma_a,sigma_b,gamma_a,gamma_b");
    LossBreakdown b;
    b.l_s = 0.5;
    b.l_n = 0.25;
    b.l_p = 10.25;
    b.l_ir = 0.125;
    b.l_vis = 1.0 / 3.0;
    b.l_total = 10.708333333333334;
    EXPECT_EQ(loss_csv_row(7, b, {0.25, 0.75, 0.5, 0.5}),
              "7,0.5,0.25,10.25,0.125,0.333333333,10.7083333,0.25,0.75,0.5,0.5");
}
