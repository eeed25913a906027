#include "coconet/tensor.hpp"

#include "coconet/error.hpp"

#include <cblas.h>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace coconet {

std::string Shape::str() const { return fmt::format("({}, {}, {}, {})", n, c, h, w); }

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.numel(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
        throw DataError("tensor data size " + std::to_string(data_.size()) + " does not match shape " + shape_.str());
    }
}

std::span<double> Tensor::sample(int i) {
    return {data_.data() + static_cast<std::size_t>(i) * shape_.sample_size(), shape_.sample_size()};
}

std::span<const double> Tensor::sample(int i) const {
    return {data_.data() + static_cast<std::size_t>(i) * shape_.sample_size(), shape_.sample_size()};
}

std::span<double> Tensor::channel(int i, int ch) {
    return {data_.data() + index(i, ch, 0, 0), shape_.plane()};
}

std::span<const double> Tensor::channel(int i, int ch) const {
    return {data_.data() + index(i, ch, 0, 0), shape_.plane()};
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::add(const Tensor& other) {
    if (!(other.shape_ == shape_)) throw DataError("tensor add: shape mismatch " + shape_.str() + " vs " + other.shape_.str());
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

void Tensor::scale(double s) {
    for (double& v : data_) v *= s;
}

namespace {

void im2col(const double* x, int channels, int h, int w, int k, double* col) {
    const int pad = k / 2;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int ci = 0; ci < channels; ++ci) {
        const double* src = x + ci * plane;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                double* dst = col + (static_cast<std::size_t>(ci) * k * k + ky * k + kx) * plane;
                const int dx = kx - pad;
                const int x0 = std::max(0, -dx);
                const int x1 = std::min(w, w - dx);
                for (int y = 0; y < h; ++y) {
                    const int sy = y + ky - pad;
                    double* row = dst + static_cast<std::size_t>(y) * w;
                    if (sy < 0 || sy >= h || x0 >= x1) {
                        std::fill(row, row + w, 0.0);
                        continue;
                    }
                    std::fill(row, row + x0, 0.0);
                    std::copy(src + static_cast<std::size_t>(sy) * w + x0 + dx, src + static_cast<std::size_t>(sy) * w + x1 + dx, row + x0);
                    std::fill(row + x1, row + w, 0.0);
                }
            }
        }
    }
}

void col2im(const double* col, int channels, int h, int w, int k, double* x) {
    const int pad = k / 2;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int ci = 0; ci < channels; ++ci) {
        double* dst = x + ci * plane;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const double* src = col + (static_cast<std::size_t>(ci) * k * k + ky * k + kx) * plane;
                const int dx = kx - pad;
                const int x0 = std::max(0, -dx);
                const int x1 = std::min(w, w - dx);
                for (int y = 0; y < h; ++y) {
                    const int sy = y + ky - pad;
                    if (sy < 0 || sy >= h) continue;
                    const double* row = src + static_cast<std::size_t>(y) * w;
                    double* out = dst + static_cast<std::size_t>(sy) * w;
                    for (int xx = x0; xx < x1; ++xx) out[xx + dx] += row[xx];
                }
            }
        }
    }
}

} // namespace

void conv2d_forward(const Tensor& x, std::span<const double> weight, std::span<const double> bias,
                    int out_channels, int kernel, Tensor& y) {
    const int in_c = x.c();
    const std::size_t kdim = static_cast<std::size_t>(in_c) * kernel * kernel;
    if (weight.size() != kdim * out_channels) {
        throw DataError(fmt::format("conv weight size {} does not match {}x{}x{}x{}", weight.size(), out_channels, in_c, kernel, kernel));
    }
    const int hw = x.h() * x.w();
    y = Tensor(Shape{x.n(), out_channels, x.h(), x.w()});
    std::vector<double> col;
    if (kernel != 1) col.resize(kdim * hw);
    for (int i = 0; i < x.n(); ++i) {
        const double* src = x.sample(i).data();
        if (kernel != 1) {
            im2col(src, in_c, x.h(), x.w(), kernel, col.data());
            src = col.data();
        }
        double* dst = y.sample(i).data();
        if (!bias.empty()) {
            for (int o = 0; o < out_channels; ++o) std::fill(dst + static_cast<std::size_t>(o) * hw, dst + static_cast<std::size_t>(o + 1) * hw, bias[o]);
        }
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, out_channels, hw, static_cast<int>(kdim), 1.0,
                    weight.data(), static_cast<int>(kdim), src, hw, bias.empty() ? 0.0 : 1.0, dst, hw);
    }
}

void conv2d_backward(const Tensor& x, std::span<const double> weight, int out_channels, int kernel,
                     const Tensor& dy, Tensor* dx, std::span<double> dweight, std::span<double> dbias) {
    const int in_c = x.c();
    const std::size_t kdim = static_cast<std::size_t>(in_c) * kernel * kernel;
    const int hw = x.h() * x.w();
    std::vector<double> col;
    std::vector<double> dcol;
    if (kernel != 1) {
        col.resize(kdim * hw);
        if (dx) dcol.resize(kdim * hw);
    }
    if (dx) *dx = Tensor(x.shape());
    for (int i = 0; i < x.n(); ++i) {
        const double* g = dy.sample(i).data();
        if (!dbias.empty()) {
            for (int o = 0; o < out_channels; ++o) {
                double acc = 0.0;
                const double* row = g + static_cast<std::size_t>(o) * hw;
                for (int p = 0; p < hw; ++p) acc += row[p];
                dbias[o] += acc;
            }
        }
        if (!dweight.empty()) {
            const double* src = x.sample(i).data();
            if (kernel != 1) {
                im2col(src, in_c, x.h(), x.w(), kernel, col.data());
                src = col.data();
            }
            cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, out_channels, static_cast<int>(kdim), hw, 1.0, g, hw,
                        src, hw, 1.0, dweight.data(), static_cast<int>(kdim));
        }
        if (dx) {
            double* dst = kernel == 1 ? dx->sample(i).data() : dcol.data();
            cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(kdim), hw, out_channels, 1.0,
                        weight.data(), static_cast<int>(kdim), g, hw, 0.0, dst, hw);
            if (kernel != 1) col2im(dcol.data(), in_c, x.h(), x.w(), kernel, dx->sample(i).data());
        }
    }
}

Tensor maxpool2x2(const Tensor& x, std::vector<std::size_t>* argmax) {
    const int oh = (x.h() + 1) / 2;
    const int ow = (x.w() + 1) / 2;
    Tensor y(Shape{x.n(), x.c(), oh, ow});
    if (argmax) argmax->assign(y.numel(), 0);
    std::size_t out_idx = 0;
    for (int i = 0; i < x.n(); ++i) {
        for (int ch = 0; ch < x.c(); ++ch) {
            const std::size_t base = (static_cast<std::size_t>(i) * x.c() + ch) * x.shape().plane();
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox, ++out_idx) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::size_t best_idx = 0;
                    for (int dy = 0; dy < 2; ++dy) {
                        const int yy = 2 * oy + dy;
                        if (yy >= x.h()) continue;
                        for (int dx = 0; dx < 2; ++dx) {
                            const int xx = 2 * ox + dx;
                            if (xx >= x.w()) continue;
                            const std::size_t idx = base + static_cast<std::size_t>(yy) * x.w() + xx;
                            if (x.values()[idx] > best) {
                                best = x.values()[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    y.values()[out_idx] = best;
                    if (argmax) (*argmax)[out_idx] = best_idx;
                }
            }
        }
    }
    return y;
}

Tensor maxpool2x2_backward(const Tensor& dy, const Shape& input_shape, const std::vector<std::size_t>& argmax) {
    Tensor dx(input_shape);
    for (std::size_t i = 0; i < argmax.size(); ++i) dx.values()[argmax[i]] += dy.values()[i];
    return dx;
}

Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
    if (x.h() == out_h && x.w() == out_w) return x;
    Tensor y(Shape{x.n(), x.c(), out_h, out_w});
    const double sy = static_cast<double>(x.h()) / out_h;
    const double sx = static_cast<double>(x.w()) / out_w;
    struct Tap {
        int i0, i1;
        double f;
    };
    auto taps = [](int out, int in, double scale) {
        std::vector<Tap> t(static_cast<std::size_t>(out));
        for (int o = 0; o < out; ++o) {
            const double src = std::max((o + 0.5) * scale - 0.5, 0.0);
            const int i0 = std::min(static_cast<int>(std::floor(src)), in - 1);
            const int i1 = std::min(i0 + 1, in - 1);
            t[static_cast<std::size_t>(o)] = {i0, i1, src - i0};
        }
        return t;
    };
    const auto ty = taps(out_h, x.h(), sy);
    const auto tx = taps(out_w, x.w(), sx);
    for (int i = 0; i < x.n(); ++i) {
        for (int ch = 0; ch < x.c(); ++ch) {
            const auto src = x.channel(i, ch);
            auto dst = y.channel(i, ch);
            for (int oy = 0; oy < out_h; ++oy) {
                const auto& a = ty[static_cast<std::size_t>(oy)];
                for (int ox = 0; ox < out_w; ++ox) {
                    const auto& b = tx[static_cast<std::size_t>(ox)];
                    const double top = src[static_cast<std::size_t>(a.i0) * x.w() + b.i0] * (1 - b.f) + src[static_cast<std::size_t>(a.i0) * x.w() + b.i1] * b.f;
                    const double bot = src[static_cast<std::size_t>(a.i1) * x.w() + b.i0] * (1 - b.f) + src[static_cast<std::size_t>(a.i1) * x.w() + b.i1] * b.f;
                    dst[static_cast<std::size_t>(oy) * out_w + ox] = top * (1 - a.f) + bot * a.f;
                }
            }
        }
    }
    return y;
}

Tensor concat_channels(std::span<const Tensor* const> parts) {
    if (parts.empty()) throw DataError("concat of zero tensors");
    const Shape first = parts[0]->shape();
    int channels = 0;
    for (const Tensor* t : parts) {
        if (t->n() != first.n || t->h() != first.h || t->w() != first.w) {
            throw DataError("concat: spatial/batch mismatch " + first.str() + " vs " + t->shape().str());
        }
        channels += t->c();
    }
    Tensor y(Shape{first.n, channels, first.h, first.w});
    for (int i = 0; i < first.n; ++i) {
        double* dst = y.sample(i).data();
        for (const Tensor* t : parts) {
            const auto src = t->sample(i);
            dst = std::copy(src.begin(), src.end(), dst);
        }
    }
    return y;
}

std::vector<Tensor> split_channels(const Tensor& x, std::span<const int> widths) {
    std::vector<Tensor> out;
    int offset = 0;
    for (int width : widths) {
        Tensor part(Shape{x.n(), width, x.h(), x.w()});
        for (int i = 0; i < x.n(); ++i) {
            const auto src = x.sample(i).subspan(static_cast<std::size_t>(offset) * x.shape().plane(), part.shape().sample_size());
            std::copy(src.begin(), src.end(), part.sample(i).begin());
        }
        offset += width;
        out.push_back(std::move(part));
    }
    if (offset != x.c()) throw DataError("split widths do not sum to the channel count");
    return out;
}

Tensor pad_reflect(const Tensor& x, int pad_bottom, int pad_right) {
    if (pad_bottom == 0 && pad_right == 0) return x;
    if (pad_bottom >= x.h() || pad_right >= x.w()) throw DataError("reflective pad larger than the extent");
    const int oh = x.h() + pad_bottom;
    const int ow = x.w() + pad_right;
    Tensor y(Shape{x.n(), x.c(), oh, ow});
    for (int i = 0; i < x.n(); ++i) {
        for (int ch = 0; ch < x.c(); ++ch) {
            for (int yy = 0; yy < oh; ++yy) {
                const int sy = yy < x.h() ? yy : 2 * (x.h() - 1) - yy;
                for (int xx = 0; xx < ow; ++xx) {
                    const int sx = xx < x.w() ? xx : 2 * (x.w() - 1) - xx;
                    y.at(i, ch, yy, xx) = x.at(i, ch, sy, sx);
                }
            }
        }
    }
    return y;
}

Tensor crop_top_left(const Tensor& x, int h, int w) {
    if (h == x.h() && w == x.w()) return x;
    Tensor y(Shape{x.n(), x.c(), h, w});
    for (int i = 0; i < x.n(); ++i)
        for (int ch = 0; ch < x.c(); ++ch)
            for (int yy = 0; yy < h; ++yy)
                for (int xx = 0; xx < w; ++xx) y.at(i, ch, yy, xx) = x.at(i, ch, yy, xx);
    return y;
}

} // namespace coconet
