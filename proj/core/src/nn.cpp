#include "coconet/nn.hpp"

#include "coconet/error.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>

namespace coconet {

Conv2d::Conv2d(std::string name, int in_channels, int out_channels, int kernel, bool bias)
    : in_(in_channels), out_(out_channels), k_(kernel),
      weight_(name + ".weight", Shape{out_channels, in_channels, kernel, kernel}) {
    if (bias) bias_.emplace_back(name + ".bias", Shape{1, out_channels, 1, 1});
}

void Conv2d::init(std::mt19937_64& rng, double gain) {
    const double stddev = gain / std::sqrt(static_cast<double>(in_) * k_ * k_);
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : weight_.value.values()) v = dist(rng);
    for (auto& b : bias_) b.value.fill(0.0);
}

Tensor Conv2d::forward(const Tensor& x) {
    if (x.c() != in_) {
        throw DataError(weight_.name + ": expected " + std::to_string(in_) + " input channels, got " + std::to_string(x.c()));
    }
    input_ = x;
    Tensor y;
    conv2d_forward(x, weight_.value.values(), bias_.empty() ? std::span<const double>{} : bias_[0].value.values(), out_, k_, y);
    return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
    Tensor dx;
    conv2d_backward(input_, weight_.value.values(), out_, k_, dy, &dx, weight_.grad.values(),
                    bias_.empty() ? std::span<double>{} : bias_[0].grad.values());
    return dx;
}

void Conv2d::collect(std::vector<Param*>& out) {
    out.push_back(&weight_);
    for (auto& b : bias_) out.push_back(&b);
}

BatchNorm2d::BatchNorm2d(std::string name, int channels, double momentum, double eps)
    : channels_(channels), momentum_(momentum), eps_(eps),
      gamma_(name + ".gamma", Shape{1, channels, 1, 1}),
      beta_(name + ".beta", Shape{1, channels, 1, 1}),
      running_mean_{name + ".running_mean", Tensor(Shape{1, channels, 1, 1}, 0.0)},
      running_var_{name + ".running_var", Tensor(Shape{1, channels, 1, 1}, 1.0)} {
    gamma_.value.fill(1.0);
}

Tensor BatchNorm2d::forward(const Tensor& x, bool training) {
    last_training_ = training;
    const std::size_t plane = x.shape().plane();
    const double count = static_cast<double>(x.n()) * static_cast<double>(plane);
    x_hat_ = Tensor(x.shape());
    inv_std_.assign(static_cast<std::size_t>(channels_), 0.0);
    Tensor y(x.shape());
    for (int ch = 0; ch < channels_; ++ch) {
        double mean = 0.0;
        double var = 0.0;
        if (training) {
            for (int i = 0; i < x.n(); ++i)
                for (double v : x.channel(i, ch)) mean += v;
            mean /= count;
            for (int i = 0; i < x.n(); ++i)
                for (double v : x.channel(i, ch)) var += (v - mean) * (v - mean);
            var /= count;
            auto& rm = running_mean_.value.values()[static_cast<std::size_t>(ch)];
            auto& rv = running_var_.value.values()[static_cast<std::size_t>(ch)];
            const double unbiased = count > 1 ? var * count / (count - 1) : var;
            rm = (1.0 - momentum_) * rm + momentum_ * mean;
            rv = (1.0 - momentum_) * rv + momentum_ * unbiased;
        } else {
            mean = running_mean_.value.values()[static_cast<std::size_t>(ch)];
            var = running_var_.value.values()[static_cast<std::size_t>(ch)];
        }
        const double inv_std = 1.0 / std::sqrt(var + eps_);
        inv_std_[static_cast<std::size_t>(ch)] = inv_std;
        const double g = gamma_.value.values()[static_cast<std::size_t>(ch)];
        const double b = beta_.value.values()[static_cast<std::size_t>(ch)];
        for (int i = 0; i < x.n(); ++i) {
            const auto src = x.channel(i, ch);
            auto xh = x_hat_.channel(i, ch);
            auto dst = y.channel(i, ch);
            for (std::size_t p = 0; p < plane; ++p) {
                xh[p] = (src[p] - mean) * inv_std;
                dst[p] = g * xh[p] + b;
            }
        }
    }
    return y;
}

Tensor BatchNorm2d::backward(const Tensor& dy) {
    const std::size_t plane = dy.shape().plane();
    const double count = static_cast<double>(dy.n()) * static_cast<double>(plane);
    Tensor dx(dy.shape());
    for (int ch = 0; ch < channels_; ++ch) {
        const double g = gamma_.value.values()[static_cast<std::size_t>(ch)];
        const double inv_std = inv_std_[static_cast<std::size_t>(ch)];
        double sum_dy = 0.0;
        double sum_dy_xh = 0.0;
        for (int i = 0; i < dy.n(); ++i) {
            const auto d = dy.channel(i, ch);
            const auto xh = x_hat_.channel(i, ch);
            for (std::size_t p = 0; p < plane; ++p) {
                sum_dy += d[p];
                sum_dy_xh += d[p] * xh[p];
            }
        }
        gamma_.grad.values()[static_cast<std::size_t>(ch)] += sum_dy_xh;
        beta_.grad.values()[static_cast<std::size_t>(ch)] += sum_dy;
        for (int i = 0; i < dy.n(); ++i) {
            const auto d = dy.channel(i, ch);
            const auto xh = x_hat_.channel(i, ch);
            auto out = dx.channel(i, ch);
            if (last_training_) {
                for (std::size_t p = 0; p < plane; ++p) {
                    out[p] = g * inv_std * (d[p] - sum_dy / count - xh[p] * sum_dy_xh / count);
                }
            } else {
                for (std::size_t p = 0; p < plane; ++p) out[p] = g * inv_std * d[p];
            }
        }
    }
    return dx;
}

void BatchNorm2d::collect(std::vector<Param*>& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
}

void BatchNorm2d::collect_buffers(std::vector<Buffer*>& out) {
    out.push_back(&running_mean_);
    out.push_back(&running_var_);
}

Tensor LeakyReLU::forward(const Tensor& x) {
    input_ = x;
    Tensor y = x;
    for (double& v : y.values())
        if (v < 0.0) v *= slope_;
    return y;
}

Tensor LeakyReLU::backward(const Tensor& dy) const {
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.numel(); ++i)
        if (input_.values()[i] < 0.0) dx.values()[i] *= slope_;
    return dx;
}

ChannelAttention::ChannelAttention(std::string name, int channels)
    : c_(channels),
      wp_(name + ".p", Shape{channels, channels, 1, 1}),
      wq_(name + ".q", Shape{channels, channels, 1, 1}),
      wh_(name + ".h", Shape{channels, channels, 1, 1}) {}

void ChannelAttention::init(std::mt19937_64& rng) {
    const double stddev = std::sqrt(1.0 / c_);
    std::normal_distribution<double> dist(0.0, stddev);
    for (Param* p : {&wp_, &wq_, &wh_})
        for (double& v : p->value.values()) v = dist(rng);
}

void ChannelAttention::set_identity() {
    for (Param* p : {&wp_, &wq_, &wh_}) {
        p->value.fill(0.0);
        for (int i = 0; i < c_; ++i) p->value.values()[static_cast<std::size_t>(i) * c_ + i] = 1.0;
    }
}

Tensor ChannelAttention::forward(const Tensor& f) {
    if (f.c() != c_) throw DataError(wp_.name + ": channel mismatch");
    input_ = f;
    const int c = c_;
    const int hw = f.h() * f.w();
    const std::size_t mat = static_cast<std::size_t>(c) * hw;
    p_.assign(static_cast<std::size_t>(f.n()), std::vector<double>(mat));
    q_.assign(static_cast<std::size_t>(f.n()), std::vector<double>(mat));
    h_.assign(static_cast<std::size_t>(f.n()), std::vector<double>(mat));
    attn_.assign(static_cast<std::size_t>(f.n()), std::vector<double>(static_cast<std::size_t>(c) * c));
    Tensor out = f;
    for (int i = 0; i < f.n(); ++i) {
        const double* x = f.sample(i).data();
        auto& p = p_[static_cast<std::size_t>(i)];
        auto& q = q_[static_cast<std::size_t>(i)];
        auto& h = h_[static_cast<std::size_t>(i)];
        auto& a = attn_[static_cast<std::size_t>(i)];
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, c, hw, c, 1.0, wp_.value.data(), c, x, hw, 0.0, p.data(), hw);
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, c, hw, c, 1.0, wq_.value.data(), c, x, hw, 0.0, q.data(), hw);
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, c, hw, c, 1.0, wh_.value.data(), c, x, hw, 0.0, h.data(), hw);
        // S = P Qᵀ / HW, then row softmax in place.
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, c, c, hw, 1.0 / hw, p.data(), hw, q.data(), hw, 0.0, a.data(), c);
        for (int r = 0; r < c; ++r) {
            double* row = a.data() + static_cast<std::size_t>(r) * c;
            const double top = *std::max_element(row, row + c);
            double sum = 0.0;
            for (int k = 0; k < c; ++k) {
                row[k] = std::exp(row[k] - top);
                sum += row[k];
            }
            for (int k = 0; k < c; ++k) row[k] /= sum;
        }
        // out = Aᵀ H + f
        cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, c, hw, c, 1.0, a.data(), c, h.data(), hw, 1.0,
                    out.sample(i).data(), hw);
    }
    return out;
}

Tensor ChannelAttention::backward(const Tensor& dy) {
    const int c = c_;
    const int hw = input_.h() * input_.w();
    Tensor dx = dy; // residual path
    std::vector<double> dh(static_cast<std::size_t>(c) * hw), dp(dh.size()), dq(dh.size());
    std::vector<double> da(static_cast<std::size_t>(c) * c);
    for (int i = 0; i < input_.n(); ++i) {
        const double* x = input_.sample(i).data();
        const double* g = dy.sample(i).data();
        const auto& p = p_[static_cast<std::size_t>(i)];
        const auto& q = q_[static_cast<std::size_t>(i)];
        const auto& h = h_[static_cast<std::size_t>(i)];
        const auto& a = attn_[static_cast<std::size_t>(i)];
        double* out = dx.sample(i).data();

        // dH = A dY ; dA = H dYᵀ
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, c, hw, c, 1.0, a.data(), c, g, hw, 0.0, dh.data(), hw);
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, c, c, hw, 1.0, h.data(), hw, g, hw, 0.0, da.data(), c);
        // softmax backward, row-wise, in place on da -> dS
        for (int r = 0; r < c; ++r) {
            double* drow = da.data() + static_cast<std::size_t>(r) * c;
            const double* arow = a.data() + static_cast<std::size_t>(r) * c;
            double dot = 0.0;
            for (int k = 0; k < c; ++k) dot += drow[k] * arow[k];
            for (int k = 0; k < c; ++k) drow[k] = arow[k] * (drow[k] - dot);
        }
        // dP = dS Q / HW ; dQ = dSᵀ P / HW
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, c, hw, c, 1.0 / hw, da.data(), c, q.data(), hw, 0.0, dp.data(), hw);
        cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, c, hw, c, 1.0 / hw, da.data(), c, p.data(), hw, 0.0, dq.data(), hw);

        const std::pair<Param*, const std::vector<double>*> branches[] = {{&wp_, &dp}, {&wq_, &dq}, {&wh_, &dh}};
        for (const auto& [param, grad] : branches) {
            cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, c, c, hw, 1.0, grad->data(), hw, x, hw, 1.0,
                        param->grad.data(), c);
            cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, c, hw, c, 1.0, param->value.data(), c, grad->data(), hw,
                        1.0, out, hw);
        }
    }
    return dx;
}

void ChannelAttention::collect(std::vector<Param*>& out) {
    out.push_back(&wp_);
    out.push_back(&wq_);
    out.push_back(&wh_);
}

} // namespace coconet
