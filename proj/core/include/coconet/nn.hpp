#pragma once

#include "coconet/tensor.hpp"

#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace coconet {

// A named trainable array and its gradient accumulator.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;

    Param(std::string n, Shape s) : name(std::move(n)), value(s), grad(s) {}
    void zero_grad() { grad.fill(0.0); }
};

// Non-trainable persistent state (batch-norm running statistics).
struct Buffer {
    std::string name;
    Tensor value;
};

class Conv2d {
public:
    Conv2d(std::string name, int in_channels, int out_channels, int kernel, bool bias = true);

    // Normal(0, gain² / fan_in) kernels (He by default), zero bias.
    void init(std::mt19937_64& rng, double gain = std::numbers::sqrt2);

    Tensor forward(const Tensor& x);
    // Returns dx; parameter gradients accumulate.
    Tensor backward(const Tensor& dy);

    void collect(std::vector<Param*>& out);
    int in_channels() const { return in_; }
    int out_channels() const { return out_; }
    int kernel() const { return k_; }

private:
    int in_;
    int out_;
    int k_;
    Param weight_;
    std::vector<Param> bias_; // empty or one element
    Tensor input_;
};

class BatchNorm2d {
public:
    BatchNorm2d(std::string name, int channels, double momentum = 0.1, double eps = 1e-5);

    // Training mode normalises with batch statistics and updates the running
    // averages; evaluation mode uses the stored running statistics.
    Tensor forward(const Tensor& x, bool training);
    Tensor backward(const Tensor& dy);

    void collect(std::vector<Param*>& out);
    void collect_buffers(std::vector<Buffer*>& out);

private:
    int channels_;
    double momentum_;
    double eps_;
    Param gamma_;
    Param beta_;
    Buffer running_mean_;
    Buffer running_var_;
    bool last_training_ = true;
    Tensor x_hat_;
    std::vector<double> inv_std_;
};

class LeakyReLU {
public:
    explicit LeakyReLU(double slope = 0.2) : slope_(slope) {}
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy) const;

private:
    double slope_;
    Tensor input_;
};

// Channel self-attention over a C×H×W map: bias-free 1×1 projections P, Q, H,
// A = row_softmax(P Qᵀ / HW) (C×C), output = Aᵀ·H + f.
class ChannelAttention {
public:
    ChannelAttention(std::string name, int channels);

    void init(std::mt19937_64& rng);
    void set_identity();

    Tensor forward(const Tensor& f);
    Tensor backward(const Tensor& dy);

    void collect(std::vector<Param*>& out);

    // C×C attention of each sample from the last forward call.
    const std::vector<std::vector<double>>& last_attention() const { return attn_; }
    int channels() const { return c_; }

private:
    int c_;
    Param wp_;
    Param wq_;
    Param wh_;
    Tensor input_;
    std::vector<std::vector<double>> p_, q_, h_, attn_;
};

} // namespace coconet
