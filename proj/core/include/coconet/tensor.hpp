#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace coconet {

struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::size_t numel() const { return static_cast<std::size_t>(n) * c * h * w; }
    std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

// Dense NCHW double tensor with value semantics.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    const Shape& shape() const { return shape_; }
    int n() const { return shape_.n; }
    int c() const { return shape_.c; }
    int h() const { return shape_.h; }
    int w() const { return shape_.w; }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    std::span<double> sample(int i);
    std::span<const double> sample(int i) const;
    std::span<double> channel(int i, int ch);
    std::span<const double> channel(int i, int ch) const;

    double& at(int i, int ch, int y, int x) { return data_[index(i, ch, y, x)]; }
    double at(int i, int ch, int y, int x) const { return data_[index(i, ch, y, x)]; }

    void fill(double v);
    void add(const Tensor& other);          // elementwise +=
    void scale(double s);

private:
    std::size_t index(int i, int ch, int y, int x) const {
        return ((static_cast<std::size_t>(i) * shape_.c + ch) * shape_.h + y) * shape_.w + x;
    }

    Shape shape_{};
    std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Primitive kernels. Convolutions are stride 1 with zero "same" padding (k/2).
// Weights are laid out [out][in][k][k].

void conv2d_forward(const Tensor& x, std::span<const double> weight, std::span<const double> bias,
                    int out_channels, int kernel, Tensor& y);

// Accumulates into dweight / dbias when non-empty; writes dx when non-null.
void conv2d_backward(const Tensor& x, std::span<const double> weight, int out_channels, int kernel,
                     const Tensor& dy, Tensor* dx, std::span<double> dweight, std::span<double> dbias);

// 2×2 max pooling, stride 2, ceil mode (odd edges keep a partial window).
// `argmax` receives the flat input index of each output's winner.
Tensor maxpool2x2(const Tensor& x, std::vector<std::size_t>* argmax);
Tensor maxpool2x2_backward(const Tensor& dy, const Shape& input_shape, const std::vector<std::size_t>& argmax);

// Half-pixel-centre bilinear resampling (align_corners = false).
Tensor resize_bilinear(const Tensor& x, int out_h, int out_w);

Tensor concat_channels(std::span<const Tensor* const> parts);
std::vector<Tensor> split_channels(const Tensor& x, std::span<const int> widths);

// Reflective padding on the bottom/right edges (edge pixel not repeated).
Tensor pad_reflect(const Tensor& x, int pad_bottom, int pad_right);
Tensor crop_top_left(const Tensor& x, int h, int w);

} // namespace coconet
