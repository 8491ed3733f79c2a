#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstddef>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "mbic/errors.hpp"
#include "mbic/parallel.hpp"

namespace mbic {

// Dense 4-axis float32 array, (batch, channel, height, width), row-major with
// width fastest. Every image, featuremap and latent in the codec is one of
// these; parameter tensors reuse the same layout (e.g. conv weights as
// (out, in, k, k), vectors as (1, c, 1, 1)).
class Tensor {
public:
    Tensor() : shape_{0, 0, 0, 0} {}

    Tensor(int n, int c, int h, int w) : shape_{n, c, h, w} {
        if (n < 0 || c < 0 || h < 0 || w < 0)
            throw ShapeError("Tensor: negative extent");
        data_.assign(static_cast<std::size_t>(n) * c * h * w, 0.0f);
    }

    static Tensor full(int n, int c, int h, int w, float value) {
        Tensor t(n, c, h, w);
        for (auto& v : t.data_) v = value;
        return t;
    }

    const std::array<int, 4>& shape() const { return shape_; }
    int n() const { return shape_[0]; }
    int c() const { return shape_[1]; }
    int h() const { return shape_[2]; }
    int w() const { return shape_[3]; }
    std::size_t numel() const { return data_.size(); }
    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }

    float& at(int n, int c, int h, int w) {
        return data_[idx(n, c, h, w)];
    }
    float at(int n, int c, int h, int w) const {
        return data_[idx(n, c, h, w)];
    }

    std::size_t idx(int n, int c, int h, int w) const {
        return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
    }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    bool all_finite() const {
        for (float v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "(" << shape_[0] << "," << shape_[1] << "," << shape_[2] << "," << shape_[3] << ")";
        return os.str();
    }

private:
    std::array<int, 4> shape_;
    std::vector<float> data_;
};

// Square-kernel 2-D convolution descriptor.
struct ConvSpec {
    int in_channels = 0;
    int out_channels = 0;
    int kernel_size = 1;
    int stride = 1;
    int padding = 0;
    int out_padding = 0;   // transposed convs only
    bool transposed = false;
    bool depthwise = false;
};

namespace detail {

inline void check_axis(const char* op, const char* axis_name, int got, int want) {
    if (got != want) {
        std::ostringstream os;
        os << op << ": " << axis_name << " mismatch, got " << got << ", expected " << want;
        throw ShapeError(os.str());
    }
}

}  // namespace detail

inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// y[n,o,i,j] = b[o] + sum_{c,dy,dx} w[o,c,dy,dx] * x[n,c,i*s-p+dy,j*s-p+dx]
// Weight layout (out_channels, in_channels, k, k); zero padding.
// Row-buffered accumulation in double, contiguous over the output row.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, const ConvSpec& spec) {
    if (spec.transposed || spec.depthwise)
        throw ShapeError("conv2d: spec marked transposed/depthwise");
    detail::check_axis("conv2d", "input channels", x.c(), spec.in_channels);
    detail::check_axis("conv2d", "weight out channels", w.n(), spec.out_channels);
    detail::check_axis("conv2d", "weight in channels", w.c(), spec.in_channels);
    detail::check_axis("conv2d", "weight kernel h", w.h(), spec.kernel_size);
    detail::check_axis("conv2d", "weight kernel w", w.w(), spec.kernel_size);
    detail::check_axis("conv2d", "bias length", b.c(), spec.out_channels);

    const int k = spec.kernel_size, s = spec.stride, p = spec.padding;
    if (k == 1 && s == 1 && p == 0) return linear(x, w, b);  // same map, leaner loop
    const int oh = (x.h() + 2 * p - k) / s + 1;
    const int ow = (x.w() + 2 * p - k) / s + 1;
    if (oh <= 0 || ow <= 0)
        throw ShapeError("conv2d: empty output for input " + x.shape_str());

    const int ci = spec.in_channels, xh = x.h(), xw = x.w();
    const std::size_t in_plane = static_cast<std::size_t>(xh) * xw;
    const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
    Tensor y(x.n(), spec.out_channels, oh, ow);
    for (int n = 0; n < x.n(); ++n) {
        const float* xb = x.data() + static_cast<std::size_t>(n) * ci * in_plane;
        parallel_for(static_cast<std::size_t>(spec.out_channels), [&](std::size_t oc) {
            const int o = static_cast<int>(oc);
            const float* wb = w.data() + static_cast<std::size_t>(o) * ci * k * k;
            float* yb = y.data() +
                        (static_cast<std::size_t>(n) * spec.out_channels + o) * out_plane;
            const double bias = b.at(0, o, 0, 0);
            std::vector<double> acc(ow);
            for (int i = 0; i < oh; ++i) {
                std::fill(acc.begin(), acc.end(), bias);
                for (int c = 0; c < ci; ++c) {
                    const float* xc = xb + static_cast<std::size_t>(c) * in_plane;
                    const float* wc = wb + static_cast<std::size_t>(c) * k * k;
                    for (int dy = 0; dy < k; ++dy) {
                        const int sy = i * s - p + dy;
                        if (sy < 0 || sy >= xh) continue;
                        const float* xrow = xc + static_cast<std::size_t>(sy) * xw;
                        for (int dx = 0; dx < k; ++dx) {
                            const int off = dx - p;  // sx = j*s + off
                            if (off > xw - 1) continue;
                            const double coef = wc[dy * k + dx];
                            int j_lo = 0;
                            if (off < 0) j_lo = (-off + s - 1) / s;
                            int j_hi = (xw - 1 - off) / s + 1;
                            if (j_hi > ow) j_hi = ow;
                            for (int j = j_lo; j < j_hi; ++j)
                                acc[j] += coef * xrow[j * s + off];
                        }
                    }
                }
                for (int j = 0; j < ow; ++j)
                    yb[static_cast<std::size_t>(i) * ow + j] = static_cast<float>(acc[j]);
            }
        });
    }
    return y;
}

// Transposed (fractionally strided) convolution, the adjoint of conv2d for
// matched specs. Weight layout (in_channels, out_channels, k, k), i.e. the
// same buffer a matching conv2d uses with its axes read the other way.
// Output extent: (H-1)*s - 2p + k + out_padding.
inline Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& b,
                               const ConvSpec& spec) {
    if (!spec.transposed)
        throw ShapeError("conv_transpose2d: spec not marked transposed");
    detail::check_axis("conv_transpose2d", "input channels", x.c(), spec.in_channels);
    detail::check_axis("conv_transpose2d", "weight in channels", w.n(), spec.in_channels);
    detail::check_axis("conv_transpose2d", "weight out channels", w.c(), spec.out_channels);
    detail::check_axis("conv_transpose2d", "weight kernel h", w.h(), spec.kernel_size);
    detail::check_axis("conv_transpose2d", "weight kernel w", w.w(), spec.kernel_size);
    detail::check_axis("conv_transpose2d", "bias length", b.c(), spec.out_channels);

    const int k = spec.kernel_size, s = spec.stride, p = spec.padding;
    const int oh = (x.h() - 1) * s - 2 * p + k + spec.out_padding;
    const int ow = (x.w() - 1) * s - 2 * p + k + spec.out_padding;
    if (oh <= 0 || ow <= 0)
        throw ShapeError("conv_transpose2d: empty output for input " + x.shape_str());

    const int ci = spec.in_channels, xh = x.h(), xw = x.w();
    const std::size_t in_plane = static_cast<std::size_t>(xh) * xw;
    const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
    Tensor y(x.n(), spec.out_channels, oh, ow);
    for (int n = 0; n < x.n(); ++n) {
        const float* xb = x.data() + static_cast<std::size_t>(n) * ci * in_plane;
        parallel_for(static_cast<std::size_t>(spec.out_channels), [&](std::size_t oc) {
            const int o = static_cast<int>(oc);
            // scatter form: source (si, sj) lands on (si*s - p + dy, sj*s - p + dx)
            std::vector<double> acc(out_plane, static_cast<double>(b.at(0, o, 0, 0)));
            for (int c = 0; c < ci; ++c) {
                const float* xc = xb + static_cast<std::size_t>(c) * in_plane;
                const float* wc =
                    w.data() + (static_cast<std::size_t>(c) * spec.out_channels + o) * k * k;
                for (int si = 0; si < xh; ++si) {
                    const float* xrow = xc + static_cast<std::size_t>(si) * xw;
                    for (int dy = 0; dy < k; ++dy) {
                        const int ti = si * s - p + dy;
                        if (ti < 0 || ti >= oh) continue;
                        double* arow = acc.data() + static_cast<std::size_t>(ti) * ow;
                        for (int dx = 0; dx < k; ++dx) {
                            const int off = dx - p;  // tj = sj*s + off
                            if (off > ow - 1) continue;
                            const double coef = wc[dy * k + dx];
                            int sj_lo = 0;
                            if (off < 0) sj_lo = (-off + s - 1) / s;
                            int sj_hi = (ow - 1 - off) / s + 1;
                            if (sj_hi > xw) sj_hi = xw;
                            for (int sj = sj_lo; sj < sj_hi; ++sj)
                                arow[sj * s + off] += coef * xrow[sj];
                        }
                    }
                }
            }
            float* yb = y.data() +
                        (static_cast<std::size_t>(n) * spec.out_channels + o) * out_plane;
            for (std::size_t i = 0; i < out_plane; ++i) yb[i] = static_cast<float>(acc[i]);
        });
    }
    return y;
}

// Per-channel convolution: channel c of the output depends only on channel c
// of the input. Weight layout (channels, 1, k, k), no bias.
inline Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, const ConvSpec& spec) {
    if (!spec.depthwise)
        throw ShapeError("depthwise_conv2d: spec not marked depthwise");
    if (spec.in_channels != spec.out_channels)
        throw ShapeError("depthwise_conv2d: in_channels != out_channels");
    detail::check_axis("depthwise_conv2d", "input channels", x.c(), spec.in_channels);
    detail::check_axis("depthwise_conv2d", "weight channels", w.n(), spec.in_channels);
    detail::check_axis("depthwise_conv2d", "weight group width", w.c(), 1);
    detail::check_axis("depthwise_conv2d", "weight kernel h", w.h(), spec.kernel_size);

    const int k = spec.kernel_size, s = spec.stride, p = spec.padding;
    const int oh = (x.h() + 2 * p - k) / s + 1;
    const int ow = (x.w() + 2 * p - k) / s + 1;
    if (oh <= 0 || ow <= 0)
        throw ShapeError("depthwise_conv2d: empty output for input " + x.shape_str());

    const int xh = x.h(), xw = x.w();
    const std::size_t in_plane = static_cast<std::size_t>(xh) * xw;
    const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
    Tensor y(x.n(), x.c(), oh, ow);
    for (int n = 0; n < x.n(); ++n) {
        const float* xb = x.data() + static_cast<std::size_t>(n) * x.c() * in_plane;
        parallel_for(static_cast<std::size_t>(x.c()), [&](std::size_t cc) {
            const int c = static_cast<int>(cc);
            const float* xc = xb + static_cast<std::size_t>(c) * in_plane;
            const float* wc = w.data() + static_cast<std::size_t>(c) * k * k;
            float* yb = y.data() + (static_cast<std::size_t>(n) * x.c() + c) * out_plane;
            std::vector<double> acc(ow);
            for (int i = 0; i < oh; ++i) {
                std::fill(acc.begin(), acc.end(), 0.0);
                for (int dy = 0; dy < k; ++dy) {
                    const int sy = i * s - p + dy;
                    if (sy < 0 || sy >= xh) continue;
                    const float* xrow = xc + static_cast<std::size_t>(sy) * xw;
                    for (int dx = 0; dx < k; ++dx) {
                        const int off = dx - p;
                        if (off > xw - 1) continue;
                        const double coef = wc[dy * k + dx];
                        int j_lo = 0;
                        if (off < 0) j_lo = (-off + s - 1) / s;
                        int j_hi = (xw - 1 - off) / s + 1;
                        if (j_hi > ow) j_hi = ow;
                        for (int j = j_lo; j < j_hi; ++j) acc[j] += coef * xrow[j * s + off];
                    }
                }
                for (int j = 0; j < ow; ++j)
                    yb[static_cast<std::size_t>(i) * ow + j] = static_cast<float>(acc[j]);
            }
        });
    }
    return y;
}

// Per-site affine map along the channel axis. Weight layout (out, in, 1, 1).
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    detail::check_axis("linear", "input channels", x.c(), w.c());
    detail::check_axis("linear", "bias length", b.c(), w.n());
    const int co = w.n(), ci = w.c();
    Tensor y(x.n(), co, x.h(), x.w());
    const std::size_t sites = static_cast<std::size_t>(x.h()) * x.w();
    for (int n = 0; n < x.n(); ++n) {
        const float* xb = x.data() + static_cast<std::size_t>(n) * ci * sites;
        parallel_for(static_cast<std::size_t>(co), [&](std::size_t oc) {
            const int o = static_cast<int>(oc);
            const float* wr = w.data() + static_cast<std::size_t>(o) * ci;
            std::vector<double> acc(sites, static_cast<double>(b.at(0, o, 0, 0)));
            for (int c = 0; c < ci; ++c) {
                const double coef = wr[c];
                const float* xc = xb + static_cast<std::size_t>(c) * sites;
                for (std::size_t site = 0; site < sites; ++site) acc[site] += coef * xc[site];
            }
            float* yo = y.data() + (static_cast<std::size_t>(n) * co + o) * sites;
            for (std::size_t site = 0; site < sites; ++site)
                yo[site] = static_cast<float>(acc[site]);
        });
    }
    return y;
}

// Normalizes across channels at every spatial site: (x - mean) / sqrt(var + eps),
// then per-channel gain/bias. Population variance, double accumulation.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         float eps = 1e-6f) {
    detail::check_axis("layer_norm", "gain length", gain.c(), x.c());
    detail::check_axis("layer_norm", "bias length", bias.c(), x.c());
    const int C = x.c();
    Tensor y(x.n(), C, x.h(), x.w());
    const std::size_t sites = static_cast<std::size_t>(x.h()) * x.w();
    for (int n = 0; n < x.n(); ++n) {
        const float* xb = x.data() + x.idx(n, 0, 0, 0);
        float* yb = y.data() + y.idx(n, 0, 0, 0);
        parallel_for_range(sites, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t site = lo; site < hi; ++site) {
                double mean = 0.0;
                for (int c = 0; c < C; ++c)
                    mean += xb[static_cast<std::size_t>(c) * sites + site];
                mean /= C;
                double var = 0.0;
                for (int c = 0; c < C; ++c) {
                    const double d = xb[static_cast<std::size_t>(c) * sites + site] - mean;
                    var += d * d;
                }
                var /= C;
                const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
                for (int c = 0; c < C; ++c) {
                    const std::size_t i = static_cast<std::size_t>(c) * sites + site;
                    yb[i] = static_cast<float>((xb[i] - mean) * inv * gain.at(0, c, 0, 0) +
                                               bias.at(0, c, 0, 0));
                }
            }
        });
    }
    return y;
}

enum class Act { silu, gelu, softplus, exp };

inline float apply_act(float v, Act kind) {
    switch (kind) {
        case Act::silu:
            return v / (1.0f + std::exp(-v));
        case Act::gelu:
            return 0.5f * v * (1.0f + std::erf(v * 0.70710678f));
        case Act::softplus:
            return v > 20.0f ? v : std::log1p(std::exp(v));
        case Act::exp:
            return std::exp(v);
    }
    return v;
}

inline Tensor activation(const Tensor& x, Act kind) {
    Tensor y = x;
    float* d = y.data();
    parallel_for_range(y.numel(), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) d[i] = apply_act(d[i], kind);
    });
    return y;
}

// Softmax along one axis, max-subtracted for stability.
inline Tensor softmax(const Tensor& x, int axis) {
    if (axis < 0 || axis > 3) throw ShapeError("softmax: axis out of range");
    const auto& sh = x.shape();
    const int len = sh[axis];
    Tensor y(sh[0], sh[1], sh[2], sh[3]);
    // stride of the softmax axis and iteration over all complementary indices
    std::array<std::size_t, 4> strides{};
    strides[3] = 1;
    for (int a = 2; a >= 0; --a) strides[a] = strides[a + 1] * sh[a + 1];
    std::array<int, 3> rest{};
    int r = 0;
    for (int a = 0; a < 4; ++a)
        if (a != axis) rest[r++] = a;
    for (int i0 = 0; i0 < sh[rest[0]]; ++i0) {
        for (int i1 = 0; i1 < sh[rest[1]]; ++i1) {
            for (int i2 = 0; i2 < sh[rest[2]]; ++i2) {
                const std::size_t base = strides[rest[0]] * i0 + strides[rest[1]] * i1 +
                                         strides[rest[2]] * i2;
                float mx = -std::numeric_limits<float>::infinity();
                for (int t = 0; t < len; ++t)
                    mx = std::max(mx, x[base + strides[axis] * t]);
                double sum = 0.0;
                for (int t = 0; t < len; ++t)
                    sum += std::exp(static_cast<double>(x[base + strides[axis] * t]) - mx);
                for (int t = 0; t < len; ++t)
                    y[base + strides[axis] * t] = static_cast<float>(
                        std::exp(static_cast<double>(x[base + strides[axis] * t]) - mx) / sum);
            }
        }
    }
    return y;
}

}  // namespace mbic
