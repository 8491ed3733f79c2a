#pragma once

// Test-only reference implementations, kept independent of the library code
// paths they check: double precision, explicit padded buffers, textbook loop
// structure, libm transcendentals.

#include <cmath>
#include <cstdint>
#include <vector>

#include "mbic/rng.hpp"
#include "mbic/ssm.hpp"
#include "mbic/tensor.hpp"

namespace oracle {

inline mbic::Tensor random_tensor(mbic::Rng& rng, int n, int c, int h, int w, float lo = -1.0f,
                                  float hi = 1.0f) {
    mbic::Tensor t(n, c, h, w);
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// --- dense conv reference: explicit zero-padded copy, then direct correlation
inline mbic::Tensor conv2d_ref(const mbic::Tensor& x, const mbic::Tensor& w,
                               const mbic::Tensor& b, int k, int stride, int pad) {
    const int ph = x.h() + 2 * pad, pw = x.w() + 2 * pad;
    std::vector<double> padded(static_cast<std::size_t>(x.n()) * x.c() * ph * pw, 0.0);
    const auto pidx = [&](int n, int c, int i, int j) {
        return ((static_cast<std::size_t>(n) * x.c() + c) * ph + i) * pw + j;
    };
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c)
            for (int i = 0; i < x.h(); ++i)
                for (int j = 0; j < x.w(); ++j)
                    padded[pidx(n, c, i + pad, j + pad)] = x.at(n, c, i, j);
    const int oh = (ph - k) / stride + 1, ow = (pw - k) / stride + 1;
    mbic::Tensor y(x.n(), w.n(), oh, ow);
    for (int n = 0; n < x.n(); ++n)
        for (int o = 0; o < w.n(); ++o)
            for (int i = 0; i < oh; ++i)
                for (int j = 0; j < ow; ++j) {
                    double acc = b.at(0, o, 0, 0);
                    for (int c = 0; c < x.c(); ++c)
                        for (int dy = 0; dy < k; ++dy)
                            for (int dx = 0; dx < k; ++dx)
                                acc += static_cast<double>(w.at(o, c, dy, dx)) *
                                       padded[pidx(n, c, i * stride + dy, j * stride + dx)];
                    y.at(n, o, i, j) = static_cast<float>(acc);
                }
    return y;
}

// --- grouped direct convolution with group count == channels
inline mbic::Tensor depthwise_ref(const mbic::Tensor& x, const mbic::Tensor& w, int k, int stride,
                                  int pad) {
    const int oh = (x.h() + 2 * pad - k) / stride + 1;
    const int ow = (x.w() + 2 * pad - k) / stride + 1;
    mbic::Tensor y(x.n(), x.c(), oh, ow);
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c)
            for (int i = 0; i < oh; ++i)
                for (int j = 0; j < ow; ++j) {
                    double acc = 0.0;
                    for (int dy = 0; dy < k; ++dy)
                        for (int dx = 0; dx < k; ++dx) {
                            const int si = i * stride - pad + dy, sj = j * stride - pad + dx;
                            if (si < 0 || si >= x.h() || sj < 0 || sj >= x.w()) continue;
                            acc += static_cast<double>(w.at(c, 0, dy, dx)) * x.at(n, c, si, sj);
                        }
                    y.at(n, c, i, j) = static_cast<float>(acc);
                }
    return y;
}

// --- scatter-form transposed convolution (impl gathers; this scatters)
inline mbic::Tensor conv_transpose_ref(const mbic::Tensor& x, const mbic::Tensor& w,
                                       const mbic::Tensor& b, int k, int stride, int pad,
                                       int out_pad) {
    const int oh = (x.h() - 1) * stride - 2 * pad + k + out_pad;
    const int ow = (x.w() - 1) * stride - 2 * pad + k + out_pad;
    std::vector<double> acc(static_cast<std::size_t>(x.n()) * w.c() * oh * ow, 0.0);
    const auto oidx = [&](int n, int o, int i, int j) {
        return ((static_cast<std::size_t>(n) * w.c() + o) * oh + i) * ow + j;
    };
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c)
            for (int i = 0; i < x.h(); ++i)
                for (int j = 0; j < x.w(); ++j)
                    for (int o = 0; o < w.c(); ++o)
                        for (int dy = 0; dy < k; ++dy)
                            for (int dx = 0; dx < k; ++dx) {
                                const int ti = i * stride - pad + dy, tj = j * stride - pad + dx;
                                if (ti < 0 || ti >= oh || tj < 0 || tj >= ow) continue;
                                acc[oidx(n, o, ti, tj)] +=
                                    static_cast<double>(w.at(c, o, dy, dx)) * x.at(n, c, i, j);
                            }
    mbic::Tensor y(x.n(), w.c(), oh, ow);
    for (int n = 0; n < x.n(); ++n)
        for (int o = 0; o < w.c(); ++o)
            for (int i = 0; i < oh; ++i)
                for (int j = 0; j < ow; ++j)
                    y.at(n, o, i, j) = static_cast<float>(acc[oidx(n, o, i, j)] + b.at(0, o, 0, 0));
    return y;
}

// --- classic 4th-order Runge-Kutta for h' = a h + b u with constant input u
// over one step of size delta; initial state h0. Returns h(delta).
inline double rk4_zoh(double a, double b, double u, double h0, double delta, int steps = 1024) {
    const double dt = delta / steps;
    double h = h0;
    const auto f = [&](double state) { return a * state + b * u; };
    for (int s = 0; s < steps; ++s) {
        const double k1 = f(h);
        const double k2 = f(h + 0.5 * dt * k1);
        const double k3 = f(h + 0.5 * dt * k2);
        const double k4 = f(h + dt * k3);
        h += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return h;
}

// --- step-by-step recurrence in double precision; selection math restated
// from the definitions rather than shared with the implementation.
inline std::vector<double> scan_recurrence_ref(const std::vector<double>& x, int tokens,
                                               const mbic::SsmParamsT<double>& p) {
    const int C = p.channels, NS = p.state_dim;
    std::vector<double> y(x.size(), 0.0);
    std::vector<double> h(static_cast<std::size_t>(C) * NS, 0.0);
    for (int t = 0; t < tokens; ++t) {
        const double* xt = x.data() + static_cast<std::size_t>(t) * C;
        std::vector<double> bt(NS, 0.0), ct(NS, 0.0);
        for (int n = 0; n < NS; ++n)
            for (int c = 0; c < C; ++c) {
                bt[n] += p.b_proj[static_cast<std::size_t>(n) * C + c] * xt[c];
                ct[n] += p.c_proj[static_cast<std::size_t>(n) * C + c] * xt[c];
            }
        double s = 0.0;
        for (int c = 0; c < C; ++c) s += p.dt_proj[c] * xt[c];
        for (int c = 0; c < C; ++c) {
            const double z = p.dt_scale[c] * s + p.dt_bias[c];
            const double dt = z > 20.0 ? z : std::log1p(std::exp(z));
            double out = p.d_skip[c] * xt[c];
            for (int n = 0; n < NS; ++n) {
                const double a = p.a[static_cast<std::size_t>(c) * NS + n];
                const double v = dt * a;
                const double a_bar = std::exp(v);
                const double g = std::fabs(v) < 1e-6
                                     ? 1.0 + v / 2.0 + v * v / 6.0
                                     : (std::exp(v) - 1.0) / v;
                const double b_bar = g * dt * bt[n];
                double& hn = h[static_cast<std::size_t>(c) * NS + n];
                hn = a_bar * hn + b_bar * xt[c];
                out += ct[n] * hn;
            }
            y[static_cast<std::size_t>(t) * C + c] = out;
        }
    }
    return y;
}

inline mbic::SsmParamsT<double> random_ssm_params(mbic::Rng& rng, int channels, int state_dim) {
    mbic::SsmParamsT<double> p;
    p.channels = channels;
    p.state_dim = state_dim;
    const std::size_t cn = static_cast<std::size_t>(channels) * state_dim;
    const auto fill = [&](std::vector<double>& v, std::size_t n, double lo, double hi) {
        v.resize(n);
        for (auto& e : v) e = rng.uniform(static_cast<float>(lo), static_cast<float>(hi));
    };
    fill(p.a, cn, -2.0, -0.05);
    fill(p.b_proj, cn, -0.7, 0.7);
    fill(p.c_proj, cn, -0.7, 0.7);
    fill(p.dt_proj, channels, -0.5, 0.5);
    fill(p.dt_scale, channels, -0.5, 0.5);
    fill(p.dt_bias, channels, -2.0, 0.5);
    fill(p.d_skip, channels, -1.0, 1.0);
    return p;
}

inline mbic::SsmParamsT<float> to_float_params(const mbic::SsmParamsT<double>& p) {
    mbic::SsmParamsT<float> f;
    f.channels = p.channels;
    f.state_dim = p.state_dim;
    const auto conv = [](const std::vector<double>& src, std::vector<float>& dst) {
        dst.assign(src.begin(), src.end());
    };
    conv(p.a, f.a);
    conv(p.b_proj, f.b_proj);
    conv(p.c_proj, f.c_proj);
    conv(p.dt_proj, f.dt_proj);
    conv(p.dt_scale, f.dt_scale);
    conv(p.dt_bias, f.dt_bias);
    conv(p.d_skip, f.d_skip);
    return f;
}

// --- full (unwindowed) multi-head attention over a token list
// q/k/v/o weights as (C, C, 1, 1) tensors, biases (1, C, 1, 1)
inline std::vector<double> full_attention_ref(const std::vector<double>& tokens_in, int tokens,
                                              int channels, int heads, const mbic::Tensor& wq,
                                              const mbic::Tensor& bq, const mbic::Tensor& wk,
                                              const mbic::Tensor& bk, const mbic::Tensor& wv,
                                              const mbic::Tensor& bv, const mbic::Tensor& wo,
                                              const mbic::Tensor& bo) {
    const int d = channels / heads;
    const auto project = [&](const mbic::Tensor& w, const mbic::Tensor& b) {
        std::vector<double> out(static_cast<std::size_t>(tokens) * channels, 0.0);
        for (int t = 0; t < tokens; ++t)
            for (int o = 0; o < channels; ++o) {
                double acc = b.at(0, o, 0, 0);
                for (int c = 0; c < channels; ++c)
                    acc += static_cast<double>(w.at(o, c, 0, 0)) *
                           tokens_in[static_cast<std::size_t>(t) * channels + c];
                out[static_cast<std::size_t>(t) * channels + o] = acc;
            }
        return out;
    };
    const auto q = project(wq, bq), k = project(wk, bk), v = project(wv, bv);
    std::vector<double> att(static_cast<std::size_t>(tokens) * channels, 0.0);
    for (int h = 0; h < heads; ++h) {
        const int off = h * d;
        for (int t = 0; t < tokens; ++t) {
            std::vector<double> logits(tokens, 0.0);
            double mx = -1e300;
            for (int u = 0; u < tokens; ++u) {
                double dot = 0.0;
                for (int e = 0; e < d; ++e)
                    dot += q[static_cast<std::size_t>(t) * channels + off + e] *
                           k[static_cast<std::size_t>(u) * channels + off + e];
                logits[u] = dot / std::sqrt(static_cast<double>(d));
                mx = std::max(mx, logits[u]);
            }
            double sum = 0.0;
            for (int u = 0; u < tokens; ++u) {
                logits[u] = std::exp(logits[u] - mx);
                sum += logits[u];
            }
            for (int e = 0; e < d; ++e) {
                double acc = 0.0;
                for (int u = 0; u < tokens; ++u)
                    acc += logits[u] * v[static_cast<std::size_t>(u) * channels + off + e];
                att[static_cast<std::size_t>(t) * channels + off + e] = acc / sum;
            }
        }
    }
    std::vector<double> out(att.size(), 0.0);
    for (int t = 0; t < tokens; ++t)
        for (int o = 0; o < channels; ++o) {
            double acc = bo.at(0, o, 0, 0);
            for (int c = 0; c < channels; ++c)
                acc += static_cast<double>(wo.at(o, c, 0, 0)) *
                       att[static_cast<std::size_t>(t) * channels + c];
            out[static_cast<std::size_t>(t) * channels + o] = acc;
        }
    return out;
}

inline double rel_err(double got, double want, double guard = 1e-8) {
    const double denom = std::max({std::fabs(got), std::fabs(want), guard});
    return std::fabs(got - want) / denom;
}

}  // namespace oracle
