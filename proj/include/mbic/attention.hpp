#pragma once

#include <cmath>
#include <vector>

#include "mbic/errors.hpp"
#include "mbic/parallel.hpp"
#include "mbic/tensor.hpp"

namespace mbic {

struct WindowConfig {
    int window = 8;
    int heads = 8;
    int head_dim = 0;  // heads * head_dim must equal the attended channel width

    void validate(int channels) const {
        if (window < 1) throw ShapeError("WindowConfig: window must be >= 1");
        if (heads < 1 || head_dim < 1 || heads * head_dim != channels)
            throw ShapeError("WindowConfig: heads * head_dim != channels");
    }
};

// (1, C, H, W) -> (N_w, C, w, w): pure rearrangement into non-overlapping
// windows, row-major over window tiles.
inline Tensor window_partition(const Tensor& x, int w) {
    if (x.n() != 1) throw ShapeError("window_partition: batch extent must be 1");
    if (w < 1 || x.h() % w != 0 || x.w() % w != 0)
        throw ShapeError("window_partition: extents " + x.shape_str() +
                         " not divisible by window " + std::to_string(w));
    const int th = x.h() / w, tw = x.w() / w;
    Tensor out(th * tw, x.c(), w, w);
    for (int ti = 0; ti < th; ++ti)
        for (int tj = 0; tj < tw; ++tj)
            for (int c = 0; c < x.c(); ++c)
                for (int i = 0; i < w; ++i)
                    for (int j = 0; j < w; ++j)
                        out.at(ti * tw + tj, c, i, j) = x.at(0, c, ti * w + i, tj * w + j);
    return out;
}

inline Tensor window_reverse(const Tensor& windows, int w, int h_full, int w_full) {
    if (h_full % w != 0 || w_full % w != 0)
        throw ShapeError("window_reverse: full extents not divisible by window");
    const int th = h_full / w, tw = w_full / w;
    if (windows.n() != th * tw || windows.h() != w || windows.w() != w)
        throw ShapeError("window_reverse: window batch " + windows.shape_str() +
                         " does not tile " + std::to_string(h_full) + "x" + std::to_string(w_full));
    Tensor out(1, windows.c(), h_full, w_full);
    for (int ti = 0; ti < th; ++ti)
        for (int tj = 0; tj < tw; ++tj)
            for (int c = 0; c < windows.c(); ++c)
                for (int i = 0; i < w; ++i)
                    for (int j = 0; j < w; ++j)
                        out.at(0, c, ti * w + i, tj * w + j) = windows.at(ti * tw + tj, c, i, j);
    return out;
}

struct AttentionWeights {
    Tensor wq, bq;  // (C, C, 1, 1), (1, C, 1, 1)
    Tensor wk, bk;
    Tensor wv, bv;
    Tensor wo, bo;
};

// Scaled dot-product attention inside each window, per head; tokens never see
// other windows. scale = 1/sqrt(head_dim).
inline Tensor local_attention(const Tensor& windows, const AttentionWeights& w,
                              const WindowConfig& cfg) {
    const int C = windows.c();
    cfg.validate(C);
    const int win = windows.h();
    if (windows.w() != win) throw ShapeError("local_attention: windows must be square");
    const int tokens = win * win;
    const int H = cfg.heads, D = cfg.head_dim;
    const double scale = 1.0 / std::sqrt(static_cast<double>(D));

    Tensor out(windows.n(), C, win, win);
    parallel_for(static_cast<std::size_t>(windows.n()), [&](std::size_t nw) {
        const int n = static_cast<int>(nw);
        // contiguous (tokens, C) copy of the window, then projections
        std::vector<float> tok(static_cast<std::size_t>(tokens) * C);
        for (int c = 0; c < C; ++c)
            for (int t = 0; t < tokens; ++t)
                tok[static_cast<std::size_t>(t) * C + c] = windows.at(n, c, t / win, t % win);
        std::vector<float> q(tok.size()), k(tok.size()), v(tok.size()), att_out(tok.size());
        const auto project = [&](const Tensor& wm, const Tensor& bm, std::vector<float>& dst) {
            for (int t = 0; t < tokens; ++t) {
                const float* tr = tok.data() + static_cast<std::size_t>(t) * C;
                for (int o = 0; o < C; ++o) {
                    const float* wr = wm.data() + static_cast<std::size_t>(o) * C;
                    double acc = bm.at(0, o, 0, 0);
                    for (int c = 0; c < C; ++c) acc += static_cast<double>(wr[c]) * tr[c];
                    dst[static_cast<std::size_t>(t) * C + o] = static_cast<float>(acc);
                }
            }
        };
        project(w.wq, w.bq, q);
        project(w.wk, w.bk, k);
        project(w.wv, w.bv, v);
        std::vector<double> logits(tokens), weights(tokens);
        for (int h = 0; h < H; ++h) {
            const int off = h * D;
            for (int t = 0; t < tokens; ++t) {
                double mx = -1e300;
                for (int u = 0; u < tokens; ++u) {
                    double dot = 0.0;
                    for (int d = 0; d < D; ++d)
                        dot += static_cast<double>(q[static_cast<std::size_t>(t) * C + off + d]) *
                               k[static_cast<std::size_t>(u) * C + off + d];
                    logits[u] = dot * scale;
                    if (logits[u] > mx) mx = logits[u];
                }
                double sum = 0.0;
                for (int u = 0; u < tokens; ++u) {
                    weights[u] = std::exp(logits[u] - mx);
                    sum += weights[u];
                }
                for (int d = 0; d < D; ++d) {
                    double acc = 0.0;
                    for (int u = 0; u < tokens; ++u)
                        acc += weights[u] * v[static_cast<std::size_t>(u) * C + off + d];
                    att_out[static_cast<std::size_t>(t) * C + off + d] =
                        static_cast<float>(acc / sum);
                }
            }
        }
        // output projection
        for (int t = 0; t < tokens; ++t) {
            const int ti = t / win, tj = t % win;
            const float* ar = att_out.data() + static_cast<std::size_t>(t) * C;
            for (int o = 0; o < C; ++o) {
                const float* wr = w.wo.data() + static_cast<std::size_t>(o) * C;
                double acc = w.bo.at(0, o, 0, 0);
                for (int c = 0; c < C; ++c) acc += static_cast<double>(wr[c]) * ar[c];
                out.at(n, o, ti, tj) = static_cast<float>(acc);
            }
        }
    });
    return out;
}

// Window-based local attention: partition -> per-window attention -> reverse.
inline Tensor wla(const Tensor& x, const AttentionWeights& w, const WindowConfig& cfg) {
    const Tensor windows = window_partition(x, cfg.window);
    const Tensor attended = local_attention(windows, w, cfg);
    return window_reverse(attended, cfg.window, x.h(), x.w());
}

}  // namespace mbic
