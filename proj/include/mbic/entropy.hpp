#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mbic/attention.hpp"
#include "mbic/errors.hpp"
#include "mbic/tensor.hpp"
#include "mbic/transform.hpp"

namespace mbic {

constexpr double kSigmaMin = 0.11;

// Per-element Gaussian parameters for one chunk (mu, sigma each chunk_width
// channels at latent resolution). sigma is already floored at kSigmaMin.
struct EntropyParams {
    Tensor mu;
    Tensor sigma;
};

// ---------------------------------------------------------------------------
// Quantizer and discretized-Gaussian likelihood.
// ---------------------------------------------------------------------------

// y_hat = round(y - mu) + mu. The residual y_hat - mu is an exact integer.
inline Tensor quantize(const Tensor& y, const Tensor& mu) {
    if (!y.same_shape(mu))
        throw ShapeError("quantize: shape mismatch " + y.shape_str() + " vs " + mu.shape_str());
    Tensor out(y.n(), y.c(), y.h(), y.w());
    for (std::size_t i = 0; i < y.numel(); ++i)
        out[i] = static_cast<float>(std::round(static_cast<double>(y[i]) - mu[i])) + mu[i];
    return out;
}

// P(round(v) = r) for v ~ N(0, sigma^2): the Gaussian convolved with
// U(-0.5, 0.5) evaluated at r. Accepts real-valued r so callers can fold a
// fractional mean shift into the argument.
inline double likelihood(double r, double sigma) {
    if (!(sigma >= kSigmaMin))
        throw ShapeError("likelihood: sigma below floor " + std::to_string(sigma));
    const double inv = 1.0 / (sigma * 1.4142135623730951);
    return 0.5 * (std::erf((r + 0.5) * inv) - std::erf((r - 0.5) * inv));
}

// Standard normal CDF, used for tail masses.
inline double normal_cdf(double v) { return 0.5 * std::erfc(-v * 0.7071067811865476); }

// ---------------------------------------------------------------------------
// Checkerboard split: anchors are sites with even coordinate parity.
// Split/merge use masked tensors of the full grid shape so that masked latents
// feed the spatial context directly.
// ---------------------------------------------------------------------------

inline bool is_anchor(int i, int j) { return ((i + j) & 1) == 0; }

struct CheckerboardPair {
    Tensor anchors;      // non-anchor sites zeroed
    Tensor non_anchors;  // anchor sites zeroed
};

inline CheckerboardPair checkerboard_split(const Tensor& x) {
    CheckerboardPair out{Tensor(x.n(), x.c(), x.h(), x.w()), Tensor(x.n(), x.c(), x.h(), x.w())};
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c)
            for (int i = 0; i < x.h(); ++i)
                for (int j = 0; j < x.w(); ++j) {
                    const float v = x.at(n, c, i, j);
                    if (is_anchor(i, j))
                        out.anchors.at(n, c, i, j) = v;
                    else
                        out.non_anchors.at(n, c, i, j) = v;
                }
    return out;
}

inline Tensor checkerboard_merge(const Tensor& anchors, const Tensor& non_anchors) {
    if (!anchors.same_shape(non_anchors))
        throw ShapeError("checkerboard_merge: shape mismatch");
    Tensor out = anchors;
    for (int n = 0; n < out.n(); ++n)
        for (int c = 0; c < out.c(); ++c)
            for (int i = 0; i < out.h(); ++i)
                for (int j = 0; j < out.w(); ++j)
                    if (!is_anchor(i, j)) out.at(n, c, i, j) = non_anchors.at(n, c, i, j);
    return out;
}

inline int anchor_count(int h, int w) {
    int count = 0;
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            if (is_anchor(i, j)) ++count;
    return count;
}

// ---------------------------------------------------------------------------
// Context models. Channel context Psi_k consumes the already-decoded chunks
// below k; spatial context Phi consumes the anchor-masked current chunk
// (all zeros in the anchor phase). Both are Conv(VSS(.)) with 2*M/K output
// channels at unchanged resolution.
// ---------------------------------------------------------------------------

inline Tensor channel_context(const Tensor& decoded_below, int k, const ModelWeights& w) {
    const ModelConfig& cfg = w.config();
    const int cw = cfg.chunk_width();
    if (k < 1 || k > cfg.chunks) throw ShapeError("channel_context: chunk index out of range");
    if (k == 1) {
        // empty context by definition
        return Tensor(1, 2 * cw, decoded_below.h(), decoded_below.w());
    }
    const int in_c = (k - 1) * cw;
    if (decoded_below.c() != in_c)
        throw ShapeError("channel_context: expected " + std::to_string(in_c) +
                         " context channels, got " + decoded_below.shape_str());
    const std::string p = "psi" + std::to_string(k);
    Tensor t = vss_block(decoded_below, make_vss_weights(w, p + ".vss", in_c));
    return detail::run_conv(w, p + ".conv", t, {in_c, 2 * cw, 3, 1, 1, 0});
}

inline Tensor spatial_context(const Tensor& anchor_masked_chunk, const ModelWeights& w) {
    const ModelConfig& cfg = w.config();
    const int cw = cfg.chunk_width();
    if (anchor_masked_chunk.c() != cw)
        throw ShapeError("spatial_context: expected chunk width " + std::to_string(cw) +
                         ", got " + anchor_masked_chunk.shape_str());
    Tensor t = vss_block(anchor_masked_chunk, make_vss_weights(w, "phi.vss", cw));
    return detail::run_conv(w, "phi.conv", t, {cw, 2 * cw, 3, 1, 1, 0});
}

enum class Phase { anchor, non_anchor };

inline const char* phase_head(Phase p) {
    return p == Phase::anchor ? "head.anchor" : "head.nonanchor";
}

namespace detail {

// WLA over a grid whose extents need not divide the window: zero-pad to the
// next multiple, attend, crop. 64-divisible images give latent grids that are
// only 4-divisible, so the window-8 head pads for odd multiples of 4.
inline Tensor wla_padded(const Tensor& x, const AttentionWeights& aw, const WindowConfig& cfg) {
    const int w = cfg.window;
    const int ph = (x.h() + w - 1) / w * w;
    const int pw = (x.w() + w - 1) / w * w;
    if (ph == x.h() && pw == x.w()) return wla(x, aw, cfg);
    Tensor padded(1, x.c(), ph, pw);
    for (int c = 0; c < x.c(); ++c)
        for (int i = 0; i < x.h(); ++i)
            for (int j = 0; j < x.w(); ++j) padded.at(0, c, i, j) = x.at(0, c, i, j);
    const Tensor out = wla(padded, aw, cfg);
    Tensor cropped(1, x.c(), x.h(), x.w());
    for (int c = 0; c < x.c(); ++c)
        for (int i = 0; i < x.h(); ++i)
            for (int j = 0; j < x.w(); ++j) cropped.at(0, c, i, j) = out.at(0, c, i, j);
    return cropped;
}

}  // namespace detail

// Parameter aggregation + WLA head for one (chunk, phase) step:
// concat(spatial, channel, hyper) -> two 1x1 conv + SiLU -> WLA -> 1x1 proj,
// split into mu and softplus-floored sigma.
inline EntropyParams estimate_params(const Tensor& f_c, const Tensor& f_s, const Tensor& hyper,
                                     Phase phase, const ModelWeights& w) {
    const ModelConfig& cfg = w.config();
    const int cw = cfg.chunk_width();
    const int M = cfg.latent_channels;
    const int agg_in = 2 * cw + 2 * cw + 2 * M;
    if (f_c.c() != 2 * cw || f_s.c() != 2 * cw || hyper.c() != 2 * M)
        throw ShapeError("estimate_params: channel budget mismatch (" + f_s.shape_str() + " + " +
                         f_c.shape_str() + " + " + hyper.shape_str() + ")");
    if (f_c.h() != hyper.h() || f_c.w() != hyper.w() || f_s.h() != hyper.h() ||
        f_s.w() != hyper.w())
        throw ShapeError("estimate_params: spatial extents disagree");

    // concat order: spatial, channel, hyper
    Tensor cat(1, agg_in, hyper.h(), hyper.w());
    std::size_t off = 0;
    for (const Tensor* part : {&f_s, &f_c, &hyper}) {
        std::copy(part->data(), part->data() + part->numel(), cat.data() + off);
        off += part->numel();
    }

    const std::string p = phase_head(phase);
    const int wla_c = ModelConfig::kWlaWidth;
    Tensor t = detail::run_conv(w, p + ".agg1", cat, {agg_in, wla_c, 1, 1, 0, 0});
    t = activation(t, Act::silu);
    t = detail::run_conv(w, p + ".agg2", t, {wla_c, wla_c, 1, 1, 0, 0});
    t = activation(t, Act::silu);

    AttentionWeights aw;
    aw.wq = w.get(p + ".wla.wq.weight", wla_c, wla_c, 1, 1);
    aw.bq = w.get(p + ".wla.wq.bias", 1, wla_c, 1, 1);
    aw.wk = w.get(p + ".wla.wk.weight", wla_c, wla_c, 1, 1);
    aw.bk = w.get(p + ".wla.wk.bias", 1, wla_c, 1, 1);
    aw.wv = w.get(p + ".wla.wv.weight", wla_c, wla_c, 1, 1);
    aw.bv = w.get(p + ".wla.wv.bias", 1, wla_c, 1, 1);
    aw.wo = w.get(p + ".wla.wo.weight", wla_c, wla_c, 1, 1);
    aw.bo = w.get(p + ".wla.wo.bias", 1, wla_c, 1, 1);
    WindowConfig wcfg;
    wcfg.window = cfg.window;
    wcfg.heads = ModelConfig::kHeads;
    wcfg.head_dim = wla_c / ModelConfig::kHeads;
    t = detail::wla_padded(t, aw, wcfg);

    t = detail::run_conv(w, p + ".proj", t, {wla_c, 2 * cw, 1, 1, 0, 0});

    EntropyParams out{Tensor(1, cw, t.h(), t.w()), Tensor(1, cw, t.h(), t.w())};
    for (int c = 0; c < cw; ++c)
        for (int i = 0; i < t.h(); ++i)
            for (int j = 0; j < t.w(); ++j) {
                out.mu.at(0, c, i, j) = t.at(0, c, i, j);
                const float raw = t.at(0, c + cw, i, j);
                out.sigma.at(0, c, i, j) =
                    std::max(apply_act(raw, Act::softplus), static_cast<float>(kSigmaMin));
            }
    return out;
}

// ---------------------------------------------------------------------------
// Rate-distortion objective (evaluation only; no training here).
// ---------------------------------------------------------------------------

struct RdLoss {
    double loss;
    double mse;
    double bpp_y;
    double bpp_z;
    bool lambda_in_table;
};

// loss = lambda * 255^2 * MSE + bpp_y + bpp_z, with bpp = sum(-log2 p)/pixels.
inline RdLoss rd_loss(const Tensor& x, const Tensor& x_hat, const std::vector<double>& y_lik,
                      const std::vector<double>& z_lik, double lambda) {
    if (!x.same_shape(x_hat)) throw ShapeError("rd_loss: image shapes differ");
    const double pixels = static_cast<double>(x.h()) * x.w();
    double se = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double d = static_cast<double>(x[i]) - x_hat[i];
        se += d * d;
    }
    const double mse = se / static_cast<double>(x.numel());
    double bits_y = 0.0, bits_z = 0.0;
    for (double p : y_lik) bits_y -= std::log2(p);
    for (double p : z_lik) bits_z -= std::log2(p);
    RdLoss out{};
    out.mse = mse;
    out.bpp_y = bits_y / pixels;
    out.bpp_z = bits_z / pixels;
    out.loss = lambda * 255.0 * 255.0 * mse + out.bpp_y + out.bpp_z;
    out.lambda_in_table = false;
    for (double v : ModelConfig::kLambdaTable)
        if (v == lambda) out.lambda_in_table = true;
    return out;
}

}  // namespace mbic
