#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mbic/errors.hpp"
#include "mbic/tensor.hpp"

namespace mbic {

// ---------------------------------------------------------------------------
// PSNR
// ---------------------------------------------------------------------------

inline double mse(const Tensor& x, const Tensor& y) {
    if (!x.same_shape(y)) throw ShapeError("mse: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double d = static_cast<double>(x[i]) - y[i];
        acc += d * d;
    }
    return acc / static_cast<double>(x.numel());
}

// 10 log10(peak^2 / MSE), capped at 100 dB for identical images.
inline double psnr(const Tensor& x, const Tensor& y, double peak = 1.0) {
    const double m = mse(x, y);
    if (m <= 0.0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(peak * peak / m));
}

// ---------------------------------------------------------------------------
// MS-SSIM: 5 scales, 11x11 Gaussian window (sigma 1.5), 2x average-pool
// between scales, weighted geometric combination. Images smaller than the
// 5-scale minimum get fewer scales with renormalized weights.
// ---------------------------------------------------------------------------

namespace detail {

inline const std::array<double, 11>& ssim_window() {
    static const std::array<double, 11> w = [] {
        std::array<double, 11> g{};
        double sum = 0.0;
        for (int i = 0; i < 11; ++i) {
            const double d = i - 5.0;
            g[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
            sum += g[i];
        }
        for (auto& v : g) v /= sum;
        return g;
    }();
    return w;
}

struct SsimTerms {
    double luminance;  // mean of l * cs over windows (used at the last scale)
    double cs;         // mean of cs over windows
};

// Valid-region SSIM terms for one channel pair.
inline SsimTerms ssim_channel(const std::vector<double>& x, const std::vector<double>& y, int h,
                              int w) {
    constexpr double kC1 = 0.01 * 0.01;  // (K1 * peak)^2, peak = 1
    constexpr double kC2 = 0.03 * 0.03;
    const auto& win = ssim_window();
    const int oh = h - 10, ow = w - 10;

    // separable Gaussian filtering of x, y, x^2, y^2, xy
    const auto blur = [&](const std::vector<double>& src) {
        std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < ow; ++j) {
                double acc = 0.0;
                for (int t = 0; t < 11; ++t) acc += win[t] * src[static_cast<std::size_t>(i) * w + j + t];
                tmp[static_cast<std::size_t>(i) * ow + j] = acc;
            }
        std::vector<double> out(static_cast<std::size_t>(oh) * ow);
        for (int i = 0; i < oh; ++i)
            for (int j = 0; j < ow; ++j) {
                double acc = 0.0;
                for (int t = 0; t < 11; ++t) acc += win[t] * tmp[(static_cast<std::size_t>(i) + t) * ow + j];
                out[static_cast<std::size_t>(i) * ow + j] = acc;
            }
        return out;
    };

    std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const auto mx = blur(x), my = blur(y), mxx = blur(xx), myy = blur(yy), mxy = blur(xy);

    double lum_sum = 0.0, cs_sum = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
        const double vx = mxx[i] - mx[i] * mx[i];
        const double vy = myy[i] - my[i] * my[i];
        const double cov = mxy[i] - mx[i] * my[i];
        const double l = (2.0 * mx[i] * my[i] + kC1) / (mx[i] * mx[i] + my[i] * my[i] + kC1);
        const double cs = (2.0 * cov + kC2) / (vx + vy + kC2);
        lum_sum += l * cs;
        cs_sum += cs;
    }
    return SsimTerms{lum_sum / static_cast<double>(mx.size()),
                     cs_sum / static_cast<double>(mx.size())};
}

inline void downsample2(std::vector<double>& img, int& h, int& w) {
    const int nh = h / 2, nw = w / 2;
    std::vector<double> out(static_cast<std::size_t>(nh) * nw);
    for (int i = 0; i < nh; ++i)
        for (int j = 0; j < nw; ++j)
            out[static_cast<std::size_t>(i) * nw + j] =
                0.25 * (img[static_cast<std::size_t>(2 * i) * w + 2 * j] +
                        img[static_cast<std::size_t>(2 * i) * w + 2 * j + 1] +
                        img[static_cast<std::size_t>(2 * i + 1) * w + 2 * j] +
                        img[static_cast<std::size_t>(2 * i + 1) * w + 2 * j + 1]);
    img = std::move(out);
    h = nh;
    w = nw;
}

}  // namespace detail

struct MsSsimResult {
    double value;
    int scales_used;
};

inline MsSsimResult ms_ssim_detailed(const Tensor& x, const Tensor& y) {
    if (!x.same_shape(y)) throw ShapeError("ms_ssim: shape mismatch");
    static const std::array<double, 5> kWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

    // a scale needs >= 11 px after its downsamplings
    int scales = 5;
    const int min_ext = std::min(x.h(), x.w());
    while (scales > 1 && (min_ext >> (scales - 1)) < 11) --scales;

    double weight_sum = 0.0;
    for (int s = 0; s < scales; ++s) weight_sum += kWeights[s];

    double value = 1.0;
    for (int c = 0; c < x.c(); ++c) {
        int h = x.h(), w = x.w();
        std::vector<double> xc(static_cast<std::size_t>(h) * w), yc(xc.size());
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                xc[static_cast<std::size_t>(i) * w + j] = x.at(0, c, i, j);
                yc[static_cast<std::size_t>(i) * w + j] = y.at(0, c, i, j);
            }
        double channel_val = 1.0;
        for (int s = 0; s < scales; ++s) {
            const auto terms = detail::ssim_channel(xc, yc, h, w);
            const double wgt = kWeights[s] / weight_sum;
            if (s == scales - 1) {
                channel_val *= std::pow(std::max(terms.luminance, 0.0), wgt);
            } else {
                channel_val *= std::pow(std::max(terms.cs, 0.0), wgt);
                detail::downsample2(xc, h, w);
                detail::downsample2(yc, h, w);
            }
        }
        value *= channel_val;
    }
    return MsSsimResult{std::pow(value, 1.0 / x.c()), scales};
}

inline double ms_ssim(const Tensor& x, const Tensor& y) { return ms_ssim_detailed(x, y).value; }

// ---------------------------------------------------------------------------
// bpp and BD-rate
// ---------------------------------------------------------------------------

inline double bpp(std::size_t total_bits, int width, int height) {
    if (width <= 0 || height <= 0) throw ShapeError("bpp: zero image dims");
    return static_cast<double>(total_bits) / (static_cast<double>(width) * height);
}

struct RdPoint {
    std::string label;
    double bpp = 0.0;
    double psnr_db = 0.0;
    double ms_ssim = 0.0;
};

using RdCurve = std::vector<RdPoint>;

namespace detail {

// least-squares cubic fit, Gaussian elimination on the 4x4 normal equations
inline std::array<double, 4> cubic_fit(const std::vector<double>& xs,
                                       const std::vector<double>& ys) {
    double a[4][5] = {};
    for (std::size_t i = 0; i < xs.size(); ++i) {
        double px[7] = {1, 0, 0, 0, 0, 0, 0};
        for (int p = 1; p < 7; ++p) px[p] = px[p - 1] * xs[i];
        for (int r = 0; r < 4; ++r) {
            for (int c = 0; c < 4; ++c) a[r][c] += px[r + c];
            a[r][4] += px[r] * ys[i];
        }
    }
    for (int col = 0; col < 4; ++col) {
        int pivot = col;
        for (int r = col + 1; r < 4; ++r)
            if (std::fabs(a[r][col]) > std::fabs(a[pivot][col])) pivot = r;
        for (int c = 0; c < 5; ++c) std::swap(a[col][c], a[pivot][c]);
        if (std::fabs(a[col][col]) < 1e-12) throw ShapeError("bd_rate: degenerate fit");
        for (int r = 0; r < 4; ++r) {
            if (r == col) continue;
            const double factor = a[r][col] / a[col][col];
            for (int c = 0; c < 5; ++c) a[r][c] -= factor * a[col][c];
        }
    }
    return {a[0][4] / a[0][0], a[1][4] / a[1][1], a[2][4] / a[2][2], a[3][4] / a[3][3]};
}

inline double cubic_integral(const std::array<double, 4>& c, double lo, double hi) {
    const auto eval = [&](double v) {
        return c[0] * v + c[1] * v * v / 2 + c[2] * v * v * v / 3 + c[3] * v * v * v * v / 4;
    };
    return eval(hi) - eval(lo);
}

}  // namespace detail

// Bjontegaard delta-rate: cubic fit of ln(bpp) against PSNR per curve,
// averaged gap over the overlapping PSNR interval, as a percent rate change
// (negative means the test curve needs fewer bits).
inline double bd_rate(const RdCurve& anchor, const RdCurve& test) {
    if (anchor.size() < 4 || test.size() < 4)
        throw ShapeError("bd_rate: need at least 4 points per curve");
    std::vector<double> ax, ay, tx, ty;
    for (const auto& p : anchor) {
        ax.push_back(p.psnr_db);
        ay.push_back(std::log(p.bpp));
    }
    for (const auto& p : test) {
        tx.push_back(p.psnr_db);
        ty.push_back(std::log(p.bpp));
    }
    const double lo = std::max(*std::min_element(ax.begin(), ax.end()),
                               *std::min_element(tx.begin(), tx.end()));
    const double hi = std::min(*std::max_element(ax.begin(), ax.end()),
                               *std::max_element(tx.begin(), tx.end()));
    if (!(hi > lo)) throw ShapeError("bd_rate: PSNR ranges do not overlap");

    const auto fa = detail::cubic_fit(ax, ay);
    const auto ft = detail::cubic_fit(tx, ty);
    const double avg_diff =
        (detail::cubic_integral(ft, lo, hi) - detail::cubic_integral(fa, lo, hi)) / (hi - lo);
    return (std::exp(avg_diff) - 1.0) * 100.0;
}

// ---------------------------------------------------------------------------
// RD curve CSV: "label,bpp,psnr_db,ms_ssim" per row.
// ---------------------------------------------------------------------------

inline std::string rd_point_line(const RdPoint& p) {
    std::ostringstream os;
    os << p.label << "," << p.bpp << "," << p.psnr_db << "," << p.ms_ssim;
    return os.str();
}

inline RdPoint parse_rd_point(const std::string& line) {
    std::istringstream is(line);
    RdPoint p;
    std::string field;
    if (!std::getline(is, p.label, ',')) throw IoError("rd curve: bad row: " + line);
    const auto num = [&](double& out) {
        if (!std::getline(is, field, ',')) throw IoError("rd curve: bad row: " + line);
        out = std::stod(field);
    };
    num(p.bpp);
    num(p.psnr_db);
    num(p.ms_ssim);
    return p;
}

inline void write_rd_curve(const RdCurve& curve, std::ostream& os) {
    for (const auto& p : curve) os << rd_point_line(p) << "\n";
}

inline RdCurve read_rd_curve(std::istream& is) {
    RdCurve curve;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        curve.push_back(parse_rd_point(line));
    }
    return curve;
}

}  // namespace mbic
