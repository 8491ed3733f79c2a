#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mbic/entropy.hpp"
#include "mbic/errors.hpp"
#include "mbic/tensor.hpp"
#include "mbic/transform.hpp"

namespace mbic {

// ---------------------------------------------------------------------------
// Scale lattice. Entropy parameters are snapped to this lattice before any
// CDF is built so that encoder and decoder construct identical tables from
// identical (mu, sigma) floats.
// ---------------------------------------------------------------------------

struct ScaleLattice {
    static constexpr int kScales = 64;
    static constexpr double kSigmaMax = 16.0;
    static constexpr int kMuSteps = 256;  // mu fraction snapped to 1/256

    static const std::array<double, kScales>& sigmas() {
        static const std::array<double, kScales> table = [] {
            std::array<double, kScales> t{};
            const double lo = std::log(kSigmaMin), hi = std::log(kSigmaMax);
            for (int i = 0; i < kScales; ++i)
                t[i] = std::exp(lo + (hi - lo) * i / (kScales - 1));
            return t;
        }();
        return table;
    }

    static int snap_sigma_index(double sigma) {
        const double lo = std::log(kSigmaMin), hi = std::log(kSigmaMax);
        if (!(sigma > 0.0)) return 0;
        const double step = (hi - lo) / (kScales - 1);
        const int idx = static_cast<int>(std::lround((std::log(sigma) - lo) / step));
        return idx < 0 ? 0 : (idx >= kScales ? kScales - 1 : idx);
    }

    // mu -> (integer part, fraction index in [0, 256)); snapped mu is
    // mu_int + frac/256.
    struct SnappedMu {
        std::int64_t mu_int;
        int frac_idx;
    };
    static SnappedMu snap_mu(double mu) {
        const std::int64_t k = static_cast<std::int64_t>(std::llround(mu * kMuSteps));
        std::int64_t q = k / kMuSteps;
        int rem = static_cast<int>(k - q * kMuSteps);
        if (rem < 0) {
            rem += kMuSteps;
            --q;
        }
        return SnappedMu{q, rem};
    }
};

// ---------------------------------------------------------------------------
// CDF tables. Lattice tables span residual symbols r in [-kRmax, kRmax] plus
// a trailing escape symbol carrying the two tail masses; the raw-byte bypass
// uses a uniform 256-symbol table. Totals are exactly 2^16 and every
// frequency is at least 1, so the cumulative array is strictly increasing.
// ---------------------------------------------------------------------------

constexpr int kRmax = 64;
constexpr int kRegularSymbols = 2 * kRmax + 1;
constexpr int kEscapeSymbol = kRegularSymbols;  // index 129
constexpr int kNumSymbols = kRegularSymbols + 1;
constexpr std::uint32_t kCdfTotal = 1u << 16;

struct CdfTable {
    std::vector<std::uint32_t> cum;  // size = symbol count + 1; front 0, back 2^16

    int symbols() const { return static_cast<int>(cum.size()) - 1; }
    std::uint32_t freq(int sym) const { return cum[sym + 1] - cum[sym]; }

    int find(std::uint32_t value) const {
        int lo = 0, hi = symbols();  // invariant: cum[lo] <= value < cum[hi]
        while (hi - lo > 1) {
            const int mid = (lo + hi) / 2;
            if (cum[mid] <= value)
                lo = mid;
            else
                hi = mid;
        }
        return lo;
    }

    double model_bits(int sym) const {
        return -std::log2(static_cast<double>(freq(sym)) / kCdfTotal);
    }
};

namespace detail {

// Exact integer allocation of 2^16 slots proportional to p, min 1 per symbol.
// frac == 0 gets a structurally symmetric allocation so freq(r) == freq(-r).
inline CdfTable allocate_cdf(const std::vector<double>& p, bool symmetric) {
    const int n = static_cast<int>(p.size());
    std::vector<std::int64_t> f(n);
    for (int i = 0; i < n; ++i) {
        f[i] = std::llround(p[i] * kCdfTotal);
        if (f[i] < 1) f[i] = 1;
    }

    const auto total_of = [&] {
        std::int64_t t = 0;
        for (auto v : f) t += v;
        return t;
    };

    if (symmetric) {
        // mirror the halves exactly, then absorb the remainder in pair units;
        // odd leftovers land on the self-symmetric center symbol
        for (int r = 1; r <= kRmax; ++r) f[kRmax - r] = f[kRmax + r];
        std::int64_t diff = static_cast<std::int64_t>(kCdfTotal) - total_of();
        while (diff >= 2 || diff <= -2) {
            if (diff > 0) {
                int best = 1;
                double best_deficit = -1e300;
                for (int r = 1; r <= kRmax; ++r) {
                    const double d = p[kRmax + r] * kCdfTotal - static_cast<double>(f[kRmax + r]);
                    if (d > best_deficit) {
                        best_deficit = d;
                        best = r;
                    }
                }
                f[kRmax + best] += 1;
                f[kRmax - best] += 1;
                diff -= 2;
            } else {
                int best = -1;
                double best_surplus = -1e300;
                for (int r = 1; r <= kRmax; ++r) {
                    if (f[kRmax + r] <= 1) continue;
                    const double s = static_cast<double>(f[kRmax + r]) - p[kRmax + r] * kCdfTotal;
                    if (s > best_surplus) {
                        best_surplus = s;
                        best = r;
                    }
                }
                if (best < 0) break;  // only center/escape adjustable
                f[kRmax + best] -= 1;
                f[kRmax - best] -= 1;
                diff += 2;
            }
        }
        while (diff != 0) {
            if (diff > 0) {
                f[kRmax] += 1;
                --diff;
            } else if (f[kRmax] > 1) {
                f[kRmax] -= 1;
                ++diff;
            } else if (f[n - 1] > 1) {
                f[n - 1] -= 1;
                ++diff;
            } else {
                break;  // unreachable: minimum total is n << 2^16
            }
        }
    } else {
        std::int64_t diff = static_cast<std::int64_t>(kCdfTotal) - total_of();
        while (diff != 0) {
            if (diff > 0) {
                int best = 0;
                double best_deficit = -1e300;
                for (int i = 0; i < n; ++i) {
                    const double d = p[i] * kCdfTotal - static_cast<double>(f[i]);
                    if (d > best_deficit) {
                        best_deficit = d;
                        best = i;
                    }
                }
                f[best] += 1;
                --diff;
            } else {
                int best = -1;
                double best_surplus = -1e300;
                for (int i = 0; i < n; ++i) {
                    if (f[i] <= 1) continue;
                    const double s = static_cast<double>(f[i]) - p[i] * kCdfTotal;
                    if (s > best_surplus) {
                        best_surplus = s;
                        best = i;
                    }
                }
                if (best < 0) break;
                f[best] -= 1;
                ++diff;
            }
        }
    }

    CdfTable t;
    t.cum.resize(n + 1);
    t.cum[0] = 0;
    for (int i = 0; i < n; ++i)
        t.cum[i + 1] = t.cum[i] + static_cast<std::uint32_t>(f[i]);
    return t;
}

}  // namespace detail

// Coding table for one lattice point: residual symbols follow the discretized
// Gaussian with the snapped fractional mean folded in, escape carries the
// tails.
inline CdfTable build_cdf(int sigma_idx, int frac_idx) {
    const double sigma = ScaleLattice::sigmas()[sigma_idx];
    const double mu_frac = static_cast<double>(frac_idx) / ScaleLattice::kMuSteps;
    std::vector<double> p(kNumSymbols);
    for (int r = -kRmax; r <= kRmax; ++r)
        p[r + kRmax] = likelihood(static_cast<double>(r) - mu_frac, sigma);
    const double inv = 1.0 / sigma;
    p[kEscapeSymbol] = normal_cdf((-kRmax - 0.5 - mu_frac) * inv) +
                       (1.0 - normal_cdf((kRmax + 0.5 - mu_frac) * inv));
    return detail::allocate_cdf(p, frac_idx == 0);
}

// Lazy per-session cache over the 64 x 256 lattice.
class CdfCache {
public:
    const CdfTable& get(int sigma_idx, int frac_idx) {
        const std::size_t key = static_cast<std::size_t>(sigma_idx) * ScaleLattice::kMuSteps +
                                static_cast<std::size_t>(frac_idx);
        if (tables_.empty()) tables_.resize(ScaleLattice::kScales * ScaleLattice::kMuSteps);
        if (!tables_[key])
            tables_[key] = std::make_unique<CdfTable>(build_cdf(sigma_idx, frac_idx));
        return *tables_[key];
    }

private:
    std::vector<std::unique_ptr<CdfTable>> tables_;
};

inline const CdfTable& uniform_byte_cdf() {
    static const CdfTable t = [] {
        CdfTable u;
        u.cum.resize(257);
        for (int i = 0; i <= 256; ++i) u.cum[i] = static_cast<std::uint32_t>(i) * 256;
        return u;
    }();
    return t;
}

// ---------------------------------------------------------------------------
// Carry-less byte-oriented range coder, 32-bit window in 64-bit registers.
// Invariant: low + range <= 2^32 and range >= 1 at all times, so additions
// never carry into emitted bytes. Renormalization emits the top byte once
// every value in [low, low + range) shares it; when the interval straddles a
// 2^24 boundary with range below 2^16, range is truncated to the boundary
// distance (always >= 1), which settles the byte on the next pass.
// ---------------------------------------------------------------------------

namespace detail {

constexpr std::uint64_t kRcTop = 1ull << 24;
constexpr std::uint64_t kRcBot = 1ull << 16;
constexpr std::uint64_t kRcMask = 0xffffffffull;
constexpr std::uint64_t kRcFull = 1ull << 32;

}  // namespace detail

class RangeEncoder {
public:
    void encode(int sym, const CdfTable& cdf) {
        range_ /= kCdfTotal;
        low_ += static_cast<std::uint64_t>(cdf.cum[sym]) * range_;
        range_ *= cdf.freq(sym);
        normalize();
        coded_anything_ = true;
    }

    // Little-endian raw 32-bit value through the uniform byte table.
    void encode_raw32(std::uint32_t v) {
        const auto& u = uniform_byte_cdf();
        for (int i = 0; i < 4; ++i) encode(static_cast<int>((v >> (8 * i)) & 0xff), u);
    }

    std::vector<std::uint8_t> finish() {
        if (!coded_anything_) return {};
        for (int i = 0; i < 4; ++i) {
            out_.push_back(static_cast<std::uint8_t>(low_ >> 24));
            low_ = (low_ << 8) & detail::kRcMask;
        }
        return std::move(out_);
    }

private:
    void normalize() {
        while (true) {
            if (((low_ ^ (low_ + range_ - 1)) & detail::kRcMask) < detail::kRcTop) {
                out_.push_back(static_cast<std::uint8_t>(low_ >> 24));
                low_ = (low_ << 8) & detail::kRcMask;
                range_ <<= 8;
            } else if (range_ < detail::kRcBot) {
                range_ = detail::kRcTop - (low_ & (detail::kRcTop - 1));
            } else {
                break;
            }
        }
    }

    std::uint64_t low_ = 0;
    std::uint64_t range_ = detail::kRcFull;
    std::vector<std::uint8_t> out_;
    bool coded_anything_ = false;
};

class RangeDecoder {
public:
    RangeDecoder(const std::uint8_t* data, std::size_t len) : data_(data), len_(len) {
        for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
    }

    int decode(const CdfTable& cdf) {
        range_ /= kCdfTotal;
        std::uint64_t dv = (code_ - low_) / range_;
        if (dv >= kCdfTotal) dv = kCdfTotal - 1;  // corrupt stream; caught upstream
        const int sym = cdf.find(static_cast<std::uint32_t>(dv));
        low_ += static_cast<std::uint64_t>(cdf.cum[sym]) * range_;
        range_ *= cdf.freq(sym);
        normalize();
        return sym;
    }

    std::uint32_t decode_raw32() {
        const auto& u = uniform_byte_cdf();
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(decode(u)) << (8 * i);
        return v;
    }

private:
    std::uint8_t next_byte() {
        if (pos_ >= len_) throw BitstreamError("range decoder: truncated stream");
        return data_[pos_++];
    }

    void normalize() {
        while (true) {
            if (((low_ ^ (low_ + range_ - 1)) & detail::kRcMask) < detail::kRcTop) {
                code_ = ((code_ << 8) | next_byte()) & detail::kRcMask;
                low_ = (low_ << 8) & detail::kRcMask;
                range_ <<= 8;
            } else if (range_ < detail::kRcBot) {
                range_ = detail::kRcTop - (low_ & (detail::kRcTop - 1));
            } else {
                break;
            }
        }
    }

    const std::uint8_t* data_;
    std::size_t len_;
    std::size_t pos_ = 0;
    std::uint64_t low_ = 0;
    std::uint64_t range_ = detail::kRcFull;
    std::uint64_t code_ = 0;
};

// Whole-sequence wrappers used by tests and the z coder.
inline std::vector<std::uint8_t> rc_encode(const std::vector<int>& symbols,
                                           const std::vector<const CdfTable*>& cdfs) {
    if (symbols.size() != cdfs.size()) throw ShapeError("rc_encode: table count mismatch");
    RangeEncoder enc;
    for (std::size_t i = 0; i < symbols.size(); ++i) enc.encode(symbols[i], *cdfs[i]);
    return enc.finish();
}

inline std::vector<int> rc_decode(const std::vector<std::uint8_t>& bytes,
                                  const std::vector<const CdfTable*>& cdfs) {
    std::vector<int> symbols;
    if (cdfs.empty()) return symbols;
    RangeDecoder dec(bytes.data(), bytes.size());
    symbols.reserve(cdfs.size());
    for (const CdfTable* t : cdfs) symbols.push_back(dec.decode(*t));
    return symbols;
}

// ---------------------------------------------------------------------------
// Bitstream container.
// ---------------------------------------------------------------------------

struct CodedImage {
    static constexpr std::uint16_t kFormatVersion = 1;

    std::uint32_t width = 0;  // original, pre-padding
    std::uint32_t height = 0;
    std::uint8_t lambda_index = 0;
    std::uint64_t weight_checksum = 0;
    std::vector<std::vector<std::uint8_t>> substreams;  // z, then K x {anchor, non-anchor}

    std::size_t total_bytes() const {
        std::size_t n = kHeaderBytes;
        for (const auto& s : substreams) n += 4 + s.size();
        return n;
    }

    // FNV-1a over the concatenated substream payloads; verified at parse time
    // so a tampered body is rejected instead of decoding to garbage.
    std::uint64_t payload_checksum() const {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (const auto& s : substreams) h = detail::fnv1a64(s.data(), s.size(), h);
        return h;
    }

    std::vector<std::uint8_t> serialize() const {
        std::vector<std::uint8_t> out;
        out.reserve(total_bytes());
        out.push_back('M');
        out.push_back('B');
        out.push_back('I');
        out.push_back('C');
        detail::put_u16(out, kFormatVersion);
        detail::put_u32(out, width);
        detail::put_u32(out, height);
        out.push_back(lambda_index);
        detail::put_u64(out, weight_checksum);
        detail::put_u64(out, payload_checksum());
        out.push_back(static_cast<std::uint8_t>(substreams.size()));
        for (const auto& s : substreams) {
            detail::put_u32(out, static_cast<std::uint32_t>(s.size()));
            out.insert(out.end(), s.begin(), s.end());
        }
        return out;
    }

    static CodedImage parse(const std::uint8_t* data, std::size_t len) {
        detail::ByteReader r{data, len, 0};
        if (!r.need(kHeaderBytes)) throw BitstreamError("coded image: truncated header");
        if (data[0] != 'M' || data[1] != 'B' || data[2] != 'I' || data[3] != 'C')
            throw BitstreamError("coded image: bad magic");
        r.pos = 4;
        const std::uint16_t version = r.u16();
        if (version != kFormatVersion)
            throw BitstreamError("coded image: unsupported version " + std::to_string(version));
        CodedImage c;
        c.width = r.u32();
        c.height = r.u32();
        c.lambda_index = data[r.pos++];
        c.weight_checksum = r.u64();
        const std::uint64_t stored_payload_sum = r.u64();
        const int count = data[r.pos++];
        for (int i = 0; i < count; ++i) {
            if (!r.need(4)) throw BitstreamError("coded image: truncated substream table");
            const std::uint32_t n = r.u32();
            if (!r.need(n)) throw BitstreamError("coded image: truncated substream body");
            c.substreams.emplace_back(data + r.pos, data + r.pos + n);
            r.pos += n;
        }
        if (r.pos != len) throw BitstreamError("coded image: trailing bytes");
        if (c.payload_checksum() != stored_payload_sum)
            throw BitstreamError("coded image: payload checksum mismatch");
        return c;
    }

    static CodedImage parse(const std::vector<std::uint8_t>& bytes) {
        return parse(bytes.data(), bytes.size());
    }

private:
    static constexpr std::size_t kHeaderBytes = 4 + 2 + 4 + 4 + 1 + 8 + 8 + 1;
};

// ---------------------------------------------------------------------------
// Hyper-latent prior and coding.
// ---------------------------------------------------------------------------

struct HyperPrior {
    std::vector<double> mu;
    std::vector<double> sigma;  // floored at kSigmaMin

    static HyperPrior from_weights(const ModelWeights& w) {
        const int n = w.config().hyper_channels;
        const Tensor& mu = w.get("zprior.mu", 1, n, 1, 1);
        const Tensor& raw = w.get("zprior.sigma_raw", 1, n, 1, 1);
        HyperPrior p;
        p.mu.resize(n);
        p.sigma.resize(n);
        for (int c = 0; c < n; ++c) {
            p.mu[c] = mu.at(0, c, 0, 0);
            p.sigma[c] = std::max(
                static_cast<double>(apply_act(raw.at(0, c, 0, 0), Act::softplus)), kSigmaMin);
        }
        return p;
    }
};

struct SubstreamStats {
    std::size_t bytes = 0;
    double model_bits = 0.0;
};

namespace detail {

// Quantize-and-code one latent element against its snapped lattice point.
// The returned reconstruction equals round(value - mu_int) + mu_int, which is
// what the decoder will rebuild.
struct SymbolCoder {
    CdfCache& cache;
    double model_bits = 0.0;

    float encode_value(RangeEncoder& enc, float value, double mu, double sigma) {
        const int sigma_idx = ScaleLattice::snap_sigma_index(sigma);
        const auto snapped = ScaleLattice::snap_mu(mu);
        const CdfTable& cdf = cache.get(sigma_idx, snapped.frac_idx);
        double d = static_cast<double>(value) - static_cast<double>(snapped.mu_int);
        if (d > 1073741824.0) d = 1073741824.0;
        if (d < -1073741824.0) d = -1073741824.0;
        const std::int64_t s = std::llround(d);
        if (s >= -kRmax && s <= kRmax) {
            enc.encode(static_cast<int>(s) + kRmax, cdf);
            model_bits += cdf.model_bits(static_cast<int>(s) + kRmax);
        } else {
            enc.encode(kEscapeSymbol, cdf);
            enc.encode_raw32(static_cast<std::uint32_t>(static_cast<std::int32_t>(s)));
            model_bits += cdf.model_bits(kEscapeSymbol) + 32.0;
        }
        return static_cast<float>(s + snapped.mu_int);
    }

    float decode_value(RangeDecoder& dec, double mu, double sigma) {
        const int sigma_idx = ScaleLattice::snap_sigma_index(sigma);
        const auto snapped = ScaleLattice::snap_mu(mu);
        const CdfTable& cdf = cache.get(sigma_idx, snapped.frac_idx);
        const int sym = dec.decode(cdf);
        std::int64_t s;
        if (sym == kEscapeSymbol)
            s = static_cast<std::int32_t>(dec.decode_raw32());
        else
            s = sym - kRmax;
        return static_cast<float>(s + snapped.mu_int);
    }
};

inline int pad_to_64(int v) { return (v + 63) / 64 * 64; }

}  // namespace detail

inline std::vector<std::uint8_t> encode_z(const Tensor& z, const HyperPrior& prior,
                                          Tensor& z_hat_out, SubstreamStats* stats = nullptr) {
    CdfCache cache;
    detail::SymbolCoder coder{cache};
    RangeEncoder enc;
    z_hat_out = Tensor(1, z.c(), z.h(), z.w());
    for (int i = 0; i < z.h(); ++i)
        for (int j = 0; j < z.w(); ++j)
            for (int c = 0; c < z.c(); ++c)
                z_hat_out.at(0, c, i, j) =
                    coder.encode_value(enc, z.at(0, c, i, j), prior.mu[c], prior.sigma[c]);
    auto bytes = enc.finish();
    if (stats) {
        stats->bytes = bytes.size();
        stats->model_bits = coder.model_bits;
    }
    return bytes;
}

inline Tensor decode_z(const std::vector<std::uint8_t>& bytes, const HyperPrior& prior, int n,
                       int h, int w) {
    CdfCache cache;
    detail::SymbolCoder coder{cache};
    Tensor z_hat(1, n, h, w);
    if (static_cast<std::size_t>(n) * h * w == 0) return z_hat;
    RangeDecoder dec(bytes.data(), bytes.size());
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            for (int c = 0; c < n; ++c)
                z_hat.at(0, c, i, j) = coder.decode_value(dec, prior.mu[c], prior.sigma[c]);
    return z_hat;
}

// ---------------------------------------------------------------------------
// Full image pipelines: the two-phase, K-chunk schedule. The encoder rebuilds
// y_hat as coding proceeds so its context inputs match the decoder's exactly.
// ---------------------------------------------------------------------------

struct EncodeResult {
    CodedImage coded;
    Tensor y_hat;
    Tensor z_hat;
    std::vector<SubstreamStats> stats;  // parallel to coded.substreams
};

struct DecodeResult {
    Tensor image;  // cropped to original dims
    Tensor y_hat;
    Tensor z_hat;
};

namespace detail {

// Channel context for chunk k from the already-rebuilt latent (both phases of
// a chunk share it).
inline Tensor chunk_channel_context(const Tensor& y_hat, int k, const ModelWeights& w) {
    const int cw = w.config().chunk_width();
    if (k == 1) return Tensor(1, 2 * cw, y_hat.h(), y_hat.w());
    Tensor below(1, (k - 1) * cw, y_hat.h(), y_hat.w());
    std::copy(y_hat.data(), y_hat.data() + below.numel(), below.data());
    return channel_context(below, k, w);
}

// Per-(chunk, phase) parameter estimation; identical on both coder sides.
inline EntropyParams chunk_phase_params(const Tensor& y_hat, const Tensor& f_c,
                                        const Tensor& f_s_anchor, const Tensor& hyper, int k,
                                        Phase phase, const ModelWeights& w) {
    const int cw = w.config().chunk_width();
    if (phase == Phase::anchor) return estimate_params(f_c, f_s_anchor, hyper, phase, w);

    Tensor masked(1, cw, y_hat.h(), y_hat.w());
    for (int c = 0; c < cw; ++c)
        for (int i = 0; i < y_hat.h(); ++i)
            for (int j = 0; j < y_hat.w(); ++j)
                if (is_anchor(i, j))
                    masked.at(0, c, i, j) = y_hat.at(0, (k - 1) * cw + c, i, j);
    const Tensor f_s = spatial_context(masked, w);
    return estimate_params(f_c, f_s, hyper, phase, w);
}

}  // namespace detail

inline EncodeResult encode_image(const Tensor& x, int orig_width, int orig_height,
                                 const ModelWeights& w) {
    const ModelConfig& cfg = w.config();
    if (x.h() % 64 != 0 || x.w() % 64 != 0)
        throw ShapeError("encode_image: input must be padded to 64-divisible extents");
    if (x.h() != detail::pad_to_64(orig_height) || x.w() != detail::pad_to_64(orig_width))
        throw ShapeError("encode_image: padded extents do not match original dims");

    EncodeResult res;
    res.coded.width = static_cast<std::uint32_t>(orig_width);
    res.coded.height = static_cast<std::uint32_t>(orig_height);
    res.coded.lambda_index = static_cast<std::uint8_t>(cfg.lambda_index);
    res.coded.weight_checksum = w.checksum();

    const Tensor y = analyze(x, w);
    const Tensor z = hyper_analyze(y, w);

    const HyperPrior prior = HyperPrior::from_weights(w);
    SubstreamStats z_stats;
    res.coded.substreams.push_back(encode_z(z, prior, res.z_hat, &z_stats));
    res.stats.push_back(z_stats);

    const Tensor hyper = hyper_synthesize(res.z_hat, w);

    const int cw = cfg.chunk_width();
    const int h = y.h(), wd = y.w();
    res.y_hat = Tensor(1, cfg.latent_channels, h, wd);
    const Tensor f_s_anchor = spatial_context(Tensor(1, cw, h, wd), w);

    CdfCache cache;
    for (int k = 1; k <= cfg.chunks; ++k) {
        const Tensor f_c = detail::chunk_channel_context(res.y_hat, k, w);
        for (Phase phase : {Phase::anchor, Phase::non_anchor}) {
            const EntropyParams ep =
                detail::chunk_phase_params(res.y_hat, f_c, f_s_anchor, hyper, k, phase, w);
            detail::SymbolCoder coder{cache};
            RangeEncoder enc;
            const bool want_anchor = phase == Phase::anchor;
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < wd; ++j) {
                    if (is_anchor(i, j) != want_anchor) continue;
                    for (int c = 0; c < cw; ++c)
                        res.y_hat.at(0, (k - 1) * cw + c, i, j) = coder.encode_value(
                            enc, y.at(0, (k - 1) * cw + c, i, j), ep.mu.at(0, c, i, j),
                            ep.sigma.at(0, c, i, j));
                }
            auto bytes = enc.finish();
            SubstreamStats st;
            st.bytes = bytes.size();
            st.model_bits = coder.model_bits;
            res.stats.push_back(st);
            res.coded.substreams.push_back(std::move(bytes));
        }
    }
    return res;
}

// chunk_limit < K decodes only the leading chunks (remaining latent channels
// stay zero); exposes the causal truncatability of the schedule.
inline DecodeResult decode_image(const CodedImage& coded, const ModelWeights& w,
                                 int chunk_limit = -1) {
    const ModelConfig& cfg = w.config();
    if (coded.weight_checksum != w.checksum())
        throw WeightError(WeightError::Kind::Mismatch,
                          "bitstream was produced with different weights");
    if (coded.substreams.size() != 1 + 2 * static_cast<std::size_t>(cfg.chunks))
        throw BitstreamError("coded image: wrong substream count");

    const int pad_h = detail::pad_to_64(static_cast<int>(coded.height));
    const int pad_w = detail::pad_to_64(static_cast<int>(coded.width));
    const int h = pad_h / 16, wd = pad_w / 16;

    DecodeResult res;
    const HyperPrior prior = HyperPrior::from_weights(w);
    res.z_hat = decode_z(coded.substreams[0], prior, cfg.hyper_channels, h / 4, wd / 4);
    const Tensor hyper = hyper_synthesize(res.z_hat, w);

    const int cw = cfg.chunk_width();
    res.y_hat = Tensor(1, cfg.latent_channels, h, wd);
    const Tensor f_s_anchor = spatial_context(Tensor(1, cw, h, wd), w);
    const int chunks = chunk_limit < 0 ? cfg.chunks : std::min(chunk_limit, cfg.chunks);

    CdfCache cache;
    for (int k = 1; k <= chunks; ++k) {
        const Tensor f_c = detail::chunk_channel_context(res.y_hat, k, w);
        for (Phase phase : {Phase::anchor, Phase::non_anchor}) {
            const EntropyParams ep =
                detail::chunk_phase_params(res.y_hat, f_c, f_s_anchor, hyper, k, phase, w);
            const auto& bytes =
                coded.substreams[1 + 2 * (k - 1) + (phase == Phase::anchor ? 0 : 1)];
            detail::SymbolCoder coder{cache};
            const bool want_anchor = phase == Phase::anchor;
            const int sites = want_anchor ? anchor_count(h, wd) : h * wd - anchor_count(h, wd);
            if (sites > 0) {
                RangeDecoder dec(bytes.data(), bytes.size());
                for (int i = 0; i < h; ++i)
                    for (int j = 0; j < wd; ++j) {
                        if (is_anchor(i, j) != want_anchor) continue;
                        for (int c = 0; c < cw; ++c)
                            res.y_hat.at(0, (k - 1) * cw + c, i, j) = coder.decode_value(
                                dec, ep.mu.at(0, c, i, j), ep.sigma.at(0, c, i, j));
                    }
            }
        }
    }

    const Tensor full = synthesize(res.y_hat, w);
    res.image = Tensor(1, 3, static_cast<int>(coded.height), static_cast<int>(coded.width));
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < res.image.h(); ++i)
            for (int j = 0; j < res.image.w(); ++j)
                res.image.at(0, c, i, j) = full.at(0, c, i, j);
    return res;
}

}  // namespace mbic
