#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "mbic/errors.hpp"
#include "mbic/rng.hpp"
#include "mbic/ssm.hpp"
#include "mbic/tensor.hpp"

namespace mbic {

// ---------------------------------------------------------------------------
// Model configuration. N/M/K and the lambda table are fixed design points;
// kStateDim / kWlaWidth / kHeads are implementation constants baked into the
// architecture manifest.
// ---------------------------------------------------------------------------

struct ModelConfig {
    int hyper_channels = 128;   // N
    int latent_channels = 320;  // M
    int chunks = 5;             // K
    int window = 8;
    int lambda_index = 2;
    int stages = 4;

    static constexpr int kStateDim = 8;
    static constexpr int kWlaWidth = 256;
    static constexpr int kHeads = 8;
    static constexpr std::array<double, 5> kLambdaTable{0.0035, 0.0067, 0.013, 0.025, 0.05};

    int chunk_width() const { return latent_channels / chunks; }
    double lambda_value() const {
        return kLambdaTable[static_cast<std::size_t>(lambda_index) < kLambdaTable.size()
                                ? lambda_index
                                : 0];
    }

    void validate() const {
        if (latent_channels % chunks != 0)
            throw ShapeError("ModelConfig: latent channels not divisible by chunk count");
        if (lambda_index < 0 || lambda_index >= static_cast<int>(kLambdaTable.size()))
            throw ShapeError("ModelConfig: lambda index out of range");
    }

    bool operator==(const ModelConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Architecture manifest: the full (name, shape) listing every parameter must
// match. init_weights fills it, save/load validate against it, the forward
// passes fetch through it.
// ---------------------------------------------------------------------------

enum class Init { fan_in_uniform, zero, one, neg_range, dt_bias, sigma_raw };

struct ParamSpec {
    std::string name;
    std::array<int, 4> shape;
    Init init;
    int fan_in;  // for fan_in_uniform
};

namespace detail {

struct ConvStage {
    int in_c, out_c, kernel, stride, pad, out_pad;
};

// g_a downsampling stages (conv then VSS); g_s mirrors them upside down.
inline const std::array<ConvStage, 4>& ga_stages() {
    static const std::array<ConvStage, 4> s{{{3, 192, 5, 2, 2, 0},
                                             {192, 192, 3, 2, 1, 0},
                                             {192, 240, 3, 2, 1, 0},
                                             {240, 320, 3, 2, 1, 0}}};
    return s;
}
inline const std::array<ConvStage, 4>& gs_stages() {
    static const std::array<ConvStage, 4> s{{{320, 240, 3, 2, 1, 1},
                                             {240, 192, 3, 2, 1, 1},
                                             {192, 192, 3, 2, 1, 1},
                                             {192, 3, 5, 2, 2, 1}}};
    return s;
}

inline void push(std::vector<ParamSpec>& out, const std::string& name, int a, int b, int c, int d,
                 Init init, int fan_in = 0) {
    out.push_back(ParamSpec{name, {a, b, c, d}, init, fan_in});
}

inline void push_vss(std::vector<ParamSpec>& out, const std::string& p, int ch) {
    const int ns = ModelConfig::kStateDim;
    push(out, p + ".ln.gain", 1, ch, 1, 1, Init::one);
    push(out, p + ".ln.bias", 1, ch, 1, 1, Init::zero);
    push(out, p + ".in.weight", ch, ch, 1, 1, Init::fan_in_uniform, ch);
    push(out, p + ".in.bias", 1, ch, 1, 1, Init::zero);
    push(out, p + ".dw.weight", ch, 1, 3, 3, Init::fan_in_uniform, 9);
    push(out, p + ".dw.bias", 1, ch, 1, 1, Init::zero);
    for (int path = 0; path < 4; ++path) {
        const std::string q = p + ".path" + std::to_string(path);
        push(out, q + ".a", ch, ns, 1, 1, Init::neg_range);
        push(out, q + ".b_proj", ns, ch, 1, 1, Init::fan_in_uniform, ch);
        push(out, q + ".c_proj", ns, ch, 1, 1, Init::fan_in_uniform, ch);
        push(out, q + ".dt_proj", 1, ch, 1, 1, Init::fan_in_uniform, ch);
        push(out, q + ".dt_scale", 1, ch, 1, 1, Init::fan_in_uniform, ch);
        push(out, q + ".dt_bias", 1, ch, 1, 1, Init::dt_bias);
        push(out, q + ".d_skip", 1, ch, 1, 1, Init::one);
    }
    push(out, p + ".ss2d_ln.gain", 1, ch, 1, 1, Init::one);
    push(out, p + ".ss2d_ln.bias", 1, ch, 1, 1, Init::zero);
    push(out, p + ".gate.weight", ch, ch, 1, 1, Init::fan_in_uniform, ch);
    push(out, p + ".gate.bias", 1, ch, 1, 1, Init::zero);
    push(out, p + ".out.weight", ch, ch, 1, 1, Init::fan_in_uniform, ch);
    push(out, p + ".out.bias", 1, ch, 1, 1, Init::zero);
}

inline void push_conv(std::vector<ParamSpec>& out, const std::string& p, int in_c, int out_c,
                      int k, bool transposed = false) {
    if (transposed)
        push(out, p + ".weight", in_c, out_c, k, k, Init::fan_in_uniform, in_c * k * k);
    else
        push(out, p + ".weight", out_c, in_c, k, k, Init::fan_in_uniform, in_c * k * k);
    push(out, p + ".bias", 1, out_c, 1, 1, Init::zero);
}

inline void push_rb(std::vector<ParamSpec>& out, const std::string& p, int ch) {
    const int mid = ch / 2;
    push_conv(out, p + ".reduce", ch, mid, 1);
    push_conv(out, p + ".mid", mid, mid, 3);
    push_conv(out, p + ".expand", mid, ch, 1);
}

inline void push_head(std::vector<ParamSpec>& out, const std::string& p, int in_c, int wla_c,
                      int out_c) {
    push_conv(out, p + ".agg1", in_c, wla_c, 1);
    push_conv(out, p + ".agg2", wla_c, wla_c, 1);
    for (const char* nm : {"wq", "wk", "wv", "wo"}) {
        push(out, p + ".wla." + std::string(nm) + ".weight", wla_c, wla_c, 1, 1,
             Init::fan_in_uniform, wla_c);
        push(out, p + ".wla." + std::string(nm) + ".bias", 1, wla_c, 1, 1, Init::zero);
    }
    push_conv(out, p + ".proj", wla_c, out_c, 1);
}

}  // namespace detail

inline std::vector<ParamSpec> architecture_manifest(const ModelConfig& cfg) {
    cfg.validate();
    std::vector<ParamSpec> out;
    const int M = cfg.latent_channels, N = cfg.hyper_channels, K = cfg.chunks;
    const int cw = cfg.chunk_width();

    for (std::size_t i = 0; i < detail::ga_stages().size(); ++i) {
        const auto& st = detail::ga_stages()[i];
        const std::string p = "ga.s" + std::to_string(i);
        detail::push_conv(out, p + ".conv", st.in_c, st.out_c, st.kernel);
        detail::push_vss(out, p + ".vss", st.out_c);
    }
    detail::push_rb(out, "ga.rb", M);

    detail::push_rb(out, "gs.rb", M);
    for (std::size_t i = 0; i < detail::gs_stages().size(); ++i) {
        const auto& st = detail::gs_stages()[i];
        const std::string p = "gs.s" + std::to_string(i);
        detail::push_vss(out, p + ".vss", st.in_c);
        detail::push_conv(out, p + ".deconv", st.in_c, st.out_c, st.kernel, true);
    }

    detail::push_conv(out, "ha.conv0", M, 256, 3);
    detail::push_vss(out, "ha.vss", 256);
    detail::push_conv(out, "ha.conv1", 256, N, 3);

    detail::push_conv(out, "hs.deconv0", N, 384, 3, true);
    detail::push_vss(out, "hs.vss", 384);
    detail::push_conv(out, "hs.deconv1", 384, 2 * M, 3, true);

    for (int k = 2; k <= K; ++k) {
        const std::string p = "psi" + std::to_string(k);
        detail::push_vss(out, p + ".vss", (k - 1) * cw);
        detail::push_conv(out, p + ".conv", (k - 1) * cw, 2 * cw, 3);
    }
    detail::push_vss(out, "phi.vss", cw);
    detail::push_conv(out, "phi.conv", cw, 2 * cw, 3);

    const int agg_in = 2 * cw + 2 * cw + 2 * M;  // spatial + channel + hyper
    detail::push_head(out, "head.anchor", agg_in, ModelConfig::kWlaWidth, 2 * cw);
    detail::push_head(out, "head.nonanchor", agg_in, ModelConfig::kWlaWidth, 2 * cw);

    detail::push(out, "zprior.mu", 1, N, 1, 1, Init::zero);
    detail::push(out, "zprior.sigma_raw", 1, N, 1, 1, Init::sigma_raw);
    return out;
}

// ---------------------------------------------------------------------------
// Weight store.
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t len,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::vector<std::uint8_t>& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

struct ByteReader {
    const std::uint8_t* p;
    std::size_t len;
    std::size_t pos = 0;

    bool need(std::size_t n) const { return pos + n <= len; }
    std::uint16_t u16() {
        std::uint16_t v = static_cast<std::uint16_t>(p[pos] | (p[pos + 1] << 8));
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    float f32() {
        std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
};

}  // namespace detail

class ModelWeights {
public:
    static constexpr std::uint16_t kFormatVersion = 1;

    ModelWeights() = default;
    explicit ModelWeights(ModelConfig cfg) : config_(cfg) {}

    const ModelConfig& config() const { return config_; }
    std::uint64_t checksum() const { return checksum_; }

    const Tensor& get(const std::string& name, int a, int b, int c, int d) const {
        auto it = tensors_.find(name);
        if (it == tensors_.end())
            throw WeightError(WeightError::Kind::MissingParam, "missing parameter: " + name);
        const auto& sh = it->second.shape();
        if (sh != std::array<int, 4>{a, b, c, d})
            throw WeightError(WeightError::Kind::Format,
                              "parameter " + name + " has shape " + it->second.shape_str());
        return it->second;
    }

    bool has(const std::string& name) const { return tensors_.count(name) != 0; }
    void set(const std::string& name, Tensor t) { tensors_[name] = std::move(t); }
    std::size_t size() const { return tensors_.size(); }

    // Serialized image: magic, version, config block, name-sorted records.
    // The trailing checksum is appended by save().
    std::vector<std::uint8_t> serialize_body() const {
        std::vector<std::uint8_t> out;
        out.push_back('M');
        out.push_back('B');
        out.push_back('W');
        out.push_back('T');
        detail::put_u16(out, kFormatVersion);
        detail::put_u32(out, static_cast<std::uint32_t>(config_.hyper_channels));
        detail::put_u32(out, static_cast<std::uint32_t>(config_.latent_channels));
        detail::put_u32(out, static_cast<std::uint32_t>(config_.chunks));
        detail::put_u32(out, static_cast<std::uint32_t>(config_.window));
        detail::put_u32(out, static_cast<std::uint32_t>(config_.lambda_index));
        detail::put_u32(out, static_cast<std::uint32_t>(config_.stages));
        detail::put_u32(out, static_cast<std::uint32_t>(ModelConfig::kStateDim));
        detail::put_u32(out, static_cast<std::uint32_t>(tensors_.size()));
        std::size_t payload = 0;
        for (const auto& [name, t] : tensors_) payload += 2 + name.size() + 16 + t.numel() * 4;
        out.reserve(out.size() + payload);
        for (const auto& [name, t] : tensors_) {  // std::map iterates name-sorted
            detail::put_u16(out, static_cast<std::uint16_t>(name.size()));
            out.insert(out.end(), name.begin(), name.end());
            for (int ax = 0; ax < 4; ++ax)
                detail::put_u32(out, static_cast<std::uint32_t>(t.shape()[ax]));
            // float payload appended wholesale; x86 is little-endian, and the
            // reader restores via explicit LE decoding either way
            static_assert(std::endian::native == std::endian::little);
            const auto* raw = reinterpret_cast<const std::uint8_t*>(t.data());
            out.insert(out.end(), raw, raw + t.numel() * 4);
        }
        return out;
    }

    void refresh_checksum() { checksum_ = compute_checksum(); }

    void validate_manifest() const {
        const auto manifest = architecture_manifest(config_);
        std::map<std::string, std::array<int, 4>> expected;
        for (const auto& spec : manifest) expected.emplace(spec.name, spec.shape);
        for (const auto& [name, t] : tensors_) {
            auto it = expected.find(name);
            if (it == expected.end())
                throw WeightError(WeightError::Kind::UnknownParam,
                                  "unknown parameter in weight set: " + name);
            if (t.shape() != it->second)
                throw WeightError(WeightError::Kind::Format,
                                  "parameter " + name + " has shape " + t.shape_str());
        }
        for (const auto& [name, shape] : expected) {
            (void)shape;
            if (!tensors_.count(name))
                throw WeightError(WeightError::Kind::MissingParam, "missing parameter: " + name);
        }
    }

private:
    std::uint64_t compute_checksum() const {
        const auto body = serialize_body();
        return detail::fnv1a64(body.data(), body.size());
    }

    ModelConfig config_;
    std::map<std::string, Tensor> tensors_;
    std::uint64_t checksum_ = 0;
};

// Deterministic fan-in-scaled initialization; identical seeds give
// bitwise-identical weights on any platform.
inline ModelWeights init_weights(const ModelConfig& cfg, std::uint64_t seed) {
    ModelWeights w(cfg);
    Rng rng(seed);
    for (const auto& spec : architecture_manifest(cfg)) {
        Tensor t(spec.shape[0], spec.shape[1], spec.shape[2], spec.shape[3]);
        switch (spec.init) {
            case Init::fan_in_uniform: {
                const float s = 1.0f / std::sqrt(static_cast<float>(spec.fan_in));
                for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-s, s);
                break;
            }
            case Init::zero:
                break;
            case Init::one:
                for (std::size_t i = 0; i < t.numel(); ++i) t[i] = 1.0f;
                break;
            case Init::neg_range:
                // S4D-real style: state n gets -(n+1), every channel alike
                for (int c = 0; c < t.n(); ++c)
                    for (int n = 0; n < t.c(); ++n)
                        t.at(c, n, 0, 0) = -static_cast<float>(n + 1);
                break;
            case Init::dt_bias:
                // softplus(bias) lands in [0.01, 0.1]
                for (std::size_t i = 0; i < t.numel(); ++i) {
                    const float target = rng.uniform(0.01f, 0.1f);
                    t[i] = std::log(std::expm1(target));
                }
                break;
            case Init::sigma_raw:
                // softplus -> 1.0
                for (std::size_t i = 0; i < t.numel(); ++i)
                    t[i] = 0.54132485f;
                break;
        }
        w.set(spec.name, std::move(t));
    }
    w.refresh_checksum();
    return w;
}

// ---------------------------------------------------------------------------
// Weight file I/O. Layout: body (magic, version, config, name-sorted records)
// followed by a 64-bit FNV-1a checksum of the body. Little-endian throughout.
// ---------------------------------------------------------------------------

inline std::vector<std::uint8_t> save_weights(const ModelWeights& w) {
    auto body = w.serialize_body();
    const std::uint64_t sum = detail::fnv1a64(body.data(), body.size());
    detail::put_u64(body, sum);
    return body;
}

inline ModelWeights load_weights(const std::uint8_t* data, std::size_t len) {
    if (len < 8 + 6)
        throw WeightError(WeightError::Kind::Checksum, "weight blob too short");
    const std::size_t body_len = len - 8;
    detail::ByteReader tail{data, len, body_len};
    const std::uint64_t stored = tail.u64();
    const std::uint64_t computed = detail::fnv1a64(data, body_len);
    if (stored != computed)
        throw WeightError(WeightError::Kind::Checksum, "weight checksum mismatch");

    detail::ByteReader r{data, body_len, 0};
    if (!r.need(6) || data[0] != 'M' || data[1] != 'B' || data[2] != 'W' || data[3] != 'T')
        throw WeightError(WeightError::Kind::Format, "bad weight magic");
    r.pos = 4;
    const std::uint16_t version = r.u16();
    if (version != ModelWeights::kFormatVersion)
        throw WeightError(WeightError::Kind::Version,
                          "unsupported weight format version " + std::to_string(version));
    if (!r.need(8 * 4)) throw WeightError(WeightError::Kind::Format, "truncated config block");
    ModelConfig cfg;
    cfg.hyper_channels = static_cast<int>(r.u32());
    cfg.latent_channels = static_cast<int>(r.u32());
    cfg.chunks = static_cast<int>(r.u32());
    cfg.window = static_cast<int>(r.u32());
    cfg.lambda_index = static_cast<int>(r.u32());
    cfg.stages = static_cast<int>(r.u32());
    const std::uint32_t state_dim = r.u32();
    if (state_dim != static_cast<std::uint32_t>(ModelConfig::kStateDim))
        throw WeightError(WeightError::Kind::Format, "state dim mismatch in weight file");
    const std::uint32_t count = r.u32();

    ModelWeights w(cfg);
    for (std::uint32_t rec = 0; rec < count; ++rec) {
        if (!r.need(2)) throw WeightError(WeightError::Kind::Format, "truncated record header");
        const std::uint16_t name_len = r.u16();
        if (!r.need(name_len + 16))
            throw WeightError(WeightError::Kind::Format, "truncated record");
        std::string name(reinterpret_cast<const char*>(data + r.pos), name_len);
        r.pos += name_len;
        std::array<int, 4> shape{};
        for (int ax = 0; ax < 4; ++ax) shape[ax] = static_cast<int>(r.u32());
        Tensor t(shape[0], shape[1], shape[2], shape[3]);
        if (!r.need(t.numel() * 4))
            throw WeightError(WeightError::Kind::Format, "truncated tensor data for " + name);
        for (std::size_t i = 0; i < t.numel(); ++i) t[i] = r.f32();
        w.set(name, std::move(t));
    }
    if (r.pos != body_len)
        throw WeightError(WeightError::Kind::Format, "trailing bytes in weight file");
    w.validate_manifest();
    w.refresh_checksum();
    return w;
}

inline ModelWeights load_weights(const std::vector<std::uint8_t>& bytes) {
    return load_weights(bytes.data(), bytes.size());
}

// ---------------------------------------------------------------------------
// Weight views for composite blocks.
// ---------------------------------------------------------------------------

inline SsmParams make_ssm_params(const ModelWeights& w, const std::string& p, int ch) {
    const int ns = ModelConfig::kStateDim;
    SsmParams out;
    out.channels = ch;
    out.state_dim = ns;
    const auto copy_all = [](const Tensor& t, std::vector<float>& dst) {
        dst.assign(t.data(), t.data() + t.numel());
    };
    copy_all(w.get(p + ".a", ch, ns, 1, 1), out.a);
    copy_all(w.get(p + ".b_proj", ns, ch, 1, 1), out.b_proj);
    copy_all(w.get(p + ".c_proj", ns, ch, 1, 1), out.c_proj);
    copy_all(w.get(p + ".dt_proj", 1, ch, 1, 1), out.dt_proj);
    copy_all(w.get(p + ".dt_scale", 1, ch, 1, 1), out.dt_scale);
    copy_all(w.get(p + ".dt_bias", 1, ch, 1, 1), out.dt_bias);
    copy_all(w.get(p + ".d_skip", 1, ch, 1, 1), out.d_skip);
    return out;
}

inline VssWeights make_vss_weights(const ModelWeights& w, const std::string& p, int ch) {
    VssWeights v;
    v.ln_gain = w.get(p + ".ln.gain", 1, ch, 1, 1);
    v.ln_bias = w.get(p + ".ln.bias", 1, ch, 1, 1);
    v.in_w = w.get(p + ".in.weight", ch, ch, 1, 1);
    v.in_b = w.get(p + ".in.bias", 1, ch, 1, 1);
    v.dw_w = w.get(p + ".dw.weight", ch, 1, 3, 3);
    v.dw_b = w.get(p + ".dw.bias", 1, ch, 1, 1);
    for (int path = 0; path < 4; ++path)
        v.ss2d[path] = make_ssm_params(w, p + ".path" + std::to_string(path), ch);
    v.ss2d_ln_gain = w.get(p + ".ss2d_ln.gain", 1, ch, 1, 1);
    v.ss2d_ln_bias = w.get(p + ".ss2d_ln.bias", 1, ch, 1, 1);
    v.gate_w = w.get(p + ".gate.weight", ch, ch, 1, 1);
    v.gate_b = w.get(p + ".gate.bias", 1, ch, 1, 1);
    v.out_w = w.get(p + ".out.weight", ch, ch, 1, 1);
    v.out_b = w.get(p + ".out.bias", 1, ch, 1, 1);
    return v;
}

// ---------------------------------------------------------------------------
// Forward transforms.
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor run_conv(const ModelWeights& w, const std::string& p, const Tensor& x,
                       const ConvStage& st) {
    ConvSpec spec;
    spec.in_channels = st.in_c;
    spec.out_channels = st.out_c;
    spec.kernel_size = st.kernel;
    spec.stride = st.stride;
    spec.padding = st.pad;
    return conv2d(x, w.get(p + ".weight", st.out_c, st.in_c, st.kernel, st.kernel),
                  w.get(p + ".bias", 1, st.out_c, 1, 1), spec);
}

inline Tensor run_deconv(const ModelWeights& w, const std::string& p, const Tensor& x,
                         const ConvStage& st) {
    ConvSpec spec;
    spec.in_channels = st.in_c;
    spec.out_channels = st.out_c;
    spec.kernel_size = st.kernel;
    spec.stride = st.stride;
    spec.padding = st.pad;
    spec.out_padding = st.out_pad;
    spec.transposed = true;
    return conv_transpose2d(x, w.get(p + ".weight", st.in_c, st.out_c, st.kernel, st.kernel),
                            w.get(p + ".bias", 1, st.out_c, 1, 1), spec);
}

}  // namespace detail

// Shape-preserving bottleneck: 1x1 reduce -> SiLU -> 3x3 -> SiLU -> 1x1 expand,
// plus identity skip. Zero weights make it an exact identity.
inline Tensor residual_bottleneck(const Tensor& x, const ModelWeights& w, const std::string& p) {
    const int ch = x.c(), mid = ch / 2;
    Tensor t = detail::run_conv(w, p + ".reduce", x, {ch, mid, 1, 1, 0, 0});
    t = activation(t, Act::silu);
    t = detail::run_conv(w, p + ".mid", t, {mid, mid, 3, 1, 1, 0});
    t = activation(t, Act::silu);
    t = detail::run_conv(w, p + ".expand", t, {mid, ch, 1, 1, 0, 0});
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] += x[i];
    return t;
}

// g_a: image in [0,1] -> latent y, 16x downsampled, M channels.
inline Tensor analyze(const Tensor& x, const ModelWeights& w) {
    if (x.c() != 3) throw ShapeError("analyze: expected 3 input channels");
    if (x.h() % 64 != 0 || x.w() % 64 != 0)
        throw ShapeError("analyze: spatial extents must be divisible by 64, got " +
                         x.shape_str());
    Tensor t = x;
    for (std::size_t i = 0; i < detail::ga_stages().size(); ++i) {
        const std::string p = "ga.s" + std::to_string(i);
        t = detail::run_conv(w, p + ".conv", t, detail::ga_stages()[i]);
        t = vss_block(t, make_vss_weights(w, p + ".vss", detail::ga_stages()[i].out_c));
    }
    return residual_bottleneck(t, w, "ga.rb");
}

// g_s: latent -> image, clamped to [0,1].
inline Tensor synthesize(const Tensor& y, const ModelWeights& w) {
    if (y.c() != w.config().latent_channels)
        throw ShapeError("synthesize: latent channel mismatch, got " + y.shape_str());
    Tensor t = residual_bottleneck(y, w, "gs.rb");
    for (std::size_t i = 0; i < detail::gs_stages().size(); ++i) {
        const std::string p = "gs.s" + std::to_string(i);
        t = vss_block(t, make_vss_weights(w, p + ".vss", detail::gs_stages()[i].in_c));
        t = detail::run_deconv(w, p + ".deconv", t, detail::gs_stages()[i]);
    }
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = std::clamp(t[i], 0.0f, 1.0f);
    return t;
}

// h_a: latent y -> hyper latent z at quarter resolution.
inline Tensor hyper_analyze(const Tensor& y, const ModelWeights& w) {
    const int M = w.config().latent_channels, N = w.config().hyper_channels;
    if (y.c() != M) throw ShapeError("hyper_analyze: latent channel mismatch");
    if (y.h() % 4 != 0 || y.w() % 4 != 0)
        throw ShapeError("hyper_analyze: latent extents must be divisible by 4");
    Tensor t = detail::run_conv(w, "ha.conv0", y, {M, 256, 3, 2, 1, 0});
    t = vss_block(t, make_vss_weights(w, "ha.vss", 256));
    return detail::run_conv(w, "ha.conv1", t, {256, N, 3, 2, 1, 0});
}

// h_s: quantized hyper latent -> 2M hyper features at y resolution.
inline Tensor hyper_synthesize(const Tensor& z_hat, const ModelWeights& w) {
    const int M = w.config().latent_channels, N = w.config().hyper_channels;
    if (z_hat.c() != N) throw ShapeError("hyper_synthesize: hyper channel mismatch");
    Tensor t = detail::run_deconv(w, "hs.deconv0", z_hat, {N, 384, 3, 2, 1, 1});
    t = vss_block(t, make_vss_weights(w, "hs.vss", 384));
    return detail::run_deconv(w, "hs.deconv1", t, {384, 2 * M, 3, 2, 1, 1});
}

}  // namespace mbic
