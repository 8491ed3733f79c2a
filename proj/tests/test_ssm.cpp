#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mbic/ssm.hpp"
#include "oracles.hpp"

using namespace mbic;

TEST_CASE("discretize zero-step limit") {
    const auto d = discretize(-1.0, 1.0, 1e-9);
    CHECK(std::fabs(d.a_bar - 1.0) < 1e-8);
    CHECK(std::fabs(d.b_bar - 1e-9) < 1e-12);  // B_bar -> delta * B
}

TEST_CASE("discretize worked closed forms") {
    const auto d1 = discretize(-1.0, 1.0, std::log(2.0));
    CHECK(std::fabs(d1.a_bar - 0.5) < 1e-9);
    CHECK(std::fabs(d1.b_bar - 0.5) < 1e-9);

    const auto d2 = discretize(-2.0, 3.0, 0.5);
    CHECK(std::fabs(d2.a_bar - std::exp(-1.0)) < 1e-9);
    CHECK(std::fabs(d2.b_bar - (1.0 - std::exp(-1.0)) * 1.5) < 1e-9);
}

TEST_CASE("discretize rejects non-positive step") {
    CHECK_THROWS_AS(discretize(-1.0, 1.0, 0.0), ShapeError);
    CHECK_THROWS_AS(discretize(-1.0, 1.0, -0.1), ShapeError);
}

TEST_CASE("discretize matches RK4 integration of the ODE across step sizes") {
    Rng rng(20);
    // log-spaced deltas across [1e-4, 1]; includes |delta*A| < 1e-4 series cases
    for (int di = 0; di <= 16; ++di) {
        const double delta = std::pow(10.0, -4.0 + 4.0 * di / 16.0);
        for (int trial = 0; trial < 4; ++trial) {
            const double a = -std::pow(10.0, rng.uniform(-3.0f, 0.5f));
            const double b = rng.uniform(-2.0f, 2.0f);
            const double u = rng.uniform(-2.0f, 2.0f);
            const double h0 = rng.uniform(-1.0f, 1.0f);
            const auto d = discretize(a, b, delta);
            const double zoh = d.a_bar * h0 + d.b_bar * u;
            const double rk = oracle::rk4_zoh(a, b, u, h0, delta);
            CHECK(oracle::rel_err(zoh, rk, 1e-6) < 1e-6);
        }
    }
}

TEST_CASE("selective_scan zero input gives zero output") {
    Rng rng(21);
    const auto pd = oracle::random_ssm_params(rng, 3, 4);
    const auto pf = oracle::to_float_params(pd);
    Tensor x(1, 3, 1, 6);
    const Tensor y = selective_scan(x, pf);
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == 0.0f);
}

TEST_CASE("selective_scan single step unrolls by hand") {
    Rng rng(22);
    const auto pd = oracle::random_ssm_params(rng, 2, 3);
    const auto pf = oracle::to_float_params(pd);
    std::vector<float> x = {0.4f, -0.9f};
    const auto y = selective_scan_seq(x, 1, pf);
    // y_1[c] = sum_n C_1[n] Bbar_1[c][n] x_1[c] + D[c] x_1[c]
    const auto sel = scan_selection(x, 1, pf);
    for (int c = 0; c < 2; ++c) {
        double want = pf.d_skip[c] * x[c];
        for (int n = 0; n < 3; ++n) {
            const auto d = discretize(pf.a[c * 3 + n], sel.b_t[n], sel.delta[c]);
            want += sel.c_t[n] * d.b_bar * x[c];
        }
        CHECK(oracle::rel_err(y[c], want, 1e-6) < 1e-5);
    }
}

TEST_CASE("selective_scan matches recurrence oracle") {
    Rng rng(23);
    for (int trial = 0; trial < 10; ++trial) {
        const int C = 1 + static_cast<int>(rng.next_below(5));
        const int NS = 1 + static_cast<int>(rng.next_below(8));
        const int T = 8;
        const auto pd = oracle::random_ssm_params(rng, C, NS);
        const auto pf = oracle::to_float_params(pd);
        std::vector<double> xd(static_cast<std::size_t>(T) * C);
        std::vector<float> xf(xd.size());
        for (std::size_t i = 0; i < xd.size(); ++i) {
            xd[i] = rng.uniform(-1.0f, 1.0f);
            xf[i] = static_cast<float>(xd[i]);
        }
        const auto got = selective_scan_seq(xf, T, pf);
        const auto want = oracle::scan_recurrence_ref(xd, T, pd);
        // relative with a unit guard: outputs are O(1), float32 path
        for (std::size_t i = 0; i < got.size(); ++i)
            CHECK(oracle::rel_err(got[i], want[i], 1.0) < 1e-5);
    }
}

TEST_CASE("selective_scan is strictly causal") {
    Rng rng(24);
    const int C = 3, NS = 4, T = 10;
    const auto pf = oracle::to_float_params(oracle::random_ssm_params(rng, C, NS));
    std::vector<float> x(static_cast<std::size_t>(T) * C);
    for (auto& v : x) v = rng.uniform(-1.0f, 1.0f);
    const auto base = selective_scan_seq(x, T, pf);
    const int t_cut = 5;
    auto x2 = x;
    for (int t = t_cut + 1; t < T; ++t)
        for (int c = 0; c < C; ++c) x2[static_cast<std::size_t>(t) * C + c] += 3.0f;
    const auto perturbed = selective_scan_seq(x2, T, pf);
    for (int t = 0; t <= t_cut; ++t)
        for (int c = 0; c < C; ++c)
            CHECK(base[static_cast<std::size_t>(t) * C + c] ==
                  perturbed[static_cast<std::size_t>(t) * C + c]);
}

TEST_CASE("selective_scan hidden state stays bounded over long sequences") {
    Rng rng(25);
    const int C = 2, NS = 4, T = 4096;
    auto pd = oracle::random_ssm_params(rng, C, NS);
    const auto pf = oracle::to_float_params(pd);
    std::vector<float> x(static_cast<std::size_t>(T) * C);
    for (auto& v : x) v = rng.uniform(-1.0f, 1.0f);
    std::vector<float> h_last;
    const auto y = selective_scan_seq(x, T, pf, &h_last);
    for (float v : y) CHECK(std::isfinite(v));

    // geometric-series bound: |h| <= max|Bbar x| / (1 - max Abar); bound the
    // per-token quantities from the parameter ranges
    double max_abar = 0.0, max_bx = 0.0;
    const auto sel = scan_selection(x, T, pf);
    for (int t = 0; t < T; ++t)
        for (int c = 0; c < C; ++c)
            for (int n = 0; n < NS; ++n) {
                const double v = sel.delta[static_cast<std::size_t>(t) * C + c] *
                                 pf.a[static_cast<std::size_t>(c) * NS + n];
                const double abar = std::exp(v);
                const double bbar = (std::exp(v) - 1.0) / v *
                                    sel.delta[static_cast<std::size_t>(t) * C + c] *
                                    sel.b_t[static_cast<std::size_t>(t) * NS + n];
                max_abar = std::max(max_abar, abar);
                max_bx = std::max(max_bx,
                                  std::fabs(bbar * x[static_cast<std::size_t>(t) * C + c]));
            }
    REQUIRE(max_abar < 1.0);
    const double bound = max_bx / (1.0 - max_abar) + 1e-6;
    for (float v : h_last) CHECK(std::fabs(v) <= bound);
}

TEST_CASE("selective_scan_grad zero upstream gives zero gradients") {
    Rng rng(26);
    const auto pd = oracle::random_ssm_params(rng, 2, 3);
    std::vector<double> x(8, 0.3);
    std::vector<double> up(8, 0.0);
    const auto g = selective_scan_grad(x, 4, pd, up);
    for (double v : g.x) CHECK(v == 0.0);
    for (double v : g.params.a) CHECK(v == 0.0);
    for (double v : g.params.b_proj) CHECK(v == 0.0);
}

TEST_CASE("frozen-selection scalar system: dy2/dx1 = C2 * Abar2 * Bbar1") {
    // selection sequences fixed by hand; gradient through the recurrence only
    SsmParamsT<double> p;
    p.channels = 1;
    p.state_dim = 1;
    p.a = {-0.8};
    p.b_proj = {0.0};  // unused: selection provided explicitly
    p.c_proj = {0.0};
    p.dt_proj = {0.0};
    p.dt_scale = {0.0};
    p.dt_bias = {0.0};
    p.d_skip = {0.25};

    ScanSelection<double> sel;
    sel.delta = {0.3, 0.7};
    sel.b_t = {1.1, -0.4};
    sel.c_t = {0.6, 0.9};

    const auto run = [&](double x1) {
        std::vector<double> x = {x1, 0.55};
        return selective_scan_core(x, 2, sel, p)[1];  // y_2
    };
    const double h = 1e-6;
    const double fd = (run(0.8 + h) - run(0.8 - h)) / (2.0 * h);

    const auto d1 = discretize(p.a[0], sel.b_t[0], sel.delta[0]);
    const auto d2 = discretize(p.a[0], sel.b_t[1], sel.delta[1]);
    const double analytic = sel.c_t[1] * d2.a_bar * d1.b_bar;
    CHECK(oracle::rel_err(fd, analytic, 1e-9) < 1e-6);
    (void)d2;
}

TEST_CASE("selective_scan_grad matches central finite differences") {
    Rng rng(27);
    for (int trial = 0; trial < 6; ++trial) {
        const int C = 1 + static_cast<int>(rng.next_below(3));
        const int NS = 1 + static_cast<int>(rng.next_below(8));
        const int T = 2 + static_cast<int>(rng.next_below(15));
        auto p = oracle::random_ssm_params(rng, C, NS);
        std::vector<double> x(static_cast<std::size_t>(T) * C);
        std::vector<double> up(x.size());
        for (auto& v : x) v = rng.uniform(-1.0f, 1.0f);
        for (auto& v : up) v = rng.uniform(-1.0f, 1.0f);

        const auto loss = [&](const std::vector<double>& xs, const SsmParamsT<double>& ps) {
            const auto y = selective_scan_seq(xs, T, ps);
            double acc = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) acc += up[i] * y[i];
            return acc;
        };
        const auto g = selective_scan_grad(x, T, p, up);

        const double h = 1e-3;
        const auto check_param = [&](std::vector<double>& field, const std::vector<double>& grad) {
            for (std::size_t i = 0; i < field.size(); ++i) {
                const double keep = field[i];
                field[i] = keep + h;
                const double hi = loss(x, p);
                field[i] = keep - h;
                const double lo = loss(x, p);
                field[i] = keep;
                const double fd = (hi - lo) / (2.0 * h);
                CHECK(oracle::rel_err(grad[i], fd, 1e-4) < 1e-3);
            }
        };
        check_param(p.a, g.params.a);
        check_param(p.b_proj, g.params.b_proj);
        check_param(p.c_proj, g.params.c_proj);
        check_param(p.dt_proj, g.params.dt_proj);
        check_param(p.dt_scale, g.params.dt_scale);
        check_param(p.dt_bias, g.params.dt_bias);
        check_param(p.d_skip, g.params.d_skip);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double keep = x[i];
            x[i] = keep + h;
            const double hi = loss(x, p);
            x[i] = keep - h;
            const double lo = loss(x, p);
            x[i] = keep;
            CHECK(oracle::rel_err(g.x[i], (hi - lo) / (2.0 * h), 1e-4) < 1e-3);
        }
    }
}

TEST_CASE("ss2d path orders are bijective") {
    Rng rng(28);
    for (int h = 1; h <= 16; h += 3)
        for (int w = 1; w <= 16; w += 3)
            for (int path = 0; path < 4; ++path) {
                const auto order = scan_path_order(static_cast<ScanPath>(path), h, w);
                REQUIRE(order.size() == static_cast<std::size_t>(h) * w);
                Tensor x = oracle::random_tensor(rng, 1, 3, h, w);
                const auto seq = path_gather(x, order);
                const Tensor back = path_scatter(seq, order, 3, h, w);
                for (std::size_t i = 0; i < x.numel(); ++i) CHECK(back[i] == x[i]);
            }
}

TEST_CASE("reverse paths are exact index reversals") {
    for (int h : {1, 3, 8})
        for (int w : {1, 5, 8}) {
            const auto rf = scan_path_order(ScanPath::row_forward, h, w);
            const auto rr = scan_path_order(ScanPath::row_reverse, h, w);
            const auto cf = scan_path_order(ScanPath::col_forward, h, w);
            const auto cr = scan_path_order(ScanPath::col_reverse, h, w);
            for (std::size_t t = 0; t < rf.size(); ++t) {
                CHECK(rr[t] == rf[rf.size() - 1 - t]);
                CHECK(cr[t] == cf[cf.size() - 1 - t]);
            }
        }
}

TEST_CASE("ss2d on a 1x1 grid sums the four single-step paths") {
    Rng rng(29);
    std::array<SsmParams, 4> per_path;
    for (auto& p : per_path) p = oracle::to_float_params(oracle::random_ssm_params(rng, 2, 3));
    Tensor x(1, 2, 1, 1);
    x.at(0, 0, 0, 0) = 0.7f;
    x.at(0, 1, 0, 0) = -0.2f;
    const Tensor y = ss2d(x, per_path);
    for (int c = 0; c < 2; ++c) {
        double want = 0.0;
        for (int path = 0; path < 4; ++path) {
            std::vector<float> seq = {x.at(0, 0, 0, 0), x.at(0, 1, 0, 0)};
            const auto out = selective_scan_seq(seq, 1, per_path[path]);
            want += out[c];
        }
        CHECK(oracle::rel_err(y.at(0, c, 0, 0), want, 1e-5) < 1e-5);
    }
}

TEST_CASE("row-forward path on a single row equals the 1-D scan") {
    Rng rng(30);
    const auto pf = oracle::to_float_params(oracle::random_ssm_params(rng, 4, 5));
    Tensor x = oracle::random_tensor(rng, 1, 4, 1, 8);
    const Tensor via_2d = ss2d_single_path(x, pf, ScanPath::row_forward);
    const Tensor via_1d = selective_scan(x, pf);
    for (std::size_t i = 0; i < via_2d.numel(); ++i) CHECK(via_2d[i] == via_1d[i]);

    // oracle equivalence in double
    auto pd = oracle::random_ssm_params(rng, 4, 5);
    const auto pfd = oracle::to_float_params(pd);
    std::vector<double> xd(static_cast<std::size_t>(8) * 4);
    for (int t = 0; t < 8; ++t)
        for (int c = 0; c < 4; ++c)
            xd[static_cast<std::size_t>(t) * 4 + c] = x.at(0, c, 0, t);
    const auto want = oracle::scan_recurrence_ref(xd, 8, pd);
    const Tensor got = ss2d_single_path(x, pfd, ScanPath::row_forward);
    for (int t = 0; t < 8; ++t)
        for (int c = 0; c < 4; ++c)
            CHECK(oracle::rel_err(got.at(0, c, 0, t),
                                  want[static_cast<std::size_t>(t) * 4 + c], 1.0) < 1e-5);
}

TEST_CASE("per-path causality: later-in-path perturbations do not leak back") {
    Rng rng(31);
    for (int path = 0; path < 4; ++path) {
        const auto pf = oracle::to_float_params(oracle::random_ssm_params(rng, 2, 4));
        Tensor x = oracle::random_tensor(rng, 1, 2, 5, 6);
        const auto order = scan_path_order(static_cast<ScanPath>(path), 5, 6);
        const Tensor base = ss2d_single_path(x, pf, static_cast<ScanPath>(path));
        const std::size_t t_perturb = order.size() - 1;  // last site in path order
        Tensor x2 = x;
        const int site = order[t_perturb];
        for (int c = 0; c < 2; ++c) x2.data()[c * 30 + site] += 2.0f;
        const Tensor moved = ss2d_single_path(x2, pf, static_cast<ScanPath>(path));
        for (std::size_t t = 0; t + 1 < order.size(); ++t)
            for (int c = 0; c < 2; ++c)
                CHECK(base.data()[c * 30 + order[t]] == moved.data()[c * 30 + order[t]]);
    }
}

TEST_CASE("vss_block with zero weights is the identity") {
    const int C = 6;
    VssWeights w;
    w.ln_gain = Tensor(1, C, 1, 1);
    w.ln_bias = Tensor(1, C, 1, 1);
    w.in_w = Tensor(C, C, 1, 1);
    w.in_b = Tensor(1, C, 1, 1);
    w.dw_w = Tensor(C, 1, 3, 3);
    w.dw_b = Tensor(1, C, 1, 1);
    for (auto& p : w.ss2d) {
        p.channels = C;
        p.state_dim = 2;
        p.a.assign(C * 2, -1.0f);  // A must stay negative; everything else zero
        p.b_proj.assign(C * 2, 0.0f);
        p.c_proj.assign(C * 2, 0.0f);
        p.dt_proj.assign(C, 0.0f);
        p.dt_scale.assign(C, 0.0f);
        p.dt_bias.assign(C, 0.0f);
        p.d_skip.assign(C, 0.0f);
    }
    w.ss2d_ln_gain = Tensor(1, C, 1, 1);
    w.ss2d_ln_bias = Tensor(1, C, 1, 1);
    w.gate_w = Tensor(C, C, 1, 1);
    w.gate_b = Tensor(1, C, 1, 1);
    w.out_w = Tensor(C, C, 1, 1);
    w.out_b = Tensor(1, C, 1, 1);

    Rng rng(32);
    Tensor x = oracle::random_tensor(rng, 1, C, 5, 7);
    const Tensor y = vss_block(x, w);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("vss_block preserves shape and produces finite non-trivial output") {
    Rng rng(33);
    const int C = 8;
    VssWeights w;
    const auto rnd = [&](int a, int b, int c, int d) {
        return oracle::random_tensor(rng, a, b, c, d, -0.3f, 0.3f);
    };
    w.ln_gain = Tensor::full(1, C, 1, 1, 1.0f);
    w.ln_bias = Tensor(1, C, 1, 1);
    w.in_w = rnd(C, C, 1, 1);
    w.in_b = rnd(1, C, 1, 1);
    w.dw_w = rnd(C, 1, 3, 3);
    w.dw_b = rnd(1, C, 1, 1);
    for (auto& p : w.ss2d) p = oracle::to_float_params(oracle::random_ssm_params(rng, C, 4));
    w.ss2d_ln_gain = Tensor::full(1, C, 1, 1, 1.0f);
    w.ss2d_ln_bias = Tensor(1, C, 1, 1);
    w.gate_w = rnd(C, C, 1, 1);
    w.gate_b = rnd(1, C, 1, 1);
    w.out_w = rnd(C, C, 1, 1);
    w.out_b = rnd(1, C, 1, 1);

    Tensor x = oracle::random_tensor(rng, 1, C, 16, 16);
    const Tensor y = vss_block(x, w);
    REQUIRE(y.shape() == x.shape());
    CHECK(y.all_finite());
    bool any_diff = false;
    for (std::size_t i = 0; i < y.numel(); ++i)
        if (y[i] != x[i]) any_diff = true;
    CHECK(any_diff);
}
