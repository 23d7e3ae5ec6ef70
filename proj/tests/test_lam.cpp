#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "polytrack/gradcheck.hpp"
#include "polytrack/lam.hpp"
#include "polytrack/rng.hpp"

using namespace polytrack;

namespace {

Mat random_mat(Rng& rng, int n, int c, double scale = 1.0) {
    Mat m(n, c);
    for (double& v : m.data) v = rng.jitter(scale);
    return m;
}

Mat shift_rows(const Mat& m, int s) {
    Mat out(m.n, m.c);
    for (int i = 0; i < m.n; ++i)
        for (int j = 0; j < m.c; ++j) out.at(i, j) = m.at((i + s) % m.n, j);
    return out;
}

ConvParams zero_conv(int k, int c_in, int c_out) {
    return {k, c_in, c_out,
            std::vector<double>(static_cast<std::size_t>(k) * c_out * c_in, 0.0),
            std::vector<double>(static_cast<std::size_t>(c_out), 0.0)};
}

AttnParams zero_attn(int c, int heads) {
    AttnParams p;
    p.c = c;
    p.heads = heads;
    p.wq = p.wk = p.wv = p.wo = Mat(c, c);
    p.bq = p.bk = p.bv = p.bo = std::vector<double>(static_cast<std::size_t>(c), 0.0);
    return p;
}

LstmParams zero_lstm(int c_in, int c_h) {
    LstmParams p;
    p.c_in = c_in;
    p.c_h = c_h;
    p.wx = Mat(c_in, 4 * c_h);
    p.wh = Mat(c_h, 4 * c_h);
    p.b.assign(static_cast<std::size_t>(4) * c_h, 0.0);
    return p;
}

}  // namespace

TEST_CASE("cyclic positional encoding hits the four cardinal values") {
    const int n = 16;
    const auto at = [&](int i) { return cyclic_positional_encoding(i, n); };
    CHECK(at(0).first == Catch::Approx(0.0).margin(1e-12));
    CHECK(at(0).second == Catch::Approx(1.0).margin(1e-12));
    CHECK(at(n / 4).first == Catch::Approx(1.0).margin(1e-12));
    CHECK(at(n / 4).second == Catch::Approx(0.0).margin(1e-12));
    CHECK(at(n / 2).first == Catch::Approx(0.0).margin(1e-12));
    CHECK(at(n / 2).second == Catch::Approx(-1.0).margin(1e-12));
    CHECK(at(3 * n / 4).first == Catch::Approx(-1.0).margin(1e-12));
    CHECK(at(3 * n / 4).second == Catch::Approx(0.0).margin(1e-12));
    CHECK(at(n).first == Catch::Approx(0.0).margin(1e-12));
    CHECK(at(n).second == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("circular convolution: identity kernel, wraparound, equivariance") {
    ConvParams id = zero_conv(3, 1, 1);
    id.wt(1, 0, 0) = 1.0;  // center tap only
    Rng rng(31);
    const Mat x = random_mat(rng, 5, 1);
    const Mat y = circular_conv(x, id);
    for (int i = 0; i < 5; ++i) CHECK(y.at(i, 0) == x.at(i, 0));

    // N=4, x=[1,0,0,0], kernel [1,2,3]: out_i = sum_d w_d x_{(i+d-1) mod 4}.
    ConvParams k = zero_conv(3, 1, 1);
    k.wt(0, 0, 0) = 1.0;
    k.wt(1, 0, 0) = 2.0;
    k.wt(2, 0, 0) = 3.0;
    Mat impulse(4, 1);
    impulse.at(0, 0) = 1.0;
    const Mat resp = circular_conv(impulse, k);
    CHECK(resp.at(0, 0) == 2.0);
    CHECK(resp.at(1, 0) == 1.0);
    CHECK(resp.at(2, 0) == 0.0);
    CHECK(resp.at(3, 0) == 3.0);

    ConvParams rc = zero_conv(3, 2, 2);
    Rng prng(32);
    for (double& v : rc.w) v = prng.jitter(1.0);
    for (double& v : rc.b) v = prng.jitter(1.0);
    const Mat x2 = random_mat(prng, 6, 2);
    const Mat shifted_out = circular_conv(shift_rows(x2, 2), rc);
    const Mat out_shifted = shift_rows(circular_conv(x2, rc), 2);
    CHECK(shifted_out.data == out_shifted.data);  // bit-exact
}

TEST_CASE("attention with identical rows averages to the common value row") {
    const int c = 4;
    AttnParams p = zero_attn(c, 2);
    for (int i = 0; i < c; ++i)
        p.wq.at(i, i) = p.wk.at(i, i) = p.wv.at(i, i) = p.wo.at(i, i) = 1.0;

    Mat x(3, c);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < c; ++j) x.at(i, j) = 0.1 * (j + 1);
    const Mat out = multi_head_attention(x, p);
    // Uniform attention over identical value rows returns that row;
    // the residual then doubles it.
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < c; ++j)
            CHECK(out.at(i, j) == Catch::Approx(2.0 * x.at(i, j)).margin(1e-12));
}

TEST_CASE("attention with one point reduces to the value projection") {
    const int c = 4;
    Rng rng(33);
    AttnParams p = zero_attn(c, 2);
    for (Mat* w : {&p.wq, &p.wk, &p.wv, &p.wo})
        for (double& v : w->data) v = rng.jitter(1.0);
    for (std::vector<double>* b : {&p.bq, &p.bk, &p.bv, &p.bo})
        for (double& v : *b) v = rng.jitter(1.0);

    const Mat x = random_mat(rng, 1, c);
    const Mat out = multi_head_attention(x, p);

    // With one key the softmax is 1, so ctx = v = x wv + bv, and the output
    // is x + ctx wo + bo regardless of the query/key projections.
    std::vector<double> v(c, 0.0), expect(c, 0.0);
    for (int j = 0; j < c; ++j) {
        v[j] = p.bv[j];
        for (int i = 0; i < c; ++i) v[j] += x.at(0, i) * p.wv.at(i, j);
    }
    for (int j = 0; j < c; ++j) {
        expect[j] = x.at(0, j) + p.bo[j];
        for (int i = 0; i < c; ++i) expect[j] += v[i] * p.wo.at(i, j);
    }
    for (int j = 0; j < c; ++j) CHECK(out.at(0, j) == Catch::Approx(expect[j]).margin(1e-12));
}

TEST_CASE("attention is cyclically equivariant bit-exactly") {
    Rng rng(34);
    const int c = 8;
    AttnParams p = zero_attn(c, 4);
    for (Mat* w : {&p.wq, &p.wk, &p.wv, &p.wo})
        for (double& v : w->data) v = rng.jitter(0.7);
    const Mat x = random_mat(rng, 10, c);
    for (int s : {1, 3, 7}) {
        const Mat a = multi_head_attention(shift_rows(x, s), p);
        const Mat b = shift_rows(multi_head_attention(x, p), s);
        CHECK(a.data == b.data);
    }
}

TEST_CASE("lstm_step with zero weights produces zero hidden and cell") {
    const LstmParams p = zero_lstm(3, 4);
    Rng rng(35);
    const Mat x = random_mat(rng, 5, 3);
    const LamState st = LamState::zeros(5, 4);
    const auto [h, next] = lstm_step(x, st, p);
    for (double v : h.data) CHECK(v == 0.0);
    for (double v : next.h.data) CHECK(v == 0.0);
    for (double v : next.c.data) CHECK(v == 0.0);
}

TEST_CASE("lstm cell growth is bounded by one per step") {
    Rng rng(36);
    LstmParams p = zero_lstm(4, 6);
    for (double& v : p.wx.data) v = rng.jitter(2.0);
    for (double& v : p.wh.data) v = rng.jitter(2.0);
    for (double& v : p.b) v = rng.jitter(2.0);
    LamState st = LamState::zeros(3, 6);
    for (int step = 0; step < 10; ++step) {
        const std::vector<double> prev_c = st.c.data;
        st = lstm_step(random_mat(rng, 3, 4, 3.0), st, p).second;
        for (std::size_t i = 0; i < prev_c.size(); ++i)
            CHECK(std::abs(st.c.data[i]) <= std::abs(prev_c[i]) + 1.0 + 1e-12);
    }
}

TEST_CASE("lstm is per-point: permuting rows permutes outputs") {
    Rng rng(37);
    LstmParams p = zero_lstm(4, 4);
    for (double& v : p.wx.data) v = rng.jitter(1.0);
    for (double& v : p.wh.data) v = rng.jitter(1.0);
    for (double& v : p.b) v = rng.jitter(1.0);
    const Mat x = random_mat(rng, 6, 4);
    LamState st = LamState::zeros(6, 4);
    st.h = random_mat(rng, 6, 4);
    st.c = random_mat(rng, 6, 4);

    LamState st_shift = st;
    st_shift.h = shift_rows(st.h, 2);
    st_shift.c = shift_rows(st.c, 2);
    const auto [h_plain, next_plain] = lstm_step(x, st, p);
    const auto [h_shift, next_shift] = lstm_step(shift_rows(x, 2), st_shift, p);
    CHECK(h_shift.data == shift_rows(h_plain, 2).data);
    CHECK(next_shift.c.data == shift_rows(next_plain.c, 2).data);
}

TEST_CASE("point feature sampling: centers, midpoints, clamping") {
    FrameImage plane(3, 2, 2);
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 3; ++x) {
            plane.at(x, y, 0) = x + 10.0 * y;
            plane.at(x, y, 1) = -1.0 * x;
        }
    PyramidLevel level{4, plane};  // stride 4: image coords divide by 4

    PointSet ps;
    ps.points = {{4, 4}, {2, 0}, {400, -13}};
    ps.visible.assign(3, 1);
    const Mat f = sample_point_features(level, ps);
    CHECK(f.at(0, 0) == 11.0);  // grid cell (1, 1)
    CHECK(f.at(1, 0) == 0.5);   // midway between (0,0) and (1,0)
    CHECK(f.at(2, 0) == 2.0);   // clamped to (2, 0)
    CHECK(f.at(2, 1) == -2.0);
}

TEST_CASE("lam_forward with zero parameters yields zero offsets") {
    const LamParams p = make_lam_params(6, 16, 2, 2);
    Rng rng(38);
    const Mat feats = random_mat(rng, 12, 6);
    PointSet ps;
    for (int i = 0; i < 12; ++i)
        ps.points.push_back({rng.uniform(0.0, 30.0), rng.uniform(0.0, 30.0)});
    ps.visible.assign(12, 1);
    const LamState st = LamState::zeros(12, 16);
    const LamOutput out = lam_forward(feats, ps, st, p);
    REQUIRE(out.offsets.n == 12);
    REQUIRE(out.offsets.c == 2);
    for (double v : out.offsets.data) CHECK(v == 0.0);
}

TEST_CASE("lam_forward is deterministic") {
    LamParams p = make_lam_params(4, 8, 2, 2);
    Rng rng(39);
    randomize(p, rng, 0.2);
    const Mat feats = random_mat(rng, 9, 4);
    PointSet ps;
    for (int i = 0; i < 9; ++i)
        ps.points.push_back({rng.uniform(0.0, 20.0), rng.uniform(0.0, 20.0)});
    ps.visible.assign(9, 1);

    const LamState st = LamState::zeros(9, 8);
    const LamOutput a = lam_forward(feats, ps, st, p);
    const LamOutput b = lam_forward(feats, ps, st, p);
    CHECK(a.offsets.data == b.offsets.data);
    CHECK(a.state.h.data == b.state.h.data);
}

TEST_CASE("lam_forward commutes with cyclic relabeling when encoding is off") {
    const int n = 12, ch = 16, c_feat = 5;
    LamParams p = make_lam_params(c_feat, ch, 3, 4);
    p.use_positional_encoding = false;
    Rng rng(40);
    randomize(p, rng, 0.3);

    const Mat feats = random_mat(rng, n, c_feat);
    PointSet ps;
    for (int i = 0; i < n; ++i)
        ps.points.push_back({rng.uniform(0.0, 60.0), rng.uniform(0.0, 60.0)});
    ps.visible.assign(n, 1);
    const Mat h0 = random_mat(rng, n, ch, 0.5), c0 = random_mat(rng, n, ch, 0.5);

    LamState st = LamState::zeros(n, ch);
    st.h = h0;
    st.c = c0;
    const LamOutput plain = lam_forward(feats, ps, st, p);

    for (int s : {1, 5, 11}) {
        PointSet ps_s;
        for (int i = 0; i < n; ++i) ps_s.points.push_back(ps.points[(i + s) % n]);
        ps_s.visible.assign(n, 1);
        LamState st_s = LamState::zeros(n, ch);
        st_s.h = shift_rows(h0, s);
        st_s.c = shift_rows(c0, s);
        const LamOutput rel = lam_forward(shift_rows(feats, s), ps_s, st_s, p);

        CHECK(rel.offsets.data == shift_rows(plain.offsets, s).data);  // bit-exact
        CHECK(rel.state.h.data == shift_rows(plain.state.h, s).data);
        CHECK(rel.state.c.data == shift_rows(plain.state.c, s).data);
    }
}

TEST_CASE("manual backprop matches finite differences on a tiny network") {
    const GradCheckReport r = check_lam_backprop();
    INFO("max_rel_err=" << r.max_rel_err);
    CHECK(r.pass);
}

TEST_CASE("parameter visitor covers every tensor exactly once") {
    LamParams p = make_lam_params(4, 8, 2, 2);
    std::size_t total = 0;
    for_each_tensor(p, [&](const std::string& name, std::vector<double>& v,
                           const std::vector<std::size_t>& shape) {
        CHECK(!name.empty());
        std::size_t prod = 1;
        for (std::size_t d : shape) prod *= d;
        CHECK(prod == v.size());
        total += v.size();
    });
    // Mutating through the visitor must reach the live tensors.
    for_each_tensor(p, [&](const std::string&, std::vector<double>& v,
                           const std::vector<std::size_t>&) {
        for (double& x : v) x = 1.0;
    });
    CHECK(p.head.b[0] == 1.0);
    CHECK(p.blocks[0].conv1.w[0] == 1.0);
    CHECK(total > 0);
}
