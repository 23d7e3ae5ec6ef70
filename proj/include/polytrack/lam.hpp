#pragma once

// Local alignment network: a small point-sequence model mapping per-point
// features to per-point displacement offsets. Stages: cyclic positional
// encoding, stacked blocks of [circular conv x2 + multi-head attention],
// 1x1 fusion of all block outputs, a global max-pooled descriptor
// broadcast back to every point, a per-point LSTM carrying temporal state,
// and a linear prediction head. Everything runs on plain doubles with a
// hand-written backward pass.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "polytrack/errors.hpp"
#include "polytrack/geometry.hpp"
#include "polytrack/rng.hpp"

namespace polytrack {

// Dense row-major matrix. Doubles as the N-points-by-C-channels feature
// block and as weight storage.
struct Mat {
    int n = 0;  // rows
    int c = 0;  // cols
    std::vector<double> data;

    Mat() = default;
    Mat(int rows, int cols) : n(rows), c(cols), data(static_cast<std::size_t>(rows) * cols, 0.0) {}

    double& at(int i, int j) { return data[static_cast<std::size_t>(i) * c + j]; }
    double at(int i, int j) const { return data[static_cast<std::size_t>(i) * c + j]; }
};

using PointFeatures = Mat;

// One scale of the feature stack handed to local refinement.
struct PyramidLevel {
    int stride = 1;
    FrameImage plane;
};

struct FeaturePyramid {
    std::vector<PyramidLevel> levels;
    int input_width = 0;
    int input_height = 0;
};

// --- parameter containers ---------------------------------------------

// Kernel taps run d = -(k-1)/2 .. +(k-1)/2; w is [k][c_out][c_in] flat.
struct ConvParams {
    int k = 3, c_in = 0, c_out = 0;
    std::vector<double> w;
    std::vector<double> b;

    double wt(int d, int co, int ci) const {
        return w[(static_cast<std::size_t>(d) * c_out + co) * c_in + ci];
    }
    double& wt(int d, int co, int ci) {
        return w[(static_cast<std::size_t>(d) * c_out + co) * c_in + ci];
    }
};

struct AttnParams {
    int c = 0, heads = 1;
    Mat wq, wk, wv, wo;  // each c x c
    std::vector<double> bq, bk, bv, bo;
};

struct BlockParams {
    ConvParams conv1, conv2;
    AttnParams attn;
};

// Gate order along the 4*c_h axis: input, forget, candidate, output.
struct LstmParams {
    int c_in = 0, c_h = 0;
    Mat wx;  // c_in x 4c_h
    Mat wh;  // c_h x 4c_h
    std::vector<double> b;
};

struct DenseParams {
    Mat w;
    std::vector<double> b;
};

struct LamParams {
    int c_in = 0;       // block-1 input channels (sampled features + 2 encoding channels)
    int c_hidden = 64;
    int heads = 4;
    int kernel = 3;
    bool use_positional_encoding = true;
    std::vector<BlockParams> blocks;
    DenseParams fusion;  // (blocks * c_hidden) x c_hidden
    LstmParams lstm;     // input 2 * c_hidden
    DenseParams head;    // c_hidden x 2
};

// Per-point LSTM state for one tracked object; zero at sequence start.
struct LamState {
    Mat h, c;  // each N x c_hidden

    static LamState zeros(int n, int c_hidden) {
        LamState s;
        s.h = Mat(n, c_hidden);
        s.c = Mat(n, c_hidden);
        return s;
    }
};

inline LamParams make_lam_params(int feature_channels, int c_hidden = 64, int n_blocks = 8,
                                 int heads = 4, int kernel = 3,
                                 bool use_positional_encoding = true) {
    if (kernel % 2 == 0) throw ShapeMismatch("make_lam_params: kernel width must be odd");
    if (c_hidden % heads != 0)
        throw ShapeMismatch("make_lam_params: c_hidden must be divisible by heads");
    LamParams p;
    p.c_in = feature_channels + 2;
    p.c_hidden = c_hidden;
    p.heads = heads;
    p.kernel = kernel;
    p.use_positional_encoding = use_positional_encoding;
    p.blocks.resize(static_cast<std::size_t>(n_blocks));
    for (int b = 0; b < n_blocks; ++b) {
        const int cin = b == 0 ? p.c_in : c_hidden;
        auto& blk = p.blocks[static_cast<std::size_t>(b)];
        blk.conv1 = {kernel, cin, c_hidden,
                     std::vector<double>(static_cast<std::size_t>(kernel) * c_hidden * cin, 0.0),
                     std::vector<double>(static_cast<std::size_t>(c_hidden), 0.0)};
        blk.conv2 = {kernel, c_hidden, c_hidden,
                     std::vector<double>(static_cast<std::size_t>(kernel) * c_hidden * c_hidden, 0.0),
                     std::vector<double>(static_cast<std::size_t>(c_hidden), 0.0)};
        blk.attn.c = c_hidden;
        blk.attn.heads = heads;
        blk.attn.wq = Mat(c_hidden, c_hidden);
        blk.attn.wk = Mat(c_hidden, c_hidden);
        blk.attn.wv = Mat(c_hidden, c_hidden);
        blk.attn.wo = Mat(c_hidden, c_hidden);
        blk.attn.bq.assign(static_cast<std::size_t>(c_hidden), 0.0);
        blk.attn.bk.assign(static_cast<std::size_t>(c_hidden), 0.0);
        blk.attn.bv.assign(static_cast<std::size_t>(c_hidden), 0.0);
        blk.attn.bo.assign(static_cast<std::size_t>(c_hidden), 0.0);
    }
    p.fusion.w = Mat(n_blocks * c_hidden, c_hidden);
    p.fusion.b.assign(static_cast<std::size_t>(c_hidden), 0.0);
    p.lstm.c_in = 2 * c_hidden;
    p.lstm.c_h = c_hidden;
    p.lstm.wx = Mat(2 * c_hidden, 4 * c_hidden);
    p.lstm.wh = Mat(c_hidden, 4 * c_hidden);
    p.lstm.b.assign(static_cast<std::size_t>(4) * c_hidden, 0.0);
    p.head.w = Mat(c_hidden, 2);
    p.head.b.assign(2, 0.0);
    return p;
}

// Visits every tensor as (name, flat values, shape). Visit order is fixed;
// the checkpoint format and optimizers rely on it.
template <class P, class F>
void for_each_tensor(P&& params, F&& f) {
    for (std::size_t b = 0; b < params.blocks.size(); ++b) {
        auto& blk = params.blocks[b];
        const std::string pre = "block" + std::to_string(b) + ".";
        f(pre + "conv1.w", blk.conv1.w,
          std::vector<std::size_t>{static_cast<std::size_t>(blk.conv1.k),
                                   static_cast<std::size_t>(blk.conv1.c_out),
                                   static_cast<std::size_t>(blk.conv1.c_in)});
        f(pre + "conv1.b", blk.conv1.b,
          std::vector<std::size_t>{blk.conv1.b.size()});
        f(pre + "conv2.w", blk.conv2.w,
          std::vector<std::size_t>{static_cast<std::size_t>(blk.conv2.k),
                                   static_cast<std::size_t>(blk.conv2.c_out),
                                   static_cast<std::size_t>(blk.conv2.c_in)});
        f(pre + "conv2.b", blk.conv2.b,
          std::vector<std::size_t>{blk.conv2.b.size()});
        auto mat = [&](const std::string& name, auto& m) {
            f(pre + name, m.data,
              std::vector<std::size_t>{static_cast<std::size_t>(m.n), static_cast<std::size_t>(m.c)});
        };
        mat("attn.wq", blk.attn.wq);
        f(pre + "attn.bq", blk.attn.bq, std::vector<std::size_t>{blk.attn.bq.size()});
        mat("attn.wk", blk.attn.wk);
        f(pre + "attn.bk", blk.attn.bk, std::vector<std::size_t>{blk.attn.bk.size()});
        mat("attn.wv", blk.attn.wv);
        f(pre + "attn.bv", blk.attn.bv, std::vector<std::size_t>{blk.attn.bv.size()});
        mat("attn.wo", blk.attn.wo);
        f(pre + "attn.bo", blk.attn.bo, std::vector<std::size_t>{blk.attn.bo.size()});
    }
    f("fusion.w", params.fusion.w.data,
      std::vector<std::size_t>{static_cast<std::size_t>(params.fusion.w.n),
                               static_cast<std::size_t>(params.fusion.w.c)});
    f("fusion.b", params.fusion.b, std::vector<std::size_t>{params.fusion.b.size()});
    f("lstm.wx", params.lstm.wx.data,
      std::vector<std::size_t>{static_cast<std::size_t>(params.lstm.wx.n),
                               static_cast<std::size_t>(params.lstm.wx.c)});
    f("lstm.wh", params.lstm.wh.data,
      std::vector<std::size_t>{static_cast<std::size_t>(params.lstm.wh.n),
                               static_cast<std::size_t>(params.lstm.wh.c)});
    f("lstm.b", params.lstm.b, std::vector<std::size_t>{params.lstm.b.size()});
    f("head.w", params.head.w.data,
      std::vector<std::size_t>{static_cast<std::size_t>(params.head.w.n),
                               static_cast<std::size_t>(params.head.w.c)});
    f("head.b", params.head.b, std::vector<std::size_t>{params.head.b.size()});
}

inline LamParams zeros_like(const LamParams& p) {
    LamParams z = p;
    for_each_tensor(z, [](const std::string&, std::vector<double>& v,
                          const std::vector<std::size_t>&) {
        std::fill(v.begin(), v.end(), 0.0);
    });
    return z;
}

inline void randomize(LamParams& p, Rng& rng, double scale) {
    for_each_tensor(p, [&](const std::string&, std::vector<double>& v,
                           const std::vector<std::size_t>&) {
        for (double& x : v) x = rng.uniform(-scale, scale);
    });
}

// --- elementary ops ------------------------------------------------------

// [sin(2*pi*i/n), cos(2*pi*i/n)]: a 2-channel code that is periodic in the
// point index, so index n maps back onto index 0.
inline std::pair<double, double> cyclic_positional_encoding(std::ptrdiff_t i, std::size_t n) {
    if (n == 0) throw ShapeMismatch("cyclic_positional_encoding: n must be >= 1");
    const double phase = 2.0 * 3.141592653589793238462643383279502884 *
                         static_cast<double>(i) / static_cast<double>(n);
    return {std::sin(phase), std::cos(phase)};
}

// out_i = sum_d W_d x_{(i+d) mod N} + b, taps d = -(k-1)/2 .. +(k-1)/2.
inline Mat circular_conv(const Mat& x, const ConvParams& p) {
    if (p.k % 2 == 0) throw ShapeMismatch("circular_conv: kernel width must be odd");
    if (x.c != p.c_in) throw ShapeMismatch("circular_conv: channel count mismatch");
    const int n = x.n, r = (p.k - 1) / 2;
    Mat out(n, p.c_out);
    for (int i = 0; i < n; ++i) {
        for (int co = 0; co < p.c_out; ++co) {
            double acc = p.b[static_cast<std::size_t>(co)];
            for (int d = 0; d < p.k; ++d) {
                const int j = ((i + d - r) % n + n) % n;
                for (int ci = 0; ci < p.c_in; ++ci) acc += p.wt(d, co, ci) * x.at(j, ci);
            }
            out.at(i, co) = acc;
        }
    }
    return out;
}

namespace detail {

inline Mat matmul(const Mat& a, const Mat& b) {
    Mat out(a.n, b.c);
    for (int i = 0; i < a.n; ++i)
        for (int k = 0; k < a.c; ++k) {
            const double av = a.at(i, k);
            if (av == 0.0) continue;
            for (int j = 0; j < b.c; ++j) out.at(i, j) += av * b.at(k, j);
        }
    return out;
}

// aT * b with a stored untransposed (a: k x n, b: k x m -> n x m).
inline Mat matmul_tn(const Mat& a, const Mat& b) {
    Mat out(a.c, b.c);
    for (int k = 0; k < a.n; ++k)
        for (int i = 0; i < a.c; ++i) {
            const double av = a.at(k, i);
            if (av == 0.0) continue;
            for (int j = 0; j < b.c; ++j) out.at(i, j) += av * b.at(k, j);
        }
    return out;
}

// a * bT (a: n x k, b: m x k -> n x m).
inline Mat matmul_nt(const Mat& a, const Mat& b) {
    Mat out(a.n, b.n);
    for (int i = 0; i < a.n; ++i)
        for (int j = 0; j < b.n; ++j) {
            double acc = 0.0;
            for (int k = 0; k < a.c; ++k) acc += a.at(i, k) * b.at(j, k);
            out.at(i, j) = acc;
        }
    return out;
}

inline void add_bias(Mat& m, const std::vector<double>& b) {
    for (int i = 0; i < m.n; ++i)
        for (int j = 0; j < m.c; ++j) m.at(i, j) += b[static_cast<std::size_t>(j)];
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Intermediates needed to differentiate one attention application.
struct AttnTape {
    Mat q, k, v;             // projections, each N x C
    std::vector<Mat> a;      // per-head attention weights, each N x N
    Mat ctx;                 // concatenated head outputs before W_o
};

// Scaled dot-product attention over the N points with residual connection.
// All row reductions iterate keys in the order j = (i+m) mod N so that a
// cyclic relabeling of the input replays the exact same floating-point
// operations per row, keeping the output bit-identical under relabeling.
inline Mat attn_forward(const Mat& x, const AttnParams& p, AttnTape* tape) {
    if (x.c != p.c) throw ShapeMismatch("multi_head_attention: channel count mismatch");
    if (p.c % p.heads != 0)
        throw ShapeMismatch("multi_head_attention: channels not divisible by heads");
    const int n = x.n, c = p.c, heads = p.heads, dh = c / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Mat q = matmul(x, p.wq);
    add_bias(q, p.bq);
    Mat k = matmul(x, p.wk);
    add_bias(k, p.bk);
    Mat v = matmul(x, p.wv);
    add_bias(v, p.bv);

    Mat ctx(n, c);
    std::vector<Mat> weights;
    if (tape) weights.assign(static_cast<std::size_t>(heads), Mat(n, n));

    std::vector<double> logits(static_cast<std::size_t>(n));
    std::vector<double> expv(static_cast<std::size_t>(n));
    for (int h = 0; h < heads; ++h) {
        const int c0 = h * dh;
        for (int i = 0; i < n; ++i) {
            for (int m = 0; m < n; ++m) {
                const int j = (i + m) % n;
                double dot = 0.0;
                for (int d = 0; d < dh; ++d) dot += q.at(i, c0 + d) * k.at(j, c0 + d);
                logits[static_cast<std::size_t>(m)] = dot * scale;
            }
            double mx = logits[0];
            for (int m = 1; m < n; ++m) mx = std::max(mx, logits[static_cast<std::size_t>(m)]);
            double den = 0.0;
            for (int m = 0; m < n; ++m) {
                expv[static_cast<std::size_t>(m)] = std::exp(logits[static_cast<std::size_t>(m)] - mx);
                den += expv[static_cast<std::size_t>(m)];
            }
            for (int d = 0; d < dh; ++d) {
                double acc = 0.0;
                for (int m = 0; m < n; ++m) acc += expv[static_cast<std::size_t>(m)] * v.at((i + m) % n, c0 + d);
                ctx.at(i, c0 + d) = acc / den;
            }
            if (tape)
                for (int m = 0; m < n; ++m)
                    weights[static_cast<std::size_t>(h)].at(i, (i + m) % n) =
                        expv[static_cast<std::size_t>(m)] / den;
        }
    }

    Mat out = matmul(ctx, p.wo);
    add_bias(out, p.bo);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) out.at(i, j) += x.at(i, j);  // residual

    if (tape) {
        tape->q = std::move(q);
        tape->k = std::move(k);
        tape->v = std::move(v);
        tape->a = std::move(weights);
        tape->ctx = std::move(ctx);
    }
    return out;
}

}  // namespace detail

inline Mat multi_head_attention(const Mat& x, const AttnParams& p) {
    return detail::attn_forward(x, p, nullptr);
}

namespace detail {

struct LstmTape {
    Mat gates;   // activated [i | f | g | o], N x 4c_h
    Mat tanh_c;  // tanh of the new cell
};

inline void lstm_forward(const Mat& x, const Mat& h_prev, const Mat& c_prev,
                         const LstmParams& p, Mat& h_new, Mat& c_new, LstmTape* tape) {
    if (x.c != p.c_in || h_prev.c != p.c_h || c_prev.c != p.c_h || x.n != h_prev.n ||
        x.n != c_prev.n)
        throw ShapeMismatch("lstm_step: shape mismatch");
    const int n = x.n, ch = p.c_h;

    Mat z = matmul(x, p.wx);
    const Mat zh = matmul(h_prev, p.wh);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < 4 * ch; ++j)
            z.at(i, j) += zh.at(i, j) + p.b[static_cast<std::size_t>(j)];

    Mat gates(n, 4 * ch);
    h_new = Mat(n, ch);
    c_new = Mat(n, ch);
    Mat tanh_c(n, ch);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < ch; ++j) {
            const double gi = sigmoid(z.at(i, j));
            const double gf = sigmoid(z.at(i, ch + j));
            const double gg = std::tanh(z.at(i, 2 * ch + j));
            const double go = sigmoid(z.at(i, 3 * ch + j));
            gates.at(i, j) = gi;
            gates.at(i, ch + j) = gf;
            gates.at(i, 2 * ch + j) = gg;
            gates.at(i, 3 * ch + j) = go;
            const double cc = gf * c_prev.at(i, j) + gi * gg;
            c_new.at(i, j) = cc;
            tanh_c.at(i, j) = std::tanh(cc);
            h_new.at(i, j) = go * tanh_c.at(i, j);
        }
    }
    if (tape) {
        tape->gates = std::move(gates);
        tape->tanh_c = std::move(tanh_c);
    }
}

}  // namespace detail

// One LSTM cell update applied independently per point (shared weights).
inline std::pair<Mat, LamState> lstm_step(const Mat& x, const LamState& state,
                                          const LstmParams& p) {
    LamState next;
    detail::lstm_forward(x, state.h, state.c, p, next.h, next.c, nullptr);
    return {next.h, std::move(next)};
}

// Bilinear feature lookup at (x/stride, y/stride); coordinates clamp to the
// plane, so far-out points read the nearest border cell.
inline Mat sample_point_features(const PyramidLevel& level, const PointSet& ps) {
    const int n = static_cast<int>(ps.size());
    const int ch = level.plane.channels;
    Mat out(n, ch);
    for (int i = 0; i < n; ++i) {
        const double sx = ps.points[static_cast<std::size_t>(i)].x / level.stride;
        const double sy = ps.points[static_cast<std::size_t>(i)].y / level.stride;
        for (int c = 0; c < ch; ++c) out.at(i, c) = detail::bilinear(level.plane, sx, sy, c);
    }
    return out;
}

// --- assembled forward/backward ------------------------------------------

namespace detail {

struct BlockTape {
    Mat x_in;
    Mat a1, u;   // conv1 pre-activation; relu(a1) (+ x_in when widths match)
    Mat a2, v;   // conv2 pre-activation; relu(a2) + u
    AttnTape attn;
    Mat out;
};

}  // namespace detail

// Everything lam_backward needs to replay the forward pass.
struct LamTape {
    Mat x0;                       // input features with encoding channels
    std::vector<detail::BlockTape> blocks;
    Mat concat;                   // block outputs side by side, N x (B*c_h)
    Mat fz, g;                    // fusion pre-activation and relu output
    std::vector<int> argmax;      // row index of the per-channel max of g
    Mat hcat;                     // [g | broadcast max], N x 2c_h
    Mat h_prev, c_prev;           // incoming LSTM state
    detail::LstmTape lstm;
    Mat h_new, c_new;
};

struct LamOutput {
    Mat offsets;  // N x 2
    LamState state;
};

// Full forward pass. feats carries the sampled point features (without the
// encoding channels); ps supplies N for validation. When tape is non-null
// every intermediate is recorded for lam_backward.
inline LamOutput lam_forward(const Mat& feats, const PointSet& ps, const LamState& state,
                             const LamParams& params, LamTape* tape = nullptr) {
    const int n = feats.n;
    if (static_cast<std::size_t>(n) != ps.size())
        throw ShapeMismatch("lam_forward: feature rows != point count");
    if (feats.c + 2 != params.c_in)
        throw ShapeMismatch("lam_forward: feature channels + 2 != params.c_in");
    if (params.blocks.empty()) throw ShapeMismatch("lam_forward: no blocks");
    if (state.h.n != n || state.h.c != params.c_hidden || state.c.n != n ||
        state.c.c != params.c_hidden)
        throw ShapeMismatch("lam_forward: state shape mismatch");

    const int ch = params.c_hidden;
    const int nb = static_cast<int>(params.blocks.size());

    // Encoding channels are appended even when disabled (as zeros) so the
    // parameter shapes do not depend on the flag.
    Mat x0(n, params.c_in);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < feats.c; ++j) x0.at(i, j) = feats.at(i, j);
        if (params.use_positional_encoding) {
            const auto [s, c] = cyclic_positional_encoding(i, static_cast<std::size_t>(n));
            x0.at(i, feats.c) = s;
            x0.at(i, feats.c + 1) = c;
        }
    }

    if (tape) {
        tape->blocks.assign(static_cast<std::size_t>(nb), {});
        tape->x0 = x0;
    }

    Mat concat(n, nb * ch);
    Mat x = std::move(x0);
    for (int b = 0; b < nb; ++b) {
        const BlockParams& blk = params.blocks[static_cast<std::size_t>(b)];
        const bool residual1 = x.c == blk.conv1.c_out;

        Mat a1 = circular_conv(x, blk.conv1);
        Mat u(n, ch);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < ch; ++j)
                u.at(i, j) = std::max(a1.at(i, j), 0.0) + (residual1 ? x.at(i, j) : 0.0);

        Mat a2 = circular_conv(u, blk.conv2);
        Mat v(n, ch);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < ch; ++j) v.at(i, j) = std::max(a2.at(i, j), 0.0) + u.at(i, j);

        detail::BlockTape* bt = tape ? &tape->blocks[static_cast<std::size_t>(b)] : nullptr;
        Mat w = detail::attn_forward(v, blk.attn, bt ? &bt->attn : nullptr);

        for (int i = 0; i < n; ++i)
            for (int j = 0; j < ch; ++j) concat.at(i, b * ch + j) = w.at(i, j);

        if (bt) {
            bt->x_in = std::move(x);
            bt->a1 = std::move(a1);
            bt->u = std::move(u);
            bt->a2 = std::move(a2);
            bt->v = std::move(v);
            bt->out = w;
        }
        x = std::move(w);
    }

    Mat fz = detail::matmul(concat, params.fusion.w);
    detail::add_bias(fz, params.fusion.b);
    Mat g(n, ch);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < ch; ++j) g.at(i, j) = std::max(fz.at(i, j), 0.0);

    // Global descriptor: per-channel max over points, first row wins ties.
    std::vector<int> argmax(static_cast<std::size_t>(ch), 0);
    for (int j = 0; j < ch; ++j)
        for (int i = 1; i < n; ++i)
            if (g.at(i, j) > g.at(argmax[static_cast<std::size_t>(j)], j))
                argmax[static_cast<std::size_t>(j)] = i;

    Mat hcat(n, 2 * ch);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < ch; ++j) {
            hcat.at(i, j) = g.at(i, j);
            hcat.at(i, ch + j) = g.at(argmax[static_cast<std::size_t>(j)], j);
        }

    LamOutput out;
    detail::LstmTape lt;
    detail::lstm_forward(hcat, state.h, state.c, params.lstm, out.state.h, out.state.c,
                         tape ? &lt : nullptr);

    out.offsets = detail::matmul(out.state.h, params.head.w);
    detail::add_bias(out.offsets, params.head.b);

    if (tape) {
        tape->concat = std::move(concat);
        tape->fz = std::move(fz);
        tape->g = std::move(g);
        tape->argmax = std::move(argmax);
        tape->hcat = std::move(hcat);
        tape->h_prev = state.h;
        tape->c_prev = state.c;
        tape->lstm = std::move(lt);
        tape->h_new = out.state.h;
        tape->c_new = out.state.c;
    }
    return out;
}

namespace detail {

// Accumulates conv gradients; returns gradient w.r.t. the conv input.
inline Mat conv_backward(const Mat& x, const ConvParams& p, const Mat& d_out,
                         ConvParams& grad) {
    const int n = x.n, r = (p.k - 1) / 2;
    Mat d_x(n, p.c_in);
    for (int i = 0; i < n; ++i) {
        for (int co = 0; co < p.c_out; ++co) {
            const double go = d_out.at(i, co);
            if (go == 0.0) continue;
            grad.b[static_cast<std::size_t>(co)] += go;
            for (int d = 0; d < p.k; ++d) {
                const int j = ((i + d - r) % n + n) % n;
                for (int ci = 0; ci < p.c_in; ++ci) {
                    grad.wt(d, co, ci) += go * x.at(j, ci);
                    d_x.at(j, ci) += go * p.wt(d, co, ci);
                }
            }
        }
    }
    return d_x;
}

// Accumulates attention gradients; returns gradient w.r.t. the input
// (includes the residual path).
inline Mat attn_backward(const Mat& x, const AttnParams& p, const AttnTape& t,
                         const Mat& d_out, AttnParams& grad) {
    const int n = x.n, c = p.c, heads = p.heads, dh = c / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    // out = x + ctx * wo + bo
    Mat d_ctx = matmul_nt(d_out, p.wo);
    {
        Mat d_wo = matmul_tn(t.ctx, d_out);
        for (std::size_t i = 0; i < d_wo.data.size(); ++i) grad.wo.data[i] += d_wo.data[i];
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j) grad.bo[static_cast<std::size_t>(j)] += d_out.at(i, j);
    }

    Mat d_q(n, c), d_k(n, c), d_v(n, c);
    for (int h = 0; h < heads; ++h) {
        const int c0 = h * dh;
        const Mat& a = t.a[static_cast<std::size_t>(h)];
        for (int i = 0; i < n; ++i) {
            // d_a[i][j] = dot(d_ctx_head[i], v_head[j]); softmax backward.
            double rowdot = 0.0;
            std::vector<double> da(static_cast<std::size_t>(n));
            for (int j = 0; j < n; ++j) {
                double acc = 0.0;
                for (int d = 0; d < dh; ++d) acc += d_ctx.at(i, c0 + d) * t.v.at(j, c0 + d);
                da[static_cast<std::size_t>(j)] = acc;
                rowdot += acc * a.at(i, j);
            }
            for (int j = 0; j < n; ++j) {
                const double ds = a.at(i, j) * (da[static_cast<std::size_t>(j)] - rowdot);
                if (ds == 0.0) continue;
                for (int d = 0; d < dh; ++d) {
                    d_q.at(i, c0 + d) += ds * scale * t.k.at(j, c0 + d);
                    d_k.at(j, c0 + d) += ds * scale * t.q.at(i, c0 + d);
                }
            }
            // d_v_head[j] += a[i][j] * d_ctx_head[i]
            for (int j = 0; j < n; ++j) {
                const double w = a.at(i, j);
                if (w == 0.0) continue;
                for (int d = 0; d < dh; ++d) d_v.at(j, c0 + d) += w * d_ctx.at(i, c0 + d);
            }
        }
    }

    Mat d_x = d_out;  // residual path
    auto proj_backward = [&](const Mat& d_p, const Mat& w, Mat& w_grad,
                             std::vector<double>& b_grad) {
        Mat dw = matmul_tn(x, d_p);
        for (std::size_t i = 0; i < dw.data.size(); ++i) w_grad.data[i] += dw.data[i];
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j) b_grad[static_cast<std::size_t>(j)] += d_p.at(i, j);
        const Mat dx = matmul_nt(d_p, w);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j) d_x.at(i, j) += dx.at(i, j);
    };
    proj_backward(d_q, p.wq, grad.wq, grad.bq);
    proj_backward(d_k, p.wk, grad.wk, grad.bk);
    proj_backward(d_v, p.wv, grad.wv, grad.bv);
    return d_x;
}

}  // namespace detail

// Backpropagates d_offsets (N x 2) through the recorded forward pass,
// accumulating into grad (same shapes as params; see zeros_like). The
// incoming LSTM state is treated as a constant, so time is truncated at
// one step. Returns the gradient w.r.t. the sampled features.
inline Mat lam_backward(const LamTape& tape, const LamParams& params, const Mat& d_offsets,
                        LamParams& grad) {
    const int n = tape.h_new.n;
    const int ch = params.c_hidden;
    const int nb = static_cast<int>(params.blocks.size());

    // offsets = h_new * head.w + head.b
    {
        Mat dw = detail::matmul_tn(tape.h_new, d_offsets);
        for (std::size_t i = 0; i < dw.data.size(); ++i) grad.head.w.data[i] += dw.data[i];
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < 2; ++j) grad.head.b[static_cast<std::size_t>(j)] += d_offsets.at(i, j);
    }
    Mat d_h = detail::matmul_nt(d_offsets, params.head.w);

    // LSTM backward.
    Mat d_z(n, 4 * ch);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < ch; ++j) {
            const double gi = tape.lstm.gates.at(i, j);
            const double gf = tape.lstm.gates.at(i, ch + j);
            const double gg = tape.lstm.gates.at(i, 2 * ch + j);
            const double go = tape.lstm.gates.at(i, 3 * ch + j);
            const double tc = tape.lstm.tanh_c.at(i, j);
            const double dh_ij = d_h.at(i, j);
            const double d_o = dh_ij * tc;
            const double d_c = dh_ij * go * (1.0 - tc * tc);
            const double d_f = d_c * tape.c_prev.at(i, j);
            const double d_i = d_c * gg;
            const double d_g = d_c * gi;
            d_z.at(i, j) = d_i * gi * (1.0 - gi);
            d_z.at(i, ch + j) = d_f * gf * (1.0 - gf);
            d_z.at(i, 2 * ch + j) = d_g * (1.0 - gg * gg);
            d_z.at(i, 3 * ch + j) = d_o * go * (1.0 - go);
        }
    }
    {
        Mat dwx = detail::matmul_tn(tape.hcat, d_z);
        for (std::size_t i = 0; i < dwx.data.size(); ++i) grad.lstm.wx.data[i] += dwx.data[i];
        Mat dwh = detail::matmul_tn(tape.h_prev, d_z);
        for (std::size_t i = 0; i < dwh.data.size(); ++i) grad.lstm.wh.data[i] += dwh.data[i];
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < 4 * ch; ++j) grad.lstm.b[static_cast<std::size_t>(j)] += d_z.at(i, j);
    }
    const Mat d_hcat = detail::matmul_nt(d_z, params.lstm.wx);

    // Split [g | broadcast max]; the max path routes to the argmax row.
    Mat d_g(n, ch);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < ch; ++j) d_g.at(i, j) = d_hcat.at(i, j);
    for (int j = 0; j < ch; ++j) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += d_hcat.at(i, ch + j);
        d_g.at(tape.argmax[static_cast<std::size_t>(j)], j) += s;
    }

    // Fusion backward through the relu.
    Mat d_fz(n, ch);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < ch; ++j) d_fz.at(i, j) = tape.fz.at(i, j) > 0.0 ? d_g.at(i, j) : 0.0;
    {
        Mat dw = detail::matmul_tn(tape.concat, d_fz);
        for (std::size_t i = 0; i < dw.data.size(); ++i) grad.fusion.w.data[i] += dw.data[i];
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < ch; ++j) grad.fusion.b[static_cast<std::size_t>(j)] += d_fz.at(i, j);
    }
    const Mat d_concat = detail::matmul_nt(d_fz, params.fusion.w);

    // Blocks, last to first: each block's output feeds both its concat slice
    // and the next block's input.
    Mat d_next;  // gradient arriving at block b's output via block b+1
    for (int b = nb - 1; b >= 0; --b) {
        const BlockParams& blk = params.blocks[static_cast<std::size_t>(b)];
        BlockParams& bgrad = grad.blocks[static_cast<std::size_t>(b)];
        const detail::BlockTape& bt = tape.blocks[static_cast<std::size_t>(b)];

        Mat d_out(n, ch);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < ch; ++j)
                d_out.at(i, j) = d_concat.at(i, b * ch + j) +
                                 (d_next.n > 0 ? d_next.at(i, j) : 0.0);

        Mat d_v = detail::attn_backward(bt.v, blk.attn, bt.attn, d_out, bgrad.attn);

        // v = relu(a2) + u
        Mat d_a2(n, ch);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < ch; ++j)
                d_a2.at(i, j) = bt.a2.at(i, j) > 0.0 ? d_v.at(i, j) : 0.0;
        Mat d_u = detail::conv_backward(bt.u, blk.conv2, d_a2, bgrad.conv2);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < ch; ++j) d_u.at(i, j) += d_v.at(i, j);

        // u = relu(a1) (+ x_in)
        const bool residual1 = bt.x_in.c == blk.conv1.c_out;
        Mat d_a1(n, ch);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < ch; ++j)
                d_a1.at(i, j) = bt.a1.at(i, j) > 0.0 ? d_u.at(i, j) : 0.0;
        Mat d_x = detail::conv_backward(bt.x_in, blk.conv1, d_a1, bgrad.conv1);
        if (residual1)
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < ch; ++j) d_x.at(i, j) += d_u.at(i, j);
        d_next = std::move(d_x);
    }

    // Drop the two encoding columns; they are not inputs.
    Mat d_feats(n, params.c_in - 2);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < params.c_in - 2; ++j) d_feats.at(i, j) = d_next.at(i, j);
    return d_feats;
}

}  // namespace polytrack
