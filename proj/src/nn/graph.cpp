#include "omnifuse/nn/graph.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace omnifuse::nn {

namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<MatRM<T>>;
template <typename T>
using MapC = Eigen::Map<const MatRM<T>>;
template <typename T>
using StrideMap = Eigen::Map<MatRM<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using StrideMapC = Eigen::Map<const MatRM<T>, 0, Eigen::OuterStride<>>;

template <typename T>
bool any_grad(Var<T> a) {
    return a.n->needs_grad;
}
template <typename T, typename... Rest>
bool any_grad(Var<T> a, Rest... rest) {
    return a.n->needs_grad || any_grad(rest...);
}

}  // namespace

template <typename T>
void Graph<T>::backward(Var<T> root) {
    check(root.valid() && root.size() == 1, "backward: root must be a scalar");
    if (!root.n->needs_grad) return;
    root.n->grad[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node<T>* nd = it->get();
        if (nd->needs_grad && nd->backward) nd->backward();
    }
    for (auto& [p, nd] : used_) {
        for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += nd->grad[i];
    }
}

// ---- elementwise ----

template <typename T>
Var<T> add(Graph<T>& g, Var<T> a, Var<T> b) {
    check(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Var<T> out{g.make(a.shape(), any_grad(a, b))};
    for (std::int64_t i = 0; i < a.size(); ++i) out.n->val[i] = a.n->val[i] + b.n->val[i];
    if (out.n->needs_grad) {
        Node<T>*pa = a.n, *pb = b.n, *po = out.n;
        out.n->backward = [pa, pb, po] {
            if (pa->needs_grad)
                for (std::size_t i = 0; i < po->grad.size(); ++i) pa->grad[i] += po->grad[i];
            if (pb->needs_grad)
                for (std::size_t i = 0; i < po->grad.size(); ++i) pb->grad[i] += po->grad[i];
        };
    }
    return out;
}

template <typename T>
Var<T> sub(Graph<T>& g, Var<T> a, Var<T> b) {
    check(a.shape() == b.shape(), "sub: shape mismatch");
    Var<T> out{g.make(a.shape(), any_grad(a, b))};
    for (std::int64_t i = 0; i < a.size(); ++i) out.n->val[i] = a.n->val[i] - b.n->val[i];
    if (out.n->needs_grad) {
        Node<T>*pa = a.n, *pb = b.n, *po = out.n;
        out.n->backward = [pa, pb, po] {
            if (pa->needs_grad)
                for (std::size_t i = 0; i < po->grad.size(); ++i) pa->grad[i] += po->grad[i];
            if (pb->needs_grad)
                for (std::size_t i = 0; i < po->grad.size(); ++i) pb->grad[i] -= po->grad[i];
        };
    }
    return out;
}

template <typename T>
Var<T> mul(Graph<T>& g, Var<T> a, Var<T> b) {
    check(a.shape() == b.shape(), "mul: shape mismatch");
    Var<T> out{g.make(a.shape(), any_grad(a, b))};
    for (std::int64_t i = 0; i < a.size(); ++i) out.n->val[i] = a.n->val[i] * b.n->val[i];
    if (out.n->needs_grad) {
        Node<T>*pa = a.n, *pb = b.n, *po = out.n;
        out.n->backward = [pa, pb, po] {
            if (pa->needs_grad)
                for (std::size_t i = 0; i < po->grad.size(); ++i) pa->grad[i] += po->grad[i] * pb->val[i];
            if (pb->needs_grad)
                for (std::size_t i = 0; i < po->grad.size(); ++i) pb->grad[i] += po->grad[i] * pa->val[i];
        };
    }
    return out;
}

template <typename T>
Var<T> scale(Graph<T>& g, Var<T> a, double c) {
    Var<T> out{g.make(a.shape(), any_grad(a))};
    const T tc = static_cast<T>(c);
    for (std::int64_t i = 0; i < a.size(); ++i) out.n->val[i] = a.n->val[i] * tc;
    if (out.n->needs_grad) {
        Node<T>*pa = a.n, *po = out.n;
        out.n->backward = [pa, po, tc] {
            for (std::size_t i = 0; i < po->grad.size(); ++i) pa->grad[i] += po->grad[i] * tc;
        };
    }
    return out;
}

template <typename T>
Var<T> add_rowvec(Graph<T>& g, Var<T> a, Var<T> bvec) {
    check(a.shape().size() == 2, "add_rowvec: a must be 2-D");
    const int r = a.rows(), c = a.cols();
    check(bvec.size() == c, "add_rowvec: vector length mismatch");
    Var<T> out{g.make(a.shape(), any_grad(a, bvec))};
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.n->val[i * c + j] = a.n->val[i * c + j] + bvec.n->val[j];
    if (out.n->needs_grad) {
        Node<T>*pa = a.n, *pb = bvec.n, *po = out.n;
        out.n->backward = [pa, pb, po, r, c] {
            if (pa->needs_grad)
                for (std::size_t i = 0; i < po->grad.size(); ++i) pa->grad[i] += po->grad[i];
            if (pb->needs_grad)
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j) pb->grad[j] += po->grad[i * c + j];
        };
    }
    return out;
}

// ---- shape ops ----

template <typename T>
Var<T> reshape(Graph<T>& g, Var<T> a, Shape s) {
    check(numel(s) == a.size(), "reshape: numel mismatch");
    Var<T> out{g.make(std::move(s), any_grad(a))};
    out.n->val = a.n->val;
    if (out.n->needs_grad) {
        Node<T>*pa = a.n, *po = out.n;
        out.n->backward = [pa, po] {
            for (std::size_t i = 0; i < po->grad.size(); ++i) pa->grad[i] += po->grad[i];
        };
    }
    return out;
}

template <typename T>
Var<T> slice_rows(Graph<T>& g, Var<T> a, int r0, int r1) {
    check(a.shape().size() == 2, "slice_rows: a must be 2-D");
    check(0 <= r0 && r0 < r1 && r1 <= a.rows(), "slice_rows: bad range");
    const int c = a.cols();
    Var<T> out{g.make({r1 - r0, c}, any_grad(a))};
    std::copy(a.n->val.begin() + static_cast<std::size_t>(r0) * c,
              a.n->val.begin() + static_cast<std::size_t>(r1) * c, out.n->val.begin());
    if (out.n->needs_grad) {
        Node<T>*pa = a.n, *po = out.n;
        out.n->backward = [pa, po, r0, c] {
            const std::size_t off = static_cast<std::size_t>(r0) * c;
            for (std::size_t i = 0; i < po->grad.size(); ++i) pa->grad[off + i] += po->grad[i];
        };
    }
    return out;
}

template <typename T>
Var<T> concat_rows(Graph<T>& g, const std::vector<Var<T>>& parts) {
    check(!parts.empty(), "concat_rows: empty input");
    const int c = parts[0].cols();
    int r = 0;
    bool ng = false;
    for (const auto& p : parts) {
        check(p.shape().size() == 2 && p.cols() == c, "concat_rows: column mismatch");
        r += p.rows();
        ng = ng || p.needs_grad();
    }
    Var<T> out{g.make({r, c}, ng)};
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.n->val.begin(), p.n->val.end(), out.n->val.begin() + off);
        off += p.n->val.size();
    }
    if (out.n->needs_grad) {
        std::vector<Node<T>*> srcs;
        for (const auto& p : parts) srcs.push_back(p.n);
        Node<T>* po = out.n;
        out.n->backward = [srcs, po] {
            std::size_t o = 0;
            for (Node<T>* s : srcs) {
                if (s->needs_grad)
                    for (std::size_t i = 0; i < s->grad.size(); ++i) s->grad[i] += po->grad[o + i];
                o += s->val.size();
            }
        };
    }
    return out;
}

template <typename T>
Var<T> gather_rows(Graph<T>& g, Var<T> a, std::vector<int> idx) {
    check(a.shape().size() == 2, "gather_rows: a must be 2-D");
    const int c = a.cols(), r = a.rows();
    for (int i : idx) check(0 <= i && i < r, "gather_rows: index out of range");
    Var<T> out{g.make({static_cast<int>(idx.size()), c}, any_grad(a))};
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy(a.n->val.begin() + static_cast<std::size_t>(idx[i]) * c,
                  a.n->val.begin() + static_cast<std::size_t>(idx[i] + 1) * c,
                  out.n->val.begin() + i * c);
    if (out.n->needs_grad) {
        Node<T>*pa = a.n, *po = out.n;
        out.n->backward = [pa, po, idx = std::move(idx), c] {
            for (std::size_t i = 0; i < idx.size(); ++i) {
                const std::size_t src = i * c, dst = static_cast<std::size_t>(idx[i]) * c;
                for (int j = 0; j < c; ++j) pa->grad[dst + j] += po->grad[src + j];
            }
        };
    }
    return out;
}

// ---- reductions ----

template <typename T>
Var<T> sum(Graph<T>& g, Var<T> a) {
    Var<T> out{g.make({1}, any_grad(a))};
    T s = T(0);
    for (std::int64_t i = 0; i < a.size(); ++i) s += a.n->val[i];
    out.n->val[0] = s;
    if (out.n->needs_grad) {
        Node<T>*pa = a.n, *po = out.n;
        out.n->backward = [pa, po] {
            for (std::size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += po->grad[0];
        };
    }
    return out;
}

template <typename T>
Var<T> mean(Graph<T>& g, Var<T> a) {
    return scale(g, sum(g, a), 1.0 / static_cast<double>(a.size()));
}

// ---- nonlinearities ----

template <typename T>
Var<T> gelu(Graph<T>& g, Var<T> a) {
    Var<T> out{g.make(a.shape(), any_grad(a))};
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    for (std::int64_t i = 0; i < a.size(); ++i) {
        const double x = static_cast<double>(a.n->val[i]);
        out.n->val[i] = static_cast<T>(0.5 * x * (1.0 + std::erf(x * inv_sqrt2)));
    }
    if (out.n->needs_grad) {
        Node<T>*pa = a.n, *po = out.n;
        out.n->backward = [pa, po] {
            for (std::size_t i = 0; i < po->grad.size(); ++i) {
                const double x = static_cast<double>(pa->val[i]);
                const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
                const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
                pa->grad[i] += po->grad[i] * static_cast<T>(cdf + x * pdf);
            }
        };
    }
    return out;
}

template <typename T>
Var<T> relu(Graph<T>& g, Var<T> a) {
    Var<T> out{g.make(a.shape(), any_grad(a))};
    for (std::int64_t i = 0; i < a.size(); ++i) out.n->val[i] = a.n->val[i] > T(0) ? a.n->val[i] : T(0);
    if (out.n->needs_grad) {
        Node<T>*pa = a.n, *po = out.n;
        out.n->backward = [pa, po] {
            for (std::size_t i = 0; i < po->grad.size(); ++i)
                if (pa->val[i] > T(0)) pa->grad[i] += po->grad[i];
        };
    }
    return out;
}

template <typename T>
Var<T> sigmoid(Graph<T>& g, Var<T> a) {
    Var<T> out{g.make(a.shape(), any_grad(a))};
    for (std::int64_t i = 0; i < a.size(); ++i) {
        const double x = static_cast<double>(a.n->val[i]);
        out.n->val[i] = static_cast<T>(1.0 / (1.0 + std::exp(-x)));
    }
    if (out.n->needs_grad) {
        Node<T>*pa = a.n, *po = out.n;
        out.n->backward = [pa, po] {
            for (std::size_t i = 0; i < po->grad.size(); ++i) {
                const T y = po->val[i];
                pa->grad[i] += po->grad[i] * y * (T(1) - y);
            }
        };
    }
    return out;
}

// ---- dense algebra ----

template <typename T>
Var<T> matmul(Graph<T>& g, Var<T> a, Var<T> b) {
    check(a.shape().size() == 2 && b.shape().size() == 2, "matmul: 2-D operands required");
    check(a.cols() == b.rows(), "matmul: inner dim mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Var<T> out{g.make({m, n}, any_grad(a, b))};
    MapM<T>(out.n->val.data(), m, n).noalias() =
        MapC<T>(a.n->val.data(), m, k) * MapC<T>(b.n->val.data(), k, n);
    if (out.n->needs_grad) {
        Node<T>*pa = a.n, *pb = b.n, *po = out.n;
        out.n->backward = [pa, pb, po, m, k, n] {
            MapC<T> go(po->grad.data(), m, n);
            if (pa->needs_grad)
                MapM<T>(pa->grad.data(), m, k).noalias() += go * MapC<T>(pb->val.data(), k, n).transpose();
            if (pb->needs_grad)
                MapM<T>(pb->grad.data(), k, n).noalias() += MapC<T>(pa->val.data(), m, k).transpose() * go;
        };
    }
    return out;
}

template <typename T>
Var<T> transpose(Graph<T>& g, Var<T> a) {
    check(a.shape().size() == 2, "transpose: 2-D operand required");
    const int r = a.rows(), c = a.cols();
    Var<T> out{g.make({c, r}, any_grad(a))};
    MapM<T>(out.n->val.data(), c, r) = MapC<T>(a.n->val.data(), r, c).transpose();
    if (out.n->needs_grad) {
        Node<T>*pa = a.n, *po = out.n;
        out.n->backward = [pa, po, r, c] {
            MapM<T>(pa->grad.data(), r, c) += MapC<T>(po->grad.data(), c, r).transpose();
        };
    }
    return out;
}

template <typename T>
Var<T> layer_norm(Graph<T>& g, Var<T> x, Var<T> gain, Var<T> bias, double eps) {
    check(x.shape().size() == 2, "layer_norm: x must be 2-D");
    const int r = x.rows(), d = x.cols();
    check(gain.size() == d && bias.size() == d, "layer_norm: gain/bias length mismatch");
    Var<T> out{g.make(x.shape(), any_grad(x, gain, bias))};
    auto xhat = std::make_shared<std::vector<T>>(static_cast<std::size_t>(r) * d);
    auto inv_std = std::make_shared<std::vector<T>>(r);
    for (int i = 0; i < r; ++i) {
        const T* xi = x.n->val.data() + static_cast<std::size_t>(i) * d;
        double mu = 0;
        for (int j = 0; j < d; ++j) mu += xi[j];
        mu /= d;
        double var = 0;
        for (int j = 0; j < d; ++j) {
            const double c = xi[j] - mu;
            var += c * c;
        }
        var /= d;
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[i] = static_cast<T>(is);
        T* xh = xhat->data() + static_cast<std::size_t>(i) * d;
        T* yo = out.n->val.data() + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) {
            xh[j] = static_cast<T>((xi[j] - mu) * is);
            yo[j] = xh[j] * gain.n->val[j] + bias.n->val[j];
        }
    }
    if (out.n->needs_grad) {
        Node<T>*px = x.n, *pg = gain.n, *pb = bias.n, *po = out.n;
        out.n->backward = [px, pg, pb, po, xhat, inv_std, r, d] {
            for (int i = 0; i < r; ++i) {
                const T* go = po->grad.data() + static_cast<std::size_t>(i) * d;
                const T* xh = xhat->data() + static_cast<std::size_t>(i) * d;
                if (pg->needs_grad)
                    for (int j = 0; j < d; ++j) pg->grad[j] += go[j] * xh[j];
                if (pb->needs_grad)
                    for (int j = 0; j < d; ++j) pb->grad[j] += go[j];
                if (px->needs_grad) {
                    double s1 = 0, s2 = 0;
                    for (int j = 0; j < d; ++j) {
                        const double dxh = static_cast<double>(go[j]) * pg->val[j];
                        s1 += dxh;
                        s2 += dxh * xh[j];
                    }
                    s1 /= d;
                    s2 /= d;
                    T* gx = px->grad.data() + static_cast<std::size_t>(i) * d;
                    const double is = (*inv_std)[i];
                    for (int j = 0; j < d; ++j) {
                        const double dxh = static_cast<double>(go[j]) * pg->val[j];
                        gx[j] += static_cast<T>(is * (dxh - s1 - static_cast<double>(xh[j]) * s2));
                    }
                }
            }
        };
    }
    return out;
}

template <typename T>
Var<T> softmax_rows(Graph<T>& g, Var<T> a) {
    check(a.shape().size() == 2, "softmax_rows: 2-D operand required");
    const int r = a.rows(), c = a.cols();
    Var<T> out{g.make(a.shape(), any_grad(a))};
    for (int i = 0; i < r; ++i) {
        const T* ai = a.n->val.data() + static_cast<std::size_t>(i) * c;
        T* yo = out.n->val.data() + static_cast<std::size_t>(i) * c;
        T mx = ai[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, ai[j]);
        double z = 0;
        for (int j = 0; j < c; ++j) {
            const double e = std::exp(static_cast<double>(ai[j] - mx));
            yo[j] = static_cast<T>(e);
            z += e;
        }
        const double iz = 1.0 / z;
        for (int j = 0; j < c; ++j) yo[j] = static_cast<T>(yo[j] * iz);
    }
    if (out.n->needs_grad) {
        Node<T>*pa = a.n, *po = out.n;
        out.n->backward = [pa, po, r, c] {
            for (int i = 0; i < r; ++i) {
                const T* y = po->val.data() + static_cast<std::size_t>(i) * c;
                const T* go = po->grad.data() + static_cast<std::size_t>(i) * c;
                double dot = 0;
                for (int j = 0; j < c; ++j) dot += static_cast<double>(go[j]) * y[j];
                T* ga = pa->grad.data() + static_cast<std::size_t>(i) * c;
                for (int j = 0; j < c; ++j)
                    ga[j] += static_cast<T>(y[j] * (static_cast<double>(go[j]) - dot));
            }
        };
    }
    return out;
}

// ---- conv / pool ----

template <typename T>
Var<T> conv2d(Graph<T>& g, Var<T> x, Var<T> w, Var<T> b) {
    check(x.shape().size() == 4 && w.shape().size() == 4, "conv2d: x and w must be 4-D");
    const int N = x.shape()[0], Cin = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const int Cout = w.shape()[0], k = w.shape()[2];
    check(w.shape()[1] == Cin && w.shape()[3] == k && (k % 2) == 1, "conv2d: kernel shape");
    check(b.size() == Cout, "conv2d: bias length mismatch");
    const int pad = k / 2;
    const int K = Cin * k * k;
    const std::int64_t rows = static_cast<std::int64_t>(N) * H * W;

    auto cols = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows) * K, T(0));
    for (int n = 0; n < N; ++n)
        for (int ci = 0; ci < Cin; ++ci) {
            const T* plane = x.n->val.data() + (static_cast<std::size_t>(n) * Cin + ci) * H * W;
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx) {
                    T* row = cols->data() + (static_cast<std::size_t>(n) * H * W + static_cast<std::size_t>(y) * W + xx) * K +
                             static_cast<std::size_t>(ci) * k * k;
                    for (int dy = 0; dy < k; ++dy) {
                        const int sy = y + dy - pad;
                        if (sy < 0 || sy >= H) continue;
                        for (int dx = 0; dx < k; ++dx) {
                            const int sx = xx + dx - pad;
                            if (sx < 0 || sx >= W) continue;
                            row[dy * k + dx] = plane[sy * W + sx];
                        }
                    }
                }
        }

    std::vector<T> out_rows(static_cast<std::size_t>(rows) * Cout);
    MapM<T>(out_rows.data(), rows, Cout).noalias() =
        MapC<T>(cols->data(), rows, K) * MapC<T>(w.n->val.data(), Cout, K).transpose();

    Var<T> out{g.make({N, Cout, H, W}, any_grad(x, w, b))};
    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Cout; ++co) {
            T* plane = out.n->val.data() + (static_cast<std::size_t>(n) * Cout + co) * H * W;
            const T bias_c = b.n->val[co];
            for (int p = 0; p < H * W; ++p)
                plane[p] = out_rows[(static_cast<std::size_t>(n) * H * W + p) * Cout + co] + bias_c;
        }

    if (out.n->needs_grad) {
        Node<T>*px = x.n, *pw = w.n, *pb = b.n, *po = out.n;
        out.n->backward = [px, pw, pb, po, cols, N, Cin, H, W, Cout, k, pad, K, rows] {
            std::vector<T> go_rows(static_cast<std::size_t>(rows) * Cout);
            for (int n = 0; n < N; ++n)
                for (int co = 0; co < Cout; ++co) {
                    const T* plane = po->grad.data() + (static_cast<std::size_t>(n) * Cout + co) * H * W;
                    for (int p = 0; p < H * W; ++p)
                        go_rows[(static_cast<std::size_t>(n) * H * W + p) * Cout + co] = plane[p];
                }
            MapC<T> go(go_rows.data(), rows, Cout);
            if (pb->needs_grad)
                for (std::int64_t r = 0; r < rows; ++r)
                    for (int co = 0; co < Cout; ++co) pb->grad[co] += go_rows[static_cast<std::size_t>(r) * Cout + co];
            if (pw->needs_grad)
                MapM<T>(pw->grad.data(), Cout, K).noalias() += go.transpose() * MapC<T>(cols->data(), rows, K);
            if (px->needs_grad) {
                std::vector<T> dcols(static_cast<std::size_t>(rows) * K);
                MapM<T>(dcols.data(), rows, K).noalias() = go * MapC<T>(pw->val.data(), Cout, K);
                for (int n = 0; n < N; ++n)
                    for (int ci = 0; ci < Cin; ++ci) {
                        T* plane = px->grad.data() + (static_cast<std::size_t>(n) * Cin + ci) * H * W;
                        for (int y = 0; y < H; ++y)
                            for (int xx = 0; xx < W; ++xx) {
                                const T* row = dcols.data() +
                                               (static_cast<std::size_t>(n) * H * W + static_cast<std::size_t>(y) * W + xx) * K +
                                               static_cast<std::size_t>(ci) * k * k;
                                for (int dy = 0; dy < k; ++dy) {
                                    const int sy = y + dy - pad;
                                    if (sy < 0 || sy >= H) continue;
                                    for (int dx = 0; dx < k; ++dx) {
                                        const int sx = xx + dx - pad;
                                        if (sx < 0 || sx >= W) continue;
                                        plane[sy * W + sx] += row[dy * k + dx];
                                    }
                                }
                            }
                    }
            }
        };
    }
    return out;
}

template <typename T>
Var<T> maxpool2d(Graph<T>& g, Var<T> x, int f, std::vector<std::int32_t>* indices) {
    check(x.shape().size() == 4, "maxpool2d: x must be 4-D");
    const int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    check(f >= 1 && H % f == 0 && W % f == 0, "maxpool2d: spatial dims must divide by factor");
    const int Ho = H / f, Wo = W / f;
    Var<T> out{g.make({N, C, Ho, Wo}, any_grad(x))};
    auto idx = std::make_shared<std::vector<std::int32_t>>(static_cast<std::size_t>(N) * C * Ho * Wo);
    std::size_t cell = 0;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* plane = x.n->val.data() + (static_cast<std::size_t>(n) * C + c) * H * W;
            for (int oy = 0; oy < Ho; ++oy)
                for (int ox = 0; ox < Wo; ++ox, ++cell) {
                    T best = plane[(oy * f) * W + ox * f];
                    int best_o = 0;
                    for (int dy = 0; dy < f; ++dy)
                        for (int dx = 0; dx < f; ++dx) {
                            const T v = plane[(oy * f + dy) * W + ox * f + dx];
                            if (v > best) {
                                best = v;
                                best_o = dy * f + dx;
                            }
                        }
                    out.n->val[cell] = best;
                    (*idx)[cell] = static_cast<std::int32_t>(best_o);
                }
        }
    if (indices) *indices = *idx;
    if (out.n->needs_grad) {
        Node<T>*px = x.n, *po = out.n;
        out.n->backward = [px, po, idx, N, C, H, W, Ho, Wo, f] {
            std::size_t cell = 0;
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    T* plane = px->grad.data() + (static_cast<std::size_t>(n) * C + c) * H * W;
                    for (int oy = 0; oy < Ho; ++oy)
                        for (int ox = 0; ox < Wo; ++ox, ++cell) {
                            const int o = (*idx)[cell];
                            plane[(oy * f + o / f) * W + ox * f + o % f] += po->grad[cell];
                        }
                }
        };
    }
    return out;
}

template <typename T>
Var<T> maxunpool2d(Graph<T>& g, Var<T> x, int f, const std::vector<std::int32_t>* indices) {
    check(x.shape().size() == 4, "maxunpool2d: x must be 4-D");
    const int N = x.shape()[0], C = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    check(f >= 1, "maxunpool2d: factor must be positive");
    if (indices)
        check(indices->size() == static_cast<std::size_t>(N) * C * h * w, "maxunpool2d: index length mismatch");
    const int H = h * f, W = w * f;
    Var<T> out{g.make({N, C, H, W}, any_grad(x))};
    auto idx = indices ? std::make_shared<std::vector<std::int32_t>>(*indices) : nullptr;
    std::size_t cell = 0;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            T* plane = out.n->val.data() + (static_cast<std::size_t>(n) * C + c) * H * W;
            for (int oy = 0; oy < h; ++oy)
                for (int ox = 0; ox < w; ++ox, ++cell) {
                    const int o = idx ? (*idx)[cell] : 0;
                    plane[(oy * f + o / f) * W + ox * f + o % f] = x.n->val[cell];
                }
        }
    if (out.n->needs_grad) {
        Node<T>*px = x.n, *po = out.n;
        out.n->backward = [px, po, idx, N, C, H, W, h, w, f] {
            std::size_t cell = 0;
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const T* plane = po->grad.data() + (static_cast<std::size_t>(n) * C + c) * H * W;
                    for (int oy = 0; oy < h; ++oy)
                        for (int ox = 0; ox < w; ++ox, ++cell) {
                            const int o = idx ? (*idx)[cell] : 0;
                            px->grad[cell] += plane[(oy * f + o / f) * W + ox * f + o % f];
                        }
                }
        };
    }
    return out;
}

// ---- losses ----

template <typename T>
Var<T> bce_with_logits_mean(Graph<T>& g, Var<T> logits, Var<T> targets) {
    check(logits.shape() == targets.shape(), "bce_with_logits_mean: shape mismatch");
    const std::int64_t n = logits.size();
    Var<T> out{g.make({1}, any_grad(logits, targets))};
    double acc = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double z = logits.n->val[i], y = targets.n->val[i];
        acc += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    }
    out.n->val[0] = static_cast<T>(acc / static_cast<double>(n));
    if (out.n->needs_grad) {
        Node<T>*pz = logits.n, *py = targets.n, *po = out.n;
        out.n->backward = [pz, py, po, n] {
            const double s = static_cast<double>(po->grad[0]) / static_cast<double>(n);
            if (pz->needs_grad)
                for (std::int64_t i = 0; i < n; ++i) {
                    const double z = pz->val[i];
                    const double sig = 1.0 / (1.0 + std::exp(-z));
                    pz->grad[i] += static_cast<T>(s * (sig - static_cast<double>(py->val[i])));
                }
            if (py->needs_grad)
                for (std::int64_t i = 0; i < n; ++i) py->grad[i] += static_cast<T>(-s * static_cast<double>(pz->val[i]));
        };
    }
    return out;
}

template <typename T>
Var<T> masked_logsumexp_rows(Graph<T>& g, Var<T> s, const std::vector<std::uint8_t>& sel) {
    check(s.shape().size() == 2, "masked_logsumexp_rows: 2-D operand required");
    const int r = s.rows(), c = s.cols();
    check(sel.size() == static_cast<std::size_t>(r) * c, "masked_logsumexp_rows: mask length mismatch");
    Var<T> out{g.make({r}, any_grad(s))};
    for (int i = 0; i < r; ++i) {
        const T* si = s.n->val.data() + static_cast<std::size_t>(i) * c;
        const std::uint8_t* mi = sel.data() + static_cast<std::size_t>(i) * c;
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < c; ++j)
            if (mi[j]) mx = std::max(mx, static_cast<double>(si[j]));
        check(std::isfinite(mx), "masked_logsumexp_rows: row " + std::to_string(i) + " selects no entries");
        double z = 0;
        for (int j = 0; j < c; ++j)
            if (mi[j]) z += std::exp(static_cast<double>(si[j]) - mx);
        out.n->val[i] = static_cast<T>(mx + std::log(z));
    }
    if (out.n->needs_grad) {
        Node<T>*ps = s.n, *po = out.n;
        auto mask = std::make_shared<std::vector<std::uint8_t>>(sel);
        out.n->backward = [ps, po, mask, r, c] {
            for (int i = 0; i < r; ++i) {
                const T lse = po->val[i];
                const T go = po->grad[i];
                if (go == T(0)) continue;
                const T* si = ps->val.data() + static_cast<std::size_t>(i) * c;
                T* gi = ps->grad.data() + static_cast<std::size_t>(i) * c;
                const std::uint8_t* mi = mask->data() + static_cast<std::size_t>(i) * c;
                for (int j = 0; j < c; ++j)
                    if (mi[j]) gi[j] += go * static_cast<T>(std::exp(static_cast<double>(si[j] - lse)));
            }
        };
    }
    return out;
}

// ---- fused attention ----

template <typename T>
Var<T> mha_tile(Graph<T>& g, Var<T> q, Var<T> k, Var<T> v, int heads, Var<T> bias_table,
                const std::vector<std::int32_t>* bucket) {
    check(q.shape().size() == 2 && k.shape().size() == 2 && v.shape().size() == 2, "mha_tile: 2-D operands");
    const int Tq = q.rows(), Tk = k.rows(), d = q.cols();
    check(k.cols() == d && v.cols() == d && v.rows() == Tk, "mha_tile: dim mismatch");
    check(heads >= 1 && d % heads == 0, "mha_tile: heads must divide dim");
    const int dh = d / heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
    int n_buckets = 0;
    if (bias_table.valid()) {
        check(bucket != nullptr && bucket->size() == static_cast<std::size_t>(Tq) * Tk, "mha_tile: bucket map required with bias table");
        check(bias_table.shape().size() == 2 && bias_table.rows() == heads, "mha_tile: bias table must be [heads, n_buckets]");
        n_buckets = bias_table.cols();
        for (auto bi : *bucket) check(0 <= bi && bi < n_buckets, "mha_tile: bucket index out of range");
    }

    const bool ng = bias_table.valid() ? any_grad(q, k, v, bias_table) : any_grad(q, k, v);
    Var<T> out{g.make({Tq, d}, ng)};
    auto probs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(heads) * Tq * Tk);
    auto bidx = bucket ? std::make_shared<std::vector<std::int32_t>>(*bucket) : nullptr;

    for (int h = 0; h < heads; ++h) {
        StrideMapC<T> Qh(q.n->val.data() + h * dh, Tq, dh, Eigen::OuterStride<>(d));
        StrideMapC<T> Kh(k.n->val.data() + h * dh, Tk, dh, Eigen::OuterStride<>(d));
        StrideMapC<T> Vh(v.n->val.data() + h * dh, Tk, dh, Eigen::OuterStride<>(d));
        MatRM<T> logits = (Qh * Kh.transpose() * static_cast<T>(sc)).eval();
        if (bias_table.valid()) {
            const T* tb = bias_table.n->val.data() + static_cast<std::size_t>(h) * n_buckets;
            for (int i = 0; i < Tq; ++i)
                for (int j = 0; j < Tk; ++j) logits(i, j) += tb[(*bidx)[static_cast<std::size_t>(i) * Tk + j]];
        }
        MapM<T> P(probs->data() + static_cast<std::size_t>(h) * Tq * Tk, Tq, Tk);
        for (int i = 0; i < Tq; ++i) {
            T mx = logits(i, 0);
            for (int j = 1; j < Tk; ++j) mx = std::max(mx, logits(i, j));
            double z = 0;
            for (int j = 0; j < Tk; ++j) {
                const double e = std::exp(static_cast<double>(logits(i, j) - mx));
                P(i, j) = static_cast<T>(e);
                z += e;
            }
            const double iz = 1.0 / z;
            for (int j = 0; j < Tk; ++j) P(i, j) = static_cast<T>(P(i, j) * iz);
        }
        StrideMap<T> Oh(out.n->val.data() + h * dh, Tq, dh, Eigen::OuterStride<>(d));
        Oh.noalias() = P * Vh;
    }

    if (out.n->needs_grad) {
        Node<T>*pq = q.n, *pk = k.n, *pv = v.n, *po = out.n;
        Node<T>* pt = bias_table.valid() ? bias_table.n : nullptr;
        out.n->backward = [pq, pk, pv, po, pt, probs, bidx, heads, Tq, Tk, d, dh, sc, n_buckets] {
            for (int h = 0; h < heads; ++h) {
                StrideMapC<T> Qh(pq->val.data() + h * dh, Tq, dh, Eigen::OuterStride<>(d));
                StrideMapC<T> Kh(pk->val.data() + h * dh, Tk, dh, Eigen::OuterStride<>(d));
                StrideMapC<T> Vh(pv->val.data() + h * dh, Tk, dh, Eigen::OuterStride<>(d));
                StrideMapC<T> dOh(po->grad.data() + h * dh, Tq, dh, Eigen::OuterStride<>(d));
                MapC<T> P(probs->data() + static_cast<std::size_t>(h) * Tq * Tk, Tq, Tk);

                if (pv->needs_grad) {
                    StrideMap<T> dVh(pv->grad.data() + h * dh, Tk, dh, Eigen::OuterStride<>(d));
                    dVh.noalias() += P.transpose() * dOh;
                }
                MatRM<T> dP = (dOh * Vh.transpose()).eval();
                MatRM<T> dL(Tq, Tk);
                for (int i = 0; i < Tq; ++i) {
                    double dot = 0;
                    for (int j = 0; j < Tk; ++j) dot += static_cast<double>(dP(i, j)) * P(i, j);
                    for (int j = 0; j < Tk; ++j)
                        dL(i, j) = static_cast<T>(P(i, j) * (static_cast<double>(dP(i, j)) - dot));
                }
                if (pq->needs_grad) {
                    StrideMap<T> dQh(pq->grad.data() + h * dh, Tq, dh, Eigen::OuterStride<>(d));
                    dQh.noalias() += dL * Kh * static_cast<T>(sc);
                }
                if (pk->needs_grad) {
                    StrideMap<T> dKh(pk->grad.data() + h * dh, Tk, dh, Eigen::OuterStride<>(d));
                    dKh.noalias() += dL.transpose() * Qh * static_cast<T>(sc);
                }
                if (pt && pt->needs_grad) {
                    T* gt = pt->grad.data() + static_cast<std::size_t>(h) * n_buckets;
                    for (int i = 0; i < Tq; ++i)
                        for (int j = 0; j < Tk; ++j) gt[(*bidx)[static_cast<std::size_t>(i) * Tk + j]] += dL(i, j);
                }
            }
        };
    }
    return out;
}

template <typename T>
Var<T> set_attention(Graph<T>& g, Var<T> k, Var<T> v, Var<T> query, int heads, int n, int l,
                     const std::vector<std::uint8_t>& valid, std::vector<T>* attn_out) {
    check(k.shape().size() == 2 && v.shape().size() == 2, "set_attention: 2-D k/v");
    const int d = k.cols();
    check(k.rows() == n * l && v.rows() == n * l && v.cols() == d, "set_attention: k/v must be [n*l, d]");
    check(query.size() == d, "set_attention: query length mismatch");
    check(heads >= 1 && d % heads == 0, "set_attention: heads must divide dim");
    check(valid.size() == static_cast<std::size_t>(n) * l, "set_attention: valid mask length mismatch");
    const int dh = d / heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int s = 0; s < n; ++s) {
        bool any = false;
        for (int t = 0; t < l; ++t) any = any || valid[static_cast<std::size_t>(s) * l + t];
        check(any, "set_attention: sequence " + std::to_string(s) + " has no valid dates");
    }

    Var<T> out{g.make({n, d}, any_grad(k, v, query))};
    auto probs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n) * heads * l, T(0));
    if (attn_out) attn_out->assign(static_cast<std::size_t>(n) * l, T(0));

    for (int s = 0; s < n; ++s) {
        for (int h = 0; h < heads; ++h) {
            const T* qh = query.n->val.data() + h * dh;
            T* p = probs->data() + (static_cast<std::size_t>(s) * heads + h) * l;
            double mx = -std::numeric_limits<double>::infinity();
            for (int t = 0; t < l; ++t) {
                if (!valid[static_cast<std::size_t>(s) * l + t]) continue;
                const T* kt = k.n->val.data() + (static_cast<std::size_t>(s) * l + t) * d + h * dh;
                double lg = 0;
                for (int c = 0; c < dh; ++c) lg += static_cast<double>(qh[c]) * kt[c];
                lg *= sc;
                p[t] = static_cast<T>(lg);
                mx = std::max(mx, lg);
            }
            double z = 0;
            for (int t = 0; t < l; ++t) {
                if (!valid[static_cast<std::size_t>(s) * l + t]) {
                    p[t] = T(0);
                    continue;
                }
                const double e = std::exp(static_cast<double>(p[t]) - mx);
                p[t] = static_cast<T>(e);
                z += e;
            }
            const double iz = 1.0 / z;
            T* os = out.n->val.data() + static_cast<std::size_t>(s) * d + h * dh;
            for (int t = 0; t < l; ++t) {
                if (!valid[static_cast<std::size_t>(s) * l + t]) continue;
                p[t] = static_cast<T>(p[t] * iz);
                const T* vt = v.n->val.data() + (static_cast<std::size_t>(s) * l + t) * d + h * dh;
                for (int c = 0; c < dh; ++c) os[c] += p[t] * vt[c];
                if (attn_out)
                    (*attn_out)[static_cast<std::size_t>(s) * l + t] += p[t] / static_cast<T>(heads);
            }
        }
    }

    if (out.n->needs_grad) {
        Node<T>*pk = k.n, *pv = v.n, *pq = query.n, *po = out.n;
        auto vmask = std::make_shared<std::vector<std::uint8_t>>(valid);
        out.n->backward = [pk, pv, pq, po, probs, vmask, heads, n, l, d, dh, sc] {
            for (int s = 0; s < n; ++s)
                for (int h = 0; h < heads; ++h) {
                    const T* p = probs->data() + (static_cast<std::size_t>(s) * heads + h) * l;
                    const T* dos = po->grad.data() + static_cast<std::size_t>(s) * d + h * dh;
                    double dot = 0;
                    std::vector<double> dp(l, 0.0);
                    for (int t = 0; t < l; ++t) {
                        if (!(*vmask)[static_cast<std::size_t>(s) * l + t]) continue;
                        const T* vt = pv->val.data() + (static_cast<std::size_t>(s) * l + t) * d + h * dh;
                        double acc = 0;
                        for (int c = 0; c < dh; ++c) acc += static_cast<double>(dos[c]) * vt[c];
                        dp[t] = acc;
                        dot += acc * p[t];
                        if (pv->needs_grad) {
                            T* gv = pv->grad.data() + (static_cast<std::size_t>(s) * l + t) * d + h * dh;
                            for (int c = 0; c < dh; ++c) gv[c] += p[t] * dos[c];
                        }
                    }
                    for (int t = 0; t < l; ++t) {
                        if (!(*vmask)[static_cast<std::size_t>(s) * l + t]) continue;
                        const double dlg = p[t] * (dp[t] - dot) * sc;
                        const T* kt = pk->val.data() + (static_cast<std::size_t>(s) * l + t) * d + h * dh;
                        const T* qh = pq->val.data() + h * dh;
                        if (pq->needs_grad) {
                            T* gq = pq->grad.data() + h * dh;
                            for (int c = 0; c < dh; ++c) gq[c] += static_cast<T>(dlg * kt[c]);
                        }
                        if (pk->needs_grad) {
                            T* gk = pk->grad.data() + (static_cast<std::size_t>(s) * l + t) * d + h * dh;
                            for (int c = 0; c < dh; ++c) gk[c] += static_cast<T>(dlg * qh[c]);
                        }
                    }
                }
        };
    }
    return out;
}

// ---- explicit instantiations ----

#define OMNIFUSE_INSTANTIATE_OPS(T)                                                                     \
    template class Graph<T>;                                                                            \
    template Var<T> add(Graph<T>&, Var<T>, Var<T>);                                                     \
    template Var<T> sub(Graph<T>&, Var<T>, Var<T>);                                                     \
    template Var<T> mul(Graph<T>&, Var<T>, Var<T>);                                                     \
    template Var<T> scale(Graph<T>&, Var<T>, double);                                                   \
    template Var<T> add_rowvec(Graph<T>&, Var<T>, Var<T>);                                              \
    template Var<T> reshape(Graph<T>&, Var<T>, Shape);                                                  \
    template Var<T> slice_rows(Graph<T>&, Var<T>, int, int);                                            \
    template Var<T> concat_rows(Graph<T>&, const std::vector<Var<T>>&);                                 \
    template Var<T> gather_rows(Graph<T>&, Var<T>, std::vector<int>);                                   \
    template Var<T> sum(Graph<T>&, Var<T>);                                                             \
    template Var<T> mean(Graph<T>&, Var<T>);                                                            \
    template Var<T> gelu(Graph<T>&, Var<T>);                                                            \
    template Var<T> relu(Graph<T>&, Var<T>);                                                            \
    template Var<T> sigmoid(Graph<T>&, Var<T>);                                                         \
    template Var<T> matmul(Graph<T>&, Var<T>, Var<T>);                                                  \
    template Var<T> transpose(Graph<T>&, Var<T>);                                                       \
    template Var<T> layer_norm(Graph<T>&, Var<T>, Var<T>, Var<T>, double);                              \
    template Var<T> softmax_rows(Graph<T>&, Var<T>);                                                    \
    template Var<T> conv2d(Graph<T>&, Var<T>, Var<T>, Var<T>);                                          \
    template Var<T> maxpool2d(Graph<T>&, Var<T>, int, std::vector<std::int32_t>*);                      \
    template Var<T> maxunpool2d(Graph<T>&, Var<T>, int, const std::vector<std::int32_t>*);              \
    template Var<T> bce_with_logits_mean(Graph<T>&, Var<T>, Var<T>);                                    \
    template Var<T> masked_logsumexp_rows(Graph<T>&, Var<T>, const std::vector<std::uint8_t>&);         \
    template Var<T> mha_tile(Graph<T>&, Var<T>, Var<T>, Var<T>, int, Var<T>,                            \
                             const std::vector<std::int32_t>*);                                         \
    template Var<T> set_attention(Graph<T>&, Var<T>, Var<T>, Var<T>, int, int, int,                     \
                                  const std::vector<std::uint8_t>&, std::vector<T>*);

OMNIFUSE_INSTANTIATE_OPS(float)
OMNIFUSE_INSTANTIATE_OPS(double)

#undef OMNIFUSE_INSTANTIATE_OPS

}  // namespace omnifuse::nn
