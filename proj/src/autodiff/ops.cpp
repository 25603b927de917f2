#include "tubule/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tubule/parallel.hpp"

namespace tubule::ad {

namespace {

struct Geo5 {
    std::size_t n, c, d, h, w;
    std::size_t vol() const { return d * h * w; }
};

Geo5 geo5(const Shape& s, const char* op) {
    if (s.size() != 5) throw DataError(std::string(op) + ": expected N,C,D,H,W tensor, got " + shape_str(s));
    return {s[0], s[1], s[2], s[3], s[4]};
}

template <class T>
void require_shape(const Tensor<T>& t, const Shape& s, const char* op, const char* what) {
    if (t.shape() != s) {
        throw DataError(std::string(op) + ": " + what + " has shape " + shape_str(t.shape()) + ", expected " +
                        shape_str(s));
    }
}

// Output range [lo, hi) of ox such that ox*s + c - p lies in [0, n).
std::pair<std::size_t, std::size_t> valid_range(std::size_t n, std::size_t out, std::size_t s, std::size_t c,
                                                std::size_t p) {
    const std::size_t lo = p > c ? (p - c + s - 1) / s : 0;
    if (n - 1 + p < c) return {0, 0};
    const std::size_t hi = std::min(out, (n - 1 + p - c) / s + 1);
    return {lo, std::max(lo, hi)};
}

template <class T>
Tensor<T> unary(const char* op, const Tensor<T>& x, T (*f)(T, double), T (*df)(T, T, double), double arg = 0) {
    std::vector<T> y(x.numel());
    const auto& xv = x.values();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xv[i], arg);
    return make_result<T>(op, x.shape(), std::move(y), {x}, [x, df, arg](Node<T>& self) mutable {
        auto& gx = x.grad_buffer();
        const auto& xv = x.values();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * df(xv[i], self.value[i], arg);
    });
}

enum class BinOp { Add, Sub, Mul, Div };

template <class T>
Tensor<T> binary(const char* name, BinOp op, const Tensor<T>& a, const Tensor<T>& b) {
    const bool a1 = a.numel() == 1 && b.numel() != 1;
    const bool b1 = b.numel() == 1 && a.numel() != 1;
    if (!a1 && !b1 && a.shape() != b.shape()) {
        throw DataError(std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    const Shape shape = a1 ? b.shape() : a.shape();
    const std::size_t n = shape_numel(shape);
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<T> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        const T u = av[a1 ? 0 : i], v = bv[b1 ? 0 : i];
        switch (op) {
            case BinOp::Add: y[i] = u + v; break;
            case BinOp::Sub: y[i] = u - v; break;
            case BinOp::Mul: y[i] = u * v; break;
            case BinOp::Div: y[i] = u / v; break;
        }
    }
    return make_result<T>(name, shape, std::move(y), {a, b}, [a, b, a1, b1, op](Node<T>& self) mutable {
        const auto& av = a.values();
        const auto& bv = b.values();
        const std::size_t n = self.grad.size();
        if (a.requires_grad()) {
            auto& ga = a.grad_buffer();
            for (std::size_t i = 0; i < n; ++i) {
                const T g = self.grad[i];
                T d = 0;
                switch (op) {
                    case BinOp::Add:
                    case BinOp::Sub: d = g; break;
                    case BinOp::Mul: d = g * bv[b1 ? 0 : i]; break;
                    case BinOp::Div: d = g / bv[b1 ? 0 : i]; break;
                }
                ga[a1 ? 0 : i] += d;
            }
        }
        if (b.requires_grad()) {
            auto& gb = b.grad_buffer();
            for (std::size_t i = 0; i < n; ++i) {
                const T g = self.grad[i];
                const T u = av[a1 ? 0 : i], v = bv[b1 ? 0 : i];
                T d = 0;
                switch (op) {
                    case BinOp::Add: d = g; break;
                    case BinOp::Sub: d = -g; break;
                    case BinOp::Mul: d = g * u; break;
                    case BinOp::Div: d = -g * u / (v * v); break;
                }
                gb[b1 ? 0 : i] += d;
            }
        }
    });
}

// NaN passes through so a poisoned input still surfaces as a non-finite loss.
template <class T>
T relu_f(T x, double) { return x > T(0) || x != x ? x : T(0); }
template <class T>
T relu_df(T x, T, double) { return x > T(0) ? T(1) : T(0); }
template <class T>
T sigmoid_f(T x, double) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}
template <class T>
T sigmoid_df(T, T y, double) { return y * (T(1) - y); }
template <class T>
T abs_pow_f(T x, double p) { return static_cast<T>(std::pow(std::abs(static_cast<double>(x)), p)); }
template <class T>
T abs_pow_df(T x, T, double p) {
    if (x == T(0)) return T(0);
    const double ax = std::abs(static_cast<double>(x));
    return static_cast<T>(p * std::pow(ax, p - 1.0) * (x > T(0) ? 1.0 : -1.0));
}
template <class T>
T log_f(T x, double) { return std::log(x); }
template <class T>
T log_df(T x, T, double) { return T(1) / x; }

}  // namespace

template <class T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& bias, Triple pad, Triple stride) {
    const auto g = geo5(x.shape(), "conv3d");
    if (k.rank() != 5 || k.dim(1) != g.c) {
        throw DataError("conv3d: kernel shape " + shape_str(k.shape()) + " does not fit input " + shape_str(x.shape()));
    }
    const std::size_t co = k.dim(0), kd = k.dim(2), kh = k.dim(3), kw = k.dim(4);
    if (bias.defined()) require_shape(bias, {co}, "conv3d", "bias");
    for (auto s : stride)
        if (s == 0) throw DataError("conv3d: stride must be positive");
    const Triple in{g.d, g.h, g.w}, kk{kd, kh, kw};
    Triple out{};
    for (int a = 0; a < 3; ++a) {
        if (in[a] + 2 * pad[a] < kk[a]) throw DataError("conv3d: kernel larger than padded input");
        out[a] = (in[a] + 2 * pad[a] - kk[a]) / stride[a] + 1;
    }
    const std::size_t ivol = g.vol(), ovol = out[0] * out[1] * out[2], ksz = kd * kh * kw;
    std::vector<T> y(g.n * co * ovol);
    const auto& xv = x.values();
    const auto& kv = k.values();

    // Visits every (kernel tap, output row) pair with the valid x range.
    const auto for_taps = [=](auto&& fn) {
        for (std::size_t a = 0; a < kd; ++a)
            for (std::size_t b = 0; b < kh; ++b)
                for (std::size_t c = 0; c < kw; ++c) {
                    const auto [xlo, xhi] = valid_range(g.w, out[2], stride[2], c, pad[2]);
                    if (xlo >= xhi) continue;
                    for (std::size_t oz = 0; oz < out[0]; ++oz) {
                        const std::ptrdiff_t iz = std::ptrdiff_t(oz * stride[0] + a) - std::ptrdiff_t(pad[0]);
                        if (iz < 0 || iz >= std::ptrdiff_t(g.d)) continue;
                        for (std::size_t oy = 0; oy < out[1]; ++oy) {
                            const std::ptrdiff_t iy = std::ptrdiff_t(oy * stride[1] + b) - std::ptrdiff_t(pad[1]);
                            if (iy < 0 || iy >= std::ptrdiff_t(g.h)) continue;
                            const std::size_t orow = (oz * out[1] + oy) * out[2];
                            const std::size_t irow = (std::size_t(iz) * g.h + std::size_t(iy)) * g.w;
                            fn((a * kh + b) * kw + c, orow, irow, xlo, xhi, c);
                        }
                    }
                }
    };

    parallel_for(g.n * co, [&](std::size_t idx) {
        const std::size_t n = idx / co, o = idx % co;
        T* yo = y.data() + idx * ovol;
        std::fill(yo, yo + ovol, bias.defined() ? bias.values()[o] : T(0));
        for (std::size_t ci = 0; ci < g.c; ++ci) {
            const T* xi = xv.data() + (n * g.c + ci) * ivol;
            const T* kp = kv.data() + (o * g.c + ci) * ksz;
            for_taps([&](std::size_t tap, std::size_t orow, std::size_t irow, std::size_t xlo, std::size_t xhi,
                         std::size_t c) {
                const T wv = kp[tap];
                T* yr = yo + orow;
                const T* xr = xi + irow;
                if (stride[2] == 1) {
                    const T* xs = xr + (xlo + c - pad[2]);
                    T* ys = yr + xlo;
                    for (std::size_t i = 0; i < xhi - xlo; ++i) ys[i] += wv * xs[i];
                } else {
                    for (std::size_t ox = xlo; ox < xhi; ++ox) yr[ox] += wv * xr[ox * stride[2] + c - pad[2]];
                }
            });
        }
    });

    Shape shape{g.n, co, out[0], out[1], out[2]};
    return make_result<T>("conv3d", shape, std::move(y), {x, k, bias},
                          [x, k, bias, g, co, ksz, ivol, ovol, stride, pad, for_taps](Node<T>& self) mutable {
        const auto& gy = self.grad;
        const auto& xv = x.values();
        const auto& kv = k.values();
        if (x.requires_grad()) {
            auto& gx = x.grad_buffer();
            parallel_for(g.n * g.c, [&](std::size_t idx) {
                const std::size_t n = idx / g.c, ci = idx % g.c;
                T* gxi = gx.data() + idx * ivol;
                for (std::size_t o = 0; o < co; ++o) {
                    const T* go = gy.data() + (n * co + o) * ovol;
                    const T* kp = kv.data() + (o * g.c + ci) * ksz;
                    for_taps([&](std::size_t tap, std::size_t orow, std::size_t irow, std::size_t xlo,
                                 std::size_t xhi, std::size_t c) {
                        const T wv = kp[tap];
                        const T* gr = go + orow;
                        T* xr = gxi + irow;
                        for (std::size_t ox = xlo; ox < xhi; ++ox) xr[ox * stride[2] + c - pad[2]] += wv * gr[ox];
                    });
                }
            });
        }
        if (k.requires_grad()) {
            auto& gk = k.grad_buffer();
            parallel_for(co, [&](std::size_t o) {
                for (std::size_t ci = 0; ci < g.c; ++ci) {
                    T* gkp = gk.data() + (o * g.c + ci) * ksz;
                    for (std::size_t n = 0; n < g.n; ++n) {
                        const T* go = gy.data() + (n * co + o) * ovol;
                        const T* xi = xv.data() + (n * g.c + ci) * ivol;
                        for_taps([&](std::size_t tap, std::size_t orow, std::size_t irow, std::size_t xlo,
                                     std::size_t xhi, std::size_t c) {
                            const T* gr = go + orow;
                            const T* xr = xi + irow;
                            T acc = 0;
                            for (std::size_t ox = xlo; ox < xhi; ++ox) acc += gr[ox] * xr[ox * stride[2] + c - pad[2]];
                            gkp[tap] += acc;
                        });
                    }
                }
            });
        }
        if (bias.defined() && bias.requires_grad()) {
            auto& gb = bias.grad_buffer();
            for (std::size_t o = 0; o < co; ++o) {
                T acc = 0;
                for (std::size_t n = 0; n < g.n; ++n) {
                    const T* go = gy.data() + (n * co + o) * ovol;
                    for (std::size_t i = 0; i < ovol; ++i) acc += go[i];
                }
                gb[o] += acc;
            }
        }
    });
}

template <class T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps) {
    const auto g = geo5(x.shape(), "instance_norm");
    require_shape(gamma, {g.c}, "instance_norm", "gamma");
    require_shape(beta, {g.c}, "instance_norm", "beta");
    const std::size_t m = g.vol();
    std::vector<T> y(x.numel()), xhat(x.numel()), inv_std(g.n * g.c);
    const auto& xv = x.values();
    parallel_for(g.n * g.c, [&](std::size_t idx) {
        const std::size_t c = idx % g.c;
        const T* xi = xv.data() + idx * m;
        double mu = 0;
        for (std::size_t i = 0; i < m; ++i) mu += xi[i];
        mu /= double(m);
        double var = 0;
        for (std::size_t i = 0; i < m; ++i) var += (xi[i] - mu) * (xi[i] - mu);
        var /= double(m);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[idx] = T(is);
        for (std::size_t i = 0; i < m; ++i) {
            const T xh = T((xi[i] - mu) * is);
            xhat[idx * m + i] = xh;
            y[idx * m + i] = xh * gamma.values()[c] + beta.values()[c];
        }
    });
    return make_result<T>("instance_norm", x.shape(), std::move(y), {x, gamma, beta},
                          [x, gamma, beta, g, m, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                              Node<T>& self) mutable {
        const auto& gy = self.grad;
        if (gamma.requires_grad() || beta.requires_grad()) {
            auto& gg = gamma.grad_buffer();
            auto& gb = beta.grad_buffer();
            for (std::size_t c = 0; c < g.c; ++c) {
                T sg = 0, sb = 0;
                for (std::size_t n = 0; n < g.n; ++n) {
                    const std::size_t base = (n * g.c + c) * m;
                    for (std::size_t i = 0; i < m; ++i) {
                        sg += gy[base + i] * xhat[base + i];
                        sb += gy[base + i];
                    }
                }
                gg[c] += sg;
                gb[c] += sb;
            }
        }
        if (x.requires_grad()) {
            auto& gx = x.grad_buffer();
            parallel_for(g.n * g.c, [&](std::size_t idx) {
                const std::size_t c = idx % g.c, base = idx * m;
                const T gam = gamma.values()[c];
                double s1 = 0, s2 = 0;
                for (std::size_t i = 0; i < m; ++i) {
                    const double dxh = double(gy[base + i]) * gam;
                    s1 += dxh;
                    s2 += dxh * xhat[base + i];
                }
                const double k = double(inv_std[idx]) / double(m);
                for (std::size_t i = 0; i < m; ++i) {
                    const double dxh = double(gy[base + i]) * gam;
                    gx[base + i] += T(k * (double(m) * dxh - s1 - xhat[base + i] * s2));
                }
            });
        }
    });
}

namespace {

template <class T>
Tensor<T> pool2(const Tensor<T>& x, bool use_max) {
    const auto g = geo5(x.shape(), use_max ? "max_pool2" : "avg_pool2");
    const std::size_t od = (g.d + 1) / 2, oh = (g.h + 1) / 2, ow = (g.w + 1) / 2;
    const std::size_t ovol = od * oh * ow, ivol = g.vol();
    std::vector<T> y(g.n * g.c * ovol);
    std::vector<std::size_t> arg(use_max ? y.size() : 0);
    const auto& xv = x.values();
    parallel_for(g.n * g.c, [&](std::size_t idx) {
        const T* xi = xv.data() + idx * ivol;
        for (std::size_t z = 0; z < od; ++z)
            for (std::size_t yy = 0; yy < oh; ++yy)
                for (std::size_t xx = 0; xx < ow; ++xx) {
                    const std::size_t o = idx * ovol + (z * oh + yy) * ow + xx;
                    T best = -std::numeric_limits<T>::infinity(), acc = 0;
                    std::size_t best_i = 0;
                    for (std::size_t t = 0; t < 8; ++t) {
                        const std::size_t iz = std::min(2 * z + (t >> 2), g.d - 1);
                        const std::size_t iy = std::min(2 * yy + ((t >> 1) & 1), g.h - 1);
                        const std::size_t ix = std::min(2 * xx + (t & 1), g.w - 1);
                        const std::size_t li = (iz * g.h + iy) * g.w + ix;
                        acc += xi[li];
                        if (xi[li] > best) {
                            best = xi[li];
                            best_i = li;
                        }
                    }
                    if (use_max) {
                        y[o] = best;
                        arg[o] = idx * ivol + best_i;
                    } else {
                        y[o] = acc / T(8);
                    }
                }
    });
    Shape shape{g.n, g.c, od, oh, ow};
    if (use_max) {
        return make_result<T>("max_pool2", shape, std::move(y), {x}, [x, arg = std::move(arg)](Node<T>& self) mutable {
            auto& gx = x.grad_buffer();
            for (std::size_t o = 0; o < arg.size(); ++o) gx[arg[o]] += self.grad[o];
        });
    }
    return make_result<T>("avg_pool2", shape, std::move(y), {x}, [x, g, od, oh, ow, ovol, ivol](Node<T>& self) mutable {
        auto& gx = x.grad_buffer();
        for (std::size_t idx = 0; idx < g.n * g.c; ++idx)
            for (std::size_t z = 0; z < od; ++z)
                for (std::size_t yy = 0; yy < oh; ++yy)
                    for (std::size_t xx = 0; xx < ow; ++xx) {
                        const T gv = self.grad[idx * ovol + (z * oh + yy) * ow + xx] / T(8);
                        for (std::size_t t = 0; t < 8; ++t) {
                            const std::size_t iz = std::min(2 * z + (t >> 2), g.d - 1);
                            const std::size_t iy = std::min(2 * yy + ((t >> 1) & 1), g.h - 1);
                            const std::size_t ix = std::min(2 * xx + (t & 1), g.w - 1);
                            gx[idx * ivol + (iz * g.h + iy) * g.w + ix] += gv;
                        }
                    }
    });
}

struct Tap {
    std::size_t i0, i1;
    double l;  // weight of i1
};

std::vector<Tap> resize_taps(std::size_t in, std::size_t out) {
    std::vector<Tap> taps(out);
    const double scale = double(in) / double(out);
    for (std::size_t i = 0; i < out; ++i) {
        double src = (double(i) + 0.5) * scale - 0.5;
        src = std::clamp(src, 0.0, double(in - 1));
        const auto i0 = std::min(static_cast<std::size_t>(std::floor(src)), in - 1);
        taps[i] = {i0, std::min(i0 + 1, in - 1), src - double(i0)};
    }
    return taps;
}

}  // namespace

template <class T>
Tensor<T> max_pool2(const Tensor<T>& x) {
    return pool2(x, true);
}

template <class T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
    return pool2(x, false);
}

template <class T>
Tensor<T> trilinear_resize(const Tensor<T>& x, Triple dhw) {
    const auto g = geo5(x.shape(), "trilinear_resize");
    for (auto s : dhw)
        if (s == 0) throw DataError("trilinear_resize: target extent must be positive");
    const auto tz = resize_taps(g.d, dhw[0]), ty = resize_taps(g.h, dhw[1]), tx = resize_taps(g.w, dhw[2]);
    const std::size_t ovol = dhw[0] * dhw[1] * dhw[2], ivol = g.vol();
    std::vector<T> y(g.n * g.c * ovol);
    const auto& xv = x.values();

    const auto visit = [=](std::size_t z, std::size_t yy, std::size_t xx, auto&& fn) {
        const Tap& a = tz[z];
        const Tap& b = ty[yy];
        const Tap& c = tx[xx];
        const double wz[2] = {1.0 - a.l, a.l}, wy[2] = {1.0 - b.l, b.l}, wx[2] = {1.0 - c.l, c.l};
        const std::size_t iz[2] = {a.i0, a.i1}, iy[2] = {b.i0, b.i1}, ix[2] = {c.i0, c.i1};
        for (int p = 0; p < 2; ++p)
            for (int q = 0; q < 2; ++q)
                for (int r = 0; r < 2; ++r) fn((iz[p] * g.h + iy[q]) * g.w + ix[r], T(wz[p] * wy[q] * wx[r]));
    };

    parallel_for(g.n * g.c, [&](std::size_t idx) {
        const T* xi = xv.data() + idx * ivol;
        T* yo = y.data() + idx * ovol;
        for (std::size_t z = 0; z < dhw[0]; ++z)
            for (std::size_t yy = 0; yy < dhw[1]; ++yy)
                for (std::size_t xx = 0; xx < dhw[2]; ++xx) {
                    T acc = 0;
                    visit(z, yy, xx, [&](std::size_t li, T wgt) { acc += wgt * xi[li]; });
                    yo[(z * dhw[1] + yy) * dhw[2] + xx] = acc;
                }
    });
    Shape shape{g.n, g.c, dhw[0], dhw[1], dhw[2]};
    return make_result<T>("trilinear_resize", shape, std::move(y), {x},
                          [x, g, dhw, ovol, ivol, visit](Node<T>& self) mutable {
        auto& gx = x.grad_buffer();
        parallel_for(g.n * g.c, [&](std::size_t idx) {
            T* gi = gx.data() + idx * ivol;
            const T* go = self.grad.data() + idx * ovol;
            for (std::size_t z = 0; z < dhw[0]; ++z)
                for (std::size_t yy = 0; yy < dhw[1]; ++yy)
                    for (std::size_t xx = 0; xx < dhw[2]; ++xx) {
                        const T gv = go[(z * dhw[1] + yy) * dhw[2] + xx];
                        visit(z, yy, xx, [&](std::size_t li, T wgt) { gi[li] += wgt * gv; });
                    }
        });
    });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
    return unary<T>("relu", x, relu_f<T>, relu_df<T>);
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return unary<T>("sigmoid", x, sigmoid_f<T>, sigmoid_df<T>);
}

template <class T>
Tensor<T> abs_pow(const Tensor<T>& x, double p) {
    if (!(p >= 1.0)) throw DataError("abs_pow: p must be >= 1");
    return unary<T>("abs_pow", x, abs_pow_f<T>, abs_pow_df<T>, p);
}

template <class T>
Tensor<T> log(const Tensor<T>& x) {
    for (T v : x.values())
        if (!(v > T(0))) throw NumericError("log: non-positive input");
    return unary<T>("log", x, log_f<T>, log_df<T>);
}

template <class T>
Tensor<T> clamp(const Tensor<T>& x, double lo, double hi) {
    std::vector<T> y(x.numel());
    const auto& xv = x.values();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::clamp(xv[i], T(lo), T(hi));
    return make_result<T>("clamp", x.shape(), std::move(y), {x}, [x, lo, hi](Node<T>& self) mutable {
        auto& gx = x.grad_buffer();
        const auto& xv = x.values();
        for (std::size_t i = 0; i < gx.size(); ++i)
            if (xv[i] >= T(lo) && xv[i] <= T(hi)) gx[i] += self.grad[i];
    });
}

template <class T>
Tensor<T> affine(const Tensor<T>& x, double a, double b) {
    std::vector<T> y(x.numel());
    const auto& xv = x.values();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = T(a) * xv[i] + T(b);
    return make_result<T>("affine", x.shape(), std::move(y), {x}, [x, a](Node<T>& self) mutable {
        auto& gx = x.grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += T(a) * self.grad[i];
    });
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary("add", BinOp::Add, a, b);
}
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary("sub", BinOp::Sub, a, b);
}
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary("mul", BinOp::Mul, a, b);
}
template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return binary("div", BinOp::Div, a, b);
}

template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
    if (xs.empty()) throw DataError("concat_channels: no inputs");
    const auto g0 = geo5(xs[0].shape(), "concat_channels");
    std::vector<std::size_t> offs;
    std::size_t c = 0;
    for (const auto& x : xs) {
        const auto g = geo5(x.shape(), "concat_channels");
        if (g.n != g0.n || g.d != g0.d || g.h != g0.h || g.w != g0.w) {
            throw DataError("concat_channels: incompatible shapes " + shape_str(xs[0].shape()) + " and " +
                            shape_str(x.shape()));
        }
        offs.push_back(c);
        c += g.c;
    }
    const std::size_t vol = g0.vol();
    std::vector<T> y(g0.n * c * vol);
    for (std::size_t n = 0; n < g0.n; ++n)
        for (std::size_t t = 0; t < xs.size(); ++t) {
            const std::size_t ct = xs[t].dim(1);
            const T* src = xs[t].values().data() + n * ct * vol;
            std::copy(src, src + ct * vol, y.data() + (n * c + offs[t]) * vol);
        }
    return make_result<T>("concat_channels", {g0.n, c, g0.d, g0.h, g0.w}, std::move(y), xs,
                          [xs, offs, c, vol, n0 = g0.n](Node<T>& self) mutable {
        for (std::size_t t = 0; t < xs.size(); ++t) {
            if (!xs[t].requires_grad()) continue;
            auto& gx = xs[t].grad_buffer();
            const std::size_t ct = xs[t].dim(1);
            for (std::size_t n = 0; n < n0; ++n) {
                const T* src = self.grad.data() + (n * c + offs[t]) * vol;
                T* dst = gx.data() + n * ct * vol;
                for (std::size_t i = 0; i < ct * vol; ++i) dst[i] += src[i];
            }
        }
    });
}

template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t end) {
    const auto g = geo5(x.shape(), "slice_channels");
    if (begin >= end || end > g.c) throw DataError("slice_channels: bad channel range");
    const std::size_t vol = g.vol(), cc = end - begin;
    std::vector<T> y(g.n * cc * vol);
    for (std::size_t n = 0; n < g.n; ++n) {
        const T* src = x.values().data() + (n * g.c + begin) * vol;
        std::copy(src, src + cc * vol, y.data() + n * cc * vol);
    }
    return make_result<T>("slice_channels", {g.n, cc, g.d, g.h, g.w}, std::move(y), {x},
                          [x, g, begin, cc, vol](Node<T>& self) mutable {
        auto& gx = x.grad_buffer();
        for (std::size_t n = 0; n < g.n; ++n) {
            T* dst = gx.data() + (n * g.c + begin) * vol;
            const T* src = self.grad.data() + n * cc * vol;
            for (std::size_t i = 0; i < cc * vol; ++i) dst[i] += src[i];
        }
    });
}

template <class T>
Tensor<T> channel_sum(const Tensor<T>& x) {
    const auto g = geo5(x.shape(), "channel_sum");
    const std::size_t vol = g.vol();
    std::vector<T> y(g.n * vol, T(0));
    for (std::size_t n = 0; n < g.n; ++n)
        for (std::size_t c = 0; c < g.c; ++c) {
            const T* src = x.values().data() + (n * g.c + c) * vol;
            for (std::size_t i = 0; i < vol; ++i) y[n * vol + i] += src[i];
        }
    return make_result<T>("channel_sum", {g.n, 1, g.d, g.h, g.w}, std::move(y), {x}, [x, g, vol](Node<T>& self) mutable {
        auto& gx = x.grad_buffer();
        for (std::size_t n = 0; n < g.n; ++n)
            for (std::size_t c = 0; c < g.c; ++c) {
                T* dst = gx.data() + (n * g.c + c) * vol;
                for (std::size_t i = 0; i < vol; ++i) dst[i] += self.grad[n * vol + i];
            }
    });
}

template <class T>
Tensor<T> channel_softmax(const Tensor<T>& x) {
    const auto g = geo5(x.shape(), "channel_softmax");
    const std::size_t vol = g.vol();
    std::vector<T> y(x.numel());
    const auto& xv = x.values();
    for (std::size_t n = 0; n < g.n; ++n)
        for (std::size_t i = 0; i < vol; ++i) {
            const std::size_t base = n * g.c * vol + i;
            T m = xv[base];
            for (std::size_t c = 1; c < g.c; ++c) m = std::max(m, xv[base + c * vol]);
            T s = 0;
            for (std::size_t c = 0; c < g.c; ++c) s += (y[base + c * vol] = std::exp(xv[base + c * vol] - m));
            for (std::size_t c = 0; c < g.c; ++c) y[base + c * vol] /= s;
        }
    return make_result<T>("channel_softmax", x.shape(), std::move(y), {x}, [x, g, vol](Node<T>& self) mutable {
        auto& gx = x.grad_buffer();
        const auto& y = self.value;
        for (std::size_t n = 0; n < g.n; ++n)
            for (std::size_t i = 0; i < vol; ++i) {
                const std::size_t base = n * g.c * vol + i;
                T dot = 0;
                for (std::size_t c = 0; c < g.c; ++c) dot += self.grad[base + c * vol] * y[base + c * vol];
                for (std::size_t c = 0; c < g.c; ++c)
                    gx[base + c * vol] += y[base + c * vol] * (self.grad[base + c * vol] - dot);
            }
    });
}

template <class T>
Tensor<T> spatial_softmax(const Tensor<T>& x) {
    const auto g = geo5(x.shape(), "spatial_softmax");
    const std::size_t vol = g.vol();
    std::vector<T> y(x.numel());
    const auto& xv = x.values();
    for (std::size_t idx = 0; idx < g.n * g.c; ++idx) {
        const T* xi = xv.data() + idx * vol;
        T* yi = y.data() + idx * vol;
        const T m = *std::max_element(xi, xi + vol);
        double s = 0;
        for (std::size_t i = 0; i < vol; ++i) s += (yi[i] = std::exp(xi[i] - m));
        for (std::size_t i = 0; i < vol; ++i) yi[i] = T(yi[i] / s);
    }
    return make_result<T>("spatial_softmax", x.shape(), std::move(y), {x}, [x, g, vol](Node<T>& self) mutable {
        auto& gx = x.grad_buffer();
        for (std::size_t idx = 0; idx < g.n * g.c; ++idx) {
            const T* yi = self.value.data() + idx * vol;
            const T* gi = self.grad.data() + idx * vol;
            double dot = 0;
            for (std::size_t i = 0; i < vol; ++i) dot += double(gi[i]) * yi[i];
            for (std::size_t i = 0; i < vol; ++i) gx[idx * vol + i] += T(yi[i] * (gi[i] - dot));
        }
    });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
    double s = 0;
    for (T v : x.values()) s += v;
    return make_result<T>("sum", {}, {T(s)}, {x}, [x](Node<T>& self) mutable {
        auto& gx = x.grad_buffer();
        for (auto& g : gx) g += self.grad[0];
    });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
    double s = 0;
    for (T v : x.values()) s += v;
    const double n = double(x.numel());
    return make_result<T>("mean", {}, {T(s / n)}, {x}, [x, n](Node<T>& self) mutable {
        auto& gx = x.grad_buffer();
        const T g = T(self.grad[0] / n);
        for (auto& v : gx) v += g;
    });
}

template <class T>
Tensor<T> frobenius_sq(const Tensor<T>& x) {
    double s = 0;
    for (T v : x.values()) s += double(v) * v;
    return make_result<T>("frobenius_sq", {}, {T(s)}, {x}, [x](Node<T>& self) mutable {
        auto& gx = x.grad_buffer();
        const auto& xv = x.values();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += T(2) * xv[i] * self.grad[0];
    });
}

template <class T>
Tensor<T> spatial_integration(const Tensor<T>& a, const Tensor<T>& d, const Tensor<T>& h, const Tensor<T>& w) {
    const auto g = geo5(a.shape(), "spatial_integration");
    require_shape(d, {g.d}, "spatial_integration", "depth weights");
    require_shape(h, {g.h}, "spatial_integration", "height weights");
    require_shape(w, {g.w}, "spatial_integration", "width weights");
    const std::size_t vol = g.vol();
    std::vector<T> y(a.numel());
    const auto& av = a.values();
    const auto& dv = d.values();
    const auto& hv = h.values();
    const auto& wv = w.values();
    parallel_for(g.n * g.c, [&](std::size_t idx) {
        const T* A = av.data() + idx * vol;
        std::vector<T> zd(g.d, 0), zh(g.h, 0), zw(g.w, 0);
        for (std::size_t i = 0; i < g.d; ++i)
            for (std::size_t j = 0; j < g.h; ++j) {
                const T* row = A + (i * g.h + j) * g.w;
                T s = 0;
                for (std::size_t k = 0; k < g.w; ++k) {
                    s += wv[k] * row[k];
                    zw[k] += dv[i] * hv[j] * row[k];
                }
                zd[i] += hv[j] * s;
                zh[j] += dv[i] * s;
            }
        T* Y = y.data() + idx * vol;
        for (std::size_t i = 0; i < g.d; ++i)
            for (std::size_t j = 0; j < g.h; ++j)
                for (std::size_t k = 0; k < g.w; ++k) Y[(i * g.h + j) * g.w + k] = zd[i] + zh[j] + zw[k];
    });
    return make_result<T>("spatial_integration", a.shape(), std::move(y), {a, d, h, w},
                          [a, d, h, w, g, vol](Node<T>& self) mutable {
        const auto& av = a.values();
        const auto& dv = d.values();
        const auto& hv = h.values();
        const auto& wv = w.values();
        const std::size_t nc = g.n * g.c;
        // per-instance partial gradients of the shared weights, reduced in order
        std::vector<T> pd(nc * g.d, 0), ph(nc * g.h, 0), pw(nc * g.w, 0);
        const bool need_a = a.requires_grad();
        T* ga = need_a ? a.grad_buffer().data() : nullptr;
        parallel_for(nc, [&](std::size_t idx) {
            const T* A = av.data() + idx * vol;
            const T* G = self.grad.data() + idx * vol;
            std::vector<T> gd(g.d, 0), gh(g.h, 0), gw(g.w, 0);
            for (std::size_t i = 0; i < g.d; ++i)
                for (std::size_t j = 0; j < g.h; ++j)
                    for (std::size_t k = 0; k < g.w; ++k) {
                        const T v = G[(i * g.h + j) * g.w + k];
                        gd[i] += v;
                        gh[j] += v;
                        gw[k] += v;
                    }
            // S[i][j] = sum_k w_k A, R[i][k] = sum_j h_j A, Q[j][k] = sum_i d_i A
            std::vector<T> S(g.d * g.h, 0), R(g.d * g.w, 0), Q(g.h * g.w, 0);
            for (std::size_t i = 0; i < g.d; ++i)
                for (std::size_t j = 0; j < g.h; ++j)
                    for (std::size_t k = 0; k < g.w; ++k) {
                        const T x = A[(i * g.h + j) * g.w + k];
                        S[i * g.h + j] += wv[k] * x;
                        R[i * g.w + k] += hv[j] * x;
                        Q[j * g.w + k] += dv[i] * x;
                    }
            if (ga) {
                T* GA = ga + idx * vol;
                for (std::size_t i = 0; i < g.d; ++i)
                    for (std::size_t j = 0; j < g.h; ++j)
                        for (std::size_t k = 0; k < g.w; ++k)
                            GA[(i * g.h + j) * g.w + k] +=
                                gd[i] * hv[j] * wv[k] + gh[j] * dv[i] * wv[k] + gw[k] * dv[i] * hv[j];
            }
            T* PD = pd.data() + idx * g.d;
            T* PH = ph.data() + idx * g.h;
            T* PW = pw.data() + idx * g.w;
            for (std::size_t i = 0; i < g.d; ++i)
                for (std::size_t j = 0; j < g.h; ++j) {
                    PD[i] += gh[j] * S[i * g.h + j];
                    PH[j] += gd[i] * S[i * g.h + j];
                }
            for (std::size_t i = 0; i < g.d; ++i)
                for (std::size_t k = 0; k < g.w; ++k) {
                    PD[i] += gw[k] * R[i * g.w + k];
                    PW[k] += gd[i] * R[i * g.w + k];
                }
            for (std::size_t j = 0; j < g.h; ++j)
                for (std::size_t k = 0; k < g.w; ++k) {
                    PH[j] += gw[k] * Q[j * g.w + k];
                    PW[k] += gh[j] * Q[j * g.w + k];
                }
        });
        const auto reduce = [nc](const Tensor<T>& t, const std::vector<T>& part, std::size_t len) {
            if (!t.requires_grad()) return;
            auto& gt = t.grad_buffer();
            for (std::size_t idx = 0; idx < nc; ++idx)
                for (std::size_t i = 0; i < len; ++i) gt[i] += part[idx * len + i];
        };
        reduce(d, pd, g.d);
        reduce(h, ph, g.h);
        reduce(w, pw, g.w);
    });
}

#define TUBULE_AD_INSTANTIATE(T)                                                                      \
    template Tensor<T> conv3d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Triple, Triple); \
    template Tensor<T> instance_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);  \
    template Tensor<T> max_pool2(const Tensor<T>&);                                                  \
    template Tensor<T> avg_pool2(const Tensor<T>&);                                                  \
    template Tensor<T> trilinear_resize(const Tensor<T>&, Triple);                                   \
    template Tensor<T> relu(const Tensor<T>&);                                                       \
    template Tensor<T> sigmoid(const Tensor<T>&);                                                    \
    template Tensor<T> abs_pow(const Tensor<T>&, double);                                            \
    template Tensor<T> log(const Tensor<T>&);                                                        \
    template Tensor<T> clamp(const Tensor<T>&, double, double);                                      \
    template Tensor<T> affine(const Tensor<T>&, double, double);                                     \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                      \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                      \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                      \
    template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                      \
    template Tensor<T> concat_channels(const std::vector<Tensor<T>>&);                               \
    template Tensor<T> slice_channels(const Tensor<T>&, std::size_t, std::size_t);                   \
    template Tensor<T> channel_sum(const Tensor<T>&);                                                \
    template Tensor<T> channel_softmax(const Tensor<T>&);                                            \
    template Tensor<T> spatial_softmax(const Tensor<T>&);                                            \
    template Tensor<T> sum(const Tensor<T>&);                                                        \
    template Tensor<T> mean(const Tensor<T>&);                                                       \
    template Tensor<T> frobenius_sq(const Tensor<T>&);                                               \
    template Tensor<T> spatial_integration(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

TUBULE_AD_INSTANTIATE(float)
TUBULE_AD_INSTANTIATE(double)

}  // namespace tubule::ad
